//! Projected Newton ascent for smooth concave functions on the nonnegative orthant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) struct DualEval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Hessian (negative semidefinite); `None` if not requested.
    pub hess: Option<DMatrix<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct MaximizeConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub cap: f64,
}

impl Default for MaximizeConfig {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 200,
            cap: 1e6,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Maximum {
    pub lambda: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub residual: f64,
    pub iterations: usize,
}

/// `||lambda - max(0, lambda + grad)||_inf`, zero exactly at a KKT point.
pub(crate) fn projected_residual(lambda: &[f64], grad: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(grad)
        .map(|(l, g)| (l - (l + g).max(0.0)).abs())
        .fold(0.0, f64::max)
}

fn project(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Maximizes `f` over `lambda >= 0` starting from `start`.
///
/// Each iteration fixes coordinates sitting at zero with a non-positive
/// gradient, takes a Newton step on the rest and backtracks along the
/// projected arc; a projected gradient step is the fallback when the Newton
/// arc does not increase the value.
pub(crate) fn maximize<F>(mut f: F, start: &[f64], cfg: MaximizeConfig) -> Result<Maximum>
where
    F: FnMut(&[f64], bool) -> Result<DualEval>,
{
    let m = start.len();
    let mut lambda = start.to_vec();
    project(&mut lambda);
    let mut cur = f(&lambda, true)?;
    let mut iterations = 0;
    let mut pg_alpha = 1.0;
    loop {
        let residual = projected_residual(&lambda, &cur.grad);
        if residual <= cfg.tol || iterations >= cfg.max_iter {
            return Ok(Maximum {
                lambda,
                residual,
                iterations,
            });
        }
        iterations += 1;
        let eps = residual.min(1e-9);
        let free: Vec<usize> = (0..m).filter(|&i| !(lambda[i] <= eps && cur.grad[i] <= 0.0)).collect();
        let hess = match cur.hess.take() {
            Some(h) => h,
            None => f(&lambda, true)?.hess.expect("hessian requested"),
        };
        let mut direction = vec![0.0; m];
        if !free.is_empty() {
            let k = free.len();
            let a = DMatrix::from_fn(k, k, |r, c| -hess[(free[r], free[c])]);
            let scale = (0..k).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
            let mut shift = 1e-12 * scale;
            let rhs = DVector::from_iterator(k, free.iter().map(|&i| cur.grad[i]));
            let step = loop {
                let mut shifted = a.clone();
                for i in 0..k {
                    shifted[(i, i)] += shift;
                }
                if let Some(ch) = shifted.cholesky() {
                    break Some(ch.solve(&rhs));
                }
                shift *= 100.0;
                if shift > 1e6 * scale {
                    break None;
                }
            };
            if let Some(s) = step {
                for (r, &i) in free.iter().enumerate() {
                    direction[i] = s[r];
                }
            }
        }

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..40 {
            let mut cand: Vec<f64> = lambda.iter().zip(&direction).map(|(l, d)| l + alpha * d).collect();
            project(&mut cand);
            let moved: f64 = cand.iter().zip(&lambda).zip(&cur.grad).map(|((c, l), g)| (c - l) * g).sum();
            if moved <= 0.0 {
                break;
            }
            let e = f(&cand, false)?;
            if e.value >= cur.value + 1e-4 * moved {
                accepted = Some((cand, e));
                break;
            }
            alpha *= 0.5;
        }
        if accepted.is_none() {
            // projected gradient with a curvature-scaled initial step
            let curv = (0..m).map(|i| -hess[(i, i)]).fold(0.0, f64::max);
            let mut alpha = if curv > 0.0 { (1.0 / curv).max(pg_alpha) } else { pg_alpha };
            for _ in 0..60 {
                let mut cand: Vec<f64> = lambda.iter().zip(&cur.grad).map(|(l, g)| l + alpha * g).collect();
                project(&mut cand);
                let moved: f64 = cand.iter().zip(&lambda).zip(&cur.grad).map(|((c, l), g)| (c - l) * g).sum();
                if moved <= 0.0 {
                    break;
                }
                let e = f(&cand, false)?;
                if e.value >= cur.value + 1e-4 * moved {
                    accepted = Some((cand, e));
                    pg_alpha = 2.0 * alpha;
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some((cand, e)) = accepted else {
            // no ascent possible at working precision
            let residual = projected_residual(&lambda, &cur.grad);
            return Ok(Maximum {
                lambda,
                residual,
                iterations,
            });
        };
        let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > cfg.cap {
            return Err(Error::DualUnbounded { cap: cfg.cap, norm });
        }
        lambda = cand;
        cur = DualEval { hess: None, ..e };
    }
}
