//! Pointwise losses in output space, with exact first and second derivatives.
//!
//! Simplex-valued outputs are carried as logits; softmax is applied inside the
//! loss. Derivatives are with respect to the raw output vector (logits or reals).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
    /// `KL(softmax(a) || softmax(b))` between a point and its counterfactual image.
    KlPair,
    /// Affine functional `coef · a`.
    MeanOutput,
}

/// Constants a user may declare up front instead of having them estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclaredConstants {
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub smoothness: Option<f64>,
    #[serde(default)]
    pub strong_convexity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseLoss {
    pub kind: LossKind,
    /// Tikhonov weight `tau`: adds `tau/2 * ||phi||^2` in the support measure.
    #[serde(default)]
    pub regularizer: f64,
    /// Coefficients for [`LossKind::MeanOutput`]; empty means all ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coef: Vec<f64>,
    #[serde(default)]
    pub declared: DeclaredConstants,
}

impl PointwiseLoss {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            regularizer: 0.0,
            coef: Vec::new(),
            declared: DeclaredConstants::default(),
        }
    }

    pub fn squared() -> Self {
        Self::new(LossKind::SquaredError)
    }

    pub fn cross_entropy(tau: f64) -> Self {
        Self::new(LossKind::CrossEntropy).with_regularizer(tau)
    }

    pub fn kl_pair() -> Self {
        Self::new(LossKind::KlPair)
    }

    pub fn mean_output(coef: Vec<f64>) -> Self {
        Self {
            coef,
            ..Self::new(LossKind::MeanOutput)
        }
    }

    pub fn with_regularizer(mut self, tau: f64) -> Self {
        self.regularizer = tau;
        self
    }

    pub fn is_pair(&self) -> bool {
        self.kind == LossKind::KlPair
    }

    fn coef_at(&self, c: usize) -> f64 {
        if self.coef.is_empty() {
            1.0
        } else {
            self.coef[c]
        }
    }

    fn target(a: &[f64], label: f64, c: usize) -> f64 {
        if a.len() == 1 {
            label
        } else if label.round() as usize == c {
            1.0
        } else {
            0.0
        }
    }

    /// Value at one point; adds `scale * grad` into `grad` when given.
    pub fn point(&self, a: &[f64], label: f64, scale: f64, grad: Option<&mut [f64]>) -> f64 {
        match self.kind {
            LossKind::SquaredError => {
                let mut v = 0.0;
                for (c, &ac) in a.iter().enumerate() {
                    let r = ac - Self::target(a, label, c);
                    v += r * r;
                }
                if let Some(g) = grad {
                    for (c, &ac) in a.iter().enumerate() {
                        g[c] += scale * 2.0 * (ac - Self::target(a, label, c));
                    }
                }
                v
            }
            LossKind::CrossEntropy => {
                let y = label.round() as usize;
                let lse = log_sum_exp(a);
                if let Some(g) = grad {
                    for (c, &ac) in a.iter().enumerate() {
                        let p = (ac - lse).exp();
                        g[c] += scale * (p - if c == y { 1.0 } else { 0.0 });
                    }
                }
                lse - a[y]
            }
            LossKind::MeanOutput => {
                let mut v = 0.0;
                for (c, &ac) in a.iter().enumerate() {
                    v += self.coef_at(c) * ac;
                }
                if let Some(g) = grad {
                    for c in 0..a.len() {
                        g[c] += scale * self.coef_at(c);
                    }
                }
                v
            }
            LossKind::KlPair => unreachable!("kl_pair is a pair loss"),
        }
    }

    /// Adds `scale * Hessian` (row-major `d x d`) into `h`.
    pub fn point_hessian(&self, a: &[f64], _label: f64, scale: f64, h: &mut [f64]) {
        let d = a.len();
        match self.kind {
            LossKind::SquaredError => {
                for c in 0..d {
                    h[c * d + c] += 2.0 * scale;
                }
            }
            LossKind::CrossEntropy => {
                let p = softmax(a);
                for r in 0..d {
                    for c in 0..d {
                        let j = if r == c { p[r] } else { 0.0 } - p[r] * p[c];
                        h[r * d + c] += scale * j;
                    }
                }
            }
            LossKind::MeanOutput => {}
            LossKind::KlPair => unreachable!("kl_pair is a pair loss"),
        }
    }

    /// `KL(softmax(a) || softmax(b))`; adds scaled gradients into `ga`, `gb`.
    pub fn pair(&self, a: &[f64], b: &[f64], scale: f64, grads: Option<(&mut [f64], &mut [f64])>) -> f64 {
        debug_assert_eq!(self.kind, LossKind::KlPair);
        let la = log_sum_exp(a);
        let lb = log_sum_exp(b);
        let d = a.len();
        let mut v = 0.0;
        let mut pu = 0.0;
        for c in 0..d {
            let p = (a[c] - la).exp();
            let u = a[c] - b[c];
            v += p * u;
            pu += p * u;
        }
        v += lb - la;
        if let Some((ga, gb)) = grads {
            for c in 0..d {
                let p = (a[c] - la).exp();
                let q = (b[c] - lb).exp();
                ga[c] += scale * p * ((a[c] - b[c]) - pu);
                gb[c] += scale * (q - p);
            }
        }
        v.max(0.0)
    }

    /// Adds `scale * Hessian` of the pair loss into `h`, a row-major `2d x 2d`
    /// matrix ordered `[a; b]`.
    pub fn pair_hessian(&self, a: &[f64], b: &[f64], scale: f64, h: &mut [f64]) {
        let d = a.len();
        let n = 2 * d;
        let p = softmax(a);
        let q = softmax(b);
        let u: Vec<f64> = (0..d).map(|c| a[c] - b[c]).collect();
        let ubar: f64 = (0..d).map(|c| p[c] * u[c]).sum();
        let jac = |r: usize, c: usize| if r == c { p[r] } else { 0.0 } - p[r] * p[c];
        for r in 0..d {
            for c in 0..d {
                let j = jac(r, c);
                // d2/da2 = J + J_rc (u_r - ubar) - p_r p_c (u_c - ubar)
                let haa = j + j * (u[r] - ubar) - p[r] * p[c] * (u[c] - ubar);
                let hbb = if r == c { q[r] } else { 0.0 } - q[r] * q[c];
                h[r * n + c] += scale * haa;
                h[(d + r) * n + (d + c)] += scale * hbb;
                h[r * n + (d + c)] -= scale * j;
                h[(d + r) * n + c] -= scale * j;
            }
        }
    }
}

pub fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let l = log_sum_exp(a);
    a.iter().map(|x| (x - l).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn squared_error_value() {
        assert_eq!(PointwiseLoss::squared().point(&[0.5], 1.0, 1.0, None), 0.25);
    }

    #[test]
    fn cross_entropy_uniform_is_log2() {
        let v = PointwiseLoss::cross_entropy(0.0).point(&[0.0, 0.0], 1.0, 1.0, None);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let l = PointwiseLoss::kl_pair();
        assert_eq!(l.pair(&[0.3, -1.2], &[0.3, -1.2], 1.0, None), 0.0);
        // logits are shift invariant
        assert!(l.pair(&[0.3, -1.2], &[1.3, -0.2], 1.0, None).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let a = [0.4, -0.7, 1.1];
        let b = [-0.2, 0.5, 0.3];
        for loss in [
            PointwiseLoss::squared(),
            PointwiseLoss::cross_entropy(0.0),
            PointwiseLoss::mean_output(vec![1.0, -2.0, 0.5]),
        ] {
            let mut g = vec![0.0; 3];
            loss.point(&a, 2.0, 1.0, Some(&mut g));
            let fd = fd_grad(|x| loss.point(x, 2.0, 1.0, None), &a);
            for c in 0..3 {
                assert!((g[c] - fd[c]).abs() < 1e-7, "{:?} grad", loss.kind);
            }
            let mut h = vec![0.0; 9];
            loss.point_hessian(&a, 2.0, 1.0, &mut h);
            for c in 0..3 {
                let col = fd_grad(
                    |x| {
                        let mut g = vec![0.0; 3];
                        loss.point(x, 2.0, 1.0, Some(&mut g));
                        g[c]
                    },
                    &a,
                );
                for r in 0..3 {
                    assert!((h[r * 3 + c] - col[r]).abs() < 1e-6, "{:?} hess", loss.kind);
                }
            }
        }
        let kl = PointwiseLoss::kl_pair();
        let ab: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
        let f = |x: &[f64]| kl.pair(&x[..3], &x[3..], 1.0, None);
        let mut ga = vec![0.0; 3];
        let mut gb = vec![0.0; 3];
        kl.pair(&a, &b, 1.0, Some((&mut ga, &mut gb)));
        let fd = fd_grad(f, &ab);
        for c in 0..3 {
            assert!((ga[c] - fd[c]).abs() < 1e-7);
            assert!((gb[c] - fd[3 + c]).abs() < 1e-7);
        }
        let mut h = vec![0.0; 36];
        kl.pair_hessian(&a, &b, 1.0, &mut h);
        for c in 0..6 {
            let col = fd_grad(
                |x| {
                    let mut ga = vec![0.0; 3];
                    let mut gb = vec![0.0; 3];
                    kl.pair(&x[..3], &x[3..], 1.0, Some((&mut ga, &mut gb)));
                    if c < 3 {
                        ga[c]
                    } else {
                        gb[c - 3]
                    }
                },
                &ab,
            );
            for r in 0..6 {
                assert!((h[r * 6 + c] - col[r]).abs() < 1e-6, "kl hess ({r},{c})");
            }
        }
    }
}
