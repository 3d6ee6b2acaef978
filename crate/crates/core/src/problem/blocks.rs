//! Decomposition of the problem into counterfactually coupled blocks of
//! support rows. Every risk term and every regularizer entry touches rows of a
//! single block, so Lagrangians of function tables split into independent
//! block problems with dense local derivatives.

use crate::error::{Error, Result};
use crate::problem::spec::ProblemSpec;
use crate::problem::table::FunctionTable;

#[derive(Clone, Copy, Debug)]
struct LocalTerm {
    loss: usize,
    a: usize,
    b: Option<usize>,
    weight: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub rows: Vec<usize>,
    terms: Vec<LocalTerm>,
}

impl Block {
    /// Number of local variables (`rows * output_dim`).
    pub fn len(&self, d: usize) -> usize {
        self.rows.len() * d
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BlockSystem {
    pub blocks: Vec<Block>,
    d: usize,
    m: usize,
}

impl BlockSystem {
    pub fn new(problem: &ProblemSpec) -> Self {
        let ds = problem.dataset();
        let groups = ds.coupled_blocks();
        let mut locate = vec![(0usize, 0usize); ds.support_size()];
        for (b, rows) in groups.iter().enumerate() {
            for (l, &r) in rows.iter().enumerate() {
                locate[r] = (b, l);
            }
        }
        let mut blocks: Vec<Block> = groups.into_iter().map(|rows| Block { rows, terms: Vec::new() }).collect();
        for i in 0..=problem.m() {
            for t in problem.terms(i) {
                let (b, a) = locate[t.row];
                let partner = t.partner.map(|k| {
                    let (bk, lk) = locate[k];
                    debug_assert_eq!(bk, b, "pair terms stay inside a block");
                    lk
                });
                blocks[b].terms.push(LocalTerm {
                    loss: i,
                    a,
                    b: partner,
                    weight: t.weight,
                });
            }
        }
        Self {
            blocks,
            d: problem.output_dim(),
            m: problem.m(),
        }
    }

    pub fn gather(&self, b: usize, table: &FunctionTable) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.blocks[b].len(self.d));
        for &r in &self.blocks[b].rows {
            x.extend_from_slice(table.row(r));
        }
        x
    }

    pub fn scatter(&self, b: usize, x: &[f64], table: &mut FunctionTable) {
        for (l, &r) in self.blocks[b].rows.iter().enumerate() {
            table.row_mut(r).copy_from_slice(&x[l * self.d..(l + 1) * self.d]);
        }
    }

    /// Block share of loss `i` (risk terms plus regularizer, no level). Adds
    /// `coef` times its gradient / Hessian (row-major `n x n`) when given.
    pub fn accumulate(
        &self,
        problem: &ProblemSpec,
        b: usize,
        x: &[f64],
        i: usize,
        coef: f64,
        mut grad: Option<&mut [f64]>,
        mut hess: Option<&mut [f64]>,
    ) -> Result<f64> {
        let d = self.d;
        let n = self.blocks[b].len(d);
        let block = &self.blocks[b];
        let loss = problem.loss(i);
        let ds = problem.dataset();
        let mut total = 0.0;
        let mut pair_h = vec![0.0; 4 * d * d];
        let mut point_h = vec![0.0; d * d];
        for t in block.terms.iter().filter(|t| t.loss == i) {
            let xa = &x[t.a * d..(t.a + 1) * d];
            let v = match t.b {
                Some(lb) => {
                    let xb = &x[lb * d..(lb + 1) * d];
                    if let Some(g) = grad.as_deref_mut() {
                        let mut ga = vec![0.0; d];
                        let mut gb = vec![0.0; d];
                        let v = loss.pair(xa, xb, coef * t.weight, Some((&mut ga, &mut gb)));
                        for c in 0..d {
                            g[t.a * d + c] += ga[c];
                            g[lb * d + c] += gb[c];
                        }
                        v
                    } else {
                        loss.pair(xa, xb, 1.0, None)
                    }
                }
                None => {
                    let label = ds.sample(block.rows[t.a]).label;
                    match grad.as_deref_mut() {
                        Some(g) => loss.point(xa, label, coef * t.weight, Some(&mut g[t.a * d..(t.a + 1) * d])),
                        None => loss.point(xa, label, 1.0, None),
                    }
                }
            };
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: if i == 0 { "objective".into() } else { format!("constraint {i}") },
                    sample: block.rows[t.a],
                });
            }
            total += t.weight * v;
            if let Some(h) = hess.as_deref_mut() {
                match t.b {
                    Some(lb) => {
                        pair_h.iter_mut().for_each(|v| *v = 0.0);
                        loss.pair_hessian(xa, &x[lb * d..(lb + 1) * d], coef * t.weight, &mut pair_h);
                        let idx = |s: usize, c: usize| if s == 0 { t.a * d + c } else { lb * d + c };
                        for sr in 0..2 {
                            for r in 0..d {
                                for sc in 0..2 {
                                    for c in 0..d {
                                        h[idx(sr, r) * n + idx(sc, c)] += pair_h[(sr * d + r) * 2 * d + sc * d + c];
                                    }
                                }
                            }
                        }
                    }
                    None => {
                        point_h.iter_mut().for_each(|v| *v = 0.0);
                        loss.point_hessian(xa, 0.0, coef * t.weight, &mut point_h);
                        for r in 0..d {
                            for c in 0..d {
                                h[(t.a * d + r) * n + t.a * d + c] += point_h[r * d + c];
                            }
                        }
                    }
                }
            }
        }
        let tau = loss.regularizer;
        if tau > 0.0 {
            let mass = ds.mass();
            for (l, &r) in block.rows.iter().enumerate() {
                let w = tau * mass[r];
                for c in 0..d {
                    let v = x[l * d + c];
                    total += 0.5 * w * v * v;
                    if let Some(g) = grad.as_deref_mut() {
                        g[l * d + c] += coef * w * v;
                    }
                    if let Some(h) = hess.as_deref_mut() {
                        h[(l * d + c) * n + l * d + c] += coef * w;
                    }
                }
            }
        }
        Ok(total)
    }

    /// `sum_i coefs[i] * loss_i` on block `b` (coefs[0] weights the objective),
    /// with gradient and optional Hessian.
    pub fn combined(&self, problem: &ProblemSpec, b: usize, x: &[f64], coefs: &[f64], grad: &mut [f64], mut hess: Option<&mut [f64]>) -> Result<f64> {
        grad.iter_mut().for_each(|v| *v = 0.0);
        if let Some(h) = hess.as_deref_mut() {
            h.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut total = 0.0;
        for (i, &c) in coefs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            total += c * self.accumulate(problem, b, x, i, c, Some(&mut *grad), hess.as_deref_mut())?;
        }
        Ok(total)
    }

    /// Value only of `sum_i coefs[i] * loss_i` on block `b`.
    pub fn combined_value(&self, problem: &ProblemSpec, b: usize, x: &[f64], coefs: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (i, &c) in coefs.iter().enumerate() {
            if c != 0.0 {
                total += c * self.accumulate(problem, b, x, i, c, None, None)?;
            }
        }
        Ok(total)
    }

    /// Gradients of each constraint (`m` vectors of block length) on block `b`.
    pub fn constraint_grads(&self, problem: &ProblemSpec, b: usize, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.blocks[b].len(self.d);
        (1..=self.m)
            .map(|i| {
                let mut g = vec![0.0; n];
                self.accumulate(problem, b, x, i, 1.0, Some(&mut g), None)?;
                Ok(g)
            })
            .collect()
    }
}
