//! Post-settling oscillation statistics of dual-ascent traces and rank correlation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dual::DualTrace;
use crate::error::Result;

/// The objective counts as settled once within this fraction of its final value.
pub const SETTLE_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationStats {
    /// First iteration (1-based) from which the statistics are taken.
    pub settle_index: usize,
    pub post_settling_iterations: usize,
    /// Fraction of post-settling iterations with a positive slack, per constraint.
    pub violation_frequency: Vec<f64>,
    /// Fraction of post-settling iterations with at least one positive slack.
    pub any_violation_frequency: f64,
    /// Sign changes of each slack after settling.
    pub sign_changes: Vec<usize>,
    pub max_violation: f64,
}

/// Settling time: first `t` from which the trailing moving average of the
/// objective stays within `frac` of its final-window value for every `s >= t`.
/// The window is `T / 20` iterations, so the multiplier-driven oscillation of
/// the objective itself does not postpone settling indefinitely; traces
/// shorter than 40 iterations are compared pointwise.
pub fn settling_index_of(objective: &[f64], frac: f64) -> usize {
    let n = objective.len();
    if n == 0 {
        return 1;
    }
    let w = (n / 20).max(1);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for o in objective {
        prefix.push(prefix.last().unwrap() + o);
    }
    let avg = |s: usize| {
        let lo = (s + 1).saturating_sub(w);
        (prefix[s + 1] - prefix[lo]) / (s + 1 - lo) as f64
    };
    let last = avg(n - 1);
    let tol = frac * last.abs().max(f64::MIN_POSITIVE);
    (0..n).rposition(|s| (avg(s) - last).abs() > tol).map_or(1, |i| i + 2)
}

pub fn settling_index(trace: &DualTrace, frac: f64) -> usize {
    settling_index_of(&trace.records.iter().map(|r| r.objective).collect::<Vec<_>>(), frac)
}

/// Statistics over raw per-iteration objective values and slack vectors.
pub fn oscillation_from(objective: &[f64], slacks: &[Vec<f64>], frac: f64) -> OscillationStats {
    let m = slacks.first().map_or(0, Vec::len);
    let settle = settling_index_of(objective, frac);
    let post = &slacks[(settle - 1).min(slacks.len())..];
    let n = post.len().max(1) as f64;
    let mut freq = vec![0.0; m];
    let mut any = 0.0;
    let mut max_violation: f64 = 0.0;
    for s in post {
        let mut hit = false;
        for (f, v) in freq.iter_mut().zip(s) {
            if *v > 0.0 {
                *f += 1.0;
                hit = true;
            }
            max_violation = max_violation.max(*v);
        }
        if hit {
            any += 1.0;
        }
    }
    let sign_changes = (0..m)
        .map(|i| post.windows(2).filter(|w| (w[0][i] > 0.0) != (w[1][i] > 0.0)).count())
        .collect();
    OscillationStats {
        settle_index: settle,
        post_settling_iterations: post.len(),
        violation_frequency: freq.into_iter().map(|f| f / n).collect(),
        any_violation_frequency: any / n,
        sign_changes,
        max_violation,
    }
}

pub fn oscillation_stats(trace: &DualTrace, settle_frac: f64) -> OscillationStats {
    let objective: Vec<f64> = trace.records.iter().map(|r| r.objective).collect();
    let slacks: Vec<Vec<f64>> = trace.records.iter().map(|r| r.slacks.clone()).collect();
    oscillation_from(&objective, &slacks, settle_frac)
}

/// Largest positive slack after the objective settles (0 if none).
pub fn max_post_settling_violation(trace: &DualTrace, settle_frac: f64) -> f64 {
    oscillation_stats(trace, settle_frac).max_violation
}

pub fn write_oscillation_csv(rows: &[(u64, OscillationStats)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let m = rows.first().map_or(0, |r| r.1.violation_frequency.len());
    let mut header: Vec<String> = ["seed", "settle_index", "post_iterations", "any_violation_frequency", "max_violation"].map(String::from).to_vec();
    header.extend((1..=m).map(|i| format!("violation_frequency_{i}")));
    header.extend((1..=m).map(|i| format!("sign_changes_{i}")));
    w.write_record(&header)?;
    for (seed, s) in rows {
        let mut rec = vec![
            seed.to_string(),
            s.settle_index.to_string(),
            s.post_settling_iterations.to_string(),
            format!("{:e}", s.any_violation_frequency),
            format!("{:e}", s.max_violation),
        ];
        rec.extend(s.violation_frequency.iter().map(|f| format!("{f:e}")));
        rec.extend(s.sign_changes.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` if either
/// input is constant or shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling_and_frequencies() {
        let obj = [10.0, 5.0, 1.02, 0.99, 1.0];
        assert_eq!(settling_index_of(&obj, 0.05), 3);
        // entering the band early does not count if the objective leaves it again
        assert_eq!(settling_index_of(&[1.0, 2.0, 1.0, 1.0], 0.05), 3);
        assert_eq!(settling_index_of(&[1.0, 1.0], 0.05), 1);
        // a long trace oscillating +-10% around 1 settles once the transient is over
        let long: Vec<f64> = (0..200).map(|t| if t < 50 { 3.0 } else if t % 2 == 0 { 1.1 } else { 0.9 }).collect();
        assert_eq!(settling_index_of(&long, 0.05), 60);
        let slacks = vec![vec![1.0, -1.0], vec![1.0, -1.0], vec![0.1, -0.2], vec![-0.1, 0.3], vec![0.2, -0.1]];
        let s = oscillation_from(&obj, &slacks, 0.05);
        assert_eq!(s.post_settling_iterations, 3);
        assert!((s.violation_frequency[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.violation_frequency[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.any_violation_frequency, 1.0);
        assert_eq!(s.sign_changes, vec![2, 2]);
        assert!((s.max_violation - 0.3).abs() < 1e-12);
    }

    #[test]
    fn spearman_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), None);
        // tied middle ranks: x ranks 1,2,3,4; y ranks 1,2.5,2.5,4
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((r - 4.5 / (5.0f64 * 4.5).sqrt()).abs() < 1e-12);
    }
}
