use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::data::Dataset;

/// Output vectors of a hypothesis on every support point, row-major.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionTable {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FunctionTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::Shape {
                expected: format!("{rows}x{dim} values"),
                got: format!("{}", values.len()),
            });
        }
        Ok(Self { rows, dim, values })
    }

    pub fn constant(rows: usize, value: &[f64]) -> Self {
        let mut values = Vec::with_capacity(rows * value.len());
        for _ in 0..rows {
            values.extend_from_slice(value);
        }
        Self {
            rows,
            dim: value.len(),
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &FunctionTable) -> FunctionTable {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        Self {
            rows: self.rows,
            dim: self.dim,
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Squared norm in the support measure.
    pub fn norm_sq(&self, mass: &[f64]) -> f64 {
        (0..self.rows)
            .map(|i| mass[i] * self.row(i).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// Empirical L2 distance `sqrt(sum_k pi_k ||a_k - b_k||^2)` in the dataset's support measure.
pub fn empirical_l2_distance(a: &FunctionTable, b: &FunctionTable, dataset: &Dataset) -> Result<f64> {
    if a.rows != b.rows || a.dim != b.dim || a.rows != dataset.support_size() {
        return Err(Error::Shape {
            expected: format!("{}x{} tables on a support of {}", a.rows, a.dim, dataset.support_size()),
            got: format!("{}x{}", b.rows, b.dim),
        });
    }
    let mass = dataset.mass();
    let s: f64 = (0..a.rows)
        .map(|i| {
            let d: f64 = a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y) * (x - y)).sum();
            mass[i] * d
        })
        .sum();
    Ok(s.sqrt())
}

/// Nonnegative multiplier vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DualVector(Vec<f64>);

impl DualVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn new(components: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = components.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Structural(format!("dual component {i} = {v} is not a finite nonnegative number")));
        }
        Ok(Self(components))
    }

    /// Projects onto the nonnegative orthant.
    pub fn projected(components: Vec<f64>) -> Self {
        Self(components.into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &DualVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::data::{RawData, Sample};

    fn ds(weights: &[f64]) -> Dataset {
        let samples = weights.iter().map(|&w| Sample::new(vec![0.0], vec![], 0.0, w)).collect();
        Dataset::plain(RawData { samples, schema: vec![] }).unwrap()
    }

    #[test]
    fn distance_to_self_is_zero() {
        let d = ds(&[0.25, 0.75]);
        let a = FunctionTable::from_vec(2, 1, vec![0.3, -1.0]).unwrap();
        assert_eq!(empirical_l2_distance(&a, &a, &d).unwrap(), 0.0);
    }

    #[test]
    fn unit_point_distance() {
        let d = ds(&[1.0]);
        let a = FunctionTable::zeros(1, 1);
        let b = FunctionTable::constant(1, &[1.0]);
        assert_eq!(empirical_l2_distance(&a, &b, &d).unwrap(), 1.0);
    }

    #[test]
    fn half_mass_distance() {
        let d = ds(&[0.25, 0.25, 0.5]);
        let a = FunctionTable::zeros(3, 1);
        let b = FunctionTable::from_vec(3, 1, vec![1.0, 1.0, 0.0]).unwrap();
        let v = empirical_l2_distance(&a, &b, &d).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(v, empirical_l2_distance(&b, &a, &d).unwrap());
    }

    #[test]
    fn shape_mismatch() {
        let d = ds(&[1.0]);
        let a = FunctionTable::zeros(1, 1);
        let b = FunctionTable::zeros(1, 2);
        assert!(empirical_l2_distance(&a, &b, &d).is_err());
    }

    #[test]
    fn dual_vector_rejects_negative() {
        assert!(DualVector::new(vec![0.0, -1e-3]).is_err());
        assert_eq!(DualVector::projected(vec![0.5, -2.0]).as_slice(), &[0.5, 0.0]);
    }
}
