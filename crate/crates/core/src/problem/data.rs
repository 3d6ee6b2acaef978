//! Tabular samples, protected-attribute schemas and the counterfactual closure.
//!
//! A [`Dataset`] is built from raw weighted samples plus a list of
//! [`Transform`]s. Building materializes every transform image of every
//! weighted sample as an extra zero-weight support point, so that every
//! functional in the system is evaluated over one fixed, finite support.
//! Sources always occupy the first `n_sources()` rows; images follow.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One protected attribute and the number of values it can take.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub cardinality: usize,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl AttributeSchema {
    pub fn new(name: &str, cardinality: usize) -> Self {
        Self {
            name: name.to_string(),
            cardinality,
            labels: Vec::new(),
        }
    }

    pub fn with_labels(name: &str, labels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            cardinality: labels.len(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Resolves a value by label or by decimal code.
    pub fn code_of(&self, value: &str) -> Option<usize> {
        if let Some(i) = self.labels.iter().position(|l| l == value) {
            return Some(i);
        }
        value.parse::<usize>().ok().filter(|&v| v < self.cardinality)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    /// `from <-> to`; an involution.
    Swap,
    /// `from -> to` only.
    Directed,
}

/// A single-attribute modification of the protected vector.
///
/// Values the transform does not act on are fixed points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transform {
    pub attribute: usize,
    pub from: usize,
    pub to: usize,
    pub mode: TransformMode,
}

impl Transform {
    pub fn swap(attribute: usize, a: usize, b: usize) -> Self {
        Self {
            attribute,
            from: a,
            to: b,
            mode: TransformMode::Swap,
        }
    }

    pub fn directed(attribute: usize, from: usize, to: usize) -> Self {
        Self {
            attribute,
            from,
            to,
            mode: TransformMode::Directed,
        }
    }

    /// Image of a protected vector, or `None` when `z` is a fixed point.
    pub fn apply(&self, z: &[usize]) -> Option<Vec<usize>> {
        let v = z[self.attribute];
        let target = if v == self.from {
            self.to
        } else if v == self.to && self.mode == TransformMode::Swap {
            self.from
        } else {
            return None;
        };
        if target == v {
            return None;
        }
        let mut out = z.to_vec();
        out[self.attribute] = target;
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub protected: Vec<usize>,
    pub label: f64,
    pub weight: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, protected: Vec<usize>, label: f64, weight: f64) -> Self {
        Self {
            features,
            protected,
            label,
            weight,
        }
    }

    /// Class index for classification losses.
    pub fn class(&self) -> usize {
        self.label.round().max(0.0) as usize
    }

    fn key(&self) -> (Vec<u64>, u64, Vec<usize>) {
        (
            self.features.iter().map(|x| x.to_bits()).collect(),
            self.label.to_bits(),
            self.protected.clone(),
        )
    }
}

/// Result of applying a transform to a support point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counterfactual {
    pub index: usize,
    pub fixed_point: bool,
}

/// Raw weighted table as read from disk, before the closure is built.
#[derive(Clone, Debug, PartialEq)]
pub struct RawData {
    pub samples: Vec<Sample>,
    pub schema: Vec<AttributeSchema>,
}

impl RawData {
    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    /// Reads the `x0..x{d-1}, z0..z{k-1}, y[, w]` CSV layout.
    ///
    /// Missing `w` means uniform weights; weights are renormalized to sum to one.
    /// When `schema` is empty, cardinalities are inferred as `max code + 1`.
    pub fn read_csv(path: &Path, schema: &[AttributeSchema]) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let mut xcols = Vec::new();
        while let Some(c) = col(&format!("x{}", xcols.len())) {
            xcols.push(c);
        }
        let mut zcols = Vec::new();
        while let Some(c) = col(&format!("z{}", zcols.len())) {
            zcols.push(c);
        }
        let ycol = col("y").ok_or_else(|| Error::Structural("dataset CSV has no `y` column".into()))?;
        let wcol = col("w");
        if !schema.is_empty() && schema.len() != zcols.len() {
            return Err(Error::Shape {
                expected: format!("{} protected columns", schema.len()),
                got: format!("{}", zcols.len()),
            });
        }
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Structural(format!("row {row}: unparsable column {c}")))
            };
            let features = xcols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
            let protected = zcols
                .iter()
                .map(|&c| {
                    let v = num(c)?;
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Structural(format!("row {row}: protected code {v} is not a category")));
                    }
                    Ok(v as usize)
                })
                .collect::<Result<Vec<_>>>()?;
            let label = num(ycol)?;
            let weight = match wcol {
                Some(c) => num(c)?,
                None => 1.0,
            };
            samples.push(Sample::new(features, protected, label, weight));
        }
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        if samples.is_empty() || total <= 0.0 {
            return Err(Error::Structural("dataset has no positive mass".into()));
        }
        for s in &mut samples {
            s.weight /= total;
        }
        let schema = if schema.is_empty() {
            (0..zcols.len())
                .map(|a| {
                    let card = samples.iter().map(|s| s.protected[a]).max().unwrap_or(0) + 1;
                    AttributeSchema::new(&format!("z{a}"), card)
                })
                .collect()
        } else {
            schema.to_vec()
        };
        Ok(Self { samples, schema })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.feature_dim();
        let k = self.schema.len();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.extend((0..k).map(|i| format!("z{i}")));
        header.push("y".into());
        header.push("w".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.features.iter().map(|x| format!("{x}")).collect();
            rec.extend(s.protected.iter().map(|z| z.to_string()));
            rec.push(format!("{}", s.label));
            rec.push(format!("{}", s.weight));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows at `idx`, weights renormalized to sum to one.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut samples: Vec<Sample> = idx.iter().map(|&i| self.samples[i].clone()).collect();
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        if total > 0.0 {
            for s in &mut samples {
                s.weight /= total;
            }
        }
        Self {
            samples,
            schema: self.schema.clone(),
        }
    }
}

/// Finite empirical support closed under a set of counterfactual transforms.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
    n_sources: usize,
    schema: Vec<AttributeSchema>,
    transforms: Vec<Transform>,
    closure: Vec<Vec<Option<Counterfactual>>>,
    mass: Vec<f64>,
}

impl Dataset {
    /// Builds the closed support.
    ///
    /// Every image of every source under every transform is looked up among the
    /// existing support points by `(features, label, protected)` and appended as a
    /// zero-weight point when absent. Images inherit the source weight in the
    /// support measure used for L2 geometry.
    pub fn new(raw: RawData, transforms: Vec<Transform>) -> Result<Self> {
        let RawData { samples, schema } = raw;
        if samples.is_empty() {
            return Err(Error::Structural("empty dataset".into()));
        }
        let d = samples[0].features.len();
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Structural(format!("weights sum to {total}, expected 1")));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.weight >= 0.0) || !s.weight.is_finite() {
                return Err(Error::Structural(format!("sample {i} has invalid weight {}", s.weight)));
            }
            if s.features.len() != d {
                return Err(Error::Shape {
                    expected: format!("{d} features"),
                    got: format!("{} at sample {i}", s.features.len()),
                });
            }
            if s.protected.len() != schema.len() {
                return Err(Error::Shape {
                    expected: format!("{} protected attributes", schema.len()),
                    got: format!("{} at sample {i}", s.protected.len()),
                });
            }
            for (a, (&z, att)) in s.protected.iter().zip(&schema).enumerate() {
                if z >= att.cardinality {
                    return Err(Error::Structural(format!(
                        "sample {i}: attribute {a} code {z} exceeds cardinality {}",
                        att.cardinality
                    )));
                }
            }
        }
        for (t, tr) in transforms.iter().enumerate() {
            let att = schema
                .get(tr.attribute)
                .ok_or_else(|| Error::Structural(format!("transform {t} references unknown attribute {}", tr.attribute)))?;
            if tr.from >= att.cardinality || tr.to >= att.cardinality {
                return Err(Error::Structural(format!("transform {t} uses a value outside attribute `{}`", att.name)));
            }
        }

        let n_sources = samples.len();
        let mut samples = samples;
        let mut mass: Vec<f64> = samples.iter().map(|s| s.weight).collect();
        let mut index: HashMap<_, usize> = HashMap::new();
        for (i, s) in samples.iter().enumerate() {
            index.entry(s.key()).or_insert(i);
        }
        let mut closure = vec![vec![None; transforms.len()]; n_sources];
        for j in 0..n_sources {
            for (t, tr) in transforms.iter().enumerate() {
                let entry = match tr.apply(&samples[j].protected) {
                    None => Counterfactual {
                        index: j,
                        fixed_point: true,
                    },
                    Some(z) => {
                        let mut img = samples[j].clone();
                        img.protected = z;
                        img.weight = 0.0;
                        let key = img.key();
                        let k = match index.get(&key) {
                            Some(&k) => k,
                            None => {
                                samples.push(img);
                                mass.push(0.0);
                                index.insert(key, samples.len() - 1);
                                samples.len() - 1
                            }
                        };
                        if k >= n_sources {
                            mass[k] += samples[j].weight;
                        }
                        Counterfactual {
                            index: k,
                            fixed_point: false,
                        }
                    }
                };
                closure[j][t] = Some(entry);
            }
        }
        // images resolve only where the transformed point is itself in the support
        for k in n_sources..samples.len() {
            let row = transforms
                .iter()
                .map(|tr| match tr.apply(&samples[k].protected) {
                    None => Some(Counterfactual {
                        index: k,
                        fixed_point: true,
                    }),
                    Some(z) => {
                        let mut img = samples[k].clone();
                        img.protected = z;
                        index.get(&img.key()).map(|&i| Counterfactual {
                            index: i,
                            fixed_point: false,
                        })
                    }
                })
                .collect();
            closure.push(row);
        }
        Ok(Self {
            samples,
            n_sources,
            schema,
            transforms,
            closure,
            mass,
        })
    }

    /// Dataset without counterfactual transforms.
    pub fn plain(raw: RawData) -> Result<Self> {
        Self::new(raw, Vec::new())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Number of weighted source rows (the leading rows of the support).
    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn support_size(&self) -> usize {
        self.samples.len()
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.schema
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].features.len()
    }

    /// Dimension of the model input: features followed by one-hot protected codes.
    pub fn input_dim(&self) -> usize {
        self.feature_dim() + self.schema.iter().map(|a| a.cardinality).sum::<usize>()
    }

    pub fn input_row(&self, i: usize, out: &mut [f64]) {
        let s = &self.samples[i];
        let d = s.features.len();
        out[..d].copy_from_slice(&s.features);
        let mut off = d;
        for (&z, att) in s.protected.iter().zip(&self.schema) {
            for v in 0..att.cardinality {
                out[off + v] = if v == z { 1.0 } else { 0.0 };
            }
            off += att.cardinality;
        }
    }

    /// Support measure defining the empirical L2 inner product.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.weight).collect()
    }

    pub fn transform_index(&self, t: &Transform) -> Option<usize> {
        self.transforms.iter().position(|x| x == t)
    }

    /// Image of support point `i` under transform `t`.
    pub fn counterfactual_apply(&self, i: usize, t: usize) -> Result<Counterfactual> {
        if i >= self.samples.len() || t >= self.transforms.len() {
            return Err(Error::Structural(format!(
                "counterfactual index out of range: sample {i}, transform {t}"
            )));
        }
        self.closure[i][t]
            .ok_or_else(|| Error::Structural(format!("image of support point {i} under transform {t} is not materialized")))
    }

    /// Rows of sources sharing a counterfactual block with their images.
    pub fn coupled_blocks(&self) -> Vec<Vec<usize>> {
        let n = self.samples.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for j in 0..self.n_sources {
            for entry in self.closure[j].iter().flatten() {
                let a = find(&mut parent, j);
                let b = find(&mut parent, entry.index);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        let mut blocks: Vec<Vec<usize>> = groups.into_values().collect();
        blocks.sort_by_key(|b| b[0]);
        blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gender_race() -> Vec<AttributeSchema> {
        vec![
            AttributeSchema::with_labels("gender", &["Male", "Female"]),
            AttributeSchema::with_labels("race", &["African-American", "Hispanic", "Caucasian", "Other"]),
        ]
    }

    fn raw() -> RawData {
        RawData {
            samples: vec![
                Sample::new(vec![0.1, 0.2], vec![0, 2], 1.0, 0.5),
                Sample::new(vec![0.3, -0.2], vec![1, 1], 0.0, 0.5),
            ],
            schema: gender_race(),
        }
    }

    #[test]
    fn gender_swap_finds_twin() {
        let male_to_female = Transform::directed(0, 0, 1);
        let ds = Dataset::new(raw(), vec![male_to_female]).unwrap();
        let cf = ds.counterfactual_apply(0, 0).unwrap();
        assert!(!cf.fixed_point);
        let twin = ds.sample(cf.index);
        assert_eq!(twin.protected, vec![1, 2]);
        assert_eq!(twin.features, ds.sample(0).features);
        assert_eq!(twin.label, ds.sample(0).label);
        assert_eq!(twin.weight, 0.0);
    }

    #[test]
    fn directed_swap_on_target_value_is_fixed_point() {
        let ds = Dataset::new(raw(), vec![Transform::directed(0, 0, 1)]).unwrap();
        let cf = ds.counterfactual_apply(1, 0).unwrap();
        assert_eq!(cf, Counterfactual { index: 1, fixed_point: true });
    }

    #[test]
    fn race_swap_changes_only_race() {
        let schema = gender_race();
        let cauc = schema[1].code_of("Caucasian").unwrap();
        let aa = schema[1].code_of("African-American").unwrap();
        let ds = Dataset::new(raw(), vec![Transform::swap(1, cauc, aa)]).unwrap();
        let cf = ds.counterfactual_apply(0, 0).unwrap();
        assert!(!cf.fixed_point);
        assert_eq!(ds.sample(cf.index).protected, vec![0, aa]);
        // sample 1 is Hispanic: untouched
        assert!(ds.counterfactual_apply(1, 0).unwrap().fixed_point);
    }

    #[test]
    fn swap_twice_is_identity() {
        let ds = Dataset::new(raw(), vec![Transform::swap(0, 0, 1)]).unwrap();
        for i in 0..ds.n_sources() {
            let once = ds.counterfactual_apply(i, 0).unwrap().index;
            let twice = ds.counterfactual_apply(once, 0).unwrap().index;
            assert_eq!(twice, i);
        }
    }

    #[test]
    fn images_inherit_source_mass() {
        let ds = Dataset::new(raw(), vec![Transform::swap(0, 0, 1)]).unwrap();
        assert_eq!(ds.support_size(), 4);
        assert_eq!(ds.mass(), &[0.5, 0.5, 0.5, 0.5]);
        let w: f64 = ds.weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn existing_twin_is_reused() {
        let mut r = raw();
        r.samples[1] = Sample::new(vec![0.1, 0.2], vec![1, 2], 1.0, 0.5);
        let ds = Dataset::new(r, vec![Transform::swap(0, 0, 1)]).unwrap();
        assert_eq!(ds.support_size(), 2);
        assert_eq!(ds.counterfactual_apply(0, 0).unwrap().index, 1);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let mut r = raw();
        r.samples[0].protected[1] = 7;
        assert!(Dataset::plain(r).is_err());
        let mut r = raw();
        r.samples[0].weight = 0.9;
        assert!(Dataset::plain(r).is_err());
        assert!(Dataset::new(raw(), vec![Transform::swap(5, 0, 1)]).is_err());
        let ds = Dataset::plain(raw()).unwrap();
        assert!(ds.counterfactual_apply(0, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let r = raw();
        r.write_csv(&path).unwrap();
        let back = RawData::read_csv(&path, &gender_race()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn input_row_one_hot() {
        let ds = Dataset::plain(raw()).unwrap();
        let mut row = vec![0.0; ds.input_dim()];
        ds.input_row(0, &mut row);
        assert_eq!(row, vec![0.1, 0.2, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
