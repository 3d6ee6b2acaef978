//! JSON problem files.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "dataset": "synthetic_compas.csv",
//!   "protected": [{"name": "gender", "cardinality": 2, "labels": ["Male", "Female"]}],
//!   "output_dim": 2,
//!   "output_geometry": "probability_simplex_via_logits",
//!   "objective": {"kind": "cross_entropy", "regularizer": 0.001},
//!   "constraints": [
//!     {"loss": {"kind": "kl_pair"},
//!      "transform": {"attribute": "gender", "values": ["Male", "Female"], "mode": "swap"},
//!      "level": 0.001}
//!   ]
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::data::{AttributeSchema, RawData, Transform, TransformMode};
use crate::problem::loss::PointwiseLoss;
use crate::problem::spec::{ConstraintSpec, Group, OutputGeometry, ProblemSpec};

pub const PROBLEM_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformDef {
    pub attribute: String,
    pub values: [String; 2],
    #[serde(default = "default_mode")]
    pub mode: TransformMode,
}

fn default_mode() -> TransformMode {
    TransformMode::Swap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDef {
    pub attribute: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDef {
    pub loss: PointwiseLoss,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupDef>,
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub schema_version: u32,
    /// Dataset CSV, relative to the problem file.
    pub dataset: PathBuf,
    #[serde(default)]
    pub protected: Vec<AttributeSchema>,
    pub output_dim: usize,
    pub output_geometry: OutputGeometry,
    pub objective: PointwiseLoss,
    pub constraints: Vec<ConstraintDef>,
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)?;
        let file: ProblemFile = serde_json::from_str(&text)?;
        if file.schema_version != PROBLEM_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "problem schema_version {} unsupported (expected {PROBLEM_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let data = base.join(&file.dataset);
        Ok((file, data))
    }

    pub fn read_data(&self, data_path: &Path) -> Result<RawData> {
        RawData::read_csv(data_path, &self.protected)
    }

    fn attribute(&self, schema: &[AttributeSchema], name: &str) -> Result<usize> {
        schema
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Config(format!("unknown protected attribute `{name}`")))
    }

    pub fn constraint_specs(&self, schema: &[AttributeSchema]) -> Result<Vec<ConstraintSpec>> {
        self.constraints
            .iter()
            .map(|c| {
                let transform = match &c.transform {
                    Some(t) => {
                        let a = self.attribute(schema, &t.attribute)?;
                        let code = |v: &str| {
                            schema[a]
                                .code_of(v)
                                .ok_or_else(|| Error::Config(format!("unknown value `{v}` for attribute `{}`", t.attribute)))
                        };
                        Some(Transform {
                            attribute: a,
                            from: code(&t.values[0])?,
                            to: code(&t.values[1])?,
                            mode: t.mode,
                        })
                    }
                    None => None,
                };
                let group = match &c.group {
                    Some(g) => {
                        let a = self.attribute(schema, &g.attribute)?;
                        let value = schema[a]
                            .code_of(&g.value)
                            .ok_or_else(|| Error::Config(format!("unknown group value `{}`", g.value)))?;
                        Some(Group { attribute: a, value })
                    }
                    None => None,
                };
                Ok(ConstraintSpec {
                    loss: c.loss.clone(),
                    transform,
                    level: c.level,
                    group,
                })
            })
            .collect()
    }

    /// Builds the problem on `raw` (typically the training split).
    pub fn build(&self, raw: RawData) -> Result<ProblemSpec> {
        let constraints = self.constraint_specs(&raw.schema)?;
        ProblemSpec::new(raw, self.objective.clone(), constraints, self.output_dim, self.output_geometry)
    }
}
