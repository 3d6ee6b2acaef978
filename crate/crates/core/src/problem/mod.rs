//! Datasets, losses and the constrained-problem specification shared by every solver.

pub(crate) mod blocks;
pub mod data;
pub mod file;
pub mod loss;
pub mod spec;
pub mod table;

pub use data::{AttributeSchema, Counterfactual, Dataset, RawData, Sample, Transform, TransformMode};
pub use file::ProblemFile;
pub use loss::{LossKind, PointwiseLoss};
pub use spec::{empirical_risk, ConstraintSpec, Group, LagrangianEval, OutputGeometry, ProblemSpec};
pub use table::{empirical_l2_distance, DualVector, FunctionTable};
