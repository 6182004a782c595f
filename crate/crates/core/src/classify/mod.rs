//! Correctness prediction from per-head cluster labels: categorical feature
//! tables, boosted trees over ordered target statistics, exact tree Shapley
//! values and per-head importance.

mod cv;
mod encode;
mod gbdt;
mod importance;
mod shap;
mod table;

pub use cv::{cross_validate, fold_plan, mean_ci, CvReport, FoldModel, DEFAULT_FOLDS};
pub use encode::{ordered_encode, CategoryEncoder, PRIOR};
pub use gbdt::{sigmoid, train_gbdt, GbdtConfig, GbdtModel, Node, Tree};
pub use importance::{
    explain_folds, head_importance, select_heads, HeadImportance, LabelMean, Selection, SelectionMode, ShapSummary,
};
pub use shap::{shap_values, tree_shap, Explanation};
pub use table::{FeatureTable, MISSING};
