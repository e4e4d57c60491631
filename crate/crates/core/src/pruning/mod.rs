//! Layer-wise quaternion filter pruning: importance scoring, removal plans,
//! model surgery and fine-tuning.

mod importance;
mod plan;
mod surgery;

pub use importance::{
    geometric_median, gm_importance, gm_objective, importance, l1_importance, largest_singular_value, op_importance,
    Method, GM_MAX_ITER, GM_TOL, POWER_MAX_ITER, POWER_TOL,
};
pub use plan::{build_prune_plan, lowest_scores, removal_count, LayerPlan, LayerSelector, PrunePlan};
pub use surgery::{apply_prune, check_consumer};

use crate::error::Result;
use crate::nn::ModelGraph;
use crate::train::{train, Dataset, TrainConfig, TrainLog};

/// Fine-tunes a pruned model with the supervised loss and returns the
/// checkpoint with the best validation metric (`val` defaults to `data`).
pub fn finetune(model: &ModelGraph<f32>, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<(ModelGraph<f32>, TrainLog)> {
    let mut m = model.clone();
    let log = train(&mut m, data, cfg, Some(val.unwrap_or(data)))?;
    Ok((m, log))
}

/// Scores, plans and cuts in one step.
pub fn prune(model: &ModelGraph<f32>, method: Method, ratio: f64, targets: &LayerSelector) -> Result<(ModelGraph<f32>, PrunePlan)> {
    let plan = build_prune_plan(model, method, ratio, targets)?;
    Ok((apply_prune(model, &plan)?, plan))
}
