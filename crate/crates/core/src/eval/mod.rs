//! Ranking metrics with enumeration oracles, and runners for the
//! evaluation protocols: repeated cross-validation, cold start, sparsity,
//! hyperparameter sweeps and top-K candidate ranking.
//!
//! Runners execute their units (folds, drugs, λ values, grid points) on the
//! current rayon pool and merge results in unit order, so a report depends
//! only on the dataset, the configs and the seed.

mod metrics;
mod report;
mod runners;

#[cfg(test)]
mod tests;

pub use metrics::{auprc, auprc_enumerated, auroc, auroc_pairwise, pr_points, roc_points, ScoredSet};
pub use report::{write_curve, Aggregate, Experiment, ExperimentReport, Summary, UnitEntry, UnitScores};
pub use runners::{
    evaluate_split, fold_model_seed, rank_candidates, run_coldstart, run_cv, run_cv_folds, run_sparse, select_drugs,
    surface_text, sweep, train_prototypes, RankedDrug, Ranking, RunSpec,
};
