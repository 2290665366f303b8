//! Dataset ingestion, behavior sequences and train/test splits.

mod dataset;
mod sample;
mod split;

pub use dataset::{
    parse_matrix, read_ids, read_matrix, write_matrix, Cell, Dataset, DatasetPaths, Domain, LoadReport, SYMMETRY_TOL,
};
pub use sample::{build_sample, BehaviorSample, SequenceIndex};
pub use split::{
    coldstart_split, cv_split, derive_seed, full_split, rng, sparse_keep, sparsify, split_folds, CellSplit, FoldPlan,
    SplitManifest, DEFAULT_FOLDS,
};
