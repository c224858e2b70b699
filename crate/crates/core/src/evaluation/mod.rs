//! Retrieval, bridge transfer, zero-shot classification, the ridge baseline
//! and unit probing over trained representations.

mod embed;
mod probe;
mod report;
mod retrieval;
mod ridge;
mod svm;

pub use embed::{embed_all, embed_pairs, raw_features, standardize, Embeddings, EMBED_BATCH};
pub use probe::{probe_units, top_k, ProbeRow};
pub use report::{
    reference_rows, AccuracyRow, EvalReport, ReferenceRow, RetrievalRow, ACCURACIES_FILE, PROBES_FILE,
    RANKS_FILE, SUMMARY_FILE, TIE_BREAK,
};
pub use retrieval::{
    bridge_transfer_eval, cosine, cross_modal_retrieval, last_hidden_tap, median, median_rank_retrieval,
    retrieval_ranks, PairRetrieval, RetrievalOptions, RetrievalResult,
};
pub use ridge::{linear_regression_baseline, RidgeConfig, RidgeMap, DEFAULT_LAMBDA};
pub use svm::{accuracy, fit_selected, select_c, two_folds, zero_shot_transfer, FeatureNorm, OneVsAll, SvmConfig, ZeroShotResult};
