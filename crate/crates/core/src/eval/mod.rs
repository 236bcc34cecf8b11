//! Corpus ranking, TREC run/qrels files, AP and inferred AP, late fusion.

mod fusion;
mod metrics;
mod qrels;
mod run;

pub use fusion::{late_fuse, min_max_normalize, FuseOptions};
pub use metrics::{average_precision, evaluate_run, inf_ap, recall_at, EvalSummary, QueryScores, INFAP_EPSILON};
pub use qrels::{format_qrels, parse_qrels, read_qrels, write_qrels, JudgmentSet, QueryJudgments};
pub use run::{
    embed_corpus, format_run, parse_run, rank, rank_embedded, read_run, search, write_run, RankedRun, Scored,
};
