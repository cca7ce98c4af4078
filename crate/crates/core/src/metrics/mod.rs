//! Rank and linear correlation metrics, logistic correction and the
//! shuffle-stability evaluation protocol. All arithmetic is `f64`.

mod eval;
mod logistic;
mod rank;

pub use eval::{evaluate, EvalOptions, EvalReport, ShuffleMetrics};
pub use logistic::{fit_logistic, plcc, FitOptions, LogisticFit, LogisticForm};
pub use rank::{average_ranks, krcc, pearson, srcc};
