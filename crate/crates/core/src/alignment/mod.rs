//! Encoder warm-up, similarity-ranked progressive contrastive alignment and
//! fusion-head training.

pub mod data;
pub mod itc;
pub mod log;
pub mod ranking;
pub mod schedule;
pub mod train;

pub use data::{TrainItem, TrainSet};
pub use itc::{itc_loss, ItcDirection};
pub use log::{StageLog, StageRow};
pub use ranking::{rank_scores, rank_self_similarity, RankedOrder};
pub use schedule::PfaSchedule;
pub use train::{
    encode_all, mean_diagonal_similarity, pooled_embeddings, predict, run_fusion, run_pfa, warmup, EncodedItem,
    PfaReport, TrainConfig, WarmupReport,
};
