//! ArcFace classifier head, its SGD trainer, and the voice-conversion loss
//! aggregation with the embedding feedback term.

mod arcface;
mod train;
mod vc;

pub use arcface::{
    arcface_forward, arcface_grad, ArcFaceConfig, ArcFaceGrad, ArcFaceOutput, HeadParams,
    COS_CLAMP,
};
pub use train::{train_head, train_head_from, TrainOutcome, TrainSchedule};
pub use vc::{embedding_feedback_loss, vc_total_loss, VcLossComponents, EMBEDDING_LOSS_WEIGHT};
