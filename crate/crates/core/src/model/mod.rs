//! The desk-scale classifier, its optimizer, and training/evaluation loops.

mod checkpoint;
mod gradcam;
mod metrics;
mod net;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MANIFEST_FILE};
pub use gradcam::{bilinear_upsample, class_score_from_stack, grad_cam, grad_cam_detail, CamDetail, CAM_DRAW};
pub use metrics::{accuracy, auroc, evaluate, EvalReport, EVAL_DRAW_BASE};
pub use net::{Forward, NetShape, Param, TinyConvNet, CHANNEL_PLAN, DEFAULT_K, NUM_CLASSES};
pub use optim::{adam_step, lr_factor, AdamState, BETA1, BETA2, EPS, LR_FINAL_FACTOR};
pub use train::{log_to_csv, train, EpochLog, TrainOutcome, LOG_HEADER};
