//! Loss, gradients, the adaptive update rule, learning-rate scheduling and
//! the epoch loop.

mod history;
mod loss;
mod optimizer;
mod schedule;
mod trainer;

pub use history::{read_history_csv, write_history_csv, EpochRecord};
pub use loss::{cross_entropy_gradient, cross_entropy_loss, CrossEntropyBatch};
pub use optimizer::{adadelta_step, AdadeltaState};
pub use schedule::{EarlyStopper, PlateauScheduler, StopDecision};
pub use trainer::{argmax, evaluate_set, train_model, train_model_with, LabeledImages, TrainConfig, TrainOutcome};
