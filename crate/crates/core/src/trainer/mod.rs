//! Training loops, evaluation, embedding export and hyper-parameter sweeps.

pub mod embed;
pub mod eval;
pub mod presets;
pub mod run;
pub mod sweep;

pub use embed::{export_embeddings, one_nn_accuracy, EmbeddingLayer, EmbeddingTable};
pub use eval::{evaluate, predict, ClassAccuracy, Evaluation};
pub use run::{
    init_network, student_step, train_student, train_teacher, EpochRecord, RunRecord, StepLosses, TrainConfig,
    TrainOutcome, Trainee,
};
pub use sweep::{env_threads, sweep, write_sweep_csv, SweepGrid, SweepPoint};
