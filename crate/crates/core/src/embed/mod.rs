//! Paragraph-vector document embeddings trained with negative sampling.

mod gradcheck;
mod io;
mod model;
mod objective;
mod vocab;

pub use gradcheck::{build_problem, gradient_check, Example, GradCheckReport, GradProblem, Input};
pub use io::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::{
    cosine, Algorithm, EmbedConfig, EmbeddingModel, InferParams, Inferred, LrSchedule, TrainStats,
};
pub use objective::{neg_log_sigmoid, sigmoid};
pub use vocab::Vocab;
