//! File formats, workspace stages and the command-line front end for the
//! topic-conditioned generation pipeline in `topicsteer-core`.

pub mod config;
pub mod container;
pub mod error;
pub mod io;
pub mod workspace;

pub use config::PipelineConfig;
pub use error::{Kind, StageError, StageResult};
pub use workspace::Workspace;
