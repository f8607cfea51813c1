//! File formats, configuration and pipeline orchestration.

mod config;
pub mod io;
pub mod pipeline;

use thiserror::Error;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, ConfusionCount, PipelineOutcome};

use crate::eval::EvalError;
use crate::fusion::FusionError;
use crate::model::Violation;
use crate::sim::SimError;

/// Process exit codes used by the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const PARSE: i32 = 3;
    pub const VALIDATION: i32 = 4;
    pub const DIVERGENCE: i32 = 5;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: at {path}: {message}")]
    Parse {
        file: String,
        line: usize,
        path: String,
        message: String,
    },
    #[error("{file}: {} validation error(s): {}", violations.len(), summarize(violations))]
    Validation {
        file: String,
        violations: Vec<Violation>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed on scene {scene:?}: {message}")]
    Stage {
        stage: &'static str,
        scene: String,
        message: String,
    },
    #[error(transparent)]
    Fusion(FusionError),
    #[error(transparent)]
    Eval(EvalError),
    #[error(transparent)]
    Sim(SimError),
}

fn summarize(v: &[Violation]) -> String {
    let mut s: Vec<String> = v.iter().take(5).map(|v| v.to_string()).collect();
    if v.len() > 5 {
        s.push(format!("... {} more", v.len() - 5));
    }
    s.join("; ")
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse { .. } => exit::PARSE,
            HarnessError::Validation { .. } | HarnessError::Config(_) | HarnessError::Sim(_) => {
                exit::VALIDATION
            }
            HarnessError::Stage { stage, .. } if *stage == "build_training_set" => exit::VALIDATION,
            HarnessError::Fusion(FusionError::Diverged { .. }) => exit::DIVERGENCE,
            _ => exit::OTHER,
        }
    }
}
