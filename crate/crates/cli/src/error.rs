use std::fmt;

use citefocus::align::AlignError;
use citefocus::corpus::CorpusError;
use citefocus::fcm::ScoreError;
use citefocus::gate::GateError;
use citefocus::pipeline::LoopError;
use citefocus::shapley::ShapleyError;
use citefocus::trainer::TrainError;

/// Exit status for a bad invocation or input that violates a contract.
pub const CONTRACT: u8 = 1;
/// Exit status for file-system and scoring-service failures.
pub const IO: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn contract(message: impl Into<String>) -> Self {
        Failure {
            code: CONTRACT,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Failure {
            code: IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn score_code(e: &ScoreError) -> u8 {
    match e {
        ScoreError::Retryable(_) | ScoreError::Protocol(_) => IO,
        ScoreError::EmptyClaim | ScoreError::Config(_) => CONTRACT,
    }
}

fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::Io { .. } => IO,
        _ => CONTRACT,
    }
}

fn gate_code(e: &GateError) -> u8 {
    match e {
        GateError::Sentence { source, .. } | GateError::Facts(source) => score_code(source),
        GateError::Threshold(_) => CONTRACT,
    }
}

fn shapley_code(e: &ShapleyError) -> u8 {
    match e {
        ShapleyError::Score(s) => score_code(s),
        ShapleyError::Sentence { source, .. } => shapley_code(source),
        _ => CONTRACT,
    }
}

fn loop_code(e: &LoopError) -> u8 {
    match e {
        LoopError::Corpus(c) => corpus_code(c),
        LoopError::Score(s) => score_code(s),
        LoopError::Gate { source, .. } => gate_code(source),
        LoopError::Weights { source, .. } => shapley_code(source),
        LoopError::Io { .. } => IO,
        _ => CONTRACT,
    }
}

macro_rules! classify {
    ($($ty:ty => $f:expr),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                let code: fn(&$ty) -> u8 = $f;
                Failure { code: code(&e), message: e.to_string() }
            }
        })*
    };
}

classify! {
    CorpusError => corpus_code,
    ScoreError => score_code,
    GateError => gate_code,
    ShapleyError => shapley_code,
    LoopError => loop_code,
    AlignError => |_| CONTRACT,
    TrainError => |_| CONTRACT,
}
