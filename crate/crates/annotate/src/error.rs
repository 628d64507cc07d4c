use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown round {0}")]
    UnknownRound(String),
    #[error("round {0} already exists")]
    DuplicateRound(String),
    #[error("invalid round: {0}")]
    InvalidRound(String),
    #[error("pair {pair_id} is not among the chosen pairs of round {round_id}")]
    UnknownPair { round_id: String, pair_id: String },
    #[error("annotation text is empty")]
    EmptyText,
    #[error("annotator id is missing")]
    MissingAnnotator,
    #[error("round {0} has been exported and is read-only")]
    ReadOnly(String),
    #[error("round {round_id} is missing annotations for: {}", missing.join(", "))]
    Incomplete { round_id: String, missing: Vec<String> },
    #[error("round {0} has not been exported")]
    NotExported(String),
    #[error("corrupt event log {path}, line {line}: {reason}")]
    CorruptLog { path: PathBuf, line: usize, reason: String },
    #[error("event log i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable machine-readable code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownRound(_) => "unknown_round",
            Self::DuplicateRound(_) => "duplicate_round",
            Self::InvalidRound(_) => "invalid_round",
            Self::UnknownPair { .. } => "unknown_pair",
            Self::EmptyText => "empty_text",
            Self::MissingAnnotator => "missing_annotator",
            Self::ReadOnly(_) => "read_only",
            Self::Incomplete { .. } => "incomplete",
            Self::NotExported(_) => "not_exported",
            Self::CorruptLog { .. } => "corrupt_log",
            Self::Io(_) => "io",
        }
    }
}
