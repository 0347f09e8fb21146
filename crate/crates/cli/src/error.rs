use semdist::align::AlignError;
use semdist::analytics::AnalyticsError;
use semdist::corpus::CorpusError;
use semdist::distance::SemDistError;
use semdist::embedding::EmbedError;
use semdist::entity::EntityError;
use semdist::frame::{FrameError, FrameFileError};
use semdist::perturb::PerturbError;
use thiserror::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Contract(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Contract(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn embed_class(e: &EmbedError) -> fn(String) -> CliError {
    match e {
        EmbedError::EmptySentence { .. } | EmbedError::InvalidSpec(_) => CliError::Input,
        _ => CliError::Backend,
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        embed_class(&e)(e.to_string())
    }
}

impl From<SemDistError> for CliError {
    fn from(e: SemDistError) -> Self {
        let class = match &e {
            SemDistError::Corpus(_) => CliError::Input,
            other => other.embed_error().map_or(CliError::Backend as fn(String) -> CliError, embed_class),
        };
        class(e.to_string())
    }
}

impl From<PerturbError> for CliError {
    fn from(e: PerturbError) -> Self {
        match e {
            PerturbError::EmptyVocabulary => CliError::Input(e.to_string()),
            other => CliError::Contract(other.to_string()),
        }
    }
}

impl From<FrameFileError> for CliError {
    fn from(e: FrameFileError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FrameError> for CliError {
    fn from(e: FrameError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EntityError> for CliError {
    fn from(e: EntityError) -> Self {
        match e {
            EntityError::LengthMismatch { .. } => CliError::Contract(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Corpus(_) | AnalyticsError::PartialField { .. } | AnalyticsError::Wer { .. } => {
                CliError::Input(e.to_string())
            }
            other => CliError::Contract(other.to_string()),
        }
    }
}
