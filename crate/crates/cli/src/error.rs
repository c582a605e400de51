use std::fmt;

use rpcgc_core::{CodecError, PipelineError, PlyError, ResidualError};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 2,
    Corrupt = 3,
    Incompatible = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Exit::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn incompatible(msg: impl fmt::Display) -> Self {
        Self::new(Exit::Incompatible, anyhow::anyhow!("{msg}"))
    }

    pub fn new(exit: Exit, error: anyhow::Error) -> Self {
        Self { exit, error }
    }

    pub fn context(self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            exit: self.exit,
            error: self.error.context(ctx),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

fn codec_exit(e: &CodecError) -> Exit {
    match e {
        CodecError::BadVersion { .. } => Exit::Incompatible,
        CodecError::Invalid(_) | CodecError::NegativeVoxel(_) | CodecError::TooDeep(_) | CodecError::EmptyGrid => {
            Exit::Usage
        }
        _ => Exit::Corrupt,
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        Self::new(codec_exit(&e), e.into())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let exit = match &e {
            PipelineError::Codec(c) | PipelineError::Residual(ResidualError::Codec(c)) => codec_exit(c),
            PipelineError::Residual(
                ResidualError::BadGrouping | ResidualError::PointCountMismatch { .. } | ResidualError::BadFgWeight(_),
            ) => Exit::Corrupt,
            _ => Exit::Usage,
        };
        Self::new(exit, e.into())
    }
}

impl From<PlyError> for Failure {
    fn from(e: PlyError) -> Self {
        Self::new(Exit::Corrupt, e.into())
    }
}
