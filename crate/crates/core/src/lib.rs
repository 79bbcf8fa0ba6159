//! Attention specialty tuning (AST) with hierarchical step-layer-wise
//! (HSLW) scheduling for unified-attention diffusion transformers, plus the
//! instruments used to study it on a deterministic toy model.
//!
//! The unified attention map covers `d_c` text tokens followed by `hw`
//! image tokens. [`masks`] builds the per-region binary masks from a
//! [`prompt::PromptSpec`] and a [`sketch::SketchSet`], [`tuner`] rescales
//! post-softmax maps with them, and [`scheduler`] decides which regions and
//! token classes are live at each (layer, step). [`mini_dit`] runs all of
//! it end to end; [`analysis`] and [`io`] export what comes out.

pub mod analysis;
pub mod cli;
pub mod io;
pub mod masks;
pub mod mini_dit;
pub mod prompt;
pub mod scheduler;
pub mod sketch;
pub mod tensor;
pub mod tuner;

pub use masks::{FullMask, Region, RegionMask, SensitivityVector};
pub use prompt::{PromptSpec, TokenClass};
pub use scheduler::{Activation, LayerRange, ScheduleProfile};
pub use sketch::SketchSet;
pub use tensor::Matrix;

/// Square row-stochastic attention map over `d_c + hw` tokens.
pub type AttentionMap = Matrix;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Prompt(#[from] prompt::PromptError),
    #[error(transparent)]
    Sketch(#[from] sketch::SketchError),
    #[error(transparent)]
    Mask(#[from] masks::MaskError),
    #[error(transparent)]
    Tune(#[from] tuner::TuneError),
    #[error(transparent)]
    Schedule(#[from] scheduler::ScheduleError),
    #[error(transparent)]
    Model(#[from] mini_dit::ModelError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable error name for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Tensor(e) => e.kind(),
            Self::Prompt(e) => e.kind(),
            Self::Sketch(e) => e.kind(),
            Self::Mask(e) => e.kind(),
            Self::Tune(e) => e.kind(),
            Self::Schedule(e) => e.kind(),
            Self::Model(e) => e.kind(),
            Self::Analysis(e) => e.kind(),
            Self::Io { .. } => "IoError",
        }
    }

    /// Module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            Self::Tensor(_) => "core_tensor",
            Self::Prompt(_) => "prompt_model",
            Self::Sketch(_) => "sketch_layout",
            Self::Mask(_) => "mask_builder",
            Self::Tune(_) => "ast_tuner",
            Self::Schedule(_) => "hslw_scheduler",
            Self::Model(_) => "mini_dit",
            Self::Analysis(_) => "analysis",
            Self::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
