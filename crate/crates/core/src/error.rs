use std::path::PathBuf;

/// Errors raised anywhere in the translation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error at {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing annotation file for image '{image_id}'")]
    MissingAnnotation { image_id: String },

    #[error("invalid record '{image_id}': {message}")]
    InvalidRecord { image_id: String, message: String },

    #[error("duplicate image id '{0}' in manifest")]
    DuplicateImageId(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("schedule error: timestep {t} outside [0, {t_max}]")]
    Schedule { t: usize, t_max: usize },

    #[error("ill-conditioned timestep {t}: signal coefficient {alpha:e} below 1e-6")]
    IllConditioned { t: usize, alpha: f64 },

    #[error("non-finite latent produced at step t={t}")]
    NonFinite { t: usize },

    #[error("step alignment error: no style latent at timestep {0}")]
    StepAlignment(usize),

    #[error("index {index} out of bounds for {len} instances")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("degenerate box {index}: {width_px}x{height_px} px after denormalization")]
    DegenerateBox {
        index: usize,
        width_px: usize,
        height_px: usize,
    },

    #[error("degenerate mean embedding: the real embeddings sum to zero")]
    DegenerateMean,

    #[error("degenerate prototype: weighted sum of mean and anchor is zero")]
    DegeneratePrototype,

    #[error("sample-size error: need at least {needed} samples, got {got}")]
    SampleSize { needed: usize, got: usize },

    #[error("empty patch set: no instance crops in '{0}'")]
    EmptyPatchSet(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("image id collision across manifests: {0:?}")]
    Collision(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("plugin '{name}': {message}")]
    Plugin { name: String, message: String },

    #[error("eraser failed: {0}")]
    Eraser(String),

    #[error("captioner failed: {0}")]
    Captioner(String),

    #[error("image '{image_id}': {source}")]
    Context {
        image_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the id of the image being processed.
    pub fn with_image(self, image_id: &str) -> Self {
        match self {
            Error::Context { .. } => self,
            other => Error::Context {
                image_id: image_id.to_string(),
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
