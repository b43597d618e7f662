use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Spatial axis named in divisibility errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Height => "height",
            Axis::Width => "width",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{axis} {size} is not divisible by folding factor {alpha}")]
    NotDivisible { axis: Axis, size: usize, alpha: usize },

    #[error("channel count {channels} is not divisible by alpha^2 = {}", alpha * alpha)]
    ChannelsNotDivisible { channels: usize, alpha: usize },

    #[error("kernel {axis} {size} is not divisible by folding factor {alpha}")]
    KernelNotDivisible { axis: Axis, size: usize, alpha: usize },

    #[error("folding factor must be at least 1")]
    ZeroAlpha,

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("spatial mismatch: {a_h}x{a_w} vs {b_h}x{b_w}")]
    SpatialMismatch { a_h: usize, a_w: usize, b_h: usize, b_w: usize },

    #[error("non-integral output {axis}: ({size} + 2*{padding} - {kernel}) is not a multiple of stride {stride}")]
    NonIntegralOutput { axis: Axis, size: usize, padding: usize, kernel: usize, stride: usize },

    #[error("output {axis} would be {size}, must be positive")]
    NonPositiveOutput { axis: Axis, size: i64 },

    #[error("element mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("batchnorm: {0}")]
    BatchNorm(String),

    #[error("layer `{layer}`: {reason}")]
    Layer { layer: String, reason: String },

    #[error("graph: {0}")]
    Graph(String),

    #[error("weight binding: {0}")]
    WeightBinding(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("image {width}x{height} is smaller than crop {crop_w}x{crop_h}")]
    ImageTooSmall { width: usize, height: usize, crop_w: usize, crop_h: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn layer(layer: &str, err: impl fmt::Display) -> Self {
        Error::Layer { layer: layer.to_string(), reason: err.to_string() }
    }

    /// True for the folding divisibility family of errors.
    pub fn is_divisibility(&self) -> bool {
        matches!(
            self,
            Error::NotDivisible { .. } | Error::ChannelsNotDivisible { .. } | Error::KernelNotDivisible { .. }
        )
    }
}
