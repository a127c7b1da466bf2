use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("malformed world file {path}: {reason}")]
    MalformedWorldFile { path: PathBuf, reason: String },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("affine transform is singular (determinant {0})")]
    SingularTransform(f64),
    #[error("geo coordinate ({x}, {y}) falls outside the raster")]
    OutOfBounds { x: f64, y: f64 },
    #[error("window {col0},{row0} {width}x{height} does not fit a {raster_width}x{raster_height} raster")]
    WindowOutOfBounds {
        col0: usize,
        row0: usize,
        width: usize,
        height: usize,
        raster_width: usize,
        raster_height: usize,
    },
    #[error("class id {id} is not below the class count {num_classes}")]
    UnknownClassId { id: u8, num_classes: usize },
    #[error("raster CRS mismatch: {0:?} vs {1:?}")]
    CrsMismatch(String, String),
    #[error("rasters do not overlap")]
    NoOverlap,

    #[error("patch is empty")]
    EmptyPatch,
    #[error("parameter {name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("histogram is not a probability vector: {0}")]
    InvalidHistogram(String),

    #[error("malformed OSM XML at byte {position}: {reason}")]
    MalformedXml { position: u64, reason: String },
    #[error("unsupported OSM version {0:?}")]
    UnsupportedVersion(String),
    #[error("rule table line {line}: {reason}")]
    MalformedRule { line: usize, reason: String },
    #[error("unknown scene category {0:?}")]
    UnknownCategory(String),

    #[error("manifests share categories: {0:?}")]
    TaxonomyOverlap(Vec<String>),
    #[error("natural class {0:?} has no samples")]
    EmptyNaturalClass(String),
    #[error("malformed manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFiniteActivation(&'static str),
    #[error("embedding row {0} has zero norm")]
    ZeroNormEmbedding(usize),
    #[error("image {width}x{height} is too small for {required}px views")]
    ImageTooSmall { width: usize, height: usize, required: usize },
    #[error("need at least {required} training images, got {available}")]
    InsufficientData { required: usize, available: usize },
    #[error("invalid freeze spec: {0}")]
    InvalidFreezeSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("class {class} has {available} samples, {required} shots requested")]
    InsufficientShots { class: usize, available: usize, required: usize },
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("missing checkpoint for init {0:?}")]
    MissingCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
