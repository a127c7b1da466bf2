//! Sampling and pretraining pipeline for remote-sensing scene representations.
//!
//! Natural scenes are sampled from imagery guided by land-cover rasters,
//! man-made scenes by OpenStreetMap tags. The union is rebalanced per class and
//! used for two-stage contrastive pretraining, then evaluated by few-shot
//! linear probing.

pub mod ablation;
pub mod error;
pub mod geo_raster;
pub mod natural_sampler;
pub mod osm;
pub mod oversegment;
pub mod probe;
pub mod region_proposal;
pub mod resampler;
pub mod ssl;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
pub use geo_raster::{GeoRaster, GeoTransform, Rect};
pub use resampler::DatasetManifest;
pub use taxonomy::{Sample, SceneCategory, SourceKind};
