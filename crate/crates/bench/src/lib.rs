//! Benchmark inputs shared by the criterion targets.

use tov_core::synth::specialized_mosaic;
use tov_core::GeoRaster;

/// The 8-class toy mosaic with `tiles_per_class` 32-pixel tiles per class.
pub fn mosaic_patch(tiles_per_class: usize) -> GeoRaster {
    specialized_mosaic(tiles_per_class, 32, 7).expect("mosaic").raster
}
