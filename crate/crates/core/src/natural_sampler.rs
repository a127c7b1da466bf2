//! Land-cover guided sampling of natural scenes.
//!
//! Candidate windows from selective search are scored by how strongly a single
//! land-cover class dominates them; homogeneous windows become samples labelled
//! with their dominant class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_raster::{class_counts, ClassHistogram, GeoRaster, Rect, NATURAL_CLASSES};
use crate::region_proposal::{selective_search, ProposalParams};
use crate::taxonomy::{Sample, SceneCategory};

/// `sum_c p_c ln p_c` with `0 ln 0 = 0`. Zero for one-hot histograms,
/// `ln(1/C)` for uniform ones.
pub fn homogeneity_score(p: &[f64]) -> Result<f64> {
    let h = ClassHistogram::new(p.to_vec())?;
    Ok(h
        .fractions()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum())
}

/// Keeps a candidate when the geometric-mean class probability `exp(S)`
/// reaches `threshold`.
pub fn keep_candidate(score: f64, threshold: f64) -> bool {
    score.exp() >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaturalParams {
    pub proposals: ProposalParams,
    /// Homogeneity threshold on `exp(S)`, in `(0, 1]`.
    pub threshold: f64,
    /// Images larger than this are segmented tile by tile.
    pub max_tile: usize,
}

impl Default for NaturalParams {
    fn default() -> Self {
        NaturalParams {
            proposals: ProposalParams::default(),
            threshold: 0.2,
            max_tile: 600,
        }
    }
}

impl NaturalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "homogeneity threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.max_tile == 0 {
            return Err(Error::InvalidConfig("max_tile must be positive".into()));
        }
        self.proposals.segment.validate()
    }
}

/// Tiles of at most `max_tile` pixels per side covering a `width x height` grid.
pub fn tiles(width: usize, height: usize, max_tile: usize) -> Vec<Rect> {
    let mut out = Vec::new();
    for row0 in (0..height).step_by(max_tile) {
        for col0 in (0..width).step_by(max_tile) {
            out.push(Rect::new(
                col0,
                row0,
                max_tile.min(width - col0),
                max_tile.min(height - row0),
            ));
        }
    }
    out
}

/// Candidate windows of `image`, proposed tile by tile.
pub fn propose(image: &GeoRaster, params: &NaturalParams) -> Result<Vec<Rect>> {
    let mut rects = Vec::new();
    for tile in tiles(image.width(), image.height(), params.max_tile) {
        let patch = image.window(&tile)?;
        rects.extend(
            selective_search(&patch, &params.proposals)?
                .into_iter()
                .map(|r| r.offset(tile.col0, tile.row0)),
        );
    }
    Ok(rects)
}

/// Scores one candidate against an aligned land-cover raster. Returns the
/// sample when it passes the threshold; windows touching uncovered pixels are
/// skipped.
pub fn score_candidate(
    image_id: &str,
    aligned: &GeoRaster,
    window: Rect,
    threshold: f64,
) -> Result<Option<Sample>> {
    let Some(counts) = class_counts(aligned, &window, NATURAL_CLASSES)? else {
        return Ok(None);
    };
    let hist = ClassHistogram::from_counts(&counts)?;
    let score = homogeneity_score(hist.fractions())?;
    if !keep_candidate(score, threshold) {
        return Ok(None);
    }
    Ok(Some(Sample {
        image_id: image_id.to_string(),
        window,
        label: SceneCategory::natural(hist.argmax()).expect("natural class id"),
        score: Some(score),
    }))
}

/// Natural-scene samples of one image guided by a land-cover raster whose
/// values are natural class ids (255 = no data).
pub fn sample_natural(
    image_id: &str,
    image: &GeoRaster,
    landcover: &GeoRaster,
    params: &NaturalParams,
) -> Result<Vec<Sample>> {
    params.validate()?;
    let aligned = image.align(landcover)?;
    let mut samples = Vec::new();
    for window in propose(image, params)? {
        if let Some(s) = score_candidate(image_id, &aligned, window, params.threshold)? {
            samples.push(s);
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_raster::GeoTransform;

    #[test]
    fn one_hot_scores_zero() {
        let mut p = vec![0.0; 9];
        p[4] = 1.0;
        assert_eq!(homogeneity_score(&p).unwrap(), 0.0);
    }

    #[test]
    fn uniform_scores_log_inverse_class_count() {
        let s = homogeneity_score(&[1.0 / 9.0; 9]).unwrap();
        assert!((s - (1.0f64 / 9.0).ln()).abs() < 1e-12);
        assert!((s + 2.1972).abs() < 1e-4);
    }

    #[test]
    fn ninety_ten_split() {
        let mut p = vec![0.0; 9];
        p[0] = 0.9;
        p[1] = 0.1;
        let s = homogeneity_score(&p).unwrap();
        let direct = 0.9 * 0.9f64.ln() + 0.1 * 0.1f64.ln();
        assert!((s - direct).abs() < 1e-15);
        assert!((s + 0.3251).abs() < 1e-4);
        assert!(keep_candidate(s, 0.2));
        assert!((s.exp() - 0.722).abs() < 1e-3);
    }

    #[test]
    fn threshold_decisions() {
        assert!(keep_candidate(0.0, 0.2));
        assert!(!keep_candidate((1.0f64 / 9.0).ln(), 0.2));
    }

    #[test]
    fn invalid_histogram_rejected() {
        assert!(matches!(homogeneity_score(&[0.5, 0.4]), Err(Error::InvalidHistogram(_))));
        assert!(matches!(homogeneity_score(&[]), Err(Error::InvalidHistogram(_))));
    }

    #[test]
    fn tiles_cover_grid() {
        let t = tiles(1300, 500, 600);
        assert_eq!(t.len(), 3);
        assert_eq!(t[2], Rect::new(1200, 0, 100, 500));
        assert_eq!(t.iter().map(Rect::area).sum::<usize>(), 1300 * 500);
    }

    #[test]
    fn all_water_landcover_labels_everything_water() {
        let mut data = Vec::new();
        for row in 0..64usize {
            for col in 0..64usize {
                let v = if (col / 16 + row / 16) % 2 == 0 { 30 } else { 200 };
                data.extend_from_slice(&[v, v / 2, 255 - v]);
            }
        }
        let image = GeoRaster::new(64, 64, 3, data, GeoTransform::IDENTITY).unwrap();
        let lc = GeoRaster::new(8, 8, 1, vec![5; 64], GeoTransform::north_up(0.0, 0.0, 8.0, -8.0)).unwrap();
        let params = NaturalParams {
            proposals: ProposalParams { min_side: 8, ..Default::default() },
            ..Default::default()
        };
        let samples = sample_natural("w", &image, &lc, &params).unwrap();
        assert!(!samples.is_empty());
        for s in samples {
            assert_eq!(s.label.name(), "Water");
            assert_eq!(s.score, Some(0.0));
        }
    }

    #[test]
    fn disjoint_rasters_rejected() {
        let image = GeoRaster::new(8, 8, 3, vec![0; 192], GeoTransform::IDENTITY).unwrap();
        let lc = GeoRaster::new(8, 8, 1, vec![0; 64], GeoTransform::north_up(500.0, 500.0, 1.0, -1.0)).unwrap();
        assert!(matches!(
            sample_natural("x", &image, &lc, &NaturalParams::default()),
            Err(Error::NoOverlap)
        ));
    }

    #[test]
    fn bad_threshold_rejected() {
        let params = NaturalParams { threshold: 0.0, ..Default::default() };
        assert!(params.validate().is_err());
    }
}
