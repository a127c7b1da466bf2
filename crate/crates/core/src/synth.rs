//! Procedural two-domain toy benchmark.
//!
//! The general domain is a corpus of random gratings, edges and blobs. The
//! specialized domain is a mosaic raster of square tiles, each filled with one
//! of eight structural patterns. Every pattern class is closed under
//! horizontal and vertical flips. Colors are drawn at random per tile, so
//! color carries no class information.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geo_raster::{GeoRaster, GeoTransform, Rect};
use crate::resampler::DatasetManifest;
use crate::ssl::augment::{raster_tensor, AugmentSpec};
use crate::ssl::model::ModelConfig;
use crate::ssl::train::TrainConfig;
use crate::ssl::tensor::Tensor;
use crate::ssl::train::derive_seed;
use crate::taxonomy::{Sample, SceneCategory};
use crate::error::Result;

pub const TOY_CLASSES: usize = 8;

pub const PATTERN_NAMES: [&str; TOY_CLASSES] = [
    "horizontal stripes",
    "vertical stripes",
    "checkerboard",
    "cross-hatch",
    "dots",
    "speckle",
    "blobs",
    "rings",
];

/// Scene categories standing in for the pattern classes: four natural, four man-made.
pub const TOY_CATEGORIES: [&str; TOY_CLASSES] = [
    "Forest", "Grassland", "Cropland", "Water", "Airport", "Parking", "School", "Harbor",
];

pub fn toy_category(class: usize) -> SceneCategory {
    SceneCategory::from_name(TOY_CATEGORIES[class]).expect("known category")
}

pub fn toy_class(category: SceneCategory) -> Option<usize> {
    TOY_CATEGORIES.iter().position(|n| *n == category.name())
}

fn color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn luminance(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Two random colors with a clear luminance difference.
fn palette<R: Rng>(rng: &mut R) -> ([f64; 3], [f64; 3]) {
    loop {
        let (a, b) = (color(rng), color(rng));
        if (luminance(&a) - luminance(&b)).abs() >= 0.25 {
            return (a, b);
        }
    }
}

/// Renders a `side x side` mask in `[0, 1]` for a pattern class.
fn pattern_mask<R: Rng>(class: usize, side: usize, rng: &mut R) -> Vec<f64> {
    let period = rng.random_range(4..=9) as f64;
    let phase = rng.random_range(0.0..period);
    let phase2 = rng.random_range(0.0..period);
    let s = side as f64;
    let mut mask = vec![0.0; side * side];
    let on = |v: f64, width: f64| ((v + phase).rem_euclid(period) < width) as u8 as f64;
    match class {
        0 | 1 => {
            for y in 0..side {
                for x in 0..side {
                    let v = if class == 0 { y } else { x } as f64;
                    mask[y * side + x] = on(v, period / 2.0);
                }
            }
        }
        2 => {
            let cell = (period / 2.0).round().max(2.0);
            for y in 0..side {
                for x in 0..side {
                    let cx = ((x as f64 + phase) / cell).floor() as i64;
                    let cy = ((y as f64 + phase2) / cell).floor() as i64;
                    mask[y * side + x] = ((cx + cy).rem_euclid(2)) as f64;
                }
            }
        }
        3 => {
            for y in 0..side {
                for x in 0..side {
                    let (fx, fy) = (x as f64, y as f64);
                    let a = (fx + fy + phase).rem_euclid(period) < 1.5;
                    let b = (fx - fy + phase2).rem_euclid(period) < 1.5;
                    mask[y * side + x] = (a || b) as u8 as f64;
                }
            }
        }
        4 => {
            let r = rng.random_range(0.2..0.35) * period;
            for y in 0..side {
                for x in 0..side {
                    let dx = (x as f64 + phase).rem_euclid(period) - period / 2.0;
                    let dy = (y as f64 + phase2).rem_euclid(period) - period / 2.0;
                    mask[y * side + x] = (dx * dx + dy * dy <= r * r) as u8 as f64;
                }
            }
        }
        5 => {
            for v in mask.iter_mut() {
                *v = rng.random_bool(0.5) as u8 as f64;
            }
        }
        6 => {
            let n = rng.random_range(3..=6);
            let blobs: Vec<(f64, f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(0.12..0.25) * s))
                .collect();
            for y in 0..side {
                for x in 0..side {
                    let field: f64 = blobs
                        .iter()
                        .map(|&(cx, cy, r)| {
                            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                            (-d2 / (2.0 * r * r)).exp()
                        })
                        .sum();
                    mask[y * side + x] = (field > 0.5) as u8 as f64;
                }
            }
        }
        _ => {
            let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            for y in 0..side {
                for x in 0..side {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    mask[y * side + x] = on(d, period / 2.0);
                }
            }
        }
    }
    mask
}

/// Blends two colors through a mask and adds pixel noise; channel-planar output.
fn colorize<R: Rng>(mask: &[f64], a: [f64; 3], b: [f64; 3], noise: f64, rng: &mut R) -> Vec<f64> {
    let n = mask.len();
    let normal = Normal::new(0.0, noise.max(1e-12)).expect("valid std");
    let mut out = vec![0.0; 3 * n];
    for c in 0..3 {
        for i in 0..n {
            let v = a[c] * mask[i] + b[c] * (1.0 - mask[i]) + normal.sample(rng);
            out[c * n + i] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// One pattern tile as a `(3, side, side)` tensor.
pub fn pattern_tile<R: Rng>(class: usize, side: usize, rng: &mut R) -> Tensor {
    let mask = pattern_mask(class % TOY_CLASSES, side, rng);
    let (a, b) = palette(rng);
    Tensor::new(vec![3, side, side], colorize(&mask, a, b, 0.03, rng)).expect("sized")
}

/// One general-domain image: a random grating, edge or blob field.
pub fn general_image<R: Rng>(side: usize, rng: &mut R) -> Tensor {
    let s = side as f64;
    let mut mask = vec![0.0; side * side];
    let kind = rng.random_range(0..3);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (ct, st) = (theta.cos(), theta.sin());
    let freq = rng.random_range(0.15..1.2);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let offset = rng.random_range(-0.3..0.3) * s;
    let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(2..=5))
        .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(0.08..0.3) * s))
        .collect();
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64 - s / 2.0, y as f64 - s / 2.0);
            let u = fx * ct + fy * st;
            mask[y * side + x] = match kind {
                0 => 0.5 + 0.5 * (freq * u + phase).sin(),
                1 => 1.0 / (1.0 + (-(u - offset) / 1.5).exp()),
                _ => blobs
                    .iter()
                    .map(|&(cx, cy, r)| (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * r * r)).exp())
                    .sum::<f64>()
                    .min(1.0),
            };
        }
    }
    let (a, b) = palette(rng);
    Tensor::new(vec![3, side, side], colorize(&mask, a, b, 0.05, rng)).expect("sized")
}

pub fn general_corpus(n: usize, side: usize, seed: u64) -> Vec<Tensor> {
    (0..n)
        .map(|i| general_image(side, &mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64, 0x6E]))))
        .collect()
}

/// A raster of pattern tiles laid out row-major, `cols` tiles per row.
#[derive(Debug, Clone)]
pub struct Mosaic {
    pub raster: GeoRaster,
    pub tiles: Vec<(Rect, usize)>,
}

impl Mosaic {
    /// Renders one tile per entry of `classes`.
    pub fn new(classes: &[usize], tile_side: usize, cols: usize, seed: u64) -> Result<Self> {
        let cols = cols.max(1);
        let rows = classes.len().div_ceil(cols).max(1);
        let (w, h) = (cols * tile_side, rows * tile_side);
        let mut data = vec![0u8; w * h * 3];
        let mut tiles = Vec::with_capacity(classes.len());
        for (i, &class) in classes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64, 0x7E]));
            let t = pattern_tile(class, tile_side, &mut rng);
            let rect = Rect::new((i % cols) * tile_side, (i / cols) * tile_side, tile_side, tile_side);
            let area = tile_side * tile_side;
            for r in 0..tile_side {
                for c in 0..tile_side {
                    for band in 0..3 {
                        let v = t.data()[band * area + r * tile_side + c];
                        data[((rect.row0 + r) * w + rect.col0 + c) * 3 + band] = (v * 255.0).round() as u8;
                    }
                }
            }
            tiles.push((rect, class));
        }
        let raster = GeoRaster::new(w, h, 3, data, GeoTransform::IDENTITY)?;
        Ok(Mosaic { raster, tiles })
    }

    /// `per_class[c]` tiles of class `c`, interleaved by a seeded shuffle.
    pub fn with_counts(per_class: &[usize], tile_side: usize, cols: usize, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        let mut classes: Vec<usize> = per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        classes.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x5F])));
        Self::new(&classes, tile_side, cols, seed)
    }

    pub fn tensors(&self) -> Result<Vec<Tensor>> {
        self.tiles.iter().map(|(r, _)| raster_tensor(&self.raster, r)).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.tiles.iter().map(|(_, c)| *c).collect()
    }

    /// Every tile as a manifest record labelled with its stand-in category.
    pub fn manifest(&self, image_id: &str, dataset: &str, seed: u64) -> DatasetManifest {
        let records = self
            .tiles
            .iter()
            .map(|(r, c)| Sample {
                image_id: image_id.to_string(),
                window: *r,
                label: toy_category(*c),
                score: None,
            })
            .collect();
        DatasetManifest::from_samples(dataset, seed, records)
    }
}

/// Three-block encoder sized for the 32x32 toy tiles.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        channels: vec![8, 16, 32],
        embed_dim: 32,
        head_hidden: 32,
        proj_dim: 16,
        input_side: 32,
        ..Default::default()
    }
}

/// Default augmentations with stronger color distortion, since tile colors
/// are pure nuisance here.
pub fn toy_augment() -> AugmentSpec {
    AugmentSpec {
        output_side: 32,
        crop_scale: (0.4, 1.0),
        brightness: 0.4,
        contrast: 0.5,
        saturation: 0.8,
        channel_jitter: 0.8,
        grayscale_prob: 0.3,
        blur_prob: 0.2,
        blur_sigma: (0.1, 0.8),
        ..Default::default()
    }
}

pub fn toy_train(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        epochs,
        base_lr: 1e-3,
        seed,
        ..Default::default()
    }
}

/// A balanced labelled mosaic: `per_class` tiles of each pattern.
pub fn specialized_mosaic(per_class: usize, tile_side: usize, seed: u64) -> Result<Mosaic> {
    Mosaic::with_counts(&[per_class; TOY_CLASSES], tile_side, 16, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_are_deterministic_and_in_range() {
        let a = Mosaic::with_counts(&[2; TOY_CLASSES], 16, 4, 3).unwrap();
        let b = Mosaic::with_counts(&[2; TOY_CLASSES], 16, 4, 3).unwrap();
        assert_eq!(a.raster, b.raster);
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.tiles.len(), 16);
        for t in a.tensors().unwrap() {
            assert_eq!(t.shape(), &[3, 16, 16]);
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn class_counts_respected() {
        let m = Mosaic::with_counts(&[3, 0, 1, 0, 0, 0, 0, 2], 8, 3, 0).unwrap();
        let labels = m.labels();
        assert_eq!(labels.iter().filter(|&&c| c == 0).count(), 3);
        assert_eq!(labels.iter().filter(|&&c| c == 7).count(), 2);
        assert_eq!(labels.len(), 6);
    }

    #[test]
    fn manifest_uses_stand_in_categories() {
        let m = Mosaic::with_counts(&[1; TOY_CLASSES], 8, 4, 0).unwrap();
        let man = m.manifest("toy.png", "toy", 0);
        assert_eq!(man.taxonomy.len(), TOY_CLASSES);
        for s in &man.records {
            assert_eq!(toy_class(s.label), Some(m.tiles.iter().find(|(r, _)| *r == s.window).unwrap().1));
        }
    }

    #[test]
    fn general_corpus_deterministic() {
        assert_eq!(general_corpus(3, 16, 1), general_corpus(3, 16, 1));
        assert_ne!(general_corpus(1, 16, 1), general_corpus(1, 16, 2));
    }
}
