//! Stochastic view generation: crop, resize, flip, color distortion, blur.
//!
//! Images are `(3, height, width)` tensors with values in `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geo_raster::{GeoRaster, Rect};
use crate::oversegment::smooth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Range of the crop area as a fraction of the image area.
    pub crop_scale: (f64, f64),
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Additive brightness shift drawn from `[-b, b]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - c, 1 + c]`.
    pub contrast: f64,
    /// Saturation factor drawn from `[1 - s, 1 + s]`.
    pub saturation: f64,
    /// Per-channel multiplicative factor drawn from `[1 - j, 1 + j]`.
    pub channel_jitter: f64,
    /// Probability of collapsing a view to gray after the color jitter.
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub output_side: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            crop_scale: (0.2, 1.0),
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            channel_jitter: 0.2,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 1.5),
            output_side: 32,
        }
    }
}

impl AugmentSpec {
    /// Every stochastic step disabled: views are the resized input.
    pub fn identity(output_side: usize) -> Self {
        AugmentSpec {
            crop_scale: (1.0, 1.0),
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            channel_jitter: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            blur_sigma: (0.1, 0.1),
            output_side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("vflip_prob", self.vflip_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur_prob", self.blur_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop scale ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("channel_jitter", self.channel_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        let (s0, s1) = self.blur_sigma;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad(format!("blur sigma range ({s0}, {s1}) invalid"));
        }
        if self.output_side < 8 {
            return bad(format!("output side {} < 8", self.output_side));
        }
        Ok(())
    }
}

/// One draw of the transform chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewParams {
    pub crop: Rect,
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub channel: [f64; 3],
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
}

fn symmetric<R: Rng>(rng: &mut R, r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        rng.random_range(-r..=r)
    }
}

fn check_image(img: &Tensor, side: usize) -> Result<(usize, usize)> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch(format!("expected (3, h, w) image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    if h.min(w) < side {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            required: side,
        });
    }
    Ok((h, w))
}

pub fn draw_view_params<R: Rng>(rng: &mut R, height: usize, width: usize, spec: &AugmentSpec) -> ViewParams {
    let (lo, hi) = spec.crop_scale;
    let scale = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let side = ((scale * (height * width) as f64).sqrt().round() as usize).clamp(1, height.min(width));
    let col0 = rng.random_range(0..=width - side);
    let row0 = rng.random_range(0..=height - side);
    let hflip = rng.random_bool(spec.hflip_prob);
    let vflip = rng.random_bool(spec.vflip_prob);
    let brightness = symmetric(rng, spec.brightness);
    let contrast = 1.0 + symmetric(rng, spec.contrast);
    let saturation = 1.0 + symmetric(rng, spec.saturation);
    let channel = [
        1.0 + symmetric(rng, spec.channel_jitter),
        1.0 + symmetric(rng, spec.channel_jitter),
        1.0 + symmetric(rng, spec.channel_jitter),
    ];
    let grayscale = rng.random_bool(spec.grayscale_prob);
    let blur_sigma = rng
        .random_bool(spec.blur_prob)
        .then(|| rng.random_range(spec.blur_sigma.0..=spec.blur_sigma.1));
    ViewParams {
        crop: Rect::new(col0, row0, side, side),
        hflip,
        vflip,
        brightness,
        contrast,
        saturation,
        channel,
        grayscale,
        blur_sigma,
    }
}

/// Bilinear resample of a `(c, h, w)` window to `(c, side, side)` with
/// half-pixel centers; an equal-size window is copied exactly.
pub fn crop_resize(img: &Tensor, crop: &Rect, side: usize) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let channels = img.shape()[0];
    let data = img.data();
    let sy = crop.height as f64 / side as f64;
    let sx = crop.width as f64 / side as f64;
    let coord = |dst: usize, scale: f64, len: usize| {
        let v = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = v.floor() as usize;
        (i0, (i0 + 1).min(len - 1), v - i0 as f64)
    };
    let mut out = vec![0.0; channels * side * side];
    for y in 0..side {
        let (y0, y1, fy) = coord(y, sy, crop.height);
        for x in 0..side {
            let (x0, x1, fx) = coord(x, sx, crop.width);
            for c in 0..channels {
                let at = |r: usize, q: usize| data[(c * h + crop.row0 + r) * w + crop.col0 + q];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(c * side + y) * side + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(vec![channels, side, side], out).expect("sized")
}

pub fn apply_view(img: &Tensor, p: &ViewParams, side: usize) -> Tensor {
    let mut v = crop_resize(img, &p.crop, side);
    let area = side * side;
    let d = v.data_mut();
    if p.hflip {
        for row in d.chunks_exact_mut(side) {
            row.reverse();
        }
    }
    if p.vflip {
        for plane in d.chunks_exact_mut(area) {
            for y in 0..side / 2 {
                for x in 0..side {
                    plane.swap(y * side + x, (side - 1 - y) * side + x);
                }
            }
        }
    }
    let neutral = p.saturation == 1.0 && p.contrast == 1.0 && p.brightness == 0.0 && p.channel == [1.0; 3] && !p.grayscale;
    if !neutral {
        color_distort(d, area, p);
    }
    if let Some(sigma) = p.blur_sigma {
        for plane in d.chunks_exact_mut(area) {
            let blurred = smooth(plane, side, side, 1, sigma);
            plane.copy_from_slice(&blurred);
        }
    }
    v
}

fn color_distort(d: &mut [f64], area: usize, p: &ViewParams) {
    let gray: Vec<f64> = (0..area)
        .map(|i| 0.299 * d[i] + 0.587 * d[area + i] + 0.114 * d[2 * area + i])
        .collect();
    let mean = gray.iter().sum::<f64>() / area as f64;
    for c in 0..3 {
        for i in 0..area {
            let x = &mut d[c * area + i];
            let mut val = gray[i] + p.saturation * (*x - gray[i]);
            val = mean + p.contrast * (val - mean);
            val = (val + p.brightness) * p.channel[c];
            *x = val.clamp(0.0, 1.0);
        }
    }
    if p.grayscale {
        for i in 0..area {
            let g = 0.299 * d[i] + 0.587 * d[area + i] + 0.114 * d[2 * area + i];
            for c in 0..3 {
                d[c * area + i] = g;
            }
        }
    }
}

/// Two independent draws of the transform chain.
pub fn augment_pair<R: Rng>(img: &Tensor, spec: &AugmentSpec, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let (h, w) = check_image(img, spec.output_side)?;
    let p1 = draw_view_params(rng, h, w, spec);
    let p2 = draw_view_params(rng, h, w, spec);
    Ok((apply_view(img, &p1, spec.output_side), apply_view(img, &p2, spec.output_side)))
}

/// Deterministic evaluation view: the centered square of the short side resized to `side`.
pub fn center_view(img: &Tensor, side: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch(format!("expected (3, h, w) image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    if h == 0 || w == 0 {
        return Err(Error::ImageTooSmall { width: w, height: h, required: 1 });
    }
    let m = h.min(w);
    Ok(crop_resize(img, &Rect::new((w - m) / 2, (h - m) / 2, m, m), side))
}

/// A raster window as a `(3, h, w)` tensor scaled to `[0, 1]`. Single-band
/// rasters are replicated across channels; extra bands beyond three are dropped.
pub fn raster_tensor(raster: &GeoRaster, window: &Rect) -> Result<Tensor> {
    raster.check_window(window)?;
    let (w, h) = (window.width, window.height);
    let bands = raster.bands();
    let mut data = vec![0.0; 3 * w * h];
    for c in 0..3 {
        let band = if bands >= 3 { c } else { 0 };
        for r in 0..h {
            for q in 0..w {
                data[(c * h + r) * w + q] = raster.get(window.col0 + q, window.row0 + r, band) as f64 / 255.0;
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![3, h, w], (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identity_chain_returns_resized_input() {
        let img = image(16, 16, 1);
        let spec = AugmentSpec::identity(16);
        let (a, b) = augment_pair(&img, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a, img);
        assert_eq!(b, img);
        let spec = AugmentSpec::identity(8);
        let (a, _) = augment_pair(&img, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a, crop_resize(&img, &Rect::full(16, 16), 8));
    }

    #[test]
    fn fixed_seed_reproduces_views() {
        let img = image(24, 20, 2);
        let spec = AugmentSpec { output_side: 16, ..Default::default() };
        let a = augment_pair(&img, &spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = augment_pair(&img, &spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, a.1);
        for v in a.0.data().iter().chain(a.1.data()) {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn flip_rate_within_three_sigma() {
        let spec = AugmentSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let flips = (0..1000)
            .filter(|_| draw_view_params(&mut rng, 32, 32, &spec).hflip)
            .count();
        assert!((450..=550).contains(&flips), "{flips}");
    }

    #[test]
    fn too_small_image_rejected() {
        let img = image(10, 40, 0);
        let spec = AugmentSpec { output_side: 16, ..Default::default() };
        assert!(matches!(
            augment_pair(&img, &spec, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn flips_are_mirrors() {
        let img = image(8, 8, 3);
        let mut p = draw_view_params(&mut ChaCha8Rng::seed_from_u64(0), 8, 8, &AugmentSpec::identity(8));
        p.hflip = true;
        let v = apply_view(&img, &p, 8);
        assert_eq!(v.data()[0], img.data()[7]);
        p.hflip = false;
        p.vflip = true;
        let v = apply_view(&img, &p, 8);
        assert_eq!(v.data()[0], img.data()[56]);
    }

    #[test]
    fn spec_validation() {
        assert!(AugmentSpec::default().validate().is_ok());
        assert!(AugmentSpec { hflip_prob: 1.5, ..Default::default() }.validate().is_err());
        assert!(AugmentSpec { crop_scale: (0.0, 1.0), ..Default::default() }.validate().is_err());
        assert!(AugmentSpec { output_side: 4, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn center_view_of_wide_image() {
        let img = image(8, 12, 4);
        let v = center_view(&img, 8).unwrap();
        assert_eq!(v.data()[0], img.data()[2]);
    }
}
