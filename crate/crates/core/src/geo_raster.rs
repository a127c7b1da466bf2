//! Georeferenced rasters: image I/O, world-file transforms, windowed reads and
//! land-cover alignment.
//!
//! Pixel `(col, row)` maps to planar coordinates through the affine transform
//!
//! ```text
//! x = origin_x + col * pixel_w + row * row_rot
//! y = origin_y + col * col_rot + row * pixel_h
//! ```
//!
//! where `(col, row) = (0, 0)` is the upper-left corner of the upper-left pixel.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Land-cover value written for image pixels that fall outside the land-cover raster.
pub const NODATA: u8 = 255;

/// Number of natural land-cover classes.
pub const NATURAL_CLASSES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub pixel_w: f64,
    pub row_rot: f64,
    pub origin_y: f64,
    pub col_rot: f64,
    pub pixel_h: f64,
}

impl Default for GeoTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl GeoTransform {
    /// Origin at (0, 0), unit pixels, y growing upward.
    pub const IDENTITY: GeoTransform = GeoTransform {
        origin_x: 0.0,
        pixel_w: 1.0,
        row_rot: 0.0,
        origin_y: 0.0,
        col_rot: 0.0,
        pixel_h: -1.0,
    };

    pub fn north_up(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64) -> Self {
        GeoTransform {
            origin_x,
            pixel_w,
            row_rot: 0.0,
            origin_y,
            col_rot: 0.0,
            pixel_h,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.pixel_w * self.pixel_h - self.row_rot * self.col_rot
    }

    /// Maps fractional pixel coordinates to planar coordinates.
    pub fn apply(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_w + row * self.row_rot,
            self.origin_y + col * self.col_rot + row * self.pixel_h,
        )
    }

    /// Fractional pixel coordinates of a planar point.
    pub fn invert(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularTransform(det));
        }
        let dx = x - self.origin_x;
        let dy = y - self.origin_y;
        let col = (self.pixel_h * dx - self.row_rot * dy) / det;
        let row = (self.pixel_w * dy - self.col_rot * dx) / det;
        Ok((col, row))
    }

    /// Transform of a sub-window whose upper-left pixel is `(col0, row0)`.
    pub fn shifted(&self, col0: usize, row0: usize) -> Self {
        let (origin_x, origin_y) = self.apply(col0 as f64, row0 as f64);
        GeoTransform {
            origin_x,
            origin_y,
            ..*self
        }
    }

    /// Parses the six lines of a world file: pixel_w, col_rot, row_rot,
    /// pixel_h, origin_x, origin_y.
    pub fn from_world_file(text: &str, path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::MalformedWorldFile {
            path: path.to_path_buf(),
            reason,
        };
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.len() != 6 {
            return Err(malformed(format!("expected 6 lines, found {}", lines.len())));
        }
        let mut v = [0.0f64; 6];
        for (slot, line) in v.iter_mut().zip(&lines) {
            *slot = line
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| malformed(format!("not a number: {line:?}")))?;
        }
        Ok(GeoTransform {
            pixel_w: v[0],
            col_rot: v[1],
            row_rot: v[2],
            pixel_h: v[3],
            origin_x: v[4],
            origin_y: v[5],
        })
    }

    pub fn to_world_file(&self) -> String {
        format!(
            "{}\n{}\n{}\n{}\n{}\n{}\n",
            self.pixel_w, self.col_rot, self.row_rot, self.pixel_h, self.origin_x, self.origin_y
        )
    }
}

/// Axis-aligned pixel window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(col0: usize, row0: usize, width: usize, height: usize) -> Self {
        debug_assert!(width >= 1 && height >= 1, "empty rect");
        Rect {
            col0,
            row0,
            width,
            height,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Rect::new(0, 0, width, height)
    }

    /// Exclusive right edge.
    pub fn col1(&self) -> usize {
        self.col0 + self.width
    }

    /// Exclusive bottom edge.
    pub fn row1(&self) -> usize {
        self.row0 + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn min_side(&self) -> usize {
        self.width.min(self.height)
    }

    pub fn max_side(&self) -> usize {
        self.width.max(self.height)
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.width >= 1 && self.height >= 1 && self.col1() <= width && self.row1() <= height
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        col >= self.col0 && col < self.col1() && row >= self.row0 && row < self.row1()
    }

    /// Smallest rect covering both.
    pub fn union(&self, other: &Rect) -> Rect {
        let col0 = self.col0.min(other.col0);
        let row0 = self.row0.min(other.row0);
        Rect::new(
            col0,
            row0,
            self.col1().max(other.col1()) - col0,
            self.row1().max(other.row1()) - row0,
        )
    }

    pub fn offset(&self, dc: usize, dr: usize) -> Rect {
        Rect::new(self.col0 + dc, self.row0 + dr, self.width, self.height)
    }
}

/// Fractions of pixels per class inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHistogram {
    p: Vec<f64>,
}

impl ClassHistogram {
    /// Validates that `p` is a probability vector.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidHistogram("no classes".into()));
        }
        if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidHistogram(format!("entry {bad} outside [0, 1]")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidHistogram(format!("entries sum to {total}")));
        }
        Ok(ClassHistogram { p })
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidHistogram("no pixels counted".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn fractions(&self) -> &[f64] {
        &self.p
    }

    pub fn num_classes(&self) -> usize {
        self.p.len()
    }

    /// Dominant class; ties go to the lowest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.p.iter().enumerate() {
            if v > self.p[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<u8>,
    pub transform: GeoTransform,
    pub crs_tag: String,
}

impl GeoRaster {
    pub const DEFAULT_CRS: &'static str = "local";

    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        data: Vec<u8>,
        transform: GeoTransform,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("empty raster {width}x{height}")));
        }
        if bands != 1 && bands != 3 {
            return Err(Error::InvalidRaster(format!("{bands} bands; only 1 or 3 supported")));
        }
        if data.len() != width * height * bands {
            return Err(Error::InvalidRaster(format!(
                "data length {} != {width}x{height}x{bands}",
                data.len()
            )));
        }
        if transform.pixel_w == 0.0 || transform.pixel_h == 0.0 {
            return Err(Error::InvalidRaster("zero pixel size".into()));
        }
        Ok(GeoRaster {
            width,
            height,
            bands,
            data,
            transform,
            crs_tag: Self::DEFAULT_CRS.to_string(),
        })
    }

    pub fn with_crs(mut self, crs_tag: impl Into<String>) -> Self {
        self.crs_tag = crs_tag.into();
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn full_rect(&self) -> Rect {
        Rect::full(self.width, self.height)
    }

    pub fn get(&self, col: usize, row: usize, band: usize) -> u8 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    /// Planar coordinates of the center of pixel `(col, row)`.
    pub fn pixel_to_geo(&self, col: usize, row: usize) -> (f64, f64) {
        self.transform.apply(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Pixel containing the planar point `(x, y)`.
    pub fn geo_to_pixel(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        let (c, r) = self.transform.invert(x, y)?;
        let (c, r) = (c.floor(), r.floor());
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return Err(Error::OutOfBounds { x, y });
        }
        Ok((c as usize, r as usize))
    }

    /// Planar bounding box `(min_x, min_y, max_x, max_y)` of the raster footprint.
    pub fn geo_bounds(&self) -> (f64, f64, f64, f64) {
        let corners = [
            self.transform.apply(0.0, 0.0),
            self.transform.apply(self.width as f64, 0.0),
            self.transform.apply(0.0, self.height as f64),
            self.transform.apply(self.width as f64, self.height as f64),
        ];
        corners.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        )
    }

    pub fn check_window(&self, window: &Rect) -> Result<()> {
        if window.fits_within(self.width, self.height) {
            Ok(())
        } else {
            Err(Error::WindowOutOfBounds {
                col0: window.col0,
                row0: window.row0,
                width: window.width,
                height: window.height,
                raster_width: self.width,
                raster_height: self.height,
            })
        }
    }

    /// Copies a window into a new raster with the matching transform.
    pub fn window(&self, window: &Rect) -> Result<GeoRaster> {
        self.check_window(window)?;
        let mut data = Vec::with_capacity(window.area() * self.bands);
        for row in window.row0..window.row1() {
            let start = (row * self.width + window.col0) * self.bands;
            data.extend_from_slice(&self.data[start..start + window.width * self.bands]);
        }
        Ok(GeoRaster {
            width: window.width,
            height: window.height,
            bands: self.bands,
            data,
            transform: self.transform.shifted(window.col0, window.row0),
            crs_tag: self.crs_tag.clone(),
        })
    }

    /// Resamples `landcover` into this raster's pixel grid by nearest neighbour.
    /// Pixels whose centers fall outside the land-cover raster become [`NODATA`].
    pub fn align(&self, landcover: &GeoRaster) -> Result<GeoRaster> {
        if landcover.bands != 1 {
            return Err(Error::InvalidRaster("land-cover raster must have one band".into()));
        }
        if self.crs_tag != landcover.crs_tag {
            return Err(Error::CrsMismatch(self.crs_tag.clone(), landcover.crs_tag.clone()));
        }
        if !self.overlaps(landcover) {
            return Err(Error::NoOverlap);
        }
        let mut data = vec![NODATA; self.width * self.height];
        for row in 0..self.height {
            for col in 0..self.width {
                let (x, y) = self.pixel_to_geo(col, row);
                match landcover.geo_to_pixel(x, y) {
                    Ok((c, r)) => data[row * self.width + col] = landcover.get(c, r, 0),
                    Err(Error::OutOfBounds { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(GeoRaster {
            width: self.width,
            height: self.height,
            bands: 1,
            data,
            transform: self.transform,
            crs_tag: self.crs_tag.clone(),
        })
    }

    /// True when the planar footprints intersect with positive area.
    pub fn overlaps(&self, other: &GeoRaster) -> bool {
        let (a0, b0, a1, b1) = self.geo_bounds();
        let (c0, d0, c1, d1) = other.geo_bounds();
        a0 < c1 && c0 < a1 && b0 < d1 && d0 < b1
    }
}

/// Class counts inside `window`; `None` when the window touches [`NODATA`].
pub fn class_counts(landcover: &GeoRaster, window: &Rect, num_classes: usize) -> Result<Option<Vec<usize>>> {
    if landcover.bands() != 1 {
        return Err(Error::InvalidRaster("land-cover raster must have one band".into()));
    }
    landcover.check_window(window)?;
    let mut counts = vec![0usize; num_classes];
    let mut nodata = false;
    for row in window.row0..window.row1() {
        let start = row * landcover.width() + window.col0;
        for &id in &landcover.data()[start..start + window.width] {
            if id == NODATA {
                nodata = true;
            } else if (id as usize) < num_classes {
                counts[id as usize] += 1;
            } else {
                return Err(Error::UnknownClassId { id, num_classes });
            }
        }
    }
    Ok(if nodata { None } else { Some(counts) })
}

/// Fraction of pixels of each class inside `window`.
pub fn class_histogram(landcover: &GeoRaster, window: &Rect, num_classes: usize) -> Result<ClassHistogram> {
    if landcover.bands() != 1 {
        return Err(Error::InvalidRaster("land-cover raster must have one band".into()));
    }
    landcover.check_window(window)?;
    let mut counts = vec![0usize; num_classes];
    for row in window.row0..window.row1() {
        let start = row * landcover.width() + window.col0;
        for &id in &landcover.data()[start..start + window.width] {
            if (id as usize) >= num_classes {
                return Err(Error::UnknownClassId { id, num_classes });
            }
            counts[id as usize] += 1;
        }
    }
    ClassHistogram::from_counts(&counts)
}

/// Decodes an image and applies the given world file, or the identity
/// transform when `sidecar` is `None`.
pub fn load_raster(path: &Path, sidecar: Option<&Path>) -> Result<GeoRaster> {
    let unreadable = |reason: String| Error::UnreadableImage {
        path: path.to_path_buf(),
        reason,
    };
    let img = image::open(path).map_err(|e| unreadable(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (bands, data) = match img.color() {
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16 => {
            (1, img.into_luma8().into_raw())
        }
        _ => (3, img.into_rgb8().into_raw()),
    };
    let transform = match sidecar {
        Some(wld) => {
            let text = fs::read_to_string(wld).map_err(|e| Error::MalformedWorldFile {
                path: wld.to_path_buf(),
                reason: e.to_string(),
            })?;
            GeoTransform::from_world_file(&text, wld)?
        }
        None => GeoTransform::IDENTITY,
    };
    GeoRaster::new(width, height, bands, data, transform).map_err(|e| unreadable(e.to_string()))
}

/// Sidecar paths next to an image: `<name>.wld` and `<name>.crs`.
pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("wld"), path.with_extension("crs"))
}

/// Loads an image together with any `<name>.wld` world file and `<name>.crs`
/// tag file found beside it.
pub fn load_raster_auto(path: &Path) -> Result<GeoRaster> {
    let (wld, crs) = sidecar_paths(path);
    let raster = load_raster(path, wld.is_file().then_some(wld.as_path()))?;
    if crs.is_file() {
        let tag = fs::read_to_string(&crs)?;
        Ok(raster.with_crs(tag.trim()))
    } else {
        Ok(raster)
    }
}

/// Writes a raster as PNG plus `.wld` and `.crs` sidecars.
pub fn save_raster(raster: &GeoRaster, path: &Path) -> Result<()> {
    let color = if raster.bands() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(path, raster.data(), raster.width() as u32, raster.height() as u32, color)
        .map_err(|e| Error::UnreadableImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let (wld, crs) = sidecar_paths(path);
    fs::write(wld, raster.transform.to_world_file())?;
    fs::write(crs, format!("{}\n", raster.crs_tag))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn landcover(width: usize, height: usize, ids: Vec<u8>) -> GeoRaster {
        GeoRaster::new(width, height, 1, ids, GeoTransform::IDENTITY).unwrap()
    }

    #[test]
    fn identity_transform_lookup() {
        let r = GeoRaster::new(4, 4, 3, vec![0; 48], GeoTransform::IDENTITY).unwrap();
        assert_eq!(r.geo_to_pixel(2.5, -3.5).unwrap(), (2, 3));
    }

    #[test]
    fn origin_maps_to_first_pixel() {
        let t = GeoTransform::north_up(100.0, 50.0, 1.0, -1.0);
        let r = GeoRaster::new(4, 4, 1, vec![0; 16], t).unwrap();
        assert_eq!(r.geo_to_pixel(100.0, 50.0).unwrap(), (0, 0));
        assert!(matches!(r.geo_to_pixel(99.9, 50.0), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn singular_transform_rejected() {
        let t = GeoTransform {
            origin_x: 0.0,
            pixel_w: 0.0,
            row_rot: 0.0,
            origin_y: 0.0,
            col_rot: 0.0,
            pixel_h: 0.0,
        };
        assert!(matches!(t.invert(1.0, 1.0), Err(Error::SingularTransform(_))));
    }

    #[test]
    fn world_file_field_mapping() {
        let t = GeoTransform::from_world_file("1.0\n0\n0\n-1.0\n100.0\n50.0\n", Path::new("a.wld")).unwrap();
        assert_eq!(t, GeoTransform::north_up(100.0, 50.0, 1.0, -1.0));
        let back = GeoTransform::from_world_file(&t.to_world_file(), Path::new("a.wld")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn world_file_wrong_line_count() {
        let err = GeoTransform::from_world_file("1\n0\n0\n-1\n100\n", Path::new("a.wld")).unwrap_err();
        assert!(matches!(err, Error::MalformedWorldFile { .. }));
        let err = GeoTransform::from_world_file("1\n0\nx\n-1\n100\n5\n", Path::new("a.wld")).unwrap_err();
        assert!(matches!(err, Error::MalformedWorldFile { .. }));
    }

    #[test]
    fn histogram_of_uniform_window() {
        let lc = landcover(2, 2, vec![3; 4]);
        let h = class_histogram(&lc, &Rect::full(2, 2), 9).unwrap();
        let mut expected = vec![0.0; 9];
        expected[3] = 1.0;
        assert_eq!(h.fractions(), expected.as_slice());
    }

    #[test]
    fn histogram_counts_fractions() {
        let lc = landcover(2, 2, vec![0, 0, 1, 2]);
        let h = class_histogram(&lc, &Rect::full(2, 2), 9).unwrap();
        assert_eq!(&h.fractions()[..4], &[0.5, 0.25, 0.25, 0.0]);
    }

    #[test]
    fn histogram_rejects_unknown_ids_and_bad_windows() {
        let lc = landcover(2, 2, vec![0, 12, 1, 2]);
        assert!(matches!(
            class_histogram(&lc, &Rect::full(2, 2), 9),
            Err(Error::UnknownClassId { id: 12, .. })
        ));
        assert!(matches!(
            class_histogram(&lc, &Rect::new(1, 1, 2, 1), 9),
            Err(Error::WindowOutOfBounds { .. })
        ));
    }

    #[test]
    fn window_keeps_georeference() {
        let t = GeoTransform::north_up(10.0, 20.0, 2.0, -2.0);
        let data: Vec<u8> = (0..16).collect();
        let r = GeoRaster::new(4, 4, 1, data, t).unwrap();
        let w = r.window(&Rect::new(1, 2, 2, 2)).unwrap();
        assert_eq!(w.data(), &[9, 10, 13, 14]);
        assert_eq!(w.pixel_to_geo(0, 0), r.pixel_to_geo(1, 2));
    }

    #[test]
    fn align_resamples_coarse_landcover() {
        // 2x2 land cover with 2-unit pixels over a 4x4 image with unit pixels.
        let lc = GeoRaster::new(2, 2, 1, vec![1, 2, 3, 4], GeoTransform::north_up(0.0, 0.0, 2.0, -2.0)).unwrap();
        let img = GeoRaster::new(4, 4, 3, vec![0; 48], GeoTransform::IDENTITY).unwrap();
        let aligned = img.align(&lc).unwrap();
        assert_eq!(
            aligned.data(),
            &[1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]
        );
    }

    #[test]
    fn align_marks_uncovered_pixels() {
        let lc = GeoRaster::new(2, 4, 1, vec![5; 8], GeoTransform::IDENTITY).unwrap();
        let img = GeoRaster::new(4, 4, 3, vec![0; 48], GeoTransform::IDENTITY).unwrap();
        let aligned = img.align(&lc).unwrap();
        assert_eq!(aligned.get(1, 0, 0), 5);
        assert_eq!(aligned.get(2, 0, 0), NODATA);
        assert_eq!(class_counts(&aligned, &Rect::full(2, 4), 9).unwrap().unwrap()[5], 8);
        assert_eq!(class_counts(&aligned, &Rect::full(4, 4), 9).unwrap(), None);
    }

    #[test]
    fn align_checks_crs_and_overlap() {
        let img = GeoRaster::new(4, 4, 3, vec![0; 48], GeoTransform::IDENTITY).unwrap();
        let lc = GeoRaster::new(4, 4, 1, vec![0; 16], GeoTransform::IDENTITY).unwrap().with_crs("EPSG:4326");
        assert!(matches!(img.align(&lc), Err(Error::CrsMismatch(..))));
        let far = GeoRaster::new(4, 4, 1, vec![0; 16], GeoTransform::north_up(1000.0, 0.0, 1.0, -1.0)).unwrap();
        assert!(matches!(img.align(&far), Err(Error::NoOverlap)));
    }

    #[test]
    fn load_without_world_file_uses_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.ppm");
        image::save_buffer(&path, &[7u8; 48], 4, 4, image::ExtendedColorType::Rgb8).unwrap();
        let r = load_raster(&path, None).unwrap();
        assert_eq!((r.width(), r.height(), r.bands()), (4, 4, 3));
        assert_eq!(r.transform, GeoTransform::IDENTITY);
    }

    #[test]
    fn save_and_auto_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lc.png");
        let r = GeoRaster::new(3, 2, 1, vec![0, 1, 2, 3, 4, 5], GeoTransform::north_up(100.0, 50.0, 10.0, -10.0))
            .unwrap()
            .with_crs("EPSG:32650");
        save_raster(&r, &path).unwrap();
        assert_eq!(load_raster_auto(&path).unwrap(), r);
    }

    #[test]
    fn unreadable_image_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        fs::write(&path, b"not an image").unwrap();
        assert!(matches!(load_raster(&path, None), Err(Error::UnreadableImage { .. })));
    }
}
