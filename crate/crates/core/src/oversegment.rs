//! Graph-based over-segmentation (Felzenszwalb & Huttenlocher) on an
//! 8-connected pixel grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_raster::GeoRaster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    /// Scale parameter; larger values favour larger components.
    pub k: f64,
    /// Components smaller than this are merged into a neighbour.
    pub min_size: usize,
    /// Gaussian pre-smoothing; 0 disables it.
    pub sigma: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            k: 300.0,
            min_size: 50,
            sigma: 0.8,
        }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::NonPositiveParameter { name: "k", value: self.k });
        }
        if self.min_size == 0 {
            return Err(Error::NonPositiveParameter { name: "min_size", value: 0.0 });
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::NonPositiveParameter { name: "sigma", value: self.sigma });
        }
        Ok(())
    }
}

/// Undirected edge between two pixels in raster order, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    num_segments: usize,
}

const LABEL_MAGIC: &[u8; 4] = b"SEGM";

impl SegmentLabelMap {
    /// Builds a label map, renumbering ids by first appearance in raster order.
    pub fn from_raw(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != width * height || raw.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} grid",
                raw.len()
            )));
        }
        let mut remap = std::collections::HashMap::new();
        let labels: Vec<u32> = raw
            .iter()
            .map(|id| {
                let next = remap.len() as u32;
                *remap.entry(*id).or_insert(next)
            })
            .collect();
        Ok(SegmentLabelMap {
            width,
            height,
            labels,
            num_segments: remap.len(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_segments];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Debug dump: magic, u32 width, u32 height, then u32 labels, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.labels.len());
        out.extend_from_slice(LABEL_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::DimensionMismatch(format!("label dump: {m}"));
        if bytes.len() < 12 || &bytes[..4] != LABEL_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (width, height) = (word(4) as usize, word(8) as usize);
        if bytes.len() != 12 + 4 * width * height {
            return Err(bad("truncated"));
        }
        let raw: Vec<u32> = (0..width * height).map(|i| word(12 + 4 * i)).collect();
        Self::from_raw(width, height, &raw)
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (4.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur of an interleaved image with clamped borders.
pub(crate) fn smooth(values: &[f64], width: usize, height: usize, bands: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let half = k.len() as isize - 1;
    let at = |x: isize, n: usize| x.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    for row in 0..height {
        for col in 0..width {
            for b in 0..bands {
                let mut acc = 0.0;
                for d in -half..=half {
                    let c = at(col as isize + d, width);
                    acc += k[d.unsigned_abs()] * values[(row * width + c) * bands + b];
                }
                tmp[(row * width + col) * bands + b] = acc;
            }
        }
    }
    let mut out = vec![0.0; values.len()];
    for row in 0..height {
        for col in 0..width {
            for b in 0..bands {
                let mut acc = 0.0;
                for d in -half..=half {
                    let r = at(row as isize + d, height);
                    acc += k[d.unsigned_abs()] * tmp[(r * width + col) * bands + b];
                }
                out[(row * width + col) * bands + b] = acc;
            }
        }
    }
    out
}

/// One edge per 8-neighbour pixel pair, weighted by the Euclidean distance of
/// the (optionally smoothed) pixel values.
pub fn build_grid_graph(patch: &GeoRaster, sigma: f64) -> Result<Vec<Edge>> {
    let (w, h, bands) = (patch.width(), patch.height(), patch.bands());
    if w == 0 || h == 0 {
        return Err(Error::EmptyPatch);
    }
    let raw: Vec<f64> = patch.data().iter().map(|&v| v as f64).collect();
    let img = smooth(&raw, w, h, bands, sigma);
    let dist = |p: usize, q: usize| -> f64 {
        (0..bands)
            .map(|b| (img[p * bands + b] - img[q * bands + b]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut edges = Vec::with_capacity(4 * w * h);
    for row in 0..h {
        for col in 0..w {
            let p = row * w + col;
            let mut push = |q: usize| {
                edges.push(Edge {
                    a: p as u32,
                    b: q as u32,
                    weight: dist(p, q),
                })
            };
            if col + 1 < w {
                push(p + 1);
            }
            if row + 1 < h {
                push(p + w);
                if col + 1 < w {
                    push(p + w + 1);
                }
                if col > 0 {
                    push(p + w - 1);
                }
            }
        }
    }
    Ok(edges)
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
    /// Largest MST edge inside each component.
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32, weight: f64) {
        let (a, b) = (a as usize, b as usize);
        let (root, child) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        if self.rank[a] == self.rank[b] {
            self.rank[root] += 1;
        }
        self.parent[child] = root as u32;
        self.size[root] += self.size[child];
        self.internal[root] = self.internal[a].max(self.internal[b]).max(weight);
    }
}

/// Segments `patch` into components of visually similar, 8-connected pixels.
///
/// Edges are visited in `(weight, a, b)` order. Two components merge when the
/// joining edge is no heavier than the smaller of `Int(C) + k / |C|`; a second
/// pass over the same order then absorbs components below `min_size`.
pub fn felzenszwalb(patch: &GeoRaster, params: &SegmentParams) -> Result<SegmentLabelMap> {
    params.validate()?;
    let mut edges = build_grid_graph(patch, params.sigma)?;
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });

    let n = patch.width() * patch.height();
    let mut sets = DisjointSet::new(n);
    for e in &edges {
        let (ra, rb) = (sets.find(e.a), sets.find(e.b));
        if ra == rb {
            continue;
        }
        let threshold = |r: u32| sets.internal[r as usize] + params.k / sets.size[r as usize] as f64;
        if e.weight <= threshold(ra).min(threshold(rb)) {
            sets.union(ra, rb, e.weight);
        }
    }
    for e in &edges {
        let (ra, rb) = (sets.find(e.a), sets.find(e.b));
        if ra != rb
            && ((sets.size[ra as usize] as usize) < params.min_size
                || (sets.size[rb as usize] as usize) < params.min_size)
        {
            sets.union(ra, rb, e.weight);
        }
    }

    let roots: Vec<u32> = (0..n as u32).map(|p| sets.find(p)).collect();
    SegmentLabelMap::from_raw(patch.width(), patch.height(), &roots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_raster::GeoTransform;

    fn rgb(width: usize, height: usize, data: Vec<u8>) -> GeoRaster {
        GeoRaster::new(width, height, 3, data, GeoTransform::IDENTITY).unwrap()
    }

    fn halves(side: usize) -> GeoRaster {
        let mut data = Vec::new();
        for _row in 0..side {
            for col in 0..side {
                let v = if col < side / 2 { 0 } else { 255 };
                data.extend_from_slice(&[v, v, v]);
            }
        }
        rgb(side, side, data)
    }

    #[test]
    fn single_pixel_has_no_edges() {
        assert!(build_grid_graph(&rgb(1, 1, vec![1, 2, 3]), 0.8).unwrap().is_empty());
    }

    #[test]
    fn two_by_two_has_six_edges() {
        assert_eq!(build_grid_graph(&rgb(2, 2, vec![0; 12]), 0.8).unwrap().len(), 6);
    }

    #[test]
    fn edge_weight_is_rgb_distance() {
        let edges = build_grid_graph(&rgb(2, 1, vec![0, 0, 0, 3, 4, 0]), 0.0).unwrap();
        assert_eq!(edges, vec![Edge { a: 0, b: 1, weight: 5.0 }]);
    }

    #[test]
    fn smoothing_preserves_constant_images() {
        let out = smooth(&[7.0; 5 * 4 * 3], 5, 4, 3, 1.3);
        assert!(out.iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn uniform_patch_is_one_segment() {
        for k in [1.0, 300.0, 5000.0] {
            let params = SegmentParams { k, min_size: 1, sigma: 0.8 };
            let seg = felzenszwalb(&rgb(16, 16, vec![90; 16 * 16 * 3]), &params).unwrap();
            assert_eq!(seg.num_segments(), 1);
        }
    }

    #[test]
    fn two_halves_split_exactly() {
        let params = SegmentParams { k: 10.0, min_size: 1, sigma: 0.0 };
        let seg = felzenszwalb(&halves(16), &params).unwrap();
        assert_eq!(seg.num_segments(), 2);
        for row in 0..16 {
            for col in 0..16 {
                assert_eq!(seg.label(col, row), u32::from(col >= 8));
            }
        }
    }

    #[test]
    fn parameters_validated() {
        let patch = rgb(2, 2, vec![0; 12]);
        let bad_k = SegmentParams { k: 0.0, ..Default::default() };
        assert!(matches!(felzenszwalb(&patch, &bad_k), Err(Error::NonPositiveParameter { .. })));
        let bad_min = SegmentParams { min_size: 0, ..Default::default() };
        assert!(matches!(felzenszwalb(&patch, &bad_min), Err(Error::NonPositiveParameter { .. })));
    }

    #[test]
    fn label_dump_round_trip() {
        let params = SegmentParams { k: 10.0, min_size: 1, sigma: 0.0 };
        let seg = felzenszwalb(&halves(8), &params).unwrap();
        let bytes = seg.to_bytes();
        assert_eq!(&bytes[..4], b"SEGM");
        assert_eq!(bytes.len(), 12 + 4 * 64);
        assert_eq!(SegmentLabelMap::from_bytes(&bytes).unwrap(), seg);
    }
}
