//! Selective-search hierarchical grouping over an over-segmentation.
//!
//! Starting from one region per segment, the most similar pair of adjacent
//! regions is merged until a single region remains. Every region that ever
//! existed contributes its bounding box as a candidate window.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_raster::{GeoRaster, Rect};
use crate::oversegment::{felzenszwalb, SegmentLabelMap, SegmentParams};

pub const COLOR_BINS: usize = 25;
pub const TEXTURE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub pixel_count: usize,
    pub bbox: Rect,
    /// `COLOR_BINS` bins per channel, L1-normalized over all channels.
    pub color_hist: Vec<f64>,
    /// `TEXTURE_BINS` gradient-orientation bins per channel, L1-normalized.
    pub texture_hist: Vec<f64>,
    pub alive: bool,
}

impl Region {
    /// Pixel-count weighted combination of two regions.
    pub fn merge(&self, other: &Region) -> Region {
        let (na, nb) = (self.pixel_count as f64, other.pixel_count as f64);
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            let mut v: Vec<f64> = a.iter().zip(b).map(|(x, y)| (na * x + nb * y) / (na + nb)).collect();
            normalize(&mut v);
            v
        };
        Region {
            pixel_count: self.pixel_count + other.pixel_count,
            bbox: self.bbox.union(&other.bbox),
            color_hist: mix(&self.color_hist, &other.color_hist),
            texture_hist: mix(&self.texture_hist, &other.texture_hist),
            alive: true,
        }
    }
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
}

fn intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

/// Sum of color, texture, size and fill similarities, clamped to `[0, 4]`.
pub fn similarity(a: &Region, b: &Region, patch_area: usize) -> f64 {
    let area = patch_area as f64;
    let sizes = (a.pixel_count + b.pixel_count) as f64;
    let s_color = intersection(&a.color_hist, &b.color_hist);
    let s_texture = intersection(&a.texture_hist, &b.texture_hist);
    let s_size = 1.0 - sizes / area;
    let s_fill = 1.0 - (a.bbox.union(&b.bbox).area() as f64 - sizes) / area;
    (s_color + s_texture + s_size + s_fill).clamp(0.0, 4.0)
}

/// Orientation bin of the central-difference gradient at each pixel, per band.
fn orientation_bins(patch: &GeoRaster) -> Vec<u8> {
    let (w, h, bands) = (patch.width(), patch.height(), patch.bands());
    let mut out = vec![0u8; w * h * bands];
    let at = |c: usize, r: usize, b: usize| patch.get(c, r, b) as f64;
    for row in 0..h {
        for col in 0..w {
            for b in 0..bands {
                let gx = at((col + 1).min(w - 1), row, b) - at(col.saturating_sub(1), row, b);
                let gy = at(col, (row + 1).min(h - 1), b) - at(col, row.saturating_sub(1), b);
                let bin = if gx == 0.0 && gy == 0.0 {
                    0
                } else {
                    let theta = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                    ((theta / std::f64::consts::TAU * TEXTURE_BINS as f64) as usize).min(TEXTURE_BINS - 1)
                };
                out[(row * w + col) * bands + b] = bin as u8;
            }
        }
    }
    out
}

/// Regions for each segment together with the 8-connected adjacency between them.
pub struct InitialRegions {
    pub regions: Vec<Region>,
    /// Pairs `(i, j)` with `i < j`.
    pub adjacency: BTreeSet<(usize, usize)>,
}

pub fn initial_regions(labels: &SegmentLabelMap, patch: &GeoRaster) -> Result<InitialRegions> {
    let (w, h, bands) = (patch.width(), patch.height(), patch.bands());
    if labels.width() != w || labels.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "labels {}x{} vs patch {w}x{h}",
            labels.width(),
            labels.height()
        )));
    }
    let n = labels.num_segments();
    let mut bounds = vec![(usize::MAX, usize::MAX, 0usize, 0usize); n];
    let mut counts = vec![0usize; n];
    let mut color = vec![vec![0.0; COLOR_BINS * bands]; n];
    let mut texture = vec![vec![0.0; TEXTURE_BINS * bands]; n];
    let orient = orientation_bins(patch);
    let mut adjacency = BTreeSet::new();

    for row in 0..h {
        for col in 0..w {
            let s = labels.label(col, row) as usize;
            counts[s] += 1;
            let bb = &mut bounds[s];
            *bb = (bb.0.min(col), bb.1.min(row), bb.2.max(col), bb.3.max(row));
            for b in 0..bands {
                let v = patch.get(col, row, b) as usize;
                color[s][b * COLOR_BINS + v * COLOR_BINS / 256] += 1.0;
                texture[s][b * TEXTURE_BINS + orient[(row * w + col) * bands + b] as usize] += 1.0;
            }
            // Forward half of the 8-neighbourhood covers every pair once.
            let mut link = |c: usize, r: usize| {
                let t = labels.label(c, r) as usize;
                if t != s {
                    adjacency.insert((s.min(t), s.max(t)));
                }
            };
            if col + 1 < w {
                link(col + 1, row);
            }
            if row + 1 < h {
                link(col, row + 1);
                if col + 1 < w {
                    link(col + 1, row + 1);
                }
                if col > 0 {
                    link(col - 1, row + 1);
                }
            }
        }
    }

    let regions = (0..n)
        .map(|s| {
            let (c0, r0, c1, r1) = bounds[s];
            normalize(&mut color[s]);
            normalize(&mut texture[s]);
            Region {
                pixel_count: counts[s],
                bbox: Rect::new(c0, r0, c1 - c0 + 1, r1 - r0 + 1),
                color_hist: std::mem::take(&mut color[s]),
                texture_hist: std::mem::take(&mut texture[s]),
                alive: true,
            }
        })
        .collect();
    Ok(InitialRegions { regions, adjacency })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalParams {
    pub segment: SegmentParams,
    /// Candidates with a side shorter than this are discarded.
    pub min_side: usize,
    /// Candidates with a side longer than this are discarded; `None` means the patch side.
    pub max_side: Option<usize>,
}

impl Default for ProposalParams {
    fn default() -> Self {
        ProposalParams {
            segment: SegmentParams::default(),
            min_side: 32,
            max_side: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    score: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Highest score first; ties go to the lexicographically smaller pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Full merge history of one patch.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    /// Initial regions followed by one region per merge, in creation order.
    pub regions: Vec<Region>,
    pub initial_count: usize,
}

impl Hierarchy {
    pub fn merges(&self) -> usize {
        self.regions.len() - self.initial_count
    }

    /// Every bounding box in creation order, before dedup and filtering.
    pub fn all_boxes(&self) -> impl Iterator<Item = Rect> + '_ {
        self.regions.iter().map(|r| r.bbox)
    }
}

/// Greedily merges the most similar adjacent pair until one region is left.
pub fn group(init: InitialRegions, patch_area: usize) -> Hierarchy {
    let InitialRegions { mut regions, adjacency } = init;
    let initial_count = regions.len();
    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); initial_count];
    let mut heap = BinaryHeap::new();
    for &(a, b) in &adjacency {
        neighbours[a].insert(b);
        neighbours[b].insert(a);
        heap.push(Candidate {
            score: similarity(&regions[a], &regions[b], patch_area),
            a,
            b,
        });
    }
    while let Some(Candidate { a, b, .. }) = heap.pop() {
        if !regions[a].alive || !regions[b].alive {
            continue;
        }
        let merged = regions[a].merge(&regions[b]);
        let id = regions.len();
        regions[a].alive = false;
        regions[b].alive = false;
        let mut adj: BTreeSet<usize> = neighbours[a].union(&neighbours[b]).copied().collect();
        adj.remove(&a);
        adj.remove(&b);
        for &t in &adj {
            neighbours[t].remove(&a);
            neighbours[t].remove(&b);
            neighbours[t].insert(id);
            heap.push(Candidate {
                score: similarity(&merged, &regions[t], patch_area),
                a: t.min(id),
                b: t.max(id),
            });
        }
        neighbours[a].clear();
        neighbours[b].clear();
        neighbours.push(adj);
        regions.push(merged);
    }
    Hierarchy {
        regions,
        initial_count,
    }
}

/// Over-segments and groups a patch.
pub fn hierarchy(patch: &GeoRaster, params: &SegmentParams) -> Result<Hierarchy> {
    if patch.width() == 0 || patch.height() == 0 {
        return Err(Error::EmptyPatch);
    }
    let labels = felzenszwalb(patch, params)?;
    let init = initial_regions(&labels, patch)?;
    Ok(group(init, patch.width() * patch.height()))
}

/// Candidate sample windows: every initial and merged bounding box, deduplicated
/// in creation order and filtered by side length.
pub fn selective_search(patch: &GeoRaster, params: &ProposalParams) -> Result<Vec<Rect>> {
    let tree = hierarchy(patch, &params.segment)?;
    let max_side = params.max_side.unwrap_or(patch.width().max(patch.height()));
    let mut seen = HashSet::new();
    Ok(tree
        .all_boxes()
        .filter(|r| seen.insert(*r))
        .filter(|r| r.min_side() >= params.min_side && r.max_side() <= max_side)
        .collect())
}

/// One JSON line per candidate: `{image_id, col0, row0, width, height}`.
pub fn candidate_dump(image_id: &str, rects: &[Rect]) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        image_id: &'a str,
        col0: usize,
        row0: usize,
        width: usize,
        height: usize,
    }
    rects
        .iter()
        .map(|r| {
            let line = Line {
                image_id,
                col0: r.col0,
                row0: r.row0,
                width: r.width,
                height: r.height,
            };
            serde_json::to_string(&line).expect("plain struct") + "\n"
        })
        .collect()
}
