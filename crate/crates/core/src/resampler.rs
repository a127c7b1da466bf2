//! Dataset manifests and class-balanced resampling.
//!
//! A manifest is a JSON-lines file: one header object followed by one record
//! per sample. Pixels are never copied; records point into source rasters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_raster::Rect;
use crate::taxonomy::{Sample, SceneCategory, SourceKind};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub dataset: String,
    pub seed: u64,
    /// Categories this dataset covers, sorted by id. Class counts in the
    /// balancing formula are taken from here.
    pub taxonomy: Vec<SceneCategory>,
    pub records: Vec<Sample>,
    /// Man-made classes that held fewer samples than requested, with the deficit.
    pub shortfall: BTreeMap<SceneCategory, usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dataset: String,
    seed: u64,
    taxonomy: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    shortfall: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    image: String,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    label: String,
    kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl DatasetManifest {
    /// A manifest whose taxonomy is exactly the categories present in `records`.
    pub fn from_samples(dataset: impl Into<String>, seed: u64, records: Vec<Sample>) -> Self {
        let taxonomy: BTreeSet<SceneCategory> = records.iter().map(|s| s.label).collect();
        DatasetManifest {
            dataset: dataset.into(),
            seed,
            taxonomy: taxonomy.into_iter().collect(),
            records,
            shortfall: BTreeMap::new(),
        }
    }

    /// Per-category tally; every taxonomy entry is present, possibly with 0.
    pub fn counts(&self) -> BTreeMap<SceneCategory, usize> {
        let mut counts: BTreeMap<SceneCategory, usize> = self.taxonomy.iter().map(|&c| (c, 0)).collect();
        for r in &self.records {
            *counts.entry(r.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn classes_of(&self, kind: SourceKind) -> Vec<SceneCategory> {
        self.taxonomy.iter().copied().filter(|c| c.kind() == kind).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            dataset: self.dataset.clone(),
            seed: self.seed,
            taxonomy: self.taxonomy.iter().map(|c| c.name().to_string()).collect(),
            shortfall: self.shortfall.iter().map(|(c, n)| (c.name().to_string(), *n)).collect(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.records {
            let r = Record {
                image: s.image_id.clone(),
                x: s.window.col0,
                y: s.window.row0,
                w: s.window.width,
                h: s.window.height,
                label: s.label.name().to_string(),
                kind: s.kind(),
                score: s.score,
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&r).expect("record serializes"));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let malformed = |line: usize, reason: String| Error::MalformedManifest { line: line + 1, reason };
        let (i, first) = lines.next().ok_or_else(|| malformed(0, "missing header line".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| malformed(i, e.to_string()))?;
        let category = |i: usize, name: &str| SceneCategory::from_name(name).map_err(|e| malformed(i, e.to_string()));
        let mut taxonomy = Vec::new();
        for name in &header.taxonomy {
            taxonomy.push(category(i, name)?);
        }
        taxonomy.sort();
        taxonomy.dedup();
        let mut shortfall = BTreeMap::new();
        for (name, n) in &header.shortfall {
            shortfall.insert(category(i, name)?, *n);
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: Record = serde_json::from_str(line).map_err(|e| malformed(i, e.to_string()))?;
            let label = category(i, &r.label)?;
            if label.kind() != r.kind {
                return Err(malformed(i, format!("{} is not {}", r.label, r.kind)));
            }
            if taxonomy.binary_search(&label).is_err() {
                return Err(malformed(i, format!("{} missing from the header taxonomy", r.label)));
            }
            records.push(Sample {
                image_id: r.image,
                window: Rect::new(r.x, r.y, r.w, r.h),
                label,
                score: r.score,
            });
        }
        Ok(DatasetManifest {
            dataset: header.dataset,
            seed: header.seed,
            taxonomy,
            records,
            shortfall,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// Union of a natural and a man-made manifest.
pub fn merge_manifests(nat: &DatasetManifest, man: &DatasetManifest) -> Result<DatasetManifest> {
    let overlap: Vec<String> = nat
        .taxonomy
        .iter()
        .filter(|c| man.taxonomy.contains(c))
        .map(|c| c.name().to_string())
        .collect();
    if !overlap.is_empty() {
        return Err(Error::TaxonomyOverlap(overlap));
    }
    if nat.records.is_empty() && nat.taxonomy.is_empty() {
        return Ok(man.clone());
    }
    if man.records.is_empty() && man.taxonomy.is_empty() {
        return Ok(nat.clone());
    }
    let mut taxonomy: Vec<SceneCategory> = nat.taxonomy.iter().chain(&man.taxonomy).copied().collect();
    taxonomy.sort();
    let mut shortfall = nat.shortfall.clone();
    shortfall.extend(man.shortfall.iter().map(|(c, n)| (*c, *n)));
    Ok(DatasetManifest {
        dataset: format!("{}+{}", nat.dataset, man.dataset),
        seed: nat.seed,
        taxonomy,
        records: nat.records.iter().chain(&man.records).cloned().collect(),
        shortfall,
    })
}

/// Per-class targets `(n_k, n_k')` for a manifest.
pub fn balance_targets(m: &DatasetManifest) -> Result<(usize, usize)> {
    let counts = m.counts();
    let natural = m.classes_of(SourceKind::Natural);
    let man_made = m.classes_of(SourceKind::ManMade);
    let mut n_k = usize::MAX;
    for c in &natural {
        let n = counts[c];
        if n == 0 {
            return Err(Error::EmptyNaturalClass(c.name().to_string()));
        }
        n_k = n_k.min(n);
    }
    if natural.is_empty() {
        return Err(Error::EmptyNaturalClass("<no natural classes>".into()));
    }
    let n_k_prime = if man_made.is_empty() {
        0
    } else {
        n_k * natural.len() / man_made.len()
    };
    Ok((n_k, n_k_prime))
}

/// Class-balanced subset: `n_k` samples per natural class and up to `n_k'`
/// per man-made class, drawn uniformly without replacement. Record order is
/// preserved, so the result is stable under re-application.
pub fn rebalance(m: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    let (n_k, n_k_prime) = balance_targets(m)?;
    let mut by_class: BTreeMap<SceneCategory, Vec<usize>> = BTreeMap::new();
    for (i, r) in m.records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let mut keep = vec![false; m.records.len()];
    let mut shortfall = BTreeMap::new();
    for &c in &m.taxonomy {
        let indices = by_class.get(&c).map(Vec::as_slice).unwrap_or(&[]);
        let target = match c.kind() {
            SourceKind::Natural => n_k,
            SourceKind::ManMade => n_k_prime,
        };
        let take = target.min(indices.len());
        if take < target {
            shortfall.insert(c, target - take);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c.id() as u64);
        for j in rand::seq::index::sample(&mut rng, indices.len(), take) {
            keep[indices[j]] = true;
        }
    }
    Ok(DatasetManifest {
        dataset: m.dataset.clone(),
        seed,
        taxonomy: m.taxonomy.clone(),
        records: m
            .records
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect(),
        shortfall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(name: &str) -> SceneCategory {
        SceneCategory::from_name(name).unwrap()
    }

    fn manifest(counts: &[(&str, usize)]) -> DatasetManifest {
        let mut records = Vec::new();
        for (name, n) in counts {
            for i in 0..*n {
                records.push(Sample {
                    image_id: format!("img{}", i % 3),
                    window: Rect::new(i, i, 32, 32),
                    label: cat(name),
                    score: None,
                });
            }
        }
        DatasetManifest::from_samples("toy", 0, records)
    }

    #[test]
    fn balancing_formula_example() {
        let m = manifest(&[("Forest", 10), ("Water", 4), ("Cropland", 7), ("Airport", 9), ("Parking", 9)]);
        assert_eq!(balance_targets(&m).unwrap(), (4, 6));
        let b = rebalance(&m, 1).unwrap();
        let counts = b.counts();
        for n in ["Forest", "Water", "Cropland"] {
            assert_eq!(counts[&cat(n)], 4);
        }
        assert_eq!(counts[&cat("Airport")], 6);
        assert_eq!(counts[&cat("Parking")], 6);
        assert_eq!(b.records.len(), 24);
        assert!(b.shortfall.is_empty());
    }

    #[test]
    fn balanced_natural_side_kept_whole() {
        let m = manifest(&[("Forest", 5), ("Water", 5)]);
        let b = rebalance(&m, 9).unwrap();
        assert_eq!(b.records, m.records);
    }

    #[test]
    fn shortfall_recorded() {
        let m = manifest(&[("Forest", 4), ("Water", 4), ("Airport", 2)]);
        let b = rebalance(&m, 3).unwrap();
        assert_eq!(b.counts()[&cat("Airport")], 2);
        assert_eq!(b.shortfall.get(&cat("Airport")), Some(&6));
    }

    #[test]
    fn empty_natural_class_rejected() {
        let mut m = manifest(&[("Forest", 4)]);
        m.taxonomy.push(cat("Water"));
        m.taxonomy.sort();
        assert!(matches!(rebalance(&m, 0), Err(Error::EmptyNaturalClass(_))));
    }

    #[test]
    fn merge_examples() {
        let nat = manifest(&[("Forest", 7), ("Water", 5)]);
        let man = manifest(&[("Airport", 8)]);
        assert_eq!(merge_manifests(&nat, &man).unwrap().records.len(), 20);
        let empty = DatasetManifest::default();
        assert_eq!(merge_manifests(&nat, &empty).unwrap(), nat);
        assert_eq!(merge_manifests(&empty, &man).unwrap(), man);
        assert!(matches!(merge_manifests(&nat, &nat), Err(Error::TaxonomyOverlap(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut m = manifest(&[("Forest", 3), ("Airport", 2)]);
        m.records[0].score = Some(-0.25);
        m.shortfall.insert(cat("Airport"), 1);
        let text = m.to_jsonl();
        assert!(text.lines().nth(1).unwrap().contains("\"kind\":\"natural\""));
        assert_eq!(DatasetManifest::from_jsonl(&text).unwrap(), m);
    }

    #[test]
    fn malformed_manifest_reports_line() {
        let bad = "{\"dataset\":\"d\",\"seed\":0,\"taxonomy\":[\"Forest\"]}\n{\"image\":\"a\"}\n";
        assert!(matches!(
            DatasetManifest::from_jsonl(bad),
            Err(Error::MalformedManifest { line: 2, .. })
        ));
        let wrong_kind = "{\"dataset\":\"d\",\"seed\":0,\"taxonomy\":[\"Forest\"]}\n\
            {\"image\":\"a\",\"x\":0,\"y\":0,\"w\":1,\"h\":1,\"label\":\"Forest\",\"kind\":\"man-made\"}\n";
        assert!(DatasetManifest::from_jsonl(wrong_kind).is_err());
    }
}
