//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tov_core::natural_sampler::NaturalParams;
use tov_core::osm::ManMadeParams;
use tov_core::oversegment::SegmentParams;
use tov_core::probe::ProbeConfig;
use tov_core::region_proposal::ProposalParams;
use tov_core::ssl::{AugmentSpec, FreezeSpec, ModelConfig, TrainConfig};

/// Input and output locations. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Georeferenced image rasters, each with an optional `.wld` / `.crs` sidecar.
    pub images: Vec<PathBuf>,
    /// Single-band land-cover raster holding natural class ids.
    pub landcover: Option<PathBuf>,
    /// OpenStreetMap XML covering the images.
    pub osm: Option<PathBuf>,
    /// Rule table replacing the built-in one.
    pub rules: Option<PathBuf>,
    /// Directory of general-domain images for stage 1.
    pub general: Option<PathBuf>,
    /// Labelled manifest used for probing.
    pub eval_manifest: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            images: Vec::new(),
            landcover: None,
            osm: None,
            rules: None,
            general: None,
            eval_manifest: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    /// Homogeneity threshold on `exp(S)`.
    pub threshold: f64,
    pub min_side: usize,
    pub max_side: Option<usize>,
    pub max_tile: usize,
    pub sample_side: usize,
    pub point_pad: f64,
    pub area_pad: f64,
    pub time_window: Option<(String, String)>,
}

impl Default for Sampling {
    fn default() -> Self {
        let natural = NaturalParams::default();
        let man_made = ManMadeParams::default();
        Sampling {
            threshold: natural.threshold,
            min_side: natural.proposals.min_side,
            max_side: natural.proposals.max_side,
            max_tile: natural.max_tile,
            sample_side: man_made.sample_side,
            point_pad: man_made.point_pad,
            area_pad: man_made.area_pad,
            time_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Resampling {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Retention {
    /// `default`, `none`, `all`, `prefix:N` or a block list such as `0,1`.
    pub freeze: String,
}

impl Default for Retention {
    fn default() -> Self {
        Retention {
            freeze: "default".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub steps: usize,
    pub weight_decay: f64,
    pub l2_normalize: bool,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        ProbeSection {
            steps: p.steps,
            weight_decay: p.weight_decay,
            l2_normalize: p.l2_normalize,
            shots: vec![5],
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Runtime {
    /// Worker threads; unset means one per core. `TOV_FORGE_THREADS` wins.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub segmentation: SegmentParams,
    pub sampling: Sampling,
    pub resampling: Resampling,
    pub model: ModelConfig,
    pub augment: AugmentSpec,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub retention: Retention,
    pub probe: ProbeSection,
    pub runtime: Runtime,
}

impl PipelineConfig {
    pub fn natural_params(&self) -> NaturalParams {
        NaturalParams {
            proposals: ProposalParams {
                segment: self.segmentation,
                min_side: self.sampling.min_side,
                max_side: self.sampling.max_side,
            },
            threshold: self.sampling.threshold,
            max_tile: self.sampling.max_tile,
        }
    }

    pub fn man_made_params(&self) -> ManMadeParams {
        ManMadeParams {
            sample_side: self.sampling.sample_side,
            point_pad: self.sampling.point_pad,
            area_pad: self.sampling.area_pad,
            min_side: self.sampling.min_side,
            time_window: self.sampling.time_window.clone(),
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            steps: self.probe.steps,
            weight_decay: self.probe.weight_decay,
            l2_normalize: self.probe.l2_normalize,
        }
    }

    pub fn freeze_spec(&self) -> Result<FreezeSpec> {
        if self.retention.freeze == "default" {
            return Ok(FreezeSpec::default_for(self.model.blocks()));
        }
        Ok(self.retention.freeze.parse()?)
    }

    /// Range checks owned by the core modules.
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.natural_params().validate()?;
        self.model.validate()?;
        self.augment.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.freeze_spec()?.mask(self.model.blocks())?;
        if self.augment.output_side != self.model.input_side {
            bail!(
                "augment.output_side ({}) must equal model.input_side ({})",
                self.augment.output_side,
                self.model.input_side
            );
        }
        if self.sampling.sample_side == 0 {
            bail!("sampling.sample_side must be positive");
        }
        if self.probe.shots.is_empty() || self.probe.seeds.is_empty() {
            bail!("probe.shots and probe.seeds must not be empty");
        }
        Ok(())
    }
}

/// A parsed config plus the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.output)
    }

    /// Resolved path of an optional entry, or an error naming the missing key.
    pub fn required(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = p.as_ref().with_context(|| format!("paths.{key} is not set in the config"))?;
        let full = self.resolve(p);
        if !full.exists() {
            bail!("paths.{key}: {} does not exist", full.display());
        }
        Ok(full)
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Applies a `section.key=value` override to a raw config table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not of the form section.key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .with_context(|| format!("override {key}: {s} is not a section"))?;
    }
    cur.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

/// Reads `path` (or the defaults when `None`), applies overrides and validates.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Loaded> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, base)
        }
        None => (toml::Table::new(), PathBuf::from(".")),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: PipelineConfig = toml::Value::Table(table)
        .try_into()
        .context("invalid config")?;
    config.validate()?;
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    Ok(Loaded { config, base })
}

/// Canonical TOML of the effective configuration.
pub fn snapshot(config: &PipelineConfig) -> Result<String> {
    Ok(toml::to_string(config)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = snapshot(&c).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "stage1.epochs=3").unwrap();
        apply_override(&mut t, "retention.freeze=prefix:1").unwrap();
        apply_override(&mut t, "sampling.threshold = 0.5").unwrap();
        let c: PipelineConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(c.stage1.epochs, 3);
        assert_eq!(c.freeze_spec().unwrap(), FreezeSpec::Prefix(1));
        assert_eq!(c.sampling.threshold, 0.5);
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let t: toml::Table = toml::from_str("[sampling]\nthreshhold = 0.3").unwrap();
        assert!(toml::Value::Table(t).try_into::<PipelineConfig>().is_err());
    }

    #[test]
    fn mismatched_sides_rejected() {
        let mut c = PipelineConfig::default();
        c.augment.output_side = 16;
        assert!(c.validate().is_err());
    }
}
