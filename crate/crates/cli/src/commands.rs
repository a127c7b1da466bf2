use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tov_core::ablation::{learning_path, sampling_method, AblationConfig};
use tov_core::geo_raster::load_raster_auto;
use tov_core::natural_sampler::sample_natural;
use tov_core::osm::{parse_osm, sample_manmade, RuleTable};
use tov_core::probe::{compare_inits, report_csv, summary_table};
use tov_core::resampler::{merge_manifests, rebalance};
use tov_core::ssl::checkpoint;
use tov_core::ssl::gradcheck::{gradcheck, random_case, GradcheckConfig};
use tov_core::ssl::{init_seed, raster_tensor, stage1_trainer, stage2_trainer, Grads, Model, Tensor, Trainer};
use tov_core::{DatasetManifest, GeoRaster};

use crate::config::{snapshot, Loaded};

pub const NATURAL_MANIFEST: &str = "natural.jsonl";
pub const MAN_MADE_MANIFEST: &str = "manmade.jsonl";
pub const BALANCED_MANIFEST: &str = "balanced.jsonl";
pub const STAGE1_CHECKPOINT: &str = "stage1.ckpt";
pub const STAGE2_CHECKPOINT: &str = "stage2.ckpt";
pub const PROBE_REPORT: &str = "probe.csv";
pub const CONFIG_SNAPSHOT: &str = "config.snapshot.toml";

/// Creates the output directory and records the effective config in it.
pub fn prepare_output(cfg: &Loaded) -> Result<PathBuf> {
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(CONFIG_SNAPSHOT), snapshot(&cfg.config)?)?;
    Ok(out)
}

fn print_counts(m: &DatasetManifest) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    for (cat, n) in m.counts() {
        writeln!(stdout, "{}\t{n}", cat.name())?;
    }
    writeln!(stdout, "total\t{}", m.records.len())?;
    Ok(())
}

fn load_image(cfg: &Loaded, id: &Path) -> Result<GeoRaster> {
    let path = cfg.resolve(id);
    load_raster_auto(&path).with_context(|| format!("loading image {}", path.display()))
}

fn check_images(cfg: &Loaded) -> Result<()> {
    for img in &cfg.config.paths.images {
        let p = cfg.resolve(img);
        if !p.is_file() {
            bail!("paths.images: {} does not exist", p.display());
        }
    }
    Ok(())
}

pub fn sample_natural_cmd(cfg: &Loaded) -> Result<PathBuf> {
    let paths = &cfg.config.paths;
    let mut records = Vec::new();
    if !paths.images.is_empty() {
        check_images(cfg)?;
        let lc_path = cfg.required(&paths.landcover, "landcover")?;
        let landcover = load_raster_auto(&lc_path).with_context(|| format!("loading land cover {}", lc_path.display()))?;
        let params = cfg.config.natural_params();
        for img in &paths.images {
            let image = load_image(cfg, img)?;
            let id = img.to_string_lossy();
            let found = sample_natural(&id, &image, &landcover, &params).with_context(|| format!("sampling {id}"))?;
            eprintln!("{id}: {} natural samples", found.len());
            records.extend(found);
        }
    }
    let manifest = DatasetManifest::from_samples("natural", 0, records);
    let out = prepare_output(cfg)?.join(NATURAL_MANIFEST);
    manifest.save(&out)?;
    print_counts(&manifest)?;
    Ok(out)
}

pub fn sample_osm_cmd(cfg: &Loaded) -> Result<PathBuf> {
    let paths = &cfg.config.paths;
    let rules = match &paths.rules {
        Some(_) => {
            let p = cfg.required(&paths.rules, "rules")?;
            RuleTable::parse(&std::fs::read_to_string(&p)?).with_context(|| format!("rule table {}", p.display()))?
        }
        None => RuleTable::builtin(),
    };
    let mut records = Vec::new();
    if !paths.images.is_empty() {
        check_images(cfg)?;
        let osm_path = cfg.required(&paths.osm, "osm")?;
        let doc = parse_osm(&std::fs::read_to_string(&osm_path)?).with_context(|| format!("parsing {}", osm_path.display()))?;
        if doc.skipped_ways > 0 {
            eprintln!("{}: skipped {} ways with unresolved nodes", osm_path.display(), doc.skipped_ways);
        }
        let params = cfg.config.man_made_params();
        for img in &paths.images {
            let image = load_image(cfg, img)?;
            let id = img.to_string_lossy();
            let found = sample_manmade(&id, &image, &doc, &rules, &params)?;
            eprintln!("{id}: {} man-made samples", found.len());
            records.extend(found);
        }
    }
    let manifest = DatasetManifest::from_samples("man-made", 0, records);
    let out = prepare_output(cfg)?.join(MAN_MADE_MANIFEST);
    manifest.save(&out)?;
    print_counts(&manifest)?;
    Ok(out)
}

pub fn rebalance_cmd(cfg: &Loaded, inputs: &[PathBuf], seed: Option<u64>) -> Result<PathBuf> {
    let out_dir = cfg.output_dir();
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        vec![out_dir.join(NATURAL_MANIFEST), out_dir.join(MAN_MADE_MANIFEST)]
    } else {
        inputs.to_vec()
    };
    let mut manifests = Vec::new();
    for p in &inputs {
        if !p.is_file() {
            bail!("manifest {} does not exist", p.display());
        }
        manifests.push(DatasetManifest::load(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let merged = match manifests.as_slice() {
        [one] => one.clone(),
        [nat, man] => merge_manifests(nat, man)?,
        _ => bail!("rebalance takes one or two manifests, got {}", manifests.len()),
    };
    let balanced = rebalance(&merged, seed.unwrap_or(cfg.config.resampling.seed))?;
    for (cat, missing) in &balanced.shortfall {
        eprintln!("shortfall: {} is {missing} samples short", cat.name());
    }
    let out = prepare_output(cfg)?.join(BALANCED_MANIFEST);
    balanced.save(&out)?;
    print_counts(&balanced)?;
    Ok(out)
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if is_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Every image under `dir`, recursively, in lexicographic path order.
pub fn load_dir_corpus(dir: &Path) -> Result<Vec<Tensor>> {
    let mut files = Vec::new();
    collect_images(dir, &mut files)?;
    files.sort();
    files
        .iter()
        .map(|p| {
            let r = load_raster_auto(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(raster_tensor(&r, &r.full_rect())?)
        })
        .collect()
}

/// Every record's window as an image tensor, each source raster loaded once.
pub fn manifest_tensors(m: &DatasetManifest, base: &Path) -> Result<Vec<Tensor>> {
    let mut rasters: BTreeMap<&str, GeoRaster> = BTreeMap::new();
    let mut out = Vec::with_capacity(m.records.len());
    for r in &m.records {
        if !rasters.contains_key(r.image_id.as_str()) {
            let p = Path::new(&r.image_id);
            let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            let raster = load_raster_auto(&full).with_context(|| format!("loading {}", full.display()))?;
            rasters.insert(&r.image_id, raster);
        }
        out.push(raster_tensor(&rasters[r.image_id.as_str()], &r.window)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Both,
}

/// Runs `trainer` and writes its checkpoint. Returns whether it finished.
fn run_and_save(trainer: &mut Trainer, corpus: &[Tensor], stop_after: Option<usize>, path: &Path) -> Result<bool> {
    let start = trainer.progress.global_step;
    let finished = trainer.run(corpus, stop_after)?;
    checkpoint::save(trainer, path)?;
    let losses: Vec<String> = trainer.progress.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
    eprintln!(
        "stage {}: {} steps this run, {} total, epoch losses [{}]",
        trainer.stage,
        trainer.progress.global_step - start,
        trainer.progress.global_step,
        losses.join(", ")
    );
    if !finished {
        eprintln!("stage {} stopped early; continue with --resume {}", trainer.stage, path.display());
    }
    Ok(finished)
}

fn resumed(path: &Path, stage: u8) -> Result<Trainer> {
    let t = checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if t.stage != stage {
        bail!("{} holds a stage {} run, not stage {stage}", path.display(), t.stage);
    }
    Ok(t)
}

pub struct PretrainArgs {
    pub stage: Stage,
    pub resume: Option<PathBuf>,
    pub stop_after: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub init: Option<PathBuf>,
}

/// Returns `false` when a run stopped before finishing.
pub fn pretrain_cmd(cfg: &Loaded, args: &PretrainArgs) -> Result<bool> {
    let c = &cfg.config;
    let resume_stage = match &args.resume {
        Some(p) => Some(checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?.stage),
        None => None,
    };
    let out = prepare_output(cfg)?;

    let stage1_path = out.join(STAGE1_CHECKPOINT);
    if args.stage == Stage::One && resume_stage == Some(2) {
        bail!("--stage 1 cannot resume a stage 2 checkpoint");
    }
    if matches!(args.stage, Stage::One | Stage::Both) && resume_stage != Some(2) {
        let general = cfg.required(&c.paths.general, "general")?;
        let corpus = load_dir_corpus(&general)?;
        eprintln!("stage 1: {} general images", corpus.len());
        let mut trainer = match &args.resume {
            Some(p) => resumed(p, 1)?,
            None => stage1_trainer(c.model.clone(), &c.stage1, &c.augment)?,
        };
        if !run_and_save(&mut trainer, &corpus, args.stop_after, &stage1_path)? {
            return Ok(false);
        }
    }

    if matches!(args.stage, Stage::Two | Stage::Both) {
        let manifest_path = args.manifest.clone().unwrap_or_else(|| out.join(BALANCED_MANIFEST));
        if !manifest_path.is_file() {
            bail!("stage 2 manifest {} does not exist", manifest_path.display());
        }
        let manifest = DatasetManifest::load(&manifest_path)?;
        let corpus = manifest_tensors(&manifest, &cfg.base)?;
        eprintln!("stage 2: {} remote-sensing samples", corpus.len());
        let mut trainer = match (&args.resume, resume_stage) {
            (Some(p), Some(2)) => resumed(p, 2)?,
            _ => {
                let init = args.init.clone().unwrap_or_else(|| stage1_path.clone());
                if !init.is_file() {
                    bail!("stage 1 checkpoint {} does not exist", init.display());
                }
                let model = checkpoint::load(&init)?.model;
                stage2_trainer(model, &c.stage2, &c.augment, c.freeze_spec()?)?
            }
        };
        if !run_and_save(&mut trainer, &corpus, args.stop_after, &out.join(STAGE2_CHECKPOINT))? {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn probe_cmd(cfg: &Loaded, checkpoints: &[PathBuf], random: bool, shots: &[usize]) -> Result<PathBuf> {
    let c = &cfg.config;
    let eval_path = cfg.required(&c.paths.eval_manifest, "eval_manifest")?;
    let manifest = DatasetManifest::load(&eval_path)?;
    let base = eval_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let images = manifest_tensors(&manifest, &base)?;
    let labels: Vec<usize> = manifest
        .records
        .iter()
        .map(|r| manifest.taxonomy.iter().position(|c| *c == r.label).expect("taxonomy covers records"))
        .collect();

    let out = prepare_output(cfg)?;
    let checkpoints: Vec<PathBuf> = if checkpoints.is_empty() {
        [STAGE1_CHECKPOINT, STAGE2_CHECKPOINT]
            .iter()
            .map(|n| out.join(n))
            .filter(|p| p.is_file())
            .collect()
    } else {
        checkpoints.to_vec()
    };
    let mut models: Vec<(String, Model)> = Vec::new();
    if random {
        models.push(("random".into(), Model::init(c.model.clone(), init_seed(c.stage1.seed))?));
    }
    for p in &checkpoints {
        if !p.is_file() {
            bail!("checkpoint {} does not exist", p.display());
        }
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        models.push((name, checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?.model));
    }
    if models.is_empty() {
        bail!("nothing to probe: pass --checkpoint or --random, or run pretrain first");
    }
    let inits: Vec<(String, Option<&Model>)> = models.iter().map(|(n, m)| (n.clone(), Some(m))).collect();
    let shots = if shots.is_empty() { &c.probe.shots[..] } else { shots };
    let rows = compare_inits(&inits, &images, &labels, shots, &c.probe.seeds, &c.probe_config())?;
    let report = out.join(PROBE_REPORT);
    std::fs::write(&report, report_csv(&rows))?;
    print!("{}", summary_table(&rows));
    Ok(report)
}

pub struct GradcheckArgs {
    pub blocks: usize,
    pub seed: u64,
    pub cases: usize,
    pub floor: Option<f64>,
    pub corrupt: Option<usize>,
}

/// Prints one line per tensor and case; returns whether every check passed.
pub fn gradcheck_cmd(args: &GradcheckArgs) -> Result<bool> {
    let mut cfg = GradcheckConfig::default();
    if let Some(f) = args.floor {
        cfg.scale_floor = f;
    }
    let mut all = true;
    let corrupt = args.corrupt.map(|i| {
        move |g: &mut Grads| {
            if let Some(first) = g.tensors.get_mut(i).and_then(|t| t.first_mut()) {
                *first += 1e-2;
            }
        }
    });
    let hook = corrupt.as_ref().map(|f| f as &dyn Fn(&mut Grads));
    let mut stdout = std::io::stdout().lock();
    for case in 0..args.cases {
        let (model, views) = random_case(args.seed + case as u64, args.blocks, 1e-4)?;
        let report = gradcheck(&model, &views, &cfg, hook)?;
        for t in &report.tensors {
            writeln!(
                stdout,
                "case {case} {:<14} max_rel_err {:.3e} {}",
                t.name,
                t.max_rel_err,
                if t.passed { "pass" } else { "FAIL" }
            )?;
        }
        all &= report.passed;
    }
    writeln!(stdout, "gradcheck {}", if all { "passed" } else { "failed" })?;
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    LearningPath,
    Sampling,
}

pub fn ablate_cmd(kind: Ablation, probe_seeds: usize, pretrain_seeds: usize, out: &Path) -> Result<PathBuf> {
    let cfg = AblationConfig {
        probe_seeds: (0..probe_seeds as u64).collect(),
        ..Default::default()
    };
    let probe = tov_core::probe::ProbeConfig::default();
    let (rows, name) = match kind {
        Ablation::LearningPath => (learning_path(&cfg, &probe)?, "learning_path.csv"),
        Ablation::Sampling => {
            let seeds: Vec<u64> = (0..pretrain_seeds as u64).collect();
            (sampling_method(&cfg, &seeds, &probe)?, "sampling_method.csv")
        }
    };
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    std::fs::write(&path, report_csv(&rows))?;
    print!("{}", summary_table(&rows));
    Ok(path)
}


#[cfg(test)]
mod tests {
    use super::*;
    use tov_core::geo_raster::save_raster;
    use tov_core::GeoTransform;

    #[test]
    fn corpus_scan_recurses_in_path_order() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("b/c")).unwrap();
        for (name, v) in [("b/c/z.png", 30u8), ("a.png", 10), ("b/y.png", 20)] {
            let r = GeoRaster::new(2, 2, 3, vec![v; 12], GeoTransform::IDENTITY).unwrap();
            save_raster(&r, &tmp.path().join(name)).unwrap();
        }
        std::fs::write(tmp.path().join("notes.txt"), "skip").unwrap();
        let corpus = load_dir_corpus(tmp.path()).unwrap();
        let firsts: Vec<f64> = corpus.iter().map(|t| (t.data()[0] * 255.0).round()).collect();
        assert_eq!(firsts, vec![10.0, 30.0, 20.0]);
    }
}
