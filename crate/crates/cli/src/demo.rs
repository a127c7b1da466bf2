//! A small synthetic workspace: a georeferenced scene, its land-cover map and
//! OSM extract, a general-domain image folder, a labelled evaluation mosaic
//! and a config wiring them together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tov_core::geo_raster::{save_raster, NODATA};
use tov_core::osm::{to_xml, OsmDocument, OsmNode, OsmWay, Tags};
use tov_core::ssl::{derive_seed, Tensor};
use tov_core::synth::{general_corpus, toy_augment, toy_category, toy_model_config, Mosaic, TOY_CLASSES};
use tov_core::{GeoRaster, GeoTransform, SourceKind};

use crate::config::{snapshot, PipelineConfig};

#[derive(Debug, Clone)]
pub struct DemoSpec {
    /// Scene tiles per class; the scene is 12 tiles wide.
    pub scene_per_class: usize,
    pub eval_per_class: usize,
    pub general_images: usize,
    pub general_side: usize,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        DemoSpec {
            scene_per_class: 18,
            eval_per_class: 12,
            general_images: 96,
            general_side: 40,
            seed: 0,
        }
    }
}

const TILE: usize = 32;
const COLS: usize = 12;
const ORIGIN: (f64, f64) = (116.30, 39.90);
const PIXEL_DEG: f64 = 1e-5;
const CRS: &str = "EPSG:4326";

/// OSM tag standing in for each man-made toy class.
fn osm_tag(class: usize) -> (&'static str, &'static str) {
    match toy_category(class).name() {
        "Airport" => ("aeroway", "aerodrome"),
        "Parking" => ("amenity", "parking"),
        "School" => ("amenity", "school"),
        _ => ("landuse", "harbour"),
    }
}

fn tensor_raster(t: &Tensor) -> Result<GeoRaster> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut data = vec![0u8; h * w * 3];
    for (i, px) in data.chunks_exact_mut(3).enumerate() {
        for (c, v) in px.iter_mut().enumerate() {
            *v = (t.data()[c * h * w + i] * 255.0).round() as u8;
        }
    }
    Ok(GeoRaster::new(w, h, 3, data, GeoTransform::IDENTITY)?)
}

fn lon_lat(col: f64, row: f64) -> (f64, f64) {
    (ORIGIN.0 + col * PIXEL_DEG, ORIGIN.1 - row * PIXEL_DEG)
}

/// Writes the workspace into `dir` and returns the config path.
pub fn write_demo(dir: &Path, spec: &DemoSpec) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("general")).with_context(|| format!("creating {}", dir.display()))?;

    let mut scene = Mosaic::with_counts(&[spec.scene_per_class; TOY_CLASSES], TILE, COLS, derive_seed(&[spec.seed, 1]))?;
    scene.raster.transform = GeoTransform::north_up(ORIGIN.0, ORIGIN.1, PIXEL_DEG, -PIXEL_DEG);
    scene.raster.crs_tag = CRS.into();
    save_raster(&scene.raster, &dir.join("scene.png"))?;

    // Land cover at half the image resolution; man-made tiles carry no natural class.
    let (lw, lh) = (scene.raster.width() / 2, scene.raster.height() / 2);
    let mut lc = vec![NODATA; lw * lh];
    for (rect, class) in &scene.tiles {
        let cat = toy_category(*class);
        if cat.kind() != SourceKind::Natural {
            continue;
        }
        for r in rect.row0 / 2..rect.row1() / 2 {
            for c in rect.col0 / 2..rect.col1() / 2 {
                lc[r * lw + c] = cat.id() as u8;
            }
        }
    }
    let lc = GeoRaster::new(lw, lh, 1, lc, GeoTransform::north_up(ORIGIN.0, ORIGIN.1, 2.0 * PIXEL_DEG, -2.0 * PIXEL_DEG))?
        .with_crs(CRS);
    save_raster(&lc, &dir.join("landcover.png"))?;

    let mut doc = OsmDocument::default();
    let stamp = Some("2021-06-01T00:00:00Z".to_string());
    let mut next_id = 1i64;
    for (rect, class) in &scene.tiles {
        if toy_category(*class).kind() != SourceKind::ManMade {
            continue;
        }
        let inset = 2.0;
        let (c0, r0) = (rect.col0 as f64 + inset, rect.row0 as f64 + inset);
        let (c1, r1) = (rect.col1() as f64 - inset, rect.row1() as f64 - inset);
        let mut refs = Vec::new();
        for (c, r) in [(c0, r0), (c1, r0), (c1, r1), (c0, r1)] {
            let (lon, lat) = lon_lat(c, r);
            doc.nodes.insert(next_id, OsmNode { lon, lat, tags: Tags::new(), timestamp: stamp.clone() });
            refs.push(next_id);
            next_id += 1;
        }
        refs.push(refs[0]);
        let (k, v) = osm_tag(*class);
        let tags: Tags = BTreeMap::from([(k.to_string(), v.to_string())]);
        doc.ways.insert(next_id, OsmWay { node_refs: refs, tags, timestamp: stamp.clone() });
        next_id += 1;
    }
    // Points whose tags map to no category.
    for (i, (k, v)) in [("amenity", "telephone"), ("shop", "advice"), ("amenity", "phone")].iter().enumerate() {
        let (lon, lat) = lon_lat(40.0 + 100.0 * i as f64, 60.0);
        let tags: Tags = BTreeMap::from([(k.to_string(), v.to_string())]);
        doc.nodes.insert(next_id, OsmNode { lon, lat, tags, timestamp: stamp.clone() });
        next_id += 1;
    }
    std::fs::write(dir.join("scene.osm"), to_xml(&doc))?;

    for (i, img) in general_corpus(spec.general_images, spec.general_side, derive_seed(&[spec.seed, 2]))
        .iter()
        .enumerate()
    {
        save_raster(&tensor_raster(img)?, &dir.join(format!("general/img_{i:04}.png")))?;
    }

    let eval = Mosaic::with_counts(&[spec.eval_per_class; TOY_CLASSES], TILE, COLS, derive_seed(&[spec.seed, 3]))?;
    save_raster(&eval.raster, &dir.join("eval.png"))?;
    eval.manifest("eval.png", "eval", spec.seed).save(&dir.join("eval.jsonl"))?;

    let mut config = PipelineConfig::default();
    config.paths.images = vec!["scene.png".into()];
    config.paths.landcover = Some("landcover.png".into());
    config.paths.osm = Some("scene.osm".into());
    config.paths.general = Some("general".into());
    config.paths.eval_manifest = Some("eval.jsonl".into());
    config.paths.output = "out".into();
    config.segmentation.min_size = 30;
    config.resampling.seed = spec.seed;
    config.model = toy_model_config();
    config.augment = toy_augment();
    for (t, epochs) in [(&mut config.stage1, 10), (&mut config.stage2, 10)] {
        t.epochs = epochs;
        t.batch_size = 16;
        t.seed = spec.seed;
    }
    config.probe.shots = vec![1, 3];
    config.probe.steps = 300;
    config.validate()?;
    let path = dir.join("config.toml");
    std::fs::write(&path, snapshot(&config)?)?;
    Ok(path)
}
