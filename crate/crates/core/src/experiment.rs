//! Comparative experiments over a train/test split.
//!
//! | id | what runs |
//! |----|-----------|
//! | E1 | environment → layout, paired objective |
//! | E2 | environment → layout, unpaired objective |
//! | E3 | as E2, inputs masked to the site interior |
//! | E4 | unconditional denoiser sampling (strength 1) |
//! | E5 | denoiser refinement started from the encoded layout |
//! | E6 | denoiser refinement of the generated scheme |
//!
//! E4 and E5 stand in for text-prompted and layout-initialized image
//! synthesis: the denoiser has no text encoder, so the prompt is recorded
//! but does not condition anything.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::diffusion::{self, RefineParams};
use crate::error::{Error, Result};
use crate::gan::{self, mask_to_site, Task, TrainConfig};
use crate::legend::Legend;
use crate::metrics::{self, mean_present};
use crate::raster::{encode_classmap, quantize_to_classes, RasterImage};
use crate::synthcity::{Corpus, SceneQuad};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [Self::E1, Self::E2, Self::E3, Self::E4, Self::E5, Self::E6];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown experiment `{s}` (expected E1..E6)")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::E1 => "E1",
            Self::E2 => "E2",
            Self::E3 => "E3",
            Self::E4 => "E4",
            Self::E5 => "E5",
            Self::E6 => "E6",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::E1 => "layout from full environment, paired (pix2pix) objective",
            Self::E2 => "layout from full environment, unpaired (CycleGAN) objective",
            Self::E3 => "layout from site-interior environment only, unpaired objective",
            Self::E4 => "unconditional denoiser sampling; stands in for text-only synthesis (no text encoder)",
            Self::E5 => "denoiser refinement initialized from the encoded layout; stands in for layout-based image-to-image synthesis",
            Self::E6 => "denoiser refinement of the generated design scheme",
        }
    }

    fn layout_task(self) -> Option<(Task, bool)> {
        match self {
            Self::E1 => Some((Task::EnvToLayoutSupervised, false)),
            Self::E2 => Some((Task::EnvToLayoutUnpaired, false)),
            Self::E3 => Some((Task::EnvToLayoutUnpaired, true)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub refine_strength: f64,
    pub seed: u64,
    /// Required by E4–E6.
    pub denoiser: Option<PathBuf>,
    /// Required by E6.
    pub scheme_gen: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            refine_strength: 0.5,
            seed: 0,
            denoiser: None,
            scheme_gen: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::config(format!("experiment config: {e}")))?;
        if let Some(b) = base {
            for p in [&mut c.denoiser, &mut c.scheme_gen].into_iter().flatten() {
                if p.is_relative() {
                    *p = b.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_toml(&text, path.parent())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub seed: u64,
    pub metrics: IndexMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    pub description: String,
    pub scenes: Vec<SceneResult>,
    /// Mean of each metric over the scenes where it is defined.
    pub aggregate: IndexMap<String, Option<f64>>,
}

impl ExperimentReport {
    fn new(id: ExperimentId, scenes: Vec<SceneResult>) -> Self {
        let mut aggregate = IndexMap::new();
        if let Some(first) = scenes.first() {
            for k in first.metrics.keys() {
                aggregate.insert(k.clone(), mean_present(scenes.iter().map(|s| s.metrics[k])));
            }
        }
        Self {
            id,
            description: id.description().into(),
            scenes,
            aggregate,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).copied().flatten()
    }

    pub fn scene_seeds(&self) -> Vec<u64> {
        self.scenes.iter().map(|s| s.seed).collect()
    }

    /// Writes `report.json` and a per-scene `scenes.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(self).expect("report serializes"))
            .map_err(|e| Error::io(&json, e))?;
        let csv_path = dir.join("scenes.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?;
        let keys: Vec<&String> = self.aggregate.keys().collect();
        let header = std::iter::once("seed").chain(keys.iter().map(|k| k.as_str()));
        w.write_record(header).map_err(|e| Error::data(e.to_string()))?;
        for s in &self.scenes {
            let row = std::iter::once(s.seed.to_string())
                .chain(keys.iter().map(|k| s.metrics[*k].map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(row).map_err(|e| Error::data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("report.json");
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
            _ => Error::io(&path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

/// Input the layout generator sees for a scene.
pub fn layout_input(scene: &SceneQuad, interior_only: bool) -> Result<RasterImage> {
    if interior_only {
        encode_classmap(&mask_to_site(&scene.environment)?)
    } else {
        encode_classmap(&scene.environment)
    }
}

/// Layout metrics for one generated image against the scene's ground truth.
fn layout_metrics(generated: &RasterImage, scene: &SceneQuad) -> Result<IndexMap<String, Option<f64>>> {
    let layout = quantize_to_classes(generated, scene.layout.legend())?;
    let report = metrics::layout_report(&layout, &scene.environment, Some(&scene.layout))?;
    let mut m = IndexMap::new();
    m.insert("pixel_accuracy".into(), Some(metrics::confusion(&layout, &scene.layout)?.accuracy()));
    m.insert("histogram_distance".into(), report.histogram_distance);
    m.insert("boundary_noise".into(), Some(report.boundary_noise));
    m.insert("road_connectivity".into(), report.road_connectivity);
    m.insert("entrance_count".into(), Some(report.entrance_count as f64));
    m.insert("true_entrance_count".into(), Some(scene.entrance_sides.len() as f64));
    Ok(m)
}

/// Scheme-image metrics: quantized to the park legend and compared with the
/// scene's layout, plus raw L1 to the reference rendering.
fn scheme_metrics(img: &RasterImage, scene: &SceneQuad) -> Result<IndexMap<String, Option<f64>>> {
    let legend = Arc::new(Legend::park());
    let q = quantize_to_classes(img, &legend)?;
    let l1 = img
        .data()
        .iter()
        .zip(scene.scheme.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / img.data().len() as f64;
    let mut m = IndexMap::new();
    m.insert("boundary_noise".into(), Some(metrics::boundary_noise(&q)));
    m.insert("pixel_accuracy".into(), Some(metrics::confusion(&q, &scene.layout)?.accuracy()));
    m.insert("histogram_distance".into(), Some(metrics::histogram_distance(&q, &scene.layout)?));
    m.insert("road_connectivity".into(), metrics::road_connectivity(&q));
    m.insert("scheme_l1".into(), Some(l1));
    Ok(m)
}

fn require(path: &Option<PathBuf>, what: &str, id: ExperimentId) -> Result<Checkpoint> {
    let p = path
        .as_ref()
        .ok_or_else(|| Error::config(format!("{} needs a {what} checkpoint", id.name())))?;
    Checkpoint::load(p)
}

/// Runs one experiment: E1–E3 train on `train` and evaluate on `test`;
/// E4–E6 use the checkpoints named in `config`. Trained models and the
/// report go under `out` when given.
pub fn run_experiment(
    id: ExperimentId,
    train: &Corpus,
    test: &Corpus,
    config: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<ExperimentReport> {
    if test.is_empty() {
        return Err(Error::data("experiment needs at least one test scene"));
    }
    let scenes = if let Some((task, interior_only)) = id.layout_task() {
        let tc = TrainConfig {
            interior_only,
            ..config.train.clone()
        };
        let model = gan::train(task, train, &tc, None, out.map(|d| d.join("model")).as_deref())?;
        test.scenes
            .iter()
            .map(|s| {
                let generated = gan::infer(&model.generator, &layout_input(s, interior_only)?)?;
                Ok(SceneResult {
                    seed: s.seed,
                    metrics: layout_metrics(&generated, s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let denoiser = require(&config.denoiser, "denoiser", id)?;
        let sched = diffusion::checkpoint_schedule(&denoiser)?;
        let scheme_gen = match id {
            ExperimentId::E6 => Some(require(&config.scheme_gen, "scheme generator", id)?),
            _ => None,
        };
        test.scenes
            .iter()
            .map(|s| {
                let (start, strength) = match id {
                    ExperimentId::E4 => (s.scheme.clone(), 1.0),
                    ExperimentId::E5 => (encode_classmap(&s.layout)?, config.refine_strength),
                    _ => {
                        let g = scheme_gen.as_ref().expect("loaded above");
                        (gan::infer(g, &encode_classmap(&s.layout)?)?, config.refine_strength)
                    }
                };
                let params = RefineParams {
                    strength,
                    seed: config.seed.wrapping_add(s.seed),
                    ..Default::default()
                };
                let img = diffusion::refine(&start, &params, &denoiser, &sched)?;
                Ok(SceneResult {
                    seed: s.seed,
                    metrics: scheme_metrics(&img, s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let report = ExperimentReport::new(id, scenes);
    if let Some(dir) = out {
        report.save(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{train_denoiser, DenoiserConfig};
    use crate::synthcity::{generate_corpus, SceneParams};

    fn tiny() -> (Corpus, Corpus) {
        let p = SceneParams {
            canvas_size: 32,
            park_rect: crate::synthcity::Rect { x: 8, y: 8, w: 16, h: 16 },
            park_jitter: 1,
            road_grid_spacing: 12,
            ..Default::default()
        };
        let c = generate_corpus(5, 3, &p).unwrap();
        crate::synthcity::split_corpus(&c, 0.6).unwrap()
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            gen_width: 4,
            disc_width: 4,
            disc_depth: 2,
            unet_depth: 2,
            resnet_blocks: 1,
            ..Default::default()
        }
    }

    #[test]
    fn ids_parse() {
        assert_eq!(ExperimentId::parse("e3").unwrap(), ExperimentId::E3);
        assert!(matches!(ExperimentId::parse("E7"), Err(Error::Config(_))));
    }

    #[test]
    fn layout_experiments_share_test_scenes() {
        let (train, test) = tiny();
        let cfg = ExperimentConfig { train: tiny_train(), ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let e1 = run_experiment(ExperimentId::E1, &train, &test, &cfg, Some(dir.path())).unwrap();
        let e2 = run_experiment(ExperimentId::E2, &train, &test, &cfg, None).unwrap();
        assert_eq!(e1.scene_seeds(), e2.scene_seeds());
        assert_eq!(e1.scenes.len(), test.len());
        assert!(e1.mean("pixel_accuracy").is_some());
        assert_eq!(ExperimentReport::load(dir.path()).unwrap(), e1);
        let csv = std::fs::read_to_string(dir.path().join("scenes.csv")).unwrap();
        assert_eq!(csv.lines().count(), test.len() + 1);
        assert!(dir.path().join("model/G.ckpt").exists());
    }

    #[test]
    fn interior_input_differs_only_outside_site() {
        let (_, test) = tiny();
        for s in &test.scenes {
            let (full, masked) = (layout_input(s, false).unwrap(), layout_input(s, true).unwrap());
            let site = Legend::environment().ids_with_role(crate::legend::Role::Mask)[0];
            for y in 0..full.height() {
                for x in 0..full.width() {
                    if s.environment.get(x, y) == site {
                        assert_eq!(full.pixel(x, y), masked.pixel(x, y));
                    }
                }
            }
            assert_ne!(full, masked);
        }
    }

    #[test]
    fn refinement_experiments_need_checkpoints() {
        let (train, test) = tiny();
        let cfg = ExperimentConfig { train: tiny_train(), ..Default::default() };
        assert!(matches!(run_experiment(ExperimentId::E4, &train, &test, &cfg, None), Err(Error::Config(_))));

        let dir = tempfile::tempdir().unwrap();
        let imgs: Vec<RasterImage> = train.scenes.iter().map(|s| s.scheme.clone()).collect();
        let dc = DenoiserConfig { epochs: 0, base_width: 4, depth: 1, time_embedding_dim: 8, ..Default::default() };
        let (ck, _) = train_denoiser(&imgs, &dc).unwrap();
        let dpath = dir.path().join("d.ckpt");
        ck.save(&dpath).unwrap();
        let cfg = ExperimentConfig { denoiser: Some(dpath), refine_strength: 0.05, ..cfg };
        let e5 = run_experiment(ExperimentId::E5, &train, &test, &cfg, None).unwrap();
        assert_eq!(e5.scenes.len(), test.len());
        assert!(e5.mean("boundary_noise").is_some());
        assert!(matches!(run_experiment(ExperimentId::E6, &train, &test, &cfg, None), Err(Error::Config(_))));
    }
}
