//! End-to-end run: remote image → environment map → layout → scheme →
//! refined, upscaled plan. Stages hand over PNG files, and every run writes a
//! checksummed manifest next to its artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::diffusion::{self, NoiseSchedule, RefineParams};
use crate::error::{Error, Result};
use crate::gan;
use crate::imageio::{read_classmap, read_rgb, write_classmap, write_rgb};
use crate::legend::Legend;
use crate::metrics;
use crate::nets::ArchKind;
use crate::raster::{quantize_to_classes, RasterImage};
use crate::tile::TileSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Stage names in execution order, with the file each one writes.
pub const STAGES: [(&str, &str); 9] = [
    ("seg_extract", "01_environment_raw.png"),
    ("quantize_environment", "02_environment.png"),
    ("layout_gen", "03_layout_raw.png"),
    ("quantize_layout", "04_layout.png"),
    ("scheme_gen", "05_scheme.png"),
    ("pad_canvas", "06_canvas.png"),
    ("refine", "07_refined_canvas.png"),
    ("crop", "08_refined.png"),
    ("upscale", "09_final.png"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seg_extract: PathBuf,
    pub layout_gen: PathBuf,
    pub scheme_gen: PathBuf,
    pub denoiser: PathBuf,
    pub tile_size: usize,
    /// 0 means non-overlapping tiles.
    pub tile_stride: usize,
    pub refine_strength: f64,
    pub prompt: String,
    /// White margin added on each side before refinement, as a fraction of the side.
    pub canvas_margin: f64,
    pub upscale: usize,
    pub upscale_strength: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seg_extract: "models/seg_extract/G.ckpt".into(),
            layout_gen: "models/env_to_layout_unpaired/G.ckpt".into(),
            scheme_gen: "models/layout_to_scheme/G.ckpt".into(),
            denoiser: "models/denoiser/denoiser.ckpt".into(),
            tile_size: 64,
            tile_stride: 0,
            refine_strength: 0.3,
            prompt: RefineParams::default().prompt,
            canvas_margin: 0.25,
            upscale: 8,
            upscale_strength: 0.03,
            seed: 0,
        }
    }
}

/// Checkpoints a validated config points at.
pub struct PipelineModels {
    pub seg_extract: Checkpoint,
    pub layout_gen: Checkpoint,
    pub scheme_gen: Checkpoint,
    pub denoiser: Checkpoint,
    pub schedule: NoiseSchedule,
}

impl PipelineConfig {
    /// Parses TOML; relative checkpoint paths resolve against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::config(format!("pipeline config: {e}")))?;
        if let Some(b) = base {
            for p in [&mut c.seg_extract, &mut c.layout_gen, &mut c.scheme_gen, &mut c.denoiser] {
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

    pub fn tile_spec(&self) -> Result<TileSpec> {
        let stride = if self.tile_stride == 0 { self.tile_size } else { self.tile_stride };
        TileSpec::new(self.tile_size, stride)
    }

    fn check_params(&self) -> Result<()> {
        if self.upscale == 0 || !self.upscale.is_power_of_two() {
            return Err(Error::config(format!("upscale must be a power of 2, got {}", self.upscale)));
        }
        for (name, v) in [("refine_strength", self.refine_strength), ("upscale_strength", self.upscale_strength)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.canvas_margin >= 0.0 && self.canvas_margin.is_finite()) {
            return Err(Error::config("canvas_margin must be ≥ 0"));
        }
        self.tile_spec().map_err(|e| Error::config(e.to_string()))?;
        Ok(())
    }

    /// Checks parameters and loads every checkpoint, verifying each has the
    /// architecture its stage needs.
    pub fn validate(&self) -> Result<PipelineModels> {
        self.check_params()?;
        let generator = |path: &Path, stage: &str| -> Result<Checkpoint> {
            let c = Checkpoint::load(path)?;
            let a = &c.arch;
            if !matches!(a.kind, ArchKind::UnetGen | ArchKind::ResnetGen) || a.in_channels != 3 || a.out_channels != 3 {
                return Err(Error::config(format!(
                    "{stage} checkpoint {} is a {:?} {}→{}, not an RGB generator",
                    path.display(),
                    a.kind,
                    a.in_channels,
                    a.out_channels
                )));
            }
            Ok(c)
        };
        let seg_extract = generator(&self.seg_extract, "seg_extract")?;
        let layout_gen = generator(&self.layout_gen, "layout_gen")?;
        let scheme_gen = generator(&self.scheme_gen, "scheme_gen")?;
        let denoiser = Checkpoint::load(&self.denoiser)?;
        if denoiser.arch.kind != ArchKind::DiffusionUnet {
            return Err(Error::config(format!("{} is not a denoiser checkpoint", self.denoiser.display())));
        }
        let schedule = diffusion::checkpoint_schedule(&denoiser)?;
        Ok(PipelineModels {
            seg_extract,
            layout_gen,
            scheme_gen,
            denoiser,
            schedule,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Relative to the run directory.
    pub file: PathBuf,
    pub sha256: String,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub input: PathBuf,
    pub input_sha256: String,
    pub stages: Vec<StageRecord>,
    pub metrics: IndexMap<String, Option<f64>>,
    pub config: PipelineConfig,
    pub seeds: IndexMap<String, u64>,
}

impl PipelineRun {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Hash of the input bytes, the config and every checkpoint it references.
fn run_id(input_sha: &str, config: &PipelineConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(input_sha.as_bytes());
    h.update(toml::to_string(config).expect("config serializes").as_bytes());
    for p in [&config.seg_extract, &config.layout_gen, &config.scheme_gen, &config.denoiser] {
        h.update(sha256_file(p)?.as_bytes());
    }
    Ok(hex::encode(h.finalize())[..16].to_string())
}

struct Runner<'a> {
    dir: &'a Path,
    run: PipelineRun,
    next: usize,
}

impl Runner<'_> {
    /// Runs the next stage, persists its output and records it.
    fn stage(&mut self, f: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        let (name, file) = STAGES[self.next];
        self.next += 1;
        let path = self.dir.join(file);
        let t = Instant::now();
        f(&path).map_err(|e| Error::Stage {
            stage: name.into(),
            source: Box::new(e),
        })?;
        self.run.stages.push(StageRecord {
            name: name.into(),
            file: file.into(),
            sha256: sha256_file(&path)?,
            wall_seconds: t.elapsed().as_secs_f64(),
        });
        Ok(path)
    }
}

fn generate(ck: &Checkpoint, img: &RasterImage, spec: TileSpec) -> Result<RasterImage> {
    if img.dims() == (spec.tile_size, spec.tile_size) {
        gan::infer(ck, img)
    } else {
        gan::infer_tiled(ck, img, spec)
    }
}

/// Runs every stage on the PNG at `input`, writing artifacts and the
/// manifest into `out/<run id>/`.
pub fn run_pipeline(input: &Path, config: &PipelineConfig, out: &Path) -> Result<PipelineRun> {
    let models = config.validate()?;
    let spec = config.tile_spec()?;
    let input_sha256 = sha256_file(input)?;
    let id = run_id(&input_sha256, config)?;
    let dir = out.join(&id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let env_legend = Arc::new(Legend::environment());
    let park_legend = Arc::new(Legend::park());
    let mut seeds = IndexMap::new();
    seeds.insert("refine".to_string(), config.seed);
    seeds.insert("upscale".to_string(), config.seed.wrapping_add(1));
    let mut r = Runner {
        dir: &dir,
        run: PipelineRun {
            run_id: id,
            input: input.to_path_buf(),
            input_sha256,
            stages: Vec::new(),
            metrics: IndexMap::new(),
            config: config.clone(),
            seeds: seeds.clone(),
        },
        next: 0,
    };

    let env_raw = r.stage(|p| write_rgb(p, &generate(&models.seg_extract, &read_rgb(input)?, spec)?))?;
    let env = r.stage(|p| write_classmap(p, &quantize_to_classes(&read_rgb(&env_raw)?, &env_legend)?))?;
    let layout_raw = r.stage(|p| write_rgb(p, &generate(&models.layout_gen, &read_rgb(&env)?, spec)?))?;
    let layout = r.stage(|p| write_classmap(p, &quantize_to_classes(&read_rgb(&layout_raw)?, &park_legend)?))?;
    let scheme = r.stage(|p| write_rgb(p, &generate(&models.scheme_gen, &read_rgb(&layout)?, spec)?))?;
    let mut crop = None;
    let canvas = r.stage(|p| {
        let (c, k) = diffusion::pad_canvas(&read_rgb(&scheme)?, config.canvas_margin)?;
        crop = Some(k);
        write_rgb(p, &c)
    })?;
    let refined_canvas = r.stage(|p| {
        let params = RefineParams {
            strength: config.refine_strength,
            prompt: config.prompt.clone(),
            seed: seeds["refine"],
        };
        write_rgb(p, &diffusion::refine(&read_rgb(&canvas)?, &params, &models.denoiser, &models.schedule)?)
    })?;
    let crop = crop.expect("pad stage records its crop");
    let refined = r.stage(|p| write_rgb(p, &crop.apply(&read_rgb(&refined_canvas)?)?))?;
    let last = r.stage(|p| {
        let up = diffusion::upscale(
            &read_rgb(&refined)?,
            config.upscale,
            config.upscale_strength,
            seeds["upscale"],
            Some(&models.denoiser),
            Some(&models.schedule),
        )?;
        write_rgb(p, &up)
    })?;

    let env_map = read_classmap(&env, &env_legend)?;
    let layout_map = read_classmap(&layout, &park_legend)?;
    // An extracted environment without site pixels leaves the site metrics undefined.
    let report = match metrics::layout_report(&layout_map, &env_map, None) {
        Ok(r) => Some(r),
        Err(Error::Structural(_)) => None,
        Err(e) => return Err(e),
    };
    let scheme_map = quantize_to_classes(&read_rgb(&scheme)?, &park_legend)?;
    let final_img = read_rgb(&last)?;
    let final_map = quantize_to_classes(&final_img, &park_legend)?;
    let m = &mut r.run.metrics;
    m.insert("layout_road_connectivity".into(), report.as_ref().and_then(|r| r.road_connectivity));
    m.insert("layout_boundary_noise".into(), Some(metrics::boundary_noise(&layout_map)));
    m.insert("layout_entrance_count".into(), report.as_ref().map(|r| r.entrance_count as f64));
    m.insert("scheme_boundary_noise".into(), Some(metrics::boundary_noise(&scheme_map)));
    m.insert("final_boundary_noise".into(), Some(metrics::boundary_noise(&final_map)));
    m.insert(
        "final_to_scheme_pixel_ratio".into(),
        Some(final_img.pixel_count() as f64 / scheme_map.data().len() as f64),
    );
    save_run(&r.run, &dir)?;
    Ok(r.run)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    checksum: String,
    run: PipelineRun,
}

fn run_checksum(run: &PipelineRun) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(run).expect("run serializes")))
}

/// Writes `dir/manifest.json` atomically.
pub fn save_run(run: &PipelineRun, dir: &Path) -> Result<()> {
    let m = Manifest {
        schema_version: MANIFEST_VERSION,
        checksum: run_checksum(run),
        run: run.clone(),
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    let dst = dir.join(MANIFEST_FILE);
    std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
}

/// Reads a run directory, verifying the manifest checksum and every
/// artifact's hash.
pub fn load_run(dir: &Path) -> Result<PipelineRun> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
        _ => Error::io(&path, e),
    })?;
    #[derive(Deserialize)]
    struct Header {
        schema_version: u32,
    }
    let bad = |e: serde_json::Error| Error::data(format!("{}: {e}", path.display()));
    let header: Header = serde_json::from_str(&text).map_err(bad)?;
    if header.schema_version != MANIFEST_VERSION {
        return Err(Error::Version {
            found: header.schema_version,
            expected: MANIFEST_VERSION,
        });
    }
    // Parsed straight from text: a `Value` round trip would reorder the maps.
    let m: Manifest = serde_json::from_str(&text).map_err(bad)?;
    if run_checksum(&m.run) != m.checksum {
        return Err(Error::Integrity(format!("{}: manifest checksum mismatch", path.display())));
    }
    for s in &m.run.stages {
        let f = dir.join(&s.file);
        if sha256_file(&f)? != s.sha256 {
            return Err(Error::Integrity(format!("{} does not match its recorded hash", f.display())));
        }
    }
    Ok(m.run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_run() -> PipelineRun {
        let mut metrics = IndexMap::new();
        metrics.insert("layout_road_connectivity".into(), None);
        metrics.insert("final_boundary_noise".into(), Some(0.125));
        PipelineRun {
            run_id: "abc".into(),
            input: "in.png".into(),
            input_sha256: "00".into(),
            stages: vec![StageRecord {
                name: "seg_extract".into(),
                file: "01_environment_raw.png".into(),
                sha256: hex::encode(Sha256::digest(b"pixels")),
                wall_seconds: 0.1 + 0.2,
            }],
            metrics,
            config: PipelineConfig::default(),
            seeds: IndexMap::from([("refine".to_string(), 3)]),
        }
    }

    #[test]
    fn manifest_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("01_environment_raw.png"), b"pixels").unwrap();
        let run = sample_run();
        save_run(&run, dir.path()).unwrap();
        assert_eq!(load_run(dir.path()).unwrap(), run);
        assert!(!dir.path().join("manifest.json.tmp").exists());

        let path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("0.125", "0.126")).unwrap();
        assert!(matches!(load_run(dir.path()), Err(Error::Integrity(_))));

        std::fs::write(&path, text.replace("\"schema_version\": 1", "\"schema_version\": 9")).unwrap();
        assert!(matches!(load_run(dir.path()), Err(Error::Version { found: 9, .. })));

        std::fs::write(&path, &text).unwrap();
        std::fs::write(dir.path().join("01_environment_raw.png"), b"other").unwrap();
        assert!(matches!(load_run(dir.path()), Err(Error::Integrity(_))));

        std::fs::remove_file(dir.path().join("01_environment_raw.png")).unwrap();
        match load_run(dir.path()) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("01_environment_raw.png")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_checks() {
        let c = PipelineConfig::from_toml("upscale = 6\n", None).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = PipelineConfig::from_toml("refine_strength = 2.0\n", None).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = PipelineConfig::from_toml("", Some(Path::new("/base"))).unwrap();
        assert_eq!(c.denoiser, Path::new("/base/models/denoiser/denoiser.ckpt"));
        assert!(matches!(c.validate(), Err(Error::MissingFile(_))));
        assert!(PipelineConfig::from_toml("bogus = [", None).is_err());
        assert!(PipelineConfig::from_toml("upscael = 8", None).is_err());
    }
}
