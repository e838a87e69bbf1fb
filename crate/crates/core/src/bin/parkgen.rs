use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use parkgen::checkpoint::Checkpoint;
use parkgen::diffusion::{self, DenoiserConfig};
use parkgen::experiment::{run_experiment, ExperimentConfig, ExperimentId, ExperimentReport};
use parkgen::gan::{self, Task, TrainConfig};
use parkgen::imageio::{read_classmap, read_rgb, write_classmap, write_rgb};
use parkgen::pipeline::{load_run, run_pipeline, PipelineConfig};
use parkgen::{
    generate_corpus, metrics, quantize_to_classes, split_corpus, tile, Corpus, Error, Legend, Result, SceneParams,
    TileSpec,
};

#[derive(Parser)]
#[command(name = "parkgen", version, about = "Park design generation from remote-sensing tiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LegendArg {
    Park,
    Environment,
}

impl LegendArg {
    fn legend(self) -> Arc<Legend> {
        Arc::new(match self {
            LegendArg::Park => Legend::park(),
            LegendArg::Environment => Legend::environment(),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene corpus.
    SynthData {
        #[arg(long, default_value_t = 200)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene parameters (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tile an external PNG, optionally quantizing tiles to a legend.
    Prepare {
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        tile_size: usize,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_enum)]
        quantize: Option<LegendArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a translation task or the denoiser on a corpus directory.
    Train {
        /// seg_extract, env_to_layout_supervised, env_to_layout_unpaired, layout_to_scheme or denoiser.
        #[arg(long)]
        task: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction of scenes used for training; the rest feeds held-out metrics.
        #[arg(long, default_value_t = 1.0)]
        split: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a generator or denoiser checkpoint on one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long)]
        tile_size: Option<usize>,
        /// Refinement strength (denoiser checkpoints only).
        #[arg(long, default_value_t = 0.3)]
        strength: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        quantize: Option<LegendArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full remote image → final plan pipeline.
    Pipeline {
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tile_size: Option<usize>,
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long)]
        upscale: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one comparative experiment (E1..E6) on a corpus split.
    Experiment {
        id: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a predicted class-map PNG with a reference.
    Evaluate {
        pred: PathBuf,
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "park")]
        legend: LegendArg,
        /// Environment map for entrance counting (park legend only).
        #[arg(long)]
        environment: Option<PathBuf>,
    },
    /// Summarize a pipeline run or experiment directory.
    Report { dir: PathBuf },
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// A config path that does not exist is a configuration problem, not a data one.
fn config_missing(e: Error) -> Error {
    match e {
        Error::MissingFile(p) => Error::config(format!("missing config {}", p.display())),
        other => other,
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { scenes, seed, config, out } => {
            let params: SceneParams = match config {
                Some(p) => toml::from_str(&read_config(&p)?).map_err(|e| Error::config(e.to_string()))?,
                None => SceneParams::default(),
            };
            let corpus = generate_corpus(scenes, seed, &params)?;
            corpus.save(&out)?;
            let names: Vec<String> = Legend::park().entries.iter().map(|e| e.name.clone()).collect();
            println!("wrote {} scenes to {}", corpus.len(), out.display());
            for (n, f) in names.iter().zip(&corpus.manifest.layout_histogram) {
                println!("  {n:<20} {f:.4}");
            }
        }
        Command::Prepare { input, tile_size, stride, quantize, out } => {
            let img = read_rgb(&input)?;
            let spec = TileSpec::new(tile_size, stride.unwrap_or(tile_size))?;
            let tiles = tile(&img, spec)?;
            for (t, o) in &tiles {
                let path = out.join(format!("tile_{:05}_{:05}.png", o.y, o.x));
                match quantize {
                    Some(l) => write_classmap(&path, &quantize_to_classes(t, &l.legend())?)?,
                    None => write_rgb(&path, t)?,
                }
            }
            println!("wrote {} tiles to {}", tiles.len(), out.display());
        }
        Command::Train { task, corpus, config, seed, split, out } => {
            let gan_task = (task != "denoiser").then(|| Task::parse(&task)).transpose()?;
            let text = config.map(|p| read_config(&p)).transpose()?.unwrap_or_default();
            let corpus = Corpus::load(&corpus)?;
            let (train, eval) = if split < 1.0 {
                let (a, b) = split_corpus(&corpus, split)?;
                (a, Some(b))
            } else {
                (corpus, None)
            };
            if let Some(task) = gan_task {
                let mut cfg = TrainConfig::from_toml(&text)?;
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let model = gan::train(task, &train, &cfg, eval.as_ref(), Some(&out))?;
                print!("{}", model.history.summary());
            } else {
                let mut cfg = DenoiserConfig::from_toml(&text)?;
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let imgs: Vec<_> = train.scenes.iter().map(|s| s.scheme.clone()).collect();
                let (ck, hist) = diffusion::train_denoiser(&imgs, &cfg)?;
                ck.save(&out.join("denoiser.ckpt"))?;
                hist.write_csv(&out.join("history.csv"))?;
                if let Some(e) = eval {
                    let imgs: Vec<_> = e.scenes.iter().map(|s| s.scheme.clone()).collect();
                    println!("held-out eps_mse: {:.6}", diffusion::denoiser_loss(&ck, &imgs, cfg.seed)?);
                }
                print!("{}", hist.summary());
            }
            println!("saved to {}", out.display());
        }
        Command::Infer { checkpoint, input, tile_size, strength, seed, quantize, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let img = read_rgb(&input)?;
            let result = if ck.arch.kind == parkgen::nets::ArchKind::DiffusionUnet {
                let sched = diffusion::checkpoint_schedule(&ck)?;
                let params = diffusion::RefineParams { strength, seed, ..Default::default() };
                diffusion::refine(&img, &params, &ck, &sched)?
            } else {
                match tile_size {
                    Some(t) if img.dims() != (t, t) => gan::infer_tiled(&ck, &img, TileSpec::square(t))?,
                    _ => gan::infer(&ck, &img)?,
                }
            };
            match quantize {
                Some(l) => write_classmap(&out, &quantize_to_classes(&result, &l.legend())?)?,
                None => write_rgb(&out, &result)?,
            }
            println!("wrote {}", out.display());
        }
        Command::Pipeline { input, config, seed, tile_size, strength, upscale, out } => {
            let mut cfg = PipelineConfig::load(&config).map_err(config_missing)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = tile_size {
                cfg.tile_size = t;
            }
            if let Some(s) = strength {
                cfg.refine_strength = s;
            }
            if let Some(u) = upscale {
                cfg.upscale = u;
            }
            let run = run_pipeline(&input, &cfg, &out)?;
            println!("run {} in {}", run.run_id, out.join(&run.run_id).display());
            for s in &run.stages {
                println!("  {:<22} {:>8.2}s  {}", s.name, s.wall_seconds, s.file.display());
            }
            print_json(&run.metrics);
        }
        Command::Experiment { id, corpus, config, seed, strength, split, out } => {
            let id = ExperimentId::parse(&id)?;
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p).map_err(config_missing)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.train.seed = s;
            }
            if let Some(s) = strength {
                cfg.refine_strength = s;
            }
            let corpus = Corpus::load(&corpus)?;
            let (train, test) = split_corpus(&corpus, split)?;
            let report = run_experiment(id, &train, &test, &cfg, Some(&out))?;
            println!("{} {}: {} test scenes", id.name(), report.description, report.scenes.len());
            print_json(&report.aggregate);
        }
        Command::Evaluate { pred, truth, legend, environment } => {
            let lg = legend.legend();
            let (p, t) = (read_classmap(&pred, &lg)?, read_classmap(&truth, &lg)?);
            let cm = metrics::confusion(&p, &t)?;
            let mut out = serde_json::json!({
                "accuracy": cm.accuracy(),
                "mean_iou": cm.mean_iou(),
                "majority_baseline": cm.majority_baseline(),
                "worst_confusion": cm.worst_confusion().map(|(a, b, f)| serde_json::json!({
                    "truth": lg.entries[a].name, "pred": lg.entries[b].name, "fraction": f
                })),
                "boundary_noise": metrics::boundary_noise(&p),
                "histogram_distance": metrics::histogram_distance(&p, &t)?,
                "road_connectivity": metrics::road_connectivity(&p),
                "counts": cm.counts,
            });
            if let Some(env) = environment {
                let env = read_classmap(&env, &Arc::new(Legend::environment()))?;
                out["entrance_count"] = metrics::entrance_count(&p, &env)?.into();
            }
            print_json(&out);
        }
        Command::Report { dir } => {
            if dir.join(parkgen::pipeline::MANIFEST_FILE).exists() {
                let run = load_run(&dir)?;
                println!("pipeline run {} (artifacts verified)", run.run_id);
                for s in &run.stages {
                    println!("  {:<22} {:>8.2}s  {}", s.name, s.wall_seconds, s.file.display());
                }
                print_json(&run.metrics);
            } else {
                let mut found = 0;
                let mut dirs: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .map_err(|e| Error::data(format!("{}: {e}", dir.display())))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .chain([dir.clone()])
                    .filter(|p| p.join("report.json").exists())
                    .collect();
                dirs.sort();
                for d in dirs {
                    let r = ExperimentReport::load(&d)?;
                    found += 1;
                    println!("{} ({} scenes): {}", r.id.name(), r.scenes.len(), r.description);
                    for (k, v) in &r.aggregate {
                        match v {
                            Some(v) => println!("  {k:<22} {v:.4}"),
                            None => println!("  {k:<22} n/a"),
                        }
                    }
                }
                if found == 0 {
                    return Err(Error::MissingFile(dir.join("report.json")));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
