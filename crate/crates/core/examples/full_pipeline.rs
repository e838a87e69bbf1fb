//! Train quick models for every stage, then run the remote image → final
//! plan pipeline on a held-out scene and verify its manifest.
//!
//!     cargo run --release --example full_pipeline -- [epochs]

use parkgen::diffusion::{self, DenoiserConfig};
use parkgen::gan::{self, Task, TrainConfig};
use parkgen::imageio::write_rgb;
use parkgen::pipeline::{load_run, run_pipeline, PipelineConfig};
use parkgen::{generate_corpus, split_corpus, SceneParams};

fn main() -> parkgen::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let root = std::env::temp_dir().join("parkgen_full_pipeline");
    let corpus = generate_corpus(24, 100, &SceneParams::default())?;
    let (train, test) = split_corpus(&corpus, 0.9)?;

    let cfg = TrainConfig {
        epochs,
        gen_width: 8,
        disc_width: 8,
        resnet_blocks: 3,
        ..Default::default()
    };
    for task in [Task::SegExtract, Task::EnvToLayoutUnpaired, Task::LayoutToScheme] {
        let m = gan::train(task, &train, &cfg, None, Some(&root.join("models").join(task.name())))?;
        println!("trained {:<24} {} epochs", task.name(), m.history.epochs());
    }
    let schemes: Vec<_> = train.scenes.iter().map(|s| s.scheme.clone()).collect();
    let (den, _) = diffusion::train_denoiser(&schemes, &DenoiserConfig { epochs: 2 * epochs, base_width: 8, ..Default::default() })?;
    den.save(&root.join("models/denoiser/denoiser.ckpt"))?;

    // the default config already points at models/<task>/G.ckpt
    let config_path = root.join("pipeline.toml");
    std::fs::write(&config_path, toml::to_string(&PipelineConfig::default()).expect("config serializes"))
        .map_err(|e| parkgen::Error::data(e.to_string()))?;
    let config = PipelineConfig::load(&config_path)?;

    let input = root.join("input.png");
    write_rgb(&input, &test.scenes[0].remote)?;
    let run = run_pipeline(&input, &config, &root.join("runs"))?;
    println!("run {}", run.run_id);
    for s in &run.stages {
        println!("  {:<22} {:>7.2}s  {}", s.name, s.wall_seconds, s.file.display());
    }
    for (k, v) in &run.metrics {
        println!("  {k:<28} {v:?}");
    }
    let reloaded = load_run(&root.join("runs").join(&run.run_id))?;
    println!("manifest verified: {}", reloaded == run);
    Ok(())
}
