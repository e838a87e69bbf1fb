//! Environment-conditioned layout generation: paired (E1), unpaired (E2) and
//! interior-only (E3) training compared on the same held-out scenes.
//!
//!     cargo run --release --example layout_experiments -- [scenes] [epochs]

use parkgen::experiment::{run_experiment, ExperimentConfig, ExperimentId};
use parkgen::gan::TrainConfig;
use parkgen::{generate_corpus, split_corpus, SceneParams};

fn main() -> parkgen::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let corpus = generate_corpus(n, 1000, &SceneParams::default())?;
    let (train, test) = split_corpus(&corpus, 0.8)?;
    let cfg = ExperimentConfig {
        train: TrainConfig {
            epochs,
            gen_width: 8,
            disc_width: 8,
            resnet_blocks: 3,
            ..Default::default()
        },
        ..Default::default()
    };
    let root = std::env::temp_dir().join("parkgen_layout_experiments");
    for id in [ExperimentId::E1, ExperimentId::E2, ExperimentId::E3] {
        let report = run_experiment(id, &train, &test, &cfg, Some(&root.join(id.name())))?;
        println!("{}: {}", id.name(), report.description);
        for (k, v) in &report.aggregate {
            println!("  {k:<20} {}", v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()));
        }
    }
    println!("reports in {}", root.display());
    Ok(())
}
