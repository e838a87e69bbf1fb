//! Unpaired land-cover extraction: train the remote → environment CycleGAN
//! on a synthetic corpus and score it on held-out scenes.
//!
//!     cargo run --release --example train_segmentation -- [scenes] [epochs]

use parkgen::gan::{self, Task, TrainConfig};
use parkgen::metrics::{self, ConfusionMatrix};
use parkgen::{generate_corpus, quantize_to_classes, split_corpus, Legend, SceneParams};

fn main() -> parkgen::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let corpus = generate_corpus(n, 1, &SceneParams::default())?;
    let (train, test) = split_corpus(&corpus, 0.8)?;
    let cfg = TrainConfig {
        epochs,
        gen_width: 8,
        disc_width: 8,
        resnet_blocks: 3,
        eval_every: 1,
        ..Default::default()
    };
    let out = std::env::temp_dir().join("parkgen_seg_extract");
    let model = gan::train(Task::SegExtract, &train, &cfg, Some(&test), Some(&out))?;
    print!("{}", model.history.summary());

    let mut total: Option<ConfusionMatrix> = None;
    for s in &test.scenes {
        let pred = quantize_to_classes(&gan::infer(&model.generator, &s.remote)?, s.environment.legend())?;
        let cm = metrics::confusion(&pred, &s.environment)?;
        match &mut total {
            Some(t) => t.merge(&cm)?,
            None => total = Some(cm),
        }
    }
    let cm = total.expect("non-empty test split");
    let legend = Legend::environment();
    println!("accuracy {:.3}, majority baseline {:.3}", cm.accuracy(), cm.majority_baseline());
    for e in &legend.entries {
        if let Some(iou) = cm.iou(e.class_id as usize) {
            println!("  IoU {:<18} {iou:.3}", e.name);
        }
    }
    if let Some((t, p, f)) = cm.worst_confusion() {
        println!("worst confusion: {} read as {} ({:.1}%)", legend.entries[t].name, legend.entries[p].name, 100.0 * f);
    }
    println!("model saved in {}", out.display());
    Ok(())
}
