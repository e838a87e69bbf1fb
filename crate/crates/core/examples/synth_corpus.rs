//! Generate a small synthetic corpus, save it, reload it and print the class
//! balance.
//!
//!     cargo run --example synth_corpus -- [scenes] [out_dir]

use std::path::PathBuf;

use parkgen::{generate_corpus, Corpus, Legend, SceneParams};

fn main() -> parkgen::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("parkgen_corpus"));

    let corpus = generate_corpus(n, 0, &SceneParams::default())?;
    corpus.check_class_floor(parkgen::synthcity::DEFAULT_CLASS_FLOOR)?;
    corpus.save(&out)?;
    let back = Corpus::load(&out)?;
    println!("{} scenes in {} (reload verified: {})", back.len(), out.display(), back.scenes == corpus.scenes);

    let m = &corpus.manifest;
    println!("prng: {}", m.prng);
    println!("layout classes:");
    for (e, f) in Legend::park().entries.iter().zip(&m.layout_histogram) {
        println!("  {:<18} {:.4}", e.name, f);
    }
    println!("environment classes:");
    for (e, f) in Legend::environment().entries.iter().zip(&m.environment_histogram) {
        println!("  {:<18} {:.4}", e.name, f);
    }
    let s = &corpus.scenes[0];
    println!("scene {}: site {:?}, entrances on {:?}", s.seed, s.site, s.entrance_sides);
    Ok(())
}
