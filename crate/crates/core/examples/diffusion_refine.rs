//! Train a small denoiser on rendered schemes, then refine one scheme at a
//! few strengths and expand it ×8 per side.
//!
//!     cargo run --release --example diffusion_refine -- [epochs]

use parkgen::diffusion::{self, DenoiserConfig, RefineParams};
use parkgen::imageio::write_rgb;
use parkgen::metrics::boundary_noise;
use parkgen::{generate_corpus, quantize_to_classes, Legend, SceneParams};
use std::sync::Arc;

fn main() -> parkgen::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let corpus = generate_corpus(24, 7, &SceneParams::default())?;
    let imgs: Vec<_> = corpus.scenes.iter().map(|s| s.scheme.clone()).collect();
    let cfg = DenoiserConfig { epochs, base_width: 8, ..Default::default() };
    let (ck, hist) = diffusion::train_denoiser(&imgs[1..], &cfg)?;
    print!("{}", hist.summary());
    let sched = diffusion::checkpoint_schedule(&ck)?;
    println!("held-out noise MSE {:.4}", diffusion::denoiser_loss(&ck, &imgs[..1], 0)?);

    let out = std::env::temp_dir().join("parkgen_refine");
    let park = Arc::new(Legend::park());
    let scheme = &imgs[0];
    write_rgb(&out.join("scheme.png"), scheme)?;
    for strength in [0.0, 0.1, 0.3, 1.0] {
        let params = RefineParams { strength, seed: 1, ..Default::default() };
        let refined = diffusion::refine(scheme, &params, &ck, &sched)?;
        let noise = boundary_noise(&quantize_to_classes(&refined, &park)?);
        println!("strength {strength:.1}: t* = {:>3}, boundary noise {noise:.4}", sched.start_step(strength));
        write_rgb(&out.join(format!("refined_{strength:.1}.png")), &refined)?;
    }

    let (canvas, crop) = diffusion::pad_canvas(scheme, 0.25)?;
    println!("padded canvas {:?}, crop back at ({}, {})", canvas.dims(), crop.x, crop.y);
    let big = diffusion::upscale(scheme, 8, 0.03, 2, Some(&ck), Some(&sched))?;
    println!("upscaled {:?} → {:?} ({}× pixels)", scheme.dims(), big.dims(), big.pixel_count() / scheme.pixel_count());
    write_rgb(&out.join("upscaled.png"), &big)?;
    println!("images in {}", out.display());
    Ok(())
}
