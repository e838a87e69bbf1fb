//! Output shapes, parameter counts and receptive fields for the stock
//! architectures.
//!
//!     cargo run --example network_shapes

use parkgen::nets::{self, ArchSpec};

fn main() -> parkgen::Result<()> {
    let specs = [
        ("U-Net generator", ArchSpec::unet_gen(3, 3)),
        ("ResNet generator", ArchSpec::resnet_gen(3, 3)),
        ("PatchGAN (depth 4)", ArchSpec::patch_disc(6)),
        ("PatchGAN (depth 5)", ArchSpec::patch_disc(6).with_depth(5)),
        ("denoiser", ArchSpec::diffusion_unet(3)),
    ];
    for side in [64, 512] {
        println!("input {side}×{side}");
        for (name, spec) in &specs {
            let [c, h, w] = spec.output_shape(side, side)?;
            let rf = spec.receptive_field().map(|r| r.to_string()).unwrap_or_else(|_| "-".into());
            println!(
                "  {name:<20} out {c}×{h}×{w:<4} params {:>8}  receptive field {rf}",
                spec.param_count()?
            );
        }
    }
    // the closed-form count agrees with an actual build
    let spec = ArchSpec::unet_gen(3, 3);
    println!("built U-Net scalars: {}", nets::build(&spec, 0)?.scalar_count());
    Ok(())
}
