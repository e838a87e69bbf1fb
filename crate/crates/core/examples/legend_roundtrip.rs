//! Park and environment legends, class-map encoding and nearest-colour
//! quantization of a noisy rendering.
//!
//!     cargo run --example legend_roundtrip

use std::sync::Arc;

use parkgen::{encode_classmap, quantize_to_classes, ClassMap, Legend, RasterImage};

fn main() -> parkgen::Result<()> {
    for legend in [Legend::park(), Legend::environment()] {
        println!("{} legend", legend.name);
        for e in &legend.entries {
            println!("  {:>2}  {:<18} ({:>3},{:>3},{:>3})  {:?}", e.class_id, e.name, e.r, e.g, e.b, e.role);
        }
    }

    let park = Arc::new(Legend::park());
    let (w, h) = (12, 6);
    let data = (0..w * h).map(|i| ((i % w) / 2) as u8).collect();
    let map = ClassMap::new(w, h, data, park.clone())?;
    let img = encode_classmap(&map)?;

    // nudge every channel by up to ±0.1; quantization recovers the classes
    let noisy: Vec<f32> = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| (v + 0.1 * (((i * 37) % 11) as f32 / 5.0 - 1.0)).clamp(0.0, 1.0))
        .collect();
    let noisy = RasterImage::new(w, h, noisy)?;
    let back = quantize_to_classes(&noisy, &park)?;
    println!("noisy rendering quantizes back exactly: {}", back == map);

    let path = std::env::temp_dir().join("parkgen_legend_stripes.png");
    parkgen::imageio::write_classmap(&path, &map)?;
    println!("wrote {}", path.display());
    Ok(())
}
