//! Layout metrics on a ground-truth scene and on a degraded copy.
//!
//!     cargo run --example metrics_report

use parkgen::legend::park;
use parkgen::metrics::{self, Connectivity};
use parkgen::{generate_scene, SceneParams};

fn main() -> parkgen::Result<()> {
    let scene = generate_scene(42, &SceneParams::default())?;
    let truth = &scene.layout;
    let report = metrics::layout_report(truth, &scene.environment, Some(truth))?;
    println!("ground truth: {report:#?}");
    println!("entrance sides drawn by the generator: {}", scene.entrance_sides.len());

    // knock out every other road pixel along rows
    let broken = truth.map_classes(|x, y, c| if c == park::ROADS && (x + y) % 3 == 0 { park::GREEN_LAND } else { c })?;
    let r = metrics::layout_report(&broken, &scene.environment, Some(truth))?;
    println!(
        "degraded: connectivity {:?} (8-conn {:?}), boundary noise {:.4}, histogram distance {:.4}, entrances {}",
        r.road_connectivity,
        metrics::road_connectivity_with(&broken, Connectivity::Eight),
        r.boundary_noise,
        r.histogram_distance.unwrap_or(0.0),
        r.entrance_count
    );
    let cm = metrics::confusion(&broken, truth)?;
    println!("pixel accuracy {:.4}, mean IoU {:.4}", cm.accuracy(), cm.mean_iou().unwrap_or(0.0));
    Ok(())
}
