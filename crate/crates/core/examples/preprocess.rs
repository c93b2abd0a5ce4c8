//! Render one synthetic scene, back-project its depth maps and run the
//! point-cloud preprocessing steps.
//!
//! `cargo run --release --example preprocess -- [seed] [out.npc]`

use anyhow::Result;
use npa3d::geometry::{backproject_depth, default_voxel_size, farthest_point_sample, frustum_cull, io, voxel_filter};
use npa3d::metrics::density_variance;
use npa3d::synthdata::{generate_sample, raw_visible_union, DataConfig};
use npa3d::PointCloud;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let sample = generate_sample(seed, 2, &DataConfig::default())?;
    println!("scene {seed}: {} primitives, {:.0}% of the surface unseen", sample.scene.primitives.len(), 100.0 * sample.occluded_fraction);

    let mut world = Vec::new();
    for (i, v) in sample.views.iter().enumerate() {
        let pts = backproject_depth(v)?;
        println!("view {i}: {} valid depth pixels", pts.len());
        world.push(pts);
    }
    let world = PointCloud::concat(&world);
    // every back-projected point lies inside some input frustum
    assert_eq!(frustum_cull(&world, &sample.views)?.len(), world.len());
    let raw = raw_visible_union(&sample.views)?;
    let vs = default_voxel_size(&raw);
    let filtered = voxel_filter(&raw, vs)?;
    println!(
        "union {} points, density variance {:.4}; voxel {vs:.3} leaves {} points, variance {:.4}",
        raw.len(),
        density_variance(&raw, 10)?,
        filtered.len(),
        density_variance(&filtered, 10)?
    );

    let idx = farthest_point_sample(&filtered, 256.min(filtered.len()), 0)?;
    let anchors: PointCloud = filtered.select(&idx);
    println!("{} farthest-point anchors, bbox diagonal {:.3}", anchors.len(), anchors.bbox_diagonal());

    if let Some(out) = args.get(2) {
        io::write_npc(std::path::Path::new(out), &sample.visible_cloud)?;
        println!("wrote {out}");
    }
    Ok(())
}
