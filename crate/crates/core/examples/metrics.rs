//! Score a perturbed copy and a partial copy of a ground-truth cloud.
//!
//! `cargo run --release --example metrics`

use anyhow::Result;
use npa3d::metrics::{evaluate, MetricConfig};
use npa3d::synthdata::{generate_sample, DataConfig};
use npa3d::util::seeded_rng;
use npa3d::PointCloud;
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let sample = generate_sample(5, 1, &DataConfig::default())?;
    let gt = sample.normalized_complete();
    let visible = sample.normalized_visible();

    let noise = Normal::new(0.0, 0.01)?;
    let mut rng = seeded_rng(0);
    let jittered = PointCloud::new(
        gt.points
            .iter()
            .map(|p| p.map(|x| x + noise.sample(&mut rng)))
            .collect(),
    );

    let cfg = MetricConfig::default();
    for (name, pred) in [("gt", &gt), ("jittered", &jittered), ("visible only", &visible)] {
        let r = evaluate(pred, &gt, &cfg)?;
        println!(
            "{name:>12}: cd {:.4}  fscore@0.02 {:.3}  hole {:.3}  acc {:.4}  comp {:.4}  nc {:.3}",
            r.cd,
            r.fscore_at(0.02).unwrap_or(f64::NAN),
            r.hole_ratio,
            r.acc_mean,
            r.comp_mean,
            r.nc_mean
        );
    }
    Ok(())
}
