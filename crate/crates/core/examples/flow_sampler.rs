//! Euler sampling with hand-written velocity fields: the exact field of a
//! single target point, and the marginal field of a small point set.
//!
//! `cargo run --release --example flow_sampler`

use anyhow::Result;
use ndarray::Array2;
use npa3d::flowmatch::{euler_sample, FlowConfig};
use npa3d::metrics::chamfer;
use npa3d::util::seeded_rng;
use npa3d::PointCloud;

fn main() -> Result<()> {
    let cfg = FlowConfig::default();
    let mut rng = seeded_rng(1);

    let target = [0.3, -0.2, 0.5];
    // x_t = (1 − t)·x₀ + t·ε  ⇒  v = (x_t − x₀) / t
    let out = euler_sample(
        |x, t| Ok(Array2::from_shape_fn(x.dim(), |(i, k)| (x[[i, k]] - target[k]) / t)),
        4,
        &cfg,
        &mut rng,
    )?;
    println!("{} steps, point-target field lands at {:?}", cfg.num_steps(), out.points[0]);

    // posterior-mean velocity for a point set with uniform noise on [−1, 1]³
    let data: Vec<[f64; 3]> = (0..16)
        .map(|i| {
            let a = i as f64 / 16.0 * std::f64::consts::TAU;
            [0.6 * a.cos(), 0.6 * a.sin(), 0.0]
        })
        .collect();
    let field = |x: &Array2<f64>, t: f64| -> npa3d::Result<Array2<f64>> {
        let mut v = Array2::zeros(x.dim());
        for i in 0..x.nrows() {
            let xi = [x[[i, 0]], x[[i, 1]], x[[i, 2]]];
            let admissible: Vec<&[f64; 3]> = data
                .iter()
                .filter(|d| (0..3).all(|k| ((xi[k] - (1.0 - t) * d[k]) / t).abs() <= 1.0))
                .collect();
            let pool = if admissible.is_empty() { data.iter().collect() } else { admissible };
            for k in 0..3 {
                let mean = pool.iter().map(|d| d[k]).sum::<f64>() / pool.len() as f64;
                v[[i, k]] = (xi[k] - mean) / t;
            }
        }
        Ok(v)
    };
    let ring = euler_sample(field, 512, &FlowConfig { step_size: 0.01, ..cfg }, &mut rng)?;
    println!("ring samples: chamfer to the 16 data points {:.4}", chamfer(&ring, &PointCloud::new(data.clone()))?);
    Ok(())
}
