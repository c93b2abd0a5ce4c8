//! Translation + global-scale alignment of a prediction to ground truth.
//!
//! Rotation is never optimised: predictions already live in the first-view
//! frame. The objective is the symmetric Chamfer distance of `s·pred + t` to
//! the ground truth, minimised over `(t, log s)` with Adam. Nearest-neighbour
//! assignments are recomputed at every iteration and held fixed while the
//! gradient is taken.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud, Vec3};
use crate::nn::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub translation: Vec3,
    pub scale: f64,
    #[serde(rename = "objective")]
    pub final_objective: f64,
}

impl Alignment {
    pub fn identity() -> Self {
        Alignment {
            translation: [0.0; 3],
            scale: 1.0,
            final_objective: f64::NAN,
        }
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        cloud.scaled_translated(self.scale, &self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub iters: usize,
    pub step: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            iters: 500,
            step: 0.01,
        }
    }
}

/// Centroid-and-RMS-radius initialisation: `s = rms(gt) / rms(pred)`,
/// `t = c_gt − s·c_pred`.
pub fn initial_alignment(pred: &PointCloud, gt: &PointCloud) -> (Vec3, f64) {
    let cp = pred.centroid();
    let cg = gt.centroid();
    let rms = |c: &PointCloud, ctr: &Vec3| {
        (c.points
            .iter()
            .map(|p| crate::geometry::dist2(p, ctr))
            .sum::<f64>()
            / c.len() as f64)
            .sqrt()
    };
    let rp = rms(pred, &cp);
    let rg = rms(gt, &cg);
    let s = if rp > 0.0 && rg > 0.0 { rg / rp } else { 1.0 };
    let t = [cg[0] - s * cp[0], cg[1] - s * cp[1], cg[2] - s * cp[2]];
    (t, s)
}

/// Aligns `pred` to `gt` starting from [`initial_alignment`].
pub fn align_translation_scale(
    pred: &PointCloud,
    gt: &PointCloud,
    config: &AlignConfig,
) -> Result<Alignment> {
    pred.require_non_empty("predicted")?;
    gt.require_non_empty("ground-truth")?;
    let (t, s) = initial_alignment(pred, gt);
    align_from(pred, gt, t, s, config)
}

/// Symmetric Chamfer objective at `(t, s)` and its gradient w.r.t. `(t, log s)`.
fn objective_and_grad(
    pred: &PointCloud,
    gt: &PointCloud,
    gt_tree: &KdTree,
    t: &Vec3,
    s: f64,
) -> (f64, [f64; 4]) {
    let moved: Vec<Vec3> = pred
        .points
        .iter()
        .map(|p| [s * p[0] + t[0], s * p[1] + t[1], s * p[2] + t[2]])
        .collect();
    let moved_tree = KdTree::build(&moved);
    let np = moved.len() as f64;
    let ng = gt.len() as f64;
    let mut grad = [0.0; 4];
    let mut acc = |residual: Vec3, base: &Vec3, weight: f64| -> f64 {
        let d = (residual[0] * residual[0] + residual[1] * residual[1] + residual[2] * residual[2]).sqrt();
        if d > 0.0 {
            let mut radial = 0.0;
            for a in 0..3 {
                let u = residual[a] / d;
                grad[a] += weight * u;
                radial += u * base[a];
            }
            grad[3] += weight * s * radial;
        }
        d
    };
    let mut sum_pg = 0.0;
    for (q, p) in moved.iter().zip(&pred.points) {
        let g = &gt.points[gt_tree.nearest(q).expect("non-empty").index];
        sum_pg += acc([q[0] - g[0], q[1] - g[1], q[2] - g[2]], p, 0.5 / np);
    }
    let mut sum_gp = 0.0;
    for g in &gt.points {
        let i = moved_tree.nearest(g).expect("non-empty").index;
        let q = &moved[i];
        sum_gp += acc([q[0] - g[0], q[1] - g[1], q[2] - g[2]], &pred.points[i], 0.5 / ng);
    }
    (0.5 * (sum_pg / np + sum_gp / ng), grad)
}

/// Aligns from an explicit starting point; returns the best iterate seen.
pub fn align_from(
    pred: &PointCloud,
    gt: &PointCloud,
    init_translation: Vec3,
    init_scale: f64,
    config: &AlignConfig,
) -> Result<Alignment> {
    pred.require_non_empty("predicted")?;
    gt.require_non_empty("ground-truth")?;
    if !(init_scale > 0.0) {
        return Err(Error::precondition("initial scale must be positive"));
    }
    let adam = AdamConfig {
        lr: config.step,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let gt_tree = KdTree::build(&gt.points);
    let mut theta = [
        init_translation[0],
        init_translation[1],
        init_translation[2],
        init_scale.ln(),
    ];
    let mut state = AdamState::new(4);
    let mut best: Option<Alignment> = None;
    for it in 0..=config.iters {
        let t = [theta[0], theta[1], theta[2]];
        let s = theta[3].exp();
        let (obj, grad) = objective_and_grad(pred, gt, &gt_tree, &t, s);
        if !obj.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::non_finite("alignment iteration", it));
        }
        if best.is_none_or(|b| obj < b.final_objective) {
            best = Some(Alignment {
                translation: t,
                scale: s,
                final_objective: obj,
            });
        }
        if it == config.iters {
            break;
        }
        state.step(&adam, &mut theta, &grad);
    }
    Ok(best.expect("at least one iterate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::chamfer;
    use rand::{Rng, SeedableRng};

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn identity_alignment() {
        let gt = random_cloud(200, 1);
        let a = align_translation_scale(&gt, &gt, &AlignConfig::default()).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-6);
        assert!(a.translation.iter().all(|t| t.abs() < 1e-6));
        assert!(a.final_objective < 1e-9);
    }

    #[test]
    fn converges_from_offset_start() {
        let gt = random_cloud(300, 2);
        let pred = gt.scaled_translated(1.0, &[0.3, -0.2, 0.1]);
        let a = align_from(&pred, &gt, [0.0; 3], 1.2, &AlignConfig::default()).unwrap();
        assert!((a.scale - 1.0).abs() < 0.02, "{a:?}");
        assert!((a.translation[0] + 0.3).abs() < 0.02, "{a:?}");
        let before = chamfer(&pred, &gt).unwrap();
        assert!(chamfer(&a.apply(&pred), &gt).unwrap() < before);
    }

    #[test]
    fn alignment_json_shape() {
        let a = Alignment {
            translation: [1.0, 2.0, 3.0],
            scale: 0.5,
            final_objective: 0.25,
        };
        let v = serde_json::to_value(a).unwrap();
        assert_eq!(v["translation"][2], 3.0);
        assert_eq!(v["scale"], 0.5);
        assert_eq!(v["objective"], 0.25);
    }
}
