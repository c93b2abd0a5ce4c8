//! Flow-matching on the linear path `x_t = (1 − t)·x₀ + t·ε`.
//!
//! `t = 0` is data and `t = 1` is noise, with `ε ~ U(−1, 1)` per coordinate.
//! The network regresses the constant path velocity `ε − x₀`; sampling
//! integrates from `t = 1` down to `t = 0` with explicit Euler steps.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// How training timesteps are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimestepSampling {
    #[default]
    Uniform,
    /// `t = 1 − cos(u·π/2)`, concentrating draws near the data end.
    Cosine,
}

impl std::str::FromStr for TimestepSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(TimestepSampling::Uniform),
            "cosine" => Ok(TimestepSampling::Cosine),
            other => Err(Error::Config(format!(
                "unknown timestep sampling {other:?} (expected \"uniform\" or \"cosine\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Euler step in `t` at inference; `ceil(1 / step_size)` steps are taken.
    pub step_size: f64,
    pub t_sampling: TimestepSampling,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step_size: 0.04,
            t_sampling: TimestepSampling::Uniform,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::Config(format!(
                "step_size must lie in (0, 1], got {}",
                self.step_size
            )));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        // tolerance absorbs representation error, e.g. 1 / 0.04
        ((1.0 / self.step_size) - 1e-9).ceil().max(1.0) as usize
    }

    /// Time grid `1 = t₀ > t₁ > … > t_n = 0`.
    pub fn time_grid(&self) -> Vec<f64> {
        let n = self.num_steps();
        let mut ts: Vec<f64> = (0..n).map(|k| 1.0 - k as f64 * self.step_size).collect();
        ts.push(0.0);
        ts
    }
}

/// A noised point set together with its flow time.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub x_t: Array2<f64>,
    pub t: f64,
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", a.dim()),
            got: format!("{:?}", b.dim()),
        });
    }
    Ok(())
}

pub fn interpolate(x0: &Array2<f64>, eps: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    check_same_shape(x0, eps)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::precondition(format!("t = {t} outside [0, 1]")));
    }
    let mut out = x0.clone();
    out.zip_mut_with(eps, |a, &e| *a = (1.0 - t) * *a + t * e);
    Ok(out)
}

/// Target velocity `ε − x₀` of the linear path.
pub fn velocity_target(x0: &Array2<f64>, eps: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(x0, eps)?;
    Ok(eps - x0)
}

/// Mean over all entries of the squared difference.
pub fn fm_loss(pred_v: &Array2<f64>, target_v: &Array2<f64>) -> Result<f64> {
    check_same_shape(pred_v, target_v)?;
    let n = pred_v.len().max(1) as f64;
    Ok(pred_v
        .iter()
        .zip(target_v.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, config: &FlowConfig) -> f64 {
    let u: f64 = rng.random();
    match config.t_sampling {
        TimestepSampling::Uniform => u,
        TimestepSampling::Cosine => 1.0 - (u * std::f64::consts::FRAC_PI_2).cos(),
    }
}

/// `n × 3` noise with coordinates drawn from `U(−1, 1)`.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    Array2::from_shape_simple_fn((n, 3), || dist.sample(rng))
}

/// Integrates `dx/dt = v(x, t)` from `t = 1` to `t = 0` starting at `x1`.
pub fn euler_integrate<F>(x1: Array2<f64>, mut velocity_fn: F, config: &FlowConfig) -> Result<Array2<f64>>
where
    F: FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
{
    config.validate()?;
    let grid = config.time_grid();
    let mut x = x1;
    for (step, w) in grid.windows(2).enumerate() {
        let (t, t_next) = (w[0], w[1]);
        let v = velocity_fn(&x, t)?;
        check_same_shape(&x, &v)?;
        if v.iter().any(|a| !a.is_finite()) {
            return Err(Error::non_finite("euler velocity step", step));
        }
        let dt = t - t_next;
        x.zip_mut_with(&v, |a, &b| *a -= dt * b);
    }
    Ok(x)
}

/// Draws `n_points` noise points and integrates them to a point cloud.
pub fn euler_sample<F, R>(velocity_fn: F, n_points: usize, config: &FlowConfig, rng: &mut R) -> Result<PointCloud>
where
    F: FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
    R: Rng + ?Sized,
{
    if n_points == 0 {
        return Err(Error::precondition("euler_sample needs n_points >= 1"));
    }
    let x1 = sample_noise(rng, n_points);
    let x0 = euler_integrate(x1, velocity_fn, config)?;
    Ok(array_to_cloud(&x0))
}

pub fn array_to_cloud(a: &Array2<f64>) -> PointCloud {
    PointCloud::new(a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
}

pub fn cloud_to_array(c: &PointCloud) -> Array2<f64> {
    let mut a = Array2::zeros((c.len(), 3));
    for (i, p) in c.points.iter().enumerate() {
        for k in 0..3 {
            a[[i, k]] = p[k];
        }
    }
    a
}
