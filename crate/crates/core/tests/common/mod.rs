//! Brute-force oracles and small fixtures shared by the integration tests.
#![allow(dead_code)]

use npa3d::geometry::{PointCloud, Vec3};
use npa3d::stage1::{DecoderKind, QueryMode, Stage1Config};
use npa3d::stage2::Stage2Config;
use rand::Rng;

pub fn d2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Nearest index (lowest on ties) and distance, by exhaustive search.
pub fn brute_nn(from: &[Vec3], to: &[Vec3]) -> Vec<(usize, f64)> {
    from.iter()
        .map(|p| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, q) in to.iter().enumerate() {
                let d = npa3d::geometry::dist2(p, q);
                if d < best.1 {
                    best = (j, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn lower_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

pub fn brute_one_sided(from: &PointCloud, to: &PointCloud) -> f64 {
    let d: Vec<f64> = brute_nn(&from.points, &to.points).iter().map(|x| x.1).collect();
    mean(&d)
}

pub fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    0.5 * (brute_one_sided(a, b) + brute_one_sided(b, a))
}

fn frac_within(from: &PointCloud, to: &PointCloud, tau: f64) -> f64 {
    let hits = brute_nn(&from.points, &to.points).iter().filter(|x| x.1 <= tau).count();
    hits as f64 / from.len() as f64
}

pub fn brute_fscore(pred: &PointCloud, gt: &PointCloud, tau: f64) -> f64 {
    let p = frac_within(pred, gt, tau);
    let r = frac_within(gt, pred, tau);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn brute_hole_ratio(pred: &PointCloud, gt: &PointCloud, tau: f64) -> f64 {
    1.0 - frac_within(gt, pred, tau)
}

/// (acc_mean, acc_median, comp_mean, comp_median, nc_mean, nc_median) for
/// clouds that carry normals.
pub fn brute_acc_comp_nc(pred: &PointCloud, gt: &PointCloud) -> [f64; 6] {
    let pn = pred.normals.as_ref().unwrap();
    let gn = gt.normals.as_ref().unwrap();
    let p2g = brute_nn(&pred.points, &gt.points);
    let g2p = brute_nn(&gt.points, &pred.points);
    let acc: Vec<f64> = p2g.iter().map(|x| x.1).collect();
    let comp: Vec<f64> = g2p.iter().map(|x| x.1).collect();
    let dot = |a: &Vec3, b: &Vec3| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let ncp: Vec<f64> = p2g.iter().enumerate().map(|(i, x)| dot(&pn[i], &gn[x.0]).abs()).collect();
    let ncg: Vec<f64> = g2p.iter().enumerate().map(|(j, x)| dot(&gn[j], &pn[x.0]).abs()).collect();
    [
        mean(&acc),
        lower_median(&acc),
        mean(&comp),
        lower_median(&comp),
        0.5 * (mean(&ncp) + mean(&ncg)),
        0.5 * (lower_median(&ncp) + lower_median(&ncg)),
    ]
}

/// Greedy farthest-point selection recomputing every min-distance from
/// scratch at each step; ties go to the lowest index.
pub fn brute_fps(points: &[Vec3], m: usize, seed: usize) -> Vec<usize> {
    let mut sel = vec![seed];
    while sel.len() < m {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for i in 0..points.len() {
            if sel.contains(&i) {
                continue;
            }
            let dmin = sel.iter().map(|&s| d2(&points[i], &points[s])).fold(f64::INFINITY, f64::min);
            if dmin > best.1 {
                best = (i, dmin);
            }
        }
        sel.push(best.0);
    }
    sel
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, half: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| [rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half)])
        .collect()
}

pub fn random_normals<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| loop {
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0f64)];
            let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if l > 0.1 {
                break [v[0] / l, v[1] / l, v[2] / l];
            }
        })
        .collect()
}

/// M=4, C=8 stage-1 config for 16-point clouds.
pub fn tiny_stage1(decoder: DecoderKind, query: QueryMode) -> Stage1Config {
    Stage1Config {
        m_tokens: 4,
        channels: 8,
        heads: 2,
        encoder_self_layers: 1,
        decoder_blocks: 2,
        query_mode: query,
        fourier_freqs: 2,
        decoder,
        n_train: 16,
        ..Stage1Config::default()
    }
}

pub fn tiny_stage2() -> Stage2Config {
    Stage2Config {
        image_size: 8,
        patch_size: 4,
        layers: 1,
        channels: 8,
        heads: 2,
        max_views: 2,
    }
}

/// Small but non-trivial config used where a real forward pass matters.
pub fn small_stage1() -> Stage1Config {
    Stage1Config {
        m_tokens: 16,
        channels: 32,
        heads: 2,
        encoder_self_layers: 2,
        decoder_blocks: 2,
        fourier_freqs: 6,
        n_train: 256,
        ..Stage1Config::default()
    }
}
