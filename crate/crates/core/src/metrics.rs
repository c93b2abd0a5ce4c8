//! Evaluation metrics between a predicted and a ground-truth point cloud.
//!
//! All nearest-neighbour queries go through [`KdTree`] and use unsquared
//! Euclidean distances.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{dot, estimate_normals, KdTree, PointCloud};
use crate::util::{lower_median, mean};

/// Default F-score thresholds.
pub const DEFAULT_FSCORE_TAUS: [f64; 3] = [0.1, 0.05, 0.02];
pub const DEFAULT_HOLE_TAU: f64 = 0.1;
pub const DEFAULT_DENSITY_K: usize = 10;
pub const NORMAL_K: usize = 16;

/// Distance from every point of `from` to its nearest point in `to`, with the
/// nearest index.
pub fn nearest_neighbors(from: &PointCloud, to: &PointCloud) -> Vec<(usize, f64)> {
    let tree = KdTree::build(&to.points);
    from.points
        .iter()
        .map(|p| {
            let nb = tree.nearest(p).expect("non-empty target");
            (nb.index, nb.dist())
        })
        .collect()
}

fn nn_dists(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    nearest_neighbors(from, to).into_iter().map(|(_, d)| d).collect()
}

/// Mean distance from each point of `from` to its nearest point in `to`.
pub fn one_sided_chamfer(from: &PointCloud, to: &PointCloud) -> Result<f64> {
    from.require_non_empty("source")?;
    to.require_non_empty("target")?;
    Ok(mean(&nn_dists(from, to)))
}

/// Symmetric Chamfer distance: the average of both one-sided means.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let ab = one_sided_chamfer(a, b)?;
    let ba = one_sided_chamfer(b, a)?;
    Ok(0.5 * (ab + ba))
}

/// Precision and recall of `pred` against `gt` at distance threshold `tau`.
pub fn precision_recall(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::precondition("threshold must be positive"));
    }
    pred.require_non_empty("predicted")?;
    gt.require_non_empty("ground-truth")?;
    let within = |d: &f64| *d <= tau;
    let p = nn_dists(pred, gt).iter().filter(|d| within(d)).count() as f64 / pred.len() as f64;
    let r = nn_dists(gt, pred).iter().filter(|d| within(d)).count() as f64 / gt.len() as f64;
    Ok((p, r))
}

pub fn fscore(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    let (p, r) = precision_recall(pred, gt, tau)?;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Fraction of ground-truth points with no prediction within `tau`.
pub fn hole_ratio(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    gt.require_non_empty("ground-truth")?;
    let (_, recall) = precision_recall(pred, gt, tau)?;
    Ok(1.0 - recall)
}

/// Squared coefficient of variation of the local density `1 / r_k`, where
/// `r_k` is the distance to the k-th nearest other point.
pub fn density_variance(cloud: &PointCloud, k: usize) -> Result<f64> {
    let n = cloud.len();
    if k == 0 || n <= k {
        return Err(Error::precondition(format!(
            "density_variance needs N > k >= 1, got N={n}, k={k}"
        )));
    }
    let tree = KdTree::build(&cloud.points);
    let mut rho = Vec::with_capacity(n);
    for (i, p) in cloud.points.iter().enumerate() {
        // the query point itself (or an identical copy) occupies slot 0
        let nbrs = tree.knn(p, k + 1);
        let r = nbrs[k].dist();
        if r == 0.0 {
            return Err(Error::DuplicatePoint { index: i });
        }
        rho.push(1.0 / r);
    }
    let m = mean(&rho);
    let var = rho.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    Ok(var / (m * m))
}

/// Accuracy, completion and normal-consistency statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccCompNc {
    pub acc_mean: f64,
    pub acc_median: f64,
    pub comp_mean: f64,
    pub comp_median: f64,
    pub nc_mean: f64,
    pub nc_median: f64,
}

fn with_normals(cloud: &PointCloud) -> Result<PointCloud> {
    match cloud.normals {
        Some(_) => Ok(cloud.clone()),
        None => Ok(estimate_normals(cloud, NORMAL_K)?.cloud),
    }
}

/// Accuracy (pred→gt), completion (gt→pred) and normal consistency averaged
/// over both directions. Missing normals are estimated with k = 16.
pub fn acc_comp_nc(pred: &PointCloud, gt: &PointCloud) -> Result<AccCompNc> {
    pred.require_non_empty("predicted")?;
    gt.require_non_empty("ground-truth")?;
    let pred = with_normals(pred)?;
    let gt = with_normals(gt)?;
    let pn = pred.normals.as_ref().expect("normals");
    let gn = gt.normals.as_ref().expect("normals");

    let p2g = nearest_neighbors(&pred, &gt);
    let g2p = nearest_neighbors(&gt, &pred);
    let acc: Vec<f64> = p2g.iter().map(|&(_, d)| d).collect();
    let comp: Vec<f64> = g2p.iter().map(|&(_, d)| d).collect();
    let nc_p: Vec<f64> = p2g
        .iter()
        .enumerate()
        .map(|(i, &(j, _))| dot(&pn[i], &gn[j]).abs())
        .collect();
    let nc_g: Vec<f64> = g2p
        .iter()
        .enumerate()
        .map(|(j, &(i, _))| dot(&gn[j], &pn[i]).abs())
        .collect();
    Ok(AccCompNc {
        acc_mean: mean(&acc),
        acc_median: lower_median(&acc),
        comp_mean: mean(&comp),
        comp_median: lower_median(&comp),
        nc_mean: 0.5 * (mean(&nc_p) + mean(&nc_g)),
        nc_median: 0.5 * (lower_median(&nc_p) + lower_median(&nc_g)),
    })
}

/// Thresholds and neighbourhood sizes used by [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub fscore_taus: Vec<f64>,
    pub hole_tau: f64,
    pub density_k: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            fscore_taus: DEFAULT_FSCORE_TAUS.to_vec(),
            hole_tau: DEFAULT_HOLE_TAU,
            density_k: DEFAULT_DENSITY_K,
        }
    }
}

/// Every metric for one prediction / ground-truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cd: f64,
    pub one_sided_cd: f64,
    /// `(threshold, F-score)` pairs in configured order.
    pub fscore: Vec<(f64, f64)>,
    pub hole_ratio: f64,
    pub density_var: f64,
    pub acc_mean: f64,
    pub acc_median: f64,
    pub comp_mean: f64,
    pub comp_median: f64,
    pub nc_mean: f64,
    pub nc_median: f64,
}

pub fn fscore_key(tau: f64) -> String {
    format!("fscore@{tau}")
}

impl MetricReport {
    /// Flat `(field, value)` list; F-scores appear as `fscore@<tau>`.
    pub fn to_flat(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("cd".to_string(), self.cd),
            ("one_sided_cd".to_string(), self.one_sided_cd),
        ];
        out.extend(self.fscore.iter().map(|&(t, f)| (fscore_key(t), f)));
        out.extend([
            ("hole_ratio".to_string(), self.hole_ratio),
            ("density_var".to_string(), self.density_var),
            ("acc_mean".to_string(), self.acc_mean),
            ("acc_median".to_string(), self.acc_median),
            ("comp_mean".to_string(), self.comp_mean),
            ("comp_median".to_string(), self.comp_median),
            ("nc_mean".to_string(), self.nc_mean),
            ("nc_median".to_string(), self.nc_median),
        ]);
        out
    }

    pub fn field_names(config: &MetricConfig) -> Vec<String> {
        let mut names = vec!["cd".to_string(), "one_sided_cd".to_string()];
        names.extend(config.fscore_taus.iter().map(|&t| fscore_key(t)));
        names.extend(
            [
                "hole_ratio",
                "density_var",
                "acc_mean",
                "acc_median",
                "comp_mean",
                "comp_median",
                "nc_mean",
                "nc_median",
            ]
            .map(String::from),
        );
        names
    }

    pub fn fscore_at(&self, tau: f64) -> Option<f64> {
        self.fscore.iter().find(|(t, _)| *t == tau).map(|&(_, f)| f)
    }
}

impl Serialize for MetricReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let flat = self.to_flat();
        let mut map = serializer.serialize_map(Some(flat.len()))?;
        for (k, v) in &flat {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

/// Computes the full [`MetricReport`]. The one-sided term runs GT → prediction.
pub fn evaluate(pred: &PointCloud, gt: &PointCloud, config: &MetricConfig) -> Result<MetricReport> {
    let fscore = config
        .fscore_taus
        .iter()
        .map(|&t| Ok((t, self::fscore(pred, gt, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let acn = acc_comp_nc(pred, gt)?;
    Ok(MetricReport {
        cd: chamfer(pred, gt)?,
        one_sided_cd: one_sided_chamfer(gt, pred)?,
        fscore,
        hole_ratio: hole_ratio(pred, gt, config.hole_tau)?,
        density_var: density_variance(pred, config.density_k)?,
        acc_mean: acn.acc_mean,
        acc_median: acn.acc_median,
        comp_mean: acn.comp_mean,
        comp_median: acn.comp_median,
        nc_mean: acn.nc_mean,
        nc_median: acn.nc_median,
    })
}
