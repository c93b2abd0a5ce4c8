//! Point-cloud and pinhole-camera geometry.
//!
//! These kernels feed data preprocessing (frustum culling, voxel filtering,
//! farthest point sampling), evaluation (normals, nearest neighbours) and the
//! model pipeline (first-view frame conversion).

pub mod io;
pub mod kdtree;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use kdtree::{KdTree, Neighbor};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn dist(a: &Vec3, b: &Vec3) -> f64 {
    dist2(a, b).sqrt()
}

/// An unordered set of 3D points with optional unit normals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud {
            points,
            normals: None,
        }
    }

    /// Builds a cloud with normals, checking lengths and unit norms (1e-6).
    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::Shape {
                expected: format!("{} normals", points.len()),
                got: format!("{} normals", normals.len()),
            });
        }
        for (i, n) in normals.iter().enumerate() {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (len - 1.0).abs() > 1e-6 {
                return Err(Error::precondition(format!(
                    "normal {i} has length {len}, expected unit length"
                )));
            }
        }
        Ok(PointCloud {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Axis-aligned bounds `(min, max)`; `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| dist(&lo, &hi))
    }

    /// Keeps the points (and normals) at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }

    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            normals: self.normals.clone(),
        }
    }

    /// Uniform scale then translation: `s·p + t`.
    pub fn scaled_translated(&self, scale: f64, translation: &Vec3) -> PointCloud {
        self.map_points(|p| {
            [
                scale * p[0] + translation[0],
                scale * p[1] + translation[1],
                scale * p[2] + translation[2],
            ]
        })
    }

    pub fn concat(clouds: &[PointCloud]) -> PointCloud {
        let points = clouds.iter().flat_map(|c| c.points.iter().copied()).collect();
        let normals = if clouds.iter().all(|c| c.normals.is_some()) && !clouds.is_empty() {
            Some(
                clouds
                    .iter()
                    .flat_map(|c| c.normals.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        PointCloud { points, normals }
    }

    pub(crate) fn require_non_empty(&self, what: &str) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::precondition(format!("{what} point cloud is empty")))
        } else {
            Ok(())
        }
    }
}

/// A row-major H×W depth map; non-positive entries mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        DepthMap {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// A pinhole camera with zero skew and a rigid world-from-camera pose.
///
/// The camera looks down its +z axis; +x is image right and +y image down.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub intrinsics: Matrix3<f64>,
    pub world_from_camera: Matrix4<f64>,
    pub width: usize,
    pub height: usize,
    pub depth: Option<DepthMap>,
    pub near: f64,
    pub far: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

impl CameraView {
    /// Validates and builds a view without a depth map.
    pub fn new(
        intrinsics: Matrix3<f64>,
        world_from_camera: Matrix4<f64>,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let view = CameraView {
            intrinsics,
            world_from_camera,
            width,
            height,
            depth: None,
            near,
            far,
        };
        view.validate()?;
        Ok(view)
    }

    /// Intrinsics for a symmetric horizontal field of view (radians).
    pub fn intrinsics_from_fov(width: usize, height: usize, fov_x: f64) -> Matrix3<f64> {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Matrix3::new(
            f,
            0.0,
            0.5 * width as f64,
            0.0,
            f,
            0.5 * height as f64,
            0.0,
            0.0,
            1.0,
        )
    }

    /// World-from-camera pose for a camera at `eye` looking at `target`.
    ///
    /// `up` is the world up direction; image +y points opposite to it.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Matrix4<f64> {
        let eye_v = Vector3::from(eye);
        let fwd = (Vector3::from(target) - eye_v).normalize();
        let up_v = Vector3::from(up);
        let mut right = fwd.cross(&up_v);
        if right.norm() < 1e-9 {
            right = fwd.cross(&Vector3::new(1.0, 0.0, 0.0));
        }
        let right = right.normalize();
        let down = fwd.cross(&right).normalize();
        let mut m = Matrix4::identity();
        for r in 0..3 {
            m[(r, 0)] = right[r];
            m[(r, 1)] = down[r];
            m[(r, 2)] = fwd[r];
            m[(r, 3)] = eye[r];
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        let (fx, fy, cx, cy) = (k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::precondition("focal lengths must be positive"));
        }
        if k[(0, 1)] != 0.0 {
            return Err(Error::precondition("intrinsics must have zero skew"));
        }
        if !(0.0..self.width as f64).contains(&cx) || !(0.0..self.height as f64).contains(&cy) {
            return Err(Error::precondition("principal point outside the image"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::precondition("need 0 < near < far"));
        }
        let r = self.rotation();
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        if orth > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::precondition(
                "world_from_camera rotation is not a proper rotation",
            ));
        }
        if let Some(d) = &self.depth {
            if d.height != self.height || d.width != self.width {
                return Err(Error::Shape {
                    expected: format!("{}x{} depth", self.height, self.width),
                    got: format!("{}x{} depth", d.height, d.width),
                });
            }
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_from_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_from_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn center(&self) -> Vec3 {
        let t = self.translation();
        [t[0], t[1], t[2]]
    }

    /// World point expressed in this camera's frame.
    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        let r = self.rotation();
        let d = Vector3::from(*p) - self.translation();
        let c = r.transpose() * d;
        [c[0], c[1], c[2]]
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        let w = self.rotation() * Vector3::from(*p) + self.translation();
        [w[0], w[1], w[2]]
    }

    /// Pixel coordinates `(u, v)` and depth of a camera-frame point.
    #[inline]
    pub fn project_camera(&self, pc: &Vec3) -> (f64, f64, f64) {
        let k = &self.intrinsics;
        let u = k[(0, 0)] * pc[0] / pc[2] + k[(0, 2)];
        let v = k[(1, 1)] * pc[1] / pc[2] + k[(1, 2)];
        (u, v, pc[2])
    }

    /// True iff the world point lies strictly between the clip planes and
    /// projects inside `[0, width) × [0, height)`.
    pub fn in_frustum(&self, p: &Vec3) -> bool {
        let pc = self.world_to_camera(p);
        if !(pc[2] > self.near && pc[2] < self.far) {
            return false;
        }
        let (u, v, _) = self.project_camera(&pc);
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    /// Unit ray direction in the world frame through pixel centre `(col+0.5, row+0.5)`,
    /// scaled so its camera-frame z component is 1.
    pub fn pixel_ray(&self, row: usize, col: usize) -> (Vec3, Vec3) {
        let k = &self.intrinsics;
        let x = (col as f64 + 0.5 - k[(0, 2)]) / k[(0, 0)];
        let y = (row as f64 + 0.5 - k[(1, 2)]) / k[(1, 1)];
        let d = self.rotation() * Vector3::new(x, y, 1.0);
        (self.center(), [d[0], d[1], d[2]])
    }
}

/// Greedy farthest point sampling starting from `seed_index`.
///
/// Each step picks the point maximising its distance to the selected set;
/// ties go to the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::precondition(format!(
            "farthest point sampling needs 1 <= m <= N, got m={m}, N={n}"
        )));
    }
    if seed_index >= n {
        return Err(Error::precondition(format!(
            "seed index {seed_index} out of range for {n} points"
        )));
    }
    let pts = &cloud.points;
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut current = seed_index;
    for _ in 0..m {
        selected.push(current);
        taken[current] = true;
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist2(&pts[i], &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// Integer voxel key of a point for a grid anchored at the origin.
#[inline]
pub fn voxel_key(p: &Vec3, voxel_size: f64) -> (i64, i64, i64) {
    (
        (p[0] / voxel_size).floor() as i64,
        (p[1] / voxel_size).floor() as i64,
        (p[2] / voxel_size).floor() as i64,
    )
}

/// Replaces every occupied voxel by the centroid of its points.
///
/// Output is ordered by ascending `(x, y, z)` voxel key. Normals, when
/// present, are averaged and renormalised.
pub fn voxel_filter(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0) {
        return Err(Error::precondition("voxel_size must be positive"));
    }
    struct Acc {
        sum: Vec3,
        normal: Vec3,
        count: usize,
    }
    let mut cells: BTreeMap<(i64, i64, i64), Acc> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let acc = cells.entry(voxel_key(p, voxel_size)).or_insert(Acc {
            sum: [0.0; 3],
            normal: [0.0; 3],
            count: 0,
        });
        for a in 0..3 {
            acc.sum[a] += p[a];
        }
        if let Some(ns) = &cloud.normals {
            // align with the first normal in the cell before averaging
            let n = ns[i];
            let s = if acc.count > 0 && dot(&acc.normal, &n) < 0.0 { -1.0 } else { 1.0 };
            for a in 0..3 {
                acc.normal[a] += s * n[a];
            }
        }
        acc.count += 1;
    }
    let mut points = Vec::with_capacity(cells.len());
    let mut normals = Vec::with_capacity(cells.len());
    for acc in cells.values() {
        let c = acc.count as f64;
        points.push([acc.sum[0] / c, acc.sum[1] / c, acc.sum[2] / c]);
        let len = dot(&acc.normal, &acc.normal).sqrt();
        normals.push(if len > 0.0 {
            [acc.normal[0] / len, acc.normal[1] / len, acc.normal[2] / len]
        } else {
            [0.0, 0.0, 1.0]
        });
    }
    Ok(PointCloud {
        points,
        normals: cloud.normals.as_ref().map(|_| normals),
    })
}

/// Default voxel size: 1% of the cloud's bounding-box diagonal.
pub fn default_voxel_size(cloud: &PointCloud) -> f64 {
    0.01 * cloud.bbox_diagonal()
}

/// Keeps points inside the frustum of at least one view, preserving order.
pub fn frustum_cull(cloud: &PointCloud, views: &[CameraView]) -> Result<PointCloud> {
    if views.is_empty() {
        return Err(Error::precondition("frustum_cull needs at least one view"));
    }
    let keep: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| views.iter().any(|v| v.in_frustum(p)))
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}

/// Back-projects every valid depth pixel to a world-frame point (row-major order).
pub fn backproject_depth(view: &CameraView) -> Result<PointCloud> {
    let depth = view.depth.as_ref().ok_or(Error::MissingDepth)?;
    let k = &view.intrinsics;
    let (fx, fy, cx, cy) = (k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]);
    let mut points = Vec::new();
    for row in 0..depth.height {
        for col in 0..depth.width {
            let z = depth.get(row, col);
            if !(z > 0.0) || !z.is_finite() {
                continue;
            }
            let pc = [
                (col as f64 + 0.5 - cx) / fx * z,
                (row as f64 + 0.5 - cy) / fy * z,
                z,
            ];
            points.push(view.camera_to_world(&pc));
        }
    }
    Ok(PointCloud::new(points))
}

/// Normals from k-nearest-neighbour covariance, plus the indices whose
/// neighbourhood was degenerate (zero covariance).
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    pub degenerate: Vec<usize>,
}

/// Estimates per-point normals as the smallest-eigenvalue eigenvector of the
/// covariance of each point's neighbourhood (the point and its k nearest others).
///
/// Signs are fixed so the largest-magnitude component is positive.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    let n = cloud.len();
    if k < 3 {
        return Err(Error::precondition("estimate_normals needs k >= 3"));
    }
    if n <= k {
        return Err(Error::precondition(format!(
            "estimate_normals needs N > k, got N={n}, k={k}"
        )));
    }
    let tree = KdTree::build(&cloud.points);
    let mut normals = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let nbrs = tree.knn(p, k + 1);
        let mut mean = Vector3::zeros();
        for nb in &nbrs {
            mean += Vector3::from(cloud.points[nb.index]);
        }
        mean /= nbrs.len() as f64;
        let mut cov = Matrix3::zeros();
        for nb in &nbrs {
            let d = Vector3::from(cloud.points[nb.index]) - mean;
            cov += d * d.transpose();
        }
        if cov.iter().all(|&c| c == 0.0) {
            degenerate.push(i);
            normals.push([0.0, 0.0, 1.0]);
            continue;
        }
        let eig = SymmetricEigen::new(cov);
        let min_idx = eig.eigenvalues.imin();
        let v = eig.eigenvectors.column(min_idx).normalize();
        let mut nrm = [v[0], v[1], v[2]];
        let big = (0..3)
            .max_by(|&a, &b| nrm[a].abs().total_cmp(&nrm[b].abs()))
            .unwrap_or(2);
        if nrm[big] < 0.0 {
            nrm = [-nrm[0], -nrm[1], -nrm[2]];
        }
        normals.push(nrm);
    }
    Ok(NormalEstimate {
        cloud: PointCloud {
            points: cloud.points.clone(),
            normals: Some(normals),
        },
        degenerate,
    })
}

/// Expresses a world-frame cloud in the camera frame of `first_view`.
pub fn to_first_view_frame(cloud: &PointCloud, first_view: &CameraView) -> PointCloud {
    let r = first_view.rotation();
    let rt = r.transpose();
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| first_view.world_to_camera(p))
            .collect(),
        normals: cloud.normals.as_ref().map(|ns| {
            ns.iter()
                .map(|n| {
                    let v = rt * Vector3::from(*n);
                    [v[0], v[1], v[2]]
                })
                .collect()
        }),
    }
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f64, 0.0, 0.0]).collect())
    }

    fn fov90_camera(size: usize) -> CameraView {
        let k = CameraView::intrinsics_from_fov(size, size, std::f64::consts::FRAC_PI_2);
        CameraView::new(k, Matrix4::identity(), size, size, 0.1, 10.0).unwrap()
    }

    #[test]
    fn fps_line_examples() {
        assert_eq!(farthest_point_sample(&line(4), 2, 0).unwrap(), vec![0, 3]);
        assert_eq!(farthest_point_sample(&line(4), 3, 0).unwrap(), vec![0, 3, 1]);
    }

    #[test]
    fn fps_full_is_permutation() {
        let c = line(7);
        let mut idx = farthest_point_sample(&c, 7, 4).unwrap();
        assert_eq!(idx[0], 4);
        idx.sort();
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn fps_rejects_bad_arguments() {
        assert!(farthest_point_sample(&line(4), 5, 0).is_err());
        assert!(farthest_point_sample(&line(4), 2, 4).is_err());
        assert!(farthest_point_sample(&line(4), 0, 0).is_err());
    }

    #[test]
    fn voxel_filter_centroid() {
        let c = PointCloud::new(vec![[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]]);
        let out = voxel_filter(&c, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        for a in 0..3 {
            assert!((out.points[0][a] - 0.15).abs() < 1e-15);
        }
        assert!(voxel_filter(&c, 0.0).is_err());
    }

    #[test]
    fn voxel_filter_singletons_are_fixed_points() {
        let c = PointCloud::new(vec![[2.5, 0.5, 0.5], [0.5, 0.5, 0.5], [-0.5, 3.5, 0.5]]);
        let out = voxel_filter(&c, 1.0).unwrap();
        assert_eq!(out.len(), 3);
        // ascending key order
        assert_eq!(out.points, vec![[-0.5, 3.5, 0.5], [0.5, 0.5, 0.5], [2.5, 0.5, 0.5]]);
    }

    #[test]
    fn frustum_examples() {
        let cam = fov90_camera(64);
        let c = PointCloud::new(vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [2.0, 0.0, 1.0]]);
        let kept = frustum_cull(&c, &[cam]).unwrap();
        assert_eq!(kept.points, vec![[0.0, 0.0, 1.0]]);
        assert!(frustum_cull(&c, &[]).is_err());
    }

    #[test]
    fn backproject_principal_pixel() {
        let k = Matrix3::new(1.0, 0.0, 0.5, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0);
        let mut view = CameraView::new(k, Matrix4::identity(), 1, 1, 0.01, 100.0).unwrap();
        assert!(matches!(backproject_depth(&view), Err(Error::MissingDepth)));
        view.depth = Some(DepthMap {
            height: 1,
            width: 1,
            data: vec![2.0],
        });
        let pc = backproject_depth(&view).unwrap();
        assert_eq!(pc.points, vec![[0.0, 0.0, 2.0]]);
    }

    #[test]
    fn backproject_skips_invalid_and_keeps_depth() {
        let mut view = fov90_camera(3);
        view.depth = Some(DepthMap {
            height: 3,
            width: 3,
            data: vec![1.0, 0.0, 2.0, 3.0, -1.0, 4.0, 5.0, 6.0, 7.0],
        });
        let pc = backproject_depth(&view).unwrap();
        let zs: Vec<f64> = pc.points.iter().map(|p| p[2]).collect();
        assert_eq!(zs, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn plane_normals() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f64 * 0.1, j as f64 * 0.1, 0.0]);
            }
        }
        let est = estimate_normals(&PointCloud::new(pts.clone()), 8).unwrap();
        assert!(est.degenerate.is_empty());
        for n in est.cloud.normals.unwrap() {
            assert!((n[2] - 1.0).abs() < 1e-12 && n[0].abs() < 1e-12 && n[1].abs() < 1e-12);
        }
        let yz: Vec<Vec3> = pts.iter().map(|p| [0.0, p[0], p[1]]).collect();
        let est = estimate_normals(&PointCloud::new(yz), 8).unwrap();
        for n in est.cloud.normals.unwrap() {
            assert!((n[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_neighbourhood_flagged() {
        let pts = vec![[1.0, 1.0, 1.0]; 6];
        let est = estimate_normals(&PointCloud::new(pts), 3).unwrap();
        assert_eq!(est.degenerate.len(), 6);
        assert_eq!(est.cloud.normals.unwrap()[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn first_view_frame_translation() {
        let mut pose = Matrix4::identity();
        pose[(0, 3)] = 1.0;
        pose[(1, 3)] = -2.0;
        pose[(2, 3)] = 0.5;
        let cam = CameraView::new(
            CameraView::intrinsics_from_fov(8, 8, 1.0),
            pose,
            8,
            8,
            0.01,
            100.0,
        )
        .unwrap();
        let c = PointCloud::new(vec![[1.0, 1.0, 1.0]]);
        assert_eq!(to_first_view_frame(&c, &cam).points, vec![[0.0, 3.0, 0.5]]);
        let id = fov90_camera(8);
        assert_eq!(to_first_view_frame(&c, &id).points, c.points);
    }

    #[test]
    fn camera_validation() {
        let k = CameraView::intrinsics_from_fov(8, 8, 1.0);
        let mut bad = Matrix4::identity();
        bad[(0, 0)] = 2.0;
        assert!(CameraView::new(k, bad, 8, 8, 0.01, 1.0).is_err());
        assert!(CameraView::new(k, Matrix4::identity(), 8, 8, 1.0, 0.5).is_err());
        let look = CameraView::look_at([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!(CameraView::new(k, look, 8, 8, 0.01, 1.0).is_ok());
    }
}
