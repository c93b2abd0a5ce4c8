//! Procedural box/sphere rooms, analytic ray casting, complete and visible
//! point clouds, and on-disk dataset assembly.
//!
//! Scenes live in a `4 × 3 × 4` room (floor at `y = 0`, open ceiling). The
//! floor and four side walls are thin boxes derived from the room bounds;
//! only their room-facing faces are surface-sampled.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::{self, RgbImage};
use crate::geometry::{
    backproject_depth, default_voxel_size, dot, frustum_cull, to_first_view_frame, voxel_filter, CameraView, DepthMap,
    PointCloud, Vec3, DEFAULT_FAR, DEFAULT_NEAR,
};
use crate::util::{derive_seed, seeded_rng, write_atomic};

pub const ROOM_MIN: Vec3 = [-2.0, 0.0, -2.0];
pub const ROOM_MAX: Vec3 = [2.0, 3.0, 2.0];
const WALL_THICKNESS: f64 = 0.05;
/// Normalised clouds fit in `[-NORM_EXTENT, NORM_EXTENT]³`.
pub const NORM_EXTENT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Box { half_extents: Vec3 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub center: Vec3,
    /// Rotation about the world `+y` axis, radians.
    pub yaw: f64,
}

fn rot_y(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn v3(a: &Vec3) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr(v: &Vector3<f64>) -> Vec3 {
    [v[0], v[1], v[2]]
}

/// A ray hit: distance along the ray and the outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

impl Primitive {
    pub fn new_box(center: Vec3, half_extents: Vec3, yaw: f64) -> Self {
        Primitive {
            shape: Shape::Box { half_extents },
            center,
            yaw,
        }
    }

    pub fn new_sphere(center: Vec3, radius: f64) -> Self {
        Primitive {
            shape: Shape::Sphere { radius },
            center,
            yaw: 0.0,
        }
    }

    fn to_local(&self, p: &Vec3) -> Vector3<f64> {
        rot_y(self.yaw).transpose() * (v3(p) - v3(&self.center))
    }

    /// Signed distance (negative inside).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => crate::geometry::dist(p, &self.center) - radius,
            Shape::Box { half_extents: h } => {
                let l = self.to_local(p);
                let q = [l[0].abs() - h[0], l[1].abs() - h[1], l[2].abs() - h[2]];
                let outside = q.iter().map(|x| x.max(0.0).powi(2)).sum::<f64>().sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
        }
    }

    /// Nearest intersection with `t > 1e-9` of the ray `o + t·d`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        const EPS: f64 = 1e-9;
        match self.shape {
            Shape::Sphere { radius } => {
                let oc = v3(o) - v3(&self.center);
                let dv = v3(d);
                let a = dv.dot(&dv);
                let b = oc.dot(&dv);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > EPS)?;
                let n = (oc + dv * t) / radius;
                Some(Hit { t, normal: arr(&n) })
            }
            Shape::Box { half_extents: h } => {
                let r = rot_y(self.yaw);
                let ol = r.transpose() * (v3(o) - v3(&self.center));
                let dl = r.transpose() * v3(d);
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut amin, mut amax) = (0, 0);
                for a in 0..3 {
                    if dl[a].abs() < 1e-15 {
                        if ol[a].abs() > h[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-h[a] - ol[a]) / dl[a];
                    let t2 = (h[a] - ol[a]) / dl[a];
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    if lo > tmin {
                        tmin = lo;
                        amin = a;
                    }
                    if hi < tmax {
                        tmax = hi;
                        amax = a;
                    }
                }
                if tmax < tmin || tmax <= EPS {
                    return None;
                }
                let (t, axis, sign) = if tmin > EPS {
                    (tmin, amin, -dl[amin].signum())
                } else {
                    (tmax, amax, dl[amax].signum())
                };
                let mut nl = Vector3::zeros();
                nl[axis] = sign;
                Some(Hit {
                    t,
                    normal: arr(&(r * nl)),
                })
            }
        }
    }

    /// Exact surface area.
    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
            Shape::Box { half_extents: h } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
        }
    }

    /// Uniform random surface point and its outward normal.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        match self.shape {
            Shape::Sphere { radius } => {
                let z: f64 = rng.random_range(-1.0..=1.0);
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let s = (1.0 - z * z).max(0.0).sqrt();
                let n = [s * phi.cos(), s * phi.sin(), z];
                let c = self.center;
                ([c[0] + radius * n[0], c[1] + radius * n[1], c[2] + radius * n[2]], n)
            }
            Shape::Box { half_extents: h } => {
                let faces = box_faces(&h);
                let total: f64 = faces.iter().map(|f| f.2).sum();
                let mut pick = rng.random_range(0.0..total);
                let mut face = faces[5];
                for f in faces {
                    if pick < f.2 {
                        face = f;
                        break;
                    }
                    pick -= f.2;
                }
                let (axis, sign, _) = face;
                let mut l = Vector3::zeros();
                for a in 0..3 {
                    l[a] = if a == axis {
                        sign * h[a]
                    } else {
                        rng.random_range(-h[a]..=h[a])
                    };
                }
                let mut nl = Vector3::zeros();
                nl[axis] = sign;
                let r = rot_y(self.yaw);
                (arr(&(r * l + v3(&self.center))), arr(&(r * nl)))
            }
        }
    }
}

/// `(axis, sign, area)` for the six faces of a box.
fn box_faces(h: &Vec3) -> [(usize, f64, f64); 6] {
    let area = |a: usize| {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        4.0 * h[b] * h[c]
    };
    [
        (0, -1.0, area(0)),
        (0, 1.0, area(0)),
        (1, -1.0, area(1)),
        (1, 1.0, area(1)),
        (2, -1.0, area(2)),
        (2, 1.0, area(2)),
    ]
}

/// A room-facing wall: the thin box and its inner face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub solid: Primitive,
    /// Fixed axis of the inner face, its coordinate, and the inward normal sign.
    pub axis: usize,
    pub coord: f64,
    pub inward: f64,
}

impl Wall {
    fn face_ranges(&self, room_min: &Vec3, room_max: &Vec3) -> [(f64, f64); 3] {
        let mut r = [(0.0, 0.0); 3];
        for a in 0..3 {
            r[a] = if a == self.axis {
                (self.coord, self.coord)
            } else {
                (room_min[a], room_max[a])
            };
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub room_min: Vec3,
    pub room_max: Vec3,
    /// Whether the floor and four side walls are present.
    pub walls: bool,
}

impl SceneSpec {
    pub fn empty() -> Self {
        SceneSpec {
            seed: 0,
            primitives: Vec::new(),
            room_min: ROOM_MIN,
            room_max: ROOM_MAX,
            walls: false,
        }
    }

    pub fn wall_list(&self) -> Vec<Wall> {
        if !self.walls {
            return Vec::new();
        }
        let (lo, hi) = (self.room_min, self.room_max);
        let th = WALL_THICKNESS;
        let mid = |a: usize| 0.5 * (lo[a] + hi[a]);
        let half = |a: usize| 0.5 * (hi[a] - lo[a]) + th;
        let mut out = Vec::with_capacity(5);
        // floor
        out.push(Wall {
            solid: Primitive::new_box([mid(0), lo[1] - 0.5 * th, mid(2)], [half(0), 0.5 * th, half(2)], 0.0),
            axis: 1,
            coord: lo[1],
            inward: 1.0,
        });
        for (axis, side) in [(0, -1.0), (0, 1.0), (2, -1.0), (2, 1.0)] {
            let coord = if side < 0.0 { lo[axis] } else { hi[axis] };
            let mut center = [mid(0), mid(1), mid(2)];
            center[axis] = coord + side * 0.5 * th;
            let mut h = [half(0), 0.5 * (hi[1] - lo[1]), half(2)];
            h[axis] = 0.5 * th;
            out.push(Wall {
                solid: Primitive::new_box(center, h, 0.0),
                axis,
                coord,
                inward: -side,
            });
        }
        out
    }

    /// Objects followed by wall solids.
    pub fn solids(&self) -> Vec<Primitive> {
        let mut s = self.primitives.clone();
        s.extend(self.wall_list().iter().map(|w| w.solid));
        s
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.solids().iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    /// Closest hit over all solids, with the index of the solid hit.
    pub fn cast(&self, o: &Vec3, d: &Vec3) -> Option<(usize, Hit)> {
        cast_solids(&self.solids(), o, d)
    }

    /// True iff every primitive lies inside the room box.
    pub fn contained(&self) -> bool {
        self.primitives.iter().all(|p| {
            let (lo, hi) = primitive_bounds(p);
            (0..3).all(|a| lo[a] >= self.room_min[a] - 1e-9 && hi[a] <= self.room_max[a] + 1e-9)
        })
    }
}

fn cast_solids(solids: &[Primitive], o: &Vec3, d: &Vec3) -> Option<(usize, Hit)> {
    let mut best: Option<(usize, Hit)> = None;
    for (i, s) in solids.iter().enumerate() {
        if let Some(h) = s.intersect(o, d) {
            if best.is_none_or(|(_, b)| h.t < b.t) {
                best = Some((i, h));
            }
        }
    }
    best
}

/// Axis-aligned bounds of a primitive.
pub fn primitive_bounds(p: &Primitive) -> (Vec3, Vec3) {
    let ext = match p.shape {
        Shape::Sphere { radius } => [radius; 3],
        Shape::Box { half_extents: h } => {
            let r = rot_y(p.yaw);
            let mut e = [0.0; 3];
            for (a, ea) in e.iter_mut().enumerate() {
                *ea = (0..3).map(|b| r[(a, b)].abs() * h[b]).sum();
            }
            e
        }
    };
    let c = p.center;
    (
        [c[0] - ext[0], c[1] - ext[1], c[2] - ext[2]],
        [c[0] + ext[0], c[1] + ext[1], c[2] + ext[2]],
    )
}

/// Deterministic random room with 3–12 boxes and spheres.
pub fn generate_scene(seed: u64) -> SceneSpec {
    let mut rng = seeded_rng(derive_seed(seed, 0x5ce7e));
    let count = rng.random_range(3..=12);
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let p = if rng.random_bool(0.5) {
            let h: Vec3 = [
                rng.random_range(0.15..0.6),
                rng.random_range(0.1..0.6),
                rng.random_range(0.15..0.6),
            ];
            let yaw = rng.random_range(0.0..PI);
            let reach = (h[0] * h[0] + h[2] * h[2]).sqrt();
            let x = rng.random_range(ROOM_MIN[0] + reach..ROOM_MAX[0] - reach);
            let z = rng.random_range(ROOM_MIN[2] + reach..ROOM_MAX[2] - reach);
            Primitive::new_box([x, h[1], z], h, yaw)
        } else {
            let r: f64 = rng.random_range(0.15..0.5);
            let x = rng.random_range(ROOM_MIN[0] + r..ROOM_MAX[0] - r);
            let z = rng.random_range(ROOM_MIN[2] + r..ROOM_MAX[2] - r);
            let y = r + rng.random_range(0.0..0.8);
            Primitive::new_sphere([x, y, z], r)
        };
        primitives.push(p);
    }
    SceneSpec {
        seed,
        primitives,
        room_min: ROOM_MIN,
        room_max: ROOM_MAX,
        walls: true,
    }
}

/// Depth of the nearest surface through every pixel centre (0 on a miss).
pub fn render_depth(scene: &SceneSpec, view: &CameraView) -> DepthMap {
    render(scene, view).0
}

/// Depth plus Lambertian shading `clamp(0.2 + 0.8·max(0, n·l))` with
/// `l = normalize(1, 1, 1)`; misses are black.
pub fn render(scene: &SceneSpec, view: &CameraView) -> (DepthMap, RgbImage) {
    let solids = scene.solids();
    let l = 1.0 / 3f64.sqrt();
    let light = [l, l, l];
    let mut depth = DepthMap::zeros(view.height, view.width);
    let mut img = RgbImage::new(view.height, view.width);
    for row in 0..view.height {
        for col in 0..view.width {
            let (o, d) = view.pixel_ray(row, col);
            if let Some((_, h)) = cast_solids(&solids, &o, &d) {
                // camera-frame z of the ray direction is 1, so t is depth
                depth.data[row * view.width + col] = h.t;
                let s = (0.2 + 0.8 * dot(&h.normal, &light).max(0.0)).clamp(0.0, 1.0);
                img.set(row, col, [s, s, s]);
            }
        }
    }
    (depth, img)
}

/// Area-weighted surface samples over objects and room-facing wall faces.
/// Samples on or inside another solid are discarded.
fn sample_surfaces<R: Rng + ?Sized>(scene: &SceneSpec, count: usize, rng: &mut R) -> PointCloud {
    let walls = scene.wall_list();
    let solids = scene.solids();
    let mut areas: Vec<f64> = scene.primitives.iter().map(|p| p.area()).collect();
    for w in &walls {
        let r = w.face_ranges(&scene.room_min, &scene.room_max);
        areas.push((0..3).filter(|&a| a != w.axis).map(|a| r[a].1 - r[a].0).product());
    }
    let total: f64 = areas.iter().sum();
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    if total <= 0.0 {
        return PointCloud::new(points);
    }
    let np = scene.primitives.len();
    for _ in 0..count {
        let mut pick = rng.random_range(0.0..total);
        let mut k = areas.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                k = i;
                break;
            }
            pick -= a;
        }
        let (p, n) = if k < np {
            scene.primitives[k].sample_surface(rng)
        } else {
            let w = &walls[k - np];
            let r = w.face_ranges(&scene.room_min, &scene.room_max);
            let mut p = [0.0; 3];
            for a in 0..3 {
                p[a] = if a == w.axis { w.coord } else { rng.random_range(r[a].0..=r[a].1) };
            }
            let mut n = [0.0; 3];
            n[w.axis] = w.inward;
            (p, n)
        };
        let covered = solids
            .iter()
            .enumerate()
            .any(|(j, s)| j != k && s.sdf(&p) <= 1e-7);
        if !covered {
            points.push(p);
            normals.push(n);
        }
    }
    PointCloud {
        points,
        normals: Some(normals),
    }
}

/// Exactly `n` surface points (visible and occluded) inside the union of the
/// view frusta, in the world frame.
pub fn sample_complete_cloud_world<R: Rng + ?Sized>(scene: &SceneSpec, views: &[CameraView], n: usize, rng: &mut R) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::precondition("complete cloud needs n >= 1"));
    }
    let mut kept = Vec::new();
    for _ in 0..100 {
        let batch = frustum_cull(&sample_surfaces(scene, n, rng), views)?;
        kept.push(batch);
        if kept.iter().map(|c| c.len()).sum::<usize>() >= n {
            let all = PointCloud::concat(&kept);
            return Ok(all.select(&(0..n).collect::<Vec<_>>()));
        }
    }
    let got: usize = kept.iter().map(|c| c.len()).sum();
    Err(Error::precondition(format!(
        "view frusta cover too little surface: {got} of {n} points after 100 rounds"
    )))
}

/// [`sample_complete_cloud_world`] expressed in the first view's frame.
pub fn sample_complete_cloud<R: Rng + ?Sized>(scene: &SceneSpec, views: &[CameraView], n: usize, rng: &mut R) -> Result<PointCloud> {
    let first = views.first().ok_or_else(|| Error::precondition("need at least one view"))?;
    Ok(to_first_view_frame(&sample_complete_cloud_world(scene, views, n, rng)?, first))
}

/// Union of back-projected depth, voxel-filtered (`None` → 1% of the union's
/// bounding-box diagonal), in the first view's frame.
pub fn build_visible_cloud(views: &[CameraView], voxel_size: Option<f64>) -> Result<PointCloud> {
    let raw = raw_visible_union(views)?;
    raw.require_non_empty("visible")?;
    let vs = voxel_size.unwrap_or_else(|| default_voxel_size(&raw));
    voxel_filter(&raw, vs)
}

/// Union of back-projections without filtering, in the first view's frame.
pub fn raw_visible_union(views: &[CameraView]) -> Result<PointCloud> {
    let first = views.first().ok_or_else(|| Error::precondition("need at least one view"))?;
    let parts = views.iter().map(backproject_depth).collect::<Result<Vec<_>>>()?;
    Ok(to_first_view_frame(&PointCloud::concat(&parts), first))
}

/// Isotropic map `p ↦ (p − offset)·scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub offset: Vec3,
}

impl Normalization {
    /// Maps the bounding box of `cloud` into `[-0.9, 0.9]³`, centred.
    pub fn fit(cloud: &PointCloud) -> Result<Self> {
        let (lo, hi) = cloud
            .bounds()
            .ok_or_else(|| Error::precondition("cannot normalise an empty cloud"))?;
        let ext = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let scale = if ext > 0.0 { 2.0 * NORM_EXTENT / ext } else { 1.0 };
        Ok(Normalization {
            scale,
            offset: [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])],
        })
    }

    pub fn identity() -> Self {
        Normalization {
            scale: 1.0,
            offset: [0.0; 3],
        }
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let o = self.offset;
        cloud.scaled_translated(self.scale, &[-o[0] * self.scale, -o[1] * self.scale, -o[2] * self.scale])
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        cloud.scaled_translated(1.0 / self.scale, &self.offset)
    }
}

/// Fraction of world points not seen by any view (depth test with a 5%
/// relative tolerance against the rendered depth).
pub fn occluded_fraction(world_points: &PointCloud, views: &[CameraView]) -> f64 {
    if world_points.is_empty() {
        return 0.0;
    }
    let hidden = world_points
        .points
        .iter()
        .filter(|p| !views.iter().any(|v| visible_in(v, p)))
        .count();
    hidden as f64 / world_points.len() as f64
}

fn visible_in(view: &CameraView, p: &Vec3) -> bool {
    let Some(depth) = &view.depth else { return false };
    if !view.in_frustum(p) {
        return false;
    }
    let pc = view.world_to_camera(p);
    let (u, v, z) = view.project_camera(&pc);
    let d = depth.get(v as usize, u as usize);
    d > 0.0 && (z - d).abs() <= 0.05 * z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    /// Each sample draws its view count uniformly from this list.
    pub views: Vec<usize>,
    /// Points in each complete cloud.
    pub points: usize,
    pub image_size: usize,
    pub fov_deg: f64,
    /// Voxel size for the visible cloud; `null` → 1% of its diagonal.
    pub voxel_size: Option<f64>,
    /// Minimum fraction of view-0 pixels seen again by view 1.
    pub min_covisibility: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: 64,
            val: 8,
            views: vec![1, 2],
            points: 4096,
            image_size: 64,
            fov_deg: 80.0,
            voxel_size: None,
            min_covisibility: 0.3,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() || self.views.iter().any(|&k| k == 0) {
            return Err(Error::Config("views must list positive view counts".into()));
        }
        if self.points == 0 || self.image_size == 0 {
            return Err(Error::Config("points and image_size must be positive".into()));
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 179.0) {
            return Err(Error::Config(format!("fov_deg {} out of range", self.fov_deg)));
        }
        if let Some(v) = self.voxel_size {
            if !(v > 0.0) {
                return Err(Error::Config("voxel_size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One generated sample in memory.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub scene: SceneSpec,
    /// Views with rendered depth.
    pub views: Vec<CameraView>,
    pub images: Vec<RgbImage>,
    /// Complete cloud in the first view's frame (scene units, with normals).
    pub complete_cloud: PointCloud,
    /// Voxel-filtered union of back-projections, first view's frame.
    pub visible_cloud: PointCloud,
    pub normalization: Normalization,
    pub occluded_fraction: f64,
}

impl SceneSample {
    pub fn k(&self) -> usize {
        self.views.len()
    }

    pub fn normalized_complete(&self) -> PointCloud {
        self.normalization.apply(&self.complete_cloud)
    }

    pub fn normalized_visible(&self) -> PointCloud {
        self.normalization.apply(&self.visible_cloud)
    }
}

const ROOM_CENTER: Vec3 = [0.0, 1.5, 0.0];

fn camera_at<R: Rng + ?Sized>(azimuth: f64, cfg: &DataConfig, rng: &mut R) -> Result<CameraView> {
    let radius = rng.random_range(1.1..1.45);
    let elev = rng.random_range(15f64.to_radians()..50f64.to_radians());
    let eye = [
        ROOM_CENTER[0] + radius * elev.cos() * azimuth.cos(),
        ROOM_CENTER[1] + radius * elev.sin(),
        ROOM_CENTER[2] + radius * elev.cos() * azimuth.sin(),
    ];
    let target = [
        rng.random_range(-0.3..0.3),
        0.4 + rng.random_range(-0.1..0.1),
        rng.random_range(-0.3..0.3),
    ];
    let k = CameraView::intrinsics_from_fov(cfg.image_size, cfg.image_size, cfg.fov_deg.to_radians());
    let pose = CameraView::look_at(eye, target, [0.0, 1.0, 0.0]);
    CameraView::new(k, pose, cfg.image_size, cfg.image_size, DEFAULT_NEAR, DEFAULT_FAR)
}

fn camera_clear(scene: &SceneSpec, view: &CameraView) -> bool {
    scene.primitives.iter().all(|p| p.sdf(&view.center()) > 0.1)
}

/// Fraction of rendered pixels whose first hit is an object (not a wall).
fn object_coverage(scene: &SceneSpec, view: &CameraView) -> f64 {
    let solids = scene.solids();
    let np = scene.primitives.len();
    let mut hits = 0;
    for row in 0..view.height {
        for col in 0..view.width {
            let (o, d) = view.pixel_ray(row, col);
            if matches!(cast_solids(&solids, &o, &d), Some((i, _)) if i < np) {
                hits += 1;
            }
        }
    }
    hits as f64 / (view.width * view.height) as f64
}

/// Fraction of `a`'s valid pixels whose surface point `b` also sees.
pub fn covisibility(a: &CameraView, b: &CameraView) -> Result<f64> {
    let pts = backproject_depth(a)?;
    if pts.is_empty() {
        return Ok(0.0);
    }
    let seen = pts.points.iter().filter(|p| visible_in(b, p)).count();
    Ok(seen as f64 / pts.len() as f64)
}

fn with_depth(scene: &SceneSpec, mut view: CameraView) -> (CameraView, RgbImage) {
    let (d, img) = render(scene, &view);
    view.depth = Some(d);
    (view, img)
}

/// Builds one full sample for `seed` with `k` views.
pub fn generate_sample(seed: u64, k: usize, cfg: &DataConfig) -> Result<SceneSample> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::precondition("need at least one view"));
    }
    let scene = generate_scene(seed);
    let mut rng = seeded_rng(derive_seed(seed, 0xca3e7a));
    let base_az = rng.random_range(0.0..2.0 * PI);

    let mut first = None;
    for _ in 0..100 {
        let v = camera_at(base_az, cfg, &mut rng)?;
        let ok = camera_clear(&scene, &v) && object_coverage(&scene, &v) >= 0.05;
        first = Some(v);
        if ok {
            break;
        }
    }
    let (v0, img0) = with_depth(&scene, first.expect("at least one attempt"));
    let mut views = vec![v0];
    let mut images = vec![img0];
    for _ in 1..k {
        let mut best: Option<(f64, CameraView, RgbImage)> = None;
        for _ in 0..200 {
            let off = rng.random_range(20f64.to_radians()..60f64.to_radians());
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let cand = camera_at(base_az + sign * off, cfg, &mut rng)?;
            if !camera_clear(&scene, &cand) {
                continue;
            }
            let (cand, img) = with_depth(&scene, cand);
            let cov = covisibility(&views[0], &cand)?;
            let good = cov >= cfg.min_covisibility;
            if best.as_ref().is_none_or(|b| cov > b.0) {
                best = Some((cov, cand, img));
            }
            if good {
                break;
            }
        }
        let (_, v, img) = best.ok_or_else(|| Error::precondition("could not place a second camera"))?;
        views.push(v);
        images.push(img);
    }

    let mut crng = seeded_rng(derive_seed(seed, 0xc0de));
    let world = sample_complete_cloud_world(&scene, &views, cfg.points, &mut crng)?;
    let occluded = occluded_fraction(&world, &views);
    let complete = to_first_view_frame(&world, &views[0]);
    let visible = build_visible_cloud(&views, cfg.voxel_size)?;
    let normalization = Normalization::fit(&complete)?;
    Ok(SceneSample {
        scene,
        views,
        images,
        complete_cloud: complete,
        visible_cloud: visible,
        normalization,
        occluded_fraction: occluded,
    })
}

/// Extra views on the same hemisphere, used to build a dense visible cloud.
pub fn dense_views(scene: &SceneSpec, count: usize, cfg: &DataConfig, seed: u64) -> Result<Vec<CameraView>> {
    let mut rng = seeded_rng(derive_seed(seed, 0xde75e));
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let az = 2.0 * PI * i as f64 / count as f64;
        let v = camera_at(az, cfg, &mut rng)?;
        out.push(with_depth(scene, v).0);
    }
    Ok(out)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub split: String,
    pub seed: u64,
    pub k: usize,
    pub scene: String,
    pub complete: String,
    pub visible: String,
    pub depths: Vec<String>,
    pub images: Vec<String>,
    pub cameras: Vec<String>,
    pub norm_scale: f64,
    pub norm_offset: Vec3,
    pub occluded_fraction: f64,
}

fn sample_seed(cfg: &DataConfig, split: &str, index: usize) -> u64 {
    let tag = match split {
        "train" => 1u64 << 40,
        _ => 2u64 << 40,
    };
    derive_seed(cfg.seed, tag + index as u64)
}

fn write_sample(dir: &Path, rel: &str, id: &str, split: &str, seed: u64, s: &SceneSample) -> Result<ManifestRecord> {
    let base = dir.join(rel);
    let json = serde_json::to_vec_pretty(&s.scene).map_err(|e| Error::format(&base, e.to_string()))?;
    write_atomic(&base.join("scene.json"), &json)?;
    io::write_npc(&base.join("complete.npc"), &s.complete_cloud)?;
    io::write_npc(&base.join("visible.npc"), &s.visible_cloud)?;
    let mut depths = Vec::new();
    let mut images = Vec::new();
    let mut cameras = Vec::new();
    for (i, (v, img)) in s.views.iter().zip(&s.images).enumerate() {
        io::write_ndm(&base.join(format!("view{i}.ndm")), v.depth.as_ref().expect("rendered"))?;
        io::write_nim(&base.join(format!("view{i}.nim")), img)?;
        io::write_camera(&base.join(format!("view{i}.json")), v)?;
        depths.push(format!("{rel}/view{i}.ndm"));
        images.push(format!("{rel}/view{i}.nim"));
        cameras.push(format!("{rel}/view{i}.json"));
    }
    Ok(ManifestRecord {
        id: id.to_string(),
        split: split.to_string(),
        seed,
        k: s.k(),
        scene: format!("{rel}/scene.json"),
        complete: format!("{rel}/complete.npc"),
        visible: format!("{rel}/visible.npc"),
        depths,
        images,
        cameras,
        norm_scale: s.normalization.scale,
        norm_offset: s.normalization.offset,
        occluded_fraction: s.occluded_fraction,
    })
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Generates every sample under `dir` and writes `dir/manifest.jsonl`.
pub fn build_dataset(cfg: &DataConfig, dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let jobs: Vec<(String, usize)> = (0..cfg.train)
        .map(|i| ("train".to_string(), i))
        .chain((0..cfg.val).map(|i| ("val".to_string(), i)))
        .collect();
    let records = crate::util::with_thread_cap(|| {
        jobs.par_iter()
            .map(|(split, i)| {
                let seed = sample_seed(cfg, split, *i);
                let mut krng = seeded_rng(derive_seed(seed, 0x4b));
                let k = cfg.views[krng.random_range(0..cfg.views.len())];
                let sample = generate_sample(seed, k, cfg)?;
                let id = format!("{split}_{i:05}");
                write_sample(dir, &format!("samples/{id}"), &id, split, seed, &sample)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    let path = dir.join(MANIFEST_NAME);
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let bytes = crate::util::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// A sample read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: ManifestRecord,
    pub views: Vec<CameraView>,
    pub images: Vec<RgbImage>,
    pub complete: PointCloud,
    pub visible: PointCloud,
    pub normalization: Normalization,
}

impl LoadedSample {
    pub fn normalized_complete(&self) -> PointCloud {
        self.normalization.apply(&self.complete)
    }

    pub fn normalized_visible(&self) -> PointCloud {
        self.normalization.apply(&self.visible)
    }
}

pub fn load_sample(base: &Path, record: &ManifestRecord) -> Result<LoadedSample> {
    let mut views = Vec::with_capacity(record.k);
    for (c, d) in record.cameras.iter().zip(&record.depths) {
        let mut v = io::read_camera(&base.join(c))?;
        v.depth = Some(io::read_ndm(&base.join(d))?);
        v.validate()?;
        views.push(v);
    }
    let images = record
        .images
        .iter()
        .map(|p| io::read_nim(&base.join(p)))
        .collect::<Result<Vec<_>>>()?;
    if views.len() != record.k || images.len() != record.k {
        return Err(Error::format(base.join(&record.id), "view count does not match k"));
    }
    Ok(LoadedSample {
        record: record.clone(),
        views,
        images,
        complete: io::read_npc(&base.join(&record.complete))?,
        visible: io::read_npc(&base.join(&record.visible))?,
        normalization: Normalization {
            scale: record.norm_scale,
            offset: record.norm_offset,
        },
    })
}

/// Loads every record of `split` (or all when `None`) from a manifest.
pub fn load_split(manifest: &Path, split: Option<&str>) -> Result<Vec<LoadedSample>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| load_sample(base, r))
        .collect()
}

/// Layout hash used by the diversity check: primitive count and rounded centres.
pub fn layout_key(scene: &SceneSpec) -> String {
    let mut m = BTreeMap::new();
    m.insert("n", scene.primitives.len().to_string());
    m.insert(
        "c",
        scene
            .primitives
            .iter()
            .map(|p| format!("{:.2},{:.2}", p.center[0], p.center[2]))
            .collect::<Vec<_>>()
            .join(";"),
    );
    format!("{m:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera(size: usize) -> CameraView {
        let k = CameraView::intrinsics_from_fov(size, size, 90f64.to_radians());
        CameraView::new(k, nalgebra::Matrix4::identity(), size, size, 0.01, 100.0).unwrap()
    }

    #[test]
    fn frontal_box_depth() {
        let mut s = SceneSpec::empty();
        s.primitives.push(Primitive::new_box([0.0, 0.0, 3.0], [0.5, 0.5, 0.5], 0.0));
        let d = render_depth(&s, &axis_camera(9));
        assert!((d.get(4, 4) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_all_zero() {
        let d = render_depth(&SceneSpec::empty(), &axis_camera(8));
        assert!(d.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sphere_depth_on_axis() {
        let mut s = SceneSpec::empty();
        s.primitives.push(Primitive::new_sphere([0.0, 0.0, 4.0], 1.0));
        let d = render_depth(&s, &axis_camera(9));
        assert!((d.get(4, 4) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn scenes_are_deterministic_and_contained() {
        for seed in 0..200 {
            let a = generate_scene(seed);
            let b = generate_scene(seed);
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert!(a.contained(), "seed {seed}");
            assert!((3..=12).contains(&a.primitives.len()));
        }
    }

    #[test]
    fn surface_samples_lie_on_surfaces() {
        let scene = generate_scene(4);
        let mut rng = seeded_rng(1);
        let c = sample_surfaces(&scene, 2000, &mut rng);
        for p in &c.points {
            assert!(scene.sdf(p).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization_round_trip() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0], [3.0, 2.5, 3.5]]);
        let n = Normalization::fit(&c).unwrap();
        let a = n.apply(&c);
        let (lo, hi) = a.bounds().unwrap();
        assert!((lo[0] + 0.9).abs() < 1e-12 && (hi[0] - 0.9).abs() < 1e-12);
        let back = n.invert(&a);
        for (p, q) in back.points.iter().zip(&c.points) {
            assert!(crate::geometry::dist(p, q) < 1e-12);
        }
    }
}
