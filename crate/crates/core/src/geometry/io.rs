//! Binary and JSON file formats.
//!
//! | magic  | payload                                                        |
//! |--------|----------------------------------------------------------------|
//! | `NPC1` | u32 N, u8 flags (bit 0 = normals), N×3 f32 points, [N×3 f32 normals] |
//! | `NDM1` | u32 H, u32 W, H·W f32 depths (row-major, 0 = invalid)           |
//! | `NIM1` | u32 H, u32 W, H·W×3 f32 RGB in `[0, 1]`                         |
//!
//! All integers and floats are little-endian. Cameras are stored as JSON.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use super::{CameraView, DepthMap, PointCloud};
use crate::error::{Error, Result};
use crate::util::{read_file, write_atomic};

pub const NPC_MAGIC: &[u8; 4] = b"NPC1";
pub const NDM_MAGIC: &[u8; 4] = b"NDM1";
pub const NIM_MAGIC: &[u8; 4] = b"NIM1";

/// An H×W RGB image with channels interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        RgbImage {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * 3 + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let o = (row * self.width + col) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("truncated at byte {} (need {n} more)", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::format(
                self.path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(m), String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_npc(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(9 + n * 24);
    out.extend_from_slice(NPC_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(u8::from(cloud.normals.is_some()));
    push_f32s(&mut out, cloud.points.iter().flat_map(|p| p.iter().copied()));
    if let Some(ns) = &cloud.normals {
        push_f32s(&mut out, ns.iter().flat_map(|p| p.iter().copied()));
    }
    out
}

pub fn decode_npc(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(NPC_MAGIC)?;
    let n = r.u32()? as usize;
    let flags = r.take(1)?[0];
    let to_vec3 = |v: Vec<f64>| v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
    let points = to_vec3(r.f32s(n * 3)?);
    let normals = if flags & 1 == 1 {
        Some(to_vec3(r.f32s(n * 3)?))
    } else {
        None
    };
    r.finish()?;
    Ok(PointCloud { points, normals })
}

pub fn write_npc(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_atomic(path, &encode_npc(cloud))
}

pub fn read_npc(path: &Path) -> Result<PointCloud> {
    decode_npc(&read_file(path)?, path)
}

pub fn encode_ndm(depth: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + depth.data.len() * 4);
    out.extend_from_slice(NDM_MAGIC);
    out.extend_from_slice(&(depth.height as u32).to_le_bytes());
    out.extend_from_slice(&(depth.width as u32).to_le_bytes());
    push_f32s(&mut out, depth.data.iter().map(|&d| if d > 0.0 { d } else { 0.0 }));
    out
}

pub fn decode_ndm(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(NDM_MAGIC)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let data = r.f32s(height * width)?;
    r.finish()?;
    Ok(DepthMap {
        height,
        width,
        data,
    })
}

pub fn write_ndm(path: &Path, depth: &DepthMap) -> Result<()> {
    write_atomic(path, &encode_ndm(depth))
}

pub fn read_ndm(path: &Path) -> Result<DepthMap> {
    decode_ndm(&read_file(path)?, path)
}

pub fn encode_nim(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.data.len() * 4);
    out.extend_from_slice(NIM_MAGIC);
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    push_f32s(&mut out, img.data.iter().copied());
    out
}

pub fn decode_nim(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(NIM_MAGIC)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let data = r.f32s(height * width * 3)?;
    r.finish()?;
    Ok(RgbImage {
        height,
        width,
        data,
    })
}

pub fn write_nim(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_nim(img))
}

pub fn read_nim(path: &Path) -> Result<RgbImage> {
    decode_nim(&read_file(path)?, path)
}

/// JSON form of a camera (depth is stored separately as NDM1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub intrinsics: [f64; 9],
    pub world_from_camera: [f64; 16],
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl From<&CameraView> for CameraJson {
    fn from(v: &CameraView) -> Self {
        let mut intrinsics = [0.0; 9];
        let mut pose = [0.0; 16];
        for r in 0..3 {
            for c in 0..3 {
                intrinsics[r * 3 + c] = v.intrinsics[(r, c)];
            }
        }
        for r in 0..4 {
            for c in 0..4 {
                pose[r * 4 + c] = v.world_from_camera[(r, c)];
            }
        }
        CameraJson {
            intrinsics,
            world_from_camera: pose,
            width: v.width,
            height: v.height,
            near: v.near,
            far: v.far,
        }
    }
}

impl CameraJson {
    pub fn to_view(&self) -> Result<CameraView> {
        CameraView::new(
            Matrix3::from_row_slice(&self.intrinsics),
            Matrix4::from_row_slice(&self.world_from_camera),
            self.width,
            self.height,
            self.near,
            self.far,
        )
    }
}

pub fn write_camera(path: &Path, view: &CameraView) -> Result<()> {
    let json = serde_json::to_vec_pretty(&CameraJson::from(view))
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &json)
}

pub fn read_camera(path: &Path) -> Result<CameraView> {
    let bytes = read_file(path)?;
    let json: CameraJson =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    json.to_view()
}
