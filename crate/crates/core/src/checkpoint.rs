//! `NCK1` checkpoint container.
//!
//! Layout: magic `NCK1`, u32 LE header length, UTF-8 JSON header, then the
//! concatenated tensors as row-major little-endian `f32`. The header holds the
//! model config, the training step, optimizer bookkeeping and a tensor index
//! (`name`, `shape`, byte `offset` into the tensor block).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::{Adam, AdamConfig, AdamState};
use crate::nn::ParamStore;
use crate::util::{read_file, write_atomic};

pub const NCK_MAGIC: &[u8; 4] = b"NCK1";

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `"stage1"` or `"stage2"`.
    pub kind: String,
    pub config: serde_json::Value,
    pub step: u64,
    pub params: ParamStore,
    pub adam: Option<Adam>,
    /// Free-form extra fields (e.g. the training seed).
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    config: AdamConfig,
    steps: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    config: serde_json::Value,
    step: u64,
    adam: Option<AdamHeader>,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut tensors: Vec<(String, &Array2<f64>)> =
        ck.params.tensors.iter().map(|(k, v)| (k.clone(), v)).collect();
    let mut moments = Vec::new();
    let adam = ck.adam.as_ref().map(|a| {
        let mut steps = BTreeMap::new();
        for (k, st) in &a.states {
            let shape = ck.params.get(k).map(|p| p.dim()).unwrap_or((1, st.m.len()));
            moments.push((format!("{ADAM_M}{k}"), Array2::from_shape_vec(shape, st.m.clone()).expect("moment shape")));
            moments.push((format!("{ADAM_V}{k}"), Array2::from_shape_vec(shape, st.v.clone()).expect("moment shape")));
            steps.insert(k.clone(), st.t);
        }
        AdamHeader {
            config: a.config,
            steps,
        }
    });
    tensors.extend(moments.iter().map(|(k, v)| (k.clone(), v)));

    let mut index = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in &tensors {
        index.push(TensorEntry {
            name: name.clone(),
            shape: [t.nrows(), t.ncols()],
            offset,
        });
        offset += t.len() * 4;
    }
    let header = Header {
        kind: ck.kind.clone(),
        config: ck.config.clone(),
        step: ck.step,
        adam,
        meta: ck.meta.clone(),
        tensors: index,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(NCK_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for x in t.iter() {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[0..4] != NCK_MAGIC {
        return Err(Error::format(path, "not an NCK1 checkpoint"));
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let body_start = 8 + hlen;
    if bytes.len() < body_start {
        return Err(Error::format(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[8..body_start])
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let body = &bytes[body_start..];
    let mut all = BTreeMap::new();
    let mut expected_len = 0;
    for e in &header.tensors {
        let n = e.shape[0] * e.shape[1];
        let end = e.offset + n * 4;
        if end > body.len() {
            return Err(Error::format(path, format!("tensor {} out of bounds", e.name)));
        }
        let data: Vec<f64> = body[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Array2::from_shape_vec((e.shape[0], e.shape[1]), data).expect("shape matches length");
        all.insert(e.name.clone(), t);
        expected_len = expected_len.max(end);
    }
    if expected_len != body.len() {
        return Err(Error::format(path, format!("{} trailing bytes", body.len() - expected_len)));
    }
    let mut params = ParamStore::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (k, t) in all {
        if let Some(n) = k.strip_prefix(ADAM_M) {
            m.insert(n.to_string(), t);
        } else if let Some(n) = k.strip_prefix(ADAM_V) {
            v.insert(n.to_string(), t);
        } else {
            params.insert(k, t);
        }
    }
    let adam = match header.adam {
        None => None,
        Some(h) => {
            let mut a = Adam::new(h.config);
            for (k, t) in h.steps {
                let (Some(mm), Some(vv)) = (m.remove(&k), v.remove(&k)) else {
                    return Err(Error::format(path, format!("missing optimizer moments for {k}")));
                };
                a.states.insert(
                    k,
                    AdamState {
                        m: mm.iter().copied().collect(),
                        v: vv.iter().copied().collect(),
                        t,
                    },
                );
            }
            Some(a)
        }
    };
    Ok(Checkpoint {
        kind: header.kind,
        config: header.config,
        step: header.step,
        params,
        adam,
        meta: header.meta,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode(ck))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_with_optimizer() {
        let mut params = ParamStore::new();
        params.insert("a.w", array![[0.5, -1.25], [2.0, 0.0]]);
        params.insert("b", array![[3.0]]);
        let mut adam = Adam::new(AdamConfig::default());
        let mut w = params.get("a.w").unwrap().clone();
        adam.update("a.w", &mut w, &array![[0.5, 0.5], [0.25, 1.0]]);
        let ck = Checkpoint {
            kind: "stage1".into(),
            config: serde_json::json!({"m_tokens": 4}),
            step: 7,
            params,
            adam: Some(adam),
            meta: serde_json::json!({"seed": 1}),
        };
        let bytes = encode(&ck);
        assert_eq!(&bytes[0..4], b"NCK1");
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.step, 7);
        let st = &back.adam.as_ref().unwrap().states["a.w"];
        assert_eq!(st.t, 1);
        assert_eq!(st.m, ck.adam.as_ref().unwrap().states["a.w"].m.iter().map(|x| *x as f32 as f64).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"NCK1\xff\xff\xff\xff", Path::new("x")).is_err());
        assert!(decode(b"XXXX", Path::new("x")).is_err());
    }
}
