//! Minimal neural-network toolkit: autodiff graph, named parameters, layers,
//! Adam, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
pub use graph::{Grads, Graph, Mat, Var};

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub tensors: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Tensors whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    /// FNV-1a over names, shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (k, v) in &self.tensors {
            eat(k.as_bytes());
            eat(&(v.nrows() as u64).to_le_bytes());
            eat(&(v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, v) in &self.tensors {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::non_finite(format!("parameter {k}"), i));
            }
        }
        Ok(())
    }

    /// Errors unless `self` has exactly the names and shapes of `reference`.
    pub fn check_layout(&self, reference: &ParamStore) -> Result<()> {
        for (k, v) in &reference.tensors {
            match self.tensors.get(k) {
                None => return Err(Error::Config(format!("missing parameter {k}"))),
                Some(t) if t.dim() != v.dim() => {
                    return Err(Error::Shape {
                        expected: format!("{k} {:?}", v.dim()),
                        got: format!("{:?}", t.dim()),
                    })
                }
                _ => {}
            }
        }
        if let Some(k) = self.tensors.keys().find(|k| !reference.contains(k)) {
            return Err(Error::Config(format!("unexpected parameter {k}")));
        }
        Ok(())
    }
}

/// Puts parameters on a graph on first use and remembers their nodes.
pub struct Binder<'a> {
    store: &'a ParamStore,
    trainable: bool,
    bound: BTreeMap<String, Var>,
}

impl<'a> Binder<'a> {
    /// `trainable = false` binds values as constants (no gradients).
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Binder {
            store,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn has(&self, name: &str) -> bool {
        self.store.contains(name)
    }

    /// Panics if `name` is absent: layouts are validated when models load.
    pub fn get(&mut self, g: &mut Graph, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not in store"))
            .clone();
        let v = g.input(value, self.trainable);
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Gradients of every bound parameter; unused ones get zeros.
    pub fn collect_grads(&self, grads: &mut Grads) -> BTreeMap<String, Mat> {
        self.bound
            .iter()
            .map(|(k, &v)| {
                let gr = grads
                    .take(v)
                    .unwrap_or_else(|| Array2::zeros(self.store.get(k).expect("bound").dim()));
                (k.clone(), gr)
            })
            .collect()
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }
}

/// Adds `b` into `a` tensor-wise (missing entries are inserted).
pub fn accumulate_grads(a: &mut BTreeMap<String, Mat>, b: BTreeMap<String, Mat>) {
    for (k, v) in b {
        match a.get_mut(&k) {
            Some(e) => *e += &v,
            None => {
                a.insert(k, v);
            }
        }
    }
}

pub fn scale_grads(a: &mut BTreeMap<String, Mat>, s: f64) {
    for v in a.values_mut() {
        *v *= s;
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm(a: &BTreeMap<String, Mat>) -> f64 {
    a.values().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(a: &mut BTreeMap<String, Mat>, max_norm: f64) -> f64 {
    let n = grad_norm(a);
    if n > max_norm && n > 0.0 {
        scale_grads(a, max_norm / n);
    }
    n
}

pub fn xavier_uniform<R: rand::Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("valid range");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

pub fn normal_init<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}
