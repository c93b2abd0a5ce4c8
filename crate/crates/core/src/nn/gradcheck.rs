//! Central finite-difference comparison of analytic parameter gradients.

use std::collections::BTreeMap;

use super::{Mat, ParamStore};

/// Norm below which a gradient counts as zero, so tensors whose true
/// gradient vanishes (e.g. attention key biases) compare against round-off.
pub const GRAD_FLOOR: f64 = 1e-5;

/// Result for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, GRAD_FLOOR)` over
    /// checked entries.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Entry indices examined for a tensor of `len` entries: all of them up to
/// `max_entries`, otherwise an evenly strided subset.
fn probe_indices(len: usize, max_entries: usize) -> Vec<usize> {
    if len <= max_entries {
        return (0..len).collect();
    }
    let stride = len as f64 / max_entries as f64;
    (0..max_entries).map(|i| (i as f64 * stride) as usize).collect()
}

/// Compares `analytic` against `(loss(θ+δ) − loss(θ−δ)) / 2δ` for each named
/// tensor in `names`.
pub fn check_gradients<F>(
    params: &ParamStore,
    names: &[String],
    analytic: &BTreeMap<String, Mat>,
    loss: F,
    delta: f64,
    max_entries: usize,
) -> Vec<TensorCheck>
where
    F: Fn(&ParamStore) -> f64,
{
    let mut work = params.clone();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let base = params.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        let zeros = Mat::zeros(base.dim());
        let an = analytic.get(name).unwrap_or(&zeros);
        let (mut diff2, mut an2, mut nu2) = (0.0, 0.0, 0.0);
        let idx = probe_indices(base.len(), max_entries);
        for &i in &idx {
            let orig = base.as_slice().expect("contiguous")[i];
            let mut eval = |x: f64| {
                work.get_mut(name).unwrap().as_slice_mut().unwrap()[i] = x;
                loss(&work)
            };
            let lp = eval(orig + delta);
            let lm = eval(orig - delta);
            eval(orig);
            let num = (lp - lm) / (2.0 * delta);
            let a = an.as_slice().expect("contiguous")[i];
            diff2 += (a - num) * (a - num);
            an2 += a * a;
            nu2 += num * num;
        }
        let denom = an2.sqrt().max(nu2.sqrt()).max(GRAD_FLOOR);
        let rel_error = diff2.sqrt() / denom;
        out.push(TensorCheck {
            name: name.clone(),
            checked: idx.len(),
            rel_error,
            analytic_norm: an2.sqrt(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{layers, Binder, Graph};
    use crate::util::seeded_rng;
    use ndarray::Array2;

    #[test]
    fn self_block_gradients_match() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(3);
        layers::init_self_block(&mut store, &mut rng, "blk", 8);
        let x = crate::nn::normal_init(&mut rng, 5, 8, 1.0);
        let target = Array2::from_elem((5, 8), 0.1);
        fn forward<'a>(p: &'a ParamStore, trainable: bool, x: &Mat, target: &Mat) -> (Graph, Binder<'a>, crate::nn::Var) {
            let mut g = Graph::new();
            let mut b = Binder::new(p, trainable);
            let xv = g.constant(x.clone());
            let y = layers::self_block(&mut g, &mut b, "blk", xv, 2);
            let l = g.mse(y, target.clone());
            (g, b, l)
        }
        let (g, b, l) = forward(&store, true, &x, &target);
        let mut grads = g.backward(l);
        let analytic = b.collect_grads(&mut grads);
        let names: Vec<String> = store.tensors.keys().cloned().collect();
        let report = check_gradients(
            &store,
            &names,
            &analytic,
            |p| {
                let (g, _, l) = forward(p, false, &x, &target);
                g.scalar(l)
            },
            1e-5,
            32,
        );
        for r in report {
            assert!(r.rel_error < 1e-6, "{r:?}");
        }
    }
}
