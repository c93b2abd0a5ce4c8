//! Tape-based reverse-mode automatic differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a 1×1 loss walks the tape in reverse and returns the
//! gradient of every node that depends on a gradient-requiring input.

use ndarray::{concatenate, s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + r` with the 1×C row `r` broadcast over rows.
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// Stores `tanh(k(x + c·x³))` for the backward pass.
    Gelu(Var, Mat),
    Silu(Var),
    Softmax(Var),
    /// Row-wise normalisation without affine terms; `rstd` per row.
    LayerNorm(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    /// Mean squared error against a constant target.
    Mse(Var, Mat),
    Mean(Var),
    /// Scalar loss with a precomputed gradient w.r.t. its input.
    FixedGrad(Var, Mat),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

pub const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// `exp` by Cody-Waite range reduction and a degree-13 Taylor polynomial;
/// within a few ulp of `f64::exp` on `[-708, 709]` and branch-free so loops
/// over it vectorise. Inputs are clamped to that range.
#[inline(always)]
pub fn fast_exp(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let x = x.clamp(-708.0, 709.0);
    let t = x * LOG2E + SHIFT;
    let n = t - SHIFT;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let bits = (t.to_bits().wrapping_add(1023)) << 52;
    p * f64::from_bits(bits)
}

#[inline(always)]
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / (fast_exp(2.0 * u) + 1.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn col_sum(m: &Mat) -> Mat {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf. Gradient-requiring leaves are the trainable parameters.
    pub fn input(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.push(value, Op::Input, requires_grad)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.input(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1×C row");
        let v = self.value(a) + self.value(row);
        let rg = self.rg(&[a, row]);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "mul_row expects a 1×C row");
        let v = self.value(a) * self.value(row);
        let rg = self.rg(&[a, row]);
        self.push(v, Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) + s;
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let th = self
            .value(a)
            .mapv(|x| fast_tanh(GELU_K * (x + GELU_C * x * x * x)));
        let mut v = self.value(a).clone();
        Zip::from(&mut v).and(&th).for_each(|x, &t| *x = 0.5 * *x * (1.0 + t));
        let rg = self.rg(&[a]);
        self.push(v, Op::Gelu(a, th), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        let rg = self.rg(&[a]);
        self.push(v, Op::Silu(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| fast_exp(x - m));
            let s: f64 = row.iter().sum();
            row.mapv_inplace(|x| x / s);
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::Softmax(a), rg)
    }

    /// Row-wise layer normalisation (zero mean, unit variance, no affine).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.ncols() as f64;
        let mut v = x.clone();
        let mut rstds = Vec::with_capacity(x.nrows());
        for mut row in v.rows_mut() {
            let mu = row.sum() / c;
            let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / c;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|x| (x - mu) * rstd);
            rstds.push(rstd);
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::LayerNorm(a, rstds), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts must match");
        let rg = self.rg(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts must match");
        let rg = self.rg(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceRows(a, start), rg)
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), indices);
        let rg = self.rg(&[a]);
        self.push(v, Op::GatherRows(a, indices.to_vec()), rg)
    }

    /// Mean over all entries of `(a − target)²`, as a 1×1 node.
    pub fn mse(&mut self, a: Var, target: Mat) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), target.dim(), "mse shape mismatch");
        let n = x.len().max(1) as f64;
        let l = Zip::from(x)
            .and(&target)
            .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t))
            / n;
        let rg = self.rg(&[a]);
        self.push(Array2::from_elem((1, 1), l), Op::Mse(a, target), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.sum() / x.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a), rg)
    }

    /// A scalar loss whose value and input-gradient were computed externally.
    pub fn fixed_grad_loss(&mut self, a: Var, value: f64, grad: Mat) -> Var {
        assert_eq!(self.value(a).dim(), grad.dim(), "gradient shape mismatch");
        let rg = self.rg(&[a]);
        self.push(Array2::from_elem((1, 1), value), Op::FixedGrad(a, grad), rg)
    }

    /// Reverse pass from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Grads { grads };
        }
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let acc = |grads: &mut [Option<Mat>], v: Var, d: Mat| match &mut grads[v.0] {
            Some(e) => *e += &d,
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Input => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.dot(self.value(*b)));
                }
                if self.needs(*b) {
                    acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(grads, *a, g * self.value(*b));
                }
                if self.needs(*b) {
                    acc(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, r) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.needs(*r) {
                    acc(grads, *r, col_sum(g));
                }
            }
            Op::MulRow(a, r) => {
                if self.needs(*a) {
                    acc(grads, *a, g * self.value(*r));
                }
                if self.needs(*r) {
                    acc(grads, *r, col_sum(&(g * self.value(*a))));
                }
            }
            Op::Scale(a, s) => {
                if self.needs(*a) {
                    acc(grads, *a, g * *s);
                }
            }
            Op::AddScalar(a) => {
                if self.needs(*a) {
                    acc(grads, *a, g.clone());
                }
            }
            Op::Gelu(a, tanhs) => {
                if self.needs(*a) {
                    let mut d = self.value(*a).clone();
                    Zip::from(&mut d).and(g).and(tanhs).for_each(|x, &gy, &th| {
                        let xv = *x;
                        let dy = 0.5 * (1.0 + th)
                            + 0.5 * xv * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * xv * xv);
                        *x = gy * dy;
                    });
                    acc(grads, *a, d);
                }
            }
            Op::Silu(a) => {
                if self.needs(*a) {
                    let mut d = self.value(*a).clone();
                    Zip::from(&mut d).and(g).for_each(|x, &gy| {
                        let s = sigmoid(*x);
                        *x = gy * s * (1.0 + *x * (1.0 - s));
                    });
                    acc(grads, *a, d);
                }
            }
            Op::Softmax(a) => {
                if self.needs(*a) {
                    let y = &node.value;
                    let mut d = g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let s: f64 = drow.sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|dv, &yv| *dv -= yv * s);
                    }
                    acc(grads, *a, d);
                }
            }
            Op::LayerNorm(a, rstds) => {
                if self.needs(*a) {
                    let y = &node.value;
                    let c = y.ncols() as f64;
                    let mut d = g.clone();
                    for ((mut drow, yrow), &rstd) in
                        d.rows_mut().into_iter().zip(y.rows()).zip(rstds.iter())
                    {
                        let mg = drow.sum() / c;
                        let mgy = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / c;
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|dv, &yv| *dv = rstd * (*dv - mg - yv * mgy));
                    }
                    acc(grads, *a, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.needs(p) {
                        acc(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if self.needs(p) {
                        acc(grads, p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::SliceCols(a, start) => {
                if self.needs(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                    acc(grads, *a, d);
                }
            }
            Op::SliceRows(a, start) => {
                if self.needs(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                    acc(grads, *a, d);
                }
            }
            Op::GatherRows(a, idx) => {
                if self.needs(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(r);
                    }
                    acc(grads, *a, d);
                }
            }
            Op::Mse(a, target) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let k = 2.0 * g[[0, 0]] / x.len().max(1) as f64;
                    let mut d = x - target;
                    d *= k;
                    acc(grads, *a, d);
                }
            }
            Op::Mean(a) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let k = g[[0, 0]] / x.len().max(1) as f64;
                    acc(grads, *a, Array2::from_elem(x.dim(), k));
                }
            }
            Op::FixedGrad(a, dg) => {
                if self.needs(*a) {
                    acc(grads, *a, dg * g[[0, 0]]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of d(loss)/d(input) for a one-input graph.
    fn check(build: impl Fn(&mut Graph, Var) -> Var, x: Mat) {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), true);
        let loss = build(&mut g, xv);
        let grads = g.backward(loss);
        let analytic = grads.get(xv).unwrap().clone();
        let h = 1e-6;
        for idx in 0..x.len() {
            let eval = |delta: f64| {
                let mut xp = x.clone();
                xp.as_slice_mut().unwrap()[idx] += delta;
                let mut g = Graph::new();
                let xv = g.input(xp, false);
                let l = build(&mut g, xv);
                g.scalar(l)
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            assert!(
                (a - num).abs() <= 1e-6 * (1.0 + a.abs().max(num.abs())),
                "entry {idx}: analytic {a} vs numeric {num}"
            );
        }
    }

    fn weights() -> Mat {
        array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]]
    }

    #[test]
    fn grad_matmul_and_activations() {
        let x = array![[0.5, -1.0], [1.5, 0.25], [-0.3, 0.8]];
        check(
            |g, x| {
                let w = g.constant(weights());
                let h = g.matmul(x, w);
                let h = g.gelu(h);
                let h = g.silu(h);
                g.mean(h)
            },
            x,
        );
    }

    #[test]
    fn grad_softmax_layernorm_attention() {
        let x = array![[0.5, -1.0, 0.2], [1.5, 0.25, -0.7], [-0.3, 0.8, 0.1]];
        check(
            |g, x| {
                let n = g.layer_norm(x);
                let s = g.matmul_nt(n, x);
                let a = g.softmax(s);
                let o = g.matmul(a, x);
                g.mse(o, Array2::from_elem((3, 3), 0.3))
            },
            x,
        );
    }

    #[test]
    fn grad_structural_ops() {
        let x = array![[0.5, -1.0, 0.2], [1.5, 0.25, -0.7]];
        check(
            |g, x| {
                let a = g.slice_cols(x, 1, 2);
                let b = g.slice_rows(x, 1, 1);
                let r = g.slice_cols(b, 0, 2);
                let c = g.mul_row(a, r);
                let c = g.add_row(c, r);
                let d = g.concat_cols(&[c, a]);
                let e = g.concat_rows(&[d, d]);
                let f = g.gather_rows(e, &[3, 0, 0]);
                let f = g.scale(f, 0.7);
                let f = g.add_scalar(f, 0.1);
                let h = g.mul(f, f);
                let k = g.sub(h, f);
                g.mean(k)
            },
            x,
        );
    }

    #[test]
    fn fast_exp_matches_libm() {
        let mut worst: f64 = 0.0;
        let mut x = -700.0;
        while x < 700.0 {
            let rel = (fast_exp(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
            x += 0.0137;
        }
        assert!(worst < 1e-14, "{worst}");
        assert_eq!(fast_exp(0.0), 1.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(array![[1.0, 2.0]]);
        let p = g.input(array![[3.0, 4.0]], true);
        let m = g.mul(c, p);
        let l = g.mean(m);
        let grads = g.backward(l);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &array![[0.5, 1.0]]);
    }
}
