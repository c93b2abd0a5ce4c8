//! Point-cloud autoencoder with a flow-matching decoder.
//!
//! The encoder turns a normalised cloud into `M × C` latent tokens through one
//! cross-attention layer (queries over embedded points) and a stack of
//! self-attention blocks. The decoder predicts the flow velocity of noisy
//! query points conditioned on the tokens and the flow time.

use std::cmp::Ordering;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::{self, FlowConfig};
use crate::geometry::{farthest_point_sample, PointCloud};
use crate::nn::layers::{self, fourier_features, fourier_width, timestep_embedding};
use crate::nn::optim::{Adam, AdamConfig};
use crate::nn::{self, Binder, Graph, Mat, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    /// Embeddings of farthest-point-sampled input points.
    Point,
    Learnable,
    /// Point and learnable queries concatenated, then projected back to `C`.
    #[default]
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Points and tokens exchange information in every block.
    #[default]
    Joint,
    /// Points only read from the latent tokens; no point-to-point path.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AeLoss {
    #[default]
    FlowMatching,
    /// One deterministic pass from pure noise at `t = 1`, scored by Chamfer.
    Chamfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub m_tokens: usize,
    pub channels: usize,
    pub heads: usize,
    pub encoder_self_layers: usize,
    pub decoder_blocks: usize,
    pub query_mode: QueryMode,
    pub fourier_freqs: usize,
    pub decoder: DecoderKind,
    pub loss: AeLoss,
    /// Training clouds are farthest-point subsampled to this many points.
    pub n_train: usize,
    /// Sort points before every set operation so results do not depend on
    /// input order, bit for bit.
    pub deterministic: bool,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            m_tokens: 64,
            channels: 64,
            heads: 4,
            encoder_self_layers: 8,
            decoder_blocks: 3,
            query_mode: QueryMode::Hybrid,
            fourier_freqs: 8,
            decoder: DecoderKind::Joint,
            loss: AeLoss::FlowMatching,
            n_train: 2048,
            deterministic: true,
        }
    }
}

impl Stage1Config {
    /// 768 tokens of width 128 over 10 000-point clouds.
    pub fn full_scale() -> Self {
        Stage1Config {
            m_tokens: 768,
            channels: 128,
            heads: 8,
            n_train: 10_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.m_tokens == 0 || self.channels == 0 || self.heads == 0 {
            return bad("m_tokens, channels and heads must be positive".into());
        }
        if self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.channels % 2 != 0 {
            return bad(format!("channels must be even, got {}", self.channels));
        }
        if self.decoder_blocks == 0 {
            return bad("decoder_blocks must be at least 1".into());
        }
        if self.n_train < self.m_tokens {
            return bad(format!("n_train {} smaller than m_tokens {}", self.n_train, self.m_tokens));
        }
        Ok(())
    }

    fn mod_width(&self) -> usize {
        match self.decoder {
            DecoderKind::Joint => 6 * self.channels,
            DecoderKind::Independent => 4 * self.channels,
        }
    }
}

/// `M × C` latent scene representation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTokens {
    pub tokens: Mat,
}

impl LatentTokens {
    pub fn shape(&self) -> (usize, usize) {
        self.tokens.dim()
    }
}

/// Row order that sorts points lexicographically (ties by index).
pub fn canonical_order(points: &Mat) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.nrows()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (points.row(a), points.row(b));
        for k in 0..ra.len() {
            match ra[k].total_cmp(&rb[k]) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        a.cmp(&b)
    });
    idx
}

fn inverse_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        inv[i] = pos;
    }
    inv
}

fn check_finite(g: &Graph, v: Var, stage: &str, index: usize) -> Result<()> {
    if g.value(v).iter().any(|x| !x.is_finite()) {
        return Err(Error::non_finite(stage, index));
    }
    Ok(())
}

fn check_points(points: &Mat) -> Result<()> {
    if points.ncols() != 3 {
        return Err(Error::Shape {
            expected: "N×3".into(),
            got: format!("{:?}", points.dim()),
        });
    }
    if let Some(i) = points.iter().position(|x| !x.is_finite()) {
        return Err(Error::non_finite("input points", i / 3));
    }
    Ok(())
}

/// Fresh parameters for `config`.
pub fn init_params(config: &Stage1Config, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = crate::util::seeded_rng(seed);
    let rng = &mut rng;
    let c = config.channels;
    let fw = fourier_width(config.fourier_freqs);
    let mut s = ParamStore::new();

    layers::init_linear(&mut s, rng, "enc.embed", fw, c);
    if config.query_mode != QueryMode::Point {
        layers::init_tokens(&mut s, rng, "enc.query", config.m_tokens, c);
    }
    if config.query_mode == QueryMode::Hybrid {
        layers::init_linear(&mut s, rng, "enc.qproj", 2 * c, c);
    }
    layers::init_norm(&mut s, "enc.cross.lnq", c);
    layers::init_norm(&mut s, "enc.cross.lnkv", c);
    layers::init_attention(&mut s, rng, "enc.cross.attn", c);
    layers::init_norm(&mut s, "enc.cross.ln2", c);
    layers::init_ffn(&mut s, rng, "enc.cross.ff", c, 4 * c);
    for i in 0..config.encoder_self_layers {
        layers::init_self_block(&mut s, rng, &format!("enc.self{i}"), c);
    }

    layers::init_linear(&mut s, rng, "dec.embed", fw, c);
    layers::init_linear(&mut s, rng, "dec.t1", c, c);
    layers::init_linear(&mut s, rng, "dec.t2", c, c);
    for i in 0..config.decoder_blocks {
        let p = format!("dec.blk{i}");
        layers::init_linear_zero(&mut s, &format!("{p}.mod"), c, config.mod_width());
        if config.decoder == DecoderKind::Joint {
            layers::init_norm(&mut s, &format!("{p}.ln_tq"), c);
            layers::init_attention(&mut s, rng, &format!("{p}.p2t"), c);
            layers::init_self_block(&mut s, rng, &format!("{p}.tok"), c);
        }
        layers::init_norm(&mut s, &format!("{p}.ln_tkv"), c);
        layers::init_attention(&mut s, rng, &format!("{p}.t2p"), c);
        layers::init_ffn(&mut s, rng, &format!("{p}.pff"), c, 4 * c);
    }
    layers::init_linear_zero(&mut s, "dec.final.mod", c, 2 * c);
    layers::init_linear(&mut s, rng, "dec.head", c, 3);
    Ok(s)
}

/// Encoder forward pass on a graph. Returns the `M × C` token node.
pub fn encode_graph(g: &mut Graph, b: &mut Binder, config: &Stage1Config, points: &Mat, seed_index: usize) -> Result<Var> {
    check_points(points)?;
    let n = points.nrows();
    if n < config.m_tokens {
        return Err(Error::precondition(format!(
            "encoder needs at least m_tokens = {} points, got {n}",
            config.m_tokens
        )));
    }
    if seed_index >= n {
        return Err(Error::precondition(format!("seed index {seed_index} out of range for {n} points")));
    }
    let (pts, seed) = if config.deterministic {
        let order = canonical_order(points);
        let inv = inverse_permutation(&order);
        (points.select(Axis(0), &order), inv[seed_index])
    } else {
        (points.clone(), seed_index)
    };
    let feats = g.constant(fourier_features(&pts, config.fourier_freqs));
    let x = layers::linear(g, b, "enc.embed", feats);

    let q = query_graph(g, b, config, &pts, x, seed)?;
    let hq = layers::norm(g, b, "enc.cross.lnq", q);
    let hkv = layers::norm(g, b, "enc.cross.lnkv", x);
    let a = layers::attention(g, b, "enc.cross.attn", hq, hkv, config.heads);
    let mut h = g.add(q, a);
    let hn = layers::norm(g, b, "enc.cross.ln2", h);
    let f = layers::ffn(g, b, "enc.cross.ff", hn);
    h = g.add(h, f);
    check_finite(g, h, "encoder layer", 0)?;
    for i in 0..config.encoder_self_layers {
        h = layers::self_block(g, b, &format!("enc.self{i}"), h, config.heads);
        check_finite(g, h, "encoder layer", i + 1)?;
    }
    Ok(g.layer_norm(h))
}

/// Query tokens from already-ordered points `pts` and their embeddings `x`.
fn query_graph(g: &mut Graph, b: &mut Binder, config: &Stage1Config, pts: &Mat, x: Var, seed: usize) -> Result<Var> {
    let point_queries = |g: &mut Graph| -> Result<Var> {
        let cloud = flowmatch::array_to_cloud(pts);
        let idx = farthest_point_sample(&cloud, config.m_tokens, seed)?;
        Ok(g.gather_rows(x, &idx))
    };
    Ok(match config.query_mode {
        QueryMode::Point => point_queries(g)?,
        QueryMode::Learnable => b.get(g, "enc.query"),
        QueryMode::Hybrid => {
            let pq = point_queries(g)?;
            let lq = b.get(g, "enc.query");
            let cat = g.concat_cols(&[pq, lq]);
            layers::linear(g, b, "enc.qproj", cat)
        }
    })
}

/// Decoder forward pass on a graph: velocities for `x_t`, in input row order.
pub fn decode_graph(g: &mut Graph, b: &mut Binder, config: &Stage1Config, x_t: &Mat, z: Var, t: f64) -> Result<Var> {
    check_points(x_t)?;
    if x_t.nrows() == 0 {
        return Err(Error::precondition("decoder needs at least one query point"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::precondition(format!("t = {t} outside [0, 1]")));
    }
    let zdim = g.value(z).dim();
    if zdim != (config.m_tokens, config.channels) {
        return Err(Error::Shape {
            expected: format!("({}, {})", config.m_tokens, config.channels),
            got: format!("{zdim:?}"),
        });
    }
    let c = config.channels;
    let order = config.deterministic.then(|| canonical_order(x_t));
    let pts = match &order {
        Some(o) => x_t.select(Axis(0), o),
        None => x_t.clone(),
    };
    let feats = g.constant(fourier_features(&pts, config.fourier_freqs));
    let mut p = layers::linear(g, b, "dec.embed", feats);

    let temb = g.constant(timestep_embedding(t, c));
    let te = layers::linear(g, b, "dec.t1", temb);
    let te = g.silu(te);
    let te = layers::linear(g, b, "dec.t2", te);
    let cond = g.silu(te);

    let mut h = z;
    for i in 0..config.decoder_blocks {
        let pre = format!("dec.blk{i}");
        let m = layers::linear(g, b, &format!("{pre}.mod"), cond);
        let chunk = |g: &mut Graph, k: usize| g.slice_cols(m, k * c, c);
        let (k2, k3) = match config.decoder {
            DecoderKind::Joint => {
                let (sh1, sc1) = (chunk(g, 0), chunk(g, 1));
                let pk = layers::modulated_norm(g, p, sh1, sc1);
                let hq = layers::norm(g, b, &format!("{pre}.ln_tq"), h);
                let a = layers::attention(g, b, &format!("{pre}.p2t"), hq, pk, config.heads);
                h = g.add(h, a);
                h = layers::self_block(g, b, &format!("{pre}.tok"), h, config.heads);
                (2, 4)
            }
            DecoderKind::Independent => (0, 2),
        };
        let (sh2, sc2) = (chunk(g, k2), chunk(g, k2 + 1));
        let pq = layers::modulated_norm(g, p, sh2, sc2);
        let hkv = layers::norm(g, b, &format!("{pre}.ln_tkv"), h);
        let a = layers::attention(g, b, &format!("{pre}.t2p"), pq, hkv, config.heads);
        p = g.add(p, a);
        let (sh3, sc3) = (chunk(g, k3), chunk(g, k3 + 1));
        let pn = layers::modulated_norm(g, p, sh3, sc3);
        let f = layers::ffn(g, b, &format!("{pre}.pff"), pn);
        p = g.add(p, f);
        check_finite(g, p, "decoder block", i)?;
    }
    let fm = layers::linear(g, b, "dec.final.mod", cond);
    let sh = g.slice_cols(fm, 0, c);
    let sc = g.slice_cols(fm, c, c);
    let pn = layers::modulated_norm(g, p, sh, sc);
    let out = layers::linear(g, b, "dec.head", pn);
    check_finite(g, out, "decoder block", config.decoder_blocks)?;
    Ok(match &order {
        Some(o) => g.gather_rows(out, &inverse_permutation(o)),
        None => out,
    })
}

/// Symmetric Chamfer value of `pred` vs `gt` and its gradient w.r.t. `pred`
/// with nearest-neighbour assignments held fixed.
pub fn chamfer_value_and_grad(pred: &Mat, gt: &PointCloud) -> Result<(f64, Mat)> {
    let pc = flowmatch::array_to_cloud(pred);
    pc.require_non_empty("predicted")?;
    gt.require_non_empty("ground-truth")?;
    let (np, ng) = (pc.len() as f64, gt.len() as f64);
    let mut grad = Array2::zeros(pred.dim());
    let mut push = |i: usize, q: &[f64; 3], g: &[f64; 3], w: f64| -> f64 {
        let r = [q[0] - g[0], q[1] - g[1], q[2] - g[2]];
        let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if d > 0.0 {
            for a in 0..3 {
                grad[[i, a]] += w * r[a] / d;
            }
        }
        d
    };
    let mut ab = 0.0;
    for (i, (j, _)) in crate::metrics::nearest_neighbors(&pc, gt).into_iter().enumerate() {
        ab += push(i, &pc.points[i], &gt.points[j], 0.5 / np);
    }
    let mut ba = 0.0;
    for (j, (i, _)) in crate::metrics::nearest_neighbors(gt, &pc).into_iter().enumerate() {
        ba += push(i, &pc.points[i], &gt.points[j], 0.5 / ng);
    }
    Ok((0.5 * (ab / np + ba / ng), grad))
}

/// One training sample with its random draws made explicit.
#[derive(Debug, Clone)]
pub struct AeDraw {
    /// `N × 3` clean points (already subsampled).
    pub x0: Mat,
    pub eps: Mat,
    pub t: f64,
    pub query_seed: usize,
}

impl AeDraw {
    pub fn sample<R: Rng + ?Sized>(cloud: &PointCloud, config: &Stage1Config, flow: &FlowConfig, rng: &mut R) -> Result<Self> {
        cloud.require_non_empty("training")?;
        let sub = if cloud.len() > config.n_train {
            let seed = rng.random_range(0..cloud.len());
            cloud.select(&farthest_point_sample(cloud, config.n_train, seed)?)
        } else {
            cloud.clone()
        };
        let x0 = flowmatch::cloud_to_array(&sub);
        let eps = flowmatch::sample_noise(rng, x0.nrows());
        let t = match config.loss {
            AeLoss::FlowMatching => flowmatch::sample_timestep(rng, flow),
            AeLoss::Chamfer => 1.0,
        };
        let query_seed = rng.random_range(0..x0.nrows());
        Ok(AeDraw { x0, eps, t, query_seed })
    }
}

/// Builds the training loss for one draw given an already-built latent `z`.
pub fn loss_graph(g: &mut Graph, b: &mut Binder, config: &Stage1Config, draw: &AeDraw, z: Var) -> Result<Var> {
    match config.loss {
        AeLoss::FlowMatching => {
            let x_t = flowmatch::interpolate(&draw.x0, &draw.eps, draw.t)?;
            let v = decode_graph(g, b, config, &x_t, z, draw.t)?;
            Ok(g.mse(v, flowmatch::velocity_target(&draw.x0, &draw.eps)?))
        }
        AeLoss::Chamfer => {
            let v = decode_graph(g, b, config, &draw.eps, z, 1.0)?;
            let noise = g.constant(draw.eps.clone());
            let out = g.sub(noise, v);
            let gt = flowmatch::array_to_cloud(&draw.x0);
            let (val, grad) = chamfer_value_and_grad(g.value(out), &gt)?;
            Ok(g.fixed_grad_loss(out, val, grad))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub flow: FlowConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1,
            adam: AdamConfig::default(),
            grad_clip: Some(1.0),
            flow: FlowConfig::default(),
        }
    }
}

/// Stage-1 configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Model {
    pub config: Stage1Config,
    pub params: ParamStore,
}

impl Stage1Model {
    pub fn new(config: Stage1Config, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Stage1Model { config, params })
    }

    /// Wraps loaded parameters after checking names and shapes.
    pub fn from_params(config: Stage1Config, params: ParamStore) -> Result<Self> {
        params.check_layout(&init_params(&config, 0)?)?;
        params.check_finite()?;
        Ok(Stage1Model { config, params })
    }

    /// Zeroes the output head so every velocity is exactly zero.
    pub fn zero_head(&mut self) {
        for k in ["dec.head.w", "dec.head.b"] {
            self.params.get_mut(k).expect("head exists").fill(0.0);
        }
    }

    /// Fourier lift followed by the encoder's input projection: `N × C`.
    pub fn embed_points(&self, points: &Mat) -> Result<Mat> {
        check_points(points)?;
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, false);
        let f = g.constant(fourier_features(points, self.config.fourier_freqs));
        let x = layers::linear(&mut g, &mut b, "enc.embed", f);
        Ok(g.value(x).clone())
    }

    pub fn build_query(&self, cloud: &PointCloud, seed_index: usize) -> Result<Mat> {
        let points = flowmatch::cloud_to_array(cloud);
        check_points(&points)?;
        if points.nrows() < self.config.m_tokens {
            return Err(Error::precondition(format!(
                "query needs at least m_tokens = {} points, got {}",
                self.config.m_tokens,
                points.nrows()
            )));
        }
        if seed_index >= points.nrows() {
            return Err(Error::precondition(format!("seed index {seed_index} out of range")));
        }
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, false);
        let f = g.constant(fourier_features(&points, self.config.fourier_freqs));
        let x = layers::linear(&mut g, &mut b, "enc.embed", f);
        let q = query_graph(&mut g, &mut b, &self.config, &points, x, seed_index)?;
        Ok(g.value(q).clone())
    }

    pub fn encode(&self, cloud: &PointCloud, seed_index: usize) -> Result<LatentTokens> {
        let points = flowmatch::cloud_to_array(cloud);
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, false);
        let z = encode_graph(&mut g, &mut b, &self.config, &points, seed_index)?;
        Ok(LatentTokens {
            tokens: g.value(z).clone(),
        })
    }

    pub fn decode_velocity(&self, x_t: &Mat, z: &LatentTokens, t: f64) -> Result<Mat> {
        decode_velocity_with(&self.config, &self.params, x_t, z, t)
    }

    /// Samples `n_out` points from a latent. The Chamfer-trained variant takes
    /// one deterministic step from noise at `t = 1`.
    pub fn sample_from_latent<R: Rng + ?Sized>(&self, z: &LatentTokens, n_out: usize, flow: &FlowConfig, rng: &mut R) -> Result<PointCloud> {
        sample_with(&self.config, &self.params, z, n_out, flow, rng)
    }

    /// Encodes `cloud` (subsampled to `n_train` when larger) and samples.
    pub fn reconstruct<R: Rng + ?Sized>(&self, cloud: &PointCloud, n_out: usize, flow: &FlowConfig, rng: &mut R) -> Result<PointCloud> {
        let input = if cloud.len() > self.config.n_train {
            cloud.select(&farthest_point_sample(cloud, self.config.n_train, 0)?)
        } else {
            cloud.clone()
        };
        let z = self.encode(&input, 0)?;
        self.sample_from_latent(&z, n_out, flow, rng)
    }

    /// Loss for one draw and gradients for every parameter.
    pub fn loss_and_grads(&self, draw: &AeDraw) -> Result<(f64, std::collections::BTreeMap<String, Mat>)> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, true);
        let z = encode_graph(&mut g, &mut b, &self.config, &draw.x0, draw.query_seed)?;
        let l = loss_graph(&mut g, &mut b, &self.config, draw, z)?;
        let loss = g.scalar(l);
        let mut grads = g.backward(l);
        Ok((loss, b.collect_grads(&mut grads)))
    }

    pub fn loss(&self, draw: &AeDraw) -> Result<f64> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, false);
        let z = encode_graph(&mut g, &mut b, &self.config, &draw.x0, draw.query_seed)?;
        let l = loss_graph(&mut g, &mut b, &self.config, draw, z)?;
        Ok(g.scalar(l))
    }

    /// Training loss for `draw` with the latent supplied instead of encoded.
    pub fn loss_given_latent(&self, draw: &AeDraw, z: &LatentTokens) -> Result<f64> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, false);
        let zv = g.constant(z.tokens.clone());
        let l = loss_graph(&mut g, &mut b, &self.config, draw, zv)?;
        Ok(g.scalar(l))
    }

    /// One optimizer step on `batch`; returns the mean loss before the update.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[PointCloud], train: &TrainConfig, adam: &mut Adam, rng: &mut R) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::precondition("empty training batch"));
        }
        let draws = batch
            .iter()
            .map(|c| AeDraw::sample(c, &self.config, &train.flow, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut acc = std::collections::BTreeMap::new();
        for d in &draws {
            let (l, gr) = self.loss_and_grads(d)?;
            total += l;
            nn::accumulate_grads(&mut acc, gr);
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::non_finite("stage-1 loss", adam.steps() as usize));
        }
        nn::scale_grads(&mut acc, 1.0 / batch.len() as f64);
        apply_update(&mut self.params, &acc, train, adam);
        Ok(loss)
    }
}

/// Clips (if configured) and applies one Adam update to the named tensors.
pub fn apply_update(params: &mut ParamStore, grads: &std::collections::BTreeMap<String, Mat>, train: &TrainConfig, adam: &mut Adam) {
    let mut grads = grads.clone();
    if let Some(c) = train.grad_clip {
        nn::clip_grad_norm(&mut grads, c);
    }
    adam.config = train.adam;
    for (k, gr) in &grads {
        if let Some(p) = params.get_mut(k) {
            adam.update(k, p, gr);
        }
    }
}

pub fn decode_velocity_with(config: &Stage1Config, params: &ParamStore, x_t: &Mat, z: &LatentTokens, t: f64) -> Result<Mat> {
    let mut g = Graph::new();
    let mut b = Binder::new(params, false);
    let zv = g.constant(z.tokens.clone());
    let v = decode_graph(&mut g, &mut b, config, x_t, zv, t)?;
    Ok(g.value(v).clone())
}

pub fn sample_with<R: Rng + ?Sized>(
    config: &Stage1Config,
    params: &ParamStore,
    z: &LatentTokens,
    n_out: usize,
    flow: &FlowConfig,
    rng: &mut R,
) -> Result<PointCloud> {
    match config.loss {
        AeLoss::FlowMatching => {
            flowmatch::euler_sample(|x, t| decode_velocity_with(config, params, x, z, t), n_out, flow, rng)
        }
        AeLoss::Chamfer => {
            if n_out == 0 {
                return Err(Error::precondition("need n_out >= 1"));
            }
            let x1 = flowmatch::sample_noise(rng, n_out);
            let v = decode_velocity_with(config, params, &x1, z, 1.0)?;
            Ok(flowmatch::array_to_cloud(&(x1 - v)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    fn tiny() -> Stage1Config {
        Stage1Config {
            m_tokens: 4,
            channels: 8,
            heads: 2,
            encoder_self_layers: 1,
            decoder_blocks: 1,
            fourier_freqs: 2,
            n_train: 16,
            ..Default::default()
        }
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = seeded_rng(seed);
        flowmatch::array_to_cloud(&(flowmatch::sample_noise(&mut rng, n) * 0.9))
    }

    #[test]
    fn shapes() {
        let m = Stage1Model::new(tiny(), 1).unwrap();
        let z = m.encode(&cloud(20, 2), 0).unwrap();
        assert_eq!(z.shape(), (4, 8));
        let v = m.decode_velocity(&flowmatch::sample_noise(&mut seeded_rng(3), 7), &z, 0.3).unwrap();
        assert_eq!(v.dim(), (7, 3));
    }

    #[test]
    fn too_few_points_rejected() {
        let m = Stage1Model::new(tiny(), 1).unwrap();
        assert!(m.encode(&cloud(3, 2), 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        assert!(Stage1Config::full_scale().validate().is_ok());
    }

    #[test]
    fn canonical_order_sorts_rows() {
        let p = ndarray::array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 1.0, 5.0]];
        assert_eq!(canonical_order(&p), vec![2, 1, 0]);
    }

    #[test]
    fn chamfer_grad_matches_metric_value() {
        let a = cloud(10, 5);
        let b = cloud(12, 6);
        let (v, _) = chamfer_value_and_grad(&flowmatch::cloud_to_array(&a), &b).unwrap();
        assert_eq!(v, crate::metrics::chamfer(&a, &b).unwrap());
    }
}
