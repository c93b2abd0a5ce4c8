//! Image-to-latent transformer feeding the frozen stage-1 decoder.
//!
//! Each view is cut into patches and embedded, with a per-view-index camera
//! token appended. Learnable scene tokens form an extra pseudo-frame that
//! carries a copy of view 0's camera token. Frame-level and global
//! self-attention alternate; the scene-token outputs become the latent.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::FlowConfig;
use crate::geometry::io::RgbImage;
use crate::geometry::PointCloud;
use crate::nn::layers;
use crate::nn::optim::Adam;
use crate::nn::{self, normal_init, Binder, Graph, Mat, ParamStore, Var};
use crate::stage1::{self, AeDraw, LatentTokens, Stage1Model, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub image_size: usize,
    pub patch_size: usize,
    /// Number of (frame, global) attention pairs.
    pub layers: usize,
    pub channels: usize,
    pub heads: usize,
    pub max_views: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            image_size: 64,
            patch_size: 8,
            layers: 4,
            channels: 64,
            heads: 4,
            max_views: 2,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.max_views == 0 {
            return bad("max_views must be at least 1".into());
        }
        Ok(())
    }

    /// Patch tokens per view: `(image_size / patch_size)²`.
    pub fn patch_tokens(&self) -> usize {
        let s = self.image_size / self.patch_size;
        s * s
    }

    fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

/// Patch tokens of one view plus its camera token.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTokens {
    pub tokens: Mat,
    pub camera_token: Mat,
}

/// Flattens non-overlapping patches row-major; each row holds one patch's
/// pixels row-major with RGB interleaved.
pub fn patchify(image: &RgbImage, patch: usize) -> Mat {
    let (gh, gw) = (image.height / patch, image.width / patch);
    let mut out = Array2::zeros((gh * gw, 3 * patch * patch));
    for pr in 0..gh {
        for pc in 0..gw {
            let r = pr * gw + pc;
            let mut k = 0;
            for y in 0..patch {
                for x in 0..patch {
                    for ch in 0..3 {
                        out[[r, k]] = image.get(pr * patch + y, pc * patch + x, ch);
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

pub fn init_params(config: &Stage2Config, m_tokens: usize, latent_channels: usize, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = crate::util::seeded_rng(seed);
    let rng = &mut rng;
    let c = config.channels;
    let mut s = ParamStore::new();
    layers::init_linear(&mut s, rng, "s2.patch", config.patch_dim(), c);
    s.insert("s2.pos", normal_init(rng, config.patch_tokens(), c, 0.1));
    s.insert("s2.cam", normal_init(rng, config.max_views, c, 1.0));
    s.insert("s2.scene", normal_init(rng, m_tokens, c, 1.0));
    for i in 0..config.layers {
        layers::init_self_block(&mut s, rng, &format!("s2.frame{i}"), c);
        layers::init_self_block(&mut s, rng, &format!("s2.global{i}"), c);
    }
    layers::init_norm(&mut s, "s2.out_ln", c);
    layers::init_linear(&mut s, rng, "s2.head", c, latent_channels);
    Ok(s)
}

fn check_image(config: &Stage2Config, image: &RgbImage) -> Result<()> {
    if image.height != config.image_size || image.width != config.image_size {
        return Err(Error::Shape {
            expected: format!("{0}×{0} image", config.image_size),
            got: format!("{}×{}", image.height, image.width),
        });
    }
    Ok(())
}

/// Patch tokens (`L × C`) and camera token (`1 × C`) nodes for one view.
pub fn tokenize_graph(g: &mut Graph, b: &mut Binder, config: &Stage2Config, image: &RgbImage, view_index: usize) -> Result<(Var, Var)> {
    check_image(config, image)?;
    if view_index >= config.max_views {
        return Err(Error::precondition(format!(
            "view index {view_index} exceeds max_views {}",
            config.max_views
        )));
    }
    let patches = g.constant(patchify(image, config.patch_size));
    let t = layers::linear(g, b, "s2.patch", patches);
    let pos = b.get(g, "s2.pos");
    let t = g.add(t, pos);
    let cams = b.get(g, "s2.cam");
    let cam = g.slice_rows(cams, view_index, 1);
    Ok((t, cam))
}

/// Full forward pass from images to the `M × C_latent` latent node.
pub fn aggregate_graph(g: &mut Graph, b: &mut Binder, config: &Stage2Config, images: &[RgbImage]) -> Result<Var> {
    let k = images.len();
    if k == 0 || k > config.max_views {
        return Err(Error::precondition(format!(
            "need between 1 and {} views, got {k}",
            config.max_views
        )));
    }
    let mut frames = Vec::with_capacity(k + 1);
    let mut cam0 = None;
    for (i, img) in images.iter().enumerate() {
        let (t, cam) = tokenize_graph(g, b, config, img, i)?;
        cam0.get_or_insert(cam);
        frames.push(g.concat_rows(&[t, cam]));
    }
    let scene = b.get(g, "s2.scene");
    let m = g.value(scene).nrows();
    frames.push(g.concat_rows(&[scene, cam0.expect("k >= 1")]));
    let sizes: Vec<usize> = frames.iter().map(|&f| g.value(f).nrows()).collect();

    for i in 0..config.layers {
        for f in frames.iter_mut() {
            *f = layers::self_block(g, b, &format!("s2.frame{i}"), *f, config.heads);
        }
        let all = g.concat_rows(&frames);
        let all = layers::self_block(g, b, &format!("s2.global{i}"), all, config.heads);
        let mut off = 0;
        for (f, &n) in frames.iter_mut().zip(&sizes) {
            *f = g.slice_rows(all, off, n);
            off += n;
        }
        if g.value(all).iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("stage-2 layer", i));
        }
    }
    let scene_out = g.slice_rows(*frames.last().expect("scene frame"), 0, m);
    let h = layers::norm(g, b, "s2.out_ln", scene_out);
    Ok(layers::linear(g, b, "s2.head", h))
}

/// One stage-2 training example: views plus the normalised complete cloud.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub images: Vec<RgbImage>,
    pub cloud: PointCloud,
}

/// Result of [`Stage2Model::infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub cloud: PointCloud,
    /// `true` when the cloud is still in normalised units.
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Model {
    pub config: Stage2Config,
    pub params: ParamStore,
}

impl Stage2Model {
    pub fn new(config: Stage2Config, stage1: &Stage1Model, seed: u64) -> Result<Self> {
        let params = init_params(&config, stage1.config.m_tokens, stage1.config.channels, seed)?;
        Ok(Stage2Model { config, params })
    }

    pub fn from_params(config: Stage2Config, stage1: &Stage1Model, params: ParamStore) -> Result<Self> {
        params.check_layout(&init_params(&config, stage1.config.m_tokens, stage1.config.channels, 0)?)?;
        params.check_finite()?;
        Ok(Stage2Model { config, params })
    }

    pub fn tokenize_view(&self, image: &RgbImage, view_index: usize) -> Result<ViewTokens> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, false);
        let (t, cam) = tokenize_graph(&mut g, &mut b, &self.config, image, view_index)?;
        Ok(ViewTokens {
            tokens: g.value(t).clone(),
            camera_token: g.value(cam).clone(),
        })
    }

    pub fn aggregate(&self, images: &[RgbImage]) -> Result<LatentTokens> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, false);
        let z = aggregate_graph(&mut g, &mut b, &self.config, images)?;
        Ok(LatentTokens {
            tokens: g.value(z).clone(),
        })
    }

    /// Loss for one draw and gradients of the stage-2 parameters only.
    pub fn loss_and_grads(&self, stage1: &Stage1Model, images: &[RgbImage], draw: &AeDraw) -> Result<(f64, BTreeMap<String, Mat>)> {
        let mut g = Graph::new();
        let mut b2 = Binder::new(&self.params, true);
        let mut b1 = Binder::new(&stage1.params, false);
        let z = aggregate_graph(&mut g, &mut b2, &self.config, images)?;
        let l = stage1::loss_graph(&mut g, &mut b1, &stage1.config, draw, z)?;
        let loss = g.scalar(l);
        let mut grads = g.backward(l);
        Ok((loss, b2.collect_grads(&mut grads)))
    }

    pub fn loss(&self, stage1: &Stage1Model, images: &[RgbImage], draw: &AeDraw) -> Result<f64> {
        let mut g = Graph::new();
        let mut b2 = Binder::new(&self.params, false);
        let mut b1 = Binder::new(&stage1.params, false);
        let z = aggregate_graph(&mut g, &mut b2, &self.config, images)?;
        let l = stage1::loss_graph(&mut g, &mut b1, &stage1.config, draw, z)?;
        Ok(g.scalar(l))
    }

    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        stage1: &Stage1Model,
        batch: &[ImageSample],
        train: &TrainConfig,
        adam: &mut Adam,
        rng: &mut R,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::precondition("empty training batch"));
        }
        let mut total = 0.0;
        let mut acc = BTreeMap::new();
        for s in batch {
            let draw = AeDraw::sample(&s.cloud, &stage1.config, &train.flow, rng)?;
            let (l, gr) = self.loss_and_grads(stage1, &s.images, &draw)?;
            total += l;
            nn::accumulate_grads(&mut acc, gr);
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::non_finite("stage-2 loss", adam.steps() as usize));
        }
        nn::scale_grads(&mut acc, 1.0 / batch.len() as f64);
        stage1::apply_update(&mut self.params, &acc, train, adam);
        Ok(loss)
    }

    /// Images to points in the first view's normalised frame; mapped back to
    /// scene units when `denormalize` is given.
    pub fn infer<R: Rng + ?Sized>(
        &self,
        stage1: &Stage1Model,
        images: &[RgbImage],
        n_points: usize,
        flow: &FlowConfig,
        denormalize: Option<&crate::synthdata::Normalization>,
        rng: &mut R,
    ) -> Result<Inference> {
        let z = self.aggregate(images)?;
        let cloud = stage1.sample_from_latent(&z, n_points, flow, rng)?;
        Ok(match denormalize {
            Some(n) => Inference {
                cloud: n.invert(&cloud),
                normalized: false,
            },
            None => Inference {
                cloud,
                normalized: true,
            },
        })
    }
}
