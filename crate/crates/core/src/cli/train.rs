//! Training sessions behind `train-ae` and `train-img`: per-step seeded
//! randomness (so a resumed run replays the same draws), JSON-lines loss and
//! validation logs, periodic checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::flowmatch::FlowConfig;
use crate::geometry::PointCloud;
use crate::nn::optim::Adam;
use crate::stage1::{AeDraw, Stage1Config, Stage1Model, TrainConfig};
use crate::stage2::{ImageSample, Stage2Config, Stage2Model};
use crate::synthdata::load_split;
use crate::util::{derive_seed, read_file, seeded_rng, write_atomic, Rng};

pub const STAGE1_KIND: &str = "stage1";
pub const STAGE2_KIND: &str = "stage2";

const STEP_TAG: u64 = 0x57e9_0000_0000;
const VAL_TAG: u64 = 0x7a1_0000_0000;
const INIT_TAG: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    /// Seconds since the start of training, summed across resumes.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub step: u64,
    pub val_loss: f64,
}

/// `model.nck` → `model.loss.jsonl`.
pub fn loss_log_path(ckpt: &Path) -> PathBuf {
    sibling(ckpt, "loss.jsonl")
}

/// `model.nck` → `model.val.jsonl`.
pub fn val_log_path(ckpt: &Path) -> PathBuf {
    sibling(ckpt, "val.jsonl")
}

fn sibling(ckpt: &Path, suffix: &str) -> PathBuf {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ckpt.with_file_name(format!("{stem}.{suffix}"))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = String::from_utf8(read_file(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::format(path, e.to_string()))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn load_stage1(path: &Path) -> Result<Stage1Model> {
    let ck = checkpoint::load(path)?;
    if ck.kind != STAGE1_KIND {
        return Err(Error::format(path, format!("expected a {STAGE1_KIND} checkpoint, found {}", ck.kind)));
    }
    let cfg: Stage1Config = serde_json::from_value(ck.config).map_err(|e| Error::format(path, e.to_string()))?;
    Stage1Model::from_params(cfg, ck.params)
}

pub fn load_stage2(path: &Path, stage1: &Stage1Model) -> Result<Stage2Model> {
    let ck = checkpoint::load(path)?;
    if ck.kind != STAGE2_KIND {
        return Err(Error::format(path, format!("expected a {STAGE2_KIND} checkpoint, found {}", ck.kind)));
    }
    let cfg: Stage2Config = serde_json::from_value(ck.config).map_err(|e| Error::format(path, e.to_string()))?;
    Stage2Model::from_params(cfg, stage1, ck.params)
}

/// Inputs shared by both training commands.
#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Total step count; a resumed run continues up to it.
    pub steps: u64,
    pub seed: u64,
    pub resume: Option<PathBuf>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub start_step: u64,
    pub final_step: u64,
    pub losses: Vec<LossRecord>,
    pub val: Vec<ValRecord>,
}

trait Session {
    fn set_lr(&mut self, lr: f64);
    fn step(&mut self, rng: &mut Rng) -> Result<f64>;
    fn val_loss(&self) -> Result<f64>;
    fn checkpoint(&self, step: u64, seed: u64, wall_time: f64) -> Checkpoint;
}

fn val_draws(clouds: &[PointCloud], cfg: &Stage1Config, flow: &FlowConfig, seed: u64) -> Result<Vec<AeDraw>> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| AeDraw::sample(c, cfg, flow, &mut seeded_rng(derive_seed(seed, VAL_TAG + i as u64))))
        .collect()
}

fn pick<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

struct AeSession {
    model: Stage1Model,
    adam: Adam,
    train: TrainConfig,
    clouds: Vec<PointCloud>,
    val: Vec<AeDraw>,
}

impl Session for AeSession {
    fn set_lr(&mut self, lr: f64) {
        self.train.adam.lr = lr;
    }

    fn step(&mut self, rng: &mut Rng) -> Result<f64> {
        let batch: Vec<PointCloud> = pick(rng, self.clouds.len(), self.train.batch_size)
            .into_iter()
            .map(|i| self.clouds[i].clone())
            .collect();
        self.model.train_step(&batch, &self.train, &mut self.adam, rng)
    }

    fn val_loss(&self) -> Result<f64> {
        let ls = self.val.iter().map(|d| self.model.loss(d)).collect::<Result<Vec<_>>>()?;
        Ok(crate::util::mean(&ls))
    }

    fn checkpoint(&self, step: u64, seed: u64, wall_time: f64) -> Checkpoint {
        Checkpoint {
            kind: STAGE1_KIND.into(),
            config: serde_json::to_value(&self.model.config).expect("config serializes"),
            step,
            params: self.model.params.clone(),
            adam: Some(self.adam.clone()),
            meta: serde_json::json!({ "seed": seed, "wall_time": wall_time }),
        }
    }
}

struct ImgSession {
    stage1: Stage1Model,
    model: Stage2Model,
    adam: Adam,
    train: TrainConfig,
    samples: Vec<ImageSample>,
    val: Vec<(Vec<crate::geometry::io::RgbImage>, AeDraw)>,
}

impl Session for ImgSession {
    fn set_lr(&mut self, lr: f64) {
        self.train.adam.lr = lr;
    }

    fn step(&mut self, rng: &mut Rng) -> Result<f64> {
        let batch: Vec<ImageSample> = pick(rng, self.samples.len(), self.train.batch_size)
            .into_iter()
            .map(|i| self.samples[i].clone())
            .collect();
        self.model.train_step(&self.stage1, &batch, &self.train, &mut self.adam, rng)
    }

    fn val_loss(&self) -> Result<f64> {
        let ls = self
            .val
            .iter()
            .map(|(imgs, d)| self.model.loss(&self.stage1, imgs, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::util::mean(&ls))
    }

    fn checkpoint(&self, step: u64, seed: u64, wall_time: f64) -> Checkpoint {
        Checkpoint {
            kind: STAGE2_KIND.into(),
            config: serde_json::to_value(&self.model.config).expect("config serializes"),
            step,
            params: self.model.params.clone(),
            adam: Some(self.adam.clone()),
            meta: serde_json::json!({
                "seed": seed,
                "wall_time": wall_time,
                "stage1_checksum": format!("{:016x}", self.stage1.params.checksum()),
            }),
        }
    }
}

struct Resumed {
    step: u64,
    params: crate::nn::ParamStore,
    adam: Option<Adam>,
    config: serde_json::Value,
    losses: Vec<LossRecord>,
    val: Vec<ValRecord>,
}

/// Records from `primary`, or from `fallback` when `primary` is absent.
fn read_log<T: for<'de> Deserialize<'de>>(primary: &Path, fallback: &Path) -> Result<Vec<T>> {
    for p in [primary, fallback] {
        if p.exists() {
            return read_jsonl(p);
        }
    }
    Ok(Vec::new())
}

fn resume_from(path: &Path, kind: &str, out: &Path) -> Result<Resumed> {
    let ck = checkpoint::load(path)?;
    if ck.kind != kind {
        return Err(Error::format(path, format!("expected a {kind} checkpoint, found {}", ck.kind)));
    }
    let mut losses: Vec<LossRecord> = read_log(&loss_log_path(path), &loss_log_path(out))?;
    losses.retain(|r| r.step <= ck.step);
    let mut val: Vec<ValRecord> = read_log(&val_log_path(path), &val_log_path(out))?;
    val.retain(|r| r.step <= ck.step);
    Ok(Resumed {
        step: ck.step,
        params: ck.params,
        adam: ck.adam,
        config: ck.config,
        losses,
        val,
    })
}

fn run_session(session: &mut dyn Session, req: &TrainRequest, start: u64, mut losses: Vec<LossRecord>, mut val: Vec<ValRecord>) -> Result<TrainSummary> {
    let sched = &req.config.train;
    let clock = Instant::now();
    let wall0 = losses.last().map_or(0.0, |r| r.wall_time);
    let save = |s: &dyn Session, step: u64, losses: &[LossRecord], val: &[ValRecord]| -> Result<()> {
        let wall = wall0 + clock.elapsed().as_secs_f64();
        checkpoint::save(&req.out, &s.checkpoint(step, req.seed, wall))?;
        write_jsonl(&loss_log_path(&req.out), losses)?;
        if !val.is_empty() {
            write_jsonl(&val_log_path(&req.out), val)?;
        }
        Ok(())
    };
    for step in start..req.steps {
        let mut rng = seeded_rng(derive_seed(req.seed, STEP_TAG + step));
        session.set_lr(sched.lr_at(step, req.steps));
        let loss = match session.step(&mut rng) {
            Ok(l) => l,
            Err(e) => {
                save(session, step, &losses, &val)?;
                return Err(e);
            }
        };
        let done = step + 1;
        losses.push(LossRecord {
            step: done,
            loss,
            wall_time: wall0 + clock.elapsed().as_secs_f64(),
        });
        if sched.eval_every > 0 && done % sched.eval_every == 0 {
            val.push(ValRecord {
                step: done,
                val_loss: session.val_loss()?,
            });
        }
        if done == req.steps || (sched.checkpoint_every > 0 && done % sched.checkpoint_every == 0) {
            save(session, done, &losses, &val)?;
        }
    }
    if start >= req.steps {
        save(session, start, &losses, &val)?;
    }
    Ok(TrainSummary {
        start_step: start,
        final_step: req.steps.max(start),
        losses,
        val,
    })
}

fn val_subset(req: &TrainRequest) -> Result<Vec<crate::synthdata::LoadedSample>> {
    if req.config.train.eval_every == 0 {
        return Ok(Vec::new());
    }
    let mut v = load_split(&req.manifest, Some("val"))?;
    v.truncate(req.config.train.val_samples);
    Ok(v)
}

fn train_split(manifest: &Path) -> Result<Vec<crate::synthdata::LoadedSample>> {
    let s = load_split(manifest, Some("train"))?;
    if s.is_empty() {
        return Err(Error::precondition(format!("{}: no train samples", manifest.display())));
    }
    Ok(s)
}

/// Trains (or resumes) the point autoencoder.
pub fn train_ae(req: &TrainRequest) -> Result<TrainSummary> {
    let train = req.config.train.train_config(&req.config.flow);
    let clouds: Vec<PointCloud> = train_split(&req.manifest)?.iter().map(|s| s.normalized_complete()).collect();
    let val_clouds: Vec<PointCloud> = val_subset(req)?.iter().map(|s| s.normalized_complete()).collect();
    let (model, adam, start, losses, val) = match &req.resume {
        Some(p) => {
            let r = resume_from(p, STAGE1_KIND, &req.out)?;
            let cfg: Stage1Config = serde_json::from_value(r.config).map_err(|e| Error::format(p, e.to_string()))?;
            let model = Stage1Model::from_params(cfg, r.params)?;
            (model, r.adam.unwrap_or_else(|| Adam::new(train.adam)), r.step, r.losses, r.val)
        }
        None => {
            let model = Stage1Model::new(req.config.stage1.clone(), derive_seed(req.seed, INIT_TAG))?;
            (model, Adam::new(train.adam), 0, Vec::new(), Vec::new())
        }
    };
    let val_draws = val_draws(&val_clouds, &model.config, &train.flow, req.seed)?;
    let mut s = AeSession {
        model,
        adam,
        train,
        clouds,
        val: val_draws,
    };
    run_session(&mut s, req, start, losses, val)
}

/// Trains (or resumes) the image transformer against a frozen stage-1 model.
pub fn train_img(req: &TrainRequest, stage1_path: &Path) -> Result<TrainSummary> {
    let stage1 = load_stage1(stage1_path)?;
    let train = req.config.train.train_config(&req.config.flow);
    let samples: Vec<ImageSample> = train_split(&req.manifest)?
        .into_iter()
        .map(|s| ImageSample {
            cloud: s.normalized_complete(),
            images: s.images,
        })
        .collect();
    let val_samples = val_subset(req)?;
    let val_clouds: Vec<PointCloud> = val_samples.iter().map(|s| s.normalized_complete()).collect();
    let draws = val_draws(&val_clouds, &stage1.config, &train.flow, req.seed)?;
    let val_pairs = val_samples.into_iter().map(|s| s.images).zip(draws).collect();
    let (model, adam, start, losses, val) = match &req.resume {
        Some(p) => {
            let r = resume_from(p, STAGE2_KIND, &req.out)?;
            let cfg: Stage2Config = serde_json::from_value(r.config).map_err(|e| Error::format(p, e.to_string()))?;
            let model = Stage2Model::from_params(cfg, &stage1, r.params)?;
            (model, r.adam.unwrap_or_else(|| Adam::new(train.adam)), r.step, r.losses, r.val)
        }
        None => {
            let model = Stage2Model::new(req.config.stage2.clone(), &stage1, derive_seed(req.seed, INIT_TAG))?;
            (model, Adam::new(train.adam), 0, Vec::new(), Vec::new())
        }
    };
    let mut s = ImgSession {
        stage1,
        model,
        adam,
        train,
        samples,
        val: val_pairs,
    };
    run_session(&mut s, req, start, losses, val)
}
