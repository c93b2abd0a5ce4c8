//! `eval`: per-sample metrics for a model and the reference rows (visible
//! union, noise prior, ground truth against itself), written as CSV plus an
//! aggregate JSON of means and medians.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlignMode, EvalConfig};
use crate::align::{align_translation_scale, AlignConfig};
use crate::error::{Error, Result};
use crate::flowmatch::{array_to_cloud, sample_noise, FlowConfig};
use crate::geometry::{io, PointCloud};
use crate::metrics::{evaluate, MetricConfig, MetricReport};
use crate::stage1::Stage1Model;
use crate::stage2::Stage2Model;
use crate::synthdata::LoadedSample;
use crate::util::{derive_seed, lower_median, mean, seeded_rng, write_atomic};

pub const METHOD_MODEL: &str = "model";
pub const METHOD_VISIBLE: &str = "visible_union";
pub const METHOD_NOISE: &str = "noise_prior";
pub const METHOD_GT: &str = "gt_identity";
pub const METHODS: [&str; 4] = [METHOD_MODEL, METHOD_VISIBLE, METHOD_NOISE, METHOD_GT];

pub const CSV_NAME: &str = "metrics.csv";
pub const AGGREGATE_NAME: &str = "aggregate.json";
pub const PRED_DIR: &str = "preds";

/// What produces the `model` row.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    /// Autoencoder reconstruction of the ground-truth cloud.
    Ae(&'a Stage1Model),
    /// Image-conditioned generation.
    Img(&'a Stage1Model, &'a Stage2Model),
}

impl Predictor<'_> {
    pub fn stage_name(&self) -> &'static str {
        match self {
            Predictor::Ae(_) => "ae",
            Predictor::Img(..) => "img",
        }
    }

    /// Prediction in the sample's normalised first-view frame.
    pub fn predict(&self, sample: &LoadedSample, n: usize, flow: &FlowConfig, seed: u64) -> Result<PointCloud> {
        let mut rng = seeded_rng(seed);
        match self {
            Predictor::Ae(m) => m.reconstruct(&sample.normalized_complete(), n, flow, &mut rng),
            Predictor::Img(s1, s2) => Ok(s2.infer(s1, &sample.images, n, flow, None, &mut rng)?.cloud),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub sample: String,
    pub method: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct SampleEval {
    pub rows: Vec<EvalRow>,
    pub prediction: PointCloud,
    /// Seconds spent producing the model prediction.
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Stat {
            mean: mean(values),
            median: lower_median(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub stage: String,
    pub align: AlignMode,
    pub samples: usize,
    pub points: usize,
    pub fm_step: f64,
    /// method → metric → statistics over samples.
    pub methods: BTreeMap<String, BTreeMap<String, Stat>>,
    pub inference_seconds: Stat,
}

pub fn metric_config_for(gt: &PointCloud, cfg: &EvalConfig) -> MetricConfig {
    MetricConfig {
        fscore_taus: cfg.fscore_taus.clone(),
        hole_tau: cfg.hole_tau_diag * gt.bbox_diagonal(),
        density_k: cfg.density_k,
    }
}

fn maybe_align(pred: PointCloud, gt: &PointCloud, cfg: &EvalConfig) -> Result<PointCloud> {
    match cfg.align {
        AlignMode::None => Ok(pred),
        AlignMode::Ts => {
            let a = align_translation_scale(
                &pred,
                gt,
                &AlignConfig {
                    iters: cfg.align_iters,
                    ..AlignConfig::default()
                },
            )?;
            Ok(a.apply(&pred))
        }
    }
}

/// Every row for one sample; `seed` fixes the generation and noise draws.
pub fn evaluate_sample(predictor: Predictor, sample: &LoadedSample, cfg: &EvalConfig, flow: &FlowConfig, seed: u64) -> Result<SampleEval> {
    let gt = sample.normalized_complete();
    let mcfg = metric_config_for(&gt, cfg);
    let clock = Instant::now();
    let pred = predictor.predict(sample, cfg.points, flow, derive_seed(seed, 1))?;
    let inference_seconds = clock.elapsed().as_secs_f64();
    let noise = array_to_cloud(&sample_noise(&mut seeded_rng(derive_seed(seed, 2)), cfg.points));
    let id = &sample.record.id;
    let row = |method: &str, cloud: PointCloud| -> Result<EvalRow> {
        let cloud = maybe_align(cloud, &gt, cfg)?;
        Ok(EvalRow {
            sample: id.clone(),
            method: method.to_string(),
            report: evaluate(&cloud, &gt, &mcfg)?,
        })
    };
    let rows = vec![
        row(METHOD_MODEL, pred.clone())?,
        row(METHOD_VISIBLE, sample.normalized_visible())?,
        row(METHOD_NOISE, noise)?,
        EvalRow {
            sample: id.clone(),
            method: METHOD_GT.to_string(),
            report: evaluate(&gt, &gt, &mcfg)?,
        },
    ];
    Ok(SampleEval {
        rows,
        prediction: pred,
        inference_seconds,
    })
}

pub fn aggregate(rows: &[EvalRow], fields: &[String]) -> BTreeMap<String, BTreeMap<String, Stat>> {
    let mut out = BTreeMap::new();
    for method in METHODS {
        let picked: Vec<Vec<(String, f64)>> = rows.iter().filter(|r| r.method == method).map(|r| r.report.to_flat()).collect();
        if picked.is_empty() {
            continue;
        }
        let mut per = BTreeMap::new();
        for (j, f) in fields.iter().enumerate() {
            let vals: Vec<f64> = picked.iter().map(|r| r[j].1).collect();
            per.insert(f.clone(), Stat::of(&vals));
        }
        out.insert(method.to_string(), per);
    }
    out
}

fn write_csv(path: &Path, fields: &[String], rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = ["sample", "method"].into_iter().chain(fields.iter().map(String::as_str)).collect();
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.sample.clone(), r.method.clone()];
        rec.extend(r.report.to_flat().into_iter().map(|(_, v)| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    pub aggregate: Aggregate,
    pub csv: PathBuf,
    pub aggregate_path: PathBuf,
}

/// Evaluates `samples` in parallel, writes `metrics.csv`, `aggregate.json`
/// and the model predictions under `out`. A failing sample still leaves
/// the CSV of the others behind and is reported as the error.
pub fn run_eval(predictor: Predictor, samples: &[LoadedSample], cfg: &EvalConfig, flow: &FlowConfig, seed: u64, out: &Path) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::precondition(format!("no samples in split {:?}", cfg.split)));
    }
    let results: Vec<Result<SampleEval>> = crate::util::with_thread_cap(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| evaluate_sample(predictor, s, cfg, flow, derive_seed(seed, i as u64)))
            .collect()
    });
    let fields = MetricReport::field_names(&MetricConfig {
        fscore_taus: cfg.fscore_taus.clone(),
        ..MetricConfig::default()
    });
    let mut rows = Vec::new();
    let mut secs = Vec::new();
    let mut first_err = None;
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok(e) => {
                io::write_npc(&out.join(PRED_DIR).join(format!("{}.npc", s.record.id)), &e.prediction)?;
                rows.extend(e.rows);
                secs.push(e.inference_seconds);
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(Error::precondition(format!("sample {}: {e}", s.record.id)));
                }
            }
        }
    }
    let csv = out.join(CSV_NAME);
    write_csv(&csv, &fields, &rows)?;
    if let Some(e) = first_err {
        return Err(e);
    }
    let agg = Aggregate {
        stage: predictor.stage_name().into(),
        align: cfg.align,
        samples: samples.len(),
        points: cfg.points,
        fm_step: flow.step_size,
        methods: aggregate(&rows, &fields),
        inference_seconds: Stat::of(&secs),
    };
    let aggregate_path = out.join(AGGREGATE_NAME);
    let json = serde_json::to_vec_pretty(&agg).map_err(|e| Error::format(&aggregate_path, e.to_string()))?;
    write_atomic(&aggregate_path, &json)?;
    Ok(EvalSummary {
        rows,
        aggregate: agg,
        csv,
        aggregate_path,
    })
}

pub fn read_aggregate(path: &Path) -> Result<Aggregate> {
    let bytes = crate::util::read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}
