//! Structural contracts of the two networks.

mod common;

use common::*;
use ndarray::Array2;
use npa3d::flowmatch::{array_to_cloud, cloud_to_array, sample_noise, FlowConfig};
use npa3d::geometry::io::RgbImage;
use npa3d::geometry::PointCloud;
use npa3d::nn::optim::Adam;
use npa3d::stage1::{AeDraw, DecoderKind, QueryMode, Stage1Config, Stage1Model, TrainConfig};
use npa3d::stage2::{ImageSample, Stage2Config, Stage2Model};
use npa3d::util::seeded_rng;
use rand::seq::SliceRandom;
use rand::Rng;

fn cloud(seed: u64, n: usize) -> PointCloud {
    PointCloud::new(random_points(&mut seeded_rng(seed), n, 0.9))
}

fn image(seed: u64, size: usize) -> RgbImage {
    let mut rng = seeded_rng(seed);
    let mut im = RgbImage::new(size, size);
    for r in 0..size {
        for c in 0..size {
            im.set(r, c, [rng.random(), rng.random(), rng.random()]);
        }
    }
    im
}

fn permute_rows(a: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    a.select(ndarray::Axis(0), perm)
}

#[test]
fn decoder_is_permutation_equivariant_bitwise() {
    for decoder in [DecoderKind::Joint, DecoderKind::Independent] {
        let cfg = Stage1Config { decoder, ..small_stage1() };
        let m = Stage1Model::new(cfg, 1).unwrap();
        let z = m.encode(&cloud(2, 256), 0).unwrap();
        let x = sample_noise(&mut seeded_rng(3), 300);
        let mut perm: Vec<usize> = (0..300).collect();
        perm.shuffle(&mut seeded_rng(4));
        let v = m.decode_velocity(&x, &z, 0.37).unwrap();
        let vp = m.decode_velocity(&permute_rows(&x, &perm), &z, 0.37).unwrap();
        assert_eq!(vp, permute_rows(&v, &perm), "{decoder:?}");
    }
}

#[test]
fn encoder_is_order_invariant_for_the_same_fps_seed() {
    for query_mode in [QueryMode::Point, QueryMode::Learnable, QueryMode::Hybrid] {
        let cfg = Stage1Config { query_mode, ..small_stage1() };
        let m = Stage1Model::new(cfg, 5).unwrap();
        let c = cloud(6, 200);
        let mut perm: Vec<usize> = (0..200).collect();
        perm.shuffle(&mut seeded_rng(7));
        let shuffled = c.select(&perm);
        let seed = 17;
        let seed_in_shuffled = perm.iter().position(|&p| p == seed).unwrap();
        assert_eq!(m.encode(&c, seed).unwrap(), m.encode(&shuffled, seed_in_shuffled).unwrap(), "{query_mode:?}");
    }
}

#[test]
fn latent_has_m_by_c_shape() {
    let cfg = small_stage1();
    let m = Stage1Model::new(cfg.clone(), 1).unwrap();
    assert_eq!(m.encode(&cloud(1, 100), 3).unwrap().shape(), (cfg.m_tokens, cfg.channels));
    let s2 = Stage2Model::new(Stage2Config { channels: 32, heads: 2, layers: 2, ..Stage2Config::default() }, &m, 2).unwrap();
    for k in 1..=2 {
        let imgs: Vec<RgbImage> = (0..k).map(|i| image(i as u64, 64)).collect();
        assert_eq!(s2.aggregate(&imgs).unwrap().shape(), (cfg.m_tokens, cfg.channels));
    }
    assert!(s2.aggregate(&[]).is_err());
    assert!(s2.aggregate(&[image(0, 64), image(1, 64), image(2, 64)]).is_err());
    assert!(s2.aggregate(&[image(0, 32)]).is_err());
}

#[test]
fn view_tokens_count() {
    let m = Stage1Model::new(small_stage1(), 1).unwrap();
    let s2 = Stage2Model::new(Stage2Config { channels: 32, heads: 2, ..Stage2Config::default() }, &m, 2).unwrap();
    let vt = s2.tokenize_view(&image(0, 64), 0).unwrap();
    assert_eq!(vt.tokens.dim(), (64, 32));
    assert_eq!(vt.camera_token.dim(), (1, 32));
}

#[test]
fn zero_patch_bias_on_black_image_gives_positional_embeddings() {
    let m = Stage1Model::new(small_stage1(), 1).unwrap();
    let mut s2 = Stage2Model::new(Stage2Config { channels: 32, heads: 2, ..Stage2Config::default() }, &m, 2).unwrap();
    s2.params.get_mut("s2.patch.b").unwrap().fill(0.0);
    let vt = s2.tokenize_view(&RgbImage::new(64, 64), 1).unwrap();
    assert_eq!(&vt.tokens, s2.params.get("s2.pos").unwrap());
}

#[test]
fn without_global_attention_latent_ignores_image_content() {
    let m = Stage1Model::new(small_stage1(), 1).unwrap();
    let cfg = Stage2Config { channels: 32, heads: 2, layers: 2, ..Stage2Config::default() };
    let mut s2 = Stage2Model::new(cfg.clone(), &m, 2).unwrap();
    for i in 0..cfg.layers {
        for p in ["w", "b"] {
            s2.params.get_mut(&format!("s2.global{i}.attn.o.{p}")).unwrap().fill(0.0);
        }
    }
    let a = s2.aggregate(&[image(1, 64), image(2, 64)]).unwrap();
    let b = s2.aggregate(&[image(3, 64)]).unwrap();
    assert_eq!(a, b);
    // with global attention restored the content matters
    let s2b = Stage2Model::new(cfg, &m, 2).unwrap();
    assert_ne!(s2b.aggregate(&[image(1, 64)]).unwrap(), s2b.aggregate(&[image(3, 64)]).unwrap());
}

#[test]
fn frozen_decoder_is_untouched_by_stage2_training() {
    let s1 = Stage1Model::new(Stage1Config { n_train: 128, ..small_stage1() }, 1).unwrap();
    let before = s1.params.checksum();
    let snapshot = s1.params.clone();
    let cfg = Stage2Config { image_size: 16, patch_size: 8, channels: 32, heads: 2, layers: 1, max_views: 2 };
    let mut s2 = Stage2Model::new(cfg, &s1, 2).unwrap();
    let batch: Vec<ImageSample> = (0..4)
        .map(|i| ImageSample {
            images: (0..1 + i % 2).map(|v| image(10 * i as u64 + v as u64, 16)).collect(),
            cloud: cloud(i as u64, 128),
        })
        .collect();
    let train = TrainConfig::default();
    let mut adam = Adam::new(train.adam);
    let mut rng = seeded_rng(3);
    let s2_before = s2.params.checksum();
    for step in 0..100 {
        s2.train_step(&s1, &batch[step % 4..step % 4 + 1], &train, &mut adam, &mut rng).unwrap();
    }
    assert_eq!(s1.params.checksum(), before);
    assert_eq!(s1.params, snapshot);
    assert_ne!(s2.params.checksum(), s2_before);
    // only stage-2 tensors appear in the update set
    let d = AeDraw::sample(&batch[0].cloud, &s1.config, &FlowConfig::default(), &mut rng).unwrap();
    let (_, g) = s2.loss_and_grads(&s1, &batch[0].images, &d).unwrap();
    assert!(g.keys().all(|k| k.starts_with("s2.")));
    assert_eq!(g.len(), s2.params.len());
}

#[test]
fn oracle_latent_reduces_image_loss_to_autoencoder_loss() {
    let s1 = Stage1Model::new(Stage1Config { n_train: 128, ..small_stage1() }, 1).unwrap();
    let c = cloud(8, 128);
    let d = AeDraw::sample(&c, &s1.config, &FlowConfig::default(), &mut seeded_rng(2)).unwrap();
    let z = s1.encode(&array_to_cloud(&d.x0), d.query_seed).unwrap();
    assert_eq!(s1.loss_given_latent(&d, &z).unwrap(), s1.loss(&d).unwrap());
}

#[test]
fn sampling_is_resolution_agnostic() {
    let m = Stage1Model::new(small_stage1(), 1).unwrap();
    let z = m.encode(&cloud(3, 300), 0).unwrap();
    let flow = FlowConfig { step_size: 0.25, ..FlowConfig::default() };
    for n in [256, 1024, 4096] {
        let out = m.sample_from_latent(&z, n, &flow, &mut seeded_rng(n as u64)).unwrap();
        assert_eq!(out.len(), n);
        assert!(out.points.iter().all(|p| p.iter().all(|x| x.is_finite())));
    }
}

#[test]
fn zero_head_returns_the_noise_draw() {
    let mut m = Stage1Model::new(small_stage1(), 1).unwrap();
    m.zero_head();
    let flow = FlowConfig::default();
    let out = m.reconstruct(&cloud(4, 300), 200, &flow, &mut seeded_rng(9)).unwrap();
    assert_eq!(out, array_to_cloud(&sample_noise(&mut seeded_rng(9), 200)));
    let s2 = Stage2Model::new(Stage2Config { channels: 32, heads: 2, layers: 1, ..Stage2Config::default() }, &m, 2).unwrap();
    let inf = s2.infer(&m, &[image(0, 64)], 100, &flow, None, &mut seeded_rng(5)).unwrap();
    assert!(inf.normalized);
    assert_eq!(inf.cloud, array_to_cloud(&sample_noise(&mut seeded_rng(5), 100)));
}

#[test]
fn independent_decoder_treats_points_separately() {
    let cfg = Stage1Config { decoder: DecoderKind::Independent, ..small_stage1() };
    let m = Stage1Model::new(cfg, 3).unwrap();
    let z = m.encode(&cloud(1, 100), 0).unwrap();
    let x = sample_noise(&mut seeded_rng(2), 50);
    let full = m.decode_velocity(&x, &z, 0.5).unwrap();
    let head = m.decode_velocity(&x.slice(ndarray::s![0..10, ..]).to_owned(), &z, 0.5).unwrap();
    let diff = (&full.slice(ndarray::s![0..10, ..]) - &head).iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(diff < 1e-12, "{diff}");
    assert_eq!(full.dim(), (50, 3));

    // the joint decoder mixes information across points
    let joint = Stage1Model::new(small_stage1(), 3).unwrap();
    let mut jm = joint.clone();
    for t in jm.params.tensors.iter_mut().filter(|(k, _)| k.contains(".mod.")) {
        t.1.mapv_inplace(|_| 0.05);
    }
    let zj = jm.encode(&cloud(1, 100), 0).unwrap();
    let a = jm.decode_velocity(&x, &zj, 0.5).unwrap();
    let b = jm.decode_velocity(&x.slice(ndarray::s![0..10, ..]).to_owned(), &zj, 0.5).unwrap();
    let diff = (&a.slice(ndarray::s![0..10, ..]) - &b).iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(diff > 1e-9, "{diff}");
}

#[test]
fn chamfer_variant_samples_in_one_pass() {
    let cfg = Stage1Config { loss: npa3d::stage1::AeLoss::Chamfer, ..small_stage1() };
    let m = Stage1Model::new(cfg, 1).unwrap();
    let z = m.encode(&cloud(3, 300), 0).unwrap();
    let mut rng = seeded_rng(4);
    let out = m.sample_from_latent(&z, 64, &FlowConfig::default(), &mut rng).unwrap();
    let x1 = sample_noise(&mut seeded_rng(4), 64);
    let v = m.decode_velocity(&x1, &z, 1.0).unwrap();
    assert_eq!(cloud_to_array(&out), x1 - v);
}
