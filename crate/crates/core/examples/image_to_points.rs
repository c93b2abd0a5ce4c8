//! Train both stages at toy scale, then generate a complete cloud from the
//! rendered views of an unseen scene.
//!
//! `cargo run --release --example image_to_points -- [ae-steps] [img-steps]`

use anyhow::Result;
use npa3d::flowmatch::FlowConfig;
use npa3d::metrics::hole_ratio;
use npa3d::nn::optim::Adam;
use npa3d::stage1::{Stage1Config, Stage1Model, TrainConfig};
use npa3d::stage2::{ImageSample, Stage2Config, Stage2Model};
use npa3d::synthdata::{generate_sample, DataConfig, SceneSample};
use npa3d::util::seeded_rng;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>());
    let ae_steps = args.next().transpose()?.unwrap_or(300);
    let img_steps = args.next().transpose()?.unwrap_or(300);

    let data = DataConfig { points: 2048, ..DataConfig::default() };
    let scenes = (0..12u64)
        .map(|i| Ok(generate_sample(i, 1 + i as usize % 2, &data)?))
        .collect::<Result<Vec<SceneSample>>>()?;
    let (train, test) = scenes.split_at(10);

    let s1_config = Stage1Config {
        m_tokens: 16,
        channels: 32,
        heads: 2,
        encoder_self_layers: 2,
        decoder_blocks: 2,
        n_train: 512,
        ..Stage1Config::default()
    };
    let mut stage1 = Stage1Model::new(s1_config, 0)?;
    let tc = TrainConfig::default();
    let mut rng = seeded_rng(2);
    let mut adam = Adam::new(tc.adam);
    for step in 0..ae_steps {
        let loss = stage1.train_step(&[train[step % train.len()].normalized_complete()], &tc, &mut adam, &mut rng)?;
        if step % 100 == 0 {
            println!("autoencoder step {step:>4} loss {loss:.4}");
        }
    }

    let s2_config = Stage2Config {
        channels: 32,
        heads: 2,
        layers: 2,
        ..Stage2Config::default()
    };
    let mut stage2 = Stage2Model::new(s2_config, &stage1, 1)?;
    let mut adam = Adam::new(tc.adam);
    for step in 0..img_steps {
        let s = &train[step % train.len()];
        let batch = [ImageSample {
            images: s.images.clone(),
            cloud: s.normalized_complete(),
        }];
        let loss = stage2.train_step(&stage1, &batch, &tc, &mut adam, &mut rng)?;
        if step % 100 == 0 {
            println!("image model step {step:>4} loss {loss:.4}");
        }
    }

    for s in test {
        let out = stage2.infer(&stage1, &s.images, 2048, &FlowConfig::default(), Some(&s.normalization), &mut rng)?;
        let gt = &s.complete_cloud;
        let tau = 0.1 * gt.bbox_diagonal();
        println!(
            "unseen scene, K={}: hole ratio predicted {:.3}, visible views {:.3}",
            s.k(),
            hole_ratio(&out.cloud, gt, tau)?,
            hole_ratio(&s.visible_cloud, gt, tau)?
        );
    }
    Ok(())
}
