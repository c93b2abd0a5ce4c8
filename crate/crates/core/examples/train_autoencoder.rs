//! Train a small flow-matching point autoencoder on a handful of scenes and
//! compare reconstructions with unconditioned noise.
//!
//! `cargo run --release --example train_autoencoder -- [steps]`

use anyhow::Result;
use npa3d::flowmatch::{array_to_cloud, sample_noise, FlowConfig};
use npa3d::metrics::chamfer;
use npa3d::nn::optim::{scheduled_lr, Adam};
use npa3d::stage1::{Stage1Config, Stage1Model, TrainConfig};
use npa3d::synthdata::{generate_sample, DataConfig};
use npa3d::util::seeded_rng;

fn main() -> Result<()> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(400);
    let data = DataConfig { points: 2048, ..DataConfig::default() };
    let clouds = (0..8u64)
        .map(|i| Ok(generate_sample(i, 1, &data)?.normalized_complete()))
        .collect::<Result<Vec<_>>>()?;

    let config = Stage1Config {
        m_tokens: 16,
        channels: 32,
        heads: 2,
        encoder_self_layers: 2,
        decoder_blocks: 2,
        n_train: 512,
        ..Stage1Config::default()
    };
    let mut model = Stage1Model::new(config, 0)?;
    let mut train = TrainConfig::default();
    let base_lr = train.adam.lr;
    let mut adam = Adam::new(train.adam);
    let mut rng = seeded_rng(1);
    for step in 0..steps {
        train.adam.lr = scheduled_lr(base_lr, step, steps, 50, true, 0.05);
        let loss = model.train_step(&[clouds[step as usize % clouds.len()].clone()], &train, &mut adam, &mut rng)?;
        if step % 50 == 0 || step + 1 == steps {
            println!("step {step:>5} loss {loss:.4}");
        }
    }

    let flow = FlowConfig::default();
    for (i, c) in clouds.iter().enumerate().take(4) {
        let rec = model.reconstruct(c, 1024, &flow, &mut rng)?;
        let noise = array_to_cloud(&sample_noise(&mut rng, 1024));
        println!("scene {i}: chamfer reconstruction {:.4}, noise {:.4}", chamfer(&rec, c)?, chamfer(&noise, c)?);
    }
    Ok(())
}
