//! Write a small synthetic dataset (renders, depths, cameras, clouds and the
//! manifest) and read it back.
//!
//! `cargo run --release --example synth_dataset -- <out-dir>`

use anyhow::{Context, Result};
use npa3d::synthdata::{build_dataset, load_split, DataConfig};

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).context("usage: synth_dataset <out-dir>")?;
    let cfg = DataConfig {
        train: 8,
        val: 2,
        ..DataConfig::default()
    };
    let manifest = build_dataset(&cfg, dir.as_ref())?;
    println!("manifest {}", manifest.display());
    for s in load_split(&manifest, None)? {
        println!(
            "{:>10} {:>5} K={} complete {} visible {} occluded {:.2}",
            s.record.id,
            s.record.split,
            s.views.len(),
            s.complete.len(),
            s.visible.len(),
            s.record.occluded_fraction
        );
    }
    Ok(())
}
