//! Undo a known scale and translation with the Chamfer alignment.
//!
//! `cargo run --release --example align`

use anyhow::Result;
use npa3d::align::{align_translation_scale, AlignConfig};
use npa3d::synthdata::{generate_sample, DataConfig};

fn main() -> Result<()> {
    let gt = generate_sample(9, 1, &DataConfig { points: 2048, ..DataConfig::default() })?.normalized_complete();
    let (s, t) = (0.5, [-0.5, -1.0, -1.5]);
    // gt = s·pred + t
    let pred = gt.map_points(|p| [(p[0] - t[0]) / s, (p[1] - t[1]) / s, (p[2] - t[2]) / s]);
    let a = align_translation_scale(&pred, &gt, &AlignConfig::default())?;
    println!("recovered scale {:.6}, translation {:.6?}, objective {:.2e}", a.scale, a.translation, a.final_objective);
    println!("expected  scale {s}, translation {t:?}");
    Ok(())
}
