//! Generates a small synthetic split, writes it to disk and reads it back.
//!
//! `cargo run --example synthetic_data -- [out_dir]`

use std::path::PathBuf;

use salient_edge::data::{gen_synthetic, load_dataset, save_dataset};
use salient_edge::DatasetManifest;

fn main() -> salient_edge::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("salient-edge-data"));
    let samples = gen_synthetic(6, 64, 1)?;
    save_dataset(&out, &samples, Some(&DatasetManifest::synthetic("train", 6, 64, 1)))?;
    for s in load_dataset(&out)? {
        let coverage = s.mask.sum() / s.mask.numel() as f64;
        println!("{}: coverage {:.2}, edge pixels {}", s.id, coverage, s.edge.sum());
    }
    println!("wrote {}", out.display());
    Ok(())
}
