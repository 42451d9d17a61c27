//! Desk-scale ablation over variants and seeds, written as CSV.
//!
//! `cargo run --release --example ablation -- [epochs] [out.csv]`

use std::path::PathBuf;

use salient_edge::harness::{run_ablation, ExperimentConfig};
use salient_edge::Variant;

fn main() -> salient_edge::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ablation.csv"));
    let mut config = ExperimentConfig::desk(Variant::Baseline);
    config.epochs = epochs;
    config.optimizer.lr_drop_epoch = Some((epochs * 3 / 4).max(1));
    let variants = [Variant::Baseline, Variant::EdgeTdlp, Variant::TdlpMrfProg, Variant::Full];
    let table = run_ablation(&config, &variants, &[0, 1, 2], |row| {
        println!("{:22} seed {}  MaxF {:.4}", row.variant.label(), row.seed.unwrap_or_default(), row.max_f);
    })?;
    for v in variants {
        if let Some(m) = table.median_row(v) {
            println!("median {:22} MaxF {:.4}  edge MaxF {:.4}", v.label(), m.max_f, m.edge_max_f);
        }
    }
    table.write_csv(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
