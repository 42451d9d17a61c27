//! Short desk-scale training run with a checkpoint and resume.
//!
//! `cargo run --release --example train_desk -- [epochs]`

use salient_edge::harness::{evaluate_model, Checkpoint, Dtype, ExperimentConfig, Trainer};
use salient_edge::Variant;

fn main() -> salient_edge::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut config = ExperimentConfig::desk(Variant::EdgeTdlp);
    config.epochs = epochs;
    let samples = config.data.train.materialize()?;
    let mut trainer = Trainer::new(config, samples.clone())?;

    let first = trainer.run_until_epoch(1)?;
    let bytes = trainer.checkpoint().to_bytes(Dtype::F64)?;
    println!("epoch 1: {} updates, checkpoint {} bytes", first.len(), bytes.len());

    let mut trainer = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes)?, samples)?;
    for row in trainer.run()?.iter().step_by(100) {
        println!("step {:5}  epoch {}  lr {:.0e}  loss {:.1}", row.step, row.epoch, row.lr, row.loss.grand_total());
    }

    let test = trainer.config().data.test.materialize()?;
    let report = evaluate_model(trainer.model(), &test, None)?;
    println!(
        "test MaxF {:.4}  MAE {:.4}  S {:.4}  edge MaxF {:.4}",
        report.saliency.max_f, report.saliency.mae, report.saliency.s_measure, report.edge.max_f
    );
    Ok(())
}
