//! Finite-difference check of the analytic gradients of the full model.

use salient_edge::data::synthetic_sample;
use salient_edge::gradcheck::{check_gradients, GradCheckConfig};
use salient_edge::{GroundTruth, Model, ModelConfig, Variant};

fn main() -> salient_edge::Result<()> {
    let mut config = ModelConfig::toy(Variant::Full);
    config.backbone.min_input = 32;
    let mut model = Model::new(config, 0)?;
    let sample = synthetic_sample(0, 32, 7);
    let report = check_gradients(&mut model, &sample.image, &GroundTruth::new(&sample), &GradCheckConfig::default())?;
    for e in report.entries.iter().take(10) {
        println!("{:28} {:+.6e} {:+.6e}  rel {:.1e}", e.name, e.analytic, e.numeric, e.rel_error);
    }
    println!("groups covered: {:?}", report.groups());
    println!("max relative error over {} entries: {:.2e}", report.entries.len(), report.max_rel_error());
    Ok(())
}
