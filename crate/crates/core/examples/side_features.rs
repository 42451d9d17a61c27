//! Backbone side features C2..C6 for one synthetic image.

use salient_edge::data::synthetic_sample;
use salient_edge::{extract_side_features, Model, ModelConfig, Variant};

fn main() -> salient_edge::Result<()> {
    let model = Model::new(ModelConfig::toy(Variant::Baseline), 0)?;
    let sample = synthetic_sample(0, 64, 1);
    let sides = extract_side_features(&sample.image, &model.config.backbone, &model.network.backbone, model.params())?;
    for (level, f) in sides.iter() {
        println!(
            "C{level}: {} channels, {}x{}, stride {}",
            f.channels(),
            f.height(),
            f.width(),
            f.stride
        );
    }
    Ok(())
}
