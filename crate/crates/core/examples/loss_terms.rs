//! Per-term supervision losses of every variant on the same image.

use salient_edge::data::synthetic_sample;
use salient_edge::{GroundTruth, Model, ModelConfig, Variant};

fn main() -> salient_edge::Result<()> {
    let sample = synthetic_sample(0, 64, 1);
    let gt = GroundTruth::new(&sample);
    for v in Variant::ALL {
        let r = Model::new(ModelConfig::toy(v), 0)?.loss(&sample.image, &gt)?;
        println!(
            "{:22} edge {:8.1}  sides {:8.1}  guidance {:8.1}  penalty {:6.1}  total {:8.1}",
            v.label(),
            r.edge,
            r.modeling_total() - r.edge,
            r.guidance_total(),
            r.boundary_penalty,
            r.grand_total()
        );
    }
    Ok(())
}
