//! Walks the full model one module at a time and checks the result against
//! `Model::predict`.

use salient_edge::data::synthetic_sample;
use salient_edge::o2ogm::{self, GuidanceLayers};
use salient_edge::{extract_side_features, nlsem, psfem, Model, ModelConfig, Variant};

fn main() -> salient_edge::Result<()> {
    let model = Model::new(ModelConfig::toy(Variant::Full), 3)?;
    let store = model.params();
    let net = &model.network;
    let image = synthetic_sample(0, 64, 1).image;

    let sides = extract_side_features(&image, &model.config.backbone, &net.backbone, store)?;
    let objects = psfem::topdown_fuse(&sides, &net.psfem, store)?;
    for (level, f) in &objects {
        let side = psfem::side_predict(f, &net.psfem.transitions[level], store)?;
        if *level >= 3 {
            println!("side{level}: {:?} at stride {}", side.probs.shape(), side.stride);
        }
    }

    let edge_layers = net.nlsem.as_ref().expect("full model has an edge path");
    let upper = &objects[&edge_layers.source.level()];
    let c2_bar = nlsem::location_propagate(sides.level(2), upper, &edge_layers.propagate, store)?;
    let edge = nlsem::edge_features(&c2_bar, &edge_layers.tower, store)?;
    let edge_pred = nlsem::edge_predict(&edge, &edge_layers.transition, store)?;
    println!("edge: {:?} at stride {}", edge_pred.probs.shape(), edge_pred.stride);

    let Some(GuidanceLayers::OneToOne { paths, betas }) = &net.guidance else {
        unreachable!("full model uses one-to-one guidance");
    };
    let mut logits = Vec::new();
    let mut weights = Vec::new();
    for (level, path) in paths {
        let guided = o2ogm::guide(&objects[level], &edge, &path.guide, store)?;
        let enhanced = o2ogm::sub_enhance(&guided, &path.tower, store)?;
        let sub = o2ogm::sub_predict(&enhanced, &path.transition, store)?;
        println!("subside{level}: {:?}", sub.probs.shape());
        logits.push(sub.logits);
        weights.push(store.value(betas[level]).item());
    }
    let fused = o2ogm::fuse_maps(&logits, &weights, 2)?;

    let reference = model.predict(&image)?;
    let diff = fused
        .probs
        .data()
        .iter()
        .zip(reference.fused.probs.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("fused map matches Model::predict within {diff:.1e}");
    println!("exported saliency map: {:?}", reference.saliency_map().shape());
    Ok(())
}
