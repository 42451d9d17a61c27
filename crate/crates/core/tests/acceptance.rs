//! Acceptance suite: one line per criterion, nonzero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{brute_mae, brute_pr, conv, relu, rng, uniform};
use rand::Rng;
use salient_edge::data::{gen_synthetic, synthetic_sample};
use salient_edge::gradcheck::{check_gradients, GradCheckConfig};
use salient_edge::graph::Graph;
use salient_edge::harness::ablation::run_single;
use salient_edge::harness::{ExperimentConfig, Trainer};
use salient_edge::losses::{bce_map, bce_with_logits};
use salient_edge::metrics::{evaluate_maps, f_measure, mae, pr_curve};
use salient_edge::o2ogm::fuse_maps;
use salient_edge::params::ParamGroup;
use salient_edge::psfem::enhance;
use salient_edge::{FeatureMap, GroundTruth, Model, ModelConfig, Tensor, Variant};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_correctness() -> Outcome {
    let mut config = ModelConfig::toy(Variant::Full);
    config.backbone.min_input = 32;
    let mut model = Model::new(config, 0).map_err(|e| e.to_string())?;
    let sample = synthetic_sample(0, 32, 7);
    let gt = GroundTruth::new(&sample);
    let start = Instant::now();
    let report = check_gradients(&mut model, &sample.image, &gt, &GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = report.max_rel_error();
    ensure(report.entries.len() == 50, || format!("{} entries sampled", report.entries.len()))?;
    ensure(report.groups().len() == ParamGroup::ALL.len(), || format!("groups covered: {:?}", report.groups()))?;
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("50 entries over {} groups, max rel err {worst:.2e}", ParamGroup::ALL.len()))
}

fn structural_contract() -> Outcome {
    let model = Model::new(ModelConfig::toy(Variant::Full), 0).map_err(|e| e.to_string())?;
    let image = uniform(&mut rng(1), &[3, 64, 64], 0.0, 1.0);
    let pred = model.predict(&image).map_err(|e| e.to_string())?;
    let maps = pred.supervised();
    ensure(maps.len() == 10, || format!("{} supervised maps", maps.len()))?;
    for (name, p) in &maps {
        let stride = match name.strip_prefix("side") {
            Some(level) => 1usize << (level.parse::<usize>().map_err(|e| e.to_string())? - 1),
            None => 2,
        };
        let side = 64usize.div_ceil(stride);
        ensure(p.stride == stride && p.logits.shape() == [1, side, side], || {
            format!("{name}: stride {} shape {:?}", p.stride, p.logits.shape())
        })?;
    }
    let sal = pred.saliency_map();
    ensure(sal.shape() == [1, 64, 64], || format!("export shape {:?}", sal.shape()))?;
    Ok("edge, side3-6, subside3-6, fused at the expected strides; export 64x64".into())
}

fn loss_identities() -> Outcome {
    let sample = synthetic_sample(0, 64, 3);
    let gt = GroundTruth::new(&sample);
    for v in Variant::ALL {
        let model = Model::new(ModelConfig::toy(v), 1).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let nodes = model.forward_nodes(&mut g, &sample.image).map_err(|e| e.to_string())?;
        let (r, total) = model.loss_nodes(&mut g, &nodes, &gt).map_err(|e| e.to_string())?;
        let modeling = r.edge + r.side[0] + r.side[1] + r.side[2] + r.side[3];
        let guidance = r.fused + r.subside[0] + r.subside[1] + r.subside[2] + r.subside[3];
        ensure(r.modeling_total() == modeling, || format!("{v}: modeling sum"))?;
        ensure(r.guidance_total() == guidance, || format!("{v}: guidance sum"))?;
        ensure(r.grand_total() == modeling + guidance + r.boundary_penalty, || format!("{v}: total"))?;
        ensure(g.value(total).item() == r.grand_total(), || format!("{v}: graph total"))?;
        for (level, &n) in &nodes.side_logits {
            let standalone = bce_with_logits(g.value(n), gt.mask_at(1 << (level - 1))).map_err(|e| e.to_string())?;
            let k = level - 3;
            ensure((standalone - r.side[k]).abs() <= 1e-12 * standalone.max(1.0), || format!("{v}: side{level} term"))?;
        }
    }
    let one = bce_map(&Tensor::full(&[1, 1, 1], 0.5), &Tensor::full(&[1, 1, 1], 1.0)).map_err(|e| e.to_string())?;
    ensure((one - std::f64::consts::LN_2).abs() < 1e-6, || format!("single pixel: {one}"))?;
    let p = Tensor::from_vec(&[1, 2, 2], vec![0.9, 0.1, 0.8, 0.2]).map_err(|e| e.to_string())?;
    let t = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
    let four = bce_map(&p, &t).map_err(|e| e.to_string())?;
    let want = -(2.0 * 0.9f64.ln() + 2.0 * 0.8f64.ln());
    ensure((four - want).abs() < 1e-6, || format!("2x2 case: {four} vs {want}"))?;
    let logits = p.map(|q| (q / (1.0 - q)).ln());
    let via_logits = bce_with_logits(&logits, &t).map_err(|e| e.to_string())?;
    ensure((via_logits - want).abs() < 1e-6, || format!("2x2 case from logits: {via_logits}"))?;
    Ok(format!("exact folds for all {} variants; ln 2 and {want:.6} hand cases", Variant::ALL.len()))
}

fn metric_oracles() -> Outcome {
    let mut r = rng(11);
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-12);
    for i in 0..1000 {
        let pred = if i % 2 == 0 {
            let data = (0..64).map(|_| r.random_range(0..256u32) as f64 / 255.0).collect();
            Tensor::from_vec(&[1, 8, 8], data).map_err(|e| e.to_string())?
        } else {
            uniform(&mut r, &[1, 8, 8], 0.0, 1.0)
        };
        let mut gt = common::binary(&mut r, &[1, 8, 8], 0.3);
        if gt.sum() == 0.0 {
            gt.data_mut()[0] = 1.0;
        }
        let oracle = brute_pr(std::slice::from_ref(&pred), std::slice::from_ref(&gt));
        let curve = pr_curve(std::slice::from_ref(&pred), std::slice::from_ref(&gt)).map_err(|e| e.to_string())?;
        ensure(curve.precision == oracle.precision && curve.recall == oracle.recall, || format!("pr_curve instance {i}"))?;
        let m = mae(&pred, &gt).map_err(|e| e.to_string())?;
        ensure(rel(m, brute_mae(&pred, &gt)), || format!("mae instance {i}"))?;
    }

    for i in 0..1000 {
        let maps: Vec<Tensor> = (0..4).map(|_| uniform(&mut r, &[1, 8, 8], -5.0, 5.0)).collect();
        let betas: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let fused = fuse_maps(&maps, &betas, 2).map_err(|e| e.to_string())?;
        for px in 0..64 {
            let want: f64 = maps.iter().zip(&betas).map(|(m, b)| b * m.data()[px]).sum();
            ensure((fused.logits.data()[px] - want).abs() <= 1e-6 * want.abs().max(1.0), || format!("fuse_maps instance {i}"))?;
        }
    }

    let model = Model::new(ModelConfig::toy(Variant::Full), 0).map_err(|e| e.to_string())?;
    let store = model.params();
    for i in 0..1000 {
        let tower = &model.network.psfem.towers[&(3 + i % 4)];
        let x = uniform(&mut r, &[tower.in_channels(), 8, 8], -1.0, 1.0);
        let got = enhance(&FeatureMap::new(x.clone(), 4), tower, store).map_err(|e| e.to_string())?;
        let mut want = x;
        for layer in &tower.layers {
            want = relu(&conv(&want, store.value(layer.weight), store.value(layer.bias)));
        }
        for (a, b) in got.values.data().iter().zip(want.data()) {
            ensure((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-9), || format!("enhance instance {i}"))?;
        }
    }

    let f = f_measure(0.8, 0.4, 0.3);
    ensure((f - 0.65).abs() < 1e-9, || format!("F(0.8, 0.4) = {f}"))?;
    Ok(format!("1000 instances each for pr_curve, mae, fuse_maps, enhance; F(0.8, 0.4) = {f:.12}"))
}

fn degenerate_suite() -> Outcome {
    let samples = gen_synthetic(10, 64, 5).map_err(|e| e.to_string())?;
    let gts: Vec<Tensor> = samples.iter().map(|s| s.mask.clone()).collect();
    let same = evaluate_maps(&gts, &gts).map_err(|e| e.to_string())?;
    ensure(same.max_f == 1.0 && same.mae == 0.0, || format!("pred=GT: MaxF {} MAE {}", same.max_f, same.mae))?;
    ensure((same.s_measure - 1.0).abs() < 1e-9, || format!("pred=GT: S {}", same.s_measure))?;
    let halves: Vec<Tensor> = gts.iter().map(|g| Tensor::full(g.shape(), 0.5)).collect();
    let half = evaluate_maps(&halves, &gts).map_err(|e| e.to_string())?;
    ensure(half.mae == 0.5, || format!("pred=0.5: MAE {}", half.mae))?;
    Ok(format!("pred=GT: MaxF 1, MAE 0, S {:.12}; pred=0.5: MAE 0.5", same.s_measure))
}

fn mean_loss(model: &Model, samples: &[salient_edge::Sample]) -> Result<f64, String> {
    let mut total = 0.0;
    for s in samples {
        total += model.loss(&s.image, &GroundTruth::new(s)).map_err(|e| e.to_string())?.grand_total();
    }
    Ok(total / samples.len() as f64)
}

fn overfit_run() -> Result<(f64, f64, Trainer, Vec<salient_edge::harness::UpdateLog>), String> {
    let mut config = ExperimentConfig::desk(Variant::Full);
    config.optimizer.accumulate = 8;
    config.optimizer.lr_drop_epoch = None;
    let samples = gen_synthetic(8, 64, 1).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(config, samples.clone()).map_err(|e| e.to_string())?;
    let before = mean_loss(trainer.model(), &samples)?;
    let log = trainer.run_updates(300).map_err(|e| e.to_string())?;
    let after = mean_loss(trainer.model(), &samples)?;
    Ok((before, after, trainer, log))
}

fn param_bits(model: &Model) -> Vec<u64> {
    let store = model.params();
    store.ids().flat_map(|id| store.value(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

fn overfit_convergence() -> Outcome {
    let (before, after, first, log_a) = overfit_run()?;
    let (_, after_b, second, log_b) = overfit_run()?;
    let ratio = after / before;
    ensure(ratio < 0.1, || format!("loss {before:.1} -> {after:.1} (ratio {ratio:.3})"))?;
    ensure(log_a == log_b && after.to_bits() == after_b.to_bits(), || "same-seed runs logged different losses".into())?;
    ensure(param_bits(first.model()) == param_bits(second.model()), || "same-seed runs ended with different weights".into())?;
    Ok(format!("mean loss {before:.1} -> {after:.2} (ratio {ratio:.3}) in 300 updates; two runs bit-identical"))
}

struct AblationMedians {
    max_f: Vec<(Variant, f64)>,
    edge_max_f: Vec<(Variant, f64)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn run_ablation_medians() -> Result<AblationMedians, String> {
    let base = ExperimentConfig::desk(Variant::Baseline);
    let train = base.data.train.materialize().map_err(|e| e.to_string())?;
    let test = base.data.test.materialize().map_err(|e| e.to_string())?;
    let mut out = AblationMedians {
        max_f: Vec::new(),
        edge_max_f: Vec::new(),
    };
    for v in [Variant::Baseline, Variant::EdgeTdlp, Variant::TdlpMrfProg, Variant::Full] {
        let mut max_f = Vec::new();
        let mut edge = Vec::new();
        for seed in 0..3 {
            let row = run_single(&base, v, seed, &train, &test).map_err(|e| e.to_string())?;
            println!("       {:22} seed {seed}: MaxF {:.4}  edge MaxF {:.4}", v.label(), row.max_f, row.edge_max_f);
            max_f.push(row.max_f);
            edge.push(row.edge_max_f);
        }
        out.max_f.push((v, median(max_f)));
        out.edge_max_f.push((v, median(edge)));
    }
    Ok(out)
}

fn lookup(table: &[(Variant, f64)], v: Variant) -> f64 {
    table.iter().find(|(w, _)| *w == v).map(|(_, x)| *x).unwrap_or(f64::NAN)
}

fn ablation_trend(m: &AblationMedians) -> Outcome {
    let b = lookup(&m.max_f, Variant::Baseline);
    let tdlp = lookup(&m.max_f, Variant::EdgeTdlp);
    let prog = lookup(&m.max_f, Variant::TdlpMrfProg);
    let full = lookup(&m.max_f, Variant::Full);
    let detail = format!("median MaxF B {b:.4}, TDLP {tdlp:.4}, MRF_PROG {prog:.4}, MRF_OTO {full:.4}");
    ensure(tdlp >= b && full >= prog, || detail.clone())?;
    Ok(detail)
}

fn edge_quality(m: &AblationMedians) -> Outcome {
    let full = lookup(&m.edge_max_f, Variant::Full);
    let b = lookup(&m.edge_max_f, Variant::Baseline);
    let detail = format!("median edge MaxF full {full:.4} vs B Sobel {b:.4}");
    ensure(full > b, || detail.clone())?;
    Ok(detail)
}

fn report(name: &str, start: Instant, outcome: &Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("[PASS] {name}: {detail} ({secs:.1}s)"),
        Err(detail) => println!("[FAIL] {name}: {detail} ({secs:.1}s)"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 6] = [
        ("gradient correctness", gradient_correctness),
        ("structural output contract", structural_contract),
        ("loss identities", loss_identities),
        ("metric oracles", metric_oracles),
        ("metric degenerate suite", degenerate_suite),
        ("overfit convergence", overfit_convergence),
    ];
    let mut passed = 0;
    let mut total = 0;
    for (name, check) in checks {
        let start = Instant::now();
        total += 1;
        passed += report(name, start, &check()) as usize;
    }

    let start = Instant::now();
    let medians = run_ablation_medians();
    for (name, check) in [("ablation trend", ablation_trend as fn(&AblationMedians) -> Outcome), ("edge quality", edge_quality)] {
        total += 1;
        let outcome = medians.as_ref().map_err(Clone::clone).and_then(check);
        passed += report(name, start, &outcome) as usize;
    }

    println!("{passed}/{total} acceptance criteria passed");
    if passed == total {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
