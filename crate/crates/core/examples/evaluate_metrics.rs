//! MaxF, MAE and S-measure on hand-made predictions.

use salient_edge::data::gen_synthetic;
use salient_edge::metrics::{evaluate_maps, f_measure, BETA_SQUARED};
use salient_edge::Tensor;

fn blur(mask: &Tensor) -> Tensor {
    let (_, h, w) = mask.chw();
    let mut out = Tensor::zeros(&[1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut n = 0.0;
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (sy, sx) = (y as i64 + dy, x as i64 + dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        acc += mask.at(0, sy as usize, sx as usize);
                        n += 1.0;
                    }
                }
            }
            out.data_mut()[y * w + x] = acc / n;
        }
    }
    out
}

fn main() -> salient_edge::Result<()> {
    let samples = gen_synthetic(20, 64, 2)?;
    let gts: Vec<Tensor> = samples.iter().map(|s| s.mask.clone()).collect();
    let cases: [(&str, Vec<Tensor>); 3] = [
        ("ground truth", gts.clone()),
        ("blurred", gts.iter().map(blur).collect()),
        ("constant 0.5", gts.iter().map(|g| Tensor::full(g.shape(), 0.5)).collect()),
    ];
    for (name, preds) in cases {
        let r = evaluate_maps(&preds, &gts)?;
        println!("{name:14} MaxF {:.4}  MAE {:.4}  S {:.4}", r.max_f, r.mae, r.s_measure);
    }
    println!("F(P=0.8, R=0.4) = {:.4}", f_measure(0.8, 0.4, BETA_SQUARED));
    Ok(())
}
