use audioscope::nn::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d_backward,
    maxpool2d_forward, relu_backward, relu_forward, softmax_cross_entropy,
};
use audioscope::nn::{load_checkpoint, save_checkpoint, LayerSpec, Model, Tensor, INPUT_SHAPE};
use audioscope_acceptance::{ensure, CheckResult};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f32 = 1e-3;
const GRAD_TOL: f64 = 1e-3;
const CONFIGS: u64 = 20;
const NORM_FLOOR: f64 = 0.1;
const ORACLE_CASES: u64 = 100;
const ORACLE_TOL: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(out: &Tensor, r: &[f32]) -> f64 {
    out.data().iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(&a, &n)| (a as f64 - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n.powi(2)).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

fn numeric_grad(t: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    (0..t.len())
        .map(|i| {
            let x = t.data()[i];
            let mut plus = t.clone();
            plus.data_mut()[i] = x + H;
            let mut minus = t.clone();
            minus.data_mut()[i] = x - H;
            let step = plus.data()[i] as f64 - minus.data()[i] as f64;
            (f(&plus) - f(&minus)) / step
        })
        .collect()
}

/// Worst relative error per layer type over `CONFIGS` random configurations.
pub fn gradients() -> CheckResult {
    let mut worst = [0.0f64; 5];
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let (ci, co, k) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(k..k + 5), rng.random_range(k..k + 5));
        let x = random_tensor(&mut rng, &[ci, h, w]);
        let wt = random_tensor(&mut rng, &[co, ci, k, k]);
        let b = random_tensor(&mut rng, &[co]);
        let r = random_tensor(&mut rng, &[co, h - k + 1, w - k + 1]);
        let g = conv2d_backward(&x, &wt, &r).unwrap();
        let f = |x: &Tensor, wt: &Tensor, b: &Tensor| dot(&conv2d_forward(x, wt, b).unwrap(), r.data());
        for e in [
            rel_error(g.input.as_ref().unwrap().data(), &numeric_grad(&x, |x| f(x, &wt, &b))),
            rel_error(g.weights.data(), &numeric_grad(&wt, |wt| f(&x, wt, &b))),
            rel_error(g.bias.data(), &numeric_grad(&b, |b| f(&x, &wt, b))),
        ] {
            worst[0] = worst[0].max(e);
        }

        let (n_in, n_out) = (rng.random_range(1..=12), rng.random_range(1..=8));
        let x = random_tensor(&mut rng, &[n_in]);
        let wt = random_tensor(&mut rng, &[n_out, n_in]);
        let b = random_tensor(&mut rng, &[n_out]);
        let r = random_tensor(&mut rng, &[n_out]);
        let g = dense_backward(&x, &wt, &r).unwrap();
        let f = |x: &Tensor, wt: &Tensor, b: &Tensor| dot(&dense_forward(x, wt, b).unwrap(), r.data());
        for e in [
            rel_error(g.input.data(), &numeric_grad(&x, |x| f(x, &wt, &b))),
            rel_error(g.weights.data(), &numeric_grad(&wt, |wt| f(&x, wt, &b))),
            rel_error(g.bias.data(), &numeric_grad(&b, |b| f(&x, &wt, b))),
        ] {
            worst[1] = worst[1].max(e);
        }

        let n = rng.random_range(1..=30);
        let data = (0..n)
            .map(|_| {
                let m: f32 = rng.random_range(0.01..1.0);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect();
        let x = Tensor::new(vec![n], data).unwrap();
        let r = random_tensor(&mut rng, &[n]);
        let a = relu_backward(&x, &r).unwrap();
        worst[2] = worst[2].max(rel_error(a.data(), &numeric_grad(&x, |x| dot(&relu_forward(x), r.data()))));

        let (c, h, w) = (rng.random_range(1..=2), rng.random_range(2..=7), rng.random_range(2..=7));
        let mut values: Vec<f32> = (0..c * h * w).map(|i| i as f32 * 0.01).collect();
        values.shuffle(&mut rng);
        let x = Tensor::new(vec![c, h, w], values).unwrap();
        let (out, routes) = maxpool2d_forward(&x, 2).unwrap();
        let r = random_tensor(&mut rng, out.shape());
        let a = maxpool2d_backward(&r, &routes, x.shape()).unwrap();
        let num = numeric_grad(&x, |x| dot(&maxpool2d_forward(x, 2).unwrap().0, r.data()));
        worst[3] = worst[3].max(rel_error(a.data(), &num));

        let k = rng.random_range(2..=10);
        let logits = Tensor::new(vec![k], (0..k).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let class = rng.random_range(0..k);
        let a = softmax_cross_entropy(&logits, class).unwrap();
        let num = numeric_grad(&logits, |l| softmax_cross_entropy(l, class).unwrap().loss);
        worst[4] = worst[4].max(rel_error(a.grad_logits.data(), &num));
    }
    let names = ["conv2d", "dense", "relu", "maxpool", "softmax-ce"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(worst.iter().all(|&e| e < GRAD_TOL), || format!("max rel error over {CONFIGS} configs: {detail}"))?;
    Ok(format!("{CONFIGS} configs per layer, max rel error {detail} (< {GRAD_TOL:e})"))
}

fn max_abs_diff(got: &Tensor, want: &[f64]) -> f64 {
    got.data().iter().zip(want).map(|(&g, &w)| (g as f64 - w).abs()).fold(0.0, f64::max)
}

pub fn oracles() -> CheckResult {
    let mut worst = [0.0f64; 3];
    for case in 0..ORACLE_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + case);

        let (ci, co, k) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=7));
        let (h, w) = (rng.random_range(k..k + 10), rng.random_range(k..k + 10));
        let x = random_tensor(&mut rng, &[ci, h, w]);
        let wt = random_tensor(&mut rng, &[co, ci, k, k]);
        let b = random_tensor(&mut rng, &[co]);
        let (ho, wo) = (h - k + 1, w - k + 1);
        let mut want = Vec::new();
        for o in 0..co {
            for y in 0..ho {
                for z in 0..wo {
                    let mut s = b.data()[o] as f64;
                    for c in 0..ci {
                        for i in 0..k {
                            for j in 0..k {
                                s += x.data()[(c * h + y + i) * w + z + j] as f64
                                    * wt.data()[((o * ci + c) * k + i) * k + j] as f64;
                            }
                        }
                    }
                    want.push(s);
                }
            }
        }
        let got = conv2d_forward(&x, &wt, &b).unwrap();
        ensure(got.shape() == [co, ho, wo], || format!("conv case {case}: shape {:?}", got.shape()))?;
        worst[0] = worst[0].max(max_abs_diff(&got, &want));

        let (c, h, w) = (rng.random_range(1..=4), rng.random_range(2..=15), rng.random_range(2..=15));
        let x = random_tensor(&mut rng, &[c, h, w]);
        let mut want = Vec::new();
        for ch in 0..c {
            for y in 0..h / 2 {
                for z in 0..w / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for i in 0..2 {
                        for j in 0..2 {
                            m = m.max(x.data()[(ch * h + 2 * y + i) * w + 2 * z + j] as f64);
                        }
                    }
                    want.push(m);
                }
            }
        }
        let (got, _) = maxpool2d_forward(&x, 2).unwrap();
        ensure(got.len() == want.len(), || format!("pool case {case}: length"))?;
        worst[1] = worst[1].max(max_abs_diff(&got, &want));

        let (n_in, n_out) = (rng.random_range(1..=300), rng.random_range(1..=20));
        let x = random_tensor(&mut rng, &[n_in]);
        let wt = random_tensor(&mut rng, &[n_out, n_in]);
        let b = random_tensor(&mut rng, &[n_out]);
        let want: Vec<f64> = (0..n_out)
            .map(|o| {
                b.data()[o] as f64
                    + (0..n_in).map(|i| wt.data()[o * n_in + i] as f64 * x.data()[i] as f64).sum::<f64>()
            })
            .collect();
        worst[2] = worst[2].max(max_abs_diff(&dense_forward(&x, &wt, &b).unwrap(), &want));
    }
    let detail = format!("conv {:.1e}, maxpool {:.1e}, dense {:.1e}", worst[0], worst[1], worst[2]);
    ensure(worst.iter().all(|&d| d < ORACLE_TOL), || format!("max abs diff: {detail}"))?;
    Ok(format!("{ORACLE_CASES} cases each, max abs diff {detail} (< {ORACLE_TOL:e})"))
}

pub fn shape_trace() -> CheckResult {
    let model = Model::default_digits(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random_tensor(&mut rng, &INPUT_SHAPE);
    let pass = model.forward(&input).map_err(|e| e.to_string())?;
    let trace: Vec<Vec<usize>> = model
        .layers()
        .iter()
        .zip(&pass.outputs)
        .filter(|(l, _)| {
            matches!(
                l.spec,
                LayerSpec::Conv2D { .. } | LayerSpec::MaxPool2D { .. } | LayerSpec::Flatten | LayerSpec::Dense { .. }
            )
        })
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let want: Vec<Vec<usize>> = vec![
        vec![16, 92, 251],
        vec![16, 46, 125],
        vec![16, 42, 121],
        vec![16, 21, 60],
        vec![32, 19, 58],
        vec![32, 9, 29],
        vec![8352],
        vec![128],
        vec![10],
    ];
    let fmt = |v: &[Vec<usize>]| {
        v.iter()
            .map(|s| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    ensure(trace == want, || format!("got [{}]", fmt(&trace)))?;
    ensure(pass.probs.shape() == [10], || format!("probs shape {:?}", pass.probs.shape()))?;
    Ok(format!("[{}]", fmt(&trace)))
}

fn tiny_training_run(data: &std::path::Path) -> Result<Vec<u8>, String> {
    let mut config = audioscope::train::TrainConfig::new(data);
    config.epochs = 2;
    config.batch_size = 4;
    config.val_fraction = 0.3;
    config.seed = 42;
    let (model, _) = audioscope::train::train(&config).map_err(|e| e.to_string())?;
    Ok(save_checkpoint(&model))
}

pub fn checkpoint_determinism() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let model = Model::default_digits(rng.random());
    let restored = load_checkpoint(&save_checkpoint(&model)).map_err(|e| e.to_string())?;
    for i in 0..10 {
        let x = random_tensor(&mut rng, &INPUT_SHAPE);
        let a = model.forward(&x).unwrap().logits;
        let b = restored.forward(&x).unwrap().logits;
        let same = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
        ensure(same, || format!("logits differ after save/load on input {i}"))?;
    }

    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    audioscope::dataset::write_tone_dataset(data.path(), 8, 3).map_err(|e| e.to_string())?;
    let first = tiny_training_run(data.path())?;
    let second = tiny_training_run(data.path())?;
    ensure(first == second, || "two seeded training runs produced different checkpoints".into())?;
    Ok(format!(
        "10/10 inputs bit-identical after save/load; two seeded runs gave identical {}-byte checkpoints",
        first.len()
    ))
}
