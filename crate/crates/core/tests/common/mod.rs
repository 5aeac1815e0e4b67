//! Explicit-loop reference implementations used as independent oracles.
//! Nothing here calls into the library's kernels.
#![allow(dead_code)]

pub mod flow_fixtures;

use htnet_core::{Graph, Tensor, Var};

pub fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Direct six-loop 3x3 cross-correlation over one `cin x h x w` input.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - 3) / stride + 1;
    let ow = (w + 2 * pad - 3) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[co];
                for ci in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += weights[((co * cin + ci) * 3 + ky) * 3 + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Windowed max by scanning every in-bounds window element.
pub fn maxpool_oracle(x: &[f64], c: usize, h: usize, w: usize, stride: usize, pad: usize) -> Vec<f64> {
    let oh = (h + 2 * pad - 3) / stride + 1;
    let ow = (w + 2 * pad - 3) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            best = best.max(x[(ch * h + iy as usize) * w + ix as usize]);
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

pub fn layer_norm_oracle(row: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    row.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) / (var + eps).sqrt() * gamma[j] + beta[j])
        .collect()
}

pub fn softmax_oracle(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Row-major `n x d` matrix times `d x e` matrix.
pub fn linear_oracle(x: &[f64], n: usize, d: usize, w: &[f64], e: usize) -> Vec<f64> {
    matmul_oracle(x, w, n, d, e)
}

/// Multi-head scaled dot-product attention over one block of `n` tokens,
/// written with explicit loops. Weights are `d x inner` (q, k, v) and
/// `inner x d` (output), `inner = heads * head_dim`.
#[allow(clippy::too_many_arguments)]
pub fn attention_oracle(
    x: &[f64],
    n: usize,
    d: usize,
    heads: usize,
    head_dim: usize,
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    wo: &[f64],
) -> Vec<f64> {
    let inner = heads * head_dim;
    let q = linear_oracle(x, n, d, wq, inner);
    let k = linear_oracle(x, n, d, wk, inner);
    let v = linear_oracle(x, n, d, wv, inner);
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut concat = vec![0.0; n * inner];
    for h in 0..heads {
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in 0..head_dim {
                    dot += q[i * inner + h * head_dim + c] * k[j * inner + h * head_dim + c];
                }
                *s = dot * scale;
            }
            let attn = softmax_oracle(&scores);
            for c in 0..head_dim {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += attn[j] * v[j * inner + h * head_dim + c];
                }
                concat[i * inner + h * head_dim + c] = acc;
            }
        }
    }
    linear_oracle(&concat, n, inner, wo, d)
}

/// Central-difference gradient of `f` with respect to element `idx` of leaf
/// `which`, where `f` rebuilds the graph from the supplied leaf tensors.
pub fn central_difference(
    leaves: &[Tensor],
    which: usize,
    idx: usize,
    h: f64,
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
) -> f64 {
    let eval = |delta: f64| {
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[idx] += delta;
                }
                g.leaf(t)
            })
            .collect();
        let out = f(&mut g, &vars);
        g.value(out).item().unwrap()
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps gradients that are
/// numerically zero from dividing round-off by round-off.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Brute-force macro F1 and UAR straight from the definitions.
pub fn metrics_oracle(m: &[[u64; 3]; 3]) -> (f64, f64) {
    let mut f1_sum = 0.0;
    let mut recall_sum = 0.0;
    for c in 0..3 {
        let tp = m[c][c] as f64;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        let mut n_c = 0.0;
        for o in 0..3 {
            n_c += m[c][o] as f64;
            if o != c {
                fp += m[o][c] as f64;
                fn_ += m[c][o] as f64;
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        f1_sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        recall_sum += if n_c == 0.0 { 0.0 } else { tp / n_c };
    }
    (f1_sum / 3.0, recall_sum / 3.0)
}

/// In-memory synthetic samples: clips rendered by the corpus generator,
/// turned into composite maps at their true apex.
pub fn synth_samples(subjects: usize, per_class: usize, seed: u64) -> Vec<htnet_core::train::Sample> {
    use htnet_core::synth::{sample_id, synth_sample, SynthConfig};
    use htnet_core::train::{Class, Dataset, Sample};
    let cfg = SynthConfig {
        subjects,
        samples_per_class: per_class,
        seed,
        ..Default::default()
    };
    let flow = htnet_core::flow::FlowParams::default();
    let mut out = Vec::new();
    for subject in 0..subjects {
        for class in Class::ALL {
            for variant in 0..per_class {
                let clip = synth_sample(&cfg, subject, class, variant);
                let map = htnet_core::pipeline::composite_from_frames(
                    &clip.frames[clip.onset],
                    &clip.frames[clip.apex],
                    &clip.landmarks,
                    &flow,
                    28,
                )
                .expect("synthetic clip extracts");
                out.push(Sample {
                    id: sample_id(subject, class, variant),
                    subject: format!("s{subject:02}"),
                    dataset: Dataset::Synth,
                    class,
                    map,
                });
            }
        }
    }
    out
}
