//! Straight-line scalar reimplementations of every layer, used as independent
//! oracles by the test suites.
//!
//! Everything here works on plain `&[f64]` slices with explicit index loops
//! and shares no code with the [`tensor`](crate::tensor) kernels it checks.

/// Attention pooling variant for the reference pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    GlobalOnly,
    LocalOnly,
    Combined,
}

/// One MLP branch: `w2 * dropout(relu(w1 * x + b1)) + b2` with dropout inactive.
pub struct Mlp<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub in_width: usize,
    pub hidden: usize,
    pub out_width: usize,
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Depthwise convolution of `x[n, c, t, v]` with `kernel[c, kt, kv]`,
/// stride 1, zero same padding.
pub fn depthwise_conv2d(
    x: &[f64],
    (n, c, t, v): (usize, usize, usize, usize),
    kernel: &[f64],
    (kt, kv): (usize, usize),
) -> Vec<f64> {
    let (ct, cv) = (kt / 2, kv / 2);
    let mut out = vec![0.0; n * c * t * v];
    for b in 0..n {
        for ch in 0..c {
            for to in 0..t {
                for vo in 0..v {
                    let mut acc = 0.0;
                    for a in 0..kt {
                        for bb in 0..kv {
                            let ti = to as isize + a as isize - ct as isize;
                            let vi = vo as isize + bb as isize - cv as isize;
                            if ti < 0 || ti >= t as isize || vi < 0 || vi >= v as isize {
                                continue;
                            }
                            let xi = ((b * c + ch) * t + ti as usize) * v + vi as usize;
                            acc += x[xi] * kernel[(ch * kt + a) * kv + bb];
                        }
                    }
                    out[((b * c + ch) * t + to) * v + vo] = acc;
                }
            }
        }
    }
    out
}

/// 1x1 channel mix of `x[n, cin, t, v]` with `w[cout, cin]` plus optional bias.
pub fn pointwise_conv2d(
    x: &[f64],
    (n, cin, t, v): (usize, usize, usize, usize),
    w: &[f64],
    cout: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let span = t * v;
    let mut out = vec![0.0; n * cout * span];
    for b in 0..n {
        for co in 0..cout {
            for i in 0..span {
                let mut acc = bias.map_or(0.0, |bd| bd[co]);
                for ci in 0..cin {
                    acc += w[co * cin + ci] * x[(b * cin + ci) * span + i];
                }
                out[(b * cout + co) * span + i] = acc;
            }
        }
    }
    out
}

/// Depthwise then pointwise convolution with bias.
pub fn separable_conv2d(
    x: &[f64],
    dims: (usize, usize, usize, usize),
    depthwise: &[f64],
    kdims: (usize, usize),
    pointwise: &[f64],
    cout: usize,
    bias: &[f64],
) -> Vec<f64> {
    let spatial = depthwise_conv2d(x, dims, depthwise, kdims);
    pointwise_conv2d(&spatial, dims, pointwise, cout, Some(bias))
}

/// Mean over the channel and frame axes of `x[n, c, t, v]`, one value per joint.
pub fn pool_channels_frames(x: &[f64], (n, c, t, v): (usize, usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; n * v];
    for b in 0..n {
        for j in 0..v {
            let mut acc = 0.0;
            for ch in 0..c {
                for f in 0..t {
                    acc += x[((b * c + ch) * t + f) * v + j];
                }
            }
            out[b * v + j] = acc / (c * t) as f64;
        }
    }
    out
}

/// Mean over the frame and joint axes of `x[n, c, t, v]`, one value per channel.
pub fn pool_frames_joints(x: &[f64], (n, c, t, v): (usize, usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for f in 0..t {
                for j in 0..v {
                    acc += x[((b * c + ch) * t + f) * v + j];
                }
            }
            out[b * c + ch] = acc / (t * v) as f64;
        }
    }
    out
}

/// Floor-formula bin boundaries with the single-element fallback for bins the
/// floor partition would leave empty (possible only when `len < bins`).
pub fn bins(len: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins)
        .map(|i| {
            let s = i * len / bins;
            let e = (i + 1) * len / bins;
            if e > s {
                (s, e)
            } else {
                let idx = s.min(len - 1);
                (idx, idx + 1)
            }
        })
        .collect()
}

/// Adaptive 4x4 pooling over the (channel, frame) axes of `x[n, c, t, v]`
/// followed by the mean over the 16 bins, one value per joint.
pub fn pool_local(x: &[f64], (n, c, t, v): (usize, usize, usize, usize)) -> Vec<f64> {
    let cbins = bins(c, 4);
    let tbins = bins(t, 4);
    let mut out = vec![0.0; n * v];
    for b in 0..n {
        for j in 0..v {
            let mut total = 0.0;
            for &(cs, ce) in &cbins {
                for &(ts, te) in &tbins {
                    let mut acc = 0.0;
                    for ch in cs..ce {
                        for f in ts..te {
                            acc += x[((b * c + ch) * t + f) * v + j];
                        }
                    }
                    total += acc / ((ce - cs) * (te - ts)) as f64;
                }
            }
            out[b * v + j] = total / 16.0;
        }
    }
    out
}

/// Row-wise stable softmax over consecutive rows of `width` values.
pub fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..x.len() / width {
        let row = &x[r * width..(r + 1) * width];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out[r * width..(r + 1) * width].iter_mut().zip(row) {
            *o = (v - mx).exp();
            sum += *o;
        }
        for o in &mut out[r * width..(r + 1) * width] {
            *o /= sum;
        }
    }
    out
}

/// Rows-by-weight affine map: `y[r, o] = sum_i x[r, i] w[o, i] + b[o]`.
pub fn linear_rows(x: &[f64], rows: usize, d_in: usize, w: &[f64], b: &[f64], d_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        for o in 0..d_out {
            let mut acc = b[o];
            for i in 0..d_in {
                acc += x[r * d_in + i] * w[o * d_in + i];
            }
            out[r * d_out + o] = acc;
        }
    }
    out
}

/// Eval-mode MLP branch.
pub fn mlp(x: &[f64], rows: usize, p: &Mlp<'_>) -> Vec<f64> {
    let hidden = linear_rows(x, rows, p.in_width, p.w1, p.b1, p.hidden);
    let activated: Vec<f64> = hidden.iter().map(|&h| relu(h)).collect();
    linear_rows(&activated, rows, p.hidden, p.w2, p.b2, p.out_width)
}

/// Per-sample outer product: `out[b, i, j] = q[b, i] * k[b, j]`.
pub fn batched_outer(q: &[f64], k: &[f64], n: usize, v: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * v * v];
    for b in 0..n {
        for i in 0..v {
            for j in 0..v {
                out[(b * v + i) * v + j] = q[b * v + i] * k[b * v + j];
            }
        }
    }
    out
}

/// The full multi-scale pooling attention pipeline: channel split into query
/// and key halves, global + local pooling, concatenation, per-branch MLPs,
/// batched outer product, row softmax. Dropout inactive (eval mode).
pub fn attention_pipeline(
    f: &[f64],
    (n, c, t, v): (usize, usize, usize, usize),
    mlp_q: &Mlp<'_>,
    mlp_k: &Mlp<'_>,
    variant: Variant,
) -> Vec<f64> {
    assert!(c % 2 == 0, "channel count must be even");
    let half = c / 2;
    let span = t * v;
    let mut q = vec![0.0; n * half * span];
    let mut k = vec![0.0; n * half * span];
    for b in 0..n {
        for ch in 0..half {
            for i in 0..span {
                q[(b * half + ch) * span + i] = f[(b * c + ch) * span + i];
                k[(b * half + ch) * span + i] = f[(b * c + half + ch) * span + i];
            }
        }
    }
    let dims = (n, half, t, v);
    let project = |x: &[f64], branch: &Mlp<'_>| -> Vec<f64> {
        let feats: Vec<f64> = match variant {
            Variant::GlobalOnly => pool_channels_frames(x, dims),
            Variant::LocalOnly => pool_local(x, dims),
            Variant::Combined => {
                let g = pool_channels_frames(x, dims);
                let l = pool_local(x, dims);
                let mut cat = vec![0.0; n * 2 * v];
                for b in 0..n {
                    cat[b * 2 * v..b * 2 * v + v].copy_from_slice(&g[b * v..(b + 1) * v]);
                    cat[b * 2 * v + v..(b + 1) * 2 * v].copy_from_slice(&l[b * v..(b + 1) * v]);
                }
                cat
            }
        };
        mlp(&feats, n, branch)
    };
    let qp = project(&q, mlp_q);
    let kp = project(&k, mlp_k);
    let scores = batched_outer(&qp, &kp, n, v);
    softmax_rows(&scores, v)
}

/// Scalar blend of a per-sample map with a shared prior.
pub fn fuse_maps(a: &[f64], prior: &[f64], alpha: f64, n: usize, v: usize) -> Vec<f64> {
    let size = v * v;
    let mut out = vec![0.0; n * size];
    for b in 0..n {
        for i in 0..size {
            out[b * size + i] = alpha * a[b * size + i] + (1.0 - alpha) * prior[i];
        }
    }
    out
}

/// Joint mixing per frame: `out[b, ch, f, i] = sum_j x[b, ch, f, j] * m[b, i, j]`.
pub fn apply_attention(
    x: &[f64],
    (n, c, t, v): (usize, usize, usize, usize),
    m: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; n * c * t * v];
    for b in 0..n {
        for ch in 0..c {
            for f in 0..t {
                for i in 0..v {
                    let mut acc = 0.0;
                    for j in 0..v {
                        acc += x[((b * c + ch) * t + f) * v + j] * m[(b * v + i) * v + j];
                    }
                    out[((b * c + ch) * t + f) * v + i] = acc;
                }
            }
        }
    }
    out
}

/// Channel refinement: pooled channel statistics through a same-padded 1-D
/// convolution and sigmoid gate, applied residually.
pub fn channel_refine(
    x: &[f64],
    (n, c, t, v): (usize, usize, usize, usize),
    kernel: &[f64],
) -> Vec<f64> {
    let stats = pool_frames_joints(x, (n, c, t, v));
    let ksz = kernel.len();
    let half = ksz / 2;
    let mut gate = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for a in 0..ksz {
                let ci = ch as isize + a as isize - half as isize;
                if ci < 0 || ci >= c as isize {
                    continue;
                }
                acc += stats[b * c + ci as usize] * kernel[a];
            }
            gate[b * c + ch] = sigmoid(acc);
        }
    }
    let span = t * v;
    let mut out = vec![0.0; n * c * span];
    for b in 0..n {
        for ch in 0..c {
            let w = gate[b * c + ch];
            for i in 0..span {
                let xi = (b * c + ch) * span + i;
                out[xi] = x[xi] + x[xi] * w;
            }
        }
    }
    out
}

/// Eval-mode batch normalization against fixed running statistics.
pub fn batchnorm_eval(
    x: &[f64],
    (n, c, t, v): (usize, usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let span = t * v;
    let mut out = vec![0.0; n * c * span];
    for b in 0..n {
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + eps).sqrt();
            for i in 0..span {
                let xi = (b * c + ch) * span + i;
                out[xi] = (x[xi] - mean[ch]) * inv * gamma[ch] + beta[ch];
            }
        }
    }
    out
}

/// Train-mode batch normalization with biased batch statistics.
pub fn batchnorm_train(
    x: &[f64],
    (n, c, t, v): (usize, usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let span = t * v;
    let m = (n * span) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        for b in 0..n {
            for i in 0..span {
                mean[ch] += x[(b * c + ch) * span + i];
            }
        }
        mean[ch] /= m;
    }
    for ch in 0..c {
        for b in 0..n {
            for i in 0..span {
                let d = x[(b * c + ch) * span + i] - mean[ch];
                var[ch] += d * d;
            }
        }
        var[ch] /= m;
    }
    batchnorm_eval(x, (n, c, t, v), gamma, beta, &mean, &var, eps)
}

/// Mean negative log-likelihood through an explicit log-sum-exp.
pub fn cross_entropy(logits: &[f64], n: usize, k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for r in 0..n {
        let row = &logits[r * k..(r + 1) * k];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - mx).exp();
        }
        total += mx + sum.ln() - row[labels[r]];
    }
    total / n as f64
}
