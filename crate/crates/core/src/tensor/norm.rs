//! Softmax, batch normalization, and the cross-entropy loss.

use super::{BackArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Numerically stable softmax along the last axis: the row maximum is
/// subtracted before exponentiation, so saturated inputs cannot overflow.
pub fn softmax_lastdim<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let rank = x.rank();
    if rank == 0 {
        return Err(Error::Shape("softmax_lastdim: rank-0 input".to_string()));
    }
    let width = x.shape()[rank - 1];
    let rows = x.elem_count() / width;
    let mut out = vec![S::ZERO; x.elem_count()];
    {
        let xd = x.data();
        for r in 0..rows {
            let row = &xd[r * width..(r + 1) * width];
            let mut mx = row[0];
            for &v in row.iter() {
                mx = mx.maximum(v);
            }
            let mut sum = S::ZERO;
            let orow = &mut out[r * width..(r + 1) * width];
            for (o, &v) in orow.iter_mut().zip(row) {
                let e = (v - mx).exp();
                *o = e;
                sum += e;
            }
            let inv = S::ONE / sum;
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let mut gx = args.parents[0].grad_buf();
            for r in 0..rows {
                let y = &args.data[r * width..(r + 1) * width];
                let g = &args.grad[r * width..(r + 1) * width];
                let mut dot = S::ZERO;
                for i in 0..width {
                    dot += g[i] * y[i];
                }
                let grow = &mut gx[r * width..(r + 1) * width];
                for i in 0..width {
                    grow[i] += y[i] * (g[i] - dot);
                }
            }
        }),
    ))
}

/// Batch normalization over the (batch, frame, joint) axes of `x[N, C, T, V]`.
///
/// Train mode normalizes with the biased batch statistics and folds them into
/// the running buffers with momentum [`BN_MOMENTUM`]; eval mode normalizes
/// with the running buffers and leaves them untouched.
pub fn batchnorm2d<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &Tensor<S>,
    running_var: &Tensor<S>,
    training: bool,
) -> Result<Tensor<S>> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "batchnorm2d: expected [N, C, T, V], got {:?}",
            x.shape()
        )));
    }
    let (n, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    for (name, p) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if p.shape() != [c] {
            return Err(Error::Shape(format!(
                "batchnorm2d: {name} shape {:?} does not match C={c}",
                p.shape()
            )));
        }
    }
    let m = n * t * v;
    if training && m < 2 {
        return Err(Error::Shape(
            "batchnorm2d: train mode requires at least 2 elements per channel".to_string(),
        ));
    }
    let span = t * v;
    let eps = S::from_f64(BN_EPSILON);

    let (mean, var) = if training {
        let xd = x.data();
        let inv_m = S::from_f64(1.0 / m as f64);
        let mut mean = vec![S::ZERO; c];
        let mut var = vec![S::ZERO; c];
        for ch in 0..c {
            let mut acc = S::ZERO;
            for b in 0..n {
                let base = (b * c + ch) * span;
                for i in 0..span {
                    acc += xd[base + i];
                }
            }
            mean[ch] = acc * inv_m;
        }
        for ch in 0..c {
            let mu = mean[ch];
            let mut acc = S::ZERO;
            for b in 0..n {
                let base = (b * c + ch) * span;
                for i in 0..span {
                    let d = xd[base + i] - mu;
                    acc += d * d;
                }
            }
            var[ch] = acc * inv_m;
        }
        drop(xd);
        let mom = S::from_f64(BN_MOMENTUM);
        let keep = S::ONE - mom;
        running_mean.update_data(|r| {
            for (ri, &mi) in r.iter_mut().zip(&mean) {
                *ri = keep * *ri + mom * mi;
            }
        });
        running_var.update_data(|r| {
            for (ri, &vi) in r.iter_mut().zip(&var) {
                *ri = keep * *ri + mom * vi;
            }
        });
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };

    let inv_std: Vec<S> = var.iter().map(|&vv| S::ONE / (vv + eps).sqrt()).collect();
    let mut xhat = vec![S::ZERO; x.elem_count()];
    let mut out = vec![S::ZERO; x.elem_count()];
    {
        let xd = x.data();
        let gd = gamma.data();
        let bd = beta.data();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * span;
                let (mu, istd, ga, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for i in 0..span {
                    let h = (xd[base + i] - mu) * istd;
                    xhat[base + i] = h;
                    out[base + i] = ga * h + be;
                }
            }
        }
    }
    let inv_m = S::from_f64(1.0 / m as f64);
    Ok(Tensor::from_op(
        vec![n, c, t, v],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let gd = args.parents[1].to_vec();
            // Per-channel reductions of the output gradient.
            let mut sum_g = vec![S::ZERO; c];
            let mut sum_gh = vec![S::ZERO; c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * span;
                    for i in 0..span {
                        let g = args.grad[base + i];
                        sum_g[ch] += g;
                        sum_gh[ch] += g * xhat[base + i];
                    }
                }
            }
            {
                let mut gx = args.parents[0].grad_buf();
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * span;
                        let scale = gd[ch] * inv_std[ch];
                        if training {
                            let mg = sum_g[ch] * inv_m;
                            let mgh = sum_gh[ch] * inv_m;
                            for i in 0..span {
                                let g = args.grad[base + i];
                                gx[base + i] += scale * (g - mg - xhat[base + i] * mgh);
                            }
                        } else {
                            for i in 0..span {
                                gx[base + i] += scale * args.grad[base + i];
                            }
                        }
                    }
                }
            }
            {
                let mut gg = args.parents[1].grad_buf();
                for ch in 0..c {
                    gg[ch] += sum_gh[ch];
                }
            }
            {
                let mut gb = args.parents[2].grad_buf();
                for ch in 0..c {
                    gb[ch] += sum_g[ch];
                }
            }
        }),
    ))
}

/// Mean negative log-likelihood of `labels` under softmax of `logits[N, K]`,
/// computed through a log-sum-exp so saturated logits stay finite.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
    if logits.rank() != 2 {
        return Err(Error::Shape(format!(
            "cross_entropy: expected logits [N, K], got {:?}",
            logits.shape()
        )));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "cross_entropy: {} labels for batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!(
            "cross_entropy: label {bad} out of range for {k} classes"
        )));
    }
    let mut probs = vec![S::ZERO; n * k];
    let mut loss = S::ZERO;
    {
        let ld = logits.data();
        for r in 0..n {
            let row = &ld[r * k..(r + 1) * k];
            let mut mx = row[0];
            for &v in row.iter() {
                mx = mx.maximum(v);
            }
            let mut sum = S::ZERO;
            for &v in row.iter() {
                sum += (v - mx).exp();
            }
            let lse = mx + sum.ln();
            loss += lse - row[labels[r]];
            let prow = &mut probs[r * k..(r + 1) * k];
            for (p, &v) in prow.iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
    }
    let inv_n = S::from_f64(1.0 / n as f64);
    loss *= inv_n;
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let g = args.grad[0] * inv_n;
            let mut gl = args.parents[0].grad_buf();
            for r in 0..n {
                for j in 0..k {
                    let indicator = if j == labels[r] { S::ONE } else { S::ZERO };
                    gl[r * k + j] += g * (probs[r * k + j] - indicator);
                }
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_rows() {
        let x = Tensor::<f64>::zeros(&[3]).unwrap();
        let y = softmax_lastdim(&x).unwrap().to_vec();
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_saturated_no_overflow() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1000.0, 0.0]).unwrap();
        let y = softmax_lastdim(&x).unwrap().to_vec();
        assert!((y[0] - 1.0).abs() < 1e-12);
        assert!(y[1] < 1e-12);
    }

    #[test]
    fn batchnorm_train_normalizes_per_channel() {
        let n = 2;
        let (c, t, v) = (3, 4, 5);
        let data: Vec<f64> = (0..n * c * t * v).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        let x = Tensor::from_vec(&[n, c, t, v], data).unwrap();
        let gamma = Tensor::ones(&[c]).unwrap();
        let beta = Tensor::zeros(&[c]).unwrap();
        let rm = Tensor::zeros(&[c]).unwrap();
        let rv = Tensor::ones(&[c]).unwrap();
        let y = batchnorm2d(&x, &gamma, &beta, &rm, &rv, true).unwrap();
        let yd = y.to_vec();
        let span = t * v;
        let m = (n * span) as f64;
        for ch in 0..c {
            let mut mean = 0.0;
            let mut var = 0.0;
            for b in 0..n {
                for i in 0..span {
                    mean += yd[(b * c + ch) * span + i];
                }
            }
            mean /= m;
            for b in 0..n {
                for i in 0..span {
                    let d = yd[(b * c + ch) * span + i] - mean;
                    var += d * d;
                }
            }
            var /= m;
            assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
        }
        // Running stats moved toward the batch stats.
        assert!(rm.to_vec().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn batchnorm_affine_scale_shift() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![-1.5, -0.5, 0.5, 1.5]).unwrap();
        let gamma = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let beta = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let rm = Tensor::zeros(&[1]).unwrap();
        let rv = Tensor::ones(&[1]).unwrap();
        let y = batchnorm2d(&x, &gamma, &beta, &rm, &rv, true).unwrap();
        let yd = y.to_vec();
        let mean = yd.iter().sum::<f64>() / 4.0;
        let std = (yd.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0).sqrt();
        assert!((mean - 3.0).abs() < 1e-9);
        assert!((std - 2.0).abs() < 1e-4);
    }

    #[test]
    fn batchnorm_eval_matches_closed_form() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gamma = Tensor::from_vec(&[2], vec![1.5, -0.5]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.25, 1.0]).unwrap();
        let rm = Tensor::from_vec(&[2], vec![0.5, 2.0]).unwrap();
        let rv = Tensor::from_vec(&[2], vec![4.0, 0.25]).unwrap();
        let y = batchnorm2d(&x, &gamma, &beta, &rm, &rv, false).unwrap();
        let expected: Vec<f64> = vec![
            (1.0 - 0.5) / (4.0f64 + BN_EPSILON).sqrt() * 1.5 + 0.25,
            (2.0 - 0.5) / (4.0f64 + BN_EPSILON).sqrt() * 1.5 + 0.25,
            (3.0 - 2.0) / (0.25f64 + BN_EPSILON).sqrt() * -0.5 + 1.0,
            (4.0 - 2.0) / (0.25f64 + BN_EPSILON).sqrt() * -0.5 + 1.0,
        ];
        for (a, e) in y.to_vec().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
        // Eval mode must not touch the running buffers.
        assert_eq!(rm.to_vec(), vec![0.5, 2.0]);
        assert_eq!(rv.to_vec(), vec![4.0, 0.25]);
    }

    #[test]
    fn batchnorm_train_single_element_rejected() {
        let x = Tensor::<f64>::ones(&[1, 2, 1, 1]).unwrap();
        let gamma = Tensor::ones(&[2]).unwrap();
        let beta = Tensor::zeros(&[2]).unwrap();
        let rm = Tensor::zeros(&[2]).unwrap();
        let rv = Tensor::ones(&[2]).unwrap();
        assert!(batchnorm2d(&x, &gamma, &beta, &rm, &rv, true).is_err());
        assert!(batchnorm2d(&x, &gamma, &beta, &rm, &rv, false).is_ok());
    }

    #[test]
    fn cross_entropy_uniform_is_log_k() {
        let logits = Tensor::<f64>::zeros(&[2, 4]).unwrap();
        let loss = cross_entropy(&logits, &[0, 3]).unwrap().item().unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_correct_class() {
        let logits = Tensor::<f64>::from_vec(&[1, 3], vec![50.0, 0.0, 0.0]).unwrap();
        let loss = cross_entropy(&logits, &[0]).unwrap().item().unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let logits = Tensor::<f64>::zeros(&[1, 3]).unwrap();
        assert!(cross_entropy(&logits, &[3]).is_err());
    }
}
