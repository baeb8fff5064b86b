//! Convolution kernels: depthwise + pointwise (separable) 2-D convolution
//! over the (frame, joint) axes, and a single-channel 1-D convolution along
//! the channel axis used by the channel-refinement gate.
//!
//! All convolutions are stride 1 with zero "same" padding, so the frame and
//! joint extents are preserved.

use super::{BackArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn require_odd(op: &str, k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::Shape(format!(
            "{op}: kernel size must be odd for same padding, got {k}"
        )));
    }
    Ok(())
}

/// Per-channel spatial convolution of `x[N, C, T, V]` with `kernel[C, kT, kV]`.
pub fn depthwise_conv2d<S: Scalar>(x: &Tensor<S>, kernel: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() != 4 || kernel.rank() != 3 {
        return Err(Error::Shape(format!(
            "depthwise_conv2d: expected x [N, C, T, V] and kernel [C, kT, kV], got {:?} and {:?}",
            x.shape(),
            kernel.shape()
        )));
    }
    let (n, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kc, kt, kv) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kc != c {
        return Err(Error::Shape(format!(
            "depthwise_conv2d: kernel channels {kc} do not match input channels {c}"
        )));
    }
    require_odd("depthwise_conv2d", kt)?;
    require_odd("depthwise_conv2d", kv)?;
    let (ct, cv) = (kt / 2, kv / 2);

    let mut out = vec![S::ZERO; n * c * t * v];
    {
        let xd = x.data();
        let kd = kernel.data();
        for b in 0..n {
            for ch in 0..c {
                let xbase = (b * c + ch) * t * v;
                let kbase = ch * kt * kv;
                for to in 0..t {
                    for vo in 0..v {
                        let mut acc = S::ZERO;
                        for a in 0..kt {
                            let ti = to + a;
                            if ti < ct || ti - ct >= t {
                                continue;
                            }
                            let ti = ti - ct;
                            for bb in 0..kv {
                                let vi = vo + bb;
                                if vi < cv || vi - cv >= v {
                                    continue;
                                }
                                let vi = vi - cv;
                                acc += xd[xbase + ti * v + vi] * kd[kbase + a * kv + bb];
                            }
                        }
                        out[xbase + to * v + vo] = acc;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, t, v],
        out,
        vec![x.clone(), kernel.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let xd = args.parents[0].to_vec();
            let kd = args.parents[1].to_vec();
            {
                let mut gx = args.parents[0].grad_buf();
                for b in 0..n {
                    for ch in 0..c {
                        let xbase = (b * c + ch) * t * v;
                        let kbase = ch * kt * kv;
                        for to in 0..t {
                            for vo in 0..v {
                                let g = args.grad[xbase + to * v + vo];
                                for a in 0..kt {
                                    let ti = to + a;
                                    if ti < ct || ti - ct >= t {
                                        continue;
                                    }
                                    let ti = ti - ct;
                                    for bb in 0..kv {
                                        let vi = vo + bb;
                                        if vi < cv || vi - cv >= v {
                                            continue;
                                        }
                                        let vi = vi - cv;
                                        gx[xbase + ti * v + vi] += g * kd[kbase + a * kv + bb];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            {
                let mut gk = args.parents[1].grad_buf();
                for b in 0..n {
                    for ch in 0..c {
                        let xbase = (b * c + ch) * t * v;
                        let kbase = ch * kt * kv;
                        for to in 0..t {
                            for vo in 0..v {
                                let g = args.grad[xbase + to * v + vo];
                                for a in 0..kt {
                                    let ti = to + a;
                                    if ti < ct || ti - ct >= t {
                                        continue;
                                    }
                                    let ti = ti - ct;
                                    for bb in 0..kv {
                                        let vi = vo + bb;
                                        if vi < cv || vi - cv >= v {
                                            continue;
                                        }
                                        let vi = vi - cv;
                                        gk[kbase + a * kv + bb] += g * xd[xbase + ti * v + vi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }),
    ))
}

/// 1x1 channel mix of `x[N, Cin, T, V]` with `weight[Cout, Cin]` and optional bias.
pub fn pointwise_conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    if x.rank() != 4 || weight.rank() != 2 {
        return Err(Error::Shape(format!(
            "pointwise_conv2d: expected x [N, Cin, T, V] and weight [Cout, Cin], got {:?} and {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    let (n, cin, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, wc) = (weight.shape()[0], weight.shape()[1]);
    if wc != cin {
        return Err(Error::Shape(format!(
            "pointwise_conv2d: weight input channels {wc} do not match x channels {cin}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::Shape(format!(
                "pointwise_conv2d: bias shape {:?} does not match Cout={cout}",
                b.shape()
            )));
        }
    }
    let span = t * v;
    let mut out = vec![S::ZERO; n * cout * span];
    {
        let xd = x.data();
        let wd = weight.data();
        for b in 0..n {
            for co in 0..cout {
                let obase = (b * cout + co) * span;
                for ci in 0..cin {
                    let w = wd[co * cin + ci];
                    let ibase = (b * cin + ci) * span;
                    for i in 0..span {
                        out[obase + i] += w * xd[ibase + i];
                    }
                }
            }
        }
        if let Some(bias) = bias {
            let bd = bias.data();
            for b in 0..n {
                for co in 0..cout {
                    let obase = (b * cout + co) * span;
                    for i in 0..span {
                        out[obase + i] += bd[co];
                    }
                }
            }
        }
    }
    let mut parents = vec![x.clone(), weight.clone()];
    let has_bias = bias.is_some();
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, cout, t, v],
        out,
        parents,
        Box::new(move |args: &BackArgs<'_, S>| {
            let xd = args.parents[0].to_vec();
            let wd = args.parents[1].to_vec();
            {
                let mut gx = args.parents[0].grad_buf();
                for b in 0..n {
                    for co in 0..cout {
                        let obase = (b * cout + co) * span;
                        for ci in 0..cin {
                            let w = wd[co * cin + ci];
                            let ibase = (b * cin + ci) * span;
                            for i in 0..span {
                                gx[ibase + i] += args.grad[obase + i] * w;
                            }
                        }
                    }
                }
            }
            {
                let mut gw = args.parents[1].grad_buf();
                for b in 0..n {
                    for co in 0..cout {
                        let obase = (b * cout + co) * span;
                        for ci in 0..cin {
                            let ibase = (b * cin + ci) * span;
                            let mut acc = S::ZERO;
                            for i in 0..span {
                                acc += args.grad[obase + i] * xd[ibase + i];
                            }
                            gw[co * cin + ci] += acc;
                        }
                    }
                }
            }
            if has_bias {
                let mut gb = args.parents[2].grad_buf();
                for b in 0..n {
                    for co in 0..cout {
                        let obase = (b * cout + co) * span;
                        let mut acc = S::ZERO;
                        for i in 0..span {
                            acc += args.grad[obase + i];
                        }
                        gb[co] += acc;
                    }
                }
            }
        }),
    ))
}

/// Depthwise spatial filter followed by a pointwise channel mix and bias add.
pub fn separable_conv2d<S: Scalar>(
    x: &Tensor<S>,
    depthwise_kernel: &Tensor<S>,
    pointwise_kernel: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let spatial = depthwise_conv2d(x, depthwise_kernel)?;
    pointwise_conv2d(&spatial, pointwise_kernel, Some(bias))
}

/// Single-channel 1-D convolution along the channel axis of `s[N, C]` with
/// `kernel[k]`, zero same padding, no bias.
pub fn conv1d_channels<S: Scalar>(s: &Tensor<S>, kernel: &Tensor<S>) -> Result<Tensor<S>> {
    if s.rank() != 2 || kernel.rank() != 1 {
        return Err(Error::Shape(format!(
            "conv1d_channels: expected s [N, C] and kernel [k], got {:?} and {:?}",
            s.shape(),
            kernel.shape()
        )));
    }
    let (n, c) = (s.shape()[0], s.shape()[1]);
    let k = kernel.shape()[0];
    require_odd("conv1d_channels", k)?;
    let half = k / 2;
    let mut out = vec![S::ZERO; n * c];
    {
        let sd = s.data();
        let kd = kernel.data();
        for b in 0..n {
            for ch in 0..c {
                let mut acc = S::ZERO;
                for a in 0..k {
                    let ci = ch + a;
                    if ci < half || ci - half >= c {
                        continue;
                    }
                    acc += sd[b * c + (ci - half)] * kd[a];
                }
                out[b * c + ch] = acc;
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c],
        out,
        vec![s.clone(), kernel.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let sd = args.parents[0].to_vec();
            let kd = args.parents[1].to_vec();
            {
                let mut gs = args.parents[0].grad_buf();
                for b in 0..n {
                    for ch in 0..c {
                        let g = args.grad[b * c + ch];
                        for a in 0..k {
                            let ci = ch + a;
                            if ci < half || ci - half >= c {
                                continue;
                            }
                            gs[b * c + (ci - half)] += g * kd[a];
                        }
                    }
                }
            }
            {
                let mut gk = args.parents[1].grad_buf();
                for b in 0..n {
                    for ch in 0..c {
                        let g = args.grad[b * c + ch];
                        for a in 0..k {
                            let ci = ch + a;
                            if ci < half || ci - half >= c {
                                continue;
                            }
                            gk[a] += g * sd[b * c + (ci - half)];
                        }
                    }
                }
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_kernel_counts_neighbors() {
        // Constant input with an all-ones 3x3 kernel: interior sums 9 taps,
        // corners only 4 (zero padding).
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let dw = Tensor::<f32>::ones(&[1, 3, 3]).unwrap();
        let pw = Tensor::<f32>::ones(&[1, 1]).unwrap();
        let b = Tensor::<f32>::zeros(&[1]).unwrap();
        let y = separable_conv2d(&x, &dw, &pw, &b).unwrap();
        let v = y.to_vec();
        assert_eq!(v[4], 9.0);
        assert_eq!(v[0], 4.0);
        assert_eq!(v[2], 4.0);
        assert_eq!(v[6], 4.0);
        assert_eq!(v[8], 4.0);
        assert_eq!(v[1], 6.0);
    }

    #[test]
    fn dirac_kernel_is_identity() {
        let x = Tensor::<f32>::from_vec(
            &[1, 2, 2, 3],
            vec![1.0, -2.0, 3.0, 4.0, -5.0, 6.0, 7.0, 8.0, -9.0, 10.0, 11.0, 12.0],
        )
        .unwrap();
        let mut dirac = vec![0.0f32; 2 * 3 * 3];
        dirac[4] = 1.0;
        dirac[9 + 4] = 1.0;
        let dw = Tensor::from_vec(&[2, 3, 3], dirac).unwrap();
        let pw = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        let y = separable_conv2d(&x, &dw, &pw, &b).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let dw = Tensor::<f32>::ones(&[1, 2, 3]).unwrap();
        assert!(depthwise_conv2d(&x, &dw).is_err());
    }

    #[test]
    fn conv1d_same_padding_edges() {
        let s = Tensor::<f32>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let k = Tensor::<f32>::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        // [0+1+2, 1+2+3, 2+3+0]
        assert_eq!(conv1d_channels(&s, &k).unwrap().to_vec(), vec![3.0, 6.0, 5.0]);
    }
}
