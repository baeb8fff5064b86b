//! Affine maps, outer products, channel slicing/broadcast ops, and the
//! joint-attention application kernel.

use super::{BackArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Affine map along the trailing axis: `y[..., o] = sum_i x[..., i] * w[o, i] + b[o]`.
pub fn linear<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    if weight.rank() != 2 {
        return Err(Error::Shape(format!(
            "linear: weight must be rank 2, got {:?}",
            weight.shape()
        )));
    }
    let (d_out, d_in) = (weight.shape()[0], weight.shape()[1]);
    let last = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("linear: input must have rank >= 1".to_string()))?;
    if last != d_in {
        return Err(Error::Shape(format!(
            "linear: input trailing dim {last} does not match weight input dim {d_in}"
        )));
    }
    if bias.shape() != [d_out] {
        return Err(Error::Shape(format!(
            "linear: bias shape {:?} does not match output dim {d_out}",
            bias.shape()
        )));
    }
    let rows = x.elem_count() / d_in;
    let mut out = vec![S::ZERO; rows * d_out];
    {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.data();
        for r in 0..rows {
            let xr = &xd[r * d_in..(r + 1) * d_in];
            for o in 0..d_out {
                let wrow = &wd[o * d_in..(o + 1) * d_in];
                let mut acc = bd[o];
                for i in 0..d_in {
                    acc += xr[i] * wrow[i];
                }
                out[r * d_out + o] = acc;
            }
        }
    }
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().expect("rank >= 1") = d_out;
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let xd = args.parents[0].to_vec();
            let wd = args.parents[1].to_vec();
            {
                let mut gx = args.parents[0].grad_buf();
                for r in 0..rows {
                    for o in 0..d_out {
                        let g = args.grad[r * d_out + o];
                        let wrow = &wd[o * d_in..(o + 1) * d_in];
                        let gxr = &mut gx[r * d_in..(r + 1) * d_in];
                        for i in 0..d_in {
                            gxr[i] += g * wrow[i];
                        }
                    }
                }
            }
            {
                let mut gw = args.parents[1].grad_buf();
                for r in 0..rows {
                    let xr = &xd[r * d_in..(r + 1) * d_in];
                    for o in 0..d_out {
                        let g = args.grad[r * d_out + o];
                        let gwrow = &mut gw[o * d_in..(o + 1) * d_in];
                        for i in 0..d_in {
                            gwrow[i] += g * xr[i];
                        }
                    }
                }
            }
            {
                let mut gb = args.parents[2].grad_buf();
                for r in 0..rows {
                    for o in 0..d_out {
                        gb[o] += args.grad[r * d_out + o];
                    }
                }
            }
        }),
    ))
}

/// Per-sample outer product: `out[n, i, j] = q[n, i] * k[n, j]`.
pub fn batched_outer<S: Scalar>(q: &Tensor<S>, k: &Tensor<S>) -> Result<Tensor<S>> {
    if q.rank() != 2 || k.rank() != 2 || q.shape() != k.shape() {
        return Err(Error::Shape(format!(
            "batched_outer: expected matching [N, V] inputs, got {:?} and {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let (n, v) = (q.shape()[0], q.shape()[1]);
    let mut out = vec![S::ZERO; n * v * v];
    {
        let qd = q.data();
        let kd = k.data();
        for b in 0..n {
            for i in 0..v {
                let qi = qd[b * v + i];
                let row = &mut out[b * v * v + i * v..b * v * v + (i + 1) * v];
                for j in 0..v {
                    row[j] = qi * kd[b * v + j];
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, v, v],
        out,
        vec![q.clone(), k.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let qd = args.parents[0].to_vec();
            let kd = args.parents[1].to_vec();
            {
                let mut gq = args.parents[0].grad_buf();
                for b in 0..n {
                    for i in 0..v {
                        let mut acc = S::ZERO;
                        for j in 0..v {
                            acc += args.grad[b * v * v + i * v + j] * kd[b * v + j];
                        }
                        gq[b * v + i] += acc;
                    }
                }
            }
            {
                let mut gk = args.parents[1].grad_buf();
                for b in 0..n {
                    for j in 0..v {
                        let mut acc = S::ZERO;
                        for i in 0..v {
                            acc += args.grad[b * v * v + i * v + j] * qd[b * v + i];
                        }
                        gk[b * v + j] += acc;
                    }
                }
            }
        }),
    ))
}

/// Concatenate two rank-2 tensors along the trailing axis, `a` first.
pub fn hconcat<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(Error::Shape(format!(
            "hconcat: expected [N, *] inputs with matching N, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.shape()[0];
    let (da, db) = (a.shape()[1], b.shape()[1]);
    let width = da + db;
    let mut out = vec![S::ZERO; n * width];
    {
        let ad = a.data();
        let bd = b.data();
        for r in 0..n {
            out[r * width..r * width + da].copy_from_slice(&ad[r * da..(r + 1) * da]);
            out[r * width + da..(r + 1) * width].copy_from_slice(&bd[r * db..(r + 1) * db]);
        }
    }
    Ok(Tensor::from_op(
        vec![n, width],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            {
                let mut ga = args.parents[0].grad_buf();
                for r in 0..n {
                    for i in 0..da {
                        ga[r * da + i] += args.grad[r * width + i];
                    }
                }
            }
            {
                let mut gb = args.parents[1].grad_buf();
                for r in 0..n {
                    for i in 0..db {
                        gb[r * db + i] += args.grad[r * width + da + i];
                    }
                }
            }
        }),
    ))
}

/// Contiguous channel slice of an `[N, C, T, V]` tensor: channels `from..to`.
pub fn slice_channels<S: Scalar>(x: &Tensor<S>, from: usize, to: usize) -> Result<Tensor<S>> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "slice_channels: expected [N, C, T, V], got {:?}",
            x.shape()
        )));
    }
    let (n, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if from >= to || to > c {
        return Err(Error::Shape(format!(
            "slice_channels: invalid channel range {from}..{to} for C={c}"
        )));
    }
    let span = t * v;
    let width = to - from;
    let mut out = vec![S::ZERO; n * width * span];
    {
        let xd = x.data();
        for b in 0..n {
            for (oc, ic) in (from..to).enumerate() {
                let src = (b * c + ic) * span;
                let dst = (b * width + oc) * span;
                out[dst..dst + span].copy_from_slice(&xd[src..src + span]);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, width, t, v],
        out,
        vec![x.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let mut gx = args.parents[0].grad_buf();
            for b in 0..n {
                for (oc, ic) in (from..to).enumerate() {
                    let src = (b * width + oc) * span;
                    let dst = (b * c + ic) * span;
                    for i in 0..span {
                        gx[dst + i] += args.grad[src + i];
                    }
                }
            }
        }),
    ))
}

/// Broadcast multiply of per-channel weights `w[N, C]` over `x[N, C, T, V]`.
pub fn mul_channels<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() != 4 || w.rank() != 2 || x.shape()[0] != w.shape()[0] || x.shape()[1] != w.shape()[1]
    {
        return Err(Error::Shape(format!(
            "mul_channels: expected x [N, C, T, V] and w [N, C], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (n, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let span = t * v;
    let mut out = vec![S::ZERO; n * c * span];
    {
        let xd = x.data();
        let wd = w.data();
        for b in 0..n {
            for ch in 0..c {
                let scale = wd[b * c + ch];
                let base = (b * c + ch) * span;
                for i in 0..span {
                    out[base + i] = xd[base + i] * scale;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, t, v],
        out,
        vec![x.clone(), w.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let xd = args.parents[0].to_vec();
            let wd = args.parents[1].to_vec();
            {
                let mut gx = args.parents[0].grad_buf();
                for b in 0..n {
                    for ch in 0..c {
                        let scale = wd[b * c + ch];
                        let base = (b * c + ch) * span;
                        for i in 0..span {
                            gx[base + i] += args.grad[base + i] * scale;
                        }
                    }
                }
            }
            {
                let mut gw = args.parents[1].grad_buf();
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * span;
                        let mut acc = S::ZERO;
                        for i in 0..span {
                            acc += args.grad[base + i] * xd[base + i];
                        }
                        gw[b * c + ch] += acc;
                    }
                }
            }
        }),
    ))
}

/// Add a per-(channel, joint) bias `e[C, V]` to `x[N, C, T, V]`, broadcast
/// over batch and frames.
pub fn add_joint_bias<S: Scalar>(x: &Tensor<S>, e: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() != 4 || e.rank() != 2 || x.shape()[1] != e.shape()[0] || x.shape()[3] != e.shape()[1]
    {
        return Err(Error::Shape(format!(
            "add_joint_bias: expected x [N, C, T, V] and e [C, V], got {:?} and {:?}",
            x.shape(),
            e.shape()
        )));
    }
    let (n, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = vec![S::ZERO; n * c * t * v];
    {
        let xd = x.data();
        let ed = e.data();
        for b in 0..n {
            for ch in 0..c {
                for f in 0..t {
                    let base = ((b * c + ch) * t + f) * v;
                    for j in 0..v {
                        out[base + j] = xd[base + j] + ed[ch * v + j];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, t, v],
        out,
        vec![x.clone(), e.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            args.parents[0].accumulate_grad(args.grad);
            let mut ge = args.parents[1].grad_buf();
            for b in 0..n {
                for ch in 0..c {
                    for f in 0..t {
                        let base = ((b * c + ch) * t + f) * v;
                        for j in 0..v {
                            ge[ch * v + j] += args.grad[base + j];
                        }
                    }
                }
            }
        }),
    ))
}

/// Apply a per-sample joint-mixing matrix to every frame:
/// `out[n, c, t, i] = sum_j f[n, c, t, j] * m[n, i, j]`.
pub fn apply_attention<S: Scalar>(f: &Tensor<S>, m: &Tensor<S>) -> Result<Tensor<S>> {
    if f.rank() != 4 || m.rank() != 3 {
        return Err(Error::Shape(format!(
            "apply_attention: expected f [N, C, T, V] and m [N, V, V], got {:?} and {:?}",
            f.shape(),
            m.shape()
        )));
    }
    let (n, c, t, v) = (f.shape()[0], f.shape()[1], f.shape()[2], f.shape()[3]);
    if m.shape() != [n, v, v] {
        return Err(Error::Shape(format!(
            "apply_attention: m shape {:?} does not match [N={n}, V={v}, V={v}]",
            m.shape()
        )));
    }
    let mut out = vec![S::ZERO; n * c * t * v];
    {
        let fd = f.data();
        let md = m.data();
        for b in 0..n {
            let mb = &md[b * v * v..(b + 1) * v * v];
            for ch in 0..c {
                for fr in 0..t {
                    let base = ((b * c + ch) * t + fr) * v;
                    let row = &fd[base..base + v];
                    for i in 0..v {
                        let mrow = &mb[i * v..(i + 1) * v];
                        let mut acc = S::ZERO;
                        for j in 0..v {
                            acc += row[j] * mrow[j];
                        }
                        out[base + i] = acc;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, t, v],
        out,
        vec![f.clone(), m.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let fd = args.parents[0].to_vec();
            let md = args.parents[1].to_vec();
            {
                let mut gf = args.parents[0].grad_buf();
                for b in 0..n {
                    let mb = &md[b * v * v..(b + 1) * v * v];
                    for ch in 0..c {
                        for fr in 0..t {
                            let base = ((b * c + ch) * t + fr) * v;
                            for i in 0..v {
                                let g = args.grad[base + i];
                                let mrow = &mb[i * v..(i + 1) * v];
                                let grow = &mut gf[base..base + v];
                                for j in 0..v {
                                    grow[j] += g * mrow[j];
                                }
                            }
                        }
                    }
                }
            }
            {
                let mut gm = args.parents[1].grad_buf();
                for b in 0..n {
                    let gmb = &mut gm[b * v * v..(b + 1) * v * v];
                    for ch in 0..c {
                        for fr in 0..t {
                            let base = ((b * c + ch) * t + fr) * v;
                            let row = &fd[base..base + v];
                            for i in 0..v {
                                let g = args.grad[base + i];
                                let gmrow = &mut gmb[i * v..(i + 1) * v];
                                for j in 0..v {
                                    gmrow[j] += g * row[j];
                                }
                            }
                        }
                    }
                }
            }
        }),
    ))
}

/// Scalar-gated blend of a per-sample map with a shared prior:
/// `out[n, i, j] = alpha * a[n, i, j] + (1 - alpha) * prior[i, j]`.
pub fn fuse_maps<S: Scalar>(
    a: &Tensor<S>,
    prior: &Tensor<S>,
    alpha: &Tensor<S>,
) -> Result<Tensor<S>> {
    if a.rank() != 3 {
        return Err(Error::Shape(format!(
            "fuse_maps: expected a [N, V, V], got {:?}",
            a.shape()
        )));
    }
    let (n, v) = (a.shape()[0], a.shape()[1]);
    if a.shape()[2] != v || prior.shape() != [v, v] {
        return Err(Error::Shape(format!(
            "fuse_maps: map {:?} and prior {:?} must both be V x V",
            a.shape(),
            prior.shape()
        )));
    }
    if alpha.elem_count() != 1 {
        return Err(Error::Shape(format!(
            "fuse_maps: alpha must be a scalar, got {:?}",
            alpha.shape()
        )));
    }
    let al = alpha.data()[0];
    let one_minus = S::ONE - al;
    let size = v * v;
    let mut out = vec![S::ZERO; n * size];
    {
        let ad = a.data();
        let pd = prior.data();
        for b in 0..n {
            for i in 0..size {
                out[b * size + i] = al * ad[b * size + i] + one_minus * pd[i];
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, v, v],
        out,
        vec![a.clone(), prior.clone(), alpha.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let ad = args.parents[0].to_vec();
            let pd = args.parents[1].to_vec();
            {
                let mut ga = args.parents[0].grad_buf();
                for i in 0..n * size {
                    ga[i] += args.grad[i] * al;
                }
            }
            {
                let mut gp = args.parents[1].grad_buf();
                for b in 0..n {
                    for i in 0..size {
                        gp[i] += args.grad[b * size + i] * one_minus;
                    }
                }
            }
            {
                let mut gal = args.parents[2].grad_buf();
                let mut acc = S::ZERO;
                for b in 0..n {
                    for i in 0..size {
                        acc += args.grad[b * size + i] * (ad[b * size + i] - pd[i]);
                    }
                }
                gal[0] += acc;
            }
        }),
    ))
}
