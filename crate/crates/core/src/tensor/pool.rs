//! Mean pooling: full reduction over named axes and adaptive binned pooling.

use super::{BackArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Arithmetic mean over the given axes; those axes are removed from the shape.
pub fn avg_pool_axes<S: Scalar>(x: &Tensor<S>, axes: &[usize]) -> Result<Tensor<S>> {
    if axes.is_empty() {
        return Err(Error::Shape("avg_pool_axes: empty axis set".to_string()));
    }
    let rank = x.rank();
    let mut reduce = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(Error::Shape(format!(
                "avg_pool_axes: axis {a} out of range for rank {rank}"
            )));
        }
        reduce[a] = true;
    }
    let in_shape = x.shape().to_vec();
    let out_shape: Vec<usize> = in_shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    let count: usize = in_shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| r)
        .map(|(&d, _)| d)
        .product();
    let out_strides = strides(&out_shape);
    let inv_count = S::from_f64(1.0 / count as f64);

    // Map each input coordinate to its output slot with an odometer over the
    // input multi-index.
    let out_len: usize = out_shape.iter().product();
    let mut sums = vec![S::ZERO; out_len];
    {
        let xd = x.data();
        let mut idx = vec![0usize; rank];
        for &v in xd.iter() {
            let mut oi = 0usize;
            let mut kept = 0usize;
            for (axis, &coord) in idx.iter().enumerate() {
                if !reduce[axis] {
                    oi += coord * out_strides[kept];
                    kept += 1;
                }
            }
            sums[oi] += v;
            for axis in (0..rank).rev() {
                idx[axis] += 1;
                if idx[axis] < in_shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }
    for s in sums.iter_mut() {
        *s *= inv_count;
    }
    let in_shape_back = in_shape.clone();
    let reduce_back = reduce.clone();
    Ok(Tensor::from_op(
        out_shape,
        sums,
        vec![x.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let rank = in_shape_back.len();
            let out_strides = {
                let out_shape: Vec<usize> = in_shape_back
                    .iter()
                    .zip(&reduce_back)
                    .filter(|(_, &r)| !r)
                    .map(|(&d, _)| d)
                    .collect();
                strides(&out_shape)
            };
            let mut gx = args.parents[0].grad_buf();
            let mut idx = vec![0usize; rank];
            for g in gx.iter_mut() {
                let mut oi = 0usize;
                let mut kept = 0usize;
                for (axis, &coord) in idx.iter().enumerate() {
                    if !reduce_back[axis] {
                        oi += coord * out_strides[kept];
                        kept += 1;
                    }
                }
                *g += args.grad[oi] * inv_count;
                for axis in (0..rank).rev() {
                    idx[axis] += 1;
                    if idx[axis] < in_shape_back[axis] {
                        break;
                    }
                    idx[axis] = 0;
                }
            }
        }),
    ))
}

/// Contiguous bin boundaries for adaptive pooling an axis of length `len`
/// down to `bins` slots: bin `i` covers `floor(i*len/bins)..floor((i+1)*len/bins)`.
/// When `len < bins` the floor partition leaves empty bins; those collapse to
/// the single element at `min(start, len-1)` so every bin mean is defined.
pub fn adaptive_bins(len: usize, bins: usize) -> Vec<(usize, usize)> {
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

/// Adaptive mean pooling of two axes down to `out_sizes` bins each; the
/// remaining axes are preserved.
pub fn adaptive_avg_pool<S: Scalar>(
    x: &Tensor<S>,
    axes: (usize, usize),
    out_sizes: (usize, usize),
) -> Result<Tensor<S>> {
    let rank = x.rank();
    let (a0, a1) = axes;
    if a0 >= rank || a1 >= rank {
        return Err(Error::Shape(format!(
            "adaptive_avg_pool: axes {axes:?} out of range for rank {rank}"
        )));
    }
    if a0 == a1 {
        return Err(Error::Shape(
            "adaptive_avg_pool: pooled axes must be distinct".to_string(),
        ));
    }
    if out_sizes.0 == 0 || out_sizes.1 == 0 {
        return Err(Error::Shape(
            "adaptive_avg_pool: output sizes must be positive".to_string(),
        ));
    }
    let in_shape = x.shape().to_vec();
    let (l0, l1) = (in_shape[a0], in_shape[a1]);
    let bins0 = adaptive_bins(l0, out_sizes.0);
    let bins1 = adaptive_bins(l1, out_sizes.1);

    let mut out_shape = in_shape.clone();
    out_shape[a0] = out_sizes.0;
    out_shape[a1] = out_sizes.1;
    let in_strides = strides(&in_shape);
    let out_strides = strides(&out_shape);
    let out_len: usize = out_shape.iter().product();

    // Iterate output coordinates; average each bin rectangle.
    let mut out = vec![S::ZERO; out_len];
    {
        let xd = x.data();
        let mut idx = vec![0usize; rank];
        for slot in out.iter_mut() {
            let (s0, e0) = bins0[idx[a0]];
            let (s1, e1) = bins1[idx[a1]];
            // Base offset of the non-pooled coordinates in the input.
            let mut base = 0usize;
            for (axis, &coord) in idx.iter().enumerate() {
                if axis != a0 && axis != a1 {
                    base += coord * in_strides[axis];
                }
            }
            let mut acc = S::ZERO;
            for i0 in s0..e0 {
                for i1 in s1..e1 {
                    acc += xd[base + i0 * in_strides[a0] + i1 * in_strides[a1]];
                }
            }
            let count = (e0 - s0) * (e1 - s1);
            *slot = acc * S::from_f64(1.0 / count as f64);
            for axis in (0..rank).rev() {
                idx[axis] += 1;
                if idx[axis] < out_shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }
    let out_shape_back = out_shape.clone();
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![x.clone()],
        Box::new(move |args: &BackArgs<'_, S>| {
            let mut gx = args.parents[0].grad_buf();
            let mut idx = vec![0usize; rank];
            for (oi, _) in args.grad.iter().enumerate() {
                let (s0, e0) = bins0[idx[a0]];
                let (s1, e1) = bins1[idx[a1]];
                let mut base = 0usize;
                for (axis, &coord) in idx.iter().enumerate() {
                    if axis != a0 && axis != a1 {
                        base += coord * in_strides[axis];
                    }
                }
                let count = (e0 - s0) * (e1 - s1);
                let share = args.grad[oi] * S::from_f64(1.0 / count as f64);
                for i0 in s0..e0 {
                    for i1 in s1..e1 {
                        gx[base + i0 * in_strides[a0] + i1 * in_strides[a1]] += share;
                    }
                }
                for axis in (0..rank).rev() {
                    idx[axis] += 1;
                    if idx[axis] < out_shape_back[axis] {
                        break;
                    }
                    idx[axis] = 0;
                }
            }
        }),
    ))
}
