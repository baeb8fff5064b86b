//! Elementwise ops and reductions to a scalar.

use super::{BackArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn same_shape<S: Scalar>(op: &str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: operand shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("add", self, other)?;
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|args: &BackArgs<'_, S>| {
                args.parents[0].accumulate_grad(args.grad);
                args.parents[1].accumulate_grad(args.grad);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", self, other)?;
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|args: &BackArgs<'_, S>| {
                args.parents[0].accumulate_grad(args.grad);
                let mut gb = args.parents[1].grad_buf();
                for (g, &d) in gb.iter_mut().zip(args.grad) {
                    *g -= d;
                }
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", self, other)?;
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|args: &BackArgs<'_, S>| {
                {
                    let b = args.parents[1].to_vec();
                    let mut ga = args.parents[0].grad_buf();
                    for i in 0..args.grad.len() {
                        ga[i] += args.grad[i] * b[i];
                    }
                }
                {
                    let a = args.parents[0].to_vec();
                    let mut gb = args.parents[1].grad_buf();
                    for i in 0..args.grad.len() {
                        gb[i] += args.grad[i] * a[i];
                    }
                }
            }),
        ))
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|args: &BackArgs<'_, S>| {
                args.parents[0].accumulate_grad(args.grad);
            }),
        )
    }

    pub fn mul_scalar(&self, c: S) -> Tensor<S> {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackArgs<'_, S>| {
                let mut g = args.parents[0].grad_buf();
                for (gi, &d) in g.iter_mut().zip(args.grad) {
                    *gi += d * c;
                }
            }),
        )
    }

    /// Elementwise `max(0, x)`.
    pub fn relu(&self) -> Tensor<S> {
        let data = self
            .data()
            .iter()
            .map(|&x| if x > S::ZERO { x } else { S::ZERO })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|args: &BackArgs<'_, S>| {
                let x = args.parents[0].to_vec();
                let mut g = args.parents[0].grad_buf();
                for i in 0..args.grad.len() {
                    if x[i] > S::ZERO {
                        g[i] += args.grad[i];
                    }
                }
            }),
        )
    }

    /// Elementwise logistic function, computed without overflow on either tail.
    pub fn sigmoid(&self) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&x| stable_sigmoid(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|args: &BackArgs<'_, S>| {
                let mut g = args.parents[0].grad_buf();
                for i in 0..args.grad.len() {
                    let y = args.data[i];
                    g[i] += args.grad[i] * y * (S::ONE - y);
                }
            }),
        )
    }

    /// Inverted dropout: keeps each element with probability `1-p` and scales
    /// survivors by `1/(1-p)`. The mask is drawn element-by-element in data
    /// order from `rng`, so a caller holding an equally seeded stream can
    /// replay it. Callers apply this in train mode only.
    pub fn dropout<R: rand::Rng>(&self, p: f64, rng: &mut R) -> Result<Tensor<S>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0,1), got {p}"
            )));
        }
        if p == 0.0 {
            let data = self.to_vec();
            return Ok(Tensor::from_op(
                self.shape().to_vec(),
                data,
                vec![self.clone()],
                Box::new(|args: &BackArgs<'_, S>| {
                    args.parents[0].accumulate_grad(args.grad);
                }),
            ));
        }
        let scale = S::from_f64(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.elem_count())
            .map(|_| {
                if rng.random::<f64>() >= p {
                    scale
                } else {
                    S::ZERO
                }
            })
            .collect();
        let data = {
            let x = self.data();
            x.iter().zip(mask.iter()).map(|(&v, &m)| v * m).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackArgs<'_, S>| {
                let mut g = args.parents[0].grad_buf();
                for i in 0..args.grad.len() {
                    g[i] += args.grad[i] * mask[i];
                }
            }),
        ))
    }

    /// Sum of all elements as a rank-1 scalar tensor.
    pub fn sum_all(&self) -> Tensor<S> {
        let mut acc = S::ZERO;
        for &v in self.data().iter() {
            acc += v;
        }
        let n = self.elem_count();
        Tensor::from_op(
            vec![1],
            vec![acc],
            vec![self.clone()],
            Box::new(move |args: &BackArgs<'_, S>| {
                let g = args.grad[0];
                let mut gx = args.parents[0].grad_buf();
                for i in 0..n {
                    gx[i] += g;
                }
            }),
        )
    }

    /// Mean of all elements as a rank-1 scalar tensor.
    pub fn mean_all(&self) -> Tensor<S> {
        let n = self.elem_count();
        self.sum_all().mul_scalar(S::from_f64(1.0 / n as f64))
    }
}

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}
