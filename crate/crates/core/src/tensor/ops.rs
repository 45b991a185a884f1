//! Elementwise arithmetic, activations and reductions.

use super::shape::{broadcast_shape, broadcast_strides, for_each_broadcast, strides};
use super::{Real, Tensor};
use crate::error::{Error, Result};

type Partial<T> = fn(T, T, T) -> T;

impl<T: Real> Tensor<T> {
    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: fn(T, T) -> T,
        da: Partial<T>,
        db: Partial<T>,
    ) -> Result<Tensor<T>> {
        let (a, b) = (self.data(), other.data());
        if self.shape() == other.shape() {
            let data = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
            return Ok(Tensor::from_op(
                op,
                self.shape().to_vec(),
                data,
                &[self, other],
                move |ctx| {
                    let (a, b) = (ctx.parents[0].data(), ctx.parents[1].data());
                    let ga = ctx.parents[0].requires_grad().then(|| {
                        (0..a.len()).map(|i| da(a[i], b[i], ctx.grad[i])).collect()
                    });
                    let gb = ctx.parents[1].requires_grad().then(|| {
                        (0..b.len()).map(|i| db(a[i], b[i], ctx.grad[i])).collect()
                    });
                    vec![ga, gb]
                },
            ));
        }
        let out_shape = broadcast_shape(self.shape(), other.shape())?;
        let sa = broadcast_strides(self.shape(), &out_shape);
        let sb = broadcast_strides(other.shape(), &out_shape);
        let mut data = vec![T::zero(); out_shape.iter().product()];
        for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| data[o] = f(a[i], b[j]));
        let shape_for_grad = out_shape.clone();
        Ok(Tensor::from_op(op, out_shape, data, &[self, other], move |ctx| {
            let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
            let (a, b) = (pa.data(), pb.data());
            let mut ga = pa.requires_grad().then(|| vec![T::zero(); a.len()]);
            let mut gb = pb.requires_grad().then(|| vec![T::zero(); b.len()]);
            for_each_broadcast(&shape_for_grad, &sa, &sb, |o, i, j| {
                let g = ctx.grad[o];
                if let Some(ga) = ga.as_mut() {
                    ga[i] += da(a[i], b[j], g);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += db(a[i], b[j], g);
                }
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |a, b| a * b, |_, b, g| g * b, |a, _, g| g * a)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |_, b, g| g / b,
            |a, b, g| -g * a / (b * b),
        )
    }

    pub(crate) fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(op, self.shape().to_vec(), data, &[self], move |ctx| {
            let x = ctx.parents[0].data();
            let g = (0..x.len())
                .map(|i| ctx.grad[i] * df(x[i], ctx.out[i]))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    /// Subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor<T> {
        self.unary("abs", |x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    /// Gradient 0 for `x <= 0`.
    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", |x| x.ln(), |x, _| x.recip())
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(
            "softplus",
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| sigmoid(x),
        )
    }

    /// `sign(x)` forward (`-1` at zero), identity backward.
    pub fn sign_ste(&self) -> Tensor<T> {
        self.unary(
            "sign_ste",
            |x| if x > T::zero() { T::one() } else { -T::one() },
            |_, _| T::one(),
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum::<T>();
        let n = self.numel();
        Tensor::from_op("sum", Vec::new(), vec![s], &[self], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel().max(1)).unwrap_or_else(T::one);
        self.sum().scale(n.recip())
    }

    /// Sum over one axis, keeping it with length 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(Error::Shape(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![T::zero(); outer * inner];
        let x = self.data();
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = 1;
        Ok(Tensor::from_op("sum_axis", out_shape, out, &[self], move |ctx| {
            let mut g = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    let base = (o * len + a) * inner;
                    g[base..base + inner].copy_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(g)]
        }))
    }

    /// Element `[i, j, ...]` of the tensor by multi-index.
    pub fn at(&self, index: &[usize]) -> Result<T> {
        if index.len() != self.rank() || index.iter().zip(self.shape()).any(|(i, d)| i >= d) {
            return Err(Error::Shape(format!(
                "index {index:?} out of bounds for shape {:?}",
                self.shape()
            )));
        }
        let off: usize = index.iter().zip(strides(self.shape())).map(|(i, s)| i * s).sum();
        Ok(self.data()[off])
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
