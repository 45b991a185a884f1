//! Shape-only ops: reshape, permute, concatenate, slice, broadcast.

use super::shape::{broadcast_shape, broadcast_strides, for_each_broadcast, strides};
use super::{Real, Tensor};
use crate::error::{Error, Result};

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            &[self],
            |ctx| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!(
                "invalid permutation {perm:?} for shape {:?}",
                self.shape()
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let src = strides(self.shape());
        let gathered: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
        let zeros = vec![0; rank];
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for_each_broadcast(&out_shape, &gathered, &zeros, |o, i, _| out[o] = x[i]);
        let shape_for_grad = out_shape.clone();
        Ok(Tensor::from_op("permute", out_shape, out, &[self], move |ctx| {
            let mut g = vec![T::zero(); ctx.grad.len()];
            for_each_broadcast(&shape_for_grad, &gathered, &zeros, |o, i, _| g[i] = ctx.grad[o]);
            vec![Some(g)]
        }))
    }

    /// Swaps the last two axes.
    pub fn t(&self) -> Result<Tensor<T>> {
        let rank = self.rank();
        if rank < 2 {
            return Err(Error::Shape(format!("t() on shape {:?}", self.shape())));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::Shape(format!("concat axis {axis} for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Shape(format!(
                    "concat along {axis}: {:?} vs {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op("concat", shape, out, parts, move |ctx| {
            let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (g, &len) in grads.iter_mut().zip(&lens) {
                    g.extend_from_slice(&ctx.grad[off..off + len * inner]);
                    off += len * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(Error::Shape(format!(
                "narrow({axis}, {start}, {len}) on shape {:?}",
                self.shape()
            )));
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let full = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(Tensor::from_op("narrow", out_shape, out, &[self], move |ctx| {
            let mut g = vec![T::zero(); outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                g[base..base + len * inner]
                    .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        }))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if broadcast_shape(self.shape(), shape)? != shape {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} to {shape:?}",
                self.shape()
            )));
        }
        let s = broadcast_strides(self.shape(), shape);
        let zeros = vec![0; shape.len()];
        let x = self.data();
        let mut out = vec![T::zero(); shape.iter().product()];
        for_each_broadcast(shape, &s, &zeros, |o, i, _| out[o] = x[i]);
        let shape_for_grad = shape.to_vec();
        let n = self.numel();
        Ok(Tensor::from_op("broadcast_to", shape.to_vec(), out, &[self], move |ctx| {
            let mut g = vec![T::zero(); n];
            for_each_broadcast(&shape_for_grad, &s, &zeros, |o, i, _| g[i] += ctx.grad[o]);
            vec![Some(g)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn permute_matches_index_formula() {
        let x = seq(&[2, 3, 4]);
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(y.at(&[k, i, j]).unwrap(), x.at(&[i, j, k]).unwrap());
                }
            }
        }
    }

    #[test]
    fn concat_and_narrow_invert() {
        let a = seq(&[2, 1, 3]);
        let b = seq(&[2, 2, 3]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.narrow(1, 0, 1).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 1, 2).unwrap().data(), b.data());
    }

    #[test]
    fn broadcast_to_and_back() {
        let x = Tensor::<f64>::param(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.broadcast_to(&[4, 3]).unwrap();
        assert_eq!(&y.data()[9..], &[1.0, 2.0, 3.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0; 3]);
    }

    #[test]
    fn invalid_permutation() {
        assert!(seq(&[2, 3]).permute(&[0, 0]).is_err());
        assert!(seq(&[2, 3]).reshape(&[5]).is_err());
    }
}
