use super::shape::{broadcast_shape, broadcast_strides, for_each_broadcast};
use super::{gemm, MatRef, Real, Tensor};
use crate::error::{Error, Result};

/// (out matrix, a matrix, b matrix) index triples over the broadcast batch.
fn batch_pairs(a_batch: &[usize], b_batch: &[usize], out_batch: &[usize]) -> Vec<(usize, usize, usize)> {
    let sa = broadcast_strides(a_batch, out_batch);
    let sb = broadcast_strides(b_batch, out_batch);
    let mut pairs = Vec::with_capacity(out_batch.iter().product());
    for_each_broadcast(out_batch, &sa, &sb, |o, i, j| pairs.push((o, i, j)));
    pairs
}

impl<T: Real> Tensor<T> {
    /// Batched matrix product `[.., p, q] x [.., q, r] -> [.., p, r]` with
    /// broadcasting over the leading dimensions.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::Shape(format!("matmul of {sa:?} by {sb:?}")));
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let r = sb[sb.len() - 1];
        let a_batch = sa[..sa.len() - 2].to_vec();
        let b_batch = sb[..sb.len() - 2].to_vec();

        if b_batch.is_empty() {
            // Fold every leading axis of `a` into its row dimension.
            let rows = self.numel() / q.max(1);
            let mut out = vec![T::zero(); rows * r];
            gemm(
                MatRef::new(self.data(), rows, q),
                MatRef::new(other.data(), q, r),
                &mut out,
                false,
            );
            let mut shape = sa.to_vec();
            *shape.last_mut().unwrap() = r;
            return Ok(Tensor::from_op("matmul", shape, out, &[self, other], move |ctx| {
                let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
                let g = MatRef::new(ctx.grad, rows, r);
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); rows * q];
                    gemm(g, MatRef::new(b.data(), q, r).t(), &mut ga, false);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); q * r];
                    gemm(MatRef::new(a.data(), rows, q).t(), g, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            }));
        }

        let out_batch = broadcast_shape(&a_batch, &b_batch)?;
        let pairs = batch_pairs(&a_batch, &b_batch, &out_batch);
        let (ma, mb, mc) = (p * q, q * r, p * r);
        let mut out = vec![T::zero(); pairs.len() * mc];
        let (ad, bd) = (self.data(), other.data());
        for &(o, i, j) in &pairs {
            gemm(
                MatRef::new(&ad[i * ma..(i + 1) * ma], p, q),
                MatRef::new(&bd[j * mb..(j + 1) * mb], q, r),
                &mut out[o * mc..(o + 1) * mc],
                false,
            );
        }
        let mut shape = out_batch;
        shape.extend([p, r]);
        Ok(Tensor::from_op("matmul", shape, out, &[self, other], move |ctx| {
            let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
            let (ad, bd) = (a.data(), b.data());
            let mut ga = a.requires_grad().then(|| vec![T::zero(); ad.len()]);
            let mut gb = b.requires_grad().then(|| vec![T::zero(); bd.len()]);
            for &(o, i, j) in &pairs {
                let g = MatRef::new(&ctx.grad[o * mc..(o + 1) * mc], p, r);
                if let Some(ga) = ga.as_mut() {
                    let bm = MatRef::new(&bd[j * mb..(j + 1) * mb], q, r);
                    gemm(g, bm.t(), &mut ga[i * ma..(i + 1) * ma], true);
                }
                if let Some(gb) = gb.as_mut() {
                    let am = MatRef::new(&ad[i * ma..(i + 1) * ma], p, q);
                    gemm(am.t(), g, &mut gb[j * mb..(j + 1) * mb], true);
                }
            }
            vec![ga, gb]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_product() {
        let a = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn row_by_column() {
        let a = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn batched_broadcast_matches_per_batch() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..6).map(|v| v as f64 - 1.5).collect();
        let ta = Tensor::from_vec(&[2, 2, 3], a.clone()).unwrap();
        let tb = Tensor::from_vec(&[1, 3, 2], b.clone()).unwrap();
        let c = ta.matmul(&tb).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        for batch in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let want: f64 = (0..3).map(|k| a[batch * 6 + i * 3 + k] * b[k * 2 + j]).sum();
                    assert_eq!(c.at(&[batch, i, j]).unwrap(), want);
                }
            }
        }
    }
}
