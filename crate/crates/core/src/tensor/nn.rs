//! Fused neural-network primitives with hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Identifies the random stream of one dropout site at one step.
///
/// Masks depend only on these three numbers, so a rerun (or a resumed run)
/// draws identical masks regardless of evaluation order elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutStream {
    pub seed: u64,
    pub op_id: u64,
    pub step: u64,
}

impl DropoutStream {
    fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.op_id.to_le_bytes());
        key[16..24].copy_from_slice(&self.step.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn ensure_finite<T: Real>(x: &[T], op: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{op} received non-finite input")))
    }
}

const GELU_COEF: f64 = 0.044715;

impl<T: Real> Tensor<T> {
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let (outer, len, inner) = split_axis(self.shape(), axis)?;
        let x = self.data();
        ensure_finite(x, "softmax")?;
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| x[at(a)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for a in 0..len {
                    let e = (x[at(a)] - max).exp();
                    y[at(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    y[at(a)] /= total;
                }
            }
        }
        Ok(Tensor::from_op("softmax", self.shape().to_vec(), y, &[self], move |ctx| {
            let (g, y) = (ctx.grad, ctx.out);
            let mut dx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    let dot: T = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                    for a in 0..len {
                        dx[at(a)] = y[at(a)] * (g[at(a)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let (outer, len, inner) = split_axis(self.shape(), axis)?;
        let x = self.data();
        ensure_finite(x, "log_softmax")?;
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| x[at(a)]).fold(T::neg_infinity(), T::max);
                let lse = max + (0..len).map(|a| (x[at(a)] - max).exp()).sum::<T>().ln();
                for a in 0..len {
                    y[at(a)] = x[at(a)] - lse;
                }
            }
        }
        Ok(Tensor::from_op("log_softmax", self.shape().to_vec(), y, &[self], move |ctx| {
            let (g, y) = (ctx.grad, ctx.out);
            let mut dx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    let total: T = (0..len).map(|a| g[at(a)]).sum();
                    for a in 0..len {
                        dx[at(a)] = g[at(a)] - y[at(a)].exp() * total;
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Normalizes each slice along the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let width = *self.shape().last().ok_or_else(|| Error::Shape("layer_norm on scalar".into()))?;
        if gamma.shape() != [width] || beta.shape() != [width] {
            return Err(Error::Shape(format!(
                "layer_norm over {:?} with gamma {:?}, beta {:?}",
                self.shape(),
                gamma.shape(),
                beta.shape()
            )));
        }
        let rows = self.numel() / width.max(1);
        let n = T::from_usize(width).unwrap();
        let stats = move |x: &[T]| -> (T, T) {
            let mean = x.iter().copied().sum::<T>() / n;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            (mean, (var + eps).sqrt().recip())
        };
        let (x, gm, bt) = (self.data(), gamma.data(), beta.data());
        let mut y = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * width..(r + 1) * width];
            let (mean, rstd) = stats(row);
            for c in 0..width {
                y[r * width + c] = (row[c] - mean) * rstd * gm[c] + bt[c];
            }
        }
        Ok(Tensor::from_op("layer_norm", self.shape().to_vec(), y, &[self, gamma, beta], move |ctx| {
            let (xp, gp, bp) = (&ctx.parents[0], &ctx.parents[1], &ctx.parents[2]);
            let (x, gm) = (xp.data(), gp.data());
            let mut dx = xp.requires_grad().then(|| vec![T::zero(); x.len()]);
            let mut dgamma = vec![T::zero(); width];
            let mut dbeta = vec![T::zero(); width];
            let mut xhat = vec![T::zero(); width];
            let mut dxhat = vec![T::zero(); width];
            for r in 0..rows {
                let row = &x[r * width..(r + 1) * width];
                let g = &ctx.grad[r * width..(r + 1) * width];
                let (mean, rstd) = stats(row);
                for c in 0..width {
                    xhat[c] = (row[c] - mean) * rstd;
                    dxhat[c] = g[c] * gm[c];
                    dgamma[c] += g[c] * xhat[c];
                    dbeta[c] += g[c];
                }
                if let Some(dx) = dx.as_mut() {
                    let m1 = dxhat.iter().copied().sum::<T>() / n;
                    let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for c in 0..width {
                        dx[r * width + c] = rstd * (dxhat[c] - m1 - xhat[c] * m2);
                    }
                }
            }
            vec![
                dx,
                gp.requires_grad().then_some(dgamma),
                bp.requires_grad().then_some(dbeta),
            ]
        }))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
        let k = T::lit(GELU_COEF);
        let half = T::lit(0.5);
        let three = T::lit(3.0);
        self.unary(
            "gelu",
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _| {
                let t = (c * (x + k * x * x * x)).tanh();
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
            },
        )
    }

    /// Inverted dropout. Identity (the same tensor) outside training or
    /// when `p == 0`.
    pub fn dropout(&self, p: f64, training: bool, stream: DropoutStream) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let scale = T::lit(1.0 / (1.0 - p));
        let mut rng = stream.rng();
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { scale })
            .collect();
        let y = self.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        Ok(Tensor::from_op("dropout", self.shape().to_vec(), y, &[self], move |ctx| {
            vec![Some(ctx.grad.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]
        }))
    }

    /// Mean cross-entropy of row-wise logits `[B, C]` against target
    /// distributions `[B, C]` (one-hot or normalized multi-hot).
    pub fn cross_entropy(&self, targets: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || self.shape() != targets.shape() {
            return Err(Error::Shape(format!(
                "cross_entropy logits {:?} vs targets {:?}",
                self.shape(),
                targets.shape()
            )));
        }
        let rows = T::from_usize(self.shape()[0].max(1)).unwrap();
        Ok(self.log_softmax(1)?.mul(targets)?.sum().scale(-rows.recip()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(step: u64) -> DropoutStream {
        DropoutStream { seed: 7, op_id: 1, step }
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let x = Tensor::<f32>::from_vec(&[4], vec![0.0; 4]).unwrap();
        assert_eq!(x.softmax(0).unwrap().data(), &[0.25; 4]);
        let y = Tensor::<f32>::from_vec(&[2], vec![1000.0, 0.0]).unwrap().softmax(0).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-6 && y.data()[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = Tensor::<f32>::from_vec(&[2], vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(x.softmax(0), Err(Error::Numeric(_))));
    }

    #[test]
    fn layer_norm_constant_and_normalized() {
        let g = Tensor::<f64>::full(&[3], 1.0);
        let b = Tensor::<f64>::zeros(&[3]);
        let c = Tensor::from_vec(&[3], vec![5.0; 3]).unwrap();
        assert_eq!(c.layer_norm(&g, &b, 1e-6).unwrap().data(), &[0.0; 3]);

        let g = Tensor::<f64>::full(&[2], 1.0);
        let b = Tensor::<f64>::zeros(&[2]);
        let x = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let y = x.layer_norm(&g, &b, 1e-6).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-5 && (y.data()[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn gelu_zero() {
        let x = Tensor::<f32>::from_vec(&[1], vec![0.0]).unwrap();
        assert_eq!(x.gelu().data(), &[0.0]);
    }

    #[test]
    fn dropout_eval_and_zero_p_are_identity() {
        let x = Tensor::<f32>::from_vec(&[5], vec![1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        let y = x.dropout(0.1, false, stream(0)).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(y.id(), x.id());
        assert_eq!(x.dropout(0.0, true, stream(0)).unwrap().data(), x.data());
        assert!(matches!(x.dropout(1.0, true, stream(0)), Err(Error::Config(_))));
        assert!(x.dropout(-0.1, true, stream(0)).is_err());
    }

    #[test]
    fn dropout_mask_is_reproducible() {
        let x = Tensor::<f32>::full(&[1000], 1.0);
        let a = x.dropout(0.5, true, stream(3)).unwrap();
        let b = x.dropout(0.5, true, stream(3)).unwrap();
        let c = x.dropout(0.5, true, stream(4)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        let kept = a.data().iter().filter(|&&v| v != 0.0).count();
        assert!((400..600).contains(&kept), "{kept}");
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn cross_entropy_of_confident_logits() {
        let logits = Tensor::<f64>::from_vec(&[1, 2], vec![50.0, 0.0]).unwrap();
        let t = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert!(logits.cross_entropy(&t).unwrap().item().unwrap() < 1e-15);
    }
}
