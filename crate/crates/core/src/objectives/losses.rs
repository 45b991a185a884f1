//! The six hashing objectives as differentiable functions of `H: [B, K]`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::SimilarityMatrix;

fn lit<T: Real>(v: f64) -> T {
    T::lit(v)
}

fn dims<T: Real>(h: &Tensor<T>) -> Result<(usize, usize)> {
    match *h.shape() {
        [b, k] if k > 0 => Ok((b, k)),
        _ => Err(Error::Shape(format!("hash features must be [B, K], got {:?}", h.shape()))),
    }
}

fn pairwise_dims<T: Real>(h: &Tensor<T>, s: &SimilarityMatrix) -> Result<(usize, usize)> {
    let (b, k) = dims(h)?;
    if b < 2 {
        return Err(Error::Contract(format!("pairwise loss needs at least 2 items, got {b}")));
    }
    if s.size != b {
        return Err(Error::Shape(format!("similarity is {0}x{0} but batch has {b} items", s.size)));
    }
    Ok((b, k))
}

/// Constant `[B, B]` tensor that is `f(i, j)` above the diagonal and 0 elsewhere.
fn upper<T: Real>(b: usize, f: impl Fn(usize, usize) -> f64) -> Result<Tensor<T>> {
    let mut v = vec![T::zero(); b * b];
    for i in 0..b {
        for j in i + 1..b {
            v[i * b + j] = lit(f(i, j));
        }
    }
    Tensor::from_vec(&[b, b], v)
}

fn gram<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.matmul(&x.t()?)
}

/// Contrastive pair loss with a binary-pull regularizer.
pub fn loss_dsh<T: Real>(h: &Tensor<T>, s: &SimilarityMatrix, margin: f64, alpha: f64) -> Result<Tensor<T>> {
    let (b, _) = pairwise_dims(h, s)?;
    let sq = h.square().sum_axis(1)?;
    let d = sq.add(&sq.t()?)?.sub(&gram(h)?.scale(lit(2.0)))?;
    let sim = upper::<T>(b, |i, j| 0.5 * s.get(i, j))?;
    let dis = upper::<T>(b, |i, j| 0.5 * (1.0 - s.get(i, j)))?;
    let pull = d.mul(&sim)?;
    let push = d.neg().add_scalar(lit(margin)).relu().mul(&dis)?;
    let pairs = pull.add(&push)?.sum().scale(lit(1.0 / s.num_pairs() as f64));
    let reg = h.abs().add_scalar(lit(-1.0)).abs().sum().scale(lit(alpha / b as f64));
    pairs.add(&reg)
}

/// `(1 + step / step_size)^0.5`.
pub fn hashnet_beta(step: u64, step_size: f64) -> f64 {
    (1.0 + step as f64 / step_size).sqrt()
}

/// Class-balanced pairwise cross-entropy on `tanh(beta H)` inner products.
pub fn loss_hashnet<T: Real>(h: &Tensor<T>, s: &SimilarityMatrix, beta: f64) -> Result<Tensor<T>> {
    let (b, _) = pairwise_dims(h, s)?;
    let u = h.scale(lit(beta)).tanh();
    let theta = gram(&u)?.scale(lit(0.5));
    let (similar, dissimilar) = s.pair_counts();
    let total = s.num_pairs() as f64;
    let weight = |sij: f64| {
        if similar == 0 || dissimilar == 0 {
            1.0
        } else if sij > 0.5 {
            total / similar as f64
        } else {
            total / dissimilar as f64
        }
    };
    let w = upper::<T>(b, |i, j| weight(s.get(i, j)))?;
    let ws = upper::<T>(b, |i, j| weight(s.get(i, j)) * s.get(i, j))?;
    let per_pair = theta.softplus().mul(&w)?.sub(&theta.mul(&ws)?)?;
    Ok(per_pair.sum().scale(lit(1.0 / total)))
}

/// Classification of straight-through sign codes plus a cubic pull toward them.
pub fn loss_greedyhash<T: Real>(h: &Tensor<T>, w_cls: &Tensor<T>, targets: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    let (b, k) = dims(h)?;
    let codes = h.sign_ste();
    let ce = codes.matmul(w_cls)?.cross_entropy(targets)?;
    let gap = h.sub(&codes.detach())?;
    let penalty = gap.abs().mul(&gap.square())?.sum().scale(lit(alpha / (b * k) as f64));
    ce.add(&penalty)
}

/// Cross-entropy on hard pairs, squared error on fractional soft pairs,
/// plus a quantization term.
pub fn loss_idhn<T: Real>(h: &Tensor<T>, s: &SimilarityMatrix, ce_scale: f64, lambda: f64) -> Result<Tensor<T>> {
    let (b, k) = pairwise_dims(h, s)?;
    let soft = s
        .soft
        .as_ref()
        .ok_or_else(|| Error::Contract("IDHN needs soft similarities".into()))?;
    if let Some(v) = soft.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!("soft similarity {v} outside [0, 1]")));
    }
    let sv = |i: usize, j: usize| soft[i * b + j];
    let is_hard = |v: f64| v == 0.0 || v == 1.0;
    let u = h.tanh();
    let ip = gram(&u)?;

    let ce_mask = upper::<T>(b, |i, j| f64::from(u8::from(is_hard(sv(i, j)))))?;
    let ce_target = upper::<T>(b, |i, j| if is_hard(sv(i, j)) { sv(i, j) } else { 0.0 })?;
    let theta = ip.scale(lit(ce_scale));
    let ce = theta.softplus().mul(&ce_mask)?.sub(&theta.mul(&ce_target)?)?;

    let mse_mask = upper::<T>(b, |i, j| f64::from(u8::from(!is_hard(sv(i, j)))))?;
    let soft_t = Tensor::from_vec(&[b, b], soft.iter().map(|&v| lit(v)).collect())?;
    let sim = ip.scale(lit(1.0 / k as f64)).add_scalar(T::one()).scale(lit(0.5));
    let mse = sim.sub(&soft_t)?.square().mul(&mse_mask)?;

    let pairs = ce.add(&mse)?.sum().scale(lit(1.0 / s.num_pairs() as f64));
    let signs = Tensor::from_vec(
        u.shape(),
        u.data().iter().map(|&v| if v > T::zero() { T::one() } else { -T::one() }).collect(),
    )?;
    let quant = u.sub(&signs)?.square().sum().scale(lit(lambda / (b * k) as f64));
    pairs.add(&quant)
}

/// Bitwise cross-entropy toward per-item center bits plus `lambda` times the
/// mean squared distance of `|tanh H|` from 1.
pub fn loss_csq<T: Real>(h: &Tensor<T>, center_bits: &[Vec<bool>], lambda: f64) -> Result<Tensor<T>> {
    let (b, k) = dims(h)?;
    let c = bit_tensor::<T>(center_bits, b, k, |bit| if bit { 1.0 } else { 0.0 })?;
    // (tanh(x) + 1) / 2 == sigmoid(2x)
    let z = h.scale(lit(2.0));
    let bce = z.softplus().sub(&z.mul(&c)?)?.mean();
    let quant = h.tanh().abs().add_scalar(lit(-1.0)).square().mean().scale(lit(lambda));
    bce.add(&quant)
}

/// Bitwise hinge pushing each feature past `margin` on its target side.
pub fn loss_dpn<T: Real>(h: &Tensor<T>, target_bits: &[Vec<bool>], margin: f64) -> Result<Tensor<T>> {
    let (b, k) = dims(h)?;
    let t = bit_tensor::<T>(target_bits, b, k, |bit| if bit { 1.0 } else { -1.0 })?;
    Ok(h.mul(&t)?.neg().add_scalar(lit(margin)).relu().mean())
}

fn bit_tensor<T: Real>(rows: &[Vec<bool>], b: usize, k: usize, f: impl Fn(bool) -> f64) -> Result<Tensor<T>> {
    if rows.len() != b || rows.iter().any(|r| r.len() != k) {
        return Err(Error::Shape(format!("need {b} target rows of {k} bits")));
    }
    Tensor::from_vec(&[b, k], rows.iter().flatten().map(|&bit| lit(f(bit))).collect())
}
