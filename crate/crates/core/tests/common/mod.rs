//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vts_core::params::LAYER_NORM_EPS;
use vts_core::tensor::DropoutStream;
use vts_core::vit::Block;
use vts_core::{Result, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random magnitudes in `[lo, hi]` with random signs, so kinks at 0 are avoided.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..5)
}

type OpFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// One random instance of a differentiable op: inputs plus a scalar function
/// `sum(op(inputs) * R)` with a fixed random `R`.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: OpFn,
}

fn projected(out_shape: &[usize], rng: &mut ChaCha8Rng, op: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> OpFn {
    let r = normal(rng, out_shape, 1.0);
    Box::new(move |x| Ok(op(x)?.mul(&r)?.sum()))
}

pub const OP_NAMES: [&str; 32] = [
    "add", "sub", "mul", "div", "neg", "scale", "add_scalar", "abs", "square", "relu", "tanh", "exp", "ln",
    "sigmoid", "softplus", "sum", "mean", "sum_axis", "matmul", "matmul_batched", "reshape", "permute", "t",
    "concat", "narrow", "broadcast_to", "softmax", "log_softmax", "layer_norm", "gelu", "dropout",
    "cross_entropy",
];

/// Builds instance `seed` of op `name` with random shapes and values.
pub fn op_case(name: &'static str, seed: u64) -> OpCase {
    let mut g = rng(seed.wrapping_mul(1_000_003).wrapping_add(name.len() as u64));
    let (a, b, c) = (dim(&mut g), dim(&mut g), dim(&mut g));
    let n = |g: &mut ChaCha8Rng, s: &[usize]| normal(g, s, 1.0);
    let unary = |x: Tensor<f64>, g: &mut ChaCha8Rng, op: fn(&Tensor<f64>) -> Tensor<f64>| {
        let shape = x.shape().to_vec();
        (vec![x], projected(&shape, g, move |x| Ok(op(&x[0]))))
    };
    let (inputs, f): (Vec<Tensor<f64>>, OpFn) = match name {
        "add" => (vec![n(&mut g, &[a, b]), n(&mut g, &[b])], projected(&[a, b], &mut g, |x| x[0].add(&x[1]))),
        "sub" => (vec![n(&mut g, &[a, 1]), n(&mut g, &[a, b])], projected(&[a, b], &mut g, |x| x[0].sub(&x[1]))),
        "mul" => (vec![n(&mut g, &[c, a, b]), n(&mut g, &[a, 1])], projected(&[c, a, b], &mut g, |x| x[0].mul(&x[1]))),
        "div" => {
            let den = away_from_zero(&mut g, &[b], 0.5, 2.0);
            (vec![n(&mut g, &[a, b]), den], projected(&[a, b], &mut g, |x| x[0].div(&x[1])))
        }
        "neg" => unary(n(&mut g, &[a, b]), &mut g, |x| x.neg()),
        "scale" => unary(n(&mut g, &[a, b]), &mut g, |x| x.scale(-1.7)),
        "add_scalar" => unary(n(&mut g, &[a, b]), &mut g, |x| x.add_scalar(0.3)),
        "abs" => unary(away_from_zero(&mut g, &[a, b], 0.1, 2.0), &mut g, |x| x.abs()),
        "square" => unary(n(&mut g, &[a, b]), &mut g, |x| x.square()),
        "relu" => unary(away_from_zero(&mut g, &[a, b], 0.1, 2.0), &mut g, |x| x.relu()),
        "tanh" => unary(n(&mut g, &[a, b]), &mut g, |x| x.tanh()),
        "exp" => unary(n(&mut g, &[a, b]), &mut g, |x| x.exp()),
        "ln" => unary(uniform(&mut g, &[a, b], 0.5, 3.0), &mut g, |x| x.ln()),
        "sigmoid" => unary(n(&mut g, &[a, b]).scale(3.0), &mut g, |x| x.sigmoid()),
        "softplus" => unary(n(&mut g, &[a, b]).scale(3.0), &mut g, |x| x.softplus()),
        "sum" => (vec![n(&mut g, &[a, b])], projected(&[], &mut g, |x| Ok(x[0].sum()))),
        "mean" => (vec![n(&mut g, &[a, b, c])], projected(&[], &mut g, |x| Ok(x[0].mean()))),
        "sum_axis" => {
            let axis = g.random_range(0..3);
            let mut out = vec![a, b, c];
            out[axis] = 1;
            (vec![n(&mut g, &[a, b, c])], projected(&out, &mut g, move |x| x[0].sum_axis(axis)))
        }
        "matmul" => (vec![n(&mut g, &[a, b]), n(&mut g, &[b, c])], projected(&[a, c], &mut g, |x| x[0].matmul(&x[1]))),
        "matmul_batched" => {
            let d = dim(&mut g);
            (
                vec![n(&mut g, &[2, 1, a, b]), n(&mut g, &[d, b, c])],
                projected(&[2, d, a, c], &mut g, |x| x[0].matmul(&x[1])),
            )
        }
        "reshape" => (vec![n(&mut g, &[a, b, c])], projected(&[c, a * b], &mut g, move |x| x[0].reshape(&[c, a * b]))),
        "permute" => (vec![n(&mut g, &[a, b, c])], projected(&[c, a, b], &mut g, |x| x[0].permute(&[2, 0, 1]))),
        "t" => (vec![n(&mut g, &[c, a, b])], projected(&[c, b, a], &mut g, |x| x[0].t())),
        "concat" => (
            vec![n(&mut g, &[a, b, c]), n(&mut g, &[a, 2, c])],
            projected(&[a, b + 2, c], &mut g, |x| Tensor::concat(&[&x[0], &x[1]], 1)),
        ),
        "narrow" => {
            let len = g.random_range(1..=b);
            let start = g.random_range(0..=b - len);
            (vec![n(&mut g, &[a, b, c])], projected(&[a, len, c], &mut g, move |x| x[0].narrow(1, start, len)))
        }
        "broadcast_to" => (vec![n(&mut g, &[1, b])], projected(&[a, c, b], &mut g, move |x| x[0].broadcast_to(&[a, c, b]))),
        "softmax" => {
            let axis = g.random_range(0..2);
            (vec![n(&mut g, &[a + 1, b + 1]).scale(2.0)], projected(&[a + 1, b + 1], &mut g, move |x| x[0].softmax(axis)))
        }
        "log_softmax" => {
            let axis = g.random_range(0..2);
            (vec![n(&mut g, &[a + 1, b + 1]).scale(2.0)], projected(&[a + 1, b + 1], &mut g, move |x| x[0].log_softmax(axis)))
        }
        "layer_norm" => {
            let w = b + 1;
            (
                vec![n(&mut g, &[a, w]), n(&mut g, &[w]), n(&mut g, &[w])],
                projected(&[a, w], &mut g, |x| x[0].layer_norm(&x[1], &x[2], LAYER_NORM_EPS)),
            )
        }
        "gelu" => unary(n(&mut g, &[a, b]).scale(2.0), &mut g, |x| x.gelu()),
        "dropout" => {
            let stream = DropoutStream { seed, op_id: 3, step: 1 };
            (vec![n(&mut g, &[a, b, c])], projected(&[a, b, c], &mut g, move |x| x[0].dropout(0.3, true, stream)))
        }
        "cross_entropy" => {
            let k = b + 1;
            let mut t = vec![0.0; a * k];
            for row in 0..a {
                t[row * k + g.random_range(0..k)] = 1.0;
            }
            let targets = Tensor::from_vec(&[a, k], t).unwrap();
            (vec![n(&mut g, &[a, k]).scale(2.0)], Box::new(move |x: &[Tensor<f64>]| x[0].cross_entropy(&targets)))
        }
        other => panic!("no op case for {other}"),
    };
    OpCase { name, inputs, f }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter().zip(gamma.iter().zip(beta)).map(|(v, (g, b))| (v - mean) * inv * g + b).collect()
}

fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + o]).sum::<f64>())
        .collect()
}

/// Eval-mode transformer block evaluated with plain loops over one
/// sequence `h: [T][de]`.
pub fn block_oracle(block: &Block<f64>, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t = h.len();
    let de = h[0].len();
    let heads = block.attn.num_heads;
    let hs = de / heads;
    let p = |lin: &vts_core::params::Linear<f64>| (lin.weight.to_vec(), lin.bias.to_vec());
    let (wq, bq) = p(&block.attn.query);
    let (wk, bk) = p(&block.attn.key);
    let (wv, bv) = p(&block.attn.value);
    let (wa, ba) = p(&block.attn.out);
    let (w1, b1) = p(&block.mlp_in);
    let (w2, b2) = p(&block.mlp_out);
    let ln = |x: &[f64], l: &vts_core::params::LayerNorm<f64>| layer_norm_row(x, l.gamma.data(), l.beta.data());

    let normed: Vec<Vec<f64>> = h.iter().map(|r| ln(r, &block.ln1)).collect();
    let q: Vec<Vec<f64>> = normed.iter().map(|r| affine(r, &wq, &bq)).collect();
    let k: Vec<Vec<f64>> = normed.iter().map(|r| affine(r, &wk, &bk)).collect();
    let v: Vec<Vec<f64>> = normed.iter().map(|r| affine(r, &wv, &bv)).collect();
    let mut mixed = vec![vec![0.0; de]; t];
    for head in 0..heads {
        let cols = head * hs..(head + 1) * hs;
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hs as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                mixed[i][c] = (0..t).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    (0..t)
        .map(|i| {
            let fs = affine(&mixed[i], &wa, &ba);
            let res: Vec<f64> = h[i].iter().zip(&fs).map(|(a, b)| a + b).collect();
            let hidden: Vec<f64> = affine(&ln(&res, &block.ln2), &w1, &b1).into_iter().map(gelu).collect();
            let out = affine(&hidden, &w2, &b2);
            res.iter().zip(&out).map(|(a, b)| a + b).collect()
        })
        .collect()
}

/// Unpacked reference codes: one `bool` per bit.
pub struct NaiveCodes {
    pub codes: Vec<Vec<bool>>,
    pub labels: Vec<Vec<u32>>,
}

pub fn naive_hamming(a: &[bool], b: &[bool]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// Full ranking by `(distance, index)`.
pub fn naive_rank(query: &[bool], db: &NaiveCodes) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..db.codes.len()).collect();
    idx.sort_by_key(|&i| (naive_hamming(query, &db.codes[i]), i));
    idx
}

/// AP over the top `cutoff` in exact rational arithmetic, rounded once.
pub fn exact_ap(relevance: &[bool], cutoff: usize) -> f64 {
    let mut sum = BigRational::from_integer(BigInt::from(0));
    let mut hits = 0i64;
    for (r, &rel) in relevance.iter().take(cutoff).enumerate() {
        if rel {
            hits += 1;
            sum += BigRational::new(BigInt::from(hits), BigInt::from(r as i64 + 1));
        }
    }
    if hits == 0 {
        return 0.0;
    }
    (sum / BigRational::from_integer(BigInt::from(hits))).to_f64().unwrap()
}

pub fn shares_label(a: &[u32], b: &[u32]) -> bool {
    a.iter().any(|l| b.contains(l))
}

/// Per-query APs from the unpacked reference.
pub fn naive_aps(queries: &NaiveCodes, db: &NaiveCodes, cutoff: usize) -> Vec<f64> {
    (0..queries.codes.len())
        .map(|q| {
            let order = naive_rank(&queries.codes[q], db);
            let rel: Vec<bool> = order.iter().map(|&i| shares_label(&queries.labels[q], &db.labels[i])).collect();
            exact_ap(&rel, cutoff.min(rel.len()))
        })
        .collect()
}

pub fn random_codes(rng: &mut ChaCha8Rng, n: usize, bits: usize, classes: u32) -> NaiveCodes {
    NaiveCodes {
        codes: (0..n).map(|_| (0..bits).map(|_| rng.random()).collect()).collect(),
        labels: (0..n).map(|i| vec![i as u32 % classes]).collect(),
    }
}

pub fn to_code_set(c: &NaiveCodes, first_id: u64) -> vts_core::retrieval::BinaryCodeSet {
    let bits = c.codes[0].len();
    let mut set = vts_core::retrieval::BinaryCodeSet::new(bits);
    for (i, (code, labels)) in c.codes.iter().zip(&c.labels).enumerate() {
        set.push(first_id + i as u64, labels, &vts_core::retrieval::BinaryCode::from_bits(code.iter().copied()))
            .unwrap();
    }
    set
}

pub fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Overwrites every parameter (layer-norm gains included) with random values.
pub fn randomize<P: vts_core::params::Parameters<f64>>(params: &mut P, seed: u64, std: f64) {
    let mut g = rng(seed);
    params.visit_mut(&mut |_, t| {
        let shape = t.shape().to_vec();
        let data = (0..t.numel()).map(|_| std * g.sample::<f64, _>(StandardNormal)).collect();
        *t = Tensor::param(&shape, data).unwrap();
    });
}

pub fn rows(t: &Tensor<f64>, tokens: usize, width: usize) -> Vec<Vec<f64>> {
    t.data()[..tokens * width].chunks(width).map(|r| r.to_vec()).collect()
}

pub const LOSS_NAMES: [&str; 5] = ["dsh", "hashnet", "idhn", "csq", "dpn"];

/// Random multi-label sets over `classes`, each non-empty and sorted.
pub fn random_label_sets(g: &mut ChaCha8Rng, n: usize, classes: u32, multi: bool) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| {
            if !multi {
                return vec![g.random_range(0..classes)];
            }
            let mut l: Vec<u32> = (0..classes).filter(|_| g.random_bool(0.4)).collect();
            if l.is_empty() {
                l.push(g.random_range(0..classes));
            }
            l
        })
        .collect()
}

pub fn random_bits(g: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<bool>> {
    (0..n).map(|_| (0..k).map(|_| g.random()).collect()).collect()
}

/// A loss instance: `[B, K]` features and the loss as a scalar function of them.
pub fn loss_case(name: &'static str, seed: u64) -> OpCase {
    use vts_core::objectives as losses;
    use vts_core::objectives::SimilarityMatrix;
    let mut g = rng(seed ^ 0x105e);
    let b = g.random_range(2..6);
    let k = g.random_range(1..6);
    let h = normal(&mut g, &[b, k], 1.0);
    let f: OpFn = match name {
        "dsh" => {
            let s = SimilarityMatrix::from_labels(&random_label_sets(&mut g, b, 2, false));
            let margin = 2.0 * k as f64;
            Box::new(move |x| losses::loss_dsh(&x[0], &s, margin, 0.01))
        }
        "hashnet" => {
            let s = SimilarityMatrix::from_labels(&random_label_sets(&mut g, b, 2, false));
            Box::new(move |x| losses::loss_hashnet(&x[0], &s, 1.3))
        }
        "idhn" => {
            let s = SimilarityMatrix::with_soft(&random_label_sets(&mut g, b, 3, true));
            Box::new(move |x| losses::loss_idhn(&x[0], &s, 0.5, 0.1))
        }
        "csq" => {
            let c = random_bits(&mut g, b, k);
            Box::new(move |x| losses::loss_csq(&x[0], &c, 1e-4))
        }
        "dpn" => {
            let t = random_bits(&mut g, b, k);
            Box::new(move |x| losses::loss_dpn(&x[0], &t, 1.0))
        }
        other => panic!("no loss case for {other}"),
    };
    OpCase { name, inputs: vec![h], f }
}

/// Small encoder for exhaustive composite gradient checks (under 5k parameters).
pub fn micro_vit() -> vts_core::vit::VitConfig {
    vts_core::vit::VitConfig {
        image_size: 8,
        patch_size: 4,
        channels: 3,
        hidden_size: 8,
        mlp_dim: 16,
        num_layers: 2,
        num_heads: 2,
        dropout: 0.0,
    }
}

/// Every model parameter as a gradient-check input, with the DSH loss of the
/// model's hash features on a random batch as the scalar function.
pub fn composite_case(vit: vts_core::vit::VitConfig, bits: usize, hidden: usize, seed: u64) -> OpCase {
    use vts_core::head::{FeatureMode, HashHeadConfig};
    use vts_core::model::HashModel;
    use vts_core::params::Parameters;
    use vts_core::vit::Mode;

    let mut head = HashHeadConfig::new(bits, FeatureMode::All);
    head.hidden_dim = hidden;
    head.dropout = 0.0;
    let mut model = HashModel::<f64>::new(vit.clone(), head, seed).unwrap();
    randomize(&mut model, seed + 1, 0.2);
    let mut g = rng(seed + 2);
    let batch = 3;
    let patches = normal(&mut g, &[batch, vit.num_patches(), vit.patch_dim()], 1.0);
    let s = vts_core::objectives::SimilarityMatrix::from_labels(&[vec![0], vec![0], vec![1]]);
    let margin = 2.0 * bits as f64;
    let inputs: Vec<Tensor<f64>> = model.named_params().into_iter().map(|(_, t)| t).collect();
    let f: OpFn = Box::new(move |x| {
        let mut m = model.clone();
        let mut it = x.iter();
        m.visit_mut(&mut |_, t| *t = it.next().expect("one input per parameter").clone());
        let h = m.features(&patches, Mode::Eval)?;
        vts_core::objectives::loss_dsh(&h, &s, margin, 0.01)
    });
    OpCase { name: "composite", inputs, f }
}

/// Writes the six CIFAR-10 binary batch files with 1000 records per class
/// in each file; pixel bytes depend on the record index.
pub fn write_fake_cifar(dir: &std::path::Path) {
    use vts_core::data::{CIFAR_FILES, CIFAR_RECORD_BYTES};
    for (f, name) in CIFAR_FILES.iter().enumerate() {
        let mut bytes = vec![0u8; 10_000 * CIFAR_RECORD_BYTES];
        for (i, rec) in bytes.chunks_exact_mut(CIFAR_RECORD_BYTES).enumerate() {
            rec[0] = ((i + f) % 10) as u8;
            rec[1..].fill(((i * 31 + f) % 256) as u8);
        }
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

/// `n` items with 1x1 images, label `i % classes`, the first `train` of
/// them from the training source.
pub fn cheap_dataset(n: usize, classes: usize, train: usize) -> vts_core::data::Dataset {
    use vts_core::data::{Dataset, Item, Origin};
    let items = (0..n)
        .map(|i| Item {
            id: i as u64,
            image: vts_core::image::Image::filled(1, 1, 0.0),
            labels: vec![(i % classes) as u32],
            origin: if i < train { Origin::Train } else { Origin::Test },
        })
        .collect();
    Dataset::new(items, classes).unwrap()
}
