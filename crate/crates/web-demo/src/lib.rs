//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export wraps a plain function of the same name without the `js_`
//! prefix, so the logic is testable natively.

use vts_core::data::{synth_dataset, Normalization, SynthConfig};
use vts_core::objectives::HashCenters;
use vts_core::retrieval::{map_at_k, pr_curve, BinaryCode, BinaryCodeSet, MapOptions};
use vts_core::vit::{VitConfig, VitEncoder};
use wasm_bindgen::prelude::*;

/// Row-major `classes x classes` Hamming distances between hash centers.
pub fn center_distances(classes: usize, bits: usize, seed: u64) -> Result<Vec<u32>, String> {
    let centers = HashCenters::new(classes, bits, seed).map_err(|e| e.to_string())?;
    let code = |i| BinaryCode::from_bits(centers.center(i).iter().copied());
    let codes: Vec<BinaryCode> = (0..classes).map(code).collect();
    let mut out = Vec::with_capacity(classes * classes);
    for a in &codes {
        for b in &codes {
            out.push(vts_core::retrieval::hamming(a, b).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

/// Splitmix64 step, enough for demo noise.
fn next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn noisy_set(centers: &HashCenters, per_class: usize, flip: f64, first_id: u64, state: &mut u64) -> Result<BinaryCodeSet, String> {
    let mut set = BinaryCodeSet::new(centers.bits());
    for i in 0..centers.len() * per_class {
        let class = i % centers.len();
        let bits = centers.center(class).iter().map(|&b| {
            let u = (next(state) >> 11) as f64 / (1u64 << 53) as f64;
            b ^ (u < flip)
        });
        set.push(first_id + i as u64, &[class as u32], &BinaryCode::from_bits(bits))
            .map_err(|e| e.to_string())?;
    }
    Ok(set)
}

/// Hash-center codes with each bit flipped with probability `flip`; returns
/// mAP over the whole database followed by the 21 interpolated precisions.
pub fn noisy_pr(classes: usize, bits: usize, per_class: usize, flip: f64, seed: u64) -> Result<Vec<f64>, String> {
    if !(0.0..=1.0).contains(&flip) {
        return Err(format!("flip probability {flip} outside [0, 1]"));
    }
    if per_class == 0 {
        return Err("need at least one item per class".into());
    }
    let centers = HashCenters::new(classes, bits, seed).map_err(|e| e.to_string())?;
    let mut state = seed;
    let queries = noisy_set(&centers, per_class.div_ceil(4), flip, 0, &mut state)?;
    let db = noisy_set(&centers, per_class, flip, 1 << 32, &mut state)?;
    let map = map_at_k(&queries, &db, MapOptions::at(db.len())).map_err(|e| e.to_string())?.map;
    let curve = pr_curve(&queries, &db, false).map_err(|e| e.to_string())?;
    Ok(std::iter::once(map).chain(curve.points.iter().map(|&(_, p)| p)).collect())
}

/// Class-token attention over the patch grid for one block and head of a
/// freshly initialized tiny ViT on a synthetic image. `head` equal to the
/// head count averages all heads. Row-major `grid x grid`.
pub fn attention_map(class: usize, block: usize, head: usize, seed: u64) -> Result<Vec<f32>, String> {
    let cfg = VitConfig::tiny();
    let (layers, heads) = (cfg.num_layers, cfg.num_heads);
    if block >= layers || head > heads {
        return Err(format!("block must be < {layers} and head <= {heads}"));
    }
    let data = synth_dataset(&SynthConfig { per_class: 1, seed, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    let item = data.items.get(class).ok_or_else(|| format!("class must be < {}", data.num_classes))?;
    let image = Normalization::default().prepare(&item.image, cfg.image_size);
    let encoder = VitEncoder::<f32>::new(cfg, seed).map_err(|e| e.to_string())?;
    let out = encoder.encode(&image).map_err(|e| e.to_string())?;
    let t = encoder.config.num_tokens();
    let w = out.attention[block].data();
    let picked: Vec<usize> = if head == heads { (0..heads).collect() } else { vec![head] };
    Ok((1..t)
        .map(|k| picked.iter().map(|&h| w[h * t * t + k]).sum::<f32>() / picked.len() as f32)
        .collect())
}

#[wasm_bindgen]
pub fn js_center_distances(classes: usize, bits: usize, seed: u32) -> Result<Vec<u32>, JsError> {
    center_distances(classes, bits, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn js_noisy_pr(classes: usize, bits: usize, per_class: usize, flip: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    noisy_pr(classes, bits, per_class, flip, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn js_attention_map(class: usize, block: usize, head: usize, seed: u32) -> Result<Vec<f32>, JsError> {
    attention_map(class, block, head, seed.into()).map_err(|e| JsError::new(&e))
}
