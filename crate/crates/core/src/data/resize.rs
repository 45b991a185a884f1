use crate::image::Image;

/// Source coordinate and weight pairs for one axis, half-pixel centers.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resampling with pixel centers at half-integer coordinates
/// (`align_corners = false`) and edge clamping.
pub fn resize_bilinear(image: &Image, size: usize) -> Image {
    if image.size() == size {
        return image.clone();
    }
    let c = image.channels();
    let t = taps(image.size(), size);
    let mut out = Vec::with_capacity(size * size * c);
    for &(r0, r1, wr) in &t {
        for &(c0, c1, wc) in &t {
            for ch in 0..c {
                let top = image.get(r0, c0, ch) * (1.0 - wc) + image.get(r0, c1, ch) * wc;
                let bottom = image.get(r1, c0, ch) * (1.0 - wc) + image.get(r1, c1, ch) * wc;
                out.push(top * (1.0 - wr) + bottom * wr);
            }
        }
    }
    Image::new(size, c, out).expect("resized image shape")
}
