use crate::error::{Error, Result};

/// Square image, pixels stored row-major as (row, col, channel).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    size: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(size: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if size == 0 || channels == 0 || pixels.len() != size * size * channels {
            return Err(Error::Shape(format!(
                "image {size}x{size}x{channels} cannot hold {} values",
                pixels.len()
            )));
        }
        Ok(Self {
            size,
            channels,
            pixels,
        })
    }

    pub fn filled(size: usize, channels: usize, value: f32) -> Self {
        Self {
            size,
            channels,
            pixels: vec![value; size * size * channels],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.pixels[(row * self.size + col) * self.channels + channel]
    }

    pub fn map(&self, f: impl Fn(usize, f32) -> f32) -> Image {
        let c = self.channels;
        Image {
            size: self.size,
            channels: c,
            pixels: self.pixels.iter().enumerate().map(|(i, &v)| f(i % c, v)).collect(),
        }
    }
}

/// Splits `image` into non-overlapping `k x k` patches.
///
/// Patches are ordered row-major over the patch grid and each is flattened
/// row-major over (row, col, channel), giving `[N, c * k * k]` values.
pub fn patchify(image: &Image, k: usize) -> Result<Vec<f32>> {
    let (m, c) = (image.size, image.channels);
    if k == 0 || m % k != 0 {
        return Err(Error::Shape(format!(
            "image size {m} is not divisible by patch size {k}"
        )));
    }
    let grid = m / k;
    let mut out = Vec::with_capacity(m * m * c);
    for pr in 0..grid {
        for pc in 0..grid {
            for r in 0..k {
                let row = pr * k + r;
                let start = (row * m + pc * k) * c;
                out.extend_from_slice(&image.pixels[start..start + k * c]);
            }
        }
    }
    Ok(out)
}
