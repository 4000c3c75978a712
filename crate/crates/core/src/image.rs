//! Pixel-domain images: `H×W×C` intensities in `[0, 1]`.

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Pixel values produced by this crate lie on a grid of `2⁻²⁴`; on that
/// grid the latent codec is exactly invertible.
pub const GRID: f32 = 1.0 / 16_777_216.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Dimension(format!("empty image {height}×{width}×{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}×{width}×{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "image dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clips to `[0, 1]` and snaps every value onto the `2⁻²⁴` grid.
    pub fn clip_unit(&self) -> Image {
        self.map(|v| snap(v.clamp(0.0, 1.0)))
    }

    /// Channel-averaged single-channel copy.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let inv = 1.0 / self.channels as f32;
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f32>() * inv)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// `C×H×W` tensor view used by the networks.
    pub fn to_chw(&self) -> Tensor<f32> {
        let (h, w, c) = self.dims();
        Tensor::from_fn([c, h, w], |i| {
            let ch = i / (h * w);
            let p = i % (h * w);
            self.data[p * c + ch]
        })
    }

    pub fn from_chw(t: &Tensor<f32>) -> Result<Image> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::Dimension(format!("expected C×H×W tensor, got {:?}", t.shape())));
        };
        let d = t.data();
        Ok(Image::from_fn(h, w, c, |y, x, ch| d[(ch * h + y) * w + x]))
    }
}

/// Rounds onto the `2⁻²⁴` grid (exact for values in `[0, 1]`).
#[inline]
pub fn snap(v: f32) -> f32 {
    (v * 16_777_216.0).round() * GRID
}
