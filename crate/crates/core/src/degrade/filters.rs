use crate::image::Image;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// Reflect-101 index mapping (`-1 → 1`, `n → n−2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Sampled Gaussian kernel of radius `ceil(3σ)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(x: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return x.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = x.dims();
    let mut tmp = Image::filled(h, w, c, 0.0);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (i, &kv) in k.iter().enumerate() {
                    let sx = reflect(xx as isize + i as isize - r, w);
                    acc += kv * x.get(y, sx, ch) as f64;
                }
                tmp.set(y, xx, ch, acc as f32);
            }
        }
    }
    let mut out = Image::filled(h, w, c, 0.0);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (i, &kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + i as isize - r, h);
                    acc += kv * tmp.get(sy, xx, ch) as f64;
                }
                out.set(y, xx, ch, acc as f32);
            }
        }
    }
    out
}

/// Area-average downsampling or bilinear (half-pixel centred) upsampling.
pub fn resample(x: &Image, factor: usize, direction: Direction) -> Result<Image> {
    if factor == 0 {
        return Err(Error::Dimension("resample factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (h, w, c) = x.dims();
    match direction {
        Direction::Down => {
            if h % factor != 0 || w % factor != 0 {
                return Err(Error::Dimension(format!("{h}×{w} image not divisible by {factor}")));
            }
            let (ho, wo) = (h / factor, w / factor);
            let inv = 1.0 / (factor * factor) as f64;
            Ok(Image::from_fn(ho, wo, c, |y, xx, ch| {
                let mut acc = 0.0f64;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += x.get(y * factor + dy, xx * factor + dx, ch) as f64;
                    }
                }
                (acc * inv) as f32
            }))
        }
        Direction::Up => {
            let f = factor as f64;
            let coord = |o: usize, n: usize| {
                let s = ((o as f64 + 0.5) / f - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, s - i0 as f64)
            };
            Ok(Image::from_fn(h * factor, w * factor, c, |y, xx, ch| {
                let (y0, y1, wy) = coord(y, h);
                let (x0, x1, wx) = coord(xx, w);
                let top = x.get(y0, x0, ch) as f64 * (1.0 - wx) + x.get(y0, x1, ch) as f64 * wx;
                let bot = x.get(y1, x0, ch) as f64 * (1.0 - wx) + x.get(y1, x1, ch) as f64 * wx;
                (top * (1.0 - wy) + bot * wy) as f32
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = Image::from_fn(5, 6, 2, |y, x, c| (y * 7 + x * 3 + c) as f32 / 50.0);
        assert_eq!(gaussian_blur(&img, 0.0), img);
    }

    #[test]
    fn impulse_response_is_normalized_gaussian() {
        let mut img = Image::filled(15, 15, 1, 0.0);
        img.set(7, 7, 0, 1.0);
        let out = gaussian_blur(&img, 1.0);
        let sum: f64 = out.data().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((out.get(7, 7, 0) as f64 - k[3] * k[3]).abs() < 1e-7);
        assert!((out.get(6, 8, 0) as f64 - k[2] * k[4]).abs() < 1e-7);
    }

    #[test]
    fn constant_image_survives_blur() {
        let img = Image::filled(9, 9, 1, 0.37);
        for s in [0.2, 1.0, 3.0] {
            let out = gaussian_blur(&img, s);
            assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn resample_cases() {
        let img = Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f32);
        assert_eq!(resample(&img, 1, Direction::Down).unwrap(), img);
        assert_eq!(resample(&img, 1, Direction::Up).unwrap(), img);

        let blocks = Image::from_fn(4, 4, 1, |y, x, _| ((y / 2) * 2 + x / 2) as f32);
        let down = resample(&blocks, 2, Direction::Down).unwrap();
        assert_eq!(down.data(), &[0.0, 1.0, 2.0, 3.0]);

        let avg = resample(&img, 2, Direction::Down).unwrap();
        assert_eq!(avg.get(0, 0, 0), (0.0 + 1.0 + 4.0 + 5.0) / 4.0);

        let flat = Image::filled(8, 8, 1, 0.6);
        let round = resample(&resample(&flat, 4, Direction::Down).unwrap(), 4, Direction::Up).unwrap();
        assert!(round.data().iter().all(|&v| (v - 0.6).abs() < 1e-6));

        assert!(matches!(resample(&img, 3, Direction::Down), Err(Error::Dimension(_))));
    }
}
