//! Image quality metrics and rank correlation.

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::{Error, Result};

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio for unit-range images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn ssim_weights() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn gray64(x: &Image) -> Vec<f64> {
    x.to_gray().data().iter().map(|&v| v as f64).collect()
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..k).map(|i| g[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| g[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM of the luminance channel over valid windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let (h, w, _) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let (x, y) = (gray64(a), gray64(b));
    let g = ssim_weights();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &g);
    let my = filter_valid(&y, h, w, &g);
    let sxx = filter_valid(&prod(&x, &x), h, w, &g);
    let syy = filter_valid(&prod(&y, &y), h, w, &g);
    let sxy = filter_valid(&prod(&x, &y), h, w, &g);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean absolute horizontal plus mean absolute vertical forward difference,
/// averaged over channels.
pub fn sharpness(a: &Image) -> f64 {
    let (h, w, c) = a.dims();
    if h < 2 || w < 2 {
        return 0.0;
    }
    let (mut dx, mut dy) = (0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = a.get(y, x, ch) as f64;
                if x + 1 < w {
                    dx += (a.get(y, x + 1, ch) as f64 - v).abs();
                }
                if y + 1 < h {
                    dy += (a.get(y + 1, x, ch) as f64 - v).abs();
                }
            }
        }
    }
    let n = (h * w * c) as f64;
    dx / n + dy / n
}

/// Average ranks (1-based), ties share their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant input has no ranking".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean with its sample count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub count: usize,
}

/// Per-image values and corpus means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub sharpness: Vec<f64>,
    pub psnr_mean: MetricSummary,
    pub ssim_mean: MetricSummary,
    pub sharpness_mean: MetricSummary,
}

fn summary(v: &[f64]) -> MetricSummary {
    MetricSummary {
        mean: if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 },
        count: v.len(),
    }
}

impl MetricReport {
    /// Scores `outputs[i]` against `targets[i]`; parallel over images,
    /// reduced in index order.
    pub fn evaluate(outputs: &[Image], targets: &[Image]) -> Result<Self> {
        if outputs.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} outputs for {} targets",
                outputs.len(),
                targets.len()
            )));
        }
        if outputs.is_empty() {
            return Err(Error::Degenerate("no images to evaluate".into()));
        }
        let rows = crate::par::map_indexed(outputs.len(), |i| -> Result<(f64, f64, f64)> {
            Ok((
                psnr(&outputs[i], &targets[i])?,
                ssim(&outputs[i], &targets[i])?,
                sharpness(&outputs[i]),
            ))
        });
        let (mut p, mut s, mut sh) = (Vec::new(), Vec::new(), Vec::new());
        for r in rows {
            let (a, b, c) = r?;
            p.push(a);
            s.push(b);
            sh.push(c);
        }
        Ok(Self {
            psnr_mean: summary(&p),
            ssim_mean: summary(&s),
            sharpness_mean: summary(&sh),
            psnr: p,
            ssim: s,
            sharpness: sh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{gaussian_blur, texture::synth_texture};
    use crate::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rng_from_seed(seed);
        Image::from_fn(h, w, 1, |_, _, _| rng.random::<f32>()).clip_unit()
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(8, 8, 1, 0.25);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(8, 8, 1, 0.35);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        let (x, y) = (random_image(16, 16, 1), random_image(16, 16, 2));
        let mut se = 0.0;
        for i in 0..256 {
            se += (x.data()[i] as f64 - y.data()[i] as f64).powi(2);
        }
        let oracle = -10.0 * (se / 256.0).log10();
        assert!((psnr(&x, &y).unwrap() - oracle).abs() < 1e-6);
        assert!((psnr(&x, &y).unwrap() - psnr(&y, &x).unwrap()).abs() < 1e-9);
        assert!(matches!(psnr(&x, &Image::filled(4, 4, 1, 0.0)), Err(Error::Dimension(_))));
    }

    /// Evaluates each window directly from its 121 weighted pixels.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let g = ssim_weights();
        let (h, w, _) = a.dims();
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = g[i] * g[j];
                        mx += wt * a.get(y0 + i, x0 + j, 0) as f64;
                        my += wt * b.get(y0 + i, x0 + j, 0) as f64;
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = g[i] * g[j];
                        let dx = a.get(y0 + i, x0 + j, 0) as f64 - mx;
                        let dy = b.get(y0 + i, x0 + j, 0) as f64 - my;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cxy += wt * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_cases() {
        let x = random_image(20, 17, 3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        let checker = Image::from_fn(16, 16, 1, |y, x, _| ((y + x) % 2) as f32);
        let inv = checker.map(|v| 1.0 - v);
        assert!(ssim(&checker, &inv).unwrap() < 0.0);
        let y = random_image(20, 17, 4);
        assert!((ssim(&x, &y).unwrap() - ssim_oracle(&x, &y)).abs() < 1e-6);
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-9);
        let small = Image::filled(10, 30, 1, 0.5);
        assert!(matches!(ssim(&small, &small), Err(Error::Dimension(_))));
    }

    #[test]
    fn sharpness_cases() {
        assert_eq!(sharpness(&Image::filled(9, 9, 1, 0.3)), 0.0);
        let n = 10;
        let step = Image::from_fn(n, n, 1, |_, x, _| if x < n / 2 { 0.0 } else { 1.0 });
        // One unit jump per row, n rows, averaged over n² pixels; vertical is 0.
        let expect = n as f64 / (n * n) as f64;
        assert!((sharpness(&step) - expect).abs() < 1e-12);
        let both = Image::from_fn(n, n, 1, |y, x, _| if x < n / 2 && y < n / 2 { 1.0 } else { 0.0 });
        assert!((sharpness(&both) - 2.0 * (n / 2) as f64 / (n * n) as f64).abs() < 1e-12);
        for s in 0..20 {
            let t = synth_texture(32, &mut rng_from_seed(s));
            let b = gaussian_blur(&t, 1.5);
            if sharpness(&t) > 0.0 {
                assert!(sharpness(&b) < sharpness(&t));
            }
        }
    }

    fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
        // Rank by counting, average over ties.
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    let less = v.iter().filter(|b| *b < a).count() as f64;
                    let eq = v.iter().filter(|b| *b == a).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let mean = (n + 1.0) / 2.0;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
        let vy: f64 = ry.iter().map(|a| (a - mean).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap() + 1.0).abs() < 1e-12);
        let mut rng = rng_from_seed(9);
        for _ in 0..20 {
            let x: Vec<f64> = (0..50).map(|_| (rng.random::<f64>() * 10.0).floor()).collect();
            let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
            assert!((spearman(&x, &y).unwrap() - spearman_oracle(&x, &y)).abs() < 1e-9);
        }
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(matches!(spearman(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(Error::Degenerate(_))));
        assert!(matches!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn spearman_monotone_invariance(v in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 5..40)) {
            let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            if let Ok(r) = spearman(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|a| a.powi(3) + 2.0 * a).collect();
                let ty: Vec<f64> = y.iter().map(|b| (b / 50.0).exp()).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn report_means() {
        let a = vec![random_image(16, 16, 1), random_image(16, 16, 2)];
        let r = MetricReport::evaluate(&a, &a).unwrap();
        assert_eq!(r.psnr_mean.count, 2);
        assert_eq!(r.psnr_mean.mean, PSNR_CAP);
        assert!((r.ssim_mean.mean - 1.0).abs() < 1e-9);
        assert!(MetricReport::evaluate(&[], &[]).is_err());
    }
}
