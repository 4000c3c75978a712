//! Procedural HR textures for the synthetic corpus.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::filters::gaussian_blur;
use crate::image::Image;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    BandNoise,
    Stripes,
    Ramp,
    Checker,
    Polygons,
}

const FAMILIES: [Family; 5] = [
    Family::BandNoise,
    Family::Stripes,
    Family::Ramp,
    Family::Checker,
    Family::Polygons,
];

/// Zero-mean, unit-variance component of one family (flat planes stay 0).
pub fn component(family: Family, size: usize, rng: &mut Rng) -> Vec<f64> {
    let n = size * size;
    let raw: Vec<f64> = match family {
        Family::BandNoise => {
            let white = Image::from_fn(size, size, 1, |_, _, _| rng.sample::<f64, _>(StandardNormal) as f32);
            let sigma = rng.random_range(0.4..3.0);
            gaussian_blur(&white, sigma).data().iter().map(|&v| v as f64).collect()
        }
        Family::Stripes => {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(0.04..0.45);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let (c, s) = (theta.cos(), theta.sin());
            (0..n)
                .map(|i| {
                    let (y, x) = ((i / size) as f64, (i % size) as f64);
                    (std::f64::consts::TAU * freq * (x * c + y * s) + phase).sin()
                })
                .collect()
        }
        Family::Ramp => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let (c, s) = (theta.cos(), theta.sin());
            (0..n)
                .map(|i| ((i % size) as f64 * c + (i / size) as f64 * s) / size as f64)
                .collect()
        }
        Family::Checker => {
            let cell = [1usize, 2, 3, 4, 6, 8][rng.random_range(0..6)];
            let (oy, ox) = (rng.random_range(0..cell), rng.random_range(0..cell));
            (0..n)
                .map(|i| {
                    let (y, x) = (i / size + oy, i % size + ox);
                    if (y / cell + x / cell) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect()
        }
        Family::Polygons => {
            let mut canvas = vec![0.0f64; n];
            for _ in 0..rng.random_range(2..6) {
                let tri: Vec<(f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.random_range(-0.2..1.2) * size as f64,
                            rng.random_range(-0.2..1.2) * size as f64,
                        )
                    })
                    .collect();
                let value = rng.random_range(-1.0..1.0);
                for (i, px) in canvas.iter_mut().enumerate() {
                    let p = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
                    if in_triangle(p, tri[0], tri[1], tri[2]) {
                        *px = value;
                    }
                }
            }
            canvas
        }
    };
    standardize(raw)
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0);
    let (d1, d2, d3) = (cross(a, b, p), cross(b, c, p), cross(c, a, p));
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

fn standardize(v: Vec<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-9 {
        return vec![0.0; v.len()];
    }
    v.into_iter().map(|x| (x - mean) / std).collect()
}

/// Mixture of one to three components with random contrast and brightness.
pub fn synth_texture(size: usize, rng: &mut Rng) -> Image {
    let parts = rng.random_range(1..=3);
    let mut acc = vec![0.0f64; size * size];
    for _ in 0..parts {
        let fam = FAMILIES[rng.random_range(0..FAMILIES.len())];
        let w = rng.random_range(0.3..1.0);
        for (a, c) in acc.iter_mut().zip(component(fam, size, rng)) {
            *a += w * c;
        }
    }
    let acc = standardize(acc);
    let contrast = rng.random_range(0.08f64.ln()..0.3f64.ln()).exp();
    let brightness = rng.random_range(0.45..0.55);
    let data = acc.iter().map(|v| (brightness + contrast * v) as f32).collect();
    Image::new(size, size, 1, data).expect("sized above").clip_unit()
}
