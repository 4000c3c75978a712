use super::*;
use crate::numerics::gradcheck::check_params;
use crate::numerics::Tensor;
use crate::rng_from_seed;

fn tiny_student() -> StudentConfig {
    StudentConfig {
        denoiser: DenoiserConfig {
            latent_channels: 4,
            widths: [4, 8, 8],
            group_size: 4,
            temb_dim: 8,
            temb_hidden: 8,
            attention: true,
            token_dim: 6,
            steps: 1000,
        },
        prompt: PromptConfig {
            image_channels: 1,
            channels: [2, 3, 4],
            tokens_h: 1,
            tokens_w: 2,
            token_dim: 6,
        },
        input_skip: true,
    }
}

/// Replaces every tensor (including zero-initialized ones) with random
/// values so that every gradient path is live.
fn randomized(store: &ParamStore<f32>, std: f64, seed: u64) -> ParamStore<f64> {
    let mut rng = rng_from_seed(seed);
    store
        .iter()
        .map(|(k, v)| (k.to_string(), Tensor::randn(v.shape().to_vec(), std, &mut rng)))
        .collect()
}

fn probe<'a>(g: &mut Graph<'a, f64>, y: Var, seed: u64) -> Result<Var> {
    let dir = g.input(Tensor::randn(g.shape(y).to_vec(), 1.0, &mut rng_from_seed(seed)));
    let prod = g.mul(y, dir)?;
    g.sum(prod)
}

#[test]
fn student_gradients_match_finite_differences() {
    let cfg = tiny_student();
    let schedule = Schedule::default();
    for seed in 0..3 {
        let params = randomized(&cfg.init(&mut rng_from_seed(seed)).unwrap(), 0.5, seed);
        let z = Tensor::<f64>::randn([4, 8, 8], 1.0, &mut rng_from_seed(100 + seed));
        let lr = Tensor::<f64>::randn([1, 16, 16], 1.0, &mut rng_from_seed(200 + seed));
        let target = Tensor::<f64>::randn([4, 8, 8], 1.0, &mut rng_from_seed(300 + seed));
        let report = check_params(&params, 1e-4, Some((4, seed)), |p| {
            let mut g = Graph::new();
            let zv = g.input(z.clone());
            let lv = g.input(lr.clone());
            let out = cfg.forward(&mut g, Bind::trainable(p), &schedule, zv, lv, 500)?;
            let tv = g.input(target.clone());
            let loss = g.mse(out.z_hat, tv)?;
            Ok((g, loss))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{} at {}", report.max_rel_err, report.worst);
        assert!(report.checked > 100);
    }
}

#[test]
fn prompt_gradients_match_finite_differences() {
    let cfg = tiny_student().prompt;
    let params = randomized(&cfg.init("prompt", &mut rng_from_seed(1)).unwrap(), 0.7, 2);
    let lr = Tensor::<f64>::randn([1, 16, 16], 1.0, &mut rng_from_seed(3));
    let report = check_params(&params, 1e-5, None, |p| {
        let mut g = Graph::new();
        let x = g.input(lr.clone());
        let tok = cfg.forward(&mut g, Bind::trainable(p), "prompt", x)?;
        let loss = probe(&mut g, tok, 4)?;
        Ok((g, loss))
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{} at {}", report.max_rel_err, report.worst);
}

#[test]
fn mem_gradients_match_finite_differences() {
    let cfg = MemConfig {
        pool: 2,
        hidden: [5, 3],
        features: MemFeatures::LatentStats,
        ..MemConfig::default()
    };
    let params = randomized(&cfg.init("mem", &mut rng_from_seed(1)).unwrap(), 0.5, 5);
    let z = Tensor::<f64>::randn([4, 4, 4], 1.0, &mut rng_from_seed(6));
    let report = check_params(&params, 1e-5, None, |p| {
        let mut g = Graph::new();
        let f = g.input(cfg.latent_features(&z)?);
        let y = cfg.forward(&mut g, Bind::trainable(p), "mem", f)?;
        let target = g.input(Tensor::full([1, 1], 0.3));
        let loss = g.mse(y, target)?;
        Ok((g, loss))
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{} at {}", report.max_rel_err, report.worst);
}

fn run_student(cfg: &StudentConfig, params: &ParamStore<f32>, z: &Tensor<f32>, lr: &Tensor<f32>, t: usize) -> (Tensor<f32>, Tensor<f32>) {
    let schedule = Schedule::default();
    let mut g = Graph::new();
    let zv = g.input(z.clone());
    let lv = g.input(lr.clone());
    let out = cfg.forward(&mut g, Bind::frozen(params), &schedule, zv, lv, t).unwrap();
    (g.value(out.eps).clone(), g.value(out.z_hat).clone())
}

#[test]
fn output_shape_matches_latent() {
    let cfg = tiny_student();
    let params = cfg.init(&mut rng_from_seed(0)).unwrap();
    for (h, w) in [(4, 4), (8, 8), (8, 12), (16, 16)] {
        let z = Tensor::randn([4, h, w], 1.0, &mut rng_from_seed(1));
        let lr = Tensor::randn([1, 2 * h, 2 * w], 1.0, &mut rng_from_seed(2));
        let (eps, z_hat) = run_student(&cfg, &params, &z, &lr, 250);
        assert_eq!(eps.shape(), z.shape());
        assert_eq!(z_hat.shape(), z.shape());
    }
    let teacher = teacher_config(&cfg.denoiser);
    let tp = teacher.init(TEACHER_PREFIX, &mut rng_from_seed(0)).unwrap();
    let mut g = Graph::new();
    let z = g.input(Tensor::<f32>::randn([4, 8, 8], 1.0, &mut rng_from_seed(1)));
    let eps = teacher_forward(&teacher, &mut g, Bind::frozen(&tp), z, 10).unwrap();
    assert_eq!(g.shape(eps), &[4, 8, 8]);
}

#[test]
fn zero_network_restores_input_unchanged() {
    let cfg = tiny_student();
    let params = cfg.init(&mut rng_from_seed(0)).unwrap();
    let z = Tensor::randn([4, 8, 8], 1.0, &mut rng_from_seed(1));
    let lr = Tensor::randn([1, 16, 16], 1.0, &mut rng_from_seed(2));
    for t in [250, 750] {
        let (_, z_hat) = run_student(&cfg, &params, &z, &lr, t);
        assert!(z_hat.max_abs_diff(&z) < 1e-5);
    }
}

#[test]
fn output_depends_on_timestep() {
    let cfg = tiny_student();
    let params = randomized(&cfg.init(&mut rng_from_seed(0)).unwrap(), 0.3, 9).cast::<f32>();
    let z = Tensor::randn([4, 8, 8], 1.0, &mut rng_from_seed(1));
    let lr = Tensor::randn([1, 16, 16], 1.0, &mut rng_from_seed(2));
    let (a, _) = run_student(&cfg, &params, &z, &lr, 250);
    let (b, _) = run_student(&cfg, &params, &z, &lr, 750);
    assert!(a.max_abs_diff(&b) > 1e-4);
    let (a2, _) = run_student(&cfg, &params, &z, &lr, 250);
    assert_eq!(a, a2);
}

#[test]
fn prompt_tokens_are_deterministic_and_linear_at_zero() {
    let cfg = tiny_student().prompt;
    let mut params = cfg.init("prompt", &mut rng_from_seed(0)).unwrap();
    let bias = Tensor::randn([6], 1.0, &mut rng_from_seed(3));
    params.insert("prompt.proj.b", bias.clone());
    let tokens = |img: Tensor<f32>| {
        let mut g = Graph::new();
        let x = g.input(img);
        let t = cfg.forward(&mut g, Bind::frozen(&params), "prompt", x).unwrap();
        g.value(t).clone()
    };
    let img = Tensor::rand_uniform([1, 16, 16], 0.0, 1.0, &mut rng_from_seed(4));
    assert_eq!(tokens(img.clone()), tokens(img));
    let zero = tokens(Tensor::zeros([1, 16, 16]));
    assert_eq!(zero.shape(), &[2, 6]);
    for row in zero.data().chunks(6) {
        assert_eq!(row, bias.data());
    }
    let mut g = Graph::<f32>::new();
    let bad = g.input(Tensor::zeros([1, 10, 16]));
    assert!(matches!(cfg.forward(&mut g, Bind::frozen(&params), "prompt", bad), Err(Error::Dimension(_))));
}

#[test]
fn mem_zero_and_clamped() {
    let cfg = MemConfig::default();
    let zero = cfg.init_zero(MEM_PREFIX).unwrap();
    let mut rng = rng_from_seed(5);
    for _ in 0..5 {
        let z = Tensor::<f32>::randn([4, 16, 16], 3.0, &mut rng);
        assert_eq!(cfg.predict(&zero, MEM_PREFIX, cfg.latent_features(&z).unwrap()).unwrap(), 0.0);
    }
    let wild = randomized(&zero, 5.0, 6).cast::<f32>();
    for _ in 0..20 {
        let z = Tensor::<f32>::randn([4, 16, 16], 10.0, &mut rng);
        let v = cfg.predict(&wild, MEM_PREFIX, cfg.latent_features(&z).unwrap()).unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
    assert!(cfg.latent_features(&Tensor::<f32>::zeros([3, 16, 16])).is_err());
}

#[test]
fn latent_features_by_definition() {
    let cfg = MemConfig {
        pool: 2,
        latent_channels: 1,
        features: MemFeatures::LatentStatsGradients,
        ..MemConfig::default()
    };
    let z = Tensor::<f64>::new([1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    let f = cfg.latent_features(&z).unwrap();
    // mean, std, four pooled cells, |dx| mean, |dy| mean
    let expect = [4.0, 5f64.sqrt(), 1.0, 3.0, 5.0, 7.0, 1.0, 2.0];
    assert_eq!(f.shape(), &[1, 8]);
    for (a, b) in f.data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{:?}", f.data());
    }
}

#[test]
fn attention_contracts() {
    let cfg = tiny_student();
    let params = cfg.init(&mut rng_from_seed(0)).unwrap();
    let mut g = Graph::<f32>::new();
    let z = g.input(Tensor::zeros([4, 8, 8]));
    assert!(matches!(
        cfg.denoiser.forward(&mut g, Bind::frozen(&params), STUDENT_PREFIX, z, 5, None),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        cfg.denoiser.forward(&mut g, Bind::frozen(&params), STUDENT_PREFIX, z, 0, None),
        Err(Error::Contract(_))
    ));
    let odd = g.input(Tensor::zeros([4, 6, 8]));
    let tok = g.input(Tensor::zeros([2, 6]));
    assert!(matches!(
        cfg.denoiser.forward(&mut g, Bind::frozen(&params), STUDENT_PREFIX, odd, 5, Some(tok)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn spectrum_keeps_energy() {
    let mut rng = rng_from_seed(8);
    let plane: Vec<f64> = Tensor::<f64>::randn([12, 16], 1.0, &mut rng).data().to_vec();
    let mean = plane.iter().sum::<f64>() / plane.len() as f64;
    let energy: f64 = plane.iter().map(|v| (v - mean).powi(2)).sum();
    let total: f64 = mem::power_spectrum(&plane, 12, 16).iter().sum();
    assert!((energy - total).abs() < 1e-9 * energy);
}

#[test]
fn unfold_inverts_space_to_depth() {
    let img = crate::image::Image::from_fn(8, 8, 1, |y, x, _| (y * 8 + x) as f32);
    let codec = crate::codec::LatentCodec::identity(1, 2).unwrap();
    let z = codec.encode(&img).unwrap();
    let zd: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();
    let planes = mem::unfold(&zd, [4, 4, 4], 2);
    assert_eq!(planes.len(), 1);
    assert!(planes[0].iter().enumerate().all(|(i, &v)| v == i as f64));
}

#[test]
fn tone_lands_in_its_band() {
    let cfg = MemConfig::default();
    // 3 cycles across 16 pixels sits at 0.1875 cycles/pixel, band 2 of 8
    let img = crate::image::Image::from_fn(16, 16, 1, |_, x, _| {
        (0.5 + 0.3 * (std::f64::consts::TAU * 3.0 * x as f64 / 16.0).cos()) as f32
    });
    let codec = crate::codec::LatentCodec::identity(1, 2).unwrap();
    let z = codec.encode(&img).unwrap().cast::<f64>();
    let f = cfg.latent_features(&z).unwrap();
    let bands = &f.data()[8..];
    assert_eq!(bands.len(), 8);
    let floor = 1e-8f64.ln();
    for (b, &v) in bands.iter().enumerate() {
        if b == 2 {
            assert!(v > floor + 10.0, "{bands:?}");
        } else {
            assert!((v - floor).abs() < 1e-3, "{bands:?}");
        }
    }
    let shifted = z.map(|v| v + 0.25);
    let g = cfg.latent_features(&shifted).unwrap();
    for (a, b) in f.data()[8..].iter().zip(&g.data()[8..]) {
        assert!((a - b).abs() < 1e-9);
    }
}
