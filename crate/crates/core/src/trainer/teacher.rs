//! Teacher pretraining: ε-matching on clean HR latents at uniformly random
//! timesteps.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::{get_meta, put_meta};
use super::data::{Dataset, EpochSampler, Sample};
use super::{batch_gradients, Adam, LogRecord, Observer, TrainConfig};
use crate::codec::LatentCodec;
use crate::models::{teacher_config, teacher_forward, Bind, DenoiserConfig, TEACHER_PREFIX};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::schedule::{Schedule, Timestep};
use crate::{mix_seed, rng_from_seed, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    pub cfg: DenoiserConfig,
    pub params: ParamStore<f32>,
    pub codec: LatentCodec,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename = "teacher")]
struct Meta {
    denoiser: DenoiserConfig,
}

impl TeacherModel {
    pub fn to_checkpoint(&self) -> Result<ParamStore<f32>> {
        let mut s = self.params.clone();
        self.codec.write_params("codec.", &mut s);
        put_meta(&mut s, &Meta { denoiser: self.cfg.clone() })?;
        Ok(s)
    }

    pub fn from_checkpoint(store: &ParamStore<f32>) -> Result<Self> {
        let meta: Meta = get_meta(store).map_err(|e| Error::Config(format!("not a teacher checkpoint: {e}")))?;
        Ok(Self {
            cfg: meta.denoiser,
            params: super::with_prefixes(store, &[TEACHER_PREFIX]),
            codec: LatentCodec::read_params("codec.", store)?,
        })
    }

    /// ε̂ for a noisy latent, without recording gradients.
    pub fn predict(&self, z_t: &Tensor<f32>, t: Timestep) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let z = g.input(z_t.clone());
        let e = teacher_forward(&self.cfg, &mut g, Bind::frozen(&self.params), z, t)?;
        Ok(g.value(e).clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherReport {
    pub initial_val_mse: f64,
    pub final_val_mse: f64,
    pub final_loss: f64,
}

fn sample_loss(model: &TeacherModel, schedule: &Schedule, s: &Sample, seed: u64) -> Result<(f64, ParamStore<f32>)> {
    let mut rng = rng_from_seed(seed);
    let t = rng.random_range(1..=schedule.steps());
    let noisy = schedule.forward_diffuse(&s.z_h, t, &mut rng)?;
    let mut g = Graph::new();
    let z = g.input(noisy.z_t);
    let e = teacher_forward(&model.cfg, &mut g, Bind::trainable(&model.params), z, t)?;
    let target = g.input(noisy.eps);
    let loss = g.mse(e, target)?;
    let value = g.value(loss).item()? as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("teacher loss at corpus item {}", s.index)));
    }
    Ok((value, g.backward(loss)?.into_params()))
}

/// Mean ε-MSE over `samples` with fixed per-sample draws; `t = None`
/// draws the timestep uniformly.
pub fn teacher_val_mse(model: &TeacherModel, samples: &[Sample], t: Option<Timestep>, seed: u64) -> Result<f64> {
    let schedule = Schedule::default();
    if samples.is_empty() {
        return Err(Error::Config("no validation samples".into()));
    }
    let errs = crate::par::map_indexed(samples.len(), |i| -> Result<f64> {
        let mut rng = rng_from_seed(mix_seed(seed, i as u64));
        let t = t.unwrap_or_else(|| rng.random_range(1..=schedule.steps()));
        let noisy = schedule.forward_diffuse(&samples[i].z_h, t, &mut rng)?;
        let e = model.predict(&noisy.z_t, t)?;
        let n = e.numel() as f64;
        Ok(e.data()
            .iter()
            .zip(noisy.eps.data())
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            / n)
    });
    let errs = errs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

const VAL_SEED: u64 = 0x7EAC_4E55;

pub fn train_teacher(cfg: &TrainConfig, data: &Dataset, obs: &mut dyn Observer) -> Result<(TeacherModel, TeacherReport)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let schedule = Schedule::default();
    let mut rng = rng_from_seed(mix_seed(cfg.seed, 0x7EAC));
    let tcfg = teacher_config(&cfg.student.denoiser);
    let mut model = TeacherModel {
        params: tcfg.init(TEACHER_PREFIX, &mut rng)?,
        cfg: tcfg,
        codec: data.codec.clone(),
    };
    let val_set = if data.held_out.is_empty() { &data.train[..] } else { &data.held_out[..] };
    let val_set = &val_set[..val_set.len().min(cfg.val_samples.max(1))];
    let initial_val_mse = teacher_val_mse(&model, val_set, None, VAL_SEED)?;
    let mut opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut sampler = EpochSampler::new(data.train.len());
    let mut final_loss = f64::NAN;
    for step in 1..=cfg.teacher_steps {
        let idx = sampler.next_batch(cfg.batch_size, &mut rng);
        let seeds: Vec<u64> = idx.iter().map(|_| rng.random()).collect();
        let (losses, grads) = batch_gradients(idx.len(), |i| sample_loss(&model, &schedule, &data.train[idx[i]], seeds[i]))?;
        opt.step(&mut model.params, &grads)?;
        final_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        obs.on_step(&LogRecord {
            step,
            loss_total: final_loss,
            loss_eps: final_loss,
            loss_pix: 0.0,
            loss_das: 0.0,
            t_histogram: Default::default(),
        })?;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.teacher_steps {
            obs.on_checkpoint(step, &model.to_checkpoint()?)?;
        }
    }
    model.params.ensure_finite()?;
    let final_val_mse = teacher_val_mse(&model, val_set, None, VAL_SEED)?;
    Ok((
        model,
        TeacherReport {
            initial_val_mse,
            final_val_mse,
            final_loss,
        },
    ))
}
