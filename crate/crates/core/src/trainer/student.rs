//! Student training: metric-bucketed one-step restoration with the
//! degradation-aware distillation regularizer.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::{get_meta, put_meta};
use super::data::{Dataset, EpochSampler, Sample};
use super::teacher::TeacherModel;
use super::{batch_gradients, Adam, LogRecord, Observer, TrainConfig};
use crate::codec::{Latent, LatentCodec};
use crate::grouping::{assign_timestep, das_sample, latent_metric, GroupingConfig, MetricKind, MetricValue};
use crate::image::Image;
use crate::models::{teacher_forward, Bind, StudentConfig, PROMPT_PREFIX, STUDENT_PREFIX};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::quality::psnr;
use crate::schedule::{Schedule, Timestep};
use crate::{mix_seed, rng_from_seed, Error, Result, Rng};

/// Trained student with everything inference needs.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    pub cfg: StudentConfig,
    pub params: ParamStore<f32>,
    pub codec: LatentCodec,
    /// Bucketing with the bounds fitted on the training corpus.
    pub grouping: GroupingConfig,
    pub metric: MetricKind,
    pub noise_injection: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename = "student")]
struct Meta {
    student: StudentConfig,
    grouping: GroupingConfig,
    metric: MetricKind,
    noise_injection: bool,
}

impl StudentModel {
    pub fn to_checkpoint(&self) -> Result<ParamStore<f32>> {
        let mut s = self.params.clone();
        self.codec.write_params("codec.", &mut s);
        put_meta(
            &mut s,
            &Meta {
                student: self.cfg.clone(),
                grouping: self.grouping,
                metric: self.metric,
                noise_injection: self.noise_injection,
            },
        )?;
        Ok(s)
    }

    pub fn from_checkpoint(store: &ParamStore<f32>) -> Result<Self> {
        let meta: Meta = get_meta(store).map_err(|e| Error::Config(format!("not a student checkpoint: {e}")))?;
        meta.student.validate()?;
        Ok(Self {
            cfg: meta.student,
            params: super::with_prefixes(store, &[STUDENT_PREFIX, PROMPT_PREFIX]),
            codec: LatentCodec::read_params("codec.", store)?,
            grouping: meta.grouping,
            metric: meta.metric,
            noise_injection: meta.noise_injection,
        })
    }

    /// Oriented metric of an LR/HR latent pair.
    pub fn metric_of(&self, z_l: &Latent, z_h: &Latent) -> Result<MetricValue> {
        Ok(self.metric.orient(latent_metric(z_l, z_h, self.metric)?))
    }

    /// Model input at `t`: the LR latent, or its forward-diffused version
    /// in noise-injection mode.
    fn model_input(&self, schedule: &Schedule, z_l: &Latent, t: Timestep, rng: &mut Rng) -> Result<Latent> {
        if self.noise_injection {
            Ok(schedule.forward_diffuse(z_l, t, rng)?.z_t)
        } else {
            Ok(z_l.clone())
        }
    }

    /// One-step restoration `ẑ_H` of an LR latent at timestep `t`.
    pub fn restore(&self, z_l: &Latent, lr: &Tensor<f32>, t: Timestep, seed: u64) -> Result<Latent> {
        let schedule = Schedule::default();
        let z_in = self.model_input(&schedule, z_l, t, &mut rng_from_seed(seed))?;
        let mut g = Graph::new();
        let zv = g.input(z_in);
        let lv = g.input(lr.clone());
        let out = self.cfg.forward(&mut g, Bind::frozen(&self.params), &schedule, zv, lv, t)?;
        let z = g.value(out.z_hat).clone();
        z.ensure_finite("restored latent")?;
        Ok(z)
    }

    /// Mean-pooled bottleneck activations at timestep `t` (one row).
    pub fn bottleneck(&self, z_l: &Latent, lr: &Tensor<f32>, t: Timestep, seed: u64) -> Result<Tensor<f32>> {
        let schedule = Schedule::default();
        let z_in = self.model_input(&schedule, z_l, t, &mut rng_from_seed(seed))?;
        let mut g = Graph::new();
        let zv = g.input(z_in);
        let lv = g.input(lr.clone());
        let out = self.cfg.forward(&mut g, Bind::frozen(&self.params), &schedule, zv, lv, t)?;
        let shape = g.shape(out.bottleneck).to_vec();
        let pooled = g.avg_pool(out.bottleneck, shape[1], shape[2])?;
        let row = g.reshape(pooled, &[1, shape[0]])?;
        Ok(g.value(row).clone())
    }
}

/// Loss terms of one training item.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub index: usize,
    pub t: Timestep,
    pub total: f64,
    pub eps: f64,
    pub pix: f64,
    pub das: f64,
}

/// Batch means and the timestep histogram of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss_total: f64,
    pub loss_eps: f64,
    pub loss_pix: f64,
    pub loss_das: f64,
    pub t_histogram: BTreeMap<String, usize>,
    pub samples: Vec<SampleLoss>,
}

/// Loss and student gradients for one item.
///
/// The teacher enters the graph as constants, so it contributes to the
/// student gradient through `ẑ_H` but never receives one itself.
pub fn rcod_sample(
    student: &StudentModel,
    teacher: Option<&TeacherModel>,
    cfg: &TrainConfig,
    s: &Sample,
    seed: u64,
) -> Result<(SampleLoss, ParamStore<f32>)> {
    let schedule = Schedule::default();
    let mut rng = rng_from_seed(seed);
    let t = assign_timestep(MetricValue(s.metric), &student.grouping);
    let z_in = student.model_input(&schedule, &s.z_l, t, &mut rng)?;
    let mut g = Graph::new();
    let zv = g.input(z_in);
    let lv = g.input(s.lr.clone());
    let out = student.cfg.forward(&mut g, Bind::trainable(&student.params), &schedule, zv, lv, t)?;
    let zh = g.input(s.z_h.clone());
    let l_eps = g.mse(out.z_hat, zh)?;
    let img = student.codec.decode_var(&mut g, out.z_hat)?;
    let hr = g.input(s.hr.clone());
    let l_pix = g.mse(img, hr)?;
    let mut total = g.scale(l_eps, cfg.lambda_eps as f32)?;
    let pix_term = g.scale(l_pix, cfg.lambda_pix as f32)?;
    total = g.add(total, pix_term)?;
    let mut das = 0.0;
    if cfg.lambda_das > 0.0 {
        let teacher = teacher.ok_or_else(|| Error::Config("lambda_das > 0 requires a teacher".into()))?;
        let t_r = das_sample(t, student.grouping.k, &mut rng);
        let eps_r = Tensor::<f32>::randn(s.z_h.shape().to_vec(), 1.0, &mut rng);
        let (a, sg) = (schedule.alpha(t_r), schedule.sigma(t_r));
        let signal = g.scale(out.z_hat, a as f32)?;
        let noise = g.input(eps_r.map(|v| v * sg as f32));
        let z_r = g.add(signal, noise)?;
        let e = teacher_forward(&teacher.cfg, &mut g, Bind::frozen(&teacher.params), z_r, t_r)?;
        let target = g.input(eps_r);
        let l_das = g.mse(e, target)?;
        das = g.value(l_das).item()? as f64;
        let das_term = g.scale(l_das, cfg.lambda_das as f32)?;
        total = g.add(total, das_term)?;
    }
    let loss = SampleLoss {
        index: s.index,
        t,
        total: g.value(total).item()? as f64,
        eps: g.value(l_eps).item()? as f64,
        pix: g.value(l_pix).item()? as f64,
        das,
    };
    if ![loss.total, loss.eps, loss.pix, loss.das].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("non-finite loss at corpus item {}", s.index)));
    }
    Ok((loss, g.backward(total)?.into_params()))
}

/// One optimization step's forward/backward over a batch. Item seeds are
/// drawn from `rng` in batch order.
pub fn rcod_step(
    batch: &[&Sample],
    student: &StudentModel,
    teacher: Option<&TeacherModel>,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(StepStats, ParamStore<f32>)> {
    let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
    let (samples, grads) = batch_gradients(batch.len(), |i| rcod_sample(student, teacher, cfg, batch[i], seeds[i]))?;
    let n = samples.len() as f64;
    let mean = |f: fn(&SampleLoss) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let mut t_histogram = BTreeMap::new();
    for s in &samples {
        *t_histogram.entry(s.t.to_string()).or_insert(0) += 1;
    }
    Ok((
        StepStats {
            loss_total: mean(|s| s.total),
            loss_eps: mean(|s| s.eps),
            loss_pix: mean(|s| s.pix),
            loss_das: mean(|s| s.das),
            t_histogram,
            samples,
        },
        grads,
    ))
}

/// Held-out quality at every bucket timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub step: usize,
    /// Mean PSNR of the decoded restoration, keyed by timestep.
    pub psnr: BTreeMap<String, f64>,
    /// Mean latent MSE `‖ẑ_H − z_H‖²` with each item at its own bucket.
    pub latent_mse_matched: f64,
}

const VAL_SEED: u64 = 0x5A1_1DA7E;

pub fn validate_student(model: &StudentModel, samples: &[Sample], step: usize) -> Result<ValRecord> {
    if samples.is_empty() {
        return Err(Error::Config("no validation samples".into()));
    }
    let ts = model.grouping.timesteps();
    let rows = crate::par::map_indexed(samples.len(), |i| -> Result<(Vec<f64>, f64)> {
        let s = &samples[i];
        let hr = Image::from_chw(&s.hr)?;
        let seed = mix_seed(VAL_SEED, i as u64);
        let mut psnrs = Vec::with_capacity(ts.len());
        for &t in &ts {
            let z = model.restore(&s.z_l, &s.lr, t, seed)?;
            psnrs.push(psnr(&model.codec.decode(&z)?.clip_unit(), &hr)?);
        }
        let t = assign_timestep(MetricValue(s.metric), &model.grouping);
        let z = model.restore(&s.z_l, &s.lr, t, seed)?;
        let mse = z
            .data()
            .iter()
            .zip(s.z_h.data())
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            / z.numel() as f64;
        Ok((psnrs, mse))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let psnr = ts
        .iter()
        .enumerate()
        .map(|(j, t)| (t.to_string(), rows.iter().map(|r| r.0[j]).sum::<f64>() / n))
        .collect();
    Ok(ValRecord {
        step,
        psnr,
        latent_mse_matched: rows.iter().map(|r| r.1).sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentReport {
    pub initial: ValRecord,
    pub final_val: ValRecord,
    pub validations: Vec<ValRecord>,
    pub final_loss: f64,
}

/// Trains the student. `teacher` may be `None` only when `lambda_das = 0`.
pub fn train_rcod(
    cfg: &TrainConfig,
    data: &Dataset,
    teacher: Option<&TeacherModel>,
    obs: &mut dyn Observer,
) -> Result<(StudentModel, StudentReport)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    match teacher {
        None if cfg.lambda_das > 0.0 => {
            return Err(Error::Config("lambda_das > 0 requires a teacher checkpoint".into()));
        }
        Some(t) if t.codec != data.codec => {
            return Err(Error::Config("teacher was trained with a different codec (corpus mismatch)".into()));
        }
        Some(t) if t.cfg.latent_channels != cfg.student.denoiser.latent_channels => {
            return Err(Error::Config("teacher latent channels differ from the student's".into()));
        }
        _ => {}
    }
    let mut rng = rng_from_seed(mix_seed(cfg.seed, 0x5700));
    let mut model = StudentModel {
        params: cfg.student.init(&mut rng)?,
        cfg: cfg.student.clone(),
        codec: data.codec.clone(),
        grouping: data.grouping,
        metric: data.metric,
        noise_injection: cfg.noise_injection,
    };
    let val_set = if data.held_out.is_empty() { &data.train[..] } else { &data.held_out[..] };
    let val_set = &val_set[..val_set.len().min(cfg.val_samples.max(1))];
    let initial = validate_student(&model, val_set, 0)?;
    obs.on_validation(&initial)?;
    let mut validations = vec![initial.clone()];
    let mut opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut sampler = EpochSampler::new(data.train.len());
    let mut final_loss = f64::NAN;
    for step in 1..=cfg.student_steps {
        let idx = sampler.next_batch(cfg.batch_size, &mut rng);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
        let (stats, grads) = rcod_step(&batch, &model, teacher, cfg, &mut rng)?;
        opt.step(&mut model.params, &grads)?;
        final_loss = stats.loss_total;
        obs.on_step(&LogRecord {
            step,
            loss_total: stats.loss_total,
            loss_eps: stats.loss_eps,
            loss_pix: stats.loss_pix,
            loss_das: stats.loss_das,
            t_histogram: stats.t_histogram,
        })?;
        if cfg.val_every > 0 && step % cfg.val_every == 0 && step < cfg.student_steps {
            let v = validate_student(&model, val_set, step)?;
            obs.on_validation(&v)?;
            validations.push(v);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.student_steps {
            obs.on_checkpoint(step, &model.to_checkpoint()?)?;
        }
    }
    model.params.ensure_finite()?;
    let final_val = validate_student(&model, val_set, cfg.student_steps)?;
    obs.on_validation(&final_val)?;
    validations.push(final_val.clone());
    Ok((
        model,
        StudentReport {
            initial,
            final_val,
            validations,
            final_loss,
        },
    ))
}
