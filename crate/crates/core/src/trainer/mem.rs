//! Metric-estimator training: regress the corpus metric from LR-side
//! features only.

use serde::{Deserialize, Serialize};

use super::checkpoint::{get_meta, put_meta};
use super::data::{Dataset, EpochSampler, Sample};
use super::student::StudentModel;
use super::{batch_gradients, Adam, LogRecord, Observer, TrainConfig};
use crate::codec::{Latent, LatentCodec};
use crate::grouping::{GroupingConfig, MetricKind};
use crate::models::{Bind, MemConfig, MemFeatures, MEM_PREFIX};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::quality::spearman;
use crate::schedule::Timestep;
use crate::{mix_seed, rng_from_seed, Error, Result};

/// Batch size of metric-estimator steps; the MLP is tiny, so batches are
/// larger than for the denoisers.
const MEM_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct MemModel {
    pub cfg: MemConfig,
    pub params: ParamStore<f32>,
    pub scaling: Scaling,
    pub codec: LatentCodec,
    pub grouping: GroupingConfig,
    pub metric: MetricKind,
}

/// Affine maps fitted on the training split: features are standardized
/// before the MLP, and its output is mapped back to metric units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Scaling {
    /// Identity on `dim` features.
    pub fn identity(dim: usize) -> Self {
        Self {
            feature_mean: vec![0.0; dim],
            feature_std: vec![1.0; dim],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn fit(features: &[Tensor<f32>], targets: &[f64]) -> Result<Self> {
        let n = features.len();
        if n == 0 || n != targets.len() {
            return Err(Error::Dimension(format!("{n} feature rows for {} targets", targets.len())));
        }
        let dim = features[0].numel();
        let spread = |col: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = col.collect();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        };
        let (feature_mean, feature_std) = (0..dim)
            .map(|j| spread(&mut features.iter().map(|f| f.data()[j] as f64)))
            .unzip();
        let (target_mean, target_std) = spread(&mut targets.iter().copied());
        Ok(Self {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        })
    }

    fn features(&self, f: &Tensor<f32>) -> Result<Tensor<f32>> {
        if f.numel() != self.feature_mean.len() {
            return Err(Error::Dimension(format!(
                "{} MEM features, scaling fitted on {}",
                f.numel(),
                self.feature_mean.len()
            )));
        }
        let data = f
            .data()
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&v, (m, s))| ((v as f64 - m) / s) as f32)
            .collect();
        Tensor::new(f.shape().to_vec(), data)
    }

    fn target(&self, m: f64) -> f64 {
        (m - self.target_mean) / self.target_std
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename = "mem")]
struct Meta {
    mem: MemConfig,
    scaling: Scaling,
    grouping: GroupingConfig,
    metric: MetricKind,
}

impl MemModel {
    pub fn to_checkpoint(&self) -> Result<ParamStore<f32>> {
        let mut s = self.params.clone();
        self.codec.write_params("codec.", &mut s);
        put_meta(
            &mut s,
            &Meta {
                mem: self.cfg.clone(),
                scaling: self.scaling.clone(),
                grouping: self.grouping,
                metric: self.metric,
            },
        )?;
        Ok(s)
    }

    pub fn from_checkpoint(store: &ParamStore<f32>) -> Result<Self> {
        let meta: Meta = get_meta(store).map_err(|e| Error::Config(format!("not a MEM checkpoint: {e}")))?;
        Ok(Self {
            cfg: meta.mem,
            scaling: meta.scaling,
            params: super::with_prefixes(store, &[MEM_PREFIX]),
            codec: LatentCodec::read_params("codec.", store)?,
            grouping: meta.grouping,
            metric: meta.metric,
        })
    }

    /// Feature row for an LR latent; bottleneck features need the student.
    pub fn features(&self, z_l: &Latent, lr: &Tensor<f32>, student: Option<&StudentModel>) -> Result<Tensor<f32>> {
        match self.cfg.features {
            MemFeatures::DenoiserBottleneck => {
                let student = student.ok_or_else(|| Error::Config("bottleneck MEM features need the student checkpoint".into()))?;
                student.bottleneck(z_l, lr, bottleneck_t(&self.grouping), 0)
            }
            _ => self.cfg.latent_features(z_l),
        }
    }

    /// Estimated metric in `[−1, 1]`.
    pub fn predict(&self, features: Tensor<f32>) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let x = g.input(self.scaling.features(&features)?);
        let y = self.cfg.forward(&mut g, Bind::frozen(&self.params), MEM_PREFIX, x)?;
        let v = self.scaling.target_mean + self.scaling.target_std * g.value(y).data()[0] as f64;
        if !v.is_finite() {
            return Err(Error::NonFinite("MEM prediction".into()));
        }
        Ok(v.clamp(-1.0, 1.0))
    }
}

/// Timestep at which bottleneck features are read: the middle bucket.
fn bottleneck_t(grouping: &GroupingConfig) -> Timestep {
    grouping.k * grouping.n.div_ceil(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemReport {
    pub held_out_spearman: f64,
    pub held_out_count: usize,
    pub final_loss: f64,
}

fn sample_loss(model: &MemModel, features: &Tensor<f32>, target: f64) -> Result<(f64, ParamStore<f32>)> {
    let mut g = Graph::new();
    let x = g.input(model.scaling.features(features)?);
    let y = model.cfg.forward(&mut g, Bind::trainable(&model.params), MEM_PREFIX, x)?;
    let tv = g.input(Tensor::full([1, 1], model.scaling.target(target) as f32));
    let loss = g.mse(y, tv)?;
    let v = g.value(loss).item()? as f64;
    if !v.is_finite() {
        return Err(Error::NonFinite("metric estimator loss".into()));
    }
    Ok((v, g.backward(loss)?.into_params()))
}

pub fn train_mem(
    cfg: &TrainConfig,
    data: &Dataset,
    student: Option<&StudentModel>,
    obs: &mut dyn Observer,
) -> Result<(MemModel, MemReport)> {
    cfg.validate()?;
    if data.train.is_empty() || data.held_out.len() < 3 {
        return Err(Error::Config("metric estimator needs a training set and at least 3 held-out pairs".into()));
    }
    let mut mcfg = cfg.mem.clone();
    mcfg.latent_channels = data.codec.latent_channels();
    if mcfg.features == MemFeatures::DenoiserBottleneck {
        let s = student.ok_or_else(|| Error::Config("bottleneck MEM features need a student checkpoint".into()))?;
        mcfg.bottleneck_channels = s.cfg.denoiser.widths[2];
    }
    mcfg.factor = data.codec.factor();
    let mut rng = rng_from_seed(mix_seed(cfg.seed, 0x3E3));
    let mut model = MemModel {
        params: mcfg.init(MEM_PREFIX, &mut rng)?,
        scaling: Scaling::identity(mcfg.input_dim()),
        cfg: mcfg,
        codec: data.codec.clone(),
        grouping: data.grouping,
        metric: data.metric,
    };
    let featurize = |set: &[Sample]| -> Result<Vec<Tensor<f32>>> {
        crate::par::map_indexed(set.len(), |i| model.features(&set[i].z_l, &set[i].lr, student))
            .into_iter()
            .collect()
    };
    let train_x = featurize(&data.train)?;
    let held_x = featurize(&data.held_out)?;
    let targets: Vec<f64> = data.train.iter().map(|s| s.metric).collect();
    model.scaling = Scaling::fit(&train_x, &targets)?;
    let mut opt = Adam::new(cfg.mem_learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut sampler = EpochSampler::new(data.train.len());
    let mut final_loss = f64::NAN;
    for step in 1..=cfg.mem_steps {
        let idx = sampler.next_batch(MEM_BATCH, &mut rng);
        let (losses, grads) = batch_gradients(idx.len(), |i| {
            sample_loss(&model, &train_x[idx[i]], data.train[idx[i]].metric)
        })?;
        // cosine decay to zero settles the small regression on a quiet iterate
        opt.lr = cfg.mem_learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * (step - 1) as f64 / cfg.mem_steps as f64).cos());
        opt.step(&mut model.params, &grads)?;
        final_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        obs.on_step(&LogRecord {
            step,
            loss_total: final_loss,
            loss_eps: 0.0,
            loss_pix: 0.0,
            loss_das: 0.0,
            t_histogram: Default::default(),
        })?;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.mem_steps {
            obs.on_checkpoint(step, &model.to_checkpoint()?)?;
        }
    }
    model.params.ensure_finite()?;
    let preds = held_x.iter().map(|x| model.predict(x.clone())).collect::<Result<Vec<_>>>()?;
    let held: Vec<f64> = data.held_out.iter().map(|s| s.metric).collect();
    let held_out_spearman = spearman(&preds, &held)?;
    Ok((
        model,
        MemReport {
            held_out_spearman,
            held_out_count: preds.len(),
            final_loss,
        },
    ))
}
