//! Encoded training data and the epoch sampler.

use std::path::Path;

use rand::seq::SliceRandom;

use super::TrainConfig;
use crate::codec::{Latent, LatentCodec, DEFAULT_FACTOR};
use crate::degrade::{load_corpus, PairedSample};
use crate::grouping::{fit_bounds, latent_metric, GroupingConfig, MetricKind, MetricValue};
use crate::image::Image;
use crate::numerics::Tensor;
use crate::{Error, Result, Rng};

/// One encoded corpus pair.
#[derive(Clone, Debug)]
pub struct Sample {
    pub index: usize,
    pub z_l: Latent,
    pub z_h: Latent,
    /// LR image on the HR grid, `C×H×W`.
    pub lr: Tensor<f32>,
    /// HR image, `C×H×W`.
    pub hr: Tensor<f32>,
    /// Oriented metric (larger is cleaner).
    pub metric: f64,
}

/// Train/held-out split with the codec and grouping fitted on the
/// training part.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub codec: LatentCodec,
    pub grouping: GroupingConfig,
    pub metric: MetricKind,
    pub train: Vec<Sample>,
    pub held_out: Vec<Sample>,
}

impl Dataset {
    /// Builds the dataset from `(hr, lr_up)` pairs in corpus order.
    pub fn from_pairs(pairs: &[(Image, Image)], cfg: &TrainConfig) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::Config(format!("corpus has {} pairs; need at least 2", pairs.len())));
        }
        let n_hold = ((pairs.len() as f64 * cfg.holdout_fraction).ceil() as usize).min(pairs.len() - 1);
        let n_train = pairs.len() - n_hold;
        for (hr, lr) in pairs {
            hr.same_dims(lr)?;
        }
        let codec = LatentCodec::fit(pairs[..n_train].iter().map(|(hr, _)| hr), DEFAULT_FACTOR)?;
        let encoded = crate::par::map_indexed(pairs.len(), |i| -> Result<Sample> {
            let (hr, lr) = &pairs[i];
            let z_l = codec.encode(lr)?;
            let z_h = codec.encode(hr)?;
            let metric = cfg.metric.orient(latent_metric(&z_l, &z_h, cfg.metric)?).0;
            Ok(Sample {
                index: i,
                z_l,
                z_h,
                lr: lr.to_chw(),
                hr: hr.to_chw(),
                metric,
            })
        });
        let mut samples = encoded.into_iter().collect::<Result<Vec<_>>>()?;
        let held_out = samples.split_off(n_train);
        let metrics: Vec<MetricValue> = samples.iter().map(|s| MetricValue(s.metric)).collect();
        let bounds = fit_bounds(&metrics, cfg.grouping.bounds)?;
        let grouping = GroupingConfig::new(cfg.grouping.n, cfg.grouping.k, bounds.0, bounds.1)?;
        Ok(Self {
            codec,
            grouping,
            metric: cfg.metric,
            train: samples,
            held_out,
        })
    }

    pub fn from_samples(samples: &[PairedSample], cfg: &TrainConfig) -> Result<Self> {
        let pairs: Vec<(Image, Image)> = samples.iter().map(|s| (s.hr.clone(), s.lr_up.clone())).collect();
        Self::from_pairs(&pairs, cfg)
    }

    pub fn from_manifest(path: &Path, cfg: &TrainConfig) -> Result<Self> {
        let corpus = load_corpus(path)?;
        let pairs: Vec<(Image, Image)> = corpus.into_iter().map(|p| (p.hr, p.lr_up)).collect();
        Self::from_pairs(&pairs, cfg)
    }

    /// Loads the corpus named by `cfg.train_manifest`.
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        let path = cfg
            .train_manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no train_manifest configured".into()))?;
        if !path.exists() {
            return Err(Error::Config(format!("corpus manifest {} not found", path.display())));
        }
        Self::from_manifest(path, cfg)
    }
}

/// Visits the training set in a fresh random order every epoch.
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next_batch(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}
