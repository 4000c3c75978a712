//! Optimization loops, the optimizer and checkpoint persistence.
//!
//! Every training step draws one seed per batch item from the run's main
//! generator, evaluates the items in parallel (each on its own graph) and
//! sums their gradients in item order, so a run is reproducible regardless
//! of the worker count.

pub mod checkpoint;
mod config;
mod data;
mod mem;
mod optim;
mod student;
mod teacher;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{GroupingSettings, TrainConfig};
pub use data::{Dataset, EpochSampler, Sample};
pub use mem::{train_mem, MemModel, MemReport, Scaling};
pub use optim::Adam;
pub use student::{rcod_sample, rcod_step, train_rcod, SampleLoss, StepStats, StudentModel, StudentReport, ValRecord};
pub use teacher::{teacher_val_mse, train_teacher, TeacherModel, TeacherReport};

use crate::numerics::ParamStore;
use crate::{Error, Result};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_eps: f64,
    pub loss_pix: f64,
    pub loss_das: f64,
    /// Assigned timesteps in the batch, keyed by timestep.
    pub t_histogram: BTreeMap<String, usize>,
}

/// Receives progress from the training loops.
pub trait Observer {
    fn on_step(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    fn on_validation(&mut self, _record: &ValRecord) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` steps with the serialized model.
    fn on_checkpoint(&mut self, _step: usize, _store: &ParamStore<f32>) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
impl Observer for () {}

/// Writes JSON-lines logs and intermediate checkpoints next to an output
/// checkpoint path: `<out>.log.jsonl`, `<out>.val.jsonl`, `<out>.step<N>`.
pub struct FileObserver {
    out: PathBuf,
    log: std::io::BufWriter<std::fs::File>,
    val: Option<std::io::BufWriter<std::fs::File>>,
}

impl FileObserver {
    pub fn new(out: &Path) -> Result<Self> {
        let log_path = with_suffix(out, ".log.jsonl");
        let f = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            log: std::io::BufWriter::new(f),
            val: None,
        })
    }

    pub fn log_path(&self) -> PathBuf {
        with_suffix(&self.out, ".log.jsonl")
    }

    fn write_line<W: Write>(w: &mut W, path: &Path, value: &impl Serialize) -> Result<()> {
        let mut line = serde_json::to_vec(value)?;
        line.push(b'\n');
        w.write_all(&line).map_err(|e| Error::io(path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        let p = self.log_path();
        self.log.flush().map_err(|e| Error::io(&p, e))?;
        if let Some(v) = &mut self.val {
            let p = with_suffix(&self.out, ".val.jsonl");
            v.flush().map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

impl Observer for FileObserver {
    fn on_step(&mut self, record: &LogRecord) -> Result<()> {
        let p = self.log_path();
        Self::write_line(&mut self.log, &p, record)
    }

    fn on_validation(&mut self, record: &ValRecord) -> Result<()> {
        let p = with_suffix(&self.out, ".val.jsonl");
        if self.val.is_none() {
            let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            self.val = Some(std::io::BufWriter::new(f));
        }
        Self::write_line(self.val.as_mut().expect("opened above"), &p, record)
    }

    fn on_checkpoint(&mut self, step: usize, store: &ParamStore<f32>) -> Result<()> {
        checkpoint::save(store, with_suffix(&self.out, &format!(".step{step}")))
    }
}

/// Entries whose names start with one of `prefixes` followed by a dot.
pub(crate) fn with_prefixes(store: &ParamStore<f32>, prefixes: &[&str]) -> ParamStore<f32> {
    store
        .iter()
        .filter(|(k, _)| prefixes.iter().any(|p| k.strip_prefix(p).is_some_and(|r| r.starts_with('.'))))
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Evaluates `f` for every batch item and averages the gradients in item
/// order.
pub(crate) fn batch_gradients<S, F>(n: usize, f: F) -> Result<(Vec<S>, ParamStore<f32>)>
where
    S: Send,
    F: Fn(usize) -> Result<(S, ParamStore<f32>)> + Sync + Send,
{
    let results = crate::par::map_indexed(n, f);
    let mut stats = Vec::with_capacity(n);
    let mut total: Option<ParamStore<f32>> = None;
    for r in results {
        let (s, g) = r?;
        stats.push(s);
        match &mut total {
            None => total = Some(g),
            Some(acc) => {
                for (name, t) in g.iter() {
                    acc.get_mut(name)?.add_assign(t)?;
                }
            }
        }
    }
    let mut total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
    let inv = 1.0 / n as f32;
    for (_, t) in total.iter_mut() {
        t.scale_assign(inv);
    }
    Ok((stats, total))
}
