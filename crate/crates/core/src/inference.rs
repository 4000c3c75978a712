//! Realism selection, single-image restoration and corpus evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::degrade::CorpusPair;
use crate::grouping::{assign_timestep, GroupingConfig, MetricValue};
use crate::image::Image;
use crate::quality::MetricReport;
use crate::schedule::Timestep;
use crate::trainer::{MemModel, StudentModel};
use crate::{mix_seed, Error, Result};

/// How the restoration timestep is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Realism {
    /// Lowest bucket (t = k).
    Fidelity,
    /// Middle bucket.
    Neutral,
    /// Highest bucket (t = n·k).
    Realism,
    /// Bucket of the metric estimated from the LR input.
    Adaptive,
    Explicit(Timestep),
}

impl FromStr for Realism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fid" => Ok(Self::Fidelity),
            "neu" => Ok(Self::Neutral),
            "real" => Ok(Self::Realism),
            "adaptive" => Ok(Self::Adaptive),
            _ => match s.strip_prefix("t=").map(str::parse::<Timestep>) {
                Some(Ok(t)) => Ok(Self::Explicit(t)),
                _ => Err(Error::Config(format!(
                    "realism must be fid, neu, real, adaptive or t=<int>, got {s:?}"
                ))),
            },
        }
    }
}

impl fmt::Display for Realism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fidelity => f.write_str("fid"),
            Self::Neutral => f.write_str("neu"),
            Self::Realism => f.write_str("real"),
            Self::Adaptive => f.write_str("adaptive"),
            Self::Explicit(t) => write!(f, "t={t}"),
        }
    }
}

impl Serialize for Realism {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Realism {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Timestep for a realism setting. `m_hat` is required in adaptive mode;
/// explicit timesteps must lie in `[1, steps]`.
pub fn resolve_timestep(realism: Realism, grouping: &GroupingConfig, steps: usize, m_hat: Option<f64>) -> Result<Timestep> {
    let ts = grouping.timesteps();
    let t = match realism {
        Realism::Fidelity => ts[0],
        Realism::Neutral => ts[(ts.len() - 1) / 2],
        Realism::Realism => ts[ts.len() - 1],
        Realism::Adaptive => {
            let m = m_hat.ok_or_else(|| Error::Config("adaptive realism needs a metric estimate".into()))?;
            assign_timestep(MetricValue(m), grouping)
        }
        Realism::Explicit(t) => t,
    };
    if !(1..=steps).contains(&t) {
        return Err(Error::Config(format!("timestep {t} outside [1, {steps}]")));
    }
    Ok(t)
}

/// Side information written next to every restored image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub t_used: Timestep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_hat: Option<f64>,
    pub runtime_ms: f64,
}

/// Restores one LR image (already upsampled to the HR grid).
pub fn restore_image(
    student: &StudentModel,
    mem: Option<&MemModel>,
    lr_up: &Image,
    realism: Realism,
    seed: u64,
) -> Result<(Image, Sidecar)> {
    let start = Instant::now();
    let z_l = student.codec.encode(lr_up)?;
    let lr = lr_up.to_chw();
    let m_hat = match realism {
        Realism::Adaptive => {
            let mem = mem.ok_or_else(|| Error::Config("adaptive realism needs a MEM checkpoint".into()))?;
            if mem.codec != student.codec {
                return Err(Error::Config("MEM and student checkpoints use different codecs".into()));
            }
            Some(mem.predict(mem.features(&z_l, &lr, Some(student))?)?)
        }
        _ => None,
    };
    let t = resolve_timestep(realism, &student.grouping, student.cfg.denoiser.steps, m_hat)?;
    let z = student.restore(&z_l, &lr, t, seed)?;
    let out = student.codec.decode(&z)?.clip_unit();
    Ok((
        out,
        Sidecar {
            t_used: t,
            m_hat,
            runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    ))
}

/// Quality of one realism setting over a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeReport {
    pub metrics: MetricReport,
    /// Number of images restored at each timestep.
    pub t_histogram: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub count: usize,
    pub seed: u64,
    pub modes: BTreeMap<String, ModeReport>,
}

/// Restores every pair under every realism setting and scores the outputs
/// against HR. Pair `i` uses seed `mix_seed(seed, i)`.
pub fn evaluate(
    student: &StudentModel,
    mem: Option<&MemModel>,
    pairs: &[CorpusPair],
    modes: &[Realism],
    seed: u64,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Config("manifest lists no pairs".into()));
    }
    if modes.is_empty() {
        return Err(Error::Config("no realism setting requested".into()));
    }
    let targets: Vec<Image> = pairs.iter().map(|p| p.hr.clone()).collect();
    let mut out = BTreeMap::new();
    for &mode in modes {
        let rows = crate::par::map_indexed(pairs.len(), |i| {
            restore_image(student, mem, &pairs[i].lr_up, mode, mix_seed(seed, i as u64))
        });
        let mut images = Vec::with_capacity(pairs.len());
        let mut t_histogram = BTreeMap::<String, usize>::new();
        for r in rows {
            let (img, side) = r?;
            *t_histogram.entry(side.t_used.to_string()).or_default() += 1;
            images.push(img);
        }
        let metrics = MetricReport::evaluate(&images, &targets)?;
        out.insert(mode.to_string(), ModeReport { metrics, t_histogram });
    }
    Ok(EvalReport {
        count: pairs.len(),
        seed,
        modes: out,
    })
}

/// Comparison table rendered from one or more evaluation reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    /// `(metric, value per column)`.
    pub rows: Vec<(String, Vec<f64>)>,
}

const TABLE_METRICS: [&str; 3] = ["psnr", "ssim", "sharpness"];

impl Table {
    /// One column per mode per report. Column names are the mode labels,
    /// prefixed with the report name when a label repeats.
    pub fn build(reports: &[(String, EvalReport)]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Config("report needs at least one evaluation".into()));
        }
        let mut seen = BTreeMap::<&str, usize>::new();
        for (_, r) in reports {
            for m in r.modes.keys() {
                *seen.entry(m).or_default() += 1;
            }
        }
        let mut columns = Vec::new();
        let mut values: Vec<[f64; 3]> = Vec::new();
        for (name, r) in reports {
            if r.modes.is_empty() {
                return Err(Error::Config(format!("evaluation {name} has no modes")));
            }
            for (mode, m) in &r.modes {
                columns.push(if seen[mode.as_str()] > 1 { format!("{name}:{mode}") } else { mode.clone() });
                values.push([m.metrics.psnr_mean.mean, m.metrics.ssim_mean.mean, m.metrics.sharpness_mean.mean]);
            }
        }
        let rows = TABLE_METRICS
            .iter()
            .enumerate()
            .map(|(k, name)| (name.to_string(), values.iter().map(|v| v[k]).collect()))
            .collect();
        Ok(Self { columns, rows })
    }

    /// Aligned text; the largest value of each row carries a `*`.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(_, vals)| {
                let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                vals.iter()
                    .map(|&v| format!("{v:.4}{}", if v == best && vals.len() > 1 { "*" } else { " " }))
                    .collect()
            })
            .collect();
        let label_w = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("metric".len());
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| cells.iter().map(|r| r[c].len()).chain([self.columns[c].len()]).max().unwrap_or(0))
            .collect();
        let mut s = format!("{:<label_w$}", "metric");
        for (c, w) in self.columns.iter().zip(&widths) {
            s += &format!("  {c:>w$}");
        }
        s.push('\n');
        for ((name, _), row) in self.rows.iter().zip(&cells) {
            s += &format!("{name:<label_w$}");
            for (cell, w) in row.iter().zip(&widths) {
                s += &format!("  {cell:>w$}");
            }
            s.push('\n');
        }
        s
    }

    /// CSV with full-precision values; [`Table::from_csv`] reads it back.
    pub fn to_csv(&self) -> String {
        let mut s = std::iter::once("metric".to_string())
            .chain(self.columns.iter().cloned())
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for (name, vals) in &self.rows {
            s += name;
            for v in vals {
                s += &format!(",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            offset: 0,
            msg: "empty CSV".into(),
        })?;
        let columns: Vec<String> = header.split(',').skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        let mut offset = header.len() + 1;
        for line in lines {
            let mut parts = line.split(',');
            let name = parts.next().unwrap_or_default().to_string();
            let vals = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|e| Error::Parse {
                        offset,
                        msg: format!("{p:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != columns.len() {
                return Err(Error::Parse {
                    offset,
                    msg: format!("{} values for {} columns", vals.len(), columns.len()),
                });
            }
            rows.push((name, vals));
            offset += line.len() + 1;
        }
        Ok(Self { columns, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::MetricSummary;

    fn grouping() -> GroupingConfig {
        GroupingConfig::new(3, 250, 0.0, 1.0).unwrap()
    }

    #[test]
    fn keywords_map_to_buckets() {
        let g = grouping();
        let t = |s: &str| resolve_timestep(s.parse().unwrap(), &g, 1000, None).unwrap();
        assert_eq!(t("fid"), 250);
        assert_eq!(t("neu"), 500);
        assert_eq!(t("real"), 750);
        assert_eq!(t("t=600"), 600);
        assert_eq!(resolve_timestep(Realism::Adaptive, &g, 1000, Some(0.5)).unwrap(), 500);
    }

    #[test]
    fn bad_settings_are_user_errors() {
        let g = grouping();
        for s in ["fidelity", "t=", "t=-3", "T=5", ""] {
            assert!(matches!(s.parse::<Realism>(), Err(Error::Config(_))), "{s}");
        }
        for t in [0, 1001] {
            let e = resolve_timestep(Realism::Explicit(t), &g, 1000, None).unwrap_err();
            assert!(e.is_user_error());
        }
        assert!(matches!(resolve_timestep(Realism::Adaptive, &g, 1000, None), Err(Error::Config(_))));
    }

    #[test]
    fn labels_round_trip() {
        for r in [Realism::Fidelity, Realism::Neutral, Realism::Realism, Realism::Adaptive, Realism::Explicit(42)] {
            assert_eq!(r.to_string().parse::<Realism>().unwrap(), r);
            let j = serde_json::to_string(&r).unwrap();
            assert_eq!(serde_json::from_str::<Realism>(&j).unwrap(), r);
        }
    }

    fn report(modes: &[(&str, f64, f64, f64)]) -> EvalReport {
        let summary = |mean| MetricSummary { mean, count: 1 };
        EvalReport {
            count: 1,
            seed: 0,
            modes: modes
                .iter()
                .map(|&(m, p, s, sh)| {
                    (
                        m.to_string(),
                        ModeReport {
                            metrics: MetricReport {
                                psnr: vec![p],
                                ssim: vec![s],
                                sharpness: vec![sh],
                                psnr_mean: summary(p),
                                ssim_mean: summary(s),
                                sharpness_mean: summary(sh),
                            },
                            t_histogram: BTreeMap::new(),
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn single_report_single_column() {
        let t = Table::build(&[("a".into(), report(&[("fid", 20.0, 0.5, 0.1)]))]).unwrap();
        assert_eq!(t.columns, ["fid"]);
        assert!(!t.to_text().contains('*'));
    }

    #[test]
    fn three_reports_mark_row_best() {
        let reports = vec![
            ("f".to_string(), report(&[("fid", 21.0, 0.6, 0.05)])),
            ("n".to_string(), report(&[("neu", 20.0, 0.5, 0.08)])),
            ("r".to_string(), report(&[("real", 19.0, 0.4, 0.12)])),
        ];
        let t = Table::build(&reports).unwrap();
        assert_eq!(t.columns, ["fid", "neu", "real"]);
        let text = t.to_text();
        let line = |name: &str| text.lines().find(|l| l.starts_with(name)).unwrap().to_string();
        assert!(line("psnr").contains("21.0000*"));
        assert!(line("ssim").contains("0.6000*"));
        assert!(line("sharpness").contains("0.1200*"));
        assert_eq!(text.matches('*').count(), 3);
        assert_eq!(Table::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn repeated_modes_are_prefixed() {
        let reports = vec![
            ("a".to_string(), report(&[("fid", 1.0 / 3.0, 0.1, 0.2)])),
            ("b".to_string(), report(&[("fid", 2.0, 0.2, 0.3)])),
        ];
        let t = Table::build(&reports).unwrap();
        assert_eq!(t.columns, ["a:fid", "b:fid"]);
        let back = Table::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back.rows[0].1[0], 1.0 / 3.0);
    }
}
