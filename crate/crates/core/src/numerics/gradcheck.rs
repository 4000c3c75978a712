//! Central finite-difference gradient checking for 64-bit graphs.

use rand::seq::index::sample;

use super::{Graph, ParamStore, Var};
use crate::Result;

/// Denominator floor for the relative error, so that entries whose true
/// gradient is essentially zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of every parameter in `params` against
/// central differences with step `h`.
///
/// `build` must record a scalar loss using only the given store. When
/// `max_per_tensor` is set, at most that many randomly chosen entries per
/// tensor are perturbed.
pub fn check_params<F>(
    params: &ParamStore<f64>,
    h: f64,
    max_per_tensor: Option<(usize, u64)>,
    build: F,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&'a ParamStore<f64>) -> Result<(Graph<'a, f64>, Var)>,
{
    let analytic = {
        let (g, loss) = build(params)?;
        g.backward(loss)?.into_params()
    };
    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for (ti, name) in names.iter().enumerate() {
        let n = params.get(name)?.numel();
        let idx: Vec<usize> = match max_per_tensor {
            Some((k, seed)) if k < n => {
                let mut rng = crate::rng_from_seed(crate::mix_seed(seed, ti as u64));
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in idx {
            let orig = params.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + h;
            let fp = eval(&work, &build)?;
            work.get_mut(name)?.data_mut()[i] = orig - h;
            let fm = eval(&work, &build)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get(name)?.data()[i];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    Ok(report)
}

fn eval<F>(params: &ParamStore<f64>, build: &F) -> Result<f64>
where
    F: for<'a> Fn(&'a ParamStore<f64>) -> Result<(Graph<'a, f64>, Var)>,
{
    let (g, loss) = build(params)?;
    g.value(loss).item()
}
