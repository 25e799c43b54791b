use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Task,
    Mc,
}

impl Metric {
    /// The metric in percent.
    pub fn of(self, r: &EvalReport) -> f64 {
        100.0
            * match self {
                Self::Task => r.task_accuracy,
                Self::Mc => r.mc_accuracy,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Test value of the run that scored best on validation.
    pub best_on_validation: Option<f64>,
}

impl RunSummary {
    /// `mean±std (best)` with one decimal.
    pub fn display(&self) -> String {
        let mut s = format!("{:.1}±{:.1}", self.mean, self.std);
        if let Some(b) = self.best_on_validation {
            s.push_str(&format!(" ({b:.1})"));
        }
        s
    }
}

/// Mean and spread of `test`; `validation`, when given, is aligned with it
/// and picks the reported best run (first on ties).
pub fn aggregate_values(test: &[f64], validation: Option<&[f64]>) -> Result<RunSummary> {
    if test.is_empty() {
        return Err(Error::Input("nothing to aggregate".into()));
    }
    let n = test.len();
    let mean = test.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (test.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let best_on_validation = match validation {
        None => None,
        Some(v) if v.len() != n => {
            return Err(Error::Input(format!("{} validation values for {n} runs", v.len())));
        }
        Some(v) => {
            let mut best = 0;
            for (i, x) in v.iter().enumerate() {
                if *x > v[best] {
                    best = i;
                }
            }
            Some(test[best])
        }
    };
    Ok(RunSummary {
        n,
        mean,
        std,
        min: test.iter().copied().fold(f64::INFINITY, f64::min),
        max: test.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        best_on_validation,
    })
}

pub fn aggregate_runs(reports: &[EvalReport], validation: &[EvalReport], metric: Metric) -> Result<RunSummary> {
    let test: Vec<f64> = reports.iter().map(|r| metric.of(r)).collect();
    let val: Vec<f64> = validation.iter().map(|r| metric.of(r)).collect();
    aggregate_values(&test, (!val.is_empty()).then_some(val.as_slice()))
}

/// Linear-interpolated quantiles of `values` at each `q` in `[0, 1]`.
pub fn quantiles(values: &[f64], qs: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return vec![f64::NAN; qs.len()];
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    qs.iter()
        .map(|q| {
            let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        })
        .collect()
}
