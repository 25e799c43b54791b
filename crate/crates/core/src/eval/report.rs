use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Resolution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "descriptor", rename_all = "snake_case")]
pub enum Gold {
    Class(String),
    /// Out of scope: no option is correct.
    Oos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub generated_text: String,
    pub resolved: Resolution,
    pub gold: Gold,
    /// Whether the gold class was among the options shown.
    pub task_answerable: bool,
    /// Probability of the NOTA letter, when NOTA was an option.
    pub nota_probability: Option<f64>,
}

impl PredictionRecord {
    /// Correct given the options shown: the gold option when it was shown,
    /// NOTA when it was not.
    pub fn mc_correct(&self) -> bool {
        match (&self.resolved, &self.gold) {
            (Resolution::Option { descriptor, .. }, Gold::Class(g)) => self.task_answerable && descriptor == g,
            (Resolution::Nota, _) => !self.task_answerable,
            _ => false,
        }
    }

    pub fn task_correct(&self) -> bool {
        self.task_answerable && self.mc_correct()
    }

    fn predicted_nota(&self) -> bool {
        self.resolved == Resolution::Nota
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// NOTA treated as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotaStats {
    pub actual_rate: f64,
    pub predicted_rate: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mc_correct: usize,
    pub task_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub task_accuracy: f64,
    pub mc_accuracy: f64,
    pub invalid: usize,
    pub nota: NotaStats,
    pub per_class: BTreeMap<String, ClassStats>,
}

pub fn closed_report(records: &[PredictionRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Input("no predictions to evaluate".into()));
    }
    let n = records.len();
    let mc = records.iter().filter(|r| r.mc_correct()).count();
    let task = records.iter().filter(|r| r.task_correct()).count();
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    let mut per_class: BTreeMap<String, ClassStats> = BTreeMap::new();
    for r in records {
        match (!r.task_answerable, r.predicted_nota()) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => tn += 1,
        }
        let key = match &r.gold {
            Gold::Class(c) => c.clone(),
            Gold::Oos => "<oos>".to_string(),
        };
        let s = per_class.entry(key).or_default();
        s.count += 1;
        s.mc_correct += usize::from(r.mc_correct());
        s.task_correct += usize::from(r.task_correct());
    }
    let recall = ratio(tp, tp + fneg);
    let precision = ratio(tp, tp + fp);
    let report = EvalReport {
        n,
        task_accuracy: ratio(task, n),
        mc_accuracy: ratio(mc, n),
        invalid: records.iter().filter(|r| r.resolved == Resolution::Invalid).count(),
        nota: NotaStats {
            actual_rate: ratio(tp + fneg, n),
            predicted_rate: ratio(tp + fp, n),
            recall,
            precision,
            f1: f1(precision, recall),
            true_positive: tp,
            false_positive: fp,
            false_negative: fneg,
            true_negative: tn,
        },
        per_class,
    };
    assert!(
        report.task_accuracy <= report.mc_accuracy,
        "task accuracy {} exceeds MC accuracy {}",
        report.task_accuracy,
        report.mc_accuracy
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OosKind {
    /// Out-of-scope inputs near the in-scope classes; thresholded.
    IdOos,
    /// Out-of-scope inputs from other domains; greedy NOTA only.
    OodOos,
}

impl std::str::FromStr for OosKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id-oos" => Ok(Self::IdOos),
            "ood-oos" => Ok(Self::OodOos),
            other => Err(Error::Config(format!("unknown OOS kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosReport {
    pub in_scope_accuracy: f64,
    pub oos_recall: f64,
    pub oos_precision: f64,
    pub oos_kind: OosKind,
    pub threshold: Option<f64>,
    pub in_scope: usize,
    pub oos: usize,
    pub predicted_oos: usize,
    pub true_oos: usize,
}

/// Whether `r` is predicted out of scope. A greedy NOTA always counts; for
/// in-domain OOS a NOTA probability above `threshold` also counts.
pub fn predicted_oos(r: &PredictionRecord, kind: OosKind, threshold: Option<f64>) -> bool {
    let greedy = r.resolved == Resolution::Nota;
    match (kind, threshold) {
        (OosKind::IdOos, Some(t)) => greedy || r.nota_probability.is_some_and(|p| p > t),
        _ => greedy,
    }
}

pub fn open_world_report(records: &[PredictionRecord], kind: OosKind, threshold: Option<f64>) -> Result<OosReport> {
    if kind == OosKind::IdOos && threshold.is_none() {
        return Err(Error::Config("in-domain OOS evaluation needs a threshold".into()));
    }
    let (mut in_scope, mut correct, mut oos, mut predicted, mut true_oos) = (0, 0, 0, 0, 0);
    for r in records {
        let flagged = predicted_oos(r, kind, threshold);
        predicted += usize::from(flagged);
        match &r.gold {
            Gold::Oos => {
                oos += 1;
                true_oos += usize::from(flagged);
            }
            Gold::Class(g) => {
                in_scope += 1;
                let hit = matches!(&r.resolved, Resolution::Option { descriptor, .. } if descriptor == g);
                correct += usize::from(hit && !flagged);
            }
        }
    }
    Ok(OosReport {
        in_scope_accuracy: ratio(correct, in_scope),
        oos_recall: ratio(true_oos, oos),
        oos_precision: ratio(true_oos, predicted),
        oos_kind: kind,
        threshold: if kind == OosKind::IdOos { threshold } else { None },
        in_scope,
        oos,
        predicted_oos: predicted,
        true_oos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    /// In-scope accuracy plus OOS recall.
    pub objective: Vec<f64>,
    pub predicted_oos: Vec<usize>,
    pub in_scope_accuracy: Vec<f64>,
    pub oos_recall: Vec<f64>,
}

/// 101 evenly spaced thresholds from 0 to 1.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Picks the threshold maximizing in-scope accuracy plus OOS recall; ties
/// go to the smallest threshold.
pub fn tune_threshold_records(records: &[PredictionRecord], grid: &[f64]) -> Result<(f64, ThresholdCurve)> {
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("threshold grid must be strictly ascending".into()));
    }
    let mut curve = ThresholdCurve {
        thresholds: grid.to_vec(),
        objective: Vec::with_capacity(grid.len()),
        predicted_oos: Vec::with_capacity(grid.len()),
        in_scope_accuracy: Vec::with_capacity(grid.len()),
        oos_recall: Vec::with_capacity(grid.len()),
    };
    let mut best = 0;
    for (i, &t) in grid.iter().enumerate() {
        let r = open_world_report(records, OosKind::IdOos, Some(t))?;
        let obj = r.in_scope_accuracy + r.oos_recall;
        if obj > curve.objective.get(best).copied().unwrap_or(f64::NEG_INFINITY) {
            best = i;
        }
        curve.objective.push(obj);
        curve.predicted_oos.push(r.predicted_oos);
        curve.in_scope_accuracy.push(r.in_scope_accuracy);
        curve.oos_recall.push(r.oos_recall);
    }
    Ok((grid[best], curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(gold: Gold, resolved: Resolution, answerable: bool, p: Option<f64>) -> PredictionRecord {
        PredictionRecord {
            query_id: "q".into(),
            generated_text: String::new(),
            resolved,
            gold,
            task_answerable: answerable,
            nota_probability: p,
        }
    }

    fn opt(d: &str) -> Resolution {
        Resolution::Option {
            letter: 'A',
            descriptor: d.into(),
        }
    }

    #[test]
    fn all_correct_is_perfect() {
        let rs: Vec<_> = (0..4)
            .map(|_| rec(Gold::Class("x".into()), opt("x"), true, None))
            .collect();
        let r = closed_report(&rs).unwrap();
        assert_eq!((r.mc_accuracy, r.task_accuracy), (1.0, 1.0));
        assert_eq!(r.nota.actual_rate, 0.0);
        assert!(closed_report(&[]).is_err());
    }

    #[test]
    fn nota_confusion() {
        let g = || Gold::Class("x".into());
        let rs = vec![
            rec(g(), Resolution::Nota, false, None),
            rec(g(), Resolution::Nota, false, None),
            rec(g(), opt("y"), false, None),
            rec(g(), Resolution::Nota, true, None),
            rec(g(), opt("x"), true, None),
            rec(g(), Resolution::Invalid, true, None),
        ];
        let r = closed_report(&rs).unwrap();
        assert_eq!(r.nota.true_positive, 2);
        assert_eq!(r.nota.false_negative, 1);
        assert_eq!(r.nota.false_positive, 1);
        assert_eq!(r.nota.true_negative, 2);
        assert!((r.nota.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.nota.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.mc_accuracy - 3.0 / 6.0).abs() < 1e-12);
        assert!((r.task_accuracy - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.invalid, 1);
        assert_eq!(r.per_class["x"].count, 6);
    }

    #[test]
    fn f1_formula() {
        assert!((f1(0.253, 0.185) - 0.213_721).abs() < 1e-6);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn open_world_needs_threshold_for_id() {
        assert!(open_world_report(&[], OosKind::IdOos, None).is_err());
        let r = open_world_report(&[], OosKind::OodOos, None).unwrap();
        assert_eq!(r.oos_precision, 0.0);
    }

    #[test]
    fn tie_goes_to_smallest() {
        let rs = vec![rec(Gold::Class("x".into()), opt("x"), true, Some(0.0))];
        let (t, curve) = tune_threshold_records(&rs, &[0.1, 0.5, 0.9]).unwrap();
        assert_eq!(t, 0.1);
        assert_eq!(curve.objective, vec![1.0, 1.0, 1.0]);
        assert!(tune_threshold_records(&rs, &[]).is_err());
        assert!(tune_threshold_records(&rs, &[0.5, 0.1]).is_err());
        assert_eq!(default_grid().len(), 101);
    }
}
