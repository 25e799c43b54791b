//! Handwritten prompt sweeps and single-edit analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markup::{DemoFormat, Marker, Segment, SlotKind, TemplateSpec, TemplateStyle};

pub const AXIS_NAMES: [&str; 6] = [
    "instruction",
    "options_header",
    "demo_indicator",
    "input_indicator",
    "kv_separator",
    "demo_separator",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub instruction: Vec<String>,
    pub options_header: Vec<String>,
    pub demo_indicator: Vec<String>,
    pub input_indicator: Vec<String>,
    pub kv_separator: Vec<String>,
    /// Whitespace separators are used as is; anything else sits on its own line.
    pub demo_separator: Vec<String>,
    /// Keyword before each answer letter; not swept.
    pub label_keyword: String,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            instruction: strings(&[
                "Categorize the following news headlines according to their topic.",
                "Classify these headlines based on the type of news.",
                "Identify the type of news based on following headlines.",
            ]),
            options_header: strings(&["Options", "Possible categories"]),
            demo_indicator: strings(&["Example", "Demo"]),
            input_indicator: strings(&["Headline", "Input"]),
            kv_separator: strings(&[":", ")"]),
            demo_separator: strings(&["\n", "###"]),
            label_keyword: "Category".into(),
        }
    }
}

impl SweepAxes {
    pub fn axis(&self, name: &str) -> Result<&[String]> {
        Ok(match name {
            "instruction" => &self.instruction,
            "options_header" => &self.options_header,
            "demo_indicator" => &self.demo_indicator,
            "input_indicator" => &self.input_indicator,
            "kv_separator" => &self.kv_separator,
            "demo_separator" => &self.demo_separator,
            other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        })
    }

    pub fn axes(&self) -> [&[String]; 6] {
        AXIS_NAMES.map(|n| self.axis(n).expect("known axis"))
    }

    pub fn size(&self) -> usize {
        self.axes().iter().map(|a| a.len()).product()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in AXIS_NAMES.iter().zip(self.axes()) {
            if axis.is_empty() {
                return Err(Error::Config(format!("sweep axis {name:?} is empty")));
            }
            let mut sorted = axis.to_vec();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != axis.len() {
                return Err(Error::Config(format!("sweep axis {name:?} repeats a choice")));
            }
        }
        Ok(())
    }
}

/// One sweep element: the index of the chosen value on every axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub choices: [usize; 6],
    pub template: TemplateSpec,
}

fn build_template(axes: &SweepAxes, c: [usize; 6]) -> TemplateSpec {
    let [instr, opts, demo, input, kv, sep] = axes.axes();
    let kv = &kv[c[4]];
    let sep = &sep[c[5]];
    let separator = if sep.trim().is_empty() {
        sep.clone()
    } else {
        format!("\n{sep}\n")
    };
    TemplateSpec {
        style: TemplateStyle::Handwritten,
        segments: vec![
            Segment::Literal(instr[c[0]].clone()),
            Segment::Literal(format!("{}{kv}", opts[c[1]])),
            Segment::Slot(SlotKind::Options),
            Segment::Slot(SlotKind::Demos),
            Segment::Slot(SlotKind::Query),
        ],
        demo_format: DemoFormat {
            demo: Marker::Literal(demo[c[2]].clone()),
            input: Marker::Literal(format!("{}{kv}", input[c[3]])),
            label: Marker::Literal(format!("{}{kv}", axes.label_keyword)),
            separator,
        },
    }
}

/// Cartesian product of the axes, last axis varying fastest.
pub fn generate_sweep(axes: &SweepAxes) -> Result<Vec<SweepPoint>> {
    axes.validate()?;
    let sizes = axes.axes().map(|a| a.len());
    let mut out = Vec::with_capacity(axes.size());
    for flat in 0..axes.size() {
        let mut choices = [0; 6];
        let mut rest = flat;
        for i in (0..6).rev() {
            choices[i] = rest % sizes[i];
            rest /= sizes[i];
        }
        out.push(SweepPoint {
            choices,
            template: build_template(axes, choices),
        });
    }
    Ok(out)
}

/// Accuracy (a fraction) measured for one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub choices: [usize; 6],
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEffect {
    pub label: String,
    pub axis: String,
    /// `accuracy(b) - accuracy(a)` in percentage points, one per pair.
    pub deltas: Vec<f64>,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// The range of deltas crosses zero.
    pub non_monotonic: bool,
}

fn display(v: &str) -> String {
    v.escape_default().to_string()
}

/// Pairs results that differ only on `axis`, where one has `a` and the other `b`.
pub fn edit_effect(results: &[SweepResult], axes: &SweepAxes, axis: &str, a: &str, b: &str) -> Result<EditEffect> {
    let values = axes.axis(axis)?;
    let pos = AXIS_NAMES.iter().position(|n| *n == axis).expect("known axis");
    let find = |v: &str| {
        values
            .iter()
            .position(|x| x == v)
            .ok_or_else(|| Error::Config(format!("{v:?} is not a choice on axis {axis:?}")))
    };
    let (ia, ib) = (find(a)?, find(b)?);
    let mut deltas = Vec::new();
    for ra in results.iter().filter(|r| r.choices[pos] == ia) {
        let mut want = ra.choices;
        want[pos] = ib;
        if let Some(rb) = results.iter().find(|r| r.choices == want) {
            deltas.push((rb.accuracy - ra.accuracy) * 100.0);
        }
    }
    if deltas.is_empty() {
        return Err(Error::Input(format!("no result pairs differ only on {axis:?}")));
    }
    let min = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let max = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    Ok(EditEffect {
        label: format!("\"{}\" to \"{}\"", display(a), display(b)),
        axis: axis.to_string(),
        min,
        mean,
        max,
        non_monotonic: min < 0.0 && max > 0.0,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_96_distinct_templates() {
        let axes = SweepAxes::default();
        let sweep = generate_sweep(&axes).unwrap();
        assert_eq!(sweep.len(), 96);
        for (i, p) in sweep.iter().enumerate() {
            assert!(p.template.validate().is_ok());
            for q in &sweep[i + 1..] {
                assert_ne!(p.template, q.template);
            }
        }
        assert_eq!(sweep, generate_sweep(&axes).unwrap());
    }

    #[test]
    fn single_choice_axes() {
        let axes = SweepAxes {
            instruction: strings(&["Go."]),
            options_header: strings(&["Options"]),
            demo_indicator: strings(&["Example"]),
            input_indicator: strings(&["Input"]),
            kv_separator: strings(&[":"]),
            demo_separator: strings(&["\n"]),
            label_keyword: "Category".into(),
        };
        assert_eq!(generate_sweep(&axes).unwrap().len(), 1);
        let empty = SweepAxes {
            kv_separator: vec![],
            ..axes.clone()
        };
        assert!(generate_sweep(&empty).is_err());
    }

    #[test]
    fn edit_pairs_and_labels() {
        let axes = SweepAxes::default();
        let results: Vec<SweepResult> = generate_sweep(&axes)
            .unwrap()
            .into_iter()
            .map(|p| SweepResult {
                choices: p.choices,
                accuracy: 0.5,
            })
            .collect();
        let e = edit_effect(&results, &axes, "input_indicator", "Headline", "Input").unwrap();
        assert_eq!(e.deltas.len(), 48);
        assert_eq!(e.label, "\"Headline\" to \"Input\"");
        assert!(e.deltas.iter().all(|d| *d == 0.0));
        assert!(!e.non_monotonic);
        let e = edit_effect(&results, &axes, "demo_separator", "\n", "###").unwrap();
        assert_eq!(e.label, "\"\\n\" to \"###\"");
        let e = edit_effect(&results, &axes, "instruction", &axes.instruction[0], &axes.instruction[2]).unwrap();
        assert_eq!(e.deltas.len(), 32);
        assert!(edit_effect(&results, &axes, "nope", "a", "b").is_err());
        assert!(edit_effect(&results, &axes, "kv_separator", ":", ";").is_err());
    }

    #[test]
    fn non_monotonic_flag() {
        let axes = SweepAxes::default();
        let results: Vec<SweepResult> = generate_sweep(&axes)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| SweepResult {
                choices: p.choices,
                accuracy: if p.choices[4] == 1 && i % 3 == 0 { 0.9 } else if p.choices[4] == 1 { 0.1 } else { 0.5 },
            })
            .collect();
        let e = edit_effect(&results, &axes, "kv_separator", ":", ")").unwrap();
        assert!(e.non_monotonic);
        assert!((e.max - 40.0).abs() < 1e-9);
        assert!((e.min + 40.0).abs() < 1e-9);
    }
}
