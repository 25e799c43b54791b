use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use iclmu::data::{Example, SplitRole, SyntheticSpec};

pub const OOS_LABEL: &str = "oos";

fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let mut body = String::new();
    for e in examples {
        body.push_str(&serde_json::to_string(e)?);
        body.push('\n');
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn examples(spec: &SyntheticSpec, per_class: usize, seed: u64, oos: Option<usize>) -> Result<Vec<Example>> {
    let mut out = spec.split("x", SplitRole::Train, per_class, seed)?.examples;
    let last = spec.label(spec.classes - 1);
    match oos {
        Some(keep) => {
            let (mut hidden, shown): (Vec<_>, Vec<_>) = out.into_iter().partition(|e| e.label == last);
            hidden.truncate(keep);
            hidden.iter_mut().for_each(|e| e.label = OOS_LABEL.into());
            out = shown.into_iter().chain(hidden).collect();
        }
        None => out.retain(|e| e.label != last),
    }
    Ok(out)
}

/// Writes a synthetic dataset, its manifest and a matching run config under `dir`.
pub fn generate(dir: &Path, seed: u64) -> Result<()> {
    let data = dir.join("data");
    fs::create_dir_all(&data).with_context(|| format!("creating {}", data.display()))?;
    let mut manifest = String::new();
    let mut entry = |name: &str, role: &str, file: &str| {
        manifest.push_str(&format!(
            "[[split]]\nname = \"{name}\"\nrole = \"{role}\"\npath = \"{file}\"\nprofile = \"intent\"\n\n"
        ));
    };
    for (t, task) in ["synth-a", "synth-b"].iter().enumerate() {
        let spec = SyntheticSpec {
            vocab_seed: seed.wrapping_add(100 + t as u64),
            ..SyntheticSpec::default()
        };
        for (part, s) in [("inputs", 1), ("demos", 2)] {
            let file = format!("{task}-{part}.jsonl");
            write_jsonl(&data.join(&file), &spec.split("x", SplitRole::Train, 8, seed ^ s)?.examples)?;
            entry(&format!("{task}-{part}"), "train", &file);
        }
    }
    let target = SyntheticSpec {
        classes: 7,
        vocab_seed: seed.wrapping_add(7),
        ..SyntheticSpec::default()
    };
    for (name, role, per_class, s, oos) in [
        ("target-train", "train", 5, 3, None),
        ("target-val", "validation", 3, 4, Some(6)),
        ("target-test", "test", 4, 5, Some(8)),
    ] {
        let file = format!("{name}.jsonl");
        write_jsonl(&data.join(&file), &examples(&target, per_class, seed ^ s, oos)?)?;
        entry(name, role, &file);
    }
    fs::write(data.join("manifest.toml"), manifest)?;
    let config = format!(
        r#"seed = {seed}
backend = "toy"
dataset_manifest = "data/manifest.toml"
out = "runs"
shots = 2

[retrieval]
k = 6
lambda = 0.5

[[tasks]]
name = "synth-a"
inputs = "synth-a-inputs"
demos = "synth-a-demos"

[[tasks]]
name = "synth-b"
inputs = "synth-b-inputs"
demos = "synth-b-demos"

[warmup]
steps = 150
batch_size = 4
learning_rate = 0.05

[warmup.optimizer]
kind = "adam"
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8

[eval]
split = "target-test"
demos = "target-train"
validation = "target-val"
oos_label = "{OOS_LABEL}"
oos_kind = "ood-oos"
draws = 3
max_decode_len = 4
"#
    );
    fs::write(dir.join("iclmu.toml"), config)?;
    Ok(())
}
