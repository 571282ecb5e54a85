use std::path::{Path, PathBuf};

use ridgegrok_core::grokking::{ExperimentSpec, SweepParam, SweepSpec};
use ridgegrok_core::ridge::Engine;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Shipped experiment presets, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1-left", include_str!("../presets/fig1-left.json")),
    ("fig1-right", include_str!("../presets/fig1-right.json")),
    ("fig2-lambda", include_str!("../presets/fig2-lambda.json")),
    ("fig2-n", include_str!("../presets/fig2-n.json")),
    ("fig2-m", include_str!("../presets/fig2-m.json")),
    ("fig2-nu", include_str!("../presets/fig2-nu.json")),
    ("fig3-lambda", include_str!("../presets/fig3-lambda.json")),
    ("fig3-n", include_str!("../presets/fig3-n.json")),
    ("fig3-m", include_str!("../presets/fig3-m.json")),
    ("fig3-nu", include_str!("../presets/fig3-nu.json")),
    ("fig4-lambda", include_str!("../presets/fig4-lambda.json")),
    ("fig4-n", include_str!("../presets/fig4-n.json")),
    ("fig4-m", include_str!("../presets/fig4-m.json")),
    ("fig4-nu", include_str!("../presets/fig4-nu.json")),
];

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub param: SweepParam,
    #[serde(default)]
    pub values: Vec<f64>,
}

/// One JSON experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub experiment: ExperimentSpec,
    /// Base seed; run `i` of cell `j` uses a seed derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Runs per cell.
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub engine: Option<Engine>,
    pub out: Option<PathBuf>,
}

pub enum Source<'a> {
    File(&'a Path),
    Preset(&'a str),
}

pub fn preset_text(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!(
                "unknown preset `{name}`; available: {}",
                names.join(", ")
            ))
        })
}

/// Parses a document, naming the offending field and its position on failure.
pub fn parse(text: &str, origin: &str) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::Config(format!("{origin}: {inner}"))
        } else {
            CliError::Config(format!("{origin}: field `{path}`: {inner}"))
        }
    })
}

impl ExperimentConfig {
    pub fn load(source: Source<'_>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match source {
            Source::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                parse(&text, &path.display().to_string())?
            }
            Source::Preset(name) => parse(preset_text(name)?, name)?,
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(runs) = overrides.runs {
            self.runs = runs;
        }
        if let Some(engine) = overrides.engine {
            self.experiment.engine = engine;
        }
        if let Some(out) = &overrides.out {
            self.out = Some(out.clone());
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.runs == 0 {
            return Err(CliError::Config("runs must be at least 1".into()));
        }
        match self.sweep_spec() {
            Some(spec) => spec.validate(),
            None => self.experiment.validate(),
        }
        .map_err(CliError::from)
    }

    /// The sweep, when the document has a non-empty grid.
    pub fn sweep_spec(&self) -> Option<SweepSpec> {
        let block = self.sweep.as_ref().filter(|b| !b.values.is_empty())?;
        Some(SweepSpec {
            base: self.experiment.clone(),
            param: block.param,
            values: block.values.clone(),
            runs: self.runs,
            base_seed: self.seed,
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            PathBuf::from("out").join(self.name.clone().unwrap_or_else(|| "experiment".into()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::load(Source::Preset(name), &Overrides::default()).unwrap();
            assert_eq!(cfg.name.as_deref(), Some(*name));
        }
    }

    #[test]
    fn unknown_field_is_named() {
        let text = r#"{"experiment": {"kind": "ridge-zero", "n": 2, "m": 3, "step_size": 1,
            "weight_decay": 0.1, "init_variance": 1, "bogus": 1}}"#;
        match parse(text, "cfg.json") {
            Err(CliError::Config(msg)) => {
                assert!(msg.contains("bogus"), "{msg}");
                assert!(msg.contains("line 2"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_names_the_path() {
        let text = r#"{"experiment": {"kind": "ridge-zero", "n": 2, "m": 3, "step_size": "x",
            "weight_decay": 0.1, "init_variance": 1}}"#;
        let Err(CliError::Config(msg)) = parse(text, "cfg.json") else {
            panic!("expected a config error");
        };
        assert!(msg.contains("experiment.step_size"), "{msg}");
    }

    #[test]
    fn overrides_take_precedence() {
        let o = Overrides {
            seed: Some(9),
            runs: Some(2),
            engine: Some(Engine::Naive),
            out: Some("x".into()),
        };
        let cfg = ExperimentConfig::load(Source::Preset("fig2-lambda"), &o).unwrap();
        assert_eq!((cfg.seed, cfg.runs, cfg.experiment.engine), (9, 2, Engine::Naive));
        assert_eq!(cfg.out_dir(), PathBuf::from("x"));
    }
}
