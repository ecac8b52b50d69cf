//! Run configuration: JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use facdiff_core::oracle::MixtureFile;
use facdiff_core::{Condition, ConditionPayload, DecompositionSpec, UpdateKind};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_RESOLUTION: [usize; 3] = [3, 64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Remote,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Oracle => "oracle",
            BackendKind::Remote => "remote",
        }
    }
}

/// Mixture definitions, inline or in a separate JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MixtureSource {
    Path(PathBuf),
    Inline(MixtureFile),
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub kind: UpdateKind,
    /// `[C, H, W]`. Remote runs default to the served resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[usize; 3]>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            kind: UpdateKind::Ddim,
            resolution: None,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub decomposition: DecompositionSpec,
    /// One per component, in component order.
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixtures: Option<MixtureSource>,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

/// Flag values that replace config values when given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(vec![format!("config {}: {e}", path.display())])
        })?;
        for c in &mut cfg.conditions {
            if c.id.is_empty() {
                c.id = match &c.payload {
                    ConditionPayload::Prompt(p) | ConditionPayload::Mixture(p) => p.clone(),
                };
            }
        }
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, base))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.steps {
            self.sampler.steps = n;
        }
        if let Some(b) = o.backend {
            self.backend = b;
        }
        if let Some(e) = &o.endpoint {
            self.endpoint = Some(e.clone());
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    /// Checks that need neither files nor the network.
    pub fn static_problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let expected = self.decomposition.component_count();
        if self.conditions.len() != expected {
            p.push(format!(
                "{} decomposition has {expected} components but {} conditions were given",
                self.decomposition.kind_name(),
                self.conditions.len()
            ));
        }
        if let Some(r) = self.sampler.resolution {
            if r.iter().any(|&d| d == 0) {
                p.push(format!("sampler.resolution must be non-empty, got {r:?}"));
            }
            p.extend(self.decomposition.problems(r[0]));
        } else if self.backend == BackendKind::Oracle {
            p.extend(self.decomposition.problems(DEFAULT_RESOLUTION[0]));
        }
        if self.sampler.steps == 0 {
            p.push("sampler.steps must be >= 1".into());
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if !c.guidance.is_finite() {
                p.push(format!("conditions[{i}].guidance must be finite"));
            }
            match (self.backend, &c.payload) {
                (BackendKind::Oracle, ConditionPayload::Prompt(_)) => p.push(format!(
                    "conditions[{i}] is a prompt but the oracle backend needs a mixture id"
                )),
                (BackendKind::Remote, ConditionPayload::Mixture(_)) => p.push(format!(
                    "conditions[{i}] is a mixture id but the remote backend needs a prompt"
                )),
                _ => {}
            }
        }
        if self.backend == BackendKind::Oracle && self.mixtures.is_none() {
            p.push("the oracle backend needs a \"mixtures\" section".into());
        }
        p
    }

    /// Run shape for the oracle backend, or the configured shape if any.
    pub fn local_shape(&self) -> (usize, usize, usize) {
        let [c, h, w] = self.sampler.resolution.unwrap_or(DEFAULT_RESOLUTION);
        (c, h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> RunConfig {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(
            r#"{"decomposition":{"kind":"hybrid","sigma":2.0},
                "conditions":[{"mixture":"A"},{"mixture":"B"}],
                "mixtures":"m.json"}"#,
        );
        assert_eq!(c.backend, BackendKind::Oracle);
        assert_eq!(c.sampler.steps, 100);
        assert_eq!(c.sampler.kind, UpdateKind::Ddim);
        assert_eq!(c.seed, 0);
        assert_eq!(c.out, PathBuf::from("out"));
        assert_eq!(c.mixtures, Some(MixtureSource::Path("m.json".into())));
        assert!(c.static_problems().is_empty());
    }

    #[test]
    fn prompts_with_guidance() {
        let c = parse(
            r#"{"decomposition":{"kind":"gray_color"},"backend":"remote",
                "conditions":[{"prompt":"a cat","guidance":7.5},{"prompt":"a dog"}]}"#,
        );
        assert_eq!(c.conditions[0].payload, ConditionPayload::Prompt("a cat".into()));
        assert_eq!(c.conditions[0].guidance, 7.5);
        assert_eq!(c.conditions[1].guidance, 1.0);
        assert!(c.static_problems().is_empty());
    }

    #[test]
    fn every_problem_is_listed() {
        let c = parse(
            r#"{"decomposition":{"kind":"hybrid","sigma":-1.0,"ksize":4},
                "conditions":[{"prompt":"x"}],
                "sampler":{"steps":0}}"#,
        );
        let p = c.static_problems();
        assert_eq!(p.len(), 6, "{p:#?}");
        assert!(p.iter().any(|m| m.contains("2 components but 1 conditions")));
        assert!(p.iter().any(|m| m.contains("sigma must be positive")));
        assert!(p.iter().any(|m| m.contains("ksize")));
        assert!(p.iter().any(|m| m.contains("steps")));
        assert!(p.iter().any(|m| m.contains("oracle backend needs a mixture id")));
        assert!(p.iter().any(|m| m.contains("\"mixtures\"")));
    }

    #[test]
    fn unknown_fields_rejected() {
        let r: Result<RunConfig, _> = serde_json::from_str(
            r#"{"decomposition":{"kind":"gray_color"},"conditions":[],"sede":3}"#,
        );
        assert!(r.is_err());
    }

    #[test]
    fn overrides_win() {
        let mut c = parse(
            r#"{"decomposition":{"kind":"gray_color"},"conditions":[],"seed":1,"out":"a"}"#,
        );
        c.apply(&Overrides {
            seed: Some(9),
            steps: Some(7),
            backend: Some(BackendKind::Remote),
            endpoint: Some("http://h".into()),
            out: Some("b".into()),
        });
        assert_eq!(c.seed, 9);
        assert_eq!(c.sampler.steps, 7);
        assert_eq!(c.backend, BackendKind::Remote);
        assert_eq!(c.endpoint.as_deref(), Some("http://h"));
        assert_eq!(c.out, PathBuf::from("b"));
    }
}
