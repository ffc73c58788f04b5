//! Experiment configuration: one JSON file, every field defaulted.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sbp_core::bgan::BganHyper;
use sbp_core::classic::ClassicHyper;
use sbp_core::correct::CorrectorKind;
use sbp_core::data::{DatasetSpec, Scope};
use sbp_core::phi::{PhiVariant, PHI_TOKENS};

use crate::error::{usage, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasConfig {
    /// Exponent on the class frequencies in the global prior bias.
    pub a: f64,
    pub eps_glo: f64,
    /// Margin the correction bias leaves between the target and every rival.
    pub eps_c: f64,
    pub phi_variant: PhiVariant,
    /// When off, the prior bias is all zeros.
    pub use_global_bias: bool,
    /// Overrides `dataset.scope` when set.
    pub scope: Option<Scope>,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            eps_glo: 1e-3,
            eps_c: 1e-4,
            phi_variant: PhiVariant::Trans1,
            use_global_bias: true,
            scope: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k_values: Vec<usize>,
    pub top_t_values: Vec<usize>,
    pub correctors: Vec<CorrectorKind>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_values: vec![1, 3, 5, 8],
            top_t_values: vec![1, 3, 5],
            correctors: CorrectorKind::ALL.to_vec(),
        }
    }
}

/// Whether the classic model is trained before the generator (and frozen)
/// or alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Gradual,
    Integrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub classic: ClassicHyper,
    pub bgan: BganHyper,
    pub bias: BiasConfig,
    pub eval: EvalConfig,
    pub mode: Mode,
    /// Run seed. It also seeds the dataset, so `dataset.seed` is overwritten.
    pub seed: u64,
    /// Seeds used by `compare`.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            classic: ClassicHyper::default(),
            bgan: BganHyper::default(),
            bias: BiasConfig::default(),
            eval: EvalConfig::default(),
            mode: Mode::Gradual,
            seed: 1,
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    /// Applies the seed and scope overrides, then validates.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        self.dataset.seed = self.seed;
        if let Some(scope) = self.bias.scope {
            self.dataset.scope = scope;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate().map_err(|e| usage(e.to_string()))?;
        self.bgan.validate().map_err(|e| usage(format!("bgan: {e}")))?;
        let c = &self.classic;
        if !(c.lr > 0.0 && c.lr.is_finite()) {
            return Err(usage(format!("classic.lr must be positive, got {}", c.lr)));
        }
        if c.batch == 0 {
            return Err(usage("classic.batch must be at least 1"));
        }
        let b = &self.bias;
        if !(b.a >= 0.0 && b.a.is_finite()) {
            return Err(usage(format!("bias.a must be finite and >= 0, got {}", b.a)));
        }
        if !(b.eps_glo > 0.0 && b.eps_glo.is_finite()) {
            return Err(usage(format!("bias.eps_glo must be positive, got {}", b.eps_glo)));
        }
        if !(b.eps_c > 0.0 && b.eps_c.is_finite()) {
            return Err(usage(format!("bias.eps_c must be positive, got {}", b.eps_c)));
        }
        if b.phi_variant != PhiVariant::Fc && self.dataset.feature_dim() % PHI_TOKENS != 0 {
            return Err(usage(format!(
                "bias.phi_variant {:?} needs a feature dimension divisible by {PHI_TOKENS}, got {}",
                b.phi_variant,
                self.dataset.feature_dim()
            )));
        }
        let e = &self.eval;
        if e.k_values.is_empty() || e.k_values.contains(&0) {
            return Err(usage("eval.k_values must be a non-empty list of positive integers"));
        }
        let m = self.dataset.m_classes;
        if let Some(t) = e.top_t_values.iter().find(|&&t| t == 0 || t > m) {
            return Err(usage(format!("eval.top_t_values entry {t} outside 1..={m}")));
        }
        if e.correctors.is_empty() {
            return Err(usage("eval.correctors must name at least one corrector"));
        }
        if e.correctors.iter().collect::<HashSet<_>>().len() != e.correctors.len() {
            return Err(usage("eval.correctors lists a corrector twice"));
        }
        if self.seeds.is_empty() {
            return Err(usage("seeds must not be empty"));
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The config as stored inside checkpoints: everything but the output path,
    /// so the same run written to two places yields identical files.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
        let partial = ExperimentConfig::from_json(r#"{"bgan": {"alpha": 0.1}}"#).unwrap();
        assert_eq!(partial.bgan.alpha, 0.1);
        assert_eq!(partial.bgan.lr_g, 1e-4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [r#"{"sede": 3}"#, r#"{"bias": {"epsilon": 1}}"#, r#"{"dataset": {"classes": 4}}"#] {
            let err = ExperimentConfig::from_json(text).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{err}");
        }
        assert!(ExperimentConfig::from_json(r#"{"eval": {"correctors": ["magic"]}}"#).is_err());
    }

    #[test]
    fn out_of_range_values_name_the_field() {
        let cases = [
            (r#"{"bias": {"eps_c": 0}}"#, "bias.eps_c"),
            (r#"{"classic": {"lr": -1}}"#, "classic.lr"),
            (r#"{"eval": {"top_t_values": [30]}}"#, "eval.top_t_values"),
            (r#"{"dataset": {"m_classes": 1}}"#, "m_classes"),
            (r#"{"bgan": {"critic_ratio": 0}}"#, "critic_ratio"),
            (r#"{"dataset": {"ctx_dim": 12}}"#, "phi_variant"),
        ];
        for (text, field) in cases {
            let err = ExperimentConfig::from_json(text).unwrap().resolve(None, None).unwrap_err();
            assert_eq!(err.exit_code(), 1);
            assert!(err.to_string().contains(field), "{text}: {err}");
        }
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::from_json(r#"{"bias": {"scope": "entire"}}"#)
            .unwrap()
            .resolve(Some(9), Some("x".into()))
            .unwrap();
        assert_eq!((cfg.seed, cfg.dataset.seed), (9, 9));
        assert_eq!(cfg.dataset.scope, Scope::Entire);
        assert_eq!(cfg.output_dir, PathBuf::from("x"));
        assert!(cfg.snapshot().get("output_dir").is_none());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::default().resolve(None, None).unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_pretty_json()).unwrap(), cfg);
    }
}
