//! Experiment configuration files.
//!
//! One TOML file fully determines one experiment: model, noise law and
//! master seed, ensemble size, requested statistics and output location.
//! The SHA-256 of the canonical serialisation is stamped on every CSV the
//! experiment emits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::model::{classify_regime, CaseTag, ModelSpec, RegimeReport};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::oracle::PhiSpec;

/// Statistics an experiment can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Fraction of paths with `|x_N|` below a threshold.
    FractionBelow,
    LoglogSlope,
    ComparisonRatioG,
    ComparisonRatioF,
    ExactRate,
    Oscillation,
    Martingale,
}

impl Statistic {
    pub fn as_str(&self) -> &'static str {
        match self {
            Statistic::FractionBelow => "fraction_below",
            Statistic::LoglogSlope => "loglog_slope",
            Statistic::ComparisonRatioG => "comparison_ratio_g",
            Statistic::ComparisonRatioF => "comparison_ratio_f",
            Statistic::ExactRate => "exact_rate",
            Statistic::Oscillation => "oscillation",
            Statistic::Martingale => "martingale",
        }
    }

    /// Statistics whose theory needs every moment of the noise to be finite.
    pub fn needs_all_moments(&self) -> bool {
        matches!(self, Statistic::ExactRate | Statistic::Oscillation)
    }

    /// Regimes in which the statistic has a predicted limit.
    fn compatible_with(&self, tag: CaseTag) -> bool {
        match self {
            Statistic::FractionBelow | Statistic::Martingale => true,
            Statistic::LoglogSlope => {
                matches!(tag, CaseTag::CaseI | CaseTag::CaseIi | CaseTag::CaseIii)
            }
            Statistic::ComparisonRatioG | Statistic::Oscillation => {
                matches!(tag, CaseTag::CaseI | CaseTag::CaseIi)
            }
            Statistic::ComparisonRatioF | Statistic::ExactRate => tag == CaseTag::CaseIii,
        }
    }
}

/// Noise law plus the master seed of its streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn spec(&self) -> NoiseSpec {
        NoiseSpec {
            kind: self.kind,
            params: self.params.clone(),
        }
    }
}

/// Parameters of an Itô-formula scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoConfig {
    pub phi: PhiSpec,
    pub f: f64,
    pub g: f64,
    pub h_grid: Vec<f64>,
}

fn default_name() -> String {
    "experiment".to_string()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_threshold() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Experiment id used in report rows and file names.
    #[serde(default = "default_name")]
    pub name: String,
    pub n_paths: u64,
    pub n_steps: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub statistics: Vec<Statistic>,
    /// Run statistics even where the regime or noise makes them meaningless.
    #[serde(default)]
    pub force: bool,
    /// Exponent of the `|x|^λ` accumulator; defaults to the regime's λ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Exponent of the per-decade statistic `|x_n| n^{1/μ}`; defaults to the
    /// regime's λ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Threshold for [`Statistic::FractionBelow`].
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    pub model: ModelSpec,
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ito: Option<ItoConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "config".into());
            LabError::config(field, e.message().to_string())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::config("config", e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialisation.
    pub fn config_hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    /// Check every field and the compatibility of the requested statistics
    /// with the model's regime and noise law. Returns the regime report and
    /// any warnings that `force` overrode.
    pub fn validate(&self) -> Result<(RegimeReport, Vec<String>)> {
        if self.n_paths == 0 {
            return Err(LabError::config("n_paths", "must be at least 1"));
        }
        if self.n_steps == 0 {
            return Err(LabError::config("n_steps", "must be at least 1"));
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(LabError::config(name, "must be positive"));
                }
            }
        }
        if !(self.threshold > 0.0) {
            return Err(LabError::config("threshold", "must be positive"));
        }
        self.model.validate()?;
        let noise = self.noise.spec();
        noise.validate()?;
        if let Some(ito) = &self.ito {
            ito.phi.validate()?;
            if ito.h_grid.is_empty() || ito.h_grid.iter().any(|&h| !(h > 0.0)) {
                return Err(LabError::config(
                    "ito.h_grid",
                    "must be a non-empty list of positive step sizes",
                ));
            }
            if ito.h_grid.windows(2).any(|w| w[1] >= w[0]) {
                return Err(LabError::config(
                    "ito.h_grid",
                    "must be strictly decreasing",
                ));
            }
            if ito.f.abs() > 1.0 || ito.g.abs() > 1.0 {
                return Err(LabError::config("ito.f", "|f| and |g| must not exceed 1"));
            }
        }
        let report = classify_regime(&self.model)?;
        let mut problems = Vec::new();
        for s in &self.statistics {
            if !s.compatible_with(report.case_tag) {
                problems.push(format!(
                    "statistic `{}` has no prediction in regime {}",
                    s.as_str(),
                    report.case_tag.as_str()
                ));
            }
            if s.needs_all_moments() && !noise.assumption2_ok() {
                problems.push(format!(
                    "statistic `{}` assumes all noise moments are finite, which {} noise violates",
                    s.as_str(),
                    noise.kind.as_str()
                ));
            }
        }
        if !problems.is_empty() && !self.force {
            return Err(LabError::config(
                "statistics",
                format!("{} (use --force to run anyway)", problems.join("; ")),
            ));
        }
        Ok((report, problems))
    }

    /// λ of the `|x|^λ` accumulator.
    pub fn resolved_lambda(&self, report: &RegimeReport) -> f64 {
        self.lambda.or(report.lambda).unwrap_or(1.0)
    }

    /// μ of the per-decade extremes.
    pub fn resolved_mu(&self, report: &RegimeReport) -> f64 {
        self.mu.or(report.lambda).unwrap_or(self.model.mu_g)
    }

    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }
}
