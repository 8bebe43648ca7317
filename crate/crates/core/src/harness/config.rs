//! Experiment configuration, read from a single JSON document.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibrator::OptimOptions;
use crate::emulator::{recommended_runs, Emulator, GpOptions};
use crate::error::{Error, Result};
use crate::model::{builtin, ComputerModel, DesignSource, GenConfig, TrueProcess};
use crate::subsampler::{Criterion, PilotWeight, SamplingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EmulatorSpec {
    /// Evaluate the simulator directly.
    Passthrough,
    /// Gaussian-process emulator fitted on `m` maximin Latin-hypercube runs;
    /// `m` defaults to `10(d + q)`.
    Gp {
        #[serde(default)]
        m: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Uniform,
    Lhd,
}

/// The physical process of synthetic data: a named process or the simulator
/// at a parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSpec {
    Named(String),
    Theta(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSpec {
    Synthetic {
        n: usize,
        sigma: f64,
        truth: TruthSpec,
        #[serde(default = "default_design")]
        design: DesignKind,
        /// Draw the data once and reuse it in every replication.
        #[serde(default)]
        fixed: bool,
    },
    Csv {
        path: PathBuf,
        x_columns: Vec<String>,
        y_column: String,
    },
}

fn default_design() -> DesignKind {
    DesignKind::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    #[serde(default = "default_emulator")]
    pub emulator: EmulatorSpec,
    pub data: DataSpec,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<Criterion>,
    pub r_grid: Vec<f64>,
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// Where and how a run executes; neither affects results, so both stay
    /// out of serialized reports.
    #[serde(default = "default_out", skip_serializing)]
    pub out_dir: PathBuf,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    #[serde(default = "default_true")]
    pub include_pilot: bool,
    #[serde(default = "default_pilot_weight")]
    pub pilot_weight: PilotWeight,
    /// Fit the full data once per data set for the `rmse_f` metric.
    #[serde(default = "default_true")]
    pub full_fit: bool,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub optim: OptimOptions,
}

fn default_emulator() -> EmulatorSpec {
    EmulatorSpec::Passthrough
}
fn default_criteria() -> Vec<Criterion> {
    Criterion::ALL.to_vec()
}
fn default_rho() -> f64 {
    0.2
}
fn default_replications() -> usize {
    100
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_level() -> f64 {
    0.95
}
fn default_true() -> bool {
    true
}
fn default_pilot_weight() -> PilotWeight {
    PilotWeight::Union
}
fn default_retries() -> usize {
    3
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file; a relative CSV path is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let DataSpec::Csv { path: csv, .. } = &mut cfg.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let model = builtin(&self.model)?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.r_grid.is_empty() {
            return Err(Error::Config("r_grid must not be empty".into()));
        }
        if self.criteria.is_empty() {
            return Err(Error::Config("criteria must not be empty".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level {} must lie in (0, 1)", self.ci_level)));
        }
        if let Some(t) = &self.theta_star {
            if t.len() != model.q() {
                return Err(Error::Config(format!(
                    "theta_star has {} entries, model {} has q = {}",
                    t.len(),
                    self.model,
                    model.q()
                )));
            }
        }
        if let DataSpec::Synthetic { truth, sigma, .. } = &self.data {
            if !(*sigma >= 0.0) {
                return Err(Error::Config(format!("sigma {sigma} must be nonnegative")));
            }
            self.truth_process(&model, truth)?;
        }
        for &r in &self.r_grid {
            self.sampling(Criterion::Mvc, r, 0).validate()?;
        }
        Ok(())
    }

    pub fn computer_model(&self) -> Result<Arc<dyn ComputerModel>> {
        builtin(&self.model)
    }

    fn truth_process(&self, model: &Arc<dyn ComputerModel>, truth: &TruthSpec) -> Result<TrueProcess> {
        match truth {
            TruthSpec::Named(name) if name == "example2" => Ok(TrueProcess::Example2),
            TruthSpec::Named(name) => Err(Error::Config(format!(
                "unknown true process `{name}`; give `example2` or a parameter vector"
            ))),
            TruthSpec::Theta(theta) => {
                crate::model::check_in_box("truth", theta, model.theta_box())?;
                Ok(TrueProcess::Model {
                    model: model.clone(),
                    theta: theta.clone(),
                })
            }
        }
    }

    /// Data generation settings for a data seed, in synthetic mode.
    pub fn generator(&self, seed: u64) -> Result<Option<(GenConfig, usize)>> {
        let DataSpec::Synthetic {
            n,
            sigma,
            truth,
            design,
            ..
        } = &self.data
        else {
            return Ok(None);
        };
        let model = self.computer_model()?;
        Ok(Some((
            GenConfig {
                truth: self.truth_process(&model, truth)?,
                omega: model.omega().to_vec(),
                sigma: *sigma,
                seed,
                design: match design {
                    DesignKind::Uniform => DesignSource::Uniform,
                    DesignKind::Lhd => DesignSource::LatinHypercube,
                },
            },
            *n,
        )))
    }

    pub fn build_emulator(&self) -> Result<Emulator> {
        let model = self.computer_model()?;
        match &self.emulator {
            EmulatorSpec::Passthrough => Ok(Emulator::pass_through(model)),
            EmulatorSpec::Gp { m, seed } => {
                let m = m.unwrap_or_else(|| recommended_runs(model.d(), model.q()));
                Emulator::fit_gp(model.as_ref(), m, *seed, &GpOptions::default())
            }
        }
    }

    pub fn sampling(&self, criterion: Criterion, r: f64, seed: u64) -> SamplingConfig {
        SamplingConfig {
            criterion,
            r,
            r0: self.r0,
            rho: self.rho,
            seed,
            include_pilot: self.include_pilot,
            pilot_weight: self.pilot_weight,
            optim: self.optim.clone(),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "model": "example1",
        "data": {"source": "synthetic", "n": 1000, "sigma": 0.2, "truth": [0.2, 0.3]},
        "r_grid": [100, 200],
        "theta_star": [0.2, 0.3],
        "seed": 5
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(EXAMPLE).unwrap();
        assert_eq!(cfg.criteria, Criterion::ALL.to_vec());
        assert_eq!(cfg.rho, 0.2);
        assert_eq!(cfg.replications, 100);
        assert_eq!(cfg.emulator, EmulatorSpec::Passthrough);
        assert!(cfg.include_pilot);
        assert_eq!(cfg.max_retries, 3);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            EXAMPLE.replace("\"seed\": 5", "\"seed\": 5, \"replications\": 0"),
            EXAMPLE.replace("[100, 200]", "[]"),
            EXAMPLE.replace("\"seed\": 5", "\"seed\": 5, \"rho\": 1.5"),
            EXAMPLE.replace("\"theta_star\": [0.2, 0.3]", "\"theta_star\": [0.2]"),
            EXAMPLE.replace("example1", "example9"),
            EXAMPLE.replace("[0.2, 0.3]}", "[0.9, 0.3]}"),
            EXAMPLE.replace("\"seed\": 5", "\"seed\": 5, \"typo\": 1"),
        ];
        for text in bad {
            assert!(ExperimentConfig::from_json(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn named_truth_and_gp_emulator() {
        let text = r#"{
            "model": "example2",
            "emulator": {"mode": "gp", "m": 60},
            "data": {"source": "synthetic", "n": 500, "sigma": 0.1, "truth": "example2", "design": "lhd"},
            "criteria": ["mv"],
            "r_grid": [50]
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.emulator, EmulatorSpec::Gp { m: Some(60), seed: 0 });
        let (gen, n) = cfg.generator(1).unwrap().unwrap();
        assert_eq!(n, 500);
        assert!(matches!(gen.truth, TrueProcess::Example2));
    }

    #[test]
    fn csv_source_parses() {
        let text = r#"{
            "model": "greenshields",
            "data": {"source": "csv", "path": "traffic.csv", "x_columns": ["density"], "y_column": "speed"},
            "r_grid": [500]
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert!(cfg.generator(0).unwrap().is_none());
    }
}
