use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain::{validate_model, ChainModel};
use crate::error::{FilterError, Result};
use crate::scheme::{check_applicable, Scheme, SchemeOptions};
use crate::signalpath::step_count;
use crate::wonham::SignVariant;
use crate::zakai::CorrectionSign;

/// Either a path to a model JSON file or the model inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    File { path: PathBuf },
    Inline(ChainModel),
}

impl ModelSource {
    pub fn load(&self) -> Result<ChainModel> {
        match self {
            ModelSource::Inline(m) => Ok(m.clone()),
            ModelSource::File { path } => Ok(serde_json::from_str(&fs::read_to_string(path)?)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub horizon: f64,
    pub dt: f64,
    pub beta: f64,
    pub scheme: Scheme,
    pub correction_sign: CorrectionSign,
    pub sign_variant: SignVariant,
    pub master_seed: u64,
    /// Independent paths averaged by the convergence and adjudication
    /// studies; single-path discrepancies of the order-1/2 schemes are too
    /// noisy to read an order from.
    pub replicas: usize,
    pub halvings: usize,
    pub prediction_horizons: Vec<f64>,
    /// Observation CSV to filter instead of synthesizing one.
    pub observations: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// The telegraph benchmark: `nu = 1`, `beta = 0.5`, `T = 5`, `dt = 1e-3`.
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSource::Inline(ChainModel::telegraph(1.0)),
            horizon: 5.0,
            dt: 1e-3,
            beta: 0.5,
            scheme: Scheme::WonhamIto,
            correction_sign: CorrectionSign::Minus,
            sign_variant: SignVariant::Innovation,
            master_seed: 20_240_601,
            replicas: 8,
            halvings: 3,
            prediction_horizons: vec![0.0, 0.1, 0.5, 1.0, 5.0, 50.0],
            observations: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file. Relative model and observation paths are taken
    /// relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let ModelSource::File { path: p } = &mut config.model {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut config.observations {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn scheme_options(&self) -> SchemeOptions {
        SchemeOptions {
            scheme: self.scheme,
            correction_sign: self.correction_sign,
            sign_variant: self.sign_variant,
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        step_count(self.horizon, self.dt)
    }

    /// Loads the model and checks everything that does not depend on the
    /// subcommand.
    pub fn validate(&self) -> Result<ChainModel> {
        let model = self.model.load()?;
        let report = validate_model(&model);
        if !report.passed() {
            let text: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
            return Err(FilterError::InvalidModel(text.join("; ")));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(FilterError::InvalidParameter(format!("beta must be positive, got {}", self.beta)));
        }
        self.n_steps()?;
        if self.replicas == 0 {
            return Err(FilterError::InvalidParameter("replicas must be at least 1".into()));
        }
        if let Some(h) = self.prediction_horizons.iter().find(|h| !(**h >= 0.0) || !h.is_finite()) {
            return Err(FilterError::InvalidParameter(format!("prediction horizon {h} must be >= 0")));
        }
        check_applicable(&model, self.scheme)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_telegraph_benchmark() {
        let c = ExperimentConfig::default();
        assert_eq!(c.n_steps().unwrap(), 5000);
        let m = c.validate().unwrap();
        assert_eq!(m.telegraph_rate(), Some(1.0));
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);

        let partial: ExperimentConfig = serde_json::from_str(r#"{"dt": 0.002, "scheme": "zakai-langevin", "correction_sign": 1}"#).unwrap();
        assert_eq!(partial.dt, 0.002);
        assert_eq!(partial.correction_sign, CorrectionSign::Plus);
        assert_eq!(partial.horizon, 5.0);

        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"step": 0.1}"#).is_err());
    }

    #[test]
    fn model_file_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let model = ChainModel::telegraph(2.0);
        fs::write(dir.path().join("m.json"), serde_json::to_string(&model).unwrap()).unwrap();
        fs::write(dir.path().join("c.json"), r#"{"model": {"path": "m.json"}}"#).unwrap();
        let c = ExperimentConfig::from_file(&dir.path().join("c.json")).unwrap();
        assert_eq!(c.model.load().unwrap(), model);
    }

    #[test]
    fn validation_failures() {
        let mut c = ExperimentConfig { dt: 0.003, ..Default::default() };
        assert!(c.validate().is_err());
        c.dt = 1e-3;
        c.replicas = 0;
        assert!(c.validate().is_err());
        c.replicas = 1;
        c.model = ModelSource::Inline(
            ChainModel::new(vec![1.0, 0.0, -1.0], vec![vec![0.0; 3]; 3], vec![1.0, 0.0, 0.0]).unwrap(),
        );
        c.scheme = Scheme::TelegraphIto;
        assert!(matches!(c.validate(), Err(FilterError::SchemeMismatch { .. })));
        c.model = ModelSource::Inline(
            ChainModel::new(vec![1.0, -1.0], vec![vec![0.0, -1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap(),
        );
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("negative rate"), "{err}");
    }
}
