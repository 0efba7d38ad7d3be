//! Flat key-value configuration mirroring the fit hyperparameters and the
//! cross-validation plan. Command-line flags override every key.

use std::path::Path;

use serde::Deserialize;
use smrmom::{CvPlan, Estimator, Hyperparameters, ProxScaling, StepSize};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "SMRMOM_SEED";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub estimator: Option<String>,
    pub standardize: Option<bool>,
    pub omega: Option<f64>,
    pub lambda_a: Option<f64>,
    pub lambda_gamma: Option<f64>,
    pub lambda_d: Option<f64>,
    pub d: Option<usize>,
    pub step_a: Option<StepSize>,
    pub step_gamma: Option<StepSize>,
    pub max_sweeps: Option<usize>,
    pub tol: Option<f64>,
    pub prox_scaling: Option<ProxScaling>,
    pub k: Option<usize>,
    pub lambda_a_grid: Option<Vec<f64>>,
    pub lambda_gamma_grid: Option<Vec<f64>>,
    pub n_lambda_gamma: Option<usize>,
    pub lambda_gamma_ratio: Option<f64>,
    pub cv_seed: Option<u64>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        }
    }

    /// Overwrites every key that `other` sets.
    pub fn merge(mut self, other: Config) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            seed,
            estimator,
            standardize,
            omega,
            lambda_a,
            lambda_gamma,
            lambda_d,
            d,
            step_a,
            step_gamma,
            max_sweeps,
            tol,
            prox_scaling,
            k,
            lambda_a_grid,
            lambda_gamma_grid,
            n_lambda_gamma,
            lambda_gamma_ratio,
            cv_seed
        );
        self
    }

    pub fn hyper(&self, base: Hyperparameters) -> Hyperparameters {
        Hyperparameters {
            omega: self.omega.unwrap_or(base.omega),
            lambda_a: self.lambda_a.unwrap_or(base.lambda_a),
            lambda_gamma: self.lambda_gamma.unwrap_or(base.lambda_gamma),
            lambda_d: self.lambda_d.or(base.lambda_d),
            d: self.d.unwrap_or(base.d),
            step_a: self.step_a.unwrap_or(base.step_a),
            step_gamma: self.step_gamma.unwrap_or(base.step_gamma),
            max_sweeps: self.max_sweeps.unwrap_or(base.max_sweeps),
            tol: self.tol.unwrap_or(base.tol),
            prox_scaling: self.prox_scaling.unwrap_or(base.prox_scaling),
        }
    }

    pub fn plan(&self, base: CvPlan) -> CvPlan {
        CvPlan {
            k: self.k.unwrap_or(base.k),
            lambda_a_grid: self.lambda_a_grid.clone().unwrap_or(base.lambda_a_grid),
            lambda_gamma_grid: self.lambda_gamma_grid.clone().or(base.lambda_gamma_grid),
            n_lambda_gamma: self.n_lambda_gamma.unwrap_or(base.n_lambda_gamma),
            lambda_gamma_ratio: self.lambda_gamma_ratio.unwrap_or(base.lambda_gamma_ratio),
            seed: self.cv_seed.unwrap_or(base.seed),
        }
    }

    pub fn estimator(&self) -> Result<Estimator> {
        match &self.estimator {
            None => Ok(Estimator::SmrMom),
            Some(s) => s.parse().map_err(|e: smrmom::Error| CliError::Usage(e.to_string())),
        }
    }

    /// Key, then the environment fallback, then `default`.
    pub fn seed_or(&self, default: u64) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
            Err(_) => Ok(default),
        }
    }
}
