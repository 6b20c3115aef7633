use serde::{Deserialize, Serialize};

use crate::embeddings::DEFAULT_BN_EPS;
use crate::error::{NeshError, Result};

/// Prior over node embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Stick-breaking sociabilities with a `Beta(1, alpha)` prior.
    #[default]
    Nesh,
    /// Free embeddings under a standard normal prior.
    Gaussian,
}

impl std::str::FromStr for PriorMode {
    type Err = NeshError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nesh" => Ok(PriorMode::Nesh),
            "gaussian" => Ok(PriorMode::Gaussian),
            other => Err(NeshError::invalid(format!(
                "unknown prior mode `{other}` (expected nesh or gaussian)"
            ))),
        }
    }
}

impl std::fmt::Display for PriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorMode::Nesh => "nesh",
            PriorMode::Gaussian => "gaussian",
        })
    }
}

/// Training run settings. Every key is optional in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Requested inducing point count; capped at the number of training events.
    pub inducing: usize,
    /// Interactions per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Reparameterized draws per event (`S`).
    pub mc_samples: usize,
    /// Uniform time draws per interaction for the integral (`Q`).
    pub time_samples: usize,
    pub seed: u64,
    pub prior: PriorMode,
    /// `eps_f` in `log(f^2 + eps_f)`.
    pub log_guard: f64,
    /// Initial Gram jitter, relative to the signal variance.
    pub jitter: f64,
    pub batchnorm_eps: f64,
    /// Fraction of sequences kept for training by the CLI.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rank: 5,
            alpha: 1.0,
            inducing: 100,
            batch_size: 100,
            epochs: 400,
            learning_rate: 1e-3,
            mc_samples: 8,
            time_samples: 20,
            seed: 0,
            prior: PriorMode::Nesh,
            log_guard: 1e-10,
            jitter: 1e-6,
            batchnorm_eps: DEFAULT_BN_EPS,
            train_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| NeshError::Config(e.message().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NeshError::Config(msg));
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.inducing == 0 {
            return bad("inducing must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.mc_samples == 0 || self.time_samples == 0 {
            return bad("mc_samples and time_samples must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.log_guard.is_finite() && self.log_guard > 0.0) {
            return bad(format!(
                "log_guard must be positive, got {}",
                self.log_guard
            ));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return bad(format!("jitter must be non-negative, got {}", self.jitter));
        }
        if !(self.batchnorm_eps.is_finite() && self.batchnorm_eps > 0.0) {
            return bad(format!(
                "batchnorm_eps must be positive, got {}",
                self.batchnorm_eps
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            ));
        }
        Ok(())
    }

    pub fn mc(&self) -> McSettings {
        McSettings {
            samples: self.mc_samples,
            time_samples: self.time_samples,
            log_guard: self.log_guard,
        }
    }
}

/// Monte Carlo sizes for one ELBO or test log-likelihood estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub samples: usize,
    pub time_samples: usize,
    pub log_guard: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.inducing, c.batch_size, c.epochs), (100, 100, 400));
        assert_eq!((c.mc_samples, c.time_samples), (8, 20));
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = TrainConfig::from_toml("rank = 2\nprior = \"gaussian\"\n").unwrap();
        assert_eq!(c.rank, 2);
        assert_eq!(c.prior, PriorMode::Gaussian);
        assert_eq!(c.batch_size, 100);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            TrainConfig::from_toml("rnak = 2"),
            Err(NeshError::Config(_))
        ));
        let c = TrainConfig {
            mc_samples: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            alpha: -1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        assert!("laplace".parse::<PriorMode>().is_err());
    }
}
