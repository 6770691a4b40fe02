//! Per-algorithm hyperparameters and their config-file overrides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{optimizer_registry, Algorithm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoParams {
    pub batch_size: usize,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub actor_neurons: Vec<usize>,
    pub critic_neurons: Vec<usize>,
    pub optimizer: String,
    pub noise_std: f64,
    /// `None` means the agent-count dependent default.
    pub start_train: Option<usize>,
}

impl AlgoParams {
    pub fn maddpg() -> Self {
        AlgoParams {
            batch_size: 256,
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            actor_neurons: vec![128],
            critic_neurons: vec![256],
            optimizer: "rmsprop".into(),
            noise_std: 0.2,
            start_train: Some(1000),
        }
    }

    /// No critic; training starts at `max(150·|A|, 2000)` steps.
    pub fn mmaddpg() -> Self {
        AlgoParams {
            critic_learning_rate: 0.0,
            critic_neurons: vec![],
            start_train: None,
            ..Self::maddpg()
        }
    }

    /// The market surrogate.
    pub fn ddpg() -> Self {
        AlgoParams {
            batch_size: 128,
            actor_learning_rate: 1e-4,
            critic_learning_rate: 1e-3,
            actor_neurons: vec![256],
            critic_neurons: vec![256],
            optimizer: "adam".into(),
            noise_std: 0.2,
            start_train: Some(1000),
        }
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        optimizer_registry().get(&self.optimizer)
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        self.algorithm()?;
        let bad = |m: String| Err(Error::Config(format!("{section}.{m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.actor_learning_rate > 0.0) {
            return bad("actor_learning_rate must be positive".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        if self.actor_neurons.contains(&0) || self.critic_neurons.contains(&0) {
            return bad("layer sizes must be positive".into());
        }
        Ok(())
    }
}

/// Delayed start of the model-based agents' training.
pub fn start_threshold(n_agents: usize) -> usize {
    (150 * n_agents).max(2000)
}

/// Config-file section: every key optional, unknown keys rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoOverrides {
    pub batch_size: Option<usize>,
    pub actor_learning_rate: Option<f64>,
    pub critic_learning_rate: Option<f64>,
    pub actor_neurons: Option<Vec<usize>>,
    pub critic_neurons: Option<Vec<usize>>,
    pub optimizer: Option<String>,
    pub noise_std: Option<f64>,
    pub start_train: Option<usize>,
}

impl AlgoOverrides {
    pub fn apply(&self, mut p: AlgoParams) -> AlgoParams {
        if let Some(v) = self.batch_size {
            p.batch_size = v;
        }
        if let Some(v) = self.actor_learning_rate {
            p.actor_learning_rate = v;
        }
        if let Some(v) = self.critic_learning_rate {
            p.critic_learning_rate = v;
        }
        if let Some(v) = &self.actor_neurons {
            p.actor_neurons = v.clone();
        }
        if let Some(v) = &self.critic_neurons {
            p.critic_neurons = v.clone();
        }
        if let Some(v) = &self.optimizer {
            p.optimizer = v.clone();
        }
        if let Some(v) = self.noise_std {
            p.noise_std = v;
        }
        if let Some(v) = self.start_train {
            p.start_train = Some(v);
        }
        p
    }

    pub fn has_critic_keys(&self) -> bool {
        self.critic_learning_rate.is_some() || self.critic_neurons.is_some()
    }
}
