//! The one-step bidding game: agents see only the time of day/week/year,
//! submit one price each, the market clears, and each agent earns
//! `(p_a − p_marginal)·P_a`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::market::{BidSet, ClearingResult, ClearingStrategy};

pub const STEPS_PER_DAY: u64 = 96;
pub const STEPS_PER_WEEK: u64 = 672;
pub const STEPS_PER_YEAR: u64 = 35136;
pub const OBS_DIM: usize = 6;

pub type Observation = [f64; OBS_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    /// Price cap in €/MW; also the price of slack imports.
    pub p_max: f64,
    pub marginal_fraction: f64,
    /// Per-agent marginal costs in €/MW, overriding `marginal_fraction`.
    pub marginal_costs: Option<Vec<f64>>,
    pub n_agents: usize,
    /// Installed capacity shared evenly by all agents, MW.
    pub p_total: f64,
    /// Half-width of the uniform load noise.
    pub load_noise: f64,
    /// Day, week and year length in quarter-hours.
    pub time_frames: [u64; 3],
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            p_max: 600.0,
            marginal_fraction: 0.1,
            marginal_costs: None,
            n_agents: 4,
            p_total: 60.0,
            load_noise: 0.1,
            time_frames: [STEPS_PER_DAY, STEPS_PER_WEEK, STEPS_PER_YEAR],
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return bad(format!("market.p_max must be positive, got {}", self.p_max));
        }
        if !(self.marginal_fraction > 0.0 && self.marginal_fraction < 1.0) {
            return bad(format!(
                "market.marginal_fraction must lie in (0, 1), got {}",
                self.marginal_fraction
            ));
        }
        if self.n_agents == 0 {
            return bad("market.n_agents must be at least 1".into());
        }
        if !(self.p_total > 0.0 && self.p_total.is_finite()) {
            return bad(format!(
                "market.p_total must be positive, got {}",
                self.p_total
            ));
        }
        if !(0.0..1.0).contains(&self.load_noise) {
            return bad(format!(
                "market.load_noise must lie in [0, 1), got {}",
                self.load_noise
            ));
        }
        if self.time_frames.contains(&0) {
            return bad("market.time_frames must be positive".into());
        }
        if let Some(m) = &self.marginal_costs {
            if m.len() != self.n_agents {
                return bad(format!(
                    "{} marginal costs for {} agents",
                    m.len(),
                    self.n_agents
                ));
            }
            if m.iter().any(|c| !(0.0..=self.p_max).contains(c)) {
                return bad("marginal costs must lie in [0, p_max]".into());
            }
        }
        Ok(())
    }

    pub fn marginal_costs(&self) -> Vec<f64> {
        self.marginal_costs
            .clone()
            .unwrap_or_else(|| vec![self.marginal_fraction * self.p_max; self.n_agents])
    }
}

/// `(sin, sin, sin, cos, cos, cos)` of `2πτ/tf` for the three time frames.
pub fn encode_time_with(tau: u64, frames: [u64; 3]) -> Observation {
    let mut out = [0.0; OBS_DIM];
    for (k, &tf) in frames.iter().enumerate() {
        let phase = 2.0 * PI * (tau % tf) as f64 / tf as f64;
        out[k] = phase.sin();
        out[3 + k] = phase.cos();
    }
    out
}

pub fn encode_time(tau: u64) -> Observation {
    encode_time_with(tau, [STEPS_PER_DAY, STEPS_PER_WEEK, STEPS_PER_YEAR])
}

/// `P_total / |A|` for every agent.
pub fn agent_capacity(config: &MarketConfig) -> Vec<f64> {
    vec![config.p_total / config.n_agents as f64; config.n_agents]
}

/// Deterministic synthetic load level at quarter-hour `tau`.
pub fn load_profile(tau: u64, frames: [u64; 3]) -> f64 {
    let phase = |tf: u64| 2.0 * PI * (tau % tf) as f64 / tf as f64;
    let v = 1.0
        + 0.35 * (phase(frames[0]) - PI / 2.0).sin()
        + 0.10 * phase(frames[1]).sin()
        + 0.20 * (phase(frames[2]) - PI / 2.0).sin();
    v.max(0.2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tau: u64,
    /// Multiplier on each load's nominal P and Q.
    pub load_scale: Vec<f64>,
    pub seed: u64,
}

impl Scenario {
    /// Profile value at `tau` times i.i.d. `U[1 − noise, 1 + noise]` per load,
    /// drawn from a stream seeded by `seed`.
    pub fn from_seed(tau: u64, seed: u64, n_loads: usize, config: &MarketConfig) -> Scenario {
        let base = load_profile(tau, config.time_frames);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let load_scale = (0..n_loads)
            .map(|_| {
                let u: f64 = rng.random();
                base * (1.0 + config.load_noise * (2.0 * u - 1.0))
            })
            .collect();
        Scenario {
            tau,
            load_scale,
            seed,
        }
    }
}

pub fn sample_scenario(
    tau: u64,
    n_loads: usize,
    config: &MarketConfig,
    rng: &mut impl Rng,
) -> Scenario {
    Scenario::from_seed(tau, rng.random(), n_loads, config)
}

/// Uniform over one year.
pub fn sample_tau(config: &MarketConfig, rng: &mut impl Rng) -> u64 {
    rng.random_range(0..config.time_frames[2])
}

/// Every agent observes the same time encoding and nothing else.
pub fn agent_observation(scenario: &Scenario, config: &MarketConfig) -> Vec<Observation> {
    vec![encode_time_with(scenario.tau, config.time_frames); config.n_agents]
}

/// `(p_a − c_a)·P_a` per agent.
pub fn profits(prices: &[f64], marginal: &[f64], dispatch: &[f64]) -> Vec<f64> {
    prices
        .iter()
        .zip(marginal)
        .zip(dispatch)
        .map(|((p, c), d)| (p - c) * d)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub rewards: Vec<f64>,
    pub clearing: ClearingResult,
    pub observations: Vec<Observation>,
}

/// The market game on a fixed grid.
#[derive(Debug, Clone)]
pub struct BiddingEnv {
    pub grid: Grid,
    pub config: MarketConfig,
    marginal: Vec<f64>,
}

impl BiddingEnv {
    /// Assigns `config.n_agents` agents of capacity `P_total/|A|` to the
    /// grid's generator locations.
    pub fn new(base: &Grid, config: MarketConfig) -> Result<Self> {
        config.validate()?;
        let grid = base.with_agents(config.n_agents, config.p_total)?;
        Ok(BiddingEnv {
            marginal: config.marginal_costs(),
            grid,
            config,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    pub fn marginal_costs(&self) -> &[f64] {
        &self.marginal
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.grid.capacities()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Scenario {
        let tau = sample_tau(&self.config, rng);
        sample_scenario(tau, self.grid.loads.len(), &self.config, rng)
    }

    pub fn scenario(&self, tau: u64, seed: u64) -> Scenario {
        Scenario::from_seed(tau, seed, self.grid.loads.len(), &self.config)
    }

    pub fn bids(&self, prices: Vec<f64>) -> Result<BidSet> {
        BidSet::new(prices, self.config.p_max)
    }

    /// Clears the market with `clearing` and pays every agent its own bid.
    pub fn step(
        &self,
        scenario: &Scenario,
        bids: &BidSet,
        clearing: &dyn ClearingStrategy,
    ) -> Result<StepResult> {
        let result = clearing.clear(&self.grid, &scenario.load_scale, bids)?;
        Ok(self.settle(scenario, bids, result))
    }

    /// Rewards for an already computed clearing.
    pub fn settle(
        &self,
        scenario: &Scenario,
        bids: &BidSet,
        clearing: ClearingResult,
    ) -> StepResult {
        StepResult {
            rewards: profits(bids.prices(), &self.marginal, &clearing.dispatch),
            observations: agent_observation(scenario, &self.config),
            clearing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_encoding_examples() {
        assert_eq!(encode_time(0), [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = encode_time(48);
        assert!(e[0].abs() < 1e-12 && (e[3] + 1.0).abs() < 1e-12);
        let w = 2.0 * PI * 48.0 / 672.0;
        let y = 2.0 * PI * 48.0 / 35136.0;
        assert!((e[1] - w.sin()).abs() < 1e-15 && (e[4] - w.cos()).abs() < 1e-15);
        assert!((e[2] - y.sin()).abs() < 1e-15 && (e[5] - y.cos()).abs() < 1e-15);
    }

    #[test]
    fn capacity_split() {
        let c = |p_total, n_agents| {
            agent_capacity(&MarketConfig {
                p_total,
                n_agents,
                ..Default::default()
            })
        };
        assert_eq!(c(100.0, 4), vec![25.0; 4]);
        assert_eq!(c(60.0, 1), vec![60.0]);
        assert!(c(42.0, 10).iter().all(|&x| (x - 4.2).abs() < 1e-12));
    }

    #[test]
    fn noiseless_scenario_is_the_profile() {
        let cfg = MarketConfig {
            load_noise: 0.0,
            ..Default::default()
        };
        let s = Scenario::from_seed(1234, 9, 3, &cfg);
        assert_eq!(s.load_scale, vec![load_profile(1234, cfg.time_frames); 3]);
        assert_eq!(s, Scenario::from_seed(1234, 9, 3, &cfg));
    }

    #[test]
    fn profit_examples() {
        assert_eq!(profits(&[120.0], &[60.0], &[5.0]), vec![300.0]);
        assert_eq!(profits(&[500.0], &[60.0], &[0.0]), vec![0.0]);
        assert!(profits(&[30.0], &[60.0], &[2.0])[0] < 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = MarketConfig::default();
        cfg.marginal_fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg = MarketConfig::default();
        cfg.n_agents = 0;
        assert!(cfg.validate().is_err());
        assert!(MarketConfig::default().validate().is_ok());
    }
}
