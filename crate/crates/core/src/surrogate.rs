//! Learned market clearing.
//!
//! A DDPG agent whose action is the vector of generator setpoint fractions.
//! The cost `Σ P_a·p_a` is known in closed form and enters the actor loss
//! directly; only the remainder of the reward (slack import and constraint
//! penalties) is learned by the critic.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{BiddingEnv, Scenario};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::market::{evaluate_dispatch, BidSet, ClearingResult, ClearingStrategy};
use crate::neural::{
    gaussian_noise, Activation, Matrix, Mlp, OptimizerState, ParamVars, Tape, Var,
};
use crate::params::AlgoParams;
use crate::power_flow::Network;
use crate::replay::{ReplayBuffer, Transition};

pub const DEFAULT_PENALTY_WEIGHT: f64 = 10.0;

/// `[P_l/P_l^nom…, Q_l/Q_l^nom…, p_a/p_max…]`. Loads scale P and Q together,
/// so the first two blocks are both the per-load multipliers.
pub fn surrogate_observe(load_scale: &[f64], bid_fractions: &[f64]) -> Vec<f64> {
    let mut obs = Vec::with_capacity(2 * load_scale.len() + bid_fractions.len());
    obs.extend_from_slice(load_scale);
    obs.extend_from_slice(load_scale);
    obs.extend_from_slice(bid_fractions);
    obs
}

/// `−J/N − w·Ψ` with `N = p_max·P_total`.
pub fn surrogate_reward(result: &ClearingResult, norm: f64, penalty_weight: f64) -> f64 {
    -result.objective / norm - penalty_weight * result.penalties.total
}

/// The part of the negated reward not covered by `Σ P_a·p_a`.
pub fn residual_cost(
    result: &ClearingResult,
    bids: &BidSet,
    norm: f64,
    penalty_weight: f64,
) -> f64 {
    let energy: f64 = bids
        .prices()
        .iter()
        .zip(&result.dispatch)
        .map(|(p, d)| p * d)
        .sum();
    (result.objective - energy) / norm + penalty_weight * result.penalties.total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpgLosses {
    pub critic: f64,
    pub actor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: OptimizerState,
    pub critic_opt: OptimizerState,
    pub params: AlgoParams,
    pub penalty_weight: f64,
    capacities: Vec<f64>,
    p_max: f64,
    n_loads: usize,
}

impl SurrogateAgent {
    pub fn new(
        env: &BiddingEnv,
        params: AlgoParams,
        penalty_weight: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        params.validate("ddpg")?;
        let n_agents = env.n_agents();
        let n_loads = env.grid.loads.len();
        let obs_dim = 2 * n_loads + n_agents;
        let sizes = |input: usize, hidden: &[usize], out: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let actor = Mlp::new(
            &sizes(obs_dim, &params.actor_neurons, n_agents),
            Activation::Tanh,
            Activation::Sigmoid,
            rng,
        );
        let critic = Mlp::new(
            &sizes(obs_dim + n_agents, &params.critic_neurons, 1),
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        let alg = params.algorithm()?;
        Ok(SurrogateAgent {
            actor_opt: OptimizerState::for_net(alg, params.actor_learning_rate, &actor),
            critic_opt: OptimizerState::for_net(alg, params.critic_learning_rate, &critic),
            actor,
            critic,
            params,
            penalty_weight,
            capacities: env.capacities(),
            p_max: env.config.p_max,
            n_loads,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.capacities.len()
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.n_loads + self.n_agents()
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    /// `p_max · P_total`.
    pub fn norm(&self) -> f64 {
        self.p_max * self.capacities.iter().sum::<f64>()
    }

    pub fn observe(&self, load_scale: &[f64], bids: &BidSet) -> Vec<f64> {
        surrogate_observe(load_scale, &bids.normalized())
    }

    /// Setpoints as fractions of capacity.
    pub fn predict_fractions(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward_vec(obs)
    }

    /// Setpoints in MW.
    pub fn predict_dispatch(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .predict_fractions(obs)?
            .iter()
            .zip(&self.capacities)
            .map(|(x, c)| (x * c).clamp(0.0, *c))
            .collect())
    }

    /// Exploratory setpoint fractions.
    pub fn act(&self, obs: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let x = self.predict_fractions(obs)?;
        let noise = gaussian_noise(x.len(), self.params.noise_std, rng);
        Ok(x.iter()
            .zip(noise)
            .map(|(x, n)| (x + n).clamp(0.0, 1.0))
            .collect())
    }

    /// Power-flow evaluation of setpoint fractions.
    pub fn evaluate(
        &self,
        grid: &Grid,
        load_scale: &[f64],
        bids: &BidSet,
        fractions: &[f64],
    ) -> Result<ClearingResult> {
        let dispatch: Vec<f64> = fractions
            .iter()
            .zip(&self.capacities)
            .map(|(x, c)| x * c)
            .collect();
        evaluate_dispatch(&Network::new(grid), bids, &dispatch, load_scale)
    }

    /// Cost used for comparisons with the reference clearing: `J + w·Ψ·N`.
    pub fn penalized_cost(&self, result: &ClearingResult) -> f64 {
        result.objective + self.penalty_weight * result.penalties.total * self.norm()
    }

    /// Noisy interaction: the surrogate's own exploratory dispatch evaluated
    /// by a power flow. Returns the clearing and its transition record.
    pub fn interact(
        &self,
        env: &BiddingEnv,
        scenario: &Scenario,
        bids: &BidSet,
        rng: &mut impl Rng,
    ) -> Result<(ClearingResult, f64)> {
        let obs = self.observe(&scenario.load_scale, bids);
        let fractions = self.act(&obs, rng)?;
        let result = self.evaluate(&env.grid, &scenario.load_scale, bids, &fractions)?;
        let residual = residual_cost(&result, bids, self.norm(), self.penalty_weight);
        Ok((result, residual))
    }

    fn batch(&self, items: &[&Transition]) -> (Matrix, Matrix, Matrix) {
        let b = items.len();
        let (od, na) = (self.obs_dim(), self.n_agents());
        let mut obs = Array2::zeros((b, od));
        let mut act = Array2::zeros((b, na));
        let mut target = Array2::zeros((b, 1));
        for (r, t) in items.iter().enumerate() {
            for (c, v) in surrogate_observe(&t.load_scale, &t.bids)
                .into_iter()
                .enumerate()
            {
                obs[[r, c]] = v;
            }
            for a in 0..na {
                act[[r, a]] = t.dispatch[a] / self.capacities[a];
            }
            target[[r, 0]] = -t.residual_cost;
        }
        (obs, act, target)
    }

    /// One critic regression and one actor update on a uniform batch. A
    /// no-op (`None`) until the buffer holds `start_train` transitions.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<DdpgLosses>> {
        if buffer.len() < self.params.start_train.unwrap_or(0) || buffer.is_empty() {
            return Ok(None);
        }
        let items = buffer.sample(self.params.batch_size, rng);
        let (obs, act, target) = self.batch(&items);
        let critic_loss = self.critic_update(&obs, &act, &target)?;
        let actor_loss = self.actor_update(&obs)?;
        Ok(Some(DdpgLosses {
            critic: critic_loss,
            actor: actor_loss,
        }))
    }

    /// Squared-error regression of `Q^pen(obs, act)` to the observed target.
    pub fn critic_update(&mut self, obs: &Matrix, act: &Matrix, target: &Matrix) -> Result<f64> {
        let input = ndarray::concatenate(Axis(1), &[obs.view(), act.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut tape = Tape::new();
        let (loss, pv) = self.critic.mse_tape(&mut tape, &input, target)?;
        tape.backward(loss, Array2::ones((1, 1)))?;
        let value = tape.value(loss)[[0, 0]];
        self.critic_opt
            .step(self.critic.params_mut(), &pv.grads(&tape))?;
        Ok(value)
    }

    /// Records `mean(Σ_a x_a·cap_a·p_a/N − Q^pen(obs, x))` with `x` the actor
    /// output; returns the loss node and the actor parameter handles.
    pub fn actor_loss_tape(&self, tape: &mut Tape, obs: &Matrix) -> Result<(Var, ParamVars)> {
        let b = obs.nrows();
        let na = self.n_agents();
        let p_total: f64 = self.capacities.iter().sum();
        let bid_offset = 2 * self.n_loads;
        let coef = Array2::from_shape_fn((b, na), |(r, a)| {
            obs[[r, bid_offset + a]] * self.capacities[a] / p_total
        });
        let o = tape.leaf(obs.clone());
        let (x, pv) = self.actor.forward_tape(tape, o)?;
        let c = tape.leaf(coef);
        let weighted = tape.mul(x, c)?;
        let cost = tape.sum_cols(weighted);
        let input = tape.concat(&[o, x])?;
        let (q, _) = self.critic.forward_tape(tape, input)?;
        let l = tape.sub(cost, q)?;
        Ok((tape.mean(l), pv))
    }

    pub fn actor_update(&mut self, obs: &Matrix) -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, pv) = self.actor_loss_tape(&mut tape, obs)?;
        tape.backward(loss, Array2::ones((1, 1)))?;
        let value = tape.value(loss)[[0, 0]];
        self.actor_opt
            .step(self.actor.params_mut(), &pv.grads(&tape))?;
        Ok(value)
    }
}

impl ClearingStrategy for SurrogateAgent {
    fn name(&self) -> &str {
        "surrogate"
    }

    /// Noiseless surrogate dispatch, evaluated by a power flow.
    fn clear(&self, grid: &Grid, load_scale: &[f64], bids: &BidSet) -> Result<ClearingResult> {
        if bids.len() != self.n_agents() || load_scale.len() != self.n_loads {
            return Err(Error::Shape(format!(
                "surrogate built for {} agents and {} loads",
                self.n_agents(),
                self.n_loads
            )));
        }
        let fractions = self.predict_fractions(&self.observe(load_scale, bids))?;
        self.evaluate(grid, load_scale, bids, &fractions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MarketConfig;
    use crate::grid::parse_grid;
    use crate::power_flow::PenaltyBreakdown;
    use rand::SeedableRng;

    fn env() -> BiddingEnv {
        let g = parse_grid(
            "gridfile v1
[bus]
1 0.95 1.05 slack
2 0.95 1.05
[line]
1 2 0.01 0.05 50
[load]
2 10 2
[gen]
2 20 0
",
        )
        .unwrap();
        BiddingEnv::new(
            &g,
            MarketConfig {
                n_agents: 1,
                p_total: 20.0,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn result(objective: f64, penalty: f64) -> ClearingResult {
        ClearingResult {
            dispatch: vec![0.0],
            p_slack: 0.0,
            objective,
            penalties: PenaltyBreakdown::new(penalty, 0.0, 0.0),
            iterations: 0,
            wall_time: 0.0,
            converged: true,
        }
    }

    #[test]
    fn observation_layout() {
        let b = BidSet::new(vec![600.0], 600.0).unwrap();
        let obs = surrogate_observe(&[1.0], &b.normalized());
        assert_eq!(obs, vec![1.0, 1.0, 1.0]);
        assert_eq!(
            surrogate_observe(&[1.0, 1.0], &[0.0, 0.0]),
            vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn reward_examples() {
        assert_eq!(surrogate_reward(&result(0.0, 0.0), 1.0, 10.0), 0.0);
        assert_eq!(surrogate_reward(&result(0.5, 0.0), 1.0, 10.0), -0.5);
        assert!((surrogate_reward(&result(0.5, 0.2), 1.0, 10.0) + 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_actor_dispatches_half_capacity() {
        let e = env();
        let mut s = SurrogateAgent::new(
            &e,
            AlgoParams::ddpg(),
            10.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let sizes = s.actor.sizes().to_vec();
        s.actor = Mlp::zeros(&sizes, Activation::Tanh, Activation::Sigmoid);
        assert_eq!(s.predict_dispatch(&[1.0, 1.0, 0.3]).unwrap(), vec![10.0]);
    }
}
