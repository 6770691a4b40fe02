//! Bidding agents and the two multi-agent training schemes.
//!
//! `maddpg`: every agent owns an actor and a centralised critic over all
//! observations and actions; the market is cleared by the reference OPF.
//!
//! `mmaddpg`: agents own actors only. The market is cleared by the learned
//! surrogate (plus one power flow), and each actor descends the hardcoded
//! loss `−(p_a − c_a)·P_a` with `P_a` backpropagated through a frozen
//! snapshot of the surrogate's actor.

use std::time::Instant;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{agent_observation, BiddingEnv, Observation, Scenario, OBS_DIM};
use crate::error::{Error, Result};
use crate::market::{BidSet, ClearingResult, ClearingStrategy, ReferenceOpf};
use crate::neural::{gaussian_noise, Activation, Matrix, Mlp, OptimizerState, Tape, Var};
use crate::params::{start_threshold, AlgoParams};
use crate::registry::Registry;
use crate::replay::{ReplayBuffer, Transition, DEFAULT_CAPACITY};
use crate::surrogate::{residual_cost, SurrogateAgent, DEFAULT_PENALTY_WEIGHT};

/// Agent updates between refreshes of the frozen surrogate snapshot.
pub const SNAPSHOT_REFRESH: u64 = 100;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiddingAgent {
    pub actor: Mlp,
    pub actor_opt: OptimizerState,
    pub critic: Option<Mlp>,
    pub critic_opt: Option<OptimizerState>,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl BiddingAgent {
    /// Actor `6 → hidden → 1` (sigmoid); a critic over `critic_input`
    /// features when given.
    pub fn new(
        params: &AlgoParams,
        critic_input: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let alg = params.algorithm()?;
        let actor = Mlp::new(
            &layer_sizes(OBS_DIM, &params.actor_neurons, 1),
            Activation::Tanh,
            Activation::Sigmoid,
            rng,
        );
        let critic = critic_input.map(|n| {
            Mlp::new(
                &layer_sizes(n, &params.critic_neurons, 1),
                Activation::Tanh,
                Activation::Identity,
                rng,
            )
        });
        Ok(BiddingAgent {
            actor_opt: OptimizerState::for_net(alg, params.actor_learning_rate, &actor),
            critic_opt: critic
                .as_ref()
                .map(|c| OptimizerState::for_net(alg, params.critic_learning_rate, c)),
            actor,
            critic,
        })
    }

    /// Noiseless bid as a fraction of `p_max`.
    pub fn bid_fraction(&self, obs: &Observation) -> Result<f64> {
        Ok(self.actor.forward_vec(obs)?[0])
    }
}

/// Actor outputs plus `N(0, σ²)` noise, clamped to `[0, 1]` and scaled by `p_max`.
pub fn select_bids(
    agents: &[BiddingAgent],
    observations: &[Observation],
    noise_std: f64,
    p_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BidSet> {
    if agents.len() != observations.len() {
        return Err(Error::Shape(format!(
            "{} observations for {} agents",
            observations.len(),
            agents.len()
        )));
    }
    let noise = gaussian_noise(agents.len(), noise_std, rng);
    let prices = agents
        .iter()
        .zip(observations)
        .zip(noise)
        .map(|((a, o), n)| Ok((a.bid_fraction(o)? + n).clamp(0.0, 1.0) * p_max))
        .collect::<Result<Vec<_>>>()?;
    BidSet::new(prices, p_max)
}

/// Noiseless bids for a scenario.
pub fn policy_bids(
    agents: &[BiddingAgent],
    scenario: &Scenario,
    env: &BiddingEnv,
) -> Result<BidSet> {
    let obs = agent_observation(scenario, &env.config);
    let prices = agents
        .iter()
        .zip(&obs)
        .map(|(a, o)| Ok(a.bid_fraction(o)?.clamp(0.0, 1.0) * env.config.p_max))
        .collect::<Result<Vec<_>>>()?;
    env.bids(prices)
}

fn regress(
    net: &mut Mlp,
    opt: &mut OptimizerState,
    input: &Matrix,
    target: &Matrix,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, pv) = net.mse_tape(&mut tape, input, target)?;
    tape.backward(loss, Array2::ones((1, 1)))?;
    let value = tape.value(loss)[[0, 0]];
    opt.step(net.params_mut(), &pv.grads(&tape))?;
    Ok(value)
}

/// Matrix views of a sampled batch.
pub struct Batch {
    /// `B × 6|A|`: all agents' observations side by side.
    pub observations: Matrix,
    /// `B × |A|` bid fractions.
    pub bids: Matrix,
    /// `B × |A|` rewards divided by `p_max·P_a^max`.
    pub rewards: Matrix,
    /// `B × 2|L|`: the load part of the surrogate observation.
    pub loads: Matrix,
}

impl Batch {
    pub fn new(items: &[&Transition], reward_scale: &[f64]) -> Batch {
        let b = items.len();
        let na = reward_scale.len();
        let nl = items.first().map_or(0, |t| t.load_scale.len());
        let mut observations = Array2::zeros((b, OBS_DIM * na));
        let mut bids = Array2::zeros((b, na));
        let mut rewards = Array2::zeros((b, na));
        let mut loads = Array2::zeros((b, 2 * nl));
        for (r, t) in items.iter().enumerate() {
            for a in 0..na {
                for k in 0..OBS_DIM {
                    observations[[r, OBS_DIM * a + k]] = t.observations[a][k];
                }
                bids[[r, a]] = t.bids[a];
                rewards[[r, a]] = t.rewards[a] / reward_scale[a];
            }
            for (l, &v) in t.load_scale.iter().enumerate() {
                loads[[r, l]] = v;
                loads[[r, nl + l]] = v;
            }
        }
        Batch {
            observations,
            bids,
            rewards,
            loads,
        }
    }

    fn agent_obs(&self, a: usize) -> Matrix {
        self.observations
            .slice(s![.., OBS_DIM * a..OBS_DIM * (a + 1)])
            .to_owned()
    }

    /// Bid matrix with column `a` replaced by the taped `own` column.
    fn bids_with(&self, tape: &mut Tape, a: usize, own: Var) -> Result<Vec<Var>> {
        let left = tape.leaf(self.bids.slice(s![.., ..a]).to_owned());
        let right = tape.leaf(self.bids.slice(s![.., a + 1..]).to_owned());
        Ok(vec![left, own, right])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentLosses {
    pub critic: Option<f64>,
    pub actor: f64,
}

/// Centralised critic regression to the immediate (normalised) reward, then
/// actor ascent on the agent's own critic. Returns `None` below `start`.
pub fn maddpg_train_step(
    agents: &mut [BiddingAgent],
    buffer: &ReplayBuffer,
    batch_size: usize,
    start: usize,
    reward_scale: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<AgentLosses>>> {
    if buffer.len() < start.max(1) {
        return Ok(None);
    }
    let batch = Batch::new(&buffer.sample(batch_size, rng), reward_scale);
    let critic_in = ndarray::concatenate(
        ndarray::Axis(1),
        &[batch.observations.view(), batch.bids.view()],
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    let mut losses = Vec::with_capacity(agents.len());
    for (a, agent) in agents.iter_mut().enumerate() {
        let (Some(critic), Some(critic_opt)) = (agent.critic.as_mut(), agent.critic_opt.as_mut())
        else {
            return Err(Error::InvalidInput(format!("agent {a} has no critic")));
        };
        let target = batch.rewards.slice(s![.., a..a + 1]).to_owned();
        let critic_loss = regress(critic, critic_opt, &critic_in, &target)?;

        let mut tape = Tape::new();
        let (loss, pv) = maddpg_actor_loss_tape(&agent.actor, critic, a, &batch, &mut tape)?;
        tape.backward(loss, Array2::ones((1, 1)))?;
        let actor_loss = tape.value(loss)[[0, 0]];
        agent
            .actor_opt
            .step(agent.actor.params_mut(), &pv.grads(&tape))?;
        losses.push(AgentLosses {
            critic: Some(critic_loss),
            actor: actor_loss,
        });
    }
    Ok(Some(losses))
}

/// Records agent `a`'s actor loss `−mean Q_a(o, b)` with its own bid taken
/// from `actor` and the other bids from the batch.
pub fn maddpg_actor_loss_tape(
    actor: &Mlp,
    critic: &Mlp,
    a: usize,
    batch: &Batch,
    tape: &mut Tape,
) -> Result<(Var, crate::neural::ParamVars)> {
    let obs = tape.leaf(batch.agent_obs(a));
    let (own, pv) = actor.forward_tape(tape, obs)?;
    let all_obs = tape.leaf(batch.observations.clone());
    let mut parts = vec![all_obs];
    parts.extend(batch.bids_with(tape, a, own)?);
    let input = tape.concat(&parts)?;
    let (q, _) = critic.forward_tape(tape, input)?;
    let mean_q = tape.mean(q);
    Ok((tape.affine(mean_q, -1.0, 0.0), pv))
}

/// Records agent `a`'s hardcoded loss `−mean((b_a − c_a)·x_a)` where `b_a`
/// comes from its actor and `x_a` (dispatch fraction) from `surrogate_actor`.
pub fn mmaddpg_loss_tape(
    agent: &BiddingAgent,
    a: usize,
    batch: &Batch,
    surrogate_actor: &Mlp,
    marginal_fraction: f64,
    tape: &mut Tape,
) -> Result<(Var, crate::neural::ParamVars)> {
    let obs = tape.leaf(batch.agent_obs(a));
    let (own, pv) = agent.actor.forward_tape(tape, obs)?;
    let loads = tape.leaf(batch.loads.clone());
    let mut parts = vec![loads];
    parts.extend(batch.bids_with(tape, a, own)?);
    let input = tape.concat(&parts)?;
    let (x, _) = surrogate_actor.forward_tape(tape, input)?;
    let xa = tape.column(x, a)?;
    let margin = tape.affine(own, 1.0, -marginal_fraction);
    let profit = tape.mul(margin, xa)?;
    let mean = tape.mean(profit);
    Ok((tape.affine(mean, -1.0, 0.0), pv))
}

/// One actor update per agent through the frozen surrogate. `None` when the
/// buffer is empty.
pub fn mmaddpg_train_step(
    agents: &mut [BiddingAgent],
    buffer: &ReplayBuffer,
    surrogate_actor: &Mlp,
    batch_size: usize,
    marginal_fractions: &[f64],
    reward_scale: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<AgentLosses>>> {
    if buffer.is_empty() {
        return Ok(None);
    }
    let batch = Batch::new(&buffer.sample(batch_size, rng), reward_scale);
    let mut losses = Vec::with_capacity(agents.len());
    for (a, agent) in agents.iter_mut().enumerate() {
        let mut tape = Tape::new();
        let (loss, pv) = mmaddpg_loss_tape(
            agent,
            a,
            &batch,
            surrogate_actor,
            marginal_fractions[a],
            &mut tape,
        )?;
        tape.backward(loss, Array2::ones((1, 1)))?;
        let value = tape.value(loss)[[0, 0]];
        agent
            .actor_opt
            .step(agent.actor.params_mut(), &pv.grads(&tape))?;
        losses.push(AgentLosses {
            critic: None,
            actor: value,
        });
    }
    Ok(Some(losses))
}

/// Separate random streams of one run.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub scenario: ChaCha8Rng,
    pub action: ChaCha8Rng,
    pub sample: ChaCha8Rng,
    pub surrogate: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        RunRngs {
            scenario: stream(1),
            action: stream(2),
            sample: stream(3),
            surrogate: stream(4),
        }
    }

    /// Stream for parameter initialisation.
    pub fn init(seed: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(0);
        r
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub agents: Option<Vec<AgentLosses>>,
    pub surrogate: Option<crate::surrogate::DdpgLosses>,
}

/// Serialisable state of a trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: String,
    pub step: usize,
    pub agents: Vec<BiddingAgent>,
    pub surrogate: Option<SurrogateAgent>,
    pub snapshot: Option<Mlp>,
    pub agent_updates: u64,
}

/// A multi-agent training scheme.
pub trait Trainer: Send {
    fn mode(&self) -> &'static str;

    fn agents(&self) -> &[BiddingAgent];

    fn noise_std(&self) -> f64;

    /// Clears one scenario for the executed bids. Returns the clearing and
    /// the normalised residual cost for the surrogate's critic.
    fn clear(
        &mut self,
        env: &BiddingEnv,
        scenario: &Scenario,
        bids: &BidSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ClearingResult, f64)>;

    /// Updates after `steps_done` environment steps.
    fn train(
        &mut self,
        buffer: &ReplayBuffer,
        steps_done: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainReport>;

    /// Environment step from which agents' parameters may change.
    fn agent_start(&self) -> usize;

    fn surrogate(&self) -> Option<&SurrogateAgent> {
        None
    }

    /// Surrogate-only training on uniformly random bids before the main loop.
    fn pretrain(&mut self, _env: &BiddingEnv, _steps: usize, _rngs: &mut RunRngs) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&self, step: usize) -> Checkpoint;
}

/// Everything a trainer constructor needs.
#[derive(Debug, Clone)]
pub struct TrainerSetup {
    pub agent_params: AlgoParams,
    pub surrogate_params: AlgoParams,
    pub penalty_weight: f64,
    pub seed: u64,
}

impl TrainerSetup {
    pub fn new(mode: &str, seed: u64) -> Self {
        TrainerSetup {
            agent_params: if mode == "mmaddpg" {
                AlgoParams::mmaddpg()
            } else {
                AlgoParams::maddpg()
            },
            surrogate_params: AlgoParams::ddpg(),
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
            seed,
        }
    }
}

pub type TrainerCtor = fn(&BiddingEnv, &TrainerSetup) -> Result<Box<dyn Trainer>>;

pub fn trainer_registry() -> Registry<TrainerCtor> {
    let mut r: Registry<TrainerCtor> = Registry::new("training mode");
    r.register("maddpg", Maddpg::boxed)
        .register("mmaddpg", Mmaddpg::boxed);
    r
}

fn reward_scale(env: &BiddingEnv) -> Vec<f64> {
    env.capacities()
        .iter()
        .map(|c| c * env.config.p_max)
        .collect()
}

pub struct Maddpg {
    agents: Vec<BiddingAgent>,
    params: AlgoParams,
    clearing: ReferenceOpf,
    reward_scale: Vec<f64>,
    penalty_weight: f64,
    norm: f64,
}

impl Maddpg {
    pub fn new(env: &BiddingEnv, setup: &TrainerSetup) -> Result<Self> {
        setup.agent_params.validate("maddpg")?;
        let mut rng = RunRngs::init(setup.seed);
        let n = env.n_agents();
        let agents = (0..n)
            .map(|_| BiddingAgent::new(&setup.agent_params, Some(n * OBS_DIM + n), &mut rng))
            .collect::<Result<_>>()?;
        Ok(Maddpg {
            agents,
            params: setup.agent_params.clone(),
            clearing: ReferenceOpf::default(),
            reward_scale: reward_scale(env),
            penalty_weight: setup.penalty_weight,
            norm: env.config.p_max * env.config.p_total,
        })
    }

    fn boxed(env: &BiddingEnv, setup: &TrainerSetup) -> Result<Box<dyn Trainer>> {
        Ok(Box::new(Self::new(env, setup)?))
    }

    pub fn restore(env: &BiddingEnv, setup: &TrainerSetup, ck: Checkpoint) -> Result<Self> {
        let mut t = Self::new(env, setup)?;
        t.agents = ck.agents;
        Ok(t)
    }
}

impl Trainer for Maddpg {
    fn mode(&self) -> &'static str {
        "maddpg"
    }

    fn agents(&self) -> &[BiddingAgent] {
        &self.agents
    }

    fn noise_std(&self) -> f64 {
        self.params.noise_std
    }

    fn clear(
        &mut self,
        env: &BiddingEnv,
        scenario: &Scenario,
        bids: &BidSet,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(ClearingResult, f64)> {
        let result = self.clearing.clear(&env.grid, &scenario.load_scale, bids)?;
        let residual = residual_cost(&result, bids, self.norm, self.penalty_weight);
        Ok((result, residual))
    }

    fn train(
        &mut self,
        buffer: &ReplayBuffer,
        _steps_done: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainReport> {
        let start = self.agent_start();
        let losses = maddpg_train_step(
            &mut self.agents,
            buffer,
            self.params.batch_size,
            start,
            &self.reward_scale,
            rng,
        )?;
        Ok(TrainReport {
            agents: losses,
            surrogate: None,
        })
    }

    fn agent_start(&self) -> usize {
        self.params.start_train.unwrap_or(1000)
    }

    fn checkpoint(&self, step: usize) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            mode: self.mode().into(),
            step,
            agents: self.agents.clone(),
            surrogate: None,
            snapshot: None,
            agent_updates: 0,
        }
    }
}

pub struct Mmaddpg {
    agents: Vec<BiddingAgent>,
    params: AlgoParams,
    surrogate: SurrogateAgent,
    snapshot: Option<Mlp>,
    agent_updates: u64,
    start: usize,
    marginal_fractions: Vec<f64>,
    reward_scale: Vec<f64>,
}

impl Mmaddpg {
    pub fn new(env: &BiddingEnv, setup: &TrainerSetup) -> Result<Self> {
        setup.agent_params.validate("mmaddpg")?;
        let mut rng = RunRngs::init(setup.seed);
        let n = env.n_agents();
        let agents = (0..n)
            .map(|_| BiddingAgent::new(&setup.agent_params, None, &mut rng))
            .collect::<Result<_>>()?;
        let surrogate = SurrogateAgent::new(
            env,
            setup.surrogate_params.clone(),
            setup.penalty_weight,
            &mut rng,
        )?;
        Ok(Mmaddpg {
            agents,
            params: setup.agent_params.clone(),
            surrogate,
            snapshot: None,
            agent_updates: 0,
            start: setup
                .agent_params
                .start_train
                .unwrap_or_else(|| start_threshold(n)),
            marginal_fractions: env
                .marginal_costs()
                .iter()
                .map(|c| c / env.config.p_max)
                .collect(),
            reward_scale: reward_scale(env),
        })
    }

    fn boxed(env: &BiddingEnv, setup: &TrainerSetup) -> Result<Box<dyn Trainer>> {
        Ok(Box::new(Self::new(env, setup)?))
    }

    pub fn restore(env: &BiddingEnv, setup: &TrainerSetup, ck: Checkpoint) -> Result<Self> {
        let mut t = Self::new(env, setup)?;
        t.agents = ck.agents;
        if let Some(s) = ck.surrogate {
            t.surrogate = s;
        }
        t.snapshot = ck.snapshot;
        t.agent_updates = ck.agent_updates;
        Ok(t)
    }
}

impl Trainer for Mmaddpg {
    fn mode(&self) -> &'static str {
        "mmaddpg"
    }

    fn agents(&self) -> &[BiddingAgent] {
        &self.agents
    }

    fn noise_std(&self) -> f64 {
        self.params.noise_std
    }

    fn clear(
        &mut self,
        env: &BiddingEnv,
        scenario: &Scenario,
        bids: &BidSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ClearingResult, f64)> {
        self.surrogate.interact(env, scenario, bids, rng)
    }

    fn train(
        &mut self,
        buffer: &ReplayBuffer,
        steps_done: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainReport> {
        let surrogate = self.surrogate.train_step(buffer, rng)?;
        let mut agents = None;
        if steps_done >= self.start {
            if self.snapshot.is_none() || self.agent_updates % SNAPSHOT_REFRESH == 0 {
                self.snapshot = Some(self.surrogate.actor.clone());
            }
            let snapshot = self.snapshot.as_ref().expect("snapshot taken above");
            agents = mmaddpg_train_step(
                &mut self.agents,
                buffer,
                snapshot,
                self.params.batch_size,
                &self.marginal_fractions,
                &self.reward_scale,
                rng,
            )?;
            if agents.is_some() {
                self.agent_updates += 1;
            }
        }
        Ok(TrainReport { agents, surrogate })
    }

    fn agent_start(&self) -> usize {
        self.start
    }

    fn surrogate(&self) -> Option<&SurrogateAgent> {
        Some(&self.surrogate)
    }

    fn pretrain(&mut self, env: &BiddingEnv, steps: usize, rngs: &mut RunRngs) -> Result<()> {
        use rand::Rng;
        let mut buffer = ReplayBuffer::new(DEFAULT_CAPACITY);
        for _ in 0..steps {
            let scenario = env.sample(&mut rngs.scenario);
            let prices = (0..env.n_agents())
                .map(|_| rngs.action.random_range(0.0..=env.config.p_max))
                .collect();
            let bids = env.bids(prices)?;
            let (result, residual) =
                self.surrogate
                    .interact(env, &scenario, &bids, &mut rngs.surrogate)?;
            buffer.push(transition(env, &scenario, &bids, &result, residual));
            self.surrogate.train_step(&buffer, &mut rngs.sample)?;
        }
        Ok(())
    }

    fn checkpoint(&self, step: usize) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            mode: self.mode().into(),
            step,
            agents: self.agents.clone(),
            surrogate: Some(self.surrogate.clone()),
            snapshot: self.snapshot.clone(),
            agent_updates: self.agent_updates,
        }
    }
}

/// Rebuilds a trainer from a checkpoint of the matching mode.
pub fn restore_trainer(
    env: &BiddingEnv,
    setup: &TrainerSetup,
    ck: Checkpoint,
) -> Result<Box<dyn Trainer>> {
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} unsupported, expected {CHECKPOINT_VERSION}",
            ck.version
        )));
    }
    if ck.agents.len() != env.n_agents() {
        return Err(Error::Checkpoint(format!(
            "{} agents in checkpoint, config has {}",
            ck.agents.len(),
            env.n_agents()
        )));
    }
    match ck.mode.as_str() {
        "maddpg" => Ok(Box::new(Maddpg::restore(env, setup, ck)?)),
        "mmaddpg" => Ok(Box::new(Mmaddpg::restore(env, setup, ck)?)),
        other => Err(Error::Checkpoint(format!("unknown mode `{other}`"))),
    }
}

pub fn transition(
    env: &BiddingEnv,
    scenario: &Scenario,
    bids: &BidSet,
    result: &ClearingResult,
    residual: f64,
) -> Transition {
    Transition {
        tau: scenario.tau,
        observations: agent_observation(scenario, &env.config),
        bids: bids.normalized(),
        rewards: crate::env::profits(bids.prices(), env.marginal_costs(), &result.dispatch),
        load_scale: scenario.load_scale.clone(),
        dispatch: result.dispatch.clone(),
        residual_cost: residual,
    }
}

/// One row of the metrics log, aggregated over the steps since the last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub mode: String,
    /// Executed bids as fractions of `p_max`.
    pub mean_bid: f64,
    pub std_bid: f64,
    /// € per agent and step.
    pub mean_reward: f64,
    pub surrogate_mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub step: usize,
    pub mode: String,
    /// Mean seconds per environment step (bid selection + clearing).
    pub env_step_seconds: f64,
    /// Mean seconds per step spent in parameter updates.
    pub train_step_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub steps: usize,
    pub env_seconds: f64,
    pub train_seconds: f64,
    pub total_seconds: f64,
}

impl TimingSummary {
    pub fn env_step_seconds(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.env_seconds / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoopOutput {
    pub metrics: Vec<MetricRow>,
    pub timing_rows: Vec<TimingRow>,
    pub timing: TimingSummary,
    /// Mean executed bid fraction of every step.
    pub step_bids: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSettings {
    pub steps: usize,
    pub metric_every: usize,
    pub buffer_capacity: usize,
}

/// Called at every metric row with the step count; returns the surrogate
/// MAPE to log, if one was computed.
pub type EvalHook<'a> = dyn FnMut(usize, &dyn Trainer) -> Result<Option<f64>> + 'a;

/// Sample → bid → clear → store → train, `settings.steps` times.
pub fn training_loop(
    env: &BiddingEnv,
    trainer: &mut dyn Trainer,
    settings: LoopSettings,
    rngs: &mut RunRngs,
    hook: &mut EvalHook<'_>,
) -> Result<LoopOutput> {
    let metric_every = settings.metric_every.max(1);
    let start = Instant::now();
    let mut out = LoopOutput::default();
    let mut buffer = ReplayBuffer::new(settings.buffer_capacity);
    let (mut bids_window, mut reward_sum, mut reward_n) = (Vec::new(), 0.0, 0usize);
    let (mut win_env, mut win_train) = (0.0, 0.0);

    for step in 0..settings.steps {
        let t0 = Instant::now();
        let scenario = env.sample(&mut rngs.scenario);
        let observations = agent_observation(&scenario, &env.config);
        let bids = select_bids(
            trainer.agents(),
            &observations,
            trainer.noise_std(),
            env.config.p_max,
            &mut rngs.action,
        )?;
        let (result, residual) = trainer.clear(env, &scenario, &bids, &mut rngs.surrogate)?;
        let t = transition(env, &scenario, &bids, &result, residual);
        let env_time = t0.elapsed().as_secs_f64();

        out.step_bids
            .push(t.bids.iter().sum::<f64>() / t.bids.len() as f64);
        bids_window.extend(t.bids.iter().copied());
        reward_sum += t.rewards.iter().sum::<f64>();
        reward_n += t.rewards.len();
        buffer.push(t);

        let t1 = Instant::now();
        trainer.train(&buffer, step + 1, &mut rngs.sample)?;
        let train_time = t1.elapsed().as_secs_f64();

        out.timing.env_seconds += env_time;
        out.timing.train_seconds += train_time;
        win_env += env_time;
        win_train += train_time;

        let done = step + 1;
        if done % metric_every == 0 || done == settings.steps {
            let n = bids_window.len() as f64;
            let mean = bids_window.iter().sum::<f64>() / n;
            let var = bids_window.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / n;
            let window_steps = (done - 1) % metric_every + 1;
            let surrogate_mape = hook(done, &*trainer)?;
            out.metrics.push(MetricRow {
                step: done,
                mode: trainer.mode().into(),
                mean_bid: mean,
                std_bid: var.sqrt(),
                mean_reward: reward_sum / reward_n as f64,
                surrogate_mape,
            });
            out.timing_rows.push(TimingRow {
                step: done,
                mode: trainer.mode().into(),
                env_step_seconds: win_env / window_steps as f64,
                train_step_seconds: win_train / window_steps as f64,
            });
            bids_window.clear();
            reward_sum = 0.0;
            reward_n = 0;
            win_env = 0.0;
            win_train = 0.0;
        }
    }
    out.timing.steps = settings.steps;
    out.timing.total_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}
