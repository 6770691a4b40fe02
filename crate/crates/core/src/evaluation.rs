//! Regret of a bid profile against per-agent best responses, and the cost
//! error of the learned clearing.
//!
//! Best responses are always computed with the reference OPF.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{profits, BiddingEnv, Scenario};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::market::{brute_force_clear, BidSet, ClearingStrategy, ReferenceOpf};
use crate::surrogate::SurrogateAgent;

pub const REGRET_SCHEMA: &str = "# schema: regret v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    /// Equidistant bids tried over `[0, p_max]` before the local search.
    pub seeds: usize,
    /// Local search stops once the bracket is narrower than this fraction of `p_max`.
    pub tolerance: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            seeds: 13,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponse {
    pub bid: f64,
    pub reward: f64,
    /// Candidates whose clearing failed.
    pub skipped: usize,
}

/// Highest reward of agent `agent` over its own bid with all other bids fixed:
/// equidistant seeds, then golden-section search in the bracket around the
/// best seed.
pub fn best_response_search(
    env: &BiddingEnv,
    scenario: &Scenario,
    bids: &BidSet,
    agent: usize,
    clearing: &dyn ClearingStrategy,
    settings: &SearchSettings,
) -> Result<BestResponse> {
    if agent >= bids.len() {
        return Err(Error::InvalidInput(format!(
            "agent {agent} of {}",
            bids.len()
        )));
    }
    let p_max = bids.p_max();
    let marginal = env.marginal_costs()[agent];
    let mut skipped = 0;
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    let reward = |b: f64, best: &mut (f64, f64), skipped: &mut usize| -> Result<f64> {
        let trial = bids.with_bid(agent, b)?;
        match clearing.clear(&env.grid, &scenario.load_scale, &trial) {
            Ok(r) => {
                let v = (b - marginal) * r.dispatch[agent];
                if v > best.1 {
                    *best = (b, v);
                }
                Ok(v)
            }
            Err(Error::InfeasibleScenario) => {
                *skipped += 1;
                Ok(f64::NEG_INFINITY)
            }
            Err(e) => Err(e),
        }
    };

    let n = settings.seeds.max(2);
    let spacing = p_max / (n - 1) as f64;
    let mut seed_values = Vec::with_capacity(n);
    for k in 0..n {
        let b = (k as f64 * spacing).min(p_max);
        seed_values.push(reward(b, &mut best, &mut skipped)?);
    }
    let k_best = seed_values
        .iter()
        .enumerate()
        .fold(0, |kb, (k, &v)| if v > seed_values[kb] { k } else { kb });
    let (mut lo, mut hi) = (
        (k_best as f64 - 1.0).max(0.0) * spacing,
        ((k_best as f64 + 1.0) * spacing).min(p_max),
    );

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = reward(x1, &mut best, &mut skipped)?;
    let mut f2 = reward(x2, &mut best, &mut skipped)?;
    while hi - lo >= settings.tolerance * p_max {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = reward(x1, &mut best, &mut skipped)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = reward(x2, &mut best, &mut skipped)?;
        }
    }
    if !best.1.is_finite() {
        return Err(Error::InfeasibleScenario);
    }
    Ok(BestResponse {
        bid: best.0,
        reward: best.1,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub state_id: usize,
    pub agent_id: usize,
    pub current_bid: f64,
    pub best_bid: f64,
    pub current_reward: f64,
    pub best_reward: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub rows: Vec<RegretRow>,
    /// Mean regret of each agent over states.
    pub per_agent: Vec<f64>,
    /// Mean over states of the summed regret.
    pub total: f64,
    pub n_states: usize,
    pub settings: SearchSettings,
    pub skipped_candidates: usize,
}

impl RegretReport {
    fn from_rows(
        rows: Vec<RegretRow>,
        n_agents: usize,
        n_states: usize,
        settings: SearchSettings,
        skipped: usize,
    ) -> Self {
        let mut per_agent = vec![0.0; n_agents];
        for r in &rows {
            per_agent[r.agent_id] += r.regret;
        }
        let denom = n_states.max(1) as f64;
        per_agent.iter_mut().for_each(|v| *v /= denom);
        RegretReport {
            total: per_agent.iter().sum(),
            rows,
            per_agent,
            n_states,
            settings,
            skipped_candidates: skipped,
        }
    }

    /// Schema line, header, one row per (state, agent), then a summary row
    /// with `state_id = mean` and `agent_id = all`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut out = out;
        writeln!(out, "{REGRET_SCHEMA}").map_err(|e| Error::io("regret csv", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "state_id",
            "agent_id",
            "current_bid",
            "best_bid",
            "current_reward",
            "best_reward",
            "regret",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.state_id.to_string(),
                r.agent_id.to_string(),
                r.current_bid.to_string(),
                r.best_bid.to_string(),
                r.current_reward.to_string(),
                r.best_reward.to_string(),
                r.regret.to_string(),
            ])?;
        }
        w.write_record(["mean", "all", "", "", "", "", &self.total.to_string()])?;
        w.flush().map_err(|e| Error::io("regret csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Evaluation states: uniform `τ`, dedicated seed.
pub fn evaluation_states(env: &BiddingEnv, n_states: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    (0..n_states).map(|_| env.sample(&mut rng)).collect()
}

/// Regret of the bid profiles produced by `bids_for` on `n_states` states,
/// evaluated in parallel over states.
pub fn regret_for(
    env: &BiddingEnv,
    states: &[Scenario],
    bids_for: &(dyn Fn(usize, &Scenario) -> Result<BidSet> + Sync),
    settings: &SearchSettings,
) -> Result<RegretReport> {
    let clearing = ReferenceOpf::default();
    let per_state: Vec<Result<(Vec<RegretRow>, usize)>> = states
        .par_iter()
        .enumerate()
        .map(|(sid, scenario)| {
            let bids = bids_for(sid, scenario)?;
            let current = clearing.clear(&env.grid, &scenario.load_scale, &bids)?;
            let rewards = profits(bids.prices(), env.marginal_costs(), &current.dispatch);
            let mut rows = Vec::with_capacity(bids.len());
            let mut skipped = 0;
            for a in 0..bids.len() {
                let br = best_response_search(env, scenario, &bids, a, &clearing, settings)?;
                skipped += br.skipped;
                // the current bid is itself a candidate
                let (best_bid, best_reward) = if br.reward >= rewards[a] {
                    (br.bid, br.reward)
                } else {
                    (bids.prices()[a], rewards[a])
                };
                rows.push(RegretRow {
                    state_id: sid,
                    agent_id: a,
                    current_bid: bids.prices()[a],
                    best_bid,
                    current_reward: rewards[a],
                    best_reward,
                    regret: best_reward - rewards[a],
                });
            }
            Ok((rows, skipped))
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for r in per_state {
        let (r, s) = r?;
        rows.extend(r);
        skipped += s;
    }
    Ok(RegretReport::from_rows(
        rows,
        env.n_agents(),
        states.len(),
        *settings,
        skipped,
    ))
}

/// Regret of noiseless trained policies.
pub fn regret_test(
    env: &BiddingEnv,
    agents: &[crate::trainers::BiddingAgent],
    n_states: usize,
    seed: u64,
    settings: &SearchSettings,
) -> Result<RegretReport> {
    let states = evaluation_states(env, n_states, seed);
    regret_for(
        env,
        &states,
        &|_, s| crate::trainers::policy_bids(agents, s, env),
        settings,
    )
}

/// Regret of i.i.d. uniform bids on the same states as [`regret_test`].
pub fn random_baseline(
    env: &BiddingEnv,
    n_states: usize,
    seed: u64,
    settings: &SearchSettings,
) -> Result<RegretReport> {
    let states = evaluation_states(env, n_states, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(8);
    let draws: Vec<Vec<f64>> = (0..n_states)
        .map(|_| {
            (0..env.n_agents())
                .map(|_| rng.random_range(0.0..=env.config.p_max))
                .collect()
        })
        .collect();
    regret_for(
        env,
        &states,
        &|sid, _| env.bids(draws[sid].clone()),
        settings,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapeReport {
    /// Percent.
    pub mape: f64,
    pub samples: usize,
    /// Samples dropped because the reference clearing failed.
    pub excluded: usize,
}

/// Mean `|J_sur − J_ref| / max(J_ref, 1e-6·p_max·P_total)` in percent, over
/// uniform `τ` and uniform bids.
pub fn opf_mape(
    surrogate: &SurrogateAgent,
    reference: &dyn ClearingStrategy,
    env: &BiddingEnv,
    n_samples: usize,
    seed: u64,
) -> Result<MapeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(9);
    let samples: Vec<(Scenario, BidSet)> = (0..n_samples)
        .map(|_| {
            let s = env.sample(&mut rng);
            let prices = (0..env.n_agents())
                .map(|_| rng.random_range(0.0..=env.config.p_max))
                .collect();
            Ok((s, env.bids(prices)?))
        })
        .collect::<Result<_>>()?;
    let floor = 1e-6 * env.config.p_max * env.config.p_total;
    let errors: Vec<Result<Option<f64>>> = samples
        .par_iter()
        .map(|(s, bids)| {
            let j_ref = match reference.clear(&env.grid, &s.load_scale, bids) {
                Ok(r) => r.objective,
                Err(Error::InfeasibleScenario) => return Ok(None),
                Err(e) => return Err(e),
            };
            let sur = surrogate.clear(&env.grid, &s.load_scale, bids)?;
            let j_sur = surrogate.penalized_cost(&sur);
            Ok(Some((j_sur - j_ref).abs() / j_ref.max(floor)))
        })
        .collect();
    let mut sum = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for e in errors {
        match e? {
            Some(v) => {
                sum += v;
                used += 1;
            }
            None => excluded += 1,
        }
    }
    Ok(MapeReport {
        mape: if used == 0 {
            f64::NAN
        } else {
            100.0 * sum / used as f64
        },
        samples: used,
        excluded,
    })
}

/// MAPE of already computed cost pairs, in percent.
pub fn mape_of(pairs: &[(f64, f64)], floor: f64) -> f64 {
    let s: f64 = pairs
        .iter()
        .map(|(sur, r)| (sur - r).abs() / r.max(floor))
        .sum();
    100.0 * s / pairs.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub load_scale: Vec<f64>,
    pub bids: Vec<f64>,
    pub reference: f64,
    pub brute_force: f64,
    pub tolerance: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
    /// Draws without any feasible lattice point; not compared.
    pub skipped: usize,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.agree)
    }

    pub fn worst_gap(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| (c.reference - c.brute_force).abs() / c.tolerance)
            .fold(0.0, f64::max)
    }
}

/// Reference clearing against exhaustive lattice search on random draws of
/// bids (uniform on `[0, p_max]`) and load multipliers (uniform on
/// `[0.2, 1.8]`). Costs agree within `max(2%·|J_bf|, step·p_max)`.
pub fn oracle_check(
    grid: &Grid,
    n_draws: usize,
    seed: u64,
    step: f64,
    p_max: f64,
) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(10);
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..n_draws)
        .map(|_| {
            let scale = (0..grid.loads.len())
                .map(|_| rng.random_range(0.2..=1.8))
                .collect();
            let bids = (0..grid.n_agents())
                .map(|_| rng.random_range(0.0..=p_max))
                .collect();
            (scale, bids)
        })
        .collect();
    let reference = ReferenceOpf::default();
    let results: Vec<Result<Option<OracleCase>>> = draws
        .into_par_iter()
        .map(|(scale, prices)| {
            let bids = BidSet::new(prices.clone(), p_max)?;
            let bf = match brute_force_clear(grid, &scale, &bids, step) {
                Ok(r) if r.penalties.total <= 1e-12 => r,
                Ok(_) | Err(Error::InfeasibleScenario) => return Ok(None),
                Err(e) => return Err(e),
            };
            let r = reference.clear(grid, &scale, &bids)?;
            let tolerance = (0.02 * bf.objective.abs()).max(step * p_max);
            Ok(Some(OracleCase {
                load_scale: scale,
                bids: prices,
                reference: r.objective,
                brute_force: bf.objective,
                tolerance,
                agree: r.penalties.total <= 1e-4 && (r.objective - bf.objective).abs() <= tolerance,
            }))
        })
        .collect();
    let mut cases = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(c) => cases.push(c),
            None => skipped += 1,
        }
    }
    Ok(OracleReport { cases, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_arithmetic() {
        assert_eq!(mape_of(&[(5.0, 5.0), (2.0, 2.0)], 1e-6), 0.0);
        let m = mape_of(&[(12.0, 10.0), (2.4, 2.0)], 1e-6);
        assert!((m - 20.0).abs() < 1e-9);
    }
}
