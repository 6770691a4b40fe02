//! Pay-as-bid market clearing.
//!
//! The reference clearing minimises `J = Σ P_a·p_a + max(P_slack·p_max, 0)`
//! subject to the AC network, voltage band, branch ratings and generator
//! boxes. It runs projected gradient descent on normalised setpoints with an
//! augmented-Lagrangian treatment of the slack kink and of the network
//! constraints. [`brute_force_clear`] enumerates a setpoint lattice and is
//! the oracle the reference solver is checked against.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::power_flow::{penalties, Network, PenaltyBreakdown, PowerFlowSolution};
use crate::registry::Registry;

/// Per-agent bid prices (€/MW) together with the price cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidSet {
    prices: Vec<f64>,
    p_max: f64,
}

impl BidSet {
    pub fn new(prices: Vec<f64>, p_max: f64) -> Result<Self> {
        if !(p_max > 0.0 && p_max.is_finite()) {
            return Err(Error::InvalidBids(format!(
                "p_max {p_max} must be positive"
            )));
        }
        if let Some((a, p)) = prices
            .iter()
            .enumerate()
            .find(|(_, &p)| !(0.0..=p_max).contains(&p))
        {
            return Err(Error::InvalidBids(format!(
                "bid {p} of agent {a} outside [0, {p_max}]"
            )));
        }
        Ok(BidSet { prices, p_max })
    }

    /// Bids given as fractions of `p_max`.
    pub fn from_normalized(fractions: &[f64], p_max: f64) -> Result<Self> {
        Self::new(fractions.iter().map(|f| f * p_max).collect(), p_max)
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.prices.iter().map(|p| p / self.p_max).collect()
    }

    /// Copy with agent `a`'s bid replaced.
    pub fn with_bid(&self, a: usize, price: f64) -> Result<Self> {
        let mut prices = self.prices.clone();
        prices[a] = price;
        Self::new(prices, self.p_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    /// MW per agent.
    pub dispatch: Vec<f64>,
    /// MW drawn from the slack bus; NaN if the power flow diverged.
    pub p_slack: f64,
    /// € per interval.
    pub objective: f64,
    pub penalties: PenaltyBreakdown,
    pub iterations: usize,
    pub wall_time: f64,
    /// Whether the power flow of the returned dispatch converged.
    pub converged: bool,
}

/// `Σ P_a·p_a + max(P_slack·p_max, 0)`.
pub fn objective(bids: &BidSet, dispatch: &[f64], slack: f64) -> f64 {
    assert_eq!(bids.len(), dispatch.len(), "one dispatch value per bid");
    let energy: f64 = bids.prices().iter().zip(dispatch).map(|(p, d)| p * d).sum();
    energy + (slack * bids.p_max()).max(0.0)
}

/// Power-flow evaluation of a fixed dispatch. A diverged power flow yields
/// the maximum-penalty state: `J = P_total·p_max`, each penalty term 10.
pub fn evaluate_dispatch(
    net: &Network<'_>,
    bids: &BidSet,
    dispatch: &[f64],
    load_scale: &[f64],
) -> Result<ClearingResult> {
    let start = Instant::now();
    let sol = net.solve(dispatch, load_scale)?;
    Ok(result_from_solution(
        net.grid(),
        bids,
        dispatch.to_vec(),
        &sol,
        sol.iterations,
        start,
    ))
}

fn result_from_solution(
    grid: &Grid,
    bids: &BidSet,
    dispatch: Vec<f64>,
    sol: &PowerFlowSolution,
    iterations: usize,
    start: Instant,
) -> ClearingResult {
    let (objective_value, pen, p_slack) = if sol.converged {
        (
            objective(bids, &dispatch, sol.p_slack),
            penalties(sol, grid),
            sol.p_slack,
        )
    } else {
        (
            grid.total_capacity() * bids.p_max(),
            PenaltyBreakdown::divergent(),
            f64::NAN,
        )
    };
    ClearingResult {
        dispatch,
        p_slack,
        objective: objective_value,
        penalties: pen,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        converged: sol.converged,
    }
}

/// Anything that maps (grid, loads, bids) to a dispatch.
pub trait ClearingStrategy: Send + Sync {
    fn name(&self) -> &str;

    fn clear(&self, grid: &Grid, load_scale: &[f64], bids: &BidSet) -> Result<ClearingResult>;
}

pub type ClearingCtor = fn() -> Box<dyn ClearingStrategy>;

/// Clearing methods constructible without trained state.
pub fn clearing_registry() -> Registry<ClearingCtor> {
    let mut r: Registry<ClearingCtor> = Registry::new("clearing method");
    r.register("reference-opf", reference_ctor)
        .register("brute-force", brute_force_ctor);
    r
}

fn reference_ctor() -> Box<dyn ClearingStrategy> {
    Box::new(ReferenceOpf::default())
}

fn brute_force_ctor() -> Box<dyn ClearingStrategy> {
    Box::new(BruteForce { step: 0.5 })
}

/// Settings of the reference solver. Weights are on the scale where cost is
/// normalised by `p_max · P_total`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfSettings {
    /// Initial (and maximum) step as a fraction of each generator's capacity.
    pub initial_step: f64,
    pub min_step: f64,
    /// Initial augmented-penalty weight of the network constraints; doubles each round.
    pub penalty_weight: f64,
    /// Augmented weight of the slack-import kink.
    pub slack_weight: f64,
    pub max_rounds: usize,
    pub max_inner_iterations: usize,
    /// Feasibility target on the penalty total.
    pub penalty_tolerance: f64,
    /// Inner loop stops once the merit changes less than this for `patience` iterations.
    pub objective_tolerance: f64,
    pub patience: usize,
    /// Central-difference step for network-constraint gradients, in setpoint fractions.
    pub fd_step: f64,
}

impl Default for OpfSettings {
    fn default() -> Self {
        OpfSettings {
            initial_step: 0.02,
            min_step: 1e-7,
            penalty_weight: 10.0,
            slack_weight: 100.0,
            max_rounds: 8,
            max_inner_iterations: 400,
            penalty_tolerance: 1e-4,
            objective_tolerance: 1e-7,
            patience: 5,
            fd_step: 1e-4,
        }
    }
}

/// The reference (non-learned) clearing.
#[derive(Debug, Clone, Default)]
pub struct ReferenceOpf {
    pub settings: OpfSettings,
}

impl ClearingStrategy for ReferenceOpf {
    fn name(&self) -> &str {
        "reference-opf"
    }

    fn clear(&self, grid: &Grid, load_scale: &[f64], bids: &BidSet) -> Result<ClearingResult> {
        clear_market_with(grid, load_scale, bids, &self.settings)
    }
}

/// Reference clearing with default settings.
pub fn clear_market(grid: &Grid, load_scale: &[f64], bids: &BidSet) -> Result<ClearingResult> {
    clear_market_with(grid, load_scale, bids, &OpfSettings::default())
}

struct Problem<'a> {
    net: Network<'a>,
    load_scale: &'a [f64],
    caps: Vec<f64>,
    gen_bus: Vec<usize>,
    p_total: f64,
    /// ∂cost/∂x_a on the normalised scale
    cost_coef: Vec<f64>,
}

struct Multipliers {
    slack: f64,
    slack_weight: f64,
    network: Vec<f64>,
    weight: f64,
}

struct Point {
    x: Vec<f64>,
    sol: PowerFlowSolution,
    sigma: f64,
    residuals: Vec<f64>,
    merit: f64,
}

impl<'a> Problem<'a> {
    fn dispatch(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.caps).map(|(x, c)| x * c).collect()
    }

    fn solve(&self, x: &[f64]) -> Result<PowerFlowSolution> {
        self.net.solve(&self.dispatch(x), self.load_scale)
    }

    /// Constraint residuals `g ≤ 0`: two per bus, then lines, then trafos.
    fn residuals(&self, sol: &PowerFlowSolution) -> Vec<f64> {
        let grid = self.net.grid();
        let mut g = Vec::with_capacity(2 * grid.buses.len() + grid.lines.len() + grid.trafos.len());
        for (b, &u) in grid.buses.iter().zip(&sol.u) {
            g.push(u - b.u_max);
            g.push(b.u_min - u);
        }
        for (br, s) in grid.lines.iter().zip(&sol.s_line) {
            g.push(s / br.s_max_mva - 1.0);
        }
        for (br, s) in grid.trafos.iter().zip(&sol.s_trafo) {
            g.push(s / br.s_max_mva - 1.0);
        }
        g
    }

    fn cost(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.cost_coef).map(|(x, c)| x * c).sum()
    }

    fn point(&self, x: Vec<f64>, m: &Multipliers) -> Result<Option<Point>> {
        let sol = self.solve(&x)?;
        if !sol.converged {
            return Ok(None);
        }
        let sigma = sol.p_slack / self.p_total;
        let residuals = self.residuals(&sol);
        let merit = self.cost(&x)
            + slack_envelope(sigma, m.slack, m.slack_weight)
            + residuals
                .iter()
                .zip(&m.network)
                .map(|(&g, &l)| augmented(g, l, m.weight))
                .sum::<f64>();
        Ok(Some(Point {
            x,
            sol,
            sigma,
            residuals,
            merit,
        }))
    }

    fn gradient(&self, p: &Point, m: &Multipliers, fd_step: f64) -> Result<Vec<f64>> {
        let sens = self
            .net
            .slack_sensitivities(&p.sol)
            .ok_or(Error::InfeasibleScenario)?;
        let dphi = slack_envelope_slope(p.sigma, m.slack, m.slack_weight);
        let mut grad: Vec<f64> = (0..self.caps.len())
            .map(|a| self.cost_coef[a] + dphi * sens[self.gen_bus[a]] * self.caps[a] / self.p_total)
            .collect();

        let active: Vec<(usize, f64)> = p
            .residuals
            .iter()
            .zip(&m.network)
            .enumerate()
            .filter_map(|(k, (&g, &l))| {
                let mu = l + m.weight * g;
                (mu > 0.0).then_some((k, mu))
            })
            .collect();
        if active.is_empty() {
            return Ok(grad);
        }
        for a in 0..self.caps.len() {
            let mut hi = p.x.clone();
            let mut lo = p.x.clone();
            hi[a] = (p.x[a] + fd_step).min(1.0);
            lo[a] = (p.x[a] - fd_step).max(0.0);
            let (sh, sl) = (self.solve(&hi)?, self.solve(&lo)?);
            let (rh, rl, span) = match (sh.converged, sl.converged) {
                (true, true) => (self.residuals(&sh), self.residuals(&sl), hi[a] - lo[a]),
                (true, false) => (self.residuals(&sh), p.residuals.clone(), hi[a] - p.x[a]),
                (false, true) => (p.residuals.clone(), self.residuals(&sl), p.x[a] - lo[a]),
                (false, false) => continue,
            };
            if span <= 0.0 {
                continue;
            }
            for &(k, mu) in &active {
                grad[a] += mu * (rh[k] - rl[k]) / span;
            }
        }
        Ok(grad)
    }
}

/// `min_{t≥0} t + (max(0, λ + ρ(σ − t))² − λ²)/(2ρ)`: a smoothed `max(σ, 0)`
/// whose slope is the slack multiplier near the kink.
fn slack_envelope(sigma: f64, lambda: f64, rho: f64) -> f64 {
    if sigma + (lambda - 1.0) / rho >= 0.0 {
        sigma + (lambda - 1.0) / rho + (1.0 - lambda * lambda) / (2.0 * rho)
    } else {
        augmented(sigma, lambda, rho)
    }
}

fn slack_envelope_slope(sigma: f64, lambda: f64, rho: f64) -> f64 {
    if sigma + (lambda - 1.0) / rho >= 0.0 {
        1.0
    } else {
        (lambda + rho * sigma).max(0.0)
    }
}

/// Augmented-Lagrangian term of an inequality `g ≤ 0`.
fn augmented(g: f64, lambda: f64, rho: f64) -> f64 {
    let t = (lambda + rho * g).max(0.0);
    (t * t - lambda * lambda) / (2.0 * rho)
}

fn validate(grid: &Grid, load_scale: &[f64], bids: &BidSet) -> Result<()> {
    if bids.len() != grid.n_agents() {
        return Err(Error::Shape(format!(
            "{} bids for {} agents",
            bids.len(),
            grid.n_agents()
        )));
    }
    if load_scale.len() != grid.loads.len() {
        return Err(Error::Shape(format!(
            "{} load scales for {} loads",
            load_scale.len(),
            grid.loads.len()
        )));
    }
    Ok(())
}

/// Lexicographic preference: feasible before infeasible, then cheaper.
fn better(a: &ClearingResult, b: &ClearingResult, tol: f64, norm: f64) -> bool {
    let fa = a.penalties.total <= tol;
    let fb = b.penalties.total <= tol;
    match (fa, fb) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.objective < b.objective,
        (false, false) => {
            a.objective + norm * a.penalties.total < b.objective + norm * b.penalties.total
        }
    }
}

pub fn clear_market_with(
    grid: &Grid,
    load_scale: &[f64],
    bids: &BidSet,
    settings: &OpfSettings,
) -> Result<ClearingResult> {
    let start = Instant::now();
    validate(grid, load_scale, bids)?;
    let p_total = grid.total_capacity();
    let norm = bids.p_max() * p_total;
    let caps = grid.capacities();
    let prob = Problem {
        net: Network::new(grid),
        load_scale,
        cost_coef: bids
            .prices()
            .iter()
            .zip(&caps)
            .map(|(p, c)| p * c / norm)
            .collect(),
        gen_bus: grid.generators.iter().map(|g| g.bus).collect(),
        caps,
        p_total,
    };
    let n = prob.caps.len();
    let n_res = 2 * grid.buses.len() + grid.lines.len() + grid.trafos.len();
    let mut mult = Multipliers {
        slack: 0.0,
        slack_weight: settings.slack_weight,
        network: vec![0.0; n_res],
        weight: settings.penalty_weight,
    };

    let mut current = None;
    for start_x in [0.5, 0.0, 1.0] {
        if let Some(p) = prob.point(vec![start_x; n], &mult)? {
            current = Some(p);
            break;
        }
    }
    let mut current = current.ok_or(Error::InfeasibleScenario)?;
    let mut iterations = 0;
    let mut best = result_from_solution(
        grid,
        bids,
        prob.dispatch(&current.x),
        &current.sol,
        0,
        start,
    );

    for _round in 0..settings.max_rounds {
        let mut step = settings.initial_step;
        let mut quiet = 0;
        for _ in 0..settings.max_inner_iterations {
            let grad = prob.gradient(&current, &mult, settings.fd_step)?;
            let free_max = grad
                .iter()
                .zip(&current.x)
                .filter(|(&g, &x)| !((x <= 0.0 && g > 0.0) || (x >= 1.0 && g < 0.0)))
                .map(|(g, _)| g.abs())
                .fold(0.0, f64::max);
            if free_max == 0.0 {
                break;
            }
            iterations += 1;
            let mut accepted = None;
            while step >= settings.min_step {
                let trial: Vec<f64> = current
                    .x
                    .iter()
                    .zip(&grad)
                    .map(|(x, g)| (x - step * g / free_max).clamp(0.0, 1.0))
                    .collect();
                match prob.point(trial, &mult)? {
                    Some(p) if p.merit < current.merit => {
                        accepted = Some(p);
                        break;
                    }
                    _ => step *= 0.5,
                }
            }
            let Some(next) = accepted else { break };
            let change = current.merit - next.merit;
            current = next;
            step = (step * 2.0).min(settings.initial_step);
            if change < settings.objective_tolerance {
                quiet += 1;
                if quiet >= settings.patience {
                    break;
                }
            } else {
                quiet = 0;
            }
        }

        let candidate = result_from_solution(
            grid,
            bids,
            prob.dispatch(&current.x),
            &current.sol,
            iterations,
            start,
        );
        if better(&candidate, &best, settings.penalty_tolerance, norm) {
            best = candidate;
        }

        let new_slack = (mult.slack + mult.slack_weight * current.sigma).clamp(0.0, 1.0);
        let slack_shift = (new_slack - mult.slack).abs();
        mult.slack = new_slack;
        for (l, &g) in mult.network.iter_mut().zip(&current.residuals) {
            *l = (*l + mult.weight * g).max(0.0);
        }
        let feasible = best.penalties.total <= settings.penalty_tolerance;
        if feasible && slack_shift < 1e-6 {
            break;
        }
        mult.weight *= 2.0;
        // multipliers changed: re-score the current point under the new merit
        current = prob
            .point(current.x, &mult)?
            .ok_or(Error::InfeasibleScenario)?;
    }

    best.iterations = iterations;
    best.wall_time = start.elapsed().as_secs_f64();
    Ok(best)
}

/// Exhaustive oracle over the setpoint lattice `{0, step, 2·step, …} ∩ [0, P_max]`
/// (capacity itself always included).
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub step: f64,
}

impl ClearingStrategy for BruteForce {
    fn name(&self) -> &str {
        "brute-force"
    }

    fn clear(&self, grid: &Grid, load_scale: &[f64], bids: &BidSet) -> Result<ClearingResult> {
        brute_force_clear(grid, load_scale, bids, self.step)
    }
}

pub const BRUTE_FORCE_MAX_AGENTS: usize = 3;
pub const BRUTE_FORCE_MAX_POINTS: f64 = 1e7;

fn lattice(cap: f64, step: f64) -> Vec<f64> {
    let k = (cap / step + 1e-9).floor() as usize;
    let mut pts: Vec<f64> = (0..=k).map(|i| (i as f64 * step).min(cap)).collect();
    if cap - pts[k] > 1e-9 {
        pts.push(cap);
    }
    pts
}

pub fn brute_force_clear(
    grid: &Grid,
    load_scale: &[f64],
    bids: &BidSet,
    step: f64,
) -> Result<ClearingResult> {
    let start = Instant::now();
    validate(grid, load_scale, bids)?;
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lattice step {step} must be positive"
        )));
    }
    let n = grid.n_agents();
    if n > BRUTE_FORCE_MAX_AGENTS {
        return Err(Error::LatticeTooLarge(format!(
            "{n} agents, at most {BRUTE_FORCE_MAX_AGENTS} supported"
        )));
    }
    let axes: Vec<Vec<f64>> = grid
        .generators
        .iter()
        .map(|g| lattice(g.p_max_mw, step))
        .collect();
    let size: f64 = axes.iter().map(|a| a.len() as f64).product();
    if size > BRUTE_FORCE_MAX_POINTS {
        return Err(Error::LatticeTooLarge(format!(
            "{size:.0} lattice points exceed {BRUTE_FORCE_MAX_POINTS:.0}"
        )));
    }
    let norm = bids.p_max() * grid.total_capacity();
    let net = Network::new(grid);
    let mut idx = vec![0usize; n];
    let mut best: Option<(bool, f64, Vec<f64>, PowerFlowSolution)> = None;
    let mut evaluated = 0;
    loop {
        let dispatch: Vec<f64> = idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect();
        let sol = net.solve(&dispatch, load_scale)?;
        evaluated += 1;
        if sol.converged {
            let pen = penalties(&sol, grid).total;
            let j = objective(bids, &dispatch, sol.p_slack);
            let feasible = pen <= 1e-12;
            let score = if feasible { j } else { j + norm * pen };
            let replace = match &best {
                None => true,
                Some((bf, bs, _, _)) => (feasible && !bf) || (feasible == *bf && score < *bs),
            };
            if replace {
                best = Some((feasible, score, dispatch, sol));
            }
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == n {
                let (_, _, dispatch, sol) = best.ok_or(Error::InfeasibleScenario)?;
                return Ok(result_from_solution(
                    grid, bids, dispatch, &sol, evaluated, start,
                ));
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;

    fn case2(agents: usize, p_total: f64) -> Grid {
        parse_grid(
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
        .unwrap()
        .with_agents(agents, p_total)
        .unwrap()
    }

    #[test]
    fn objective_examples() {
        let b = BidSet::new(vec![100.0, 200.0], 600.0).unwrap();
        assert_eq!(objective(&b, &[1.0, 2.0], -3.0), 500.0);
        assert_eq!(objective(&b, &[0.0, 0.0], 0.0), 0.0);
        let b = BidSet::new(vec![0.0], 600.0).unwrap();
        assert_eq!(objective(&b, &[7.0], 2.0), 1200.0);
    }

    #[test]
    fn bids_outside_box_rejected() {
        assert!(BidSet::new(vec![-1.0], 600.0).is_err());
        assert!(BidSet::new(vec![601.0], 600.0).is_err());
        assert!(BidSet::new(vec![600.0, 0.0], 600.0).is_ok());
    }

    #[test]
    fn expensive_bids_zero_load_dispatch_nothing() {
        let g = case2(2, 20.0);
        let b = BidSet::new(vec![600.0, 600.0], 600.0).unwrap();
        let r = clear_market(&g, &[0.0], &b).unwrap();
        assert!(
            r.dispatch.iter().all(|&d| d.abs() < 1e-9),
            "{:?}",
            r.dispatch
        );
        assert!(r.objective.abs() < 1e-6);
        let bf = brute_force_clear(&g, &[0.0], &b, 1.0).unwrap();
        assert_eq!(bf.dispatch, vec![0.0, 0.0]);
        assert_eq!(bf.objective, 0.0);
    }

    #[test]
    fn merit_order_saturates_cheap_unit() {
        let g = case2(2, 20.0);
        let b = BidSet::new(vec![50.0, 100.0], 600.0).unwrap();
        let r = clear_market(&g, &[1.2], &b).unwrap();
        assert!((r.dispatch[0] - 10.0).abs() < 1e-3, "{:?}", r.dispatch);
        assert!(
            r.dispatch[1] > 2.0 && r.dispatch[1] < 2.2,
            "{:?}",
            r.dispatch
        );
        assert!(r.penalties.total <= 1e-4);
    }

    #[test]
    fn overload_dispatches_everything() {
        let g = case2(2, 20.0);
        let b = BidSet::new(vec![300.0, 500.0], 600.0).unwrap();
        let r = clear_market(&g, &[2.5], &b).unwrap();
        assert!(
            r.dispatch.iter().all(|&d| (d - 10.0).abs() < 1e-6),
            "{:?}",
            r.dispatch
        );
        assert!(r.p_slack > 0.0);
        let expect = 300.0 * 10.0 + 500.0 * 10.0 + r.p_slack * 600.0;
        assert!((r.objective - expect).abs() < 1e-6);
    }

    #[test]
    fn brute_force_rejects_large_lattices() {
        let g = case2(2, 20.0);
        let b = BidSet::new(vec![1.0, 2.0], 600.0).unwrap();
        assert!(matches!(
            brute_force_clear(&g, &[1.0], &b, 1e-4),
            Err(Error::LatticeTooLarge(_))
        ));
        let g4 = case2(4, 20.0);
        let b4 = BidSet::new(vec![1.0; 4], 600.0).unwrap();
        assert!(matches!(
            brute_force_clear(&g4, &[1.0], &b4, 1.0),
            Err(Error::LatticeTooLarge(_))
        ));
    }

    #[test]
    fn single_agent_lattice_example() {
        // one agent of 10 MW, load 5 MW, bid 60 €/MW, 21 lattice points
        let g = case2(1, 10.0);
        let b = BidSet::new(vec![60.0], 600.0).unwrap();
        let r = brute_force_clear(&g, &[0.5], &b, 0.5).unwrap();
        assert_eq!(r.dispatch, vec![5.0]);
        assert_eq!(r.iterations, 21);
        let loss_term = r.p_slack * 600.0;
        assert!(r.p_slack > 0.0 && loss_term < 2.0, "{}", r.p_slack);
        assert!((r.objective - (300.0 + loss_term)).abs() < 1e-9);
    }

    #[test]
    fn registry_lookup() {
        let reg = clearing_registry();
        assert_eq!(reg.get("reference-opf").unwrap()().name(), "reference-opf");
        assert!(reg.get("lmp").is_err());
    }
}
