//! Newton-Raphson AC power flow in polar coordinates.
//!
//! Every non-slack bus is a PQ bus: generators inject active power only
//! (reactive output fixed at zero). The slack bus is held at 1.0 pu, 0 rad.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Branch, Grid, BASE_MVA};

/// Nodal mismatch tolerance in per-unit power.
pub const PF_TOLERANCE: f64 = 1e-8;
/// Newton iteration cap.
pub const PF_MAX_ITER: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus, pu.
    pub u: Vec<f64>,
    /// Voltage angle per bus, rad.
    pub angle: Vec<f64>,
    /// Apparent power per line, MVA (larger of the two ends).
    pub s_line: Vec<f64>,
    /// Apparent power per trafo, MVA.
    pub s_trafo: Vec<f64>,
    /// Active power supplied by the slack bus, MW. Negative means export.
    pub p_slack: f64,
    /// Active series losses, MW.
    pub losses: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest nodal mismatch of the returned voltages, pu.
    pub max_mismatch: f64,
}

/// Linear constraint-violation penalties. Loadings are fractions, so a
/// branch at 110% contributes 0.10.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct PenaltyBreakdown {
    pub voltage: f64,
    pub line: f64,
    pub trafo: f64,
    pub total: f64,
}

/// Per-term penalty assigned to a diverged power flow.
pub const DIVERGENCE_PENALTY: f64 = 10.0;

impl PenaltyBreakdown {
    pub fn new(voltage: f64, line: f64, trafo: f64) -> Self {
        PenaltyBreakdown {
            voltage,
            line,
            trafo,
            total: voltage + line + trafo,
        }
    }

    /// The fixed maximum-penalty state used when a power flow diverges.
    pub fn divergent() -> Self {
        Self::new(DIVERGENCE_PENALTY, DIVERGENCE_PENALTY, DIVERGENCE_PENALTY)
    }
}

/// Sum of `max(u - u_max, u_min - u, 0)` over buses and of
/// `max(S / S_max - 1, 0)` over lines and trafos.
pub fn penalties(solution: &PowerFlowSolution, grid: &Grid) -> PenaltyBreakdown {
    let voltage = grid
        .buses
        .iter()
        .zip(&solution.u)
        .map(|(b, &u)| (u - b.u_max).max(b.u_min - u).max(0.0))
        .sum();
    let loading = |branches: &[Branch], s: &[f64]| -> f64 {
        branches
            .iter()
            .zip(s)
            .map(|(br, &s)| (s / br.s_max_mva - 1.0).max(0.0))
            .sum()
    };
    PenaltyBreakdown::new(
        voltage,
        loading(&grid.lines, &solution.s_line),
        loading(&grid.trafos, &solution.s_trafo),
    )
}

/// Convenience wrapper: builds the admittance model and solves once.
pub fn run_power_flow(
    grid: &Grid,
    gen_setpoints: &[f64],
    load_scale: &[f64],
) -> Result<PowerFlowSolution> {
    Network::new(grid).solve(gen_setpoints, load_scale)
}

/// Admittance model of a grid, reusable across many power-flow calls.
#[derive(Debug, Clone)]
pub struct Network<'g> {
    grid: &'g Grid,
    g: DMatrix<f64>,
    b: DMatrix<f64>,
    /// Non-slack buses in state-vector order.
    pq: Vec<usize>,
    /// Position of each bus in `pq`, `usize::MAX` for the slack.
    pos: Vec<usize>,
}

impl<'g> Network<'g> {
    pub fn new(grid: &'g Grid) -> Self {
        let n = grid.buses.len();
        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for br in grid.branches() {
            let (gs, bs) = series_admittance(br);
            let (f, t) = (br.from, br.to);
            g[(f, f)] += gs;
            g[(t, t)] += gs;
            g[(f, t)] -= gs;
            g[(t, f)] -= gs;
            b[(f, f)] += bs;
            b[(t, t)] += bs;
            b[(f, t)] -= bs;
            b[(t, f)] -= bs;
        }
        let slack = grid.slack_bus();
        let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let mut pos = vec![usize::MAX; n];
        for (k, &i) in pq.iter().enumerate() {
            pos[i] = k;
        }
        Network {
            grid,
            g,
            b,
            pq,
            pos,
        }
    }

    pub fn grid(&self) -> &'g Grid {
        self.grid
    }

    /// Scheduled net injections (pu) per bus.
    pub fn injections(
        &self,
        gen_setpoints: &[f64],
        load_scale: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.grid;
        if gen_setpoints.len() != grid.generators.len() {
            return Err(Error::Shape(format!(
                "{} setpoints for {} generators",
                gen_setpoints.len(),
                grid.generators.len()
            )));
        }
        if load_scale.len() != grid.loads.len() {
            return Err(Error::Shape(format!(
                "{} load scales for {} loads",
                load_scale.len(),
                grid.loads.len()
            )));
        }
        let n = grid.buses.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for (gen, &sp) in grid.generators.iter().zip(gen_setpoints) {
            if !(sp >= -1e-9 && sp <= gen.p_max_mw * (1.0 + 1e-9) + 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "setpoint {sp} MW of agent {} outside [0, {}]",
                    gen.agent, gen.p_max_mw
                )));
            }
            p[gen.bus] += sp / BASE_MVA;
        }
        for (load, &k) in grid.loads.iter().zip(load_scale) {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "load scale {k} must be non-negative"
                )));
            }
            p[load.bus] -= load.p_mw * k / BASE_MVA;
            q[load.bus] -= load.q_mvar * k / BASE_MVA;
        }
        Ok((p, q))
    }

    /// Calculated nodal injections (pu) for the given voltages.
    pub fn calc_injections(&self, u: &[f64], angle: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = u.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let (s, c) = (angle[i] - angle[j]).sin_cos();
                p[i] += u[i] * u[j] * (gij * c + bij * s);
                q[i] += u[i] * u[j] * (gij * s - bij * c);
            }
        }
        (p, q)
    }

    /// Solves from flat start. A diverged solve is returned with
    /// `converged == false`, not as an error.
    pub fn solve(&self, gen_setpoints: &[f64], load_scale: &[f64]) -> Result<PowerFlowSolution> {
        let (p_set, q_set) = self.injections(gen_setpoints, load_scale)?;
        let n = self.grid.buses.len();
        let m = self.pq.len();
        let mut u = vec![1.0; n];
        let mut angle = vec![0.0; n];
        let mut iterations = 0;
        let mut converged = false;
        let mut max_mismatch;

        loop {
            let (p, q) = self.calc_injections(&u, &angle);
            let mut mismatch = DVector::zeros(2 * m);
            for (k, &i) in self.pq.iter().enumerate() {
                mismatch[k] = p_set[i] - p[i];
                mismatch[m + k] = q_set[i] - q[i];
            }
            max_mismatch = mismatch.amax();
            if !max_mismatch.is_finite() {
                break;
            }
            if max_mismatch < PF_TOLERANCE {
                converged = true;
                break;
            }
            if iterations == PF_MAX_ITER {
                break;
            }
            let jac = self.jacobian(&u, &angle, &p, &q);
            let Some(dx) = jac.lu().solve(&mismatch) else {
                break;
            };
            for (k, &i) in self.pq.iter().enumerate() {
                angle[i] += dx[k];
                u[i] += dx[m + k];
            }
            iterations += 1;
        }

        let mut sol = PowerFlowSolution {
            s_line: vec![0.0; self.grid.lines.len()],
            s_trafo: vec![0.0; self.grid.trafos.len()],
            p_slack: f64::NAN,
            losses: f64::NAN,
            converged,
            iterations,
            max_mismatch,
            u,
            angle,
        };
        if converged {
            self.fill_flows(&mut sol, &p_set);
        }
        Ok(sol)
    }

    fn fill_flows(&self, sol: &mut PowerFlowSolution, p_set: &[f64]) {
        let grid = self.grid;
        let mut losses = 0.0;
        let mut flow = |br: &Branch| -> f64 {
            let (gs, bs) = series_admittance(br);
            let vf = (
                sol.u[br.from] * sol.angle[br.from].cos(),
                sol.u[br.from] * sol.angle[br.from].sin(),
            );
            let vt = (
                sol.u[br.to] * sol.angle[br.to].cos(),
                sol.u[br.to] * sol.angle[br.to].sin(),
            );
            let dv = (vf.0 - vt.0, vf.1 - vt.1);
            // I = y (Vf - Vt)
            let i = (gs * dv.0 - bs * dv.1, gs * dv.1 + bs * dv.0);
            // S_from = Vf conj(I), S_to = Vt conj(-I)
            let sf = (vf.0 * i.0 + vf.1 * i.1, vf.1 * i.0 - vf.0 * i.1);
            let st = (-(vt.0 * i.0 + vt.1 * i.1), -(vt.1 * i.0 - vt.0 * i.1));
            losses += (sf.0 + st.0) * BASE_MVA;
            sf.0.hypot(sf.1).max(st.0.hypot(st.1)) * BASE_MVA
        };
        sol.s_line = grid.lines.iter().map(&mut flow).collect();
        sol.s_trafo = grid.trafos.iter().map(&mut flow).collect();
        sol.losses = losses;
        let slack = grid.slack_bus();
        let (p, _) = self.calc_injections(&sol.u, &sol.angle);
        // calculated injection = slack supply + scheduled net injection at the slack bus
        sol.p_slack = (p[slack] - p_set[slack]) * BASE_MVA;
    }

    /// Jacobian of calculated injections w.r.t. (angles, magnitudes) of PQ buses.
    fn jacobian(&self, u: &[f64], angle: &[f64], p: &[f64], q: &[f64]) -> DMatrix<f64> {
        let m = self.pq.len();
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in self.pq.iter().enumerate() {
            for (c, &j) in self.pq.iter().enumerate() {
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                if i == j {
                    let (gii, bii) = (gij, bij);
                    jac[(r, c)] = -q[i] - bii * u[i] * u[i];
                    jac[(r, m + c)] = p[i] / u[i] + gii * u[i];
                    jac[(m + r, c)] = p[i] - gii * u[i] * u[i];
                    jac[(m + r, m + c)] = q[i] / u[i] - bii * u[i];
                } else {
                    if gij == 0.0 && bij == 0.0 {
                        continue;
                    }
                    let (s, co) = (angle[i] - angle[j]).sin_cos();
                    let a = gij * s - bij * co;
                    let bb = gij * co + bij * s;
                    jac[(r, c)] = u[i] * u[j] * a;
                    jac[(r, m + c)] = u[i] * bb;
                    jac[(m + r, c)] = -u[i] * u[j] * bb;
                    jac[(m + r, m + c)] = u[i] * a;
                }
            }
        }
        jac
    }

    /// d(slack supply, MW) / d(active injection at bus, MW) for every bus,
    /// evaluated at a converged solution by an adjoint solve of the Jacobian.
    pub fn slack_sensitivities(&self, sol: &PowerFlowSolution) -> Option<Vec<f64>> {
        if !sol.converged {
            return None;
        }
        let n = self.grid.buses.len();
        let m = self.pq.len();
        let slack = self.grid.slack_bus();
        let (p, q) = self.calc_injections(&sol.u, &sol.angle);
        let jac = self.jacobian(&sol.u, &sol.angle, &p, &q);
        // gradient of the slack's calculated injection w.r.t. the state
        let mut c = DVector::zeros(2 * m);
        for (k, &j) in self.pq.iter().enumerate() {
            let (gsj, bsj) = (self.g[(slack, j)], self.b[(slack, j)]);
            let (s, co) = (sol.angle[slack] - sol.angle[j]).sin_cos();
            c[k] = sol.u[slack] * sol.u[j] * (gsj * s - bsj * co);
            c[m + k] = sol.u[slack] * (gsj * co + bsj * s);
        }
        let y = jac.transpose().lu().solve(&c)?;
        let mut sens = vec![0.0; n];
        for i in 0..n {
            sens[i] = if i == slack { -1.0 } else { y[self.pos[i]] };
        }
        Some(sens)
    }
}

fn series_admittance(br: &Branch) -> (f64, f64) {
    let d = br.r * br.r + br.x * br.x;
    (br.r / d, -br.x / d)
}
