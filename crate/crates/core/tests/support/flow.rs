use gridbid_core::grid::{bundled_grid, parse_grid, Grid, BASE_MVA};
use gridbid_core::power_flow::{run_power_flow, PowerFlowSolution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn two_bus(r: f64, x: f64, p_load: f64, q_load: f64) -> Grid {
    parse_grid(&format!(
        "gridfile v1
[bus]
1 0.9 1.1 slack
2 0.9 1.1
[line]
1 2 {r} {x} 500
[load]
2 {p_load} {q_load}
[gen]
2 50 0
"
    ))
    .unwrap()
}

/// Receiving-end voltage of a radial line fed at 1 pu:
/// `|V|⁴ + (2(RP + XQ) − 1)|V|² + |z|²|S|² = 0`, high-voltage root.
pub fn analytic_voltage(r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = 2.0 * (r * p + x * q) - 1.0;
    let c = (r * r + x * x) * (p * p + q * q);
    ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
}

/// Largest voltage error (pu) and slack error (MW) over random two-bus cases.
pub fn two_bus_errors(cases: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dv, mut dp) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let r = rng.random_range(0.001..0.05);
        let x = rng.random_range(0.01..0.2);
        let (pl, ql) = (rng.random_range(5.0..60.0), rng.random_range(0.0..20.0));
        let gen = rng.random_range(0.0..50.0);
        let scale = rng.random_range(0.5..1.5);
        let sol = run_power_flow(&two_bus(r, x, pl, ql), &[gen], &[scale]).unwrap();
        assert!(sol.converged);
        let (p, q) = ((pl * scale - gen) / BASE_MVA, ql * scale / BASE_MVA);
        let v = analytic_voltage(r, x, p, q);
        dv = dv.max((sol.u[1] - v).abs());
        // slack supplies the net load plus I²R losses
        let loss = r * (p * p + q * q) / (v * v);
        dp = dp.max((sol.p_slack - BASE_MVA * (p + loss)).abs());
    }
    (dv, dp)
}

type C = (f64, f64);

fn mul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn conj(a: C) -> C {
    (a.0, -a.1)
}

/// Largest nodal power mismatch (pu) at non-slack buses, recomputed from
/// branch currents.
pub fn mismatch(grid: &Grid, sol: &PowerFlowSolution, gen: &[f64], scale: &[f64]) -> f64 {
    let n = grid.buses.len();
    let v: Vec<C> = (0..n)
        .map(|i| (sol.u[i] * sol.angle[i].cos(), sol.u[i] * sol.angle[i].sin()))
        .collect();
    let mut s = vec![(0.0, 0.0); n];
    for br in grid.branches() {
        let d = br.r * br.r + br.x * br.x;
        let y = (br.r / d, -br.x / d);
        let (f, t) = (br.from, br.to);
        let i_ft = mul(y, (v[f].0 - v[t].0, v[f].1 - v[t].1));
        let sf = mul(v[f], conj(i_ft));
        let st = mul(v[t], conj((-i_ft.0, -i_ft.1)));
        s[f] = (s[f].0 + sf.0, s[f].1 + sf.1);
        s[t] = (s[t].0 + st.0, s[t].1 + st.1);
    }
    let mut injected = vec![(0.0, 0.0); n];
    for (g, &p) in grid.generators.iter().zip(gen) {
        injected[g.bus].0 += p / BASE_MVA;
    }
    for (l, &k) in grid.loads.iter().zip(scale) {
        injected[l.bus].0 -= l.p_mw * k / BASE_MVA;
        injected[l.bus].1 -= l.q_mvar * k / BASE_MVA;
    }
    (0..n)
        .filter(|&i| !grid.buses[i].slack)
        .map(|i| (s[i].0 - injected[i].0).abs().max((s[i].1 - injected[i].1).abs()))
        .fold(0.0, f64::max)
}

/// Largest recomputed mismatch over converged random operating points of
/// the bundled grids, and the number of converged cases.
pub fn worst_residual(cases: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut converged) = (0.0f64, 0);
    for name in ["case2", "case3", "case6"] {
        let grid = bundled_grid(name).unwrap();
        for _ in 0..cases {
            let gen: Vec<f64> = grid
                .generators
                .iter()
                .map(|g| rng.random_range(0.0..=g.p_max_mw))
                .collect();
            let scale: Vec<f64> = grid
                .loads
                .iter()
                .map(|_| rng.random_range(0.0..2.0))
                .collect();
            let sol = run_power_flow(&grid, &gen, &scale).unwrap();
            if sol.converged {
                assert!(sol.max_mismatch < 1e-8);
                worst = worst.max(mismatch(&grid, &sol, &gen, &scale));
                converged += 1;
            }
        }
    }
    (worst, converged)
}
