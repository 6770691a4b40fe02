//! Property bodies, shared by the proptest suite and the acceptance run.

use gridbid_core::env::{encode_time, encode_time_with, load_profile, BiddingEnv, MarketConfig};
use gridbid_core::evaluation::{evaluation_states, regret_for, SearchSettings};
use gridbid_core::grid::{bundled_grid, parse_grid};
use gridbid_core::market::{BidSet, ReferenceOpf};
use gridbid_core::params::AlgoParams;
use gridbid_core::power_flow::{penalties, PowerFlowSolution};
use gridbid_core::surrogate::SurrogateAgent;
use gridbid_core::trainers::{select_bids, BiddingAgent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FRAMES: [u64; 3] = [96, 672, 35_136];

pub fn case2_env() -> BiddingEnv {
    BiddingEnv::new(
        &bundled_grid("case2").unwrap(),
        MarketConfig {
            n_agents: 2,
            p_total: 20.0,
            ..Default::default()
        },
    )
    .unwrap()
}

pub fn time_encoding(tau: u64, k: usize, m: u64) {
    let e = encode_time(tau);
    for j in 0..3 {
        assert!((e[j] * e[j] + e[j + 3] * e[j + 3] - 1.0).abs() < 1e-12);
    }
    let shifted = encode_time(tau + m * FRAMES[k]);
    assert!((e[k] - shifted[k]).abs() < 1e-9, "tau {tau} frame {k}");
    assert!(
        (e[k + 3] - shifted[k + 3]).abs() < 1e-9,
        "tau {tau} frame {k}"
    );
}

pub fn custom_frames(tau: u64) {
    let e = encode_time_with(tau, [4, 8, 16]);
    let f = encode_time_with(tau + 16, [4, 8, 16]);
    for j in 0..6 {
        assert!((e[j] - f[j]).abs() < 1e-12);
    }
}

pub fn load_profile_floor(tau: u64) {
    assert!(load_profile(tau, FRAMES) >= 0.2);
}

/// Moving a voltage or a loading further out of its band never lowers Ψ.
pub fn penalties_monotone(u: f64, du: f64, s: f64, ds: f64) {
    let grid = parse_grid(
        "gridfile v1
[bus]
1 0.95 1.05 slack
2 0.95 1.05
[line]
1 2 0.01 0.05 50
[trafo]
1 2 0.01 0.05 50
[load]
2 10 2
[gen]
2 20 0
",
    )
    .unwrap();
    let sol = |u2: f64, s: f64| PowerFlowSolution {
        u: vec![1.0, u2],
        angle: vec![0.0, 0.0],
        s_line: vec![s],
        s_trafo: vec![s],
        p_slack: 0.0,
        losses: 0.0,
        converged: true,
        iterations: 1,
        max_mismatch: 0.0,
    };
    let base = penalties(&sol(u, s), &grid);
    let away = if u >= 1.0 { u + du } else { u - du };
    let worse = penalties(&sol(away, s + ds), &grid);
    assert!(worse.voltage >= base.voltage);
    assert!(worse.line >= base.line);
    assert!(worse.trafo >= base.trafo);
    assert!(base.voltage >= 0.0 && base.line >= 0.0);
    assert!((base.total - base.voltage - base.line - base.trafo).abs() < 1e-15);
}

/// Noisy bids always land inside `[0, p_max]`, noisy setpoints in `[0, 1]`.
pub fn actions_in_box(seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = vec![BiddingAgent::new(&AlgoParams::maddpg(), None, &mut rng).unwrap(); 3];
    let obs = vec![encode_time(seed); 3];
    let bids = select_bids(&agents, &obs, std, 600.0, &mut rng).unwrap();
    assert!(bids.prices().iter().all(|&b| (0.0..=600.0).contains(&b)));

    let env = case2_env();
    let mut params = AlgoParams::ddpg();
    params.noise_std = std;
    let sur = SurrogateAgent::new(&env, params, 10.0, &mut rng).unwrap();
    let x = sur.act(&[1.0, 1.0, 0.5, 0.5], &mut rng).unwrap();
    assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

pub fn out_of_box_rejected(b: f64) {
    assert!(
        BidSet::new(vec![b, 10.0], 600.0).is_err(),
        "bid {b} accepted"
    );
}

/// Rewards recomputed from the published clearing equal `(p_a − c_a)·P_a`.
/// Returns the largest deviation.
pub fn reward_identity(draws: usize, seed: u64) -> f64 {
    let env = case2_env();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clearing = ReferenceOpf::default();
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let s = env.sample(&mut rng);
        let bids = env
            .bids(vec![
                rng.random_range(0.0..600.0),
                rng.random_range(0.0..600.0),
            ])
            .unwrap();
        let step = env.step(&s, &bids, &clearing).unwrap();
        for a in 0..2 {
            let expected = (bids.prices()[a] - 60.0) * step.clearing.dispatch[a];
            worst = worst.max((step.rewards[a] - expected).abs());
        }
    }
    worst
}

/// Most negative regret seen over a few fixed bid profiles.
pub fn lowest_regret(states: usize, seed: u64) -> f64 {
    let env = case2_env();
    let states = evaluation_states(&env, states, seed);
    let report = regret_for(
        &env,
        &states,
        &|sid, _| env.bids(vec![50.0 * sid as f64, 500.0 - 40.0 * sid as f64]),
        &SearchSettings::default(),
    )
    .unwrap();
    assert!(report
        .rows
        .iter()
        .all(|r| r.best_reward >= r.current_reward - 1e-9));
    report
        .rows
        .iter()
        .map(|r| r.regret)
        .fold(f64::INFINITY, f64::min)
}
