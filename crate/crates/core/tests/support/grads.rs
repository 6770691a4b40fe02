//! Tape gradients against central finite differences.

use gridbid_core::env::{encode_time, BiddingEnv, MarketConfig};
use gridbid_core::grid::bundled_grid;
use gridbid_core::neural::{Activation, Matrix, Mlp, ParamVars, Tape, Var};
use gridbid_core::params::AlgoParams;
use gridbid_core::replay::Transition;
use gridbid_core::surrogate::SurrogateAgent;
use gridbid_core::trainers::{maddpg_actor_loss_tape, mmaddpg_loss_tape, Batch, BiddingAgent};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
const FLOOR: f64 = 1e-7;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Checks a sample of entries of every parameter block of `net`.
/// `loss` records the scalar loss for the given network.
pub fn check(net: &Mlp, rng: &mut ChaCha8Rng, loss: &dyn Fn(&Mlp, &mut Tape) -> (Var, ParamVars)) {
    let mut tape = Tape::new();
    let (l, pv) = loss(net, &mut tape);
    tape.backward(l, Array2::ones((1, 1))).unwrap();
    let grads = pv.grads(&tape);
    let value = |n: &Mlp| {
        let mut t = Tape::new();
        let (l, _) = loss(n, &mut t);
        t.value(l)[[0, 0]]
    };
    for (block, g) in grads.iter().enumerate() {
        let (rows, cols) = g.dim();
        for _ in 0..6 {
            let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let mut plus = net.clone();
            plus.params_mut()[block][[r, c]] += H;
            let mut minus = net.clone();
            minus.params_mut()[block][[r, c]] -= H;
            let fd = (value(&plus) - value(&minus)) / (2.0 * H);
            let an = g[[r, c]];
            let scale = an.abs().max(fd.abs());
            assert!(
                scale < FLOOR || (an - fd).abs() <= REL * scale,
                "{} [{r},{c}]: analytic {an}, finite difference {fd}",
                Mlp::block_name(block)
            );
        }
    }
}

fn transitions(n: usize, agents: usize, loads: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
    (0..n)
        .map(|_| {
            let tau = rng.random_range(0..35_136);
            Transition {
                tau,
                observations: vec![encode_time(tau); agents],
                bids: (0..agents).map(|_| rng.random_range(0.0..1.0)).collect(),
                rewards: (0..agents)
                    .map(|_| rng.random_range(-50.0..500.0))
                    .collect(),
                load_scale: (0..loads).map(|_| rng.random_range(0.3..1.7)).collect(),
                dispatch: (0..agents).map(|_| rng.random_range(0.0..15.0)).collect(),
                residual_cost: rng.random_range(0.0..0.5),
            }
        })
        .collect()
}

fn batch(agents: usize, rng: &mut ChaCha8Rng) -> Batch {
    let ts = transitions(16, agents, 3, rng);
    let refs: Vec<&Transition> = ts.iter().collect();
    Batch::new(&refs, &vec![9000.0; agents])
}

/// Plain regression loss of a two-hidden-layer net.
pub fn mlp_regression_loss(cases: u64) {
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let net = Mlp::new(
            &[5, 16, 8, 2],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let x = random_matrix(12, 5, &mut rng);
        let y = random_matrix(12, 2, &mut rng);
        check(&net, &mut rng, &|n, t| n.mse_tape(t, &x, &y).unwrap());
    }
}

pub fn maddpg_critic(cases: u64) {
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + case);
        let agents = 4;
        let critic = Mlp::new(
            &[7 * agents, 256, 1],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let x = random_matrix(16, 7 * agents, &mut rng);
        let y = random_matrix(16, 1, &mut rng);
        check(&critic, &mut rng, &|n, t| n.mse_tape(t, &x, &y).unwrap());
    }
}

pub fn maddpg_actor_through_critic(cases: u64) {
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + case);
        let agents = 3;
        let agent = BiddingAgent::new(&AlgoParams::maddpg(), Some(7 * agents), &mut rng).unwrap();
        let critic = agent.critic.clone().unwrap();
        let b = batch(agents, &mut rng);
        let a = (case as usize) % agents;
        check(&agent.actor, &mut rng, &|n, t| {
            maddpg_actor_loss_tape(n, &critic, a, &b, t).unwrap()
        });
    }
}

pub fn surrogate_actor_and_critic(cases: u64) {
    let grid = bundled_grid("case6").unwrap();
    let env = BiddingEnv::new(&grid, MarketConfig::default()).unwrap();
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + case);
        let sur = SurrogateAgent::new(&env, AlgoParams::ddpg(), 10.0, &mut rng).unwrap();
        let od = sur.obs_dim();
        let na = sur.n_agents();
        let obs = random_matrix(16, od, &mut rng).mapv(f64::abs);
        let target = random_matrix(16, 1, &mut rng);
        let x = random_matrix(16, od + na, &mut rng);
        check(&sur.critic, &mut rng, &|n, t| {
            n.mse_tape(t, &x, &target).unwrap()
        });
        check(&sur.actor, &mut rng, &|n, t| {
            let mut probe = sur.clone();
            probe.actor = n.clone();
            probe.actor_loss_tape(t, &obs).unwrap()
        });
    }
}

/// Bidding actor through a frozen surrogate actor.
pub fn model_based_actor_through_surrogate(cases: u64) {
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + case);
        let agents = 4;
        let agent = BiddingAgent::new(&AlgoParams::mmaddpg(), None, &mut rng).unwrap();
        let surrogate = Mlp::new(
            &[6 + agents, 256, agents],
            Activation::Tanh,
            Activation::Sigmoid,
            &mut rng,
        );
        let b = batch(agents, &mut rng);
        let a = (case as usize) % agents;
        check(&agent.actor, &mut rng, &|n, t| {
            let mut probe = agent.clone();
            probe.actor = n.clone();
            mmaddpg_loss_tape(&probe, a, &b, &surrogate, 0.1, t).unwrap()
        });
    }
}
