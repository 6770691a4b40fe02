use gridbid_core::env::{BiddingEnv, MarketConfig};
use gridbid_core::grid::bundled_grid;
use gridbid_core::trainers::{
    trainer_registry, training_loop, LoopSettings, RunRngs, TrainerSetup,
};

pub fn env(n_agents: usize) -> BiddingEnv {
    BiddingEnv::new(
        &bundled_grid("case6").unwrap(),
        MarketConfig {
            n_agents,
            p_total: 15.0 * n_agents as f64,
            ..Default::default()
        },
    )
    .unwrap()
}

/// Small networks so the schedule checks stay fast.
pub fn light_setup(mode: &str, seed: u64) -> TrainerSetup {
    let mut s = TrainerSetup::new(mode, seed);
    s.agent_params.batch_size = 16;
    s.agent_params.actor_neurons = vec![8];
    if mode == "maddpg" {
        s.agent_params.critic_neurons = vec![8];
    }
    s.surrogate_params.batch_size = 16;
    s.surrogate_params.actor_neurons = vec![16];
    s.surrogate_params.critic_neurons = vec![16];
    s
}

/// `(agents, threshold)` as built by the model-based trainer.
pub fn thresholds() -> Vec<(usize, usize)> {
    [4, 10, 20]
        .into_iter()
        .map(|n| {
            let t = trainer_registry().get("mmaddpg").unwrap()(
                &env(n),
                &TrainerSetup::new("mmaddpg", 0),
            )
            .unwrap();
            (n, t.agent_start())
        })
        .collect()
}

/// Trains past the threshold and diffs checkpoints taken at the initial
/// step, one step before the threshold and one step after it.
pub fn frozen_until_threshold(seed: u64) {
    let e = env(4);
    let mut t =
        trainer_registry().get("mmaddpg").unwrap()(&e, &light_setup("mmaddpg", seed)).unwrap();
    let start = t.agent_start();
    let before = t.checkpoint(0);
    let mut seen = Vec::new();
    let settings = LoopSettings {
        steps: start + 1,
        metric_every: 1,
        buffer_capacity: 10_000,
    };
    training_loop(
        &e,
        t.as_mut(),
        settings,
        &mut RunRngs::new(seed),
        &mut |step, t| {
            if step == start - 1 || step == start + 1 {
                seen.push(t.checkpoint(step));
            }
            Ok(None)
        },
    )
    .unwrap();
    let (at, after) = (&seen[0], &seen[1]);
    assert_eq!(
        before.agents, at.agents,
        "agent parameters changed before step {start}"
    );
    assert_ne!(
        before.surrogate, at.surrogate,
        "the surrogate trains from the start"
    );
    assert_ne!(
        at.agents, after.agents,
        "agents did not train after step {start}"
    );
}
