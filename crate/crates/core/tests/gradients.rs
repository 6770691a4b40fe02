mod support;

use support::grads;

const CASES: u64 = 20;

#[test]
fn mlp_regression_loss() {
    grads::mlp_regression_loss(CASES);
}

#[test]
fn maddpg_critic() {
    grads::maddpg_critic(CASES);
}

#[test]
fn maddpg_actor_through_critic() {
    grads::maddpg_actor_through_critic(CASES);
}

#[test]
fn surrogate_actor_and_critic() {
    grads::surrogate_actor_and_critic(CASES);
}

#[test]
fn model_based_actor_through_surrogate() {
    grads::model_based_actor_through_surrogate(CASES);
}
