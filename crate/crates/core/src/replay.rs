use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;

pub const DEFAULT_CAPACITY: usize = 50_000;

/// One market interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub tau: u64,
    pub observations: Vec<Observation>,
    /// Executed bids as fractions of `p_max`.
    pub bids: Vec<f64>,
    /// Profit per agent, €.
    pub rewards: Vec<f64>,
    pub load_scale: Vec<f64>,
    /// MW per agent.
    pub dispatch: Vec<f64>,
    /// Slack-import cost plus weighted penalties, normalised by `p_max·P_total`.
    pub residual_cost: f64,
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        (0..n)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
