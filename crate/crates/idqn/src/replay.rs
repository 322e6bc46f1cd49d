//! Uniform experience replay with a fixed-capacity ring buffer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::rng::{chacha, stream};

/// One environment step as stored for training.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// Ring buffer over transitions; when full, new pushes overwrite the
/// oldest entry. Sampling is uniform **without replacement** (a partial
/// Fisher-Yates shuffle over the live indices).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    /// `seed` is the run's root seed; the buffer derives its own stream.
    pub fn new(capacity: usize, seed: u64) -> Result<ReplayBuffer> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            rng: chacha(seed, stream::REPLAY),
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
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

    /// Sampler RNG state (seed, stream position) for checkpointing.
    pub fn rng_state(&self) -> ([u8; 32], u128) {
        (self.rng.get_seed(), self.rng.get_word_pos())
    }

    pub fn set_rng_state(&mut self, seed: [u8; 32], pos: u128) {
        use rand_chacha::rand_core::SeedableRng;
        self.rng = ChaCha8Rng::from_seed(seed);
        self.rng.set_word_pos(pos);
    }

    /// Draws `k` distinct transitions uniformly.
    pub fn sample(&mut self, k: usize) -> Result<Vec<&Transition>> {
        if k == 0 {
            return Err(Error::contract("cannot sample an empty batch"));
        }
        if k > self.items.len() {
            return Err(Error::contract(format!(
                "cannot sample {} transitions from a buffer holding {}",
                k,
                self.items.len()
            )));
        }
        let n = self.items.len();
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = self.rng.random_range(i..n);
            idx.swap(i, j);
        }
        Ok(idx[..k].iter().map(|&i| &self.items[i]).collect())
    }
}
