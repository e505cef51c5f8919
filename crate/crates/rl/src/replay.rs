//! FIFO experience pool for the off-policy learners.

use std::collections::VecDeque;

use rand::Rng;

use crate::env::Transition;
use crate::error::{Result, RlError};

pub const DEFAULT_CAPACITY: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(RlError::InvalidInput("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Transition> + '_ {
        self.items.iter()
    }

    /// Appends a transition, evicting the oldest one when full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        let finite = t.reward.is_finite()
            && t.state
                .iter()
                .chain(&t.action)
                .chain(&t.next_state)
                .all(|v| v.is_finite());
        if !finite {
            return Err(RlError::InvalidInput("transition has non-finite fields".into()));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// `n` distinct transitions chosen uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if n > self.items.len() || n == 0 {
            return Err(RlError::NotReady {
                have: self.items.len(),
                need: n.max(1),
            });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}
