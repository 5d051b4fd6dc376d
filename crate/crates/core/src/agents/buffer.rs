use rand::Rng;

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// One `(s, a, r, s')` transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTuple {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True environment termination (not a horizon cut); disables bootstrapping.
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with flat storage; the oldest entry is
/// overwritten first once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    write: usize,
    len: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminals: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 || state_dim == 0 || action_dim == 0 {
            return Err(Error::invalid("replay buffer capacity and dimensions must be positive"));
        }
        Ok(ReplayBuffer {
            state_dim,
            action_dim,
            capacity,
            write: 0,
            len: 0,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            terminals: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn push(&mut self, t: &TransitionTuple) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return Err(Error::shape("ReplayBuffer::push", self.state_dim, t.state.len()));
        }
        if t.action.len() != self.action_dim {
            return Err(Error::shape("ReplayBuffer::push", self.action_dim, t.action.len()));
        }
        if self.len < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(&t.next_state);
            self.terminals.push(t.terminal);
            self.len += 1;
        } else {
            let (sd, ad, w) = (self.state_dim, self.action_dim, self.write);
            self.states[w * sd..(w + 1) * sd].copy_from_slice(&t.state);
            self.actions[w * ad..(w + 1) * ad].copy_from_slice(&t.action);
            self.rewards[w] = t.reward;
            self.next_states[w * sd..(w + 1) * sd].copy_from_slice(&t.next_state);
            self.terminals[w] = t.terminal;
        }
        self.write = (self.write + 1) % self.capacity;
        Ok(())
    }

    /// Entry `i` in storage order (not insertion order once wrapped).
    pub fn get(&self, i: usize) -> Option<TransitionTuple> {
        if i >= self.len {
            return None;
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        Some(TransitionTuple {
            state: self.states[i * sd..(i + 1) * sd].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            terminal: self.terminals[i],
        })
    }

    /// Entries from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = TransitionTuple> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.write };
        (0..self.len).map(move |k| self.get((start + k) % self.capacity).expect("in range"))
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        (self.len > 0).then(|| rng.gen_range(0..self.len))
    }
}

/// A minibatch in matrix form.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminals: Vec<bool>,
    /// Buffer each row was drawn from.
    pub sources: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_tuples(tuples: &[TransitionTuple]) -> Result<Self> {
        let first = tuples.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let mut parts = Parts::new(tuples.len(), sd, ad);
        for t in tuples {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::shape("Batch::from_tuples", sd, t.state.len()));
            }
            parts.states.extend_from_slice(&t.state);
            parts.actions.extend_from_slice(&t.action);
            parts.rewards.push(t.reward);
            parts.next_states.extend_from_slice(&t.next_state);
            parts.terminals.push(t.terminal);
            parts.sources.push(0);
        }
        parts.finish(sd, ad)
    }

    pub fn tuple(&self, i: usize) -> TransitionTuple {
        TransitionTuple {
            state: self.states.row(i).to_vec(),
            action: self.actions.row(i).to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states.row(i).to_vec(),
            terminal: self.terminals[i],
        }
    }
}

/// Flat accumulator used while gathering rows from several buffers.
#[derive(Debug)]
pub(crate) struct Parts {
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminals: Vec<bool>,
    sources: Vec<usize>,
}

impl Parts {
    pub(crate) fn new(n: usize, sd: usize, ad: usize) -> Self {
        Parts {
            states: Vec::with_capacity(n * sd),
            actions: Vec::with_capacity(n * ad),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n * sd),
            terminals: Vec::with_capacity(n),
            sources: Vec::with_capacity(n),
        }
    }

    pub(crate) fn push_from(&mut self, buf: &ReplayBuffer, source: usize, i: usize, reward_offset: f64) {
        let (sd, ad) = (buf.state_dim, buf.action_dim);
        self.states.extend_from_slice(&buf.states[i * sd..(i + 1) * sd]);
        self.actions.extend_from_slice(&buf.actions[i * ad..(i + 1) * ad]);
        self.rewards.push(buf.rewards[i] + reward_offset);
        self.next_states.extend_from_slice(&buf.next_states[i * sd..(i + 1) * sd]);
        self.terminals.push(buf.terminals[i]);
        self.sources.push(source);
    }

    pub(crate) fn finish(self, sd: usize, ad: usize) -> Result<Batch> {
        let n = self.rewards.len();
        Ok(Batch {
            states: Matrix::from_vec(n, sd, self.states)?,
            actions: Matrix::from_vec(n, ad, self.actions)?,
            rewards: self.rewards,
            next_states: Matrix::from_vec(n, sd, self.next_states)?,
            terminals: self.terminals,
            sources: self.sources,
        })
    }
}
