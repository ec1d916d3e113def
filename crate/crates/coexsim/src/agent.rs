//! The learning side of the coordination point: ε-greedy action selection,
//! experience replay, and the DQN/DDQN bootstrap rules.
//!
//! Both variants learn the same way — one minibatch update per environment
//! step once the replay buffer holds a minibatch — and differ only in the
//! bootstrap: the DQN evaluates its own greedy action with the online
//! network, while the DDQN selects with the online network but evaluates with
//! a periodically synchronized target copy.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{ChannelIndex, Observation, NUM_CHANNELS};
use crate::net::{AdamState, QNetwork, TrainSample, ARCH_DIMS};
use crate::rng::substream;

/// Training hyperparameters. The defaults are the protocol's pinned values.
#[derive(Debug, Clone)]
pub struct Hyperparameters {
    /// Learning rate α.
    pub alpha: f64,
    /// Discount factor γ.
    pub gamma: f64,
    pub minibatch_size: usize,
    /// Exploration at the start of training.
    pub epsilon_initial: f64,
    /// Exploration floor, held through the operational phase.
    pub epsilon_final: f64,
    /// Target-network synchronization period, in completed episodes (DDQN).
    pub target_sync_period: usize,
    /// Replay capacity; 5000 holds every step of one 250-episode run, so
    /// nothing is evicted within the standard protocol.
    pub replay_capacity: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            alpha: 0.0001,
            gamma: 0.96,
            minibatch_size: 32,
            epsilon_initial: 1.0,
            epsilon_final: 0.01,
            target_sync_period: 20,
            replay_capacity: 5000,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0) {
            return Err("alpha must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err("gamma must lie in [0, 1)".into());
        }
        if self.minibatch_size == 0 || self.replay_capacity < self.minibatch_size {
            return Err("replay capacity must hold at least one minibatch".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_final)
            || !(self.epsilon_final..=1.0).contains(&self.epsilon_initial)
        {
            return Err("need 0 <= epsilon_final <= epsilon_initial <= 1".into());
        }
        if self.target_sync_period == 0 {
            return Err("target_sync_period must be at least 1 episode".into());
        }
        Ok(())
    }
}

/// Decay sharpness of the exploration schedule: ε reaches `e^-8 ≈ 3.4e-4`
/// of its initial value (clamped at `epsilon_final`) by the end of the
/// training phase.
const EPSILON_DECAY_SHARPNESS: f64 = 8.0;

/// Exploration schedule: exponential decay from `epsilon_initial` at step 0,
/// clamped at `epsilon_final`:
///
/// `ε(s) = max(ε_final, ε_initial · exp(−8·s / training_steps))`.
///
/// The endpoints are exact — ε(0) = ε_initial, ε(s ≥ training_steps) =
/// ε_final — and the curve is monotonically non-increasing. The exponential
/// shape (rather than a linear ramp) matters: with a linear ramp the mean
/// training reward inherits the ramp's straight-line shape, and no
/// exponential fits it with a finite time constant, which destroys the
/// rise-time metric the learning curves are evaluated by.
pub fn epsilon_at(h: &Hyperparameters, global_step: u64, training_steps: u64) -> f64 {
    let s = global_step as f64 / training_steps.max(1) as f64;
    let eps = h.epsilon_initial * (-EPSILON_DECAY_SHARPNESS * s).exp();
    eps.max(h.epsilon_final)
}

/// ε-greedy selection over the Q-values; greedy ties break toward the lowest
/// index for determinism.
pub fn select_action(q_values: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> ChannelIndex {
    debug_assert_eq!(q_values.len(), NUM_CHANNELS);
    if rng.random_range(0.0..1.0) < epsilon {
        return ChannelIndex(rng.random_range(0..NUM_CHANNELS));
    }
    let mut best = 0;
    for (i, &q) in q_values.iter().enumerate().skip(1) {
        if q > q_values[best] {
            best = i;
        }
    }
    ChannelIndex(best)
}

/// One replay record.
#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    pub action: ChannelIndex,
    pub reward: f64,
    pub next_observation: Observation,
    pub terminal: bool,
}

/// FIFO ring of transitions with uniform minibatch sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
            pushed: 0,
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

    /// Total number of pushes, including evicted ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Oldest-to-newest iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Append, evicting the oldest transition once at capacity.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
    }

    /// `k` distinct indices drawn uniformly without replacement, or `None`
    /// when fewer than `k` transitions are stored (the caller skips the
    /// update). Partial Fisher-Yates over an index vector.
    pub fn sample_indices(&self, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
        let n = self.items.len();
        if n < k {
            return None;
        }
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx.truncate(k);
        Some(idx)
    }
}

/// Bootstrap targets for the plain DQN: the online network both selects and
/// evaluates the next action.
///
/// `y_i = r_i` on terminal transitions, else
/// `y_i = r_i + γ · max_a Q_online(s'_i, a)`.
pub fn dqn_targets(batch: &[&Transition], online: &QNetwork, gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.reward
            } else {
                let q = online
                    .forward(t.next_observation.as_slice())
                    .expect("observations from the environment are finite");
                t.reward + gamma * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

/// Bootstrap targets for the DDQN: the online network selects the next
/// action, the target network evaluates it.
///
/// `y_i = r_i` on terminal transitions, else
/// `y_i = r_i + γ · Q_target(s'_i, argmax_a Q_online(s'_i, a))`.
pub fn ddqn_targets(
    batch: &[&Transition],
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.reward
            } else {
                let qo = online
                    .forward(t.next_observation.as_slice())
                    .expect("observations from the environment are finite");
                let mut best = 0;
                for (i, &q) in qo.iter().enumerate().skip(1) {
                    if q > qo[best] {
                        best = i;
                    }
                }
                let qt = target
                    .forward(t.next_observation.as_slice())
                    .expect("observations from the environment are finite");
                t.reward + gamma * qt[best]
            }
        })
        .collect()
}

/// Which bootstrap rule the agent runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentVariant {
    Dqn,
    Ddqn,
}

/// A learning coordination point: online Q-network, optional target network
/// (DDQN), replay buffer, and its own exploration / sampling RNG substreams.
pub struct Agent {
    variant: AgentVariant,
    h: Hyperparameters,
    online: QNetwork,
    /// DDQN only. Initialized as a copy of the online network so the very
    /// first bootstrap targets are self-consistent rather than an arbitrary
    /// second initialization.
    target: Option<QNetwork>,
    opt: AdamState,
    replay: ReplayBuffer,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
}

impl Agent {
    /// Build an agent from its labeled RNG substreams of `seed`
    /// ("agent.init" / "agent.explore" / "agent.replay").
    pub fn new(variant: AgentVariant, h: Hyperparameters, seed: u64) -> Agent {
        h.validate().expect("hyperparameters are sane");
        let mut init_rng = substream(seed, "agent.init", 0);
        let online = QNetwork::init(&ARCH_DIMS, &mut init_rng).expect("pinned dims are valid");
        let target = match variant {
            AgentVariant::Ddqn => Some(online.clone_parameters()),
            AgentVariant::Dqn => None,
        };
        let opt = AdamState::with_learning_rate(&online, h.alpha);
        Agent {
            variant,
            online,
            target,
            opt,
            replay: ReplayBuffer::new(h.replay_capacity),
            explore_rng: substream(seed, "agent.explore", 0),
            replay_rng: substream(seed, "agent.replay", 0),
            h,
        }
    }

    pub fn variant(&self) -> AgentVariant {
        self.variant
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.h
    }

    pub fn online_network(&self) -> &QNetwork {
        &self.online
    }

    pub fn target_network(&self) -> Option<&QNetwork> {
        self.target.as_ref()
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    /// ε-greedy action for the observation.
    pub fn act(&mut self, obs: &Observation, epsilon: f64) -> ChannelIndex {
        let q = self
            .online
            .forward(obs.as_slice())
            .expect("observations from the environment are finite");
        select_action(&q, epsilon, &mut self.explore_rng)
    }

    /// Record a transition and — once the buffer holds a minibatch — perform
    /// exactly one gradient update on a uniformly sampled minibatch. Returns
    /// the minibatch loss when an update ran.
    pub fn learn_step(&mut self, transition: Transition) -> Option<f64> {
        self.replay.push(transition);
        let k = self.h.minibatch_size;
        let idx = self.replay.sample_indices(k, &mut self.replay_rng)?;
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.replay.get(i)).collect();
        let targets = match (self.variant, &self.target) {
            (AgentVariant::Ddqn, Some(target)) => {
                ddqn_targets(&batch, &self.online, target, self.h.gamma)
            }
            _ => dqn_targets(&batch, &self.online, self.h.gamma),
        };
        let samples: Vec<TrainSample<'_>> = batch
            .iter()
            .zip(&targets)
            .map(|(t, &y)| TrainSample {
                obs: t.observation.as_slice(),
                action: t.action.index(),
                target: y,
            })
            .collect();
        let loss = self
            .online
            .train_minibatch(&mut self.opt, &samples)
            .expect("replay contents are well-formed");
        Some(loss)
    }

    /// Target-network synchronization hook, called with the 1-based index of
    /// each completed episode: every `target_sync_period` episodes the DDQN
    /// copies its online parameters into the target network. No-op for the
    /// DQN.
    pub fn sync_target(&mut self, completed_episode: usize) {
        if completed_episode % self.h.target_sync_period != 0 {
            return;
        }
        if let Some(target) = &mut self.target {
            *target = self.online.clone_parameters();
        }
    }
}

// ---------------------------------------------------------------------------
