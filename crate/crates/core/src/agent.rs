//! The learning agent.
//!
//! Transitions carry a reward for every action and the shared non-position part
//! of the next state, so one sampled sequence trains all three Q-outputs at every
//! step. For step `t` and action `a` the target is
//!
//! ```text
//! s'_a   = [next_core | one_hot(a)]
//! a*     = argmax_b Q_online(s'_a, b)
//! target = r_a + gamma * Q_target(s'_a, a*)
//! ```
//!
//! and the loss is the mean squared error over all `T x 3` entries. Each
//! network's next-state evaluations reuse the hidden state that network reached
//! on the executed path at step `t`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, AugmentedTransition};
use crate::error::{Error, Result};
use crate::features::MarketState;
use crate::nn::{adam_step, AdamConfig, AdamState, GradientSet, NetShape, QNetwork, RecurrentState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ExplorationMode {
    /// Always greedy; exploration comes from the augmented rewards.
    Greedy,
    EpsilonGreedy {
        epsilon: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Sampled sequence length and training period.
    pub seq_len: usize,
    pub memory_capacity: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    /// Global gradient-norm clip applied before Adam; `None` disables it.
    pub grad_clip: Option<f64>,
    pub exploration: ExplorationMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            seq_len: 96,
            memory_capacity: 480,
            gamma: 0.99,
            tau: 0.001,
            lr: 2.5e-4,
            grad_clip: Some(10.0),
            exploration: ExplorationMode::Greedy,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seq_len == 0 || self.seq_len > self.memory_capacity {
            return bad("need 0 < seq_len <= memory_capacity");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if let ExplorationMode::EpsilonGreedy { epsilon } = self.exploration {
            if !(0.0..=1.0).contains(&epsilon) {
                return bad("epsilon must be in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Fixed-capacity ring of time-contiguous transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<AugmentedTransition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayMemory {
            capacity,
            items: VecDeque::with_capacity(capacity),
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

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    /// Appends a transition, evicting the oldest at capacity. Each transition must
    /// directly follow the previous one in environment time.
    pub fn store(&mut self, t: AugmentedTransition) -> Result<()> {
        if let Some(last) = self.items.back() {
            if t.time != last.time + 1 {
                return Err(Error::Contract(format!(
                    "transition at time {} does not follow {}",
                    t.time, last.time
                )));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&AugmentedTransition> {
        self.items.get(i)
    }

    /// Window start drawn uniformly from the `len - len_seq + 1` valid positions;
    /// `None` until the memory is full.
    pub fn sample_start<R: Rng>(&self, seq_len: usize, rng: &mut R) -> Option<usize> {
        if !self.is_full() || seq_len == 0 || seq_len > self.items.len() {
            return None;
        }
        Some(rng.random_range(0..=self.items.len() - seq_len))
    }

    pub fn window(&self, start: usize, seq_len: usize) -> Vec<&AugmentedTransition> {
        self.items.range(start..start + seq_len).collect()
    }

    pub fn sample_sequence<R: Rng>(&self, seq_len: usize, rng: &mut R) -> Option<Vec<&AugmentedTransition>> {
        self.sample_start(seq_len, rng).map(|s| self.window(s, seq_len))
    }
}

/// Index of the largest value; ties go to the flat action, then the lowest index.
pub fn greedy_index(q: &[f64]) -> usize {
    let flat = Action::Flat.index();
    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if q.get(flat) == Some(&best) {
        flat
    } else {
        q.iter().position(|&v| v == best).unwrap_or(flat)
    }
}

pub fn greedy_action(q: &[f64]) -> Action {
    Action::from_index(greedy_index(q))
}

/// Per-step augmented targets, `targets[t][a]`.
pub fn augmented_targets(
    online: &QNetwork,
    target: &QNetwork,
    seq: &[&AugmentedTransition],
    online_states: &[RecurrentState],
    gamma: f64,
) -> Result<Vec<[f64; 3]>> {
    let mut target_state = RecurrentState::zeros(target.shape().lstm);
    let mut out = Vec::with_capacity(seq.len());
    for (t, tr) in seq.iter().enumerate() {
        target.infer_step(&mut target_state, tr.state.as_slice())?;
        let next: Vec<MarketState> = Action::ALL.iter().map(|&a| tr.next_state(a)).collect();
        let inputs: Vec<&[f64]> = next.iter().map(|s| s.as_slice()).collect();
        let q_online = online.q_branches(&online_states[t], &inputs)?;
        let q_target = target.q_branches(&target_state, &inputs)?;
        let mut row = [0.0; 3];
        for a in 0..3 {
            let best = greedy_index(&q_online[a]);
            row[a] = tr.rewards[a] + gamma * q_target[a][best];
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: GradientSet,
    pub targets: Vec<[f64; 3]>,
    pub q: Vec<Vec<f64>>,
}

/// Action-augmentation loss and its gradient with targets held constant.
pub fn compute_loss_and_grads(
    online: &QNetwork,
    target: &QNetwork,
    seq: &[&AugmentedTransition],
    gamma: f64,
) -> Result<LossOutput> {
    if seq.is_empty() {
        return Err(Error::Contract("empty training sequence".into()));
    }
    if seq.windows(2).any(|w| w[1].time != w[0].time + 1) {
        return Err(Error::Contract("training sequence is not time-contiguous".into()));
    }
    if online.shape() != target.shape() || online.shape().output != 3 {
        return Err(Error::Contract(
            "online and target networks must both have 3 outputs".into(),
        ));
    }
    let xs: Vec<&[f64]> = seq.iter().map(|t| t.state.as_slice()).collect();
    let (q, caches) = online.forward_sequence(&xs)?;
    let states: Vec<RecurrentState> = caches.iter().map(|c| c.state_out()).collect();
    let targets = augmented_targets(online, target, seq, &states, gamma)?;

    let n = (seq.len() * 3) as f64;
    let mut loss = 0.0;
    let mut dq = Vec::with_capacity(seq.len());
    for (qt, tt) in q.iter().zip(&targets) {
        let mut d = vec![0.0; 3];
        for a in 0..3 {
            let diff = qt[a] - tt[a];
            loss += diff * diff;
            d[a] = 2.0 * diff / n;
        }
        dq.push(d);
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NumericalFault(format!("loss is {loss}")));
    }
    let grads = online.backward_sequence(&caches, &dq)?;
    Ok(LossOutput {
        loss,
        grads,
        targets,
        q,
    })
}

pub fn soft_update(target: &mut QNetwork, online: &QNetwork, tau: f64) -> Result<()> {
    target.soft_update_from(online, tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub q: [f64; 3],
    pub greedy: bool,
}

/// Online and target networks, optimizer, RNG and the persistent acting state.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: AgentConfig,
    pub online: QNetwork,
    pub target: QNetwork,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub acting_state: RecurrentState,
    pub train_steps: u64,
}

impl Agent {
    /// Seeds network initialization and the sampling/exploration RNG from `seed`.
    pub fn new(shape: NetShape, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if shape.output != 3 {
            return Err(Error::Config("the Q-network must have 3 outputs".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetwork::init(shape, &mut rng);
        let target = online.clone();
        let adam = AdamState::new(&online);
        Ok(Agent {
            config,
            target,
            adam,
            rng,
            acting_state: RecurrentState::zeros(shape.lstm),
            online,
            train_steps: 0,
        })
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.config.lr,
            ..AdamConfig::default()
        }
    }

    /// Advances the acting recurrent state on `state` and picks an action.
    pub fn act(&mut self, state: &MarketState) -> Result<Decision> {
        let q = self.online.infer_step(&mut self.acting_state, state.as_slice())?;
        let q = [q[0], q[1], q[2]];
        let greedy = greedy_action(&q);
        if let ExplorationMode::EpsilonGreedy { epsilon } = self.config.exploration {
            if self.rng.random::<f64>() < epsilon {
                let action = Action::from_index(self.rng.random_range(0..3));
                return Ok(Decision {
                    action,
                    q,
                    greedy: action == greedy,
                });
            }
        }
        Ok(Decision {
            action: greedy,
            q,
            greedy: true,
        })
    }

    /// One optimizer step on a sampled sequence.
    pub fn train(&mut self, seq: &[&AugmentedTransition]) -> Result<TrainStats> {
        let mut out = compute_loss_and_grads(&self.online, &self.target, seq, self.config.gamma)?;
        let grad_norm = match self.config.grad_clip {
            Some(max) => out.grads.clip_global_norm(max),
            None => out.grads.global_norm(),
        };
        if !grad_norm.is_finite() {
            return Err(Error::NumericalFault("non-finite gradient".into()));
        }
        let cfg = self.adam_config();
        adam_step(&mut self.online, &out.grads, &mut self.adam, &cfg)?;
        self.train_steps += 1;
        Ok(TrainStats {
            loss: out.loss,
            grad_norm,
        })
    }

    /// Samples from `memory` and trains; `None` while the memory is filling.
    pub fn train_from(&mut self, memory: &ReplayMemory) -> Result<Option<TrainStats>> {
        let Some(start) = memory.sample_start(self.config.seq_len, &mut self.rng) else {
            return Ok(None);
        };
        let seq = memory.window(start, self.config.seq_len);
        self.train(&seq).map(Some)
    }

    pub fn soft_update(&mut self) -> Result<()> {
        soft_update(&mut self.target, &self.online, self.config.tau)
    }
}
