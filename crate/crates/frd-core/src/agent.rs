//! The advantage actor-critic learner.
//!
//! Each agent owns two independent networks: a policy net mapping the
//! 4-dimensional state to action logits (softmaxed into a distribution)
//! and a value net estimating the discounted return of a state. After each
//! episode the agent performs one full-batch Adam update per network:
//!
//! * critic: mean squared error against one-step targets
//!   `r + gamma * V(s')` (the bootstrap is dropped when the step genuinely
//!   failed, but kept when the episode merely hit the step limit);
//! * actor: mean of `-advantage * ln pi(a|s)` with the advantage
//!   `r + gamma * V(s') - V(s)` computed from the *pre-update* critic,
//!   optionally minus an entropy bonus.
//!
//! The loss/gradient computations are exposed as free functions of the
//! network so they can be checked against finite differences directly.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, CartPole, EnvState, PolicyVector, ACTION_COUNT};
use crate::memory::StepRecorder;
use crate::nn::{softmax, AdamState, Gradients, Mlp, NetSnapshot, NeuralError};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("cannot update from an empty episode")]
    EmptyEpisode,
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Learner hyperparameters. The network shape applies to both nets (they
/// differ only in output width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Discount factor for the one-step bootstrap target.
    pub gamma: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Weight of the entropy bonus subtracted from the policy loss;
    /// 0 disables the term entirely.
    pub entropy_coeff: f64,
}

impl Default for AgentConfig {
    fn default() -> AgentConfig {
        AgentConfig {
            hidden_width: 24,
            hidden_layers: 2,
            gamma: 0.99,
            // Tuned so a lone default agent reliably reaches the 450-step
            // mission within 2000 episodes; the critic learns faster than
            // the actor so advantages stay meaningful.
            policy_lr: 3e-3,
            value_lr: 1e-2,
            entropy_coeff: 0.0,
        }
    }
}

impl AgentConfig {
    pub fn policy_widths(&self) -> Vec<usize> {
        let mut widths = vec![4];
        widths.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        widths.push(ACTION_COUNT);
        widths
    }

    pub fn value_widths(&self) -> Vec<usize> {
        let mut widths = vec![4];
        widths.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        widths.push(1);
        widths
    }
}

/// One transition of an episode, as consumed by the update step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub state: EnvState,
    pub action: Action,
    pub reward: f64,
    pub next_state: EnvState,
    /// True when the transition genuinely failed the task. Truncation at
    /// the step limit leaves this false, so the target still bootstraps.
    pub failed: bool,
}

/// Losses of one episode's update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeReport {
    pub length: u32,
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// Serializable full state of an agent: both network snapshots, the
/// config, and the action-sampling RNG position. Optimizer moments restart
/// fresh on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub id: u32,
    pub config: AgentConfig,
    pub policy: NetSnapshot,
    pub value: NetSnapshot,
    pub rng: RngCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngCheckpoint {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

/// An advantage actor-critic learner for the cart-pole task.
#[derive(Debug, Clone)]
pub struct Agent {
    id: u32,
    config: AgentConfig,
    policy_net: Mlp,
    value_net: Mlp,
    policy_opt: AdamState,
    value_opt: AdamState,
    sample_rng: ChaCha8Rng,
}

impl Agent {
    /// Build an agent from three independent seed streams: one per network
    /// initialization and one for action sampling.
    pub fn new(
        id: u32,
        config: AgentConfig,
        policy_init_seed: u64,
        value_init_seed: u64,
        sampling_seed: u64,
    ) -> Agent {
        let mut policy_rng = ChaCha8Rng::seed_from_u64(policy_init_seed);
        let mut value_rng = ChaCha8Rng::seed_from_u64(value_init_seed);
        let policy_net = Mlp::new(&config.policy_widths(), &mut policy_rng);
        let value_net = Mlp::new(&config.value_widths(), &mut value_rng);
        let policy_opt = AdamState::new(policy_net.param_count(), config.policy_lr);
        let value_opt = AdamState::new(value_net.param_count(), config.value_lr);
        Agent {
            id,
            config,
            policy_net,
            value_net,
            policy_opt,
            value_opt,
            sample_rng: ChaCha8Rng::seed_from_u64(sampling_seed),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn policy_net(&self) -> &Mlp {
        &self.policy_net
    }

    pub fn policy_net_mut(&mut self) -> &mut Mlp {
        &mut self.policy_net
    }

    pub fn value_net(&self) -> &Mlp {
        &self.value_net
    }

    pub fn value_net_mut(&mut self) -> &mut Mlp {
        &mut self.value_net
    }

    /// The policy distribution at `state`.
    pub fn policy_at(&self, state: &EnvState) -> PolicyVector {
        let logits = self.policy_net.forward(&state.to_array());
        let probs = softmax(&logits);
        [probs[0], probs[1]]
    }

    /// The critic's value estimate at `state`.
    pub fn value_at(&self, state: &EnvState) -> f64 {
        self.value_net.forward(&state.to_array())[0]
    }

    /// Sample an action from the current policy; returns the distribution
    /// it was sampled from as well.
    pub fn act(&mut self, state: &EnvState) -> (Action, PolicyVector) {
        let policy = self.policy_at(state);
        let u: f64 = self.sample_rng.random();
        let mut cumulative = 0.0;
        for (index, p) in policy.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                return (Action::from_index(index).unwrap(), policy);
            }
        }
        (Action::from_index(ACTION_COUNT - 1).unwrap(), policy)
    }

    /// One-step advantage of a transition under the current critic:
    /// `r + gamma * V(s') - V(s)`, with the bootstrap dropped on failure.
    pub fn advantage(&self, step: &TrajectoryStep) -> f64 {
        let bootstrap = if step.failed {
            0.0
        } else {
            self.value_at(&step.next_state)
        };
        step.reward + self.config.gamma * bootstrap - self.value_at(&step.state)
    }

    /// One full-batch actor-critic update from a finished episode.
    ///
    /// Targets and advantages are computed from the critic as it stood
    /// before this call; the critic then updates first, the actor second,
    /// each with its own Adam state.
    pub fn update_from_episode(&mut self, steps: &[TrajectoryStep]) -> Result<EpisodeReport, AgentError> {
        if steps.is_empty() {
            return Err(AgentError::EmptyEpisode);
        }
        let inputs: Vec<[f64; 4]> = steps.iter().map(|s| s.state.to_array()).collect();
        let mut targets = Vec::with_capacity(steps.len());
        let mut advantages = Vec::with_capacity(steps.len());
        let mut actions = Vec::with_capacity(steps.len());
        for step in steps {
            let bootstrap = if step.failed {
                0.0
            } else {
                self.value_at(&step.next_state)
            };
            let target = step.reward + self.config.gamma * bootstrap;
            targets.push(target);
            advantages.push(target - self.value_at(&step.state));
            actions.push(step.action.index());
        }

        let (value_loss, value_grads) = value_loss_and_grads(&self.value_net, &inputs, &targets);
        self.value_opt.step(&mut self.value_net, &value_grads)?;

        let (policy_loss, policy_grads) = policy_loss_and_grads(
            &self.policy_net,
            &inputs,
            &actions,
            &advantages,
            self.config.entropy_coeff,
        );
        self.policy_opt.step(&mut self.policy_net, &policy_grads)?;

        Ok(EpisodeReport {
            length: steps.len() as u32,
            policy_loss,
            value_loss,
        })
    }

    /// Play one full episode (reset through termination), feeding every
    /// visited `(state, policy, value)` to the recorders, then update both
    /// networks from the collected trajectory.
    pub fn run_episode<R: Rng + ?Sized>(
        &mut self,
        env: &mut CartPole,
        env_rng: &mut R,
        recorders: &mut [&mut dyn StepRecorder],
    ) -> Result<EpisodeReport, AgentError> {
        let mut state = env.reset(env_rng);
        let mut trajectory = Vec::new();
        loop {
            let value = self.value_at(&state);
            let (action, policy) = self.act(&state);
            for recorder in recorders.iter_mut() {
                recorder.record_step(&state, &policy, value);
            }
            let outcome = env
                .step(action)
                .expect("environment was freshly reset and done() breaks the loop");
            trajectory.push(TrajectoryStep {
                state,
                action,
                reward: outcome.reward,
                next_state: outcome.state,
                failed: outcome.failed,
            });
            if outcome.done() {
                break;
            }
            state = outcome.state;
        }
        self.update_from_episode(&trajectory)
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            id: self.id,
            config: self.config.clone(),
            policy: self.policy_net.snapshot(),
            value: self.value_net.snapshot(),
            rng: RngCheckpoint {
                seed: self.sample_rng.get_seed(),
                word_pos: self.sample_rng.get_word_pos(),
            },
        }
    }

    pub fn restore(checkpoint: &AgentCheckpoint) -> Result<Agent, AgentError> {
        let policy_net = Mlp::from_snapshot(&checkpoint.policy)?;
        let value_net = Mlp::from_snapshot(&checkpoint.value)?;
        let mut sample_rng = ChaCha8Rng::from_seed(checkpoint.rng.seed);
        sample_rng.set_word_pos(checkpoint.rng.word_pos);
        let policy_opt = AdamState::new(policy_net.param_count(), checkpoint.config.policy_lr);
        let value_opt = AdamState::new(value_net.param_count(), checkpoint.config.value_lr);
        Ok(Agent {
            id: checkpoint.id,
            config: checkpoint.config.clone(),
            policy_net,
            value_net,
            policy_opt,
            value_opt,
            sample_rng,
        })
    }
}

/// Mean-squared-error regression loss of a scalar-output network against
/// `targets`, with its parameter gradients.
pub fn value_loss_and_grads(net: &Mlp, inputs: &[[f64; 4]], targets: &[f64]) -> (f64, Gradients) {
    assert_eq!(inputs.len(), targets.len(), "inputs/targets length mismatch");
    assert!(!inputs.is_empty(), "empty batch");
    assert_eq!(net.output_dim(), 1, "value net must have one output");
    let n = inputs.len() as f64;
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(net);
    for (input, &target) in inputs.iter().zip(targets) {
        let trace = net.forward_trace(input);
        let v = trace.output()[0];
        let diff = v - target;
        loss += diff * diff / n;
        net.backward_into(&trace, &[2.0 * diff / n], &mut grads);
    }
    (loss, grads)
}

/// Policy-gradient loss of a logit-output network:
/// `mean_k [ -advantage_k * ln pi(action_k | state_k) - entropy_coeff * H(pi_k) ]`
/// with its parameter gradients.
pub fn policy_loss_and_grads(
    net: &Mlp,
    inputs: &[[f64; 4]],
    actions: &[usize],
    advantages: &[f64],
    entropy_coeff: f64,
) -> (f64, Gradients) {
    assert_eq!(inputs.len(), actions.len(), "inputs/actions length mismatch");
    assert_eq!(inputs.len(), advantages.len(), "inputs/advantages length mismatch");
    assert!(!inputs.is_empty(), "empty batch");
    assert_eq!(net.output_dim(), ACTION_COUNT, "policy net output width");
    let n = inputs.len() as f64;
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(net);
    let mut upstream = vec![0.0; ACTION_COUNT];
    for ((input, &action), &advantage) in inputs.iter().zip(actions).zip(advantages) {
        let trace = net.forward_trace(input);
        let probs = softmax(trace.output());
        debug_assert!(action < ACTION_COUNT);

        // ln pi(a|s); probs[action] > 0 for finite logits.
        loss += -advantage * probs[action].ln() / n;
        for (i, u) in upstream.iter_mut().enumerate() {
            let indicator = if i == action { 1.0 } else { 0.0 };
            *u = advantage * (probs[i] - indicator) / n;
        }

        if entropy_coeff != 0.0 {
            // H = -sum p ln p with the 0 ln 0 = 0 convention.
            let entropy: f64 = probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            loss += -entropy_coeff * entropy / n;
            for (u, &p) in upstream.iter_mut().zip(&probs) {
                if p > 0.0 {
                    *u += entropy_coeff * p * (p.ln() + entropy) / n;
                }
            }
        }
        net.backward_into(&trace, &upstream, &mut grads);
    }
    (loss, grads)
}
