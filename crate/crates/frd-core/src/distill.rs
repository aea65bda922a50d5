//! Knowledge transfer: fitting a local network to an aggregated memory.
//!
//! Policy distillation minimizes the cross-entropy between the global
//! memory's averaged policies and the local policy evaluated at each
//! cluster's *proxy state* (the cell midpoint), summed over entries:
//!
//! ```text
//! L = -sum_k sum_a  target_k(a) * ln pi_theta(a | proxy_k)
//! ```
//!
//! Raw distillation applies the identical loss at actual visited states
//! (the baseline that ships whole experience memories around). Value
//! distillation fits the value net to averaged value estimates by mean
//! squared error. Each call runs a fixed number of full-batch Adam epochs
//! with a fresh optimizer, so one round's distillation cannot leak moment
//! state into the next.

use thiserror::Error;

use crate::agent::{value_loss_and_grads, Agent};
use crate::env::{EnvState, PolicyVector, ACTION_COUNT};
use crate::federation::{GlobalPolicyEntry, GlobalValueEntry};
use crate::memory::{ClusterGrid, MemoryError};
use crate::nn::{softmax, AdamState, Gradients, Mlp, NeuralError};

#[derive(Debug, Error, PartialEq)]
pub enum DistillError {
    #[error("cannot distill from an empty memory")]
    EmptyMemory,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: u32 },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Schedule of one distillation fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub epochs: u32,
    pub learning_rate: f64,
}

impl Default for DistillConfig {
    fn default() -> DistillConfig {
        DistillConfig {
            epochs: 50,
            learning_rate: 1e-3,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 {
            return Err("distillation needs at least one epoch".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("bad distillation learning rate {}", self.learning_rate));
        }
        Ok(())
    }
}

/// Shannon entropy of a distribution, with the `0 ln 0 = 0` convention.
pub fn policy_entropy(policy: &PolicyVector) -> f64 {
    policy
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// The minimum achievable policy-distillation loss on `entries`: the sum
/// of the target entropies (reached exactly when the local policy matches
/// every target).
pub fn entropy_lower_bound(entries: &[GlobalPolicyEntry]) -> f64 {
    entries.iter().map(|e| policy_entropy(&e.policy)).sum()
}

/// Summed cross-entropy between target distributions and the softmax of
/// `net`'s outputs at `inputs`, with its parameter gradients.
pub fn cross_entropy_loss_and_grads(
    net: &Mlp,
    inputs: &[[f64; 4]],
    targets: &[PolicyVector],
) -> (f64, Gradients) {
    assert_eq!(inputs.len(), targets.len(), "inputs/targets length mismatch");
    assert!(!inputs.is_empty(), "empty batch");
    assert_eq!(net.output_dim(), ACTION_COUNT, "policy net output width");
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(net);
    let mut upstream = vec![0.0; ACTION_COUNT];
    for (input, target) in inputs.iter().zip(targets) {
        let trace = net.forward_trace(input);
        let probs = softmax(trace.output());
        for (i, &t) in target.iter().enumerate() {
            if t > 0.0 {
                loss -= t * probs[i].ln();
            }
            // d/dlogits of -sum t ln softmax = probs - t (since sum t = 1).
            upstream[i] = probs[i] - t;
        }
        net.backward_into(&trace, &upstream, &mut grads);
    }
    (loss, grads)
}

/// Summed cross-entropy without gradients.
pub fn cross_entropy_loss(net: &Mlp, inputs: &[[f64; 4]], targets: &[PolicyVector]) -> f64 {
    assert_eq!(inputs.len(), targets.len(), "inputs/targets length mismatch");
    let mut loss = 0.0;
    for (input, target) in inputs.iter().zip(targets) {
        let probs = softmax(&net.forward(input));
        for (i, &t) in target.iter().enumerate() {
            if t > 0.0 {
                loss -= t * probs[i].ln();
            }
        }
    }
    loss
}

fn proxy_batch(
    grid: &ClusterGrid,
    entries: &[GlobalPolicyEntry],
) -> Result<(Vec<[f64; 4]>, Vec<PolicyVector>), DistillError> {
    if entries.is_empty() {
        return Err(DistillError::EmptyMemory);
    }
    let mut inputs = Vec::with_capacity(entries.len());
    let mut targets = Vec::with_capacity(entries.len());
    for entry in entries {
        inputs.push(grid.proxy_state(entry.cluster)?.to_array());
        targets.push(entry.policy);
    }
    Ok((inputs, targets))
}

/// The policy-distillation loss of an agent's current policy net against a
/// global policy memory, evaluated at the grid's proxy states.
pub fn policy_distill_loss(
    net: &Mlp,
    grid: &ClusterGrid,
    entries: &[GlobalPolicyEntry],
) -> Result<f64, DistillError> {
    let (inputs, targets) = proxy_batch(grid, entries)?;
    Ok(cross_entropy_loss(net, &inputs, &targets))
}

/// Run `cfg.epochs` full-batch Adam steps of the summed cross-entropy on
/// `net`, returning the loss before each step plus the final loss
/// (`epochs + 1` values, descending when the fit succeeds).
fn fit_cross_entropy(
    net: &mut Mlp,
    inputs: &[[f64; 4]],
    targets: &[PolicyVector],
    cfg: &DistillConfig,
) -> Result<Vec<f64>, DistillError> {
    let mut optimizer = AdamState::new(net.param_count(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs as usize + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = cross_entropy_loss_and_grads(net, inputs, targets);
        if !loss.is_finite() {
            return Err(DistillError::NonFiniteLoss { epoch });
        }
        trace.push(loss);
        optimizer.step(net, &grads)?;
    }
    let final_loss = cross_entropy_loss(net, inputs, targets);
    if !final_loss.is_finite() {
        return Err(DistillError::NonFiniteLoss { epoch: cfg.epochs });
    }
    trace.push(final_loss);
    Ok(trace)
}

/// Distill a global policy memory into the agent's policy net at the
/// grid's proxy states. Returns the per-epoch loss trace.
pub fn distill_policy(
    agent: &mut Agent,
    grid: &ClusterGrid,
    entries: &[GlobalPolicyEntry],
    cfg: &DistillConfig,
) -> Result<Vec<f64>, DistillError> {
    let (inputs, targets) = proxy_batch(grid, entries)?;
    fit_cross_entropy(agent.policy_net_mut(), &inputs, &targets, cfg)
}

/// Distill a concatenated raw experience memory into the agent's policy
/// net at the actual visited states — the exchange baseline that gives up
/// both the payload savings and the privacy of proxy states.
pub fn raw_policy_distill(
    agent: &mut Agent,
    experiences: &[(EnvState, PolicyVector)],
    cfg: &DistillConfig,
) -> Result<Vec<f64>, DistillError> {
    if experiences.is_empty() {
        return Err(DistillError::EmptyMemory);
    }
    let inputs: Vec<[f64; 4]> = experiences.iter().map(|(s, _)| s.to_array()).collect();
    let targets: Vec<PolicyVector> = experiences.iter().map(|(_, p)| *p).collect();
    fit_cross_entropy(agent.policy_net_mut(), &inputs, &targets, cfg)
}

/// Distill a global value memory into the agent's value net by mean
/// squared error at the proxy states. Returns the per-epoch loss trace.
pub fn distill_value(
    agent: &mut Agent,
    grid: &ClusterGrid,
    entries: &[GlobalValueEntry],
    cfg: &DistillConfig,
) -> Result<Vec<f64>, DistillError> {
    if entries.is_empty() {
        return Err(DistillError::EmptyMemory);
    }
    let mut inputs = Vec::with_capacity(entries.len());
    let mut targets = Vec::with_capacity(entries.len());
    for entry in entries {
        inputs.push(grid.proxy_state(entry.cluster)?.to_array());
        targets.push(entry.value);
    }

    let net = agent.value_net_mut();
    let mut optimizer = AdamState::new(net.param_count(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs as usize + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = value_loss_and_grads(net, &inputs, &targets);
        if !loss.is_finite() {
            return Err(DistillError::NonFiniteLoss { epoch });
        }
        trace.push(loss);
        optimizer.step(net, &grads)?;
    }
    let (final_loss, _) = value_loss_and_grads(net, &inputs, &targets);
    if !final_loss.is_finite() {
        return Err(DistillError::NonFiniteLoss { epoch: cfg.epochs });
    }
    trace.push(final_loss);
    Ok(trace)
}
