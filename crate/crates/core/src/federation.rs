//! Federated aggregation and issuing of follower actor parameters.
//!
//! Only parameter tensors cross the federation boundary; states and
//! transitions never leave their follower.

use crate::error::ModelError;
use crate::ledger::{Initiator, Ledger, LedgerError, TxStatus};
use crate::nn::PolicyParams;

/// `I = Z − Z_m`, element-wise.
pub fn compute_delta(global: &PolicyParams, local: &PolicyParams) -> Result<PolicyParams, ModelError> {
    global.same_layout(local)?;
    Ok(PolicyParams {
        layout: global.layout.clone(),
        weights: global.weights.iter().zip(&local.weights).map(|(z, l)| z - l).collect(),
    })
}

/// Weight of one follower: the mean of its share of task bits and its share
/// of slant distance, so weights over all followers sum to one.
pub fn aggregation_weight(task_bits: f64, slant_dist: f64, total_bits: f64, total_dist: f64) -> f64 {
    0.5 * (task_bits / total_bits + slant_dist / total_dist)
}

/// Weights for every follower; uniform when either total is zero.
pub fn aggregation_weights(task_bits: &[f64], slant_dists: &[f64]) -> Vec<f64> {
    let n = task_bits.len();
    let tb: f64 = task_bits.iter().sum();
    let td: f64 = slant_dists.iter().sum();
    (0..n)
        .map(|i| {
            let b = if tb > 0.0 { task_bits[i] / tb } else { 1.0 / n as f64 };
            let d = if td > 0.0 { slant_dists[i] / td } else { 1.0 / n as f64 };
            0.5 * (b + d)
        })
        .collect()
}

/// One aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationRound {
    pub global_model: PolicyParams,
    pub deltas: Vec<PolicyParams>,
    pub weights: Vec<f64>,
    pub agg_lr: f64,
}

impl FederationRound {
    /// Builds a round from the current global model and every follower's local model.
    pub fn from_locals(global: &PolicyParams, locals: &[&PolicyParams], weights: Vec<f64>, agg_lr: f64) -> Result<Self, ModelError> {
        let deltas = locals.iter().map(|l| compute_delta(global, l)).collect::<Result<_, _>>()?;
        Ok(Self { global_model: global.clone(), deltas, weights, agg_lr })
    }
}

/// `Z(t+1) = Z(t) + u·Σ_m weight_m·I_m(t)`.
pub fn aggregate(round: &FederationRound) -> Result<PolicyParams, ModelError> {
    let mut sum = vec![0.0; round.global_model.weights.len()];
    for (delta, &w) in round.deltas.iter().zip(&round.weights) {
        round.global_model.same_layout(delta)?;
        for (s, d) in sum.iter_mut().zip(&delta.weights) {
            *s += w * d;
        }
    }
    Ok(PolicyParams {
        layout: round.global_model.layout.clone(),
        weights: round
            .global_model
            .weights
            .iter()
            .zip(&sum)
            .map(|(z, s)| z + round.agg_lr * s)
            .collect(),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum IssueError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Aggregates, records the new global model as a leader transaction and
/// returns it only once the transaction is committed. A closed transaction
/// refuses issuing, leaving followers with their local parameters.
pub fn aggregate_and_issue(
    round: &FederationRound,
    ledger: &mut Ledger,
    block_size: f64,
    tamper: impl FnOnce(&mut Vec<f64>),
) -> Result<PolicyParams, IssueError> {
    let next = aggregate(round)?;
    let tx = ledger.generate(Initiator::Leader, next.weights.clone());
    let tx = ledger.submit(tx, block_size, tamper)?;
    match tx.status {
        TxStatus::Committed => Ok(PolicyParams { layout: next.layout, weights: tx.payload }),
        _ => Err(LedgerError::IssueRefused { id: tx.id }.into()),
    }
}
