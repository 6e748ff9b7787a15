//! Virtual task queues and the drift-plus-penalty objective.

use crate::error::{ensure_positive, ModelError};

/// Per-follower backlog with its time series.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub backlog: Vec<f64>,
    /// Backlog vectors after every update, oldest first.
    pub history: Vec<Vec<f64>>,
}

impl QueueState {
    pub fn new(followers: usize) -> Self {
        Self {
            backlog: vec![0.0; followers],
            history: Vec::new(),
        }
    }

    /// Applies one slot of service and arrivals to every follower.
    pub fn update(&mut self, served: &[f64], arrived: &[f64]) {
        for ((q, &d), &a) in self.backlog.iter_mut().zip(served).zip(arrived) {
            *q = queue_update(*q, d, a);
        }
        self.history.push(self.backlog.clone());
    }

    /// Time-average backlog of one follower over the recorded history.
    pub fn time_average(&self, follower: usize) -> f64 {
        if self.history.is_empty() {
            return 0.0;
        }
        self.history.iter().map(|h| h[follower]).sum::<f64>() / self.history.len() as f64
    }
}

/// Bound constants of the drift analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConstants {
    pub v: f64,
    pub x_bound: f64,
    pub x_hat: f64,
    pub d_max: f64,
    pub eta: f64,
}

impl DriftConstants {
    /// Builds the constants from η, the service ceiling and a queue–arrival cross term.
    pub fn new(v: f64, eta: f64, d_max: f64, queue_arrival: f64) -> Self {
        let x_bound = drift_bound(eta, d_max);
        Self {
            v,
            x_bound,
            x_hat: x_bound + queue_arrival,
            d_max,
            eta,
        }
    }
}

/// `max(q - served + arrived, 0)`.
pub fn queue_update(q: f64, served: f64, arrived: f64) -> f64 {
    (q - served + arrived).max(0.0)
}

/// Bits served in a slot: local bits when processing locally (α = 1),
/// offloaded bits otherwise.
pub fn served_bits(local: bool, local_bits: f64, offload_bits: f64) -> f64 {
    if local {
        local_bits
    } else {
        offload_bits
    }
}

/// Penalty function F = D - C_SBC - λ·f.
pub fn penalty(served: f64, price: f64, freq: f64, overhead: f64) -> f64 {
    served - overhead - price * freq
}

/// Per-slot drift-plus-penalty score `Q·D + V·(D - C_SBC - λ·f)`; higher is better.
pub fn dpp_objective(q: f64, served: f64, freq: f64, price: f64, overhead: f64, v: f64) -> f64 {
    q * served + v * penalty(served, price, freq, overhead)
}

/// Drift constant X = 0.5·η + D_max².
pub fn drift_bound(eta: f64, d_max: f64) -> f64 {
    0.5 * eta + d_max * d_max
}

/// Time-average queue envelope `(X̂ + (S_max - S_min)·V) / ς`.
pub fn theoretical_queue_bound(x_hat: f64, s_max: f64, s_min: f64, v: f64, varsigma: f64) -> Result<f64, ModelError> {
    ensure_positive("minimum service ς", varsigma)?;
    Ok((x_hat + (s_max - s_min) * v) / varsigma)
}

/// One follower's inputs to the slot reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOutcome {
    pub queue: f64,
    pub served: f64,
    pub freq: f64,
    pub price: f64,
    pub overhead: f64,
}

/// Slot reward: total and the per-follower summands used for credit assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantReward {
    pub total: f64,
    pub per_follower: Vec<f64>,
}

pub fn instant_reward(outcomes: &[SlotOutcome], v: f64) -> InstantReward {
    let per_follower: Vec<f64> = outcomes
        .iter()
        .map(|o| dpp_objective(o.queue, o.served, o.freq, o.price, o.overhead, v))
        .collect();
    InstantReward {
        total: per_follower.iter().sum(),
        per_follower,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_update_examples() {
        assert_eq!(queue_update(12.0, 20.0, 5.0), 0.0);
        assert_eq!(queue_update(10.0, 3.0, 5.0), 12.0);
        assert_eq!(queue_update(7.5, 4.0, 4.0), 7.5);
    }

    #[test]
    fn served_bits_selects_mode() {
        assert_eq!(served_bits(true, 5.0, 1.0), 5.0);
        assert_eq!(served_bits(false, 5.0, 1.0), 1.0);
    }

    #[test]
    fn dpp_examples() {
        // q·D + V·(D - C - λf) evaluated term by term.
        let expect = 1e6 * 1e5 + 10.0 * (1e5 - 0.01 - 1.0 * 1e9);
        let got = dpp_objective(1e6, 1e5, 1e9, 1.0, 0.01, 10.0);
        assert_eq!(got, expect);
        assert!(((got - 9.0001e10) / 9.0001e10).abs() < 1e-6);
        assert_eq!(dpp_objective(3.0, 2.0, 5.0, 1.0, 0.5, 0.0), 6.0);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(drift_bound(0.0, 0.0), 0.0);
        assert_eq!(drift_bound(2e12, 1e6), 2e12);
        let b = theoretical_queue_bound(1e12, 2e6, 1e6, 100.0, 1e5).unwrap();
        assert!((b - (1e12 + 1e8) / 1e5).abs() < 1e-6);
        assert!((b / 1.0001e7 - 1.0).abs() < 1e-12);
        assert_eq!(theoretical_queue_bound(5.0, 3.0, 3.0, 1e9, 2.0).unwrap(), 2.5);
        assert!(theoretical_queue_bound(1.0, 1.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn instant_reward_examples() {
        let one = SlotOutcome { queue: 4.0, served: 2.0, freq: 3.0, price: 0.5, overhead: 0.1 };
        let r = instant_reward(&[one], 2.0);
        assert_eq!(r.total, dpp_objective(4.0, 2.0, 3.0, 0.5, 0.1, 2.0));
        let idle = SlotOutcome { queue: 9.0, served: 0.0, freq: 0.0, price: 3.0, overhead: 0.25 };
        let r = instant_reward(&[idle, idle], 4.0);
        assert_eq!(r.total, 2.0 * 4.0 * -0.25);
    }
}
