//! Log-sum-exp and Boltzmann soft-max operators.
//!
//! Both are evaluated with the maximum subtracted before exponentiation, so
//! `β·‖v‖∞` can be as large as `1e6` without overflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::QTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("empty action set")]
    EmptyActionSet,
    #[error("non-finite input value {0}")]
    NonFiniteInput(f64),
    #[error("inverse temperature must be positive and finite, got {0}")]
    InvalidBeta(f64),
}

/// Operator used in place of the hard max in the TD target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SoftOperator {
    /// `(1/β) ln Σ exp(β v(a))`
    Lse {
        beta: f64,
    },
    /// `Σ v(a) softmax(βv)(a)`
    Boltzmann {
        beta: f64,
    },
    HardMax,
}

impl SoftOperator {
    pub fn lse(beta: f64) -> Result<Self, OperatorError> {
        check_beta(beta)?;
        Ok(SoftOperator::Lse { beta })
    }

    pub fn boltzmann(beta: f64) -> Result<Self, OperatorError> {
        check_beta(beta)?;
        Ok(SoftOperator::Boltzmann { beta })
    }

    pub fn beta(&self) -> Option<f64> {
        match *self {
            SoftOperator::Lse { beta } | SoftOperator::Boltzmann { beta } => Some(beta),
            SoftOperator::HardMax => None,
        }
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        match self.beta() {
            Some(beta) => check_beta(beta),
            None => Ok(()),
        }
    }

    /// `ln|A| / β`, the width of the envelope around the hard max. Zero for
    /// the hard max itself.
    pub fn envelope_width(&self, n_actions: usize) -> f64 {
        match self.beta() {
            Some(beta) => (n_actions as f64).ln() / beta,
            None => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SoftOperator::Lse { .. } => "lse",
            SoftOperator::Boltzmann { .. } => "boltzmann",
            SoftOperator::HardMax => "max",
        }
    }
}

fn check_beta(beta: f64) -> Result<(), OperatorError> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(OperatorError::InvalidBeta(beta))
    }
}

fn checked_max(v: &[f64]) -> Result<f64, OperatorError> {
    if v.is_empty() {
        return Err(OperatorError::EmptyActionSet);
    }
    let mut max = f64::NEG_INFINITY;
    for &x in v {
        if !x.is_finite() {
            return Err(OperatorError::NonFiniteInput(x));
        }
        max = max.max(x);
    }
    Ok(max)
}

/// Applies `op` to the action values `v` of one state.
pub fn soft_value(v: &[f64], op: SoftOperator) -> Result<f64, OperatorError> {
    op.validate()?;
    let max = checked_max(v)?;
    Ok(match op {
        SoftOperator::HardMax => max,
        SoftOperator::Lse { beta } => {
            let sum: f64 = v.iter().map(|&x| (beta * (x - max)).exp()).sum();
            max + sum.ln() / beta
        }
        SoftOperator::Boltzmann { beta } => {
            let weights: Vec<f64> = v.iter().map(|&x| (beta * (x - max)).exp()).collect();
            let total: f64 = weights.iter().sum();
            // Every shifted value is <= 0, so the result never exceeds `max`.
            let shifted: f64 = v
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| (x - max) * (w / total))
                .sum();
            max + shifted
        }
    })
}

/// Softmax probabilities `exp(βv) / Σ exp(βv)`.
pub fn softmax(v: &[f64], beta: f64) -> Result<Vec<f64>, OperatorError> {
    check_beta(beta)?;
    let max = checked_max(v)?;
    let mut out: Vec<f64> = v.iter().map(|&x| (beta * (x - max)).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Stacked per-state soft value `H(q)`, one entry per state.
pub fn soft_backup(q: &QTable, op: SoftOperator) -> Result<Vec<f64>, OperatorError> {
    let mut row = vec![0.0; q.n_actions()];
    (0..q.n_states())
        .map(|s| {
            for (a, slot) in row.iter_mut().enumerate() {
                *slot = q.get(s, a);
            }
            soft_value(&row, op)
        })
        .collect()
}

/// Interval guaranteed to contain `soft_value(v, op)`:
/// LSE lies in `[max v, max v + ln|A|/β]`, Boltzmann in
/// `[max v - ln|A|/β, max v]`.
pub fn operator_envelope(v: &[f64], op: SoftOperator) -> Result<(f64, f64), OperatorError> {
    op.validate()?;
    let max = checked_max(v)?;
    let width = op.envelope_width(v.len());
    Ok(match op {
        SoftOperator::Lse { .. } => (max, max + width),
        SoftOperator::Boltzmann { .. } => (max - width, max),
        SoftOperator::HardMax => (max, max),
    })
}
