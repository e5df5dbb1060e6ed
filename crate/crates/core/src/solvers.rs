//! Ground-truth solvers: the optimal Q-function, soft-operator fixed
//! points with multi-start probing, and Bellman residuals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::mdp::{policy_matrix, QTable, StochasticPolicy, TabularMdp};
use crate::rng::stream_rng;
use crate::soft::{soft_backup, OperatorError, SoftOperator};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Largest number of deterministic policies the enumeration oracle accepts.
const ENUMERATION_LIMIT: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("no convergence after {iterations} iterations (step {step})")]
    NotConverged { iterations: usize, step: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("{0} deterministic policies is too many to enumerate")]
    TooManyPolicies(usize),
    #[error("singular policy evaluation system")]
    Singular,
    #[error("at least one probe is required")]
    NoProbes,
}

/// One application of `Q ↦ R + γ P·H(Q)` where `H` is the stacked soft
/// (or hard) backup.
pub fn bellman_backup(
    mdp: &TabularMdp,
    r: &[f64],
    q: &QTable,
    op: SoftOperator,
) -> Result<QTable, OperatorError> {
    let h = soft_backup(q, op)?;
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let mut out = QTable::zeros(n, mdp.n_actions());
    for a in 0..mdp.n_actions() {
        for s in 0..n {
            let expected: f64 = mdp
                .next_state_probs(s, a)
                .iter()
                .zip(&h)
                .map(|(p, v)| p * v)
                .sum();
            out.set(s, a, r[a * n + s] + gamma * expected);
        }
    }
    Ok(out)
}

// Step size at which iteration stops so that the limit is within `tol`.
fn stop_threshold(tol: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        tol
    } else {
        (tol * (1.0 - gamma) / gamma).min(tol)
    }
}

struct Iterated {
    q: QTable,
    iterations: usize,
    step: f64,
    converged: bool,
}

fn iterate(
    mdp: &TabularMdp,
    op: SoftOperator,
    start: QTable,
    tol: f64,
    max_iter: usize,
) -> Result<Iterated, OperatorError> {
    let r = mdp.expected_rewards();
    let threshold = stop_threshold(tol, mdp.discount());
    let mut q = start;
    let mut step = f64::INFINITY;
    for it in 1..=max_iter {
        let next = bellman_backup(mdp, &r, &q, op)?;
        step = next.linf_distance(&q);
        q = next;
        if step <= threshold {
            return Ok(Iterated {
                q,
                iterations: it,
                step,
                converged: true,
            });
        }
    }
    Ok(Iterated {
        q,
        iterations: max_iter,
        step,
        converged: false,
    })
}

/// Optimal Q-function by value iteration, accurate to `tol` in ∞-norm.
pub fn optimal_q(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<QTable, SolverError> {
    if !(tol > 0.0) {
        return Err(SolverError::InvalidTolerance(tol));
    }
    let start = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let out = iterate(mdp, SoftOperator::HardMax, start, tol, max_iter)?;
    if out.converged {
        Ok(out.q)
    } else {
        Err(SolverError::NotConverged {
            iterations: out.iterations,
            step: out.step,
        })
    }
}

/// `‖q − (R + γ P·H(q))‖∞`
pub fn bellman_residual(
    mdp: &TabularMdp,
    q: &QTable,
    op: SoftOperator,
) -> Result<f64, OperatorError> {
    let r = mdp.expected_rewards();
    Ok(bellman_backup(mdp, &r, q, op)?.linf_distance(q))
}

/// Result of one fixed-point probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub id: usize,
    pub limit: QTable,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    /// Limit of the first probe (zero initialisation).
    pub q: QTable,
    /// True when every probe converged.
    pub converged: bool,
    pub iterations: usize,
    /// Largest final one-step change across probes.
    pub residual: f64,
    /// `(probe id, limit)` for every probe.
    pub basin_witnesses: Vec<(usize, QTable)>,
    pub probes: Vec<ProbeOutcome>,
    /// Largest ∞-distance between two probe limits.
    pub max_disagreement: f64,
    /// Probes disagree by more than `10·tol`.
    pub multiple_fixed_points: bool,
}

fn probe_start(mdp: &TabularMdp, id: usize, seed: u64) -> QTable {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let radius = 1.0 / (1.0 - mdp.discount());
    match id {
        0 => QTable::zeros(n, m),
        1 => QTable::filled(n, m, radius),
        2 => QTable::filled(n, m, -radius),
        _ => {
            let mut rng = stream_rng(seed, id as u64);
            let values = (0..n * m)
                .map(|_| rng.random_range(-radius..=radius))
                .collect();
            QTable::from_values(n, m, values).expect("sized to the model")
        }
    }
}

/// Iterates `Q ← R + γ P·H(Q)` from `n_probes` starting points: zeros,
/// `±1/(1−γ)` constants, then uniform draws from that box (seeded by
/// `seed`). Non-convergence of a probe is recorded, not raised.
pub fn soft_fixed_point(
    mdp: &TabularMdp,
    op: SoftOperator,
    tol: f64,
    max_iter: usize,
    n_probes: usize,
    seed: u64,
) -> Result<FixedPointReport, SolverError> {
    if !(tol > 0.0) {
        return Err(SolverError::InvalidTolerance(tol));
    }
    if n_probes == 0 {
        return Err(SolverError::NoProbes);
    }
    op.validate()?;

    let probes = (0..n_probes)
        .into_par_iter()
        .map(|id| {
            let out = iterate(mdp, op, probe_start(mdp, id, seed), tol, max_iter)?;
            Ok(ProbeOutcome {
                id,
                limit: out.q,
                converged: out.converged,
                iterations: out.iterations,
                residual: out.step,
            })
        })
        .collect::<Result<Vec<_>, OperatorError>>()?;

    let mut max_disagreement: f64 = 0.0;
    for (i, a) in probes.iter().enumerate() {
        for b in &probes[i + 1..] {
            max_disagreement = max_disagreement.max(a.limit.linf_distance(&b.limit));
        }
    }
    Ok(FixedPointReport {
        q: probes[0].limit.clone(),
        converged: probes.iter().all(|p| p.converged),
        iterations: probes.iter().map(|p| p.iterations).max().unwrap_or(0),
        residual: probes.iter().map(|p| p.residual).fold(0.0, f64::max),
        basin_witnesses: probes.iter().map(|p| (p.id, p.limit.clone())).collect(),
        max_disagreement,
        multiple_fixed_points: max_disagreement > 10.0 * tol,
        probes,
    })
}

/// Exact `Q^π` from `(I − γ P Π^π) Q = R`.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<QTable, SolverError> {
    let p = mdp.stacked_transitions();
    let r = DVector::from_vec(mdp.expected_rewards());
    let len = mdp.n_pairs();
    let system = DMatrix::identity(len, len) - mdp.discount() * p * policy_matrix(policy);
    let q = system.lu().solve(&r).ok_or(SolverError::Singular)?;
    Ok(
        QTable::from_values(mdp.n_states(), mdp.n_actions(), q.iter().copied().collect())
            .expect("sized to the model"),
    )
}

/// Small-model oracle for `Q*`: evaluates every deterministic policy
/// exactly and takes the element-wise maximum.
pub fn policy_enumeration_q(mdp: &TabularMdp) -> Result<QTable, SolverError> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let count = (m as f64).powi(n as i32);
    if count > ENUMERATION_LIMIT as f64 {
        return Err(SolverError::TooManyPolicies(count as usize));
    }
    let mut best = QTable::filled(n, m, f64::NEG_INFINITY);
    let mut actions = vec![0usize; n];
    for code in 0..count as usize {
        let mut rest = code;
        for slot in actions.iter_mut() {
            *slot = rest % m;
            rest /= m;
        }
        let policy = StochasticPolicy::deterministic(m, &actions).expect("actions in range");
        let q = evaluate_policy(mdp, &policy)?;
        for (b, v) in best.values_mut().iter_mut().zip(q.values()) {
            *b = b.max(*v);
        }
    }
    Ok(best)
}
