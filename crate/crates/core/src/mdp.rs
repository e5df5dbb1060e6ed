//! Tabular MDP model, the action-major Q layout, and the stacked matrix
//! forms (`P`, `R`, `D`, `Π`) used by the switching-system analysis.
//!
//! Everything indexed by a state-action pair uses the same flat layout:
//! `index(s, a) = a * n_states + s`, i.e. the vector is `Q(·,0)` stacked on
//! top of `Q(·,1)` and so on.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums may deviate from 1 by at most this much when building a model.
pub const STOCHASTIC_TOL: f64 = 1e-9;
/// Tolerance on the total mass of a state-action distribution.
pub const DISTRIBUTION_TOL: f64 = 1e-10;

const POWER_ITERATION_CAP: usize = 1_000_000;
const DIRECT_SOLVE_MAX_STATES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("row {row} of transition matrix for action {action} sums to {sum}")]
    NonStochasticRow { action: usize, row: usize, sum: f64 },
    #[error("negative probability {value} at action {action}, ({row}, {col})")]
    NegativeProbability {
        action: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("reward {value} at (s={s}, a={a}, s'={next}) exceeds the unit bound")]
    RewardOutOfBounds {
        s: usize,
        a: usize,
        next: usize,
        value: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("discount {0} is outside [0, 1)")]
    InvalidDiscount(f64),
    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("state-action pair {index} has visit probability {value}")]
    ZeroVisitProbability { index: usize, value: f64 },
    #[error("distribution sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("power iteration did not converge (residual {residual})")]
    NotConverged { residual: f64 },
    #[error("induced state chain has {classes} recurrent classes")]
    Reducible { classes: usize },
}

/// One entry of the sparse reward list, with 1-based indices as written in
/// model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub s: usize,
    pub a: usize,
    pub next: usize,
    pub value: f64,
}

/// Raw model description, as read from or written to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    /// One row-major `n_states x n_states` matrix per action.
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub rewards: Vec<RewardEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_distribution: Option<Vec<f64>>,
}

impl MdpSpec {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("MdpSpec is always representable as TOML")
    }

    /// The two-state, two-action example model used throughout the
    /// experiments.
    pub fn two_state_example() -> Self {
        let entry = |s, a, next, value| RewardEntry { s, a, next, value };
        MdpSpec {
            n_states: 2,
            n_actions: 2,
            discount: 0.9,
            transitions: vec![
                vec![vec![0.5, 0.5], vec![0.9, 0.1]],
                vec![vec![0.6, 0.4], vec![0.3, 0.7]],
            ],
            rewards: vec![
                entry(1, 1, 1, 0.5),
                entry(1, 1, 2, 1.0),
                entry(1, 2, 2, -0.5),
                entry(2, 1, 2, -0.5),
                entry(2, 2, 1, -0.5),
            ],
            initial_distribution: Some(vec![0.8, 0.2]),
        }
    }
}

/// Validated tabular MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `transition[a][s * n_states + s']`
    transition: Vec<Vec<f64>>,
    /// `reward[(s * n_actions + a) * n_states + s']`
    reward: Vec<f64>,
    discount: f64,
    initial: Vec<f64>,
}

/// Validates a raw description. With `strict` on, rewards must be bounded by
/// one in absolute value.
pub fn build_mdp(spec: &MdpSpec, strict: bool) -> Result<TabularMdp, MdpError> {
    let n = spec.n_states;
    let m = spec.n_actions;
    if n == 0 {
        return Err(MdpError::DimensionMismatch {
            what: "n_states",
            expected: 1,
            got: 0,
        });
    }
    if m == 0 {
        return Err(MdpError::DimensionMismatch {
            what: "n_actions",
            expected: 1,
            got: 0,
        });
    }
    if !(spec.discount.is_finite() && (0.0..1.0).contains(&spec.discount)) {
        return Err(MdpError::InvalidDiscount(spec.discount));
    }
    if spec.transitions.len() != m {
        return Err(MdpError::DimensionMismatch {
            what: "transitions",
            expected: m,
            got: spec.transitions.len(),
        });
    }

    let mut transition = Vec::with_capacity(m);
    for (a, matrix) in spec.transitions.iter().enumerate() {
        if matrix.len() != n {
            return Err(MdpError::DimensionMismatch {
                what: "transition rows",
                expected: n,
                got: matrix.len(),
            });
        }
        let mut flat = Vec::with_capacity(n * n);
        for (row, probs) in matrix.iter().enumerate() {
            if probs.len() != n {
                return Err(MdpError::DimensionMismatch {
                    what: "transition columns",
                    expected: n,
                    got: probs.len(),
                });
            }
            for (col, &p) in probs.iter().enumerate() {
                if !p.is_finite() {
                    return Err(MdpError::NonFinite("transitions"));
                }
                if p < 0.0 {
                    return Err(MdpError::NegativeProbability {
                        action: a,
                        row,
                        col,
                        value: p,
                    });
                }
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(MdpError::NonStochasticRow {
                    action: a,
                    row,
                    sum,
                });
            }
            flat.extend_from_slice(probs);
        }
        transition.push(flat);
    }

    let mut reward = vec![0.0; n * m * n];
    for e in &spec.rewards {
        for (what, index, limit) in [("s", e.s, n), ("a", e.a, m), ("next", e.next, n)] {
            if index == 0 || index > limit {
                return Err(MdpError::IndexOutOfRange { what, index, limit });
            }
        }
        if !e.value.is_finite() {
            return Err(MdpError::NonFinite("rewards"));
        }
        let (s, a, next) = (e.s - 1, e.a - 1, e.next - 1);
        if strict && e.value.abs() > 1.0 {
            return Err(MdpError::RewardOutOfBounds {
                s,
                a,
                next,
                value: e.value,
            });
        }
        reward[(s * m + a) * n + next] = e.value;
    }

    let initial = match &spec.initial_distribution {
        Some(p) => {
            validate_probability_vector(p, n, "initial_distribution")?;
            p.clone()
        }
        None => vec![1.0 / n as f64; n],
    };

    Ok(TabularMdp {
        n_states: n,
        n_actions: m,
        transition,
        reward,
        discount: spec.discount,
        initial,
    })
}

fn validate_probability_vector(p: &[f64], len: usize, what: &'static str) -> Result<(), MdpError> {
    if p.len() != len {
        return Err(MdpError::DimensionMismatch {
            what,
            expected: len,
            got: p.len(),
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(MdpError::NonFinite(what));
    }
    if let Some((col, &value)) = p.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(MdpError::NegativeProbability {
            action: 0,
            row: 0,
            col,
            value,
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(MdpError::NotNormalized(sum));
    }
    Ok(())
}

impl TabularMdp {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    /// `P(next | s, a)`
    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[a][s * self.n_states + next]
    }

    /// Next-state distribution for `(s, a)`.
    #[inline]
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let n = self.n_states;
        &self.transition[a][s * n..(s + 1) * n]
    }

    /// `r(s, a, next)`
    #[inline]
    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |acc, r| acc.max(r.abs()))
    }

    /// Expected one-step reward `R(s,a) = Σ_{s'} P(s'|s,a) r(s,a,s')` in
    /// flat Q order.
    pub fn expected_rewards(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_pairs()];
        for a in 0..self.n_actions {
            for s in 0..self.n_states {
                out[a * self.n_states + s] = (0..self.n_states)
                    .map(|next| self.prob(s, a, next) * self.reward(s, a, next))
                    .sum();
            }
        }
        out
    }

    /// Stacked `(n_states * n_actions) x n_states` transition matrix.
    pub fn stacked_transitions(&self) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(self.n_pairs(), n, |row, next| {
            let (a, s) = (row / n, row % n);
            self.prob(s, a, next)
        })
    }

    /// Serialises back to the file representation. Rewards are listed in
    /// `(s, a, s')` lexicographic order, zeros omitted.
    pub fn to_spec(&self) -> MdpSpec {
        let n = self.n_states;
        let transitions = self
            .transition
            .iter()
            .map(|flat| flat.chunks(n).map(<[f64]>::to_vec).collect())
            .collect();
        let mut rewards = Vec::new();
        for s in 0..n {
            for a in 0..self.n_actions {
                for next in 0..n {
                    let value = self.reward(s, a, next);
                    if value != 0.0 {
                        rewards.push(RewardEntry {
                            s: s + 1,
                            a: a + 1,
                            next: next + 1,
                            value,
                        });
                    }
                }
            }
        }
        MdpSpec {
            n_states: n,
            n_actions: self.n_actions,
            discount: self.discount,
            transitions,
            rewards,
            initial_distribution: Some(self.initial.clone()),
        }
    }
}

/// Flat position of `(s, a)` in the action-major layout.
pub fn flat_index(s: usize, a: usize, n_states: usize) -> Result<usize, MdpError> {
    if s >= n_states {
        return Err(MdpError::IndexOutOfRange {
            what: "state",
            index: s,
            limit: n_states,
        });
    }
    Ok(a * n_states + s)
}

/// Q-values in the action-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn from_values(
        n_states: usize,
        n_actions: usize,
        values: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if values.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch {
                what: "QTable values",
                expected: n_states * n_actions,
                got: values.len(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        debug_assert!(s < self.n_states && a < self.n_actions);
        a * self.n_states + s
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[self.index(s, a)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        let i = self.index(s, a);
        self.values[i] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Action values `Q(s, ·)` of one state.
    pub fn action_values(&self, s: usize) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.get(s, a)).collect()
    }

    pub fn linf_norm(&self) -> f64 {
        linf(&self.values)
    }

    pub fn linf_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
    }

    pub fn l2_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

pub(crate) fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Per-state action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    n_states: usize,
    n_actions: usize,
    /// row-major `n_states x n_actions`
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if probs.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch {
                what: "policy",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for row in probs.chunks(n_actions) {
            validate_probability_vector(row, n_actions, "policy row")?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self, MdpError> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(MdpError::IndexOutOfRange {
                    what: "action",
                    index: a,
                    limit: n_actions,
                });
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

/// Stacked model quantities for a fixed state-action distribution `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub n_states: usize,
    pub n_actions: usize,
    /// `(n_states * n_actions) x n_states`, row `(s,a)` is `P(·|s,a)`.
    pub p: DMatrix<f64>,
    /// Expected rewards in flat order.
    pub r: DVector<f64>,
    /// Diagonal of `D` in flat order.
    pub d: DVector<f64>,
    pub d_min: f64,
    pub d_max: f64,
}

impl ModelMatrices {
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Dense `D`.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d)
    }
}

/// Assembles `P`, `R`, `D` for a visit distribution `d` given in flat order.
pub fn assemble_matrices(mdp: &TabularMdp, d: &[f64]) -> Result<ModelMatrices, MdpError> {
    let len = mdp.n_pairs();
    if d.len() != len {
        return Err(MdpError::DimensionMismatch {
            what: "state-action distribution",
            expected: len,
            got: d.len(),
        });
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(MdpError::NonFinite("state-action distribution"));
    }
    if let Some((index, &value)) = d.iter().enumerate().find(|(_, &v)| v <= 0.0) {
        return Err(MdpError::ZeroVisitProbability { index, value });
    }
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(MdpError::NotNormalized(sum));
    }
    let d_min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ModelMatrices {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        p: mdp.stacked_transitions(),
        r: DVector::from_vec(mdp.expected_rewards()),
        d: DVector::from_column_slice(d),
        d_min,
        d_max,
    })
}

/// Uniform distribution over all state-action pairs.
pub fn uniform_distribution(mdp: &TabularMdp) -> Vec<f64> {
    vec![1.0 / mdp.n_pairs() as f64; mdp.n_pairs()]
}

/// `Π^π`: row `s` is `π(s)ᵀ ⊗ e_sᵀ`.
pub fn policy_matrix(policy: &StochasticPolicy) -> DMatrix<f64> {
    let n = policy.n_states();
    let mut out = DMatrix::zeros(n, n * policy.n_actions());
    for s in 0..n {
        for a in 0..policy.n_actions() {
            out[(s, a * n + s)] = policy.prob(s, a);
        }
    }
    out
}

/// Greedy action per state, ties to the lowest action index.
pub fn greedy_actions(q: &QTable) -> Vec<usize> {
    (0..q.n_states())
        .map(|s| {
            let mut best = 0;
            for a in 1..q.n_actions() {
                if q.get(s, a) > q.get(s, best) {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// `Π_Q^max`, the selector of the greedy policy of `q`.
pub fn greedy_selector(q: &QTable) -> DMatrix<f64> {
    let actions = greedy_actions(q);
    let policy = StochasticPolicy::deterministic(q.n_actions(), &actions)
        .expect("greedy actions are in range");
    policy_matrix(&policy)
}

/// Stationary state-action distribution `d(s,a) = p(s) π(a|s)` of the chain
/// induced by `policy`.
pub fn stationary_state_action(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    tol: f64,
) -> Result<Vec<f64>, MdpError> {
    let n = mdp.n_states();
    if policy.n_states() != n || policy.n_actions() != mdp.n_actions() {
        return Err(MdpError::DimensionMismatch {
            what: "policy",
            expected: mdp.n_pairs(),
            got: policy.n_states() * policy.n_actions(),
        });
    }
    let chain = DMatrix::from_fn(n, n, |s, next| {
        (0..mdp.n_actions())
            .map(|a| policy.prob(s, a) * mdp.prob(s, a, next))
            .sum::<f64>()
    });

    let classes = recurrent_class_count(&chain);
    if classes != 1 {
        return Err(MdpError::Reducible { classes });
    }

    let p = match power_iteration(&chain, tol) {
        Ok(p) => p,
        Err(err) if n > DIRECT_SOLVE_MAX_STATES => return Err(err),
        Err(_) => direct_stationary(&chain).ok_or(MdpError::NotConverged { residual: f64::NAN })?,
    };
    let residual = stationary_residual(&chain, &p);
    if residual > tol {
        return Err(MdpError::NotConverged { residual });
    }

    let mut d = vec![0.0; mdp.n_pairs()];
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            d[a * n + s] = p[s] * policy.prob(s, a);
        }
    }
    Ok(d)
}

/// Number of closed strongly connected components of the transition graph.
fn recurrent_class_count(chain: &DMatrix<f64>) -> usize {
    let n = chain.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if chain[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let components = tarjan_scc(&graph);
    let mut component_of = vec![0; n];
    for (c, members) in components.iter().enumerate() {
        for node in members {
            component_of[node.index()] = c;
        }
    }
    components
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|node| {
                (0..n).all(|j| chain[(node.index(), j)] <= 0.0 || component_of[j] == *c)
            })
        })
        .count()
}

fn stationary_residual(chain: &DMatrix<f64>, p: &[f64]) -> f64 {
    let n = chain.nrows();
    (0..n)
        .map(|j| ((0..n).map(|i| p[i] * chain[(i, j)]).sum::<f64>() - p[j]).abs())
        .fold(0.0, f64::max)
}

// Iterates the lazy chain (M + I)/2, which shares M's stationary vector and
// is aperiodic.
fn power_iteration(chain: &DMatrix<f64>, tol: f64) -> Result<Vec<f64>, MdpError> {
    let n = chain.nrows();
    let mut p = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_ITERATION_CAP {
        for j in 0..n {
            let moved: f64 = (0..n).map(|i| p[i] * chain[(i, j)]).sum();
            next[j] = 0.5 * (moved + p[j]);
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        std::mem::swap(&mut p, &mut next);
        residual = stationary_residual(chain, &p);
        if residual <= tol {
            return Ok(p);
        }
    }
    Err(MdpError::NotConverged { residual })
}

fn direct_stationary(chain: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = chain.nrows();
    // (Mᵀ - I) p = 0 with the last equation replaced by Σp = 1.
    let mut lhs = chain.transpose() - DMatrix::identity(n, n);
    let mut rhs = DVector::zeros(n);
    for j in 0..n {
        lhs[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let p = lhs.lu().solve(&rhs)?;
    Some(p.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn example() -> TabularMdp {
        build_mdp(&MdpSpec::two_state_example(), true).unwrap()
    }

    #[test]
    fn builds_example_model() {
        let mdp = example();
        assert_eq!(mdp.n_states(), 2);
        assert_eq!(mdp.n_actions(), 2);
        assert_eq!(mdp.reward(0, 0, 0), 0.5);
        assert_eq!(mdp.reward(0, 0, 1), 1.0);
        assert_eq!(mdp.reward(0, 1, 1), -0.5);
        assert_eq!(mdp.reward(1, 0, 1), -0.5);
        assert_eq!(mdp.reward(1, 1, 0), -0.5);
        assert_eq!(mdp.reward(1, 1, 1), 0.0);
        assert_eq!(mdp.prob(1, 0, 0), 0.9);
        assert_eq!(mdp.prob(1, 1, 1), 0.7);
    }

    #[test]
    fn degenerate_single_state_model() {
        let spec = MdpSpec {
            n_states: 1,
            n_actions: 1,
            discount: 0.0,
            transitions: vec![vec![vec![1.0]]],
            rewards: vec![],
            initial_distribution: None,
        };
        let mdp = build_mdp(&spec, true).unwrap();
        assert_eq!(mdp.expected_rewards(), vec![0.0]);
        assert_eq!(mdp.initial_distribution(), &[1.0]);
    }

    #[test]
    fn rejects_non_stochastic_row() {
        let mut spec = MdpSpec::two_state_example();
        spec.transitions[0][0] = vec![0.5, 0.6];
        assert!(matches!(
            build_mdp(&spec, true),
            Err(MdpError::NonStochasticRow {
                action: 0,
                row: 0,
                ..
            })
        ));
    }

    #[test]
    fn rejects_negative_probability_and_bad_discount() {
        let mut spec = MdpSpec::two_state_example();
        spec.transitions[1][1] = vec![1.2, -0.2];
        assert!(matches!(
            build_mdp(&spec, false),
            Err(MdpError::NegativeProbability { .. })
        ));
        let mut spec = MdpSpec::two_state_example();
        spec.discount = 1.0;
        assert_eq!(build_mdp(&spec, false), Err(MdpError::InvalidDiscount(1.0)));
    }

    #[test]
    fn strict_mode_bounds_rewards() {
        let mut spec = MdpSpec::two_state_example();
        spec.rewards[0].value = 2.0;
        assert!(matches!(
            build_mdp(&spec, true),
            Err(MdpError::RewardOutOfBounds { .. })
        ));
        assert!(build_mdp(&spec, false).is_ok());
    }

    #[test]
    fn example_round_trips_through_toml() {
        let spec = MdpSpec::two_state_example();
        let text = spec.to_toml();
        let back = MdpSpec::from_toml(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(build_mdp(&back, true).unwrap().to_spec(), spec);
    }

    #[test]
    fn flat_index_examples() {
        assert_eq!(flat_index(0, 0, 2).unwrap(), 0);
        assert_eq!(flat_index(1, 1, 2).unwrap(), 3);
        assert_eq!(flat_index(0, 1, 2).unwrap(), 2);
        assert!(matches!(
            flat_index(2, 0, 2),
            Err(MdpError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn assembled_matrices_for_uniform_d() {
        let mdp = example();
        let mm = assemble_matrices(&mdp, &uniform_distribution(&mdp)).unwrap();
        assert_eq!(mm.d_min, 0.25);
        assert_eq!(mm.d_max, 0.25);
        // R(s=1, a=1) in 1-based terms: 0.5 * 0.5 + 0.5 * 1
        assert_abs_diff_eq!(mm.r[0], 0.75, epsilon = 1e-15);
        for row in 0..mm.p.nrows() {
            assert_abs_diff_eq!(mm.p.row(row).sum(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(mm.d.sum(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_visit_probability_rejected() {
        let mdp = example();
        assert!(matches!(
            assemble_matrices(&mdp, &[0.5, 0.5, 0.0, 0.0]),
            Err(MdpError::ZeroVisitProbability { index: 2, .. })
        ));
    }

    #[test]
    fn policy_matrix_selects_and_averages() {
        let q = QTable::from_values(2, 2, vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let first = StochasticPolicy::deterministic(2, &[0, 0]).unwrap();
        let v = policy_matrix(&first) * q.to_dvector();
        assert_eq!(v.as_slice(), &[q.get(0, 0), q.get(1, 0)]);

        let uniform = policy_matrix(&StochasticPolicy::uniform(2, 2));
        let v = &uniform * q.to_dvector();
        assert_abs_diff_eq!(v[0], 2.0);
        assert_abs_diff_eq!(v[1], 3.5);
        for s in 0..2 {
            assert_abs_diff_eq!(uniform.row(s).sum(), 1.0);
        }
    }

    #[test]
    fn greedy_selector_examples() {
        let q = QTable::from_values(2, 2, vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(greedy_actions(&q), vec![1, 1]);
        let v = greedy_selector(&q) * q.to_dvector();
        assert_eq!(v.as_slice(), &[2.0, 2.0]);

        let flat = QTable::filled(3, 4, 0.3);
        assert_eq!(greedy_actions(&flat), vec![0, 0, 0]);
    }

    #[test]
    fn stationary_single_state() {
        let spec = MdpSpec {
            n_states: 1,
            n_actions: 2,
            discount: 0.5,
            transitions: vec![vec![vec![1.0]], vec![vec![1.0]]],
            rewards: vec![],
            initial_distribution: None,
        };
        let mdp = build_mdp(&spec, true).unwrap();
        let policy = StochasticPolicy::new(1, 2, vec![0.3, 0.7]).unwrap();
        let d = stationary_state_action(&mdp, &policy, 1e-12).unwrap();
        assert_abs_diff_eq!(d[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        // A 3-cycle is periodic; the lazy iteration still converges.
        let cycle = vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ];
        let spec = MdpSpec {
            n_states: 3,
            n_actions: 2,
            discount: 0.5,
            transitions: vec![cycle.clone(), cycle],
            rewards: vec![],
            initial_distribution: None,
        };
        let mdp = build_mdp(&spec, true).unwrap();
        let d = stationary_state_action(&mdp, &StochasticPolicy::uniform(3, 2), 1e-12).unwrap();
        for v in d {
            assert_abs_diff_eq!(v, 1.0 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stationary_matches_two_state_closed_form() {
        // For a 2-state chain [[1-x, x], [y, 1-y]], p = [y, x] / (x + y).
        let mdp = example();
        let d = stationary_state_action(&mdp, &StochasticPolicy::uniform(2, 2), 1e-12).unwrap();
        let x = 0.5 * (0.5 + 0.4);
        let y = 0.5 * (0.9 + 0.3);
        let p = [y / (x + y), x / (x + y)];
        for s in 0..2 {
            for a in 0..2 {
                assert_abs_diff_eq!(d[a * 2 + s], p[s] * 0.5, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn reducible_chain_reported() {
        let identity = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let spec = MdpSpec {
            n_states: 2,
            n_actions: 1,
            discount: 0.5,
            transitions: vec![identity],
            rewards: vec![],
            initial_distribution: None,
        };
        let mdp = build_mdp(&spec, true).unwrap();
        assert_eq!(
            stationary_state_action(&mdp, &StochasticPolicy::uniform(2, 1), 1e-12),
            Err(MdpError::Reducible { classes: 2 })
        );
    }

    fn qtable_strategy() -> impl Strategy<Value = QTable> {
        (1usize..5, 1usize..5).prop_flat_map(|(n, m)| {
            prop::collection::vec(-10.0f64..10.0, n * m)
                .prop_map(move |v| QTable::from_values(n, m, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn flat_index_is_a_bijection(n in 1usize..8, m in 1usize..8) {
            let mut seen = vec![false; n * m];
            for s in 0..n {
                for a in 0..m {
                    let i = flat_index(s, a, n).unwrap();
                    prop_assert!(i < n * m);
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }

        #[test]
        fn greedy_dominates_any_policy(q in qtable_strategy(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (n, m) = (q.n_states(), q.n_actions());
            let mut probs = Vec::with_capacity(n * m);
            for _ in 0..n {
                let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
                let total: f64 = w.iter().sum();
                probs.extend(w.iter().map(|x| x / total));
            }
            let policy = StochasticPolicy::new(n, m, probs).unwrap();
            let pi = policy_matrix(&policy);
            for s in 0..n {
                prop_assert!((pi.row(s).sum() - 1.0).abs() <= 1e-12);
            }
            let soft = &pi * q.to_dvector();
            let hard = greedy_selector(&q) * q.to_dvector();
            for s in 0..n {
                let brute = q.action_values(s).into_iter().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(hard[s], brute);
                prop_assert!(hard[s] >= soft[s] - 1e-12 * brute.abs().max(1.0));
            }
        }

        #[test]
        fn expected_reward_bounded_by_max_reward(values in prop::collection::vec(-3.0f64..3.0, 5)) {
            let mut spec = MdpSpec::two_state_example();
            for (e, v) in spec.rewards.iter_mut().zip(values) {
                e.value = v;
            }
            let mdp = build_mdp(&spec, false).unwrap();
            let bound = mdp.max_abs_reward();
            for r in mdp.expected_rewards() {
                prop_assert!(r.abs() <= bound + 1e-15);
            }
        }
    }
}
