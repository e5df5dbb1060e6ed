//! Tabular soft Q-learning: single-entry TD updates with a soft backup,
//! transition sampling (i.i.d. or episodic), and the realized noise vector
//! that separates a sampled update from its model expectation.

use std::io::{self, Write};

use thiserror::Error;

use crate::format::sig17;
use crate::mdp::{
    assemble_matrices, MdpError, ModelMatrices, QTable, StochasticPolicy, TabularMdp,
};
use crate::rng::{sample_index, stream_rng, StreamRng};
use crate::soft::{soft_backup, soft_value, softmax, OperatorError, SoftOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("step size {0} is outside (0, 1)")]
    InvalidStepSize(f64),
    #[error("initial Q has ∞-norm {0} > 1 in strict mode")]
    InitialQOutOfBounds(f64),
    #[error("model matrices were assembled from a different distribution than the sampler uses")]
    DistributionMismatch,
    #[error("noise vectors are only defined under i.i.d. sampling")]
    NoiseRequiresIid,
    #[error("episode length must be positive")]
    InvalidEpisodeLength,
}

/// How the behaviour policy picks actions in trajectory mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    /// `π_b(a|s) ∝ exp(Q(s,a))`, recomputed from the current iterate.
    SoftmaxOfQ,
    Fixed(StochasticPolicy),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// `(s,a) ~ d` independently each step, `d` in flat Q order.
    Iid { d: Vec<f64> },
    /// Episodes of fixed length started from `initial_distribution`.
    Trajectory {
        behavior: Behavior,
        max_episode_steps: usize,
        initial_distribution: Vec<f64>,
    },
}

/// Which iterates a [`Trace`] keeps: every step up to `dense_until`, then
/// every `every`-th step. The final iterate is always kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotStride {
    pub dense_until: usize,
    pub every: usize,
}

impl Default for SnapshotStride {
    fn default() -> Self {
        Self {
            dense_until: 10_000,
            every: 100,
        }
    }
}

impl SnapshotStride {
    fn keeps(&self, k: usize) -> bool {
        k <= self.dense_until || (self.every > 0 && k.is_multiple_of(self.every))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub op: SoftOperator,
    pub step_size: f64,
    pub n_steps: usize,
    pub sampling: Sampling,
    pub seed: u64,
    pub stream: u64,
    /// Zero table when `None`.
    pub q0: Option<QTable>,
    /// Enforce unit-bounded initial values.
    pub strict: bool,
    pub snapshots: SnapshotStride,
    /// Store the realized noise of every step (i.i.d. sampling only).
    pub record_noise: bool,
}

impl LearnerConfig {
    pub fn new(op: SoftOperator, step_size: f64, n_steps: usize, sampling: Sampling) -> Self {
        Self {
            op,
            step_size,
            n_steps,
            sampling,
            seed: 0,
            stream: 0,
            q0: None,
            strict: true,
            snapshots: SnapshotStride::default(),
            record_noise: false,
        }
    }

    pub fn with_seed(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }

    pub fn initial_q(&self, mdp: &TabularMdp) -> QTable {
        self.q0
            .clone()
            .unwrap_or_else(|| QTable::zeros(mdp.n_states(), mdp.n_actions()))
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<(), LearnerError> {
        self.op.validate()?;
        if !(self.step_size > 0.0 && self.step_size < 1.0) {
            return Err(LearnerError::InvalidStepSize(self.step_size));
        }
        if let Some(q0) = &self.q0 {
            if q0.n_states() != mdp.n_states() || q0.n_actions() != mdp.n_actions() {
                return Err(MdpError::DimensionMismatch {
                    what: "q0",
                    expected: mdp.n_pairs(),
                    got: q0.len(),
                }
                .into());
            }
            if q0.values().iter().any(|v| !v.is_finite()) {
                return Err(MdpError::NonFinite("q0").into());
            }
            if self.strict && q0.linf_norm() > 1.0 {
                return Err(LearnerError::InitialQOutOfBounds(q0.linf_norm()));
            }
        }
        match &self.sampling {
            Sampling::Iid { d } => check_distribution(d, mdp.n_pairs(), "d")?,
            Sampling::Trajectory {
                behavior,
                max_episode_steps,
                initial_distribution,
            } => {
                if *max_episode_steps == 0 {
                    return Err(LearnerError::InvalidEpisodeLength);
                }
                check_distribution(initial_distribution, mdp.n_states(), "initial_distribution")?;
                if let Behavior::Fixed(policy) = behavior {
                    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions()
                    {
                        return Err(MdpError::DimensionMismatch {
                            what: "behavior policy",
                            expected: mdp.n_pairs(),
                            got: policy.n_states() * policy.n_actions(),
                        }
                        .into());
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], len: usize, what: &'static str) -> Result<(), MdpError> {
    if p.len() != len {
        return Err(MdpError::DimensionMismatch {
            what,
            expected: len,
            got: p.len(),
        });
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(MdpError::NonFinite(what));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > crate::mdp::STOCHASTIC_TOL {
        return Err(MdpError::NotNormalized(sum));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
    pub step: usize,
}

/// Position inside the current episode (trajectory mode).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SamplerState {
    pub state: usize,
    pub episode_step: usize,
}

/// Draws the transition for step `step`. Trajectory mode resamples the
/// start state whenever `episode_step` is zero and wraps after
/// `max_episode_steps` transitions.
pub fn sample_transition(
    rng: &mut StreamRng,
    cfg: &LearnerConfig,
    mdp: &TabularMdp,
    q: &QTable,
    sampler: &mut SamplerState,
    step: usize,
) -> Transition {
    let n = mdp.n_states();
    let (s, a) = match &cfg.sampling {
        Sampling::Iid { d } => {
            let idx = sample_index(rng, d);
            (idx % n, idx / n)
        }
        Sampling::Trajectory {
            behavior,
            initial_distribution,
            ..
        } => {
            if sampler.episode_step == 0 {
                sampler.state = sample_index(rng, initial_distribution);
            }
            let s = sampler.state;
            let a = match behavior {
                Behavior::SoftmaxOfQ => {
                    let probs = softmax(&q.action_values(s), 1.0).expect("finite iterates");
                    sample_index(rng, &probs)
                }
                Behavior::Fixed(policy) => sample_index(rng, policy.row(s)),
            };
            (s, a)
        }
    };
    let s_next = sample_index(rng, mdp.next_state_probs(s, a));
    if let Sampling::Trajectory {
        max_episode_steps, ..
    } = &cfg.sampling
    {
        sampler.episode_step += 1;
        if sampler.episode_step >= *max_episode_steps {
            sampler.episode_step = 0;
        } else {
            sampler.state = s_next;
        }
    }
    Transition {
        s,
        a,
        s_next,
        r: mdp.reward(s, a, s_next),
        step,
    }
}

/// `Q(s,a) += α (r + γ h(Q(s',·)) − Q(s,a))`; every other entry untouched.
pub fn step_in_place(
    q: &mut QTable,
    t: &Transition,
    op: SoftOperator,
    alpha: f64,
    gamma: f64,
) -> Result<(), OperatorError> {
    let target = t.r + gamma * soft_value(&q.action_values(t.s_next), op)?;
    let current = q.get(t.s, t.a);
    q.set(t.s, t.a, current + alpha * (target - current));
    Ok(())
}

pub fn step(
    q: &QTable,
    t: &Transition,
    op: SoftOperator,
    alpha: f64,
    gamma: f64,
) -> Result<QTable, OperatorError> {
    let mut next = q.clone();
    step_in_place(&mut next, t, op, alpha, gamma)?;
    Ok(next)
}

/// Realized noise of one step, flat Q order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    pub w: Vec<f64>,
}

impl NoiseVector {
    pub fn squared_norm(&self) -> f64 {
        self.w.iter().map(|x| x * x).sum()
    }
}

/// `w = e r + γ e e_{s'}ᵀ H(q) − e eᵀ q − (DR + γ DP H(q) − Dq)` with
/// `e = e_a ⊗ e_s`.
pub fn realized_noise(
    q: &QTable,
    t: &Transition,
    op: SoftOperator,
    mm: &ModelMatrices,
    gamma: f64,
) -> Result<NoiseVector, OperatorError> {
    let h = soft_backup(q, op)?;
    let len = mm.n_pairs();
    let mut w = Vec::with_capacity(len);
    for i in 0..len {
        let ph: f64 = mm.p.row(i).iter().zip(&h).map(|(p, v)| p * v).sum();
        let d = mm.d[i];
        w.push(-(d * mm.r[i] + gamma * d * ph - d * q.values()[i]));
    }
    let idx = q.index(t.s, t.a);
    w[idx] += t.r + gamma * h[t.s_next] - q.values()[idx];
    Ok(NoiseVector { w })
}

/// Checks that `mm` was built from the distribution the sampler draws from.
pub fn check_noise_model(cfg: &LearnerConfig, mm: &ModelMatrices) -> Result<(), LearnerError> {
    match &cfg.sampling {
        Sampling::Iid { d } if d.as_slice() == mm.d.as_slice() => Ok(()),
        Sampling::Iid { .. } => Err(LearnerError::DistributionMismatch),
        Sampling::Trajectory { .. } => Err(LearnerError::NoiseRequiresIid),
    }
}

/// Like [`realized_noise`] but rejects model matrices that do not match the
/// sampler.
pub fn realized_noise_checked(
    cfg: &LearnerConfig,
    q: &QTable,
    t: &Transition,
    mm: &ModelMatrices,
    gamma: f64,
) -> Result<NoiseVector, LearnerError> {
    check_noise_model(cfg, mm)?;
    Ok(realized_noise(q, t, cfg.op, mm, gamma)?)
}

/// Sequential driver shared by [`run`] and the comparison co-simulation.
pub struct Learner<'a> {
    cfg: &'a LearnerConfig,
    mdp: &'a TabularMdp,
    rng: StreamRng,
    sampler: SamplerState,
    q: QTable,
    k: usize,
}

impl<'a> Learner<'a> {
    pub fn new(cfg: &'a LearnerConfig, mdp: &'a TabularMdp) -> Result<Self, LearnerError> {
        cfg.validate(mdp)?;
        Ok(Self {
            cfg,
            mdp,
            rng: stream_rng(cfg.seed, cfg.stream),
            sampler: SamplerState::default(),
            q: cfg.initial_q(mdp),
            k: 0,
        })
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn steps_taken(&self) -> usize {
        self.k
    }

    /// Samples the next transition without updating `Q`.
    pub fn sample(&mut self) -> Transition {
        sample_transition(
            &mut self.rng,
            self.cfg,
            self.mdp,
            &self.q,
            &mut self.sampler,
            self.k,
        )
    }

    pub fn apply(&mut self, t: &Transition) -> Result<(), OperatorError> {
        step_in_place(
            &mut self.q,
            t,
            self.cfg.op,
            self.cfg.step_size,
            self.mdp.discount(),
        )?;
        self.k += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub stream: u64,
    pub q0: QTable,
    /// `(k, Q_k)` at the kept steps, starting with `k = 0`.
    pub snapshots: Vec<(usize, QTable)>,
    pub transitions: Vec<Transition>,
    /// Empty unless `record_noise` was set.
    pub noise: Vec<NoiseVector>,
    pub final_q: QTable,
    /// Mean of the last `max(1, n_steps/100)` iterates.
    pub tail_mean_q: QTable,
    /// `max_k ‖Q_k‖∞` over every iterate, including unsnapshotted ones.
    pub max_iterate_norm: f64,
    /// Visit counts per state-action pair, flat order.
    pub visit_counts: Vec<u64>,
    pub assumption_violations: Vec<String>,
}

impl Trace {
    /// Empirical state-action visit frequencies.
    pub fn visit_frequencies(&self) -> Vec<f64> {
        let total: u64 = self.visit_counts.iter().sum();
        self.visit_counts
            .iter()
            .map(|&c| {
                if total == 0 {
                    0.0
                } else {
                    c as f64 / total as f64
                }
            })
            .collect()
    }
}

pub const TIME_VARYING_POLICY: &str = "time-varying-policy";

pub(crate) fn assumption_violations(cfg: &LearnerConfig) -> Vec<String> {
    match &cfg.sampling {
        Sampling::Trajectory {
            behavior: Behavior::SoftmaxOfQ,
            ..
        } => vec![TIME_VARYING_POLICY.to_string()],
        _ => Vec::new(),
    }
}

/// Runs the learner for `cfg.n_steps` steps. Deterministic in
/// `(cfg.seed, cfg.stream)`.
pub fn run(cfg: &LearnerConfig, mdp: &TabularMdp) -> Result<Trace, LearnerError> {
    let mut learner = Learner::new(cfg, mdp)?;
    let mm = if cfg.record_noise {
        match &cfg.sampling {
            Sampling::Iid { d } => Some(assemble_matrices(mdp, d)?),
            Sampling::Trajectory { .. } => return Err(LearnerError::NoiseRequiresIid),
        }
    } else {
        None
    };

    let q0 = learner.q().clone();
    let tail_len = (cfg.n_steps / 100).max(1);
    let tail_start = cfg.n_steps.saturating_sub(tail_len) + 1;
    let mut tail_sum = vec![0.0; q0.len()];
    let mut tail_count = 0usize;
    let mut snapshots = vec![(0, q0.clone())];
    let mut transitions = Vec::with_capacity(cfg.n_steps);
    let mut noise = Vec::new();
    let mut visit_counts = vec![0u64; mdp.n_pairs()];
    let mut max_iterate_norm = q0.linf_norm();

    for k in 1..=cfg.n_steps {
        let t = learner.sample();
        if let Some(mm) = &mm {
            noise.push(realized_noise(learner.q(), &t, cfg.op, mm, mdp.discount())?);
        }
        learner.apply(&t)?;
        visit_counts[learner.q().index(t.s, t.a)] += 1;
        transitions.push(t);

        let q = learner.q();
        max_iterate_norm = max_iterate_norm.max(q.linf_norm());
        if k >= tail_start {
            tail_sum
                .iter_mut()
                .zip(q.values())
                .for_each(|(acc, v)| *acc += v);
            tail_count += 1;
        }
        if cfg.snapshots.keeps(k) || k == cfg.n_steps {
            snapshots.push((k, q.clone()));
        }
    }

    let final_q = learner.q().clone();
    let tail_mean_q = if tail_count == 0 {
        final_q.clone()
    } else {
        let values = tail_sum.iter().map(|v| v / tail_count as f64).collect();
        QTable::from_values(mdp.n_states(), mdp.n_actions(), values).expect("sized to the model")
    };
    Ok(Trace {
        seed: cfg.seed,
        stream: cfg.stream,
        q0,
        snapshots,
        transitions,
        noise,
        final_q,
        tail_mean_q,
        max_iterate_norm,
        visit_counts,
        assumption_violations: assumption_violations(cfg),
    })
}

/// Writes the snapshots as CSV:
/// `step,seed,linf_error,l2_error,q_0..q_{n-1}`.
pub fn write_trace_csv<W: Write>(trace: &Trace, q_star: &QTable, out: &mut W) -> io::Result<()> {
    let n = q_star.len();
    let mut header = String::from("step,seed,linf_error,l2_error");
    for i in 0..n {
        header.push_str(&format!(",q_{i}"));
    }
    writeln!(out, "{header}")?;
    for (k, q) in &trace.snapshots {
        let mut line = format!(
            "{k},{},{},{}",
            trace.seed,
            sig17(q.linf_distance(q_star)),
            sig17(q.l2_distance(q_star))
        );
        for v in q.values() {
            line.push(',');
            line.push_str(&sig17(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
