use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::{ExperimentConfig, OperatorKind, Protocol, SweepAxis};
use crate::bounds::{boltz_final_bound, lse_final_bound, BoundParams, BoundsError};
use crate::comparison::co_simulate;
use crate::learner::{run, Behavior, LearnerConfig, Sampling, SnapshotStride, TIME_VARYING_POLICY};
use crate::mdp::{assemble_matrices, uniform_distribution, MdpError, QTable, TabularMdp};
use crate::soft::{OperatorError, SoftOperator};
use crate::solvers::{optimal_q, SolverError, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Tag attached to points whose bound uses empirical visit frequencies.
pub const EMPIRICAL_VISITATION: &str = "empirical-visitation-d";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("every seed failed at {axis} = {value}: {first}")]
    AllSeedsFailed {
        axis: &'static str,
        value: f64,
        first: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed_index: usize,
    /// `‖Q_final − Q*‖∞`
    pub final_error: f64,
    /// `‖mean of last 1% of iterates − Q*‖∞`
    pub tail_error: f64,
    pub max_iterate_norm: f64,
    #[serde(skip)]
    pub visit_counts: Vec<u64>,
    /// Sandwich violations, when co-simulated.
    pub sandwich_violations: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mean_error: f64,
    pub stderr: f64,
    pub mean_tail_error: f64,
    /// Final-error bound at `k = n_steps`; infinite when some pair was never
    /// visited under the trajectory protocol.
    pub bound: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub seeds: Vec<SeedOutcome>,
    pub tags: Vec<String>,
}

impl SweepPoint {
    pub fn successful(&self) -> impl Iterator<Item = &SeedOutcome> {
        self.seeds.iter().filter(|s| s.failure.is_none())
    }

    pub fn n_successful(&self) -> usize {
        self.successful().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub operator: OperatorKind,
    pub axis: SweepAxis,
    pub n_steps: usize,
    pub protocol: Protocol,
    pub q_star: Vec<f64>,
    /// Sorted by `value`, ascending.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn stem(&self) -> String {
        format!("{}_{}", self.operator.name(), self.axis.name())
    }
}

fn soft_operator(kind: OperatorKind, beta: f64) -> Result<SoftOperator, OperatorError> {
    match kind {
        OperatorKind::Lse => SoftOperator::lse(beta),
        OperatorKind::Boltzmann => SoftOperator::boltzmann(beta),
    }
}

fn learner_config(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    op: SoftOperator,
    alpha: f64,
    seed_index: usize,
) -> LearnerConfig {
    let sampling = match cfg.protocol {
        Protocol::Iid => Sampling::Iid {
            d: uniform_distribution(mdp),
        },
        Protocol::Paper => Sampling::Trajectory {
            behavior: Behavior::SoftmaxOfQ,
            max_episode_steps: cfg.episode_length,
            initial_distribution: mdp.initial_distribution().to_vec(),
        },
    };
    let mut lc = LearnerConfig::new(op, alpha, cfg.n_steps, sampling)
        .with_seed(cfg.base_seed, seed_index as u64);
    lc.snapshots = SnapshotStride {
        dense_until: 0,
        every: 0,
    };
    lc
}

fn run_seed(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    q_star: &QTable,
    lc: &LearnerConfig,
    seed_index: usize,
) -> SeedOutcome {
    let failed = |e: String| SeedOutcome {
        seed_index,
        final_error: f64::NAN,
        tail_error: f64::NAN,
        max_iterate_norm: f64::NAN,
        visit_counts: Vec::new(),
        sandwich_violations: None,
        failure: Some(e),
    };
    let trace = match run(lc, mdp) {
        Ok(t) => t,
        Err(e) => return failed(e.to_string()),
    };
    let sandwich_violations = if cfg.co_simulate {
        match co_simulate(lc, mdp, q_star) {
            Ok(c) => Some(c.violations.len()),
            Err(e) => return failed(e.to_string()),
        }
    } else {
        None
    };
    SeedOutcome {
        seed_index,
        final_error: trace.final_q.linf_distance(q_star),
        tail_error: trace.tail_mean_q.linf_distance(q_star),
        max_iterate_norm: trace.max_iterate_norm,
        visit_counts: trace.visit_counts,
        sandwich_violations,
        failure: None,
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    q_star: &QTable,
    kind: OperatorKind,
    value: f64,
    seeds: Vec<SeedOutcome>,
) -> Result<SweepPoint, SweepError> {
    let (alpha, beta) = cfg.point(value);
    let ok: Vec<&SeedOutcome> = seeds.iter().filter(|s| s.failure.is_none()).collect();
    if ok.is_empty() {
        return Err(SweepError::AllSeedsFailed {
            axis: cfg.sweep.axis.name(),
            value,
            first: seeds[0].failure.clone().unwrap_or_default(),
        });
    }
    let finals: Vec<f64> = ok.iter().map(|s| s.final_error).collect();
    let tails: Vec<f64> = ok.iter().map(|s| s.tail_error).collect();
    let (mean_error, stderr) = mean_and_stderr(&finals);
    let (mean_tail_error, _) = mean_and_stderr(&tails);

    let mut tags = Vec::new();
    let d = match cfg.protocol {
        Protocol::Iid => uniform_distribution(mdp),
        Protocol::Paper => {
            tags.push(TIME_VARYING_POLICY.to_string());
            tags.push(EMPIRICAL_VISITATION.to_string());
            let mut counts = vec![0u64; mdp.n_pairs()];
            for s in &ok {
                counts
                    .iter_mut()
                    .zip(&s.visit_counts)
                    .for_each(|(c, v)| *c += v);
            }
            let total: u64 = counts.iter().sum();
            if total == 0 {
                vec![0.0; counts.len()]
            } else {
                counts.iter().map(|&c| c as f64 / total as f64).collect()
            }
        }
    };
    let d_min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = d.iter().copied().fold(0.0, f64::max);

    let bound = if d_min > 0.0 {
        let mm = assemble_matrices(mdp, &d)?;
        let q0 = QTable::zeros(mdp.n_states(), mdp.n_actions());
        let params = BoundParams::for_run(
            alpha,
            beta,
            mdp.discount(),
            &mm,
            &q0,
            q_star,
            cfg.bound_mode,
        );
        params.validate()?;
        let k = cfg.n_steps as u64;
        match kind {
            OperatorKind::Lse => lse_final_bound(k, &params),
            OperatorKind::Boltzmann => boltz_final_bound(k, &params),
        }
    } else {
        f64::INFINITY
    };

    Ok(SweepPoint {
        value,
        alpha,
        beta,
        mean_error,
        stderr,
        mean_tail_error,
        bound,
        d_min,
        d_max,
        seeds,
        tags,
    })
}

/// Runs every (operator, sweep value, seed) combination in parallel. Seed
/// `i` uses RNG stream `i` under `cfg.base_seed` at every sweep value, so
/// the output depends only on the config.
pub fn run_sweep(cfg: &ExperimentConfig, mdp: &TabularMdp) -> Result<Vec<SweepResult>, SweepError> {
    let q_star = optimal_q(mdp, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let mut values = cfg.sweep.values.clone();
    values.sort_by(f64::total_cmp);

    let mut jobs = Vec::new();
    for &kind in cfg.algorithm.operators() {
        for (vi, &value) in values.iter().enumerate() {
            let (alpha, beta) = cfg.point(value);
            let op = soft_operator(kind, beta)?;
            for seed_index in 0..cfg.n_seeds {
                jobs.push((
                    kind,
                    vi,
                    seed_index,
                    learner_config(cfg, mdp, op, alpha, seed_index),
                ));
            }
        }
    }
    let outcomes: Vec<SeedOutcome> = jobs
        .par_iter()
        .map(|(_, _, seed_index, lc)| run_seed(cfg, mdp, &q_star, lc, *seed_index))
        .collect();

    let mut outcomes = outcomes.into_iter();
    let mut results = Vec::new();
    for &kind in cfg.algorithm.operators() {
        let mut points = Vec::with_capacity(values.len());
        for &value in &values {
            let seeds: Vec<SeedOutcome> = outcomes.by_ref().take(cfg.n_seeds).collect();
            points.push(summarize(cfg, mdp, &q_star, kind, value, seeds)?);
        }
        results.push(SweepResult {
            operator: kind,
            axis: cfg.sweep.axis,
            n_steps: cfg.n_steps,
            protocol: cfg.protocol,
            q_star: q_star.values().to_vec(),
            points,
        });
    }
    Ok(results)
}
