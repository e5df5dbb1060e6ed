//! Switching-system view of soft Q-learning and its comparison systems.
//!
//! With deviations `x = Q − Q*`, the learner is sandwiched between a lower
//! system driven by the fixed matrix `A_{Q*}` and an upper system driven by
//! `A_{Q_k}` at the learner's current iterate. Both consume the learner's
//! own realized noise, so they are advanced in lock-step with it.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::format::sig17;
use crate::learner::{realized_noise, Learner, LearnerConfig, LearnerError, NoiseVector, Sampling};
use crate::mdp::{
    assemble_matrices, greedy_actions, greedy_selector, linf, MdpError, ModelMatrices, QTable,
    TabularMdp,
};
use crate::soft::{OperatorError, SoftOperator};

/// Ordering violations smaller than this are attributed to rounding.
pub const SANDWICH_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComparisonError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("co-simulation requires i.i.d. sampling")]
    RequiresIid,
}

/// Dense `A_Q = I + α(γ D P Π_Q^max − D)` and
/// `b_Q = αγ D P (Π_Q^max − Π_{Q*}^max) Q*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingMatrices {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl SwitchingMatrices {
    /// `max_i Σ_j |A_ij|`
    pub fn a_norm_inf(&self) -> f64 {
        self.a
            .row_iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

pub fn switching_matrices(
    q: &QTable,
    q_star: &QTable,
    mm: &ModelMatrices,
    alpha: f64,
    gamma: f64,
) -> SwitchingMatrices {
    let len = mm.n_pairs();
    let d = mm.d_matrix();
    let dp = &d * &mm.p;
    let select = greedy_selector(q);
    let select_star = greedy_selector(q_star);
    let a = DMatrix::identity(len, len) + alpha * (gamma * &dp * &select - &d);
    let b = alpha * gamma * &dp * (&select - &select_star) * q_star.to_dvector();
    SwitchingMatrices { a, b }
}

/// `ρ = 1 − α d_min (1 − γ)`
pub fn decay_rate(alpha: f64, d_min: f64, gamma: f64) -> f64 {
    1.0 - alpha * d_min * (1.0 - gamma)
}

/// Lower, upper and error comparison systems for one operator, step size
/// and visit distribution.
#[derive(Debug, Clone)]
pub struct ComparisonModel {
    mm: ModelMatrices,
    op: SoftOperator,
    alpha: f64,
    gamma: f64,
    star_greedy: Vec<usize>,
    /// `αγ D P (ln|A|/β) 1`
    offset: Vec<f64>,
}

impl ComparisonModel {
    pub fn new(
        mm: ModelMatrices,
        op: SoftOperator,
        alpha: f64,
        gamma: f64,
        q_star: &QTable,
    ) -> Self {
        let width = op.envelope_width(mm.n_actions);
        let offset = (0..mm.n_pairs())
            .map(|i| alpha * gamma * mm.d[i] * mm.p.row(i).sum() * width)
            .collect();
        Self {
            star_greedy: greedy_actions(q_star),
            mm,
            op,
            alpha,
            gamma,
            offset,
        }
    }

    pub fn model(&self) -> &ModelMatrices {
        &self.mm
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// `A_Q x` for the switching matrix whose greedy actions are `greedy`,
    /// without forming the matrix.
    pub fn apply_switching(&self, greedy: &[usize], x: &[f64]) -> Vec<f64> {
        let n = self.mm.n_states;
        (0..self.mm.n_pairs())
            .map(|i| {
                let d = self.mm.d[i];
                let lookahead: f64 = (0..n)
                    .map(|next| self.mm.p[(i, next)] * x[greedy[next] * n + next])
                    .sum();
                x[i] + self.alpha * (self.gamma * d * lookahead - d * x[i])
            })
            .collect()
    }

    /// Row-sum ∞-norm of `A_Q` for the given greedy actions.
    pub fn switching_norm(&self, greedy: &[usize]) -> f64 {
        let n = self.mm.n_states;
        let len = self.mm.n_pairs();
        (0..len)
            .map(|i| {
                let d = self.mm.d[i];
                let mut row = vec![0.0; len];
                row[i] += 1.0 - self.alpha * d;
                for next in 0..n {
                    row[greedy[next] * n + next] +=
                        self.alpha * self.gamma * d * self.mm.p[(i, next)];
                }
                row.iter().map(|v| v.abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// LSE: `x' = A_{Q*} x + α w`; Boltzmann additionally subtracts the
    /// offset.
    pub fn lower_step(&self, x: &[f64], w: &NoiseVector) -> Vec<f64> {
        let mut next = self.apply_switching(&self.star_greedy, x);
        let shift = matches!(self.op, SoftOperator::Boltzmann { .. });
        for (i, v) in next.iter_mut().enumerate() {
            *v += self.alpha * w.w[i];
            if shift {
                *v -= self.offset[i];
            }
        }
        next
    }

    /// LSE: `x' = A_{Q_k} x + α w + offset`; Boltzmann: no offset.
    pub fn upper_step(&self, x: &[f64], q_learner: &QTable, w: &NoiseVector) -> Vec<f64> {
        let mut next = self.apply_switching(&greedy_actions(q_learner), x);
        let shift = matches!(self.op, SoftOperator::Lse { .. });
        for (i, v) in next.iter_mut().enumerate() {
            *v += self.alpha * w.w[i];
            if shift {
                *v += self.offset[i];
            }
        }
        next
    }

    /// `e' = A_{Q_k} e + (A_{Q_k} − A_{Q*}) x_lower + offset`, the
    /// noise-free difference of the upper and lower systems.
    pub fn error_step(&self, e: &[f64], x_lower: &[f64], q_learner: &QTable) -> Vec<f64> {
        let greedy = greedy_actions(q_learner);
        let ae = self.apply_switching(&greedy, e);
        let ax = self.apply_switching(&greedy, x_lower);
        let ax_star = self.apply_switching(&self.star_greedy, x_lower);
        (0..e.len())
            .map(|i| ae[i] + (ax[i] - ax_star[i]) + self.offset[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SandwichSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichViolation {
    pub k: usize,
    pub side: SandwichSide,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledStep {
    pub k: usize,
    pub q_learner: QTable,
    /// `Q_k^L − Q*`
    pub x_lower: Vec<f64>,
    /// `Q_k^U − Q*`
    pub x_upper: Vec<f64>,
    /// Error-system state, advanced independently of the two above.
    pub error: Vec<f64>,
    /// Noise consumed to reach this step (`None` at `k = 0`).
    pub w: Option<NoiseVector>,
    /// `min_i (x_learner − x_lower)_i`
    pub lower_slack: f64,
    /// `min_i (x_upper − x_learner)_i`
    pub upper_slack: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrace {
    pub op: SoftOperator,
    pub alpha: f64,
    pub seed: u64,
    pub stream: u64,
    pub steps: Vec<CoupledStep>,
    pub violations: Vec<SandwichViolation>,
    /// Largest `‖A_{Q_k}‖∞` met along the run.
    pub max_switching_norm: f64,
    /// `max_k ‖e_k − (x_upper − x_lower)‖∞`
    pub max_error_identity_gap: f64,
    pub max_iterate_norm: f64,
}

impl CoupledTrace {
    pub fn sandwich_holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn min_lower_slack(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.lower_slack)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_upper_slack(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.upper_slack)
            .fold(f64::INFINITY, f64::min)
    }
}

fn min_difference(hi: &[f64], lo: &[f64]) -> f64 {
    hi.iter()
        .zip(lo)
        .map(|(h, l)| h - l)
        .fold(f64::INFINITY, f64::min)
}

fn record_step(
    k: usize,
    q: &QTable,
    q_star: &QTable,
    x_lower: &[f64],
    x_upper: &[f64],
    error: &[f64],
    w: Option<NoiseVector>,
    violations: &mut Vec<SandwichViolation>,
) -> CoupledStep {
    let x_learner: Vec<f64> = q
        .values()
        .iter()
        .zip(q_star.values())
        .map(|(a, b)| a - b)
        .collect();
    let lower_slack = min_difference(&x_learner, x_lower);
    let upper_slack = min_difference(x_upper, &x_learner);
    let lower_ok = lower_slack >= -SANDWICH_SLACK;
    let upper_ok = upper_slack >= -SANDWICH_SLACK;
    if !lower_ok {
        violations.push(SandwichViolation {
            k,
            side: SandwichSide::Lower,
            slack: lower_slack,
        });
    }
    if !upper_ok {
        violations.push(SandwichViolation {
            k,
            side: SandwichSide::Upper,
            slack: upper_slack,
        });
    }
    CoupledStep {
        k,
        q_learner: q.clone(),
        x_lower: x_lower.to_vec(),
        x_upper: x_upper.to_vec(),
        error: error.to_vec(),
        w,
        lower_slack,
        upper_slack,
        lower_ok,
        upper_ok,
    }
}

/// Runs the learner together with its lower, upper and error comparison
/// systems. Each step: sample, extract the realized noise at the current
/// iterate, advance the comparison systems with that noise, then update the
/// learner. Both comparison systems start at `q0`.
pub fn co_simulate(
    cfg: &LearnerConfig,
    mdp: &TabularMdp,
    q_star: &QTable,
) -> Result<CoupledTrace, ComparisonError> {
    let d = match &cfg.sampling {
        Sampling::Iid { d } => d.clone(),
        Sampling::Trajectory { .. } => return Err(ComparisonError::RequiresIid),
    };
    let mm = assemble_matrices(mdp, &d)?;
    let gamma = mdp.discount();
    let model = ComparisonModel::new(mm, cfg.op, cfg.step_size, gamma, q_star);
    let mut learner = Learner::new(cfg, mdp)?;

    let x0: Vec<f64> = learner
        .q()
        .values()
        .iter()
        .zip(q_star.values())
        .map(|(a, b)| a - b)
        .collect();
    let mut x_lower = x0.clone();
    let mut x_upper = x0;
    let mut error = vec![0.0; x_lower.len()];
    let mut violations = Vec::new();
    let mut steps = Vec::with_capacity(cfg.n_steps + 1);
    steps.push(record_step(
        0,
        learner.q(),
        q_star,
        &x_lower,
        &x_upper,
        &error,
        None,
        &mut violations,
    ));

    let mut max_switching_norm: f64 = 0.0;
    let mut max_error_identity_gap: f64 = 0.0;
    let mut max_iterate_norm = learner.q().linf_norm();

    for k in 1..=cfg.n_steps {
        let t = learner.sample();
        let q_k = learner.q().clone();
        let w = realized_noise(&q_k, &t, cfg.op, model.model(), gamma)?;

        let next_error = model.error_step(&error, &x_lower, &q_k);
        let next_lower = model.lower_step(&x_lower, &w);
        let next_upper = model.upper_step(&x_upper, &q_k, &w);
        max_switching_norm = max_switching_norm.max(model.switching_norm(&greedy_actions(&q_k)));
        learner.apply(&t)?;

        x_lower = next_lower;
        x_upper = next_upper;
        error = next_error;
        let gap = error
            .iter()
            .zip(x_upper.iter().zip(&x_lower))
            .map(|(e, (u, l))| (e - (u - l)).abs())
            .fold(0.0, f64::max);
        max_error_identity_gap = max_error_identity_gap.max(gap);
        max_iterate_norm = max_iterate_norm.max(learner.q().linf_norm());
        steps.push(record_step(
            k,
            learner.q(),
            q_star,
            &x_lower,
            &x_upper,
            &error,
            Some(w),
            &mut violations,
        ));
    }

    Ok(CoupledTrace {
        op: cfg.op,
        alpha: cfg.step_size,
        seed: cfg.seed,
        stream: cfg.stream,
        steps,
        violations,
        max_switching_norm,
        max_error_identity_gap,
        max_iterate_norm,
    })
}

/// CSV with columns
/// `step,lower_min_slack,upper_min_slack,linf_learner_error,linf_lower_error,linf_upper_error`.
pub fn write_coupled_csv<W: Write>(
    trace: &CoupledTrace,
    q_star: &QTable,
    out: &mut W,
) -> io::Result<()> {
    writeln!(
        out,
        "step,lower_min_slack,upper_min_slack,linf_learner_error,linf_lower_error,linf_upper_error"
    )?;
    for step in &trace.steps {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            step.k,
            sig17(step.lower_slack),
            sig17(step.upper_slack),
            sig17(step.q_learner.linf_distance(q_star)),
            sig17(linf(&step.x_lower)),
            sig17(linf(&step.x_upper)),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_mdp, uniform_distribution, MdpSpec};
    use crate::rng::stream_rng;
    use crate::solvers::{optimal_q, DEFAULT_MAX_ITER};
    use rand::Rng;

    fn setup() -> (TabularMdp, ModelMatrices, QTable) {
        let mdp = build_mdp(&MdpSpec::two_state_example(), true).unwrap();
        let mm = assemble_matrices(&mdp, &uniform_distribution(&mdp)).unwrap();
        let q_star = optimal_q(&mdp, 1e-12, DEFAULT_MAX_ITER).unwrap();
        (mdp, mm, q_star)
    }

    fn random_vec(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn random_q(rng: &mut impl Rng) -> QTable {
        QTable::from_values(2, 2, random_vec(rng, 4, 10.0)).unwrap()
    }

    #[test]
    fn b_vanishes_at_optimum() {
        let (_, mm, q_star) = setup();
        let m = switching_matrices(&q_star, &q_star, &mm, 0.3, 0.9);
        assert!(m.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn switching_norm_bounded_by_decay_rate() {
        let (_, mm, q_star) = setup();
        let mut rng = stream_rng(17, 0);
        let alpha = 0.7;
        let rho = decay_rate(alpha, mm.d_min, 0.9);
        for _ in 0..1000 {
            let q = random_q(&mut rng);
            let m = switching_matrices(&q, &q_star, &mm, alpha, 0.9);
            assert!(m.a.iter().all(|&v| v >= 0.0));
            assert!(m.a_norm_inf() <= rho + 1e-15);
            // b ≤ 0 element-wise: the greedy selection at Q* is optimal for Q*.
            assert!(m.b.iter().all(|&v| v <= 1e-15));
        }
    }

    #[test]
    fn undiscounted_identity_case() {
        let (mdp, _, q_star) = setup();
        let mm = assemble_matrices(&mdp, &uniform_distribution(&mdp)).unwrap();
        let m = switching_matrices(&q_star, &q_star, &mm, 0.5, 0.0);
        let expected = DMatrix::<f64>::identity(4, 4) * (1.0 - 0.5 / 4.0);
        assert!((m.a - expected).abs().max() <= 1e-15);
    }

    #[test]
    fn structured_application_matches_dense() {
        let (_, mm, q_star) = setup();
        let mut rng = stream_rng(23, 0);
        for op in [
            SoftOperator::lse(10.0).unwrap(),
            SoftOperator::boltzmann(10.0).unwrap(),
        ] {
            let model = ComparisonModel::new(mm.clone(), op, 0.2, 0.9, &q_star);
            for _ in 0..200 {
                let q = random_q(&mut rng);
                let x = random_vec(&mut rng, 4, 5.0);
                let w = NoiseVector {
                    w: random_vec(&mut rng, 4, 5.0),
                };
                let dense_star = switching_matrices(&q_star, &q_star, &mm, 0.2, 0.9);
                let dense_k = switching_matrices(&q, &q_star, &mm, 0.2, 0.9);
                let xv = DVector::from_column_slice(&x);
                let wv = DVector::from_column_slice(&w.w);
                let shift = DVector::from_element(4, 0.2 * 0.9 * 2f64.ln() / 10.0);
                let dp1 = mm.d_matrix() * &mm.p * DVector::from_element(2, 1.0);
                let offset = dp1.component_mul(&shift);

                let lower = model.lower_step(&x, &w);
                let upper = model.upper_step(&x, &q, &w);
                let (lower_oracle, upper_oracle) = match op {
                    SoftOperator::Lse { .. } => (
                        &dense_star.a * &xv + 0.2 * &wv,
                        &dense_k.a * &xv + 0.2 * &wv + &offset,
                    ),
                    _ => (
                        &dense_star.a * &xv + 0.2 * &wv - &offset,
                        &dense_k.a * &xv + 0.2 * &wv,
                    ),
                };
                for i in 0..4 {
                    assert!((lower[i] - lower_oracle[i]).abs() <= 1e-14);
                    assert!((upper[i] - upper_oracle[i]).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn equilibrium_and_offset_cases() {
        let (_, mm, q_star) = setup();
        let zero = vec![0.0; 4];
        let w0 = NoiseVector { w: zero.clone() };
        let lse = ComparisonModel::new(
            mm.clone(),
            SoftOperator::lse(10.0).unwrap(),
            0.1,
            0.9,
            &q_star,
        );
        let boltz = ComparisonModel::new(
            mm.clone(),
            SoftOperator::boltzmann(10.0).unwrap(),
            0.1,
            0.9,
            &q_star,
        );
        let expected = 0.1 * 0.9 * 0.25 * 2f64.ln() / 10.0;

        assert_eq!(lse.lower_step(&zero, &w0), zero);
        assert_eq!(boltz.upper_step(&zero, &q_star, &w0), zero);
        for v in boltz.lower_step(&zero, &w0) {
            assert!(v < 0.0 && (v + expected).abs() <= 1e-16);
        }
        for v in lse.upper_step(&zero, &q_star, &w0) {
            assert!(v > 0.0 && (v - expected).abs() <= 1e-16);
        }
        for model in [&lse, &boltz] {
            assert_eq!(
                model.error_step(&zero, &zero, &q_star),
                model.offset().to_vec()
            );
        }
    }

    #[test]
    fn error_step_at_optimum_drops_switching_term() {
        let (_, mm, q_star) = setup();
        let model = ComparisonModel::new(
            mm.clone(),
            SoftOperator::lse(3.0).unwrap(),
            0.4,
            0.9,
            &q_star,
        );
        let e = vec![0.3, -0.1, 0.7, 0.2];
        let x = vec![5.0, -4.0, 1.0, 9.0];
        let got = model.error_step(&e, &x, &q_star);
        let dense = switching_matrices(&q_star, &q_star, &mm, 0.4, 0.9);
        let want = &dense.a * DVector::from_column_slice(&e);
        for i in 0..4 {
            assert!((got[i] - want[i] - model.offset()[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn error_step_is_upper_minus_lower() {
        let (_, mm, q_star) = setup();
        let mut rng = stream_rng(29, 0);
        for op in [
            SoftOperator::lse(5.0).unwrap(),
            SoftOperator::boltzmann(5.0).unwrap(),
        ] {
            let model = ComparisonModel::new(mm.clone(), op, 0.3, 0.9, &q_star);
            for _ in 0..1000 {
                let q = random_q(&mut rng);
                let xl = random_vec(&mut rng, 4, 5.0);
                let xu = random_vec(&mut rng, 4, 5.0);
                let w = NoiseVector {
                    w: random_vec(&mut rng, 4, 5.0),
                };
                let e: Vec<f64> = xu.iter().zip(&xl).map(|(u, l)| u - l).collect();
                let via_error = model.error_step(&e, &xl, &q);
                let upper = model.upper_step(&xu, &q, &w);
                let lower = model.lower_step(&xl, &w);
                for i in 0..4 {
                    assert!((via_error[i] - (upper[i] - lower[i])).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn co_simulation_keeps_sandwich() {
        let (mdp, _, q_star) = setup();
        for op in [
            SoftOperator::lse(100.0).unwrap(),
            SoftOperator::boltzmann(100.0).unwrap(),
        ] {
            let cfg = LearnerConfig::new(
                op,
                0.01,
                10_000,
                Sampling::Iid {
                    d: uniform_distribution(&mdp),
                },
            )
            .with_seed(8, 0);
            let trace = co_simulate(&cfg, &mdp, &q_star).unwrap();
            assert!(trace.sandwich_holds(), "{:?}", trace.violations.first());
            assert_eq!(trace.steps[0].lower_slack, 0.0);
            assert_eq!(trace.steps[0].upper_slack, 0.0);
            assert!(trace.max_error_identity_gap <= 1e-12);
            for step in &trace.steps {
                assert_eq!(step.lower_ok, step.lower_slack >= -SANDWICH_SLACK);
                assert_eq!(step.upper_ok, step.upper_slack >= -SANDWICH_SLACK);
            }
        }
    }

    #[test]
    fn co_simulation_follows_plain_run() {
        let (mdp, _, q_star) = setup();
        let cfg = LearnerConfig::new(
            SoftOperator::boltzmann(10.0).unwrap(),
            0.05,
            500,
            Sampling::Iid {
                d: uniform_distribution(&mdp),
            },
        )
        .with_seed(2, 1);
        let trace = co_simulate(&cfg, &mdp, &q_star).unwrap();
        let plain = crate::learner::run(&cfg, &mdp).unwrap();
        assert_eq!(trace.steps.last().unwrap().q_learner, plain.final_q);
    }

    #[test]
    fn co_simulation_rejects_trajectory_mode() {
        let (mdp, _, q_star) = setup();
        let cfg = LearnerConfig::new(
            SoftOperator::lse(1.0).unwrap(),
            0.1,
            10,
            Sampling::Trajectory {
                behavior: crate::learner::Behavior::SoftmaxOfQ,
                max_episode_steps: 50,
                initial_distribution: vec![0.8, 0.2],
            },
        );
        assert_eq!(
            co_simulate(&cfg, &mdp, &q_star),
            Err(ComparisonError::RequiresIid)
        );
    }

    #[test]
    fn coupled_csv_schema() {
        let (mdp, _, q_star) = setup();
        let cfg = LearnerConfig::new(
            SoftOperator::lse(10.0).unwrap(),
            0.1,
            5,
            Sampling::Iid {
                d: uniform_distribution(&mdp),
            },
        );
        let trace = co_simulate(&cfg, &mdp, &q_star).unwrap();
        let mut buf = Vec::new();
        write_coupled_csv(&trace, &q_star, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "step,lower_min_slack,upper_min_slack,linf_learner_error,linf_lower_error,linf_upper_error"
        );
        assert_eq!(text.lines().count(), 7);
    }
}
