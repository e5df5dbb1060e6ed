//! End-to-end checks of the learner, the comparison systems and the bounds
//! on the built-in two-state MDP, with a machine-readable report.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{self, naive, BoundKind, BoundParams};
use crate::comparison::co_simulate;
use crate::experiment::{run_sweep, sweep_csv, ExperimentConfig, Preset, SweepResult};
use crate::learner::{realized_noise, run, LearnerConfig, Sampling, SnapshotStride, Transition};
use crate::mdp::{
    assemble_matrices, build_mdp, uniform_distribution, MdpSpec, ModelMatrices, QTable, TabularMdp,
};
use crate::rng::{sample_index, stream_rng};
use crate::soft::{soft_value, SoftOperator};
use crate::solvers::{
    optimal_q, policy_enumeration_q, soft_fixed_point, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

/// Deliberate defects used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// `ρ = 1 − α(1−γ)`, dropping the minimum visit probability.
    DecayRateWithoutVisitProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerifyOptions {
    /// Smaller sample sizes; same thresholds.
    pub quick: bool,
    pub mutation: Option<Mutation>,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    /// Wall-clock limit in seconds, if any.
    pub time_limit: Option<f64>,
    pub seconds: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub quick: bool,
    pub mutation: Option<Mutation>,
    pub all_passed: bool,
    pub criteria: Vec<CriterionResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// One `PASS`/`FAIL` line per criterion.
    pub fn summary(&self) -> String {
        self.criteria
            .iter()
            .map(|c| {
                format!(
                    "{} {:>2} {:<28} measured={:.6e} threshold={:.6e} time={:.2}s {}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.id,
                    c.name,
                    c.measured,
                    c.threshold,
                    c.seconds,
                    c.detail
                )
            })
            .collect()
    }
}

/// Outcome of one check before timing is attached.
struct Measured {
    measured: f64,
    threshold: f64,
    passed: bool,
    detail: String,
}

impl Measured {
    /// Passes when `measured <= threshold`.
    fn at_most(measured: f64, threshold: f64, detail: String) -> Self {
        Self {
            measured,
            threshold,
            passed: measured <= threshold,
            detail,
        }
    }

    /// Passes when `measured >= threshold`.
    fn at_least(measured: f64, threshold: f64, detail: String) -> Self {
        Self {
            measured,
            threshold,
            passed: measured >= threshold,
            detail,
        }
    }
}

struct Ctx {
    opts: VerifyOptions,
    mdp: TabularMdp,
    mm: ModelMatrices,
    q_star: QTable,
}

impl Ctx {
    fn rate(&self, alpha: f64, d_min: f64, gamma: f64) -> f64 {
        match self.opts.mutation {
            Some(Mutation::DecayRateWithoutVisitProbability) => 1.0 - alpha * (1.0 - gamma),
            None => 1.0 - alpha * d_min * (1.0 - gamma),
        }
    }

    fn scaled(&self, full: usize, quick: usize) -> usize {
        if self.opts.quick {
            quick
        } else {
            full
        }
    }

    fn params(&self, alpha: f64, beta: f64) -> BoundParams {
        let q0 = QTable::zeros(self.mdp.n_states(), self.mdp.n_actions());
        BoundParams::for_run(
            alpha,
            beta,
            self.mdp.discount(),
            &self.mm,
            &q0,
            &self.q_star,
            Default::default(),
        )
    }

    fn iid(&self) -> Sampling {
        Sampling::Iid {
            d: self.mm.d.as_slice().to_vec(),
        }
    }
}

fn fig1() -> TabularMdp {
    build_mdp(&MdpSpec::two_state_example(), true).expect("built-in model is valid")
}

/// Runs every criterion. Never panics: failures inside a check are
/// reported as a failed criterion.
pub fn verify(opts: VerifyOptions) -> VerifyReport {
    let mdp = fig1();
    let mm = assemble_matrices(&mdp, &uniform_distribution(&mdp)).expect("uniform d is valid");
    let q_star = optimal_q(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER).expect("value iteration converges");
    let ctx = Ctx {
        opts,
        mdp,
        mm,
        q_star,
    };

    type Check = fn(&Ctx, &mut Shared) -> Result<Measured, String>;
    let checks: [(u8, &'static str, Option<f64>, Check); 13] = [
        (1, "operator-envelopes", Some(5.0), operator_envelopes),
        (2, "sandwich-ordering", Some(120.0), sandwich_ordering),
        (3, "iterate-boundedness", None, iterate_boundedness),
        (4, "zero-mean-noise", None, zero_mean_noise),
        (5, "noise-second-moment", None, noise_second_moment),
        (
            6,
            "optimal-q-ground-truth",
            Some(1.0),
            optimal_q_ground_truth,
        ),
        (7, "lse-fixed-point-gap", None, lse_fixed_point_gap),
        (8, "bound-dominance", Some(600.0), bound_dominance),
        (9, "beta-sweep-trend", None, beta_trend),
        (10, "alpha-sweep-trend", None, alpha_trend),
        (11, "dual-implementation", None, dual_implementation),
        (12, "error-system-identity", None, error_identity),
        (13, "determinism", None, determinism),
    ];

    let mut shared = Shared::default();
    let mut criteria = Vec::with_capacity(checks.len());
    for (id, name, time_limit, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&ctx, &mut shared)));
        let seconds = start.elapsed().as_secs_f64();
        let m = match outcome {
            Ok(Ok(m)) => m,
            Ok(Err(e)) => Measured {
                measured: f64::NAN,
                threshold: f64::NAN,
                passed: false,
                detail: format!("error: {e}"),
            },
            Err(_) => Measured {
                measured: f64::NAN,
                threshold: f64::NAN,
                passed: false,
                detail: "check panicked".into(),
            },
        };
        let in_time = time_limit.is_none_or(|limit| seconds <= limit);
        let detail = if in_time {
            m.detail
        } else {
            format!(
                "{} (exceeded {}s)",
                m.detail,
                time_limit.unwrap_or_default()
            )
        };
        criteria.push(CriterionResult {
            id,
            name,
            measured: m.measured,
            threshold: m.threshold,
            time_limit,
            seconds,
            passed: m.passed && in_time,
            detail,
        });
    }
    VerifyReport {
        quick: opts.quick,
        mutation: opts.mutation,
        all_passed: criteria.iter().all(|c| c.passed),
        criteria,
    }
}

/// Results shared between checks that reuse the same runs.
#[derive(Default)]
struct Shared {
    /// `(β, max ‖Q_k‖∞)` per co-simulated run.
    iterate_norms: Vec<(f64, f64)>,
    sweeps: Vec<(Preset, SweepResult)>,
}

fn operator_envelopes(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let n_vectors = ctx.scaled(10_000, 2_000);
    let betas = [0.1, 1.0, 10.0, 1000.0];
    let mut rng = stream_rng(ctx.opts.base_seed, 101);
    let mut worst = f64::INFINITY;
    let mut count = 0usize;
    for i in 0..n_vectors {
        let dim = 1 + i % 16;
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let v: Vec<f64> = (0..dim)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect();
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for beta in betas {
            let width = (dim as f64).ln() / beta;
            let lse = soft_value(&v, SoftOperator::Lse { beta }).map_err(|e| e.to_string())?;
            let boltz =
                soft_value(&v, SoftOperator::Boltzmann { beta }).map_err(|e| e.to_string())?;
            worst = worst
                .min(lse - max)
                .min(max + width - lse)
                .min(max - boltz)
                .min(boltz - (max - width));
            count += 1;
        }
    }
    Ok(Measured::at_least(
        worst,
        -1e-12,
        format!("{count} vector/beta pairs, dims 1-16"),
    ))
}

fn sandwich_ordering(ctx: &Ctx, shared: &mut Shared) -> Result<Measured, String> {
    let n_steps = ctx.scaled(10_000, 2_000);
    let gamma = ctx.mdp.discount();
    let mut runs = Vec::new();
    for op_lse in [true, false] {
        for alpha in [0.01, 0.001] {
            for beta in [10.0, 1000.0] {
                for seed in 0..5u64 {
                    let op = if op_lse {
                        SoftOperator::Lse { beta }
                    } else {
                        SoftOperator::Boltzmann { beta }
                    };
                    runs.push((op, alpha, beta, seed));
                }
            }
        }
    }
    let outcomes: Vec<_> = runs
        .par_iter()
        .map(|&(op, alpha, beta, seed)| {
            let cfg = LearnerConfig::new(op, alpha, n_steps, ctx.iid())
                .with_seed(ctx.opts.base_seed, 200 + seed);
            co_simulate(&cfg, &ctx.mdp, &ctx.q_star).map(|t| (alpha, beta, t))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;

    let mut slack = f64::INFINITY;
    let mut worst_norm_excess = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for (alpha, beta, t) in &outcomes {
        slack = slack.min(t.min_lower_slack()).min(t.min_upper_slack());
        violations += t.violations.len();
        let rho = ctx.rate(*alpha, ctx.mm.d_min, gamma);
        worst_norm_excess = worst_norm_excess.max(t.max_switching_norm - rho);
        shared.iterate_norms.push((*beta, t.max_iterate_norm));
    }
    let mut m = Measured::at_least(
        slack,
        -1e-9,
        format!(
            "{} runs x {n_steps} steps, {violations} violations, max(|A_Q|inf - rho) = {worst_norm_excess:.3e}",
            outcomes.len()
        ),
    );
    if worst_norm_excess > 1e-14 {
        m.passed = false;
        m.detail
            .push_str(" (switching matrix norm exceeds decay rate)");
    }
    Ok(m)
}

fn iterate_boundedness(ctx: &Ctx, shared: &mut Shared) -> Result<Measured, String> {
    if shared.iterate_norms.is_empty() {
        return Err("no runs from the sandwich check".into());
    }
    let gamma = ctx.mdp.discount();
    let ln_a = (ctx.mdp.n_actions() as f64).ln();
    let excess = shared
        .iterate_norms
        .iter()
        .map(|(beta, norm)| norm - (1.0 + gamma * ln_a / beta) / (1.0 - gamma))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Measured::at_most(
        excess,
        1e-12,
        format!(
            "max over {} runs of |Q_k|inf minus its bound",
            shared.iterate_norms.len()
        ),
    ))
}

/// `E[w | Q]` by enumerating every `(s, a, s')` with its probability.
fn expected_noise(ctx: &Ctx, q: &QTable, op: SoftOperator) -> Result<Vec<f64>, String> {
    let n = ctx.mdp.n_states();
    let mut mean = vec![0.0; ctx.mm.n_pairs()];
    for idx in 0..ctx.mm.n_pairs() {
        let (s, a) = (idx % n, idx / n);
        for s_next in 0..n {
            let p = ctx.mm.d[idx] * ctx.mdp.prob(s, a, s_next);
            if p == 0.0 {
                continue;
            }
            let t = Transition {
                s,
                a,
                s_next,
                r: ctx.mdp.reward(s, a, s_next),
                step: 0,
            };
            let w = realized_noise(q, &t, op, &ctx.mm, ctx.mdp.discount())
                .map_err(|e| e.to_string())?;
            mean.iter_mut().zip(&w.w).for_each(|(m, v)| *m += p * v);
        }
    }
    Ok(mean)
}

fn zero_mean_noise(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let mut rng = stream_rng(ctx.opts.base_seed, 401);
    let mut worst: f64 = 0.0;
    let n_points = 100;
    for i in 0..n_points {
        let beta = [1.0, 10.0, 1000.0][i % 3];
        let steps = rng.random_range(0..2000);
        let mut cfg = LearnerConfig::new(SoftOperator::Lse { beta }, 0.05, steps, ctx.iid())
            .with_seed(ctx.opts.base_seed, 400 + i as u64);
        cfg.snapshots = SnapshotStride {
            dense_until: 0,
            every: 0,
        };
        let q = run(&cfg, &ctx.mdp).map_err(|e| e.to_string())?.final_q;
        for op in [SoftOperator::Lse { beta }, SoftOperator::Boltzmann { beta }] {
            let mean = expected_noise(ctx, &q, op)?;
            worst = worst.max(mean.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    Ok(Measured::at_most(
        worst,
        1e-12,
        format!("{n_points} learner iterates, both operators"),
    ))
}

fn noise_second_moment(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let n_samples = ctx.scaled(100_000, 10_000);
    let gamma = ctx.mdp.discount();
    let n = ctx.mdp.n_states();
    let d = ctx.mm.d.as_slice().to_vec();
    let mut worst_ratio = f64::NEG_INFINITY;
    for point in 0..10u64 {
        let beta = if point % 2 == 0 { 10.0 } else { 1000.0 };
        let p = ctx.params(0.01, beta);
        let box_half = bounds::iterate_bound(&p);
        let mut rng = stream_rng(ctx.opts.base_seed, 500 + point);
        let q = QTable::from_values(
            n,
            ctx.mdp.n_actions(),
            (0..ctx.mm.n_pairs())
                .map(|_| rng.random_range(-box_half..box_half))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        for op in [SoftOperator::Lse { beta }, SoftOperator::Boltzmann { beta }] {
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..n_samples {
                let idx = sample_index(&mut rng, &d);
                let (s, a) = (idx % n, idx / n);
                let s_next = sample_index(&mut rng, ctx.mdp.next_state_probs(s, a));
                let t = Transition {
                    s,
                    a,
                    s_next,
                    r: ctx.mdp.reward(s, a, s_next),
                    step: 0,
                };
                let x = realized_noise(&q, &t, op, &ctx.mm, gamma)
                    .map_err(|e| e.to_string())?
                    .squared_norm();
                sum += x;
                sum_sq += x * x;
            }
            let m = n_samples as f64;
            let mean = sum / m;
            let sd = ((sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0)).sqrt();
            let allowance = 3.0 * sd / m.sqrt();
            worst_ratio = worst_ratio.max((mean - allowance) / bounds::noise_moment_bound(&p));
        }
    }
    Ok(Measured::at_most(
        worst_ratio,
        1.0,
        format!("max (mean - 3 se) / bound over 10 points x 2 operators, {n_samples} samples each"),
    ))
}

fn optimal_q_ground_truth(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let vi = optimal_q(&ctx.mdp, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
    let oracle = policy_enumeration_q(&ctx.mdp).map_err(|e| e.to_string())?;
    let diff = vi.linf_distance(&oracle);
    let norm = vi.linf_norm();
    let limit = 1.0 / (1.0 - ctx.mdp.discount());
    let mut m = Measured::at_most(diff, 1e-9, format!("|Q*|inf = {norm:.6} (limit {limit})"));
    if norm > limit {
        m.passed = false;
    }
    Ok(m)
}

fn lse_fixed_point_gap(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let gamma = ctx.mdp.discount();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for beta in [10.0, 100.0, 1000.0] {
        let report = soft_fixed_point(
            &ctx.mdp,
            SoftOperator::Lse { beta },
            1e-12,
            DEFAULT_MAX_ITER,
            4,
            ctx.opts.base_seed,
        )
        .map_err(|e| e.to_string())?;
        if !report.converged {
            return Err(format!(
                "fixed-point iteration did not converge at beta = {beta}"
            ));
        }
        let gap = report.q.linf_distance(&ctx.q_star);
        let limit = gamma * 2f64.ln() / (beta * (1.0 - gamma));
        worst = worst.max(gap / limit);
        parts.push(format!("beta={beta}: {gap:.4e} <= {limit:.4e}"));
    }
    Ok(Measured::at_most(
        worst,
        1.0,
        format!("gap / limit; {}", parts.join(", ")),
    ))
}

fn preset_results(ctx: &Ctx, shared: &mut Shared) -> Result<(), String> {
    if !shared.sweeps.is_empty() {
        return Ok(());
    }
    for preset in Preset::ALL {
        let mut cfg = preset.config();
        cfg.base_seed = ctx.opts.base_seed;
        cfg.n_seeds = ctx.scaled(10, 4);
        cfg.n_steps = ctx.scaled(100_000, 20_000);
        let mut results = run_sweep(&cfg, &ctx.mdp).map_err(|e| e.to_string())?;
        shared.sweeps.push((preset, results.remove(0)));
    }
    Ok(())
}

fn final_kind(preset: Preset) -> BoundKind {
    match preset {
        Preset::Fig2Lse | Preset::Fig3Lse => BoundKind::LseFinal,
        Preset::Fig2Boltz | Preset::Fig3Boltz => BoundKind::BoltzFinal,
    }
}

fn bound_dominance(ctx: &Ctx, shared: &mut Shared) -> Result<Measured, String> {
    preset_results(ctx, shared)?;
    let gamma = ctx.mdp.discount();
    let mut worst = f64::NEG_INFINITY;
    let mut n_points = 0;
    for (preset, result) in &shared.sweeps {
        for p in &result.points {
            let params = ctx.params(p.alpha, p.beta);
            let rho = ctx.rate(p.alpha, params.d_min, gamma);
            let bound = final_kind(*preset)
                .terms_with_rate(result.n_steps as u64, &params, rho)
                .total();
            worst = worst.max(p.mean_error / bound);
            n_points += 1;
        }
    }
    Ok(Measured::at_most(
        worst,
        1.0,
        format!("max mean error / bound over {n_points} sweep points"),
    ))
}

fn strictly_monotone(values: &[f64], increasing: bool) -> bool {
    values
        .windows(2)
        .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

fn bound_grid(ctx: &Ctx, grid: &[(f64, f64)], kind: BoundKind, k: u64) -> Vec<f64> {
    let gamma = ctx.mdp.discount();
    grid.iter()
        .map(|&(alpha, beta)| {
            let params = ctx.params(alpha, beta);
            kind.terms_with_rate(k, &params, ctx.rate(alpha, params.d_min, gamma))
                .total()
        })
        .collect()
}

fn beta_trend(ctx: &Ctx, shared: &mut Shared) -> Result<Measured, String> {
    preset_results(ctx, shared)?;
    let (_, lse) = shared
        .sweeps
        .iter()
        .find(|(p, _)| *p == Preset::Fig2Lse)
        .ok_or("missing sweep")?;
    let worst = lse
        .points
        .windows(2)
        .map(|w| {
            w[1].mean_error
                - w[0].mean_error
                - 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 10000.0]
        .iter()
        .map(|&b| (0.001, b))
        .collect();
    let k = lse.n_steps as u64;
    let lse_bounds = bound_grid(ctx, &grid, BoundKind::LseFinal, k);
    let boltz_bounds = bound_grid(ctx, &grid, BoundKind::BoltzFinal, k);
    let bounds_ok =
        strictly_monotone(&lse_bounds, false) && strictly_monotone(&boltz_bounds, false);
    let means: Vec<String> = lse
        .points
        .iter()
        .map(|p| format!("{:.4e}", p.mean_error))
        .collect();
    let mut m = Measured::at_most(
        worst,
        0.0,
        format!(
            "max rise beyond 2 pooled se; lse means [{}]; bounds decreasing: {bounds_ok}",
            means.join(", ")
        ),
    );
    m.passed &= bounds_ok;
    Ok(m)
}

fn alpha_trend(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let grid: Vec<(f64, f64)> = [1e-4, 1e-3, 1e-2].iter().map(|&a| (a, 1000.0)).collect();
    let k = ctx.scaled(100_000, 20_000) as u64;
    let lse = bound_grid(ctx, &grid, BoundKind::LseFinal, k);
    let boltz = bound_grid(ctx, &grid, BoundKind::BoltzFinal, k);
    let min_step = lse
        .windows(2)
        .chain(boltz.windows(2))
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let mut m = Measured::at_least(
        min_step,
        0.0,
        format!("lse {lse:.4?}, boltzmann {boltz:.4?}"),
    );
    m.passed = strictly_monotone(&lse, true) && strictly_monotone(&boltz, true);
    Ok(m)
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn dual_implementation(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let mut rng = stream_rng(ctx.opts.base_seed, 1101);
    let ks = [0u64, 1, 10, 1_000, 100_000];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_actions = rng.random_range(1..=5usize);
        let n_states = rng.random_range(1..=6usize);
        let n_pairs = n_actions * n_states;
        let uniform = 1.0 / n_pairs as f64;
        let p = BoundParams {
            alpha: 10f64.powf(rng.random_range(-4.0..-1.0)),
            beta: 10f64.powf(rng.random_range(-1.0..4.0)),
            gamma: rng.random_range(0.0..0.99),
            d_min: uniform * rng.random_range(0.05..=1.0),
            d_max: (uniform * rng.random_range(1.0..3.0)).min(1.0),
            n_pairs,
            n_actions,
            q0_gap_l2: rng.random_range(0.0..20.0),
            q0_gap_linf: rng.random_range(0.0..20.0),
        };
        p.validate().map_err(|e| e.to_string())?;
        let rho = ctx.rate(p.alpha, p.d_min, p.gamma);
        worst = worst.max(relative_gap(rho, naive::decay_rate(&p)));
        for &k in &ks {
            let pairs = [
                (BoundKind::LseLower, naive::lse_lower_bound(k, &p)),
                (BoundKind::LseFinal, naive::lse_final_bound(k, &p)),
                (BoundKind::BoltzLower, naive::boltz_lower_bound(k, &p)),
                (BoundKind::BoltzFinal, naive::boltz_final_bound(k, &p)),
                (BoundKind::TraceXk, naive::trace_bound(k, &p)),
            ];
            for (kind, reference) in pairs {
                worst = worst.max(relative_gap(
                    kind.terms_with_rate(k, &p, rho).total(),
                    reference,
                ));
            }
        }
        worst = worst.max(relative_gap(
            bounds::noise_moment_bound(&p),
            naive::noise_moment_bound(&p),
        ));
        worst = worst.max(relative_gap(
            bounds::iterate_bound(&p),
            naive::iterate_bound(&p),
        ));
    }

    let anchor = BoundParams {
        alpha: 0.001,
        beta: 1000.0,
        gamma: 0.9,
        d_min: 0.25,
        d_max: 0.25,
        n_pairs: 4,
        n_actions: 2,
        q0_gap_l2: 0.0,
        q0_gap_linf: 0.0,
    };
    let rho_anchor = relative_gap(ctx.rate(anchor.alpha, anchor.d_min, anchor.gamma), 0.999975);
    let noise_anchor = relative_gap(bounds::noise_moment_bound(&anchor), 600.832);
    let mut m = Measured::at_most(
        worst,
        1e-10,
        format!("100 parameter points x {} steps; rho anchor rel {rho_anchor:.2e}, noise anchor rel {noise_anchor:.2e}", ks.len()),
    );
    if rho_anchor > 1e-12 || noise_anchor > 1e-6 {
        m.passed = false;
    }
    Ok(m)
}

fn error_identity(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let mut worst: f64 = 0.0;
    let mut rng = stream_rng(ctx.opts.base_seed, 1201);
    for i in 0..4u64 {
        let alpha = 10f64.powf(rng.random_range(-3.0..-1.0));
        let beta = 10f64.powf(rng.random_range(0.0..3.0));
        for op in [SoftOperator::Lse { beta }, SoftOperator::Boltzmann { beta }] {
            let cfg = LearnerConfig::new(op, alpha, 1000, ctx.iid())
                .with_seed(ctx.opts.base_seed, 1200 + i);
            let t = co_simulate(&cfg, &ctx.mdp, &ctx.q_star).map_err(|e| e.to_string())?;
            worst = worst.max(t.max_error_identity_gap);
        }
    }
    Ok(Measured::at_most(
        worst,
        1e-12,
        "8 runs x 1000 steps".into(),
    ))
}

fn determinism(ctx: &Ctx, _: &mut Shared) -> Result<Measured, String> {
    let mut cfg: ExperimentConfig = Preset::Fig2Lse.config();
    cfg.base_seed = ctx.opts.base_seed;
    cfg.n_seeds = 3;
    cfg.n_steps = 2_000;
    let render = |cfg: &ExperimentConfig| -> Result<String, String> {
        let results = run_sweep(cfg, &ctx.mdp).map_err(|e| e.to_string())?;
        Ok(results.iter().map(sweep_csv).collect())
    };
    let a = render(&cfg)?;
    let b = render(&cfg)?;
    let differing =
        a.bytes().zip(b.bytes()).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    Ok(Measured::at_most(
        differing as f64,
        0.0,
        "differing bytes between two identical sweeps".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutation_is_detected() {
        let report = verify(VerifyOptions {
            quick: true,
            mutation: Some(Mutation::DecayRateWithoutVisitProbability),
            base_seed: 0,
        });
        let failed: Vec<u8> = report
            .criteria
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.id)
            .collect();
        assert!(failed.contains(&2), "{}", report.summary());
        assert!(failed.contains(&11), "{}", report.summary());
        assert!(!report.all_passed);
    }

    #[test]
    fn report_serializes() {
        let report = VerifyReport {
            quick: true,
            mutation: None,
            all_passed: true,
            criteria: vec![],
        };
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(v["all_passed"], true);
    }
}
