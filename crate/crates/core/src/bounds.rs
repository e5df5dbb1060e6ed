//! Closed-form finite-time error bounds and the constants they are built
//! from.
//!
//! Powers of the decay rate are evaluated in log space so that `ρ^k` and
//! `k ρ^(k-1)` remain accurate (and do not underflow prematurely) for `k`
//! up to `1e7` with `ρ` within `1e-5` of one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{ModelMatrices, QTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("invalid bound parameter: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// How the initial-gap norms are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMode {
    /// Norms of the actual `Q_0 − Q*`.
    #[default]
    MeasuredGap,
    /// Worst case under unit-bounded `Q_0`: `‖·‖₂ ≤ |S×A|^(1/2)·2/(1−γ)`,
    /// `‖·‖∞ ≤ 2/(1−γ)`.
    PaperLoose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// `|S×A|`
    pub n_pairs: usize,
    /// `|A|`
    pub n_actions: usize,
    /// `‖Q_0^L − Q*‖₂`
    #[serde(default)]
    pub q0_gap_l2: f64,
    /// `‖Q_0^L − Q*‖∞`
    #[serde(default)]
    pub q0_gap_linf: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<(), BoundsError> {
        let bad = |msg: String| Err(BoundsError::InvalidParams(msg));
        let finite = [
            self.alpha,
            self.beta,
            self.gamma,
            self.d_min,
            self.d_max,
            self.q0_gap_l2,
            self.q0_gap_linf,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite value".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} not in (0, 1)", self.alpha));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta = {} not positive", self.beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} not in [0, 1)", self.gamma));
        }
        if !(self.d_min > 0.0 && self.d_min <= self.d_max && self.d_max <= 1.0) {
            return bad(format!(
                "need 0 < d_min <= d_max <= 1, got d_min = {}, d_max = {}",
                self.d_min, self.d_max
            ));
        }
        if self.n_pairs == 0 || self.n_actions == 0 || !self.n_pairs.is_multiple_of(self.n_actions)
        {
            return bad(format!(
                "n_pairs = {} must be a positive multiple of n_actions = {}",
                self.n_pairs, self.n_actions
            ));
        }
        if self.q0_gap_l2 < 0.0 || self.q0_gap_linf < 0.0 {
            return bad("negative initial gap".into());
        }
        Ok(())
    }

    /// Parameters for a concrete run: `d_min`/`d_max` from `mm`, gaps from
    /// `q0` and `q_star` according to `mode`.
    pub fn for_run(
        alpha: f64,
        beta: f64,
        gamma: f64,
        mm: &ModelMatrices,
        q0: &QTable,
        q_star: &QTable,
        mode: GapMode,
    ) -> Self {
        let n_pairs = mm.n_pairs();
        let (q0_gap_l2, q0_gap_linf) = match mode {
            GapMode::MeasuredGap => (q0.l2_distance(q_star), q0.linf_distance(q_star)),
            GapMode::PaperLoose => (
                (n_pairs as f64).sqrt() * 2.0 / (1.0 - gamma),
                2.0 / (1.0 - gamma),
            ),
        };
        Self {
            alpha,
            beta,
            gamma,
            d_min: mm.d_min,
            d_max: mm.d_max,
            n_pairs,
            n_actions: mm.n_actions,
            q0_gap_l2,
            q0_gap_linf,
        }
    }

    fn ln_actions(&self) -> f64 {
        (self.n_actions as f64).ln()
    }

    fn sa(&self) -> f64 {
        self.n_pairs as f64
    }

    /// `(ln|A| + β) / β`
    fn sharpness_ratio(&self) -> f64 {
        (self.ln_actions() + self.beta) / self.beta
    }
}

/// `ρ = 1 − α d_min (1 − γ)`
pub fn decay_rate(p: &BoundParams) -> f64 {
    1.0 - p.alpha * p.d_min * (1.0 - p.gamma)
}

fn ln_rho(p: &BoundParams) -> f64 {
    (-p.alpha * p.d_min * (1.0 - p.gamma)).ln_1p()
}

/// `ρ^k`
pub fn rho_pow(p: &BoundParams, k: u64) -> f64 {
    pow_at(ln_rho(p), k)
}

/// `k ρ^(k−1)`, zero at `k = 0`.
pub fn k_rho_pow(p: &BoundParams, k: u64) -> f64 {
    k_pow_at(ln_rho(p), k)
}

fn pow_at(ln_rate: f64, k: u64) -> f64 {
    (k as f64 * ln_rate).exp()
}

fn k_pow_at(ln_rate: f64, k: u64) -> f64 {
    if k == 0 {
        0.0
    } else {
        ((k as f64).ln() + (k - 1) as f64 * ln_rate).exp()
    }
}

/// Terms of a bound split into the part that persists and the parts that
/// decay with `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub constant: f64,
    pub transient: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.constant + self.transient
    }
}

pub fn lse_lower_terms(k: u64, p: &BoundParams) -> BoundTerms {
    lse_lower_terms_at(k, p, ln_rho(p))
}

fn lse_lower_terms_at(k: u64, p: &BoundParams, ln_rate: f64) -> BoundTerms {
    let sa = p.sa();
    BoundTerms {
        constant: 6f64.sqrt() * p.alpha.sqrt() * p.sharpness_ratio() * sa
            / (p.d_min.sqrt() * (1.0 - p.gamma).powf(1.5)),
        transient: sa * p.q0_gap_l2 * pow_at(ln_rate, k),
    }
}

/// Expected 2-norm error of the LSE lower comparison system.
pub fn lse_lower_bound(k: u64, p: &BoundParams) -> f64 {
    lse_lower_terms(k, p).total()
}

pub fn lse_final_terms(k: u64, p: &BoundParams) -> BoundTerms {
    lse_final_terms_at(k, p, ln_rho(p))
}

fn lse_final_terms_at(k: u64, p: &BoundParams, ln_rate: f64) -> BoundTerms {
    let sa = p.sa();
    let one_minus = 1.0 - p.gamma;
    let steady = 3.0 * 6f64.sqrt() * p.alpha.sqrt() * p.d_max * p.sharpness_ratio() * sa
        / (p.d_min.powf(1.5) * one_minus.powf(2.5));
    let bias = p.ln_actions() / (p.beta * p.d_min * one_minus);
    let switching =
        4.0 * p.alpha * p.gamma * p.d_max * sa.powf(1.5) / one_minus * k_pow_at(ln_rate, k);
    let initial = 2.0 * sa.powf(1.5) / one_minus * pow_at(ln_rate, k);
    BoundTerms {
        constant: steady + bias,
        transient: switching + initial,
    }
}

/// Expected ∞-norm error of LSE soft Q-learning after `k` steps.
pub fn lse_final_bound(k: u64, p: &BoundParams) -> f64 {
    lse_final_terms(k, p).total()
}

pub fn boltz_lower_terms(k: u64, p: &BoundParams) -> BoundTerms {
    boltz_lower_terms_at(k, p, ln_rho(p))
}

fn boltz_lower_terms_at(k: u64, p: &BoundParams, ln_rate: f64) -> BoundTerms {
    let root_sa = p.sa().sqrt();
    let one_minus = 1.0 - p.gamma;
    let noise = 6f64.sqrt() * p.alpha.sqrt() * p.sharpness_ratio() * root_sa
        / (p.d_min.sqrt() * one_minus.powf(1.5));
    let bias = p.gamma * p.d_max * p.ln_actions() * root_sa / (p.beta * p.d_min * one_minus);
    BoundTerms {
        constant: noise + bias,
        transient: root_sa * p.q0_gap_l2 * pow_at(ln_rate, k),
    }
}

/// Expected 2-norm error of the Boltzmann lower comparison system.
pub fn boltz_lower_bound(k: u64, p: &BoundParams) -> f64 {
    boltz_lower_terms(k, p).total()
}

pub fn boltz_final_terms(k: u64, p: &BoundParams) -> BoundTerms {
    boltz_final_terms_at(k, p, ln_rho(p))
}

fn boltz_final_terms_at(k: u64, p: &BoundParams, ln_rate: f64) -> BoundTerms {
    let sa = p.sa();
    let root_sa = sa.sqrt();
    let one_minus = 1.0 - p.gamma;
    let switching = 4.0 * p.alpha * p.gamma * p.d_max * sa / one_minus * k_pow_at(ln_rate, k);
    let steady = 3.0 * 6f64.sqrt() * p.alpha.sqrt() * p.d_max * p.sharpness_ratio() * root_sa
        / (p.d_min.powf(1.5) * one_minus.powf(2.5));
    let bias =
        4.0 * p.d_max * p.ln_actions() * root_sa / (p.beta * p.d_min.powi(2) * one_minus.powi(2));
    let initial = 2.0 * sa / one_minus * pow_at(ln_rate, k);
    BoundTerms {
        constant: steady + bias,
        transient: switching + initial,
    }
}

/// Expected ∞-norm error of Boltzmann soft Q-learning after `k` steps.
pub fn boltz_final_bound(k: u64, p: &BoundParams) -> f64 {
    boltz_final_terms(k, p).total()
}

pub fn trace_terms(k: u64, p: &BoundParams) -> BoundTerms {
    trace_terms_at(k, p, ln_rho(p))
}

fn trace_terms_at(k: u64, p: &BoundParams, ln_rate: f64) -> BoundTerms {
    let sa2 = p.sa().powi(2);
    let ratio = p.sharpness_ratio();
    BoundTerms {
        constant: 6.0 * p.alpha * ratio * ratio * sa2 / (p.d_min * (1.0 - p.gamma).powi(3)),
        transient: sa2 * p.q0_gap_l2.powi(2) * pow_at(ln_rate, 2 * k),
    }
}

/// Bound on `tr(X_k)` for the LSE lower system's autocorrelation.
pub fn trace_bound(k: u64, p: &BoundParams) -> f64 {
    trace_terms(k, p).total()
}

/// Bound on `E[wᵀw]`: `6 (ln|A| + β)² / (β² (1−γ)²)`.
pub fn noise_moment_bound(p: &BoundParams) -> f64 {
    let ratio = p.sharpness_ratio();
    6.0 * ratio * ratio / (1.0 - p.gamma).powi(2)
}

/// Bound on every iterate: `(1 + γ ln|A| / β) / (1 − γ)`.
pub fn iterate_bound(p: &BoundParams) -> f64 {
    (1.0 + p.gamma * p.ln_actions() / p.beta) / (1.0 - p.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    LseLower,
    LseFinal,
    BoltzLower,
    BoltzFinal,
    TraceXk,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::LseLower,
        BoundKind::LseFinal,
        BoundKind::BoltzLower,
        BoundKind::BoltzFinal,
        BoundKind::TraceXk,
    ];

    pub fn evaluate(self, k: u64, p: &BoundParams) -> f64 {
        self.terms(k, p).total()
    }

    pub fn terms(self, k: u64, p: &BoundParams) -> BoundTerms {
        self.terms_with_rate(k, p, decay_rate(p))
    }

    /// Same formula with `ρ` supplied by the caller instead of derived from
    /// `p`.
    pub fn terms_with_rate(self, k: u64, p: &BoundParams, rho: f64) -> BoundTerms {
        let ln_rate = if rho == decay_rate(p) {
            ln_rho(p)
        } else {
            rho.ln()
        };
        match self {
            BoundKind::LseLower => lse_lower_terms_at(k, p, ln_rate),
            BoundKind::LseFinal => lse_final_terms_at(k, p, ln_rate),
            BoundKind::BoltzLower => boltz_lower_terms_at(k, p, ln_rate),
            BoundKind::BoltzFinal => boltz_final_terms_at(k, p, ln_rate),
            BoundKind::TraceXk => trace_terms_at(k, p, ln_rate),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::LseLower => "lse-lower",
            BoundKind::LseFinal => "lse-final",
            BoundKind::BoltzLower => "boltz-lower",
            BoundKind::BoltzFinal => "boltz-final",
            BoundKind::TraceXk => "trace-xk",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub values: Vec<(u64, f64)>,
}

pub fn bound_curve(
    kind: BoundKind,
    p: &BoundParams,
    ks: impl IntoIterator<Item = u64>,
) -> Result<BoundCurve, BoundsError> {
    p.validate()?;
    Ok(BoundCurve {
        kind,
        values: ks.into_iter().map(|k| (k, kind.evaluate(k, p))).collect(),
    })
}

impl BoundCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,bound\n");
        for (k, v) in &self.values {
            out.push_str(&format!("{k},{}\n", crate::format::sig17(*v)));
        }
        out
    }
}

/// Applies `X ← A X Aᵀ + α² W_j` for `j = 0..k`, symmetrising each step.
pub fn propagate_autocorrelation(
    x0: &DMatrix<f64>,
    a: &DMatrix<f64>,
    w_seq: &[DMatrix<f64>],
    alpha: f64,
    k: usize,
) -> Result<DMatrix<f64>, BoundsError> {
    let n = x0.nrows();
    let square = |m: &DMatrix<f64>| m.nrows() == n && m.ncols() == n;
    if !square(x0) {
        return Err(BoundsError::DimensionMismatch {
            expected: n,
            got: x0.ncols(),
        });
    }
    if !square(a) {
        return Err(BoundsError::DimensionMismatch {
            expected: n,
            got: a.nrows(),
        });
    }
    if w_seq.len() < k {
        return Err(BoundsError::DimensionMismatch {
            expected: k,
            got: w_seq.len(),
        });
    }
    if let Some(w) = w_seq.iter().find(|w| !square(w)) {
        return Err(BoundsError::DimensionMismatch {
            expected: n,
            got: w.nrows(),
        });
    }
    let mut x = x0.clone();
    for w in &w_seq[..k] {
        let next = a * &x * a.transpose() + alpha * alpha * w;
        x = (&next + next.transpose()) * 0.5;
    }
    Ok(x)
}

/// Direct transcriptions of each formula, written independently of the
/// term-split production path above. Used only to cross-check it.
pub mod naive {
    use super::BoundParams;

    pub fn decay_rate(p: &BoundParams) -> f64 {
        1.0 - p.alpha * p.d_min * (1.0 - p.gamma)
    }

    fn la(p: &BoundParams) -> f64 {
        (p.n_actions as f64).ln()
    }

    pub fn lse_lower_bound(k: u64, p: &BoundParams) -> f64 {
        let sa = p.n_pairs as f64;
        let rho = decay_rate(p);
        (6.0 * p.alpha).sqrt() * (la(p) + p.beta) * sa
            / (p.beta * p.d_min.sqrt() * (1.0 - p.gamma).powf(1.5))
            + sa * p.q0_gap_l2 * rho.powf(k as f64)
    }

    pub fn lse_final_bound(k: u64, p: &BoundParams) -> f64 {
        let sa = p.n_pairs as f64;
        let rho = decay_rate(p);
        let g = 1.0 - p.gamma;
        let kr = if k == 0 {
            0.0
        } else {
            k as f64 * rho.powf(k as f64 - 1.0)
        };
        3.0 * (6.0 * p.alpha).sqrt() * p.d_max * (la(p) + p.beta) * sa
            / (p.beta * (p.d_min * p.d_min * p.d_min).sqrt() * (g * g * g * g * g).sqrt())
            + 4.0 * p.alpha * p.gamma * p.d_max * (sa * sa * sa).sqrt() / g * kr
            + la(p) / (p.beta * p.d_min * g)
            + 2.0 * (sa * sa * sa).sqrt() / g * rho.powf(k as f64)
    }

    pub fn boltz_lower_bound(k: u64, p: &BoundParams) -> f64 {
        let sa = p.n_pairs as f64;
        let rho = decay_rate(p);
        let g = 1.0 - p.gamma;
        sa.sqrt() * p.q0_gap_l2 * rho.powf(k as f64)
            + (6.0 * p.alpha).sqrt() * (la(p) + p.beta) * sa.sqrt()
                / (p.beta * p.d_min.sqrt() * (g * g * g).sqrt())
            + p.gamma * p.d_max * la(p) * sa.sqrt() / (p.beta * p.d_min * g)
    }

    pub fn boltz_final_bound(k: u64, p: &BoundParams) -> f64 {
        let sa = p.n_pairs as f64;
        let rho = decay_rate(p);
        let g = 1.0 - p.gamma;
        let kr = if k == 0 {
            0.0
        } else {
            k as f64 * rho.powf(k as f64 - 1.0)
        };
        4.0 * p.alpha * p.gamma * p.d_max * sa / g * kr
            + 3.0 * (6.0 * p.alpha).sqrt() * p.d_max * (la(p) + p.beta) * sa.sqrt()
                / (p.beta * (p.d_min * p.d_min * p.d_min).sqrt() * (g * g * g * g * g).sqrt())
            + 4.0 * p.d_max * la(p) * sa.sqrt() / (p.beta * p.d_min * p.d_min * g * g)
            + 2.0 * sa / g * rho.powf(k as f64)
    }

    pub fn trace_bound(k: u64, p: &BoundParams) -> f64 {
        let sa = p.n_pairs as f64;
        let rho = decay_rate(p);
        6.0 * p.alpha * (la(p) + p.beta).powi(2) * sa * sa
            / (p.beta * p.beta * p.d_min * (1.0 - p.gamma).powi(3))
            + sa * sa * p.q0_gap_l2 * p.q0_gap_l2 * rho.powf(2.0 * k as f64)
    }

    pub fn noise_moment_bound(p: &BoundParams) -> f64 {
        6.0 * (la(p) + p.beta).powi(2) / (p.beta * p.beta * (1.0 - p.gamma).powi(2))
    }

    pub fn iterate_bound(p: &BoundParams) -> f64 {
        (1.0 / (1.0 - p.gamma)) * (1.0 + p.gamma * la(p) / p.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig1(alpha: f64, beta: f64) -> BoundParams {
        BoundParams {
            alpha,
            beta,
            gamma: 0.9,
            d_min: 0.25,
            d_max: 0.25,
            n_pairs: 4,
            n_actions: 2,
            q0_gap_l2: 0.0,
            q0_gap_linf: 0.0,
        }
    }

    #[test]
    fn decay_rate_examples() {
        let mut p = fig1(0.5, 1.0);
        p.d_min = 0.5;
        p.d_max = 0.5;
        p.gamma = 0.0;
        assert_relative_eq!(decay_rate(&p), 0.75);
        assert_relative_eq!(
            decay_rate(&fig1(0.001, 1.0)),
            0.999975,
            max_relative = 1e-15
        );
        let mut prev = 0.0;
        for gamma in [0.0, 0.3, 0.6, 0.9, 0.99] {
            let mut p = fig1(0.1, 1.0);
            p.gamma = gamma;
            assert!(decay_rate(&p) > prev);
            prev = decay_rate(&p);
        }
    }

    #[test]
    fn lse_lower_constant_at_reference_point() {
        let v = lse_lower_bound(0, &fig1(0.001, 1000.0));
        // √6 · √0.001 · 1000.6931 · 4 / (1000 · 0.5 · 0.1^1.5)
        assert_relative_eq!(v, 19.609_4, max_relative = 1e-4);
    }

    #[test]
    fn lse_lower_scales_second_term_only() {
        let mut p = fig1(0.01, 10.0);
        p.q0_gap_l2 = 1.5;
        let a = lse_lower_terms(100, &p);
        p.q0_gap_l2 = 3.0;
        let b = lse_lower_terms(100, &p);
        assert_eq!(a.constant, b.constant);
        assert_relative_eq!(b.transient, 2.0 * a.transient);
        assert!(lse_lower_bound(1_000_000, &p) - a.constant < 1e-9);
    }

    #[test]
    fn final_bounds_at_step_zero() {
        let p = fig1(0.001, 1000.0);
        assert_eq!(k_rho_pow(&p, 0), 0.0);
        let lse = lse_final_terms(0, &p);
        assert_relative_eq!(lse.transient, 2.0 * 8.0 / 0.1);
        let boltz = boltz_final_terms(0, &p);
        assert_relative_eq!(boltz.transient, 2.0 * 4.0 / 0.1);
    }

    #[test]
    fn sharp_limit_drops_bias_terms() {
        let p = fig1(0.001, 1e12);
        let lse = lse_final_terms(u64::MAX / 2, &p);
        let steady = 3.0 * 6f64.sqrt() * 0.001f64.sqrt() * 0.25 * 4.0
            / (0.25f64.powf(1.5) * 0.1f64.powf(2.5));
        assert_relative_eq!(lse.constant, steady, max_relative = 1e-9);
        let boltz = boltz_final_terms(u64::MAX / 2, &p);
        assert_relative_eq!(boltz.constant, steady / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn single_action_kills_log_terms() {
        let mut p = fig1(0.01, 7.0);
        p.n_actions = 1;
        p.n_pairs = 2;
        let terms = boltz_lower_terms(10, &p);
        let noise = 6f64.sqrt() * 0.1 * 2f64.sqrt() / (0.5 * 0.1f64.powf(1.5));
        assert_relative_eq!(terms.constant, noise, max_relative = 1e-12);
        assert_relative_eq!(iterate_bound(&p), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn boltz_lower_decreasing_in_k() {
        let mut p = fig1(0.01, 10.0);
        p.q0_gap_l2 = 2.0;
        let mut prev = f64::INFINITY;
        for k in [0, 1, 10, 100, 1000, 10_000] {
            let v = boltz_lower_bound(k, &p);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn trace_bound_properties() {
        let mut p = fig1(0.01, 10.0);
        assert_eq!(trace_bound(0, &p), trace_bound(1000, &p));
        let mut doubled = p;
        doubled.alpha = 0.02;
        assert_relative_eq!(
            trace_terms(0, &doubled).constant,
            2.0 * trace_terms(0, &p).constant
        );
        for gap in [0.0, 0.5, 3.0, 20.0] {
            p.q0_gap_l2 = gap;
            for k in [0, 5, 500, 50_000] {
                let lower = lse_lower_bound(k, &p);
                assert!(lower * lower <= 2.0 * trace_bound(k, &p) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn noise_and_iterate_constants() {
        let p = fig1(0.001, 1000.0);
        assert_relative_eq!(noise_moment_bound(&p), 600.832, max_relative = 1e-6);
        assert_relative_eq!(iterate_bound(&p), 10.00624, max_relative = 1e-6);
        let sharp = fig1(0.001, 1e15);
        assert_relative_eq!(noise_moment_bound(&sharp), 600.0, max_relative = 1e-9);
        let mut trivial = fig1(0.1, 1.0);
        trivial.gamma = 0.0;
        trivial.n_actions = 1;
        trivial.n_pairs = 1;
        assert_eq!(noise_moment_bound(&trivial), 6.0);
        assert_eq!(iterate_bound(&trivial), 1.0);
    }

    #[test]
    fn log_space_powers_match_direct_powers() {
        let p = fig1(0.001, 1.0);
        let rho = decay_rate(&p);
        for k in [0u64, 1, 2, 10, 1000, 100_000] {
            assert_relative_eq!(rho_pow(&p, k), rho.powi(k as i32), max_relative = 1e-10);
        }
        // Still positive where a naive product chain would be tiny.
        assert!(rho_pow(&p, 10_000_000) > 0.0);
    }

    #[test]
    fn autocorrelation_examples() {
        let x0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let zeros = vec![DMatrix::zeros(2, 2); 5];
        let eye = DMatrix::identity(2, 2);
        assert_eq!(
            propagate_autocorrelation(&x0, &eye, &zeros, 0.3, 5).unwrap(),
            x0
        );
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]);
        let x1 = propagate_autocorrelation(
            &DMatrix::zeros(2, 2),
            &eye,
            std::slice::from_ref(&w),
            0.3,
            1,
        )
        .unwrap();
        assert!((x1 - 0.09 * w).abs().max() < 1e-15);
        assert!(matches!(
            propagate_autocorrelation(&x0, &DMatrix::identity(3, 3), &zeros, 0.3, 1),
            Err(BoundsError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            propagate_autocorrelation(&x0, &eye, &zeros, 0.3, 6),
            Err(BoundsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn validation() {
        assert!(fig1(0.001, 1000.0).validate().is_ok());
        assert!(fig1(1.5, 1000.0).validate().is_err());
        assert!(fig1(0.1, 0.0).validate().is_err());
        let mut p = fig1(0.1, 1.0);
        p.d_min = 0.0;
        assert!(p.validate().is_err());
        p.d_min = 0.3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn curves_are_finite_and_nonnegative() {
        let mut p = fig1(0.01, 10.0);
        p.q0_gap_l2 = 3.0;
        for kind in BoundKind::ALL {
            let curve = bound_curve(kind, &p, (0..2000).step_by(7)).unwrap();
            assert!(curve.values.iter().all(|(_, v)| v.is_finite() && *v >= 0.0));
            assert!(curve.to_csv().starts_with("k,bound\n"));
        }
    }

    #[test]
    fn transients_vanish() {
        for (alpha, beta, gap) in [(0.01, 10.0, 3.0), (0.001, 1000.0, 5.0), (0.1, 1.0, 1.0)] {
            let mut p = fig1(alpha, beta);
            p.q0_gap_l2 = gap;
            let horizon = 1.0 / (1.0 - decay_rate(&p));
            for kind in BoundKind::ALL {
                // ρ^k-only curves are settled after 20/(1−ρ) steps; the
                // kρ^(k−1) term carries a factor of order 1/(1−ρ) and needs
                // twice that horizon.
                let scale = match kind {
                    BoundKind::LseFinal | BoundKind::BoltzFinal => 40.0,
                    _ => 20.0,
                };
                let k = (scale * horizon).ceil() as u64;
                let terms = kind.terms(k, &p);
                assert!(terms.transient <= 1e-6, "{kind:?}: {}", terms.transient);
            }
        }
    }
}
