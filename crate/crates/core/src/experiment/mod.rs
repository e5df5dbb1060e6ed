//! Seed-averaged parameter sweeps on a tabular MDP: configuration, the
//! sweep runner, and CSV / SVG output.

mod output;
mod svg;
mod sweep;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::GapMode;
use crate::mdp::{build_mdp, MdpError, MdpSpec, TabularMdp};

pub use output::{emit_csv, emit_seed_csv, sweep_csv, write_outputs, OutputFiles};
pub use svg::{emit_plot, sweep_svg};
pub use sweep::{run_sweep, SeedOutcome, SweepError, SweepPoint, SweepResult};

/// Name accepted in the `mdp` field for the built-in two-state example.
pub const BUILTIN_MDP: &str = "fig1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("cannot load mdp {path}: {message}")]
    Mdp { path: String, message: String },
}

impl From<MdpError> for ConfigError {
    fn from(e: MdpError) -> Self {
        ConfigError::Mdp {
            path: BUILTIN_MDP.into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Lse,
    Boltzmann,
    Both,
}

impl Algorithm {
    pub fn operators(self) -> &'static [OperatorKind] {
        match self {
            Algorithm::Lse => &[OperatorKind::Lse],
            Algorithm::Boltzmann => &[OperatorKind::Boltzmann],
            Algorithm::Both => &[OperatorKind::Lse, OperatorKind::Boltzmann],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Lse,
    Boltzmann,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Lse => "lse",
            OperatorKind::Boltzmann => "boltzmann",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Beta,
    Alpha,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Alpha => "alpha",
        }
    }
}

/// `iid`: `(s,a)` drawn from the uniform distribution each step.
/// `paper`: 50-step episodes under the softmax-of-Q behaviour policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[default]
    Iid,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Value of the parameter that is not swept.
    pub fixed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"fig1"` or a path to an MDP TOML file, resolved against the config
    /// file's directory.
    pub mdp: String,
    pub algorithm: Algorithm,
    pub n_seeds: usize,
    pub n_steps: usize,
    pub base_seed: u64,
    pub protocol: Protocol,
    pub episode_length: usize,
    pub out_dir: PathBuf,
    pub bound_mode: GapMode,
    /// Also run the comparison systems alongside every learner run.
    pub co_simulate: bool,
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig2Lse,
    Fig2Boltz,
    Fig3Lse,
    Fig3Boltz,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Fig2Lse,
        Preset::Fig2Boltz,
        Preset::Fig3Lse,
        Preset::Fig3Boltz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2Lse => "fig2-lse",
            Preset::Fig2Boltz => "fig2-boltz",
            Preset::Fig3Lse => "fig3-lse",
            Preset::Fig3Boltz => "fig3-boltz",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn config(self) -> ExperimentConfig {
        let (algorithm, sweep) = match self {
            Preset::Fig2Lse => (Algorithm::Lse, beta_sweep()),
            Preset::Fig2Boltz => (Algorithm::Boltzmann, beta_sweep()),
            Preset::Fig3Lse => (Algorithm::Lse, alpha_sweep()),
            Preset::Fig3Boltz => (Algorithm::Boltzmann, alpha_sweep()),
        };
        ExperimentConfig {
            algorithm,
            sweep,
            out_dir: PathBuf::from(format!("out/{}", self.name())),
            ..ExperimentConfig::default()
        }
    }
}

fn beta_sweep() -> SweepSpec {
    SweepSpec {
        axis: SweepAxis::Beta,
        values: vec![10.0, 100.0, 1000.0, 10000.0],
        fixed: 0.001,
    }
}

fn alpha_sweep() -> SweepSpec {
    SweepSpec {
        axis: SweepAxis::Alpha,
        values: vec![1e-4, 1e-3, 1e-2],
        fixed: 1000.0,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mdp: BUILTIN_MDP.into(),
            algorithm: Algorithm::Both,
            n_seeds: 10,
            n_steps: 100_000,
            base_seed: 0,
            protocol: Protocol::Iid,
            episode_length: 50,
            out_dir: PathBuf::from("out"),
            bound_mode: GapMode::MeasuredGap,
            co_simulate: false,
            sweep: beta_sweep(),
        }
    }
}

/// Every field optional; overlaid on a base config.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    mdp: Option<String>,
    algorithm: Option<Algorithm>,
    n_seeds: Option<usize>,
    n_steps: Option<usize>,
    base_seed: Option<u64>,
    protocol: Option<Protocol>,
    episode_length: Option<usize>,
    out_dir: Option<PathBuf>,
    bound_mode: Option<GapMode>,
    co_simulate: Option<bool>,
    sweep: Option<PartialSweep>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSweep {
    axis: Option<SweepAxis>,
    values: Option<Vec<f64>>,
    fixed: Option<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a TOML config on top of `preset` (or the built-in defaults) and
/// validates the result.
pub fn parse_config(text: &str, preset: Option<Preset>) -> Result<ExperimentConfig, ConfigError> {
    let partial: PartialConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    let mut cfg = preset.map(Preset::config).unwrap_or_default();
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = partial.$field { cfg.$field = v; })*
        };
    }
    overlay!(
        mdp,
        algorithm,
        n_seeds,
        n_steps,
        base_seed,
        protocol,
        episode_length,
        out_dir,
        bound_mode,
        co_simulate
    );
    if let Some(sweep) = partial.sweep {
        if let Some(axis) = sweep.axis {
            if axis != cfg.sweep.axis && (sweep.values.is_none() || sweep.fixed.is_none()) {
                return Err(ConfigError::Validation(format!(
                    "sweep.axis changed to {} but sweep.values and sweep.fixed were not both given",
                    axis.name()
                )));
            }
            cfg.sweep.axis = axis;
        }
        if let Some(values) = sweep.values {
            cfg.sweep.values = values;
        }
        if let Some(fixed) = sweep.fixed {
            cfg.sweep.fixed = fixed;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// `(alpha, beta)` at one sweep value.
    pub fn point(&self, value: f64) -> (f64, f64) {
        match self.sweep.axis {
            SweepAxis::Beta => (self.sweep.fixed, value),
            SweepAxis::Alpha => (value, self.sweep.fixed),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Validation(msg));
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1".into());
        }
        if self.sweep.values.is_empty() {
            return bad("sweep.values is empty".into());
        }
        if let Some(v) = self
            .sweep
            .values
            .iter()
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            return bad(format!("sweep value {v} is not positive"));
        }
        if !(self.sweep.fixed.is_finite() && self.sweep.fixed > 0.0) {
            return bad(format!(
                "sweep.fixed = {} is not positive",
                self.sweep.fixed
            ));
        }
        for &v in &self.sweep.values {
            let (alpha, _) = self.point(v);
            if alpha >= 1.0 {
                return bad(format!("step size {alpha} must lie in (0, 1)"));
            }
        }
        if self.protocol == Protocol::Paper && self.episode_length == 0 {
            return bad("episode_length must be at least 1".into());
        }
        if self.protocol == Protocol::Paper && self.co_simulate {
            return bad("co_simulate requires protocol = \"iid\"".into());
        }
        Ok(())
    }

    /// Loads the MDP named by `mdp`, resolving relative paths against
    /// `base_dir`.
    pub fn load_mdp(&self, base_dir: &Path) -> Result<TabularMdp, ConfigError> {
        let spec = if self.mdp == BUILTIN_MDP {
            MdpSpec::two_state_example()
        } else {
            let path = base_dir.join(&self.mdp);
            let mdp_err = |message: String| ConfigError::Mdp {
                path: path.display().to_string(),
                message,
            };
            let text = std::fs::read_to_string(&path).map_err(|e| mdp_err(e.to_string()))?;
            MdpSpec::from_toml(&text).map_err(|e| mdp_err(e.to_string()))?
        };
        build_mdp(&spec, true).map_err(|e| ConfigError::Mdp {
            path: self.mdp.clone(),
            message: e.to_string(),
        })
    }
}
