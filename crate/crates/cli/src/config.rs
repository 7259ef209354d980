//! Run configuration: one TOML file describes one reproducible experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stgame_core::model::{toml_error, ModelSpec};
use stgame_core::strategy::Observation;
use stgame_core::{Error, Result};

fn default_node_cap() -> u64 {
    50_000_000
}

fn default_assumption_samples() -> usize {
    2_000
}

fn default_cfl_safety() -> f64 {
    0.9
}

fn default_min_success() -> f64 {
    0.99
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    /// Seed for assumption sampling and scaling selection.
    pub seed: u64,
    /// Largest `nodes per slice × slices` any solve may allocate.
    #[serde(default = "default_node_cap")]
    pub node_cap: u64,
    #[serde(default = "default_assumption_samples")]
    pub assumption_samples: usize,
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub solver: SolverSpec,
    pub oracle: Option<OracleSpec>,
    #[serde(default)]
    pub jobs: Vec<JobSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per spatial axis.
    pub n_x: Vec<usize>,
    /// Time steps; the smallest stable count is used when absent.
    pub n_t: Option<usize>,
    #[serde(default = "default_cfl_safety")]
    pub cfl_safety: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    /// Points per axis of the adverse-control search grid.
    pub a_points: usize,
    #[serde(default)]
    pub rescale: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    /// Black–Scholes call on the mean of `x` with the given volatility.
    BlackScholesCall {
        strike: f64,
        vol: f64,
        #[serde(default)]
        rate: f64,
        x0: Vec<f64>,
        #[serde(default)]
        t0: f64,
        /// Largest accepted relative error of the solver value at `(t0, x0)`.
        rel_tol: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Target,
    Dpp1,
    Dpp2,
    Supersolution,
    Subsolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    Constant { a: Vec<f64> },
    UniformIid { points: usize },
    Switching { rate: f64, points: usize },
    /// Argmax of the Hamiltonian against the solved surface.
    Greedy { points: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopSpec {
    Never,
    FixedTime { theta: f64 },
    ExitBall { center: Vec<f64>, radius: f64 },
    /// Exit from the region where the truncated surface is trusted.
    TrustedRegion,
    /// `|Ȳ − w| ≥ delta`, with `delta` in units of the scheme error (default 10).
    Deviation { delta: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    Synthesized,
    Constant { u: Vec<f64> },
}

/// Surface a statistical solution check is applied to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    Solver,
    /// Solver output shifted by a constant.
    SolverShifted { shift: f64 },
    ClassicalSupersolution,
    ConstantSubsolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub name: String,
    pub kind: JobKind,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub t0: f64,
    pub x0: Option<Vec<f64>>,
    /// Start capital `v(t0, x0) + capital_offset · scheme_error`.
    #[serde(default)]
    pub capital_offset: f64,
    /// Start capital offset in absolute units, added to the scaled one.
    #[serde(default)]
    pub capital_shift: f64,
    pub adversaries: Vec<AdversarySpec>,
    pub stop: Option<Vec<StopSpec>>,
    pub strategies: Option<Vec<StrategySpec>>,
    #[serde(default = "default_min_success")]
    pub min_success: f64,
    /// Tolerance of pathwise comparisons with the surface; defaults to the slack tolerance.
    pub tol: Option<f64>,
    pub observation: Option<Observation>,
    pub surface: Option<SurfaceSpec>,
    pub start_times: Option<Vec<f64>>,
    pub region: Option<Vec<[f64; 2]>>,
    pub margin: Option<f64>,
}

impl RunConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| toml_error(src, &e))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    fn check(&self) -> Result<()> {
        let d = self.model.dim;
        let field = |f: &str, m: String| Error::Config {
            field: f.to_string(),
            message: m,
        };
        if self.grid.n_x.len() != d {
            return Err(field("grid.n_x", format!("expected {d} entries")));
        }
        if self.solver.a_points == 0 {
            return Err(field("solver.a_points", "must be positive".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, j) in self.jobs.iter().enumerate() {
            if !names.insert(j.name.as_str()) {
                return Err(field(&format!("jobs[{i}].name"), format!("duplicate job name `{}`", j.name)));
            }
            if j.adversaries.is_empty() {
                return Err(field(&format!("jobs[{i}].adversaries"), "at least one adversary is required".into()));
            }
            if let Some(x0) = &j.x0 {
                if x0.len() != d {
                    return Err(field(&format!("jobs[{i}].x0"), format!("expected {d} entries")));
                }
            }
            let needs_x0 = matches!(j.kind, JobKind::Target | JobKind::Dpp1 | JobKind::Dpp2);
            if needs_x0 && j.x0.is_none() {
                return Err(field(&format!("jobs[{i}].x0"), "missing start state".into()));
            }
            if !(0.0..=1.0).contains(&j.min_success) {
                return Err(field(&format!("jobs[{i}].min_success"), "must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Output directory resolved against `base` when relative.
    pub fn output_dir_from(&self, base: &Path) -> PathBuf {
        if self.output_dir.is_absolute() {
            self.output_dir.clone()
        } else {
            base.join(&self.output_dir)
        }
    }
}
