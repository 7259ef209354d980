//! The batch pipeline: validate → scale → solve → synthesize → certify.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use stgame_core::hamiltonian::{select_scaling, AdverseGrid, Rescaling};
use stgame_core::model::{validate_assumptions, AssumptionReport, BoxDomain, GameModel};
use stgame_core::oracle::bs_call;
use stgame_core::pde::{
    cfl_grid, check_cfl, classical_supersolution, constant_subsolution, g_sup_norm, residual, solve_hjb_with_report, trust_region, Grid, GridFn,
    ResidualReport, SolveReport,
};
use stgame_core::sim::{
    certify_target, check_dpp1, check_dpp2, check_subsolution_statistically, check_supersolution_statistically, default_slack_tol, AdversaryPolicy,
    CertReport, McConfig, SearchReport, StatOptions,
};
use stgame_core::strategy::{synthesize, StopFamily, StopRule, Strategy};
use stgame_core::Error;

use crate::config::{AdversarySpec, JobKind, JobSpec, OracleSpec, RunConfig, StopSpec, StrategySpec, SurfaceSpec};

/// Largest number of time slices written to the surface artifact.
pub const SURFACE_ARTIFACT_SLICES: usize = 200;

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> PipelineResult<T>;
}

impl<T> Stage<T> for stgame_core::Result<T> {
    fn stage(self, stage: &'static str) -> PipelineResult<T> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

/// One declared acceptance threshold and its measured value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdCheck {
    pub name: String,
    pub measured: Option<f64>,
    pub comparison: &'static str,
    pub threshold: f64,
    pub passed: bool,
}

impl ThresholdCheck {
    pub fn at_least(name: impl Into<String>, measured: Option<f64>, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            comparison: ">=",
            threshold,
            passed: measured.is_some_and(|m| m >= threshold),
        }
    }

    pub fn at_most(name: impl Into<String>, measured: Option<f64>, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            comparison: "<=",
            threshold,
            passed: measured.is_some_and(|m| m <= threshold),
        }
    }

    pub fn above(name: impl Into<String>, measured: Option<f64>, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            comparison: ">",
            threshold,
            passed: measured.is_some_and(|m| m > threshold),
        }
    }
}

impl std::fmt::Display for ThresholdCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = self.measured.map_or("undefined".to_string(), |v| format!("{v:.6e}"));
        write!(
            f,
            "{} {}: {m} {} {:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.comparison,
            self.threshold
        )
    }
}

/// Model, adverse grid and optional rescaling shared by every solve of a config.
pub struct Prepared {
    pub model: GameModel<f64>,
    pub a_grid: AdverseGrid<f64>,
    pub rescale: Option<Rescaling<f64>>,
    pub assumptions: AssumptionReport,
}

pub fn prepare(cfg: &RunConfig) -> PipelineResult<Prepared> {
    let model: GameModel<f64> = cfg.model.build().stage("model")?;
    let assumptions = validate_assumptions(&model, cfg.assumption_samples, cfg.seed).stage("validate")?;
    let a_grid = AdverseGrid::new(&model, cfg.solver.a_points).stage("a-grid")?;
    let rescale = if cfg.solver.rescale {
        Some(select_scaling(&model, 4_096, cfg.seed).stage("scale")?)
    } else {
        None
    };
    Ok(Prepared {
        model,
        a_grid,
        rescale,
        assumptions,
    })
}

/// Builds the grid for `n_x` (smallest stable `n_t` when `n_t` is absent)
/// and refuses grids above the node cap.
pub fn build_grid(cfg: &RunConfig, p: &Prepared, n_x: &[usize], n_t: Option<usize>) -> PipelineResult<Grid<f64>> {
    let grid = match n_t {
        Some(n_t) => {
            let g = Grid::new(&p.model.state_box, n_x, n_t, p.model.horizon).stage("grid")?;
            check_cfl(&p.model, &g, &p.a_grid, p.rescale.as_ref(), 1.0).stage("grid")?;
            g
        }
        None => cfl_grid(&p.model, n_x, &p.a_grid, p.rescale.as_ref(), cfg.grid.cfl_safety).stage("grid")?,
    };
    let nodes = grid.total_len() as u64;
    if nodes > cfg.node_cap {
        return Err(PipelineError {
            stage: "grid",
            source: Error::Precondition(format!("grid needs {nodes} nodes, above the configured cap of {}", cfg.node_cap)),
        });
    }
    Ok(grid)
}

pub fn solve(p: &Prepared, grid: &Grid<f64>) -> PipelineResult<(GridFn<f64>, SolveReport)> {
    solve_hjb_with_report(&p.model, grid, p.rescale.as_ref(), &p.a_grid).stage("solve")
}

/// Closed-form reference value `(t, x) ↦ v(t, x)`.
pub fn oracle_value(spec: &OracleSpec, horizon: f64) -> impl Fn(f64, &[f64]) -> f64 + '_ {
    move |t, x| match spec {
        OracleSpec::BlackScholesCall { strike, vol, rate, .. } => {
            let s = x.iter().sum::<f64>() / x.len() as f64;
            bs_call(s, *strike, *vol, horizon - t, *rate)
        }
    }
}

/// Largest deviation from the oracle over non-terminal interior nodes.
pub fn oracle_error(spec: &OracleSpec, surface: &GridFn<f64>) -> f64 {
    let g = &surface.grid;
    let f = oracle_value(spec, g.horizon);
    let mut x = vec![0.0; g.dim()];
    let mut worst = 0.0f64;
    for k in 0..g.n_t {
        let t = g.time(k);
        for node in 0..g.slice_len() {
            if g.is_boundary(node) {
                continue;
            }
            g.node_coords(node, &mut x);
            worst = worst.max((surface.at(k, node) - f(t, &x)).abs());
        }
    }
    worst
}

/// Largest difference between `fine` and `coarse` at the coarse grid's
/// non-terminal interior nodes.
pub fn successive_difference(fine: &GridFn<f64>, coarse: &GridFn<f64>) -> f64 {
    let g = &coarse.grid;
    let mut x = vec![0.0; g.dim()];
    let mut worst = 0.0f64;
    for k in 0..g.n_t {
        let t = g.time(k);
        for node in 0..g.slice_len() {
            if g.is_boundary(node) {
                continue;
            }
            g.node_coords(node, &mut x);
            worst = worst.max((fine.value_at(t, &x).0 - coarse.at(k, node)).abs());
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeError {
    pub value: f64,
    /// `"oracle"` or `"successive_difference"`.
    pub method: &'static str,
}

/// Measured scheme error: against the oracle when one is configured,
/// otherwise the difference to a solve with half the spatial resolution.
pub fn measure_scheme_error(cfg: &RunConfig, p: &Prepared, surface: &GridFn<f64>) -> PipelineResult<SchemeError> {
    if let Some(o) = &cfg.oracle {
        return Ok(SchemeError {
            value: oracle_error(o, surface),
            method: "oracle",
        });
    }
    let n_x: Vec<usize> = surface.grid.n_x.iter().map(|n| (n - 1) / 2 + 1).map(|n| n.max(3)).collect();
    let grid = build_grid(cfg, p, &n_x, None)?;
    let (coarse, _) = solve(p, &grid)?;
    Ok(SchemeError {
        value: successive_difference(surface, &coarse),
        method: "successive_difference",
    })
}

/// Everything a certification job needs from the solve stage.
pub struct Solved {
    pub prepared: Prepared,
    pub grid: Grid<f64>,
    pub surface: Arc<GridFn<f64>>,
    pub strategy: Strategy<f64>,
    pub scheme_error: SchemeError,
    pub g_sup: f64,
}

pub struct JobOutcome {
    pub text: String,
    pub csv: Vec<(String, Vec<u8>)>,
    pub checks: Vec<ThresholdCheck>,
}

fn adversaries(specs: &[AdversarySpec], surface: &Arc<GridFn<f64>>) -> Vec<AdversaryPolicy<f64>> {
    specs
        .iter()
        .map(|s| match s {
            AdversarySpec::Constant { a } => AdversaryPolicy::Constant(a.clone()),
            AdversarySpec::UniformIid { points } => AdversaryPolicy::UniformIid { points_per_axis: *points },
            AdversarySpec::Switching { rate, points } => AdversaryPolicy::Switching {
                rate: *rate,
                points_per_axis: *points,
            },
            AdversarySpec::Greedy { points } => AdversaryPolicy::Greedy {
                surface: surface.clone(),
                points_per_axis: *points,
            },
        })
        .collect()
}

fn stop_family(s: &Solved, job: &JobSpec) -> StopFamily<f64> {
    let p = &s.prepared;
    let specs = job.stop.clone().unwrap_or_else(|| vec![StopSpec::FixedTime { theta: 0.5 * p.model.horizon }]);
    StopFamily::new(
        specs
            .iter()
            .map(|r| match r {
                StopSpec::Never => StopRule::Never,
                StopSpec::FixedTime { theta } => StopRule::FixedTime(*theta),
                StopSpec::ExitBall { center, radius } => StopRule::ExitBall {
                    center: center.clone(),
                    radius: *radius,
                },
                StopSpec::TrustedRegion => StopRule::ExitRegion(trust_region(&p.model, &s.grid, &p.a_grid, job.t0)),
                StopSpec::Deviation { delta } => StopRule::Deviation {
                    surface: s.surface.clone(),
                    delta: delta.unwrap_or(10.0) * s.scheme_error.value,
                },
            })
            .collect(),
    )
}

fn strategies(s: &Solved, job: &JobSpec, tested: &Arc<GridFn<f64>>) -> PipelineResult<Vec<Strategy<f64>>> {
    let specs = job
        .strategies
        .clone()
        .unwrap_or_else(|| vec![StrategySpec::Synthesized, StrategySpec::Constant { u: vec![0.0; s.prepared.model.dim] }]);
    specs
        .iter()
        .map(|spec| {
            let st = match spec {
                StrategySpec::Synthesized => synthesize(tested.clone(), &s.prepared.model).stage("synthesize")?,
                StrategySpec::Constant { u } => Strategy::constant(u.clone()),
            };
            Ok(match job.observation {
                Some(o) => st.with_observation(o),
                None => st,
            })
        })
        .collect()
}

fn tested_surface(s: &Solved, spec: &SurfaceSpec) -> PipelineResult<Arc<GridFn<f64>>> {
    let p = &s.prepared;
    Ok(Arc::new(match spec {
        SurfaceSpec::Solver => return Ok(s.surface.clone()),
        SurfaceSpec::SolverShifted { shift } => s.surface.map(format!("{} + {shift}", s.surface.label), |_, _, v| v + shift),
        SurfaceSpec::ClassicalSupersolution => classical_supersolution(&p.model, &s.grid),
        SurfaceSpec::ConstantSubsolution => constant_subsolution(&p.model, &s.grid, false).stage("constant subsolution")?,
    }))
}

fn csv_bytes(r: &CertReport) -> Vec<u8> {
    let mut buf = Vec::new();
    r.write_csv(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn per_adversary_checks(job: &JobSpec, r: &CertReport) -> Vec<ThresholdCheck> {
    r.per_adversary
        .iter()
        .map(|a| ThresholdCheck::at_least(format!("{}: success fraction vs {}", job.name, a.adversary), a.fraction, job.min_success))
        .collect()
}

fn search_checks(job: &JobSpec, r: &SearchReport) -> Vec<ThresholdCheck> {
    r.per_strategy
        .iter()
        .map(|e| ThresholdCheck::above(format!("{}: Wilson lower bound of best adversary vs {}", job.name, e.strategy), e.wilson.map(|w| w.0), 0.0))
        .collect()
}

pub fn run_job(s: &Solved, job: &JobSpec) -> PipelineResult<JobOutcome> {
    let p = &s.prepared;
    let model = &p.model;
    let mc = McConfig {
        n_paths: job.n_paths,
        n_steps: job.n_steps,
        seed: job.seed,
    };
    let advs = adversaries(&job.adversaries, &s.surface);
    let slack_tol = default_slack_tol(&s.surface, s.g_sup);
    let tol = job.tol.unwrap_or(slack_tol);
    let capital = |x0: &[f64]| s.surface.value_at(job.t0, x0).0 + job.capital_offset * s.scheme_error.value + job.capital_shift;
    let mut head = String::new();
    let _ = writeln!(head, "job `{}` ({:?})", job.name, job.kind);
    let _ = writeln!(head, "scheme error {:.6e} ({}), slack tolerance {:.6e}", s.scheme_error.value, s.scheme_error.method, slack_tol);
    match job.kind {
        JobKind::Target | JobKind::Dpp1 | JobKind::Dpp2 => {
            let x0 = job.x0.as_deref().expect("checked at parse time");
            let y0 = capital(x0);
            let _ = writeln!(head, "start t0={} x0={x0:?} y0={y0:.6}", job.t0);
            let strategy = match job.observation {
                Some(o) => s.strategy.with_observation(o),
                None => s.strategy.clone(),
            };
            match job.kind {
                JobKind::Target => {
                    let r = certify_target(model, &strategy, &advs, job.t0, x0, y0, mc, slack_tol).stage("certify")?;
                    Ok(JobOutcome {
                        text: head + &r.to_text(),
                        csv: vec![(format!("{}.csv", job.name), csv_bytes(&r))],
                        checks: per_adversary_checks(job, &r),
                    })
                }
                JobKind::Dpp1 => {
                    let r = check_dpp1(model, &s.surface, &strategy, &advs, &stop_family(s, job), job.t0, x0, y0, mc, tol).stage("dpp1")?;
                    Ok(JobOutcome {
                        text: head + &r.to_text(),
                        csv: vec![(format!("{}.csv", job.name), csv_bytes(&r))],
                        checks: per_adversary_checks(job, &r),
                    })
                }
                _ => {
                    let list = strategies(s, job, &s.surface)?;
                    let r = check_dpp2(model, &s.surface, &list, &advs, &stop_family(s, job), job.t0, x0, y0, job.margin.unwrap_or(0.0), mc)
                        .stage("dpp2")?;
                    let mut text = head + &r.to_text();
                    for e in &r.per_strategy {
                        text.push_str(&e.report.to_text());
                    }
                    Ok(JobOutcome {
                        text,
                        csv: r
                            .per_strategy
                            .iter()
                            .enumerate()
                            .map(|(i, e)| (format!("{}_strategy{i}.csv", job.name), csv_bytes(&e.report)))
                            .collect(),
                        checks: search_checks(job, &r),
                    })
                }
            }
        }
        JobKind::Supersolution | JobKind::Subsolution => {
            let default_surface = if job.kind == JobKind::Supersolution {
                SurfaceSpec::ClassicalSupersolution
            } else {
                SurfaceSpec::ConstantSubsolution
            };
            let tested = tested_surface(s, job.surface.as_ref().unwrap_or(&default_surface))?;
            let h = model.horizon;
            let region = match &job.region {
                Some(r) => BoxDomain::new(r.iter().map(|v| v[0]).collect(), r.iter().map(|v| v[1]).collect()),
                None => trust_region(model, &s.grid, &p.a_grid, 0.0),
            };
            let opts = StatOptions {
                times: job.start_times.clone().unwrap_or_else(|| vec![0.0, 0.25 * h, 0.5 * h]),
                region,
                margin: job.margin.unwrap_or(5.0 * s.scheme_error.value),
                tol,
            };
            if job.kind == JobKind::Supersolution {
                let r = check_supersolution_statistically(model, &tested, &advs, &opts, mc).stage("supersolution")?;
                Ok(JobOutcome {
                    text: head + &r.to_text(),
                    csv: vec![(format!("{}.csv", job.name), csv_bytes(&r))],
                    checks: per_adversary_checks(job, &r),
                })
            } else {
                let list = strategies(s, job, &tested)?;
                let r = check_subsolution_statistically(model, &tested, &list, &advs, &opts, mc, Some(&s.surface)).stage("subsolution")?;
                Ok(JobOutcome {
                    text: head + &r.to_text(),
                    csv: r
                        .search
                        .per_strategy
                        .iter()
                        .enumerate()
                        .map(|(i, e)| (format!("{}_strategy{i}.csv", job.name), csv_bytes(&e.report)))
                        .collect(),
                    checks: search_checks(job, &r.search),
                })
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes artifacts under one directory and records their hashes.
pub struct ArtifactWriter {
    root: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> PipelineResult<Self> {
        std::fs::create_dir_all(root).map_err(Error::from).stage("output")?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> PipelineResult<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(Error::from).stage("output")?;
        }
        std::fs::write(&path, bytes).map_err(Error::from).stage("output")?;
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: hex(&Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub name: String,
    pub config_sha256: String,
    pub grid: GridSummary,
    pub rescale_c: Option<f64>,
    pub scheme_error: SchemeError,
    pub surface_digest: String,
    pub artifacts: Vec<Artifact>,
    pub thresholds: Vec<ThresholdCheck>,
    pub all_passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSummary {
    pub n_x: Vec<usize>,
    pub n_t: usize,
    pub dt: f64,
    pub mesh_size: f64,
}

#[derive(Debug)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub output_dir: PathBuf,
    /// Human-readable progress log (also printed by the binary).
    pub log: Vec<String>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.manifest.all_passed
    }
}

/// Full pipeline. Artifacts go to `out_dir`; the manifest lists every
/// artifact with its SHA-256 and every threshold with its verdict.
pub fn run(cfg: &RunConfig, config_text: &str, out_dir: &Path) -> PipelineResult<RunSummary> {
    let mut log = Vec::new();
    let clock = Instant::now();
    let mut out = ArtifactWriter::new(out_dir)?;
    let prepared = prepare(cfg)?;
    out.write("assumptions.txt", prepared.assumptions.to_string().as_bytes())?;
    log.push(format!("validated assumptions ({} samples)", cfg.assumption_samples));
    if let Some(r) = &prepared.rescale {
        log.push(format!("rescaling rate c = {}", r.c));
    }

    let grid = build_grid(cfg, &prepared, &cfg.grid.n_x, cfg.grid.n_t)?;
    let (surface, solve_report) = solve(&prepared, &grid)?;
    log.push(format!(
        "solved on n_x={:?}, n_t={} in {:.2}s ({} diagonal-dominance failures)",
        grid.n_x,
        grid.n_t,
        clock.elapsed().as_secs_f64(),
        solve_report.stats.dominance_failures
    ));
    let mut csv = Vec::new();
    surface.resample_time(SURFACE_ARTIFACT_SLICES).stage("output")?.write_csv(&mut csv).stage("output")?;
    out.write("surface.csv", &csv)?;

    let mut thresholds = Vec::new();
    let res: ResidualReport = residual(&prepared.model, &surface, &prepared.a_grid).stage("residual")?;
    out.write("residual.txt", res.to_string().as_bytes())?;
    thresholds.push(ThresholdCheck::at_most("residual: max |R| over checked nodes", Some(res.max_abs), res.tol));

    if let Some(o) = &cfg.oracle {
        let OracleSpec::BlackScholesCall { x0, t0, rel_tol, .. } = o;
        let exact = oracle_value(o, grid.horizon)(*t0, x0);
        let (v, _) = surface.value_at(*t0, x0);
        let rel = (v - exact).abs() / exact.abs().max(f64::MIN_POSITIVE);
        let mut text = String::new();
        let _ = writeln!(text, "solver value at t={t0}, x={x0:?}: {v:.10}");
        let _ = writeln!(text, "oracle value: {exact:.10}");
        let _ = writeln!(text, "relative error: {rel:.6e}");
        out.write("oracle.txt", text.as_bytes())?;
        thresholds.push(ThresholdCheck::at_most("oracle: relative error at the reference point", Some(rel), *rel_tol));
    }

    let scheme_error = measure_scheme_error(cfg, &prepared, &surface)?;
    log.push(format!("scheme error {:.6e} ({})", scheme_error.value, scheme_error.method));

    let surface = Arc::new(surface);
    let strategy = synthesize(surface.clone(), &prepared.model).stage("synthesize")?;
    let mut desc = String::new();
    let _ = writeln!(desc, "strategy: {strategy}");
    let _ = writeln!(desc, "surface: {} (sha256 {})", surface.label, surface.digest());
    let _ = writeln!(desc, "control: u = u_hat(t, X, Ybar, sigma_X(t, X, a) * Dw(t, X), a), clamped into the control box");
    out.write("strategy.txt", desc.as_bytes())?;

    let g_sup = g_sup_norm(&prepared.model, &grid);
    let solved = Solved {
        prepared,
        grid: grid.clone(),
        surface: surface.clone(),
        strategy,
        scheme_error: scheme_error.clone(),
        g_sup,
    };
    for job in &cfg.jobs {
        let t = Instant::now();
        let outcome = run_job(&solved, job)?;
        out.write(&format!("jobs/{}.txt", job.name), outcome.text.as_bytes())?;
        for (name, bytes) in &outcome.csv {
            out.write(&format!("jobs/{name}"), bytes)?;
        }
        log.push(format!("job `{}` finished in {:.2}s", job.name, t.elapsed().as_secs_f64()));
        thresholds.extend(outcome.checks);
    }

    let all_passed = thresholds.iter().all(|c| c.passed);
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_sha256: hex(&Sha256::digest(config_text.as_bytes())),
        grid: GridSummary {
            n_x: grid.n_x.clone(),
            n_t: grid.n_t,
            dt: grid.dt(),
            mesh_size: grid.mesh_size(),
        },
        rescale_c: solved.prepared.rescale.as_ref().map(|r| r.c),
        scheme_error,
        surface_digest: surface.digest(),
        artifacts: out.artifacts.clone(),
        thresholds,
        all_passed,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out_dir.join("manifest.json"), json).map_err(Error::from).stage("output")?;
    Ok(RunSummary {
        manifest,
        output_dir: out_dir.to_path_buf(),
        log,
    })
}
