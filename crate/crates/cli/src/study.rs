//! Dyadic refinement study of the solver.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use stgame_core::Error;

use crate::config::RunConfig;
use crate::pipeline::{build_grid, oracle_error, prepare, solve, successive_difference, PipelineError, PipelineResult};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyLevel {
    pub n_x: Vec<usize>,
    pub n_t: usize,
    pub seconds: f64,
    /// Largest deviation from the oracle over non-terminal interior nodes.
    pub oracle_error: Option<f64>,
    /// `log2` of the ratio to the previous level's oracle error.
    pub oracle_order: Option<f64>,
    /// Largest difference to the next finer level at this level's nodes.
    pub difference_to_finer: Option<f64>,
    /// `log2` of the ratio to the previous level's difference.
    pub difference_order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyTable {
    pub levels: Vec<StudyLevel>,
}

impl StudyTable {
    /// Observed orders from the oracle when present, else from successive differences.
    pub fn observed_orders(&self) -> Vec<f64> {
        let oracle: Vec<f64> = self.levels.iter().filter_map(|l| l.oracle_order).collect();
        if !oracle.is_empty() {
            return oracle;
        }
        self.levels.iter().filter_map(|l| l.difference_order).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_x,n_t,seconds,oracle_error,oracle_order,difference_to_finer,difference_order\n");
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
        for l in &self.levels {
            let _ = writeln!(
                s,
                "{},{},{:.3},{},{},{},{}",
                l.n_x.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "),
                l.n_t,
                l.seconds,
                f(l.oracle_error),
                f(l.oracle_order),
                f(l.difference_to_finer),
                f(l.difference_order)
            );
        }
        s
    }
}

fn order(coarse: Option<f64>, fine: Option<f64>) -> Option<f64> {
    match (coarse, fine) {
        (Some(c), Some(f)) if c > 0.0 && f > 0.0 => Some((c / f).log2()),
        _ => None,
    }
}

/// Solves at `levels` dyadic refinements ending at the configured grid.
/// Every level's node count is checked against the cap before any solve.
pub fn convergence_study(cfg: &RunConfig, levels: usize) -> PipelineResult<StudyTable> {
    if levels < 2 {
        return Err(PipelineError {
            stage: "study",
            source: Error::Precondition("a convergence study needs at least 2 levels".into()),
        });
    }
    let p = prepare(cfg)?;
    let mut grids = Vec::with_capacity(levels);
    for l in 0..levels {
        let shift = levels - 1 - l;
        let n_x: Vec<usize> = cfg.grid.n_x.iter().map(|&n| ((n - 1) >> shift) + 1).collect();
        if n_x.iter().any(|&n| n < 3) {
            return Err(PipelineError {
                stage: "study",
                source: Error::Precondition(format!("level {l} would have fewer than 3 nodes per axis")),
            });
        }
        grids.push(build_grid(cfg, &p, &n_x, None)?);
    }
    let mut surfaces = Vec::with_capacity(levels);
    let mut out = Vec::with_capacity(levels);
    for g in &grids {
        let t = Instant::now();
        let (w, _) = solve(&p, g)?;
        let oracle = cfg.oracle.as_ref().map(|o| oracle_error(o, &w));
        out.push(StudyLevel {
            n_x: g.n_x.clone(),
            n_t: g.n_t,
            seconds: t.elapsed().as_secs_f64(),
            oracle_error: oracle,
            oracle_order: None,
            difference_to_finer: None,
            difference_order: None,
        });
        surfaces.push(w);
    }
    for l in 0..levels - 1 {
        out[l].difference_to_finer = Some(successive_difference(&surfaces[l + 1], &surfaces[l]));
    }
    for l in 1..levels {
        out[l].oracle_order = order(out[l - 1].oracle_error, out[l].oracle_error);
        out[l].difference_order = order(out[l - 1].difference_to_finer, out[l].difference_to_finer);
    }
    Ok(StudyTable { levels: out })
}
