//! Configuration, check registry, reports and sensitivity analysis behind the
//! `errcalc` binary.

pub mod checks;
pub mod config;
pub mod report;
pub mod sens;

use std::time::Instant;

use rayon::prelude::*;

pub use checks::{registry, CheckGroup, SUITES};
pub use config::{parse_config, parse_config_with_seed, RunConfig};
pub use report::{without_timing, CheckReport, Provenance, Rule, Verdict};
pub use sens::{run_sensitivity, SensitivityReport};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, name_hash};

pub fn run_suite(cfg: &RunConfig, suite: &str) -> Result<Vec<CheckReport>> {
    run_suite_with_workers(cfg, suite, rayon::current_num_threads())
}

/// Validates `cfg` before any check runs. Reports are sorted by name; each
/// group's seed depends only on the run seed and the group name, so the
/// output does not depend on `workers`.
pub fn run_suite_with_workers(cfg: &RunConfig, suite: &str, workers: usize) -> Result<Vec<CheckReport>> {
    if !SUITES.contains(&suite) {
        return Err(Error::Validation(vec![format!("unknown suite '{suite}', expected one of {}", SUITES.join(", "))]));
    }
    cfg.validate()?;
    let groups: Vec<CheckGroup> = registry().into_iter().filter(|g| suite == "all" || g.suite == suite).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Validation(vec![format!("thread pool: {e}")]))?;
    let mut reports: Vec<CheckReport> = pool.install(|| {
        groups
            .par_iter()
            .flat_map_iter(|g| {
                let start = Instant::now();
                let seed = derive_seed(cfg.seed, name_hash(g.name));
                let mut out = (g.run)(cfg, g.name, seed).unwrap_or_else(|e| vec![CheckReport::failed(g.name, &e)]);
                let elapsed = start.elapsed().as_secs_f64();
                for r in &mut out {
                    r.wall_time = elapsed;
                }
                out
            })
            .collect()
    });
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(reports)
}
