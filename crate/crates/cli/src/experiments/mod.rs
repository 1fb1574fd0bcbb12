//! Experiment drivers behind the CLI subcommands. Each driver returns a
//! typed outcome plus a [`Report`](crate::report::Report) ready to write.

mod consistency;
mod converge;
mod pde_run;
mod simulate;
mod stability;
mod validate;

pub use consistency::{run_consistency, ConsistencyOutcome};
pub use converge::{run_converge, run_converge_with, ConvergeOutcome, ReferenceKind};
pub use pde_run::{run_pde, PdeOutcome};
pub use simulate::{run_simulate, SimulateOutcome};
pub use stability::{run_stability, StabilityOutcome};
pub use validate::{run_validate, ValidateOutcome};

use crate::config::Config;
use crate::{CliError, Result};
use mflab::engine::SimConfig;
use mflab::measures::EmpiricalMeasure;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub(crate) fn sim_config(cfg: &Config, seed: u64) -> Result<SimConfig> {
    Ok(SimConfig::new(
        cfg.f64("sim.dt")?,
        cfg.f64("sim.t_final")?,
        cfg.usize_or("sim.record_every", 1)?,
        seed,
    ))
}

/// Number of solver steps between recorded states so the density solver
/// lands exactly on the particle record times.
pub(crate) fn aligned_pde_record(cfg: &Config) -> Result<usize> {
    let interval = cfg.f64("sim.dt")? * cfg.usize_or("sim.record_every", 1)? as f64;
    let pde_dt = cfg.f64("pde.dt")?;
    let steps = (interval / pde_dt).round();
    if steps < 1.0 || (steps * pde_dt - interval).abs() > 1e-9 {
        return Err(CliError::Config(format!(
            "pde.dt = {pde_dt} does not divide the record interval {interval}"
        )));
    }
    Ok(steps as usize)
}

/// Pairs of indices where two recorded time grids coincide (within 1e-9).
pub(crate) fn match_times(a: &[f64], b: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut jb = 0;
    for (ia, ta) in a.iter().enumerate() {
        while jb < b.len() && b[jb] < ta - 1e-9 {
            jb += 1;
        }
        if jb < b.len() && (b[jb] - ta).abs() <= 1e-9 {
            out.push((ia, jb));
        }
    }
    out
}

/// Uniform subsample without replacement, seeded; used when an exact metric
/// would exceed the transport atom cap.
pub(crate) fn subsample(
    em: &EmpiricalMeasure,
    target: usize,
    seed: u64,
) -> EmpiricalMeasure {
    if em.len() <= target {
        return em.clone();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..em.len()).collect();
    for k in 0..target {
        let pick = k + rng.random_range(0..idx.len() - k);
        idx.swap(k, pick);
    }
    let mut chosen: Vec<usize> = idx[..target].to_vec();
    chosen.sort_unstable();
    EmpiricalMeasure::new(chosen.iter().map(|&i| em.agent(i).clone()).collect())
        .expect("nonempty subsample")
}
