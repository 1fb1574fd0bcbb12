//! Empirical mean-field convergence: the distance between the N-agent run
//! and a reference (a larger run, or the macroscopic solution) as N grows.
//!
//! Initial data are nested prefixes of one i.i.d. agent pool per seed, drawn
//! from the configured initial law, so e(N) decreases along the list without
//! extra sampling noise between sizes.

use super::{match_times, sim_config, subsample};
use crate::config::{self, Config};
use crate::report::{cell_f, cell_i, loglog_slope, mean_stderr, Csv, Report};
use crate::svg::{line_chart, Series};
use crate::{CliError, Result};
use mflab::engine::simulate;
use mflab::exec::{map_indexed, ExecMode};
use mflab::measures::EmpiricalMeasure;
use mflab::metrics::{bl_distance, w1_product, TRANSPORT_ATOM_CAP};
use mflab::pde::{lift_to_particles, solve_pde};
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Wasserstein distance against a run with `experiment.reference_n`
    /// agents from the same pool.
    LargestRun,
    /// Bounded-Lipschitz distance of the label marginals against the
    /// macroscopic solution on the configured grid.
    Macroscopic,
}

pub struct ConvergeOutcome {
    pub report: Report,
    /// `(N, seed-averaged max-over-time error, stderr)`.
    pub means: Vec<(usize, f64, f64)>,
    pub slope: f64,
    pub strictly_decreasing: bool,
    pub subsampled: bool,
}

pub fn run_converge(cfg: &Config, seed_base: u64) -> Result<ConvergeOutcome> {
    let reference = match cfg.str_or("experiment.reference", "largest") {
        "largest" => ReferenceKind::LargestRun,
        "pde" => ReferenceKind::Macroscopic,
        other => {
            return Err(CliError::Config(format!(
                "unknown experiment.reference `{other}`"
            )))
        }
    };
    run_converge_with(cfg, seed_base, reference)
}

pub fn run_converge_with(
    cfg: &Config,
    seed_base: u64,
    reference: ReferenceKind,
) -> Result<ConvergeOutcome> {
    let spec = config::build_model(cfg)?;
    let n_list = cfg.usize_list("experiment.n_list")?;
    let seeds = cfg.usize_or("experiment.seeds", 5)?;
    let sub_target = cfg.usize_or("experiment.subsample", 512)?;
    let reference_n = cfg.usize_or("experiment.reference_n", 2 * n_list.last().unwrap())?;
    if reference == ReferenceKind::LargestRun && reference_n <= *n_list.last().unwrap() {
        return Err(CliError::Config(
            "experiment.reference_n must exceed the largest list entry".into(),
        ));
    }
    let grid = config::build_grid(cfg)?;
    let rho0 = config::build_initial_densities(cfg, grid, spec.label_count())?;
    let space = spec.labels().clone();

    // Macroscopic reference, shared across seeds.
    let pde_ref = if reference == ReferenceKind::Macroscopic {
        let t_final = cfg.f64("sim.t_final")?;
        let dt = cfg.f64("pde.dt")?;
        let record = super::aligned_pde_record(cfg)?;
        Some(solve_pde(&spec, &rho0, t_final, dt, record)?)
    } else {
        None
    };

    let mut subsampled = false;
    // (seed, N) -> e; seeds run in parallel, metric evaluation inside.
    let per_seed: Vec<Result<Vec<f64>>> = map_indexed(seeds, ExecMode::default(), |s| {
        let seed = seed_base + s as u64;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pool_n = reference_n.max(*n_list.last().unwrap());
        let pool = lift_to_particles(&rho0, pool_n, &mut rng)?;
        let sim = sim_config(cfg, seed)?;

        let ref_traj = match reference {
            ReferenceKind::LargestRun => Some(simulate(&spec, &pool.prefix(reference_n), &sim)?),
            ReferenceKind::Macroscopic => None,
        };

        let mut errors = Vec::with_capacity(n_list.len());
        for &n in &n_list {
            let traj = simulate(&spec, &pool.prefix(n), &sim)?;
            let mut worst: f64 = 0.0;
            match (&ref_traj, &pde_ref) {
                (Some(reference_traj), _) => {
                    for (k, snap) in traj.snapshots.iter().enumerate() {
                        let other = &reference_traj.snapshots[k];
                        let (a, b) = if snap.len() + other.len() > TRANSPORT_ATOM_CAP {
                            (
                                cap_measure(snap, sub_target, seed ^ (k as u64) << 8),
                                cap_measure(other, sub_target, seed ^ (k as u64) << 8 ^ 1),
                            )
                        } else {
                            (snap.clone(), other.clone())
                        };
                        worst = worst.max(w1_product(&space, &a, &b)?);
                    }
                }
                (None, Some(pde)) => {
                    for (ip, id) in match_times(&traj.times, &pde.times) {
                        let snap = &traj.snapshots[ip];
                        let rho = &pde.snapshots[id];
                        for h in 0..spec.label_count() {
                            let d = bl_distance(
                                &snap.label_marginal(h),
                                &rho.to_spatial_measure(h),
                            )?;
                            worst = worst.max(d);
                        }
                    }
                }
                _ => unreachable!("one reference is always built"),
            }
            errors.push(worst);
        }
        Ok(errors)
    });

    let mut by_n: Vec<Vec<f64>> = vec![Vec::new(); n_list.len()];
    let mut csv = Csv::new(&["n", "seed", "error"]);
    for (s, res) in per_seed.into_iter().enumerate() {
        let errors = res?;
        for (i, e) in errors.iter().enumerate() {
            csv.row(vec![
                cell_i(n_list[i]),
                cell_i(seed_base as usize + s),
                cell_f(*e),
            ]);
            by_n[i].push(*e);
        }
    }
    // Subsampling only kicks in past the cap; record whether it ever did.
    if reference == ReferenceKind::LargestRun
        && n_list.last().unwrap() + reference_n > TRANSPORT_ATOM_CAP
    {
        subsampled = true;
    }

    let mut means = Vec::new();
    let mut summary_csv = Csv::new(&["n", "mean_error", "stderr"]);
    for (i, samples) in by_n.iter().enumerate() {
        let (mean, stderr) = mean_stderr(samples);
        means.push((n_list[i], mean, stderr));
        summary_csv.row(vec![cell_i(n_list[i]), cell_f(mean), cell_f(stderr)]);
    }
    let slope = loglog_slope(
        &means
            .iter()
            .map(|(n, m, _)| (*n as f64, *m))
            .collect::<Vec<_>>(),
    );
    let strictly_decreasing = means.windows(2).all(|w| w[1].1 < w[0].1);

    let svg = line_chart(
        "mean-field convergence",
        "N",
        "max_t distance to reference",
        &[Series {
            label: format!("mean over {seeds} seeds"),
            points: means.iter().map(|(n, m, _)| (*n as f64, *m)).collect(),
        }],
        true,
        true,
    );

    let summary = vec![
        format!(
            "reference: {}",
            match reference {
                ReferenceKind::LargestRun => format!("{reference_n}-agent run"),
                ReferenceKind::Macroscopic => "macroscopic solution".to_string(),
            }
        ),
        format!(
            "seed-averaged errors strictly decreasing: {}",
            if strictly_decreasing { "yes" } else { "NO" }
        ),
        format!("log-log slope: {slope:.3}"),
        format!(
            "subsampled for metric evaluation: {}",
            if subsampled {
                format!("yes (to {sub_target})")
            } else {
                "no".into()
            }
        ),
    ];

    Ok(ConvergeOutcome {
        report: Report {
            csv: csv.render(),
            svg,
            summary,
            ok: strictly_decreasing,
            extra_files: vec![("summary.csv".into(), summary_csv.render())],
        },
        means,
        slope,
        strictly_decreasing,
        subsampled,
    })
}

fn cap_measure(em: &EmpiricalMeasure, target: usize, seed: u64) -> EmpiricalMeasure {
    subsample(em, target, seed)
}
