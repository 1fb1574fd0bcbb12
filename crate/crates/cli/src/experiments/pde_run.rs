//! Plain density run: solve the macroscopic system, export snapshots, check
//! conservation, positivity, and the domain-support guard.

use crate::config::{self, Config};
use crate::report::{cell_f, Csv, Report};
use crate::svg::{line_chart, Series};
use crate::Result;
use mflab::pde::{solve_pde, PdeTrajectory};

pub struct PdeOutcome {
    pub report: Report,
    pub trajectory: PdeTrajectory,
    pub max_mass_error: f64,
    pub min_value: f64,
    pub ok: bool,
}

pub fn run_pde(cfg: &Config) -> Result<PdeOutcome> {
    let spec = config::build_model(cfg)?;
    let grid = config::build_grid(cfg)?;
    let rho0 = config::build_initial_densities(cfg, grid, spec.label_count())?;
    let t_final = cfg.f64("pde.T")?;
    let dt = cfg.f64("pde.dt")?;
    let record_every = super::aligned_pde_record(cfg).unwrap_or(1);

    let trajectory = solve_pde(&spec, &rho0, t_final, dt, record_every)?;

    let mut csv = Csv::new(&["t", "total_mass", "mass_error", "min_value"]);
    let mut max_mass_error: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    let mut mass_series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); spec.label_count()];
    for (t, snap) in trajectory.times.iter().zip(&trajectory.snapshots) {
        let mass = snap.total_mass();
        let err = (mass - 1.0).abs();
        max_mass_error = max_mass_error.max(err);
        min_value = min_value.min(snap.min_value());
        csv.row(vec![
            cell_f(*t),
            cell_f(mass),
            cell_f(err),
            cell_f(snap.min_value()),
        ]);
        for (h, series) in mass_series.iter_mut().enumerate() {
            series.push((*t, snap.species_mass(h)));
        }
    }

    let mut extra_files = Vec::new();
    for (k, snap) in trajectory.snapshots.iter().enumerate() {
        extra_files.push((format!("density_{k:04}.csv"), snap.to_csv()));
    }

    let svg = line_chart(
        "species masses",
        "t",
        "mass",
        &mass_series
            .into_iter()
            .enumerate()
            .map(|(h, points)| Series {
                label: format!("label {}", h + 1),
                points,
            })
            .collect::<Vec<_>>(),
        false,
        false,
    );

    let ok = max_mass_error <= mflab::pde::MASS_TOL && min_value >= 0.0 && !trajectory.edge_flagged;
    let summary = vec![
        format!("max |total mass - 1| = {max_mass_error:.3e}"),
        format!("min cell value = {min_value:.3e}"),
        format!(
            "support stayed clear of the boundary: {}",
            if trajectory.edge_flagged { "NO (run invalid)" } else { "yes" }
        ),
    ];

    Ok(PdeOutcome {
        report: Report {
            csv: csv.render(),
            svg,
            summary,
            ok,
            extra_files,
        },
        trajectory,
        max_mass_error,
        min_value,
        ok,
    })
}
