//! Monte-Carlo spot check of the structural assumptions behind the model
//! closure: empirical Lipschitz and sublinearity quotients against the
//! analytic constants. Report-only: flagged rows never fail the run.

use crate::config::{self, Config};
use crate::report::{cell_f, cell_s, Csv, Report};
use crate::svg::{line_chart, Series};
use crate::Result;
use mflab::kernels::validate_assumptions;

pub struct ValidateOutcome {
    pub report: Report,
    pub violations: usize,
}

pub fn run_validate(cfg: &Config, seed: u64) -> Result<ValidateOutcome> {
    let spec = config::build_model(cfg)?;
    let radius = cfg.f64_or("experiment.validate_radius", 2.0)?;
    let samples = cfg.usize_or("experiment.validate_samples", 200)?;
    let rep = validate_assumptions(&spec, radius, samples, seed)?;

    let mut csv = Csv::new(&["check", "analytic", "empirical", "ok"]);
    let mut analytic_pts = Vec::new();
    let mut empirical_pts = Vec::new();
    for (i, c) in rep.checks.iter().enumerate() {
        csv.row(vec![
            cell_s(c.name.clone()),
            cell_f(c.analytic),
            cell_f(c.empirical),
            cell_s(if c.ok { "yes" } else { "NO" }),
        ]);
        analytic_pts.push((i as f64, c.analytic));
        empirical_pts.push((i as f64, c.empirical));
    }

    let svg = line_chart(
        "empirical vs analytic constants",
        "check index",
        "constant",
        &[
            Series {
                label: "analytic bound".into(),
                points: analytic_pts,
            },
            Series {
                label: "empirical quotient".into(),
                points: empirical_pts,
            },
        ],
        false,
        false,
    );

    let summary = vec![
        format!("radius {radius}, {samples} samples per check"),
        format!(
            "{} checks, {} flagged",
            rep.checks.len(),
            rep.violations
        ),
    ];

    Ok(ValidateOutcome {
        report: Report {
            csv: csv.render(),
            svg,
            summary,
            // Report-only command.
            ok: true,
            extra_files: Vec::new(),
        },
        violations: rep.violations,
    })
}
