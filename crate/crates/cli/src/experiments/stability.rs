//! Continuous-dependence experiment: perturb the initial positions by
//! epsilon, run both trajectories, and compare the measured Wasserstein
//! distance against the double-exponential envelope with the analytic
//! Lipschitz constant.

use super::{sim_config, simulate::lifted_initial};
use crate::config::{self, Config};
use crate::report::{cell_f, cell_i, Csv, Report};
use crate::svg::{line_chart, Series};
use crate::Result;
use mflab::engine::{stability_experiment, support_bound, StabilityReport};
use mflab::exec::{map_indexed, ExecMode};
use mflab::measures::{AgentState, EmpiricalMeasure};

pub struct StabilityOutcome {
    pub report: Report,
    pub lipschitz: f64,
    pub max_ratio: f64,
    pub ok: bool,
}

pub fn run_stability(cfg: &Config, seed_base: u64) -> Result<StabilityOutcome> {
    let spec = config::build_model(cfg)?;
    let epsilon = cfg.f64_or("experiment.epsilon", 1e-3)?;
    let seeds = cfg.usize_or("experiment.seeds", 5)?;
    let n = cfg.usize("sim.n")?;
    let t_final = cfg.f64("sim.t_final")?;

    let reports: Vec<Result<(u64, StabilityReport)>> =
        map_indexed(seeds, ExecMode::default(), |s| {
            let seed = seed_base + s as u64;
            let p0 = lifted_initial(cfg, spec.label_count(), n, seed)?;
            let shifted = EmpiricalMeasure::new(
                p0.agents()
                    .iter()
                    .map(|a| {
                        let mut x = a.x.clone();
                        x[0] += epsilon;
                        AgentState::new(x, a.lambda.clone())
                    })
                    .collect::<mflab::Result<_>>()?,
            )?;
            let sim = sim_config(cfg, seed)?;
            // Both runs live in the ball the support bound guarantees; the
            // Lipschitz constant is evaluated there.
            let r0 = p0
                .agents()
                .iter()
                .map(|a| mflab::metrics::state_norm(spec.labels(), a))
                .collect::<mflab::Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0f64, f64::max)
                + epsilon;
            let radius = support_bound(r0, spec.sublinearity_constant(), t_final);
            let lipschitz = spec.lipschitz_constant(radius);
            let rep = stability_experiment(&spec, &p0, &shifted, &sim, lipschitz)?;
            Ok((seed, rep))
        });

    let mut csv = Csv::new(&["seed", "t", "w1", "envelope", "ratio"]);
    let mut ok = true;
    let mut max_ratio: f64 = 0.0;
    let mut lipschitz = 0.0;
    let mut measured_series = Vec::new();
    let mut envelope_series = Vec::new();
    for rep in reports {
        let (seed, rep) = rep?;
        ok &= rep.ok;
        lipschitz = rep.lipschitz;
        for row in &rep.rows {
            max_ratio = max_ratio.max(row.ratio);
            csv.row(vec![
                cell_i(seed as usize),
                cell_f(row.t),
                cell_f(row.w1),
                cell_f(row.envelope),
                cell_f(row.ratio),
            ]);
        }
        if measured_series.is_empty() {
            measured_series = rep.rows.iter().map(|r| (r.t, r.w1)).collect();
            envelope_series = rep
                .rows
                .iter()
                .filter(|r| r.envelope.is_finite())
                .map(|r| (r.t, r.envelope))
                .collect();
        }
    }

    let svg = line_chart(
        "stability envelope",
        "t",
        "W1",
        &[
            Series {
                label: "measured".into(),
                points: measured_series,
            },
            Series {
                label: "envelope".into(),
                points: envelope_series,
            },
        ],
        false,
        true,
    );

    let summary = vec![
        format!("perturbation epsilon = {epsilon:.3e}, {seeds} seeds"),
        format!("Lipschitz constant used: {lipschitz:.6}"),
        format!("max measured/envelope ratio: {max_ratio:.3e}"),
        format!(
            "measured distance within envelope (5% slack): {}",
            if ok { "yes" } else { "NO" }
        ),
    ];

    Ok(StabilityOutcome {
        report: Report {
            csv: csv.render(),
            svg,
            summary,
            ok,
            extra_files: Vec::new(),
        },
        lipschitz,
        max_ratio,
        ok,
    })
}
