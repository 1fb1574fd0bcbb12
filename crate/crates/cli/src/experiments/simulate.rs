//! Plain particle run: integrate, export snapshots, check the support bound
//! against the analytic constants.

use super::sim_config;
use crate::config::{self, Config, ModelKind};
use crate::report::{cell_f, Csv, Report};
use crate::svg::{line_chart, Series};
use crate::Result;
use mflab::engine::{self, init, support_bound_check, Trajectory};
use mflab::measures::EmpiricalMeasure;
use mflab::pde::lift_to_particles;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

pub struct SimulateOutcome {
    pub report: Report,
    pub trajectory: Trajectory,
    pub support_ok: bool,
}

/// Initial agents for a finite-label model: sampled from the configured
/// per-label densities with deterministically assigned label vectors.
pub(crate) fn lifted_initial(
    cfg: &Config,
    h: usize,
    n: usize,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    let grid = config::build_grid(cfg)?;
    let rho0 = config::build_initial_densities(cfg, grid, h)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(lift_to_particles(&rho0, n, &mut rng)?)
}

fn game_initial(cfg: &Config, nodes: usize, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    use mflab::measures::{AgentState, SimplexVector};
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dim = cfg.usize_or("model.dim", 1)?;
    let sigma = cfg.f64_or("init.position.sigma", 1.0)?;
    let trunc = cfg.f64_or("init.position.truncation", 3.0 * sigma)?;
    let profile = cfg.str_or("init.game_label", "uniform").to_string();
    let lambda = match profile.as_str() {
        "uniform" => SimplexVector::uniform(nodes),
        "ramp" => {
            // Mass increasing linearly in the label coordinate.
            let raw: Vec<f64> = (0..nodes)
                .map(|m| 1.0 + (m as f64 + 0.5) / nodes as f64)
                .collect();
            let s: f64 = raw.iter().sum();
            SimplexVector::new(raw.iter().map(|v| v / s).collect())?
        }
        other => {
            return Err(crate::CliError::Config(format!(
                "unknown init.game_label `{other}`"
            )))
        }
    };
    let mut agents = Vec::with_capacity(n);
    for _ in 0..n {
        let x = loop {
            let v: Vec<f64> = (0..dim)
                .map(|_| init::standard_normal(&mut rng) * sigma)
                .collect();
            if v.iter().map(|c| c * c).sum::<f64>().sqrt() <= trunc {
                break v;
            }
        };
        agents.push(AgentState::new(x, lambda.clone())?);
    }
    Ok(EmpiricalMeasure::new(agents)?)
}

pub fn run_simulate(cfg: &Config, seed: u64) -> Result<SimulateOutcome> {
    let n = cfg.usize("sim.n")?;
    let sim = sim_config(cfg, seed)?;

    let (trajectory, constants) = match config::model_kind(cfg)? {
        ModelKind::Finite => {
            let spec = config::build_model(cfg)?;
            let p0 = lifted_initial(cfg, spec.label_count(), n, seed)?;
            let traj = engine::simulate(&spec, &p0, &sim)?;
            let m = spec.sublinearity_constant();
            (traj, Some((m, spec.uniformization_bound())))
        }
        ModelKind::Game => {
            let gm = config::build_game(cfg)?;
            let p0 = game_initial(cfg, gm.node_count(), n, seed)?;
            let traj = engine::simulate(&gm, &p0, &sim)?;
            (traj, None)
        }
    };

    // Support bound against the analytic constants (finite models only; the
    // game families have no closed-form constants exposed).
    let (support_ok, support_rows) = match constants {
        Some((m, _)) => {
            let r0 = trajectory.monitors[0].max_state_norm;
            let rep = support_bound_check(&trajectory, r0, m);
            (rep.ok, rep.rows)
        }
        None => (true, Vec::new()),
    };

    let mut csv = Csv::new(&["t", "max_state_norm", "first_moment", "support_bound"]);
    for (k, mon) in trajectory.monitors.iter().enumerate() {
        let bound = support_rows.get(k).map_or(f64::NAN, |r| r.bound);
        csv.row(vec![
            cell_f(mon.t),
            cell_f(mon.max_state_norm),
            cell_f(mon.first_moment),
            cell_f(bound),
        ]);
    }

    let mut extra_files = Vec::new();
    let mut listing = String::from("file,t,max_state_norm,first_moment\n");
    for (k, (snap, mon)) in trajectory
        .snapshots
        .iter()
        .zip(&trajectory.monitors)
        .enumerate()
    {
        let name = format!("snapshot_{k:04}.csv");
        listing.push_str(&format!(
            "{name},{},{},{}\n",
            mflab::fmt_f64(mon.t),
            mflab::fmt_f64(mon.max_state_norm),
            mflab::fmt_f64(mon.first_moment)
        ));
        extra_files.push((name, snap.to_csv()));
    }
    extra_files.push(("snapshots.csv".into(), listing));

    let svg = line_chart(
        "state monitors",
        "t",
        "value",
        &[
            Series {
                label: "max state norm".into(),
                points: trajectory
                    .monitors
                    .iter()
                    .map(|m| (m.t, m.max_state_norm))
                    .collect(),
            },
            Series {
                label: "first moment".into(),
                points: trajectory
                    .monitors
                    .iter()
                    .map(|m| (m.t, m.first_moment))
                    .collect(),
            },
        ],
        false,
        false,
    );

    let mut summary = vec![format!(
        "simulated {} agents over {} recorded states",
        n,
        trajectory.snapshots.len()
    )];
    if !support_rows.is_empty() {
        summary.push(format!(
            "support bound check: {} (min margin {:.3e})",
            if support_ok { "pass" } else { "VIOLATED" },
            support_rows
                .iter()
                .map(|r| r.margin)
                .fold(f64::INFINITY, f64::min)
        ));
    }
    summary.push(format!(
        "min pre-clamp label entry {:.3e}, max simplex sum deviation {:.3e}",
        trajectory.stats.min_lambda_pre_clamp, trajectory.stats.max_sum_deviation
    ));
    // Accuracy (not stability) degrades for stiff label switching; warn only.
    if trajectory.stats.max_dt_exit_rate > 10.0 {
        summary.push(format!(
            "warning: dt * max exit rate reached {:.2}; label dynamics are under-resolved in time",
            trajectory.stats.max_dt_exit_rate
        ));
    }

    Ok(SimulateOutcome {
        report: Report {
            csv: csv.render(),
            svg,
            summary,
            ok: support_ok,
            extra_files,
        },
        trajectory,
        support_ok,
    })
}
