//! Particle-vs-macroscopic consistency: run both descriptions from the same
//! lifted initial datum and measure the bounded-Lipschitz distance between
//! the particle label marginals and the density fields at the final time.
//! The distance must shrink when the particle count and the grid refine
//! together.

use super::sim_config;
use crate::config::{self, Config};
use crate::report::{cell_f, cell_i, Csv, Report};
use crate::svg::{line_chart, Series};
use crate::{CliError, Result};
use mflab::engine::simulate;
use mflab::exec::{map_indexed, ExecMode};
use mflab::kernels::VelocityMode;
use mflab::metrics::bl_distance;
use mflab::pde::{lift_to_particles, solve_pde, Grid1D};
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

pub struct ConsistencyOutcome {
    pub report: Report,
    /// `distances[level][h]` at the final time.
    pub distances: Vec<Vec<f64>>,
    pub levels: Vec<(usize, usize)>,
    pub refining: bool,
}

fn parse_levels(cfg: &Config) -> Result<Vec<(usize, usize)>> {
    let raw = cfg.str_or("experiment.levels", "256:200,1024:400");
    let mut out = Vec::new();
    for part in raw.split(',') {
        let (n, cells) = part
            .trim()
            .split_once(':')
            .ok_or_else(|| CliError::Config("levels must look like `256:200,1024:400`".into()))?;
        out.push((
            n.trim()
                .parse()
                .map_err(|e| CliError::Config(format!("levels: {e}")))?,
            cells
                .trim()
                .parse()
                .map_err(|e| CliError::Config(format!("levels: {e}")))?,
        ));
    }
    if out.len() < 2 {
        return Err(CliError::Config("need at least two levels".into()));
    }
    Ok(out)
}

pub fn run_consistency(cfg: &Config, seed_base: u64) -> Result<ConsistencyOutcome> {
    let spec = config::build_model(cfg)?;
    if spec.mode() != VelocityMode::LabelIndependent {
        return Err(CliError::Core(mflab::Error::LabelWeightedPde));
    }
    let levels = parse_levels(cfg)?;
    let seeds = cfg.usize_or("experiment.consistency_seeds", 5)?;
    let t_final = cfg.f64("pde.T")?;
    let x_min = cfg.f64("grid.x_min")?;
    let x_max = cfg.f64("grid.x_max")?;
    let base_cells = levels[0].1 as f64;
    let base_dt = cfg.f64("pde.dt")?;
    let h = spec.label_count();

    // Every discretization parameter refines together with the level. Within
    // a seed, the same uniform stream drives the position draws at all
    // levels (common random numbers), and distances are averaged over seeds:
    // a single draw can be lucky at the coarse level, the seed mean is not.
    let jobs: Vec<(usize, usize)> = (0..seeds)
        .flat_map(|s| (0..levels.len()).map(move |li| (s, li)))
        .collect();
    let results: Vec<Result<Vec<f64>>> = map_indexed(jobs.len(), ExecMode::default(), |idx| {
        let (s, li) = jobs[idx];
        let seed = seed_base + s as u64;
        let (n_particles, n_cells) = levels[li];
        let refine = n_cells as f64 / base_cells;
        let grid = Grid1D::new(x_min, x_max, n_cells)?;
        let rho0 = config::build_initial_densities(cfg, grid, h)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let p0 = lift_to_particles(&rho0, n_particles, &mut rng)?;

        let mut sim = sim_config(cfg, seed)?;
        sim.t_final = t_final;
        sim.dt /= refine;
        sim.record_every = usize::MAX; // final state only
        let ptraj = simulate(&spec, &p0, &sim)?;

        let dt = base_dt / refine;
        let dtraj = solve_pde(&spec, &rho0, t_final, dt, usize::MAX)?;

        let particles = ptraj.last();
        let densities = dtraj.last();
        (0..h)
            .map(|hh| {
                Ok(bl_distance(
                    &particles.label_marginal(hh),
                    &densities.to_spatial_measure(hh),
                )?)
            })
            .collect()
    });

    let mut per_seed: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); levels.len()]; seeds];
    for (idx, res) in results.into_iter().enumerate() {
        let (s, li) = jobs[idx];
        per_seed[s][li] = res?;
    }

    let mut distances: Vec<Vec<f64>> = vec![vec![0.0; h]; levels.len()];
    let mut csv = Csv::new(&["seed", "n_particles", "n_cells", "label", "bl_distance"]);
    for (s, by_level) in per_seed.iter().enumerate() {
        for (li, d) in by_level.iter().enumerate() {
            for (hh, v) in d.iter().enumerate() {
                csv.row(vec![
                    cell_i(seed_base as usize + s),
                    cell_i(levels[li].0),
                    cell_i(levels[li].1),
                    cell_i(hh + 1),
                    cell_f(*v),
                ]);
                distances[li][hh] += v / seeds as f64;
            }
        }
    }

    // Refinement verdict: every label's distance decreases level to level.
    let refining = distances.windows(2).all(|w| {
        w[0].iter()
            .zip(&w[1])
            .all(|(coarse, fine)| fine < coarse)
    });

    let svg = line_chart(
        "particle vs macroscopic distance",
        "level",
        "BL distance at T",
        &(0..h)
            .map(|hh| Series {
                label: format!("label {}", hh + 1),
                points: distances
                    .iter()
                    .enumerate()
                    .map(|(li, d)| (li as f64, d[hh]))
                    .collect(),
            })
            .collect::<Vec<_>>(),
        false,
        true,
    );

    let summary = vec![
        format!(
            "levels: {}",
            levels
                .iter()
                .map(|(n, c)| format!("{n} agents / {c} cells"))
                .collect::<Vec<_>>()
                .join(" -> ")
        ),
        format!(
            "distance decreases under joint refinement: {}",
            if refining { "yes" } else { "NO" }
        ),
    ];

    Ok(ConsistencyOutcome {
        report: Report {
            csv: csv.render(),
            svg,
            summary,
            ok: refining,
            extra_files: Vec::new(),
        },
        distances,
        levels,
        refining,
    })
}
