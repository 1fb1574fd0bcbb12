//! Time integration of the coupled N-agent system.
//!
//! One step freezes the current empirical measure and its label marginals,
//! then per agent: explicit Euler for the position, exact stochastic-matrix
//! exponential for the label probabilities (Lie splitting). The exponential
//! step keeps every label vector on the simplex for arbitrary step sizes; no
//! tolerance-based projection is involved.

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::kernels::{ModelSpec, RateMatrix};
use crate::measures::{
    AgentState, DiscreteSpatialMeasure, EmpiricalMeasure, LabelSpace, SimplexVector,
};
use crate::metrics;
use rand::{Rng, RngExt};

/// Frozen snapshot handed to the dynamics during one step: the pre-step
/// measure and its label marginals. All agents see the same snapshot, so the
/// update order is irrelevant.
pub struct PopulationView<'a> {
    pub measure: &'a EmpiricalMeasure,
    pub marginals: &'a [DiscreteSpatialMeasure],
}

/// The closure the integrator needs: a velocity field and a label generator,
/// both driven by the frozen population snapshot.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;
    fn labels(&self) -> &LabelSpace;
    fn velocity(&self, agent: &AgentState, pop: &PopulationView<'_>) -> Vec<f64>;
    fn rate_matrix(&self, x: &[f64], pop: &PopulationView<'_>) -> Result<RateMatrix>;
}

impl Dynamics for ModelSpec {
    fn dim(&self) -> usize {
        ModelSpec::dim(self)
    }

    fn labels(&self) -> &LabelSpace {
        ModelSpec::labels(self)
    }

    fn velocity(&self, agent: &AgentState, pop: &PopulationView<'_>) -> Vec<f64> {
        self.velocity_from_marginals(&agent.x, &agent.lambda, pop.marginals)
    }

    fn rate_matrix(&self, x: &[f64], pop: &PopulationView<'_>) -> Result<RateMatrix> {
        self.eval_rate_matrix(x, pop.marginals)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
    pub seed: u64,
    pub exec: ExecMode,
}

impl SimConfig {
    pub fn new(dt: f64, t_final: f64, record_every: usize, seed: u64) -> Self {
        SimConfig {
            dt,
            t_final,
            record_every: record_every.max(1),
            seed,
            exec: ExecMode::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("bad dt {}", self.dt)));
        }
        if self.t_final < 0.0 || !self.t_final.is_finite() {
            return Err(Error::InvalidArgument(format!("bad horizon {}", self.t_final)));
        }
        Ok(())
    }
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct Monitor {
    pub t: f64,
    pub max_state_norm: f64,
    pub first_moment: f64,
}

/// Diagnostics aggregated over every step of a run, recorded or not.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Most negative label-vector entry seen before clamping (a product
    /// against the unclamped matrix exponential).
    pub min_lambda_pre_clamp: f64,
    /// Largest deviation of a label-vector sum from one before renormalizing.
    pub max_sum_deviation: f64,
    /// Largest `dt * |q_hh|` encountered; accuracy degrades when this is
    /// large, so the integrator only warns through this channel.
    pub max_dt_exit_rate: f64,
}

impl StepStats {
    fn identity() -> Self {
        StepStats {
            min_lambda_pre_clamp: f64::INFINITY,
            max_sum_deviation: 0.0,
            max_dt_exit_rate: 0.0,
        }
    }

    fn merge(self, other: StepStats) -> StepStats {
        StepStats {
            min_lambda_pre_clamp: self.min_lambda_pre_clamp.min(other.min_lambda_pre_clamp),
            max_sum_deviation: self.max_sum_deviation.max(other.max_sum_deviation),
            max_dt_exit_rate: self.max_dt_exit_rate.max(other.max_dt_exit_rate),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<EmpiricalMeasure>,
    pub monitors: Vec<Monitor>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn last(&self) -> &EmpiricalMeasure {
        self.snapshots.last().expect("trajectory is never empty")
    }
}

/// One integrator step with the default execution mode.
pub fn step<D: Dynamics + ?Sized>(dynamics: &D, p: &EmpiricalMeasure, dt: f64) -> Result<EmpiricalMeasure> {
    step_with(dynamics, p, dt, ExecMode::default()).map(|(m, _)| m)
}

pub fn step_with<D: Dynamics + ?Sized>(
    dynamics: &D,
    p: &EmpiricalMeasure,
    dt: f64,
    exec: ExecMode,
) -> Result<(EmpiricalMeasure, StepStats)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("bad dt {dt}")));
    }
    let marginals = p.all_marginals();
    let view = PopulationView {
        measure: p,
        marginals: &marginals,
    };
    let results: Vec<Result<(AgentState, StepStats)>> = map_indexed(p.len(), exec, |i| {
        let agent = p.agent(i);
        let v = dynamics.velocity(agent, &view);
        let mut x = agent.x.clone();
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::AgentBlowUp { index: i, t: f64::NAN });
        }
        let q = dynamics.rate_matrix(&agent.x, &view)?;
        let tm = q.transition_matrix(dt)?;
        let raw = tm.apply_transpose_raw(&agent.lambda);
        let min_raw = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let sum_dev = (raw.iter().sum::<f64>() - 1.0).abs();
        let lambda = tm.apply_transpose(&agent.lambda)?;
        Ok((
            AgentState { x, lambda },
            StepStats {
                min_lambda_pre_clamp: min_raw,
                max_sum_deviation: sum_dev,
                max_dt_exit_rate: dt * q.max_exit_rate(),
            },
        ))
    });

    let mut agents = Vec::with_capacity(p.len());
    let mut stats = StepStats::identity();
    for r in results {
        let (a, s) = r?;
        agents.push(a);
        stats = stats.merge(s);
    }
    Ok((EmpiricalMeasure::new(agents)?, stats))
}

/// Integrates from `t = 0` to the horizon, recording every
/// `record_every`-th step (plus the initial and final states) together with
/// state-norm monitors. Identical seeds and configs give bitwise-identical
/// trajectories regardless of the execution mode.
pub fn simulate<D: Dynamics + ?Sized>(
    dynamics: &D,
    p0: &EmpiricalMeasure,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n_steps = (cfg.t_final / cfg.dt).round() as usize;
    let mut times = Vec::new();
    let mut snapshots = Vec::new();
    let mut monitors = Vec::new();
    let mut stats = StepStats::identity();

    let mut current = p0.clone();
    record(dynamics, &current, 0.0, &mut times, &mut snapshots, &mut monitors)?;
    for k in 1..=n_steps {
        let t = k as f64 * cfg.dt;
        let (next, s) = step_with(dynamics, &current, cfg.dt, cfg.exec).map_err(|e| match e {
            Error::AgentBlowUp { index, .. } => Error::AgentBlowUp { index, t },
            other => other,
        })?;
        stats = stats.merge(s);
        current = next;
        if k % cfg.record_every == 0 || k == n_steps {
            record(dynamics, &current, t, &mut times, &mut snapshots, &mut monitors)?;
        }
    }
    Ok(Trajectory {
        times,
        snapshots,
        monitors,
        stats,
    })
}

fn record<D: Dynamics + ?Sized>(
    dynamics: &D,
    p: &EmpiricalMeasure,
    t: f64,
    times: &mut Vec<f64>,
    snapshots: &mut Vec<EmpiricalMeasure>,
    monitors: &mut Vec<Monitor>,
) -> Result<()> {
    let space = dynamics.labels();
    let mut max_norm: f64 = 0.0;
    let mut moment = 0.0;
    for a in p.agents() {
        let n = metrics::state_norm(space, a)?;
        max_norm = max_norm.max(n);
        moment += n;
    }
    times.push(t);
    snapshots.push(p.clone());
    monitors.push(Monitor {
        t,
        max_state_norm: max_norm,
        first_moment: moment / p.len() as f64,
    });
    Ok(())
}

/// A-priori bound on the state norm along a trajectory:
/// `(r + M t) e^{2 M t}`, where `r` dominates the initial state norms and `M`
/// the sublinearity constant of the coupled field.
pub fn support_bound(r: f64, m: f64, t: f64) -> f64 {
    (r + m * t) * (2.0 * m * t).exp()
}

#[derive(Debug, Clone)]
pub struct SupportBoundRow {
    pub t: f64,
    pub max_state_norm: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct SupportBoundReport {
    pub rows: Vec<SupportBoundRow>,
    pub ok: bool,
}

/// Verifies the support bound at every recorded snapshot. A violation means
/// either the integrator or the supplied constants are wrong.
pub fn support_bound_check(traj: &Trajectory, r: f64, m: f64) -> SupportBoundReport {
    let mut rows = Vec::with_capacity(traj.monitors.len());
    let mut ok = true;
    for mon in &traj.monitors {
        let bound = support_bound(r, m, mon.t);
        let margin = bound - mon.max_state_norm;
        if margin < 0.0 {
            ok = false;
        }
        rows.push(SupportBoundRow {
            t: mon.t,
            max_state_norm: mon.max_state_norm,
            bound,
            margin,
        });
    }
    SupportBoundReport { rows, ok }
}

#[derive(Debug, Clone)]
pub struct StabilityRow {
    pub t: f64,
    pub w1: f64,
    /// `exp(L t + exp(L t) - 1) * W1(0)`, evaluated in logs; infinite when it
    /// overflows.
    pub envelope: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub initial_w1: f64,
    pub lipschitz: f64,
    pub ok: bool,
}

/// Allowed overshoot of the measured distance over the envelope, covering
/// time discretization of the two runs.
pub const STABILITY_SLACK: f64 = 1.05;

/// Runs two trajectories from nearby initial data and compares the measured
/// Wasserstein distance at each recorded time against the theoretical
/// envelope `exp(L t + exp(L t) - 1) W1(0)`.
pub fn stability_experiment<D: Dynamics + ?Sized>(
    dynamics: &D,
    p0a: &EmpiricalMeasure,
    p0b: &EmpiricalMeasure,
    cfg: &SimConfig,
    lipschitz: f64,
) -> Result<StabilityReport> {
    if p0a.len() != p0b.len() {
        return Err(Error::InvalidArgument(
            "stability runs need equal agent counts".into(),
        ));
    }
    let ta = simulate(dynamics, p0a, cfg)?;
    let tb = simulate(dynamics, p0b, cfg)?;
    let space = dynamics.labels();
    let w1_0 = metrics::w1_product_with(space, &ta.snapshots[0], &tb.snapshots[0], cfg.exec)?;
    let mut rows = Vec::with_capacity(ta.times.len());
    let mut ok = true;
    for (k, &t) in ta.times.iter().enumerate() {
        let w1 = metrics::w1_product_with(space, &ta.snapshots[k], &tb.snapshots[k], cfg.exec)?;
        let (envelope, ratio) = if w1_0 <= 1e-15 {
            // Identical data: the distance must stay at round-off level.
            if w1 > 1e-12 {
                ok = false;
            }
            (0.0, 0.0)
        } else {
            let log_growth = lipschitz * t + (lipschitz * t).exp() - 1.0;
            let log_env = log_growth + w1_0.ln();
            let envelope = log_env.exp();
            // Compare in logs so an overflowing envelope stays usable.
            if w1.ln() > log_env + STABILITY_SLACK.ln() {
                ok = false;
            }
            let ratio = if envelope.is_finite() && envelope > 0.0 {
                w1 / envelope
            } else {
                0.0
            };
            (envelope, ratio)
        };
        rows.push(StabilityRow {
            t,
            w1,
            envelope,
            ratio,
        });
    }
    Ok(StabilityReport {
        rows,
        initial_w1: w1_0,
        lipschitz,
        ok,
    })
}

/// Random initial data.
pub mod init {
    use super::*;

    #[derive(Debug, Clone)]
    pub enum PositionLaw {
        /// Uniform on the centered ball of the given radius.
        UniformBall { radius: f64 },
        /// Isotropic Gaussian, resampled until inside the truncation ball.
        GaussianTruncated { sigma: f64, truncation: f64 },
    }

    #[derive(Debug, Clone)]
    pub enum LabelLaw {
        /// Flat Dirichlet over the simplex.
        Dirichlet,
        /// Every agent starts with the same vector.
        Fixed(SimplexVector),
        /// Point mass on one label.
        Delta(usize),
    }

    pub fn sample<R: Rng>(
        n: usize,
        dim: usize,
        labels: &LabelSpace,
        positions: &PositionLaw,
        label_law: &LabelLaw,
        rng: &mut R,
    ) -> Result<EmpiricalMeasure> {
        let h = labels.count();
        let mut agents = Vec::with_capacity(n);
        for _ in 0..n {
            let x = match positions {
                PositionLaw::UniformBall { radius } => loop {
                    let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    if v.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                        break v.into_iter().map(|c| c * radius).collect();
                    }
                },
                PositionLaw::GaussianTruncated { sigma, truncation } => loop {
                    let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng) * sigma).collect();
                    if v.iter().map(|c| c * c).sum::<f64>().sqrt() <= *truncation {
                        break v;
                    }
                },
            };
            let lambda = match label_law {
                LabelLaw::Dirichlet => {
                    let raw: Vec<f64> =
                        (0..h).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
                    let s: f64 = raw.iter().sum();
                    SimplexVector::new(raw.iter().map(|v| v / s).collect())?
                }
                LabelLaw::Fixed(v) => v.clone(),
                LabelLaw::Delta(k) => SimplexVector::delta(*k, h),
            };
            agents.push(AgentState::new(x, lambda)?);
        }
        EmpiricalMeasure::new(agents)
    }

    /// Box-Muller standard normal.
    pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, RateLaw, RateTable, SpatialGain};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn frozen_spec(h: usize) -> ModelSpec {
        ModelSpec::label_independent(
            1,
            LabelSpace::line(h),
            vec![Kernel::Zero; h],
            RateTable::zero(h),
        )
        .unwrap()
    }

    fn random_measure(n: usize, h: usize, seed: u64) -> EmpiricalMeasure {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        init::sample(
            n,
            1,
            &LabelSpace::line(h),
            &init::PositionLaw::UniformBall { radius: 1.5 },
            &init::LabelLaw::Dirichlet,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn frozen_dynamics_leave_state_unchanged() {
        let spec = frozen_spec(3);
        let p = random_measure(8, 3, 1);
        let next = step(&spec, &p, 0.37).unwrap();
        assert_eq!(p, next);

        let traj = simulate(&spec, &p, &SimConfig::new(0.1, 1.0, 3, 0)).unwrap();
        for snap in &traj.snapshots {
            assert_eq!(*snap, p);
        }
    }

    #[test]
    fn zero_horizon_records_only_the_initial_state() {
        let spec = frozen_spec(2);
        let p = random_measure(4, 2, 2);
        let traj = simulate(&spec, &p, &SimConfig::new(0.1, 0.0, 1, 0)).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.snapshots[0], p);
        assert_eq!(traj.times, vec![0.0]);
    }

    #[test]
    fn constant_rate_half_life() {
        // One-way switching at unit rate for ln 2 halves the follower weight.
        let mut rates = RateTable::zero(2);
        rates.set(0, 1, RateLaw::constant(1.0)).unwrap();
        let spec = ModelSpec::label_independent(
            1,
            LabelSpace::line(2),
            vec![Kernel::Zero, Kernel::Zero],
            rates,
        )
        .unwrap();
        let p = EmpiricalMeasure::new(vec![AgentState::new(
            vec![0.0],
            SimplexVector::delta(0, 2),
        )
        .unwrap()])
        .unwrap();
        let next = step(&spec, &p, std::f64::consts::LN_2).unwrap();
        let lam = &next.agent(0).lambda;
        assert!((lam.get(0) - 0.5).abs() < 1e-12);
        assert!((lam.get(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mirror_symmetric_data_stay_symmetric() {
        // Odd kernel, symmetric two-agent configuration.
        let spec = ModelSpec::label_independent(
            1,
            LabelSpace::line(2),
            vec![
                Kernel::Gaussian {
                    strength: 1.0,
                    width: 1.0,
                },
                Kernel::LinearAttraction { strength: 0.5 },
            ],
            RateTable::zero(2),
        )
        .unwrap();
        let lam = SimplexVector::new(vec![0.3, 0.7]).unwrap();
        let p = EmpiricalMeasure::new(vec![
            AgentState::new(vec![-1.2], lam.clone()).unwrap(),
            AgentState::new(vec![1.2], lam).unwrap(),
        ])
        .unwrap();
        let next = step(&spec, &p, 0.05).unwrap();
        assert!((next.agent(0).x[0] + next.agent(1).x[0]).abs() < 1e-14);
        assert_eq!(next.agent(0).lambda, next.agent(1).lambda);
    }

    #[test]
    fn update_order_is_irrelevant() {
        // Permuting the agents and stepping gives the permuted result of
        // stepping, because all agents see the same frozen snapshot.
        let mut rates = RateTable::zero(2);
        rates
            .set(
                0,
                1,
                RateLaw {
                    base: 0.4,
                    influence: vec![0.6, 0.2],
                    mollifier_width: 0.7,
                    gain: SpatialGain::InverseQuadratic,
                },
            )
            .unwrap();
        rates.set(1, 0, RateLaw::constant(0.3)).unwrap();
        let spec = ModelSpec::label_independent(
            1,
            LabelSpace::line(2),
            vec![
                Kernel::Gaussian {
                    strength: 0.9,
                    width: 1.1,
                },
                Kernel::Gaussian {
                    strength: 1.4,
                    width: 0.8,
                },
            ],
            rates,
        )
        .unwrap();
        let p = random_measure(7, 2, 5);
        let stepped = step(&spec, &p, 0.1).unwrap();

        let perm: Vec<usize> = vec![3, 0, 6, 2, 5, 1, 4];
        let permuted = EmpiricalMeasure::new(
            perm.iter().map(|&i| p.agent(i).clone()).collect(),
        )
        .unwrap();
        let stepped_perm = step(&spec, &permuted, 0.1).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            let a = stepped_perm.agent(slot);
            let b = stepped.agent(src);
            assert!((a.x[0] - b.x[0]).abs() < 1e-12);
            for k in 0..2 {
                assert!((a.lambda.get(k) - b.lambda.get(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_mass_constant_without_rates() {
        let spec = ModelSpec::label_independent(
            1,
            LabelSpace::line(2),
            vec![
                Kernel::LinearAttraction { strength: 0.8 },
                Kernel::Gaussian {
                    strength: 0.5,
                    width: 1.0,
                },
            ],
            RateTable::zero(2),
        )
        .unwrap();
        let p = random_measure(10, 2, 9);
        let before: Vec<f64> = (0..2).map(|h| p.label_marginal(h).mass()).collect();
        let traj = simulate(&spec, &p, &SimConfig::new(0.05, 0.5, 2, 0)).unwrap();
        let after: Vec<f64> = (0..2)
            .map(|h| traj.last().label_marginal(h).mass())
            .collect();
        // Zero generator means the label vectors are bitwise unchanged.
        assert_eq!(before, after);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng1 = ChaCha12Rng::seed_from_u64(42);
        let mut rng2 = ChaCha12Rng::seed_from_u64(42);
        let labels = LabelSpace::line(2);
        let a = init::sample(
            6,
            1,
            &labels,
            &init::PositionLaw::GaussianTruncated {
                sigma: 1.0,
                truncation: 3.0,
            },
            &init::LabelLaw::Dirichlet,
            &mut rng1,
        )
        .unwrap();
        let b = init::sample(
            6,
            1,
            &labels,
            &init::PositionLaw::GaussianTruncated {
                sigma: 1.0,
                truncation: 3.0,
            },
            &init::LabelLaw::Dirichlet,
            &mut rng2,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn support_bound_zero_dynamics() {
        let spec = frozen_spec(2);
        let p = random_measure(5, 2, 3);
        let traj = simulate(&spec, &p, &SimConfig::new(0.1, 1.0, 2, 0)).unwrap();
        let r = traj.monitors[0].max_state_norm;
        let report = support_bound_check(&traj, r, 1.0);
        assert!(report.ok);
        // Margin grows like r (e^{2t} - 1) + t e^{2t}.
        assert!(report.rows.last().unwrap().margin > 0.0);
    }

    #[test]
    fn support_bound_formula_value() {
        assert!((support_bound(1.0, 1.0, 1.0) - 2.0 * (2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn stability_identical_inputs_zero_distance() {
        let spec = frozen_spec(2);
        let p = random_measure(6, 2, 4);
        let cfg = SimConfig::new(0.1, 0.5, 1, 0);
        let rep = stability_experiment(&spec, &p, &p, &cfg, 1.0).unwrap();
        assert!(rep.ok);
        for row in &rep.rows {
            assert!(row.w1 <= 1e-12);
        }
    }

    #[test]
    fn stability_frozen_dynamics_flat_distance() {
        let spec = frozen_spec(2);
        let p = random_measure(6, 2, 4);
        let shifted = EmpiricalMeasure::new(
            p.agents()
                .iter()
                .map(|a| AgentState::new(vec![a.x[0] + 1e-3], a.lambda.clone()).unwrap())
                .collect(),
        )
        .unwrap();
        let cfg = SimConfig::new(0.1, 0.5, 1, 0);
        let rep = stability_experiment(&spec, &p, &shifted, &cfg, 2.0).unwrap();
        assert!(rep.ok);
        assert!((rep.initial_w1 - 1e-3).abs() < 1e-9);
        for row in &rep.rows {
            assert!((row.w1 - rep.initial_w1).abs() < 1e-12);
            assert!(row.w1 <= row.envelope * STABILITY_SLACK);
        }
    }

    #[test]
    fn positions_converge_at_first_order() {
        // Richardson self-convergence: halving dt halves the position error
        // against a dt/16 reference (ratios within [1.7, 2.3]).
        let mut rates = RateTable::zero(2);
        rates.set(0, 1, RateLaw::constant(0.8)).unwrap();
        rates.set(1, 0, RateLaw::constant(0.5)).unwrap();
        let spec = ModelSpec::label_independent(
            1,
            LabelSpace::line(2),
            vec![
                Kernel::Gaussian {
                    strength: 1.2,
                    width: 1.0,
                },
                Kernel::LinearAttraction { strength: 0.6 },
            ],
            rates,
        )
        .unwrap();
        let p = random_measure(12, 2, 8);
        let t_final = 0.5;
        let run = |dt: f64| -> Vec<f64> {
            let cfg = SimConfig::new(dt, t_final, usize::MAX, 0);
            simulate(&spec, &p, &cfg)
                .unwrap()
                .last()
                .agents()
                .iter()
                .map(|a| a.x[0])
                .collect()
        };
        let reference = run(0.025 / 16.0);
        let err = |xs: &[f64]| -> f64 {
            xs.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(&run(0.1));
        let e2 = err(&run(0.05));
        let e3 = err(&run(0.025));
        for ratio in [e1 / e2, e2 / e3] {
            assert!(
                (1.7..=2.3).contains(&ratio),
                "first-order ratio out of band: {ratio}"
            );
        }
    }

    #[test]
    fn position_blow_up_names_agent_and_time() {
        // Explicit Euler with a huge step on a linear attraction diverges;
        // the error carries the agent index and the time of failure.
        let spec = ModelSpec::label_independent(
            1,
            LabelSpace::line(1),
            vec![Kernel::LinearAttraction { strength: 1.0 }],
            RateTable::zero(1),
        )
        .unwrap();
        let p = EmpiricalMeasure::new(vec![
            AgentState::new(vec![1e300], SimplexVector::delta(0, 1)).unwrap(),
            AgentState::new(vec![-1e300], SimplexVector::delta(0, 1)).unwrap(),
        ])
        .unwrap();
        match simulate(&spec, &p, &SimConfig::new(1e10, 1e12, 1, 0)) {
            Err(crate::Error::AgentBlowUp { index, t }) => {
                assert!(index < 2);
                assert!(t > 0.0);
            }
            other => panic!("expected blow-up error, got {other:?}"),
        }
    }

    #[test]
    fn simplex_preserved_for_large_steps() {
        let mut rates = RateTable::zero(3);
        rates.set(0, 1, RateLaw::constant(2.0)).unwrap();
        rates.set(1, 2, RateLaw::constant(1.5)).unwrap();
        rates.set(2, 0, RateLaw::constant(3.0)).unwrap();
        let spec = ModelSpec::label_independent(
            1,
            LabelSpace::line(3),
            vec![Kernel::Zero; 3],
            rates,
        )
        .unwrap();
        let p = random_measure(5, 3, 11);
        // Steps far beyond any CFL-style restriction.
        for dt in [0.5, 3.0, 10.0] {
            let (next, stats) = step_with(&spec, &p, dt, ExecMode::Sequential).unwrap();
            assert!(stats.min_lambda_pre_clamp >= -1e-13);
            assert!(stats.max_sum_deviation <= 1e-12);
            for a in next.agents() {
                assert!(a.lambda.weights().iter().all(|w| *w >= 0.0));
                assert!((a.lambda.sum() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
