//! Game-kernel dynamics on a continuum label interval `[0, 1]`, discretized
//! by midpoint quadrature into an `H`-node finite-label model.
//!
//! A payoff-style kernel `J(x, u, x', u') >= 0` drives label transitions, a
//! vector kernel `V(x, u, x', u')` drives motion. Quadrature nodes sit at
//! `(m + 1/2) / H` with uniform weights, and the node set carries the
//! rescaled metric `|u_m - u_k|`, so refining the quadrature refines the
//! metric consistently. The discretized model plugs into the particle engine
//! unchanged.

use crate::engine::{Dynamics, PopulationView};
use crate::error::{Error, Result};
use crate::kernels::RateMatrix;
use crate::measures::{
    euclidean_dist, AgentState, EmpiricalMeasure, LabelSpace, SimplexVector,
};

/// Transition game kernel families. All are nonnegative, which is what a
/// generator's off-diagonal entries require.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionGame {
    Zero,
    /// `J = rate`.
    Constant { rate: f64 },
    /// `J = rate * u * u'`: strong labels reinforce each other.
    SeparableProduct { rate: f64 },
    /// `J = rate * u' * (1 - u)`: low labels get recruited toward high ones.
    Recruitment { rate: f64 },
    /// `J = rate * exp(-|x - x'|^2 / (2 w^2))`, label-independent.
    GaussianSpace { rate: f64, width: f64 },
}

impl TransitionGame {
    pub fn eval(&self, x: &[f64], u: f64, x_other: &[f64], u_other: f64) -> f64 {
        match self {
            TransitionGame::Zero => 0.0,
            TransitionGame::Constant { rate } => *rate,
            TransitionGame::SeparableProduct { rate } => rate * u * u_other,
            TransitionGame::Recruitment { rate } => rate * u_other * (1.0 - u),
            TransitionGame::GaussianSpace { rate, width } => {
                let r = euclidean_dist(x, x_other);
                rate * (-r * r / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = match self {
            TransitionGame::Zero => return Ok(()),
            TransitionGame::Constant { rate }
            | TransitionGame::SeparableProduct { rate }
            | TransitionGame::Recruitment { rate } => *rate,
            TransitionGame::GaussianSpace { rate, width } => {
                if *width <= 0.0 {
                    return Err(Error::InvalidArgument("game kernel width must be > 0".into()));
                }
                *rate
            }
        };
        if rate < 0.0 || !rate.is_finite() {
            Err(Error::NegativeRate(rate))
        } else {
            Ok(())
        }
    }
}

/// Velocity game kernel families.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityGame {
    Zero,
    /// `V = -a (x - x')`, label-independent.
    LinearAttraction { strength: f64 },
    /// `V = a u u' (x' - x)`: attraction proportional to both labels.
    SeparableAttraction { strength: f64 },
    /// `V = -a (x - x') exp(-|x - x'|^2 / (2 w^2))`, label-independent.
    GaussianAttraction { strength: f64, width: f64 },
}

impl VelocityGame {
    /// Adds `scale * V(x, u, x', u')` into `out`.
    pub fn accumulate(
        &self,
        x: &[f64],
        u: f64,
        x_other: &[f64],
        u_other: f64,
        scale: f64,
        out: &mut [f64],
    ) {
        match self {
            VelocityGame::Zero => {}
            VelocityGame::LinearAttraction { strength } => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(x_other) {
                    *o -= scale * strength * (a - b);
                }
            }
            VelocityGame::SeparableAttraction { strength } => {
                let f = strength * u * u_other;
                for ((o, a), b) in out.iter_mut().zip(x).zip(x_other) {
                    *o += scale * f * (b - a);
                }
            }
            VelocityGame::GaussianAttraction { strength, width } => {
                let r = euclidean_dist(x, x_other);
                let f = strength * (-r * r / (2.0 * width * width)).exp();
                for ((o, a), b) in out.iter_mut().zip(x).zip(x_other) {
                    *o -= scale * f * (a - b);
                }
            }
        }
    }
}

/// Quadrature discretization of a continuum-label game model.
#[derive(Debug, Clone)]
pub struct GameModel {
    dim: usize,
    nodes: LabelSpace,
    pub transition: TransitionGame,
    pub velocity: VelocityGame,
}

impl GameModel {
    /// Midpoint nodes `(m + 1/2) / count` on `[0, 1]`, uniform weights.
    pub fn new(
        dim: usize,
        node_count: usize,
        transition: TransitionGame,
        velocity: VelocityGame,
    ) -> Result<Self> {
        if dim == 0 || node_count == 0 {
            return Err(Error::InvalidArgument(
                "game model needs dim >= 1 and at least one node".into(),
            ));
        }
        transition.validate()?;
        let h = node_count as f64;
        let nodes = LabelSpace::from_coords(
            (0..node_count).map(|m| (m as f64 + 0.5) / h).collect(),
        )?;
        Ok(GameModel {
            dim,
            nodes,
            transition,
            velocity,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.count()
    }

    pub fn nodes(&self) -> &LabelSpace {
        &self.nodes
    }

    /// Off-diagonal generator entries
    /// `q_{mk} = (1/N) sum_j J(x, u_m, x_j, u_k) lambda_{j,k}` for `k != m`;
    /// diagonals are minus the row sums. The self-transition term drops out
    /// of the generator, so only `k != m` contributes. Errors on a negative
    /// kernel sample.
    pub fn discretize_generator(&self, x: &[f64], p: &EmpiricalMeasure) -> Result<RateMatrix> {
        let h = self.node_count();
        if p.label_count() != h {
            return Err(Error::Dimension(format!(
                "population carries {} labels, quadrature has {h} nodes",
                p.label_count()
            )));
        }
        let w = p.atom_weight();
        let mut off = vec![0.0; h * h];
        for agent in p.agents() {
            for k in 0..h {
                let lk = agent.lambda.get(k);
                if lk == 0.0 {
                    continue;
                }
                let uk = self.nodes.coord(k);
                for m in 0..h {
                    if m == k {
                        continue;
                    }
                    let j = self.transition.eval(x, self.nodes.coord(m), &agent.x, uk);
                    if j < 0.0 {
                        return Err(Error::NegativeRate(j));
                    }
                    off[m * h + k] += w * j * lk;
                }
            }
        }
        RateMatrix::from_off_diagonal(h, |r, c| off[r * h + c])
    }

    /// Velocity averaged over the agent's own labels, the opponents, and the
    /// opponents' labels:
    /// `sum_m lambda_m (1/N) sum_j sum_k V(x, u_m, x_j, u_k) lambda_{j,k}`.
    pub fn game_velocity(&self, y: &AgentState, p: &EmpiricalMeasure) -> Result<Vec<f64>> {
        let h = self.node_count();
        if y.lambda.len() != h || p.label_count() != h {
            return Err(Error::Dimension("label node count mismatch".into()));
        }
        if y.dim() != self.dim || p.dim() != self.dim {
            return Err(Error::Dimension("spatial dimension mismatch".into()));
        }
        let w = p.atom_weight();
        let mut out = vec![0.0; self.dim];
        for m in 0..h {
            let lm = y.lambda.get(m);
            if lm == 0.0 {
                continue;
            }
            let um = self.nodes.coord(m);
            for agent in p.agents() {
                for k in 0..h {
                    let lk = agent.lambda.get(k);
                    if lk == 0.0 {
                        continue;
                    }
                    self.velocity.accumulate(
                        &y.x,
                        um,
                        &agent.x,
                        self.nodes.coord(k),
                        lm * w * lk,
                        &mut out,
                    );
                }
            }
        }
        Ok(out)
    }
}

impl Dynamics for GameModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn labels(&self) -> &LabelSpace {
        &self.nodes
    }

    fn velocity(&self, agent: &AgentState, pop: &PopulationView<'_>) -> Vec<f64> {
        self.game_velocity(agent, pop.measure)
            .expect("population label count matches the quadrature nodes")
    }

    fn rate_matrix(&self, x: &[f64], pop: &PopulationView<'_>) -> Result<RateMatrix> {
        self.discretize_generator(x, pop.measure)
    }
}

/// Coarsens label vectors by summing blocks of `factor` adjacent nodes;
/// positions are untouched. Comparing runs at different quadrature
/// resolutions happens after coarsening to the common coarser node set.
pub fn coarsen_labels(p: &EmpiricalMeasure, factor: usize) -> Result<EmpiricalMeasure> {
    let h = p.label_count();
    if factor == 0 || h % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot coarsen {h} nodes by a factor of {factor}"
        )));
    }
    let coarse = h / factor;
    let agents = p
        .agents()
        .iter()
        .map(|a| {
            let mut weights = vec![0.0; coarse];
            for (k, w) in a.lambda.weights().iter().enumerate() {
                weights[k / factor] += w;
            }
            AgentState::new(a.x.clone(), SimplexVector::new(weights)?)
        })
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::new(agents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_population(n: usize, nodes: usize, seed: u64) -> EmpiricalMeasure {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let agents = (0..n)
            .map(|_| {
                let x = vec![rng.random::<f64>() * 4.0 - 2.0];
                let raw: Vec<f64> = (0..nodes).map(|_| rng.random::<f64>() + 0.05).collect();
                let s: f64 = raw.iter().sum();
                AgentState::new(
                    x,
                    SimplexVector::new(raw.iter().map(|v| v / s).collect()).unwrap(),
                )
                .unwrap()
            })
            .collect();
        EmpiricalMeasure::new(agents).unwrap()
    }

    #[test]
    fn zero_transition_gives_zero_generator() {
        let gm = GameModel::new(1, 6, TransitionGame::Zero, VelocityGame::Zero).unwrap();
        let p = random_population(4, 6, 1);
        let q = gm.discretize_generator(&[0.0], &p).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(q.entry(r, c), 0.0);
            }
        }
    }

    #[test]
    fn constant_kernel_single_opponent() {
        // One opponent concentrated on node k: every row gets rate c toward
        // k, nothing elsewhere.
        let h = 5;
        let k = 2;
        let gm = GameModel::new(
            1,
            h,
            TransitionGame::Constant { rate: 1.7 },
            VelocityGame::Zero,
        )
        .unwrap();
        let p = EmpiricalMeasure::new(vec![AgentState::new(
            vec![0.3],
            SimplexVector::delta(k, h),
        )
        .unwrap()])
        .unwrap();
        let q = gm.discretize_generator(&[0.0], &p).unwrap();
        for m in 0..h {
            for c in 0..h {
                let expected = if m == c {
                    if m == k {
                        0.0
                    } else {
                        -1.7
                    }
                } else if c == k {
                    1.7
                } else {
                    0.0
                };
                assert!((q.entry(m, c) - expected).abs() < 1e-14, "entry ({m},{c})");
            }
        }
    }

    #[test]
    fn generator_matches_brute_force_triple_sum() {
        let h = 4;
        let gm = GameModel::new(
            1,
            h,
            TransitionGame::Recruitment { rate: 0.9 },
            VelocityGame::Zero,
        )
        .unwrap();
        let p = random_population(6, h, 7);
        let x = [0.4];
        let q = gm.discretize_generator(&x, &p).unwrap();
        let n = p.len() as f64;
        for m in 0..h {
            for k in 0..h {
                if m == k {
                    continue;
                }
                let mut want = 0.0;
                for agent in p.agents() {
                    let u_m = gm.nodes().coord(m);
                    let u_k = gm.nodes().coord(k);
                    want += 0.9 * u_k * (1.0 - u_m) * agent.lambda.get(k) / n;
                }
                assert!((q.entry(m, k) - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn velocity_zero_kernel() {
        let gm = GameModel::new(1, 3, TransitionGame::Zero, VelocityGame::Zero).unwrap();
        let p = random_population(5, 3, 2);
        let v = gm.game_velocity(p.agent(0), &p).unwrap();
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn velocity_matches_brute_force_triple_sum() {
        let h = 3;
        let gm = GameModel::new(
            1,
            h,
            TransitionGame::Zero,
            VelocityGame::SeparableAttraction { strength: 1.3 },
        )
        .unwrap();
        let p = random_population(5, h, 3);
        let y = p.agent(1);
        let got = gm.game_velocity(y, &p).unwrap()[0];
        let n = p.len() as f64;
        let mut want = 0.0;
        for m in 0..h {
            for agent in p.agents() {
                for k in 0..h {
                    let u = gm.nodes().coord(m);
                    let u2 = gm.nodes().coord(k);
                    want += y.lambda.get(m)
                        * agent.lambda.get(k)
                        * 1.3
                        * u
                        * u2
                        * (agent.x[0] - y.x[0])
                        / n;
                }
            }
        }
        assert!((got - want).abs() < 1e-13);
    }

    #[test]
    fn label_independent_velocity_reduces_to_linear_attraction() {
        use crate::kernels::{Kernel, ModelSpec, RateTable};
        let h = 4;
        let gm = GameModel::new(
            1,
            h,
            TransitionGame::Zero,
            VelocityGame::LinearAttraction { strength: 1.0 },
        )
        .unwrap();
        let spec = ModelSpec::label_independent(
            1,
            gm.nodes().clone(),
            vec![Kernel::LinearAttraction { strength: 1.0 }; h],
            RateTable::zero(h),
        )
        .unwrap();
        let p = random_population(6, h, 4);
        for agent in p.agents() {
            let a = gm.game_velocity(agent, &p).unwrap();
            let b = spec.eval_velocity(agent, &p).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_labels_stay_uniform_for_label_independent_kernels() {
        use crate::engine::{simulate, SimConfig};
        let h = 4;
        let gm = GameModel::new(
            1,
            h,
            TransitionGame::GaussianSpace {
                rate: 1.1,
                width: 0.8,
            },
            VelocityGame::GaussianAttraction {
                strength: 0.7,
                width: 1.0,
            },
        )
        .unwrap();
        let agents = (0..5)
            .map(|i| {
                AgentState::new(vec![i as f64 * 0.4 - 0.8], SimplexVector::uniform(h)).unwrap()
            })
            .collect();
        let p = EmpiricalMeasure::new(agents).unwrap();
        let traj = simulate(&gm, &p, &SimConfig::new(0.05, 0.5, 2, 0)).unwrap();
        for snap in &traj.snapshots {
            for a in snap.agents() {
                for k in 0..h {
                    assert!(
                        (a.lambda.get(k) - 1.0 / h as f64).abs() < 1e-12,
                        "uniform vector drifted"
                    );
                }
            }
        }
    }

    #[test]
    fn coarsening_sums_blocks() {
        let p = EmpiricalMeasure::new(vec![AgentState::new(
            vec![0.0],
            SimplexVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        )
        .unwrap()])
        .unwrap();
        let c = coarsen_labels(&p, 2).unwrap();
        assert_eq!(c.label_count(), 2);
        assert!((c.agent(0).lambda.get(0) - 0.3).abs() < 1e-15);
        assert!((c.agent(0).lambda.get(1) - 0.7).abs() < 1e-15);
        assert!(coarsen_labels(&p, 3).is_err());
    }
}
