//! Model closure: interaction kernels, transition-rate laws, generator
//! matrices and their exponentials, and the assembled model specification
//! with computable regularity constants.

use crate::error::{Error, Result};
use crate::measures::{
    euclidean_norm, AgentState, DiscreteSpatialMeasure, EmpiricalMeasure, LabelSpace,
    SignedLabelMeasure, SimplexVector,
};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

const INV_SQRT_E: f64 = 0.6065306597126334; // e^{-1/2}
const INV_QUAD_GAIN_LIP: f64 = 0.6495190528383290; // 3*sqrt(3)/8, sup |grad 1/(1+r^2)|

/// Interaction kernel `K: R^d -> R^d`. Every family is sublinear,
/// `|K(x)| <= M (1 + |x|)`, and globally Lipschitz, with both constants
/// available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Zero,
    /// Constant drift field `K(x) = v`.
    Constant { drift: Vec<f64> },
    /// `K(x) = -a x`.
    LinearAttraction { strength: f64 },
    /// `K(x) = -a x exp(-|x|^2 / (2 w^2))`.
    Gaussian { strength: f64, width: f64 },
}

impl Kernel {
    /// Adds `scale * K(diff)` into `out`.
    pub fn accumulate(&self, diff: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            Kernel::Zero => {}
            Kernel::Constant { drift } => {
                for (o, v) in out.iter_mut().zip(drift) {
                    *o += scale * v;
                }
            }
            Kernel::LinearAttraction { strength } => {
                for (o, d) in out.iter_mut().zip(diff) {
                    *o -= scale * strength * d;
                }
            }
            Kernel::Gaussian { strength, width } => {
                let r2: f64 = diff.iter().map(|d| d * d).sum();
                let f = strength * (-r2 / (2.0 * width * width)).exp();
                for (o, d) in out.iter_mut().zip(diff) {
                    *o -= scale * f * d;
                }
            }
        }
    }

    pub fn eval(&self, diff: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; diff.len()];
        self.accumulate(diff, 1.0, &mut out);
        out
    }

    /// Smallest closed-form `M` with `|K(x)| <= M (1 + |x|)` among the bounds
    /// below.
    pub fn sublinear_bound(&self) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Constant { drift } => euclidean_norm(drift),
            Kernel::LinearAttraction { strength } => *strength,
            // |K| peaks at a*w*e^{-1/2}; for wide kernels |K| <= a|x| wins.
            Kernel::Gaussian { strength, width } => strength * (width * INV_SQRT_E).min(1.0),
        }
    }

    /// Global Lipschitz constant (ball-independent for these families).
    pub fn lipschitz_bound(&self, _radius: f64) -> f64 {
        match self {
            Kernel::Zero | Kernel::Constant { .. } => 0.0,
            Kernel::LinearAttraction { strength } => *strength,
            // Jacobian -a e^{-r^2/2w^2} (I - x x^T / w^2) has operator norm
            // a * max(1, (s-1) e^{-s/2}) over s = r^2/w^2, and the max is 1.
            Kernel::Gaussian { strength, .. } => *strength,
        }
    }

    /// `sup_{|z| <= r} |K(z)|`.
    pub fn sup_on_ball(&self, r: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Constant { drift } => euclidean_norm(drift),
            Kernel::LinearAttraction { strength } => strength * r,
            Kernel::Gaussian { strength, width } => strength * r.min(width * INV_SQRT_E),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Kernel::Zero => Ok(()),
            Kernel::Constant { drift } => {
                if drift.len() != dim {
                    Err(Error::Dimension(format!(
                        "constant kernel drift has dimension {}, model has {dim}",
                        drift.len()
                    )))
                } else {
                    Ok(())
                }
            }
            Kernel::LinearAttraction { strength } => {
                if *strength >= 0.0 && strength.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("kernel strength must be >= 0".into()))
                }
            }
            Kernel::Gaussian { strength, width } => {
                if *strength >= 0.0 && *width > 0.0 && strength.is_finite() && width.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(
                        "gaussian kernel needs strength >= 0 and width > 0".into(),
                    ))
                }
            }
        }
    }
}

/// Spatial modulation of a transition rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialGain {
    One,
    /// `g(x) = 1 / (1 + |x|^2)`.
    InverseQuadratic,
}

impl SpatialGain {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SpatialGain::One => 1.0,
            SpatialGain::InverseQuadratic => {
                1.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>())
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            SpatialGain::One => 0.0,
            SpatialGain::InverseQuadratic => INV_QUAD_GAIN_LIP,
        }
    }
}

/// One transition rate `alpha(x, mu_1..mu_H) =
/// g(x) (base + sum_l influence_l (eta_w ⋆ mu_l)(x))` with `eta_w` a Gaussian
/// bump normalized to `sup eta = 1`. Rates built this way are nonnegative,
/// bounded by `base + max_l influence_l` whenever the marginal masses sum to
/// one, and Lipschitz both in `x` and in each marginal w.r.t. the BL norm.
#[derive(Debug, Clone, PartialEq)]
pub struct RateLaw {
    pub base: f64,
    pub influence: Vec<f64>,
    pub mollifier_width: f64,
    pub gain: SpatialGain,
}

impl RateLaw {
    pub fn constant(base: f64) -> Self {
        RateLaw {
            base,
            influence: Vec::new(),
            mollifier_width: 1.0,
            gain: SpatialGain::One,
        }
    }

    pub fn zero() -> Self {
        RateLaw::constant(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.base == 0.0 && self.influence.iter().all(|c| *c == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base < 0.0 || !self.base.is_finite() {
            return Err(Error::InvalidArgument("rate base must be >= 0".into()));
        }
        if self.influence.iter().any(|c| *c < 0.0 || !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "rate influence coefficients must be >= 0".into(),
            ));
        }
        if self.mollifier_width <= 0.0 {
            return Err(Error::InvalidArgument("mollifier width must be > 0".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], marginals: &[DiscreteSpatialMeasure]) -> f64 {
        let mut acc = self.base;
        let s2 = 2.0 * self.mollifier_width * self.mollifier_width;
        for (l, c) in self.influence.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let mu = &marginals[l];
            let mut dens = 0.0;
            for (p, w) in mu.points().iter().zip(mu.weights()) {
                let r2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                dens += w * (-r2 / s2).exp();
            }
            acc += c * dens;
        }
        self.gain.eval(x) * acc
    }

    fn max_influence(&self) -> f64 {
        self.influence.iter().cloned().fold(0.0, f64::max)
    }

    fn sum_influence(&self) -> f64 {
        self.influence.iter().sum()
    }

    fn mollifier_lipschitz(&self) -> f64 {
        INV_SQRT_E / self.mollifier_width
    }

    /// Upper bound on the rate when the marginal masses sum to one.
    pub fn bound(&self) -> f64 {
        self.base + self.max_influence()
    }

    /// Lipschitz constant in `x`, marginal masses summing to one.
    pub fn lip_x(&self) -> f64 {
        self.gain.lipschitz() * self.bound() + self.max_influence() * self.mollifier_lipschitz()
    }

    /// `|Delta alpha| <= lip_bl * sum_l ||Delta mu_l||_BL`.
    pub fn lip_bl(&self) -> f64 {
        self.max_influence() * self.mollifier_lipschitz().max(1.0)
    }

    /// `|Delta alpha| <= lip_w1 * W1(Psi_1, Psi_2)`, using that each label
    /// marginal moves at most twice as fast as the joint measure.
    pub fn lip_w1(&self) -> f64 {
        2.0 * self.mollifier_lipschitz().max(1.0) * self.sum_influence()
    }
}

/// All off-diagonal transition rates of an `H`-label model.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    h: usize,
    laws: Vec<RateLaw>,
}

impl RateTable {
    pub fn zero(h: usize) -> Self {
        RateTable {
            h,
            laws: vec![RateLaw::zero(); h * h],
        }
    }

    pub fn label_count(&self) -> usize {
        self.h
    }

    /// Sets the rate for transitions from label `from` to label `to`.
    pub fn set(&mut self, from: usize, to: usize, law: RateLaw) -> Result<()> {
        if from == to {
            return Err(Error::InvalidArgument(
                "diagonal rates are determined by the off-diagonal ones".into(),
            ));
        }
        law.validate()?;
        self.laws[from * self.h + to] = law;
        Ok(())
    }

    pub fn law(&self, from: usize, to: usize) -> &RateLaw {
        &self.laws[from * self.h + to]
    }

    pub fn eval(&self, from: usize, to: usize, x: &[f64], marginals: &[DiscreteSpatialMeasure]) -> f64 {
        self.law(from, to).eval(x, marginals)
    }

    fn laws_off_diagonal(&self) -> impl Iterator<Item = &RateLaw> {
        self.laws
            .iter()
            .enumerate()
            .filter(move |(i, _)| i / self.h != i % self.h)
            .map(|(_, l)| l)
    }

    pub fn max_bound(&self) -> f64 {
        self.laws_off_diagonal().map(|l| l.bound()).fold(0.0, f64::max)
    }

    pub fn max_lip_x(&self) -> f64 {
        self.laws_off_diagonal().map(|l| l.lip_x()).fold(0.0, f64::max)
    }

    pub fn max_lip_w1(&self) -> f64 {
        self.laws_off_diagonal().map(|l| l.lip_w1()).fold(0.0, f64::max)
    }
}

/// Markov generator: nonnegative off-diagonal entries, zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    h: usize,
    q: Vec<f64>,
}

impl RateMatrix {
    /// Builds the generator from off-diagonal entries; diagonals are set to
    /// minus the row sums.
    pub fn from_off_diagonal(h: usize, off: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut q = vec![0.0; h * h];
        for row in 0..h {
            let mut sum = 0.0;
            for col in 0..h {
                if col == row {
                    continue;
                }
                let v = off(row, col);
                if !v.is_finite() {
                    return Err(Error::NonFinite("rate matrix entry".into()));
                }
                if v < 0.0 {
                    return Err(Error::NegativeRate(v));
                }
                q[row * h + col] = v;
                sum += v;
            }
            q[row * h + row] = -sum;
        }
        Ok(RateMatrix { h, q })
    }

    pub fn zero(h: usize) -> Self {
        RateMatrix {
            h,
            q: vec![0.0; h * h],
        }
    }

    pub fn size(&self) -> usize {
        self.h
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.q[row * self.h + col]
    }

    /// Largest exit rate `max_h |q_hh|` (uniformization constant).
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.h)
            .map(|i| -self.entry(i, i))
            .fold(0.0, f64::max)
    }

    /// Transpose action on a probability vector: the drift of the label
    /// probabilities, a signed measure with zero total mass.
    pub fn apply_adjoint(&self, lambda: &SimplexVector) -> SignedLabelMeasure {
        assert_eq!(lambda.len(), self.h);
        let mut out = vec![0.0; self.h];
        for (col, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for row in 0..self.h {
                acc += self.entry(row, col) * lambda.get(row);
            }
            *o = acc;
        }
        SignedLabelMeasure::new(out)
    }

    /// `exp(dt Q)` by scaling and squaring with a Taylor evaluation of order
    /// 16 on the scaled matrix (`||dt Q|| / 2^s <= 0.5`). The exact
    /// exponential of a generator is a stochastic matrix; round-off negatives
    /// are clamped and rows renormalized, with the raw minimum entry kept for
    /// diagnostics.
    pub fn transition_matrix(&self, dt: f64) -> Result<TransitionMatrix> {
        if !dt.is_finite() || dt < 0.0 {
            return Err(Error::InvalidArgument(format!("bad time step {dt}")));
        }
        let h = self.h;
        let mut a: Vec<f64> = self.q.iter().map(|v| v * dt).collect();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scaled generator".into()));
        }
        let inf_norm = (0..h)
            .map(|i| a[i * h..(i + 1) * h].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let squarings = if inf_norm <= 0.5 {
            0
        } else {
            (inf_norm / 0.5).log2().ceil() as u32
        };
        let scale = 0.5f64.powi(squarings as i32);
        for v in &mut a {
            *v *= scale;
        }

        // Horner evaluation of I + A + A^2/2! + ... + A^16/16!.
        let mut e = identity(h);
        for k in (1..=16u32).rev() {
            let mut next = identity(h);
            let prod = mat_mul(h, &a, &e);
            for (n, p) in next.iter_mut().zip(&prod) {
                *n += p / k as f64;
            }
            e = next;
        }
        for _ in 0..squarings {
            e = mat_mul(h, &e, &e);
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix exponential".into()));
        }

        let raw_min_entry = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let raw = e.clone();
        for v in &mut e {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        for row in 0..h {
            let s: f64 = e[row * h..(row + 1) * h].iter().sum();
            if s <= 0.0 {
                return Err(Error::NonFinite("degenerate exponential row".into()));
            }
            for v in &mut e[row * h..(row + 1) * h] {
                *v /= s;
            }
        }
        Ok(TransitionMatrix {
            h,
            s: e,
            raw,
            raw_min_entry,
        })
    }

    /// Checks the generator invariants up to `tol`.
    pub fn is_valid_generator(&self, tol: f64) -> bool {
        for row in 0..self.h {
            let mut sum = 0.0;
            for col in 0..self.h {
                let v = self.entry(row, col);
                sum += v;
                if row != col && v < 0.0 {
                    return false;
                }
                if row == col && v > tol {
                    return false;
                }
            }
            if sum.abs() > tol {
                return false;
            }
        }
        true
    }
}

fn identity(h: usize) -> Vec<f64> {
    let mut m = vec![0.0; h * h];
    for i in 0..h {
        m[i * h + i] = 1.0;
    }
    m
}

fn mat_mul(h: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h * h];
    for i in 0..h {
        for k in 0..h {
            let aik = a[i * h + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..h {
                out[i * h + j] += aik * b[k * h + j];
            }
        }
    }
    out
}

/// Stochastic matrix `exp(dt Q)`: rows sum to one, entries in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    h: usize,
    s: Vec<f64>,
    raw: Vec<f64>,
    /// Minimum entry before clamping; a healthy exponential keeps this above
    /// `-1e-13`.
    pub raw_min_entry: f64,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.h
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.s[row * self.h + col]
    }

    /// New label probabilities `S^T lambda`; structurally a valid simplex
    /// vector since `S` is stochastic.
    pub fn apply_transpose(&self, lambda: &SimplexVector) -> Result<SimplexVector> {
        SimplexVector::new(self.transpose_product(&self.s, lambda.weights()))
    }

    /// Same product against the unclamped exponential; used to monitor how
    /// negative the raw entries ever get.
    pub fn apply_transpose_raw(&self, lambda: &SimplexVector) -> Vec<f64> {
        self.transpose_product(&self.raw, lambda.weights())
    }

    /// Transpose action on a nonnegative mass vector (not necessarily
    /// normalized); preserves the total and the sign.
    pub fn apply_transpose_masses(&self, rho: &[f64]) -> Vec<f64> {
        self.transpose_product(&self.s, rho)
    }

    fn transpose_product(&self, m: &[f64], v: &[f64]) -> Vec<f64> {
        let h = self.h;
        let mut out = vec![0.0; h];
        for row in 0..h {
            let w = v[row];
            if w == 0.0 {
                continue;
            }
            for (col, o) in out.iter_mut().enumerate() {
                *o += m[row * h + col] * w;
            }
        }
        out
    }

    pub fn row_sum(&self, row: usize) -> f64 {
        self.s[row * self.h..(row + 1) * self.h].iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityMode {
    /// Four-kernel form: the velocity averages the per-label fields with the
    /// agent's own label probabilities.
    LabelWeighted,
    /// One kernel per source label, shared by all observers; the velocity
    /// does not depend on the agent's own label vector and the macroscopic
    /// system closes in the label marginals.
    LabelIndependent,
}

/// Full closure of the dynamics: kernel grid and transition-rate table.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    dim: usize,
    labels: LabelSpace,
    mode: VelocityMode,
    /// Row-major `H x H`; entry `(h, k)` drives an agent with label `k`
    /// through the marginal of label `h`. In label-independent mode the rows
    /// are constant in `k`.
    kernels: Vec<Kernel>,
    rates: RateTable,
}

impl ModelSpec {
    pub fn label_independent(
        dim: usize,
        labels: LabelSpace,
        per_label: Vec<Kernel>,
        rates: RateTable,
    ) -> Result<Self> {
        let h = labels.count();
        if per_label.len() != h {
            return Err(Error::Dimension(format!(
                "need {h} kernels, got {}",
                per_label.len()
            )));
        }
        let mut kernels = Vec::with_capacity(h * h);
        for src in &per_label {
            src.validate(dim)?;
            for _ in 0..h {
                kernels.push(src.clone());
            }
        }
        Self::build(dim, labels, VelocityMode::LabelIndependent, kernels, rates)
    }

    pub fn label_weighted(
        dim: usize,
        labels: LabelSpace,
        grid: Vec<Kernel>,
        rates: RateTable,
    ) -> Result<Self> {
        let h = labels.count();
        if grid.len() != h * h {
            return Err(Error::Dimension(format!(
                "need {} kernels, got {}",
                h * h,
                grid.len()
            )));
        }
        for k in &grid {
            k.validate(dim)?;
        }
        Self::build(dim, labels, VelocityMode::LabelWeighted, grid, rates)
    }

    fn build(
        dim: usize,
        labels: LabelSpace,
        mode: VelocityMode,
        kernels: Vec<Kernel>,
        rates: RateTable,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("spatial dimension must be >= 1".into()));
        }
        if rates.label_count() != labels.count() {
            return Err(Error::Dimension(
                "rate table and label space disagree".into(),
            ));
        }
        Ok(ModelSpec {
            dim,
            labels,
            mode,
            kernels,
            rates,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.count()
    }

    pub fn mode(&self) -> VelocityMode {
        self.mode
    }

    pub fn rates(&self) -> &RateTable {
        &self.rates
    }

    /// Kernel acting on an agent with label `own` through the marginal of
    /// label `source`.
    pub fn kernel(&self, source: usize, own: usize) -> &Kernel {
        &self.kernels[source * self.label_count() + own]
    }

    /// Velocity field at `y` driven by the empirical measure `p`:
    /// `sum_{h,k} lambda_k (K^{hk} ⋆ mu^h)(x)`.
    pub fn eval_velocity(&self, y: &AgentState, p: &EmpiricalMeasure) -> Result<Vec<f64>> {
        if y.dim() != self.dim || p.dim() != self.dim {
            return Err(Error::Dimension("agent/model dimension mismatch".into()));
        }
        if y.lambda.len() != self.label_count() || p.label_count() != self.label_count() {
            return Err(Error::Dimension("agent/model label count mismatch".into()));
        }
        Ok(self.velocity_from_marginals(&y.x, &y.lambda, &p.all_marginals()))
    }

    /// Same velocity with the marginals already extracted (the integrator
    /// freezes them once per step).
    pub fn velocity_from_marginals(
        &self,
        x: &[f64],
        lambda: &SimplexVector,
        marginals: &[DiscreteSpatialMeasure],
    ) -> Vec<f64> {
        let h = self.label_count();
        let mut out = vec![0.0; self.dim];
        let mut diff = vec![0.0; self.dim];
        match self.mode {
            VelocityMode::LabelIndependent => {
                for (src, mu) in marginals.iter().enumerate().take(h) {
                    convolve_into(self.kernel(src, 0), mu, x, 1.0, &mut diff, &mut out);
                }
            }
            VelocityMode::LabelWeighted => {
                for own in 0..h {
                    let lk = lambda.get(own);
                    if lk == 0.0 {
                        continue;
                    }
                    for (src, mu) in marginals.iter().enumerate().take(h) {
                        convolve_into(self.kernel(src, own), mu, x, lk, &mut diff, &mut out);
                    }
                }
            }
        }
        out
    }

    /// Generator at position `x` given the label marginals: off-diagonal
    /// entries are the rate laws, diagonals minus the row sums.
    pub fn eval_rate_matrix(
        &self,
        x: &[f64],
        marginals: &[DiscreteSpatialMeasure],
    ) -> Result<RateMatrix> {
        let h = self.label_count();
        if marginals.len() != h {
            return Err(Error::Dimension(format!(
                "need {h} marginals, got {}",
                marginals.len()
            )));
        }
        RateMatrix::from_off_diagonal(h, |from, to| self.rates.eval(from, to, x, marginals))
    }

    /// Largest exit rate over admissible states (marginal masses summing to
    /// one); bounds every generator diagonal produced by this model.
    pub fn uniformization_bound(&self) -> f64 {
        (self.label_count().saturating_sub(1)) as f64 * self.rates.max_bound()
    }

    /// Sublinearity constant of the velocity field alone:
    /// `|v(y)| <= M_v (1 + |x| + m_1(Psi))`.
    pub fn velocity_sublinearity(&self) -> f64 {
        let h = self.label_count();
        let mut m_v: f64 = 0.0;
        for own in 0..h {
            let col: f64 = (0..h).map(|src| self.kernel(src, own).sublinear_bound()).sum();
            m_v = m_v.max(col);
        }
        m_v
    }

    /// Lipschitz constant of the velocity in the driving measure (w.r.t. the
    /// product-space Wasserstein distance) on the state ball of the given
    /// radius; each label marginal moves at most twice as fast as the joint
    /// measure in BL.
    pub fn velocity_w1_lipschitz(&self, radius: f64) -> f64 {
        let h = self.label_count();
        let two_r = 2.0 * radius;
        let mut lip: f64 = 0.0;
        for own in 0..h {
            let col: f64 = (0..h)
                .map(|src| {
                    let k = self.kernel(src, own);
                    k.sup_on_ball(two_r).max(k.lipschitz_bound(two_r))
                })
                .sum();
            lip = lip.max(col);
        }
        2.0 * (self.dim as f64).sqrt() * lip
    }

    /// Constant `M` with `||b(y)|| <= M (1 + ||y|| + m_1(Psi))` for the full
    /// coupled field (velocity plus label drift).
    pub fn sublinearity_constant(&self) -> f64 {
        // Label drift: ||Q^T lambda||_BL <= ||Q^T lambda||_TV <= 2 delta.
        self.velocity_sublinearity() + 2.0 * self.uniformization_bound()
    }

    /// Lipschitz constant of the coupled field on the state ball of the given
    /// radius, valid both for the state argument and for the driving measure
    /// in Wasserstein distance. Conservative but computable, which is what
    /// the stability envelope needs.
    pub fn lipschitz_constant(&self, radius: f64) -> f64 {
        let h = self.label_count();
        let d_sqrt = (self.dim as f64).sqrt();
        let two_r = 2.0 * radius;

        // Velocity, state argument.
        let mut lip_x: f64 = 0.0;
        let mut sup_field: f64 = 0.0;
        for own in 0..h {
            let mut worst_lip: f64 = 0.0;
            let mut col_sup = 0.0;
            for src in 0..h {
                let k = self.kernel(src, own);
                worst_lip = worst_lip.max(k.lipschitz_bound(two_r));
                col_sup += k.sup_on_ball(two_r);
            }
            lip_x = lip_x.max(worst_lip);
            sup_field = sup_field.max(col_sup);
        }
        let lip_lambda = match self.mode {
            VelocityMode::LabelIndependent => 0.0,
            VelocityMode::LabelWeighted => {
                let gap = self.labels.min_gap().unwrap_or(f64::INFINITY);
                d_sqrt * sup_field.max(2.0 * sup_field / gap)
            }
        };

        // Velocity, measure argument.
        let lip_w1_v = self.velocity_w1_lipschitz(radius);

        // Label drift. TV-to-BL conversion for zero-mass measures costs
        // 2 / min(gap, 2).
        let (tv_to_bl, off_diag) = if h >= 2 {
            let gap = self.labels.min_gap().expect("h >= 2");
            (2.0 / gap.min(2.0), (h - 1) as f64)
        } else {
            (0.0, 0.0)
        };
        let lip_t_lambda = 2.0 * self.uniformization_bound() * tv_to_bl;
        let lip_t_x = 2.0 * off_diag * self.rates.max_lip_x();
        let lip_t_w1 = 2.0 * off_diag * self.rates.max_lip_w1();

        let state_side = lip_x + lip_lambda + lip_t_lambda + lip_t_x;
        let measure_side = lip_w1_v + lip_t_w1;
        state_side.max(measure_side)
    }
}

fn convolve_into(
    kernel: &Kernel,
    mu: &DiscreteSpatialMeasure,
    x: &[f64],
    scale: f64,
    diff: &mut [f64],
    out: &mut [f64],
) {
    if matches!(kernel, Kernel::Zero) {
        return;
    }
    for (p, w) in mu.points().iter().zip(mu.weights()) {
        if *w == 0.0 {
            continue;
        }
        for (d, (a, b)) in diff.iter_mut().zip(x.iter().zip(p)) {
            *d = a - b;
        }
        kernel.accumulate(diff, w * scale, out);
    }
}

/// Convolution `(K ⋆ mu)(x)` against a weighted atom set.
pub fn convolve(kernel: &Kernel, mu: &DiscreteSpatialMeasure, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut diff = vec![0.0; x.len()];
    convolve_into(kernel, mu, x, 1.0, &mut diff, &mut out);
    out
}

/// One row of the structural-assumption report.
#[derive(Debug, Clone)]
pub struct AssumptionCheck {
    pub name: String,
    pub analytic: f64,
    pub empirical: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub violations: usize,
}

impl AssumptionReport {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

/// Monte-Carlo spot check of the structural bounds: samples states and
/// empirical measures in the radius-`r` ball and compares the observed
/// Lipschitz and sublinearity quotients of every kernel and rate law against
/// their analytic constants (flagging anything 1% above).
pub fn validate_assumptions(
    spec: &ModelSpec,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if radius <= 0.0 || samples == 0 {
        return Err(Error::InvalidArgument(
            "validation needs radius > 0 and samples >= 1".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let h = spec.label_count();
    let d = spec.dim();
    let mut checks = Vec::new();
    let slack = 1.01;

    let sample_point = |rng: &mut ChaCha12Rng| -> Vec<f64> {
        // Uniform direction, radius biased toward the boundary.
        loop {
            let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            if euclidean_norm(&v) <= 1.0 && euclidean_norm(&v) > 1e-12 {
                return v.iter().map(|c| c * radius).collect();
            }
        }
    };

    // Kernels: one check per distinct grid slot.
    let slots: Vec<(usize, usize)> = match spec.mode() {
        VelocityMode::LabelIndependent => (0..h).map(|src| (src, 0)).collect(),
        VelocityMode::LabelWeighted => (0..h)
            .flat_map(|src| (0..h).map(move |own| (src, own)))
            .collect(),
    };
    for (src, own) in slots {
        let k = spec.kernel(src, own);
        let mut emp_lip: f64 = 0.0;
        let mut emp_sub: f64 = 0.0;
        for _ in 0..samples {
            let x1 = sample_point(&mut rng);
            let x2 = sample_point(&mut rng);
            let k1 = k.eval(&x1);
            let k2 = k.eval(&x2);
            let dx = crate::measures::euclidean_dist(&x1, &x2);
            if dx > 1e-9 {
                emp_lip = emp_lip.max(crate::measures::euclidean_dist(&k1, &k2) / dx);
            }
            emp_sub = emp_sub.max(euclidean_norm(&k1) / (1.0 + euclidean_norm(&x1)));
        }
        let lip = k.lipschitz_bound(2.0 * radius);
        let sub = k.sublinear_bound();
        checks.push(AssumptionCheck {
            name: format!("kernel[{src}->{own}] lipschitz"),
            analytic: lip,
            empirical: emp_lip,
            ok: emp_lip <= lip * slack + 1e-12,
        });
        checks.push(AssumptionCheck {
            name: format!("kernel[{src}->{own}] sublinearity"),
            analytic: sub,
            empirical: emp_sub,
            ok: emp_sub <= sub * slack + 1e-12,
        });
    }

    // Random populations supported in the ball, for the measure-argument
    // quotients.
    let random_population = |rng: &mut ChaCha12Rng| -> EmpiricalMeasure {
        let n = 12;
        let mut agents = Vec::with_capacity(n);
        for _ in 0..n {
            let x = sample_point(rng);
            let raw: Vec<f64> = (0..h).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
            let sum: f64 = raw.iter().sum();
            let lam = SimplexVector::new(raw.iter().map(|v| v / sum).collect()).unwrap();
            agents.push(AgentState::new(x, lam).unwrap());
        }
        EmpiricalMeasure::new(agents).unwrap()
    };
    let random_marginals =
        |rng: &mut ChaCha12Rng| -> Vec<DiscreteSpatialMeasure> { random_population(rng).all_marginals() };

    // Velocity field as a whole: sublinearity in the state and Lipschitz
    // dependence on the driving measure.
    {
        let mut emp_sub: f64 = 0.0;
        let mut emp_w1: f64 = 0.0;
        let field_samples = (samples / 4).max(8);
        for _ in 0..field_samples {
            let p1 = random_population(&mut rng);
            let p2 = random_population(&mut rng);
            let y = p1.agent(0).clone();
            let v1 = spec.eval_velocity(&y, &p1)?;
            let norm_y = crate::metrics::state_norm(spec.labels(), &y)?;
            let m1 = crate::metrics::first_moment(spec.labels(), &p1)?;
            emp_sub = emp_sub.max(euclidean_norm(&v1) / (1.0 + norm_y + m1));
            let v2 = spec.eval_velocity(&y, &p2)?;
            let w1 = crate::metrics::w1_product(spec.labels(), &p1, &p2)?;
            if w1 > 1e-9 {
                emp_w1 =
                    emp_w1.max(crate::measures::euclidean_dist(&v1, &v2) / w1);
            }
        }
        let sub = spec.velocity_sublinearity();
        let lip = spec.velocity_w1_lipschitz(radius);
        checks.push(AssumptionCheck {
            name: "velocity sublinearity".into(),
            analytic: sub,
            empirical: emp_sub,
            ok: emp_sub <= sub * slack + 1e-12,
        });
        checks.push(AssumptionCheck {
            name: "velocity lipschitz_w1".into(),
            analytic: lip,
            empirical: emp_w1,
            ok: emp_w1 <= lip * slack + 1e-12,
        });
    }

    for from in 0..h {
        for to in 0..h {
            if from == to || spec.rates().law(from, to).is_zero() {
                continue;
            }
            let law = spec.rates().law(from, to);
            let mut emp_lip_x: f64 = 0.0;
            let mut emp_lip_bl: f64 = 0.0;
            let mut emp_max: f64 = 0.0;
            for _ in 0..samples {
                let m1 = random_marginals(&mut rng);
                let m2 = random_marginals(&mut rng);
                let x1 = sample_point(&mut rng);
                let x2 = sample_point(&mut rng);
                let a11 = law.eval(&x1, &m1);
                let a21 = law.eval(&x2, &m1);
                emp_max = emp_max.max(a11);
                let dx = crate::measures::euclidean_dist(&x1, &x2);
                if dx > 1e-9 {
                    emp_lip_x = emp_lip_x.max((a11 - a21).abs() / dx);
                }
                let a12 = law.eval(&x1, &m2);
                let mut dmu = 0.0;
                for l in 0..h {
                    dmu += bl_distance_for_validation(&m1[l], &m2[l])?;
                }
                if dmu > 1e-9 {
                    emp_lip_bl = emp_lip_bl.max((a11 - a12).abs() / dmu);
                }
            }
            checks.push(AssumptionCheck {
                name: format!("rate[{from}->{to}] bound"),
                analytic: law.bound(),
                empirical: emp_max,
                ok: emp_max <= law.bound() * slack + 1e-12,
            });
            checks.push(AssumptionCheck {
                name: format!("rate[{from}->{to}] lipschitz_x"),
                analytic: law.lip_x(),
                empirical: emp_lip_x,
                ok: emp_lip_x <= law.lip_x() * slack + 1e-12,
            });
            checks.push(AssumptionCheck {
                name: format!("rate[{from}->{to}] lipschitz_bl"),
                analytic: law.lip_bl(),
                empirical: emp_lip_bl,
                ok: emp_lip_bl <= law.lip_bl() * slack + 1e-12,
            });
        }
    }

    let violations = checks.iter().filter(|c| !c.ok).count();
    Ok(AssumptionReport { checks, violations })
}

fn bl_distance_for_validation(
    a: &DiscreteSpatialMeasure,
    b: &DiscreteSpatialMeasure,
) -> Result<f64> {
    crate::metrics::bl_distance(a, b)
}
