//! Finite-state Markov jump process: model, transition semigroup, exact path
//! simulation and stationary law.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::linalg;

/// Uniformization keeps the Poisson mass of each chunk below this value and
/// composes chunks through the semigroup property.
const MAX_CHUNK_MASS: f64 = 10.0;

/// Relative tail mass at which the Poisson series is truncated.
const UNIFORMIZATION_TAIL: f64 = 1e-13;

/// Markov jump process on `K` states with levels `a_i`, off-diagonal jump
/// rates `nu_ij` and an initial distribution.
///
/// Exit rates `nu_i` are always derived from the off-diagonal rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct ChainModel {
    levels: Vec<f64>,
    rates: DMatrix<f64>,
    initial: Vec<f64>,
}

/// JSON layout of a model file. `rates[i][i]` is ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    levels: Vec<f64>,
    rates: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

impl TryFrom<ModelDocument> for ChainModel {
    type Error = FilterError;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        ChainModel::new(doc.levels, doc.rates, doc.initial)
    }
}

impl From<ChainModel> for ModelDocument {
    fn from(model: ChainModel) -> Self {
        let k = model.k();
        ModelDocument {
            rates: (0..k)
                .map(|i| (0..k).map(|j| model.rates[(i, j)]).collect())
                .collect(),
            levels: model.levels,
            initial: model.initial,
        }
    }
}

impl ChainModel {
    /// Builds a model after checking shapes only. Use [`validate_model`] for
    /// the semantic invariants.
    pub fn new(levels: Vec<f64>, rates: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let k = levels.len();
        if k == 0 {
            return Err(FilterError::InvalidModel("at least one state is required".into()));
        }
        if rates.len() != k || rates.iter().any(|row| row.len() != k) {
            return Err(FilterError::InvalidModel(format!(
                "rates must be a {k}x{k} matrix"
            )));
        }
        if initial.len() != k {
            return Err(FilterError::InvalidModel(format!(
                "initial distribution has {} entries, expected {k}",
                initial.len()
            )));
        }
        let rates = DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { rates[i][j] });
        Ok(ChainModel {
            levels,
            rates,
            initial,
        })
    }

    /// Shape-checked and semantically validated model.
    pub fn validated(levels: Vec<f64>, rates: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let model = Self::new(levels, rates, initial)?;
        let report = validate_model(&model);
        if report.passed() {
            Ok(model)
        } else {
            Err(FilterError::InvalidModel(report.to_string()))
        }
    }

    /// The symmetric random telegraph signal: levels `(1, -1)`, switching
    /// rate `nu` in both directions, uniform initial law.
    pub fn telegraph(nu: f64) -> Self {
        Self::new(
            vec![1.0, -1.0],
            vec![vec![0.0, nu], vec![nu, 0.0]],
            vec![0.5, 0.5],
        )
        .expect("telegraph shape is fixed")
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.k() {
            return Err(FilterError::InvalidModel("initial distribution length".into()));
        }
        self.initial = initial;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, state: usize) -> f64 {
        self.levels[state]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Off-diagonal rate `nu_ij`; zero on the diagonal.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[(i, j)]
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        (0..self.k()).filter(|&j| j != i).map(|j| self.rates[(i, j)]).sum()
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.k()).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    /// Generator `Q` with off-diagonals `nu_ij` and diagonal `-nu_i`.
    pub fn generator(&self) -> DMatrix<f64> {
        let mut q = self.rates.clone();
        for i in 0..self.k() {
            q[(i, i)] = -self.exit_rate(i);
        }
        q
    }

    /// `(Q^T v)_j = sum_{i != j} nu_ij v_i - nu_j v_j`, the forward-equation
    /// drift applied to an arbitrary vector.
    pub fn forward_drift(&self, v: &[f64]) -> Vec<f64> {
        let k = self.k();
        (0..k)
            .map(|j| {
                let inflow: f64 = (0..k)
                    .filter(|&i| i != j)
                    .map(|i| self.rates[(i, j)] * v[i])
                    .sum();
                inflow - self.exit_rate(j) * v[j]
            })
            .collect()
    }

    /// Mean level under a distribution over states.
    pub fn mean_level(&self, p: &[f64]) -> f64 {
        self.levels.iter().zip(p).map(|(a, p)| a * p).sum()
    }

    /// Switching rate if this is the symmetric telegraph model.
    pub fn telegraph_rate(&self) -> Option<f64> {
        if self.k() == 2
            && self.levels[0] == 1.0
            && self.levels[1] == -1.0
            && self.rates[(0, 1)] == self.rates[(1, 0)]
        {
            Some(self.rates[(0, 1)])
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeRate { from: usize, to: usize, value: f64 },
    NonFiniteRate { from: usize, to: usize },
    NonFiniteLevel { state: usize },
    InitialOutOfRange { state: usize, value: f64 },
    InitialSum { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeRate { from, to, value } => {
                write!(f, "negative rate nu[{from}][{to}] = {value}")
            }
            Violation::NonFiniteRate { from, to } => write!(f, "non-finite rate nu[{from}][{to}]"),
            Violation::NonFiniteLevel { state } => write!(f, "non-finite level a[{state}]"),
            Violation::InitialOutOfRange { state, value } => {
                write!(f, "initial probability p[{state}] = {value} outside [0, 1]")
            }
            Violation::InitialSum { sum } => {
                write!(f, "initial distribution sums to {sum}, not 1")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Exit rates recomputed from the off-diagonal rates.
    pub exit_rates: Vec<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "pass");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "fail: {}", msgs.join("; "))
    }
}

pub fn validate_model(model: &ChainModel) -> ValidationReport {
    let k = model.k();
    let mut violations = Vec::new();
    for i in 0..k {
        if !model.levels[i].is_finite() {
            violations.push(Violation::NonFiniteLevel { state: i });
        }
        for j in (0..k).filter(|&j| j != i) {
            let v = model.rates[(i, j)];
            if !v.is_finite() {
                violations.push(Violation::NonFiniteRate { from: i, to: j });
            } else if v < 0.0 {
                violations.push(Violation::NegativeRate {
                    from: i,
                    to: j,
                    value: v,
                });
            }
        }
    }
    for (i, &p) in model.initial.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            violations.push(Violation::InitialOutOfRange { state: i, value: p });
        }
    }
    let sum: f64 = model.initial.iter().sum();
    if !((sum - 1.0).abs() <= 1e-12) {
        violations.push(Violation::InitialSum { sum });
    }
    ValidationReport {
        violations,
        exit_rates: (0..k).map(|i| model.exit_rate(i)).collect(),
    }
}

/// `P(h) = exp(hQ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub horizon: f64,
    pub entries: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `p^T P(h)`.
    pub fn propagate(&self, p: &[f64]) -> Vec<f64> {
        linalg::row_times(p, &self.entries)
    }
}

/// Transition matrix by uniformization: with `lambda = max_i nu_i` and the
/// stochastic matrix `U = I + Q / lambda`,
/// `exp(hQ) = sum_n Poisson(n; lambda h) U^n`.
///
/// Long horizons are split into chunks of Poisson mass at most 10 and
/// recombined by binary powering, so the weights never underflow.
pub fn transition_matrix(model: &ChainModel, h: f64) -> Result<TransitionMatrix> {
    if !h.is_finite() {
        return Err(FilterError::NonFinite("transition horizon"));
    }
    if h < 0.0 {
        return Err(FilterError::InvalidParameter(format!(
            "transition horizon must be >= 0, got {h}"
        )));
    }
    let k = model.k();
    let lambda = model.max_exit_rate();
    if h == 0.0 || lambda == 0.0 {
        return Ok(TransitionMatrix {
            horizon: h,
            entries: DMatrix::identity(k, k),
        });
    }
    let uniform = DMatrix::<f64>::identity(k, k) + model.generator() / lambda;
    let chunks = (lambda * h / MAX_CHUNK_MASS).ceil().max(1.0) as u64;
    let chunk = poisson_mixture(&uniform, lambda * h / chunks as f64);
    let entries = if chunks == 1 {
        chunk
    } else {
        linalg::matrix_power(&chunk, chunks)
    };
    Ok(TransitionMatrix {
        horizon: h,
        entries,
    })
}

fn poisson_mixture(uniform: &DMatrix<f64>, mass: f64) -> DMatrix<f64> {
    let k = uniform.nrows();
    let mut weight = (-mass).exp();
    let mut total = weight;
    let mut power = DMatrix::<f64>::identity(k, k);
    let mut acc = &power * weight;
    let mut n = 0u32;
    while 1.0 - total > UNIFORMIZATION_TAIL && n < 10_000 {
        n += 1;
        weight *= mass / n as f64;
        power = &power * uniform;
        acc += &power * weight;
        total += weight;
    }
    // Spread the truncated tail proportionally so rows sum to one.
    acc / total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub state: usize,
}

/// Right-continuous piecewise-constant trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    initial: usize,
    jumps: Vec<Jump>,
    horizon: f64,
}

impl JumpPath {
    pub fn new(initial: usize, jumps: Vec<Jump>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(FilterError::InvalidParameter(format!(
                "path horizon must be positive, got {horizon}"
            )));
        }
        let mut prev_time = 0.0;
        let mut prev_state = initial;
        for jump in &jumps {
            if !(jump.time > prev_time) || jump.time > horizon {
                return Err(FilterError::InvalidParameter(format!(
                    "jump times must increase within (0, {horizon}], got {}",
                    jump.time
                )));
            }
            if jump.state == prev_state {
                return Err(FilterError::InvalidParameter(format!(
                    "jump at {} does not change state",
                    jump.time
                )));
            }
            prev_time = jump.time;
            prev_state = jump.state;
        }
        Ok(JumpPath {
            initial,
            jumps,
            horizon,
        })
    }

    pub fn constant(state: usize, horizon: f64) -> Result<Self> {
        Self::new(state, Vec::new(), horizon)
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// State at time `t`; at a jump instant this is the post-jump state.
    pub fn state_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(FilterError::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.state_at_unchecked(t))
    }

    fn state_at_unchecked(&self, t: f64) -> usize {
        let passed = self.jumps.partition_point(|j| j.time <= t);
        if passed == 0 {
            self.initial
        } else {
            self.jumps[passed - 1].state
        }
    }

    /// Exact integral of `a_{x(s)}` over `[t0, t1]`, summed over dwell
    /// segments.
    pub fn integrate_level(&self, model: &ChainModel, t0: f64, t1: f64) -> Result<f64> {
        if !(0.0 <= t0 && t0 <= t1 && t1 <= self.horizon) {
            return Err(FilterError::BadInterval {
                t0,
                t1,
                horizon: self.horizon,
            });
        }
        let first = self.jumps.partition_point(|j| j.time <= t0);
        let mut state = if first == 0 {
            self.initial
        } else {
            self.jumps[first - 1].state
        };
        let mut cursor = t0;
        let mut total = 0.0;
        for jump in self.jumps[first..].iter().take_while(|j| j.time < t1) {
            total += model.level(state) * (jump.time - cursor);
            cursor = jump.time;
            state = jump.state;
        }
        total += model.level(state) * (t1 - cursor);
        Ok(total)
    }
}

/// Exact simulation: exponential holding times with rate `nu_i`, next
/// state drawn with probabilities `nu_ij / nu_i`.
pub fn simulate_jump_path<R: Rng + ?Sized>(
    model: &ChainModel,
    horizon: f64,
    rng: &mut R,
) -> Result<JumpPath> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(FilterError::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let initial = sample_categorical(model.initial(), rng);
    let mut state = initial;
    let mut t = 0.0;
    let mut jumps = Vec::new();
    loop {
        let exit = model.exit_rate(state);
        if exit <= 0.0 {
            break;
        }
        let hold: f64 = Exp1.sample(rng);
        t += hold / exit;
        if t > horizon {
            break;
        }
        let weights: Vec<f64> = (0..model.k())
            .map(|j| if j == state { 0.0 } else { model.rate(state, j) })
            .collect();
        state = sample_categorical(&weights, rng);
        jumps.push(Jump { time: t, state });
    }
    JumpPath::new(initial, jumps, horizon)
}

/// Draws an index with probability proportional to `weights`.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// States that can reach `target` (`reverse = true`) or be reached from it.
fn reachable(model: &ChainModel, target: usize, reverse: bool) -> Vec<bool> {
    let k = model.k();
    let mut seen = vec![false; k];
    let mut stack = vec![target];
    seen[target] = true;
    while let Some(s) = stack.pop() {
        for other in 0..k {
            let rate = if reverse {
                model.rate(other, s)
            } else {
                model.rate(s, other)
            };
            if other != s && rate > 0.0 && !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    seen
}

/// Unique invariant law of an irreducible chain, from `Q^T pi = 0` with one
/// equation replaced by `sum(pi) = 1`.
pub fn stationary_distribution(model: &ChainModel) -> Result<Vec<f64>> {
    let k = model.k();
    let forward = reachable(model, 0, false);
    let backward = reachable(model, 0, true);
    let unreachable: Vec<usize> = (0..k).filter(|&i| !(forward[i] && backward[i])).collect();
    if !unreachable.is_empty() {
        return Err(FilterError::Reducible { unreachable });
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let mut system = model.generator().transpose();
    for j in 0..k {
        system[(k - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k);
    rhs[k - 1] = 1.0;
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FilterError::InvalidModel("singular stationary system".into()))?;
    Ok(solution.iter().map(|v| v.max(0.0)).collect())
}
