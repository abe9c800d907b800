//! Independent ground truth for the filters.
//!
//! - A discrete-time Bayes forward filter on the observation increments,
//!   using the exact transition matrix over one step and a Gaussian
//!   likelihood that ignores within-step jumps.
//! - A path-space quadrature of the unnormalized weights for small
//!   instances: enumerate jump sequences, integrate over ordered jump times
//!   with tensor Gauss–Legendre rules, and weight each path by
//!   `exp(-(1/2 beta^2) \int x^2 ds + (1/beta^2) \int x dy)`.
//! - A Monte Carlo check that the filter output is unbiased for the
//!   unconditional law (tower property).

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{simulate_jump_path, transition_matrix, ChainModel, TransitionMatrix};
use crate::error::{FilterError, Result};
use crate::linalg;
use crate::quadrature::gauss_legendre_unit;
use crate::rng::{stream, StreamRole};
use crate::scheme::{run_scheme, SchemeOptions};
use crate::signalpath::{synthesize_observations, ObservationGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBayesState {
    pub p: Vec<f64>,
    pub step: usize,
}

/// `p'_j ∝ sum_i p_i P_ij exp(log_likelihood_j)`, normalized after a
/// max-shift of the log-likelihoods.
pub fn bayes_update(prior: &[f64], transition: &TransitionMatrix, log_likelihood: &[f64]) -> Vec<f64> {
    let predicted = transition.propagate(prior);
    let max = log_likelihood.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut post: Vec<f64> = predicted
        .iter()
        .zip(log_likelihood)
        .map(|(p, l)| p * (l - max).exp())
        .collect();
    let sum: f64 = post.iter().sum();
    post.iter_mut().for_each(|v| *v /= sum);
    post
}

pub fn bayes_forward_step_with(
    state: &DiscreteBayesState,
    transition: &TransitionMatrix,
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
) -> Result<DiscreteBayesState> {
    if !dy.is_finite() {
        return Err(FilterError::NonFinite("observation increment"));
    }
    let variance = beta * beta * dt;
    let log_likelihood: Vec<f64> = model
        .levels()
        .iter()
        .map(|a| -(dy - a * dt).powi(2) / (2.0 * variance))
        .collect();
    Ok(DiscreteBayesState {
        p: bayes_update(&state.p, transition, &log_likelihood),
        step: state.step + 1,
    })
}

pub fn bayes_forward_step(
    state: &DiscreteBayesState,
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
) -> Result<DiscreteBayesState> {
    if !(dt > 0.0) {
        return Err(FilterError::InvalidParameter(format!("step must be positive, got {dt}")));
    }
    let transition = transition_matrix(model, dt)?;
    bayes_forward_step_with(state, &transition, model, beta, dt, dy)
}

/// `P(N > max_jumps)` for `N ~ Poisson(rate * horizon)`.
pub fn poisson_tail(rate: f64, horizon: f64, max_jumps: usize) -> f64 {
    let mass = rate * horizon;
    if mass == 0.0 {
        return 0.0;
    }
    let mut term = (-mass).exp();
    for k in 1..=max_jumps {
        term *= mass / k as f64;
    }
    let mut tail = 0.0;
    let mut k = max_jumps;
    loop {
        k += 1;
        term *= mass / k as f64;
        tail += term;
        if term <= 1e-18 * tail || k > max_jumps + 10_000 {
            break;
        }
    }
    tail
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathspaceOptions {
    pub max_jumps: usize,
    pub quad_points: usize,
    /// Refuse to run when the Poisson bound on the probability of more than
    /// `max_jumps` jumps exceeds this.
    pub truncation_tolerance: f64,
    /// `false` replaces the observation weight by 1, leaving only path
    /// probabilities (the infinite-noise limit).
    pub use_likelihood: bool,
}

impl Default for PathspaceOptions {
    fn default() -> Self {
        PathspaceOptions {
            max_jumps: 2,
            quad_points: 24,
            truncation_tolerance: 1e-4,
            use_likelihood: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathspaceResult {
    /// Normalized conditional distribution at the horizon.
    pub p: Vec<f64>,
    /// `log psi_j(T)` up to truncation and quadrature error.
    pub log_psi: Vec<f64>,
    pub truncation_bound: f64,
}

/// Running log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct LogAccumulator {
    max: f64,
    sum: f64,
}

impl LogAccumulator {
    fn new() -> Self {
        LogAccumulator {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, value: f64) {
        if value == f64::NEG_INFINITY {
            return;
        }
        if value > self.max {
            self.sum = self.sum * (self.max - value).exp() + 1.0;
            self.max = value;
        } else {
            self.sum += (value - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// `y(t)` with the stored increments spread uniformly over each cell.
struct InterpolatedY<'a> {
    cumulative: Vec<f64>,
    grid: &'a ObservationGrid,
}

impl InterpolatedY<'_> {
    fn at(&self, t: f64) -> f64 {
        let dt = self.grid.dt();
        let n = self.grid.n_steps();
        let r = ((t / dt).floor() as usize).min(n - 1);
        let frac = (t - r as f64 * dt) / dt;
        self.cumulative[r] + frac * self.grid.increments()[r]
    }
}

/// Unnormalized weights `psi_j(T)` by explicit integration over all paths
/// with at most `max_jumps` jumps, and their normalization.
///
/// Each path from `a_i` with jumps at `0 < tau_1 < ... < tau_m < T` has
/// density `prod nu_{s_{k-1} s_k} exp(-sum_k nu_{s_k} * dwell_k)`. The
/// ordered times are mapped from the unit cube by
/// `tau_k = tau_{k-1} + (T - tau_{k-1}) u_k` with Jacobian
/// `prod (T - tau_{k-1})`.
pub fn pathspace_expectation(
    model: &ChainModel,
    grid: &ObservationGrid,
    horizon: f64,
    options: PathspaceOptions,
) -> Result<PathspaceResult> {
    let k = model.k();
    if k > 3 {
        return Err(FilterError::OraclePrecondition(format!("K = {k} exceeds 3")));
    }
    if options.max_jumps > 3 {
        return Err(FilterError::OraclePrecondition(format!(
            "max_jumps = {} exceeds 3",
            options.max_jumps
        )));
    }
    if options.quad_points == 0 {
        return Err(FilterError::OraclePrecondition("quad_points must be positive".into()));
    }
    if !(horizon > 0.0) || horizon > grid.horizon() * (1.0 + 1e-12) {
        return Err(FilterError::OraclePrecondition(format!(
            "horizon {horizon} must lie in (0, {}]",
            grid.horizon()
        )));
    }
    let truncation_bound = poisson_tail(model.max_exit_rate(), horizon, options.max_jumps);
    if truncation_bound > options.truncation_tolerance {
        return Err(FilterError::OraclePrecondition(format!(
            "probability of more than {} jumps is bounded by {truncation_bound:.3e}, above {:.1e}",
            options.max_jumps, options.truncation_tolerance
        )));
    }

    let y = InterpolatedY {
        cumulative: grid.cumulative(),
        grid,
    };
    let b2 = grid.beta() * grid.beta();
    let (nodes, weights) = gauss_legendre_unit(options.quad_points);
    let mut acc = vec![LogAccumulator::new(); k];

    // Log-weight of one piecewise-constant path given its states and the
    // segment boundaries 0 = t_0 < ... < t_{m+1} = T.
    let path_log_weight = |states: &[usize], bounds: &[f64]| -> f64 {
        let mut total = 0.0;
        for (seg, &s) in states.iter().enumerate() {
            let (t0, t1) = (bounds[seg], bounds[seg + 1]);
            let len = t1 - t0;
            total -= model.exit_rate(s) * len;
            if options.use_likelihood {
                let a = model.level(s);
                total += -a * a * len / (2.0 * b2) + a * (y.at(t1) - y.at(t0)) / b2;
            }
        }
        for w in states.windows(2) {
            total += model.rate(w[0], w[1]).ln();
        }
        total
    };

    let mut states = Vec::with_capacity(options.max_jumps + 1);
    for start in 0..k {
        let p0 = model.initial()[start];
        if p0 <= 0.0 {
            continue;
        }
        for jumps in 0..=options.max_jumps {
            for sequence in state_sequences(model, start, jumps) {
                states.clear();
                states.extend_from_slice(&sequence);
                let end = *sequence.last().expect("sequence has a start state");
                let mut index = vec![0usize; jumps];
                let mut bounds = vec![0.0; jumps + 2];
                bounds[jumps + 1] = horizon;
                loop {
                    let mut log_jacobian = 0.0;
                    for d in 0..jumps {
                        let remaining = horizon - bounds[d];
                        log_jacobian += remaining.ln() + weights[index[d]].ln();
                        bounds[d + 1] = bounds[d] + remaining * nodes[index[d]];
                    }
                    acc[end].add(p0.ln() + log_jacobian + path_log_weight(&states, &bounds));
                    if !advance(&mut index, options.quad_points) {
                        break;
                    }
                }
            }
        }
    }

    let log_psi: Vec<f64> = acc.iter().map(LogAccumulator::value).collect();
    let norm = linalg::log_sum_exp(&log_psi);
    Ok(PathspaceResult {
        p: log_psi.iter().map(|l| (l - norm).exp()).collect(),
        log_psi,
        truncation_bound,
    })
}

/// Odometer over `quad_points^len` indices; `false` after the last one.
fn advance(index: &mut [usize], base: usize) -> bool {
    for d in (0..index.len()).rev() {
        index[d] += 1;
        if index[d] < base {
            return true;
        }
        index[d] = 0;
    }
    false
}

/// State sequences `start = s_0, s_1, ..., s_m` with `s_k != s_{k-1}` and
/// positive rates along the way.
fn state_sequences(model: &ChainModel, start: usize, jumps: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![start]];
    for _ in 0..jumps {
        out = out
            .into_iter()
            .flat_map(|seq| {
                let last = *seq.last().expect("non-empty");
                (0..model.k())
                    .filter(move |&j| j != last && model.rate(last, j) > 0.0)
                    .map(move |j| {
                        let mut next = seq.clone();
                        next.push(j);
                        next
                    })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TowerReport {
    pub replicas: usize,
    /// Per-state `(mean p_j(T) - (p(0)^T P(T))_j) / standard error`.
    pub z_scores: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub expected_p: Vec<f64>,
    /// Empirical `E[(x(T) - xbar(T))^2]`.
    pub mse_filter: f64,
    /// Empirical `E[(x(T) - m)^2]` for the unconditional mean `m`.
    pub mse_const: f64,
    /// Paired z-statistic of `mse_const - mse_filter`.
    pub mse_margin_z: f64,
}

/// Runs `replicas` independent (path, observations, filter) triples and
/// compares the filter output with the unconditional law at the horizon.
pub fn tower_property_check(
    model: &ChainModel,
    horizon: f64,
    dt: f64,
    beta: f64,
    replicas: usize,
    master_seed: u64,
    options: SchemeOptions,
) -> Result<TowerReport> {
    if replicas < 100 {
        return Err(FilterError::InvalidParameter(format!(
            "tower check needs at least 100 replicas, got {replicas}"
        )));
    }
    let k = model.k();
    let expected_p = transition_matrix(model, horizon)?.propagate(model.initial());
    let unconditional_mean = model.mean_level(&expected_p);

    let outcomes: Vec<(Vec<f64>, f64, f64)> = (0..replicas as u64)
        .into_par_iter()
        .map(|replica| {
            let mut jump_rng = stream(master_seed, replica, StreamRole::Jump);
            let mut noise_rng = stream(master_seed, replica, StreamRole::Noise);
            let path = simulate_jump_path(model, horizon, &mut jump_rng)?;
            let grid = synthesize_observations(&path, model, dt, beta, &mut noise_rng)?;
            let traj = run_scheme(model, &grid, options)?;
            let terminal = traj.terminal();
            let x_t = model.level(path.state_at(horizon)?);
            Ok((terminal.p.clone(), model.mean_level(&terminal.p), x_t))
        })
        .collect::<Result<_>>()?;

    let n = replicas as f64;
    let mut z_scores = Vec::with_capacity(k);
    let mut mean_p = Vec::with_capacity(k);
    for j in 0..k {
        let mean = outcomes.iter().map(|o| o.0[j]).sum::<f64>() / n;
        let var = outcomes.iter().map(|o| (o.0[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt().max(1e-12);
        z_scores.push((mean - expected_p[j]) / se);
        mean_p.push(mean);
    }

    let diffs: Vec<f64> = outcomes
        .iter()
        .map(|(_, xbar, x)| (x - unconditional_mean).powi(2) - (x - xbar).powi(2))
        .collect();
    let mse_filter = outcomes.iter().map(|(_, xbar, x)| (x - xbar).powi(2)).sum::<f64>() / n;
    let mse_const = outcomes
        .iter()
        .map(|(_, _, x)| (x - unconditional_mean).powi(2))
        .sum::<f64>()
        / n;
    let mean_diff = diffs.iter().sum::<f64>() / n;
    let var_diff = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (n - 1.0);
    let se_diff = (var_diff / n).sqrt();
    let mse_margin_z = if se_diff > 0.0 { mean_diff / se_diff } else { 0.0 };

    Ok(TowerReport {
        replicas,
        z_scores,
        mean_p,
        expected_p,
        mse_filter,
        mse_const,
        mse_margin_z,
    })
}
