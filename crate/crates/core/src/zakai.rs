//! Unnormalized conditional-probability filter.
//!
//! The vector `psi` solves the linear Ito equation
//!
//! ```text
//! d psi_j = (Q^T psi)_j dt + (a_j psi_j / beta^2) dy
//! ```
//!
//! with `psi(0) = p(0)`; `p_j = psi_j / sum_i psi_i`. Because the equation is
//! linear, every step rescales `psi` to unit sum and carries the logarithm of
//! the factor in `log_normalizer`, so the represented quantity is
//! `exp(log_normalizer) * psi`.
//!
//! Besides the Ito (Euler–Maruyama) step this module has the smooth-noise
//! (Langevin) form integrated by Heun's method, the log-domain filter
//! `theta = log psi`, and the interaction-picture variable
//! `Gamma = exp(-A t) psi`.

use std::fmt;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::ChainModel;
use crate::error::{FilterError, Result};
use crate::linalg;
use crate::wonham::FilterState;
use crate::PROBABILITY_FLOOR;

/// Sign of the `1/2 a_j^2 / beta^2` drift term in the Langevin and
/// log-domain equations. `Minus` is the Ito-to-Stratonovich conversion of
/// the Ito equation; `Plus` is the alternative kept for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum CorrectionSign {
    Plus,
    #[default]
    Minus,
}

impl CorrectionSign {
    pub fn value(self) -> f64 {
        match self {
            CorrectionSign::Plus => 1.0,
            CorrectionSign::Minus => -1.0,
        }
    }
}

impl TryFrom<i8> for CorrectionSign {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(CorrectionSign::Plus),
            -1 => Ok(CorrectionSign::Minus),
            other => Err(format!("correction sign must be +1 or -1, got {other}")),
        }
    }
}

impl From<CorrectionSign> for i8 {
    fn from(s: CorrectionSign) -> i8 {
        match s {
            CorrectionSign::Plus => 1,
            CorrectionSign::Minus => -1,
        }
    }
}

impl fmt::Display for CorrectionSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrectionSign::Plus => "+1",
            CorrectionSign::Minus => "-1",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnnormalizedState {
    pub psi: Vec<f64>,
    pub log_normalizer: f64,
    pub t: f64,
    /// Entries floored after a step produced a nonpositive value.
    pub clamps: u64,
}

impl UnnormalizedState {
    pub fn new(psi: Vec<f64>, t: f64) -> Self {
        UnnormalizedState {
            psi,
            log_normalizer: 0.0,
            t,
            clamps: 0,
        }
    }

    /// `log(exp(log_normalizer) * psi_j)`, the unnormalized weight on a log
    /// scale that does not overflow.
    pub fn log_weights(&self) -> Vec<f64> {
        self.psi.iter().map(|p| p.ln() + self.log_normalizer).collect()
    }

    /// `log phi`, the logarithm of the total unnormalized mass.
    pub fn log_mass(&self) -> f64 {
        self.psi.iter().sum::<f64>().ln() + self.log_normalizer
    }
}

/// `psi(0) = p(0)`, with zero entries floored so every later quantity stays
/// strictly positive.
pub fn init_unnormalized(model: &ChainModel) -> UnnormalizedState {
    let mut psi = model.initial().to_vec();
    for (j, p) in psi.iter_mut().enumerate() {
        if *p <= 0.0 {
            warn!("initial probability of state {j} is zero; flooring to {PROBABILITY_FLOOR:e}");
            *p = PROBABILITY_FLOOR;
        }
    }
    UnnormalizedState::new(psi, 0.0)
}

fn check_step(dt: f64, dy: f64) -> Result<()> {
    if !dy.is_finite() {
        return Err(FilterError::NonFinite("observation increment"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(FilterError::InvalidParameter(format!("step must be positive, got {dt}")));
    }
    Ok(())
}

/// Euler–Maruyama increment of the Ito equation, before rescaling.
pub fn zakai_ito_increment(psi: &[f64], model: &ChainModel, beta: f64, dt: f64, dy: f64) -> Vec<f64> {
    let drift = model.forward_drift(psi);
    let gain = dy / (beta * beta);
    psi.iter()
        .zip(drift)
        .zip(model.levels())
        .map(|((p, d), a)| p + dt * d + a * p * gain)
        .collect()
}

/// Floors nonpositive entries, rescales to unit sum and advances time.
fn rescale(mut raw: Vec<f64>, prev: &UnnormalizedState, dt: f64) -> Result<UnnormalizedState> {
    let mut clamps = prev.clamps;
    for v in raw.iter_mut() {
        if v.is_nan() {
            return Err(FilterError::NonFinite("unnormalized state"));
        }
        if *v <= 0.0 {
            *v = PROBABILITY_FLOOR;
            clamps += 1;
        }
    }
    let sum: f64 = raw.iter().sum();
    if !sum.is_finite() {
        return Err(FilterError::NonFinite("unnormalized state"));
    }
    raw.iter_mut().for_each(|v| *v /= sum);
    Ok(UnnormalizedState {
        psi: raw,
        log_normalizer: prev.log_normalizer + sum.ln(),
        t: prev.t + dt,
        clamps,
    })
}

pub fn zakai_ito_step(
    state: &UnnormalizedState,
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
) -> Result<UnnormalizedState> {
    check_step(dt, dy)?;
    let raw = zakai_ito_increment(&state.psi, model, beta, dt, dy);
    rescale(raw, state, dt)
}

/// One-step displacement of the Langevin field over `[t, t + dt]` with the
/// white-noise input integrated to `dy`.
fn langevin_displacement(
    psi: &[f64],
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
    sign: CorrectionSign,
) -> Vec<f64> {
    let b2 = beta * beta;
    let drift = model.forward_drift(psi);
    psi.iter()
        .zip(drift)
        .zip(model.levels())
        .map(|((p, d), a)| dt * (d + sign.value() * 0.5 * a * a * p / b2) + a * p * dy / b2)
        .collect()
}

/// Heun (explicit trapezoidal) step of the Langevin form
///
/// ```text
/// d psi_j / dt = (Q^T psi)_j + s * a_j^2 psi_j / (2 beta^2) + (a_j psi_j / beta^2) dy/dt
/// ```
///
/// which converges to the Stratonovich interpretation. With `s = -1` it is
/// the same process as the Ito step.
pub fn zakai_langevin_step(
    state: &UnnormalizedState,
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
    sign: CorrectionSign,
) -> Result<UnnormalizedState> {
    check_step(dt, dy)?;
    let k1 = langevin_displacement(&state.psi, model, beta, dt, dy, sign);
    let predictor: Vec<f64> = state.psi.iter().zip(&k1).map(|(p, k)| p + k).collect();
    let k2 = langevin_displacement(&predictor, model, beta, dt, dy, sign);
    let raw = state
        .psi
        .iter()
        .zip(k1.iter().zip(&k2))
        .map(|(p, (a, b))| p + 0.5 * (a + b))
        .collect();
    rescale(raw, state, dt)
}

/// `p_j = psi_j / sum_i psi_i`. Entries are divided by the maximum first so
/// tiny but positive states do not underflow to `0/0`.
pub fn normalize(state: &UnnormalizedState) -> Result<FilterState> {
    for (index, &value) in state.psi.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(FilterError::NonPositive { index, value });
        }
    }
    let max = state.psi.iter().copied().fold(0.0, f64::max);
    let scaled: Vec<f64> = state.psi.iter().map(|p| p / max).collect();
    let sum: f64 = scaled.iter().sum();
    Ok(FilterState {
        p: scaled.iter().map(|v| v / sum).collect(),
        t: state.t,
        clamps: state.clamps,
    })
}

/// `theta_j = log psi_j`, shifted so `max_j theta_j = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogState {
    pub theta: Vec<f64>,
    pub t: f64,
}

impl LogState {
    pub fn from_unnormalized(state: &UnnormalizedState) -> Self {
        let mut theta: Vec<f64> = state.psi.iter().map(|p| p.ln()).collect();
        shift_to_zero_max(&mut theta);
        LogState { theta, t: state.t }
    }

    pub fn to_filter_state(&self) -> FilterState {
        let max = self.theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.theta.iter().map(|th| (th - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        FilterState {
            p: w.iter().map(|v| v / sum).collect(),
            t: self.t,
            clamps: 0,
        }
    }
}

fn shift_to_zero_max(theta: &mut [f64]) {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    theta.iter_mut().for_each(|v| *v -= max);
}

/// Euler step of the log-domain equation
///
/// ```text
/// d theta_j / dt = -nu_j + s a_j^2 / (2 beta^2) + sum_{i != j} nu_ij exp(theta_i - theta_j)
///                  + (a_j / beta^2) dy/dt
/// ```
///
/// The noise coefficient does not depend on the state, so the Ito and
/// Stratonovich readings coincide here. The coupling sum is formed in log
/// space, which keeps it finite whenever the step itself is meaningful; a
/// state whose weight is hundreds of e-folds below the others makes the
/// explicit step blow up and is reported as non-finite.
pub fn log_step(
    state: &LogState,
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
    sign: CorrectionSign,
) -> Result<LogState> {
    check_step(dt, dy)?;
    if state.theta.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::NonFinite("log-domain state"));
    }
    let k = model.k();
    let b2 = beta * beta;
    let mut next = Vec::with_capacity(k);
    let mut terms = Vec::with_capacity(k);
    for j in 0..k {
        terms.clear();
        terms.extend(
            (0..k)
                .filter(|&i| i != j && model.rate(i, j) > 0.0)
                .map(|i| model.rate(i, j).ln() + state.theta[i]),
        );
        let coupling = (linalg::log_sum_exp(&terms) - state.theta[j]).exp();
        let a = model.level(j);
        let drift = -model.exit_rate(j) + sign.value() * 0.5 * a * a / b2 + coupling;
        next.push(state.theta[j] + dt * drift + a * dy / b2);
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::NonFinite("log-domain state"));
    }
    shift_to_zero_max(&mut next);
    Ok(LogState {
        theta: next,
        t: state.t + dt,
    })
}

/// Constant matrix of the vector Langevin form
/// `d psi/dt = A psi + diag(a) psi (x + n) / beta^2`:
/// `A = Q^T + s * diag(a_j^2) / (2 beta^2)`.
pub fn interaction_matrix(model: &ChainModel, beta: f64, sign: CorrectionSign) -> DMatrix<f64> {
    let mut a = model.generator().transpose();
    for j in 0..model.k() {
        let level = model.level(j);
        a[(j, j)] += sign.value() * 0.5 * level * level / (beta * beta);
    }
    a
}

/// `Gamma(t) = exp(-A (t - origin)) psi(t)` together with the propagators
/// at `t - origin`. The origin is 0 unless the state has been re-anchored.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaState {
    pub gamma: Vec<f64>,
    pub log_normalizer: f64,
    pub t: f64,
    pub origin: f64,
    pub a: DMatrix<f64>,
    exp_at: DMatrix<f64>,
    exp_neg_at: DMatrix<f64>,
}

impl GammaState {
    pub fn propagator(&self) -> &DMatrix<f64> {
        &self.exp_at
    }

    /// `||exp(A s)||_1 ||exp(-A s)||_1`; round-off in `from_gamma` scales
    /// with this.
    pub fn condition(&self) -> f64 {
        linalg::one_norm(&self.exp_at) * linalg::one_norm(&self.exp_neg_at)
    }

    /// Moves the origin to the current time, so `Gamma = psi`.
    ///
    /// Since `A` is constant, a change of origin multiplies `Gamma` by a fixed
    /// matrix, and the Heun step commutes with it: stepping after
    /// re-anchoring gives the same `psi` up to round-off.
    pub fn reanchor(&self) -> Result<GammaState> {
        let psi = from_gamma(self)?;
        let k = psi.psi.len();
        Ok(GammaState {
            gamma: psi.psi,
            log_normalizer: self.log_normalizer,
            t: self.t,
            origin: self.t,
            a: self.a.clone(),
            exp_at: DMatrix::identity(k, k),
            exp_neg_at: DMatrix::identity(k, k),
        })
    }
}

fn propagators(a: &DMatrix<f64>, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(FilterError::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    let at = a * t;
    Ok((linalg::expm(&at)?, linalg::expm(&(-at))?))
}

pub fn to_gamma(state: &UnnormalizedState, a: &DMatrix<f64>, t: f64) -> Result<GammaState> {
    let (exp_at, exp_neg_at) = propagators(a, t)?;
    Ok(GammaState {
        gamma: linalg::mat_vec(&exp_neg_at, &state.psi),
        log_normalizer: state.log_normalizer,
        t,
        origin: 0.0,
        a: a.clone(),
        exp_at,
        exp_neg_at,
    })
}

pub fn from_gamma(g: &GammaState) -> Result<UnnormalizedState> {
    let psi = linalg::mat_vec(&g.exp_at, &g.gamma);
    for (index, &value) in psi.iter().enumerate() {
        if !(value > 0.0) {
            return Err(FilterError::NonPositive { index, value });
        }
    }
    Ok(UnnormalizedState {
        psi,
        log_normalizer: g.log_normalizer,
        t: g.t,
        clamps: 0,
    })
}

/// `exp(-A t) diag(a) exp(A t) / beta^2`.
fn gamma_field(model: &ChainModel, beta: f64, exp_at: &DMatrix<f64>, exp_neg_at: &DMatrix<f64>) -> DMatrix<f64> {
    let k = model.k();
    let mut scaled = exp_at.clone();
    for i in 0..k {
        let f = model.level(i) / (beta * beta);
        for j in 0..k {
            scaled[(i, j)] *= f;
        }
    }
    exp_neg_at * scaled
}

/// Heun step of `d Gamma/dt = exp(-A t) diag(a) exp(A t) Gamma (x + n) / beta^2`.
pub fn gamma_langevin_step(g: &GammaState, model: &ChainModel, beta: f64, dt: f64, dy: f64) -> Result<GammaState> {
    check_step(dt, dy)?;
    let field_now = gamma_field(model, beta, &g.exp_at, &g.exp_neg_at);
    let t_next = g.t + dt;
    let (exp_at, exp_neg_at) = propagators(&g.a, t_next - g.origin)?;
    let field_next = gamma_field(model, beta, &exp_at, &exp_neg_at);

    let k1: Vec<f64> = linalg::mat_vec(&field_now, &g.gamma).iter().map(|v| v * dy).collect();
    let predictor: Vec<f64> = g.gamma.iter().zip(&k1).map(|(x, k)| x + k).collect();
    let k2: Vec<f64> = linalg::mat_vec(&field_next, &predictor).iter().map(|v| v * dy).collect();
    let mut gamma: Vec<f64> = g
        .gamma
        .iter()
        .zip(k1.iter().zip(&k2))
        .map(|(x, (a, b))| x + 0.5 * (a + b))
        .collect();
    let scale = gamma.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(FilterError::NonFinite("interaction-picture state"));
    }
    gamma.iter_mut().for_each(|v| *v /= scale);
    Ok(GammaState {
        gamma,
        log_normalizer: g.log_normalizer + scale.ln(),
        t: t_next,
        origin: g.origin,
        a: g.a.clone(),
        exp_at,
        exp_neg_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainModel;

    fn three_state() -> ChainModel {
        ChainModel::new(
            vec![1.0, 0.0, -2.0],
            vec![vec![0.0, 0.7, 0.3], vec![1.1, 0.0, 0.4], vec![0.2, 2.5, 0.0]],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap()
    }

    fn scalar(level: f64) -> ChainModel {
        ChainModel::new(vec![level], vec![vec![0.0]], vec![1.0]).unwrap()
    }

    #[test]
    fn init_copies_and_floors() {
        let s = init_unnormalized(&ChainModel::telegraph(1.0));
        assert_eq!(s.psi, vec![0.5, 0.5]);
        assert_eq!(s.log_normalizer, 0.0);
        let point = ChainModel::telegraph(1.0).with_initial(vec![1.0, 0.0]).unwrap();
        let s = init_unnormalized(&point);
        assert_eq!(s.psi, vec![1.0, 1e-300]);
        let p = normalize(&s).unwrap().p;
        assert_eq!(p[0], 1.0);
        let model = three_state();
        assert_eq!(normalize(&init_unnormalized(&model)).unwrap().p, model.initial());
    }

    #[test]
    fn zero_levels_reduce_to_forward_euler() {
        let model = ChainModel::new(
            vec![0.0, 0.0, 0.0],
            vec![vec![0.0, 0.7, 0.3], vec![1.1, 0.0, 0.4], vec![0.2, 2.5, 0.0]],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let psi = vec![0.2, 0.5, 0.3];
        let a = zakai_ito_increment(&psi, &model, 0.5, 0.01, 0.3);
        let b = zakai_ito_increment(&psi, &model, 0.5, 0.01, -7.0);
        assert_eq!(a, b);
        let drift = model.forward_drift(&psi);
        for j in 0..3 {
            assert_eq!(a[j], psi[j] + 0.01 * drift[j]);
        }
    }

    #[test]
    fn scalar_ito_step_arithmetic() {
        let model = scalar(2.0);
        let s = UnnormalizedState::new(vec![1.0], 0.0);
        let raw = zakai_ito_increment(&s.psi, &model, 1.0, 0.01, 0.1);
        assert!((raw[0] - 1.2).abs() < 1e-15);
        let next = zakai_ito_step(&s, &model, 1.0, 0.01, 0.1).unwrap();
        assert_eq!(next.psi, vec![1.0]);
        assert!((next.log_normalizer.exp() - 1.2).abs() < 1e-14);
        assert!((next.t - 0.01).abs() < 1e-16);
    }

    #[test]
    fn total_mass_changes_only_through_observation_term() {
        let model = three_state();
        let beta = 0.7;
        let psi = vec![0.3, 0.45, 0.25];
        for &(dt, dy) in &[(1e-3, 0.02), (0.01, -0.3), (0.1, 1.1)] {
            let raw = zakai_ito_increment(&psi, &model, beta, dt, dy);
            let change: f64 = raw.iter().sum::<f64>() - psi.iter().sum::<f64>();
            let expected: f64 = psi
                .iter()
                .zip(model.levels())
                .map(|(p, a)| a * p / (beta * beta) * dy)
                .sum();
            assert!((change - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn negative_update_is_floored_and_counted() {
        let model = ChainModel::telegraph(1.0);
        let s = UnnormalizedState::new(vec![0.5, 0.5], 0.0);
        // a_2 = -1 with a large positive increment drives psi_2 negative.
        let next = zakai_ito_step(&s, &model, 0.1, 0.01, 1.0).unwrap();
        assert_eq!(next.clamps, 1);
        assert!(next.psi.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn nonfinite_increment_is_rejected() {
        let model = ChainModel::telegraph(1.0);
        let s = init_unnormalized(&model);
        assert!(zakai_ito_step(&s, &model, 0.5, 1e-3, f64::NAN).is_err());
        assert!(zakai_langevin_step(&s, &model, 0.5, 1e-3, f64::INFINITY, CorrectionSign::Minus).is_err());
        assert!(zakai_ito_step(&s, &model, 0.5, 0.0, 0.1).is_err());
    }

    #[test]
    fn langevin_signs_agree_when_levels_vanish() {
        let model = ChainModel::new(
            vec![0.0, 0.0],
            vec![vec![0.0, 1.0], vec![2.0, 0.0]],
            vec![0.3, 0.7],
        )
        .unwrap();
        let s = init_unnormalized(&model);
        let plus = zakai_langevin_step(&s, &model, 0.5, 0.01, 0.2, CorrectionSign::Plus).unwrap();
        let minus = zakai_langevin_step(&s, &model, 0.5, 0.01, 0.2, CorrectionSign::Minus).unwrap();
        assert_eq!(plus, minus);
        // Deterministic Heun on the forward equation.
        let q = model.generator();
        let p = [0.3, 0.7];
        let k1 = [0.01 * (p[0] * q[(0, 0)] + p[1] * q[(1, 0)]), 0.01 * (p[0] * q[(0, 1)] + p[1] * q[(1, 1)])];
        let pp = [p[0] + k1[0], p[1] + k1[1]];
        let k2 = [0.01 * (pp[0] * q[(0, 0)] + pp[1] * q[(1, 0)]), 0.01 * (pp[0] * q[(0, 1)] + pp[1] * q[(1, 1)])];
        let heun = [p[0] + 0.5 * (k1[0] + k2[0]), p[1] + 0.5 * (k1[1] + k2[1])];
        let got = normalize(&plus).unwrap().p;
        let sum = heun[0] + heun[1];
        assert!((got[0] - heun[0] / sum).abs() < 1e-15);
    }

    #[test]
    fn scalar_langevin_matches_closed_form() {
        // With K = 1 and nu = 0: psi(t) = psi(0) exp(s a^2 t / (2 beta^2) + a y(t) / beta^2)
        // when y is smooth; a constant observation rate c gives y(t) = c t.
        for sign in [CorrectionSign::Plus, CorrectionSign::Minus] {
            let (a, beta, c) = (1.5, 0.8, 0.4);
            let rate = sign.value() * 0.5 * a * a / (beta * beta) + a * c / (beta * beta);
            let mut errors = Vec::new();
            for &dt in &[1e-2, 5e-3] {
                let s = UnnormalizedState::new(vec![1.0], 0.0);
                let next = zakai_langevin_step(&s, &scalar(a), beta, dt, c * dt, sign).unwrap();
                let exact = rate * dt;
                errors.push((next.log_normalizer - exact).abs());
            }
            // Local error of a second-order method is O(dt^3).
            let ratio = errors[0] / errors[1];
            assert!(ratio > 7.0 && ratio < 9.0, "ratio {ratio}");
        }
    }

    #[test]
    fn normalization_examples() {
        let s = UnnormalizedState::new(vec![2.0, 2.0], 0.0);
        assert_eq!(normalize(&s).unwrap().p, vec![0.5, 0.5]);
        let tiny = UnnormalizedState::new(vec![1e-200, 1e-200], 0.0);
        assert_eq!(normalize(&tiny).unwrap().p, vec![0.5, 0.5]);
        let psi = vec![0.1, 3.0, 0.7];
        let a = normalize(&UnnormalizedState::new(psi.clone(), 0.0)).unwrap().p;
        let b = normalize(&UnnormalizedState::new(psi.iter().map(|v| v * 7.3).collect(), 0.0)).unwrap().p;
        for j in 0..3 {
            assert!((a[j] - b[j]).abs() <= 1e-15);
        }
        assert!(normalize(&UnnormalizedState::new(vec![1.0, 0.0], 0.0)).is_err());
        assert!(normalize(&UnnormalizedState::new(vec![1.0, -1.0], 0.0)).is_err());
    }

    #[test]
    fn scalar_log_step_is_affine() {
        let (a, beta, nu) = (2.0, 0.5, 0.0);
        let model = scalar(a);
        let mut s = LogState { theta: vec![0.0], t: 0.0 };
        // K = 1 shifts theta back to zero each step; check the raw Euler
        // increment through a two-state copy with no coupling instead.
        s = log_step(&s, &model, beta, 0.01, 0.05, CorrectionSign::Minus).unwrap();
        assert_eq!(s.theta, vec![0.0]);
        let pair = ChainModel::new(vec![a, 0.0], vec![vec![0.0, nu], vec![nu, 0.0]], vec![0.5, 0.5]).unwrap();
        let start = LogState { theta: vec![0.0, 0.0], t: 0.0 };
        let next = log_step(&start, &pair, beta, 0.01, 0.05, CorrectionSign::Minus).unwrap();
        let expected_gap = 0.01 * (-0.5 * a * a / (beta * beta)) + a * 0.05 / (beta * beta);
        assert!(((next.theta[0] - next.theta[1]) - expected_gap).abs() < 1e-14);
    }

    #[test]
    fn symmetric_log_state_stays_symmetric_without_evidence() {
        let model = ChainModel::telegraph(1.0);
        let mut s = LogState { theta: vec![0.0, 0.0], t: 0.0 };
        for _ in 0..100 {
            s = log_step(&s, &model, 0.5, 1e-3, 0.0, CorrectionSign::Minus).unwrap();
            assert_eq!(s.theta[0], s.theta[1]);
        }
    }

    #[test]
    fn gamma_round_trip_moderate_a_to_ten() {
        let model = ChainModel::new(
            vec![0.4, 0.0, -0.3],
            vec![vec![0.0, 0.1, 0.05], vec![0.08, 0.0, 0.1], vec![0.05, 0.12, 0.0]],
            vec![0.3, 0.3, 0.4],
        )
        .unwrap();
        let a = interaction_matrix(&model, 1.0, CorrectionSign::Minus);
        let s = UnnormalizedState::new(vec![0.2, 0.5, 0.3], 0.0);
        for r in 0..=20 {
            let t = 0.5 * r as f64;
            let back = from_gamma(&to_gamma(&s, &a, t).unwrap()).unwrap();
            assert!(linalg::max_abs_vec_diff(&back.psi, &s.psi) <= 1e-10, "t={t}");
        }
    }

    #[test]
    fn reanchoring_does_not_change_psi() {
        let model = three_state();
        let beta = 0.6;
        let a = interaction_matrix(&model, beta, CorrectionSign::Minus);
        let s = UnnormalizedState::new(vec![0.2, 0.5, 0.3], 0.0);
        let mut plain = to_gamma(&s, &a, 0.0).unwrap();
        let mut moved = plain.clone();
        for r in 0..40 {
            let dy = 0.02 * ((r as f64) * 0.9).cos();
            plain = gamma_langevin_step(&plain, &model, beta, 0.01, dy).unwrap();
            moved = gamma_langevin_step(&moved, &model, beta, 0.01, dy).unwrap();
            if r % 7 == 3 {
                moved = moved.reanchor().unwrap();
                assert_eq!(moved.condition(), 1.0);
            }
        }
        let p1 = normalize(&from_gamma(&plain).unwrap()).unwrap();
        let p2 = normalize(&from_gamma(&moved).unwrap()).unwrap();
        assert!(linalg::max_abs_vec_diff(&p1.p, &p2.p) <= 1e-12);
        let m1 = from_gamma(&plain).unwrap().log_mass();
        let m2 = from_gamma(&moved).unwrap().log_mass();
        assert!((m1 - m2).abs() <= 1e-12);
    }

    #[test]
    fn gamma_round_trip_and_identity_at_zero() {
        let model = three_state();
        let a = interaction_matrix(&model, 0.6, CorrectionSign::Minus);
        let s = UnnormalizedState::new(vec![0.2, 0.5, 0.3], 0.0);
        let g0 = to_gamma(&s, &a, 0.0).unwrap();
        assert_eq!(g0.gamma, s.psi);
        for &t in &[0.1, 1.0, 2.0] {
            let g = to_gamma(&s, &a, t).unwrap();
            let back = from_gamma(&g).unwrap();
            // Round-off grows with the condition number of exp(A t).
            let cond = g.condition();
            let tol = 64.0 * f64::EPSILON * cond;
            assert!(linalg::max_abs_vec_diff(&back.psi, &s.psi) <= tol, "t={t} cond={cond:e}");
        }
        // Far out the propagators are too ill-conditioned to invert.
        let far = to_gamma(&s, &a, 10.0).unwrap();
        assert!(from_gamma(&far).map_or(true, |b| linalg::max_abs_vec_diff(&b.psi, &s.psi) > 1e-3));
    }

    #[test]
    fn scalar_gamma_closed_form() {
        let (level, beta, nu) = (1.3, 0.5, 0.0);
        let model = scalar(level);
        let a = interaction_matrix(&model, beta, CorrectionSign::Minus);
        let s = UnnormalizedState::new(vec![0.8], 0.0);
        let t = 0.7;
        let g = to_gamma(&s, &a, t).unwrap();
        let exponent = -(-nu - 0.5 * level * level / (beta * beta)) * t;
        assert!((g.gamma[0] - exponent.exp() * 0.8).abs() < 1e-12 * exponent.exp());
    }

    #[test]
    fn gamma_overflow_is_reported() {
        let model = scalar(1.0);
        let a = interaction_matrix(&model, 0.01, CorrectionSign::Minus);
        let s = UnnormalizedState::new(vec![1.0], 0.0);
        assert!(matches!(
            to_gamma(&s, &a, 1000.0),
            Err(FilterError::ExponentialOverflow { .. })
        ));
    }

    #[test]
    fn gamma_step_is_diagonal_scaling_for_equal_levels() {
        let model = ChainModel::new(
            vec![0.8, 0.8, 0.8],
            vec![vec![0.0, 0.7, 0.3], vec![1.1, 0.0, 0.4], vec![0.2, 2.5, 0.0]],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let beta = 0.5;
        let a = interaction_matrix(&model, beta, CorrectionSign::Minus);
        let s = UnnormalizedState::new(vec![0.2, 0.5, 0.3], 0.0);
        let g = to_gamma(&s, &a, 0.3).unwrap();
        let dy = 0.05;
        let next = gamma_langevin_step(&g, &model, beta, 0.01, dy).unwrap();
        let u = 0.8 * dy / (beta * beta);
        let factor = 1.0 + u + 0.5 * u * u;
        let max = g.gamma.iter().map(|v| v.abs()).fold(0.0, f64::max) * factor;
        for j in 0..3 {
            assert!((next.gamma[j] - g.gamma[j] * factor / max).abs() < 1e-13);
        }
    }

    #[test]
    fn gamma_is_constant_when_levels_vanish() {
        let model = ChainModel::new(vec![0.0, 0.0], vec![vec![0.0, 1.0], vec![3.0, 0.0]], vec![0.4, 0.6]).unwrap();
        let a = interaction_matrix(&model, 0.5, CorrectionSign::Minus);
        let g = to_gamma(&init_unnormalized(&model), &a, 0.0).unwrap();
        let next = gamma_langevin_step(&g, &model, 0.5, 0.01, 0.3).unwrap();
        let scale = g.gamma.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for j in 0..2 {
            assert!((next.gamma[j] - g.gamma[j] / scale).abs() < 1e-15);
        }
        // And psi follows the forward equation exactly.
        let psi = from_gamma(&next).unwrap();
        let exact = crate::chain::transition_matrix(&model, 0.01).unwrap().propagate(&[0.4, 0.6]);
        let p = normalize(&psi).unwrap().p;
        assert!(linalg::max_abs_vec_diff(&p, &exact) < 1e-13);
    }

    #[test]
    fn correction_sign_serde() {
        assert_eq!(serde_json::to_string(&CorrectionSign::Minus).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<CorrectionSign>("1").unwrap(), CorrectionSign::Plus);
        assert!(serde_json::from_str::<CorrectionSign>("0").is_err());
    }
}
