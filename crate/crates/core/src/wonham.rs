//! Normalized filter `p_j(t) = Prob{x(t) = a_j | y(s), s <= t}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::{transition_matrix, ChainModel};
use crate::error::{FilterError, Result};
use crate::PROBABILITY_FLOOR;

/// Tolerance on the pre-renormalization simplex sum after one step.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub p: Vec<f64>,
    pub t: f64,
    pub clamps: u64,
}

impl FilterState {
    pub fn new(p: Vec<f64>, t: f64) -> Self {
        FilterState { p, t, clamps: 0 }
    }

    pub fn initial(model: &ChainModel) -> Self {
        Self::new(model.initial().to_vec(), 0.0)
    }
}

/// Form of the `beta^-2 xbar (a_j - xbar) p_j dt` drift term.
///
/// `Innovation` subtracts it, giving
/// `dp_j = (Q^T p)_j dt + beta^-2 (a_j - xbar) p_j (dy - xbar dt)`;
/// `Paper` adds it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignVariant {
    Paper,
    #[default]
    Innovation,
}

impl fmt::Display for SignVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignVariant::Paper => "paper",
            SignVariant::Innovation => "innovation",
        })
    }
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

/// Euler–Maruyama update before renormalization.
pub fn wonham_increment(
    p: &[f64],
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
    variant: SignVariant,
) -> Vec<f64> {
    let b2 = beta * beta;
    let xbar = model.mean_level(p);
    let drift = model.forward_drift(p);
    let tilt = match variant {
        SignVariant::Innovation => -xbar * dt,
        SignVariant::Paper => xbar * dt,
    };
    p.iter()
        .zip(drift)
        .zip(model.levels())
        .map(|((pj, d), a)| pj + dt * d + (a - xbar) * pj * (dy + tilt) / b2)
        .collect()
}

/// Checks the sum, floors negative entries and renormalizes.
fn project(mut raw: Vec<f64>, prev_clamps: u64, t: f64) -> Result<FilterState> {
    let sum: f64 = raw.iter().sum();
    if !sum.is_finite() {
        return Err(FilterError::NonFinite("filter state"));
    }
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(FilterError::SimplexDrift { sum });
    }
    let mut clamps = prev_clamps;
    for v in raw.iter_mut() {
        if *v <= 0.0 {
            *v = PROBABILITY_FLOOR;
            clamps += 1;
        }
    }
    let sum: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|v| *v /= sum);
    Ok(FilterState { p: raw, t, clamps })
}

pub fn wonham_step(
    state: &FilterState,
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
    variant: SignVariant,
) -> Result<FilterState> {
    check_step(dt, dy)?;
    let raw = wonham_increment(&state.p, model, beta, dt, dy, variant);
    project(raw, state.clamps, state.t + dt)
}

fn langevin_displacement(
    p: &[f64],
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
    sign: crate::zakai::CorrectionSign,
) -> Vec<f64> {
    let b2 = beta * beta;
    let xbar = model.mean_level(p);
    let second_moment: f64 = model.levels().iter().zip(p).map(|(a, pj)| a * a * pj).sum();
    let drift = model.forward_drift(p);
    p.iter()
        .zip(drift)
        .zip(model.levels())
        .map(|((pj, d), a)| {
            let correction = sign.value() * 0.5 * pj * (a * a - second_moment) / b2;
            dt * (d + correction) + (a - xbar) * pj * dy / b2
        })
        .collect()
}

/// Heun step of the Langevin form of the normalized filter,
///
/// ```text
/// dp_j/dt = (Q^T p)_j + s p_j (a_j^2 - sum_i a_i^2 p_i) / (2 beta^2)
///           + beta^-2 (a_j - xbar) p_j dy/dt.
/// ```
pub fn wonham_langevin_step(
    state: &FilterState,
    model: &ChainModel,
    beta: f64,
    dt: f64,
    dy: f64,
    sign: crate::zakai::CorrectionSign,
) -> Result<FilterState> {
    check_step(dt, dy)?;
    let k1 = langevin_displacement(&state.p, model, beta, dt, dy, sign);
    let predictor: Vec<f64> = state.p.iter().zip(&k1).map(|(p, k)| p + k).collect();
    let k2 = langevin_displacement(&predictor, model, beta, dt, dy, sign);
    let raw = state
        .p
        .iter()
        .zip(k1.iter().zip(&k2))
        .map(|(p, (a, b))| p + 0.5 * (a + b))
        .collect();
    project(raw, state.clamps, state.t + dt)
}

/// `q = p_1 - p_2` for the symmetric telegraph signal with levels `(1, -1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TelegraphState {
    pub q: f64,
    pub t: f64,
    pub clamps: u64,
}

impl TelegraphState {
    pub fn new(q: f64, t: f64) -> Self {
        TelegraphState { q, t, clamps: 0 }
    }

    pub fn from_filter(state: &FilterState) -> Self {
        TelegraphState {
            q: state.p[0] - state.p[1],
            t: state.t,
            clamps: state.clamps,
        }
    }

    pub fn to_filter(&self) -> FilterState {
        FilterState {
            p: vec![0.5 * (1.0 + self.q), 0.5 * (1.0 - self.q)],
            t: self.t,
            clamps: self.clamps,
        }
    }
}

fn clamp_q(q: f64, prev: &TelegraphState, dt: f64) -> Result<TelegraphState> {
    if !q.is_finite() {
        return Err(FilterError::NonFinite("telegraph state"));
    }
    let mut clamps = prev.clamps;
    let q = if q.abs() > 1.0 {
        clamps += 1;
        q.signum()
    } else {
        q
    };
    Ok(TelegraphState {
        q,
        t: prev.t + dt,
        clamps,
    })
}

/// Euler step of `dq = -2 nu q dt - beta^-2 q (1 - q^2) dt + beta^-2 (1 - q^2) dy`.
pub fn telegraph_ito_step(state: &TelegraphState, nu: f64, beta: f64, dt: f64, dy: f64) -> Result<TelegraphState> {
    check_step(dt, dy)?;
    let q = state.q;
    let b2 = beta * beta;
    let gain = 1.0 - q * q;
    let next = q - 2.0 * nu * q * dt - q * gain * dt / b2 + gain * dy / b2;
    clamp_q(next, state, dt)
}

/// Heun step of the Riccati equation `dq/dt = -2 nu q + beta^-2 (1 - q^2) r(t)`
/// with `r dt = dy`.
pub fn telegraph_langevin_step(
    state: &TelegraphState,
    nu: f64,
    beta: f64,
    dt: f64,
    dy: f64,
) -> Result<TelegraphState> {
    check_step(dt, dy)?;
    let b2 = beta * beta;
    let field = |q: f64| -2.0 * nu * q * dt + (1.0 - q * q) * dy / b2;
    let k1 = field(state.q);
    let k2 = field(state.q + k1);
    clamp_q(state.q + 0.5 * (k1 + k2), state, dt)
}

/// Conditional mean `xbar = sum_j a_j p_j`.
pub fn mean_estimate(state: &FilterState, model: &ChainModel) -> f64 {
    model.mean_level(&state.p)
}

/// Most probable state, lowest index on ties.
pub fn map_decision(state: &FilterState) -> usize {
    let mut best = 0;
    for (j, &p) in state.p.iter().enumerate().skip(1) {
        if p > state.p[best] {
            best = j;
        }
    }
    best
}

/// `Prob{x(t + h) = a_j | y up to t} = sum_i p_i(t) p_ij(h)`.
pub fn predict(state: &FilterState, model: &ChainModel, h: f64) -> Result<Vec<f64>> {
    if h == 0.0 {
        return Ok(state.p.clone());
    }
    Ok(transition_matrix(model, h)?.propagate(&state.p))
}
