//! Observation increments `dy = x dt + beta dw` on a uniform grid.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chain::{ChainModel, JumpPath};
use crate::error::{FilterError, Result};

/// Observation increments on the grid `t_r = r * dt`, `r = 0..n_steps`.
///
/// `y(0) = 0`; only increments are stored. Brownian increments and the
/// signal level at each grid point are kept when the grid was synthesized,
/// so different schemes can consume the identical noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    dt: f64,
    beta: f64,
    dy: Vec<f64>,
    dw: Option<Vec<f64>>,
    /// Signal level at `t_r`; `n_steps + 1` entries when synthesized,
    /// `n_steps` when read back from CSV.
    x_level: Option<Vec<f64>>,
}

fn check_dt_beta(dt: f64, beta: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(FilterError::InvalidParameter(format!("step must be positive, got {dt}")));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(FilterError::InvalidParameter(format!(
            "noise intensity must be positive, got {beta}"
        )));
    }
    Ok(())
}

/// Number of steps of size `dt` that tile `horizon`, if it tiles it.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    let n = (horizon / dt).round();
    if n < 1.0 || ((n * dt - horizon).abs() > 1e-9 * horizon.max(1.0)) {
        return Err(FilterError::InvalidParameter(format!(
            "step {dt} does not divide horizon {horizon}"
        )));
    }
    Ok(n as usize)
}

impl ObservationGrid {
    /// Grid from raw increments (no Brownian or signal record).
    pub fn from_increments(dt: f64, beta: f64, dy: Vec<f64>) -> Result<Self> {
        check_dt_beta(dt, beta)?;
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite("observation increments"));
        }
        Ok(ObservationGrid {
            dt,
            beta,
            dy,
            dw: None,
            x_level: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_steps(&self) -> usize {
        self.dy.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dy.len() as f64 * self.dt
    }

    pub fn time(&self, r: usize) -> f64 {
        r as f64 * self.dt
    }

    pub fn increments(&self) -> &[f64] {
        &self.dy
    }

    pub fn brownian_increments(&self) -> Option<&[f64]> {
        self.dw.as_deref()
    }

    pub fn level_at(&self, r: usize) -> Option<f64> {
        self.x_level.as_ref().and_then(|x| x.get(r).copied())
    }

    /// `y(t_r)`, the prefix sum of increments.
    pub fn cumulative_y(&self, r: usize) -> Result<f64> {
        if r > self.dy.len() {
            return Err(FilterError::IndexOutOfRange {
                index: r,
                max: self.dy.len(),
            });
        }
        Ok(self.dy[..r].iter().sum())
    }

    /// All prefix sums `y(t_0), ..., y(t_n)`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dy.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for d in &self.dy {
            acc += d;
            out.push(acc);
        }
        out
    }

    /// Grid at twice the step, obtained by summing consecutive pairs of
    /// increments from the same underlying fine realization.
    pub fn coarsen(&self) -> Result<Self> {
        if !self.dy.len().is_multiple_of(2) {
            return Err(FilterError::InvalidParameter(
                "coarsening needs an even number of steps".into(),
            ));
        }
        let pair_sums = |v: &[f64]| v.chunks_exact(2).map(|c| c[0] + c[1]).collect::<Vec<_>>();
        Ok(ObservationGrid {
            dt: 2.0 * self.dt,
            beta: self.beta,
            dy: pair_sums(&self.dy),
            dw: self.dw.as_deref().map(pair_sums),
            x_level: self
                .x_level
                .as_ref()
                .map(|x| x.iter().step_by(2).copied().collect()),
        })
    }

    /// Writes `r,t,dy,dw,x_level` rows with 17 significant digits. Missing
    /// columns are written as `NaN`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["r", "t", "dy", "dw", "x_level"])?;
        for r in 0..self.n_steps() {
            let dw = self.dw.as_ref().map_or(f64::NAN, |v| v[r]);
            let x = self.level_at(r).unwrap_or(f64::NAN);
            w.write_record([
                r.to_string(),
                fmt_f64(self.time(r)),
                fmt_f64(self.dy[r]),
                fmt_f64(dw),
                fmt_f64(x),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`write_csv`](Self::write_csv). The
    /// step and noise intensity are not part of the file and must be
    /// supplied; the `t` column is checked against them.
    pub fn read_csv<R: Read>(reader: R, dt: f64, beta: f64) -> Result<Self> {
        check_dt_beta(dt, beta)?;
        let mut rd = csv::Reader::from_reader(reader);
        let mut dy = Vec::new();
        let mut dw = Vec::new();
        let mut xs = Vec::new();
        for (row, record) in rd.records().enumerate() {
            let record = record?;
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| FilterError::InvalidParameter(format!("row {row}: missing column {i}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| FilterError::InvalidParameter(format!("row {row}: {e}")))
            };
            let r = field(0)? as usize;
            let t = field(1)?;
            if r != row || (t - row as f64 * dt).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(FilterError::InvalidParameter(format!(
                    "row {row}: index/time ({r}, {t}) inconsistent with step {dt}"
                )));
            }
            dy.push(field(2)?);
            dw.push(field(3)?);
            xs.push(field(4)?);
        }
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite("observation increments"));
        }
        Ok(ObservationGrid {
            dt,
            beta,
            dy,
            dw: if dw.iter().all(|v| v.is_finite()) { Some(dw) } else { None },
            x_level: if xs.iter().all(|v| v.is_finite()) { Some(xs) } else { None },
        })
    }
}

/// Seventeen significant digits, stable across platforms.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// `n` independent `N(0, dt)` Brownian increments.
pub fn brownian_increments<R: Rng + ?Sized>(n: usize, dt: f64, rng: &mut R) -> Vec<f64> {
    let sd = dt.sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}

/// `dy_r = \int_{t_r}^{t_{r+1}} a_{x(s)} ds + beta dw_r` with the signal
/// integral taken exactly from the jump path.
pub fn observations_from_brownian(
    path: &JumpPath,
    model: &ChainModel,
    dt: f64,
    beta: f64,
    dw: Vec<f64>,
) -> Result<ObservationGrid> {
    check_dt_beta(dt, beta)?;
    let n = step_count(path.horizon(), dt)?;
    if dw.len() != n {
        return Err(FilterError::InvalidParameter(format!(
            "expected {n} Brownian increments, got {}",
            dw.len()
        )));
    }
    let horizon = path.horizon();
    let mut dy = Vec::with_capacity(n);
    let mut x_level = Vec::with_capacity(n + 1);
    for (r, w) in dw.iter().enumerate() {
        let t0 = r as f64 * dt;
        let t1 = ((r + 1) as f64 * dt).min(horizon);
        dy.push(path.integrate_level(model, t0, t1)? + beta * w);
        x_level.push(model.level(path.state_at(t0)?));
    }
    x_level.push(model.level(path.state_at(horizon)?));
    Ok(ObservationGrid {
        dt,
        beta,
        dy,
        dw: Some(dw),
        x_level: Some(x_level),
    })
}

pub fn synthesize_observations<R: Rng + ?Sized>(
    path: &JumpPath,
    model: &ChainModel,
    dt: f64,
    beta: f64,
    rng: &mut R,
) -> Result<ObservationGrid> {
    check_dt_beta(dt, beta)?;
    let n = step_count(path.horizon(), dt)?;
    let dw = brownian_increments(n, dt, rng);
    observations_from_brownian(path, model, dt, beta, dw)
}
