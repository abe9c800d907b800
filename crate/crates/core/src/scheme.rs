//! Runs any of the filters over a whole observation grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chain::{transition_matrix, ChainModel};
use crate::error::{FilterError, Result};
use crate::oracle::{bayes_forward_step_with, DiscreteBayesState};
use crate::signalpath::ObservationGrid;
use crate::wonham::{self, FilterState, SignVariant, TelegraphState};
use crate::zakai::{self, CorrectionSign, LogState, UnnormalizedState};
use crate::MAX_CLAMP_FRACTION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ZakaiIto,
    ZakaiLangevin,
    #[default]
    WonhamIto,
    WonhamLangevin,
    Log,
    Gamma,
    TelegraphIto,
    TelegraphLangevin,
    BayesOracle,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::ZakaiIto,
        Scheme::ZakaiLangevin,
        Scheme::WonhamIto,
        Scheme::WonhamLangevin,
        Scheme::Log,
        Scheme::Gamma,
        Scheme::TelegraphIto,
        Scheme::TelegraphLangevin,
        Scheme::BayesOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ZakaiIto => "zakai-ito",
            Scheme::ZakaiLangevin => "zakai-langevin",
            Scheme::WonhamIto => "wonham-ito",
            Scheme::WonhamLangevin => "wonham-langevin",
            Scheme::Log => "log",
            Scheme::Gamma => "gamma",
            Scheme::TelegraphIto => "telegraph-ito",
            Scheme::TelegraphLangevin => "telegraph-langevin",
            Scheme::BayesOracle => "bayes-oracle",
        }
    }

    /// Whether the scheme carries the unnormalized weights.
    pub fn is_unnormalized(self) -> bool {
        matches!(self, Scheme::ZakaiIto | Scheme::ZakaiLangevin | Scheme::Gamma)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FilterError::InvalidParameter(format!("unknown scheme {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SchemeOptions {
    pub scheme: Scheme,
    pub correction_sign: CorrectionSign,
    pub sign_variant: SignVariant,
}

impl SchemeOptions {
    pub fn new(scheme: Scheme) -> Self {
        SchemeOptions {
            scheme,
            ..Default::default()
        }
    }

    pub fn with_sign(mut self, sign: CorrectionSign) -> Self {
        self.correction_sign = sign;
        self
    }

    pub fn with_variant(mut self, variant: SignVariant) -> Self {
        self.sign_variant = variant;
        self
    }

    pub fn label(&self) -> String {
        match self.scheme {
            Scheme::ZakaiLangevin | Scheme::WonhamLangevin | Scheme::Log | Scheme::Gamma => {
                format!("{}({})", self.scheme, self.correction_sign)
            }
            Scheme::WonhamIto => format!("{}({})", self.scheme, self.sign_variant),
            _ => self.scheme.to_string(),
        }
    }
}

/// The interaction-picture run moves its time origin forward once the
/// propagators get this ill-conditioned.
pub const GAMMA_REANCHOR_CONDITION: f64 = 1e4;

/// Filter output at every grid point `t_0 = 0, ..., t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub options: SchemeOptions,
    pub dt: f64,
    /// Normalized conditional distribution, `n + 1` rows.
    pub p: Vec<Vec<f64>>,
    /// `(psi, log_normalizer)` rows for the unnormalized schemes.
    pub unnormalized: Option<Vec<(Vec<f64>, f64)>>,
    pub clamps: u64,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.p.len() - 1
    }

    pub fn terminal(&self) -> FilterState {
        FilterState {
            p: self.p[self.p.len() - 1].clone(),
            t: self.n_steps() as f64 * self.dt,
            clamps: self.clamps,
        }
    }

    /// `log psi_j + log_normalizer` per row.
    pub fn log_weights(&self) -> Option<Vec<Vec<f64>>> {
        self.unnormalized.as_ref().map(|rows| {
            rows.iter()
                .map(|(psi, ln)| psi.iter().map(|p| p.ln() + ln).collect())
                .collect()
        })
    }
}

/// Largest entrywise gap between the normalized outputs of two runs on the
/// same grid.
pub fn p_discrepancy(a: &Trajectory, b: &Trajectory) -> f64 {
    a.p.iter()
        .zip(&b.p)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// Largest gap between the log unnormalized weights of two runs, or `None`
/// when either run is normalized-only.
pub fn log_weight_discrepancy(a: &Trajectory, b: &Trajectory) -> Option<f64> {
    let (wa, wb) = (a.log_weights()?, b.log_weights()?);
    Some(
        wa.iter()
            .zip(&wb)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max),
    )
}

pub fn check_applicable(model: &ChainModel, scheme: Scheme) -> Result<()> {
    if matches!(scheme, Scheme::TelegraphIto | Scheme::TelegraphLangevin) && model.telegraph_rate().is_none() {
        return Err(FilterError::SchemeMismatch {
            scheme: scheme.to_string(),
            reason: "requires K = 2, levels (1, -1) and a symmetric switching rate".into(),
        });
    }
    Ok(())
}

fn check_clamps(clamps: u64, steps: usize) -> Result<()> {
    if clamps as f64 > MAX_CLAMP_FRACTION * steps as f64 {
        return Err(FilterError::ExcessiveClamping { clamps, steps });
    }
    Ok(())
}

/// Runs the selected filter from the model's initial law over every
/// increment of `grid`.
pub fn run_scheme(model: &ChainModel, grid: &ObservationGrid, options: SchemeOptions) -> Result<Trajectory> {
    check_applicable(model, options.scheme)?;
    run_from(model, grid, options, zakai::init_unnormalized(model))
}

/// Same as [`run_scheme`] but starting the unnormalized schemes from an
/// arbitrary positive vector (normalized schemes start from its
/// normalization).
pub fn run_from(
    model: &ChainModel,
    grid: &ObservationGrid,
    options: SchemeOptions,
    start: UnnormalizedState,
) -> Result<Trajectory> {
    check_applicable(model, options.scheme)?;
    let (beta, dt) = (grid.beta(), grid.dt());
    let n = grid.n_steps();
    let dy = grid.increments();
    let mut p_rows = Vec::with_capacity(n + 1);
    let mut unnormalized = None;
    let clamps;

    match options.scheme {
        Scheme::ZakaiIto | Scheme::ZakaiLangevin => {
            let mut rows = Vec::with_capacity(n + 1);
            let mut s = start;
            p_rows.push(zakai::normalize(&s)?.p);
            rows.push((s.psi.clone(), s.log_normalizer));
            for &d in dy {
                s = if options.scheme == Scheme::ZakaiIto {
                    zakai::zakai_ito_step(&s, model, beta, dt, d)?
                } else {
                    zakai::zakai_langevin_step(&s, model, beta, dt, d, options.correction_sign)?
                };
                p_rows.push(zakai::normalize(&s)?.p);
                rows.push((s.psi.clone(), s.log_normalizer));
            }
            clamps = s.clamps;
            unnormalized = Some(rows);
        }
        Scheme::Gamma => {
            let a = zakai::interaction_matrix(model, beta, options.correction_sign);
            let mut g = zakai::to_gamma(&start, &a, 0.0)?;
            let mut rows = Vec::with_capacity(n + 1);
            p_rows.push(zakai::normalize(&start)?.p);
            rows.push((start.psi.clone(), start.log_normalizer));
            for &d in dy {
                g = zakai::gamma_langevin_step(&g, model, beta, dt, d)?;
                if g.condition() > GAMMA_REANCHOR_CONDITION {
                    g = g.reanchor()?;
                }
                let psi = zakai::from_gamma(&g)?;
                p_rows.push(zakai::normalize(&psi)?.p);
                rows.push((psi.psi, psi.log_normalizer));
            }
            clamps = 0;
            unnormalized = Some(rows);
        }
        Scheme::Log => {
            let mut s = LogState::from_unnormalized(&start);
            p_rows.push(s.to_filter_state().p);
            for &d in dy {
                s = zakai::log_step(&s, model, beta, dt, d, options.correction_sign)?;
                p_rows.push(s.to_filter_state().p);
            }
            clamps = 0;
        }
        Scheme::WonhamIto | Scheme::WonhamLangevin => {
            let mut s = zakai::normalize(&start)?;
            p_rows.push(s.p.clone());
            for &d in dy {
                s = if options.scheme == Scheme::WonhamIto {
                    wonham::wonham_step(&s, model, beta, dt, d, options.sign_variant)?
                } else {
                    wonham::wonham_langevin_step(&s, model, beta, dt, d, options.correction_sign)?
                };
                p_rows.push(s.p.clone());
            }
            clamps = s.clamps;
        }
        Scheme::TelegraphIto | Scheme::TelegraphLangevin => {
            let nu = model.telegraph_rate().expect("checked above");
            let mut s = TelegraphState::from_filter(&zakai::normalize(&start)?);
            p_rows.push(s.to_filter().p);
            for &d in dy {
                s = if options.scheme == Scheme::TelegraphIto {
                    wonham::telegraph_ito_step(&s, nu, beta, dt, d)?
                } else {
                    wonham::telegraph_langevin_step(&s, nu, beta, dt, d)?
                };
                p_rows.push(s.to_filter().p);
            }
            clamps = s.clamps;
        }
        Scheme::BayesOracle => {
            let transition = transition_matrix(model, dt)?;
            let mut s = DiscreteBayesState {
                p: zakai::normalize(&start)?.p,
                step: 0,
            };
            p_rows.push(s.p.clone());
            for &d in dy {
                s = bayes_forward_step_with(&s, &transition, model, beta, dt, d)?;
                p_rows.push(s.p.clone());
            }
            clamps = 0;
        }
    }
    check_clamps(clamps, n)?;
    Ok(Trajectory {
        options,
        dt,
        p: p_rows,
        unnormalized,
        clamps,
    })
}
