use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::ExperimentConfig;
use super::output;
use crate::chain::{simulate_jump_path, ChainModel, JumpPath};
use crate::error::{FilterError, Result};
use crate::oracle::{self, poisson_tail, PathspaceOptions, TowerReport};
use crate::rng::{stream, StreamRole};
use crate::scheme::{self, log_weight_discrepancy, p_discrepancy, run_scheme, Scheme, SchemeOptions, Trajectory};
use crate::signalpath::{step_count, synthesize_observations, ObservationGrid};
use crate::wonham::{predict, FilterState, SignVariant};
use crate::zakai::CorrectionSign;

/// Path and observations of one replica. Jump and noise randomness come
/// from separate streams, so either can be replayed alone.
pub fn replica_grid(
    model: &ChainModel,
    horizon: f64,
    dt: f64,
    beta: f64,
    master_seed: u64,
    replica: u64,
) -> Result<(JumpPath, ObservationGrid)> {
    let path = simulate_jump_path(model, horizon, &mut stream(master_seed, replica, StreamRole::Jump))?;
    let grid = synthesize_observations(&path, model, dt, beta, &mut stream(master_seed, replica, StreamRole::Noise))?;
    Ok((path, grid))
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = BufWriter::new(File::create(&path)?);
    Ok((path, file))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let (path, mut file) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    use std::io::Write;
    writeln!(file)?;
    file.flush()?;
    Ok(path)
}

pub struct SimulateOutput {
    pub path: JumpPath,
    pub grid: ObservationGrid,
    pub files: Vec<PathBuf>,
}

/// Writes `path.csv` and `observations.csv` for replica 0.
pub fn run_simulate(config: &ExperimentConfig) -> Result<SimulateOutput> {
    let model = config.validate()?;
    let (path, grid) = replica_grid(&model, config.horizon, config.dt, config.beta, config.master_seed, 0)?;
    let (path_file, w) = create(&config.output_dir, "path.csv")?;
    output::write_path_csv(&path, &model, w)?;
    let (obs_file, w) = create(&config.output_dir, "observations.csv")?;
    grid.write_csv(w)?;
    Ok(SimulateOutput {
        path,
        grid,
        files: vec![path_file, obs_file],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scheme: Scheme,
    pub correction_sign: CorrectionSign,
    pub sign_variant: SignVariant,
    pub clamps: u64,
    pub steps: usize,
    pub dt: f64,
    pub beta: f64,
    pub master_seed: u64,
    pub observations: String,
    pub terminal_p: Vec<f64>,
}

pub struct FilterOutput {
    pub trajectory: Trajectory,
    pub grid: ObservationGrid,
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

/// Observations from the config's CSV if given, else replica 0.
pub fn load_observations(config: &ExperimentConfig, model: &ChainModel) -> Result<ObservationGrid> {
    match &config.observations {
        Some(p) => {
            let grid = ObservationGrid::read_csv(File::open(p)?, config.dt, config.beta)?;
            let expected = config.n_steps()?;
            if grid.n_steps() != expected {
                return Err(FilterError::InvalidParameter(format!(
                    "{} has {} rows, expected {expected}",
                    p.display(),
                    grid.n_steps()
                )));
            }
            Ok(grid)
        }
        None => Ok(replica_grid(model, config.horizon, config.dt, config.beta, config.master_seed, 0)?.1),
    }
}

/// Writes `trajectory.csv`, `report.json` and, for the unnormalized
/// schemes, `psi.csv`.
pub fn run_filter(config: &ExperimentConfig) -> Result<FilterOutput> {
    let model = config.validate()?;
    let grid = load_observations(config, &model)?;
    let options = config.scheme_options();
    let trajectory = run_scheme(&model, &grid, options)?;

    let mut files = Vec::new();
    let (f, w) = create(&config.output_dir, "trajectory.csv")?;
    output::write_trajectory_csv(&trajectory, &grid, &model, w)?;
    files.push(f);
    if trajectory.unnormalized.is_some() {
        let (f, w) = create(&config.output_dir, "psi.csv")?;
        output::write_psi_csv(&trajectory, w)?;
        files.push(f);
    }
    let report = RunReport {
        scheme: options.scheme,
        correction_sign: options.correction_sign,
        sign_variant: options.sign_variant,
        clamps: trajectory.clamps,
        steps: trajectory.n_steps(),
        dt: config.dt,
        beta: config.beta,
        master_seed: config.master_seed,
        observations: config
            .observations
            .as_ref()
            .map_or_else(|| "synthesized".to_string(), |p| p.display().to_string()),
        terminal_p: trajectory.terminal().p,
    };
    files.push(write_json(&config.output_dir, "report.json", &report)?);
    Ok(FilterOutput {
        trajectory,
        grid,
        report,
        files,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Max entrywise gap of the normalized outputs.
    P,
    /// Max gap of `log psi_j + log_normalizer`.
    LogWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePair {
    pub label: String,
    pub a: SchemeOptions,
    pub b: SchemeOptions,
    pub metric: Metric,
}

impl ConvergencePair {
    pub fn new(a: SchemeOptions, b: SchemeOptions, metric: Metric) -> Self {
        ConvergencePair {
            label: format!("{} vs {}", a.label(), b.label()),
            a,
            b,
            metric,
        }
    }
}

/// Pairs reported by the convergence subcommand.
pub fn default_pairs(model: &ChainModel) -> Vec<ConvergencePair> {
    use Metric::*;
    let s = SchemeOptions::new;
    let innovation = s(Scheme::WonhamIto);
    let mut pairs = vec![
        ConvergencePair::new(s(Scheme::ZakaiIto), innovation, P),
        ConvergencePair::new(s(Scheme::BayesOracle), innovation, P),
        ConvergencePair::new(s(Scheme::Log), innovation, P),
        ConvergencePair::new(s(Scheme::Gamma), s(Scheme::ZakaiLangevin), P),
        ConvergencePair::new(s(Scheme::ZakaiLangevin), s(Scheme::ZakaiIto), LogWeight),
        ConvergencePair::new(
            s(Scheme::ZakaiLangevin).with_sign(CorrectionSign::Plus),
            s(Scheme::ZakaiIto),
            LogWeight,
        ),
        ConvergencePair::new(s(Scheme::WonhamLangevin), innovation, P),
    ];
    if model.telegraph_rate().is_some() {
        pairs.push(ConvergencePair::new(s(Scheme::TelegraphIto), innovation, P));
        pairs.push(ConvergencePair::new(s(Scheme::TelegraphLangevin), s(Scheme::TelegraphIto), P));
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSeries {
    pub label: String,
    pub metric: Metric,
    pub dt: Vec<f64>,
    /// Max-over-time discrepancy per mesh, averaged over replicas.
    pub discrepancy: Vec<f64>,
}

impl PairSeries {
    /// `log2(e_k / e_{k+1})` for consecutive meshes.
    pub fn orders(&self) -> Vec<f64> {
        self.discrepancy.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
    }

    /// Least-squares slope of `log2 e` against `-log2 dt`.
    pub fn fitted_order(&self) -> f64 {
        let xs: Vec<f64> = self.dt.iter().map(|d| -d.log2()).collect();
        let ys: Vec<f64> = self.discrepancy.iter().map(|e| e.log2()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        -sxy / sxx
    }
}

fn discrepancy(a: &Trajectory, b: &Trajectory, metric: Metric) -> Result<f64> {
    match metric {
        Metric::P => Ok(p_discrepancy(a, b)),
        Metric::LogWeight => log_weight_discrepancy(a, b).ok_or_else(|| FilterError::SchemeMismatch {
            scheme: format!("{} / {}", a.options.scheme, b.options.scheme),
            reason: "log-weight metric needs two unnormalized schemes".into(),
        }),
    }
}

/// For each replica, synthesizes observations on the finest mesh
/// `dt / 2^halvings`, sums them pairwise up to `dt`, and runs every pair on
/// every mesh. Coarser meshes therefore see the same Brownian path.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    model: &ChainModel,
    horizon: f64,
    dt: f64,
    beta: f64,
    halvings: usize,
    replicas: usize,
    master_seed: u64,
    pairs: &[ConvergencePair],
) -> Result<Vec<PairSeries>> {
    if replicas == 0 {
        return Err(FilterError::InvalidParameter("replicas must be at least 1".into()));
    }
    for pair in pairs {
        scheme::check_applicable(model, pair.a.scheme)?;
        scheme::check_applicable(model, pair.b.scheme)?;
    }
    let finest = dt / f64::powi(2.0, halvings as i32);
    step_count(horizon, dt)?;
    step_count(horizon, finest)?;

    let per_replica: Vec<Vec<Vec<f64>>> = (0..replicas as u64)
        .into_par_iter()
        .map(|replica| {
            let (_, fine) = replica_grid(model, horizon, finest, beta, master_seed, replica)?;
            let mut grids = vec![fine];
            for _ in 0..halvings {
                let next = grids.last().expect("non-empty").coarsen()?;
                grids.push(next);
            }
            grids.reverse();
            let mut out = vec![Vec::with_capacity(grids.len()); pairs.len()];
            for grid in &grids {
                let mut cache: HashMap<SchemeOptions, Trajectory> = HashMap::new();
                for (i, pair) in pairs.iter().enumerate() {
                    for o in [pair.a, pair.b] {
                        if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(o) {
                            e.insert(run_scheme(model, grid, o)?);
                        }
                    }
                    out[i].push(discrepancy(&cache[&pair.a], &cache[&pair.b], pair.metric)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let dts: Vec<f64> = (0..=halvings).map(|l| dt / f64::powi(2.0, l as i32)).collect();
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| PairSeries {
            label: pair.label.clone(),
            metric: pair.metric,
            dt: dts.clone(),
            discrepancy: (0..=halvings)
                .map(|l| per_replica.iter().map(|r| r[i][l]).sum::<f64>() / replicas as f64)
                .collect(),
        })
        .collect())
}

/// Writes `convergence.csv` with `pair,level,dt,discrepancy,order`.
pub fn run_convergence(config: &ExperimentConfig) -> Result<Vec<PairSeries>> {
    let model = config.validate()?;
    if config.halvings < 2 {
        return Err(FilterError::InvalidParameter(format!(
            "convergence needs at least 2 halvings, got {}",
            config.halvings
        )));
    }
    let series = convergence_study(
        &model,
        config.horizon,
        config.dt,
        config.beta,
        config.halvings,
        config.replicas,
        config.master_seed,
        &default_pairs(&model),
    )?;
    let (_, w) = create(&config.output_dir, "convergence.csv")?;
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["pair", "level", "dt", "discrepancy", "order"])?;
    for s in &series {
        let orders = s.orders();
        for (level, (dt, e)) in s.dt.iter().zip(&s.discrepancy).enumerate() {
            let order = if level == 0 {
                String::new()
            } else {
                crate::signalpath::fmt_f64(orders[level - 1])
            };
            w.write_record([
                s.label.clone(),
                level.to_string(),
                crate::signalpath::fmt_f64(*dt),
                crate::signalpath::fmt_f64(*e),
                order,
            ])?;
        }
    }
    w.flush()?;
    Ok(series)
}

/// A variant "converges" when its discrepancy at the finest mesh is below
/// this fraction of the coarsest one, and "plateaus" otherwise.
pub const PLATEAU_RATIO: f64 = 0.8;
/// Required gap between the rejected and accepted variants at the finest
/// mesh.
pub const SEPARATION: f64 = 10.0;
/// Variants closer than this at every mesh are treated as identical.
pub const COINCIDENCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    /// Index into the family's variants.
    Accept(usize),
    Indistinguishable,
    Inconclusive,
}

pub fn decide(first: &[f64], second: &[f64], between: &[f64]) -> Decision {
    if between.iter().all(|d| *d <= COINCIDENCE) {
        return Decision::Indistinguishable;
    }
    let converges = |d: &[f64]| d[d.len() - 1] < PLATEAU_RATIO * d[0];
    let last = |d: &[f64]| d[d.len() - 1];
    if converges(first) && !converges(second) && last(second) >= SEPARATION * last(first) {
        Decision::Accept(0)
    } else if converges(second) && !converges(first) && last(first) >= SEPARATION * last(second) {
        Decision::Accept(1)
    } else {
        Decision::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub name: String,
    pub reference: String,
    pub metric: Metric,
    pub variants: Vec<String>,
    /// Discrepancy of each variant against the reference, per mesh.
    pub discrepancy: Vec<Vec<f64>>,
    /// Discrepancy between the two variants, per mesh.
    pub variant_gap: Vec<f64>,
    pub decision: Decision,
    /// Value reported in the verdict.
    pub verdict: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjudicationReport {
    pub verdict: Value,
    pub dt: Vec<f64>,
    pub replicas: usize,
    pub families: Vec<FamilyReport>,
    /// Reported but not part of the verdict.
    pub informational: Vec<FamilyReport>,
}

impl AdjudicationReport {
    pub fn is_conclusive(&self) -> bool {
        self.verdict != json!("inconclusive")
            && self.families.iter().all(|f| f.decision != Decision::Inconclusive)
    }
}

struct Family {
    name: &'static str,
    key: Option<&'static str>,
    reference: SchemeOptions,
    metric: Metric,
    variants: [(SchemeOptions, Value); 2],
}

fn families() -> Vec<Family> {
    use CorrectionSign::*;
    let s = SchemeOptions::new;
    let zakai = s(Scheme::ZakaiIto);
    vec![
        Family {
            name: "eq10",
            key: Some("correction_sign"),
            reference: zakai,
            metric: Metric::LogWeight,
            variants: [
                (s(Scheme::ZakaiLangevin).with_sign(Minus), json!(-1)),
                (s(Scheme::ZakaiLangevin).with_sign(Plus), json!(1)),
            ],
        },
        Family {
            name: "eq11",
            key: Some("eq11"),
            reference: zakai,
            metric: Metric::P,
            variants: [
                (s(Scheme::WonhamIto).with_variant(SignVariant::Innovation), json!("innovation")),
                (s(Scheme::WonhamIto).with_variant(SignVariant::Paper), json!("paper")),
            ],
        },
        Family {
            name: "eq12",
            key: None,
            reference: zakai,
            metric: Metric::P,
            variants: [
                (s(Scheme::WonhamLangevin).with_sign(Minus), json!(-1)),
                (s(Scheme::WonhamLangevin).with_sign(Plus), json!(1)),
            ],
        },
        Family {
            name: "eq14",
            key: None,
            reference: zakai,
            metric: Metric::P,
            variants: [
                (s(Scheme::Log).with_sign(Minus), json!(-1)),
                (s(Scheme::Log).with_sign(Plus), json!(1)),
            ],
        },
    ]
}

/// Runs both correction signs and both normalized-filter variants against
/// the Euler-stepped unnormalized filter on three meshes `dt, dt/2, dt/4`.
pub fn adjudicate(
    model: &ChainModel,
    horizon: f64,
    dt: f64,
    beta: f64,
    replicas: usize,
    master_seed: u64,
) -> Result<AdjudicationReport> {
    let fams = families();
    let mut pairs = Vec::new();
    for f in &fams {
        let [(a, _), (b, _)] = &f.variants;
        pairs.push(ConvergencePair::new(*a, f.reference, f.metric));
        pairs.push(ConvergencePair::new(*b, f.reference, f.metric));
        pairs.push(ConvergencePair::new(*a, *b, f.metric));
    }
    let series = convergence_study(model, horizon, dt, beta, 2, replicas, master_seed, &pairs)?;

    let mut decided = Vec::new();
    let mut informational = Vec::new();
    for (f, s) in fams.iter().zip(series.chunks(3)) {
        let decision = decide(&s[0].discrepancy, &s[1].discrepancy, &s[2].discrepancy);
        let verdict = match &decision {
            Decision::Accept(i) => f.variants[*i].1.clone(),
            Decision::Indistinguishable => json!("indistinguishable"),
            Decision::Inconclusive => json!("inconclusive"),
        };
        let report = FamilyReport {
            name: f.name.to_string(),
            reference: f.reference.label(),
            metric: f.metric,
            variants: f.variants.iter().map(|v| v.0.label()).collect(),
            discrepancy: vec![s[0].discrepancy.clone(), s[1].discrepancy.clone()],
            variant_gap: s[2].discrepancy.clone(),
            decision,
            verdict,
        };
        match f.key {
            Some(key) => decided.push((key, report)),
            None => informational.push(report),
        }
    }

    let all = |d: &Decision| decided.iter().all(|(_, r)| &r.decision == d);
    let verdict = if all(&Decision::Indistinguishable) {
        json!("indistinguishable")
    } else if all(&Decision::Inconclusive) {
        json!("inconclusive")
    } else {
        Value::Object(decided.iter().map(|(k, r)| (k.to_string(), r.verdict.clone())).collect())
    };
    Ok(AdjudicationReport {
        verdict,
        dt: series[0].dt.clone(),
        replicas,
        families: decided.into_iter().map(|(_, r)| r).collect(),
        informational,
    })
}

/// Writes `adjudication.json`.
pub fn run_adjudicate(config: &ExperimentConfig) -> Result<AdjudicationReport> {
    let model = config.validate()?;
    let report = adjudicate(&model, config.horizon, config.dt, config.beta, config.replicas, config.master_seed)?;
    write_json(&config.output_dir, "adjudication.json", &report)?;
    Ok(report)
}

/// Predictions from the last row of `trajectory.csv` in the output
/// directory, written to `predictions.csv`.
pub fn run_predict(config: &ExperimentConfig) -> Result<Vec<(f64, Vec<f64>)>> {
    let model = config.validate()?;
    let source = config.output_dir.join("trajectory.csv");
    let file = File::open(&source).map_err(|e| {
        FilterError::InvalidParameter(format!("no filter trajectory at {} ({e}); run `filter` first", source.display()))
    })?;
    let p = output::read_terminal_p(file)?;
    if p.len() != model.k() {
        return Err(FilterError::InvalidParameter(format!(
            "trajectory has {} states, model has {}",
            p.len(),
            model.k()
        )));
    }
    let state = FilterState::new(p, config.horizon);
    let rows = config
        .prediction_horizons
        .iter()
        .map(|&h| Ok((h, predict(&state, &model, h)?)))
        .collect::<Result<Vec<_>>>()?;
    let (_, w) = create(&config.output_dir, "predictions.csv")?;
    output::write_predictions_csv(&rows, w)?;
    Ok(rows)
}

pub const TOWER_Z_LIMIT: f64 = 4.0;
pub const MSE_MARGIN_Z: f64 = 3.0;
pub const PATHSPACE_AGREEMENT: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathspaceCheck {
    pub horizon: f64,
    pub max_jumps: usize,
    pub oracle_p: Vec<f64>,
    pub filter_p: Vec<f64>,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationOutcome {
    pub z_scores: Vec<f64>,
    pub mse_filter: f64,
    pub mse_const: f64,
    pub truncation_bound: Option<f64>,
    pub tower: TowerReport,
    pub pathspace: Option<PathspaceCheck>,
    pub failures: Vec<String>,
}

impl ValidationOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Longest multiple of `dt` up to `horizon` on which more than `max_jumps`
/// jumps has probability at most `tolerance`.
fn oracle_horizon(model: &ChainModel, horizon: f64, dt: f64, max_jumps: usize, tolerance: f64) -> Option<f64> {
    let n = step_count(horizon, dt).ok()?;
    (1..=n)
        .rev()
        .map(|r| r as f64 * dt)
        .find(|&t| poisson_tail(model.max_exit_rate(), t, max_jumps) <= tolerance)
}

/// Tower-property check over `replicas` runs of the configured scheme and,
/// when the model is small enough, a path-space comparison of the
/// Euler-stepped unnormalized filter on a short window at a tenth of the
/// configured step. Writes
/// `validation.json`.
pub fn run_validate(config: &ExperimentConfig, replicas: usize) -> Result<ValidationOutcome> {
    let model = config.validate()?;
    let tower = oracle::tower_property_check(
        &model,
        config.horizon,
        config.dt,
        config.beta,
        replicas,
        config.master_seed,
        config.scheme_options(),
    )?;
    let mut failures = Vec::new();
    for (j, z) in tower.z_scores.iter().enumerate() {
        if z.abs() > TOWER_Z_LIMIT {
            failures.push(format!("state {}: z-score {z:.2} exceeds {TOWER_Z_LIMIT}", j + 1));
        }
    }
    if tower.mse_margin_z < MSE_MARGIN_Z {
        failures.push(format!(
            "filter MSE {:.4} vs constant {:.4}: margin {:.2} standard errors, need {MSE_MARGIN_Z}",
            tower.mse_filter, tower.mse_const, tower.mse_margin_z
        ));
    }

    let opts = PathspaceOptions {
        max_jumps: 3,
        ..Default::default()
    };
    let mut pathspace = None;
    if model.k() <= 3 {
        if let Some(t) = oracle_horizon(&model, config.horizon, config.dt, opts.max_jumps, opts.truncation_tolerance) {
            // Euler error at the configured step can approach the agreement
            // threshold on its own, so the comparison runs ten times finer.
            let (_, grid) = replica_grid(&model, t, config.dt / 10.0, config.beta, config.master_seed, 0)?;
            let oracle = oracle::pathspace_expectation(&model, &grid, t, opts)?;
            let filter = run_scheme(&model, &grid, SchemeOptions::new(Scheme::ZakaiIto))?.terminal();
            let discrepancy = crate::linalg::max_abs_vec_diff(&oracle.p, &filter.p);
            if discrepancy > PATHSPACE_AGREEMENT {
                failures.push(format!(
                    "path-space oracle differs from the filter by {discrepancy:.2e} at t = {t}"
                ));
            }
            pathspace = Some((
                oracle.truncation_bound,
                PathspaceCheck {
                    horizon: t,
                    max_jumps: opts.max_jumps,
                    oracle_p: oracle.p,
                    filter_p: filter.p,
                    discrepancy,
                },
            ));
        }
    }
    let outcome = ValidationOutcome {
        z_scores: tower.z_scores.clone(),
        mse_filter: tower.mse_filter,
        mse_const: tower.mse_const,
        truncation_bound: pathspace.as_ref().map(|p| p.0),
        tower,
        pathspace: pathspace.map(|p| p.1),
        failures,
    };
    write_json(&config.output_dir, "validation.json", &outcome)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_rule() {
        assert_eq!(decide(&[0.4, 0.2, 0.1], &[20.0, 20.0, 20.0], &[20.0; 3]), Decision::Accept(0));
        assert_eq!(decide(&[0.6, 0.6, 0.6], &[0.2, 0.1, 0.05], &[0.5; 3]), Decision::Accept(1));
        assert_eq!(decide(&[0.1, 0.1, 0.1], &[0.1, 0.1, 0.1], &[0.0; 3]), Decision::Indistinguishable);
        // Both converge: orders not separable.
        assert_eq!(decide(&[0.4, 0.2, 0.1], &[0.8, 0.4, 0.2], &[0.5; 3]), Decision::Inconclusive);
        // Plateau too close to the accepted discrepancy.
        assert_eq!(decide(&[0.4, 0.2, 0.1], &[0.5, 0.5, 0.5], &[0.5; 3]), Decision::Inconclusive);
    }

    #[test]
    fn orders_of_a_clean_series() {
        let s = PairSeries {
            label: "x".into(),
            metric: Metric::P,
            dt: vec![0.4, 0.2, 0.1, 0.05],
            discrepancy: vec![1.6, 0.8, 0.4, 0.2],
        };
        assert!(s.orders().iter().all(|o| (o - 1.0).abs() < 1e-12));
        assert!((s.fitted_order() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_horizon_respects_bound() {
        let model = ChainModel::telegraph(1.0);
        let t = oracle_horizon(&model, 5.0, 1e-3, 3, 1e-4).unwrap();
        assert!(poisson_tail(1.0, t, 3) <= 1e-4);
        assert!(poisson_tail(1.0, t + 1e-3, 3) > 1e-4);
        let still = ChainModel::new(vec![1.0, -1.0], vec![vec![0.0; 2]; 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(oracle_horizon(&still, 1.0, 0.1, 0, 1e-4), Some(1.0));
    }

    #[test]
    fn identical_schemes_have_zero_discrepancy() {
        let model = ChainModel::telegraph(1.0);
        let pair = ConvergencePair::new(SchemeOptions::new(Scheme::Log), SchemeOptions::new(Scheme::Log), Metric::P);
        let s = convergence_study(&model, 0.1, 1e-2, 0.5, 2, 2, 1, &[pair]).unwrap();
        assert_eq!(s[0].discrepancy, vec![0.0; 3]);
        assert_eq!(s[0].dt, vec![1e-2, 5e-3, 2.5e-3]);
    }
}
