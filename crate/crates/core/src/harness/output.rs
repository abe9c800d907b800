//! CSV layouts. Floats use 17 significant digits so reruns diff cleanly.

use std::io::{Read, Write};

use crate::chain::{ChainModel, JumpPath};
use crate::error::{FilterError, Result};
use crate::scheme::Trajectory;
use crate::signalpath::{fmt_f64, ObservationGrid};
use crate::wonham::{map_decision, mean_estimate, FilterState};

fn numbered(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |j| format!("{prefix}_{j}"))
}

/// `jump,t,state,level`; row 0 is the initial state. States are 1-based.
pub fn write_path_csv<W: Write>(path: &JumpPath, model: &ChainModel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["jump", "t", "state", "level"])?;
    let start = std::iter::once((0.0, path.initial_state()));
    for (i, (t, s)) in start.chain(path.jumps().iter().map(|j| (j.time, j.state))).enumerate() {
        w.write_record([i.to_string(), fmt_f64(t), (s + 1).to_string(), fmt_f64(model.level(s))])?;
    }
    w.flush()?;
    Ok(())
}

/// `r,t,y,x_level,p_1..p_K,xbar,map_state`, one row per grid point
/// including `t = 0`. `map_state` is 1-based; `x_level` is `NaN` where the
/// signal is unknown.
pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    grid: &ObservationGrid,
    model: &ChainModel,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let k = model.k();
    let mut header: Vec<String> = ["r", "t", "y", "x_level"].map(String::from).to_vec();
    header.extend(numbered("p", k));
    header.extend(["xbar".to_string(), "map_state".to_string()]);
    w.write_record(&header)?;
    let y = grid.cumulative();
    for (r, p) in traj.p.iter().enumerate() {
        let state = FilterState::new(p.clone(), grid.time(r));
        let mut row = vec![
            r.to_string(),
            fmt_f64(grid.time(r)),
            fmt_f64(y[r]),
            fmt_f64(grid.level_at(r).unwrap_or(f64::NAN)),
        ];
        row.extend(p.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(mean_estimate(&state, model)));
        row.push((map_decision(&state) + 1).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `r,t,psi_1..psi_K,log_normalizer`.
pub fn write_psi_csv<W: Write>(traj: &Trajectory, writer: W) -> Result<()> {
    let rows = traj
        .unnormalized
        .as_ref()
        .ok_or_else(|| FilterError::InvalidParameter(format!("{} has no unnormalized weights", traj.options.scheme)))?;
    let k = rows.first().map_or(0, |r| r.0.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec!["r".into(), "t".into()];
    header.extend(numbered("psi", k));
    header.push("log_normalizer".into());
    w.write_record(&header)?;
    for (r, (psi, ln)) in rows.iter().enumerate() {
        let mut row = vec![r.to_string(), fmt_f64(r as f64 * traj.dt)];
        row.extend(psi.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(*ln));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Last `p_1..p_K` row of a trajectory CSV.
pub fn read_terminal_p<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rd = csv::Reader::from_reader(reader);
    let columns: Vec<usize> = rd
        .headers()?
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("p_"))
        .map(|(i, _)| i)
        .collect();
    if columns.is_empty() {
        return Err(FilterError::InvalidParameter("trajectory file has no p_ columns".into()));
    }
    let mut last = None;
    for record in rd.records() {
        last = Some(record?);
    }
    let record = last.ok_or_else(|| FilterError::InvalidParameter("trajectory file has no rows".into()))?;
    columns
        .iter()
        .map(|&i| {
            record[i]
                .parse::<f64>()
                .map_err(|e| FilterError::InvalidParameter(format!("bad probability {:?}: {e}", &record[i])))
        })
        .collect()
}

/// `h,p_1..p_K`.
pub fn write_predictions_csv<W: Write>(rows: &[(f64, Vec<f64>)], writer: W) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.1.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["h".to_string()];
    header.extend(numbered("p", k));
    w.write_record(&header)?;
    for (h, p) in rows {
        let mut row = vec![fmt_f64(*h)];
        row.extend(p.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
