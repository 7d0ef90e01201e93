//! Solver configuration, iteration traces and the shared MM driver loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::scenario::{Position, SensorArray};

/// Objective values below this are treated as an exact fit.
pub const ZERO_OBJECTIVE: f64 = 1e-18;

/// Iterates closer than this to a sensor are moved off it.
pub const SENSOR_SNAP_RADIUS: f64 = 1e-9;

/// Distance an iterate is moved when it lands on a sensor.
pub const SENSOR_NUDGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative objective change that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Drop zero-valued range differences from the range-difference cost,
    /// keeping only strictly positive pairs.
    pub strict_positive_pairs: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-4,
            max_iter: 500,
            strict_positive_pairs: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("solver tolerance must be > 0"));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    SingularSystem,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::SingularSystem => "singular_system",
        }
    }
}

/// Every iterate (starting with `x0`) and its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveTrace {
    pub iterates: Vec<Position>,
    pub objectives: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl SolveTrace {
    pub fn final_point(&self) -> &Position {
        self.iterates.last().expect("trace holds x0")
    }

    pub fn final_objective(&self) -> f64 {
        *self.objectives.last().expect("trace holds f(x0)")
    }

    /// Largest increase between consecutive objective values (0 if monotone).
    pub fn max_increase(&self) -> f64 {
        self.objectives
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// CSV with header `iter,x_1..x_n,objective`; one row per iterate.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.iterates.first().map_or(0, Position::dim);
        let mut header = vec!["iter".to_string()];
        header.extend((1..=n).map(|k| format!("x_{k}")));
        header.push("objective".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, (x, f)) in self.iterates.iter().zip(&self.objectives).enumerate() {
            let coords: Vec<String> = x.coords().iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{k},{},{f:?}", coords.join(","))?;
        }
        Ok(())
    }
}

/// Moves `x` by [`SENSOR_NUDGE`] toward the centroid of the other sensors if
/// it sits within [`SENSOR_SNAP_RADIUS`] of a sensor; `None` if it does not.
pub(crate) fn nudge_off_sensors(x: &Position, array: &SensorArray) -> Option<Position> {
    let hit = array
        .sensors()
        .iter()
        .position(|s| dist_sq(s.coords(), x.coords()) <= SENSOR_SNAP_RADIUS * SENSOR_SNAP_RADIUS)?;
    let n = array.dim();
    let others = array.len() - 1;
    let mut target = vec![0.0; n];
    for (k, s) in array.sensors().iter().enumerate() {
        if k != hit {
            for (t, v) in target.iter_mut().zip(s.coords()) {
                *t += v / others as f64;
            }
        }
    }
    let dir: Vec<f64> = target.iter().zip(x.coords()).map(|(t, v)| t - v).collect();
    let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    let step: Vec<f64> = if len > 0.0 {
        dir.iter().map(|d| d / len * SENSOR_NUDGE).collect()
    } else {
        let mut e = vec![0.0; n];
        e[0] = SENSOR_NUDGE;
        e
    };
    Some(x.translated(&step))
}

/// Runs an MM iteration: `step` maps an iterate (never on a sensor) to the
/// next one. Stops on relative objective change below `cfg.tol`, on an exact
/// fit, on `max_iter`, or when `step` reports a singular system.
pub(crate) fn run_mm<F, S>(
    x0: &Position,
    array: &SensorArray,
    cfg: &SolverConfig,
    mut objective: F,
    mut step: S,
) -> Result<(Position, SolveTrace)>
where
    F: FnMut(&Position) -> Result<f64>,
    S: FnMut(&Position) -> Result<Position>,
{
    cfg.validate()?;
    array.check_dim(x0)?;
    let mut f = objective(x0)?;
    let mut trace = SolveTrace {
        iterates: vec![x0.clone()],
        objectives: vec![f],
        status: SolveStatus::MaxIter,
        iterations: 0,
    };
    if f < ZERO_OBJECTIVE {
        trace.status = SolveStatus::Converged;
        return Ok((x0.clone(), trace));
    }
    for _ in 0..cfg.max_iter {
        let x = trace.final_point();
        let moved = nudge_off_sensors(x, array);
        let next = match step(moved.as_ref().unwrap_or(x)) {
            Ok(p) => p,
            Err(Error::SingularSystem { .. }) => {
                trace.status = SolveStatus::SingularSystem;
                break;
            }
            Err(e) => return Err(e),
        };
        let f_next = objective(&next)?;
        trace.iterates.push(next);
        trace.objectives.push(f_next);
        trace.iterations += 1;
        let rel = (f_next - f).abs() / f;
        f = f_next;
        if f < ZERO_OBJECTIVE || rel < cfg.tol {
            trace.status = SolveStatus::Converged;
            break;
        }
    }
    Ok((trace.final_point().clone(), trace))
}
