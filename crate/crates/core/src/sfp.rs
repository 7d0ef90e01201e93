//! Standard fixed-point iteration for range least squares, written as an MM
//! scheme: `-|x - y_i|` is bounded by its tangent plane at `x_k`, which leaves
//! a sum of spherical quadratics whose minimizer is an average.

use crate::error::{Error, Result};
use crate::linalg::{dist, dot, norm_sq};
use crate::objective::f_rls;
use crate::scenario::{Position, RangeSet, SensorArray};
use crate::trace::{run_mm, SolveTrace, SolverConfig};

fn unit_offsets(x_k: &[f64], sensors: &[Position]) -> Result<Vec<Vec<f64>>> {
    sensors
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let d = dist(x_k, y.coords());
            if d == 0.0 {
                return Err(Error::AtSensor { index: k });
            }
            Ok(x_k.iter().zip(y.coords()).map(|(a, b)| (a - b) / d).collect())
        })
        .collect()
}

/// Average of the points `y_i + r_i w_i` over any number of sensors.
fn fixed_point_update(x_k: &[f64], sensors: &[Position], ranges: &[f64]) -> Result<Vec<f64>> {
    let w = unit_offsets(x_k, sensors)?;
    let n = x_k.len();
    let mut next = vec![0.0; n];
    for ((y, r), wi) in sensors.iter().zip(ranges).zip(&w) {
        for a in 0..n {
            next[a] += y.coords()[a] + r * wi[a];
        }
    }
    let m = sensors.len() as f64;
    Ok(next.into_iter().map(|v| v / m).collect())
}

/// `sum_i r_i^2 - 2 r_i w_i^T (x - y_i) + |x - y_i|^2`.
pub fn sfp_surrogate(x: &Position, x_k: &Position, array: &SensorArray, ranges: &RangeSet) -> Result<f64> {
    ranges.check_len(array)?;
    array.check_dim(x)?;
    array.check_dim(x_k)?;
    let w = unit_offsets(x_k.coords(), array.sensors())?;
    Ok(array
        .sensors()
        .iter()
        .zip(ranges.values())
        .zip(&w)
        .map(|((y, r), wi)| {
            let rel: Vec<f64> = x.coords().iter().zip(y.coords()).map(|(a, b)| a - b).collect();
            r * r - 2.0 * r * dot(wi, &rel) + norm_sq(&rel)
        })
        .sum())
}

/// `x_{k+1} = (1/m) sum_i (y_i + r_i w_i)`.
pub fn sfp_step(x_k: &Position, array: &SensorArray, ranges: &RangeSet) -> Result<Position> {
    ranges.check_len(array)?;
    array.check_dim(x_k)?;
    fixed_point_update(x_k.coords(), array.sensors(), ranges.values()).map(Position::from_raw)
}

/// Iterates [`sfp_step`] to convergence. Starts from the sensor centroid when
/// `x0` is `None`.
pub fn sfp_solve(
    x0: Option<&Position>,
    array: &SensorArray,
    ranges: &RangeSet,
    cfg: &SolverConfig,
) -> Result<(Position, SolveTrace)> {
    ranges.check_len(array)?;
    let start = x0.cloned().unwrap_or_else(|| array.centroid());
    run_mm(
        &start,
        array,
        cfg,
        |x| f_rls(x, array, ranges),
        |x| sfp_step(x, array, ranges),
    )
}
