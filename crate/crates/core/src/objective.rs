//! Least-squares costs for range and range-difference localization.

use crate::error::{Error, Result};
use crate::scenario::{Position, RangeDiff, RangeDiffSet, RangeSet, SensorArray};

/// `sum_i (r_i - |x - y_i|)^2`.
pub fn f_rls(x: &Position, array: &SensorArray, ranges: &RangeSet) -> Result<f64> {
    array.check_dim(x)?;
    ranges.check_len(array)?;
    Ok(array
        .sensors()
        .iter()
        .zip(ranges.values())
        .map(|(y, r)| {
            let e = r - x.distance(y);
            e * e
        })
        .sum())
}

/// `sum over stored pairs of (r_ij - (|x - y_i| - |x - y_j|))^2`.
pub fn f_rdls(x: &Position, array: &SensorArray, rd: &RangeDiffSet) -> Result<f64> {
    rd.check_against(array)?;
    f_rdls_entries(x, array, rd.entries())
}

/// Range-difference cost over an arbitrary list of entries, in any orientation.
pub fn f_rdls_entries(x: &Position, array: &SensorArray, entries: &[RangeDiff]) -> Result<f64> {
    f_rdls_with(x, array, entries, &mut Vec::new())
}

/// [`f_rdls_entries`] with a caller-owned buffer for the sensor distances.
pub(crate) fn f_rdls_with(
    x: &Position,
    array: &SensorArray,
    entries: &[RangeDiff],
    d: &mut Vec<f64>,
) -> Result<f64> {
    array.check_dim(x)?;
    let m = array.len();
    d.clear();
    d.extend(array.sensors().iter().map(|y| x.distance(y)));
    let mut total = 0.0;
    for e in entries {
        if e.i >= m || e.j >= m {
            return Err(Error::InvalidIndex {
                index: e.i.max(e.j),
                m,
            });
        }
        let res = e.value - (d[e.i] - d[e.j]);
        total += res * res;
    }
    Ok(total)
}

/// Default central-difference step `1e-6 * (1 + |x|)`.
pub fn default_fd_step(x: &Position) -> f64 {
    let norm = x.coords().iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-6 * (1.0 + norm)
}

/// Central-difference gradient of `f` at `x`. Refuses to differentiate within
/// `h` of any point in `singular` (the cost has kinks at the sensors).
pub fn grad_fd<F>(f: F, x: &Position, h: f64, singular: &[Position]) -> Result<Vec<f64>>
where
    F: Fn(&Position) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be > 0"));
    }
    if let Some(k) = singular.iter().position(|s| s.distance(x) <= h) {
        return Err(Error::AtSensor { index: k });
    }
    let n = x.dim();
    let mut g = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = h;
        let fp = f(&x.translated(&e))?;
        e[k] = -h;
        let fm = f(&x.translated(&e))?;
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}
