//! Reference-free range-difference localization by majorization-minimization.
//!
//! Every iteration replaces the non-smooth range-difference cost with a
//! convex quadratic that lies above it and touches it at the current iterate
//! `x_k`. With `d_i = |x_k - y_i|` and for each stored pair `(i, j, r_ij)`:
//!
//! ```text
//! w_i  = (x_k - y_i) / d_i
//! s_ij = r_ij / d_j
//! Q_ij = (x_k - y_j)(x_k - y_i)^T / (d_j d_i)
//! ```
//!
//! the surrogate is
//!
//! ```text
//! g(x | x_k) = sum_ij  r_ij^2 + |x - y_i|^2 + (1 + s_ij)|x - y_j|^2
//!                      - 2 r_ij w_i^T (x - y_i)
//!                      - 2 (x - y_j)^T Q_ij (x - y_i)
//!                      + r_ij d_j
//! ```
//!
//! and its minimizer is `x_{k+1} = (sum M_ij)^-1 (sum p_ij)` with
//!
//! ```text
//! M_ij = (2 + s_ij) I - (Q_ij + Q_ij^T)
//! p_ij = y_i + y_j + r_ij w_i + s_ij y_j - Q_ij y_i - Q_ij^T y_j
//! ```
//!
//! The constant `r_ij d_j` does not move the minimizer; it is what makes
//! `g(x_k | x_k) = f(x_k)` hold exactly.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{dist, dot, MAX_DIM};
use crate::objective::f_rdls_with;
use crate::scenario::{Position, RangeDiff, RangeDiffSet, SensorArray};
use crate::trace::{run_mm, SolveTrace, SolverConfig};

/// Update matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Per-iteration bound quantities, evaluated at `x_k`.
#[derive(Clone, Debug)]
pub struct BoundQuantities {
    /// Unit vectors `w_i`, one per sensor.
    pub w: Vec<DVector<f64>>,
    /// Distances `|x_k - y_i|`, one per sensor.
    pub dist: Vec<f64>,
    /// The stored pairs the per-pair quantities refer to.
    pub pairs: Vec<RangeDiff>,
    /// `s_ij`, aligned with `pairs`.
    pub s: Vec<f64>,
    /// Rank-one `Q_ij`, aligned with `pairs`.
    pub q: Vec<DMatrix<f64>>,
}

pub fn bound_quantities(x_k: &Position, array: &SensorArray, rd: &RangeDiffSet) -> Result<BoundQuantities> {
    rd.check_against(array)?;
    bound_quantities_entries(x_k, array, rd.entries())
}

fn bound_quantities_entries(
    x_k: &Position,
    array: &SensorArray,
    entries: &[RangeDiff],
) -> Result<BoundQuantities> {
    array.check_dim(x_k)?;
    let xk = DVector::from_column_slice(x_k.coords());
    let mut w = Vec::with_capacity(array.len());
    let mut dists = Vec::with_capacity(array.len());
    for (k, y) in array.sensors().iter().enumerate() {
        let diff = &xk - DVector::from_column_slice(y.coords());
        let d = diff.norm();
        if d == 0.0 {
            return Err(Error::AtSensor { index: k });
        }
        w.push(diff / d);
        dists.push(d);
    }
    let s = entries.iter().map(|e| e.value / dists[e.j]).collect();
    let q = entries.iter().map(|e| &w[e.j] * w[e.i].transpose()).collect();
    Ok(BoundQuantities {
        w,
        dist: dists,
        pairs: entries.to_vec(),
        s,
        q,
    })
}

/// The quadratic majorizer `g(x | x_k)` of the range-difference cost.
pub fn surrogate_g(x: &Position, x_k: &Position, array: &SensorArray, rd: &RangeDiffSet) -> Result<f64> {
    let b = bound_quantities(x_k, array, rd)?;
    array.check_dim(x)?;
    let xv = DVector::from_column_slice(x.coords());
    let rel: Vec<DVector<f64>> = array
        .sensors()
        .iter()
        .map(|y| &xv - DVector::from_column_slice(y.coords()))
        .collect();
    let mut total = 0.0;
    for (k, e) in b.pairs.iter().enumerate() {
        let (ai, aj) = (&rel[e.i], &rel[e.j]);
        let r = e.value;
        let s = b.s[k];
        total += r * r + ai.norm_squared() + (1.0 + s) * aj.norm_squared()
            - 2.0 * r * b.w[e.i].dot(ai)
            - 2.0 * aj.dot(&(&b.q[k] * ai))
            + r * b.dist[e.j];
    }
    Ok(total)
}

/// One closed-form update `x_{k+1} = (sum M_ij)^-1 (sum p_ij)` over all stored pairs.
pub fn solvit_step(x_k: &Position, array: &SensorArray, rd: &RangeDiffSet) -> Result<Position> {
    rd.check_against(array)?;
    array.check_dim(x_k)?;
    step_entries(x_k, array, rd.entries(), &mut Vec::new())
}

/// Unit vector, reciprocal distance and `u . y` for one sensor.
type SensorTerms = ([f64; MAX_DIM], f64, f64);

fn step_entries(
    x_k: &Position,
    array: &SensorArray,
    entries: &[RangeDiff],
    units: &mut Vec<SensorTerms>,
) -> Result<Position> {
    let n = array.dim();
    let xk = x_k.coords();

    units.clear();
    for (k, y) in array.sensors().iter().enumerate() {
        let yc = y.coords();
        let d = dist(xk, yc);
        if d == 0.0 {
            return Err(Error::AtSensor { index: k });
        }
        let inv = 1.0 / d;
        let mut u = [0.0; MAX_DIM];
        for a in 0..n {
            u[a] = (xk[a] - yc[a]) * inv;
        }
        let uy = dot(&u[..n], yc);
        units.push((u, inv, uy));
    }

    let mut mat = [[0.0; MAX_DIM]; MAX_DIM];
    let mut rhs = [0.0; MAX_DIM];
    let mut diag = 0.0;
    for e in entries {
        let (ui, _, uiyi) = &units[e.i];
        let (uj, inv_dj, ujyj) = &units[e.j];
        let yi = array.sensor(e.i).coords();
        let yj = array.sensor(e.j).coords();
        let r = e.value;
        let s = r * inv_dj;
        diag += 2.0 + s;
        for a in 0..n {
            for b in 0..n {
                mat[a][b] -= uj[a] * ui[b] + ui[a] * uj[b];
            }
            // Q y_i = u_j (u_i . y_i), Q^T y_j = u_i (u_j . y_j)
            rhs[a] += yi[a] + (1.0 + s) * yj[a] + r * ui[a] - uj[a] * uiyi - ui[a] * ujyj;
        }
    }
    for (a, row) in mat.iter_mut().enumerate().take(n) {
        row[a] += diag;
    }
    let x = solve_small_spd(&mat, &rhs, n)?;
    Ok(Position::from_raw(x[..n].to_vec()))
}

fn solve_small_spd(mat: &[[f64; MAX_DIM]; MAX_DIM], rhs: &[f64; MAX_DIM], n: usize) -> Result<[f64; MAX_DIM]> {
    match n {
        2 => {
            let m = Matrix2::new(mat[0][0], mat[0][1], mat[1][0], mat[1][1]);
            let cond = condition2(&m);
            if !(cond <= MAX_CONDITION) {
                return Err(Error::SingularSystem { condition: cond });
            }
            let chol = m.cholesky().ok_or(Error::SingularSystem { condition: cond })?;
            let x = chol.solve(&Vector2::new(rhs[0], rhs[1]));
            Ok([x[0], x[1], 0.0])
        }
        3 => {
            let m = Matrix3::from_fn(|a, b| mat[a][b]);
            let eig = m.symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            if !(cond <= MAX_CONDITION) {
                return Err(Error::SingularSystem { condition: cond });
            }
            let chol = m.cholesky().ok_or(Error::SingularSystem { condition: cond })?;
            let x = chol.solve(&Vector3::new(rhs[0], rhs[1], rhs[2]));
            Ok([x[0], x[1], x[2]])
        }
        _ => Err(Error::invalid("dimension must be 2 or 3")),
    }
}

/// Condition number of a symmetric 2x2 matrix from its closed-form eigenvalues.
fn condition2(m: &Matrix2<f64>) -> f64 {
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (lo, hi) = (mean - rad, mean + rad);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Iterates [`solvit_step`] from `x0` until the relative change of the
/// range-difference cost drops below `cfg.tol`, the cost reaches zero, or
/// `cfg.max_iter` steps have run. A singular update ends the run with
/// [`crate::SolveStatus::SingularSystem`] and the last good iterate.
pub fn solvit_solve(
    x0: &Position,
    array: &SensorArray,
    rd: &RangeDiffSet,
    cfg: &SolverConfig,
) -> Result<(Position, SolveTrace)> {
    rd.check_against(array)?;
    let entries: Vec<RangeDiff> = if cfg.strict_positive_pairs {
        rd.entries().iter().copied().filter(|e| e.value > 0.0).collect()
    } else {
        rd.entries().to_vec()
    };
    if entries.is_empty() {
        return Err(Error::invalid("no range differences left to fit"));
    }
    let mut dists = Vec::with_capacity(array.len());
    let mut units = Vec::with_capacity(array.len());
    run_mm(
        x0,
        array,
        cfg,
        |x| f_rdls_with(x, array, &entries, &mut dists),
        |x| step_entries(x, array, &entries, &mut units),
    )
}

/// Smallest eigenvalue of `sum M_ij` at `x_k`; positive means the update is
/// well defined.
pub fn update_matrix_min_eigenvalue(x_k: &Position, array: &SensorArray, rd: &RangeDiffSet) -> Result<f64> {
    let b = bound_quantities(x_k, array, rd)?;
    let n = array.dim();
    let mut total = DMatrix::<f64>::zeros(n, n);
    for (k, q) in b.q.iter().enumerate() {
        total += DMatrix::<f64>::identity(n, n) * (2.0 + b.s[k]) - (q + q.transpose());
    }
    Ok(total.symmetric_eigenvalues().min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::f_rdls;
    use crate::scenario::{noisy_rangediffs, random_array, random_point, NoiseModel, RangeSet};
    use proptest::prelude::*;

    fn noise(sigma2: f64) -> NoiseModel {
        NoiseModel::new(sigma2, 1000.0, 340.0).unwrap()
    }

    #[test]
    fn unit_vector_and_zero_scale() {
        let a = SensorArray::from_coords(&[vec![0.0, 0.0], vec![10.0, 0.0]]).unwrap();
        let rd = RangeDiffSet::new(2, vec![RangeDiff::new(0, 1, 0.0)]).unwrap();
        let b = bound_quantities(&Position::xy(3.0, 4.0), &a, &rd).unwrap();
        assert!((b.w[0][0] - 0.6).abs() < 1e-15 && (b.w[0][1] - 0.8).abs() < 1e-15);
        assert_eq!(b.s[0], 0.0);
    }

    #[test]
    fn parallel_offsets_give_projector() {
        // x_k - y_j parallel to x_k - y_i: Q = u u^T, eigenvalues {1, 0}
        let a = SensorArray::from_coords(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let rd = RangeDiffSet::new(2, vec![RangeDiff::new(0, 1, 1.0)]).unwrap();
        let b = bound_quantities(&Position::xy(3.0, 3.0), &a, &rd).unwrap();
        let q = &b.q[0];
        assert!((q[(0, 1)] - q[(1, 0)]).abs() < 1e-15);
        let mut eig: Vec<f64> = q.clone().symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        assert!(eig[0].abs() < 1e-12 && (eig[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn at_sensor_is_reported() {
        let a = random_array(4, -10.0, 10.0, 2, 1).unwrap();
        let rd = RangeDiffSet::from_ranges(&RangeSet::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let x = a.sensor(2).clone();
        assert!(matches!(bound_quantities(&x, &a, &rd), Err(Error::AtSensor { index: 2 })));
        assert!(matches!(solvit_step(&x, &a, &rd), Err(Error::AtSensor { index: 2 })));
        assert!(matches!(surrogate_g(&x, &x, &a, &rd), Err(Error::AtSensor { index: 2 })));
    }

    #[test]
    fn symmetric_single_pair_fixed_point() {
        // r = 0 with x_k on the bisector: every bisector point has zero cost and
        // the step returns the foot of the bisector nearest x_k's projection.
        let a = SensorArray::from_coords(&[vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let rd = RangeDiffSet::new(2, vec![RangeDiff::new(0, 1, 0.0)]).unwrap();
        let x = Position::xy(0.0, 2.0);
        assert_eq!(f_rdls(&x, &a, &rd).unwrap(), 0.0);
        let next = solvit_step(&x, &a, &rd).unwrap();
        assert!(next.coords()[0].abs() < 1e-12);
        assert_eq!(f_rdls(&next, &a, &rd).unwrap(), 0.0);
        let again = solvit_step(&next, &a, &rd).unwrap();
        assert!(next.distance(&again) < 1e-12 || f_rdls(&again, &a, &rd).unwrap() == 0.0);
    }

    #[test]
    fn zero_noise_recovery_from_nearby_start() {
        let a = random_array(4, -10.0, 10.0, 2, 21).unwrap();
        let src = Position::xy(2.0, -3.0);
        let rd = noisy_rangediffs(&src, &a, &noise(0.0), 0).unwrap();
        let (x, trace) = solvit_solve(&Position::xy(2.5, -2.0), &a, &rd, &SolverConfig::default()).unwrap();
        assert!(x.distance(&src) < 1e-6, "{:?}", trace);
        assert!(trace.max_increase() <= 1e-9);
        assert_eq!(trace.iterates.len(), trace.iterations + 1);
    }

    #[test]
    fn strict_positive_pairs_drops_zero_entries() {
        let a = crate::scenario::rhombus_array();
        let rd = noisy_rangediffs(&Position::xy(0.0, 0.0), &a, &noise(0.0), 0).unwrap();
        let cfg = SolverConfig {
            strict_positive_pairs: true,
            ..Default::default()
        };
        assert!(solvit_solve(&Position::xy(1.0, 1.0), &a, &rd, &cfg).is_err());
        let (x, _) = solvit_solve(&Position::xy(1.0, 1.0), &a, &rd, &SolverConfig::default()).unwrap();
        assert!(f_rdls(&x, &a, &rd).unwrap() < 1e-12);
    }

    #[test]
    fn three_dimensional_step_descends() {
        let a = random_array(5, -10.0, 10.0, 3, 2).unwrap();
        let src = random_point(-5.0, 5.0, 3, 3).unwrap();
        let rd = noisy_rangediffs(&src, &a, &noise(1.0), 4).unwrap();
        let x = random_point(-5.0, 5.0, 3, 5).unwrap();
        let next = solvit_step(&x, &a, &rd).unwrap();
        assert!(f_rdls(&next, &a, &rd).unwrap() <= f_rdls(&x, &a, &rd).unwrap() + 1e-9);
    }

    proptest! {
        #[test]
        fn step_never_increases_cost(seed in 0u64..100_000, m in 3usize..7) {
            let a = random_array(m, -10.0, 10.0, 2, seed).unwrap();
            let src = random_point(-10.0, 10.0, 2, seed + 1).unwrap();
            let rd = noisy_rangediffs(&src, &a, &noise(4.0), seed + 2).unwrap();
            let x = random_point(-15.0, 15.0, 2, seed + 3).unwrap();
            let f0 = f_rdls(&x, &a, &rd).unwrap();
            let next = solvit_step(&x, &a, &rd).unwrap();
            prop_assert!(f_rdls(&next, &a, &rd).unwrap() <= f0 + 1e-9 * (1.0 + f0));
        }

        #[test]
        fn bound_quantity_invariants(seed in 0u64..100_000, m in 2usize..7) {
            let a = random_array(m, -10.0, 10.0, 2, seed).unwrap();
            let src = random_point(-10.0, 10.0, 2, seed + 1).unwrap();
            let rd = noisy_rangediffs(&src, &a, &noise(4.0), seed + 2).unwrap();
            let x = random_point(-15.0, 15.0, 2, seed + 3).unwrap();
            let b = bound_quantities(&x, &a, &rd).unwrap();
            for w in &b.w {
                prop_assert!((w.norm() - 1.0).abs() < 1e-12);
            }
            for (k, q) in b.q.iter().enumerate() {
                prop_assert!(b.s[k] >= 0.0);
                prop_assert!((q.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
