//! Cramér-Rao lower bound for range-difference localization.
//!
//! The range error at distance `D` from a sinusoidal source has variance
//!
//! ```text
//! var(D) = sigma2 c^2 D^4 / ((fs_factor / 2) (c^2 + 4 pi^2 f0^2 D^2))
//! ```
//!
//! (signal energy `1 / (2 f0)` times sampling rate `fs_factor * f0`). Pair
//! differences share sensor errors, so their covariance is singular for
//! `m >= 3`; the Fisher information uses its pseudoinverse.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scenario::{canonical_pairs, NoiseModel, Position, SensorArray};

/// Relative singular-value cutoff for ranks and pseudoinverses.
pub const RANK_TOL: f64 = 1e-10;

pub fn range_variance(d: f64, noise: &NoiseModel) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("range variance needs D > 0, got {d}")));
    }
    noise.validate()?;
    let c2 = noise.c * noise.c;
    let bandwidth = 4.0 * PI * PI * noise.f0 * noise.f0;
    Ok(noise.sigma2 * c2 * d.powi(4) / (0.5 * noise.fs_factor * (c2 + bandwidth * d * d)))
}

fn sensor_variances(x: &Position, array: &SensorArray, noise: &NoiseModel) -> Result<Vec<f64>> {
    array.check_dim(x)?;
    array
        .sensors()
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let d = x.distance(y);
            if d == 0.0 {
                Err(Error::AtSensor { index: k })
            } else {
                range_variance(d, noise)
            }
        })
        .collect()
}

/// Covariance of range differences for the given oriented pairs.
///
/// `cov(r_ij, r_kl) = [i=k] v_i - [i=l] v_i - [j=k] v_j + [j=l] v_j`, which is
/// the full case table: `v_i + v_j` on the diagonal, `±v` of a shared sensor
/// and `0` for disjoint pairs.
pub fn rd_covariance_for(
    x: &Position,
    array: &SensorArray,
    noise: &NoiseModel,
    pairs: &[(usize, usize)],
) -> Result<DMatrix<f64>> {
    let v = sensor_variances(x, array, noise)?;
    for &(i, j) in pairs {
        if i >= v.len() || j >= v.len() {
            return Err(Error::InvalidIndex {
                index: i.max(j),
                m: v.len(),
            });
        }
    }
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    Ok(DMatrix::from_fn(pairs.len(), pairs.len(), |p, q| {
        let (i, j) = pairs[p];
        let (k, l) = pairs[q];
        delta(i, k) * v[i] - delta(i, l) * v[i] - delta(j, k) * v[j] + delta(j, l) * v[j]
    }))
}

/// Covariance in canonical pair order (`i < j`, lexicographic), the order
/// produced by [`crate::scenario::noisy_rangediffs`] before orientation.
pub fn rd_covariance(x: &Position, array: &SensorArray, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let pairs: Vec<_> = canonical_pairs(array.len()).collect();
    rd_covariance_for(x, array, noise, &pairs)
}

/// Rank of a symmetric matrix: eigenvalues above `RANK_TOL` times the largest
/// magnitude.
pub fn numerical_rank(mat: &DMatrix<f64>) -> usize {
    let eig = mat.clone().symmetric_eigenvalues();
    let top = eig.amax();
    if !(top > 0.0) {
        return 0;
    }
    eig.iter().filter(|e| e.abs() > RANK_TOL * top).count()
}

/// Pseudoinverse of a symmetric positive semidefinite matrix from its
/// eigendecomposition. The SVD route loses accuracy on these rank-deficient
/// inputs.
fn psd_pinv(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = mat.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > RANK_TOL * top {
            let col = eig.eigenvectors.column(k);
            out += col * col.transpose() / lambda;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrlbReport {
    /// Fisher information `H pinv(cov) H^T`, `n x n`.
    pub fisher: DMatrix<f64>,
    pub cov_rank: usize,
    /// `sqrt(trace(J^-1))` in meters; infinite when `J` is singular.
    pub rmse_bound: f64,
}

impl CrlbReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Serialize for CrlbReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.fisher.nrows())
            .map(|r| self.fisher.row(r).iter().copied().collect())
            .collect();
        let mut st = s.serialize_struct("CrlbReport", 3)?;
        st.serialize_field("fisher", &rows)?;
        st.serialize_field("cov_rank", &self.cov_rank)?;
        if self.rmse_bound.is_finite() {
            st.serialize_field("rmse_bound", &self.rmse_bound)?;
        } else {
            st.serialize_field("rmse_bound", "inf")?;
        }
        st.end()
    }
}

/// Fisher information and RMSE bound at `x` over all distinct pairs.
pub fn fisher(x: &Position, array: &SensorArray, noise: &NoiseModel) -> Result<CrlbReport> {
    let pairs: Vec<_> = canonical_pairs(array.len()).collect();
    fisher_for(x, array, noise, &pairs)
}

pub fn fisher_for(
    x: &Position,
    array: &SensorArray,
    noise: &NoiseModel,
    pairs: &[(usize, usize)],
) -> Result<CrlbReport> {
    if noise.sigma2 == 0.0 {
        return Err(Error::invalid("Fisher information is unbounded at zero noise"));
    }
    let cov = rd_covariance_for(x, array, noise, pairs)?;
    let cov_rank = numerical_rank(&cov);
    let n = array.dim();
    let units: Vec<DVector<f64>> = array
        .sensors()
        .iter()
        .map(|y| {
            let d = DVector::from_column_slice(x.coords()) - DVector::from_column_slice(y.coords());
            let len = d.norm();
            d / len
        })
        .collect();
    let h = DMatrix::from_fn(n, pairs.len(), |a, p| {
        let (i, j) = pairs[p];
        units[i][a] - units[j][a]
    });
    let pinv = psd_pinv(&cov);
    let mut j = &h * pinv * h.transpose();
    j = (&j + j.transpose()) * 0.5;

    let eig = j.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let rmse_bound = if hi > 0.0 && lo > RANK_TOL * hi {
        match j.clone().try_inverse() {
            Some(inv) => inv.trace().sqrt(),
            None => f64::INFINITY,
        }
    } else {
        f64::INFINITY
    };
    Ok(CrlbReport {
        fisher: j,
        cov_rank,
        rmse_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{circular_array, random_array, random_point};
    use proptest::prelude::*;

    fn noise(sigma2: f64) -> NoiseModel {
        NoiseModel::new(sigma2, 1000.0, 340.0).unwrap()
    }

    #[test]
    fn range_variance_examples() {
        // independent evaluation of sigma2 c^2 D^4 / (2 (c^2 + 4 pi^2 f0^2 D^2))
        let oracle = |s2: f64, c: f64, f0: f64, d: f64| {
            let num = s2 * c * c * d * d * d * d;
            let den = 2.0 * (c * c + 4.0 * PI * PI * f0 * f0 * d * d);
            num / den
        };
        let v = range_variance(1.0, &noise(1.0)).unwrap();
        assert!((v - oracle(1.0, 340.0, 1000.0, 1.0)).abs() < 1e-18);
        assert!((v - 1.460e-3).abs() < 5e-7, "{v}");
        assert_eq!(range_variance(3.0, &noise(0.0)).unwrap(), 0.0);
        assert!(range_variance(2.0, &noise(1.0)).unwrap() > v);
        assert!(range_variance(0.0, &noise(1.0)).is_err());
        assert!(range_variance(-1.0, &noise(1.0)).is_err());
    }

    #[test]
    fn fs_factor_scales_variance() {
        let mut nm = noise(1.0);
        let base = range_variance(5.0, &nm).unwrap();
        nm.fs_factor = 8.0;
        assert!((range_variance(5.0, &nm).unwrap() - base / 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_sensor_covariance() {
        let a = SensorArray::from_coords(&[vec![0.0, 0.0], vec![4.0, 0.0]]).unwrap();
        let x = Position::xy(1.0, 2.0);
        let cov = rd_covariance(&x, &a, &noise(1.0)).unwrap();
        let v1 = range_variance(x.distance(a.sensor(0)), &noise(1.0)).unwrap();
        let v2 = range_variance(x.distance(a.sensor(1)), &noise(1.0)).unwrap();
        assert_eq!(cov.shape(), (1, 1));
        assert!((cov[(0, 0)] - (v1 + v2)).abs() < 1e-15);
    }

    #[test]
    fn equal_distance_three_sensors() {
        let a = circular_array(3, 5.0).unwrap();
        let x = Position::xy(0.0, 0.0);
        let cov = rd_covariance(&x, &a, &noise(1.0)).unwrap();
        let v = range_variance(5.0, &noise(1.0)).unwrap();
        // pairs (1,2),(1,3),(2,3)
        let expect = DMatrix::from_row_slice(3, 3, &[2.0 * v, v, -v, v, 2.0 * v, v, -v, v, 2.0 * v]);
        assert!((&cov - &expect).abs().max() < 1e-15);
        let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        assert!(eig[0].abs() < 1e-12 * v);
        assert!((eig[1] - 3.0 * v).abs() < 1e-12 && (eig[2] - 3.0 * v).abs() < 1e-12);
        assert_eq!(numerical_rank(&cov), 2);
    }

    #[test]
    fn collinear_two_sensors_is_unbounded() {
        let a = SensorArray::from_coords(&[vec![0.0, 0.0], vec![4.0, 0.0]]).unwrap();
        let r = fisher(&Position::xy(10.0, 0.0), &a, &noise(1.0)).unwrap();
        assert!(r.rmse_bound.is_infinite());
        assert_eq!(r.cov_rank, 1);
        let json = r.to_json().unwrap();
        assert!(json.contains("\"rmse_bound\": \"inf\""));
    }

    #[test]
    fn square_array_is_isotropic() {
        let a = circular_array(4, 10.0).unwrap();
        let r = fisher(&Position::xy(0.0, 0.0), &a, &noise(1.0)).unwrap();
        assert!(r.fisher[(0, 1)].abs() < 1e-12 * r.fisher[(0, 0)].abs().max(1.0));
        assert!((r.fisher[(0, 0)] - r.fisher[(1, 1)]).abs() < 1e-9 * r.fisher[(0, 0)]);
        assert!(r.rmse_bound.is_finite() && r.rmse_bound > 0.0);
    }

    #[test]
    fn at_sensor_and_zero_noise_errors() {
        let a = circular_array(4, 10.0).unwrap();
        assert!(matches!(fisher(a.sensor(0), &a, &noise(1.0)), Err(Error::AtSensor { index: 0 })));
        assert!(fisher(&Position::xy(1.0, 1.0), &a, &noise(0.0)).is_err());
    }

    #[test]
    fn covariance_matches_monte_carlo_for_reference_ordering() {
        // smaller than the acceptance run; full-size check lives there
        let a = random_array(4, -10.0, 10.0, 2, 3).unwrap();
        let x = Position::xy(1.0, -2.0);
        let nm = noise(1.0);
        let cov = rd_covariance(&x, &a, &nm).unwrap();
        let draws = 20_000;
        let mut samples = Vec::with_capacity(draws);
        for s in 0..draws {
            let r = crate::scenario::noisy_ranges(&x, &a, &nm, s as u64).unwrap();
            let v: Vec<f64> = canonical_pairs(4).map(|(i, j)| r.values()[i] - r.values()[j]).collect();
            samples.push(v);
        }
        let k = cov.nrows();
        let mean: Vec<f64> = (0..k).map(|p| samples.iter().map(|v| v[p]).sum::<f64>() / draws as f64).collect();
        for p in 0..k {
            let sc = samples.iter().map(|v| (v[p] - mean[p]).powi(2)).sum::<f64>() / (draws - 1) as f64;
            assert!((sc / cov[(p, p)] - 1.0).abs() < 0.1);
        }
    }

    proptest! {
        #[test]
        fn covariance_psd_rank_and_relabel_invariance(seed in 0u64..50_000, m in 3usize..7) {
            let a = random_array(m, -20.0, 20.0, 2, seed).unwrap();
            let x = random_point(-10.0, 10.0, 2, seed + 1).unwrap();
            let nm = noise(1.0);
            let cov = rd_covariance(&x, &a, &nm).unwrap();
            prop_assert!((&cov - cov.transpose()).abs().max() == 0.0);
            let eig = cov.clone().symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-9 * cov.norm());
            prop_assert_eq!(numerical_rank(&cov), m - 1);

            let r = fisher(&x, &a, &nm).unwrap();
            prop_assert!((&r.fisher - r.fisher.transpose()).abs().max() <= 1e-12 * r.fisher.norm());
            prop_assert!(r.fisher.clone().symmetric_eigenvalues().min() >= -1e-9 * r.fisher.norm());

            let mut rev: Vec<Position> = a.sensors().to_vec();
            rev.reverse();
            let a_rev = SensorArray::new(rev).unwrap();
            let r_rev = fisher(&x, &a_rev, &nm).unwrap();
            prop_assert!((r.rmse_bound - r_rev.rmse_bound).abs() <= 1e-8 * r.rmse_bound);
        }

        #[test]
        fn fisher_matches_reduced_form(seed in 0u64..50_000, m in 3usize..8) {
            // Differences of independent ranges: the pair-space pseudoinverse
            // collapses to W = V^-1 - V^-1 1 1^T V^-1 / (1^T V^-1 1) over sensors.
            let a = random_array(m, -30.0, 30.0, 2, seed).unwrap();
            let x = random_point(-10.0, 10.0, 2, seed + 1).unwrap();
            let nm = noise(0.3);
            let v = sensor_variances(&x, &a, &nm).unwrap();
            let inv: Vec<f64> = v.iter().map(|t| 1.0 / t).collect();
            let total: f64 = inv.iter().sum();
            let u: Vec<[f64; 2]> = a
                .sensors()
                .iter()
                .map(|y| {
                    let d = x.distance(y);
                    [(x.coords()[0] - y.coords()[0]) / d, (x.coords()[1] - y.coords()[1]) / d]
                })
                .collect();
            let r = fisher(&x, &a, &nm).unwrap();
            for p in 0..2 {
                for q in 0..2 {
                    let direct: f64 = (0..m).map(|i| inv[i] * u[i][p] * u[i][q]).sum();
                    let sp: f64 = (0..m).map(|i| inv[i] * u[i][p]).sum();
                    let sq: f64 = (0..m).map(|i| inv[i] * u[i][q]).sum();
                    let want = direct - sp * sq / total;
                    prop_assert!((r.fisher[(p, q)] - want).abs() <= 1e-9 * r.fisher.norm());
                }
            }
        }
    }
}
