//! Starting points for the range-difference solver.
//!
//! In the plane each range difference pins the source to one branch of a
//! hyperbola with the two sensors as foci. The initializer picks one feasible
//! pair at random, samples its branch inside a search box and keeps the
//! sample with the lowest range-difference cost. Ranges get the same
//! treatment with the circle around one sensor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{f_rdls, f_rls};
use crate::scenario::{rng_from_seed, Position, RangeDiffSet, RangeSet, SensorArray};

/// Samples of the branch parameter used to locate the part inside the box.
const SCAN_SAMPLES: usize = 4096;

/// Axis-aligned search box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::invalid("search region needs finite lo < hi on every axis"));
        }
        Ok(SearchRegion { lo, hi })
    }

    /// The cube `[-bound, bound]^n`.
    pub fn cube(bound: f64, n: usize) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::invalid("coordinate bound must be > 0"));
        }
        Self::new(vec![-bound; n], vec![bound; n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Number of samples `l` on the chosen branch.
    pub grid_size: usize,
    /// Half-width of the search cube; defaults to twice the largest sensor
    /// coordinate magnitude.
    pub coord_bound: Option<f64>,
    /// Explicit search box; overrides `coord_bound`.
    pub region: Option<SearchRegion>,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            grid_size: 128,
            coord_bound: None,
            region: None,
            seed: 0,
        }
    }
}

impl InitConfig {
    pub fn with_seed(seed: u64) -> Self {
        InitConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn resolve_region(&self, array: &SensorArray) -> Result<SearchRegion> {
        if self.grid_size < 2 {
            return Err(Error::invalid("grid size must be >= 2"));
        }
        if let Some(r) = &self.region {
            if r.dim() != array.dim() {
                return Err(Error::DimensionMismatch {
                    expected: array.dim(),
                    found: r.dim(),
                });
            }
            return Ok(r.clone());
        }
        let bound = self.coord_bound.unwrap_or(2.0 * array.max_abs_coord());
        SearchRegion::cube(bound, array.dim())
    }
}

/// `l` points on the branch `|x - y_i| - |x - y_j| = r_ij` (the branch nearer
/// `y_j`), spread uniformly in the hyperbolic angle over the part of the
/// branch inside `region`.
pub fn hyperbola_points(
    y_i: &Position,
    y_j: &Position,
    r_ij: f64,
    l: usize,
    region: &SearchRegion,
) -> Result<Vec<Position>> {
    if y_i.dim() != 2 || y_j.dim() != 2 || region.dim() != 2 {
        return Err(Error::invalid("hyperbola sampling is planar only"));
    }
    if l < 2 {
        return Err(Error::invalid("grid size must be >= 2"));
    }
    if !(r_ij >= 0.0) {
        return Err(Error::invalid("range difference must be oriented nonnegative"));
    }
    let baseline = y_i.distance(y_j);
    if r_ij == baseline {
        return Err(Error::RayCase { i: 0, j: 1 });
    }
    if r_ij > baseline {
        return Err(Error::DegenerateMeasurement {
            i: 0,
            j: 1,
            value: r_ij,
            baseline,
        });
    }
    let (yi, yj) = (y_i.coords(), y_j.coords());
    let a = 0.5 * r_ij;
    let c = 0.5 * baseline;
    let b = (c * c - a * a).sqrt();
    let axis = [(yj[0] - yi[0]) / baseline, (yj[1] - yi[1]) / baseline];
    let normal = [-axis[1], axis[0]];
    let center = [0.5 * (yi[0] + yj[0]), 0.5 * (yi[1] + yj[1])];
    let point = |t: f64| {
        let (u, v) = (a * t.cosh(), b * t.sinh());
        [
            center[0] + u * axis[0] + v * normal[0],
            center[1] + u * axis[1] + v * normal[1],
        ]
    };

    // Beyond |t| = t_max the branch is farther from the center than any corner.
    let reach = [
        [region.lo[0], region.lo[1]],
        [region.lo[0], region.hi[1]],
        [region.hi[0], region.lo[1]],
        [region.hi[0], region.hi[1]],
    ]
    .iter()
    .map(|p| (p[0] - center[0]).hypot(p[1] - center[1]))
    .fold(0.0, f64::max);
    let t_max = (reach / b).asinh() + 1e-9;

    // Runs of consecutive in-box scan samples.
    let dt = 2.0 * t_max / (SCAN_SAMPLES - 1) as f64;
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = None;
    let mut last_in = 0.0;
    for k in 0..SCAN_SAMPLES {
        let t = -t_max + k as f64 * dt;
        if region.contains(&point(t)) {
            if open.is_none() {
                open = Some(t);
            }
            last_in = t;
        } else if let Some(start) = open.take() {
            runs.push((start, last_in));
        }
    }
    if let Some(start) = open {
        runs.push((start, last_in));
    }
    if runs.is_empty() {
        return Err(Error::invalid("hyperbola branch does not enter the search region"));
    }

    let total: f64 = runs.iter().map(|(s, e)| e - s).sum();
    let mut out = Vec::with_capacity(l);
    for k in 0..l {
        let mut s = if total > 0.0 {
            total * k as f64 / (l - 1) as f64
        } else {
            0.0
        };
        let mut t = runs[0].0;
        for &(start, end) in &runs {
            let len = end - start;
            if s <= len {
                t = start + s;
                break;
            }
            s -= len;
            t = end;
        }
        let p = point(t);
        if region.contains(&p) {
            out.push(Position::from_raw(p.to_vec()));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Hyperbola { i: usize, j: usize },
    Circle { i: usize },
    Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitOutcome {
    pub point: Position,
    pub method: InitMethod,
    /// Number of cost evaluations spent.
    pub evaluations: usize,
}

/// Best sample on one randomly chosen measurement hyperbola.
pub fn init_point(array: &SensorArray, rd: &RangeDiffSet, cfg: &InitConfig) -> Result<Position> {
    init_point_detailed(array, rd, cfg).map(|o| o.point)
}

/// [`init_point`] plus which route was taken and how many evaluations it cost.
///
/// Falls back to a regular grid over the search box when the array is 3-D or
/// no pair has a range difference strictly below its sensor baseline.
pub fn init_point_detailed(array: &SensorArray, rd: &RangeDiffSet, cfg: &InitConfig) -> Result<InitOutcome> {
    rd.check_against(array)?;
    let region = cfg.resolve_region(array)?;
    if array.dim() == 2 {
        let feasible: Vec<_> = rd
            .entries()
            .iter()
            .filter(|e| e.value < array.sensor(e.i).distance(array.sensor(e.j)))
            .collect();
        if !feasible.is_empty() {
            let mut rng = rng_from_seed(cfg.seed);
            let pick = feasible[rng.random_range(0..feasible.len())];
            let points = hyperbola_points(
                array.sensor(pick.i),
                array.sensor(pick.j),
                pick.value,
                cfg.grid_size,
                &region,
            );
            if let Ok(points) = points {
                if let Some((point, evaluations)) = best_of(points, |p| f_rdls(p, array, rd))? {
                    return Ok(InitOutcome {
                        point,
                        method: InitMethod::Hyperbola { i: pick.i, j: pick.j },
                        evaluations,
                    });
                }
            }
        }
    }
    grid_outcome(&region, cfg.grid_size, |p| f_rdls(p, array, rd))
}

/// Starting point for the range solver: `l` samples on the circle
/// `|x - y_i| = r_i` of one randomly chosen sensor with `r_i > 0`, restricted
/// to the search box, scored by the range cost. Falls back to the grid like
/// [`init_point_detailed`].
pub fn init_point_ranges(array: &SensorArray, ranges: &RangeSet, cfg: &InitConfig) -> Result<InitOutcome> {
    if ranges.len() != array.len() {
        return Err(Error::DimensionMismatch {
            expected: array.len(),
            found: ranges.len(),
        });
    }
    let region = cfg.resolve_region(array)?;
    let cost = |p: &Position| f_rls(p, array, ranges);
    if array.dim() == 2 {
        let usable: Vec<usize> = (0..array.len()).filter(|&i| ranges.values()[i] > 0.0).collect();
        if !usable.is_empty() {
            let mut rng = rng_from_seed(cfg.seed);
            let i = usable[rng.random_range(0..usable.len())];
            let (c, r) = (array.sensor(i).coords(), ranges.values()[i]);
            let points: Vec<Position> = (0..cfg.grid_size)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / cfg.grid_size as f64;
                    Position::xy(c[0] + r * t.cos(), c[1] + r * t.sin())
                })
                .filter(|p| region.contains(p.coords()))
                .collect();
            if let Some((point, evaluations)) = best_of(points, cost)? {
                return Ok(InitOutcome {
                    point,
                    method: InitMethod::Circle { i },
                    evaluations,
                });
            }
        }
    }
    grid_outcome(&region, cfg.grid_size, cost)
}

fn grid_outcome(
    region: &SearchRegion,
    l: usize,
    cost: impl Fn(&Position) -> Result<f64>,
) -> Result<InitOutcome> {
    let (point, evaluations) =
        best_of(grid_points(region, l), cost)?.ok_or_else(|| Error::invalid("empty search grid"))?;
    Ok(InitOutcome {
        point,
        method: InitMethod::Grid,
        evaluations,
    })
}

fn best_of(
    points: Vec<Position>,
    cost: impl Fn(&Position) -> Result<f64>,
) -> Result<Option<(Position, usize)>> {
    let count = points.len();
    let mut best: Option<(Position, f64)> = None;
    for p in points {
        let f = cost(&p)?;
        if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
            best = Some((p, f));
        }
    }
    Ok(best.map(|(p, _)| (p, count)))
}

/// Regular grid with about `4 l` nodes over the region.
fn grid_points(region: &SearchRegion, l: usize) -> Vec<Position> {
    let n = region.dim();
    let per_axis = ((4 * l) as f64).powf(1.0 / n as f64).ceil().max(2.0) as usize;
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            let coords = (0..n)
                .map(|a| {
                    let k = idx % per_axis;
                    idx /= per_axis;
                    region.lo[a] + (region.hi[a] - region.lo[a]) * k as f64 / (per_axis - 1) as f64
                })
                .collect();
            Position::from_raw(coords)
        })
        .collect()
}
