//! Sensor geometries, true source configurations and synthetic measurements.
//!
//! Sensor indices are 0-based in the API and 1-based in every file format and
//! human-readable message.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::crlb;
use crate::error::{Error, Result};
use crate::linalg::dist;

/// Identifier of the pseudorandom stream used for every draw in the crate.
pub const GENERATOR_ID: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64) + ziggurat StandardNormal (rand_distr 0.5)";

/// Minimum separation between two sensors.
pub const COINCIDENCE_EPS: f64 = 1e-12;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for sub-stream `stream` of `base` (splitmix64 mix).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A point in 2-D or 3-D space, in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Position(Vec<f64>);

impl Position {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() != 2 && coords.len() != 3 {
            return Err(Error::invalid(format!(
                "position must have 2 or 3 coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("position coordinates must be finite"));
        }
        Ok(Position(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(coords.to_vec())
    }

    /// Shorthand for planar points; panics on non-finite input.
    pub fn xy(x: f64, y: f64) -> Self {
        Self::new(vec![x, y]).expect("finite planar coordinates")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &Position) -> f64 {
        dist(&self.0, &other.0)
    }

    pub fn translated(&self, offset: &[f64]) -> Position {
        Position(self.0.iter().zip(offset).map(|(a, b)| a + b).collect())
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        Position(coords)
    }
}

impl TryFrom<Vec<f64>> for Position {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Position::new(v)
    }
}

impl From<Position> for Vec<f64> {
    fn from(p: Position) -> Self {
        p.0
    }
}

/// An ordered, non-degenerate set of sensors sharing one dimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SensorArray {
    sensors: Vec<Position>,
}

impl SensorArray {
    pub fn new(sensors: Vec<Position>) -> Result<Self> {
        if sensors.len() < 2 {
            return Err(Error::invalid("a sensor array needs at least 2 sensors"));
        }
        let n = sensors[0].dim();
        if let Some(bad) = sensors.iter().find(|s| s.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.dim(),
            });
        }
        for i in 0..sensors.len() {
            for j in (i + 1)..sensors.len() {
                if sensors[i].distance(&sensors[j]) <= COINCIDENCE_EPS {
                    return Err(Error::invalid(format!(
                        "sensors {} and {} coincide",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(SensorArray { sensors })
    }

    pub fn from_coords(coords: &[Vec<f64>]) -> Result<Self> {
        let sensors = coords
            .iter()
            .map(|c| Position::from_slice(c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sensors)
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sensors[0].dim()
    }

    pub fn sensors(&self) -> &[Position] {
        &self.sensors
    }

    pub fn sensor(&self, index: usize) -> &Position {
        &self.sensors[index]
    }

    pub fn centroid(&self) -> Position {
        let n = self.dim();
        let mut c = vec![0.0; n];
        for s in &self.sensors {
            for (acc, v) in c.iter_mut().zip(s.coords()) {
                *acc += v;
            }
        }
        let m = self.len() as f64;
        Position::from_raw(c.into_iter().map(|v| v / m).collect())
    }

    /// Largest absolute sensor coordinate.
    pub fn max_abs_coord(&self) -> f64 {
        self.sensors
            .iter()
            .flat_map(|s| s.coords().iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn translated(&self, offset: &[f64]) -> SensorArray {
        SensorArray {
            sensors: self.sensors.iter().map(|s| s.translated(offset)).collect(),
        }
    }

    pub(crate) fn check_dim(&self, x: &Position) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for SensorArray {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let sensors = Vec::<Position>::deserialize(d)?;
        SensorArray::new(sensors).map_err(serde::de::Error::custom)
    }
}

/// One range measurement per sensor, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeSet {
    values: Vec<f64>,
}

impl RangeSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ranges must be finite"));
        }
        Ok(RangeSet { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of negative ranges. Noisy ranges are never clamped, so this is
    /// the warning counter for draws that fell below zero.
    pub fn negative_count(&self) -> usize {
        self.values.iter().filter(|v| **v < 0.0).count()
    }

    pub(crate) fn check_len(&self, array: &SensorArray) -> Result<()> {
        if self.len() != array.len() {
            return Err(Error::DimensionMismatch {
                expected: array.len(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// A single oriented range difference `value = r_i - r_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeDiff {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

impl RangeDiff {
    pub fn new(i: usize, j: usize, value: f64) -> Self {
        RangeDiff { i, j, value }
    }

    /// The same measurement stored with the opposite orientation.
    pub fn reversed(self) -> Self {
        RangeDiff {
            i: self.j,
            j: self.i,
            value: -self.value,
        }
    }

    /// Orientation with a nonnegative value; ties keep `i < j`.
    pub fn oriented(self) -> Self {
        if self.value < 0.0 || (self.value == 0.0 && self.i > self.j) {
            self.reversed()
        } else {
            self
        }
    }
}

/// All `m(m-1)/2` distinct range differences of an `m`-sensor array, each
/// stored with a nonnegative value.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeDiffSet {
    m: usize,
    entries: Vec<RangeDiff>,
}

impl RangeDiffSet {
    /// Validates that every unordered pair appears exactly once and orients
    /// each entry. Entry order is preserved.
    pub fn new(m: usize, entries: Vec<RangeDiff>) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("range differences need at least 2 sensors"));
        }
        let mut seen = vec![false; m * m];
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            for idx in [e.i, e.j] {
                if idx >= m {
                    return Err(Error::InvalidIndex { index: idx, m });
                }
            }
            if e.i == e.j {
                return Err(Error::invalid(format!(
                    "range difference pairs sensor {} with itself",
                    e.i + 1
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::invalid("range differences must be finite"));
            }
            let (a, b) = (e.i.min(e.j), e.i.max(e.j));
            if seen[a * m + b] {
                return Err(Error::invalid(format!(
                    "pair ({}, {}) appears more than once",
                    a + 1,
                    b + 1
                )));
            }
            seen[a * m + b] = true;
            out.push(e.oriented());
        }
        for a in 0..m {
            for b in (a + 1)..m {
                if !seen[a * m + b] {
                    return Err(Error::MissingPair { i: a, j: b });
                }
            }
        }
        Ok(RangeDiffSet { m, entries: out })
    }

    /// Forms every pairwise difference of `ranges` in canonical pair order.
    pub fn from_ranges(ranges: &RangeSet) -> Result<Self> {
        let r = ranges.values();
        let m = r.len();
        let entries = canonical_pairs(m)
            .map(|(i, j)| RangeDiff::new(i, j, r[i] - r[j]))
            .collect();
        Self::new(m, entries)
    }

    pub fn sensor_count(&self) -> usize {
        self.m
    }

    pub fn entries(&self) -> &[RangeDiff] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn check_against(&self, array: &SensorArray) -> Result<()> {
        if self.m != array.len() {
            return Err(Error::DimensionMismatch {
                expected: array.len(),
                found: self.m,
            });
        }
        Ok(())
    }
}

/// Unordered sensor pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn canonical_pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| ((i + 1)..m).map(move |j| (i, j)))
}

pub fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Receiver noise and signal parameters shared by simulation and the bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Receiver output noise variance.
    pub sigma2: f64,
    /// Source frequency in Hz.
    pub f0: f64,
    /// Propagation speed in m/s.
    pub c: f64,
    /// Sampling frequency as a multiple of `f0`.
    #[serde(default = "default_fs_factor")]
    pub fs_factor: f64,
}

fn default_fs_factor() -> f64 {
    4.0
}

impl NoiseModel {
    pub fn new(sigma2: f64, f0: f64, c: f64) -> Result<Self> {
        let nm = NoiseModel {
            sigma2,
            f0,
            c,
            fs_factor: default_fs_factor(),
        };
        nm.validate()?;
        Ok(nm)
    }

    pub fn with_snr_db(snr_db: f64, f0: f64, c: f64) -> Result<Self> {
        Self::new(snr_to_sigma2(snr_db), f0, c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::invalid("noise variance must be finite and >= 0"));
        }
        if !(self.f0 > 0.0) || !self.f0.is_finite() {
            return Err(Error::invalid("source frequency must be > 0"));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::invalid("propagation speed must be > 0"));
        }
        if !(self.fs_factor > 0.0) || !self.fs_factor.is_finite() {
            return Err(Error::invalid("sampling factor must be > 0"));
        }
        Ok(())
    }
}

/// Unit signal power: `sigma2 = 10^(-snr_db / 10)`.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Sensor `i` (1-based) at `radius * [cos(2 pi i / m), sin(2 pi i / m)]`.
pub fn circular_array(m: usize, radius: f64) -> Result<SensorArray> {
    if m < 2 {
        return Err(Error::invalid("circular array needs m >= 2"));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid("circular array radius must be > 0"));
    }
    let sensors = (1..=m)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / m as f64;
            Position::xy(radius * theta.cos(), radius * theta.sin())
        })
        .collect();
    SensorArray::new(sensors)
}

pub fn rhombus_array() -> SensorArray {
    SensorArray::from_coords(&[
        vec![0.0, 10.0],
        vec![10.0, 0.0],
        vec![0.0, -10.0],
        vec![-10.0, 0.0],
    ])
    .expect("fixed geometry")
}

pub fn linear_array() -> SensorArray {
    SensorArray::from_coords(&[
        vec![5.0, 0.0],
        vec![5.0, 10.0],
        vec![5.0, 20.0],
        vec![5.0, 30.0],
    ])
    .expect("fixed geometry")
}

/// Four microphones on a vertical line with 0.2 m spacing (anechoic chamber setup).
pub fn anechoic_array() -> SensorArray {
    SensorArray::from_coords(&[
        vec![2.1, 1.7],
        vec![2.1, 1.5],
        vec![2.1, 1.3],
        vec![2.1, 1.1],
    ])
    .expect("fixed geometry")
}

/// i.i.d. uniform sensor coordinates in `[lo, hi]^n`.
pub fn random_array(m: usize, lo: f64, hi: f64, n: usize, seed: u64) -> Result<SensorArray> {
    if m < 2 {
        return Err(Error::invalid("random array needs m >= 2"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("degenerate bounds: lo={lo}, hi={hi}")));
    }
    if n != 2 && n != 3 {
        return Err(Error::invalid("dimension must be 2 or 3"));
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..100 {
        let sensors = (0..m)
            .map(|_| Position::from_raw(uniform_point(&mut rng, lo, hi, n)))
            .collect();
        if let Ok(array) = SensorArray::new(sensors) {
            return Ok(array);
        }
    }
    Err(Error::invalid("could not draw non-coincident sensors in 100 attempts"))
}

/// A point drawn uniformly from `[lo, hi]^n`.
pub fn random_point(lo: f64, hi: f64, n: usize, seed: u64) -> Result<Position> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("degenerate bounds: lo={lo}, hi={hi}")));
    }
    let mut rng = rng_from_seed(seed);
    Position::new(uniform_point(&mut rng, lo, hi, n))
}

pub(crate) fn uniform_point<R: Rng>(rng: &mut R, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let u = Uniform::new_inclusive(lo, hi).expect("lo < hi");
    (0..n).map(|_| u.sample(rng)).collect()
}

pub fn true_ranges(x: &Position, array: &SensorArray) -> Result<RangeSet> {
    array.check_dim(x)?;
    Ok(RangeSet {
        values: array.sensors().iter().map(|s| x.distance(s)).collect(),
    })
}

/// `r_i = |x - y_i| + eps_i`, with independent zero-mean Gaussian `eps_i`
/// whose variance follows the range-variance model at the true distance.
/// The standard-normal draws depend only on `seed`, so changing the noise
/// level with a fixed seed rescales the same draws.
pub fn noisy_ranges(
    x: &Position,
    array: &SensorArray,
    noise: &NoiseModel,
    seed: u64,
) -> Result<RangeSet> {
    noise.validate()?;
    let truth = true_ranges(x, array)?;
    let mut rng = rng_from_seed(seed);
    let values = truth
        .values
        .iter()
        .map(|&d| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let var = if d > 0.0 {
                crlb::range_variance(d, noise).expect("d > 0 and validated noise")
            } else {
                0.0
            };
            d + var.sqrt() * z
        })
        .collect();
    RangeSet::new(values)
}

/// Range differences formed from one noisy range draw per sensor.
pub fn noisy_rangediffs(
    x: &Position,
    array: &SensorArray,
    noise: &NoiseModel,
    seed: u64,
) -> Result<RangeDiffSet> {
    RangeDiffSet::from_ranges(&noisy_ranges(x, array, noise, seed)?)
}

/// A complete simulation setup, as stored in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub sensors: SensorArray,
    pub source: Position,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Scenario {
    pub fn new(sensors: SensorArray, source: Position, noise: NoiseModel, seed: u64) -> Result<Self> {
        let s = Scenario {
            n: sensors.dim(),
            sensors,
            source,
            noise,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != self.sensors.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: self.sensors.dim(),
            });
        }
        self.sensors.check_dim(&self.source)?;
        self.noise.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn ranges(&self) -> Result<RangeSet> {
        noisy_ranges(&self.source, &self.sensors, &self.noise, self.seed)
    }

    pub fn rangediffs(&self) -> Result<RangeDiffSet> {
        noisy_rangediffs(&self.source, &self.sensors, &self.noise, self.seed)
    }
}

/// Writes range differences as CSV with header `i,j,r_ij` (1-based indices).
pub fn write_rangediffs_csv<W: Write>(rd: &RangeDiffSet, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["i", "j", "r_ij"])?;
    for e in rd.entries() {
        wtr.write_record([
            (e.i + 1).to_string(),
            (e.j + 1).to_string(),
            format!("{:?}", e.value),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the `i,j,r_ij` format; the sensor count is inferred from the indices.
pub fn read_rangediffs_csv<R: Read>(r: R) -> Result<RangeDiffSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    expect_header(rdr.headers()?, &["i", "j", "r_ij"])?;
    let mut entries = Vec::new();
    let mut m = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let i = parse_index(rec.get(0))?;
        let j = parse_index(rec.get(1))?;
        let value = parse_f64(rec.get(2))?;
        m = m.max(i + 1).max(j + 1);
        entries.push(RangeDiff::new(i, j, value));
    }
    RangeDiffSet::new(m, entries)
}

/// Writes ranges as CSV with header `i,r_i` (1-based indices).
pub fn write_ranges_csv<W: Write>(ranges: &RangeSet, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["i", "r_i"])?;
    for (i, v) in ranges.values().iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), format!("{v:?}")])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_ranges_csv<R: Read>(r: R) -> Result<RangeSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    expect_header(rdr.headers()?, &["i", "r_i"])?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push((parse_index(rec.get(0))?, parse_f64(rec.get(1))?));
    }
    rows.sort_by_key(|r| r.0);
    for (k, (i, _)) in rows.iter().enumerate() {
        if *i != k {
            return Err(Error::Parse(format!("missing or duplicate range for sensor {}", k + 1)));
        }
    }
    RangeSet::new(rows.into_iter().map(|r| r.1).collect())
}

/// Measurement files carry either ranges or range differences.
#[derive(Clone, Debug, PartialEq)]
pub enum Measurements {
    Ranges(RangeSet),
    RangeDiffs(RangeDiffSet),
}

/// Reads either measurement CSV, dispatching on the header.
pub fn read_measurements_csv(path: impl AsRef<Path>) -> Result<Measurements> {
    let text = std::fs::read_to_string(path)?;
    let header: Vec<String> = text
        .lines()
        .next()
        .unwrap_or_default()
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    match header.len() {
        2 => Ok(Measurements::Ranges(read_ranges_csv(text.as_bytes())?)),
        3 => Ok(Measurements::RangeDiffs(read_rangediffs_csv(text.as_bytes())?)),
        _ => Err(Error::Parse(format!(
            "unrecognised measurement header {:?}",
            header.join(",")
        ))),
    }
}

fn expect_header(h: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if h.len() != want.len() || h.iter().zip(want).any(|(a, b)| a != *b) {
        return Err(Error::Parse(format!(
            "expected header {:?}, found {:?}",
            want.join(","),
            h.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn parse_index(field: Option<&str>) -> Result<usize> {
    let s = field.ok_or_else(|| Error::Parse("missing index field".into()))?;
    let v: usize = s
        .parse()
        .map_err(|_| Error::Parse(format!("bad sensor index {s:?}")))?;
    if v == 0 {
        return Err(Error::Parse("sensor indices are 1-based".into()));
    }
    Ok(v - 1)
}

pub(crate) fn parse_f64(field: Option<&str>) -> Result<f64> {
    let s = field.ok_or_else(|| Error::Parse("missing numeric field".into()))?;
    s.parse()
        .map_err(|_| Error::Parse(format!("bad number {s:?}")))
}
