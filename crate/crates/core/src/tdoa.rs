//! Signal front end: band-pass filtering, cross-correlation delay estimation
//! and conversion of pairwise delays into range differences.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{canonical_pairs, Position, RangeDiff, RangeDiffSet, SensorArray};

/// Tone frequency used in the anechoic-chamber setup, Hz.
pub const FIXTURE_TONE_HZ: f64 = 250.0;
pub const FIXTURE_FS_HZ: f64 = 100_000.0;
pub const FIXTURE_BAND_HZ: (f64, f64) = (150.0, 350.0);
pub const SPEED_OF_SOUND: f64 = 340.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SignalRecord {
    pub samples: Vec<f64>,
    /// Sampling rate in Hz.
    pub fs: f64,
}

impl SignalRecord {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::invalid("sampling rate must be > 0"));
        }
        if samples.len() < 2 {
            return Err(Error::invalid("a signal needs at least 2 samples"));
        }
        Ok(SignalRecord { samples, fs })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.len() as f64).sqrt()
    }
}

/// Second-order section in transposed direct form II.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator `[1, a1, a2]` stored as `[a1, a2]`.
    pub a: [f64; 2],
}

impl Biquad {
    fn run(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let (mut z1, mut z2) = (0.0, 0.0);
        for &x in input {
            let y = self.b[0] * x + z1;
            z1 = self.b[1] * x - self.a[0] * y + z2;
            z2 = self.b[2] * x - self.a[1] * y;
            out.push(y);
        }
    }

    fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (1.0 + z1 * self.a[0] + z2 * self.a[1])
    }
}

/// Fourth-order Butterworth band-pass: the second-order analog prototype
/// moved to the band, then mapped with the bilinear transform using
/// pre-warped edges. Unity gain at the band center.
#[derive(Clone, Debug, PartialEq)]
pub struct BandpassFilter {
    pub sections: [Biquad; 2],
}

impl BandpassFilter {
    pub fn design(f_lo: f64, f_hi: f64, fs: f64) -> Result<Self> {
        if !(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0) {
            return Err(Error::invalid(format!(
                "band-pass cutoffs must satisfy 0 < f_lo < f_hi < fs/2 (got {f_lo}, {f_hi}, fs={fs})"
            )));
        }
        let k = 2.0 * fs;
        let w_lo = k * (PI * f_lo / fs).tan();
        let w_hi = k * (PI * f_hi / fs).tan();
        let w0 = (w_lo * w_hi).sqrt();
        let bw = w_hi - w_lo;

        let proto = Complex64::from_polar(1.0, 0.75 * PI);
        // s^2 - p B s + w0^2 = 0
        let pb = proto * bw;
        let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
        let analog = [(pb + disc) * 0.5, (pb - disc) * 0.5];

        let mut sections = analog.map(|s| {
            let z = (1.0 + s / k) / (1.0 - s / k);
            Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * z.re, z.norm_sqr()],
            }
        });
        let center = 2.0 * (w0 / k).atan();
        let gain = sections.iter().map(|s| s.response(center)).product::<Complex64>().norm();
        let per_section = gain.sqrt().recip();
        for s in &mut sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        Ok(BandpassFilter { sections })
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::with_capacity(input.len());
        for s in &self.sections {
            s.run(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Magnitude response at `f` Hz.
    pub fn gain_at(&self, f: f64, fs: f64) -> f64 {
        let omega = 2.0 * PI * f / fs;
        self.sections.iter().map(|s| s.response(omega)).product::<Complex64>().norm()
    }
}

/// Causal fourth-order band-pass; output length equals input length.
pub fn bandpass(sig: &SignalRecord, f_lo: f64, f_hi: f64) -> Result<SignalRecord> {
    let filter = BandpassFilter::design(f_lo, f_hi, sig.fs)?;
    Ok(SignalRecord {
        samples: filter.apply(&sig.samples),
        fs: sig.fs,
    })
}

/// Full cross-correlation `c[k] = sum_n a[n] b[n + k]` for
/// `k = -(N-1) ..= N-1`, returned with index `k + N - 1`.
pub fn cross_correlation(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    if n == 0 {
        return Vec::new();
    }
    let size = (2 * n - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let load = |x: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); size];
        for (slot, v) in buf.iter_mut().zip(x) {
            slot.re = *v;
        }
        buf
    };
    let mut fa = load(a);
    let mut fb = load(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut prod);
    let scale = 1.0 / size as f64;
    (-(n as isize - 1)..=(n as isize - 1))
        .map(|k| prod[k.rem_euclid(size as isize) as usize].re * scale)
        .collect()
}

/// Delay of `b` relative to `a` in seconds (positive when `b` lags), from the
/// argmax of the raw cross-correlation. Integer-sample resolution.
pub fn xcorr_delay(a: &SignalRecord, b: &SignalRecord) -> Result<f64> {
    xcorr_delay_with(a, b, false)
}

/// As [`xcorr_delay`]; with `parabolic` the peak is refined by fitting a
/// parabola through it and its two neighbours.
pub fn xcorr_delay_with(a: &SignalRecord, b: &SignalRecord, parabolic: bool) -> Result<f64> {
    if a.fs != b.fs {
        return Err(Error::invalid(format!(
            "sampling rates differ: {} vs {}",
            a.fs, b.fs
        )));
    }
    let corr = cross_correlation(&a.samples, &b.samples);
    let offset = (corr.len() / 2) as isize;
    let mut best = 0;
    for (idx, v) in corr.iter().enumerate() {
        if *v > corr[best] {
            best = idx;
        }
    }
    let mut lag = (best as isize - offset) as f64;
    if parabolic && best > 0 && best + 1 < corr.len() {
        let (l, c, r) = (corr[best - 1], corr[best], corr[best + 1]);
        let den = l - 2.0 * c + r;
        if den < 0.0 {
            lag += 0.5 * (l - r) / den;
        }
    }
    Ok(lag / a.fs)
}

/// `r_ij = c * tau_ij` for every distinct pair, oriented nonnegative.
/// `tau_ij` is how much later the wavefront reaches sensor `i` than `j`.
pub fn delays_to_rangediffs(m: usize, delays: &[(usize, usize, f64)], c: f64) -> Result<RangeDiffSet> {
    if !(c > 0.0) {
        return Err(Error::invalid("propagation speed must be > 0"));
    }
    let entries = delays
        .iter()
        .map(|&(i, j, tau)| RangeDiff::new(i, j, c * tau))
        .collect();
    RangeDiffSet::new(m, entries)
}

/// Tone emission parameters for synthetic recordings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToneConfig {
    pub f0: f64,
    pub fs: f64,
    pub duration: f64,
    pub c: f64,
}

impl Default for ToneConfig {
    fn default() -> Self {
        ToneConfig {
            f0: FIXTURE_TONE_HZ,
            fs: FIXTURE_FS_HZ,
            duration: 0.5,
            c: SPEED_OF_SOUND,
        }
    }
}

/// One recording per sensor of a tone switched on at `t = 0` at `source`.
pub fn synthesize_tones(array: &SensorArray, source: &Position, tone: &ToneConfig) -> Result<Vec<SignalRecord>> {
    array.check_dim(source)?;
    let len = (tone.duration * tone.fs).round() as usize;
    array
        .sensors()
        .iter()
        .map(|y| {
            let arrival = source.distance(y) / tone.c;
            let samples = (0..len)
                .map(|k| {
                    let t = k as f64 / tone.fs - arrival;
                    if t >= 0.0 {
                        (2.0 * PI * tone.f0 * t).sin()
                    } else {
                        0.0
                    }
                })
                .collect();
            SignalRecord::new(samples, tone.fs)
        })
        .collect()
}

/// Filters every channel, cross-correlates every distinct pair and converts
/// the delays to range differences.
pub fn estimate_rangediffs(signals: &[SignalRecord], f_lo: f64, f_hi: f64, c: f64) -> Result<RangeDiffSet> {
    if signals.len() < 2 {
        return Err(Error::invalid("need at least two channels"));
    }
    let filtered = signals
        .par_iter()
        .map(|s| bandpass(s, f_lo, f_hi))
        .collect::<Result<Vec<_>>>()?;
    let m = signals.len();
    let delays = canonical_pairs(m)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(i, j)| xcorr_delay(&filtered[j], &filtered[i]).map(|tau| (i, j, tau)))
        .collect::<Result<Vec<_>>>()?;
    delays_to_rangediffs(m, &delays, c)
}

/// Reads multi-channel CSV: a `# fs=<Hz>` line, then one column per channel.
pub fn read_signals_csv(path: impl AsRef<Path>) -> Result<Vec<SignalRecord>> {
    parse_signals_csv(std::fs::File::open(path)?)
}

pub fn parse_signals_csv<R: Read>(r: R) -> Result<Vec<SignalRecord>> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Parse("empty signal file".into()))??;
    let fs: f64 = first
        .trim()
        .trim_start_matches('#')
        .trim()
        .strip_prefix("fs=")
        .ok_or_else(|| Error::Parse(format!("expected 'fs=<Hz>' header line, found {first:?}")))?
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad sampling rate in {first:?}")))?;
    let mut channels: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| crate::scenario::parse_f64(Some(v.trim())))
            .collect::<Result<Vec<_>>>()?;
        if channels.is_empty() {
            channels = vec![Vec::new(); row.len()];
        } else if row.len() != channels.len() {
            return Err(Error::Parse("ragged signal rows".into()));
        }
        for (ch, v) in channels.iter_mut().zip(row) {
            ch.push(v);
        }
    }
    channels.into_iter().map(|s| SignalRecord::new(s, fs)).collect()
}

pub fn write_signals_csv<W: Write>(signals: &[SignalRecord], mut w: W) -> Result<()> {
    let fs = common_fs(signals)?;
    writeln!(w, "# fs={fs}")?;
    let len = signals.iter().map(SignalRecord::len).max().unwrap_or(0);
    for k in 0..len {
        let row: Vec<String> = signals
            .iter()
            .map(|s| format!("{:?}", s.samples.get(k).copied().unwrap_or(0.0)))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Sidecar describing a raw little-endian `f64` file with interleaved frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub channels: usize,
    pub fs: f64,
}

pub fn read_signals_raw(data: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Vec<SignalRecord>> {
    let meta: RawSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
    let bytes = std::fs::read(data)?;
    decode_raw(&bytes, &meta)
}

pub fn decode_raw(bytes: &[u8], meta: &RawSidecar) -> Result<Vec<SignalRecord>> {
    if meta.channels == 0 {
        return Err(Error::Parse("sidecar declares zero channels".into()));
    }
    let frame = 8 * meta.channels;
    if !bytes.len().is_multiple_of(frame) {
        return Err(Error::Parse(format!(
            "raw length {} is not a multiple of {} channels x 8 bytes",
            bytes.len(),
            meta.channels
        )));
    }
    let mut channels = vec![Vec::with_capacity(bytes.len() / frame); meta.channels];
    for (k, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        channels[k % meta.channels].push(v);
    }
    channels.into_iter().map(|s| SignalRecord::new(s, meta.fs)).collect()
}

pub fn write_signals_raw(signals: &[SignalRecord], data: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<()> {
    let fs = common_fs(signals)?;
    let len = signals.iter().map(SignalRecord::len).max().unwrap_or(0);
    let mut bytes = Vec::with_capacity(len * signals.len() * 8);
    for k in 0..len {
        for s in signals {
            bytes.extend_from_slice(&s.samples.get(k).copied().unwrap_or(0.0).to_le_bytes());
        }
    }
    std::fs::write(data, bytes)?;
    let meta = RawSidecar {
        channels: signals.len(),
        fs,
    };
    std::fs::write(sidecar, serde_json::to_string(&meta)?)?;
    Ok(())
}

fn common_fs(signals: &[SignalRecord]) -> Result<f64> {
    let fs = signals
        .first()
        .ok_or_else(|| Error::invalid("no channels to write"))?
        .fs;
    if signals.iter().any(|s| s.fs != fs) {
        return Err(Error::invalid("channels have different sampling rates"));
    }
    Ok(fs)
}
