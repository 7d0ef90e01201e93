//! Monte-Carlo experiment runner: convergence traces, RMSE sweeps over SNR or
//! source frequency with the Cramér-Rao bound alongside, and plot output.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crlb;
use crate::error::{Error, Result};
use crate::initializer::{init_point, init_point_ranges, InitConfig};
use crate::scenario::{
    anechoic_array, circular_array, derive_seed, linear_array, noisy_rangediffs, noisy_ranges,
    random_array, random_point, rhombus_array, snr_to_sigma2, NoiseModel, Position, RangeDiffSet,
    RangeSet, Scenario, SensorArray, GENERATOR_ID,
};
use crate::sfp::sfp_solve;
use crate::solvit::solvit_solve;
use crate::trace::{SolveStatus, SolveTrace, SolverConfig};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub const FAILURE_POLICY: &str =
    "trials whose solver returns an error, stops on a singular update or yields a non-finite \
     estimate are excluded from the RMSE and counted in the failed column";

const GEOMETRY_STREAM: u64 = 0;
const SOURCE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "geometry", rename_all = "snake_case")]
pub enum ArraySpec {
    Inline { sensors: Vec<Vec<f64>> },
    Circular { m: usize, radius: f64 },
    Rhombus,
    Linear,
    Anechoic,
    Random { m: usize, lo: f64, hi: f64, n: usize },
}

impl ArraySpec {
    fn build(&self, seed: u64) -> Result<SensorArray> {
        match self {
            ArraySpec::Inline { sensors } => SensorArray::from_coords(sensors),
            ArraySpec::Circular { m, radius } => circular_array(*m, *radius),
            ArraySpec::Rhombus => Ok(rhombus_array()),
            ArraySpec::Linear => Ok(linear_array()),
            ArraySpec::Anechoic => Ok(anechoic_array()),
            ArraySpec::Random { m, lo, hi, n } => random_array(*m, *lo, *hi, *n, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Fixed { position: Vec<f64> },
    Random { lo: f64, hi: f64 },
}

fn default_c() -> f64 {
    340.0
}

fn default_fs_factor() -> f64 {
    4.0
}

/// Where the sensors and the source come from. Random parts are drawn once
/// from the experiment seed and stay fixed for every trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSource {
    /// A scenario JSON file; its noise variance and frequency are replaced by
    /// the sweep values.
    File { path: PathBuf },
    Generate {
        array: ArraySpec,
        source: SourceSpec,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_fs_factor")]
        fs_factor: f64,
    },
}

/// Geometry and propagation constants shared by every trial of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedScenario {
    pub array: SensorArray,
    pub source: Position,
    pub c: f64,
    pub fs_factor: f64,
}

impl ScenarioSource {
    pub fn resolve(&self, seed: u64) -> Result<ResolvedScenario> {
        match self {
            ScenarioSource::File { path } => {
                let s = Scenario::load(path)?;
                Ok(ResolvedScenario {
                    array: s.sensors,
                    source: s.source,
                    c: s.noise.c,
                    fs_factor: s.noise.fs_factor,
                })
            }
            ScenarioSource::Generate {
                array,
                source,
                c,
                fs_factor,
            } => {
                let array = array.build(derive_seed(seed, GEOMETRY_STREAM))?;
                let source = match source {
                    SourceSpec::Fixed { position } => Position::from_slice(position)?,
                    SourceSpec::Random { lo, hi } => {
                        random_point(*lo, *hi, array.dim(), derive_seed(seed, SOURCE_STREAM))?
                    }
                };
                array.check_dim(&source)?;
                Ok(ResolvedScenario {
                    array,
                    source,
                    c: *c,
                    fs_factor: *fs_factor,
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Range differences over all sensor pairs.
    Solvit,
    /// Ranges, standard fixed point.
    Sfp,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Solvit => "solvit",
            SolverKind::Sfp => "sfp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    /// Sample the measurement locus of one pair (range differences) or one
    /// sensor (ranges) and keep the best point.
    Proposed,
    /// Uniform in `[0, 1]^n`.
    Random,
    Fixed(Vec<f64>),
}

impl InitChoice {
    pub fn label(&self) -> &'static str {
        match self {
            InitChoice::Proposed => "proposed",
            InitChoice::Random => "random",
            InitChoice::Fixed(_) => "fixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Rows follow `snr_grid`; the frequency is `freq_grid[0]`.
    Snr,
    /// Rows follow `freq_grid`; the SNR is `snr_grid[0]`.
    Frequency,
}

fn default_trials() -> usize {
    500
}

fn default_solver() -> SolverKind {
    SolverKind::Solvit
}

fn default_init() -> InitChoice {
    InitChoice::Proposed
}

fn default_sweep() -> SweepAxis {
    SweepAxis::Snr
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSource,
    /// SNR values in dB.
    pub snr_grid: Vec<f64>,
    /// Source frequencies in Hz.
    pub freq_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_solver")]
    pub solver: SolverKind,
    #[serde(default = "default_init")]
    pub init: InitChoice,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sweep")]
    pub sweep: SweepAxis,
    #[serde(default)]
    pub solver_config: SolverConfig,
    /// Grid size and search box of the proposed initializer; its seed is
    /// replaced per trial.
    #[serde(default)]
    pub init_config: InitConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.snr_grid.is_empty() {
            return Err(Error::invalid("snr_grid must not be empty"));
        }
        if self.freq_grid.is_empty() {
            return Err(Error::invalid("freq_grid must not be empty"));
        }
        if self.snr_grid.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("snr_grid contains NaN"));
        }
        if self.freq_grid.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::invalid("frequencies must be finite and > 0"));
        }
        self.solver_config.validate()
    }

    /// Values swept along the rows.
    pub fn sweep_values(&self) -> &[f64] {
        match self.sweep {
            SweepAxis::Snr => &self.snr_grid,
            SweepAxis::Frequency => &self.freq_grid,
        }
    }

    fn noise_at(&self, value: f64, sc: &ResolvedScenario) -> Result<NoiseModel> {
        let (snr, f0) = match self.sweep {
            SweepAxis::Snr => (value, self.freq_grid[0]),
            SweepAxis::Frequency => (self.snr_grid[0], value),
        };
        let nm = NoiseModel {
            sigma2: snr_to_sigma2(snr),
            f0,
            c: sc.c,
            fs_factor: sc.fs_factor,
        };
        nm.validate()?;
        Ok(nm)
    }
}

enum Measured {
    Diffs(RangeDiffSet),
    Ranges(RangeSet),
}

fn start_point(
    choice: &InitChoice,
    sc: &ResolvedScenario,
    measured: &Measured,
    init_cfg: &InitConfig,
    seed: u64,
) -> Result<Position> {
    match choice {
        InitChoice::Proposed => {
            let cfg = InitConfig {
                seed,
                ..init_cfg.clone()
            };
            match measured {
                Measured::Diffs(rd) => init_point(&sc.array, rd, &cfg),
                Measured::Ranges(r) => init_point_ranges(&sc.array, r, &cfg).map(|o| o.point),
            }
        }
        InitChoice::Random => random_point(0.0, 1.0, sc.array.dim(), seed),
        InitChoice::Fixed(p) => {
            let p = Position::from_slice(p)?;
            sc.array.check_dim(&p)?;
            Ok(p)
        }
    }
}

fn solve_once(
    cfg: &ExperimentConfig,
    choice: &InitChoice,
    sc: &ResolvedScenario,
    noise: &NoiseModel,
    trial: u64,
) -> Result<(Position, SolveTrace)> {
    let noise_seed = derive_seed(derive_seed(cfg.seed, NOISE_STREAM), trial);
    let init_seed = derive_seed(derive_seed(cfg.seed, INIT_STREAM), trial);
    let measured = match cfg.solver {
        SolverKind::Solvit => Measured::Diffs(noisy_rangediffs(&sc.source, &sc.array, noise, noise_seed)?),
        SolverKind::Sfp => Measured::Ranges(noisy_ranges(&sc.source, &sc.array, noise, noise_seed)?),
    };
    let x0 = start_point(choice, sc, &measured, &cfg.init_config, init_seed)?;
    match &measured {
        Measured::Diffs(rd) => solvit_solve(&x0, &sc.array, rd, &cfg.solver_config),
        Measured::Ranges(r) => sfp_solve(Some(&x0), &sc.array, r, &cfg.solver_config),
    }
}

/// One labelled solve with its full trace.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledTrace {
    pub label: String,
    pub trace: SolveTrace,
}

/// Solves trial 0 at the first sweep value once per initialization in
/// `inits` (the configured one when empty) and keeps every iterate.
pub fn run_trace(cfg: &ExperimentConfig, inits: &[InitChoice]) -> Result<Vec<LabelledTrace>> {
    cfg.validate()?;
    let sc = cfg.scenario.resolve(cfg.seed)?;
    let noise = cfg.noise_at(cfg.sweep_values()[0], &sc)?;
    let own = [cfg.init.clone()];
    let inits = if inits.is_empty() { &own[..] } else { inits };
    inits
        .iter()
        .map(|choice| {
            let (_, trace) = solve_once(cfg, choice, &sc, &noise, 0)?;
            Ok(LabelledTrace {
                label: choice.label().to_string(),
                trace,
            })
        })
        .collect()
}

/// Writes `trace_<label>.csv` per trace into `dir`; returns the paths.
pub fn write_traces(traces: &[LabelledTrace], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.as_ref())?;
    traces
        .iter()
        .map(|t| {
            let path = dir.as_ref().join(format!("trace_{}.csv", t.label));
            t.trace.write_csv(std::fs::File::create(&path)?)?;
            Ok(path)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    /// SNR in dB or frequency in Hz.
    pub sweep: f64,
    pub rmse: f64,
    /// Bound on the position RMSE at the true source; 0 when noiseless.
    pub crlb: f64,
    pub trials_failed: usize,
}

/// `N` trials per sweep value. Trial `t` uses the same noise draws at every
/// sweep value, so rows differ only by the noise level or frequency. Results
/// do not depend on the number of worker threads.
pub fn run_rmse_sweep(cfg: &ExperimentConfig) -> Result<Vec<RmseRow>> {
    cfg.validate()?;
    let sc = cfg.scenario.resolve(cfg.seed)?;
    cfg.sweep_values()
        .iter()
        .map(|&value| {
            let noise = cfg.noise_at(value, &sc)?;
            let errors: Vec<Option<f64>> = (0..cfg.trials as u64)
                .into_par_iter()
                .map(|t| match solve_once(cfg, &cfg.init, &sc, &noise, t) {
                    Ok((x, trace)) if trace.status != SolveStatus::SingularSystem => {
                        let e2 = x.coords().iter().zip(sc.source.coords()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                        e2.is_finite().then_some(e2)
                    }
                    _ => None,
                })
                .collect();
            let ok: Vec<f64> = errors.iter().flatten().copied().collect();
            let rmse = if ok.is_empty() {
                f64::NAN
            } else {
                (ok.iter().sum::<f64>() / ok.len() as f64).sqrt()
            };
            let crlb = if noise.sigma2 == 0.0 {
                0.0
            } else {
                crlb::fisher(&sc.source, &sc.array, &noise)?.rmse_bound
            };
            Ok(RmseRow {
                sweep: value,
                rmse,
                crlb,
                trials_failed: errors.len() - ok.len(),
            })
        })
        .collect()
}

pub fn write_rmse_csv<W: Write>(rows: &[RmseRow], mut w: W) -> Result<()> {
    writeln!(w, "sweep,rmse,crlb,failed")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.sweep, r.rmse, r.crlb, r.trials_failed)?;
    }
    Ok(())
}

pub fn read_rmse_csv<R: Read>(r: R) -> Result<Vec<RmseRow>> {
    let table = read_table(r)?;
    if table.headers != ["sweep", "rmse", "crlb", "failed"] {
        return Err(Error::Parse(format!(
            "expected header sweep,rmse,crlb,failed, found {}",
            table.headers.join(",")
        )));
    }
    Ok(table
        .rows
        .iter()
        .map(|row| RmseRow {
            sweep: row[0],
            rmse: row[1],
            crlb: row[2],
            trials_failed: row[3] as usize,
        })
        .collect())
}

/// Provenance written next to the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub seed: u64,
    pub generator: String,
    pub solver: String,
    pub solver_config: SolverConfig,
    pub init: InitChoice,
    pub sweep: SweepAxis,
    pub trials: usize,
    pub sensors: SensorArray,
    pub source: Position,
    pub failure_policy: String,
}

impl RunMetadata {
    pub fn for_config(cfg: &ExperimentConfig) -> Result<Self> {
        let sc = cfg.scenario.resolve(cfg.seed)?;
        Ok(RunMetadata {
            version: VERSION.to_string(),
            seed: cfg.seed,
            generator: GENERATOR_ID.to_string(),
            solver: cfg.solver.as_str().to_string(),
            solver_config: cfg.solver_config,
            init: cfg.init.clone(),
            sweep: cfg.sweep,
            trials: cfg.trials,
            sensors: sc.array,
            source: sc.source,
            failure_policy: FAILURE_POLICY.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A numeric CSV with a header row. `inf`, `-inf` and `nan` are accepted.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table<R: Read>(r: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!("row has {} fields, header has {}", rec.len(), headers.len())));
        }
        rows.push(
            rec.iter()
                .map(|v| crate::scenario::parse_f64(Some(v)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(Table { headers, rows })
}

/// Columns drawn by default: everything after the first except failure
/// counts and coordinates.
pub fn default_plot_columns(table: &Table) -> Vec<usize> {
    (1..table.headers.len())
        .filter(|&k| {
            let h = &table.headers[k];
            h != "failed" && !h.starts_with("x_")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    pub log_y: bool,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            title: String::new(),
            log_y: true,
            width: 640,
            height: 400,
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart of the selected columns against the first column as SVG.
/// Non-finite points (and non-positive ones on a log axis) are skipped.
pub fn render_svg(table: &Table, columns: &[usize], opts: &PlotOptions) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::invalid("nothing to plot: table has no rows"));
    }
    if let Some(&bad) = columns.iter().find(|&&k| k == 0 || k >= table.headers.len()) {
        return Err(Error::invalid(format!("no plottable column {bad}")));
    }
    let ty = |v: f64| if opts.log_y { v.log10() } else { v };
    let usable = |v: f64| v.is_finite() && (!opts.log_y || v > 0.0);
    let series: Vec<Vec<(f64, f64)>> = columns
        .iter()
        .map(|&k| {
            table
                .rows
                .iter()
                .filter(|row| row[0].is_finite() && usable(row[k]))
                .map(|row| (row[0], ty(row[k])))
                .collect()
        })
        .collect();
    let pts = || series.iter().flatten();
    let (mut x0, mut x1) = bounds(pts().map(|p| p.0));
    let (mut y0, mut y1) = bounds(pts().map(|p| p.1));
    if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y0 == y1 {
        y0 -= 0.5;
        y1 += 0.5;
    }

    let (w, h) = (opts.width as f64, opts.height as f64);
    let (left, right, top, bottom) = (70.0, 20.0, 30.0, 50.0);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(&opts.title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let label_y = if opts.log_y { format!("1e{fy:.1}") } else { format!("{fy:.3e}") };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(fx),
            h - bottom + 16.0,
            trim_num(fx)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            py(fy) + 4.0,
            label_y
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (left + w - right) / 2.0,
        h - 12.0,
        escape(&table.headers[0])
    );
    for (n, (&k, pts)) in columns.iter().zip(&series).enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        if !pts.is_empty() {
            let d: Vec<String> = pts
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| format!("{}{:.2} {:.2}", if i == 0 { 'M' } else { 'L' }, px(x), py(y)))
                .collect();
            let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
            for &(x, y) in pts {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y));
            }
        }
        let ly = top + 14.0 * n as f64 + 6.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" text-anchor="end" fill="{color}">{}</text>"#,
            w - right - 4.0,
            escape(&table.headers[k])
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// A gnuplot script that draws the same chart from `csv_path`.
pub fn gnuplot_script(table: &Table, columns: &[usize], csv_path: &str, output_png: &str, opts: &PlotOptions) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set terminal pngcairo size {},{}", opts.width, opts.height);
    let _ = writeln!(s, "set output '{output_png}'");
    let _ = writeln!(s, "set title '{}'", opts.title.replace('\'', "''"));
    let _ = writeln!(s, "set xlabel '{}'", table.headers[0]);
    if opts.log_y {
        let _ = writeln!(s, "set logscale y");
    }
    let _ = writeln!(s, "set key autotitle columnhead");
    let plots: Vec<String> = columns
        .iter()
        .map(|k| format!("'{csv_path}' using 1:{} with linespoints", k + 1))
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn trim_num(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    fn sim1() -> ExperimentConfig {
        config(
            r#"{
                "scenario": {"kind": "generate",
                             "array": {"geometry": "random", "m": 4, "lo": -10, "hi": 10, "n": 2},
                             "source": {"kind": "fixed", "position": [10, 10]}},
                "snr_grid": [0], "freq_grid": [1000], "trials": 1, "seed": 3
            }"#,
        )
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = sim1();
        assert_eq!(cfg.solver, SolverKind::Solvit);
        assert_eq!(cfg.init, InitChoice::Proposed);
        assert_eq!(cfg.sweep, SweepAxis::Snr);
        assert_eq!(cfg.solver_config, SolverConfig::default());
        let mut bad = cfg.clone();
        bad.trials = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.snr_grid.clear();
        assert!(bad.validate().is_err());
        let parsed: InitChoice = serde_json::from_str(r#"{"fixed": [1, 2]}"#).unwrap();
        assert_eq!(parsed, InitChoice::Fixed(vec![1.0, 2.0]));
        assert!(ExperimentConfig::from_json(r#"{"snr_grid": [0]}"#).is_err());
    }

    #[test]
    fn trace_rows_match_iterations_and_both_inits_descend() {
        let traces = run_trace(&sim1(), &[InitChoice::Random, InitChoice::Proposed]).unwrap();
        assert_eq!(traces.len(), 2);
        for t in &traces {
            assert_eq!(t.trace.iterates.len(), t.trace.iterations + 1);
            assert!(t.trace.max_increase() <= 1e-9);
            let mut buf = Vec::new();
            t.trace.write_csv(&mut buf).unwrap();
            let lines = String::from_utf8(buf).unwrap().lines().count();
            assert_eq!(lines, t.trace.iterations + 2);
        }
        let dir = tempfile::tempdir().unwrap();
        let paths = write_traces(&traces, dir.path()).unwrap();
        assert!(paths[0].ends_with("trace_random.csv"));
        assert!(paths[1].exists());
    }

    #[test]
    fn random_parts_fixed_by_seed() {
        let cfg = sim1();
        let a = cfg.scenario.resolve(cfg.seed).unwrap();
        let b = cfg.scenario.resolve(cfg.seed).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.array, cfg.scenario.resolve(cfg.seed + 1).unwrap().array);
    }

    #[test]
    fn noiseless_row_is_exact_and_csv_round_trips() {
        let mut cfg = config(
            r#"{
                "scenario": {"kind": "generate", "array": {"geometry": "rhombus"},
                             "source": {"kind": "fixed", "position": [1, 5]}},
                "snr_grid": [0], "freq_grid": [1000], "trials": 20, "seed": 1
            }"#,
        );
        cfg.snr_grid = vec![f64::INFINITY, 0.0];
        cfg.solver_config.tol = 1e-12;
        let rows = run_rmse_sweep(&cfg).unwrap();
        assert!(rows[0].rmse < 1e-5, "{:?}", rows[0]);
        assert_eq!(rows[0].crlb, 0.0);
        assert!(rows[1].crlb > 0.0);
        let mut buf = Vec::new();
        write_rmse_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("sweep,rmse,crlb,failed\n"));
        let back = read_rmse_csv(&buf[..]).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn frequency_sweep_and_sfp() {
        let cfg = config(
            r#"{
                "scenario": {"kind": "generate", "array": {"geometry": "circular", "m": 5, "radius": 10},
                             "source": {"kind": "fixed", "position": [1, 5]}},
                "snr_grid": [0], "freq_grid": [100, 5100], "trials": 30, "seed": 5,
                "sweep": "frequency", "solver": "sfp"
            }"#,
        );
        let rows = run_rmse_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].sweep, 5100.0);
        // higher frequency means smaller range variance
        assert!(rows[1].crlb < rows[0].crlb);
        assert!(rows.iter().all(|r| r.trials_failed == 0));
    }

    #[test]
    fn metadata_lists_provenance() {
        let meta = RunMetadata::for_config(&sim1()).unwrap();
        let json = meta.to_json().unwrap();
        for key in ["\"seed\": 3", "\"version\": \"v", "ChaCha8Rng", "failure_policy", "\"solver\": \"solvit\""] {
            assert!(json.contains(key), "{key} missing in {json}");
        }
    }

    #[test]
    fn svg_and_gnuplot_output() {
        let table = read_table("sweep,rmse,crlb,failed\n-10,0.5,0.2,0\n0,0.1,0.05,1\n5,0,inf,0\n".as_bytes()).unwrap();
        let cols = default_plot_columns(&table);
        assert_eq!(cols, vec![1, 2]);
        let svg = render_svg(&table, &cols, &PlotOptions::default()).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 4);
        let gp = gnuplot_script(&table, &cols, "rmse.csv", "rmse.png", &PlotOptions::default());
        assert!(gp.contains("using 1:2") && gp.contains("using 1:3") && gp.contains("logscale"));
        assert!(render_svg(&table, &[7], &PlotOptions::default()).is_err());
    }
}
