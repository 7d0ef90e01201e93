use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use solvit_core::crlb;
use solvit_core::harness::{self, ExperimentConfig, InitChoice, PlotOptions};
use solvit_core::initializer::{init_point_detailed, init_point_ranges, InitConfig, InitMethod, SearchRegion};
use solvit_core::scenario::{self, Measurements, Scenario};
use solvit_core::sfp::sfp_solve;
use solvit_core::solvit::solvit_solve;
use solvit_core::tdoa;
use solvit_core::{Error, Position, Result, SensorArray, SolverConfig};

#[derive(Parser)]
#[command(name = "solvit", version, about = "Source localization from range and range-difference measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw noisy measurements for a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Kind::Rangediff)]
        kind: Kind,
    },
    /// Estimate the source position from a measurement file.
    Solve {
        /// Scenario JSON or a JSON array of sensor coordinates.
        #[arg(long)]
        sensors: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        /// Starting point as comma-separated coordinates; sampled from the
        /// measurement loci otherwise.
        #[arg(long, value_parser = parse_point)]
        x0: Option<Vec<f64>>,
        #[command(flatten)]
        init: InitArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write every iterate to this CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compute a starting point from a measurement file.
    Init {
        #[arg(long)]
        sensors: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Cramér-Rao bound at a scenario's source.
    Crlb {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Range differences from multi-channel recordings.
    Tdoa {
        /// CSV with a `# fs=<Hz>` line and one column per channel.
        #[arg(long, conflicts_with = "raw")]
        signals: Option<PathBuf>,
        /// Raw little-endian f64 frames; needs --sidecar.
        #[arg(long, requires = "sidecar")]
        raw: Option<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long, default_value_t = tdoa::FIXTURE_BAND_HZ.0)]
        f_lo: f64,
        #[arg(long, default_value_t = tdoa::FIXTURE_BAND_HZ.1)]
        f_hi: f64,
        #[arg(long, default_value_t = tdoa::SPEED_OF_SOUND)]
        c: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo RMSE sweep from an experiment config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Results CSV; metadata goes next to it as `<out>.meta.json`.
        #[arg(long)]
        out: PathBuf,
        /// Also export convergence traces (random and proposed starts) here.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Worker threads (results do not depend on it).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render a results or trace CSV.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// SVG output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// gnuplot script output.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
        #[arg(long, default_value = "")]
        title: String,
        /// Linear instead of logarithmic y axis.
        #[arg(long)]
        linear: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Rangediff,
    Range,
}

#[derive(clap::Args)]
struct InitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    grid_size: usize,
    /// Search box as lo_1,..,lo_n,hi_1,..,hi_n.
    #[arg(long, value_parser = parse_point)]
    region: Option<Vec<f64>>,
}

impl InitArgs {
    fn config(&self) -> Result<InitConfig> {
        let region = match &self.region {
            None => None,
            Some(v) if v.len() % 2 == 0 && !v.is_empty() => {
                let (lo, hi) = v.split_at(v.len() / 2);
                Some(SearchRegion::new(lo.to_vec(), hi.to_vec())?)
            }
            Some(_) => return Err(Error::InvalidArgument("--region needs 2n values".into())),
        };
        Ok(InitConfig {
            grid_size: self.grid_size,
            coord_bound: None,
            region,
            seed: self.seed,
        })
    }
}

#[derive(clap::Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Fit only strictly positive range differences.
    #[arg(long)]
    strict_positive_pairs: bool,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            strict_positive_pairs: self.strict_positive_pairs,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_point(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("not a number: {v:?}")))
        .collect()
}

fn load_sensors(path: &Path) -> Result<SensorArray> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(s) = Scenario::from_json(&text) {
        return Ok(s.sensors);
    }
    Ok(serde_json::from_str::<SensorArray>(&text)?)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, out, kind } => {
            let s = Scenario::load(scenario)?;
            let w = output(out.as_deref())?;
            match kind {
                Kind::Rangediff => scenario::write_rangediffs_csv(&s.rangediffs()?, w),
                Kind::Range => scenario::write_ranges_csv(&s.ranges()?, w),
            }
        }
        Command::Solve {
            sensors,
            measurements,
            x0,
            init,
            solver,
            trace,
        } => {
            let array = load_sensors(&sensors)?;
            let cfg = solver.config()?;
            let x0 = x0.map(Position::new).transpose()?;
            let (x, tr) = match scenario::read_measurements_csv(measurements)? {
                Measurements::RangeDiffs(rd) => {
                    let start = match x0 {
                        Some(p) => p,
                        None => init_point_detailed(&array, &rd, &init.config()?)?.point,
                    };
                    solvit_solve(&start, &array, &rd, &cfg)?
                }
                Measurements::Ranges(r) => {
                    let start = match x0 {
                        Some(p) => p,
                        None => init_point_ranges(&array, &r, &init.config()?)?.point,
                    };
                    sfp_solve(Some(&start), &array, &r, &cfg)?
                }
            };
            if let Some(path) = trace {
                tr.write_csv(File::create(path)?)?;
            }
            print_json(&json!({
                "estimate": x.coords(),
                "status": tr.status.as_str(),
                "iterations": tr.iterations,
                "objective": tr.final_objective(),
            }))
        }
        Command::Init {
            sensors,
            measurements,
            init,
        } => {
            let array = load_sensors(&sensors)?;
            let out = match scenario::read_measurements_csv(measurements)? {
                Measurements::RangeDiffs(rd) => init_point_detailed(&array, &rd, &init.config()?)?,
                Measurements::Ranges(r) => init_point_ranges(&array, &r, &init.config()?)?,
            };
            let method = match out.method {
                InitMethod::Hyperbola { i, j } => json!({"hyperbola": [i + 1, j + 1]}),
                InitMethod::Circle { i } => json!({"circle": i + 1}),
                InitMethod::Grid => json!("grid"),
            };
            print_json(&json!({
                "x0": out.point.coords(),
                "method": method,
                "evaluations": out.evaluations,
            }))
        }
        Command::Crlb { scenario } => {
            let s = Scenario::load(scenario)?;
            let report = crlb::fisher(&s.source, &s.sensors, &s.noise)?;
            println!("{}", report.to_json()?);
            Ok(())
        }
        Command::Tdoa {
            signals,
            raw,
            sidecar,
            f_lo,
            f_hi,
            c,
            out,
        } => {
            let sigs = match (signals, raw, sidecar) {
                (Some(csv), None, _) => tdoa::read_signals_csv(csv)?,
                (None, Some(raw), Some(side)) => tdoa::read_signals_raw(raw, side)?,
                _ => return Err(Error::InvalidArgument("give --signals or --raw with --sidecar".into())),
            };
            let rd = tdoa::estimate_rangediffs(&sigs, f_lo, f_hi, c)?;
            scenario::write_rangediffs_csv(&rd, output(out.as_deref())?)
        }
        Command::Bench {
            config,
            out,
            trace_dir,
            threads,
        } => {
            let cfg = ExperimentConfig::load(config)?;
            let work = || -> Result<()> {
                let rows = harness::run_rmse_sweep(&cfg)?;
                harness::write_rmse_csv(&rows, BufWriter::new(File::create(&out)?))?;
                let meta = harness::RunMetadata::for_config(&cfg)?;
                let mut meta_path = out.clone().into_os_string();
                meta_path.push(".meta.json");
                std::fs::write(meta_path, meta.to_json()? + "\n")?;
                if let Some(dir) = &trace_dir {
                    let traces = harness::run_trace(&cfg, &[InitChoice::Random, InitChoice::Proposed])?;
                    harness::write_traces(&traces, dir)?;
                }
                Ok(())
            };
            match threads {
                Some(n) => rayon_pool(n)?.install(work),
                None => work(),
            }
        }
        Command::Plot {
            input,
            out,
            gnuplot,
            title,
            linear,
        } => {
            if out.is_none() && gnuplot.is_none() {
                return Err(Error::InvalidArgument("give --out and/or --gnuplot".into()));
            }
            let table = harness::read_table(File::open(&input)?)?;
            let cols = harness::default_plot_columns(&table);
            let opts = PlotOptions {
                title,
                log_y: !linear,
                ..Default::default()
            };
            if let Some(path) = out {
                std::fs::write(path, harness::render_svg(&table, &cols, &opts)?)?;
            }
            if let Some(path) = gnuplot {
                let png = path.with_extension("png");
                let script = harness::gnuplot_script(
                    &table,
                    &cols,
                    &input.to_string_lossy(),
                    &png.to_string_lossy(),
                    &opts,
                );
                std::fs::write(path, script)?;
            }
            Ok(())
        }
    }
}

fn rayon_pool(n: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn fail(kind: &str, msg: &str) -> ExitCode {
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: {kind}: {msg}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return fail("usage", first.trim_start_matches("error:").trim());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
