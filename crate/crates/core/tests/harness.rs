use std::time::Instant;

use solvit_core::harness::{
    run_rmse_sweep, run_trace, ArraySpec, ExperimentConfig, InitChoice, ScenarioSource, SolverKind, SourceSpec,
    SweepAxis,
};
use solvit_core::initializer::InitConfig;
use solvit_core::{SolveStatus, SolverConfig};

fn generated(array: ArraySpec, source: SourceSpec, snr_grid: Vec<f64>, trials: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioSource::Generate {
            array,
            source,
            c: 340.0,
            fs_factor: 4.0,
        },
        snr_grid,
        freq_grid: vec![1000.0],
        trials,
        solver: SolverKind::Solvit,
        init: InitChoice::Proposed,
        seed,
        sweep: SweepAxis::Snr,
        solver_config: SolverConfig::default(),
        init_config: InitConfig::default(),
    }
}

fn sim1(seed: u64) -> ExperimentConfig {
    generated(
        ArraySpec::Random {
            m: 4,
            lo: -10.0,
            hi: 10.0,
            n: 2,
        },
        SourceSpec::Fixed {
            position: vec![10.0, 10.0],
        },
        vec![0.0],
        1,
        seed,
    )
}

fn sim2(trials: usize) -> ExperimentConfig {
    generated(
        ArraySpec::Random {
            m: 5,
            lo: -50.0,
            hi: 50.0,
            n: 2,
        },
        SourceSpec::Random { lo: -10.0, hi: 10.0 },
        (-10..=0).map(f64::from).collect(),
        trials,
        2,
    )
}

#[test]
fn proposed_init_converges_no_slower_than_random_init_mostly() {
    let seeds = 50;
    let mut wins = 0;
    for seed in 0..seeds {
        let cfg = sim1(seed);
        let traces = run_trace(&cfg, &[InitChoice::Proposed, InitChoice::Random]).unwrap();
        let cost = |k: usize| {
            let t = &traces[k].trace;
            assert!(t.max_increase() <= 1e-9);
            if t.status == SolveStatus::Converged {
                t.iterations
            } else {
                usize::MAX
            }
        };
        if cost(0) <= cost(1) {
            wins += 1;
        }
    }
    assert!(wins * 10 >= seeds * 6, "proposed init no slower in {wins}/{seeds} seeds");
}

#[test]
fn rmse_stays_above_crlb_at_moderate_snr() {
    let mut cfg = sim2(200);
    cfg.snr_grid = vec![-5.0, -2.5, 0.0];
    for row in run_rmse_sweep(&cfg).unwrap() {
        assert!(row.rmse >= row.crlb, "{row:?}");
        assert_eq!(row.trials_failed, 0);
    }
}

#[test]
fn linear_array_sweep_has_no_failures() {
    let cfg = generated(
        ArraySpec::Linear,
        SourceSpec::Random { lo: -10.0, hi: 10.0 },
        vec![-10.0, -5.0, 0.0, 5.0],
        50,
        7,
    );
    for row in run_rmse_sweep(&cfg).unwrap() {
        assert_eq!(row.trials_failed, 0, "{row:?}");
        assert!(row.rmse.is_finite());
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let cfg = sim2(40);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_rmse_sweep(&cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn sim2_sweep_fits_desk_budget() {
    let start = Instant::now();
    let rows = run_rmse_sweep(&sim2(200)).unwrap();
    assert_eq!(rows.len(), 11);
    assert!(start.elapsed().as_secs() < 60, "took {:?}", start.elapsed());
}
