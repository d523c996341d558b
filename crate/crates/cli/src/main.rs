use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use resgame_core::data::{
    load_error_samples, load_network_case, write_error_samples, write_network_case, write_results, ErrorSampleMatrix,
    NetworkCase, ScenarioConfig, ScenarioMode,
};
use resgame_core::experiments::{
    grid_search, player_sweep, player_sweep_summary, player_sweep_table, radius_sweep, render_report,
    synthetic_samples, Experiment, ExperimentResult,
};
use resgame_core::market::MarketParams;
use resgame_core::vi::{assemble_jacobian, check_uniqueness};
use resgame_core::{fixtures, Error, Result};

const JACOBIAN_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-3;

#[derive(Parser)]
#[command(
    name = "resgame",
    version,
    about = "Reserve-market game between a system operator and microgrids"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Bundled case (two-bus, desk, ieee30) or a case directory.
    /// [default: desk]
    #[arg(long, global = true)]
    case: Option<String>,
    /// Error-sample CSV. Without it, rows are drawn from the synthetic generator.
    #[arg(long, global = true)]
    samples: Option<PathBuf>,
    /// Scenario TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Keep only the first K microgrids.
    #[arg(long, global = true)]
    players: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// ε^jot / N for every microgrid
    C1,
    /// ε^jot for every microgrid
    C2,
    /// tuned rates
    C3,
    /// no delivery regulation
    None,
}

impl From<Mode> for ScenarioMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::C1 => ScenarioMode::BonferroniBound,
            Mode::C2 => ScenarioMode::JointBound,
            Mode::C3 => ScenarioMode::Bayesian,
            Mode::None => ScenarioMode::NoRegulation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// One scenario.
    Run,
    /// Configured mode over a list of radii plus the unregulated benchmark.
    SweepRadius {
        #[arg(long, value_delimiter = ',', default_values_t = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1])]
        radii: Vec<f64>,
    },
    /// Tuned rates per player count, repeated over tuner seeds.
    SweepPlayers {
        #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 6])]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        /// Draw fresh synthetic samples for every seed instead of only restarting the tuner.
        #[arg(long)]
        resample: bool,
    },
    /// Evenly spaced tied-rate search, compared with the tuner.
    GridSearch,
    /// Jacobian symmetry, finite differences and uniqueness of the game solution.
    ValidateVi {
        /// Cases to check; defaults to two-bus and desk, or --case when given explicitly.
        #[arg(long, value_delimiter = ',')]
        fixtures: Vec<String>,
        #[arg(long, default_value_t = 3)]
        starts: usize,
    },
    /// SVG charts from the CSVs in --out.
    Report,
    /// Writes the case, its samples and the scenario config to --out.
    Export,
}

impl Common {
    fn case_name(&self) -> &str {
        self.case.as_deref().unwrap_or("desk")
    }
}

/// Case, config and samples after applying the flags.
struct Setup {
    case: NetworkCase,
    config: ScenarioConfig,
    samples: ErrorSampleMatrix,
    /// The samples came from the generator, so `--resample` can redraw them per seed.
    synthetic: bool,
}

fn setup(c: &Common, case_name: &str) -> Result<Setup> {
    let (mut case, dir) = match fixtures::by_name(case_name) {
        Some(case) => (case, None),
        None => (load_network_case(case_name)?, Some(PathBuf::from(case_name))),
    };
    let in_dir = |f: &str| dir.as_ref().map(|d| d.join(f)).filter(|p| p.exists());
    let mut config = match c.config.clone().or_else(|| in_dir("config.toml")) {
        Some(p) => ScenarioConfig::load(p)?,
        None if case_name == "desk" => fixtures::desk_config(),
        None => ScenarioConfig {
            horizon: case.n_periods(),
            ..ScenarioConfig::default()
        },
    };
    if let Some(s) = c.seed {
        config.seed = s;
    }
    if let Some(m) = c.mode {
        config.mode = m.into();
    }
    if let Some(k) = c.players {
        case = case.with_players(k)?;
    }
    let (samples, synthetic) = match c.samples.clone().or_else(|| in_dir("samples.csv")) {
        Some(p) => (load_error_samples(p)?, false),
        None => (synthetic_samples(&case, &config)?, true),
    };
    Ok(Setup {
        case,
        config,
        samples,
        synthetic,
    })
}

fn experiment(s: &Setup) -> Result<Experiment> {
    Experiment::new(s.case.clone(), &s.samples, s.config.clone())
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn describe(r: &ExperimentResult) {
    let rates: Vec<String> = r.eps_ind().iter().map(|e| format!("{e:.4}")).collect();
    println!(
        "{:<5} players={} radius={:e} eps_ind=[{}] eps_e={:.3} reserve_bid={:.4} MWh status={:?} nodes={} solves={} ({:.1} s)",
        r.mode.label(),
        r.players,
        r.radius,
        rates.join(", "),
        r.eps_e(),
        r.run.summary.reserve_bid,
        r.run.status,
        r.run.nodes,
        r.solves,
        r.seconds,
    );
}

fn run(c: &Common) -> Result<bool> {
    let s = setup(c, c.case_name())?;
    let r = experiment(&s)?.run()?;
    describe(&r);
    for p in r.write(&c.out)? {
        info!("wrote {}", p.display());
    }
    Ok(r.run.acceptable())
}

fn sweep_radius(c: &Common, radii: &[f64]) -> Result<bool> {
    let s = setup(c, c.case_name())?;
    let sweep = radius_sweep(&experiment(&s)?, radii)?;
    mkdir(&c.out)?;
    let mut ok = true;
    for r in sweep.results.iter().chain([&sweep.benchmark]) {
        describe(r);
        ok &= r.run.acceptable();
    }
    sweep.benchmark.write(c.out.join("benchmark"))?;
    sweep.write(c.out.join("radius_sweep.csv"))?;
    Ok(ok)
}

fn sweep_players(c: &Common, counts: &[usize], seeds: &[u64], resample: bool) -> Result<bool> {
    let s = setup(c, c.case_name())?;
    let exp = experiment(&s)?;
    let draw = |seed: u64| -> Result<ErrorSampleMatrix> {
        if resample && s.synthetic {
            synthetic_samples(
                &s.case,
                &ScenarioConfig {
                    seed,
                    ..s.config.clone()
                },
            )
        } else {
            Ok(s.samples.clone())
        }
    };
    let rows = player_sweep(&exp, draw, counts, seeds)?;
    for r in &rows {
        println!(
            "players={} seed={} eps_ind={:.4} eps_e={:.3} h={:.3} solves={}{}",
            r.players,
            r.seed,
            r.eps_ind,
            r.eps_e,
            r.h,
            r.solves,
            if r.stopped_early { " (early stop)" } else { "" }
        );
    }
    for (k, e, ee) in player_sweep_summary(&rows) {
        println!("mean over seeds: players={k} eps_ind={e:.4} eps_e={ee:.3}");
    }
    mkdir(&c.out)?;
    write_results(&player_sweep_table(&rows), c.out.join("player_sweep.csv"))?;
    Ok(true)
}

fn grid(c: &Common) -> Result<bool> {
    let s = setup(c, c.case_name())?;
    let exp = experiment(&s)?;
    let g = grid_search(&exp)?;
    let tuned = exp.run_mode(ScenarioMode::Bayesian)?;
    println!(
        "grid: best eps_ind={:.5} h={:.3} spacing={:.6} solves={}",
        g.best_eps(),
        g.best_h(),
        g.spacing,
        g.solves
    );
    describe(&tuned);
    println!(
        "distance between optima: {:.5} ({:.2} spacings)",
        (g.best_eps() - tuned.mean_eps_ind()).abs(),
        (g.best_eps() - tuned.mean_eps_ind()).abs() / g.spacing
    );
    mkdir(&c.out)?;
    write_results(&g.table(), c.out.join("grid_search.csv"))?;
    tuned.write(&c.out)?;
    Ok(tuned.run.acceptable())
}

fn validate_vi(c: &Common, names: &[String], starts: usize) -> Result<bool> {
    let names: Vec<String> = match (names.is_empty(), &c.case) {
        (false, _) => names.to_vec(),
        (true, Some(case)) => vec![case.clone()],
        (true, None) => vec!["two-bus".into(), "desk".into()],
    };
    println!(
        "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10}  result",
        "case", "symmetry", "fd", "theta", "mpec", "price gap"
    );
    let mut all = true;
    for name in &names {
        let s = setup(c, name)?;
        let exp = experiment(&s)?;
        let eps = exp.fixed_rates(ScenarioMode::BonferroniBound)?;
        let params = MarketParams::from_config(&exp.config, exp.train.delta_t, eps);
        let map = assemble_jacobian(&exp.case, &exp.train, &params)?;
        let x = vec![0.5; map.dim()];
        let fd = (&map.finite_difference_jacobian(&x, FD_STEP) - &map.jacobian)
            .abs()
            .max();
        let grad = map.gradient_defect(&x, FD_STEP);
        let sym = map.symmetry_defect();
        let u = check_uniqueness(&exp.case, &exp.train, &params, &exp.config.solver, starts, true)?;
        let pass = sym == 0.0 && fd.max(grad) <= JACOBIAN_TOL && u.pass;
        all &= pass;
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |d| format!("{d:.2e}"));
        println!(
            "{:<10} {:>10.2e} {:>10.2e} {:>10.2e} {:>10} {:>10}  {}{}",
            name,
            sym,
            fd.max(grad),
            u.theta_spread,
            opt(u.mpec_deviation),
            opt(u.price_gap),
            if pass { "PASS" } else { "FAIL" },
            if u.strictly_convex {
                ""
            } else {
                " (costs not strictly convex)"
            }
        );
    }
    Ok(all)
}

fn report(c: &Common) -> Result<bool> {
    let cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    let written = render_report(&c.out, cfg.eps_joint)?;
    if written.is_empty() {
        log::warn!("no sweep, tuner or grid CSVs found in {}", c.out.display());
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(true)
}

fn export(c: &Common) -> Result<bool> {
    let s = setup(c, c.case_name())?;
    write_network_case(&s.case, &c.out)?;
    write_error_samples(&s.samples, c.out.join("samples.csv"))?;
    let path = c.out.join("config.toml");
    std::fs::write(&path, s.config.to_toml_string()).map_err(|e| Error::io(&path, e))?;
    println!("{}", c.out.display());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let c = &cli.common;
    let outcome = match &cli.command {
        Command::Run => run(c),
        Command::SweepRadius { radii } => sweep_radius(c, radii),
        Command::SweepPlayers {
            counts,
            seeds,
            resample,
        } => sweep_players(c, counts, seeds, *resample),
        Command::GridSearch => grid(c),
        Command::ValidateVi { fixtures, starts } => validate_vi(c, fixtures, *starts),
        Command::Report => report(c),
        Command::Export => export(c),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("a solve stopped without an acceptable status or a check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
