//! `akit` command-line driver.
//!
//! Exit status: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use akit::adaptive::AdaptiveConfig;
use akit::eskf::{apply_error, FilterInit, RunOptions};
use akit::harness::io::{export_scenario, load_dataset, write_gt_csv, GtSample};
use akit::harness::mc::{
    export_report, filter_config_for, run_method, run_monte_carlo, standard_normal12, InitFamily,
    McConfig, Method, RunReport,
};
use akit::harness::metrics::{prmse, vrmse};
use akit::harness::scenario::{benchmark_suite, generate_scenario, ScenarioSpec, SEGMENT_DURATION};
use akit::harness::training::{fit, FitConfig};
use akit::transformer::checkpoint;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

/// Seed of the built-in benchmark missions shared by `simulate`, `train`
/// and `mc`, so that segment names refer to the same trajectories.
const SUITE_SEED: u64 = 7;

#[derive(Parser)]
#[command(
    name = "akit",
    version,
    about = "INS/DVL navigation filters with adaptive process noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated mission and write its sensor and truth files.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Built-in mission; ignored when --config gives a scenario file.
        #[arg(long, value_enum, default_value_t = Preset::Lawnmower)]
        scenario: Preset,
        /// Mission length in seconds.
        #[arg(long, default_value_t = SEGMENT_DURATION)]
        duration: f64,
    },
    /// Run one filter over a recorded or simulated mission directory.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Directory with imu.csv, dvl.csv and gt.csv.
        #[arg(long)]
        data: PathBuf,
        /// Trained network checkpoint, required for akit.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the noise-scaling network on simulated missions.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo comparison of filters on one mission.
    Mc {
        #[command(flatten)]
        common: Common,
        /// Number of runs; overrides the configuration.
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "ekf,aekf1,aekf2,aekf3")]
        methods: Vec<Method>,
        /// Built-in benchmark segment (train-00..train-10, test-00, test-01).
        #[arg(long, default_value = "test-00")]
        segment: String,
        /// Scenario file; takes precedence over --segment.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Trained network checkpoint, required for akit.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Metric tables from one or more Monte-Carlo report directories.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directories containing report.json.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Straight,
    Lawnmower,
    Random,
    /// The 11 training and 2 test missions of the benchmark.
    Suite,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method `{s}`, expected one of {}", names.join(", "))
    })
}

/// Options of the `run` subcommand.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    adaptive: AdaptiveConfig,
    /// Initial-error family; defaults to the method's family.
    init: Option<InitFamily>,
    /// Draw the initial error from the family. When false the filter starts
    /// on the first ground-truth sample.
    perturb: bool,
    /// Sensor models and DVL geometry; defaults to `scenario.json` in the
    /// data directory, then to the built-in sensors.
    sensors: Option<ScenarioSpec>,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    method: Method,
    epochs: usize,
    updates: usize,
    vrmse: f64,
    prmse: f64,
}

enum Failure {
    Data(String),
    Numeric(String),
}

impl From<akit::Error> for Failure {
    fn from(e: akit::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn config_or<T: DeserializeOwned>(
    common: &Common,
    default: impl FnOnce() -> T,
) -> Result<T, Failure> {
    match &common.config {
        Some(p) => read_json(p),
        None => Ok(default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn simulate(common: &Common, preset: Preset, duration: f64) -> Outcome {
    let specs = match (&common.config, preset) {
        (Some(p), _) => vec![read_json::<ScenarioSpec>(p)?],
        (None, Preset::Straight) => vec![ScenarioSpec::straight("straight", duration)],
        (None, Preset::Lawnmower) => {
            vec![ScenarioSpec::lawnmower("lawnmower", duration, 70.0, 4.0)]
        }
        (None, Preset::Random) => vec![ScenarioSpec::random("random", duration, common.seed)],
        (None, Preset::Suite) => {
            let s = benchmark_suite(SUITE_SEED);
            s.train.into_iter().chain(s.test).collect()
        }
    };
    let nested = specs.len() > 1;
    for spec in &specs {
        let sc = generate_scenario(spec, common.seed)?;
        let dir = if nested {
            common.out.join(&spec.name)
        } else {
            common.out.clone()
        };
        export_scenario(&sc, &dir)?;
        println!(
            "{}: {} IMU samples, {} DVL fixes -> {}",
            spec.name,
            sc.imu.len(),
            sc.dvl_beams.len(),
            dir.display()
        );
    }
    Ok(())
}

fn load_model(
    path: Option<&PathBuf>,
    method: &[Method],
) -> Result<Option<akit::akit::AkitModel>, Failure> {
    match path {
        Some(p) => Ok(Some(checkpoint::load(p)?)),
        None if method.contains(&Method::Akit) => {
            Err(Failure::Data("method akit needs --model".into()))
        }
        None => Ok(None),
    }
}

fn run(common: &Common, method: Method, data: &Path, model: Option<&PathBuf>) -> Outcome {
    let cfg: RunConfig = config_or(common, || RunConfig {
        perturb: true,
        ..RunConfig::default()
    })?;
    let sensors = match cfg.sensors.clone() {
        Some(s) => s,
        None if data.join("scenario.json").exists() => read_json(&data.join("scenario.json"))?,
        None => ScenarioSpec::default(),
    };
    let model = load_model(model, &[method])?;
    let ds = load_dataset(
        &data.join("imu.csv"),
        &data.join("dvl.csv"),
        Some(&data.join("gt.csv")),
        &sensors.dvl.config(),
    )
    .map_err(|e| match Failure::from(e) {
        Failure::Data(m) => Failure::Data(format!("{}: {m}", data.display())),
        f => f,
    })?;
    let truth = ds.truth.expect("ground truth requested");
    let first = truth
        .first()
        .ok_or_else(|| Failure::Data("empty ground truth".into()))?;
    let fc = filter_config_for(&sensors)?;
    let mc = McConfig::default();
    let family = cfg.init.unwrap_or(*mc.family(method));
    let state = if cfg.perturb {
        apply_error(
            &first.state,
            &family.sample(&standard_normal12(common.seed)),
        )
    } else {
        first.state
    };
    let init = FilterInit {
        state,
        p0: family.p0(),
    };
    let out = run_method(
        method,
        &ds.streams,
        &fc,
        &init,
        &cfg.adaptive,
        model.as_ref(),
        &RunOptions::plain(),
    )?;

    let vt: Vec<_> = truth.iter().map(|g| g.state.vel).collect();
    let ve: Vec<_> = out.states.iter().map(|s| s.vel).collect();
    let pt: Vec<_> = truth.iter().map(|g| g.state.pos).collect();
    let pe: Vec<_> = out.states.iter().map(|s| s.pos).collect();
    let summary = RunSummary {
        method,
        epochs: out.states.len(),
        updates: out.updates.len(),
        vrmse: vrmse(&vt, &ve)?,
        prmse: prmse(&pt, &pe)?,
    };
    std::fs::create_dir_all(&common.out)?;
    let states: Vec<GtSample> = truth
        .iter()
        .zip(&out.states)
        .map(|(g, s)| GtSample { t: g.t, state: *s })
        .collect();
    write_gt_csv(&common.out.join("states.csv"), &states)?;
    write_json(&common.out.join("run.json"), &summary)?;
    println!(
        "{}: VRMSE {:.4} m/s, PRMSE {:.3} m",
        method.name(),
        summary.vrmse,
        summary.prmse
    );
    Ok(())
}

fn train(common: &Common) -> Outcome {
    let cfg: FitConfig = config_or(common, FitConfig::desk)?;
    let missions: Vec<ScenarioSpec> = if cfg.training.scenarios.is_empty() {
        benchmark_suite(SUITE_SEED).train
    } else {
        cfg.training
            .scenarios
            .iter()
            .map(|p| read_json(p))
            .collect::<Result<_, _>>()?
    };
    let (model, report) = fit(&missions, &cfg, common.seed)?;
    std::fs::create_dir_all(&common.out)?;
    checkpoint::save(&model, &common.out.join("model.ckpt"))?;
    write_json(&common.out.join("training.json"), &report)?;
    for h in &report.history {
        let val = h
            .validation_vrmse
            .map_or(String::new(), |v| format!(", validation VRMSE {v:.5}"));
        println!("epoch {:3}: loss {:.4e}{val}", h.epoch, h.train_loss);
    }
    println!(
        "{} traces, kept {} -> {}",
        report.traces,
        report
            .best_epoch
            .map_or("the untrained network".into(), |e| format!("epoch {e}")),
        common.out.join("model.ckpt").display()
    );
    Ok(())
}

fn mc(
    common: &Common,
    runs: Option<usize>,
    methods: &[Method],
    segment: &str,
    scenario: Option<&PathBuf>,
    model: Option<&PathBuf>,
) -> Outcome {
    let mut cfg: McConfig = config_or(common, McConfig::default)?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    cfg.seed = common.seed;
    let spec = match scenario {
        Some(p) => read_json(p)?,
        None => {
            let suite = benchmark_suite(SUITE_SEED);
            suite
                .train
                .into_iter()
                .chain(suite.test)
                .find(|s| s.name == segment)
                .ok_or_else(|| Failure::Data(format!("unknown segment `{segment}`")))?
        }
    };
    let model = load_model(model, methods)?;
    let report = run_monte_carlo(methods, &spec, &cfg, model.as_ref())?;
    export_report(&report, &common.out)?;
    print!("{}", table(std::slice::from_ref(&report)));
    Ok(())
}

/// Markdown table of per-method metrics for a set of reports.
fn table(reports: &[RunReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| scenario | method | runs | median VRMSE [m/s] | mean VRMSE [m/s] | median PRMSE [m] | mean PRMSE [m] | diverged | beats EKF |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for r in reports {
        for m in &r.summary {
            let wins = r
                .win_rate(m.method, Method::Ekf)
                .filter(|_| m.method != Method::Ekf)
                .map_or("-".to_string(), |w| format!("{:.0}%", 100.0 * w));
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.5} | {:.5} | {:.3} | {:.3} | {} | {} |",
                r.scenario,
                m.method.name(),
                r.runs.len(),
                m.median_vrmse,
                m.mean_vrmse,
                m.median_prmse,
                m.mean_prmse,
                m.diverged,
                wins
            );
        }
    }
    s
}

fn report(common: &Common, inputs: &[PathBuf]) -> Outcome {
    let reports: Vec<RunReport> = inputs
        .iter()
        .map(|d| read_json(&d.join("report.json")))
        .collect::<Result<_, _>>()?;
    let t = table(&reports);
    print!("{t}");
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("report.md"), t)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate {
            common,
            scenario,
            duration,
        } => simulate(common, *scenario, *duration),
        Command::Run {
            common,
            method,
            data,
            model,
        } => run(common, *method, data, model.as_ref()),
        Command::Train { common } => train(common),
        Command::Mc {
            common,
            runs,
            methods,
            segment,
            scenario,
            model,
        } => mc(
            common,
            *runs,
            methods,
            segment,
            scenario.as_ref(),
            model.as_ref(),
        ),
        Command::Report { common, inputs } => report(common, inputs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
