use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use ustlab::estimators::{DimensionsConfig, GrowthConfig, Preset, DEFAULT_FIT_NMIN};
use ustlab::experiment::{
    self, read_config, read_scaling_table, scale_count, Command, ExperimentConfig, Normalizer, TailObservable,
    TailsConfig, TreeInput, WalkConfig, WalkTrees, TAIL_PILOT_SAMPLES,
};
use ustlab::ust::{Fill, WindowConfig};
use ustlab::walker::DEFAULT_TRUNCATION_FACTOR;
use ustlab::Error;

const EXIT_INVALID: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Simulation lab for the uniform spanning tree and the loop-erased random
/// walk on Z^2.
///
/// Every output carries its full config in a metadata header; `rerun`
/// reproduces a file from that header alone. Outputs are byte-identical for
/// a fixed seed whatever the number of workers. Exit status: 0 on success,
/// 1 if an estimate was flagged invalid, 2 on a usage error, 3 on a runtime
/// failure (with a JSON error record on stderr).
#[derive(Parser, Debug)]
#[command(name = "ustlab", version)]
struct Cli {
    /// Worker threads (the USTLAB_WORKERS environment variable takes
    /// precedence). Defaults to the number of CPUs.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample infinite-LERW paths up to their exit of B(0, l), as JSON lines.
    SampleLerw {
        /// Radius of the ball whose exit ends each path.
        #[arg(long)]
        l: u32,
        /// The walk is stopped on exiting B(0, trunc_factor * l).
        #[arg(long, default_value_t = DEFAULT_TRUNCATION_FACTOR)]
        trunc_factor: u32,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a UST window and write it as a tree file.
    SampleUst {
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Intrinsic ball volumes |B_d(0, R)| on a tree file, as CSV.
    BallVolume {
        #[arg(long)]
        tree: PathBuf,
        /// Radii, comma separated.
        #[arg(long = "R", value_delimiter = ',', required = true)]
        radii: Vec<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Effective resistance from the origin to the complement of B_d(0, R).
    Resistance {
        #[arg(long)]
        tree: PathBuf,
        /// Radii, comma separated.
        #[arg(long = "R", value_delimiter = ',', required = true)]
        radii: Vec<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Random walk on the tree: return probability, displacement, range
    /// and exit times.
    Walk(WalkArgs),
    /// Growth table of G(n) with its power-law fit (`<out>.fit.csv`).
    EstimateG {
        /// Scales n, comma separated.
        #[arg(long = "n", value_delimiter = ',', default_value = "16,32,64,128,256,512")]
        ns: Vec<u64>,
        /// Samples per n before the budget factor.
        #[arg(long, default_value_t = 3000)]
        samples: usize,
        /// Truncation factor of the infinite-LERW sampler.
        #[arg(long = "K", default_value_t = 4)]
        k: u32,
        /// Smallest n in the fit.
        #[arg(long, default_value_t = DEFAULT_FIT_NMIN)]
        fit_nmin: u64,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        common: Common,
    },
    /// Consolidated dimension report: fits (`<out>`), tables
    /// (`<out>.tables.csv`), tails (`<out>.tails.csv`) and the full report
    /// (`<out>.report.json`).
    EstimateDims {
        #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
        preset: PresetArg,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical tails P(X > lambda * normalizer) with Wilson intervals.
    Tails(TailsArgs),
    /// Exact-oracle self checks.
    Oracle {
        #[command(subcommand)]
        cmd: OracleCmd,
    },
    /// Rerun the experiment recorded in an output file's header.
    Rerun {
        /// Any file written by ustlab.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum OracleCmd {
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent (secondary outputs need a path).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Budget {
    /// Multiplier on every sample count.
    #[arg(long, default_value_t = 1.0)]
    budget: f64,
}

#[derive(Args, Debug, Clone, Copy)]
struct WindowArgs {
    /// Trusted window radius.
    #[arg(long, default_value_t = 64)]
    r: u32,
    /// Box factor: the tree is sampled in B(0, K r).
    #[arg(long = "K", default_value_t = 4)]
    k: u32,
    #[arg(long, value_enum, default_value_t = MethodArg::Wired)]
    method: MethodArg,
}

impl WindowArgs {
    fn config(self) -> WindowConfig {
        match self.method {
            MethodArg::Wired => WindowConfig::wired(self.r, self.k),
            MethodArg::Spine => WindowConfig::spine(self.r, self.k),
        }
    }
}

#[derive(Args, Debug)]
struct WalkArgs {
    /// Walk on the tree in this file.
    #[arg(long, conflicts_with = "fresh_trees", required_unless_present = "fresh_trees")]
    tree: Option<PathBuf>,
    /// Sample trees from the seed (window set by --r, --K, --method).
    #[arg(long)]
    fresh_trees: bool,
    /// Checkpoint times, comma separated.
    #[arg(long = "n", value_delimiter = ',', required = true)]
    ns: Vec<u64>,
    /// Walks per group.
    #[arg(long, default_value_t = 100)]
    replicas: usize,
    /// Groups: one tree each when annealed, batches on one tree when quenched.
    #[arg(long, default_value_t = 10)]
    groups: usize,
    /// annealed: a fresh tree per group; quenched: one tree for all groups.
    /// Defaults to quenched with --tree and annealed with --fresh-trees.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Intrinsic exit radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    exit_radii: Vec<u32>,
    /// Euclidean exit radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    euclidean_radii: Vec<f64>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TailsArgs {
    #[arg(long, value_enum, default_value_t = ObservableArg::Lerw)]
    observable: ObservableArg,
    /// Scale of the LERW tail.
    #[arg(long = "n", default_value_t = 128)]
    n: u32,
    /// Ball radius of the volume tail.
    #[arg(long = "R", default_value_t = 64)]
    radius: u32,
    /// Samples (trees for the ball tail) before the budget factor.
    #[arg(long, default_value_t = 4000)]
    samples: usize,
    /// Thresholds lambda, comma separated.
    #[arg(long = "lambda", value_delimiter = ',', default_value = "1,2,4,8")]
    lambdas: Vec<f64>,
    /// Growth table (`estimate-g` output) for the normalizer; without it a
    /// pilot growth run is made.
    #[arg(long)]
    growth: Option<PathBuf>,
    /// Tree window radius for the ball tail (default 4R).
    #[arg(long)]
    r: Option<u32>,
    /// Box factor of the trees and truncation factor of the LERW sampler.
    #[arg(long = "K", default_value_t = 4)]
    k: u32,
    #[command(flatten)]
    budget: Budget,
    #[command(flatten)]
    common: Common,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Wired,
    Spine,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Annealed,
    Quenched,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ObservableArg {
    Lerw,
    Ball,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PresetArg {
    Pilot,
    Desk,
    Overnight,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Pilot => Preset::Pilot,
            PresetArg::Desk => Preset::Desk,
            PresetArg::Overnight => Preset::Overnight,
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::Usage(m),
            e => Failure::Runtime(e),
        }
    }
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn powers_of_two_up_to(lo: u64, hi: u64) -> Vec<u64> {
    std::iter::successors(Some(lo), |&n| Some(n * 2)).take_while(|&n| n <= hi).collect()
}

/// Translates the command line into a config and an output path.
fn build(cmd: Cmd) -> Result<(ExperimentConfig, Option<PathBuf>), Failure> {
    let cfg = |seed, command| ExperimentConfig { seed, command };
    Ok(match cmd {
        Cmd::SampleLerw {
            l,
            trunc_factor,
            samples,
            common,
        } => (cfg(common.seed, Command::SampleLerw { l, trunc_factor, samples }), common.out),
        Cmd::SampleUst { window, common } => (
            cfg(
                common.seed,
                Command::SampleUst {
                    window: window.config(),
                },
            ),
            common.out,
        ),
        Cmd::BallVolume { tree, radii, common } => (
            cfg(
                common.seed,
                Command::BallVolume {
                    tree: path_string(&tree),
                    radii,
                },
            ),
            common.out,
        ),
        Cmd::Resistance { tree, radii, common } => (
            cfg(
                common.seed,
                Command::Resistance {
                    tree: path_string(&tree),
                    radii,
                },
            ),
            common.out,
        ),
        Cmd::Walk(w) => {
            let window = w.window.config().with_fill(Fill::Window);
            let trees = match (&w.tree, w.mode) {
                (Some(_), Some(ModeArg::Annealed)) => {
                    return Err(Failure::Usage(
                        "annealed mode samples a tree per group; use --fresh-trees instead of --tree".into(),
                    ))
                }
                (Some(p), _) => WalkTrees::Quenched {
                    tree: TreeInput::File(path_string(p)),
                },
                (None, Some(ModeArg::Quenched)) => WalkTrees::Quenched {
                    tree: TreeInput::Fresh(window),
                },
                (None, _) => WalkTrees::Annealed { window },
            };
            (
                cfg(
                    w.common.seed,
                    Command::Walk(WalkConfig {
                        trees,
                        ns: w.ns,
                        replicas: w.replicas,
                        groups: w.groups,
                        exit_radii: w.exit_radii,
                        euclidean_radii: w.euclidean_radii,
                    }),
                ),
                w.common.out,
            )
        }
        Cmd::EstimateG {
            ns,
            samples,
            k,
            fit_nmin,
            budget,
            common,
        } => (
            cfg(
                common.seed,
                Command::EstimateG {
                    growth: GrowthConfig {
                        ns,
                        samples: scale_count(samples, budget.budget),
                        k,
                        fit_nmin,
                    },
                    budget: budget.budget,
                },
            ),
            common.out,
        ),
        Cmd::EstimateDims { preset, budget, common } => {
            let preset = Preset::from(preset);
            (
                cfg(
                    common.seed,
                    Command::EstimateDims {
                        preset: Some(preset),
                        budget: budget.budget,
                        dims: DimensionsConfig::preset(preset).scaled(budget.budget),
                    },
                ),
                common.out,
            )
        }
        Cmd::Tails(t) => {
            let (observable, target) = match t.observable {
                ObservableArg::Lerw => (TailObservable::Lerw { n: t.n, k: t.k }, t.n),
                ObservableArg::Ball => {
                    let r = t.r.unwrap_or(4 * t.radius);
                    let window = WindowConfig::wired(r, t.k).with_fill(Fill::Window);
                    (
                        TailObservable::Ball {
                            radius: t.radius,
                            window,
                        },
                        t.radius,
                    )
                }
            };
            let normalizer = match &t.growth {
                Some(p) => Normalizer::Table(read_scaling_table(BufReader::new(File::open(p).map_err(Error::from)?), "G")?),
                None => Normalizer::Pilot(GrowthConfig {
                    ns: powers_of_two_up_to(4, (target as u64).max(16)),
                    samples: scale_count(TAIL_PILOT_SAMPLES, t.budget.budget),
                    k: t.k,
                    fit_nmin: DEFAULT_FIT_NMIN,
                }),
            };
            (
                cfg(
                    t.common.seed,
                    Command::Tails(TailsConfig {
                        observable,
                        samples: scale_count(t.samples, t.budget.budget),
                        lambdas: t.lambdas,
                        normalizer,
                        budget: t.budget.budget,
                    }),
                ),
                t.common.out,
            )
        }
        Cmd::Oracle {
            cmd: OracleCmd::Selftest { out },
        } => (cfg(0, Command::OracleSelftest), out),
        Cmd::Rerun { from, out } => (read_config(&from)?, out),
    })
}

fn workers(flag: Option<usize>) -> Result<usize, Failure> {
    match std::env::var("USTLAB_WORKERS") {
        Ok(v) => v
            .trim()
            .parse()
            .ok()
            .filter(|&n: &usize| n >= 1)
            .ok_or_else(|| Failure::Usage(format!("USTLAB_WORKERS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))),
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::CapExceeded { .. } => "cap-exceeded",
        Error::Disconnected => "disconnected",
        Error::InvalidGraph(_) => "invalid-graph",
        Error::OutsideDomain(_) => "outside-domain",
        Error::DifferentComponents(..) => "different-components",
        Error::WindowTooSmall { .. } => "window-too-small",
        Error::SizeCap { .. } => "size-cap",
        Error::Fit(_) => "fit",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
    }
}

fn main_inner(cli: Cli) -> Result<bool, Failure> {
    let workers = workers(cli.workers)?;
    let (cfg, out) = build(cli.cmd)?;
    cfg.validate()?;
    let (outcome, wall) = experiment::execute(&cfg, workers, out.as_deref())?;
    match &out {
        Some(p) => eprintln!("wrote {} in {wall:.2} s", p.display()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(outcome.main()).map_err(Error::from)?;
            stdout.flush().map_err(Error::from)?;
        }
    }
    for n in &outcome.notes {
        eprintln!("note: {n}");
    }
    Ok(outcome.valid)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", json!({"error": "invalid-estimate", "message": "an estimate was flagged invalid"}));
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("{}", json!({"error": "usage", "message": m}));
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("{}", json!({"error": error_kind(&e), "message": e.to_string()}));
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
