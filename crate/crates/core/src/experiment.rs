//! Experiment configs, dispatch and output files.
//!
//! Every run is described by an [`ExperimentConfig`]: a command with all of
//! its resolved parameters plus the seed. The config is echoed into each
//! output file (as `# config: {...}` comment lines in CSV, as a metadata
//! record at the head of JSON-lines files, and through the header line of
//! tree files), so [`read_config`] recovers it from the file alone.
//!
//! Output bytes depend only on the config: every replica draws from a
//! stream derived from `(seed, labels)`, parallel results are collected in
//! replica order, and timing goes to a separate `<out>.run.json` sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimators::{
    build_scaling_set, decays_geometrically, empirical_tail, estimate_dimensions, estimate_g, fit_exponent,
    lerw_length_samples, DimensionReport, DimensionsConfig, Estimate, ExponentFit, GrowthConfig, Preset, ScalingRow,
    ScalingTable, TailRow, MIN_FIT_ROWS, TAIL_RATIO,
};
use crate::lattice::Point;
use crate::metrics::{intrinsic_ball, resistance_to_ball_complement};
use crate::oracle;
use crate::rng::RandomSource;
use crate::treewalk::{
    displacement_report, exit_report, group_exit_stats, group_walk_stats, return_report, Ensemble, ExitKind,
    GroupExitStats, MAX_DISCARD_RATE,
};
use crate::ust::{sample_ust_window, TreeWindow, WindowConfig};
use crate::walker::InfiniteLerwSampler;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Samples in the internal growth pilot that normalizes tail runs, before
/// the budget factor.
pub const TAIL_PILOT_SAMPLES: usize = 1000;

const LERW_STREAM: u64 = 11;
const UST_STREAM: u64 = 12;
const WALK_TREE_STREAM: u64 = 13;
const WALK_STREAM: u64 = 14;
const GROWTH_STREAM: u64 = 15;
const DIMS_STREAM: u64 = 16;
const PILOT_STREAM: u64 = 17;
const TAIL_STREAM: u64 = 18;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Infinite-LERW paths up to their exit of `B(0, l)`.
    SampleLerw { l: u32, trunc_factor: u32, samples: usize },
    SampleUst { window: WindowConfig },
    BallVolume { tree: String, radii: Vec<u32> },
    Resistance { tree: String, radii: Vec<u32> },
    Walk(WalkConfig),
    EstimateG { growth: GrowthConfig, budget: f64 },
    EstimateDims {
        preset: Option<Preset>,
        budget: f64,
        dims: DimensionsConfig,
    },
    Tails(TailsConfig),
    OracleSelftest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeInput {
    File(String),
    /// A tree sampled from the experiment seed.
    Fresh(WindowConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum WalkTrees {
    /// Every group walks on one tree.
    Quenched { tree: TreeInput },
    /// Every group walks on its own fresh tree.
    Annealed { window: WindowConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub trees: WalkTrees,
    pub ns: Vec<u64>,
    /// Walks per group.
    pub replicas: usize,
    pub groups: usize,
    pub exit_radii: Vec<u32>,
    pub euclidean_radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "observable", rename_all = "lowercase")]
pub enum TailObservable {
    /// `M̂_n` normalized by `Ĝ(n)`.
    Lerw { n: u32, k: u32 },
    /// `|B_d(0, R)|` normalized by `ĝ(R)²`, one tree per sample.
    Ball { radius: u32, window: WindowConfig },
}

/// Where `Ĝ` comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    Table(ScalingTable),
    Pilot(GrowthConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailsConfig {
    pub observable: TailObservable,
    pub samples: usize,
    pub lambdas: Vec<f64>,
    pub normalizer: Normalizer,
    pub budget: f64,
}

/// One output file: `suffix` is appended to the output path (empty for the
/// main file).
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub suffix: &'static str,
    pub body: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub discard_rate: Option<f64>,
    pub valid: bool,
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn main(&self) -> &[u8] {
        &self.artifacts[0].body
    }
}

pub fn scale_count(n: usize, budget: f64) -> usize {
    ((n as f64 * budget).round() as usize).max(2)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn check_increasing<T: PartialOrd + Copy + std::fmt::Display>(what: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(invalid(format!("{what}: list is empty")));
    }
    if let Some(w) = v.windows(2).find(|w| w[0] >= w[1]) {
        return Err(invalid(format!("{what}: must be strictly increasing ({} then {})", w[0], w[1])));
    }
    Ok(())
}

fn check_budget(b: f64) -> Result<()> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("budget must be a positive number, got {b}")))
    }
}

impl ExperimentConfig {
    /// Schema checks that do not need to run anything.
    pub fn validate(&self) -> Result<()> {
        match &self.command {
            Command::SampleLerw { l, trunc_factor, .. } => {
                InfiniteLerwSampler::new(*l, *trunc_factor)?;
            }
            Command::SampleUst { window } => check_window(window)?,
            Command::BallVolume { radii, .. } | Command::Resistance { radii, .. } => check_increasing("R", radii)?,
            Command::Walk(w) => {
                check_increasing("n", &w.ns)?;
                if !w.exit_radii.is_empty() {
                    check_increasing("exit radii", &w.exit_radii)?;
                }
                if !w.euclidean_radii.is_empty() {
                    check_increasing("euclidean radii", &w.euclidean_radii)?;
                }
                if w.replicas < 2 || w.groups < 1 {
                    return Err(invalid("walk needs at least 2 replicas and 1 group"));
                }
                match &w.trees {
                    WalkTrees::Annealed { window } | WalkTrees::Quenched { tree: TreeInput::Fresh(window) } => {
                        check_window(window)?
                    }
                    WalkTrees::Quenched { .. } => {}
                }
            }
            Command::EstimateG { growth, budget } => {
                check_budget(*budget)?;
                check_increasing("n", &growth.ns)?;
                if growth.ns[0] < 1 {
                    return Err(invalid("n values must be at least 1"));
                }
            }
            Command::EstimateDims { budget, .. } => check_budget(*budget)?,
            Command::Tails(t) => {
                check_budget(t.budget)?;
                check_increasing("lambda", &t.lambdas)?;
                if t.samples < 1 {
                    return Err(invalid("tails need at least one sample"));
                }
                if let TailObservable::Ball { window, radius } = &t.observable {
                    check_window(window)?;
                    if radius > &window.r {
                        return Err(invalid(format!(
                            "ball radius {radius} exceeds the window radius {}; raise --r",
                            window.r
                        )));
                    }
                }
            }
            Command::OracleSelftest => {}
        }
        Ok(())
    }

    fn header_json(&self) -> String {
        serde_json::to_string(self).expect("configs serialize")
    }
}

fn check_window(w: &WindowConfig) -> Result<()> {
    if w.r < 1 || w.k < 4 {
        return Err(invalid(format!("need r >= 1 and K >= 4 (got r={}, K={})", w.r, w.k)));
    }
    Ok(())
}

/// CSV prefix: version, config echo, discard rate, validity and notes.
fn csv_header(cfg: &ExperimentConfig, discard_rate: Option<f64>, valid: bool, notes: &[String]) -> String {
    let mut s = format!("# ustlab {VERSION}\n# config: {}\n", cfg.header_json());
    if let Some(d) = discard_rate {
        s += &format!("# discard_rate: {d}\n");
    }
    s += &format!("# valid: {valid}\n");
    for n in notes {
        s += &format!("# note: {}\n", n.replace('\n', " "));
    }
    s
}

fn csv_artifact(
    suffix: &'static str,
    cfg: &ExperimentConfig,
    discard_rate: Option<f64>,
    valid: bool,
    notes: &[String],
    body: String,
) -> Artifact {
    Artifact {
        suffix,
        body: (csv_header(cfg, discard_rate, valid, notes) + &body).into_bytes(),
    }
}

/// Runs the experiment on the current rayon pool.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match &cfg.command {
        Command::SampleLerw { l, trunc_factor, samples } => sample_lerw(cfg, *l, *trunc_factor, *samples),
        Command::SampleUst { window } => {
            let tree = sample_ust_window(window, &mut RandomSource::derive(cfg.seed, &[UST_STREAM]))?;
            let mut body = Vec::new();
            tree.write_to(&mut body)?;
            Ok(Outcome {
                artifacts: vec![Artifact { suffix: "", body }],
                discard_rate: None,
                valid: true,
                notes: Vec::new(),
            })
        }
        Command::BallVolume { tree, radii } => ball_volume(cfg, &load_tree(tree)?, radii),
        Command::Resistance { tree, radii } => resistance(cfg, &load_tree(tree)?, radii),
        Command::Walk(w) => walk(cfg, w),
        Command::EstimateG { growth, .. } => growth_table(cfg, growth),
        Command::EstimateDims { dims, .. } => dimensions(cfg, dims),
        Command::Tails(t) => tails(cfg, t),
        Command::OracleSelftest => {
            let checks = oracle::selftest();
            let valid = checks.iter().all(|c| c.1);
            let mut body = String::from("check,pass\n");
            for (name, ok) in &checks {
                body += &format!("{name},{ok}\n");
            }
            let notes: Vec<String> = checks.iter().filter(|c| !c.1).map(|c| format!("{} failed", c.0)).collect();
            Ok(Outcome {
                artifacts: vec![csv_artifact("", cfg, None, valid, &notes, body)],
                discard_rate: None,
                valid,
                notes,
            })
        }
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

pub fn load_tree(path: &str) -> Result<TreeWindow> {
    TreeWindow::read_from(BufReader::new(File::open(path)?))
}

#[derive(Serialize)]
struct LerwRecord {
    seed_stream: u64,
    path: Vec<[i32; 2]>,
    raw_steps: u64,
}

fn sample_lerw(cfg: &ExperimentConfig, l: u32, trunc: u32, samples: usize) -> Result<Outcome> {
    InfiniteLerwSampler::new(l, trunc)?;
    let records: Vec<String> = (0..samples)
        .into_par_iter()
        .map_init(
            || InfiniteLerwSampler::new(l, trunc).expect("checked above"),
            |s, i| {
                let mut rng = RandomSource::derive(cfg.seed, &[LERW_STREAM, i as u64]);
                let stream = rng.stream();
                let sample = s.sample(&mut rng)?;
                let record = LerwRecord {
                    seed_stream: stream,
                    path: sample.path.vertices().iter().map(|p| [p.x, p.y]).collect(),
                    raw_steps: sample.raw_steps,
                };
                Ok(serde_json::to_string(&record).expect("records serialize"))
            },
        )
        .collect::<Result<_>>()?;
    let meta = json!({"ustlab": VERSION, "config": cfg, "valid": true});
    let mut body = meta.to_string() + "\n";
    for r in records {
        body += &r;
        body.push('\n');
    }
    Ok(Outcome {
        artifacts: vec![Artifact {
            suffix: "",
            body: body.into_bytes(),
        }],
        discard_rate: None,
        valid: true,
        notes: Vec::new(),
    })
}

fn ball_volume(cfg: &ExperimentConfig, tree: &TreeWindow, radii: &[u32]) -> Result<Outcome> {
    let seed = tree.header().seed;
    let mut body = String::from("seed,R,volume,truncated\n");
    let mut notes = Vec::new();
    for &r in radii {
        let ball = intrinsic_ball(tree, Point::ORIGIN, r)?;
        if ball.truncated {
            notes.push(format!("ball at R={r} reaches the window edge; its volume is a lower bound"));
        }
        body += &format!("{seed},{r},{},{}\n", ball.volume, ball.truncated);
    }
    let valid = notes.is_empty();
    Ok(Outcome {
        artifacts: vec![csv_artifact("", cfg, None, valid, &notes, body)],
        discard_rate: None,
        valid,
        notes,
    })
}

fn resistance(cfg: &ExperimentConfig, tree: &TreeWindow, radii: &[u32]) -> Result<Outcome> {
    let seed = tree.header().seed;
    let mut body = String::from("seed,R,reff\n");
    let mut notes = Vec::new();
    for &r in radii {
        let value = match resistance_to_ball_complement(tree, r) {
            Ok(q) => q.value,
            Err(e @ Error::WindowTooSmall { .. }) => {
                notes.push(e.to_string());
                f64::NAN
            }
            Err(e) => return Err(e),
        };
        body += &format!("{seed},{r},{value}\n");
    }
    let valid = notes.is_empty();
    Ok(Outcome {
        artifacts: vec![csv_artifact("", cfg, None, valid, &notes, body)],
        discard_rate: None,
        valid,
        notes,
    })
}

fn walk(cfg: &ExperimentConfig, w: &WalkConfig) -> Result<Outcome> {
    let fixed;
    let ens = match &w.trees {
        WalkTrees::Annealed { window } => Ensemble::Annealed {
            config: *window,
            trees: w.groups,
        },
        WalkTrees::Quenched { tree } => {
            fixed = match tree {
                TreeInput::File(p) => load_tree(p)?,
                TreeInput::Fresh(window) => {
                    sample_ust_window(window, &mut RandomSource::derive(cfg.seed, &[WALK_TREE_STREAM]))?
                }
            };
            Ensemble::Quenched {
                tree: &fixed,
                batches: w.groups,
            }
        }
    };
    // p̃_n(0,0) = p_m(0,0) with m the even one of n, n + 1
    let even = |n: u64| n + n % 2;
    let mut ret_times: Vec<u64> = w.ns.iter().map(|&n| even(n)).collect();
    ret_times.dedup();
    let base = RandomSource::derive(cfg.seed, &[WALK_STREAM]).next_u64();
    let groups = ens.map_groups(base, |_, arena, r| {
        let walk = group_walk_stats(arena, &ret_times, &w.ns, w.replicas, r);
        let exit = if w.exit_radii.is_empty() && w.euclidean_radii.is_empty() {
            GroupExitStats {
                walks: 0,
                discarded: 0,
                intrinsic: Vec::new(),
                euclidean: Vec::new(),
            }
        } else {
            group_exit_stats(arena, &w.exit_radii, &w.euclidean_radii, w.replicas, r)
        };
        (walk, exit)
    })?;
    let walks: Vec<_> = groups.iter().map(|g| g.0.clone()).collect();
    let exits: Vec<_> = groups.iter().map(|g| g.1.clone()).collect();
    let ret = return_report(&ret_times, &walks);
    let disp = displacement_report(&w.ns, &walks);
    let ex = exit_report(&w.exit_radii, &w.euclidean_radii, &exits);
    let (total, discarded) = groups.iter().fold((0, 0), |(t, d), (a, b)| {
        (t + a.walks + b.walks, d + a.discarded + b.discarded)
    });
    let rate = if total == 0 { 0.0 } else { discarded as f64 / total as f64 };

    let mut body = String::from("n,stat,value,stderr,discard_rate\n");
    for (k, &n) in w.ns.iter().enumerate() {
        let e = &ret.estimates[ret_times.binary_search(&even(n)).unwrap()];
        let d = &disp.rows[k];
        for (stat, (v, se)) in [
            ("p_tilde", (e.p_tilde, e.stderr)),
            ("dist", d.dist),
            ("max_dist", d.max_dist),
            ("range", d.range),
        ] {
            body += &format!("{n},{stat},{v},{se},{rate}\n");
        }
    }
    for row in &ex.rows {
        let stat = match row.kind {
            ExitKind::Intrinsic => "tau",
            ExitKind::Euclidean => "tau_euclidean",
        };
        body += &format!("{},{stat},{},{},{rate}\n", row.radius, row.mean, row.stderr);
    }
    let mut notes = Vec::new();
    if rate > MAX_DISCARD_RATE {
        notes.push(format!("discard rate {rate} exceeds {MAX_DISCARD_RATE}; enlarge the tree window"));
    }
    let valid = notes.is_empty();
    Ok(Outcome {
        artifacts: vec![csv_artifact("", cfg, Some(rate), valid, &notes, body)],
        discard_rate: Some(rate),
        valid,
        notes,
    })
}

fn table_csv(t: &ScalingTable) -> String {
    let mut v = Vec::new();
    t.write_csv(&mut v).expect("writing to memory");
    String::from_utf8(v).expect("utf-8")
}

fn growth_table(cfg: &ExperimentConfig, g: &GrowthConfig) -> Result<Outcome> {
    let table = estimate_g(&g.ns, g.samples, g.k, &mut RandomSource::derive(cfg.seed, &[GROWTH_STREAM]))?;
    let mut notes = Vec::new();
    let mut info = Vec::new();
    let in_range = table.rows.iter().filter(|r| r.n >= g.fit_nmin).count();
    let fit = if in_range < MIN_FIT_ROWS {
        info.push(format!(
            "fit skipped: {in_range} rows with n >= {}, at least {MIN_FIT_ROWS} are needed",
            g.fit_nmin
        ));
        format!("{}\n", ExponentFit::CSV_HEADER)
    } else {
        match fit_exponent(&table, (g.fit_nmin, u64::MAX)) {
            Ok(f) => format!("{}\n{}\n", ExponentFit::CSV_HEADER, f.csv_row()),
            Err(e) => {
                notes.push(format!("growth fit: {e}"));
                format!("{}\n", ExponentFit::CSV_HEADER)
            }
        }
    };
    let valid = notes.is_empty();
    info.extend(notes.iter().cloned());
    Ok(Outcome {
        artifacts: vec![
            csv_artifact("", cfg, None, valid, &info, table_csv(&table)),
            csv_artifact(".fit.csv", cfg, None, valid, &info, fit),
        ],
        discard_rate: None,
        valid,
        notes,
    })
}

fn named_estimates(r: &DimensionReport) -> Vec<(&'static str, &Estimate)> {
    let mut v = Vec::new();
    if let Some(g) = &r.growth {
        v.push(("growth", g));
    }
    v.extend([
        ("volume", &r.volume),
        ("exit", &r.exit),
        ("euclidean_exit", &r.euclidean_exit),
        ("return", &r.return_probability),
        ("displacement", &r.displacement),
        ("max_displacement", &r.max_displacement),
        ("range", &r.range),
    ]);
    v
}

fn tail_rows_csv(observable: &str, rows: &[TailRow], out: &mut String) {
    for t in rows {
        *out += &format!("{observable},{},{},{},{}\n", t.lambda, t.p, t.lo, t.hi);
    }
}

fn dimensions(cfg: &ExperimentConfig, dims: &DimensionsConfig) -> Result<Outcome> {
    let report = estimate_dimensions(dims, &mut RandomSource::derive(cfg.seed, &[DIMS_STREAM]))?;
    let named = named_estimates(&report);
    let mut fits = format!("quantity,{}\n", ExponentFit::CSV_HEADER);
    let mut tables = String::from("quantity,n,mean,stderr,samples\n");
    for (name, e) in &named {
        if let Some(f) = &e.fit {
            fits += &format!("{name},{}\n", f.csv_row());
        }
        for r in &e.table.rows {
            tables += &format!("{name},{},{},{},{}\n", r.n, r.mean, r.stderr, r.samples);
        }
    }
    let (rate, valid, notes) = (report.discard_rate, report.valid, report.notes.clone());
    let pair = |v: Option<(f64, f64)>| v.map(|(a, b)| json!({"value": a, "stderr": b}));
    let summary = json!({
        "ustlab": VERSION,
        "config": cfg,
        "dimensions": {
            "growth_exponent": pair(report.growth_exponent()),
            "d_f": pair(report.d_f()),
            "d_w": pair(report.d_w()),
            "d_s": pair(report.d_s()),
            "max_displacement_exponent": pair(report.max_displacement_exponent()),
            "range_exponent": pair(report.range_exponent()),
            "euclidean_exit_exponent": pair(report.euclidean_exit_exponent()),
        },
        "report": report,
    });
    let mut artifacts = vec![
        csv_artifact("", cfg, Some(rate), valid, &notes, fits),
        csv_artifact(".tables.csv", cfg, Some(rate), valid, &notes, tables),
    ];
    if let Some(t) = &report.tails {
        let mut body = String::from("observable,lambda,p,lo,hi\n");
        tail_rows_csv("lerw", &t.lerw, &mut body);
        tail_rows_csv("ball", &t.ball, &mut body);
        artifacts.push(csv_artifact(".tails.csv", cfg, Some(rate), valid, &notes, body));
    }
    artifacts.push(Artifact {
        suffix: ".report.json",
        body: (summary.to_string() + "\n").into_bytes(),
    });
    Ok(Outcome {
        artifacts,
        discard_rate: Some(rate),
        valid,
        notes,
    })
}

fn tails(cfg: &ExperimentConfig, t: &TailsConfig) -> Result<Outcome> {
    let table = match &t.normalizer {
        Normalizer::Table(table) => table.clone(),
        Normalizer::Pilot(g) => estimate_g(&g.ns, g.samples, g.k, &mut RandomSource::derive(cfg.seed, &[PILOT_STREAM]))?,
    };
    let scaling = build_scaling_set(&table)?;
    let base = RandomSource::derive(cfg.seed, &[TAIL_STREAM]).next_u64();
    let mut notes = Vec::new();
    let (samples, normalizer, rate) = match &t.observable {
        TailObservable::Lerw { n, k } => (lerw_length_samples(*n, t.samples, *k, base)?, scaling.g_big(*n as f64), None),
        TailObservable::Ball { radius, window } => {
            let ens = Ensemble::Annealed {
                config: *window,
                trees: t.samples,
            };
            let vols = ens.map_groups(base, |_, arena, _| arena.ball_volumes(&[*radius])[0])?;
            let kept: Vec<f64> = vols.iter().flatten().map(|&v| v as f64).collect();
            let rate = 1.0 - kept.len() as f64 / vols.len() as f64;
            if rate > MAX_DISCARD_RATE {
                notes.push(format!("{:.4} of the balls reach the window edge; raise --r", rate));
            }
            if kept.is_empty() {
                return Err(Error::WindowTooSmall {
                    center: Point::ORIGIN,
                    radius: *radius,
                });
            }
            (kept, scaling.g(*radius as f64).powi(2), Some(rate))
        }
    };
    let rows = empirical_tail(&samples, normalizer, &t.lambdas)?;
    let decays = decays_geometrically(&rows, TAIL_RATIO);
    let valid = notes.is_empty();
    let mut header_notes = vec![format!("normalizer {normalizer}"), format!("geometric decay {decays}")];
    header_notes.extend(notes.iter().cloned());
    let mut body = String::from("lambda,p,lo,hi\n");
    for r in &rows {
        body += &format!("{},{},{},{}\n", r.lambda, r.p, r.lo, r.hi);
    }
    Ok(Outcome {
        artifacts: vec![csv_artifact("", cfg, rate, valid, &header_notes, body)],
        discard_rate: rate,
        valid,
        notes,
    })
}

/// `path` with `suffix` appended to its file name.
pub fn artifact_path(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| invalid(format!("output path {} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let res = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(res?)
}

/// Writes every artifact next to `out`, then the `<out>.run.json` sidecar
/// with timing and pool size.
pub fn write_outcome(out: &Path, cfg: &ExperimentConfig, outcome: &Outcome, workers: usize, wall: f64) -> Result<()> {
    for a in &outcome.artifacts {
        write_atomic(&artifact_path(out, a.suffix), &a.body)?;
    }
    let run = json!({
        "ustlab": VERSION,
        "config": cfg,
        "workers": workers,
        "wall_time_s": wall,
        "discard_rate": outcome.discard_rate,
        "valid": outcome.valid,
        "notes": outcome.notes,
    });
    write_atomic(&artifact_path(out, ".run.json"), (run.to_string() + "\n").as_bytes())
}

/// Runs on `workers` threads and writes the outputs; returns the outcome
/// and the wall time in seconds.
pub fn execute(cfg: &ExperimentConfig, workers: usize, out: Option<&Path>) -> Result<(Outcome, f64)> {
    let start = Instant::now();
    let outcome = with_workers(workers, || run(cfg))??;
    let wall = start.elapsed().as_secs_f64();
    if let Some(out) = out {
        write_outcome(out, cfg, &outcome, workers, wall)?;
    }
    Ok((outcome, wall))
}

/// Recovers the config embedded in an output file.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.starts_with("ust-window ") {
        let tree = TreeWindow::read_from(BufReader::new(File::open(path)?))?;
        let h = tree.header();
        let window = match h.method {
            crate::ust::TreeMethod::Wired => WindowConfig::wired(h.r, h.k),
            crate::ust::TreeMethod::Spine => WindowConfig::spine(h.r, h.k),
            crate::ust::TreeMethod::Finite => {
                return Err(parse_err(1, "finite trees are not produced by an experiment".into()))
            }
        };
        return Ok(ExperimentConfig {
            seed: h.seed,
            command: Command::SampleUst { window },
        });
    }
    if first.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        let c = v.get("config").ok_or_else(|| parse_err(1, "no config in metadata record".into()))?;
        return serde_json::from_value(c.clone()).map_err(|e| parse_err(1, e.to_string()));
    }
    let mut line = first;
    let mut no = 1;
    loop {
        if let Some(c) = line.strip_prefix("# config: ") {
            return serde_json::from_str(c.trim_end()).map_err(|e| parse_err(no, e.to_string()));
        }
        if !line.starts_with('#') {
            return Err(parse_err(no, "no \"# config:\" line in the header".into()));
        }
        line.clear();
        no += 1;
        if reader.read_line(&mut line)? == 0 {
            return Err(parse_err(no, "no \"# config:\" line in the header".into()));
        }
    }
}

/// Reads a scaling table in `n,mean,stderr,samples` form, skipping `#`
/// comment lines.
pub fn read_scaling_table<R: BufRead>(r: R, kind: &str) -> Result<ScalingTable> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if !seen_header {
            if t != "n,mean,stderr,samples" {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected header n,mean,stderr,samples, got {t:?}"),
                });
            }
            seen_header = true;
            continue;
        }
        let bad = || Error::Parse {
            line: i + 1,
            msg: format!("expected \"n,mean,stderr,samples\" values, got {t:?}"),
        };
        let f: Vec<&str> = t.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        rows.push(ScalingRow {
            n: f[0].parse().map_err(|_| bad())?,
            mean: f[1].parse().map_err(|_| bad())?,
            stderr: f[2].parse().map_err(|_| bad())?,
            samples: f[3].parse().map_err(|_| bad())?,
        });
    }
    ScalingTable::new(kind, rows)
}
