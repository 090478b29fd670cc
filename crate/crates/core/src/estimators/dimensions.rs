//! The consolidated dimension pipeline: growth exponent, volume growth, walk
//! dimension, spectral dimension, displacement and range, and tail shapes.

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::treewalk::{
    group_exit_stats, group_walk_stats, Ensemble, GroupExitStats, GroupWalkStats, MAX_DISCARD_RATE,
};
use crate::ust::{Fill, TreeWindow, WindowConfig};

use super::{
    build_scaling_set, decays_geometrically, empirical_tail, estimate_g, fit_exponent, lerw_length_samples,
    ExponentFit, ScalingFunctionSet, ScalingTable, TailRow, DEFAULT_FIT_NMIN,
};

/// Successive tail cells must shrink by at least this factor.
pub const TAIL_RATIO: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Pilot,
    Desk,
    Overnight,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pilot" => Ok(Preset::Pilot),
            "desk" => Ok(Preset::Desk),
            "overnight" => Ok(Preset::Overnight),
            _ => Err(Error::InvalidArgument(format!("unknown preset {s:?} (pilot, desk, overnight)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeSource {
    /// A fresh windowed UST per group.
    Ust(WindowConfig),
    /// The segment `[-m, m] x {0}`, one fixed tree.
    Segment { half_length: u32 },
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GrowthConfig {
    pub ns: Vec<u64>,
    pub samples: usize,
    pub k: u32,
    /// Smallest `n` in the growth fit.
    pub fit_nmin: u64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TailConfig {
    /// Scale of the `M̂_n` tail.
    pub n: u32,
    pub samples: usize,
    /// Radius of the `|B_d(0, R)|` tail, drawn from the tree ensemble.
    pub ball_radius: u32,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DimensionsConfig {
    pub growth: Option<GrowthConfig>,
    pub trees: TreeSource,
    /// Trees (annealed) or walk batches on the fixed tree.
    pub groups: usize,
    pub ball_radii: Vec<u32>,
    pub exit_radii: Vec<u32>,
    pub euclidean_radii: Vec<f64>,
    pub exit_walks: usize,
    /// Even times `2n` at which `p̃_{2n}(0,0)` is estimated.
    pub return_times: Vec<u64>,
    /// Times at which `d(0, X_n)`, `Y_n` and `|W_n|` are recorded.
    pub walk_times: Vec<u64>,
    pub walks: usize,
    pub tail: Option<TailConfig>,
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<u64> {
    (lo..=hi).map(|k| 1u64 << k).collect()
}

impl DimensionsConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Pilot => DimensionsConfig {
                growth: Some(GrowthConfig {
                    ns: powers_of_two(2, 6),
                    samples: 300,
                    k: 4,
                    fit_nmin: 4,
                }),
                trees: TreeSource::Ust(WindowConfig::wired(64, 4).with_fill(Fill::Window)),
                groups: 40,
                ball_radii: vec![4, 8, 16, 32, 64],
                exit_radii: vec![2, 4, 8, 16],
                euclidean_radii: vec![],
                exit_walks: 20,
                return_times: powers_of_two(4, 10),
                walk_times: powers_of_two(4, 10),
                walks: 50,
                tail: Some(TailConfig {
                    n: 32,
                    samples: 500,
                    ball_radius: 16,
                    lambdas: vec![1.0, 2.0, 4.0, 8.0],
                }),
            },
            Preset::Desk => DimensionsConfig {
                growth: Some(GrowthConfig {
                    ns: powers_of_two(4, 9),
                    samples: 3000,
                    k: 4,
                    fit_nmin: DEFAULT_FIT_NMIN,
                }),
                trees: TreeSource::Ust(WindowConfig::wired(256, 4).with_fill(Fill::Window)),
                groups: 400,
                ball_radii: vec![16, 32, 64, 128, 256],
                exit_radii: vec![8, 16, 32, 64],
                euclidean_radii: vec![],
                exit_walks: 50,
                return_times: powers_of_two(6, 13),
                walk_times: powers_of_two(6, 13),
                walks: 200,
                tail: Some(TailConfig {
                    n: 128,
                    samples: 4000,
                    ball_radius: 64,
                    lambdas: vec![1.0, 2.0, 4.0, 8.0],
                }),
            },
            Preset::Overnight => DimensionsConfig {
                growth: Some(GrowthConfig {
                    ns: powers_of_two(4, 10),
                    samples: 20_000,
                    k: 4,
                    fit_nmin: DEFAULT_FIT_NMIN,
                }),
                trees: TreeSource::Ust(WindowConfig::wired(512, 4).with_fill(Fill::Window)),
                groups: 2000,
                ball_radii: vec![16, 32, 64, 128, 256, 512],
                exit_radii: vec![8, 16, 32, 64, 128],
                euclidean_radii: vec![],
                exit_walks: 100,
                return_times: powers_of_two(6, 15),
                walk_times: powers_of_two(6, 15),
                walks: 500,
                tail: Some(TailConfig {
                    n: 256,
                    samples: 20_000,
                    ball_radius: 128,
                    lambdas: vec![1.0, 2.0, 4.0, 8.0],
                }),
            },
        }
    }

    /// Classical one-dimensional run on a long segment.
    pub fn segment() -> Self {
        DimensionsConfig {
            growth: None,
            trees: TreeSource::Segment { half_length: 4000 },
            groups: 50,
            ball_radii: vec![16, 32, 64, 128, 256],
            exit_radii: vec![8, 16, 32, 64],
            euclidean_radii: vec![16.0, 32.0, 64.0, 128.0],
            exit_walks: 100,
            return_times: powers_of_two(6, 13),
            walk_times: powers_of_two(6, 13),
            walks: 200,
            tail: None,
        }
    }

    /// Multiplies every sample count by `factor` (at least 2 remain).
    pub fn scaled(mut self, factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(2);
        if let Some(g) = &mut self.growth {
            g.samples = s(g.samples);
        }
        self.groups = s(self.groups);
        self.exit_walks = s(self.exit_walks);
        self.walks = s(self.walks);
        if let Some(t) = &mut self.tail {
            t.samples = s(t.samples);
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct TailSummary {
    pub lerw_n: u32,
    pub lerw_normalizer: f64,
    pub lerw: Vec<TailRow>,
    pub lerw_decays: bool,
    pub ball_radius: u32,
    pub ball_normalizer: f64,
    pub ball: Vec<TailRow>,
    pub ball_decays: bool,
}

/// A fitted exponent with the table it came from.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub table: ScalingTable,
    pub fit: Option<ExponentFit>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DimensionReport {
    pub growth: Option<Estimate>,
    pub scaling: Option<ScalingFunctionSet>,
    pub volume: Estimate,
    /// Fraction of groups whose ball at each radius reached the window edge.
    pub truncated_fraction: Vec<f64>,
    pub exit: Estimate,
    pub euclidean_exit: Estimate,
    pub return_probability: Estimate,
    pub displacement: Estimate,
    pub max_displacement: Estimate,
    pub range: Estimate,
    pub tails: Option<TailSummary>,
    pub discard_rate: f64,
    pub valid: bool,
    pub notes: Vec<String>,
}

impl DimensionReport {
    fn slope(e: &Estimate) -> Option<(f64, f64)> {
        e.fit.map(|f| (f.slope, f.stderr_slope))
    }

    pub fn growth_exponent(&self) -> Option<(f64, f64)> {
        self.growth.as_ref().and_then(Self::slope)
    }

    pub fn d_f(&self) -> Option<(f64, f64)> {
        Self::slope(&self.volume)
    }

    pub fn d_w(&self) -> Option<(f64, f64)> {
        Self::slope(&self.exit)
    }

    /// `-2` times the slope of `log p̃_{2n}(0,0)` against `log 2n`.
    pub fn d_s(&self) -> Option<(f64, f64)> {
        Self::slope(&self.return_probability).map(|(s, e)| (-2.0 * s, 2.0 * e))
    }

    pub fn max_displacement_exponent(&self) -> Option<(f64, f64)> {
        Self::slope(&self.max_displacement)
    }

    pub fn range_exponent(&self) -> Option<(f64, f64)> {
        Self::slope(&self.range)
    }

    pub fn euclidean_exit_exponent(&self) -> Option<(f64, f64)> {
        Self::slope(&self.euclidean_exit)
    }
}

struct GroupRecord {
    volumes: Vec<Option<usize>>,
    walk: GroupWalkStats,
    exit: GroupExitStats,
}

/// Builds a table from per-group values (NaN or missing entries skipped),
/// dropping rows with fewer than two values.
fn table_from_groups(kind: &str, ns: &[u64], values: impl Fn(usize) -> Vec<f64>, notes: &mut Vec<String>) -> ScalingTable {
    let mut rows = Vec::new();
    for (k, &n) in ns.iter().enumerate() {
        let v: Vec<f64> = values(k).into_iter().filter(|x| x.is_finite()).collect();
        if v.len() < 2 {
            notes.push(format!("{kind}: row {n} has {} usable groups and is dropped", v.len()));
            continue;
        }
        rows.push(ScalingTable::row(n, &v));
    }
    ScalingTable { kind: kind.into(), rows }
}

fn fit_all(table: ScalingTable, lo: u64, notes: &mut Vec<String>) -> Estimate {
    let fit = match fit_exponent(&table, (lo, u64::MAX)) {
        Ok(f) => Some(f),
        Err(e) => {
            if !table.rows.is_empty() || lo > 0 {
                notes.push(format!("{}: {e}", table.kind));
            }
            None
        }
    };
    Estimate { table, fit }
}

const GROWTH_STREAM: u64 = 1;
const TREE_STREAM: u64 = 2;
const TAIL_STREAM: u64 = 3;

/// Runs the whole pipeline and collects one report. Every group's tree is
/// used for the ball volumes, the exit-time walks and the long walks, so
/// all tree statistics are annealed over the same ensemble.
pub fn estimate_dimensions(cfg: &DimensionsConfig, rng: &mut RandomSource) -> Result<DimensionReport> {
    if cfg.return_times.iter().any(|t| t % 2 == 1) {
        return Err(Error::InvalidArgument("return times must be even".into()));
    }
    let sorted = |v: &[u64]| v.windows(2).all(|w| w[0] < w[1]);
    let radii_u64 = |v: &[u32]| v.iter().map(|&r| r as u64).collect::<Vec<_>>();
    if !sorted(&radii_u64(&cfg.ball_radii))
        || !sorted(&radii_u64(&cfg.exit_radii))
        || !sorted(&cfg.return_times)
        || !sorted(&cfg.walk_times)
        || cfg.euclidean_radii.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidArgument("radius and time lists must be strictly increasing".into()));
    }
    let base = rng.next_u64();
    let mut notes = Vec::new();

    let growth = match &cfg.growth {
        Some(g) => {
            let table = estimate_g(&g.ns, g.samples, g.k, &mut RandomSource::derive(base, &[GROWTH_STREAM]))?;
            Some(fit_all(table, g.fit_nmin, &mut notes))
        }
        None => None,
    };
    let scaling = match &growth {
        Some(e) => match build_scaling_set(&e.table) {
            Ok(s) => Some(s),
            Err(err) => {
                notes.push(format!("scaling functions: {err}"));
                None
            }
        },
        None => None,
    };

    let segment;
    let ens = match cfg.trees {
        TreeSource::Ust(config) => Ensemble::Annealed {
            config,
            trees: cfg.groups,
        },
        TreeSource::Segment { half_length } => {
            segment = TreeWindow::segment(half_length as i32);
            Ensemble::Quenched {
                tree: &segment,
                batches: cfg.groups,
            }
        }
    };
    let tree_base = RandomSource::derive(base, &[TREE_STREAM]).next_u64();
    let records: Vec<GroupRecord> = ens.map_groups(tree_base, |_, arena, r| GroupRecord {
        volumes: arena.ball_volumes(&cfg.ball_radii),
        exit: group_exit_stats(arena, &cfg.exit_radii, &cfg.euclidean_radii, cfg.exit_walks, r),
        walk: group_walk_stats(arena, &cfg.return_times, &cfg.walk_times, cfg.walks, r),
    })?;

    let g = records.len().max(1) as f64;
    let truncated_fraction = (0..cfg.ball_radii.len())
        .map(|k| records.iter().filter(|rec| rec.volumes[k].is_none()).count() as f64 / g)
        .collect();
    let volume = table_from_groups(
        "ball volume",
        &radii_u64(&cfg.ball_radii),
        |k| records.iter().filter_map(|rec| rec.volumes[k].map(|v| v as f64)).collect(),
        &mut notes,
    );
    let exit = table_from_groups(
        "intrinsic exit time",
        &radii_u64(&cfg.exit_radii),
        |k| records.iter().map(|rec| rec.exit.intrinsic[k]).collect(),
        &mut notes,
    );
    let euc_ns: Vec<u64> = cfg.euclidean_radii.iter().map(|r| r.round() as u64).collect();
    let euclidean_exit = table_from_groups(
        "euclidean exit time",
        &euc_ns,
        |k| records.iter().map(|rec| rec.exit.euclidean[k]).collect(),
        &mut notes,
    );
    let ret = table_from_groups(
        "return probability",
        &cfg.return_times,
        |k| records.iter().map(|rec| rec.walk.ret[k]).collect(),
        &mut notes,
    );
    let col = |f: fn(&GroupWalkStats) -> &Vec<f64>, k: usize| records.iter().map(|rec| f(&rec.walk)[k]).collect();
    let dist = table_from_groups("displacement", &cfg.walk_times, |k| col(|w| &w.dist, k), &mut notes);
    let ymax = table_from_groups("max displacement", &cfg.walk_times, |k| col(|w| &w.max_dist, k), &mut notes);
    let range = table_from_groups("range", &cfg.walk_times, |k| col(|w| &w.range, k), &mut notes);

    let walks: usize = records.iter().map(|r| r.walk.walks + r.exit.walks).sum();
    let discarded: usize = records.iter().map(|r| r.walk.discarded + r.exit.discarded).sum();
    let discard_rate = if walks == 0 { 0.0 } else { discarded as f64 / walks as f64 };

    let tails = match (&cfg.tail, &scaling, &cfg.growth) {
        (Some(t), Some(s), Some(gc)) => {
            let tail_base = RandomSource::derive(base, &[TAIL_STREAM]).next_u64();
            let lengths = lerw_length_samples(t.n, t.samples, gc.k, tail_base)?;
            let lerw_normalizer = s.g_big(t.n as f64);
            let lerw = empirical_tail(&lengths, lerw_normalizer, &t.lambdas)?;
            let ball_normalizer = s.g(t.ball_radius as f64).powi(2);
            let arena_volumes: Vec<f64> = match cfg.ball_radii.iter().position(|&r| r == t.ball_radius) {
                Some(k) => records.iter().filter_map(|rec| rec.volumes[k].map(|v| v as f64)).collect(),
                None => {
                    notes.push(format!("tail radius {} is not among the ball radii", t.ball_radius));
                    Vec::new()
                }
            };
            let ball = if arena_volumes.is_empty() {
                Vec::new()
            } else {
                empirical_tail(&arena_volumes, ball_normalizer, &t.lambdas)?
            };
            Some(TailSummary {
                lerw_n: t.n,
                lerw_normalizer,
                lerw_decays: decays_geometrically(&lerw, TAIL_RATIO),
                lerw,
                ball_radius: t.ball_radius,
                ball_normalizer,
                ball_decays: !ball.is_empty() && decays_geometrically(&ball, TAIL_RATIO),
                ball,
            })
        }
        (Some(_), _, _) => {
            notes.push("tails need a growth table".into());
            None
        }
        _ => None,
    };

    let mut report = DimensionReport {
        growth,
        scaling,
        volume: fit_all(volume, 0, &mut notes),
        truncated_fraction,
        exit: fit_all(exit, 0, &mut notes),
        euclidean_exit: fit_all(euclidean_exit, 0, &mut notes),
        return_probability: fit_all(ret, 0, &mut notes),
        displacement: fit_all(dist, 1, &mut notes),
        max_displacement: fit_all(ymax, 1, &mut notes),
        range: fit_all(range, 1, &mut notes),
        tails,
        discard_rate,
        valid: false,
        notes,
    };
    if discard_rate > MAX_DISCARD_RATE {
        report
            .notes
            .push(format!("discard rate {discard_rate:.4} exceeds {MAX_DISCARD_RATE}"));
    }
    report.valid = discard_rate <= MAX_DISCARD_RATE && report.notes.is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_pipeline_gives_classical_values() {
        let r = estimate_dimensions(&DimensionsConfig::segment(), &mut RandomSource::new(1, 0)).unwrap();
        assert!(r.valid, "{:?}", r.notes);
        let (df, _) = r.d_f().unwrap();
        assert!((df - 1.0).abs() < 0.05, "{df}");
        let (ds, _) = r.d_s().unwrap();
        assert!((ds - 1.0).abs() < 0.1, "{ds}");
        let (dw, _) = r.euclidean_exit_exponent().unwrap();
        assert!((dw - 2.0).abs() < 0.1, "{dw}");
        assert!(r.growth.is_none() && r.tails.is_none());
    }

    #[test]
    fn pilot_runs_and_repeats() {
        let cfg = DimensionsConfig::preset(Preset::Pilot).scaled(0.25);
        let a = estimate_dimensions(&cfg, &mut RandomSource::new(2, 0)).unwrap();
        let b = estimate_dimensions(&cfg, &mut RandomSource::new(2, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.growth_exponent().is_some());
        assert!(a.d_f().is_some() && a.d_w().is_some() && a.d_s().is_some());
        let t = a.tails.as_ref().unwrap();
        assert_eq!(t.lerw.len(), 4);
    }

    #[test]
    fn scaling_and_parse() {
        let c = DimensionsConfig::preset(Preset::Desk).scaled(0.5);
        assert_eq!(c.walks, 100);
        assert_eq!(c.growth.unwrap().samples, 1500);
        assert_eq!("desk".parse::<Preset>().unwrap(), Preset::Desk);
        assert!("huge".parse::<Preset>().is_err());
    }
}
