//! Scaling tables, power-law fits, the scaling-function set built from the
//! growth function, and empirical tail curves.

mod dimensions;
mod scaling;

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::treewalk::mean_stderr;
use crate::walker::InfiniteLerwSampler;

pub use dimensions::{
    estimate_dimensions, DimensionReport, DimensionsConfig, Estimate, GrowthConfig, Preset, TailConfig, TailSummary,
    TreeSource, TAIL_RATIO,
};
pub use scaling::{build_scaling_set, isotonic_increasing, LogPiecewise, ScalingFunctionSet};

/// Fewest rows a power-law fit accepts.
pub const MIN_FIT_ROWS: usize = 4;

/// Default lower end of fit windows.
pub const DEFAULT_FIT_NMIN: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalingRow {
    pub n: u64,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Means of an observable indexed by a scale parameter.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalingTable {
    pub kind: String,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn new(kind: impl Into<String>, rows: Vec<ScalingRow>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.samples < 2) {
            return Err(Error::InvalidArgument(format!(
                "row n={} has {} samples; at least 2 are needed",
                r.n, r.samples
            )));
        }
        Ok(ScalingTable { kind: kind.into(), rows })
    }

    /// A row from raw samples: mean and `sd / sqrt(samples)`.
    pub fn row(n: u64, samples: &[f64]) -> ScalingRow {
        let (mean, stderr) = mean_stderr(samples);
        ScalingRow {
            n,
            mean,
            stderr,
            samples: samples.len(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,mean,stderr,samples")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.n, r.mean, r.stderr, r.samples)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub fit_range: (u64, u64),
    pub r_squared: f64,
}

impl ExponentFit {
    pub const CSV_HEADER: &'static str = "slope,stderr,intercept,nmin,nmax,r2";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.slope, self.stderr_slope, self.intercept, self.fit_range.0, self.fit_range.1, self.r_squared
        )
    }
}

/// Least-squares line through `(x, y)` with weights `w`. Returns slope,
/// intercept, slope variance assuming unit-variance weighted residuals, the
/// weighted residual sum of squares, and the weighted R².
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let syy: f64 = y.iter().zip(w).map(|(c, b)| b * (c - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    (slope, intercept, 1.0 / sxx, rss, r2)
}

/// Fits `log mean = intercept + slope log n` on rows with `n` in `range`
/// (inclusive), weighting each point by `1 / σ²` where `σ = stderr / mean`
/// is the standard error of `log mean`.
///
/// The slope's standard error is inflated by the square root of the reduced
/// chi-square when that exceeds one. If any row in range has a zero or
/// non-finite standard error, all weights are one and the standard error
/// comes from the residual scatter.
pub fn fit_exponent(table: &ScalingTable, range: (u64, u64)) -> Result<ExponentFit> {
    let rows: Vec<&ScalingRow> = table
        .rows
        .iter()
        .filter(|r| r.n >= range.0 && r.n <= range.1)
        .collect();
    if rows.len() < MIN_FIT_ROWS {
        return Err(Error::Fit(format!(
            "{} rows in [{}, {}]; at least {MIN_FIT_ROWS} are needed",
            rows.len(),
            range.0,
            range.1
        )));
    }
    if let Some(r) = rows.iter().find(|r| !(r.mean > 0.0) || !r.mean.is_finite() || r.n == 0) {
        return Err(Error::Fit(format!("row n={} has non-positive mean {}", r.n, r.mean)));
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    if x.iter().all(|v| *v == x[0]) {
        return Err(Error::Fit("all rows share one n".into()));
    }
    let y: Vec<f64> = rows.iter().map(|r| r.mean.ln()).collect();
    let sig: Vec<f64> = rows.iter().map(|r| r.stderr / r.mean).collect();
    let weighted = sig.iter().all(|s| s.is_finite() && *s > 0.0);
    let w: Vec<f64> = if weighted {
        sig.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; x.len()]
    };
    let (slope, intercept, var, rss, r2) = weighted_line(&x, &y, &w);
    let dof = (x.len() - 2) as f64;
    let stderr_slope = if weighted {
        (var * (rss / dof).max(1.0)).sqrt()
    } else {
        (var * rss / dof).sqrt()
    };
    Ok(ExponentFit {
        slope,
        intercept,
        stderr_slope,
        fit_range: (rows[0].n, rows[rows.len() - 1].n),
        r_squared: r2,
    })
}

/// `M̂_n` for `samples` independent infinite-LERW samples truncated at
/// `K n`, replica `i` drawn from stream `(base, n, i)`.
pub fn lerw_length_samples(n: u32, samples: usize, k: u32, base: u64) -> Result<Vec<f64>> {
    InfiniteLerwSampler::new(n, k)?;
    (0..samples)
        .into_par_iter()
        .map_init(
            || InfiniteLerwSampler::new(n, k).expect("checked above"),
            |s, i| {
                let mut rng = RandomSource::derive(base, &[n as u64, i as u64]);
                s.sample_length(&mut rng).map(|v| v as f64)
            },
        )
        .collect()
}

/// Monte Carlo table of `Ĝ(n)`, the mean number of steps of the infinite
/// LERW (truncated at `K n`) before it leaves `B(0, n)`.
pub fn estimate_g(ns: &[u64], samples: usize, k: u32, rng: &mut RandomSource) -> Result<ScalingTable> {
    if ns.is_empty() || ns[0] < 1 || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("n values must be positive and increasing".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("at least 2 samples per n are needed".into()));
    }
    let base = rng.next_u64();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let n32 = u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("n={n} too large")))?;
        let v = lerw_length_samples(n32, samples, k, base)?;
        rows.push(ScalingTable::row(n, &v));
    }
    ScalingTable::new("G", rows)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TailRow {
    pub lambda: f64,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub samples: usize,
}

/// Wilson score interval for `k` successes in `n` trials at normal quantile `z`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Normal quantile used for tail intervals (95% two-sided).
pub const TAIL_Z: f64 = 1.959963984540054;

/// Empirical `P(X > λ · normalizer)` for each `λ`, with Wilson intervals.
pub fn empirical_tail(samples: &[f64], normalizer: f64, lambdas: &[f64]) -> Result<Vec<TailRow>> {
    if !(normalizer > 0.0) {
        return Err(Error::InvalidArgument("normalizer must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            // λ = 0 counts every sample: the observables here are nonnegative
            let count = if lambda <= 0.0 {
                samples.len()
            } else {
                samples.iter().filter(|&&x| x > lambda * normalizer).count()
            };
            let (lo, hi) = wilson_interval(count, samples.len(), TAIL_Z);
            TailRow {
                lambda,
                p: count as f64 / samples.len() as f64,
                lo,
                hi,
                count,
                samples: samples.len(),
            }
        })
        .collect())
}

/// Whether each cell is at most `ratio` times the previous one, allowing
/// the previous cell its upper confidence limit. A zero cell must be
/// followed by zero.
pub fn decays_geometrically(rows: &[TailRow], ratio: f64) -> bool {
    rows.windows(2).all(|w| {
        if w[0].count == 0 {
            w[1].count == 0
        } else {
            w[1].p <= ratio * w[0].hi
        }
    })
}

pub fn write_tail_csv<W: Write>(rows: &[TailRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "lambda,p,lo,hi")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.lambda, r.p, r.lo, r.hi)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(pts: &[(u64, f64, f64)]) -> ScalingTable {
        ScalingTable::new(
            "t",
            pts.iter()
                .map(|&(n, mean, stderr)| ScalingRow {
                    n,
                    mean,
                    stderr,
                    samples: 100,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_power_laws() {
        let t = table(&[2, 4, 8, 16, 32].map(|n| (n, 3.0 * (n * n) as f64, 0.0)));
        let f = fit_exponent(&t, (1, 100)).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-9);
        assert_eq!(f.fit_range, (2, 32));
        let c = table(&[2, 4, 8, 16].map(|n| (n, 5.0, 0.1)));
        assert_eq!(fit_exponent(&c, (1, 100)).unwrap().slope, 0.0);
    }

    #[test]
    fn fit_errors() {
        let t = table(&[(2, 1.0, 0.1), (4, 2.0, 0.1), (8, 3.0, 0.1)]);
        assert!(matches!(fit_exponent(&t, (1, 100)), Err(Error::Fit(_))));
        let t = table(&[(2, 1.0, 0.1), (4, -2.0, 0.1), (8, 3.0, 0.1), (16, 4.0, 0.1)]);
        assert!(fit_exponent(&t, (1, 100)).is_err());
        assert!(ScalingTable::new("x", vec![ScalingRow { n: 1, mean: 1.0, stderr: 0.0, samples: 1 }]).is_err());
    }

    #[test]
    fn csv_layouts() {
        let t = table(&[(2, 1.5, 0.25)]);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "n,mean,stderr,samples\n2,1.5,0.25,100\n");
        let rows = empirical_tail(&[1.0, 2.0, 3.0, 4.0], 1.0, &[0.0, 2.0]).unwrap();
        let mut out = Vec::new();
        write_tail_csv(&rows, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("lambda,p,lo,hi\n0,1,"));
    }

    #[test]
    fn g_table_basics() {
        let t = estimate_g(&[1, 2, 4, 8], 200, 4, &mut RandomSource::new(1, 0)).unwrap();
        assert!(t.rows[0].mean >= 1.0);
        assert!(t.rows.windows(2).all(|w| w[0].mean < w[1].mean));
        let again = estimate_g(&[1, 2, 4, 8], 200, 4, &mut RandomSource::new(1, 0)).unwrap();
        assert_eq!(t, again);
        assert!(estimate_g(&[4, 2], 10, 4, &mut RandomSource::new(1, 0)).is_err());
    }

    #[test]
    fn pilot_slope_self_consistent() {
        let ns = [8u64, 16, 32, 64];
        let pilot = estimate_g(&ns, 1000, 4, &mut RandomSource::new(2, 0)).unwrap();
        let big = estimate_g(&ns, 10_000, 4, &mut RandomSource::new(3, 0)).unwrap();
        let a = fit_exponent(&pilot, (1, 1000)).unwrap();
        let b = fit_exponent(&big, (1, 1000)).unwrap();
        assert!((a.slope - b.slope).abs() < 2.0 * a.stderr_slope, "{a:?} {b:?}");
    }

    #[test]
    fn tails() {
        let s: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let rows = empirical_tail(&s, 10.0, &[0.0, 1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        assert_eq!(rows[0].p, 1.0);
        assert!(rows.windows(2).all(|w| w[1].p <= w[0].p));
        let last = rows.last().unwrap();
        assert_eq!(last.p, 0.0);
        assert!(last.hi > 0.0 && last.lo == 0.0);
        assert!(empirical_tail(&s, 0.0, &[1.0]).is_err());
        // Wilson interval against a hand value: k=5, n=20, z=1.96
        let (lo, hi) = wilson_interval(5, 20, 1.96);
        assert!((lo - 0.1118).abs() < 1e-4 && (hi - 0.4687).abs() < 1e-4, "{lo} {hi}");
        let geo = |ps: &[f64]| {
            ps.iter()
                .map(|&p| {
                    let count = (p * 1000.0) as usize;
                    let (lo, hi) = wilson_interval(count, 1000, TAIL_Z);
                    TailRow { lambda: 0.0, p, lo, hi, count, samples: 1000 }
                })
                .collect::<Vec<_>>()
        };
        assert!(decays_geometrically(&geo(&[0.5, 0.2, 0.05, 0.0]), 0.7));
        assert!(!decays_geometrically(&geo(&[0.5, 0.45, 0.05, 0.0]), 0.7));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn planted_power_law_recovered(slope in -2.0f64..3.0, c in 0.1f64..10.0, seed in 0u64..10_000) {
            let ns = [16u64, 32, 64, 128, 256, 512];
            let exact = table(&ns.map(|n| (n, c * (n as f64).powf(slope), 0.0)));
            let f = fit_exponent(&exact, (16, 512)).unwrap();
            prop_assert!((f.slope - slope).abs() < 1e-9);
            // multiplicative noise of known scale σ in log space
            let mut rng = RandomSource::new(seed, 0);
            let sigma = 0.02;
            let noisy = table(&ns.map(|n| {
                let m = c * (n as f64).powf(slope) * (sigma * rng.normal()).exp();
                (n, m, sigma * m)
            }));
            let f = fit_exponent(&noisy, (16, 512)).unwrap();
            prop_assert!((f.slope - slope).abs() < 4.0 * f.stderr_slope);
        }
    }

    #[test]
    fn noisy_fits_cover_at_two_stderr() {
        // fraction of fits within 2 stderr should be near 95%
        let ns = [16u64, 32, 64, 128, 256, 512];
        let mut rng = RandomSource::new(5, 0);
        let mut inside = 0;
        let trials = 2000;
        for _ in 0..trials {
            let noisy = table(&ns.map(|n| {
                let m = (n as f64).powf(1.25) * (0.05 * rng.normal()).exp();
                (n, m, 0.05 * m)
            }));
            let f = fit_exponent(&noisy, (16, 512)).unwrap();
            if (f.slope - 1.25).abs() < 2.0 * f.stderr_slope {
                inside += 1;
            }
        }
        let frac = inside as f64 / trials as f64;
        assert!(frac > 0.93, "{frac}");
    }
}
