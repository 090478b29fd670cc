use crate::error::{Error, Result};

use super::{fit_exponent, ScalingTable, DEFAULT_FIT_NMIN};

/// Pool-adjacent-violators: the nondecreasing sequence closest to `y` in
/// weighted least squares. Equal neighbors are pooled, so distinct blocks are
/// strictly increasing.
pub fn isotonic_increasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    // blocks of (value, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 {
            let (b, a) = (blocks[blocks.len() - 1], blocks[blocks.len() - 2]);
            if a.0 < b.0 {
                break;
            }
            blocks.pop();
            let wt = a.1 + b.1;
            *blocks.last_mut().unwrap() = ((a.0 * a.1 + b.0 * b.1) / wt, wt, a.2 + b.2);
        }
    }
    blocks.iter().flat_map(|&(v, _, n)| std::iter::repeat_n(v, n)).collect()
}

/// A strictly increasing function that is piecewise linear in `(ln x, ln y)`
/// through the given knots and linear with the given slopes beyond them.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogPiecewise {
    /// Knot abscissae `ln x`, strictly increasing.
    pub u: Vec<f64>,
    /// Knot ordinates `ln y`, strictly increasing.
    pub v: Vec<f64>,
    pub slope_below: f64,
    pub slope_above: f64,
}

impl LogPiecewise {
    pub fn new(u: Vec<f64>, v: Vec<f64>, slope_below: f64, slope_above: f64) -> Result<Self> {
        let ok = !u.is_empty()
            && u.len() == v.len()
            && u.windows(2).all(|w| w[0] < w[1])
            && v.windows(2).all(|w| w[0] < w[1])
            && slope_below > 0.0
            && slope_above > 0.0;
        if !ok {
            return Err(Error::Fit("knots must be strictly increasing with positive end slopes".into()));
        }
        Ok(LogPiecewise {
            u,
            v,
            slope_below,
            slope_above,
        })
    }

    /// The function in log coordinates.
    pub fn eval_log(&self, s: f64) -> f64 {
        let n = self.u.len();
        if s <= self.u[0] {
            return self.v[0] + self.slope_below * (s - self.u[0]);
        }
        if s >= self.u[n - 1] {
            return self.v[n - 1] + self.slope_above * (s - self.u[n - 1]);
        }
        let k = self.u.partition_point(|&x| x <= s) - 1;
        let t = (s - self.u[k]) / (self.u[k + 1] - self.u[k]);
        self.v[k] + t * (self.v[k + 1] - self.v[k])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_log(x.ln()).exp()
    }

    /// The inverse function, exact in log coordinates.
    pub fn inverse(&self) -> LogPiecewise {
        LogPiecewise {
            u: self.v.clone(),
            v: self.u.clone(),
            slope_below: 1.0 / self.slope_below,
            slope_above: 1.0 / self.slope_above,
        }
    }
}

/// `Ĝ` with its inverse `ĝ`, `F(R) = R ĝ(R)²`, its inverse `f`, and
/// `k(t) = ĝ(f(t))²`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalingFunctionSet {
    pub big_g: LogPiecewise,
    pub small_g: LogPiecewise,
    pub big_f: LogPiecewise,
    pub small_f: LogPiecewise,
}

impl ScalingFunctionSet {
    pub fn from_growth(big_g: LogPiecewise) -> Self {
        let small_g = big_g.inverse();
        // ln F(e^s) = s + 2 ln ĝ(e^s), linear between the knots of ĝ
        let u = small_g.u.clone();
        let v = small_g.u.iter().zip(&small_g.v).map(|(s, gv)| s + 2.0 * gv).collect();
        let big_f = LogPiecewise {
            u,
            v,
            slope_below: 1.0 + 2.0 * small_g.slope_below,
            slope_above: 1.0 + 2.0 * small_g.slope_above,
        };
        let small_f = big_f.inverse();
        ScalingFunctionSet {
            big_g,
            small_g,
            big_f,
            small_f,
        }
    }

    pub fn g_big(&self, t: f64) -> f64 {
        self.big_g.eval(t)
    }

    pub fn g(&self, t: f64) -> f64 {
        self.small_g.eval(t)
    }

    pub fn f_big(&self, r: f64) -> f64 {
        self.big_f.eval(r)
    }

    pub fn f(&self, t: f64) -> f64 {
        self.small_f.eval(t)
    }

    pub fn k(&self, t: f64) -> f64 {
        self.g(self.f(t)).powi(2)
    }
}

/// Largest decrease between raw rows, in combined standard errors, that the
/// isotonic correction absorbs.
const MAX_VIOLATION_SIGMAS: f64 = 4.0;

/// Builds `Ĝ` from a growth table: rows at `n <= 1` are replaced by the
/// anchor `Ĝ(1) = 1`, the rest are made increasing by pooling adjacent
/// violators in log space, and the curve is extended beyond the last knot
/// with the slope fitted on `n >= 16` (or on the whole table if too short).
pub fn build_scaling_set(table: &ScalingTable) -> Result<ScalingFunctionSet> {
    let rows: Vec<_> = table.rows.iter().filter(|r| r.n > 1).collect();
    if rows.is_empty() {
        return Err(Error::Fit("growth table has no rows above n = 1".into()));
    }
    if rows.windows(2).any(|w| w[0].n >= w[1].n) {
        return Err(Error::Fit("growth table rows must have increasing n".into()));
    }
    if let Some(r) = rows.iter().find(|r| !(r.mean > 0.0)) {
        return Err(Error::Fit(format!("row n={} has non-positive mean", r.n)));
    }
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let tol = MAX_VIOLATION_SIGMAS * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            if a.mean - b.mean > tol {
                return Err(Error::Fit(format!(
                    "Ĝ decreases from n={} to n={} beyond noise",
                    a.n, b.n
                )));
            }
        }
    }
    // log-space values with weights from the relative standard errors; the
    // anchor goes first with a weight dominating every row
    let mut u = vec![0.0];
    let mut v = vec![0.0];
    let mut w = vec![f64::NAN];
    for r in &rows {
        u.push((r.n as f64).ln());
        v.push(r.mean.ln());
        let s = r.stderr / r.mean;
        w.push(if s.is_finite() && s > 0.0 { 1.0 / (s * s) } else { 1.0 });
    }
    let wmax = w[1..].iter().sum::<f64>();
    w[0] = 1e9 * wmax.max(1.0);
    let iso = isotonic_increasing(&v, &w);
    // one knot per pooled block, at the weighted mean of its log n
    let mut ku: Vec<f64> = Vec::new();
    let mut kv: Vec<f64> = Vec::new();
    let mut kw: Vec<f64> = Vec::new();
    for i in 0..iso.len() {
        if i > 0 && iso[i] == iso[i - 1] {
            let j = ku.len() - 1;
            let wt = kw[j] + w[i];
            if j > 0 {
                ku[j] = (ku[j] * kw[j] + u[i] * w[i]) / wt;
            }
            kw[j] = wt;
        } else {
            ku.push(u[i]);
            kv.push(iso[i]);
            kw.push(w[i]);
        }
    }
    // the anchor's weight pins its block at (0, 0)
    kv[0] = 0.0;
    let slope_below = if ku.len() > 1 { (kv[1] - kv[0]) / (ku[1] - ku[0]) } else { 1.0 };
    let nmin = if rows.iter().filter(|r| r.n >= DEFAULT_FIT_NMIN).count() >= 4 {
        DEFAULT_FIT_NMIN
    } else {
        0
    };
    let slope_above = match fit_exponent(table, (nmin.max(2), u64::MAX)) {
        Ok(f) if f.slope > 0.0 => f.slope,
        _ => {
            let n = ku.len();
            if n > 1 {
                (kv[n - 1] - kv[n - 2]) / (ku[n - 1] - ku[n - 2])
            } else {
                1.0
            }
        }
    };
    let g = LogPiecewise::new(ku, kv, slope_below, slope_above)?;
    Ok(ScalingFunctionSet::from_growth(g))
}
