//! Simple random walk on a sampled tree.
//!
//! Walks run on a [`WalkArena`], a compact copy of the trusted part of a
//! [`TreeWindow`] holding one byte of tree-edge bits per cell and the
//! intrinsic distance from the origin. A walk that reaches a cell outside the
//! trusted window, or one whose degree is not exactly known, is aborted and
//! counted as a discard.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Grid, Point};
use crate::oracle::LINALG_CAP;
use crate::rng::RandomSource;
use crate::ust::{sample_ust_window, TreeWindow, WindowConfig, UNKNOWN_SHIFT};

/// Maximum discard fraction for an estimate to be reported as valid.
pub const MAX_DISCARD_RATE: f64 = 0.01;
/// Per-walk step cap for exit-time walks.
pub const EXIT_STEP_CAP: u64 = 100_000_000;

const EDGE: u8 = 1 << 4;
const UNREACHED: u32 = u32::MAX;

// stream labels
const TREE_STREAM: u64 = 0x7472_6565;
const WALK_STREAM: u64 = 0x7761_6c6b;

/// Popcount and `k`-th set bit of a 4-bit neighbor mask.
const fn nth_bit_table() -> [[u8; 4]; 16] {
    let mut t = [[0u8; 4]; 16];
    let mut m = 0;
    while m < 16 {
        let mut k = 0;
        let mut d = 0;
        while d < 4 {
            if m & (1 << d) != 0 {
                t[m][k] = d as u8;
                k += 1;
            }
            d += 1;
        }
        m += 1;
    }
    t
}
const NTH: [[u8; 4]; 16] = nth_bit_table();

/// A read-only, walk-ready view of a tree's trusted window.
#[derive(Clone, Debug)]
pub struct WalkArena {
    grid: Grid,
    cell: Vec<u8>,
    dist: Vec<u32>,
    off: [isize; 4],
}

impl WalkArena {
    pub fn new(tree: &TreeWindow) -> Self {
        let (lo, hi) = tree
            .trusted()
            .bounds()
            .unwrap_or((tree.grid().min, tree.grid().max()));
        let grid = Grid::new(Point::new(lo.x - 1, lo.y - 1), Point::new(hi.x + 1, hi.y + 1));
        let tg = tree.grid();
        let masks = tree.masks();
        let trusted = tree.trusted();
        let cell: Vec<u8> = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                match tg.index(p) {
                    Some(j) if tree.is_sampled(p) => {
                        let m = masks[j];
                        let edge = !trusted.contains(p) || m >> UNKNOWN_SHIFT != 0;
                        (m & 15) | if edge { EDGE } else { 0 }
                    }
                    _ => EDGE,
                }
            })
            .collect();
        let mut arena = WalkArena {
            off: grid.offsets(),
            grid,
            cell,
            dist: vec![UNREACHED; grid.len()],
        };
        if let Some(o) = arena.index(Point::ORIGIN) {
            if tree.is_sampled(Point::ORIGIN) {
                arena.fill_distances(o);
            }
        }
        arena
    }

    fn fill_distances(&mut self, o: usize) {
        self.dist[o] = 0;
        let mut queue = std::collections::VecDeque::from([o]);
        while let Some(u) = queue.pop_front() {
            if self.cell[u] & EDGE != 0 {
                continue;
            }
            for d in 0..4 {
                if self.cell[u] & (1 << d) != 0 {
                    let v = (u as isize + self.off[d]) as usize;
                    if self.dist[v] == UNREACHED {
                        self.dist[v] = self.dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn index(&self, p: Point) -> Option<usize> {
        self.grid.index(p)
    }

    pub fn point(&self, i: usize) -> Point {
        self.grid.point(i)
    }

    /// Whether a walk may step away from cell `i`.
    pub fn is_interior(&self, i: usize) -> bool {
        self.cell[i] & EDGE == 0
    }

    pub fn degree(&self, i: usize) -> u32 {
        (self.cell[i] & 15).count_ones()
    }

    /// Intrinsic distance from the origin along tree edges inside the
    /// window, if the cell is reached that way.
    pub fn distance(&self, i: usize) -> Option<u32> {
        (self.dist[i] != UNREACHED).then_some(self.dist[i])
    }

    /// `|B_d(0, R)|` for each radius, or `None` where the ball reaches the
    /// window edge and the count is only a lower bound.
    pub fn ball_volumes(&self, radii: &[u32]) -> Vec<Option<usize>> {
        let first_edge = (0..self.cell.len())
            .filter(|&i| self.cell[i] & EDGE != 0 && self.dist[i] != UNREACHED)
            .map(|i| self.dist[i])
            .min()
            .unwrap_or(UNREACHED);
        let rmax = radii.iter().copied().max().unwrap_or(0).min(first_edge) as usize;
        let mut shells = vec![0usize; rmax + 1];
        for &d in &self.dist {
            if (d as usize) <= rmax {
                shells[d as usize] += 1;
            }
        }
        radii
            .iter()
            .map(|&r| (r < first_edge).then(|| shells[..=r as usize].iter().sum()))
            .collect()
    }

    /// Interior vertices, as cell indices.
    pub fn interior_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cell.len()).filter(|&i| self.cell[i] & EDGE == 0)
    }

    #[inline]
    pub fn step(&self, i: usize, rng: &mut RandomSource) -> usize {
        let nb = (self.cell[i] & 15) as usize;
        let d = match nb.count_ones() {
            0 => return i,
            1 => NTH[nb][0],
            4 => rng.direction(),
            k => NTH[nb][rng.below(k) as usize],
        };
        (i as isize + self.off[d as usize]) as usize
    }

    fn start_index(&self, start: Point) -> Result<usize> {
        match self.index(start) {
            Some(i) if self.is_interior(i) => Ok(i),
            _ => Err(Error::OutsideDomain(start)),
        }
    }

    /// See [`run_walk`].
    pub fn run_walk(&self, start: Point, horizon: u64, stops: WalkStops, rng: &mut RandomSource) -> Result<WalkTrace> {
        let mut i = self.start_index(start)?;
        if stops.intrinsic.is_some() && self.dist[i] == UNREACHED {
            return Err(Error::InvalidArgument(format!(
                "{start} is not joined to the origin inside the window"
            )));
        }
        let r2 = stops.euclidean.map(|r| (r * r).floor() as i64);
        let mut positions = vec![start];
        let mut n = 0u64;
        let stop_reason = loop {
            let p = self.grid.point(i);
            if stops.intrinsic.is_some_and(|r| self.dist[i] != UNREACHED && self.dist[i] > r) {
                break StopReason::IntrinsicExit;
            }
            if r2.is_some_and(|r2| p.norm_sq() > r2) {
                break StopReason::EuclideanExit;
            }
            if n == horizon {
                break StopReason::Horizon;
            }
            if !self.is_interior(i) {
                break StopReason::WindowEdge;
            }
            i = self.step(i, rng);
            n += 1;
            positions.push(self.grid.point(i));
        };
        Ok(WalkTrace {
            start,
            positions,
            steps: n,
            stop_reason,
        })
    }

    /// Walks from the origin recording position, distance, running maximum
    /// of the distance and range at each checkpoint (sorted ascending).
    /// Returns `None` if the walk is aborted at the window edge first.
    pub fn walk_checkpoints(
        &self,
        checkpoints: &[u64],
        rng: &mut RandomSource,
        visited: &mut Visited,
    ) -> Option<Vec<Checkpoint>> {
        let mut i = self.index(Point::ORIGIN)?;
        let mut out = Vec::with_capacity(checkpoints.len());
        visited.reset(self.cell.len());
        visited.insert(i);
        let mut range = 1u32;
        let mut ymax = 0u32;
        let mut n = 0u64;
        for &c in checkpoints {
            while n < c {
                if self.cell[i] & EDGE != 0 {
                    return None;
                }
                i = self.step(i, rng);
                n += 1;
                let d = self.dist[i];
                if d > ymax {
                    ymax = d;
                }
                if visited.insert(i) {
                    range += 1;
                }
            }
            out.push(Checkpoint {
                cell: i as u32,
                dist: self.dist[i],
                max_dist: ymax,
                range,
            });
        }
        Some(out)
    }

    /// First times the walk from the origin has intrinsic distance greater
    /// than each of `radii` and Euclidean norm squared greater than each of
    /// `norms_sq` (both sorted ascending). `None` on a window-edge abort or
    /// if `cap` steps pass first.
    pub fn exit_times(
        &self,
        radii: &[u32],
        norms_sq: &[i64],
        cap: u64,
        rng: &mut RandomSource,
    ) -> Option<(Vec<u64>, Vec<u64>)> {
        let mut i = self.index(Point::ORIGIN)?;
        let mut ti = Vec::with_capacity(radii.len());
        let mut te = Vec::with_capacity(norms_sq.len());
        let mut n = 0u64;
        loop {
            let d = self.dist[i];
            while ti.len() < radii.len() && d != UNREACHED && d > radii[ti.len()] {
                ti.push(n);
            }
            if te.len() < norms_sq.len() {
                let q = self.grid.point(i).norm_sq();
                while te.len() < norms_sq.len() && q > norms_sq[te.len()] {
                    te.push(n);
                }
            }
            if ti.len() == radii.len() && te.len() == norms_sq.len() {
                return Some((ti, te));
            }
            if self.cell[i] & EDGE != 0 || n == cap {
                return None;
            }
            i = self.step(i, rng);
            n += 1;
        }
    }

    /// Exact law of `X_n` from `start`, as `P^start(X_n = cell)` per cell.
    pub fn exact_distribution(&self, start: Point, n: u64) -> Result<Vec<f64>> {
        let s = self.start_index(start)?;
        let verts = self.interior_vertices().filter(|&i| self.cell[i] & 15 != 0).count();
        if verts > LINALG_CAP {
            return Err(Error::SizeCap {
                what: "exact walk law",
                size: verts,
                cap: LINALG_CAP,
            });
        }
        let mut cur = vec![0.0; self.cell.len()];
        let mut next = vec![0.0; self.cell.len()];
        cur[s] = 1.0;
        for _ in 0..n {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &m) in cur.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                if self.cell[i] & EDGE != 0 {
                    return Err(Error::WindowTooSmall {
                        center: start,
                        radius: n as u32,
                    });
                }
                let nb = self.cell[i] & 15;
                let share = m / nb.count_ones() as f64;
                for d in 0..4 {
                    if nb & (1 << d) != 0 {
                        next[(i as isize + self.off[d]) as usize] += share;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }
}

/// Visited-set with O(1) reset, reused across walks.
#[derive(Clone, Debug, Default)]
pub struct Visited {
    stamp: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn reset(&mut self, len: usize) {
        if self.stamp.len() != len || self.epoch == u32::MAX {
            self.stamp = vec![0; len];
            self.epoch = 0;
        }
        self.epoch += 1;
    }

    #[inline]
    fn insert(&mut self, i: usize) -> bool {
        let fresh = self.stamp[i] != self.epoch;
        self.stamp[i] = self.epoch;
        fresh
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub cell: u32,
    pub dist: u32,
    pub max_dist: u32,
    pub range: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WalkStops {
    /// Stop once `d(0, X_n) > R`.
    pub intrinsic: Option<u32>,
    /// Stop once `|X_n| > r`.
    pub euclidean: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Horizon,
    IntrinsicExit,
    EuclideanExit,
    WindowEdge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkTrace {
    pub start: Point,
    pub positions: Vec<Point>,
    pub steps: u64,
    pub stop_reason: StopReason,
}

/// Simple random walk on the tree from `start` until the horizon, the first
/// time `d(0, X_n) > R`, or the first time `|X_n| > r`, whichever comes
/// first. Reaching a cell of uncertain degree aborts with
/// [`StopReason::WindowEdge`].
pub fn run_walk(
    tree: &TreeWindow,
    start: Point,
    horizon: u64,
    stops: WalkStops,
    rng: &mut RandomSource,
) -> Result<WalkTrace> {
    WalkArena::new(tree).run_walk(start, horizon, stops, rng)
}

/// Where the trees for a batch of walks come from.
#[derive(Clone, Copy, Debug)]
pub enum Ensemble<'a> {
    /// A fresh tree per group of replicas.
    Annealed { config: WindowConfig, trees: usize },
    /// One fixed tree, replicas split into `batches` groups.
    Quenched { tree: &'a TreeWindow, batches: usize },
}

impl Ensemble<'_> {
    pub fn groups(&self) -> usize {
        match *self {
            Ensemble::Annealed { trees, .. } => trees,
            Ensemble::Quenched { batches, .. } => batches,
        }
    }

    /// Applies `f` to every group's arena with its own random stream, in
    /// parallel, returning results in group order.
    pub fn map_groups<T, F>(&self, base: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &WalkArena, &mut RandomSource) -> T + Sync,
    {
        match *self {
            Ensemble::Annealed { config, trees } => (0..trees)
                .into_par_iter()
                .map(|g| {
                    let mut trng = RandomSource::derive(base, &[TREE_STREAM, g as u64]);
                    let tree = sample_ust_window(&config, &mut trng)?;
                    let arena = WalkArena::new(&tree);
                    drop(tree);
                    let mut wrng = RandomSource::derive(base, &[WALK_STREAM, g as u64]);
                    Ok(f(g, &arena, &mut wrng))
                })
                .collect(),
            Ensemble::Quenched { tree, batches } => {
                let arena = WalkArena::new(tree);
                Ok((0..batches)
                    .into_par_iter()
                    .map(|g| {
                        let mut wrng = RandomSource::derive(base, &[WALK_STREAM, g as u64]);
                        f(g, &arena, &mut wrng)
                    })
                    .collect())
            }
        }
    }
}

/// Mean and standard error (`sd / sqrt(n)`) of a sample; the standard error
/// is NaN below two values.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    MonteCarlo,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatKernelEstimate {
    pub n: u64,
    pub x: Point,
    pub y: Point,
    /// `p_n(x, y)`.
    pub p: f64,
    /// `p_n(x, y) + p_{n+1}(x, y)`.
    pub p_tilde: f64,
    pub stderr: f64,
    pub kind: KernelKind,
}

/// Per-group results of the checkpoint walks.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupWalkStats {
    pub walks: usize,
    pub discarded: usize,
    /// Pair-collision estimate of `p_t(0,0)` for each requested even time.
    pub ret: Vec<f64>,
    pub dist: Vec<f64>,
    pub max_dist: Vec<f64>,
    pub range: Vec<f64>,
}

/// Runs `walks` walks from the origin and summarizes them.
///
/// `p_{2m}(0,0) = sum_y P(X_m = y)^2 / μ_y` by reversibility, so the
/// fraction of pairs of independent walks meeting at time `m`, weighted by
/// `1/μ` of the meeting point, is an unbiased estimate of `p_{2m}(0,0)`.
pub fn group_walk_stats(
    arena: &WalkArena,
    return_times: &[u64],
    ns: &[u64],
    walks: usize,
    rng: &mut RandomSource,
) -> GroupWalkStats {
    let mut cps: Vec<u64> = return_times.iter().map(|t| t / 2).chain(ns.iter().copied()).collect();
    cps.sort_unstable();
    cps.dedup();
    let pos = |t: u64| cps.binary_search(&t).unwrap();
    let mut visited = Visited::default();
    let mut records = Vec::with_capacity(walks);
    let mut discarded = 0;
    for _ in 0..walks {
        match arena.walk_checkpoints(&cps, rng, &mut visited) {
            Some(r) => records.push(r),
            None => discarded += 1,
        }
    }
    let m = records.len();
    let pairs = (m * m.saturating_sub(1) / 2) as f64;
    let ret = return_times
        .iter()
        .map(|&t| {
            if m < 2 {
                return f64::NAN;
            }
            let k = pos(t / 2);
            let mut cells: Vec<u32> = records.iter().map(|r| r[k].cell).collect();
            cells.sort_unstable();
            let mut sum = 0.0;
            for run in cells.chunk_by(|a, b| a == b) {
                let c = run.len() as f64;
                sum += c * (c - 1.0) / 2.0 / arena.degree(run[0] as usize) as f64;
            }
            sum / pairs
        })
        .collect();
    let avg = |f: &dyn Fn(&Checkpoint) -> u32, t: u64| {
        if m == 0 {
            return f64::NAN;
        }
        let k = pos(t);
        records.iter().map(|r| f(&r[k]) as f64).sum::<f64>() / m as f64
    };
    GroupWalkStats {
        walks,
        discarded,
        ret,
        dist: ns.iter().map(|&t| avg(&|c| c.dist, t)).collect(),
        max_dist: ns.iter().map(|&t| avg(&|c| c.max_dist, t)).collect(),
        range: ns.iter().map(|&t| avg(&|c| c.range, t)).collect(),
    }
}

fn discard_rate(walks: usize, discarded: usize) -> f64 {
    if walks == 0 {
        0.0
    } else {
        discarded as f64 / walks as f64
    }
}

/// Mean and stderr across groups of column `k`, skipping groups without a
/// value.
fn column(groups: &[Vec<f64>], k: usize) -> (f64, f64) {
    let v: Vec<f64> = groups.iter().map(|g| g[k]).filter(|x| x.is_finite()).collect();
    mean_stderr(&v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReturnProbabilityReport {
    pub estimates: Vec<HeatKernelEstimate>,
    pub discard_rate: f64,
    pub valid: bool,
}

fn check_even(times: &[u64]) -> Result<()> {
    match times.iter().find(|t| *t % 2 == 1) {
        Some(t) => Err(Error::InvalidArgument(format!(
            "return times must be even (got {t})"
        ))),
        None => Ok(()),
    }
}

/// Monte Carlo `p_t(0,0)` for each even time `t`, averaged over groups.
/// Since trees are bipartite, `p̃_t(0,0) = p_t(0,0)` for even `t`.
pub fn estimate_return_probability(
    ens: &Ensemble,
    times: &[u64],
    replicas: usize,
    rng: &mut RandomSource,
) -> Result<ReturnProbabilityReport> {
    check_even(times)?;
    let base = rng.next_u64();
    let groups = ens.map_groups(base, |_, arena, r| group_walk_stats(arena, times, &[], replicas, r))?;
    Ok(return_report(times, &groups))
}

pub fn return_report(times: &[u64], groups: &[GroupWalkStats]) -> ReturnProbabilityReport {
    let rets: Vec<Vec<f64>> = groups.iter().map(|g| g.ret.clone()).collect();
    let estimates = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (p, stderr) = column(&rets, k);
            HeatKernelEstimate {
                n: t,
                x: Point::ORIGIN,
                y: Point::ORIGIN,
                p,
                p_tilde: p,
                stderr,
                kind: KernelKind::MonteCarlo,
            }
        })
        .collect();
    let (w, d) = groups.iter().fold((0, 0), |(w, d), g| (w + g.walks, d + g.discarded));
    let rate = discard_rate(w, d);
    ReturnProbabilityReport {
        estimates,
        discard_rate: rate,
        valid: rate <= MAX_DISCARD_RATE,
    }
}

/// Exact `p_t(x, y)` and `p̃_t(x, y)` on a small tree by propagating the
/// walk's law.
pub fn exact_heat_kernel(tree: &TreeWindow, x: Point, y: Point, times: &[u64]) -> Result<Vec<HeatKernelEstimate>> {
    let arena = WalkArena::new(tree);
    let j = arena.start_index(y)?;
    let mu = arena.degree(j) as f64;
    times
        .iter()
        .map(|&t| {
            let a = arena.exact_distribution(x, t)?[j] / mu;
            let b = arena.exact_distribution(x, t + 1)?[j] / mu;
            Ok(HeatKernelEstimate {
                n: t,
                x,
                y,
                p: a,
                p_tilde: a + b,
                stderr: 0.0,
                kind: KernelKind::Exact,
            })
        })
        .collect()
}

/// Exact `p_n(x, ·)` over the tree's vertices.
pub fn exact_kernel_row(tree: &TreeWindow, x: Point, n: u64) -> Result<HashMap<Point, f64>> {
    let arena = WalkArena::new(tree);
    let law = arena.exact_distribution(x, n)?;
    Ok(law
        .iter()
        .enumerate()
        .filter(|(i, _)| arena.degree(*i) > 0 && arena.is_interior(*i))
        .map(|(i, &m)| (arena.point(i), m / arena.degree(i) as f64))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitKind {
    /// `τ_R`, exit from the intrinsic ball.
    Intrinsic,
    /// `τ̃_r`, exit from the Euclidean ball.
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitRow {
    pub kind: ExitKind,
    pub radius: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupExitStats {
    pub walks: usize,
    pub discarded: usize,
    pub intrinsic: Vec<f64>,
    pub euclidean: Vec<f64>,
}

/// Mean exit times over `walks` walks from the origin on one arena.
pub fn group_exit_stats(
    arena: &WalkArena,
    radii: &[u32],
    euclidean: &[f64],
    walks: usize,
    rng: &mut RandomSource,
) -> GroupExitStats {
    let norms: Vec<i64> = euclidean.iter().map(|r| (r * r).floor() as i64).collect();
    let mut si = vec![0.0; radii.len()];
    let mut se = vec![0.0; norms.len()];
    let mut ok = 0usize;
    for _ in 0..walks {
        if let Some((ti, te)) = arena.exit_times(radii, &norms, EXIT_STEP_CAP, rng) {
            ok += 1;
            si.iter_mut().zip(&ti).for_each(|(s, &t)| *s += t as f64);
            se.iter_mut().zip(&te).for_each(|(s, &t)| *s += t as f64);
        }
    }
    let norm = |v: Vec<f64>| {
        v.into_iter()
            .map(|s| if ok == 0 { f64::NAN } else { s / ok as f64 })
            .collect()
    };
    GroupExitStats {
        walks,
        discarded: walks - ok,
        intrinsic: norm(si),
        euclidean: norm(se),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitReport {
    pub rows: Vec<ExitRow>,
    pub discard_rate: f64,
    pub valid: bool,
}

fn sorted_ascending<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Annealed (or quenched) mean exit times over intrinsic radii `R` and
/// Euclidean radii `r`, each list strictly increasing.
pub fn exit_time_statistics(
    ens: &Ensemble,
    radii: &[u32],
    euclidean: &[f64],
    replicas: usize,
    rng: &mut RandomSource,
) -> Result<ExitReport> {
    if !sorted_ascending(radii) || !sorted_ascending(euclidean) {
        return Err(Error::InvalidArgument("radii must be strictly increasing".into()));
    }
    let base = rng.next_u64();
    let groups = ens.map_groups(base, |_, arena, r| group_exit_stats(arena, radii, euclidean, replicas, r))?;
    Ok(exit_report(radii, euclidean, &groups))
}

pub fn exit_report(radii: &[u32], euclidean: &[f64], groups: &[GroupExitStats]) -> ExitReport {
    let gi: Vec<Vec<f64>> = groups.iter().map(|g| g.intrinsic.clone()).collect();
    let ge: Vec<Vec<f64>> = groups.iter().map(|g| g.euclidean.clone()).collect();
    let mut rows = Vec::new();
    for (k, &r) in radii.iter().enumerate() {
        let (mean, stderr) = column(&gi, k);
        rows.push(ExitRow {
            kind: ExitKind::Intrinsic,
            radius: r as f64,
            mean,
            stderr,
        });
    }
    for (k, &r) in euclidean.iter().enumerate() {
        let (mean, stderr) = column(&ge, k);
        rows.push(ExitRow {
            kind: ExitKind::Euclidean,
            radius: r,
            mean,
            stderr,
        });
    }
    let (w, d) = groups.iter().fold((0, 0), |(w, d), g| (w + g.walks, d + g.discarded));
    let rate = discard_rate(w, d);
    ExitReport {
        rows,
        discard_rate: rate,
        valid: rate <= MAX_DISCARD_RATE,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplacementRow {
    pub n: u64,
    pub dist: (f64, f64),
    pub max_dist: (f64, f64),
    pub range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementReport {
    pub rows: Vec<DisplacementRow>,
    pub discard_rate: f64,
    pub valid: bool,
}

/// `E d(0, X_n)`, `E Y_n` and `E |W_n|` with standard errors across groups.
pub fn displacement_and_range(
    ens: &Ensemble,
    ns: &[u64],
    replicas: usize,
    rng: &mut RandomSource,
) -> Result<DisplacementReport> {
    let base = rng.next_u64();
    let groups = ens.map_groups(base, |_, arena, r| group_walk_stats(arena, &[], ns, replicas, r))?;
    Ok(displacement_report(ns, &groups))
}

pub fn displacement_report(ns: &[u64], groups: &[GroupWalkStats]) -> DisplacementReport {
    let pick = |f: fn(&GroupWalkStats) -> &Vec<f64>| groups.iter().map(|g| f(g).clone()).collect::<Vec<_>>();
    let (d, y, w) = (pick(|g| &g.dist), pick(|g| &g.max_dist), pick(|g| &g.range));
    let rows = ns
        .iter()
        .enumerate()
        .map(|(k, &n)| DisplacementRow {
            n,
            dist: column(&d, k),
            max_dist: column(&y, k),
            range: column(&w, k),
        })
        .collect();
    let (wk, dc) = groups.iter().fold((0, 0), |(w, d), g| (w + g.walks, d + g.discarded));
    let rate = discard_rate(wk, dc);
    DisplacementReport {
        rows,
        discard_rate: rate,
        valid: rate <= MAX_DISCARD_RATE,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileRow {
    /// Distance bin `[d_lo, d_hi)`.
    pub d_lo: u32,
    pub d_hi: u32,
    pub mean_d: f64,
    /// `Φ(T, 0, y)` at the bin's mean distance.
    pub phi: f64,
    /// Mean of `p̃_T(0, y)` over vertices in the bin.
    pub p_tilde: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileReport {
    pub t: u64,
    pub rows: Vec<ProfileRow>,
    pub discard_rate: f64,
    pub valid: bool,
}

/// Off-diagonal heat kernel `p̃_T(0, y)` binned by `d(0, y)`, with bins given
/// by consecutive entries of `edges`. `big_g` is the growth function used
/// for `Φ(T, 0, y) = d / G((T/d)^{1/2})`.
pub fn sub_gaussian_profile(
    ens: &Ensemble,
    t: u64,
    edges: &[u32],
    replicas: usize,
    big_g: &(dyn Fn(f64) -> f64 + Sync),
    rng: &mut RandomSource,
) -> Result<ProfileReport> {
    if t < 1 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    if edges.len() < 2 || !sorted_ascending(edges) {
        return Err(Error::InvalidArgument("bin edges must be increasing".into()));
    }
    let nb = edges.len() - 1;
    let bin_of = |d: u32| match edges.binary_search(&d) {
        Ok(k) if k < nb => Some(k),
        Ok(_) => None,
        Err(0) => None,
        Err(k) if k <= nb => Some(k - 1),
        Err(_) => None,
    };
    let base = rng.next_u64();
    // per group: (bin means, bin mean distances, walks, discarded)
    let groups = ens.map_groups(base, |_, arena, r| {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        let mut ok = 0usize;
        let mut visited = Visited::default();
        for _ in 0..replicas {
            if let Some(c) = arena.walk_checkpoints(&[t, t + 1], r, &mut visited) {
                ok += 1;
                for cp in c {
                    let i = cp.cell as usize;
                    *acc.entry(i).or_default() += 1.0 / arena.degree(i) as f64;
                }
            }
        }
        let mut sum = vec![0.0; nb];
        let mut dsum = vec![0.0; nb];
        let mut count = vec![0usize; nb];
        for i in arena.interior_vertices() {
            if let Some(k) = arena.distance(i).and_then(bin_of) {
                count[k] += 1;
                dsum[k] += arena.dist[i] as f64;
                sum[k] += acc.get(&i).copied().unwrap_or(0.0);
            }
        }
        let means: Vec<f64> = (0..nb)
            .map(|k| {
                if count[k] == 0 || ok == 0 {
                    f64::NAN
                } else {
                    sum[k] / ok as f64 / count[k] as f64
                }
            })
            .collect();
        let dmeans: Vec<f64> = (0..nb)
            .map(|k| if count[k] == 0 { f64::NAN } else { dsum[k] / count[k] as f64 })
            .collect();
        (means, dmeans, replicas, replicas - ok)
    })?;
    let means: Vec<Vec<f64>> = groups.iter().map(|g| g.0.clone()).collect();
    let dmeans: Vec<Vec<f64>> = groups.iter().map(|g| g.1.clone()).collect();
    let rows = (0..nb)
        .map(|k| {
            let (p_tilde, stderr) = column(&means, k);
            let mean_d = column(&dmeans, k).0;
            let phi = if mean_d > 0.0 {
                mean_d / big_g((t as f64 / mean_d).sqrt())
            } else {
                0.0
            };
            ProfileRow {
                d_lo: edges[k],
                d_hi: edges[k + 1],
                mean_d,
                phi,
                p_tilde,
                stderr,
            }
        })
        .collect();
    let (w, d) = groups.iter().fold((0, 0), |(w, d), g| (w + g.2, d + g.3));
    let rate = discard_rate(w, d);
    Ok(ProfileReport {
        t,
        rows,
        discard_rate: rate,
        valid: rate <= MAX_DISCARD_RATE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{wilson_finite, FiniteGraph};
    use crate::metrics::intrinsic_ball;
    use crate::oracle::{dirichlet_expected_exit, transition_powers, OracleGraph};
    use crate::ust::Fill;
    use proptest::prelude::*;

    fn grid_tree(w: i32, seed: u64) -> TreeWindow {
        let g = FiniteGraph::grid(w, w);
        let n = (w * w) as usize;
        let order: Vec<usize> = (0..n).collect();
        let t = wilson_finite(&g, n / 2, &order, &mut RandomSource::new(seed, 0)).unwrap();
        TreeWindow::from_spanning_tree(&g, &t).unwrap()
    }

    /// 7x7 tree shifted so that the origin sits at its centre.
    fn centered_tree(seed: u64) -> TreeWindow {
        let t = grid_tree(7, seed);
        let pairs = t
            .vertices()
            .into_iter()
            .map(|p| {
                let q = t.parent(p).unwrap_or(p);
                (Point::new(p.x - 3, p.y - 3), Point::new(q.x - 3, q.y - 3))
            })
            .collect::<Vec<_>>();
        TreeWindow::from_parent_pairs(pairs, t.root_kind(), *t.header()).unwrap()
    }

    #[test]
    fn trivial_walks() {
        let t = centered_tree(1);
        let mut rng = RandomSource::new(1, 0);
        let tr = run_walk(&t, Point::ORIGIN, 0, WalkStops::default(), &mut rng).unwrap();
        assert_eq!(tr.positions, vec![Point::ORIGIN]);
        assert_eq!(tr.stop_reason, StopReason::Horizon);
        // leaves step to their unique neighbor
        let leaf = t.vertices().into_iter().find(|p| t.degree(*p) == 1).unwrap();
        let nb = t.tree_neighbors(leaf)[0];
        for s in 0..20 {
            let tr = run_walk(&t, leaf, 1, WalkStops::default(), &mut RandomSource::new(2, s)).unwrap();
            assert_eq!(tr.positions, vec![leaf, nb]);
        }
        assert!(matches!(
            run_walk(&t, Point::new(10, 10), 1, WalkStops::default(), &mut rng),
            Err(Error::OutsideDomain(_))
        ));
    }

    #[test]
    fn steps_follow_tree_edges_uniformly() {
        let t = centered_tree(2);
        let mut rng = RandomSource::new(3, 0);
        let tr = run_walk(&t, Point::ORIGIN, 20_000, WalkStops::default(), &mut rng).unwrap();
        let mut counts: HashMap<(Point, Point), u32> = HashMap::new();
        for w in tr.positions.windows(2) {
            assert!(t.tree_neighbors(w[0]).contains(&w[1]));
            *counts.entry((w[0], w[1])).or_default() += 1;
        }
        // transition frequencies out of each vertex are close to 1/μ
        for p in t.vertices() {
            let out: Vec<u32> = t.tree_neighbors(p).iter().map(|q| counts.get(&(p, *q)).copied().unwrap_or(0)).collect();
            let total: u32 = out.iter().sum();
            if total < 400 {
                continue;
            }
            for c in out {
                let f = c as f64 / total as f64;
                let mu = t.degree(p) as f64;
                let sd = (1.0 / mu * (1.0 - 1.0 / mu) / total as f64).sqrt();
                assert!((f - 1.0 / mu).abs() < 5.0 * sd);
            }
        }
    }

    #[test]
    fn exit_time_on_segment() {
        let t = TreeWindow::segment(50);
        let (og, verts) = OracleGraph::from_tree(&t).unwrap();
        let interior: Vec<bool> = verts.iter().map(|p| p.x.abs() < 50).collect();
        let centre = verts.iter().position(|p| *p == Point::ORIGIN).unwrap();
        let exact = dirichlet_expected_exit(&og, &interior, centre).unwrap();
        assert!((exact - 2500.0).abs() < 1e-6);
        let ens = Ensemble::Quenched { tree: &t, batches: 100 };
        let rep = exit_time_statistics(&ens, &[], &[49.0], 1000, &mut RandomSource::new(4, 0)).unwrap();
        assert_eq!(rep.discard_rate, 0.0);
        let m = rep.rows[0].mean;
        assert!((m - 2500.0).abs() < 0.02 * 2500.0, "{m}");
    }

    #[test]
    fn exit_times_monotone_and_nested() {
        let cfg = WindowConfig::wired(24, 4).with_fill(Fill::Window);
        for s in 0..10 {
            let tree = sample_ust_window(&cfg, &mut RandomSource::new(5, s)).unwrap();
            // τ_0 = 1
            let tr = run_walk(&tree, Point::ORIGIN, 10, WalkStops { intrinsic: Some(0), euclidean: None }, &mut RandomSource::new(6, s)).unwrap();
            assert_eq!(tr.steps, 1);
            assert_eq!(tr.stop_reason, StopReason::IntrinsicExit);
            // same seed, growing R: nondecreasing τ
            let mut prev = 0;
            for r in [1, 2, 4, 8] {
                let tr = run_walk(&tree, Point::ORIGIN, 1 << 20, WalkStops { intrinsic: Some(r), euclidean: None }, &mut RandomSource::new(7, s)).unwrap();
                if tr.stop_reason != StopReason::IntrinsicExit {
                    break;
                }
                assert!(tr.steps >= prev);
                prev = tr.steps;
            }
            // τ_R <= τ̃_r when the intrinsic ball sits inside the Euclidean one
            let ball = intrinsic_ball(&tree, Point::ORIGIN, 6).unwrap();
            if ball.truncated {
                continue;
            }
            let r = ball.members.iter().map(|p| p.norm()).fold(0.0, f64::max).ceil();
            let arena = WalkArena::new(&tree);
            for w in 0..50 {
                let mut rng = RandomSource::new(8, s * 100 + w);
                if let Some((ti, te)) = arena.exit_times(&[6], &[(r * r) as i64], 1 << 24, &mut rng) {
                    assert!(ti[0] <= te[0]);
                }
            }
        }
    }

    #[test]
    fn window_edge_aborts() {
        let cfg = WindowConfig::wired(3, 4).with_fill(Fill::Window);
        let tree = sample_ust_window(&cfg, &mut RandomSource::new(9, 0)).unwrap();
        let tr = run_walk(&tree, Point::ORIGIN, 1 << 30, WalkStops::default(), &mut RandomSource::new(9, 1)).unwrap();
        assert_eq!(tr.stop_reason, StopReason::WindowEdge);
        assert!(!tree.trusted().contains(*tr.positions.last().unwrap()) || !tree.degree_is_exact(*tr.positions.last().unwrap()));
    }

    #[test]
    fn exact_mode_matches_matrix_powers() {
        for seed in 0..5 {
            let t = grid_tree(7, seed);
            let verts = t.vertices();
            let x = verts[(seed as usize * 7) % verts.len()];
            for n in [0u64, 1, 2, 5, 16, 33, 64] {
                let hk = transition_powers(&t, n as u32).unwrap();
                let row = exact_kernel_row(&t, x, n).unwrap();
                for (y, p) in &row {
                    assert!((p - hk.p(x, *y).unwrap()).abs() < 1e-12);
                }
                let est = exact_heat_kernel(&t, x, x, &[n]).unwrap()[0];
                assert!((est.p - hk.p(x, x).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_kernel_identities() {
        let t = centered_tree(11);
        for n in [1u64, 2, 9, 30] {
            let row0 = exact_kernel_row(&t, Point::ORIGIN, n).unwrap();
            let total: f64 = row0.iter().map(|(y, p)| p * t.degree(*y) as f64).sum();
            assert!((total - 1.0).abs() < 1e-12);
            if n % 2 == 1 {
                assert_eq!(row0[&Point::ORIGIN], 0.0);
            }
            for (y, p) in &row0 {
                let back = exact_kernel_row(&t, *y, n).unwrap()[&Point::ORIGIN];
                assert!((p - back).abs() < 1e-12);
            }
        }
        let e0 = exact_heat_kernel(&t, Point::ORIGIN, Point::ORIGIN, &[0]).unwrap()[0];
        assert_eq!(e0.p, 1.0 / t.degree(Point::ORIGIN) as f64);
        assert!(exact_kernel_row(&grid_tree(16, 0), Point::new(8, 8), 2).is_err());
    }

    #[test]
    fn monte_carlo_matches_exact() {
        let t = centered_tree(12);
        let ens = Ensemble::Quenched { tree: &t, batches: 200 };
        let times = [0u64, 4, 16, 64];
        let rep = estimate_return_probability(&ens, &times, 100, &mut RandomSource::new(13, 0)).unwrap();
        assert!(rep.valid);
        let ex = exact_heat_kernel(&t, Point::ORIGIN, Point::ORIGIN, &times).unwrap();
        assert_eq!(rep.estimates[0].p, ex[0].p);
        for (m, e) in rep.estimates.iter().zip(&ex).skip(1) {
            assert!((m.p_tilde - e.p_tilde).abs() < 3.0 * m.stderr, "{m:?} vs {e:?}");
        }
        assert!(estimate_return_probability(&ens, &[3], 10, &mut RandomSource::new(0, 0)).is_err());
    }

    #[test]
    fn segment_sanity_slopes() {
        let t = TreeWindow::segment(2000);
        let ens = Ensemble::Quenched { tree: &t, batches: 50 };
        let times: Vec<u64> = (6..=12).map(|k| 1u64 << k).collect();
        let rep = estimate_return_probability(&ens, &times, 200, &mut RandomSource::new(14, 0)).unwrap();
        let xs: Vec<f64> = times.iter().map(|&t| (t as f64).ln()).collect();
        let ys: Vec<f64> = rep.estimates.iter().map(|e| e.p.ln()).collect();
        let slope = ols_slope(&xs, &ys);
        assert!((slope + 0.5).abs() < 0.05, "{slope}");
    }

    fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn displacement_at_zero_and_annealed_runs() {
        let cfg = WindowConfig::wired(32, 4).with_fill(Fill::Window);
        let ens = Ensemble::Annealed { config: cfg, trees: 4 };
        let rep = displacement_and_range(&ens, &[0, 8, 64], 20, &mut RandomSource::new(15, 0)).unwrap();
        let r0 = rep.rows[0];
        assert_eq!((r0.dist.0, r0.max_dist.0, r0.range.0), (0.0, 0.0, 1.0));
        assert!(rep.rows[2].range.0 > rep.rows[1].range.0);
        // rerun is identical
        let again = displacement_and_range(&ens, &[0, 8, 64], 20, &mut RandomSource::new(15, 0)).unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn profile_diagnostics() {
        let t = centered_tree(16);
        let ens = Ensemble::Quenched { tree: &t, batches: 100 };
        let g = |x: f64| x.powf(1.25);
        let rep = sub_gaussian_profile(&ens, 8, &[0, 1, 3, 6, 12], 400, &g, &mut RandomSource::new(17, 0)).unwrap();
        let exact = exact_heat_kernel(&t, Point::ORIGIN, Point::ORIGIN, &[8]).unwrap()[0];
        let r0 = rep.rows[0];
        assert_eq!(r0.phi, 0.0);
        assert!((r0.p_tilde - exact.p_tilde).abs() < 4.0 * r0.stderr, "{r0:?} {exact:?}");
        let finite: Vec<&ProfileRow> = rep.rows.iter().filter(|r| r.p_tilde.is_finite()).collect();
        for w in finite.windows(2) {
            assert!(w[1].p_tilde <= w[0].p_tilde + 2.0 * (w[0].stderr + w[1].stderr));
            assert!(w[1].phi >= w[0].phi);
        }
    }

    #[test]
    fn arena_ball_volumes_match_bfs() {
        let cfg = WindowConfig::wired(16, 4).with_fill(Fill::Window);
        for s in 0..20 {
            let tree = sample_ust_window(&cfg, &mut RandomSource::new(18, s)).unwrap();
            let arena = WalkArena::new(&tree);
            let radii = [0u32, 1, 4, 8, 16, 32, 64];
            for (r, v) in radii.iter().zip(arena.ball_volumes(&radii)) {
                let b = intrinsic_ball(&tree, Point::ORIGIN, *r).unwrap();
                match v {
                    Some(v) => {
                        assert!(!b.truncated);
                        assert_eq!(v, b.volume);
                    }
                    None => assert!(b.truncated),
                }
            }
        }
        assert_eq!(WalkArena::new(&TreeWindow::segment(10)).ball_volumes(&[3, 10, 11]), vec![Some(7), Some(21), Some(21)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn pathwise_bounds(seed in 0u64..1000, n in 0u64..300) {
            let t = grid_tree(9, seed % 7);
            let start = t.vertices().into_iter().find(|p| *p == Point::new(4, 4)).unwrap();
            let shifted = {
                let pairs: Vec<_> = t.vertices().into_iter().map(|p| {
                    let q = t.parent(p).unwrap_or(p);
                    (Point::new(p.x - start.x, p.y - start.y), Point::new(q.x - start.x, q.y - start.y))
                }).collect();
                TreeWindow::from_parent_pairs(pairs, t.root_kind(), *t.header()).unwrap()
            };
            let arena = WalkArena::new(&shifted);
            let mut visited = Visited::default();
            let cps: Vec<u64> = vec![0, n / 2, n];
            let rec = arena.walk_checkpoints(&cps, &mut RandomSource::new(seed, 1), &mut visited).unwrap();
            for (c, k) in rec.iter().zip(&cps) {
                prop_assert!(c.range as u64 <= k + 1);
                prop_assert!(c.max_dist as u64 <= *k);
                prop_assert!(c.dist <= c.max_dist);
            }
            prop_assert_eq!(rec[0], Checkpoint { cell: arena.index(Point::ORIGIN).unwrap() as u32, dist: 0, max_dist: 0, range: 1 });
        }
    }
}
