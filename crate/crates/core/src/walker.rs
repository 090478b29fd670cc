//! Simple random walk on the lattice, stopping times, chronological loop
//! erasure, and the truncated infinite loop-erased walk.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::lattice::{Grid, LatticePath, LatticeRegion, Point};
use crate::rng::RandomSource;

/// Default hard cap on the number of steps of a single walk.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

/// Default ratio `n / l` for the truncated infinite LERW.
pub const DEFAULT_TRUNCATION_FACTOR: u32 = 32;

/// When a walk stops. All rules except `FixedSteps` are evaluated for
/// indices `j >= 1` only, so a walk started inside a target set does not stop
/// at time zero.
#[derive(Clone, Debug, PartialEq)]
pub enum StopRule {
    /// First exit time of a region.
    ExitRegion(LatticeRegion),
    /// First hitting time of a region.
    HitRegion(LatticeRegion),
    HitPoint(Point),
    /// First exit time of the closed ball of the given radius around the origin.
    ExitBall(f64),
    FixedSteps(u64),
}

impl StopRule {
    #[inline]
    fn fires(&self, j: u64, p: Point) -> bool {
        match self {
            StopRule::ExitRegion(d) => !d.contains(p),
            StopRule::HitRegion(k) => k.contains(p),
            StopRule::HitPoint(w) => p == *w,
            StopRule::ExitBall(r) => p.norm_sq() > (r * r).floor() as i64,
            StopRule::FixedSteps(n) => j >= *n,
        }
    }
}

/// Where the walk lives: all of the lattice, or the subgraph induced by a
/// finite window (each step uniform over the in-window neighbors).
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Lattice,
    Window(LatticeRegion),
}

/// A loop-erased path together with the length of the walk that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LerwSample {
    pub path: LatticePath,
    pub raw_steps: u64,
    /// `(l, n)` when the path approximates the infinite LERW up to its exit
    /// of `B(0, l)` by erasing a walk stopped on exiting `B(0, n)`.
    pub truncation: Option<(u32, u32)>,
}

/// Runs a simple random walk from `start` until `stop` fires.
pub fn srw_until(start: Point, stop: &StopRule, rng: &mut RandomSource) -> Result<LatticePath> {
    srw_until_in(&Domain::Lattice, start, stop, rng, DEFAULT_STEP_CAP)
}

pub fn srw_until_in(
    domain: &Domain,
    start: Point,
    stop: &StopRule,
    rng: &mut RandomSource,
    cap: u64,
) -> Result<LatticePath> {
    let mut path = vec![start];
    if let StopRule::FixedSteps(0) = stop {
        return Ok(LatticePath::single(start));
    }
    let mut p = start;
    let mut j = 0u64;
    loop {
        if j >= cap {
            return Err(Error::CapExceeded {
                cap,
                start,
                partial: Box::new(LatticePath::from_vec_unchecked(path)),
            });
        }
        p = match domain {
            Domain::Lattice => p.step(rng.direction()),
            Domain::Window(w) => window_step(w, p, rng)?,
        };
        j += 1;
        path.push(p);
        if stop.fires(j, p) {
            return Ok(LatticePath::from_vec_unchecked(path));
        }
    }
}

fn window_step(w: &LatticeRegion, p: Point, rng: &mut RandomSource) -> Result<Point> {
    let mut nbrs = [Point::ORIGIN; 4];
    let mut k = 0;
    for d in 0..4 {
        let q = p.step(d);
        if w.contains(q) {
            nbrs[k] = q;
            k += 1;
        }
    }
    if k == 0 {
        return Err(Error::InvalidArgument(format!("{p} has no neighbors in the window")));
    }
    Ok(nbrs[rng.below(k as u32) as usize])
}

/// Chronological loop erasure.
///
/// With `s_0` the last visit to `λ(0)` and `s_i` the last visit to
/// `λ(s_{i-1} + 1)`, returns `[λ(s_0), ..., λ(s_n)]` where `s_n = m`.
pub fn loop_erase(path: &LatticePath) -> LatticePath {
    let v = path.vertices();
    let mut last: HashMap<Point, usize> = HashMap::with_capacity(v.len());
    for (j, p) in v.iter().enumerate() {
        last.insert(*p, j);
    }
    let m = v.len() - 1;
    let mut s = last[&v[0]];
    let mut out = vec![v[s]];
    while s < m {
        s = last[&v[s + 1]];
        out.push(v[s]);
    }
    if path.is_tree_path() {
        LatticePath::tree(out).expect("non-empty")
    } else {
        LatticePath::from_vec_unchecked(out)
    }
}

/// Loop-erased walk from `start` run until `stop`.
pub fn sample_lerw(start: Point, stop: &StopRule, rng: &mut RandomSource) -> Result<LerwSample> {
    sample_lerw_in(&Domain::Lattice, start, stop, rng)
}

pub fn sample_lerw_in(
    domain: &Domain,
    start: Point,
    stop: &StopRule,
    rng: &mut RandomSource,
) -> Result<LerwSample> {
    let walk = srw_until_in(domain, start, stop, rng, DEFAULT_STEP_CAP)?;
    Ok(LerwSample {
        raw_steps: walk.steps() as u64,
        path: loop_erase(&walk),
        truncation: None,
    })
}

/// Approximate sample of the infinite LERW from the origin up to its first
/// exit of `B(0, l)`: erase a walk stopped on exiting `B(0, K l)` and keep
/// the part before the first exit of `B(0, l)`.
pub fn sample_infinite_lerw(l: u32, truncation_factor: u32, rng: &mut RandomSource) -> Result<LerwSample> {
    let mut sampler = InfiniteLerwSampler::new(l, truncation_factor)?;
    sampler.sample(rng)
}

/// Reusable scratch for repeated infinite-LERW samples at one `(l, K)`.
///
/// Loops are erased online: each lattice cell remembers its position on the
/// current erased path, and revisiting a cell pops everything after it. The
/// random draws are exactly those of [`srw_until`] with an exit-ball rule,
/// so the output equals `loop_erase` of the replayed walk.
pub struct InfiniteLerwSampler {
    l: u32,
    n: u32,
    cap: u64,
    slots: Slots,
    path: Vec<Point>,
}

/// Outer radius above which cell positions go in a hash map instead of a
/// dense array.
const DENSE_SLOT_RADIUS: u32 = 4096;

enum Slots {
    Dense { grid: Grid, slot: Vec<u32> },
    Sparse(HashMap<Point, u32>),
}

impl Slots {
    #[inline]
    fn get(&self, p: Point) -> u32 {
        match self {
            Slots::Dense { grid, slot } => slot[grid.index(p).unwrap()],
            Slots::Sparse(m) => m.get(&p).copied().unwrap_or(0),
        }
    }

    #[inline]
    fn set(&mut self, p: Point, v: u32) {
        match self {
            Slots::Dense { grid, slot } => slot[grid.index(p).unwrap()] = v,
            Slots::Sparse(m) => {
                if v == 0 {
                    m.remove(&p);
                } else {
                    m.insert(p, v);
                }
            }
        }
    }
}

impl InfiniteLerwSampler {
    pub fn new(l: u32, truncation_factor: u32) -> Result<Self> {
        if l < 1 {
            return Err(Error::InvalidArgument("l must be at least 1".into()));
        }
        if truncation_factor < 2 {
            return Err(Error::InvalidArgument("truncation factor must be at least 2".into()));
        }
        let n = l
            .checked_mul(truncation_factor)
            .filter(|&n| n <= (1 << 24))
            .ok_or_else(|| Error::InvalidArgument("outer radius K*l too large".into()))?;
        let slots = if n <= DENSE_SLOT_RADIUS {
            let grid = Grid::centered(n as i32);
            Slots::Dense {
                slot: vec![0; grid.len()],
                grid,
            }
        } else {
            Slots::Sparse(HashMap::new())
        };
        Ok(InfiniteLerwSampler {
            l,
            n,
            cap: DEFAULT_STEP_CAP,
            slots,
            path: Vec::new(),
        })
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    /// Erased walk run to the exit of `B(0, n)`, untruncated.
    fn erase_to_exit(&mut self, rng: &mut RandomSource) -> Result<u64> {
        match &mut self.slots {
            Slots::Dense { grid, slot } => {
                let grid = *grid;
                erase_dense(grid, slot, &mut self.path, self.n, self.cap, rng)
            }
            Slots::Sparse(_) => self.erase_sparse(rng),
        }
    }

    fn erase_sparse(&mut self, rng: &mut RandomSource) -> Result<u64> {
        let n2 = self.n as i64 * self.n as i64;
        self.path.clear();
        self.path.push(Point::ORIGIN);
        self.slots.set(Point::ORIGIN, 1);
        let mut p = Point::ORIGIN;
        let mut steps = 0u64;
        let outcome = loop {
            if steps >= self.cap {
                break Err(cap_error(self.cap, &self.path));
            }
            p = p.step(rng.direction());
            steps += 1;
            if p.norm_sq() > n2 {
                self.path.push(p);
                break Ok(steps);
            }
            let s = self.slots.get(p);
            if s != 0 {
                for q in self.path.drain(s as usize..) {
                    self.slots.set(q, 0);
                }
            } else {
                self.path.push(p);
                self.slots.set(p, self.path.len() as u32);
            }
        };
        if let Slots::Sparse(m) = &mut self.slots {
            m.clear();
        }
        outcome
    }

    pub fn sample(&mut self, rng: &mut RandomSource) -> Result<LerwSample> {
        let raw_steps = self.erase_to_exit(rng)?;
        let l2 = self.l as i64 * self.l as i64;
        let cut = self
            .path
            .iter()
            .position(|p| p.norm_sq() > l2)
            .expect("erased path ends outside B(0, n) which contains B(0, l)");
        Ok(LerwSample {
            path: LatticePath::from_vec_unchecked(self.path[..=cut].to_vec()),
            raw_steps,
            truncation: Some((self.l, self.n)),
        })
    }

    /// Number of steps of the sample up to its first exit of `B(0, l)`,
    /// without materializing the path.
    pub fn sample_length(&mut self, rng: &mut RandomSource) -> Result<u64> {
        self.erase_to_exit(rng)?;
        let l2 = self.l as i64 * self.l as i64;
        let cut = self.path.iter().position(|p| p.norm_sq() > l2).unwrap();
        Ok(cut as u64)
    }

    /// The full erased path to the exit of `B(0, K l)`, as used for spines.
    pub fn sample_full(&mut self, rng: &mut RandomSource) -> Result<LerwSample> {
        let raw_steps = self.erase_to_exit(rng)?;
        Ok(LerwSample {
            path: LatticePath::from_vec_unchecked(self.path.clone()),
            raw_steps,
            truncation: Some((self.n, self.n)),
        })
    }
}

fn cap_error(cap: u64, path: &[Point]) -> Error {
    Error::CapExceeded {
        cap,
        start: Point::ORIGIN,
        partial: Box::new(LatticePath::from_vec_unchecked(path.to_vec())),
    }
}

fn erase_dense(
    grid: Grid,
    slot: &mut [u32],
    path: &mut Vec<Point>,
    n: u32,
    cap: u64,
    rng: &mut RandomSource,
) -> Result<u64> {
    let n2 = n as i64 * n as i64;
    let off = grid.offsets();
    path.clear();
    path.push(Point::ORIGIN);
    let mut idx = grid.index(Point::ORIGIN).unwrap();
    slot[idx] = 1;
    let mut p = Point::ORIGIN;
    let mut steps = 0u64;
    let outcome = loop {
        if steps >= cap {
            break Err(cap_error(cap, path));
        }
        let d = rng.direction();
        p = p.step(d);
        steps += 1;
        if p.norm_sq() > n2 {
            path.push(p);
            break Ok(steps);
        }
        idx = (idx as isize + off[d as usize]) as usize;
        let s = slot[idx];
        if s != 0 {
            for q in path.drain(s as usize..) {
                slot[grid.index(q).unwrap()] = 0;
            }
        } else {
            path.push(p);
            slot[idx] = path.len() as u32;
        }
    };
    for q in path.iter() {
        if let Some(qi) = grid.index(*q) {
            slot[qi] = 0;
        }
    }
    outcome
}

/// Number of steps of the path, or with `subregion` the number of path
/// vertices inside it.
pub fn measure_lerw_lengths(sample: &LerwSample, subregion: Option<&LatticeRegion>) -> usize {
    match subregion {
        None => sample.path.steps(),
        Some(d) => sample.path.vertices().iter().filter(|p| d.contains(**p)).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::euclidean_ball;
    use proptest::prelude::*;

    fn path(v: &[(i32, i32)]) -> LatticePath {
        LatticePath::new(v.iter().map(|&p| p.into()).collect()).unwrap()
    }

    /// Literal evaluation of the s_i maxima by scanning.
    fn loop_erase_scan(v: &[Point]) -> Vec<Point> {
        let m = v.len() - 1;
        let last_visit = |p: Point| (0..=m).rev().find(|&j| v[j] == p).unwrap();
        let mut s = last_visit(v[0]);
        let mut out = vec![v[s]];
        while s != m {
            s = last_visit(v[s + 1]);
            out.push(v[s]);
        }
        out
    }

    #[test]
    fn loop_erase_hand_traces() {
        let got = loop_erase(&path(&[(0, 0), (1, 0), (0, 0), (0, 1)]));
        assert_eq!(got, path(&[(0, 0), (0, 1)]));
        let got = loop_erase(&path(&[(0, 0), (1, 0), (0, 0)]));
        assert_eq!(got, path(&[(0, 0)]));
        let sa = path(&[(0, 0), (1, 0), (1, 1), (2, 1)]);
        assert_eq!(loop_erase(&sa), sa);
    }

    #[test]
    fn srw_trivial_stops() {
        let mut rng = RandomSource::new(1, 0);
        let p = srw_until(Point::ORIGIN, &StopRule::FixedSteps(0), &mut rng).unwrap();
        assert_eq!(p.vertices(), &[Point::ORIGIN]);
        let p = srw_until(Point::ORIGIN, &StopRule::ExitBall(0.0), &mut rng).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.last().is_adjacent(Point::ORIGIN));
    }

    #[test]
    fn stop_times_start_at_one() {
        // Started on the target point, the walk must leave and come back.
        let mut rng = RandomSource::new(2, 0);
        for _ in 0..50 {
            let Ok(p) = srw_until_in(&Domain::Lattice, Point::ORIGIN, &StopRule::HitPoint(Point::ORIGIN), &mut rng, 1_000_000) else {
                continue;
            };
            assert!(p.len() >= 3);
            assert_eq!(p.last(), Point::ORIGIN);
        }
    }

    #[test]
    fn cap_exceeded_is_loud() {
        let mut rng = RandomSource::new(3, 0);
        let far = StopRule::HitPoint(Point::new(1000, 1000));
        let err = srw_until_in(&Domain::Lattice, Point::ORIGIN, &far, &mut rng, 100).unwrap_err();
        match err {
            Error::CapExceeded { cap, partial, .. } => {
                assert_eq!(cap, 100);
                assert_eq!(partial.len(), 101);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn exit_ball_endpoint_outside() {
        let mut rng = RandomSource::new(4, 0);
        for _ in 0..200 {
            let s = sample_lerw(Point::ORIGIN, &StopRule::ExitBall(5.0), &mut rng).unwrap();
            let v = s.path.vertices();
            assert!(v.last().unwrap().norm_sq() > 25);
            assert!(v[..v.len() - 1].iter().all(|p| p.norm_sq() <= 25));
            assert!(s.path.is_self_avoiding());
        }
    }

    #[test]
    fn hit_neighbor_lerw() {
        let mut rng = RandomSource::new(5, 0);
        let w = Point::new(1, 0);
        for _ in 0..100 {
            // hitting times in the plane are heavy-tailed; skip the rare monsters
            let Ok(walk) = srw_until_in(&Domain::Lattice, Point::ORIGIN, &StopRule::HitPoint(w), &mut rng, 1_000_000) else {
                continue;
            };
            let lerw = loop_erase(&walk);
            assert!(lerw.is_self_avoiding());
            assert_eq!(lerw.last(), w);
            let n = walk.len();
            if walk.vertices()[n - 2] == Point::ORIGIN {
                assert_eq!(lerw.vertices(), &[Point::ORIGIN, w]);
            }
        }
    }

    #[test]
    fn lerw_matches_replayed_walk_on_box() {
        let b = LatticeRegion::square(Point::ORIGIN, 1);
        let rule = StopRule::ExitRegion(b);
        for s in 0..500 {
            let mut a = RandomSource::new(11, s);
            let mut b = RandomSource::new(11, s);
            let sample = sample_lerw(Point::ORIGIN, &rule, &mut a).unwrap();
            let walk = srw_until(Point::ORIGIN, &rule, &mut b).unwrap();
            assert_eq!(sample.path.vertices(), loop_erase_scan(walk.vertices()).as_slice());
            assert_eq!(sample.raw_steps, walk.steps() as u64);
        }
    }

    #[test]
    fn infinite_lerw_matches_definition() {
        for s in 0..300 {
            let (l, k) = (3 + (s % 4) as u32, 2 + (s % 3) as u32);
            let mut a = RandomSource::new(12, s);
            let mut b = RandomSource::new(12, s);
            let fast = sample_infinite_lerw(l, k, &mut a).unwrap();
            let walk = srw_until(Point::ORIGIN, &StopRule::ExitBall((k * l) as f64), &mut b).unwrap();
            let erased = loop_erase_scan(walk.vertices());
            let cut = erased.iter().position(|p| p.norm_sq() > (l * l) as i64).unwrap();
            assert_eq!(fast.path.vertices(), &erased[..=cut]);
            assert_eq!(fast.raw_steps, walk.steps() as u64);
            assert_eq!(fast.truncation, Some((l, k * l)));
            // reused scratch gives the same answer
            let mut sampler = InfiniteLerwSampler::new(l, k).unwrap();
            let mut c = RandomSource::new(12, s);
            assert_eq!(sampler.sample(&mut c).unwrap(), fast);
        }
    }

    #[test]
    fn infinite_lerw_small_cases() {
        let mut rng = RandomSource::new(6, 0);
        let s = sample_infinite_lerw(1, 4, &mut rng).unwrap();
        assert!(s.path.steps() >= 1);
        assert!(s.path.last().norm_sq() > 1);
        let a = sample_infinite_lerw(8, 4, &mut RandomSource::new(9, 9)).unwrap();
        let b = sample_infinite_lerw(8, 4, &mut RandomSource::new(9, 9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_infinite_lerw(0, 4, &mut rng).is_err());
        assert!(sample_infinite_lerw(4, 1, &mut rng).is_err());
    }

    #[test]
    fn measure_lengths() {
        let one = LerwSample {
            path: LatticePath::single(Point::ORIGIN),
            raw_steps: 0,
            truncation: None,
        };
        assert_eq!(measure_lerw_lengths(&one, None), 0);
        let five = LerwSample {
            path: path(&[(0, 0), (1, 0), (1, 1), (0, 1), (-1, 1)]),
            raw_steps: 9,
            truncation: None,
        };
        let ball = euclidean_ball(Point::ORIGIN, 2.0);
        assert_eq!(measure_lerw_lengths(&five, Some(&ball)), 5);
        assert_eq!(measure_lerw_lengths(&five, None), 4);
    }

    #[test]
    fn window_walk_stays_inside() {
        let w = LatticeRegion::square(Point::ORIGIN, 1);
        let mut rng = RandomSource::new(7, 0);
        let p = srw_until_in(
            &Domain::Window(w.clone()),
            Point::new(-1, -1),
            &StopRule::HitPoint(Point::new(1, 1)),
            &mut rng,
            DEFAULT_STEP_CAP,
        )
        .unwrap();
        assert!(p.vertices().iter().all(|q| w.contains(*q)));
    }

    proptest! {
        #[test]
        fn erasure_properties(seed in 0u64..10_000, len in 0u64..200) {
            let mut rng = RandomSource::new(seed, 1);
            let walk = srw_until(Point::ORIGIN, &StopRule::FixedSteps(len), &mut rng).unwrap();
            for w in walk.vertices().windows(2) {
                prop_assert!(w[0].is_adjacent(w[1]));
            }
            let e = loop_erase(&walk);
            let scanned = loop_erase_scan(walk.vertices());
            prop_assert_eq!(e.vertices(), scanned.as_slice());
            prop_assert!(e.is_self_avoiding());
            prop_assert_eq!(e.first(), walk.first());
            prop_assert_eq!(e.last(), walk.last());
            prop_assert_eq!(loop_erase(&e), e.clone());
            // order-preserving subsequence
            let v = walk.vertices();
            let mut j = 0;
            for p in e.vertices() {
                while v[j] != *p { j += 1; }
                j += 1;
            }
        }
    }
}
