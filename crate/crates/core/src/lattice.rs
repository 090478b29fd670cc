//! Geometry of the square lattice: points, nearest-neighbor paths, regions
//! and their boundaries.
//!
//! Coordinates are confined to `|x|, |y| <= 2^30` so that squared norms and
//! differences always fit in an `i64`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COORD_LIMIT: i32 = 1 << 30;

/// The four lattice directions, in the fixed order used everywhere: E, N, W, S.
pub const DIRECTIONS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

#[inline]
pub fn opposite(dir: u8) -> u8 {
    (dir + 2) & 3
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0, y: 0 };

    #[inline]
    pub const fn new(x: i32, y: i32) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn norm_sq(self) -> i64 {
        let (x, y) = (self.x as i64, self.y as i64);
        x * x + y * y
    }

    #[inline]
    pub fn dist_sq(self, other: Point) -> i64 {
        let dx = self.x as i64 - other.x as i64;
        let dy = self.y as i64 - other.y as i64;
        dx * dx + dy * dy
    }

    pub fn norm(self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    #[inline]
    pub fn step(self, dir: u8) -> Point {
        let (dx, dy) = DIRECTIONS[dir as usize];
        Point::new(self.x + dx, self.y + dy)
    }

    /// Direction code `d` with `self.step(d) == other`, if the points are adjacent.
    pub fn direction_to(self, other: Point) -> Option<u8> {
        let delta = (other.x - self.x, other.y - self.y);
        DIRECTIONS.iter().position(|&d| d == delta).map(|d| d as u8)
    }

    pub fn is_adjacent(self, other: Point) -> bool {
        self.dist_sq(other) == 1
    }

    pub fn in_safe_range(self) -> bool {
        self.x.abs() <= COORD_LIMIT && self.y.abs() <= COORD_LIMIT
    }

    /// Parses the `"x y"` serialization.
    pub fn parse_xy(s: &str) -> Option<Point> {
        let mut it = s.split_whitespace();
        let x = it.next()?.parse().ok()?;
        let y = it.next()?.parse().ok()?;
        if it.next().is_some() {
            return None;
        }
        Some(Point::new(x, y))
    }

    pub fn xy(self) -> String {
        format!("{} {}", self.x, self.y)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl From<(i32, i32)> for Point {
    fn from((x, y): (i32, i32)) -> Self {
        Point::new(x, y)
    }
}

/// Nearest neighbors of `p` in E, N, W, S order.
pub fn neighbors(p: Point) -> [Point; 4] {
    [p.step(0), p.step(1), p.step(2), p.step(3)]
}

/// A non-empty sequence of lattice points. Consecutive points are nearest
/// neighbors unless the path is flagged as a tree path.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticePath {
    vertices: Vec<Point>,
    tree_path: bool,
}

impl LatticePath {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidArgument("empty path".into()));
        }
        if let Some(w) = vertices.windows(2).find(|w| !w[0].is_adjacent(w[1])) {
            return Err(Error::InvalidArgument(format!(
                "path steps from {} to {}, which are not nearest neighbors",
                w[0], w[1]
            )));
        }
        Ok(LatticePath {
            vertices,
            tree_path: false,
        })
    }

    /// A path whose consecutive vertices are adjacent in some tree rather than
    /// necessarily in the lattice.
    pub fn tree(vertices: Vec<Point>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidArgument("empty path".into()));
        }
        Ok(LatticePath {
            vertices,
            tree_path: true,
        })
    }

    pub(crate) fn from_vec_unchecked(vertices: Vec<Point>) -> Self {
        debug_assert!(!vertices.is_empty());
        LatticePath {
            vertices,
            tree_path: false,
        }
    }

    pub fn single(p: Point) -> Self {
        LatticePath {
            vertices: vec![p],
            tree_path: false,
        }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point> {
        self.vertices
    }

    pub fn is_tree_path(&self) -> bool {
        self.tree_path
    }

    /// Number of vertices.
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of steps, `len() - 1`.
    pub fn steps(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn first(&self) -> Point {
        self.vertices[0]
    }

    pub fn last(&self) -> Point {
        *self.vertices.last().expect("paths are non-empty")
    }

    pub fn is_self_avoiding(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.vertices.len());
        self.vertices.iter().all(|p| seen.insert(*p))
    }

    /// One `"x y"` line per vertex.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in &self.vertices {
            writeln!(w, "{} {}", p.x, p.y)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut vertices = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p = Point::parse_xy(&line).ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected \"x y\", got {line:?}"),
            })?;
            vertices.push(p);
        }
        LatticePath::new(vertices)
    }
}

/// A finite set of lattice points, stored either as a descriptor or explicitly.
#[derive(Clone, Debug, PartialEq)]
pub enum LatticeRegion {
    /// Closed Euclidean ball `{y : |y - center| <= radius}`.
    Ball { center: Point, radius: f64 },
    /// Axis-aligned box with inclusive corners.
    Rect { min: Point, max: Point },
    Set(BTreeSet<Point>),
}

impl LatticeRegion {
    pub fn rect(min: Point, max: Point) -> Self {
        LatticeRegion::Rect { min, max }
    }

    /// Box of side `2h + 1` centred at `c`.
    pub fn square(c: Point, h: i32) -> Self {
        LatticeRegion::Rect {
            min: Point::new(c.x - h, c.y - h),
            max: Point::new(c.x + h, c.y + h),
        }
    }

    pub fn from_points<I: IntoIterator<Item = Point>>(points: I) -> Self {
        LatticeRegion::Set(points.into_iter().collect())
    }

    /// Largest squared distance admitted by a ball of the given radius.
    fn ball_max_d2(radius: f64) -> i64 {
        (radius * radius).floor() as i64
    }

    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        match self {
            LatticeRegion::Ball { center, radius } => p.dist_sq(*center) <= Self::ball_max_d2(*radius),
            LatticeRegion::Rect { min, max } => {
                p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y
            }
            LatticeRegion::Set(s) => s.contains(&p),
        }
    }

    /// Inclusive bounding box, `None` for the empty region.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        match self {
            LatticeRegion::Ball { center, radius } => {
                if *radius < 0.0 {
                    return None;
                }
                let h = radius.floor() as i32;
                Some((
                    Point::new(center.x - h, center.y - h),
                    Point::new(center.x + h, center.y + h),
                ))
            }
            LatticeRegion::Rect { min, max } => {
                (min.x <= max.x && min.y <= max.y).then_some((*min, *max))
            }
            LatticeRegion::Set(s) => {
                let first = s.iter().next()?;
                let mut lo = *first;
                let mut hi = *first;
                for p in s {
                    lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
                    hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
                }
                Some((lo, hi))
            }
        }
    }

    /// Members in raster order (by `y`, then `x`).
    pub fn points(&self) -> Vec<Point> {
        match self {
            LatticeRegion::Set(s) => {
                let mut v: Vec<Point> = s.iter().copied().collect();
                v.sort_by_key(|p| (p.y, p.x));
                v
            }
            _ => {
                let Some((lo, hi)) = self.bounds() else {
                    return Vec::new();
                };
                let mut v = Vec::new();
                for y in lo.y..=hi.y {
                    for x in lo.x..=hi.x {
                        let p = Point::new(x, y);
                        if self.contains(p) {
                            v.push(p);
                        }
                    }
                }
                v
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LatticeRegion::Set(s) => s.len(),
            _ => self.points().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn materialize(&self) -> BTreeSet<Point> {
        self.points().into_iter().collect()
    }
}

/// Lattice points within Euclidean distance `r` of `center`.
pub fn euclidean_ball(center: Point, r: f64) -> LatticeRegion {
    assert!(r >= 0.0, "ball radius must be nonnegative");
    LatticeRegion::Ball { center, radius: r }
}

/// Points outside `d` with a nearest neighbor in `d`.
pub fn outer_boundary(d: &LatticeRegion) -> LatticeRegion {
    let mut out = BTreeSet::new();
    for p in d.points() {
        for q in neighbors(p) {
            if !d.contains(q) {
                out.insert(q);
            }
        }
    }
    LatticeRegion::Set(out)
}

/// Points of `d` with a nearest neighbor outside `d`.
pub fn inner_boundary(d: &LatticeRegion) -> LatticeRegion {
    LatticeRegion::Set(
        d.points()
            .into_iter()
            .filter(|&p| neighbors(p).iter().any(|&q| !d.contains(q)))
            .collect(),
    )
}

/// Dense row-major indexing of a rectangle of the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub min: Point,
    pub width: usize,
    pub height: usize,
}

impl Grid {
    pub fn new(min: Point, max: Point) -> Self {
        assert!(max.x >= min.x && max.y >= min.y);
        Grid {
            min,
            width: (max.x - min.x + 1) as usize,
            height: (max.y - min.y + 1) as usize,
        }
    }

    /// Square grid `[-h, h]^2`.
    pub fn centered(h: i32) -> Self {
        Grid::new(Point::new(-h, -h), Point::new(h, h))
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max(&self) -> Point {
        Point::new(
            self.min.x + self.width as i32 - 1,
            self.min.y + self.height as i32 - 1,
        )
    }

    #[inline]
    pub fn index(&self, p: Point) -> Option<usize> {
        let dx = p.x as i64 - self.min.x as i64;
        let dy = p.y as i64 - self.min.y as i64;
        if dx < 0 || dy < 0 || dx >= self.width as i64 || dy >= self.height as i64 {
            None
        } else {
            Some(dy as usize * self.width + dx as usize)
        }
    }

    #[inline]
    pub fn point(&self, idx: usize) -> Point {
        Point::new(
            self.min.x + (idx % self.width) as i32,
            self.min.y + (idx / self.width) as i32,
        )
    }

    /// Index offsets of the four directions.
    pub fn offsets(&self) -> [isize; 4] {
        let w = self.width as isize;
        [1, w, -1, -w]
    }
}
