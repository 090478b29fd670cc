//! Uniform spanning trees on lattice windows.
//!
//! A [`TreeWindow`] stores a rootward parent pointer for every sampled
//! lattice cell as a direction code, plus a per-cell mask of tree edges.
//! Three cell states besides "has a parent" are distinguished: roots,
//! cells known not to be vertices, and cells whose parent was never sampled.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{FiniteGraph, SpanningTree};
use crate::lattice::{euclidean_ball, opposite, Grid, LatticePath, LatticeRegion, Point};
use crate::rng::RandomSource;
use crate::walker::InfiniteLerwSampler;

pub(crate) const ROOT: u8 = 4;
pub(crate) const ABSENT: u8 = 5;
pub(crate) const UNKNOWN: u8 = 6;

/// Mask bits `4 + d`: the neighbor in direction `d` has not been sampled.
pub(crate) const UNKNOWN_SHIFT: u8 = 4;

pub const DEFAULT_BOX_FACTOR: u32 = 8;
pub const DEFAULT_SPINE_TRUNCATION: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RootKind {
    FiniteRoot,
    WiredBoundary,
    InfiniteLerwSpine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeMethod {
    /// Wilson's algorithm rooted at the wired boundary of `B(0, K r)`.
    Wired,
    /// Infinite-LERW spine from the origin, then Wilson fill against the
    /// spine and the wired boundary.
    Spine,
    /// A tree on an explicit finite vertex set.
    Finite,
}

impl fmt::Display for TreeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeMethod::Wired => "wired",
            TreeMethod::Spine => "spine",
            TreeMethod::Finite => "finite",
        })
    }
}

impl FromStr for TreeMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wired" => Ok(TreeMethod::Wired),
            "spine" => Ok(TreeMethod::Spine),
            "finite" => Ok(TreeMethod::Finite),
            _ => Err(Error::InvalidArgument(format!("unknown tree method {s:?}"))),
        }
    }
}

/// Which box vertices Wilson's algorithm processes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    /// Every vertex of `B(0, K r)`.
    #[default]
    Full,
    /// Only `B(0, r + 1)`. By order-independence of Wilson's algorithm the
    /// tree restricted to the trusted window, including all degrees there,
    /// has the same law as under `Full`.
    Window,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowConfig {
    pub r: u32,
    pub k: u32,
    pub method: TreeMethod,
    pub fill: Fill,
    /// Truncation factor of the spine's infinite-LERW sampler.
    pub spine_truncation: u32,
}

impl WindowConfig {
    pub fn wired(r: u32, k: u32) -> Self {
        WindowConfig {
            r,
            k,
            method: TreeMethod::Wired,
            fill: Fill::Full,
            spine_truncation: DEFAULT_SPINE_TRUNCATION,
        }
    }

    pub fn spine(r: u32, k: u32) -> Self {
        WindowConfig {
            method: TreeMethod::Spine,
            ..WindowConfig::wired(r, k)
        }
    }

    pub fn with_fill(mut self, fill: Fill) -> Self {
        self.fill = fill;
        self
    }

    pub fn box_radius(&self) -> u32 {
        self.r * self.k
    }
}

/// Provenance recorded in the tree file header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeHeader {
    pub r: u32,
    pub k: u32,
    pub method: TreeMethod,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TreeWindow {
    grid: Grid,
    code: Vec<u8>,
    mask: Vec<u8>,
    trusted: LatticeRegion,
    root_kind: RootKind,
    spine: Option<LatticePath>,
    header: TreeHeader,
}

impl PartialEq for TreeWindow {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.code == other.code
            && self.trusted == other.trusted
            && self.root_kind == other.root_kind
            && self.header == other.header
    }
}

impl TreeWindow {
    fn from_codes(
        grid: Grid,
        code: Vec<u8>,
        trusted: LatticeRegion,
        root_kind: RootKind,
        spine: Option<LatticePath>,
        header: TreeHeader,
    ) -> Self {
        let mut mask = vec![0u8; grid.len()];
        let off = grid.offsets();
        for i in 0..grid.len() {
            let c = code[i];
            if c >= ABSENT {
                continue;
            }
            let p = grid.point(i);
            for d in 0..4u8 {
                let ncode = grid.index(p.step(d)).map_or(ABSENT, |j| code[j]);
                if ncode == UNKNOWN {
                    mask[i] |= 1 << (UNKNOWN_SHIFT + d);
                }
            }
            if c < ROOT {
                let j = (i as isize + off[c as usize]) as usize;
                mask[i] |= 1 << c;
                mask[j] |= 1 << opposite(c);
            }
        }
        TreeWindow {
            grid,
            code,
            mask,
            trusted,
            root_kind,
            spine,
            header,
        }
    }

    /// Builds a tree from `(vertex, parent)` pairs; roots map to themselves.
    /// Cells not listed are treated as non-vertices.
    pub fn from_parent_pairs<I>(pairs: I, root_kind: RootKind, header: TreeHeader) -> Result<Self>
    where
        I: IntoIterator<Item = (Point, Point)>,
    {
        let pairs: Vec<(Point, Point)> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::InvalidGraph("tree has no vertices".into()));
        }
        let mut lo = pairs[0].0;
        let mut hi = lo;
        for (p, _) in &pairs {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let grid = Grid::new(lo, hi);
        let trusted = LatticeRegion::rect(lo, hi);
        let code = fill_codes(grid, &pairs, |_| ABSENT)?;
        let t = TreeWindow::from_codes(grid, code, trusted, root_kind, None, header);
        t.check_acyclic()?;
        Ok(t)
    }

    /// Places a spanning tree of a lattice-labelled graph on the lattice.
    pub fn from_spanning_tree(g: &FiniteGraph, t: &SpanningTree) -> Result<Self> {
        let labels = g
            .labels()
            .ok_or_else(|| Error::InvalidArgument("graph vertices carry no lattice labels".into()))?;
        let header = TreeHeader {
            r: 0,
            k: 0,
            method: TreeMethod::Finite,
            seed: 0,
        };
        TreeWindow::from_parent_pairs(
            (0..g.len()).map(|v| (labels[v], labels[t.parent[v]])),
            RootKind::FiniteRoot,
            header,
        )
    }

    /// The path `(-m, 0), ..., (m, 0)` rooted at its left end.
    pub fn segment(m: i32) -> Self {
        let pairs = (-m..=m).map(|x| (Point::new(x, 0), Point::new((x - 1).max(-m), 0)));
        let header = TreeHeader {
            r: m as u32,
            k: 1,
            method: TreeMethod::Finite,
            seed: 0,
        };
        TreeWindow::from_parent_pairs(pairs, RootKind::FiniteRoot, header).expect("segments are trees")
    }

    fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on current chain, 2 = reaches a root
        let mut state = vec![0u8; self.grid.len()];
        let off = self.grid.offsets();
        let mut chain = Vec::new();
        for start in 0..self.grid.len() {
            if self.code[start] >= ABSENT || state[start] != 0 {
                continue;
            }
            chain.clear();
            let mut u = start;
            loop {
                if state[u] == 2 {
                    break;
                }
                if state[u] == 1 {
                    return Err(Error::InvalidGraph(format!(
                        "parent pointers cycle through {}",
                        self.grid.point(u)
                    )));
                }
                state[u] = 1;
                chain.push(u);
                match self.code[u] {
                    ROOT => break,
                    c if c < ROOT => u = (u as isize + off[c as usize]) as usize,
                    _ => {
                        return Err(Error::InvalidGraph(format!(
                            "{} has a parent outside the tree",
                            self.grid.point(chain[chain.len() - 2])
                        )))
                    }
                }
            }
            for &c in &chain {
                state[c] = 2;
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn trusted(&self) -> &LatticeRegion {
        &self.trusted
    }

    pub fn root_kind(&self) -> RootKind {
        self.root_kind
    }

    pub fn spine(&self) -> Option<&LatticePath> {
        self.spine.as_ref()
    }

    pub fn header(&self) -> &TreeHeader {
        &self.header
    }

    pub(crate) fn masks(&self) -> &[u8] {
        &self.mask
    }

    fn code_of(&self, p: Point) -> u8 {
        self.grid.index(p).map_or(ABSENT, |i| self.code[i])
    }

    /// Whether `p` is a vertex whose parent is known.
    pub fn is_sampled(&self, p: Point) -> bool {
        self.code_of(p) <= ROOT
    }

    pub fn is_root(&self, p: Point) -> bool {
        self.code_of(p) == ROOT
    }

    pub fn parent(&self, p: Point) -> Option<Point> {
        let c = self.code_of(p);
        (c < ROOT).then(|| p.step(c))
    }

    /// Number of tree edges at `p`.
    pub fn degree(&self, p: Point) -> u32 {
        self.grid
            .index(p)
            .map_or(0, |i| (self.mask[i] & 0x0f).count_ones())
    }

    /// Whether every edge at `p` is known.
    pub fn degree_is_exact(&self, p: Point) -> bool {
        self.is_sampled(p) && self.grid.index(p).is_some_and(|i| self.mask[i] >> UNKNOWN_SHIFT == 0)
    }

    /// Tree neighbors of `p` in E, N, W, S order.
    pub fn tree_neighbors(&self, p: Point) -> Vec<Point> {
        let Some(i) = self.grid.index(p) else {
            return Vec::new();
        };
        (0..4u8).filter(|d| self.mask[i] & (1 << d) != 0).map(|d| p.step(d)).collect()
    }

    /// Sampled vertices in raster order.
    pub fn vertices(&self) -> Vec<Point> {
        (0..self.grid.len())
            .filter(|&i| self.code[i] <= ROOT)
            .map(|i| self.grid.point(i))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.code.iter().filter(|&&c| c < ROOT).count()
    }

    /// `p` followed by its ancestors up to its root.
    pub fn rootward(&self, p: Point) -> Result<Vec<Point>> {
        if !self.is_sampled(p) {
            return Err(Error::OutsideDomain(p));
        }
        let mut out = vec![p];
        let mut u = p;
        while let Some(q) = self.parent(u) {
            out.push(q);
            u = q;
        }
        Ok(out)
    }

    /// First common vertex of the rootward chains of `x` and `y`.
    pub fn meeting_point(&self, x: Point, y: Point) -> Result<Point> {
        let (a, ia, _) = self.meet(x, y)?;
        Ok(a[ia])
    }

    fn meet(&self, x: Point, y: Point) -> Result<(Vec<Point>, usize, Vec<Point>)> {
        let a = self.rootward(x)?;
        if !self.is_sampled(y) {
            return Err(Error::OutsideDomain(y));
        }
        let pos: HashMap<Point, usize> = a.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let mut b = Vec::new();
        let mut u = y;
        loop {
            if let Some(&i) = pos.get(&u) {
                return Ok((a, i, b));
            }
            b.push(u);
            match self.parent(u) {
                Some(q) => u = q,
                None => return Err(Error::DifferentComponents(x, y)),
            }
        }
    }

    /// The unique tree path from `x` to `y`.
    pub fn tree_path(&self, x: Point, y: Point) -> Result<LatticePath> {
        let (mut a, ia, b) = self.meet(x, y)?;
        a.truncate(ia + 1);
        a.extend(b.into_iter().rev());
        LatticePath::new(a)
    }

    /// Writes the text format: a header line, then `x y px py` per sampled
    /// vertex in raster order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let h = &self.header;
        writeln!(
            w,
            "ust-window v1 r={} K={} method={} seed={}",
            h.r, h.k, h.method, h.seed
        )?;
        for i in 0..self.grid.len() {
            let c = self.code[i];
            if c > ROOT {
                continue;
            }
            let p = self.grid.point(i);
            let q = if c == ROOT { p } else { p.step(c) };
            writeln!(w, "{} {} {} {}", p.x, p.y, q.x, q.y)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })??;
        let header = parse_header(&first)?;
        let mut pairs = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: i + 2,
                msg: format!("expected \"x y px py\", got {line:?}"),
            };
            let nums: Vec<i32> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if nums.len() != 4 {
                return Err(bad());
            }
            pairs.push((Point::new(nums[0], nums[1]), Point::new(nums[2], nums[3])));
        }
        match header.method {
            TreeMethod::Finite => {
                TreeWindow::from_parent_pairs(pairs, RootKind::FiniteRoot, header)
            }
            TreeMethod::Wired | TreeMethod::Spine => {
                let l = header.r as i64 * header.k as i64;
                let grid = Grid::centered(l as i32 + 1);
                let l2 = l * l;
                let code = fill_codes(grid, &pairs, |p| {
                    if p.norm_sq() <= l2 {
                        UNKNOWN
                    } else {
                        ABSENT
                    }
                })?;
                let (kind, spine) = if header.method == TreeMethod::Spine {
                    (RootKind::InfiniteLerwSpine, None)
                } else {
                    (RootKind::WiredBoundary, None)
                };
                let mut t = TreeWindow::from_codes(
                    grid,
                    code,
                    euclidean_ball(Point::ORIGIN, header.r as f64),
                    kind,
                    spine,
                    header,
                );
                t.check_acyclic()?;
                if kind == RootKind::InfiniteLerwSpine {
                    t.spine = Some(LatticePath::new(t.rootward(Point::ORIGIN)?)?);
                }
                Ok(t)
            }
        }
    }
}

fn parse_header(line: &str) -> Result<TreeHeader> {
    let err = |msg: String| Error::Parse { line: 1, msg };
    let mut it = line.split_whitespace();
    if it.next() != Some("ust-window") || it.next() != Some("v1") {
        return Err(err(format!("bad header {line:?}")));
    }
    let mut field = |key: &str| -> Result<String> {
        let tok = it.next().ok_or_else(|| err(format!("missing {key}")))?;
        tok.strip_prefix(key)
            .and_then(|t| t.strip_prefix('='))
            .map(str::to_owned)
            .ok_or_else(|| err(format!("expected {key}=..., got {tok:?}")))
    };
    let num = |s: String| s.parse::<u64>().map_err(|_| err(format!("bad number {s:?}")));
    let r = num(field("r")?)? as u32;
    let k = num(field("K")?)? as u32;
    let method = field("method")?.parse()?;
    let seed = num(field("seed")?)?;
    Ok(TreeHeader { r, k, method, seed })
}

fn fill_codes(grid: Grid, pairs: &[(Point, Point)], default: impl Fn(Point) -> u8) -> Result<Vec<u8>> {
    let mut code: Vec<u8> = (0..grid.len()).map(|i| default(grid.point(i))).collect();
    for &(p, q) in pairs {
        let i = grid
            .index(p)
            .ok_or_else(|| Error::InvalidGraph(format!("vertex {p} outside the grid")))?;
        code[i] = if p == q {
            ROOT
        } else {
            p.direction_to(q)
                .ok_or_else(|| Error::InvalidGraph(format!("parent {q} of {p} is not a lattice neighbor")))?
        };
    }
    Ok(code)
}

/// Samples a spanning tree of `B(0, K r)` whose restriction to `B(0, r)`
/// approximates the uniform spanning tree of the whole lattice.
///
/// The outer boundary of the box is wired: each of its cells is a root.
/// With [`TreeMethod::Spine`] the branch from the origin is first laid down
/// as an infinite-LERW sample up to the exit of the box. Remaining vertices
/// are processed in raster order.
pub fn sample_ust_window(cfg: &WindowConfig, rng: &mut RandomSource) -> Result<TreeWindow> {
    if cfg.r < 1 {
        return Err(Error::InvalidArgument("window radius must be at least 1".into()));
    }
    if cfg.k < 4 {
        return Err(Error::InvalidArgument("box factor K must be at least 4".into()));
    }
    let l = cfg
        .r
        .checked_mul(cfg.k)
        .filter(|&l| l <= 1 << 14)
        .ok_or_else(|| Error::InvalidArgument("box radius K*r too large".into()))? as i64;
    let l2 = l * l;
    let grid = Grid::centered(l as i32 + 1);
    let mut code = vec![UNKNOWN; grid.len()];
    for (i, c) in code.iter_mut().enumerate() {
        let p = grid.point(i);
        if p.norm_sq() > l2 {
            let touches = crate::lattice::neighbors(p).iter().any(|q| q.norm_sq() <= l2);
            *c = if touches { ROOT } else { ABSENT };
        }
    }
    let off = grid.offsets();

    let (root_kind, spine) = match cfg.method {
        TreeMethod::Wired => (RootKind::WiredBoundary, None),
        TreeMethod::Spine => {
            let mut sampler = InfiniteLerwSampler::new(l as u32, cfg.spine_truncation)?;
            let sample = sampler.sample(rng)?;
            let v = sample.path.vertices();
            for w in v.windows(2) {
                let i = grid.index(w[0]).unwrap();
                code[i] = w[0].direction_to(w[1]).unwrap();
            }
            (RootKind::InfiniteLerwSpine, Some(sample.path))
        }
        TreeMethod::Finite => {
            return Err(Error::InvalidArgument("finite trees are built from explicit graphs".into()))
        }
    };

    let mut next = vec![0u8; grid.len()];
    let mut wilson_from = |start: usize, code: &mut [u8], rng: &mut RandomSource| {
        let mut u = start;
        while code[u] == UNKNOWN {
            let d = rng.direction();
            next[u] = d;
            u = (u as isize + off[d as usize]) as usize;
        }
        let mut u = start;
        while code[u] == UNKNOWN {
            let d = next[u];
            code[u] = d;
            u = (u as isize + off[d as usize]) as usize;
        }
    };

    let inner = (cfg.r as i64 + 1).pow(2);
    let h = cfg.r as i32 + 1;
    for y in -h..=h {
        for x in -h..=h {
            let p = Point::new(x, y);
            if p.norm_sq() <= inner.min(l2) {
                wilson_from(grid.index(p).unwrap(), &mut code, rng);
            }
        }
    }
    if cfg.fill == Fill::Full {
        for i in 0..grid.len() {
            if code[i] == UNKNOWN {
                wilson_from(i, &mut code, rng);
            }
        }
    }

    let header = TreeHeader {
        r: cfg.r,
        k: cfg.k,
        method: cfg.method,
        seed: rng.seed(),
    };
    Ok(TreeWindow::from_codes(
        grid,
        code,
        euclidean_ball(Point::ORIGIN, cfg.r as f64),
        root_kind,
        spine,
        header,
    ))
}

/// Convenience wrapper matching the free-function form of [`TreeWindow::tree_path`].
pub fn tree_path(tree: &TreeWindow, x: Point, y: Point) -> Result<LatticePath> {
    tree.tree_path(x, y)
}

pub fn meeting_point(tree: &TreeWindow, x: Point, y: Point) -> Result<Point> {
    tree.meeting_point(x, y)
}
