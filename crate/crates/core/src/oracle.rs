//! Exact ground truth on tiny instances.
//!
//! Everything here is dense and slow on purpose; the only goal is to be
//! obviously correct. Size caps are enforced on every entry point.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::graph::FiniteGraph;
use crate::lattice::{neighbors, LatticeRegion, Point};
use crate::ust::TreeWindow;

/// Largest graph accepted by the linear-algebra routines.
pub const LINALG_CAP: usize = 225;
/// Largest graph accepted by spanning-tree enumeration.
pub const ENUMERATION_CAP: usize = 12;
/// Largest graph accepted by the path-law computation (which enumerates).
pub const PATH_LAW_CAP: usize = 24;
/// Largest power accepted by [`transition_powers`].
pub const MAX_POWER: u32 = 1 << 14;

/// A small connected graph used for exact computations.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleGraph {
    graph: FiniteGraph,
}

impl OracleGraph {
    pub fn new(graph: FiniteGraph) -> Result<Self> {
        cap("oracle graph", graph.len(), LINALG_CAP)?;
        Ok(OracleGraph { graph })
    }

    /// The tree's vertices (raster order) and edges as an explicit graph.
    pub fn from_tree(tree: &TreeWindow) -> Result<(Self, Vec<Point>)> {
        let verts = tree.vertices();
        cap("tree", verts.len(), LINALG_CAP)?;
        let index: BTreeMap<Point, usize> = verts.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let adj = verts
            .iter()
            .map(|p| tree.tree_neighbors(*p).iter().map(|q| index[q]).collect())
            .collect();
        let g = FiniteGraph::from_adjacency(adj)?;
        Ok((OracleGraph { graph: g }, verts))
    }

    pub fn graph(&self) -> &FiniteGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }
}

fn cap(what: &'static str, size: usize, cap: usize) -> Result<()> {
    if size > cap {
        Err(Error::SizeCap { what, size, cap })
    } else {
        Ok(())
    }
}

/// Determinant of an integer matrix by fraction-free (Bareiss) elimination.
fn bareiss_det(mut m: Vec<Vec<BigInt>>) -> BigInt {
    let n = m.len();
    if n == 0 {
        return BigInt::one();
    }
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if m[k][k].is_zero() {
            match (k + 1..n).find(|&i| !m[i][k].is_zero()) {
                Some(i) => {
                    m.swap(k, i);
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = (&m[i][j] * &m[k][k] - &m[i][k] * &m[k][j]) / &prev;
                m[i][j] = v;
            }
        }
        prev = m[k][k].clone();
    }
    sign * m[n - 1][n - 1].clone()
}

/// Number of spanning trees: determinant of the Laplacian with the last row
/// and column removed.
pub fn count_spanning_trees(g: &OracleGraph) -> Result<BigInt> {
    let n = g.len();
    cap("spanning-tree count", n, LINALG_CAP)?;
    let m = n - 1;
    let mut lap = vec![vec![BigInt::zero(); m]; m];
    for (u, row) in lap.iter_mut().enumerate() {
        row[u] = BigInt::from(g.graph.degree(u));
        for &v in g.graph.neighbors(u) {
            if v < m {
                row[v] -= 1;
            }
        }
    }
    Ok(bareiss_det(lap))
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// All spanning trees as canonical sorted edge lists.
pub fn enumerate_spanning_trees(g: &OracleGraph) -> Result<Vec<Vec<(usize, usize)>>> {
    let n = g.len();
    cap("spanning-tree enumeration", n, ENUMERATION_CAP)?;
    enumerate_unchecked(g)
}

fn enumerate_unchecked(g: &OracleGraph) -> Result<Vec<Vec<(usize, usize)>>> {
    let n = g.len();
    let edges = g.graph.edges();
    let mut out = Vec::new();
    let mut chosen = Vec::with_capacity(n.saturating_sub(1));
    let dsu: Vec<usize> = (0..n).collect();
    fn rec(
        i: usize,
        need: usize,
        edges: &[(usize, usize)],
        dsu: Vec<usize>,
        chosen: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if chosen.len() == need {
            out.push(chosen.clone());
            return;
        }
        if edges.len() - i < need - chosen.len() {
            return;
        }
        let (u, v) = edges[i];
        let mut with = dsu.clone();
        let (ru, rv) = (find(&mut with, u), find(&mut with, v));
        if ru != rv {
            with[ru] = rv;
            chosen.push((u, v));
            rec(i + 1, need, edges, with, chosen, out);
            chosen.pop();
        }
        rec(i + 1, need, edges, dsu, chosen, out);
    }
    rec(0, n - 1, &edges, dsu, &mut chosen, &mut out);
    Ok(out)
}

/// Tree path between `v` and `w` in the tree given by an edge list.
fn path_in(n: usize, edges: &[(usize, usize)], v: usize, w: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut prev = vec![usize::MAX; n];
    prev[v] = v;
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        for &x in &adj[u] {
            if prev[x] == usize::MAX {
                prev[x] = u;
                stack.push(x);
            }
        }
    }
    let mut out = vec![w];
    let mut u = w;
    while u != v {
        u = prev[u];
        out.push(u);
    }
    out.reverse();
    out
}

/// Law of the UST path from `v` to `w`: every spanning tree weighted equally.
pub fn exact_path_law(g: &OracleGraph, v: usize, w: usize) -> Result<BTreeMap<Vec<usize>, f64>> {
    cap("path-law enumeration", g.len(), PATH_LAW_CAP)?;
    let trees = enumerate_unchecked(g)?;
    let total = trees.len() as f64;
    let mut law: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for t in &trees {
        *law.entry(path_in(g.len(), t, v, w)).or_default() += 1.0 / total;
    }
    Ok(law)
}

/// Solves the Dirichlet problem with potential 1 on `a`, 0 on `b`, harmonic
/// elsewhere, and returns `1 / energy`. Vertices cut off from `a` and `b`
/// are held at 0; if `a` and `b` are disconnected the result is infinite.
pub fn laplacian_resistance(g: &OracleGraph, a: &[usize], b: &[usize]) -> Result<f64> {
    let n = g.len();
    cap("resistance solve", n, LINALG_CAP)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("A and B must be non-empty".into()));
    }
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for &x in a {
        fixed[x] = Some(1.0);
    }
    for &x in b {
        if fixed[x].is_some() {
            return Err(Error::InvalidArgument("A and B must be disjoint".into()));
        }
        fixed[x] = Some(0.0);
    }
    // free vertices reachable from A ∪ B without crossing it
    let mut reach = vec![false; n];
    let mut stack: Vec<usize> = a.iter().chain(b).copied().collect();
    for &x in &stack {
        reach[x] = true;
    }
    while let Some(u) = stack.pop() {
        if fixed[u].is_some() && !a.contains(&u) && !b.contains(&u) {
            continue;
        }
        for &v in g.graph.neighbors(u) {
            if !reach[v] {
                reach[v] = true;
                stack.push(v);
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&x| fixed[x].is_none() && reach[x]).collect();
    let pos: BTreeMap<usize, usize> = free.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let m = free.len();
    let mut lap = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (i, &x) in free.iter().enumerate() {
        lap[(i, i)] = g.graph.degree(x) as f64;
        for &y in g.graph.neighbors(x) {
            match (fixed[y], pos.get(&y)) {
                (Some(val), _) => rhs[i] += val,
                (None, Some(&j)) => lap[(i, j)] -= 1.0,
                (None, None) => {}
            }
        }
    }
    let mut pot = vec![0.0; n];
    for x in 0..n {
        if let Some(v) = fixed[x] {
            pot[x] = v;
        }
    }
    if m > 0 {
        let sol = lap
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidGraph("singular Dirichlet system".into()))?;
        for (i, &x) in free.iter().enumerate() {
            pot[x] = sol[i];
        }
    }
    let energy: f64 = g
        .graph
        .edges()
        .iter()
        .map(|&(u, v)| (pot[u] - pot[v]).powi(2))
        .sum();
    Ok(if energy == 0.0 { f64::INFINITY } else { 1.0 / energy })
}

/// Expected exit time from the vertex set `interior` for the simple random
/// walk on `g`: `E_x = 1 + mean_{y ~ x} E_y` on the interior, 0 outside.
pub fn dirichlet_expected_exit(g: &OracleGraph, interior: &[bool], start: usize) -> Result<f64> {
    let n = g.len();
    cap("Dirichlet solve", n, LINALG_CAP)?;
    if !interior[start] {
        return Ok(0.0);
    }
    let free: Vec<usize> = (0..n).filter(|&x| interior[x]).collect();
    let pos: BTreeMap<usize, usize> = free.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let m = free.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    let rhs = DVector::<f64>::from_iterator(m, free.iter().map(|&x| g.graph.degree(x) as f64));
    for (i, &x) in free.iter().enumerate() {
        a[(i, i)] = g.graph.degree(x) as f64;
        for &y in g.graph.neighbors(x) {
            if let Some(&j) = pos.get(&y) {
                a[(i, j)] -= 1.0;
            }
        }
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidGraph("walk never leaves the interior".into()))?;
    Ok(sol[pos[&start]])
}

/// Expected exit time of the lattice walk from a finite region, by
/// conjugate gradients on `4 E(x) - sum_{y ~ x, y in D} E(y) = 4`.
///
/// Regions here (for instance `B(0, 50)`) are far beyond the dense cap, but
/// the system is symmetric positive definite and five-point sparse.
pub fn dirichlet_expected_exit_lattice(region: &LatticeRegion, start: Point) -> Result<f64> {
    if !region.contains(start) {
        return Ok(0.0);
    }
    let pts = region.points();
    cap("lattice Dirichlet solve", pts.len(), 1 << 20)?;
    let index: std::collections::HashMap<Point, usize> = pts.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let nbrs: Vec<Vec<usize>> = pts
        .iter()
        .map(|p| neighbors(*p).iter().filter_map(|q| index.get(q).copied()).collect())
        .collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..x.len() {
            out[i] = 4.0 * x[i] - nbrs[i].iter().map(|&j| x[j]).sum::<f64>();
        }
    };
    let m = pts.len();
    let b = vec![4.0; m];
    let mut x = vec![0.0; m];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; m];
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut rr = dot(&r, &r);
    let tol = 1e-24 * dot(&b, &b);
    for _ in 0..10 * m + 100 {
        if rr <= tol {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..m {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(x[index[&start]])
}

/// Dense heat kernel `p_n(x, y) = P^x(X_n = y) / μ_y` of the walk on a tree.
#[derive(Clone, Debug)]
pub struct HeatKernel {
    pub n: u32,
    pub vertices: Vec<Point>,
    pub degrees: Vec<f64>,
    /// `kernel[(i, j)] = p_n(v_i, v_j)`, from the `n`-th power of the
    /// transition matrix with no symmetrization.
    pub kernel: DMatrix<f64>,
}

impl HeatKernel {
    pub fn index_of(&self, p: Point) -> Option<usize> {
        self.vertices.iter().position(|q| *q == p)
    }

    pub fn p(&self, x: Point, y: Point) -> Option<f64> {
        Some(self.kernel[(self.index_of(x)?, self.index_of(y)?)])
    }

    /// `P^x(X_n = y)`.
    pub fn prob(&self, x: Point, y: Point) -> Option<f64> {
        let j = self.index_of(y)?;
        Some(self.kernel[(self.index_of(x)?, j)] * self.degrees[j])
    }
}

/// Exact `n`-step heat kernel of the simple random walk on a small tree.
pub fn transition_powers(tree: &TreeWindow, n: u32) -> Result<HeatKernel> {
    if n > MAX_POWER {
        return Err(Error::SizeCap {
            what: "matrix power",
            size: n as usize,
            cap: MAX_POWER as usize,
        });
    }
    let (g, vertices) = OracleGraph::from_tree(tree)?;
    let m = g.len();
    let degrees: Vec<f64> = (0..m).map(|v| g.graph.degree(v) as f64).collect();
    let mut step = DMatrix::<f64>::zeros(m, m);
    for (u, &deg) in degrees.iter().enumerate() {
        for &v in g.graph.neighbors(u) {
            step[(u, v)] = 1.0 / deg;
        }
    }
    let mut power = DMatrix::<f64>::identity(m, m);
    let mut base = step;
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            power = &power * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    let mut kernel = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            kernel[(i, j)] = power[(i, j)] / degrees[j];
        }
    }
    Ok(HeatKernel {
        n,
        vertices,
        degrees,
        kernel,
    })
}

/// Converts an exact tree count to `f64` for use as a denominator.
pub fn count_as_f64(c: &BigInt) -> f64 {
    if c.is_negative() {
        f64::NAN
    } else {
        c.to_f64().unwrap_or(f64::INFINITY)
    }
}

/// Named pass/fail checks of the oracle against hand-computed values.
pub fn selftest() -> Vec<(&'static str, bool)> {
    let mut out = Vec::new();
    let og = |g: FiniteGraph| OracleGraph::new(g).unwrap();
    let count = |g: FiniteGraph| count_spanning_trees(&og(g)).unwrap();
    out.push(("count: single edge = 1", count(FiniteGraph::path(2)) == BigInt::from(1)));
    out.push(("count: 4-cycle = 4", count(FiniteGraph::cycle(4)) == BigInt::from(4)));
    out.push(("count: 2x3 grid = 15", count(FiniteGraph::grid(2, 3)) == BigInt::from(15)));
    out.push((
        "enumerate: triangle has 3 trees",
        enumerate_spanning_trees(&og(FiniteGraph::cycle(3))).unwrap().len() == 3,
    ));
    let g23 = og(FiniteGraph::grid(2, 3));
    out.push((
        "enumerate: 2x3 grid agrees with the determinant",
        enumerate_spanning_trees(&g23).unwrap().len() == 15,
    ));
    let tri = exact_path_law(&og(FiniteGraph::cycle(3)), 0, 1).unwrap();
    out.push((
        "path law: triangle direct edge 2/3",
        (tri[&vec![0, 1]] - 2.0 / 3.0).abs() < 1e-15,
    ));
    let r = laplacian_resistance(&og(FiniteGraph::cycle(4)), &[0], &[2]).unwrap();
    out.push(("resistance: 4-cycle opposite corners = 1", (r - 1.0).abs() < 1e-12));
    let r = laplacian_resistance(&og(FiniteGraph::path(4)), &[0], &[3]).unwrap();
    out.push(("resistance: 3 unit edges in series = 3", (r - 3.0).abs() < 1e-12));
    let seg = og(FiniteGraph::path(101));
    let interior: Vec<bool> = (0..101).map(|i| i != 0 && i != 100).collect();
    let e = dirichlet_expected_exit(&seg, &interior, 50).unwrap();
    out.push(("exit time: centre of a segment of half-length 50 = 2500", (e - 2500.0).abs() < 1e-6));
    let t = TreeWindow::segment(3);
    let k = transition_powers(&t, 5).unwrap();
    out.push((
        "heat kernel: odd-step return probability is exactly 0",
        k.p(Point::ORIGIN, Point::ORIGIN) == Some(0.0),
    ));
    out
}
