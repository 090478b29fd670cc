//! Small explicit graphs and Wilson's algorithm on them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::{LatticeRegion, Point};
use crate::rng::RandomSource;

/// An undirected, connected graph on vertices `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteGraph {
    adj: Vec<Vec<usize>>,
    labels: Option<Vec<Point>>,
}

impl FiniteGraph {
    pub fn from_adjacency(adj: Vec<Vec<usize>>) -> Result<Self> {
        let n = adj.len();
        if n == 0 {
            return Err(Error::InvalidGraph("no vertices".into()));
        }
        for (u, nb) in adj.iter().enumerate() {
            for &v in nb {
                if v >= n {
                    return Err(Error::InvalidGraph(format!("edge {u}-{v} out of range")));
                }
                if v == u {
                    return Err(Error::InvalidGraph(format!("self-loop at {u}")));
                }
                let back = adj[v].iter().filter(|&&w| w == u).count();
                let fwd = nb.iter().filter(|&&w| w == v).count();
                if back != fwd {
                    return Err(Error::InvalidGraph(format!("edge {u}-{v} is not symmetric")));
                }
            }
        }
        let g = FiniteGraph { adj, labels: None };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("edge {u}-{v} out of range")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        FiniteGraph::from_adjacency(adj)
    }

    /// The subgraph of the lattice induced by `region`, vertices numbered in
    /// raster order and labelled by their lattice points.
    pub fn lattice_window(region: &LatticeRegion) -> Result<Self> {
        let pts = region.points();
        let index: BTreeMap<Point, usize> = pts.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let adj = pts
            .iter()
            .map(|p| {
                crate::lattice::neighbors(*p)
                    .iter()
                    .filter_map(|q| index.get(q).copied())
                    .collect()
            })
            .collect();
        let mut g = FiniteGraph::from_adjacency(adj)?;
        g.labels = Some(pts);
        Ok(g)
    }

    /// `w x h` grid with lower-left corner at the origin.
    pub fn grid(w: i32, h: i32) -> Self {
        FiniteGraph::lattice_window(&LatticeRegion::rect(Point::ORIGIN, Point::new(w - 1, h - 1)))
            .expect("grids are connected")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        FiniteGraph::from_edges(n, &edges).expect("paths are connected")
    }

    pub fn cycle(n: usize) -> Self {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        FiniteGraph::from_edges(n, &edges).expect("cycles are connected")
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn labels(&self) -> Option<&[Point]> {
        self.labels.as_deref()
    }

    pub fn vertex_of(&self, p: Point) -> Option<usize> {
        self.labels.as_ref()?.iter().position(|q| *q == p)
    }

    /// Edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self
            .adj
            .iter()
            .enumerate()
            .flat_map(|(u, nb)| nb.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect();
        e.sort_unstable();
        e
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.len()
    }
}

/// A rooted spanning tree in parent-pointer form; the root is its own parent.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpanningTree {
    pub root: usize,
    pub parent: Vec<usize>,
}

impl SpanningTree {
    /// Canonical encoding: sorted list of `(min, max)` edges.
    pub fn canonical_edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self
            .parent
            .iter()
            .enumerate()
            .filter(|&(v, &p)| v != p)
            .map(|(v, &p)| (v.min(p), v.max(p)))
            .collect();
        e.sort_unstable();
        e
    }

    /// Vertices from `v` up to the root.
    pub fn rootward(&self, mut v: usize) -> Vec<usize> {
        let mut out = vec![v];
        while self.parent[v] != v {
            v = self.parent[v];
            out.push(v);
        }
        out
    }

    /// The unique tree path from `v` to `w`.
    pub fn path(&self, v: usize, w: usize) -> Vec<usize> {
        let a = self.rootward(v);
        let b = self.rootward(w);
        let on_b: std::collections::HashSet<usize> = b.iter().copied().collect();
        let meet = a.iter().position(|x| on_b.contains(x)).expect("single component");
        let z = a[meet];
        let zb = b.iter().position(|&x| x == z).unwrap();
        let mut out = a[..=meet].to_vec();
        out.extend(b[..zb].iter().rev());
        out
    }

    /// Checks that the parent map is a spanning tree of `g`: one root,
    /// every parent link is a graph edge, and every vertex reaches the root.
    pub fn validate(&self, g: &FiniteGraph) -> bool {
        let n = g.len();
        if self.parent.len() != n || self.parent[self.root] != self.root {
            return false;
        }
        let roots = (0..n).filter(|&v| self.parent[v] == v).count();
        if roots != 1 {
            return false;
        }
        for v in 0..n {
            if v != self.root && !g.neighbors(v).contains(&self.parent[v]) {
                return false;
            }
        }
        (0..n).all(|v| {
            let mut u = v;
            for _ in 0..n {
                if u == self.root {
                    return true;
                }
                u = self.parent[u];
            }
            u == self.root
        })
    }
}

/// Wilson's algorithm: starting from the tree `{root}`, take the next vertex
/// of `order` not yet in the tree, run a random walk from it until it hits
/// the tree, and adjoin the loop erasure of that walk.
///
/// Loops are erased implicitly by remembering only the last exit from each
/// vertex, which yields the same path as chronological erasure.
pub fn wilson_finite(
    g: &FiniteGraph,
    root: usize,
    order: &[usize],
    rng: &mut RandomSource,
) -> Result<SpanningTree> {
    let n = g.len();
    if root >= n {
        return Err(Error::InvalidArgument(format!("root {root} out of range")));
    }
    let mut covered = vec![false; n];
    for &v in order {
        if v >= n {
            return Err(Error::InvalidArgument(format!("vertex {v} out of range")));
        }
        covered[v] = true;
    }
    if covered.iter().any(|c| !c) {
        return Err(Error::InvalidArgument("order must enumerate every vertex".into()));
    }
    let mut in_tree = vec![false; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut next = vec![usize::MAX; n];
    in_tree[root] = true;
    for &start in order {
        let mut u = start;
        while !in_tree[u] {
            let nb = g.neighbors(u);
            let v = nb[rng.below(nb.len() as u32) as usize];
            next[u] = v;
            u = v;
        }
        let mut u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            parent[u] = next[u];
            u = next[u];
        }
    }
    Ok(SpanningTree { root, parent })
}
