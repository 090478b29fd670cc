//! Intrinsic metric and electrical quantities of a sampled tree.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::ops::{Add, Div};

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::lattice::{euclidean_ball, Point};
use crate::ust::{TreeWindow, UNKNOWN_SHIFT};

/// The intrinsic ball `{y : d(center, y) <= radius}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricBall {
    pub center: Point,
    pub radius: u32,
    /// Members in breadth-first order.
    pub members: Vec<Point>,
    /// `shells[k]` is the number of members at distance exactly `k`.
    pub shells: Vec<usize>,
    pub volume: usize,
    /// The ball reached a vertex outside the trusted window or with an
    /// unsampled neighbor; `volume` is then only a lower bound.
    pub truncated: bool,
}

impl MetricBall {
    pub fn contains(&self, p: Point) -> bool {
        self.members.contains(&p)
    }
}

/// Breadth-first layering of a tree from a center, used by both the ball and
/// the resistance computations.
struct Layers {
    order: Vec<Point>,
    depth: Vec<u32>,
    /// Index into `order` of each vertex's BFS parent (`usize::MAX` at the center).
    up: Vec<usize>,
    truncated: bool,
}

fn layers(tree: &TreeWindow, center: Point, max_depth: u32) -> Result<Layers> {
    if !tree.is_sampled(center) {
        return Err(Error::OutsideDomain(center));
    }
    let grid = tree.grid();
    let masks = tree.masks();
    let trusted = tree.trusted();
    let mut seen: HashSet<Point> = HashSet::new();
    let mut out = Layers {
        order: vec![center],
        depth: vec![0],
        up: vec![usize::MAX],
        truncated: false,
    };
    seen.insert(center);
    let mut head = 0;
    while head < out.order.len() {
        let (u, du) = (out.order[head], out.depth[head]);
        let m = masks[grid.index(u).unwrap()];
        if !trusted.contains(u) || m >> UNKNOWN_SHIFT != 0 {
            out.truncated = true;
        }
        if du < max_depth {
            for d in 0..4u8 {
                if m & (1 << d) != 0 {
                    let v = u.step(d);
                    if seen.insert(v) {
                        out.order.push(v);
                        out.depth.push(du + 1);
                        out.up.push(head);
                    }
                }
            }
        }
        head += 1;
    }
    Ok(out)
}

/// Breadth-first expansion over tree edges to depth `radius`.
pub fn intrinsic_ball(tree: &TreeWindow, center: Point, radius: u32) -> Result<MetricBall> {
    let l = layers(tree, center, radius)?;
    let mut shells = vec![0usize; radius as usize + 1];
    for &d in &l.depth {
        shells[d as usize] += 1;
    }
    Ok(MetricBall {
        center,
        radius,
        volume: l.order.len(),
        members: l.order,
        shells,
        truncated: l.truncated,
    })
}

/// Intrinsic distances from `center` to every vertex within `max_depth`.
pub fn intrinsic_distances(tree: &TreeWindow, center: Point, max_depth: u32) -> Result<HashMap<Point, u32>> {
    let l = layers(tree, center, max_depth)?;
    Ok(l.order.into_iter().zip(l.depth).collect())
}

fn check_trusted_radius(tree: &TreeWindow, r: u32) -> Result<()> {
    match euclidean_ball(Point::ORIGIN, r as f64)
        .points()
        .into_iter()
        .find(|p| !tree.trusted().contains(*p) || !tree.degree_is_exact(*p))
    {
        Some(p) => Err(Error::OutsideDomain(p)),
        None => Ok(()),
    }
}

/// `U_r`: vertices reachable from the origin by tree edges with both
/// endpoints in `B(0, r)`.
pub fn component_in_box(tree: &TreeWindow, r: u32) -> Result<BTreeSet<Point>> {
    check_trusted_radius(tree, r)?;
    let r2 = r as i64 * r as i64;
    let mut seen = BTreeSet::from([Point::ORIGIN]);
    let mut queue = VecDeque::from([Point::ORIGIN]);
    while let Some(u) = queue.pop_front() {
        for v in tree.tree_neighbors(u) {
            if v.norm_sq() <= r2 && seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    Ok(seen)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResistanceQuery {
    pub source: Point,
    pub target: Vec<Point>,
    /// Ohms with unit resistors on tree edges; infinite when no target is
    /// reachable.
    pub value: f64,
}

/// Series-parallel reduction on a rooted tree: `children[v]` lists the
/// children of node `v`, node 0 is the source, and `grounded[v]` marks
/// targets. Returns `None` when no target hangs below the source.
fn reduce<T>(children: &[Vec<usize>], grounded: &[bool]) -> Option<T>
where
    T: Clone + Zero + One + Add<Output = T> + Div<Output = T>,
{
    // iterative post-order
    let n = children.len();
    let mut value: Vec<Option<T>> = vec![None; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0usize];
    while let Some(v) = stack.pop() {
        order.push(v);
        if !grounded[v] {
            stack.extend(children[v].iter().copied());
        }
    }
    for &v in order.iter().rev() {
        if grounded[v] {
            value[v] = Some(T::zero());
            continue;
        }
        let mut conductance: Option<T> = None;
        for &c in &children[v] {
            if let Some(rc) = value[c].clone() {
                let g = T::one() / (T::one() + rc);
                conductance = Some(match conductance {
                    Some(acc) => acc + g,
                    None => g,
                });
            }
        }
        value[v] = conductance.map(|g| T::one() / g);
    }
    value[0].take()
}

/// The subtree spanned by the source and all reachable targets, rooted at
/// the source, in the form consumed by [`reduce`].
fn steiner_tree(tree: &TreeWindow, source: Point, target: &[Point]) -> Result<(Vec<Vec<usize>>, Vec<bool>)> {
    if !tree.is_sampled(source) {
        return Err(Error::OutsideDomain(source));
    }
    let targets: HashSet<Point> = target.iter().copied().collect();
    if targets.contains(&source) {
        return Err(Error::InvalidArgument("source lies in the target set".into()));
    }
    // undirected edges of the union of paths source -> t
    let chain = tree.rootward(source)?;
    let chain_pos: HashMap<Point, usize> = chain.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut marked: HashSet<Point> = HashSet::new();
    let mut edges: Vec<(Point, Point)> = Vec::new();
    let mut top = 0usize;
    for &t in target {
        if !tree.is_sampled(t) {
            return Err(Error::OutsideDomain(t));
        }
        let mut u = t;
        loop {
            if let Some(&i) = chain_pos.get(&u) {
                top = top.max(i);
                break;
            }
            if !marked.insert(u) {
                break;
            }
            match tree.parent(u) {
                Some(p) => {
                    edges.push((u, p));
                    u = p;
                }
                None => {
                    // different component: drop the dangling branch later
                    break;
                }
            }
        }
    }
    for w in chain[..=top].windows(2) {
        edges.push((w[0], w[1]));
    }
    let mut adj: HashMap<Point, Vec<Point>> = HashMap::new();
    for &(a, b) in &edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    // orient away from the source
    let mut index: HashMap<Point, usize> = HashMap::from([(source, 0)]);
    let mut nodes = vec![source];
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut head = 0;
    while head < nodes.len() {
        let u = nodes[head];
        let mut nb: Vec<Point> = adj.get(&u).cloned().unwrap_or_default();
        nb.sort_unstable();
        nb.dedup();
        for v in nb {
            if !index.contains_key(&v) {
                index.insert(v, nodes.len());
                nodes.push(v);
                children.push(Vec::new());
                children[head].push(nodes.len() - 1);
            }
        }
        head += 1;
    }
    let grounded = nodes.iter().map(|p| targets.contains(p)).collect();
    Ok((children, grounded))
}

/// Effective resistance between `source` and the set `target` with unit
/// resistors on tree edges.
pub fn effective_resistance(tree: &TreeWindow, source: Point, target: &[Point]) -> Result<ResistanceQuery> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty target set".into()));
    }
    let (children, grounded) = steiner_tree(tree, source, target)?;
    let value = reduce::<f64>(&children, &grounded).unwrap_or(f64::INFINITY);
    Ok(ResistanceQuery {
        source,
        target: target.to_vec(),
        value,
    })
}

/// The same reduction in exact rational arithmetic; `None` means infinite.
pub fn effective_resistance_exact(tree: &TreeWindow, source: Point, target: &[Point]) -> Result<Option<BigRational>> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty target set".into()));
    }
    let (children, grounded) = steiner_tree(tree, source, target)?;
    Ok(reduce::<BigRational>(&children, &grounded))
}

/// `R_eff(x, B_d(x, R)^c)` together with the Nash-Williams lower bound
/// `sum_{k=1..R} 1 / |Γ_k|`, where `Γ_k` are the vertices at distance `k`
/// with a descendant beyond distance `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallEscape {
    pub query: ResistanceQuery,
    pub nash_williams: f64,
    pub ball_volume: usize,
}

pub fn ball_escape(tree: &TreeWindow, x: Point, radius: u32) -> Result<BallEscape> {
    let l = layers(tree, x, radius + 1)?;
    let inner_truncated = l
        .order
        .iter()
        .zip(&l.depth)
        .filter(|(_, &d)| d <= radius)
        .any(|(p, _)| {
            let m = tree.masks()[tree.grid().index(*p).unwrap()];
            !tree.trusted().contains(*p) || m >> UNKNOWN_SHIFT != 0
        });
    if inner_truncated {
        return Err(Error::WindowTooSmall { center: x, radius });
    }
    let n = l.order.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 1..n {
        children[l.up[i]].push(i);
    }
    let grounded: Vec<bool> = l.depth.iter().map(|&d| d > radius).collect();
    let value = reduce::<f64>(&children, &grounded).unwrap_or(f64::INFINITY);

    // vertices with a descendant beyond the ball
    let mut escapes = grounded.clone();
    for i in (1..n).rev() {
        if escapes[i] {
            escapes[l.up[i]] = true;
        }
    }
    let mut cut = vec![0usize; radius as usize + 1];
    for i in 0..n {
        let d = l.depth[i];
        if escapes[i] && d >= 1 && d <= radius {
            cut[d as usize] += 1;
        }
    }
    let nash_williams = cut[1..]
        .iter()
        .map(|&c| if c == 0 { f64::INFINITY } else { 1.0 / c as f64 })
        .sum();
    let target = l
        .order
        .iter()
        .zip(&l.depth)
        .filter(|(_, &d)| d > radius)
        .map(|(p, _)| *p)
        .collect();
    Ok(BallEscape {
        query: ResistanceQuery {
            source: x,
            target,
            value,
        },
        nash_williams,
        ball_volume: grounded.iter().filter(|g| !**g).count(),
    })
}

/// `R_eff(0, B_d(0, R)^c)`; errors if the ball is truncated.
pub fn resistance_to_ball_complement(tree: &TreeWindow, radius: u32) -> Result<ResistanceQuery> {
    Ok(ball_escape(tree, Point::ORIGIN, radius)?.query)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoodBallReport {
    pub x: Point,
    pub radius: u32,
    pub lambda: f64,
    pub volume: usize,
    pub resistance: f64,
    /// `|B_d(x, R)| <= λ g(R)^2`
    pub cond_volume_upper: bool,
    /// `g(R)^2 / λ <= |B_d(x, R)|`
    pub cond_volume_lower: bool,
    /// `R_eff(x, B_d(x, R)^c) >= R / λ`
    pub cond_resistance: bool,
}

impl GoodBallReport {
    pub fn is_good(&self) -> bool {
        self.cond_volume_upper && self.cond_volume_lower && self.cond_resistance
    }
}

/// Evaluates the three good-ball conditions at `(x, R, λ)` with the supplied
/// inverse growth function `g`.
pub fn good_ball_check(
    tree: &TreeWindow,
    x: Point,
    radius: u32,
    lambda: f64,
    g: impl Fn(f64) -> f64,
) -> Result<GoodBallReport> {
    if lambda < 1.0 {
        return Err(Error::InvalidArgument("lambda must be at least 1".into()));
    }
    let esc = ball_escape(tree, x, radius)?;
    Ok(evaluate_good_ball(x, radius, lambda, esc.ball_volume, esc.query.value, g(radius as f64)))
}

/// The good-ball inequalities for precomputed volume and resistance.
pub fn evaluate_good_ball(x: Point, radius: u32, lambda: f64, volume: usize, resistance: f64, g_r: f64) -> GoodBallReport {
    let g2 = g_r * g_r;
    let v = volume as f64;
    GoodBallReport {
        x,
        radius,
        lambda,
        volume,
        resistance,
        cond_volume_upper: v <= lambda * g2,
        cond_volume_lower: g2 / lambda <= v,
        cond_resistance: resistance >= radius as f64 / lambda,
    }
}
