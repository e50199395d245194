//! Combinatorial refinements: the two-ends reduction along a tube and the
//! bipartite min-degree refinement.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{q, Q};
use crate::incidence::Tube;

/// Resolution of segment endpoints: multiples of `delta / 1024`.
const ENDPOINT_BITS: u32 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoEndsOutcome {
    pub segment_lo: Q,
    pub segment_hi: Q,
    /// Axial (x-extent) length of the segment.
    pub length: f64,
    pub kept: Vec<(u32, u32)>,
    pub n: usize,
    pub p: usize,
    pub epsilon: f64,
    /// Descent steps taken.
    pub steps: usize,
    /// Largest ball count found by the final check, and the allowed maximum.
    pub worst_ball: usize,
    pub allowed: f64,
    /// Every `(L, N)` visited, coarsest first.
    pub trace: Vec<(f64, usize)>,
}

impl TwoEndsOutcome {
    pub fn length_bound(&self, s: f64, delta: f64) -> f64 {
        (delta.powf(s) * self.p as f64).powf(1.0 / (s - self.epsilon * self.epsilon))
    }

    pub fn count_bound(&self) -> f64 {
        self.length.powf(self.epsilon * self.epsilon) * self.p as f64
    }
}

/// Most points of a sorted list inside a closed window of the given width,
/// with the leftmost point of the best window.
fn densest_window(xs: &[f64], width: f64) -> (usize, f64) {
    let mut hi = 0;
    let mut best = (0, xs.first().copied().unwrap_or(0.0));
    for (i, &x) in xs.iter().enumerate() {
        while hi < xs.len() && xs[hi] <= x + width {
            hi += 1;
        }
        if hi - i > best.0 {
            best = (hi - i, x);
        }
    }
    best
}

fn round_down(x_cells: f64, m: u32) -> Q {
    let scale = (1i128 << ENDPOINT_BITS) as f64;
    q((x_cells * scale).floor() as i128, 1i128 << (m + ENDPOINT_BITS))
}

fn round_up(x_cells: f64, m: u32) -> Q {
    let scale = (1i128 << ENDPOINT_BITS) as f64;
    q((x_cells * scale).ceil() as i128, 1i128 << (m + ENDPOINT_BITS))
}

/// Two-ends reduction of a tube's shading.
///
/// Iterative localisation along the tube axis (the x-coordinate of square
/// midpoints): while some ball of radius `L (delta/L)^eps` holds more than a
/// `(delta/L)^(eps^3)` fraction of the kept squares, descend into the fullest
/// such ball and re-trim. The new length is capped at `L / 2` so the descent
/// always shrinks, and never drops below delta. The final segment is checked
/// against the length and count guarantees; failures are reported as
/// [`Error::GuaranteeViolation`].
pub fn two_ends_reduce(tube: &Tube, shading: &[(u32, u32)], s: f64, epsilon: f64) -> Result<TwoEndsOutcome> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidInput(format!("epsilon = {epsilon} outside (0, 1/2)")));
    }
    if !(epsilon * epsilon < s / 2.0) {
        return Err(Error::InvalidInput(format!("need eps^2 < s/2, got eps = {epsilon}, s = {s}")));
    }
    if shading.is_empty() {
        return Err(Error::InvalidInput("empty shading".into()));
    }
    let out = reduce_unchecked(tube, shading, s, epsilon);
    let delta = tube.scale.delta();
    let l_min = out.length_bound(s, delta);
    let n_min = out.count_bound();
    let two_ends_ok = out.worst_ball as f64 <= out.allowed;
    if out.length + 1e-12 < l_min || (out.n as f64) < n_min - 1e-9 || !two_ends_ok {
        return Err(Error::GuaranteeViolation {
            length: out.length,
            kept: out.n,
            detail: format!(
                "P = {}, need L >= {l_min:.4e}, N >= {n_min:.3}, ball {} <= {:.3}",
                out.p, out.worst_ball, out.allowed
            ),
        });
    }
    Ok(out)
}

/// Outcome of the 1-D descent on a list of coordinates (delta units).
#[derive(Clone, Debug, PartialEq)]
pub struct Localised {
    pub lo: f64,
    pub len: f64,
    /// Indices into the input coordinates, kept in input order.
    pub kept: Vec<usize>,
    pub steps: usize,
    pub worst_ball: usize,
    pub allowed: f64,
    /// `(length, kept)` per step, in delta units.
    pub trace: Vec<(f64, usize)>,
}

/// The descent behind [`two_ends_reduce`] on bare coordinates, starting from
/// the window `[lo, hi]` (delta units).
pub fn localise(coords: &[f64], lo: f64, hi: f64, epsilon: f64) -> Localised {
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&a, &b| coords[a].total_cmp(&coords[b]).then(a.cmp(&b)));
    let mut lo = lo.min(coords.iter().copied().fold(f64::INFINITY, f64::min));
    let mut hi = hi.max(coords.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let mut trace = Vec::new();
    let mut steps = 0;
    loop {
        let len = (hi - lo).max(1.0);
        let ratio = 1.0 / len;
        let radius = len * ratio.powf(epsilon);
        let allowed = ratio.powf(epsilon.powi(3)) * order.len() as f64;
        let xs: Vec<f64> = order.iter().map(|&k| coords[k]).collect();
        let (count, _) = densest_window(&xs, 2.0 * radius);
        trace.push((len, order.len()));
        if count as f64 <= allowed || len <= 1.0 {
            let mut kept = order;
            kept.sort_unstable();
            return Localised { lo, len, kept, steps, worst_ball: count, allowed, trace };
        }
        let new_len = (2.0 * radius).min(len / 2.0).max(1.0);
        let (_, start) = densest_window(&xs, new_len);
        lo = start;
        hi = start + new_len;
        order.retain(|&k| coords[k] >= lo && coords[k] <= hi);
        steps += 1;
    }
}

/// The descent of [`two_ends_reduce`] without the final guarantee check.
pub fn reduce_unchecked(tube: &Tube, shading: &[(u32, u32)], _s: f64, epsilon: f64) -> TwoEndsOutcome {
    let m = tube.scale.m();
    let side = tube.scale.side() as f64;
    let delta = tube.scale.delta();
    let mut squares: Vec<(u32, u32)> = shading.to_vec();
    squares.sort_unstable();
    // axial coordinate: x of the square midpoint
    let xs: Vec<f64> = squares.iter().map(|c| c.0 as f64 + 0.5).collect();
    let t_lo = crate::grid::q_to_f64(tube.x_lo).max(0.0) * side;
    let t_hi = crate::grid::q_to_f64(tube.x_hi).min(1.0) * side;
    let loc = localise(&xs, t_lo, t_hi, epsilon);
    TwoEndsOutcome {
        segment_lo: round_down(loc.lo, m),
        segment_hi: round_up(loc.lo + loc.len, m),
        length: loc.len * delta,
        n: loc.kept.len(),
        kept: loc.kept.iter().map(|&k| squares[k]).collect(),
        p: squares.len(),
        epsilon,
        steps: loc.steps,
        worst_ball: loc.worst_ball,
        allowed: loc.allowed,
        trace: loc.trace.into_iter().map(|(l, n)| (l * delta, n)).collect(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    pub left: Vec<u64>,
    pub right: Vec<u64>,
    pub edges: Vec<(u64, u64)>,
}

impl BipartiteGraph {
    /// Validates and normalises: vertex lists sorted and unique, edges sorted,
    /// unique and between listed vertices.
    pub fn new(left: Vec<u64>, right: Vec<u64>, edges: Vec<(u64, u64)>) -> Result<Self> {
        let l: BTreeSet<u64> = left.into_iter().collect();
        let r: BTreeSet<u64> = right.into_iter().collect();
        let e: BTreeSet<(u64, u64)> = edges.into_iter().collect();
        if let Some(bad) = e.iter().find(|(a, b)| !l.contains(a) || !r.contains(b)) {
            return Err(Error::InvalidInput(format!("edge {bad:?} leaves the vertex sets")));
        }
        Ok(BipartiteGraph {
            left: l.into_iter().collect(),
            right: r.into_iter().collect(),
            edges: e.into_iter().collect(),
        })
    }

    /// Graph whose vertex sets are exactly the edge endpoints.
    pub fn from_edges(edges: Vec<(u64, u64)>) -> Self {
        let left = edges.iter().map(|e| e.0).collect();
        let right = edges.iter().map(|e| e.1).collect();
        BipartiteGraph::new(left, right, edges).expect("endpoints are listed")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Wire {
            left: Vec<u64>,
            right: Vec<u64>,
            edges: Vec<[u64; 2]>,
        }
        let w: Wire = serde_json::from_str(text)?;
        BipartiteGraph::new(w.left, w.right, w.edges.into_iter().map(|[a, b]| (a, b)).collect())
    }

    pub fn to_json(&self) -> String {
        let edges: Vec<[u64; 2]> = self.edges.iter().map(|&(a, b)| [a, b]).collect();
        serde_json::json!({"left": self.left, "right": self.right, "edges": edges}).to_string()
    }

    pub fn left_degrees(&self) -> BTreeMap<u64, usize> {
        let mut d: BTreeMap<u64, usize> = self.left.iter().map(|&v| (v, 0)).collect();
        for (a, _) in &self.edges {
            *d.get_mut(a).expect("validated") += 1;
        }
        d
    }

    pub fn right_degrees(&self) -> BTreeMap<u64, usize> {
        let mut d: BTreeMap<u64, usize> = self.right.iter().map(|&v| (v, 0)).collect();
        for (_, b) in &self.edges {
            *d.get_mut(b).expect("validated") += 1;
        }
        d
    }
}

/// Degree histograms, `degree -> number of vertices`, per side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeProfile {
    pub left: BTreeMap<usize, usize>,
    pub right: BTreeMap<usize, usize>,
}

pub fn degree_profile(graph: &BipartiteGraph) -> DegreeProfile {
    let hist = |d: BTreeMap<u64, usize>| {
        let mut h = BTreeMap::new();
        for deg in d.into_values() {
            *h.entry(deg).or_insert(0) += 1;
        }
        h
    };
    DegreeProfile {
        left: hist(graph.left_degrees()),
        right: hist(graph.right_degrees()),
    }
}

/// Induced subgraph in which every left vertex has degree at least
/// `#E / (4 #A)`, every right vertex at least `#E / (4 #B)`, and at least half
/// the edges survive (all counts taken on the input graph).
///
/// Queue-based peeling: vertices below their side's threshold are deleted
/// until none remain; the output is independent of the queue order.
pub fn bipartite_refine(graph: &BipartiteGraph) -> Result<BipartiteGraph> {
    let e = graph.edges.len();
    if e == 0 {
        return Err(Error::InvalidInput("bipartite_refine needs at least one edge".into()));
    }
    let (na, nb) = (graph.left.len(), graph.right.len());
    let li: HashMap<u64, usize> = graph.left.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let ri: HashMap<u64, usize> = graph.right.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut adj_l = vec![Vec::new(); na];
    let mut adj_r = vec![Vec::new(); nb];
    for &(a, b) in &graph.edges {
        adj_l[li[&a]].push(ri[&b]);
        adj_r[ri[&b]].push(li[&a]);
    }
    let mut deg_l: Vec<usize> = adj_l.iter().map(Vec::len).collect();
    let mut deg_r: Vec<usize> = adj_r.iter().map(Vec::len).collect();
    // deg < E / (4 n)  <=>  4 n deg < E
    let low_l = |d: usize| 4 * na * d < e;
    let low_r = |d: usize| 4 * nb * d < e;
    let mut dead_l = vec![false; na];
    let mut dead_r = vec![false; nb];
    let mut queue: VecDeque<(bool, usize)> = VecDeque::new();
    for (i, &d) in deg_l.iter().enumerate() {
        if low_l(d) {
            dead_l[i] = true;
            queue.push_back((true, i));
        }
    }
    for (i, &d) in deg_r.iter().enumerate() {
        if low_r(d) {
            dead_r[i] = true;
            queue.push_back((false, i));
        }
    }
    while let Some((is_left, v)) = queue.pop_front() {
        if is_left {
            for &w in &adj_l[v] {
                if !dead_r[w] {
                    deg_r[w] -= 1;
                    if low_r(deg_r[w]) {
                        dead_r[w] = true;
                        queue.push_back((false, w));
                    }
                }
            }
        } else {
            for &w in &adj_r[v] {
                if !dead_l[w] {
                    deg_l[w] -= 1;
                    if low_l(deg_l[w]) {
                        dead_l[w] = true;
                        queue.push_back((true, w));
                    }
                }
            }
        }
    }
    let left: Vec<u64> = graph.left.iter().enumerate().filter(|(i, _)| !dead_l[*i]).map(|(_, &v)| v).collect();
    let right: Vec<u64> = graph.right.iter().enumerate().filter(|(i, _)| !dead_r[*i]).map(|(_, &v)| v).collect();
    let edges: Vec<(u64, u64)> = graph
        .edges
        .iter()
        .copied()
        .filter(|(a, b)| !dead_l[li[a]] && !dead_r[ri[b]])
        .collect();
    if 2 * edges.len() < e {
        return Err(Error::InternalInvariant(format!(
            "refinement kept {} of {e} edges",
            edges.len()
        )));
    }
    Ok(BipartiteGraph { left, right, edges })
}

/// Checks the three refinement guarantees of `refined` against `original`.
pub fn refine_guarantees_hold(original: &BipartiteGraph, refined: &BipartiteGraph) -> bool {
    let e = original.edges.len();
    let (na, nb) = (original.left.len(), original.right.len());
    refined.left_degrees().values().all(|&d| 4 * na * d >= e)
        && refined.right_degrees().values().all(|&d| 4 * nb * d >= e)
        && 2 * refined.edges.len() >= e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{q_int, Scale};
    use proptest::prelude::*;

    fn complete(n: u64) -> BipartiteGraph {
        let edges = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
        BipartiteGraph::new((0..n).collect(), (0..n).collect(), edges).unwrap()
    }

    #[test]
    fn complete_graph_unchanged() {
        let g = complete(6);
        assert_eq!(bipartite_refine(&g).unwrap(), g);
    }

    #[test]
    fn matching_unchanged() {
        let g = BipartiteGraph::from_edges((0..10).map(|i| (i, i)).collect());
        assert_eq!(bipartite_refine(&g).unwrap(), g);
    }

    #[test]
    fn double_star() {
        // edges (a0, b_j) and (a_i, b0): 19 edges, threshold 19/40
        let mut edges: Vec<(u64, u64)> = (0..10).map(|j| (0, j)).collect();
        edges.extend((1..10).map(|i| (i, 0)));
        let g = BipartiteGraph::new((0..10).collect(), (0..10).collect(), edges).unwrap();
        let r = bipartite_refine(&g).unwrap();
        assert!(refine_guarantees_hold(&g, &r));
        assert!(r.edges.len() >= 10);
        // every degree is >= 1 > 19/40, so nothing is peeled
        assert_eq!(r, g);
    }

    #[test]
    fn isolated_vertices_are_peeled() {
        let g = BipartiteGraph::new(vec![0, 1, 2], vec![0, 1], vec![(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        let r = bipartite_refine(&g).unwrap();
        assert_eq!(r.left, vec![0, 1]);
        assert_eq!(r.edges.len(), 4);
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(bipartite_refine(&BipartiteGraph::new(vec![1], vec![2], vec![]).unwrap()).is_err());
    }

    #[test]
    fn profiles() {
        let p = degree_profile(&complete(3));
        assert_eq!(p.left, BTreeMap::from([(3, 3)]));
        let m = degree_profile(&BipartiteGraph::from_edges((0..4).map(|i| (i, i)).collect()));
        assert_eq!(m.right, BTreeMap::from([(1, 4)]));
    }

    #[test]
    fn graph_json() {
        let g = BipartiteGraph::from_json(r#"{"left":[1,2],"right":[7],"edges":[[1,7],[2,7]]}"#).unwrap();
        assert_eq!(g.edges.len(), 2);
        assert_eq!(BipartiteGraph::from_json(&g.to_json()).unwrap(), g);
        assert!(BipartiteGraph::from_json(r#"{"left":[1],"right":[7],"edges":[[3,7]]}"#).is_err());
    }

    fn row_shading(cols: impl Iterator<Item = u32>) -> Vec<(u32, u32)> {
        cols.map(|i| (i, 40)).collect()
    }

    #[test]
    fn equispaced_full_tube_is_already_two_ends() {
        // m = 20: delta/L small enough for a genuinely two-ends configuration
        let s = Scale::new(20).unwrap();
        let tube = Tube::new(s, q_int(0), s.cell_mid(40));
        let step = 1u32 << 10;
        let sh = row_shading((0..1024).map(|k| k * step));
        let out = two_ends_reduce(&tube, &sh, 0.5, 0.1).unwrap();
        assert_eq!(out.n, 1024);
        assert_eq!(out.steps, 0);
        assert!((out.length - 1.0).abs() < 1e-3);
    }

    #[test]
    fn descends_to_supported_subsegment() {
        let s = Scale::new(20).unwrap();
        let tube = Tube::new(s, q_int(0), s.cell_mid(40));
        // 256 squares spaced 2^6 apart inside [0, 2^14) cells, i.e. l = 2^-6
        let sh = row_shading((0..256).map(|k| (3u32 << 14) + k * 64));
        // 256 squares on a 2^-6 stretch is (delta, 0.9)-KT but not (delta, 1/2)-KT
        assert!(two_ends_reduce(&tube, &sh, 0.5, 0.1).is_err());
        let out = two_ends_reduce(&tube, &sh, 0.9, 0.1).unwrap();
        assert_eq!(out.n, 256);
        let l = 2f64.powi(-6);
        assert!(out.length >= l * (1.0 - 1e-3) && out.length <= 2.0 * l, "L = {}", out.length);
    }

    #[test]
    fn single_square() {
        let s = Scale::new(10).unwrap();
        let tube = Tube::new(s, q_int(0), s.cell_mid(40));
        let out = two_ends_reduce(&tube, &[(300, 40)], 0.5, 0.1).unwrap();
        assert_eq!(out.n, 1);
        assert!((out.length - s.delta()).abs() < 1e-12);
        let p = crate::incidence::TwoEndsParams::new(0.1, 0.001).unwrap();
        assert!(!crate::incidence::is_two_ends(&out.kept, p, s).holds);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let s = Scale::new(10).unwrap();
        let tube = Tube::new(s, q_int(0), q_int(0));
        assert!(two_ends_reduce(&tube, &[(1, 0)], 0.5, 0.6).is_err());
        assert!(two_ends_reduce(&tube, &[(1, 0)], 0.01, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn refine_guarantees(seed in 0u64..10_000, na in 1u64..60, nb in 1u64..60, dens in 0.01f64..0.6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut edges = Vec::new();
            for a in 0..na {
                for b in 0..nb {
                    if rng.gen_bool(dens) { edges.push((a, b)); }
                }
            }
            prop_assume!(!edges.is_empty());
            let g = BipartiteGraph::new((0..na).collect(), (0..nb).collect(), edges).unwrap();
            let r = bipartite_refine(&g).unwrap();
            prop_assert!(refine_guarantees_hold(&g, &r));
            // a second pass against the new counts keeps every vertex that already meets them
            let again = bipartite_refine(&r).unwrap();
            let (e2, a2, b2) = (r.edges.len(), r.left.len(), r.right.len());
            for (v, d) in r.left_degrees() {
                if 4 * a2 * d >= e2 && again.left.binary_search(&v).is_err() {
                    // removal only happens through neighbour loss
                    prop_assert!(again.edges.len() < e2);
                }
            }
            prop_assert!(again.left.len() <= a2 && again.right.len() <= b2);
        }

        #[test]
        fn descent_never_loses_more_than_threshold(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = Scale::new(16).unwrap();
            let tube = Tube::new(s, q_int(0), s.cell_mid(7));
            let sh: Vec<(u32, u32)> = (0..rng.gen_range(2..200)).map(|_| (rng.gen_range(0..1u32 << 16), 7)).collect();
            let mut sh = sh; sh.sort(); sh.dedup();
            let out = reduce_unchecked(&tube, &sh, 0.5, 0.2);
            prop_assert!(out.worst_ball as f64 <= out.allowed || out.length <= s.delta() + 1e-15);
            for w in out.trace.windows(2) {
                // descent only into balls holding more than the allowed fraction
                let ratio = s.delta() / w[0].0;
                prop_assert!(w[1].1 as f64 >= ratio.powf(0.008) * w[0].1 as f64 - 1e-9 || w[1].0 < w[0].0);
            }
        }
    }
}
