//! Frostman and Katz-Tao sets: generators, exact validators, uniform subsets
//! and dyadic pigeonholing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{q, GridSet1D, GridSet2D, Scale, Q};

/// Acceptance constant for [`random_frostman_set`].
pub const RANDOM_KT_CONSTANT: f64 = 8.0;
/// Attempts before [`random_frostman_set`] gives up.
pub const MAX_RESAMPLES: usize = 100;
/// Default max/min child-count ratio for uniform subsets.
pub const DEFAULT_UNIFORM_TOLERANCE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Frostman,
    KatzTao,
}

/// A closed sup-metric ball. Centers are exact dyadic rationals, so `f64`
/// represents them without rounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtWitness {
    pub kind: SetKind,
    pub s: f64,
    /// Minimal constant over the scanned balls.
    pub c: f64,
    pub violating_ball: Option<Ball>,
}

/// How the kept children of a Cantor construction are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CantorPattern {
    /// `keep` children spread evenly, always including both ends when `keep > 1`.
    Spread,
    Leftmost,
    /// A fresh random `keep`-subset at every node.
    Random(u64),
}

fn spread_children(keep: u32, out_of: u32) -> Vec<u32> {
    if keep == 1 {
        return vec![0];
    }
    (0..keep)
        .map(|i| ((i as u64 * (out_of as u64 - 1) * 2 + (keep as u64 - 1)) / (2 * (keep as u64 - 1))) as u32)
        .collect()
}

fn cantor_cells(depth: u32, keep: u32, out_of: u32, pattern: CantorPattern) -> Vec<u64> {
    let fixed = match pattern {
        CantorPattern::Spread => spread_children(keep, out_of),
        CantorPattern::Leftmost => (0..keep).collect(),
        CantorPattern::Random(_) => Vec::new(),
    };
    let mut rng = match pattern {
        CantorPattern::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let all: Vec<u32> = (0..out_of).collect();
    let mut cells = vec![0u64];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(cells.len() * keep as usize);
        for &c in &cells {
            match rng.as_mut() {
                Some(rng) => {
                    let mut pick: Vec<u32> = all.choose_multiple(rng, keep as usize).copied().collect();
                    pick.sort_unstable();
                    next.extend(pick.into_iter().map(|d| c * out_of as u64 + d as u64));
                }
                None => next.extend(fixed.iter().map(|&d| c * out_of as u64 + d as u64)),
            }
        }
        cells = next;
    }
    cells
}

fn check_cantor_args(keep: u32, out_of: u32) -> Result<u32> {
    if keep == 0 || keep > out_of || !out_of.is_power_of_two() || out_of < 2 {
        return Err(Error::InvalidInput(format!(
            "cantor pattern needs 1 <= keep <= out_of with out_of a power of two, got {keep} of {out_of}"
        )));
    }
    Ok(out_of.trailing_zeros())
}

/// Depth-`k` self-similar set keeping `keep` of every `out_of` children, where
/// `out_of^k = 2^m`. Has exactly `keep^k` cells.
pub fn cantor_set(scale: Scale, keep: u32, out_of: u32, pattern: CantorPattern) -> Result<GridSet1D> {
    let bits = check_cantor_args(keep, out_of)?;
    if !scale.m().is_multiple_of(bits) {
        return Err(Error::IncompatibleScale(format!(
            "{out_of}^k = 2^{} has no integer solution",
            scale.m()
        )));
    }
    let cells = cantor_cells(scale.m() / bits, keep, out_of, pattern);
    GridSet1D::new(scale, cells.into_iter().map(|c| c as u32))
}

/// Delta-discretisation of the limiting Cantor set inside the dyadic window
/// `[index 2^-window_bits, (index + 1) 2^-window_bits]`, for any `m`.
///
/// The construction runs to the first depth at least as fine as delta and is
/// then coarsened, so cells are exactly the delta-cells meeting the stage.
pub fn cantor_in_window(
    scale: Scale,
    keep: u32,
    out_of: u32,
    pattern: CantorPattern,
    window_bits: u32,
    window_index: u32,
) -> Result<GridSet1D> {
    let bits = check_cantor_args(keep, out_of)?;
    if window_bits > scale.m() || window_index as u64 >= 1u64 << window_bits {
        return Err(Error::IncompatibleScale(format!(
            "window 2^-{window_bits} (index {window_index}) does not fit m = {}",
            scale.m()
        )));
    }
    let inner = scale.m() - window_bits;
    let depth = inner.div_ceil(bits);
    let fine = depth * bits;
    if window_bits + fine > 62 {
        return Err(Error::IncompatibleScale("construction too deep".into()));
    }
    let shift = fine - inner;
    let base = (window_index as u64) << inner;
    let cells = cantor_cells(depth, keep, out_of, pattern)
        .into_iter()
        .map(|c| (base + (c >> shift)) as u32);
    let lo = q(window_index as i128, 1i128 << window_bits);
    let hi = q(window_index as i128 + 1, 1i128 << window_bits);
    GridSet1D::with_support(scale, cells, lo, hi)
}

/// Random set whose cells of side `r` hold about `(r / delta)^s` points.
///
/// Level by level each surviving cell keeps one or two children; the number of
/// doubling cells is chosen so the level count tracks `2^(j s)`. Samples are
/// rejected until the Katz-Tao constant is at most [`RANDOM_KT_CONSTANT`].
pub fn random_frostman_set(scale: Scale, s: f64, seed: u64) -> Result<GridSet1D> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidInput(format!("s = {s} outside (0, 1]")));
    }
    for attempt in 0..MAX_RESAMPLES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut cells: Vec<u32> = vec![0];
        for j in 1..=scale.m() {
            let target = ((j as f64 * s).exp2().round() as usize).clamp(cells.len(), 2 * cells.len());
            let mut doubling = vec![false; cells.len()];
            for d in doubling.iter_mut().take(target - cells.len()) {
                *d = true;
            }
            doubling.shuffle(&mut rng);
            let mut next = Vec::with_capacity(target);
            for (&c, &both) in cells.iter().zip(&doubling) {
                if both {
                    next.extend([2 * c, 2 * c + 1]);
                } else {
                    next.push(2 * c + rng.gen_range(0..2));
                }
            }
            cells = next;
        }
        let set = GridSet1D::new(scale, cells)?;
        if validate_set_1d(&set, SetKind::KatzTao, s).c <= RANDOM_KT_CONSTANT {
            return Ok(set);
        }
    }
    Err(Error::ResampleExhausted {
        attempts: MAX_RESAMPLES,
    })
}

fn ratio(kind: SetKind, s: f64, count: usize, j: u32, m: u32, total: usize) -> f64 {
    match kind {
        SetKind::KatzTao => count as f64 / (j as f64 * s).exp2(),
        SetKind::Frostman => count as f64 / ((j as f64 - m as f64) * s).exp2() / total as f64,
    }
}

/// Exact minimal constant of the Frostman / Katz-Tao condition over dyadic
/// radii `r = 2^j delta <= 1` and all centers.
///
/// Points are the cell midpoints. For a fixed radius the count is maximised
/// by a ball whose left end sits on a point, which puts the maximiser on the
/// `delta / 2` lattice; the scan visits exactly those balls.
pub fn validate_set_1d(set: &GridSet1D, kind: SetKind, s: f64) -> KtWitness {
    let m = set.scale().m();
    // midpoints in units of delta / 2
    let pts: Vec<i64> = set.cells().iter().map(|&k| 2 * k as i64 + 1).collect();
    let half = set.scale().delta() / 2.0;
    let mut best = KtWitness {
        kind,
        s,
        c: 0.0,
        violating_ball: None,
    };
    for j in 0..=m {
        let r = 2i64 << j;
        let mut hi = 0;
        let mut top = (0usize, 0i64);
        for (i, &p) in pts.iter().enumerate() {
            while hi < pts.len() && pts[hi] <= p + 2 * r {
                hi += 1;
            }
            if hi - i > top.0 {
                top = (hi - i, p + r);
            }
        }
        if top.0 == 0 {
            continue;
        }
        let c = ratio(kind, s, top.0, j, m, pts.len());
        if c > best.c {
            best.c = c;
            best.violating_ball = Some(Ball {
                center: vec![top.1 as f64 * half],
                radius: r as f64 * half,
                count: top.0,
            });
        }
    }
    best
}

/// Two-dimensional version of [`validate_set_1d`] with sup-metric balls.
pub fn validate_set_2d(set: &GridSet2D, kind: SetKind, s: f64) -> KtWitness {
    let m = set.scale().m();
    let mut pts: Vec<(i64, i64)> = set
        .cells()
        .iter()
        .map(|&(i, j)| (2 * i as i64 + 1, 2 * j as i64 + 1))
        .collect();
    pts.sort_unstable();
    let half = set.scale().delta() / 2.0;
    let mut best = KtWitness {
        kind,
        s,
        c: 0.0,
        violating_ball: None,
    };
    let mut ys = Vec::new();
    for j in 0..=m {
        let r = 2i64 << j;
        let mut top = (0usize, (0i64, 0i64));
        let mut start = 0;
        while start < pts.len() {
            let x0 = pts[start].0;
            let end = pts[start..].partition_point(|p| p.0 <= x0 + 2 * r) + start;
            if end - start > top.0 {
                ys.clear();
                ys.extend(pts[start..end].iter().map(|p| p.1));
                ys.sort_unstable();
                let mut hi = 0;
                for (i, &y) in ys.iter().enumerate() {
                    while hi < ys.len() && ys[hi] <= y + 2 * r {
                        hi += 1;
                    }
                    if hi - i > top.0 {
                        top = (hi - i, (x0 + r, y + r));
                    }
                }
            }
            start += pts[start..].partition_point(|p| p.0 == x0);
        }
        if top.0 == 0 {
            continue;
        }
        let c = ratio(kind, s, top.0, j, m, pts.len());
        if c > best.c {
            best.c = c;
            best.violating_ball = Some(Ball {
                center: vec![top.1 .0 as f64 * half, top.1 .1 as f64 * half],
                radius: r as f64 * half,
                count: top.0,
            });
        }
    }
    best
}

/// Katz-Tao constant of a finite set of real values (e.g. slopes), measured
/// at scale delta with point counts in closed intervals of radius
/// `r = 2^j delta` for `delta <= r <= r_max`.
pub fn kt_constant_of_values(values: &[Q], delta: Q, s: f64, r_max: Q) -> f64 {
    let mut v: Vec<Q> = values.to_vec();
    v.sort_unstable();
    let mut best: f64 = 0.0;
    let mut r = delta;
    while r <= r_max {
        let mut hi = 0;
        let mut top = 0;
        for (i, &x) in v.iter().enumerate() {
            while hi < v.len() && v[hi] <= x + r + r {
                hi += 1;
            }
            top = top.max(hi - i);
        }
        let units = crate::grid::q_to_f64(r / delta);
        best = best.max(top as f64 / units.powf(s));
        r *= q(2, 1);
    }
    best
}

/// Solves `log2(2 T) / T = epsilon` on the decreasing branch.
pub fn branching_period(epsilon: f64) -> Option<f64> {
    let g = |t: f64| (2.0 * t).log2() / t;
    let peak = std::f64::consts::E / 2.0;
    if !(epsilon > 0.0 && epsilon < g(peak)) {
        return None;
    }
    let (mut lo, mut hi) = (peak, peak);
    while g(hi) > epsilon {
        hi *= 2.0;
        if hi > 1e12 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityCertificate {
    pub epsilon: f64,
    /// Branching period from `log2(2 T) / T = epsilon`.
    pub t_epsilon: f64,
    /// Bit depths `0 = d_0 < ... < d_n = m` of the uniformity levels.
    pub level_depths: Vec<u32>,
    /// Common number of occupied children below each level.
    pub per_level_counts: Vec<usize>,
    /// Largest max/min child-count ratio observed on the output.
    pub ratio_bound: f64,
    pub tolerance: f64,
    /// Guaranteed lower bound on the output size.
    pub mass_bound: f64,
}

/// Level depths for uniformisation at bit depth `m`.
///
/// Uses `floor(m / T_eps)` levels as in the definition, but never fewer than
/// two; at the scales reachable here `T_eps` usually exceeds `m`.
pub fn uniform_levels(m: u32, epsilon: f64) -> Result<(f64, Vec<u32>)> {
    let t = branching_period(epsilon).ok_or_else(|| Error::EpsilonTooSmall {
        epsilon,
        m,
        detail: "no branching period solves log2(2T)/T = epsilon".into(),
    })?;
    if m < 2 {
        return Err(Error::EpsilonTooSmall {
            epsilon,
            m,
            detail: "need at least two bits for two uniformity levels".into(),
        });
    }
    let n = ((m as f64 / t).floor() as u32).clamp(2, m);
    let depths = (0..=n)
        .map(|j| ((j as f64 * m as f64) / n as f64).round() as u32)
        .collect();
    Ok((t, depths))
}

fn key_at(p: (u32, u32), m: u32, d: u32) -> (u32, u32) {
    let sh = m - d;
    if sh >= 32 {
        (0, 0)
    } else {
        (p.0 >> sh, p.1 >> sh)
    }
}

/// Child-count ratio (max/min over occupied parents) and common count per level.
pub fn level_child_ratios(points: &[(u32, u32)], m: u32, depths: &[u32]) -> Vec<(usize, usize)> {
    depths
        .windows(2)
        .map(|w| {
            let mut children: BTreeMap<(u32, u32), Vec<(u32, u32)>> = BTreeMap::new();
            for &p in points {
                children.entry(key_at(p, m, w[0])).or_default().push(key_at(p, m, w[1]));
            }
            let counts = children.values_mut().map(|c| {
                c.sort_unstable();
                c.dedup();
                c.len()
            });
            counts.fold((usize::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)))
        })
        .collect()
}

/// Cell-mass ratio `max #(A cap P) / min #(A cap P)` over occupied cells at each level.
pub fn level_mass_ratios(points: &[(u32, u32)], m: u32, depths: &[u32]) -> Vec<f64> {
    depths
        .iter()
        .map(|&d| {
            let mut mass: BTreeMap<(u32, u32), usize> = BTreeMap::new();
            for &p in points {
                *mass.entry(key_at(p, m, d)).or_default() += 1;
            }
            let lo = mass.values().copied().min().unwrap_or(1);
            let hi = mass.values().copied().max().unwrap_or(1);
            hi as f64 / lo as f64
        })
        .collect()
}

fn uniformize(points: &[(u32, u32)], m: u32, depths: &[u32]) -> (Vec<(u32, u32)>, Vec<usize>, f64) {
    let mut alive: Vec<(u32, u32)> = points.to_vec();
    let mut counts = vec![0usize; depths.len() - 1];
    let mut factor = 1.0;
    // bottom-up: pruning a coarse level removes whole subtrees and leaves the
    // finer counts untouched
    for lvl in (0..depths.len() - 1).rev() {
        let (dp, dc) = (depths[lvl], depths[lvl + 1]);
        let mut tree: BTreeMap<(u32, u32), BTreeMap<(u32, u32), Vec<(u32, u32)>>> = BTreeMap::new();
        for &p in &alive {
            tree.entry(key_at(p, m, dp))
                .or_default()
                .entry(key_at(p, m, dc))
                .or_default()
                .push(p);
        }
        let mut buckets: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for kids in tree.values() {
            let c = kids.len();
            let mass: usize = kids.values().map(Vec::len).sum();
            let e = buckets.entry(usize::BITS - 1 - c.leading_zeros()).or_insert((0, usize::MAX));
            e.0 += mass;
            e.1 = e.1.min(c);
        }
        let (&bucket, &(_, c_min)) = buckets
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(a.0.cmp(b.0)))
            .expect("nonempty set");
        factor *= 1.0 / (2.0 * buckets.len() as f64);
        counts[lvl] = c_min;
        alive = tree
            .values()
            .filter(|kids| usize::BITS - 1 - kids.len().leading_zeros() == bucket)
            .flat_map(|kids| kids.values().take(c_min).flatten().copied())
            .collect();
        alive.sort_unstable();
    }
    (alive, counts, factor)
}

fn certify(
    input_len: usize,
    out: &[(u32, u32)],
    m: u32,
    epsilon: f64,
    t: f64,
    depths: Vec<u32>,
    counts: Vec<usize>,
    factor: f64,
) -> UniformityCertificate {
    let ratio_bound = level_child_ratios(out, m, &depths)
        .into_iter()
        .map(|(lo, hi)| if lo == usize::MAX { 1.0 } else { hi as f64 / lo as f64 })
        .fold(1.0, f64::max);
    UniformityCertificate {
        epsilon,
        t_epsilon: t,
        level_depths: depths,
        per_level_counts: counts,
        ratio_bound,
        tolerance: DEFAULT_UNIFORM_TOLERANCE,
        mass_bound: input_len as f64 * factor,
    }
}

/// Extracts an epsilon-uniform subset.
///
/// Works bottom-up over the uniformity levels: parents are bucketed by their
/// number of occupied children (dyadically), the heaviest bucket survives and
/// every survivor is trimmed to the bucket's minimum count. Child counts are
/// therefore exactly equal at every level of the output, and each level keeps
/// at least `1 / (2 * #buckets)` of the mass.
pub fn uniform_subset_1d(set: &GridSet1D, epsilon: f64) -> Result<(GridSet1D, UniformityCertificate)> {
    let m = set.scale().m();
    let (t, depths) = uniform_levels(m, epsilon)?;
    if set.is_empty() {
        let cert = certify(0, &[], m, epsilon, t, depths.clone(), vec![0; depths.len() - 1], 1.0);
        return Ok((set.clone(), cert));
    }
    let pts: Vec<(u32, u32)> = set.cells().iter().map(|&k| (k, 0)).collect();
    let (out, counts, factor) = uniformize(&pts, m, &depths);
    let cert = certify(set.len(), &out, m, epsilon, t, depths, counts, factor);
    let kept: std::collections::HashSet<u32> = out.iter().map(|p| p.0).collect();
    Ok((set.filter(|k| kept.contains(&k)), cert))
}

pub fn uniform_subset_2d(set: &GridSet2D, epsilon: f64) -> Result<(GridSet2D, UniformityCertificate)> {
    let m = set.scale().m();
    let (t, depths) = uniform_levels(m, epsilon)?;
    if set.is_empty() {
        let cert = certify(0, &[], m, epsilon, t, depths.clone(), vec![0; depths.len() - 1], 1.0);
        return Ok((set.clone(), cert));
    }
    let (out, counts, factor) = uniformize(set.cells(), m, &depths);
    let cert = certify(set.len(), &out, m, epsilon, t, depths, counts, factor);
    Ok((GridSet2D::new(set.scale(), out)?, cert))
}

/// Result of [`dyadic_pigeonhole`]: the items whose key lies in `[2^exponent, 2^(exponent+1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pigeonhole<T> {
    pub exponent: i32,
    pub items: Vec<T>,
    pub mass: f64,
    pub total_mass: f64,
    pub classes: usize,
}

/// Groups items by the dyadic range of a positive key and returns the class
/// carrying the largest total key mass (ties go to the larger keys).
pub fn dyadic_pigeonhole<T: Clone>(items: &[T], key: impl Fn(&T) -> f64) -> Option<Pigeonhole<T>> {
    if items.is_empty() {
        return None;
    }
    let mut classes: BTreeMap<i32, (f64, Vec<T>)> = BTreeMap::new();
    let mut total = 0.0;
    for it in items {
        let k = key(it);
        assert!(k > 0.0 && k.is_finite(), "pigeonhole keys must be positive");
        total += k;
        let e = classes.entry(k.log2().floor() as i32).or_insert((0.0, Vec::new()));
        e.0 += k;
        e.1.push(it.clone());
    }
    let n = classes.len();
    let (exponent, (mass, items)) = classes
        .into_iter()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))?;
    Some(Pigeonhole {
        exponent,
        items,
        mass,
        total_mass: total,
        classes: n,
    })
}

/// Generator description used by experiment specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GenSpec {
    Cantor {
        #[serde(default)]
        m: Option<u32>,
        keep: u32,
        of: u32,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        pattern: Option<String>,
    },
    Random {
        #[serde(default)]
        m: Option<u32>,
        s: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Full {
        #[serde(default)]
        m: Option<u32>,
    },
}

impl GenSpec {
    /// Nominal dimension of the generated set.
    pub fn dimension(&self) -> f64 {
        match self {
            GenSpec::Cantor { keep, of, .. } => (*keep as f64).ln() / (*of as f64).ln(),
            GenSpec::Random { s, .. } => *s,
            GenSpec::Full { .. } => 1.0,
        }
    }

    pub fn m(&self) -> Option<u32> {
        match self {
            GenSpec::Cantor { m, .. } | GenSpec::Random { m, .. } | GenSpec::Full { m } => *m,
        }
    }

    fn pattern(&self, seed: u64) -> Result<CantorPattern> {
        match self {
            GenSpec::Cantor { pattern, seed: own, .. } => match pattern.as_deref() {
                None | Some("spread") => Ok(CantorPattern::Spread),
                Some("leftmost") => Ok(CantorPattern::Leftmost),
                Some("random") => Ok(CantorPattern::Random(own.unwrap_or(seed))),
                Some(other) => Err(Error::InvalidInput(format!("unknown cantor pattern {other:?}"))),
            },
            _ => Ok(CantorPattern::Spread),
        }
    }

    /// Generates on `[0, 1]` at the given scale.
    pub fn generate(&self, scale: Scale, seed: u64) -> Result<GridSet1D> {
        self.generate_in_window(scale, seed, 0, 0)
    }

    /// Generates on `[1/2, 1]`, the window used by the expander experiments.
    pub fn generate_upper_half(&self, scale: Scale, seed: u64) -> Result<GridSet1D> {
        self.generate_in_window(scale, seed, 1, 1)
    }

    fn generate_in_window(&self, scale: Scale, seed: u64, bits: u32, index: u32) -> Result<GridSet1D> {
        match self {
            GenSpec::Cantor { keep, of, .. } => {
                cantor_in_window(scale, *keep, *of, self.pattern(seed)?, bits, index)
            }
            GenSpec::Random { s, seed: own, .. } => {
                let inner = Scale::new(scale.m() - bits.min(scale.m()))?;
                let base = random_frostman_set(inner, *s, own.unwrap_or(seed))?;
                let offset = index << (scale.m() - bits);
                GridSet1D::with_support(
                    scale,
                    base.cells().iter().map(|&k| offset + k),
                    q(index as i128, 1i128 << bits),
                    q(index as i128 + 1, 1i128 << bits),
                )
            }
            GenSpec::Full { .. } => {
                let offset = index << (scale.m() - bits);
                GridSet1D::with_support(
                    scale,
                    (0..1u32 << (scale.m() - bits)).map(|k| offset + k),
                    q(index as i128, 1i128 << bits),
                    q(index as i128 + 1, 1i128 << bits),
                )
            }
        }
    }
}
