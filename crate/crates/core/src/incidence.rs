//! Tube/square incidences and shadings.
//!
//! A tube is the closed vertical neighbourhood `{(x, y) : x in [x_lo, x_hi],
//! |y - (slope x + intercept)| <= w}` with `w` a small multiple of delta. For a
//! closed delta-square with center `(x_c, y_c)` fully inside the tube's
//! x-extent, the two closed sets meet iff
//! `|y_c - (slope x_c + intercept)| <= w + (1 + |slope|) delta / 2`, which is
//! evaluated in integers after clearing denominators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frostman::{kt_constant_of_values, validate_set_2d, SetKind};
use crate::grid::{q, q_int, q_to_f64, GridSet2D, Scale, Q};
use crate::par::{self, Exec};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tube {
    pub scale: Scale,
    pub slope: Q,
    pub intercept: Q,
    /// Vertical half-width in units of delta: 1, 2 or 4.
    pub width_cells: u32,
    pub multiplicity: u64,
    pub id: u64,
    pub x_lo: Q,
    pub x_hi: Q,
}

impl Tube {
    /// A full-length tube of half-width `2 delta` over `[0, 1]`.
    pub fn new(scale: Scale, slope: Q, intercept: Q) -> Self {
        Tube {
            scale,
            slope,
            intercept,
            width_cells: 2,
            multiplicity: 1,
            id: 0,
            x_lo: q_int(0),
            x_hi: q_int(1),
        }
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }

    pub fn with_multiplicity(mut self, mult: u64) -> Result<Self> {
        if mult == 0 {
            return Err(Error::InvalidInput("tube multiplicity must be >= 1".into()));
        }
        self.multiplicity = mult;
        Ok(self)
    }

    pub fn with_width(mut self, cells: u32) -> Result<Self> {
        if ![1, 2, 4].contains(&cells) {
            return Err(Error::InvalidInput(format!("tube width {cells} delta not in {{1, 2, 4}}")));
        }
        self.width_cells = cells;
        Ok(self)
    }

    /// Restricts the tube to the axial x-range `[lo, hi]`.
    pub fn segment(mut self, lo: Q, hi: Q) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidInput(format!("empty segment [{lo}, {hi}]")));
        }
        self.x_lo = lo;
        self.x_hi = hi;
        Ok(self)
    }

    pub fn half_width(&self) -> Q {
        self.scale.delta_q() * q_int(self.width_cells as i128)
    }

    pub fn axis_at(&self, x: Q) -> Q {
        self.slope * x + self.intercept
    }

    pub fn is_full_length(&self) -> bool {
        self.x_lo <= q_int(0) && self.x_hi >= q_int(1)
    }
}

/// Decides whether the closed square `(i, j)` meets the closed tube.
pub fn incident(square: (u32, u32), scale: Scale, tube: &Tube) -> Result<bool> {
    if scale != tube.scale {
        return Err(Error::ScaleMismatch {
            source_m: tube.scale.m(),
            target_m: scale.m(),
        });
    }
    Ok(incident_unchecked(square, tube))
}

fn incident_unchecked(square: (u32, u32), tube: &Tube) -> bool {
    let scale = tube.scale;
    let x0 = scale.cell_lo(square.0);
    let x1 = x0 + scale.delta_q();
    if x0 >= tube.x_lo && x1 <= tube.x_hi {
        if let Some(hit) = center_test(square, tube) {
            return hit;
        }
    }
    general_test(square, tube)
}

/// Integer form of the center-distance test, `None` on overflow.
fn center_test(square: (u32, u32), tube: &Tube) -> Option<bool> {
    let (p, qd) = (*tube.slope.numer(), *tube.slope.denom());
    let (r, s) = (*tube.intercept.numer(), *tube.intercept.denom());
    let d = 1i128 << (tube.scale.m() + 1);
    let xi = 2 * square.0 as i128 + 1;
    let yj = 2 * square.1 as i128 + 1;
    let qs = qd.checked_mul(s)?;
    let lhs = qs
        .checked_mul(yj)?
        .checked_sub(p.checked_mul(s)?.checked_mul(xi)?)?
        .checked_sub(r.checked_mul(qd)?.checked_mul(d)?)?;
    let rhs = (2 * tube.width_cells as i128)
        .checked_mul(qs)?
        .checked_add(qd.checked_add(p.abs())?.checked_mul(s)?)?;
    Some(lhs.checked_abs()? <= rhs)
}

fn general_test(square: (u32, u32), tube: &Tube) -> bool {
    let scale = tube.scale;
    let x0 = scale.cell_lo(square.0).max(tube.x_lo);
    let x1 = (scale.cell_lo(square.0) + scale.delta_q()).min(tube.x_hi);
    if x0 > x1 {
        return false;
    }
    let (a, b) = (tube.axis_at(x0), tube.axis_at(x1));
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let w = tube.half_width();
    let y0 = scale.cell_lo(square.1);
    let y1 = y0 + scale.delta_q();
    y0 - w <= hi && y1 + w >= lo
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiProductClaim {
    pub s: f64,
    pub d: f64,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TubeFamily {
    pub scale: Scale,
    pub tubes: Vec<Tube>,
    pub quasi_product: Option<QuasiProductClaim>,
}

#[derive(Serialize, Deserialize)]
struct TubeWire {
    slope: [i128; 2],
    intercept: [i128; 2],
    #[serde(default = "one")]
    mult: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_range: Option<[[i128; 2]; 2]>,
}

fn one() -> u64 {
    1
}

#[derive(Serialize, Deserialize)]
struct FamilyWire {
    m: u32,
    tubes: Vec<TubeWire>,
}

fn ratio_from(pair: [i128; 2]) -> Result<Q> {
    if pair[1] == 0 {
        return Err(Error::InvalidInput("zero denominator".into()));
    }
    Ok(q(pair[0], pair[1]))
}

impl TubeFamily {
    pub fn new(scale: Scale, tubes: Vec<Tube>) -> Result<Self> {
        if let Some(t) = tubes.iter().find(|t| t.scale != scale) {
            return Err(Error::ScaleMismatch {
                source_m: t.scale.m(),
                target_m: scale.m(),
            });
        }
        Ok(TubeFamily {
            scale,
            tubes,
            quasi_product: None,
        })
    }

    pub fn len(&self) -> usize {
        self.tubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tubes.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: FamilyWire = serde_json::from_str(text)?;
        let scale = Scale::new(wire.m)?;
        let mut tubes = Vec::with_capacity(wire.tubes.len());
        for (idx, t) in wire.tubes.into_iter().enumerate() {
            let mut tube = Tube::new(scale, ratio_from(t.slope)?, ratio_from(t.intercept)?)
                .with_id(t.id.unwrap_or(idx as u64))
                .with_multiplicity(t.mult)?
                .with_width(t.width.unwrap_or(2))?;
            if let Some([lo, hi]) = t.x_range {
                tube = tube.segment(ratio_from(lo)?, ratio_from(hi)?)?;
            }
            tubes.push(tube);
        }
        TubeFamily::new(scale, tubes)
    }

    pub fn to_json(&self) -> String {
        let pair = |x: Q| [*x.numer(), *x.denom()];
        let wire = FamilyWire {
            m: self.scale.m(),
            tubes: self
                .tubes
                .iter()
                .map(|t| TubeWire {
                    slope: pair(t.slope),
                    intercept: pair(t.intercept),
                    mult: t.multiplicity,
                    id: Some(t.id),
                    width: (t.width_cells != 2).then_some(t.width_cells),
                    x_range: (!t.is_full_length()).then(|| [pair(t.x_lo), pair(t.x_hi)]),
                })
                .collect(),
        };
        serde_json::to_string(&wire).expect("tube family serialises")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiProductReport {
    pub direction_constant: f64,
    pub max_fiber_constant: f64,
    pub holds: bool,
}

/// Re-checks a quasi-product claim: the direction set must be `(delta, s, K1)`-KT
/// and every direction fiber (tubes sharing a slope) `(delta, d, K2)`-KT in
/// the intercept coordinate.
pub fn check_quasi_product(family: &TubeFamily, claim: &QuasiProductClaim) -> QuasiProductReport {
    let delta = family.scale.delta_q();
    let mut fibers: BTreeMap<Q, Vec<Q>> = BTreeMap::new();
    for t in &family.tubes {
        fibers.entry(t.slope).or_default().push(t.intercept);
    }
    let slopes: Vec<Q> = fibers.keys().copied().collect();
    let direction_constant = kt_constant_of_values(&slopes, delta, claim.s, q_int(4));
    let max_fiber_constant = fibers
        .values()
        .map(|f| kt_constant_of_values(f, delta, claim.d, q_int(4)))
        .fold(0.0, f64::max);
    QuasiProductReport {
        direction_constant,
        max_fiber_constant,
        holds: direction_constant <= claim.k1 && max_fiber_constant <= claim.k2,
    }
}

/// Tube -> incident squares, together with the dual map.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Shading {
    /// `(tube id, squares)` in tube order; squares sorted.
    pub entries: Vec<(u64, Vec<(u32, u32)>)>,
    /// Square -> ids of the tubes shading it, sorted.
    pub dual_entries: BTreeMap<(u32, u32), Vec<u64>>,
}

impl Shading {
    pub fn from_entries(entries: Vec<(u64, Vec<(u32, u32)>)>) -> Self {
        let mut dual_entries: BTreeMap<(u32, u32), Vec<u64>> = BTreeMap::new();
        for (id, squares) in &entries {
            for &p in squares {
                dual_entries.entry(p).or_default().push(*id);
            }
        }
        for ids in dual_entries.values_mut() {
            ids.sort_unstable();
        }
        Shading { entries, dual_entries }
    }

    pub fn incidences(&self) -> usize {
        self.entries.iter().map(|(_, s)| s.len()).sum()
    }

    pub fn dual_incidences(&self) -> usize {
        self.dual_entries.values().map(Vec::len).sum()
    }

    pub fn of(&self, id: u64) -> Option<&[(u32, u32)]> {
        self.entries.iter().find(|(t, _)| *t == id).map(|(_, s)| s.as_slice())
    }

    /// Adjacency-list dump, one line per tube: `id: i,j i,j ...`.
    pub fn adjacency_lists(&self) -> String {
        let mut out = String::new();
        for (id, squares) in &self.entries {
            out.push_str(&id.to_string());
            out.push(':');
            for (i, j) in squares {
                out.push_str(&format!(" {i},{j}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_scales(tubes: &TubeFamily, squares: &GridSet2D) -> Result<()> {
    if tubes.scale != squares.scale() {
        return Err(Error::ScaleMismatch {
            source_m: tubes.scale.m(),
            target_m: squares.scale().m(),
        });
    }
    Ok(())
}

/// Squares of `squares` incident to one tube, by walking its columns.
pub fn tube_squares(tube: &Tube, squares: &GridSet2D) -> Vec<(u32, u32)> {
    let scale = tube.scale;
    let side = scale.side() as i128;
    let n = q_int(side);
    let i_lo = ((tube.x_lo * n).ceil().to_integer() - 1).max(0);
    let i_hi = (tube.x_hi * n).floor().to_integer().min(side - 1);
    let cells = squares.cells();
    let slope = q_to_f64(tube.slope);
    let intercept = q_to_f64(tube.intercept);
    let w = tube.width_cells as f64;
    let mut out = Vec::new();
    for i in i_lo..=i_hi {
        // column in delta units: axis y/delta over [i, i + 1]
        let a = slope * i as f64 + intercept * side as f64;
        let b = a + slope;
        let (lo, hi) = (a.min(b) - w, a.max(b) + w);
        if hi < -2.0 || lo > side as f64 + 2.0 {
            continue;
        }
        let j_lo = (lo.floor() as i128 - 2).clamp(0, side - 1) as u32;
        let j_hi = (hi.floor() as i128 + 2).clamp(0, side - 1) as u32;
        let i = i as u32;
        let start = cells.partition_point(|&c| c < (i, j_lo));
        let end = cells.partition_point(|&c| c <= (i, j_hi));
        out.extend(cells[start..end].iter().copied().filter(|&c| incident_unchecked(c, tube)));
    }
    out
}

/// Full shading `Y(T) = {p : p meets T}` via column rasterisation.
pub fn full_shading(tubes: &TubeFamily, squares: &GridSet2D) -> Result<Shading> {
    full_shading_with(tubes, squares, Exec::default())
}

pub fn full_shading_with(tubes: &TubeFamily, squares: &GridSet2D, exec: Exec) -> Result<Shading> {
    check_scales(tubes, squares)?;
    let entries = par::map(exec, &tubes.tubes, |t| (t.id, tube_squares(t, squares)));
    Ok(Shading::from_entries(entries))
}

/// All-pairs reference implementation of [`full_shading`].
pub fn full_shading_all_pairs(tubes: &TubeFamily, squares: &GridSet2D) -> Result<Shading> {
    check_scales(tubes, squares)?;
    let entries = tubes
        .tubes
        .iter()
        .map(|t| {
            let hit = squares.cells().iter().copied().filter(|&c| incident_unchecked(c, t)).collect();
            (t.id, hit)
        })
        .collect();
    Ok(Shading::from_entries(entries))
}

/// `sum_T mult(T)^weighted * #Y(T)`.
pub fn incidence_count(tubes: &TubeFamily, squares: &GridSet2D, weighted: bool) -> Result<u64> {
    incidence_count_with(tubes, squares, weighted, Exec::default())
}

pub fn incidence_count_with(
    tubes: &TubeFamily,
    squares: &GridSet2D,
    weighted: bool,
    exec: Exec,
) -> Result<u64> {
    check_scales(tubes, squares)?;
    let counts = par::map(exec, &tubes.tubes, |t| {
        let n = tube_squares(t, squares).len() as u64;
        if weighted {
            n * t.multiplicity
        } else {
            n
        }
    });
    Ok(counts.into_iter().sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoEndsParams {
    epsilon1: f64,
    epsilon2: f64,
}

impl TwoEndsParams {
    pub fn new(epsilon1: f64, epsilon2: f64) -> Result<Self> {
        if !(0.0 < epsilon2 && epsilon2 < epsilon1 && epsilon1 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "two-ends parameters need 0 < eps2 < eps1 < 1, got ({epsilon1}, {epsilon2})"
            )));
        }
        Ok(TwoEndsParams { epsilon1, epsilon2 })
    }

    pub fn epsilon1(&self) -> f64 {
        self.epsilon1
    }

    pub fn epsilon2(&self) -> f64 {
        self.epsilon2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoEndsCheck {
    pub holds: bool,
    pub worst_center: [f64; 2],
    pub worst_count: usize,
    pub threshold: f64,
    pub radius: f64,
}

/// Largest number of square midpoints in a closed sup-ball of the given
/// radius (in delta units), with a center attaining it.
///
/// The maximum over all centers is attained by a box whose left and bottom
/// edges pass through midpoints, so only those boxes are visited.
pub fn max_ball_count(squares: &[(u32, u32)], radius_cells: f64) -> (usize, [f64; 2]) {
    let pts: Vec<(f64, f64)> = squares.iter().map(|&(i, j)| (i as f64 + 0.5, j as f64 + 0.5)).collect();
    max_box_count(pts, radius_cells)
}

/// [`max_ball_count`] for arbitrary points (any common unit).
pub fn max_box_count(mut pts: Vec<(f64, f64)>, radius: f64) -> (usize, [f64; 2]) {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let span = 2.0 * radius;
    let mut best = (0usize, [0.0, 0.0]);
    let mut ys = Vec::new();
    let mut start = 0;
    while start < pts.len() {
        let x0 = pts[start].0;
        let end = start + pts[start..].partition_point(|p| p.0 <= x0 + span);
        if end - start > best.0 {
            ys.clear();
            ys.extend(pts[start..end].iter().map(|p| p.1));
            ys.sort_by(f64::total_cmp);
            let mut hi = 0;
            for (k, &y) in ys.iter().enumerate() {
                while hi < ys.len() && ys[hi] <= y + span {
                    hi += 1;
                }
                if hi - k > best.0 {
                    best = (hi - k, [x0 + radius, y + radius]);
                }
            }
        }
        start += pts[start..].partition_point(|p| p.0 == x0);
    }
    best
}

/// Katz-Tao constant of a planar point set given in delta units: the largest
/// `#(X cap B(x, r)) / r^s` over dyadic radii `1 <= r <= 2^max_j`.
pub fn points_kt_constant(points: &[(f64, f64)], s: f64, max_j: u32) -> f64 {
    (0..=max_j)
        .map(|j| {
            let r = (j as f64).exp2();
            max_box_count(points.to_vec(), r).0 as f64 / r.powf(s)
        })
        .fold(0.0, f64::max)
}

/// Checks `#(Y cap B(x, delta^eps1)) <= delta^eps2 #Y` for every center `x`.
pub fn is_two_ends(shading: &[(u32, u32)], params: TwoEndsParams, scale: Scale) -> TwoEndsCheck {
    let delta = scale.delta();
    let radius_cells = delta.powf(params.epsilon1) / delta;
    concentration_check(shading, radius_cells, delta.powf(params.epsilon2), scale)
}

/// Generic non-concentration check with an explicit radius (delta units) and
/// allowed fraction.
pub fn concentration_check(shading: &[(u32, u32)], radius_cells: f64, fraction: f64, scale: Scale) -> TwoEndsCheck {
    let delta = scale.delta();
    let (count, c) = max_ball_count(shading, radius_cells);
    let threshold = fraction * shading.len() as f64;
    TwoEndsCheck {
        holds: !shading.is_empty() && count as f64 <= threshold,
        worst_center: [c[0] * delta, c[1] * delta],
        worst_count: count,
        threshold,
        radius: radius_cells * delta,
    }
}

/// Katz-Tao constant of a set of squares at exponent `s` (sup-metric).
pub fn squares_kt_constant(scale: Scale, squares: &[(u32, u32)], s: f64) -> Result<f64> {
    Ok(validate_set_2d(&GridSet2D::new(scale, squares.iter().copied())?, SetKind::KatzTao, s).c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sc(m: u32) -> Scale {
        Scale::new(m).unwrap()
    }

    /// Separating-axis test between the tube parallelogram and the square.
    fn sat_oracle(square: (u32, u32), tube: &Tube) -> bool {
        let s = tube.scale;
        let x_lo = tube.x_lo.max(q_int(0)).min(q_int(1));
        let x_hi = tube.x_hi.max(q_int(0)).min(q_int(1));
        let w = tube.half_width();
        let poly = [
            (x_lo, tube.axis_at(x_lo) - w),
            (x_hi, tube.axis_at(x_hi) - w),
            (x_hi, tube.axis_at(x_hi) + w),
            (x_lo, tube.axis_at(x_lo) + w),
        ];
        let x0 = s.cell_lo(square.0);
        let y0 = s.cell_lo(square.1);
        let d = s.delta_q();
        let rect = [(x0, y0), (x0 + d, y0), (x0 + d, y0 + d), (x0, y0 + d)];
        let axes = [
            (q_int(1), q_int(0)),
            (q_int(0), q_int(1)),
            (-tube.slope, q_int(1)),
        ];
        axes.iter().all(|&(ax, ay)| {
            let proj = |pts: &[(Q, Q)]| {
                let v: Vec<Q> = pts.iter().map(|&(x, y)| x * ax + y * ay).collect();
                (*v.iter().min().unwrap(), *v.iter().max().unwrap())
            };
            let (a0, a1) = proj(&poly);
            let (b0, b1) = proj(&rect);
            a1 >= b0 && b1 >= a0
        })
    }

    fn random_tube(rng: &mut ChaCha8Rng, scale: Scale) -> Tube {
        let slope = q(rng.gen_range(-300..=300), rng.gen_range(1..=150));
        let intercept = q(rng.gen_range(-512..=768), 512);
        Tube::new(scale, slope, intercept)
    }

    #[test]
    fn line_through_square() {
        let s = sc(6);
        let t = Tube::new(s, q_int(1), q_int(0));
        assert!(incident((10, 10), s, &t).unwrap());
        assert!(incident((10, 11), s, &t).unwrap());
    }

    #[test]
    fn far_square_is_not_incident() {
        let s = sc(6);
        let t = Tube::new(s, q_int(1), q_int(0));
        assert!(!incident((10, 20), s, &t).unwrap());
    }

    #[test]
    fn scale_mismatch() {
        let t = Tube::new(sc(6), q_int(1), q_int(0));
        assert!(matches!(incident((0, 0), sc(5), &t), Err(Error::ScaleMismatch { .. })));
    }

    #[test]
    fn predicate_matches_sat_oracle() {
        let s = sc(8);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let mut t = random_tube(&mut rng, s);
            if rng.gen_bool(0.3) {
                let a = rng.gen_range(0..200);
                let b = rng.gen_range(a..256);
                t = t.segment(q(a, 256), q(2 * b + 1, 512)).unwrap();
            }
            for _ in 0..200 {
                let sq = (rng.gen_range(0..256), rng.gen_range(0..256));
                assert_eq!(incident(sq, s, &t).unwrap(), sat_oracle(sq, &t), "{sq:?} {t:?}");
            }
        }
    }

    #[test]
    fn predicate_matches_sat_near_the_tube() {
        // squares sampled along the boundary band are the hard cases
        let s = sc(8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = random_tube(&mut rng, s);
            for i in 0..256u32 {
                let y = q_to_f64(t.axis_at(s.cell_mid(i))) * 256.0;
                for dj in -6i64..=6 {
                    let j = y.floor() as i64 + dj;
                    if (0..256).contains(&j) {
                        let sq = (i, j as u32);
                        assert_eq!(incident(sq, s, &t).unwrap(), sat_oracle(sq, &t));
                    }
                }
            }
        }
    }

    #[test]
    fn horizontal_tube_through_row() {
        let s = sc(6);
        let t = Tube::new(s, q_int(0), s.cell_mid(20));
        let fam = TubeFamily::new(s, vec![t]).unwrap();
        let sh = full_shading(&fam, &GridSet2D::full(s)).unwrap();
        let n = sh.incidences();
        assert!((64..=3 * 64 * 2).contains(&n));
        assert_eq!(sh, full_shading_all_pairs(&fam, &GridSet2D::full(s)).unwrap());
    }

    #[test]
    fn empty_squares_give_empty_entries() {
        let s = sc(6);
        let fam = TubeFamily::new(s, vec![Tube::new(s, q_int(1), q_int(0))]).unwrap();
        let sh = full_shading(&fam, &GridSet2D::empty(s)).unwrap();
        assert!(sh.entries.iter().all(|(_, e)| e.is_empty()));
        assert_eq!(incidence_count(&fam, &GridSet2D::empty(s), true).unwrap(), 0);
    }

    #[test]
    fn fast_path_matches_all_pairs() {
        let s = sc(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tubes: Vec<Tube> = (0..100).map(|k| random_tube(&mut rng, s).with_id(k)).collect();
        let fam = TubeFamily::new(s, tubes).unwrap();
        let squares = GridSet2D::new(s, (0..1000).map(|_| (rng.gen_range(0..256), rng.gen_range(0..256)))).unwrap();
        let fast = full_shading(&fam, &squares).unwrap();
        let slow = full_shading_all_pairs(&fam, &squares).unwrap();
        assert_eq!(fast, slow);
        assert_eq!(fast.incidences(), fast.dual_incidences());
        assert_eq!(incidence_count(&fam, &squares, false).unwrap(), slow.incidences() as u64);
    }

    #[test]
    fn weighted_count() {
        let s = sc(5);
        let t = Tube::new(s, q_int(0), q(1, 2)).with_multiplicity(3).unwrap();
        let fam = TubeFamily::new(s, vec![t]).unwrap();
        let sq = GridSet2D::full(s);
        let n = incidence_count(&fam, &sq, false).unwrap();
        assert_eq!(incidence_count(&fam, &sq, true).unwrap(), 3 * n);
    }

    #[test]
    fn disjoint_families() {
        let s = sc(5);
        let fam = TubeFamily::new(s, vec![Tube::new(s, q_int(0), q(1, 8))]).unwrap();
        let sq = GridSet2D::new(s, [(3, 30), (20, 31)]).unwrap();
        assert_eq!(incidence_count(&fam, &sq, false).unwrap(), 0);
    }

    #[test]
    fn two_ends_equidistributed() {
        let s = sc(12);
        let squares: Vec<(u32, u32)> = (0..4096).map(|i| (i, 100)).collect();
        let p = TwoEndsParams::new(0.5, 0.1).unwrap();
        assert!(is_two_ends(&squares, p, s).holds);
    }

    #[test]
    fn two_ends_concentrated_fails() {
        let s = sc(12);
        let squares: Vec<(u32, u32)> = (0..20).map(|i| (i, 7)).collect();
        let p = TwoEndsParams::new(0.5, 0.1).unwrap();
        let c = is_two_ends(&squares, p, s);
        assert!(!c.holds);
        assert_eq!(c.worst_count, 20);
    }

    #[test]
    fn two_ends_single_square_fails() {
        let p = TwoEndsParams::new(0.3, 0.01).unwrap();
        assert!(!is_two_ends(&[(5, 5)], p, sc(10)).holds);
    }

    #[test]
    fn two_ends_params_validated() {
        assert!(TwoEndsParams::new(0.1, 0.2).is_err());
        assert!(TwoEndsParams::new(1.0, 0.2).is_err());
    }

    #[test]
    fn quasi_product_recheck() {
        let s = sc(6);
        let mut tubes = Vec::new();
        for a in 0..4 {
            for b in 0..8 {
                tubes.push(Tube::new(s, q(a, 4), q(b, 8)).with_id(tubes.len() as u64));
            }
        }
        let fam = TubeFamily::new(s, tubes).unwrap();
        let claim = QuasiProductClaim { s: 0.0, d: 0.0, k1: 4.0, k2: 8.0 };
        let rep = check_quasi_product(&fam, &claim);
        assert_eq!(rep.direction_constant, 4.0);
        assert_eq!(rep.max_fiber_constant, 8.0);
        assert!(rep.holds);
    }

    #[test]
    fn family_json() {
        let text = r#"{"m":6,"tubes":[{"slope":[1,2],"intercept":[1,4],"mult":3}]}"#;
        let fam = TubeFamily::from_json(text).unwrap();
        assert_eq!(fam.tubes[0].slope, q(1, 2));
        assert_eq!(fam.tubes[0].multiplicity, 3);
        let back = TubeFamily::from_json(&fam.to_json()).unwrap();
        assert_eq!(back, fam);
        assert!(TubeFamily::from_json(r#"{"m":6,"tubes":[{"slope":[1,0],"intercept":[0,1]}]}"#).is_err());
    }

    proptest! {
        #[test]
        fn translation_invariance(
            p in -40i128..40, qd in 1i128..20, c in 0i128..64,
            lo in 0i128..32, len in 1i128..32,
            i in 0u32..64, j in 0u32..64, a in 0u32..32, b in 0u32..32,
        ) {
            let s = sc(7);
            let t = Tube::new(s, q(p, qd), q(c, 128)).segment(q(lo, 128), q(lo + len, 128)).unwrap();
            let (da, db) = (q(a as i128, 128), q(b as i128, 128));
            let moved = Tube::new(s, t.slope, t.intercept + db - t.slope * da)
                .segment(t.x_lo + da, t.x_hi + da).unwrap();
            prop_assert_eq!(
                incident((i, j), s, &t).unwrap(),
                incident((i + a, j + b), s, &moved).unwrap()
            );
        }

        #[test]
        fn double_counting(seed in 0u64..1000) {
            let s = sc(6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tubes: Vec<Tube> = (0..10).map(|k| random_tube(&mut rng, s).with_id(k)).collect();
            let fam = TubeFamily::new(s, tubes).unwrap();
            let sq = GridSet2D::new(s, (0..200).map(|_| (rng.gen_range(0..64), rng.gen_range(0..64)))).unwrap();
            let sh = full_shading(&fam, &sq).unwrap();
            prop_assert_eq!(sh.incidences(), sh.dual_incidences());
        }
    }
}
