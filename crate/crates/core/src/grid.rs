//! Dyadic grids, grid sets, covering numbers and dyadic Hausdorff content.
//!
//! A scale is `delta = 2^-m`. Cell `k` of the 1-D grid is the interval
//! `[k delta, (k + 1) delta)` for membership purposes and its closure for
//! intersection tests. Index arithmetic is always exact; floats only appear
//! in reported real-valued quantities.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational used for geometry (slopes, intercepts, centers, radii).
pub type Q = Ratio<i128>;

/// Largest supported scale exponent.
pub const MAX_M: u32 = 30;

pub fn q(num: i128, den: i128) -> Q {
    Q::new(num, den)
}

pub fn q_int(n: i128) -> Q {
    Q::from_integer(n)
}

pub fn q_abs(x: Q) -> Q {
    if x < q_int(0) {
        -x
    } else {
        x
    }
}

pub fn q_to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scale {
    m: u32,
}

impl Scale {
    pub fn new(m: u32) -> Result<Self> {
        if m > MAX_M {
            return Err(Error::ScaleOutOfRange { m, max: MAX_M });
        }
        Ok(Scale { m })
    }

    pub fn m(self) -> u32 {
        self.m
    }

    /// Number of cells per axis, `2^m`.
    pub fn side(self) -> u64 {
        1u64 << self.m
    }

    pub fn delta(self) -> f64 {
        (-(self.m as f64)).exp2()
    }

    pub fn delta_q(self) -> Q {
        q(1, 1i128 << self.m)
    }

    /// Left endpoint of cell `k`.
    pub fn cell_lo(self, k: u32) -> Q {
        q(k as i128, 1i128 << self.m)
    }

    /// Midpoint of cell `k`.
    pub fn cell_mid(self, k: u32) -> Q {
        q(2 * k as i128 + 1, 1i128 << (self.m + 1))
    }

    /// Index of the cell containing `x`, clamping `x = 1` into the last cell.
    pub fn cell_of(self, x: Q) -> Option<u32> {
        if x < q_int(0) || x > q_int(1) {
            return None;
        }
        let k = (x * q_int(1i128 << self.m)).floor().to_integer();
        Some(k.min(self.side() as i128 - 1) as u32)
    }

    pub fn cell_of_f64(self, x: f64) -> Option<u32> {
        if !(0.0..=1.0).contains(&x) {
            return None;
        }
        let k = (x * self.side() as f64).floor() as u64;
        Some(k.min(self.side() - 1) as u32)
    }
}

fn check_support(lo: Q, hi: Q) -> Result<()> {
    if lo < q_int(0) || hi > q_int(1) || lo >= hi {
        return Err(Error::InvalidInput(format!("bad support window [{lo}, {hi}]")));
    }
    Ok(())
}

/// A delta-separated subset of a window of `[0, 1]`, stored as sorted cell indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridSet1DWire", into = "GridSet1DWire")]
pub struct GridSet1D {
    scale: Scale,
    cells: Vec<u32>,
    support_lo: Q,
    support_hi: Q,
}

#[derive(Serialize, Deserialize)]
struct GridSet1DWire {
    m: u32,
    cells: Vec<u32>,
}

impl TryFrom<GridSet1DWire> for GridSet1D {
    type Error = Error;
    fn try_from(w: GridSet1DWire) -> Result<Self> {
        GridSet1D::new(Scale::new(w.m)?, w.cells)
    }
}

impl From<GridSet1D> for GridSet1DWire {
    fn from(s: GridSet1D) -> Self {
        GridSet1DWire { m: s.scale.m, cells: s.cells }
    }
}

impl GridSet1D {
    /// Builds a set on `[0, 1]`; indices are sorted and deduplicated.
    pub fn new(scale: Scale, cells: impl IntoIterator<Item = u32>) -> Result<Self> {
        Self::with_support(scale, cells, q_int(0), q_int(1))
    }

    /// Builds a set whose cells must lie inside `[lo, hi]`.
    pub fn with_support(
        scale: Scale,
        cells: impl IntoIterator<Item = u32>,
        lo: Q,
        hi: Q,
    ) -> Result<Self> {
        check_support(lo, hi)?;
        let mut cells: Vec<u32> = cells.into_iter().collect();
        cells.sort_unstable();
        cells.dedup();
        for &k in &cells {
            let inside = scale.cell_lo(k) >= lo && scale.cell_lo(k) + scale.delta_q() <= hi;
            if (k as u64) >= scale.side() || !inside {
                return Err(Error::CellOutOfRange {
                    m: scale.m(),
                    detail: format!("cell {k} outside [{lo}, {hi}]"),
                });
            }
        }
        Ok(GridSet1D {
            scale,
            cells,
            support_lo: lo,
            support_hi: hi,
        })
    }

    pub fn full(scale: Scale) -> Self {
        GridSet1D {
            scale,
            cells: (0..scale.side() as u32).collect(),
            support_lo: q_int(0),
            support_hi: q_int(1),
        }
    }

    pub fn empty(scale: Scale) -> Self {
        GridSet1D {
            scale,
            cells: Vec::new(),
            support_lo: q_int(0),
            support_hi: q_int(1),
        }
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn support(&self) -> (Q, Q) {
        (self.support_lo, self.support_hi)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, k: u32) -> bool {
        self.cells.binary_search(&k).is_ok()
    }

    /// Same cells, re-labelled with a different support window.
    pub fn restrict_support(&self, lo: Q, hi: Q) -> Result<Self> {
        Self::with_support(self.scale, self.cells.iter().copied(), lo, hi)
    }

    /// Subset given by a predicate on cell indices; keeps the support window.
    pub fn filter(&self, mut keep: impl FnMut(u32) -> bool) -> Self {
        GridSet1D {
            scale: self.scale,
            cells: self.cells.iter().copied().filter(|&k| keep(k)).collect(),
            support_lo: self.support_lo,
            support_hi: self.support_hi,
        }
    }

    /// The set of target-scale cells meeting this set.
    pub fn coarsen(&self, target: Scale) -> Result<Self> {
        if target.m() > self.scale.m() {
            return Err(Error::ScaleMismatch {
                source_m: self.scale.m(),
                target_m: target.m(),
            });
        }
        let shift = self.scale.m() - target.m();
        let mut cells: Vec<u32> = self.cells.iter().map(|k| k >> shift).collect();
        cells.dedup();
        Ok(GridSet1D {
            scale: target,
            cells,
            support_lo: q_int(0),
            support_hi: q_int(1),
        })
    }

    /// Number of target-scale dyadic cells meeting the set.
    pub fn covering_number(&self, target: Scale) -> Result<usize> {
        Ok(self.coarsen(target)?.len())
    }

    /// Cells whose closed cell meets the closed ball `[center - r, center + r]`.
    pub fn restrict_to_ball(&self, center: Q, radius: Q) -> Self {
        let (lo, hi) = ball_index_range(self.scale, center, radius);
        let a = self.cells.partition_point(|&k| (k as i128) < lo);
        let b = self.cells.partition_point(|&k| (k as i128) <= hi);
        GridSet1D {
            scale: self.scale,
            cells: self.cells[a..b.max(a)].to_vec(),
            support_lo: self.support_lo,
            support_hi: self.support_hi,
        }
    }
}

/// Inclusive index range of closed cells meeting `[c - r, c + r]`.
fn ball_index_range(scale: Scale, center: Q, radius: Q) -> (i128, i128) {
    let side = q_int(1i128 << scale.m());
    let lo = ((center - radius) * side - q_int(1)).ceil().to_integer();
    let hi = ((center + radius) * side).floor().to_integer();
    (lo, hi)
}

/// A set of delta-squares `[i delta, (i+1) delta] x [j delta, (j+1) delta]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridSet2DWire", into = "GridSet2DWire")]
pub struct GridSet2D {
    scale: Scale,
    cells: Vec<(u32, u32)>,
}

#[derive(Serialize, Deserialize)]
struct GridSet2DWire {
    m: u32,
    cells: Vec<[u32; 2]>,
}

impl TryFrom<GridSet2DWire> for GridSet2D {
    type Error = Error;
    fn try_from(w: GridSet2DWire) -> Result<Self> {
        GridSet2D::new(Scale::new(w.m)?, w.cells.into_iter().map(|[i, j]| (i, j)))
    }
}

impl From<GridSet2D> for GridSet2DWire {
    fn from(s: GridSet2D) -> Self {
        GridSet2DWire {
            m: s.scale.m,
            cells: s.cells.into_iter().map(|(i, j)| [i, j]).collect(),
        }
    }
}

impl GridSet2D {
    pub fn new(scale: Scale, cells: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut cells: Vec<(u32, u32)> = cells.into_iter().collect();
        cells.sort_unstable();
        cells.dedup();
        if let Some(&(i, j)) = cells
            .iter()
            .find(|&&(i, j)| i as u64 >= scale.side() || j as u64 >= scale.side())
        {
            return Err(Error::CellOutOfRange {
                m: scale.m(),
                detail: format!("square ({i}, {j})"),
            });
        }
        Ok(GridSet2D { scale, cells })
    }

    pub fn full(scale: Scale) -> Self {
        let n = scale.side() as u32;
        GridSet2D {
            scale,
            cells: (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect(),
        }
    }

    pub fn empty(scale: Scale) -> Self {
        GridSet2D { scale, cells: Vec::new() }
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn cells(&self) -> &[(u32, u32)] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: (u32, u32)) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn index_of(&self, cell: (u32, u32)) -> Option<usize> {
        self.cells.binary_search(&cell).ok()
    }

    pub fn coarsen(&self, target: Scale) -> Result<Self> {
        if target.m() > self.scale.m() {
            return Err(Error::ScaleMismatch {
                source_m: self.scale.m(),
                target_m: target.m(),
            });
        }
        let shift = self.scale.m() - target.m();
        let mut cells: Vec<(u32, u32)> =
            self.cells.iter().map(|&(i, j)| (i >> shift, j >> shift)).collect();
        cells.sort_unstable();
        cells.dedup();
        Ok(GridSet2D { scale: target, cells })
    }

    pub fn covering_number(&self, target: Scale) -> Result<usize> {
        Ok(self.coarsen(target)?.len())
    }

    /// Squares whose closed square meets the closed sup-metric ball.
    pub fn restrict_to_ball(&self, center: (Q, Q), radius: Q) -> Self {
        let (xlo, xhi) = ball_index_range(self.scale, center.0, radius);
        let (ylo, yhi) = ball_index_range(self.scale, center.1, radius);
        let cells = self
            .cells
            .iter()
            .copied()
            .filter(|&(i, j)| {
                let (i, j) = (i as i128, j as i128);
                i >= xlo && i <= xhi && j >= ylo && j <= yhi
            })
            .collect();
        GridSet2D { scale: self.scale, cells }
    }
}

/// Number of distinct target-scale cells hit by real points of `[0, 1]`.
pub fn covering_number_points(points: &[f64], target: Scale) -> Result<usize> {
    let mut cells = Vec::with_capacity(points.len());
    for &x in points {
        let k = target
            .cell_of_f64(x)
            .ok_or_else(|| Error::InvalidInput(format!("point {x} outside [0, 1]")))?;
        cells.push(k);
    }
    cells.sort_unstable();
    cells.dedup();
    Ok(cells.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentResult {
    pub exponent: f64,
    pub value: f64,
}

/// Dyadic Hausdorff content at scale delta.
///
/// Minimises the sum of `|I|^s` over covers by dyadic intervals of length at
/// least delta via `H(I) = min(|I|^s, H(left) + H(right))`, leaves scoring
/// `delta^s` when occupied.
pub fn dyadic_content(set: &GridSet1D, s: f64) -> ContentResult {
    fn rec(cells: &[u32], start: u64, depth: u32, m: u32, s: f64) -> f64 {
        if cells.is_empty() {
            return 0.0;
        }
        let own = (-(depth as f64) * s).exp2();
        if depth == m {
            return own;
        }
        let mid = start + (1u64 << (m - depth - 1));
        let split = cells.partition_point(|&k| (k as u64) < mid);
        let children = rec(&cells[..split], start, depth + 1, m, s)
            + rec(&cells[split..], mid, depth + 1, m, s);
        own.min(children)
    }
    ContentResult {
        exponent: s,
        value: rec(set.cells(), 0, 0, set.scale().m(), s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(m: u32) -> Scale {
        Scale::new(m).unwrap()
    }

    /// Outer-quarter Cantor set built directly: digits in base 4 from {0, 3}.
    fn outer_quarters(depth: u32) -> GridSet1D {
        let mut cells = vec![0u32];
        for _ in 0..depth {
            cells = cells.iter().flat_map(|&c| [4 * c, 4 * c + 3]).collect();
        }
        GridSet1D::new(sc(2 * depth), cells).unwrap()
    }

    #[test]
    fn scale_bounds() {
        assert!(Scale::new(31).is_err());
        assert_eq!(sc(4).side(), 16);
        assert_eq!(sc(3).delta(), 0.125);
        assert_eq!(sc(2).cell_of(q(1, 1)), Some(3));
        assert_eq!(sc(2).cell_of(q(3, 2)), None);
    }

    #[test]
    fn covering_full_grid() {
        assert_eq!(GridSet1D::full(sc(4)).covering_number(sc(4)).unwrap(), 16);
    }

    #[test]
    fn covering_single_point() {
        for m in [0, 3, 10, 30] {
            assert_eq!(covering_number_points(&[0.3], sc(m)).unwrap(), 1);
        }
    }

    #[test]
    fn covering_middle_half_cantor() {
        // depth 5 at m = 10, each surviving quarter is one cell at m = 10
        let set = outer_quarters(5);
        assert_eq!(set.len(), 32);
        assert_eq!(set.covering_number(sc(10)).unwrap(), 32);
        // coarsening to m = 2 keeps quarters 0 and 3
        assert_eq!(set.covering_number(sc(2)).unwrap(), 2);
    }

    #[test]
    fn covering_finer_target_is_an_error() {
        let err = GridSet1D::full(sc(4)).covering_number(sc(5)).unwrap_err();
        assert!(matches!(err, Error::ScaleMismatch { .. }));
    }

    #[test]
    fn ball_covering_whole_interval() {
        let full = GridSet1D::full(sc(4));
        assert_eq!(full.restrict_to_ball(q(1, 2), q_int(1)), full);
    }

    #[test]
    fn delta_ball_at_midpoint_has_three_cells() {
        let s = sc(6);
        let full = GridSet1D::full(s);
        for k in [0u32, 1, 17, 63] {
            let got = full.restrict_to_ball(s.cell_mid(k), s.delta_q());
            assert!(got.len() <= 3);
        }
    }

    #[test]
    fn ball_matches_linear_scan() {
        use rand::{Rng, SeedableRng};
        let s = sc(8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let set = GridSet1D::new(s, (0..50).map(|_| rng.gen_range(0..256))).unwrap();
        let (c, r) = (q(1, 4), q(1, 16));
        let fast = set.restrict_to_ball(c, r);
        let scan: Vec<u32> = set
            .cells()
            .iter()
            .copied()
            .filter(|&k| {
                let lo = s.cell_lo(k);
                let hi = lo + s.delta_q();
                hi >= c - r && lo <= c + r
            })
            .collect();
        assert_eq!(fast.cells(), &scan[..]);
    }

    #[test]
    fn ball_2d_sup_metric() {
        let s = sc(3);
        let full = GridSet2D::full(s);
        let got = full.restrict_to_ball((s.cell_mid(4), s.cell_mid(4)), s.delta_q());
        assert_eq!(got.len(), 9);
    }

    #[test]
    fn content_full_grid() {
        assert_eq!(dyadic_content(&GridSet1D::full(sc(6)), 1.0).value, 1.0);
    }

    #[test]
    fn content_empty() {
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(dyadic_content(&GridSet1D::empty(sc(5)), s).value, 0.0);
        }
    }

    #[test]
    fn content_outer_quarter_cantor() {
        // exhaustive check of the recursion against the closed form
        let set = outer_quarters(4);
        assert_eq!(dyadic_content(&set, 0.5).value, 1.0);
    }

    #[test]
    fn json_round_trip() {
        let set = GridSet1D::new(sc(4), [3, 1, 2]).unwrap();
        let text = serde_json::to_string(&set).unwrap();
        assert_eq!(text, r#"{"m":4,"cells":[1,2,3]}"#);
        let back: GridSet1D = serde_json::from_str(&text).unwrap();
        assert_eq!(back, set);
        let sq = GridSet2D::new(sc(2), [(1, 0), (0, 3)]).unwrap();
        assert_eq!(serde_json::to_string(&sq).unwrap(), r#"{"m":2,"cells":[[0,3],[1,0]]}"#);
        assert!(serde_json::from_str::<GridSet1D>(r#"{"m":2,"cells":[9]}"#).is_err());
    }
}
