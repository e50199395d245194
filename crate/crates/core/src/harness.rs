//! Instrumented replay of the multi-scale argument bounding tube/square
//! incidences for Katz-Tao families, on synthetic instances.
//!
//! The trunk ([`run_pipeline`]) is sequential and records one
//! [`StepRecord`] per transformation of the incidence graph. Per-rectangle
//! audits ([`check_rescaled_kt`], [`check_rescaled_two_ends`],
//! [`replay_rectangle_estimates`]) run in parallel.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{q, q_abs, q_int, q_to_f64, GridSet2D, Scale, Q};
use crate::incidence::{concentration_check, full_shading_with, points_kt_constant, squares_kt_constant, Shading, Tube, TubeFamily};
use crate::par::{self, Exec};
use crate::refine::{bipartite_refine, localise, reduce_unchecked, BipartiteGraph};

pub const DEFAULT_EPSILON: f64 = 0.4;
pub const DEFAULT_SLACK: f64 = 0.2;
/// Largest accepted Katz-Tao constant for generated hypotheses.
pub const HYPOTHESIS_CONSTANT: f64 = 8.0;
pub const MAX_INSTANCE_ATTEMPTS: u32 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceStyle {
    /// Products of random Frostman sets for tube parameters and squares.
    Random,
    /// A square lattice of spacing `delta^s` with every lattice line of
    /// small-denominator slope: many rich tubes through every square.
    Trainlike,
}

impl std::str::FromStr for InstanceStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InstanceStyle::Random),
            "trainlike" => Ok(InstanceStyle::Trainlike),
            other => Err(Error::InvalidInput(format!("unknown instance style {other:?}"))),
        }
    }
}

/// Measured Katz-Tao constants of the four hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisWitness {
    pub tubes: f64,
    pub squares: f64,
    pub shadings: f64,
    pub dual_shadings: f64,
}

impl HypothesisWitness {
    pub fn max(&self) -> f64 {
        self.tubes.max(self.squares).max(self.shadings).max(self.dual_shadings)
    }
}

#[derive(Clone, Debug)]
pub struct TheoremInstance {
    pub scale: Scale,
    pub s: f64,
    pub style: InstanceStyle,
    pub seed: u64,
    pub tubes: TubeFamily,
    pub squares: GridSet2D,
    pub shading: Shading,
    pub witness: HypothesisWitness,
    pub attempts: u32,
}

impl TheoremInstance {
    pub fn incidences(&self) -> usize {
        self.shading.incidences()
    }
}

/// Tube parameters `(slope, intercept)` in delta units.
pub fn tube_parameters(tubes: &[Tube]) -> Vec<(f64, f64)> {
    tubes
        .iter()
        .map(|t| {
            let side = t.scale.side() as f64;
            (q_to_f64(t.slope) * side, q_to_f64(t.intercept) * side)
        })
        .collect()
}

/// Measures the four hypotheses: tubes and squares at `2s`, every shading and
/// dual shading at `s`.
pub fn measure_hypotheses(tubes: &TubeFamily, squares: &GridSet2D, shading: &Shading, s: f64, exec: Exec) -> Result<HypothesisWitness> {
    let scale = tubes.scale;
    let max_j = scale.m() + 2;
    let params = tube_parameters(&tubes.tubes);
    let tubes_c = if params.is_empty() { 0.0 } else { points_kt_constant(&params, 2.0 * s, max_j) };
    let squares_c = if squares.is_empty() { 0.0 } else { squares_kt_constant(scale, squares.cells(), 2.0 * s)? };
    let shade = par::map(exec, &shading.entries, |(_, sq)| {
        if sq.is_empty() {
            Ok(0.0)
        } else {
            squares_kt_constant(scale, sq, s)
        }
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let duals: Vec<&Vec<u64>> = shading.dual_entries.values().collect();
    let dual = par::map(exec, &duals, |ids| {
        let pts: Vec<(f64, f64)> = ids.iter().map(|&id| params[id as usize]).collect();
        points_kt_constant(&pts, s, max_j)
    });
    Ok(HypothesisWitness {
        tubes: tubes_c,
        squares: squares_c,
        shadings: shade.into_iter().fold(0.0, f64::max),
        dual_shadings: dual.into_iter().fold(0.0, f64::max),
    })
}

/// One random cell in each block of a `2^k x 2^k` lattice, `k = round(s m)`.
fn jittered_lattice(scale: Scale, s: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<(u32, u32)> {
    let m = scale.m();
    let k = ((s * m as f64).round() as u32).min(m);
    let h = 1u32 << (m - k);
    let mut out = Vec::with_capacity(1 << (2 * k));
    for a in 0..1u32 << k {
        for b in 0..1u32 << k {
            out.push((a * h + rng.gen_range(0..h), b * h + rng.gen_range(0..h)));
        }
    }
    out
}

fn random_candidate(scale: Scale, s: f64, seed: u64) -> Result<(Vec<Tube>, GridSet2D)> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let tubes = jittered_lattice(scale, s, &mut rng)
        .into_iter()
        .map(|(i, j)| Tube::new(scale, scale.cell_mid(i), scale.cell_mid(j)))
        .collect();
    let squares = GridSet2D::new(scale, jittered_lattice(scale, s, &mut rng))?;
    Ok((tubes, squares))
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn lattice_candidate(scale: Scale, s: f64, seed: u64) -> Result<(Vec<Tube>, GridSet2D)> {
    let m = scale.m();
    let k = ((s * m as f64).round() as u32).min(m);
    let count = 1u32 << k;
    let h = 1u32 << (m - k);
    // random offset keeps seeds distinct without breaking the lattice
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let off = (rng.gen_range(0..h), rng.gen_range(0..h));
    let cells: Vec<(u32, u32)> = (0..count)
        .flat_map(|a| (0..count).map(move |b| (a * h + off.0, b * h + off.1)))
        .collect();
    let squares = GridSet2D::new(scale, cells.iter().copied())?;
    let qmax = if count == 1 { 0 } else { (h as i64 / 4).clamp(1, 4) };
    let mut slopes: Vec<(i64, i64)> = vec![(0, 1)];
    for qd in 1..=qmax {
        for c in 1..qd {
            if gcd(c, qd) == 1 {
                slopes.push((c, qd));
            }
        }
    }
    let mut seen: BTreeSet<(i64, i64, i64)> = BTreeSet::new();
    let mut tubes = Vec::new();
    for &(c, qd) in &slopes {
        for a in 0..count as i64 {
            for b in 0..count as i64 {
                if seen.insert((c, qd, qd * b - c * a)) {
                    let (i, j) = ((a as u32) * h + off.0, (b as u32) * h + off.1);
                    let slope = q(c as i128, qd as i128);
                    let intercept = scale.cell_mid(j) - slope * scale.cell_mid(i);
                    tubes.push(Tube::new(scale, slope, intercept));
                }
            }
        }
    }
    Ok((tubes, squares))
}

/// Generates an instance whose tubes and squares are `(delta, 2s)`-KT and
/// whose shadings are `(delta, s)`-KT, all with constant at most
/// [`HYPOTHESIS_CONSTANT`]; resamples otherwise.
pub fn generate_instance(scale: Scale, s: f64, style: InstanceStyle, seed: u64) -> Result<TheoremInstance> {
    generate_instance_with(scale, s, style, seed, Exec::default())
}

pub fn generate_instance_with(scale: Scale, s: f64, style: InstanceStyle, seed: u64, exec: Exec) -> Result<TheoremInstance> {
    if !(s > 0.0 && s <= 2.0 / 3.0 + 1e-12) {
        return Err(Error::InvalidInput(format!("s = {s} outside (0, 2/3]")));
    }
    for attempt in 0..MAX_INSTANCE_ATTEMPTS {
        let sd = seed.wrapping_add(7919 * attempt as u64);
        let (tubes, squares) = match style {
            InstanceStyle::Random => random_candidate(scale, s, sd)?,
            InstanceStyle::Trainlike => lattice_candidate(scale, s, sd)?,
        };
        let tubes: Vec<Tube> = tubes.into_iter().enumerate().map(|(k, t)| t.with_id(k as u64)).collect();
        let family = TubeFamily::new(scale, tubes)?;
        let shading = full_shading_with(&family, &squares, exec)?;
        let witness = measure_hypotheses(&family, &squares, &shading, s, exec)?;
        if witness.max() <= HYPOTHESIS_CONSTANT {
            return Ok(TheoremInstance {
                scale,
                s,
                style,
                seed,
                tubes: family,
                squares,
                shading,
                witness,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::ResampleExhausted { attempts: MAX_INSTANCE_ATTEMPTS as usize })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub epsilon: f64,
    /// Declared slack exponent: losses down to `delta^slack` count as `~`.
    pub slack: f64,
    /// Stop after Step 2 when `N` or `N'` is below `delta^(-2s/3)`.
    pub early_exit: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { epsilon: DEFAULT_EPSILON, slack: DEFAULT_SLACK, early_exit: true }
    }
}

/// One JSON-lines trace record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub label: String,
    pub edges: usize,
    /// Edge count relative to the previous graph, after undoing the
    /// contraction factor where the step is a contraction.
    pub loss: f64,
    pub within_slack: bool,
    pub params: BTreeMap<String, f64>,
}

/// A rectangle of the Step 6 tiling: `Q`-square `(qi, qj)`, direction class
/// `dir` (slopes in `[dir L', (dir + 1) L')`) and sheared strip `strip`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RectKey {
    pub qi: i64,
    pub qj: i64,
    pub dir: i64,
    pub strip: i64,
}

/// The family of one rectangle after rescaling to `[0, 1]^2` at scale
/// `delta / (L L')`.
#[derive(Clone, Debug)]
pub struct RescaledFamily {
    pub rect: RectKey,
    pub scale: Scale,
    /// Cluster indices of the tubes, parallel to `tubes`.
    pub clusters: Vec<usize>,
    pub tubes: Vec<Tube>,
    /// Rescaled `gamma` cells.
    pub cells: Vec<(u32, u32)>,
    /// Shading `(tube index, cell index)` pairs from the final graph.
    pub edges: Vec<(usize, usize)>,
}

impl RescaledFamily {
    pub fn shading_of(&self, tube: usize) -> Vec<(u32, u32)> {
        self.edges.iter().filter(|e| e.0 == tube).map(|e| self.cells[e.1]).collect()
    }

    pub fn dual_of(&self, cell: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == cell).map(|e| e.0).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct PipelineState {
    /// Last step completed.
    pub step: u32,
    pub m: u32,
    pub s: f64,
    pub epsilon: f64,
    pub slack: f64,
    pub p_class: f64,
    pub p_dual_class: f64,
    pub n: f64,
    pub n_dual: f64,
    /// Dyadic lengths, `L = 2^-l_exp`, `L' = 2^-l_dual_exp`.
    pub l_exp: u32,
    pub l_dual_exp: u32,
    pub m_mult: f64,
    pub m_dual: f64,
    pub tubes_1: usize,
    pub squares_1: usize,
    pub clusters: usize,
    pub gammas: usize,
    pub rectangles: usize,
    /// Tubes whose two-ends segment misses one of the reduction guarantees.
    pub lemma_misses: usize,
    pub dual_lemma_misses: usize,
    pub step4_checks: usize,
    pub step9_checks: usize,
    pub partition_tubes: (usize, usize),
    pub partition_squares: (usize, usize),
    pub bijection_checks: usize,
    pub early_exit: Option<String>,
    pub rescaled: Vec<RescaledFamily>,
    pub trace: Vec<StepRecord>,
}

impl PipelineState {
    pub fn length(&self) -> f64 {
        (-(self.l_exp as f64)).exp2()
    }

    pub fn length_dual(&self) -> f64 {
        (-(self.l_dual_exp as f64)).exp2()
    }

    pub fn delta(&self) -> f64 {
        (-(self.m as f64)).exp2()
    }

    pub fn nn_dual(&self) -> f64 {
        self.n * self.n_dual
    }

    pub fn reached_rescaling(&self) -> bool {
        self.step >= 11
    }

    pub fn trace_json_lines(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialise"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

struct Segment {
    tube: usize,
    length: f64,
    kept: Vec<(u32, u32)>,
}

impl Segment {
    /// Midpoint of the kept squares' x-range; locates the segment.
    fn mid(&self, scale: Scale) -> Q {
        let lo = self.kept.iter().map(|p| p.0).min().unwrap_or(0);
        let hi = self.kept.iter().map(|p| p.0).max().unwrap_or(0);
        (scale.cell_mid(lo) + scale.cell_mid(hi)) * q(1, 2)
    }
}

struct Arc {
    lo: f64,
    hi: f64,
    tubes: Vec<usize>,
}

impl Arc {
    fn len(&self) -> f64 {
        self.hi - self.lo
    }

    /// Same center, twice the length.
    fn doubled_contains(&self, x: f64) -> bool {
        let half = self.len();
        let c = 0.5 * (self.lo + self.hi);
        (x - c).abs() <= half
    }
}

/// The class with the largest mass; ties go to the larger class key.
fn pigeonhole_by<T: Clone, K: Ord + Copy>(items: &[T], class: impl Fn(&T) -> K, mass: impl Fn(&T) -> f64) -> Option<(K, Vec<T>)> {
    let mut classes: BTreeMap<K, (f64, Vec<T>)> = BTreeMap::new();
    for it in items {
        let e = classes.entry(class(it)).or_insert((0.0, Vec::new()));
        e.0 += mass(it);
        e.1.push(it.clone());
    }
    classes
        .into_iter()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .map(|(k, (_, v))| (k, v))
}

fn log2_floor(x: f64) -> i32 {
    x.log2().floor() as i32
}

fn floor_q(x: Q) -> i64 {
    x.floor().to_integer() as i64
}

fn pow2(e: i32) -> Q {
    if e >= 0 {
        q_int(1i128 << e)
    } else {
        q(1, 1i128 << (-e))
    }
}

struct Recorder {
    delta: f64,
    slack: f64,
    last: usize,
    trace: Vec<StepRecord>,
}

impl Recorder {
    fn record(&mut self, step: u32, label: &str, edges: usize, factor: f64, params: &[(&str, f64)]) {
        let loss = if self.last == 0 { 1.0 } else { edges as f64 * factor / self.last as f64 };
        self.trace.push(StepRecord {
            step,
            label: label.to_string(),
            edges,
            loss,
            within_slack: loss >= self.delta.powf(self.slack),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        });
        self.last = edges;
    }
}

fn center(scale: Scale, p: (u32, u32)) -> (Q, Q) {
    (scale.cell_mid(p.0), scale.cell_mid(p.1))
}

/// Runs Steps 1-11 and returns the state with its trace.
pub fn run_pipeline(instance: &TheoremInstance, opts: PipelineOptions) -> Result<PipelineState> {
    let scale = instance.scale;
    let m = scale.m();
    let delta = scale.delta();
    let side = scale.side() as f64;
    let s = instance.s;
    let eps = opts.epsilon;
    if !(eps > 0.0 && eps < 0.5 && eps * eps < s / 2.0) {
        return Err(Error::InvalidInput(format!("epsilon = {eps} needs 0 < eps < 1/2 and eps^2 < s/2")));
    }
    let tubes = &instance.tubes.tubes;
    let mut st = PipelineState { m, s, epsilon: eps, slack: opts.slack, ..Default::default() };
    let mut rec = Recorder { delta, slack: opts.slack, last: 0, trace: Vec::new() };
    let total = instance.incidences();
    rec.record(0, "G", total, 1.0, &[("tubes", tubes.len() as f64), ("squares", instance.squares.len() as f64)]);
    let finish = |mut st: PipelineState, rec: Recorder, reason: Option<String>| {
        st.early_exit = reason;
        st.trace = rec.trace;
        Ok(st)
    };
    if total == 0 {
        return finish(st, rec, Some("no incidences".into()));
    }

    // Step 1: degree pigeonhole, two-ends segments, (L, N) pigeonhole.
    let shaded: Vec<usize> = (0..tubes.len()).filter(|&t| !instance.shading.entries[t].1.is_empty()).collect();
    let (p_exp, by_degree) = pigeonhole_by(&shaded, |&t| log2_floor(instance.shading.entries[t].1.len() as f64), |&t| {
        instance.shading.entries[t].1.len() as f64
    })
    .expect("some tube is shaded");
    st.p_class = (p_exp as f64).exp2();
    let segments: Vec<Segment> = by_degree
        .iter()
        .map(|&t| {
            let out = reduce_unchecked(&tubes[t], &instance.shading.entries[t].1, s, eps);
            let ok = out.length + 1e-12 >= out.length_bound(s, delta)
                && out.n as f64 >= out.count_bound() - 1e-9
                && out.worst_ball as f64 <= out.allowed;
            (ok, Segment { tube: t, length: out.length, kept: out.kept })
        })
        .map(|(ok, seg)| {
            if !ok {
                st.lemma_misses += 1;
            }
            seg
        })
        .collect();
    let ((l_exp_neg, n_exp), chosen) = pigeonhole_by(
        &(0..segments.len()).collect::<Vec<_>>(),
        |&k| (log2_floor(segments[k].length), log2_floor(segments[k].kept.len() as f64)),
        |&k| segments[k].kept.len() as f64,
    )
    .expect("segments exist");
    st.l_exp = (-l_exp_neg).max(0) as u32;
    st.n = (n_exp as f64).exp2();
    let segs: BTreeMap<usize, &Segment> = chosen.iter().map(|&k| (segments[k].tube, &segments[k])).collect();
    st.tubes_1 = segs.len();
    let e1: usize = segs.values().map(|g| g.kept.len()).sum();
    let l = st.length();
    rec.record(1, "G1", e1, 1.0, &[
        ("P", st.p_class),
        ("N", st.n),
        ("L", l),
        ("N_over_P", st.n / st.p_class),
        ("L_over_delta_N_pow", l / (delta * st.n.powf(1.0 / s))),
        ("lemma_misses", st.lemma_misses as f64),
    ]);

    // Step 2: the dual side, on slopes.
    let mut g1_dual: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for g in segs.values() {
        for &p in &g.kept {
            g1_dual.entry(p).or_default().push(g.tube);
        }
    }
    let points: Vec<(u32, u32)> = g1_dual.keys().copied().collect();
    let (pd_exp, by_dual_degree) =
        pigeonhole_by(&points, |p| log2_floor(g1_dual[p].len() as f64), |p| g1_dual[p].len() as f64).expect("points exist");
    st.p_dual_class = (pd_exp as f64).exp2();
    let arcs: BTreeMap<(u32, u32), Arc> = by_dual_degree
        .iter()
        .map(|p| {
            let ts = &g1_dual[p];
            let coords: Vec<f64> = ts.iter().map(|&t| q_to_f64(tubes[t].slope) * side).collect();
            let loc = localise(&coords, 0.0, side, eps);
            let arc = Arc {
                lo: loc.lo / side,
                hi: (loc.lo + loc.len) / side,
                tubes: loc.kept.iter().map(|&k| ts[k]).collect(),
            };
            let lp = loc.len / side;
            let ok = loc.worst_ball as f64 <= loc.allowed && arc.tubes.len() as f64 >= lp.powf(eps * eps) * ts.len() as f64;
            (ok, *p, arc)
        })
        .map(|(ok, p, arc)| {
            if !ok {
                st.dual_lemma_misses += 1;
            }
            (p, arc)
        })
        .collect();
    let arc_points: Vec<(u32, u32)> = arcs.keys().copied().collect();
    let ((ld_exp_neg, nd_exp), p1) = pigeonhole_by(
        &arc_points,
        |p| (log2_floor(arcs[p].len()).min(0), log2_floor(arcs[p].tubes.len() as f64)),
        |p| arcs[p].tubes.len() as f64,
    )
    .expect("arcs exist");
    // a segment of length L fixes its direction only to within delta / L
    st.l_dual_exp = ((-ld_exp_neg).max(0) as u32).min(m - st.l_exp);
    st.n_dual = (nd_exp as f64).exp2();
    let p1: BTreeSet<(u32, u32)> = p1.into_iter().collect();
    st.squares_1 = p1.len();
    // G2: edges (T, p) with p in P1 and T in the arc of p
    let g2: BTreeSet<(usize, (u32, u32))> = p1.iter().flat_map(|p| arcs[p].tubes.iter().map(move |&t| (t, *p))).collect();
    let l_dual = st.length_dual();
    rec.record(2, "G2", g2.len(), 1.0, &[
        ("P_dual", st.p_dual_class),
        ("N_dual", st.n_dual),
        ("L_dual", l_dual),
        ("dual_lemma_misses", st.dual_lemma_misses as f64),
    ]);
    st.step = 2;
    let cutoff = delta.powf(-2.0 * s / 3.0);
    if st.n < cutoff || st.n_dual < cutoff {
        let reason = format!("N = {}, N' = {} below delta^(-2s/3) = {cutoff:.3}", st.n, st.n_dual);
        if opts.early_exit {
            return finish(st, rec, Some(reason));
        }
        st.early_exit = Some(reason);
    }
    if g2.is_empty() {
        return finish(st, rec, Some("graph emptied at step 2".into()));
    }

    // Step 3: cluster segments, pigeonhole cluster size M.
    let lq = pow2(-(st.l_exp as i32));
    let dq = scale.delta_q();
    let mut cluster_of: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for g in segs.values() {
        let t = &tubes[g.tube];
        let mid = g.mid(scale);
        let block = floor_q(mid / lq);
        let slope_cell = floor_q(t.slope * q_int(4) * lq / dq);
        let offset_cell = floor_q(t.axis_at(q_int(block as i128) * lq) * q_int(2) / dq);
        cluster_of.entry((block, slope_cell, offset_cell)).or_default().push(g.tube);
    }
    let mut g2_by_tube: BTreeMap<usize, Vec<(u32, u32)>> = BTreeMap::new();
    for &(t, p) in &g2 {
        g2_by_tube.entry(t).or_default().push(p);
    }
    let cluster_list: Vec<((i64, i64, i64), Vec<usize>)> = cluster_of.into_iter().collect();
    let idx: Vec<usize> = (0..cluster_list.len()).collect();
    let (m_exp, kept_clusters) = pigeonhole_by(&idx, |&c| log2_floor(cluster_list[c].1.len() as f64), |&c| {
        cluster_list[c].1.iter().map(|t| g2_by_tube.get(t).map_or(0, Vec::len)).sum::<usize>() as f64
    })
    .expect("clusters exist");
    st.m_mult = (m_exp as f64).exp2();
    let kept_clusters: Vec<usize> = kept_clusters.into_iter().filter(|&c| cluster_list[c].1.iter().any(|t| g2_by_tube.contains_key(t))).collect();
    let e3: usize = kept_clusters.iter().flat_map(|&c| cluster_list[c].1.iter()).map(|t| g2_by_tube.get(t).map_or(0, Vec::len)).sum();
    rec.record(3, "G3", e3, 1.0, &[("M", st.m_mult), ("clusters", kept_clusters.len() as f64)]);
    st.clusters = kept_clusters.len();
    st.step = 3;

    // Step 4: equal neighbourhoods inside clusters, then contraction.
    struct Cluster {
        rep: usize,
        x_lo: Q,
        x_hi: Q,
        nbhd: Vec<(u32, u32)>,
    }
    let w4 = q_int(4) * dq;
    let meets = |rep: &Tube, x_lo: Q, x_hi: Q, p: (u32, u32)| {
        let (x, y) = center(scale, p);
        x >= x_lo && x <= x_hi && q_abs(y - rep.axis_at(x)) <= w4
    };
    let mut clusters: Vec<Cluster> = Vec::new();
    for &c in &kept_clusters {
        let ((block, _, _), members) = &cluster_list[c];
        let rep = members[0];
        let x_lo = (q_int(*block as i128 - 1) * lq).max(q_int(0));
        let x_hi = (q_int(*block as i128 + 2) * lq).min(q_int(1));
        let candidates: BTreeSet<(u32, u32)> = members.iter().filter_map(|t| g2_by_tube.get(t)).flatten().copied().collect();
        let nbhd_of = |t: usize| -> Vec<(u32, u32)> {
            let d = q_to_f64(tubes[t].slope);
            candidates
                .iter()
                .copied()
                .filter(|&p| meets(&tubes[rep], x_lo, x_hi, p) && arcs[&p].doubled_contains(d))
                .collect()
        };
        let first = nbhd_of(rep);
        for &t in &members[1..] {
            st.step4_checks += 1;
            if nbhd_of(t) != first {
                return Err(Error::StepClaimViolation {
                    step: 4,
                    detail: format!("tubes {rep} and {t} share a segment but not their neighbourhoods"),
                });
            }
        }
        if first.len() != candidates.len() {
            return Err(Error::StepClaimViolation {
                step: 4,
                detail: format!("cluster of tube {rep} loses an edge of the previous graph"),
            });
        }
        clusters.push(Cluster { rep, x_lo, x_hi, nbhd: first });
    }
    let e4: usize = clusters.iter().map(|c| c.nbhd.len()).sum();
    rec.record(4, "G4", e4, st.m_mult, &[("checks", st.step4_checks as f64)]);
    st.step = 4;

    // Steps 5-7: Q squares, direction classes, rectangles; partitions.
    let ldq = pow2(-(st.l_dual_exp as i32));
    let strip_h = lq * ldq;
    let rect_of_point = |x: Q, y: Q, dir: i64| {
        let d = q_int(dir as i128) * ldq;
        RectKey {
            qi: floor_q(x / lq),
            qj: floor_q(y / lq),
            dir,
            strip: floor_q((y - d * x) / strip_h),
        }
    };
    let cluster_rect: Vec<RectKey> = clusters
        .iter()
        .map(|c| {
            let t = &tubes[c.rep];
            let g = segs[&c.rep];
            let xm = g.mid(scale);
            rect_of_point(xm, t.axis_at(xm), floor_q(t.slope / ldq))
        })
        .collect();
    let point_rect: BTreeMap<(u32, u32), RectKey> = p1
        .iter()
        .map(|&p| {
            let (x, y) = center(scale, p);
            // the class holding most of the arc's tubes, ties to the lower
            let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
            for &t in &arcs[&p].tubes {
                *votes.entry(floor_q(tubes[t].slope / ldq)).or_default() += 1;
            }
            let dir = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(0, |(d, _)| *d);
            (p, rect_of_point(x, y, dir))
        })
        .collect();
    let mut rect_tubes: BTreeMap<RectKey, Vec<usize>> = BTreeMap::new();
    for (k, r) in cluster_rect.iter().enumerate() {
        rect_tubes.entry(r.clone()).or_default().push(k);
    }
    let mut rect_points: BTreeMap<RectKey, Vec<(u32, u32)>> = BTreeMap::new();
    for (p, r) in &point_rect {
        rect_points.entry(r.clone()).or_default().push(*p);
    }
    st.partition_tubes = (rect_tubes.values().map(Vec::len).sum(), clusters.len());
    st.partition_squares = (rect_points.values().map(Vec::len).sum(), p1.len());
    if st.partition_tubes.0 != st.partition_tubes.1 || st.partition_squares.0 != st.partition_squares.1 {
        return Err(Error::StepClaimViolation { step: 7, detail: "rectangle families do not partition".into() });
    }
    // G4 split into per-rectangle subgraphs
    let g4r: BTreeSet<(usize, (u32, u32))> = clusters
        .iter()
        .enumerate()
        .flat_map(|(k, c)| c.nbhd.iter().map(move |&p| (k, p)))
        .filter(|(k, p)| point_rect[p] == cluster_rect[*k])
        .collect();
    let all_rects: BTreeSet<RectKey> = rect_tubes.keys().chain(rect_points.keys()).cloned().collect();
    st.rectangles = all_rects.len();
    rec.record(7, "G4 within rectangles", g4r.len(), 1.0, &[("rectangles", st.rectangles as f64)]);
    st.step = 7;

    // Step 8: gamma tiles and M'.
    let gamma_len = dq / ldq;
    let gamma_of = |p: (u32, u32)| -> (RectKey, (u32, u32)) {
        let r = point_rect[&p].clone();
        let (x, y) = center(scale, p);
        let d = q_int(r.dir as i128) * ldq;
        let gx = floor_q((x - q_int(r.qi as i128) * lq) / gamma_len);
        let gy = floor_q((y - d * x - q_int(r.strip as i128) * strip_h) / dq);
        (r, (gx as u32, gy as u32))
    };
    let mut deg4: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (_, p) in &g4r {
        *deg4.entry(*p).or_default() += 1;
    }
    let mut gamma_points: BTreeMap<(RectKey, (u32, u32)), Vec<(u32, u32)>> = BTreeMap::new();
    for &p in &p1 {
        gamma_points.entry(gamma_of(p)).or_default().push(p);
    }
    let gamma_keys: Vec<(RectKey, (u32, u32))> = gamma_points.keys().cloned().collect();
    let (md_exp, kept_gammas) = pigeonhole_by(&gamma_keys, |g| log2_floor(gamma_points[g].len() as f64), |g| {
        gamma_points[g].iter().map(|p| deg4.get(p).copied().unwrap_or(0)).sum::<usize>() as f64
    })
    .expect("gammas exist");
    st.m_dual = (md_exp as f64).exp2();
    let kept_points: BTreeSet<(u32, u32)> = kept_gammas.iter().flat_map(|g| gamma_points[g].iter().copied()).collect();
    let g5: Vec<(usize, (u32, u32))> = g4r.iter().filter(|(_, p)| kept_points.contains(p)).cloned().collect();
    rec.record(8, "G5", g5.len(), 1.0, &[("M_dual", st.m_dual), ("gammas", kept_gammas.len() as f64)]);
    st.step = 8;

    // Step 9: equal neighbourhoods across each gamma, contraction to G6.
    let mut nbhd5: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (k, p) in &g5 {
        nbhd5.entry(*p).or_default().push(*k);
    }
    let mut g6: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (gi, g) in kept_gammas.iter().enumerate() {
        let pts = &gamma_points[g];
        let first = nbhd5.get(&pts[0]).cloned().unwrap_or_default();
        for p in &pts[1..] {
            st.step9_checks += 1;
            if nbhd5.get(p).cloned().unwrap_or_default() != first {
                return Err(Error::StepClaimViolation {
                    step: 9,
                    detail: format!("squares {:?} and {p:?} share a gamma but not their neighbourhoods", pts[0]),
                });
            }
        }
        g6.extend(first.into_iter().map(|k| (k, gi)));
    }
    st.gammas = kept_gammas.len();
    rec.record(9, "G6", g6.len(), st.m_dual, &[("checks", st.step9_checks as f64)]);
    st.step = 9;
    if g6.is_empty() {
        return finish(st, rec, Some("graph emptied at step 9".into()));
    }

    // Step 10: min-degree refinement.
    let graph = BipartiteGraph::new(
        (0..clusters.len() as u64).collect(),
        (0..kept_gammas.len() as u64).collect(),
        g6.iter().map(|&(k, g)| (k as u64, g as u64)).collect(),
    )?;
    let g7 = bipartite_refine(&graph)?;
    let gamma_deg: Vec<usize> = g7.right_degrees().into_values().collect();
    let tau_deg: Vec<usize> = g7.left_degrees().into_values().collect();
    let mean = |v: &[usize]| if v.is_empty() { 0.0 } else { v.iter().sum::<usize>() as f64 / v.len() as f64 };
    rec.record(10, "G7", g7.edges.len(), 1.0, &[
        ("gamma_degree_over_claim", mean(&gamma_deg) / (st.n_dual / st.m_mult)),
        ("tau_degree_over_claim", mean(&tau_deg) / (st.n / st.m_dual)),
    ]);
    st.step = 10;

    // Step 11: rescale each rectangle.
    if st.l_exp + st.l_dual_exp > m {
        return Err(Error::StepClaimViolation { step: 11, detail: "rescaled scale is above 1".into() });
    }
    let bar = Scale::new(m - st.l_exp - st.l_dual_exp)?;
    let mut fams: BTreeMap<RectKey, RescaledFamily> = BTreeMap::new();
    let mut local_tube: BTreeMap<usize, usize> = BTreeMap::new();
    let mut local_cell: BTreeMap<usize, usize> = BTreeMap::new();
    for &(k, g) in &g7.edges {
        let (k, g) = (k as usize, g as usize);
        let r = cluster_rect[k].clone();
        let fam = fams.entry(r.clone()).or_insert_with(|| RescaledFamily {
            rect: r.clone(),
            scale: bar,
            clusters: Vec::new(),
            tubes: Vec::new(),
            cells: Vec::new(),
            edges: Vec::new(),
        });
        let ti = *local_tube.entry(k).or_insert_with(|| {
            let c = &clusters[k];
            let t = &tubes[c.rep];
            let d = q_int(r.dir as i128) * ldq;
            let x0 = q_int(r.qi as i128) * lq;
            let slope = (t.slope - d) / ldq;
            let intercept = ((t.slope - d) * x0 + t.intercept - q_int(r.strip as i128) * strip_h) / strip_h;
            let lo = ((c.x_lo - x0) / lq).max(q_int(0)).min(q_int(1));
            let hi = ((c.x_hi - x0) / lq).max(q_int(0)).min(q_int(1));
            let tube = Tube::new(bar, slope, intercept)
                .with_id(c.rep as u64)
                .with_width(4)
                .and_then(|t| t.segment(lo, hi))
                .expect("valid rescaled tube");
            fam.clusters.push(k);
            fam.tubes.push(tube);
            fam.tubes.len() - 1
        });
        let ci = *local_cell.entry(g).or_insert_with(|| {
            fam.cells.push(kept_gammas[g].1);
            fam.cells.len() - 1
        });
        fam.edges.push((ti, ci));
    }
    // Exactness of the affine map on point/tube incidences. Vertical
    // distances scale by exactly 1 / (L L'), so squares more than 8 delta
    // from the axis are non-incident on both sides and are skipped.
    for fam in fams.values() {
        let r = &fam.rect;
        let d = q_int(r.dir as i128) * ldq;
        let x0 = q_int(r.qi as i128) * lq;
        let y0 = q_int(r.strip as i128) * strip_h;
        let pts: BTreeSet<(u32, u32)> = rect_points.get(r).into_iter().flatten().copied().collect();
        let columns: BTreeSet<u32> = pts.iter().map(|p| p.0).collect();
        for (ti, &k) in fam.clusters.iter().enumerate() {
            let c = &clusters[k];
            let bt = &fam.tubes[ti];
            let near: Vec<(u32, u32)> = columns
                .iter()
                .flat_map(|&i| {
                    let yc = q_to_f64(tubes[c.rep].axis_at(scale.cell_mid(i))) * side;
                    let lo = (yc - 8.0).floor().max(0.0) as u32;
                    let hi = (yc + 8.0).ceil().clamp(0.0, u32::MAX as f64) as u32;
                    pts.range((i, lo)..=(i, hi.max(lo))).copied().collect::<Vec<_>>()
                })
                .collect();
            for p in &near {
                let (x, y) = center(scale, *p);
                let before = meets(&tubes[c.rep], c.x_lo, c.x_hi, *p);
                let xb = (x - x0) / lq;
                let yb = (y - d * x - y0) / strip_h;
                let in_range = xb >= (c.x_lo - x0) / lq && xb <= (c.x_hi - x0) / lq;
                let after = in_range && q_abs(yb - (bt.slope * xb + bt.intercept)) <= q_int(4) * bar.delta_q();
                st.bijection_checks += 1;
                if before != after {
                    return Err(Error::StepClaimViolation {
                        step: 11,
                        detail: format!("rescaling changes the incidence of {p:?} with tube {}", c.rep),
                    });
                }
            }
        }
    }
    st.rescaled = fams.into_values().collect();
    rec.record(11, "rescaled", g7.edges.len(), 1.0, &[("delta_bar", bar.delta()), ("families", st.rescaled.len() as f64)]);
    st.step = 11;
    finish(st, rec, None)
}

/// Claimed constants of the rescaled families, floored at 1 (a non-empty
/// set never has a Katz-Tao constant below 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledClaims {
    pub squares: f64,
    pub tubes: f64,
    pub shading: f64,
    pub dual_shading: f64,
}

pub fn rescaled_claims(state: &PipelineState) -> RescaledClaims {
    let (s, l, ld) = (state.s, state.length(), state.length_dual());
    let (mm, md) = (state.m_mult, state.m_dual);
    RescaledClaims {
        squares: (1.0 / (md * ld.powf(2.0 * s))).min(1.0 / (md * ld)).max(1.0),
        tubes: (1.0 / (mm * l.powf(2.0 * s))).min(1.0 / (mm * l)).max(1.0),
        shading: (1.0 / (md * ld.powf(s))).max(1.0),
        dual_shading: (1.0 / (mm * l.powf(s))).max(1.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledKtRow {
    pub rect: RectKey,
    pub squares: f64,
    pub tubes: f64,
    pub shading: f64,
    pub dual_shading: f64,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledKtReport {
    pub claims: RescaledClaims,
    pub rows: Vec<RescaledKtRow>,
    pub max_ratio: f64,
}

/// Validates every rescaled family against the claimed constants.
pub fn check_rescaled_kt(state: &PipelineState, exec: Exec) -> Result<RescaledKtReport> {
    let claims = rescaled_claims(state);
    let s = state.s;
    let rows = par::map(exec, &state.rescaled, |fam| -> Result<RescaledKtRow> {
        let max_j = fam.scale.m() + 2;
        let params = tube_parameters(&fam.tubes);
        let squares = squares_kt_constant(fam.scale, &fam.cells, 2.0 * s)?;
        let tubes = points_kt_constant(&params, 2.0 * s, max_j);
        let mut shading: f64 = 0.0;
        for t in 0..fam.tubes.len() {
            let sh = fam.shading_of(t);
            if !sh.is_empty() {
                shading = shading.max(squares_kt_constant(fam.scale, &sh, s)?);
            }
        }
        let mut dual_shading: f64 = 0.0;
        for c in 0..fam.cells.len() {
            let pts: Vec<(f64, f64)> = fam.dual_of(c).into_iter().map(|t| params[t]).collect();
            if !pts.is_empty() {
                dual_shading = dual_shading.max(points_kt_constant(&pts, s, max_j));
            }
        }
        let max_ratio = (squares / claims.squares)
            .max(tubes / claims.tubes)
            .max(shading / claims.shading)
            .max(dual_shading / claims.dual_shading);
        Ok(RescaledKtRow { rect: fam.rect.clone(), squares, tubes, shading, dual_shading, max_ratio })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let max_ratio = rows.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    Ok(RescaledKtReport { claims, rows, max_ratio })
}

/// Point counts of a sheared box with long side `long` (along slope `d`,
/// x-extent `long`) and vertical height `short`, three ways: directly, via
/// its axis-aligned hull, and via `ceil(long / short)` covering boxes of
/// x-extent `short`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCount {
    pub direct: usize,
    pub via_square: usize,
    pub via_strips: usize,
}

impl BoxCount {
    pub fn consistent(&self) -> bool {
        self.direct <= self.via_square.min(self.via_strips)
    }
}

pub fn box_count_two_ways(scale: Scale, squares: &[(u32, u32)], x0: Q, y0: Q, d: Q, long: Q, short: Q) -> BoxCount {
    let pts: Vec<(Q, Q)> = squares.iter().map(|&p| center(scale, p)).collect();
    let in_box = |x: Q, y: Q| x >= x0 && x < x0 + long && y - d * (x - x0) >= y0 && y - d * (x - x0) < y0 + short;
    let direct = pts.iter().filter(|&&(x, y)| in_box(x, y)).count();
    let (ylo, yhi) = (y0 + d.min(q_int(0)) * long, y0 + short + d.max(q_int(0)) * long);
    let via_square = pts.iter().filter(|&&(x, y)| x >= x0 && x < x0 + long && y >= ylo && y < yhi).count();
    let pieces = (long / short).ceil().to_integer().max(1);
    let mut via_strips = 0;
    for k in 0..pieces {
        let xa = x0 + q_int(k) * short;
        let xb = (xa + short).min(x0 + long);
        let ya = y0 + d * (xa - x0) + d.min(q_int(0)) * short;
        let yb = y0 + short + d * (xa - x0) + d.max(q_int(0)) * short;
        via_strips += pts.iter().filter(|&&(x, y)| x >= xa && x < xb && y >= ya && y < yb).count();
    }
    BoxCount { direct, via_square, via_strips }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoEndsFailure {
    pub rect: RectKey,
    pub tube: u64,
    pub count: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledTwoEndsReport {
    pub alpha: f64,
    pub fraction: f64,
    pub checked: usize,
    pub passed: usize,
    pub failures: Vec<TwoEndsFailure>,
}

impl RescaledTwoEndsReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Two-ends audit of the rescaled shadings: balls of radius `delta_bar^alpha
/// = (delta/L)^eps` (rescaled units) may hold at most a `delta_bar^(eps^4)`
/// fraction.
pub fn check_rescaled_two_ends(state: &PipelineState, epsilon: f64, exec: Exec) -> RescaledTwoEndsReport {
    let delta = state.delta();
    let l = state.length();
    let target = (delta / l).powf(epsilon);
    let bar = delta / (l * state.length_dual());
    let alpha = target.ln() / bar.ln();
    let fraction = bar.powf(epsilon.powi(4));
    let per_family = par::map(exec, &state.rescaled, |fam| {
        let mut out = Vec::new();
        for (t, tube) in fam.tubes.iter().enumerate() {
            let sh = fam.shading_of(t);
            if sh.is_empty() {
                continue;
            }
            let c = concentration_check(&sh, target / fam.scale.delta(), fraction, fam.scale);
            out.push((c.holds, TwoEndsFailure { rect: fam.rect.clone(), tube: tube.id, count: c.worst_count, threshold: c.threshold }));
        }
        out
    });
    let mut report = RescaledTwoEndsReport { alpha, fraction, checked: 0, passed: 0, failures: Vec::new() };
    for (holds, f) in per_family.into_iter().flatten() {
        report.checked += 1;
        if holds {
            report.passed += 1;
        } else {
            report.failures.push(f);
        }
    }
    report
}

/// Both sides of the Wang-Wu inequality
/// `N^(1/2) delta^(t/2) sum #Y(T) <= K1 K2^(1/2) #Y(T)` (constant and
/// `delta^-O(eps)` factors left out).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WangWu {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Every shading size lies in `[N, 2N]`.
    pub sizes_in_window: bool,
}

pub fn wang_wu_evaluator(shadings: &[Vec<(u32, u32)>], delta: f64, t: f64, sigma: f64, k1: f64, k2: f64, n: f64) -> Result<WangWu> {
    if (sigma - t.min(2.0 - t)).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("sigma = {sigma} must equal min(t, 2 - t)")));
    }
    let total: usize = shadings.iter().map(Vec::len).sum();
    let union: BTreeSet<(u32, u32)> = shadings.iter().flatten().copied().collect();
    let lhs = n.sqrt() * delta.powf(t / 2.0) * total as f64;
    let rhs = k1 * k2.sqrt() * union.len() as f64;
    Ok(WangWu {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        sizes_in_window: shadings.iter().all(|y| (y.len() as f64) >= n && (y.len() as f64) <= 2.0 * n),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectangleEstimate {
    pub rect: RectKey,
    pub tube_side: WangWu,
    pub square_side: WangWu,
}

/// Wang-Wu on each rescaled family, from both sides, with measured constants
/// and `N` the smallest shading size.
pub fn replay_rectangle_estimates(state: &PipelineState, exec: Exec) -> Result<Vec<RectangleEstimate>> {
    let t = 2.0 * state.s;
    let sigma = t.min(2.0 - t);
    par::map(exec, &state.rescaled, |fam| -> Result<RectangleEstimate> {
        let delta = fam.scale.delta();
        let max_j = fam.scale.m() + 2;
        let params = tube_parameters(&fam.tubes);
        let shadings: Vec<Vec<(u32, u32)>> = (0..fam.tubes.len()).map(|k| fam.shading_of(k)).collect();
        let k1 = points_kt_constant(&params, t, max_j);
        let mut k2: f64 = 1.0;
        for y in shadings.iter().filter(|y| !y.is_empty()) {
            k2 = k2.max(squares_kt_constant(fam.scale, y, sigma)?);
        }
        let n = shadings.iter().map(Vec::len).filter(|&k| k > 0).min().unwrap_or(0) as f64;
        let tube_side = wang_wu_evaluator(&shadings, delta, t, sigma, k1, k2, n)?;
        // dual: cells as tubes, tube parameters (as delta-bar cells) as squares
        let cell_of_param = |k: usize| {
            let (a, b) = params[k];
            (a.floor().max(0.0) as u32, (b.floor() + fam.scale.side() as f64).max(0.0) as u32)
        };
        let duals: Vec<Vec<(u32, u32)>> = (0..fam.cells.len()).map(|c| fam.dual_of(c).into_iter().map(cell_of_param).collect()).collect();
        let k1d = squares_kt_constant(fam.scale, &fam.cells, t)?;
        let mut k2d: f64 = 1.0;
        for y in duals.iter().filter(|y| !y.is_empty()) {
            let pts: Vec<(f64, f64)> = y.iter().map(|&(a, b)| (a as f64, b as f64)).collect();
            k2d = k2d.max(points_kt_constant(&pts, sigma, max_j));
        }
        let nd = duals.iter().map(Vec::len).filter(|&k| k > 0).min().unwrap_or(0) as f64;
        let square_side = wang_wu_evaluator(&duals, delta, t, sigma, k1d, k2d, nd)?;
        Ok(RectangleEstimate { rect: fam.rect.clone(), tube_side, square_side })
    })
    .into_iter()
    .collect()
}

/// Exponent of the main bound: `3s/4` for `s <= 1/2`, `s - s^2/2` above.
pub fn theorem_exponent(s: f64) -> f64 {
    if s <= 0.5 {
        0.75 * s
    } else {
        s - s * s / 2.0
    }
}

/// Bound on `N N'` from the rectangle estimates: `delta^(-3s/2)` for
/// `s <= 1/2`, `delta^(s^2 - 2s)` above.
pub fn nn_exponent(s: f64) -> f64 {
    if s <= 0.5 {
        1.5 * s
    } else {
        2.0 * s - s * s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalBoundReport {
    pub m: u32,
    pub s: f64,
    pub tubes: usize,
    pub squares: usize,
    pub incidences: usize,
    pub exponent: f64,
    pub bound: f64,
    pub ratio: f64,
    pub nn_dual: Option<f64>,
    pub nn_bound: f64,
    pub nn_ratio: Option<f64>,
    /// `delta^(-4s/5) #P^(2/5) #T^(3/5)`.
    pub tube_side_bound: f64,
    /// `delta^(-4s/5) #P^(3/5) #T^(2/5)`.
    pub square_side_bound: f64,
    /// `delta^(-4s/5) (#T #P)^(1/2)`.
    pub geometric_bound: f64,
    /// `delta^(-2s/(2+s)) (#T #P)^(1/2)`, reported for `s > 1/2`.
    pub large_s_bound: Option<f64>,
    pub ratios: [f64; 3],
}

impl FinalBoundReport {
    /// The main bound is at least as strong as the geometric-mean comparison.
    pub fn main_bound_stronger(&self) -> bool {
        self.bound <= self.geometric_bound * (1.0 + 1e-12)
    }
}

pub fn final_bound_report(instance: &TheoremInstance, state: Option<&PipelineState>) -> FinalBoundReport {
    let delta = instance.scale.delta();
    let s = instance.s;
    let (nt, np) = (instance.tubes.len() as f64, instance.squares.len() as f64);
    let i = instance.incidences();
    let sq = (nt * np).sqrt();
    let exponent = theorem_exponent(s);
    let bound = delta.powf(-exponent) * sq;
    let r = |b: f64| if b > 0.0 { i as f64 / b } else { 0.0 };
    let tube_side_bound = delta.powf(-0.8 * s) * np.powf(0.4) * nt.powf(0.6);
    let square_side_bound = delta.powf(-0.8 * s) * np.powf(0.6) * nt.powf(0.4);
    let geometric_bound = delta.powf(-0.8 * s) * sq;
    let nn_bound = delta.powf(-nn_exponent(s));
    let nn_dual = state.filter(|st| st.step >= 2).map(|st| st.nn_dual());
    FinalBoundReport {
        m: instance.scale.m(),
        s,
        tubes: nt as usize,
        squares: np as usize,
        incidences: i,
        exponent,
        bound,
        ratio: r(bound),
        nn_dual,
        nn_bound,
        nn_ratio: nn_dual.map(|v| v / nn_bound),
        tube_side_bound,
        square_side_bound,
        geometric_bound,
        large_s_bound: (s > 0.5).then(|| delta.powf(-2.0 * s / (2.0 + s)) * sq),
        ratios: [r(tube_side_bound), r(square_side_bound), r(geometric_bound)],
    }
}
