use std::path::Path;

use anyhow::anyhow;
use delta_lab::expander::{exponent_fit, ExperimentSpec};
use delta_lab::frostman::{validate_set_1d, validate_set_2d, GenSpec, SetKind};
use delta_lab::harness::{
    check_rescaled_kt, check_rescaled_two_ends, final_bound_report, generate_instance, measure_hypotheses,
    run_pipeline, InstanceStyle, PipelineOptions, PipelineState, TheoremInstance, DEFAULT_EPSILON,
    HYPOTHESIS_CONSTANT,
};
use delta_lab::incidence::{full_shading, incidence_count, TubeFamily};
use delta_lab::{par, Error, Exec, GridSet1D, GridSet2D, Scale};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::table::{emit, opt_real, real, Csv};

pub enum Failure {
    /// Unreadable or malformed input; exit code 2.
    Input(anyhow::Error),
    /// A requested check did not hold; exit code 1.
    Assertion(Vec<String>),
    /// Anything else that stopped the run; exit code 1.
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_)
            | Error::Json(_)
            | Error::ScaleOutOfRange { .. }
            | Error::ScaleMismatch { .. }
            | Error::CellOutOfRange { .. }
            | Error::IncompatibleScale(_) => Failure::Input(e.into()),
            Error::StepClaimViolation { .. } | Error::GuaranteeViolation { .. } => {
                Failure::Assertion(vec![e.to_string()])
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

pub struct Context<'a> {
    pub spec: &'a Path,
    pub seed: Option<u64>,
    pub out: Option<&'a Path>,
    pub slack: f64,
}

impl Context<'_> {
    fn read_json<T: DeserializeOwned>(&self) -> std::result::Result<T, Failure> {
        let text = std::fs::read_to_string(self.spec)
            .map_err(|e| Failure::Input(anyhow!("reading {}: {e}", self.spec.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Input(anyhow!("{}: {e}", self.spec.display())))
    }

    fn emit(&self, contents: &str) -> Outcome {
        emit(self.out, contents).map_err(Failure::Runtime)
    }
}

fn input(msg: String) -> Failure {
    Failure::Input(anyhow!(msg))
}

fn check(failures: Vec<String>) -> Outcome {
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(failures))
    }
}

// gen ------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum GenRequest {
    Product { x: GenSpec, y: GenSpec, m: Option<u32> },
    Line(GenSpec),
}

fn spec_scale(spec: &GenSpec, fallback: Option<u32>) -> std::result::Result<Scale, Failure> {
    let m = spec.m().or(fallback).ok_or_else(|| input("generator spec needs \"m\"".into()))?;
    Ok(Scale::new(m)?)
}

pub fn gen(ctx: &Context) -> Outcome {
    let req: GenRequest = ctx.read_json()?;
    let seed = ctx.seed.unwrap_or(0);
    let json = match req {
        GenRequest::Line(spec) => {
            let set = spec.generate(spec_scale(&spec, None)?, seed)?;
            serde_json::to_string(&set).map_err(|e| Failure::Runtime(e.into()))?
        }
        GenRequest::Product { x, y, m } => {
            let sx = spec_scale(&x, m)?;
            let sy = spec_scale(&y, m)?;
            if sx != sy {
                return Err(input(format!("factor scales differ: m = {} and {}", sx.m(), sy.m())));
            }
            let a = x.generate(sx, seed)?;
            let b = y.generate(sy, seed.wrapping_add(1))?;
            let cells = a.cells().iter().flat_map(|&i| b.cells().iter().map(move |&j| (i, j)));
            let set = GridSet2D::new(sx, cells)?;
            serde_json::to_string(&set).map_err(|e| Failure::Runtime(e.into()))?
        }
    };
    ctx.emit(&(json + "\n"))
}

// validate -------------------------------------------------------------------

#[derive(Deserialize)]
struct ValidateOptions {
    #[serde(default = "one")]
    s: f64,
    #[serde(default = "katz_tao")]
    kind: SetKind,
    /// Fails the run when the constant exceeds this.
    max_constant: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn katz_tao() -> SetKind {
    SetKind::KatzTao
}

pub fn validate(ctx: &Context) -> Outcome {
    let value: Value = ctx.read_json()?;
    let opts: ValidateOptions =
        serde_json::from_value(value.clone()).map_err(|e| input(format!("{}: {e}", ctx.spec.display())))?;
    let planar = value
        .get("cells")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .is_some_and(Value::is_array);
    let witness = if planar {
        let set: GridSet2D = serde_json::from_value(value).map_err(|e| input(format!("{}: {e}", ctx.spec.display())))?;
        validate_set_2d(&set, opts.kind, opts.s)
    } else {
        let set: GridSet1D = serde_json::from_value(value).map_err(|e| input(format!("{}: {e}", ctx.spec.display())))?;
        validate_set_1d(&set, opts.kind, opts.s)
    };
    let json = serde_json::to_string(&witness).map_err(|e| Failure::Runtime(e.into()))?;
    ctx.emit(&(json + "\n"))?;
    match opts.max_constant {
        Some(k) if witness.c > k => check(vec![format!("constant {} exceeds {k}", witness.c)]),
        _ => Ok(()),
    }
}

// incidence ------------------------------------------------------------------

#[derive(Deserialize)]
struct IncidenceSpec {
    tubes: Value,
    squares: GridSet2D,
    #[serde(default)]
    format: IncidenceFormat,
}

#[derive(Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum IncidenceFormat {
    #[default]
    Json,
    Adjacency,
}

#[derive(Serialize)]
struct IncidenceReport {
    m: u32,
    tubes: usize,
    squares: usize,
    incidences: u64,
    weighted_incidences: u64,
    shading: Vec<(u64, Vec<(u32, u32)>)>,
}

pub fn incidence(ctx: &Context) -> Outcome {
    let spec: IncidenceSpec = ctx.read_json()?;
    let family = TubeFamily::from_json(&spec.tubes.to_string())?;
    let shading = full_shading(&family, &spec.squares)?;
    let text = match spec.format {
        IncidenceFormat::Adjacency => shading.adjacency_lists(),
        IncidenceFormat::Json => {
            let report = IncidenceReport {
                m: family.scale.m(),
                tubes: family.len(),
                squares: spec.squares.len(),
                incidences: incidence_count(&family, &spec.squares, false)?,
                weighted_incidences: incidence_count(&family, &spec.squares, true)?,
                shading: shading.entries,
            };
            serde_json::to_string(&report).map_err(|e| Failure::Runtime(e.into()))? + "\n"
        }
    };
    ctx.emit(&text)
}

// expander -------------------------------------------------------------------

const EXPANDER_COLUMNS: [&str; 9] = [
    "m",
    "delta",
    "card_A",
    "card_B",
    "card_P",
    "image_cover",
    "energy",
    "fitted_exponent",
    "theory_exponent",
];

pub fn expander(ctx: &Context) -> Outcome {
    let value: Value = ctx.read_json()?;
    let tolerance = value.get("tolerance").and_then(Value::as_f64);
    let mut spec: ExperimentSpec =
        serde_json::from_value(value).map_err(|e| input(format!("{}: {e}", ctx.spec.display())))?;
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let fit = exponent_fit(&spec, Exec::default())?;
    let mut csv = Csv::new(&EXPANDER_COLUMNS);
    for r in &fit.rows {
        csv.row(vec![
            r.m.to_string(),
            real(r.delta),
            r.card_a.to_string(),
            r.card_b.to_string(),
            r.card_p.to_string(),
            r.image_cover.to_string(),
            r.energy.to_string(),
            String::new(),
            String::new(),
        ]);
    }
    let mut summary = vec![String::new(); EXPANDER_COLUMNS.len()];
    summary[0] = "fit".into();
    summary[7] = real(fit.slope);
    summary[8] = real(fit.theory_exponent);
    csv.row(summary);
    ctx.emit(&csv.into_string())?;
    match tolerance {
        Some(tol) if fit.slope < fit.theory_exponent - tol => check(vec![format!(
            "fitted exponent {:.4} below {:.4} - {tol}",
            fit.slope, fit.theory_exponent
        )]),
        _ => Ok(()),
    }
}

// theorem / sweep ------------------------------------------------------------

const THEOREM_COLUMNS: [&str; 17] = [
    "seed",
    "m",
    "s",
    "tubes",
    "squares",
    "incidences",
    "exponent",
    "bound",
    "ratio",
    "nn_dual",
    "nn_bound",
    "nn_ratio",
    "last_step",
    "early_exit",
    "kt_max_ratio",
    "two_ends_checked",
    "two_ends_passed",
];

#[derive(Deserialize)]
struct ExplicitInstance {
    tubes: Value,
    squares: GridSet2D,
}

#[derive(Deserialize)]
struct TheoremSpec {
    m: Option<u32>,
    s: f64,
    #[serde(default = "random_style")]
    style: InstanceStyle,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "yes")]
    early_exit: bool,
    #[serde(default = "yes")]
    assert: bool,
    instance: Option<ExplicitInstance>,
}

fn random_style() -> InstanceStyle {
    InstanceStyle::Random
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn yes() -> bool {
    true
}

struct TheoremRun {
    row: Vec<String>,
    failures: Vec<String>,
    trace: String,
}

fn explicit_instance(spec: &TheoremSpec, inst: &ExplicitInstance) -> std::result::Result<TheoremInstance, Failure> {
    let tubes = TubeFamily::from_json(&inst.tubes.to_string())?;
    if tubes.scale != inst.squares.scale() {
        return Err(Error::ScaleMismatch { source_m: tubes.scale.m(), target_m: inst.squares.scale().m() }.into());
    }
    if spec.m.is_some_and(|m| m != tubes.scale.m()) {
        return Err(input(format!("spec m = {:?} but the instance has m = {}", spec.m, tubes.scale.m())));
    }
    let shading = full_shading(&tubes, &inst.squares)?;
    let witness = measure_hypotheses(&tubes, &inst.squares, &shading, spec.s, Exec::default())?;
    Ok(TheoremInstance {
        scale: tubes.scale,
        s: spec.s,
        style: spec.style,
        seed: spec.seed,
        tubes,
        squares: inst.squares.clone(),
        shading,
        witness,
        attempts: 0,
    })
}

fn build_instance(spec: &TheoremSpec) -> std::result::Result<TheoremInstance, Failure> {
    match &spec.instance {
        Some(inst) => explicit_instance(spec, inst),
        None => {
            let m = spec.m.ok_or_else(|| input("theorem spec needs \"m\" or \"instance\"".into()))?;
            Ok(generate_instance(Scale::new(m)?, spec.s, spec.style, spec.seed)?)
        }
    }
}

fn run_theorem(spec: &TheoremSpec, slack: f64) -> std::result::Result<TheoremRun, Failure> {
    let instance = build_instance(spec)?;
    let key = vec![spec.seed.to_string(), instance.scale.m().to_string(), real(spec.s)];
    if instance.tubes.is_empty() || instance.squares.is_empty() {
        let mut row = key;
        row.resize(THEOREM_COLUMNS.len(), "0".into());
        return Ok(TheoremRun { row, failures: Vec::new(), trace: String::new() });
    }
    let opts = PipelineOptions { epsilon: spec.epsilon, slack, early_exit: spec.early_exit };
    let mut failures = Vec::new();
    let state: Option<PipelineState> = match run_pipeline(&instance, opts) {
        Ok(st) => Some(st),
        Err(e @ Error::StepClaimViolation { .. }) => {
            failures.push(e.to_string());
            None
        }
        Err(e) => return Err(e.into()),
    };
    let rep = final_bound_report(&instance, state.as_ref());
    let allowed = instance.scale.delta().powf(-slack);
    if rep.ratio > allowed {
        failures.push(format!("I / bound = {} exceeds delta^(-{slack})", rep.ratio));
    }
    if let Some(r) = rep.nn_ratio.filter(|&r| r > allowed) {
        failures.push(format!("NN' / bound = {r} exceeds delta^(-{slack})"));
    }
    let (mut kt, mut te) = (None, (0usize, 0usize));
    if let Some(st) = &state {
        if st.partition_tubes.0 != st.partition_tubes.1 || st.partition_squares.0 != st.partition_squares.1 {
            failures.push(format!(
                "partition sums differ: tubes {:?}, squares {:?}",
                st.partition_tubes, st.partition_squares
            ));
        }
        if st.reached_rescaling() {
            let report = check_rescaled_kt(st, Exec::default())?;
            if report.max_ratio > HYPOTHESIS_CONSTANT {
                failures.push(format!("rescaled KT ratio {} exceeds {HYPOTHESIS_CONSTANT}", report.max_ratio));
            }
            kt = Some(report.max_ratio);
            let two = check_rescaled_two_ends(st, st.epsilon, Exec::default());
            te = (two.checked, two.passed);
        }
    }
    let row = key
        .into_iter()
        .chain([
            rep.tubes.to_string(),
            rep.squares.to_string(),
            rep.incidences.to_string(),
            real(rep.exponent),
            real(rep.bound),
            real(rep.ratio),
            opt_real(rep.nn_dual),
            real(rep.nn_bound),
            opt_real(rep.nn_ratio),
            state.as_ref().map(|st| st.step.to_string()).unwrap_or_default(),
            state.as_ref().map(|st| u8::from(st.early_exit.is_some()).to_string()).unwrap_or_default(),
            opt_real(kt),
            te.0.to_string(),
            te.1.to_string(),
        ])
        .collect();
    let trace = state.map(|st| st.trace_json_lines()).unwrap_or_default();
    if !spec.assert {
        failures.clear();
    }
    Ok(TheoremRun { row, failures, trace })
}

pub fn theorem(ctx: &Context) -> Outcome {
    let mut spec: TheoremSpec = ctx.read_json()?;
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let run = run_theorem(&spec, ctx.slack)?;
    let mut csv = Csv::new(&THEOREM_COLUMNS);
    csv.row(run.row);
    ctx.emit(&csv.into_string())?;
    if let Some(out) = ctx.out {
        let mut trace = run.trace;
        if !trace.is_empty() {
            trace.push('\n');
        }
        crate::table::write_atomic(&out.with_extension("jsonl"), &trace)?;
    }
    check(run.failures)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

#[derive(Deserialize)]
struct SweepSpec {
    m: Vec<u32>,
    s: Vec<f64>,
    seeds: Seeds,
    #[serde(default = "random_style")]
    style: InstanceStyle,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "yes")]
    early_exit: bool,
    #[serde(default = "yes")]
    assert: bool,
}

pub fn sweep(ctx: &Context) -> Outcome {
    let spec: SweepSpec = ctx.read_json()?;
    let base = ctx.seed.unwrap_or(0);
    let seeds: Vec<u64> = match &spec.seeds {
        Seeds::Count(n) => (0..*n).map(|k| base + k).collect(),
        Seeds::List(v) => v.iter().map(|k| base + k).collect(),
    };
    let mut points = Vec::new();
    for &m in &spec.m {
        for &s in &spec.s {
            for &seed in &seeds {
                points.push(TheoremSpec {
                    m: Some(m),
                    s,
                    style: spec.style,
                    seed,
                    epsilon: spec.epsilon,
                    early_exit: spec.early_exit,
                    assert: spec.assert,
                    instance: None,
                });
            }
        }
    }
    let runs = par::map(Exec::default(), &points, |p| run_theorem(p, ctx.slack));
    let mut csv = Csv::new(&THEOREM_COLUMNS);
    let mut failures = Vec::new();
    for (p, run) in points.iter().zip(runs) {
        let run = run?;
        failures.extend(run.failures.into_iter().map(|f| format!("seed {} m {:?} s {}: {f}", p.seed, p.m, p.s)));
        csv.row(run.row);
    }
    ctx.emit(&csv.into_string())?;
    check(failures)
}
