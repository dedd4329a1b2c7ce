//! CSV reports and the small file formats that feed them.
//!
//! Every report has a header row. Floats are written with 17 significant
//! digits so values round-trip exactly; non-finite values print as `inf`,
//! `-inf` or `nan`, and absent values as empty cells.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ldp::{
    eigenvalue_oracle, estimate_event_decay, estimate_laplace, solve_laplace_inf, DecayEstimate,
    Event, Functional, LaplaceProblem, SamplingPlan,
};
use crate::process::{
    check_minorization, dirac_approximation, invariant_measures, ModelFile, ProbMeasure,
    ProcessSpec,
};
use crate::rate::{rate_explicit, rate_variational_oracle, ORACLE_MIN_THETA};
use crate::sim::{batch_simulate, running_cost_rate, Dynamics, SimConfig};
use crate::tilt::{entropy_decomposition, synthesize_tilt, ExtReal};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_ext(x: ExtReal) -> String {
    fmt_f64(x.to_f64())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(csv_error)?;
        Ok(Self { writer })
    }

    fn row<I, S>(&mut self, cells: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(cells).map_err(csv_error)
    }

    fn finish(self) -> Result<String> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Parses a target measure given as a JSON array of weights.
pub fn parse_target(text: &str) -> Result<ProbMeasure> {
    let w: Vec<f64> = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    ProbMeasure::new(w)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DescriptorFile {
    Vector(Vec<f64>),
    Object(DescriptorObject),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorObject {
    f: Option<Vec<f64>>,
    c: Option<f64>,
    target: Option<Vec<f64>>,
    radius: Option<f64>,
    weight: Option<f64>,
}

/// Functional or event description read from a JSON file.
///
/// * `[..]` or `{"f": [..]}`: linear functional `<f, eta>`.
/// * `{"f": [..], "c": c}`: half-space `<f, eta> >= c`.
/// * `{"target": [..], "radius": r}`: total-variation ball.
/// * `{}`: the whole simplex.
///
/// An optional `weight` sets the penalty weight when a set is used as a
/// Laplace functional (default 1).
#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    Linear(Vec<f64>),
    HalfSpace { f: Vec<f64>, c: f64, weight: f64 },
    TvBall { target: Vec<f64>, radius: f64, weight: f64 },
    Whole,
}

impl Descriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: DescriptorFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let obj = match file {
            DescriptorFile::Vector(f) => return Ok(Descriptor::Linear(f)),
            DescriptorFile::Object(o) => o,
        };
        let weight = obj.weight.unwrap_or(1.0);
        match (obj.f, obj.c, obj.target, obj.radius) {
            (Some(f), None, None, None) if obj.weight.is_none() => Ok(Descriptor::Linear(f)),
            (Some(f), Some(c), None, None) => Ok(Descriptor::HalfSpace { f, c, weight }),
            (None, None, Some(target), Some(radius)) => Ok(Descriptor::TvBall {
                target,
                radius,
                weight,
            }),
            (None, None, None, None) if obj.weight.is_none() => Ok(Descriptor::Whole),
            _ => Err(Error::Parse(
                "descriptor must be {f}, {f, c}, {target, radius} or {}".into(),
            )),
        }
    }

    pub fn to_functional(&self, n: usize) -> Functional {
        match self {
            Descriptor::Linear(f) => Functional::Linear(f.clone()),
            Descriptor::HalfSpace { f, c, weight } => Functional::HalfSpacePenalty {
                f: f.clone(),
                c: *c,
                weight: *weight,
            },
            Descriptor::TvBall {
                target,
                radius,
                weight,
            } => Functional::TvBallPenalty {
                target: target.clone(),
                radius: *radius,
                weight: *weight,
            },
            Descriptor::Whole => Functional::zero(n),
        }
    }

    pub fn to_event(&self) -> Result<Event> {
        match self {
            Descriptor::Linear(_) => Err(Error::Parse(
                "an event needs {f, c}, {target, radius} or {}".into(),
            )),
            Descriptor::HalfSpace { f, c, .. } => Ok(Event::HalfSpace { f: f.clone(), c: *c }),
            Descriptor::TvBall { target, radius, .. } => Ok(Event::TvBall {
                target: target.clone(),
                radius: *radius,
            }),
            Descriptor::Whole => Ok(Event::Whole),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

/// Outcome of every model check, in the order they are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub conditions: Vec<Condition>,
    pub first_failure: Option<(&'static str, Error)>,
}

const SPEC_CONDITIONS: [&str; 6] = [
    "shape",
    "kernel_entries",
    "row_sums",
    "intensities",
    "irreducibility",
    "reversibility",
];

fn spec_condition(e: &Error) -> &'static str {
    match e {
        Error::KernelEntry { .. } => "kernel_entries",
        Error::RowSum { .. } => "row_sums",
        Error::Intensity { .. } => "intensities",
        Error::Reducible(_) => "irreducibility",
        Error::NotReversible { .. } => "reversibility",
        _ => "shape",
    }
}

/// Runs model validation, the invariant-measure check and the minorization
/// search.
pub fn validate_model(model: &ModelFile, tol: f64, max_steps: usize) -> ValidationReport {
    let mut conditions = Vec::new();
    let mut first_failure = None;
    let mut push = |name, status, detail: String| {
        conditions.push(Condition {
            name,
            status,
            detail,
        })
    };
    let spec = match model.validate(tol) {
        Ok(spec) => {
            for name in SPEC_CONDITIONS {
                push(name, Status::Pass, String::new());
            }
            spec
        }
        Err(e) => {
            let failed = spec_condition(&e);
            let mut seen = false;
            for name in SPEC_CONDITIONS {
                if name == failed {
                    push(name, Status::Fail, e.to_string());
                    seen = true;
                } else if seen {
                    push(name, Status::Skipped, String::new());
                } else {
                    push(name, Status::Pass, String::new());
                }
            }
            push("invariant_measures", Status::Skipped, String::new());
            push("minorization", Status::Skipped, String::new());
            return ValidationReport {
                conditions,
                first_failure: Some((failed, e)),
            };
        }
    };
    match invariant_measures(&spec) {
        Ok(_) => push("invariant_measures", Status::Pass, String::new()),
        Err(e) => {
            push("invariant_measures", Status::Fail, e.to_string());
            first_failure = Some(("invariant_measures", e));
        }
    }
    match check_minorization(&spec, max_steps) {
        Ok(m) => push(
            "minorization",
            Status::Pass,
            format!("N={} c={} lower={}", m.steps, fmt_f64(m.upper), fmt_f64(m.lower)),
        ),
        Err(e) => {
            push("minorization", Status::Fail, e.to_string());
            if first_failure.is_none() {
                first_failure = Some(("minorization", e));
            }
        }
    }
    ValidationReport {
        conditions,
        first_failure,
    }
}

pub fn validation_csv(report: &ValidationReport) -> Result<String> {
    let mut t = Table::new(&["condition", "status", "detail"])?;
    for c in &report.conditions {
        t.row([c.name, c.status.as_str(), c.detail.as_str()])?;
    }
    t.finish()
}

/// Tolerance passed to the variational oracle by [`rate_csv`].
pub const ORACLE_TOL: f64 = 1e-10;

/// Rate value and its terms; with `oracle`, also the variational value and
/// the gap when the density is bounded away from zero.
pub fn rate_csv(spec: &ProcessSpec, eta: &ProbMeasure, oracle: bool) -> Result<String> {
    let r = rate_explicit(spec, eta)?;
    let interior = r.theta.iter().all(|t| *t >= ORACLE_MIN_THETA);
    let variational = if oracle && interior {
        Some(rate_variational_oracle(spec, eta, ORACLE_TOL)?)
    } else {
        None
    };
    let mut t = Table::new(&["rate", "first_term", "second_term", "oracle", "oracle_gap"])?;
    t.row([
        fmt_f64(r.value),
        fmt_f64(r.first_term),
        fmt_f64(r.second_term),
        fmt_opt(variational),
        fmt_opt(variational.map(|v| (v - r.value).abs())),
    ])?;
    t.finish()
}

/// Finite-horizon and limiting Feynman-Kac values for a linear functional.
pub fn oracle_csv(spec: &ProcessSpec, f: &[f64], horizons: &[f64], start: usize) -> Result<String> {
    let sol = solve_laplace_inf(spec, &Functional::Linear(f.to_vec()))?;
    let mut t = Table::new(&["horizon", "exact_finite_t", "limit", "variational"])?;
    for &h in horizons {
        let o = eigenvalue_oracle(spec, f, h, start)?;
        t.row([
            fmt_f64(h),
            fmt_f64(o.exact_finite_t),
            fmt_f64(o.limit),
            fmt_f64(sol.value),
        ])?;
    }
    t.finish()
}

/// Tilted dynamics for `eta` in long format: `quantity,state,to,value`.
pub fn tilt_csv(spec: &ProcessSpec, eta: &ProbMeasure) -> Result<String> {
    let tilt = synthesize_tilt(spec, eta)?;
    let costs = entropy_decomposition(spec, eta, &tilt)?;
    let rate = rate_explicit(spec, eta)?.value;
    let mut t = Table::new(&["quantity", "state", "to", "value"])?;
    let labels = spec.labels();
    for (name, v) in [
        ("rate", fmt_f64(rate)),
        ("jump_rate", fmt_f64(tilt.a)),
        ("chain_cost", fmt_ext(costs.chain_cost)),
        ("time_cost", fmt_f64(costs.time_cost)),
        ("total_cost", fmt_ext(costs.total())),
    ] {
        t.row([name, "", "", v.as_str()])?;
    }
    let per_state: [(&str, Box<dyn Fn(usize) -> f64>); 8] = [
        ("eta", Box::new(|x| eta.weights()[x])),
        ("kappa", Box::new(|x| tilt.kappa[x])),
        ("sojourn_mean", Box::new(|x| tilt.sojourn_mean(x))),
        ("holding_time_mean", Box::new(|x| tilt.holding_time_mean(spec, x))),
        ("dilation", Box::new(|x| tilt.b[x])),
        ("mu1", Box::new(|x| tilt.mu1[x])),
        ("xi_mass", Box::new(|x| tilt.xi_mass[x])),
        ("speed", Box::new(|x| tilt.speed[x])),
    ];
    for (name, value) in &per_state {
        for (x, label) in labels.iter().enumerate() {
            t.row([*name, label.as_str(), "", fmt_f64(value(x)).as_str()])?;
        }
    }
    for (x, from) in labels.iter().enumerate() {
        for (y, to) in labels.iter().enumerate() {
            t.row(["p", from.as_str(), to.as_str(), fmt_f64(tilt.p.get(x, y)).as_str()])?;
        }
    }
    t.finish()
}

/// Rate, jump rate and cost split of the Dirac approximations for
/// `k = 2..=n`.
pub fn dirac_csv(n: usize) -> Result<String> {
    if n < 2 {
        return Err(Error::Parameter(format!("n = {n} must be >= 2")));
    }
    let mut t = Table::new(&[
        "k",
        "rate",
        "jump_rate",
        "chain_cost",
        "time_cost",
        "total_minus_rate",
    ])?;
    for k in 2..=n {
        let (spec, eta) = dirac_approximation(k)?;
        let rate = rate_explicit(&spec, &eta)?.value;
        let tilt = synthesize_tilt(&spec, &eta)?;
        let costs = entropy_decomposition(&spec, &eta, &tilt)?;
        t.row([
            k.to_string(),
            fmt_f64(rate),
            fmt_f64(tilt.a),
            fmt_ext(costs.chain_cost),
            fmt_f64(costs.time_cost),
            fmt_f64(costs.total().to_f64() - rate),
        ])?;
    }
    t.finish()
}

/// One row per simulated path: jump count, per-unit-time path costs, the
/// log-likelihood ratio and the empirical measure. With `tilt_target`, paths
/// follow the tilt for that measure.
pub fn simulate_csv(
    spec: &ProcessSpec,
    tilt_target: Option<&ProbMeasure>,
    config: &SimConfig,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<String> {
    let tilt = tilt_target.map(|t| synthesize_tilt(spec, t)).transpose()?;
    let dynamics = match &tilt {
        Some(t) => Dynamics::Tilted(t),
        None => Dynamics::Original,
    };
    let batch = batch_simulate(spec, dynamics, config, count, seed, workers)?;
    let mut header: Vec<String> = [
        "index",
        "seed",
        "jump_count",
        "chain_rate",
        "time_rate",
        "log_likelihood_ratio",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(spec.labels().iter().map(|l| format!("eta_{l}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&header_refs)?;
    for s in &batch {
        let (chain_rate, time_rate) = running_cost_rate(&s.cost, config.horizon);
        let mut row = vec![
            s.index.to_string(),
            s.seed.to_string(),
            s.jump_count.to_string(),
            fmt_f64(chain_rate),
            fmt_f64(time_rate),
            fmt_f64(s.cost.log_likelihood_ratio),
        ];
        row.extend(s.empirical.weights().iter().map(|w| fmt_f64(*w)));
        t.row(row)?;
    }
    t.finish()
}

const ESTIMATE_HEADER: [&str; 10] = [
    "horizon",
    "method",
    "estimate",
    "std_error",
    "prediction",
    "reference",
    "ess",
    "hits",
    "samples",
    "status",
];

fn estimate_row(e: &DecayEstimate, reference: Option<f64>) -> Vec<String> {
    vec![
        fmt_f64(e.horizon),
        e.method.as_str().to_string(),
        fmt_f64(e.estimate),
        fmt_f64(e.std_error),
        fmt_f64(e.prediction),
        fmt_opt(reference),
        fmt_f64(e.ess),
        e.hits.to_string(),
        e.samples.to_string(),
        e.status.as_str().to_string(),
    ]
}

/// Naive and importance-sampled Laplace estimates per horizon. The tilt
/// targets the minimizer of `F + I`. For linear `F` the `reference` column
/// holds the exact finite-horizon value.
pub fn laplace_csv(spec: &ProcessSpec, functional: &Functional, plan: &SamplingPlan) -> Result<String> {
    let problem = LaplaceProblem {
        spec,
        functional: functional.clone(),
        plan: plan.clone(),
    };
    let naive = estimate_laplace(&problem, None)?;
    let star = solve_laplace_inf(spec, functional)?;
    let tilt = synthesize_tilt(spec, &star.eta)?;
    let is = estimate_laplace(&problem, Some(&tilt))?;
    let mut t = Table::new(&ESTIMATE_HEADER)?;
    for (a, b) in naive.iter().zip(&is) {
        let reference = match functional {
            Functional::Linear(f) => Some(eigenvalue_oracle(spec, f, a.horizon, plan.start)?.exact_finite_t),
            _ => None,
        };
        t.row(estimate_row(a, reference))?;
        t.row(estimate_row(b, reference))?;
    }
    t.finish()
}

/// Naive and importance-sampled event decay estimates per horizon. The
/// `reference` column holds the KKT residual of the constrained minimizer.
pub fn decay_csv(spec: &ProcessSpec, event: &Event, plan: &SamplingPlan) -> Result<String> {
    let decay = estimate_event_decay(spec, event, plan)?;
    let mut t = Table::new(&ESTIMATE_HEADER)?;
    for e in &decay.estimates {
        t.row(estimate_row(e, Some(decay.minimum.kkt_residual)))?;
    }
    t.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{uniform_cell_model, validate_spec};

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(0.25), "2.5000000000000000e-1");
    }

    #[test]
    fn descriptor_forms() {
        assert_eq!(
            Descriptor::from_json("[1, 2]").unwrap(),
            Descriptor::Linear(vec![1.0, 2.0])
        );
        assert_eq!(
            Descriptor::from_json(r#"{"f": [1, 2]}"#).unwrap(),
            Descriptor::Linear(vec![1.0, 2.0])
        );
        assert_eq!(
            Descriptor::from_json(r#"{"f": [0, 1], "c": 0.6}"#).unwrap(),
            Descriptor::HalfSpace {
                f: vec![0.0, 1.0],
                c: 0.6,
                weight: 1.0
            }
        );
        assert!(matches!(
            Descriptor::from_json(r#"{"target": [0.5, 0.5], "radius": 0.1, "weight": 5}"#).unwrap(),
            Descriptor::TvBall { weight, .. } if weight == 5.0
        ));
        assert_eq!(Descriptor::from_json("{}").unwrap(), Descriptor::Whole);
        assert!(Descriptor::from_json(r#"{"c": 1}"#).is_err());
        assert!(Descriptor::from_json(r#"{"f": [1], "g": 1}"#).is_err());
        assert!(Descriptor::Linear(vec![1.0]).to_event().is_err());
    }

    #[test]
    fn validation_of_uniform_and_swap() {
        let uniform = uniform_cell_model(4).unwrap().to_model_file();
        let r = validate_model(&uniform, 1e-9, 64);
        assert!(r.first_failure.is_none());
        let last = r.conditions.last().unwrap();
        assert!(last.detail.starts_with("N=1 c="));
        let c: f64 = last.detail.split(['=', ' ']).nth(3).unwrap().parse().unwrap();
        assert!((c - 1.0).abs() < 1e-12);

        let swap = ModelFile {
            labels: vec![],
            q: vec![1.0, 1.0],
            alpha: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        let r = validate_model(&swap, 1e-9, 64);
        let reversibility = r.conditions.iter().find(|c| c.name == "reversibility").unwrap();
        assert_eq!(reversibility.status, Status::Pass);
        assert_eq!(r.first_failure.as_ref().unwrap().0, "minorization");
    }

    #[test]
    fn validation_names_row_sum_failure() {
        let bad = ModelFile {
            labels: vec![],
            q: vec![1.0, 1.0],
            alpha: vec![vec![0.5, 0.6], vec![0.5, 0.5]],
        };
        let r = validate_model(&bad, 1e-9, 64);
        let (name, err) = r.first_failure.unwrap();
        assert_eq!(name, "row_sums");
        assert!(matches!(err, Error::RowSum { .. }));
        let csv = validation_csv(&validate_model(&bad, 1e-9, 64)).unwrap();
        assert!(csv.contains("row_sums,fail"));
        assert!(csv.contains("reversibility,skipped"));
    }

    #[test]
    fn rate_report_two_state() {
        let spec = validate_spec(None, &[1.0, 2.0], &[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9).unwrap();
        let eta = ProbMeasure::new(vec![0.5, 0.5]).unwrap();
        let csv = rate_csv(&spec, &eta, true).unwrap();
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
        assert!((row[0] - (1.5 - 2f64.sqrt())).abs() < 1e-15);
        assert!(row[4] <= 1e-6);
        let boundary = ProbMeasure::new(vec![1.0, 0.0]).unwrap();
        let csv = rate_csv(&spec, &boundary, true).unwrap();
        assert!(csv.lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn dirac_report_rows() {
        let csv = dirac_csv(4).unwrap();
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 3);
        let expected = [2.0, 0.0, 1.0, 0.0, 0.0];
        assert!(rows[0].iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!((rows[2][1] - 0.25).abs() < 1e-15);
        assert!((rows[2][2] - 0.75).abs() < 1e-15);
        assert!(rows.iter().all(|r| r[5].abs() <= 1e-10));
    }

    #[test]
    fn tilt_report_contains_costs() {
        let (spec, eta) = dirac_approximation(4).unwrap();
        let csv = tilt_csv(&spec, &eta).unwrap();
        assert!(csv.starts_with("quantity,state,to,value\nrate,,,2.5"));
        assert!(csv.contains("p,cell0,cell2,"));
    }
}
