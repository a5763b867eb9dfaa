//! Batch front end: parse JSON inputs, run one pipeline, emit a JSON report
//! and a short human-readable summary.
//!
//! Reports contain no timing data so that identical jobs give bit-identical
//! reports; per-stage timings go to the summary only.

use crate::algebra::{AlgMat, GradedAlgebra};
use crate::connection::{flatness_defect, is_flat, Connection, ConnectionJson};
use crate::decompose::{spectral_decompose, BlockSplitting};
use crate::framing::{check_nilpotency, extend_framing, FramingError};
use crate::linalg::Mat;
use crate::nacert::{
    certify_framing, certify_generalized_flat, certify_split_u, FlatSystemJson, PolynomialFlatSystem,
};
use crate::pde::frobenius_normalize;
use crate::pointgauge::{check_equivalence_conditions, solve_point_gauge, PointFamilyConnection, PointFamilyJson};
use crate::quantum::{
    below_degree, build_blowup_data, build_point_isomorphism, BlowupInput, BlowupJson, ProjBundleInput,
    ProjBundleJson,
};
use crate::series::{MatSeries, Ring, Series, Var};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Schema tag carried by every report.
pub const REPORT_SCHEMA: &str = "fbundle-report/1";

/// Default `u` cap for point-level computations when none is given.
pub const DEFAULT_POINT_U_CAP: u32 = 6;

#[derive(Parser, Debug, Clone)]
#[command(name = "fbundle", version, about = "Exact computations with logarithmic F-bundles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Base truncation order (highest kept total degree).
    #[arg(long, global = true, env = "FBUNDLE_ORDER_T")]
    pub order_t: Option<u32>,
    /// Highest kept power of u.
    #[arg(long, global = true, env = "FBUNDLE_ORDER_U")]
    pub order_u: Option<u32>,
    /// Highest kept weight in parameter algebras.
    #[arg(long, global = true, env = "FBUNDLE_ORDER_C")]
    pub order_c: Option<u32>,
    /// Seed recorded in the report.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// Check flatness of a connection.
    CheckFlat { input: PathBuf },
    /// Decompose a maximal connection along a fiber splitting.
    Decompose { input: PathBuf },
    /// Extend the framing at the center over the base.
    Frame { input: PathBuf },
    /// Gauge equivalence of two point family connections.
    PointGauge { source: PathBuf, target: PathBuf, q: Option<PathBuf> },
    /// Limiting-point data and point isomorphism of a projective bundle.
    Projbundle { input: PathBuf },
    /// Split fiber and eigenvalues of a blowup.
    Blowup { input: PathBuf },
    /// Valuation certificate for a solver transcript.
    NaCertify { input: PathBuf },
    /// Straighten commuting vector fields.
    Frobenius { input: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckFlat { .. } => "check-flat",
            Command::Decompose { .. } => "decompose",
            Command::Frame { .. } => "frame",
            Command::PointGauge { .. } => "point-gauge",
            Command::Projbundle { .. } => "projbundle",
            Command::Blowup { .. } => "blowup",
            Command::NaCertify { .. } => "na-certify",
            Command::Frobenius { .. } => "frobenius",
        }
    }
}

/// Caps requested for a job; `None` keeps the input's own caps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct JobCaps {
    pub t: Option<u32>,
    pub u: Option<u32>,
    pub c: Option<u32>,
}

/// One batch job.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JobSpec {
    pub command: Command,
    pub caps: JobCaps,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl JobSpec {
    pub fn from_cli(cli: &Cli) -> JobSpec {
        JobSpec {
            command: cli.command.clone(),
            caps: JobCaps { t: cli.order_t, u: cli.order_u, c: cli.order_c },
            seed: cli.seed,
            out: cli.out.clone(),
        }
    }
}

/// A failed stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageError {
    pub stage: String,
    /// Error variant name.
    pub kind: String,
    /// Violated precondition, `Owner/condition`.
    pub tag: String,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed [{}]: {}", self.stage, self.tag, self.message)
    }
}

/// One completed stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub name: String,
    pub passed: bool,
}

/// The JSON report of a job.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema: String,
    pub command: String,
    pub seed: u64,
    pub caps: JobCaps,
    pub stages: Vec<StageReport>,
    pub passed: bool,
    pub result: Value,
    pub error: Option<StageError>,
}

/// Report plus the human-readable summary and exit status.
#[derive(Clone, Debug)]
pub struct JobOutcome {
    pub report: Report,
    pub summary: Vec<String>,
    pub exit_code: i32,
}

fn variant_name<E: fmt::Debug>(e: &E) -> String {
    let d = format!("{e:?}");
    let end = d.find(['(', ' ', '{']).unwrap_or(d.len());
    d[..end].to_string()
}

/// Innermost variant name, looking through transparent wrappers.
fn inner_kind(debug: &str) -> String {
    let mut rest = debug;
    loop {
        let end = rest.find(['(', ' ', '{']).unwrap_or(rest.len());
        let name = &rest[..end];
        let wrapper = matches!(name, "Connection" | "Series" | "Pde" | "Algebra" | "PointGauge" | "Decompose" | "Stage");
        if wrapper && rest[end..].starts_with('(') {
            rest = &rest[end + 1..];
            continue;
        }
        return name.to_string();
    }
}

fn framing_tag(e: &FramingError) -> String {
    match e {
        FramingError::NotFramedAtPoint(_) => "FramingAtPoint/residue-only at the center".into(),
        FramingError::PreconditionNotFramedAtSlice(_) => "FramingAtPoint/residue-only on the slice".into(),
        FramingError::AdNotNilpotent(_) => "Nilpotency/ad of residue".into(),
        other => format!("Framing/{}", variant_name(other)),
    }
}

struct Runner {
    stages: Vec<StageReport>,
    summary: Vec<String>,
    clock: Instant,
}

impl Runner {
    fn new() -> Runner {
        Runner { stages: Vec::new(), summary: Vec::new(), clock: Instant::now() }
    }

    fn stage<T, E: fmt::Debug + fmt::Display>(
        &mut self,
        name: &str,
        tag: impl FnOnce(&E) -> String,
        f: impl FnOnce() -> Result<T, E>,
    ) -> Result<T, StageError> {
        let start = Instant::now();
        let r = f();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match r {
            Ok(v) => {
                self.stages.push(StageReport { name: name.into(), passed: true });
                self.summary.push(format!("{name}: ok ({ms:.1} ms)"));
                Ok(v)
            }
            Err(e) => {
                self.stages.push(StageReport { name: name.into(), passed: false });
                self.summary.push(format!("{name}: failed ({ms:.1} ms)"));
                let debug = format!("{e:?}");
                // plain-message errors carry no variant name
                let kind = if debug.starts_with('"') {
                    match name {
                        "parse" => "Parse".into(),
                        "caps" => "InvalidCaps".into(),
                        _ => "Rejected".into(),
                    }
                } else {
                    inner_kind(&debug)
                };
                let tag = tag(&e);
                Err(StageError { stage: name.into(), kind, tag, message: e.to_string() })
            }
        }
    }

    fn verdict(&mut self, name: &str, passed: bool) {
        self.stages.push(StageReport { name: name.into(), passed });
        self.summary.push(format!("{name}: {}", if passed { "pass" } else { "FAIL" }));
    }
}

fn generic_tag<E: fmt::Debug>(owner: &str) -> impl FnOnce(&E) -> String + '_ {
    move |e: &E| format!("{owner}/{}", inner_kind(&format!("{e:?}")))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
}

fn parse_stage<T: for<'de> Deserialize<'de>>(r: &mut Runner, path: &Path) -> Result<T, StageError> {
    r.stage("parse", |_: &String| "Input/schema".into(), || read_json(path))
}

fn with_caps(c: &Connection, caps: &JobCaps) -> Result<Connection, String> {
    if caps.t == Some(0) && caps.u == Some(0) {
        return Err("caps must be at least 1".into());
    }
    let ring = c.ring();
    let target = ring.with_caps(caps.t.unwrap_or(ring.t_cap()), caps.u.unwrap_or(ring.u_cap()));
    c.recast(&target).map_err(|e| e.to_string())
}

fn load_connection(r: &mut Runner, j: &ConnectionJson, caps: &JobCaps) -> Result<Connection, StageError> {
    let c = r.stage("build", generic_tag("Connection"), || Connection::from_json(j))?;
    r.stage("caps", |_: &String| "Input/caps".into(), || with_caps(&c, caps))
}

fn validate_caps(caps: &JobCaps) -> Result<(), StageError> {
    for (name, v) in [("order-t", caps.t), ("order-u", caps.u), ("order-c", caps.c)] {
        if v == Some(0) {
            return Err(StageError {
                stage: "caps".into(),
                kind: "InvalidCaps".into(),
                tag: "JobSpec/caps at least 1".into(),
                message: format!("--{name} must be at least 1"),
            });
        }
    }
    Ok(())
}

/// Run one job to completion.
pub fn run_job(spec: &JobSpec) -> JobOutcome {
    let mut r = Runner::new();
    let outcome = validate_caps(&spec.caps).and_then(|_| dispatch(&mut r, spec));
    let (passed, result, error) = match outcome {
        Ok((ok, v)) => (ok && r.stages.iter().all(|s| s.passed), v, None),
        Err(e) => {
            r.summary.push(e.to_string());
            (false, Value::Null, Some(e))
        }
    };
    let exit_code = match &error {
        Some(e) if e.stage == "parse" => 2,
        _ if passed => 0,
        _ => 1,
    };
    r.summary.push(format!(
        "{}: {} in {:.1} ms",
        spec.command.name(),
        if passed { "PASS" } else { "FAIL" },
        r.clock.elapsed().as_secs_f64() * 1e3
    ));
    let report = Report {
        schema: REPORT_SCHEMA.into(),
        command: spec.command.name().into(),
        seed: spec.seed,
        caps: spec.caps,
        stages: r.stages,
        passed,
        result,
        error,
    };
    JobOutcome { report, summary: r.summary, exit_code }
}

type Dispatch = Result<(bool, Value), StageError>;

fn dispatch(r: &mut Runner, spec: &JobSpec) -> Dispatch {
    let caps = &spec.caps;
    match &spec.command {
        Command::CheckFlat { input } => check_flat(r, input, caps),
        Command::Decompose { input } => decompose(r, input, caps),
        Command::Frame { input } => frame(r, input, caps),
        Command::PointGauge { source, target, q } => point_gauge(r, source, target, q.as_deref(), caps),
        Command::Projbundle { input } => projbundle(r, input, caps),
        Command::Blowup { input } => blowup(r, input, caps),
        Command::NaCertify { input } => na_certify(r, input, caps),
        Command::Frobenius { input } => frobenius(r, input, caps),
    }
}

fn check_flat(r: &mut Runner, input: &Path, caps: &JobCaps) -> Dispatch {
    let j: ConnectionJson = parse_stage(r, input)?;
    let c = load_connection(r, &j, caps)?;
    let defects = flatness_defect(&c);
    let flat = is_flat(&c);
    r.verdict("flatness", flat);
    let pairs: Vec<Value> = defects
        .iter()
        .filter(|d| !d.matrix.is_zero())
        .map(|d| json!({ "pair": d.pair, "terms": d.matrix.support().len() }))
        .collect();
    Ok((flat, json!({ "flat": flat, "defects": pairs })))
}

/// Input of the `decompose` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeJob {
    pub connection: ConnectionJson,
    /// Cyclic vector, one series per fiber coordinate.
    pub cyclic: Vec<String>,
    /// Fiber indices of each block.
    pub blocks: Vec<Vec<usize>>,
    /// Optional basis whose columns are adapted to the blocks.
    #[serde(default)]
    pub basis: Option<Vec<Vec<String>>>,
}

fn decompose(r: &mut Runner, input: &Path, caps: &JobCaps) -> Dispatch {
    let j: DecomposeJob = parse_stage(r, input)?;
    let c = load_connection(r, &j.connection, caps)?;
    let ring = c.ring().clone();
    let h = r.stage("cyclic", generic_tag("Series"), || {
        j.cyclic.iter().map(|t| Series::parse(&ring, t)).collect::<Result<Vec<_>, _>>()
    })?;
    let s = r.stage("splitting", generic_tag("BlockSplitting"), || {
        let basis = match &j.basis {
            Some(rows) => Some(Mat::from_text(rows).map_err(|e| crate::decompose::DecomposeError::InvalidSplitting(e.to_string()))?),
            None => None,
        };
        BlockSplitting::new(j.blocks.clone(), basis)
    })?;
    let d = r.stage("decompose", generic_tag("SpectralDecomposition"), || spectral_decompose(&c, &h, &s))?;
    let passed = d.report.passed();
    r.verdict("verification", passed);
    let factors: Vec<Value> = d
        .factors
        .iter()
        .zip(&d.groups)
        .map(|(f, g)| {
            json!({
                "variables": g,
                "k_at_center": f.k_at_center().to_text(),
                "connection": f.to_json(),
            })
        })
        .collect();
    let identity_gauge = d.gauge == MatSeries::identity(d.gauge.ring(), c.rank());
    let identity_map = d.phi.iter().enumerate().all(|(v, f)| Series::var(&ring, &ring.vars()[v].name).ok().as_ref() == Some(f));
    Ok((
        passed,
        json!({
            "groups": d.groups,
            "coordinates": d.phi.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
            "identity_coordinates": identity_map,
            "identity_gauge": identity_gauge,
            "factors": factors,
            "report": d.report,
        }),
    ))
}

fn frame(r: &mut Runner, input: &Path, caps: &JobCaps) -> Dispatch {
    let j: ConnectionJson = parse_stage(r, input)?;
    let c = load_connection(r, &j, caps)?;
    let nil = check_nilpotency(&c);
    let f = r.stage("frame", framing_tag, || extend_framing(&c))?;
    Ok((
        true,
        json!({
            "nilpotency": nil,
            "gauge": f.gauge.to_json(),
            "connection": f.connection.to_json(),
            "verified_t_cap": f.verified_t_cap,
        }),
    ))
}

fn truncate_point(p: &PointFamilyConnection, keep_deg: Option<u32>) -> PointFamilyConnection {
    let Some(w) = keep_deg else { return p.clone() };
    let (q, keep) = p.algebra.truncate_degree(2 * w);
    let proj = |m: &AlgMat| AlgMat { rows: m.rows, cols: m.cols, e: m.e.iter().map(|x| GradedAlgebra::project(x, &keep)).collect() };
    PointFamilyConnection { algebra: q, k: proj(&p.k), h: proj(&p.h), mu: p.mu.clone() }
}

fn point_gauge(r: &mut Runner, source: &Path, target: &Path, q: Option<&Path>, caps: &JobCaps) -> Dispatch {
    let a: PointFamilyJson = parse_stage(r, source)?;
    let b: PointFamilyJson = parse_stage(r, target)?;
    let qtext: Option<Vec<Vec<String>>> = match q {
        Some(p) => Some(parse_stage(r, p)?),
        None => None,
    };
    let (a, b) = r.stage("build", generic_tag("PointFamilyConnection"), || {
        Ok::<_, crate::pointgauge::PointGaugeError>((PointFamilyConnection::from_json(&a)?, PointFamilyConnection::from_json(&b)?))
    })?;
    let (a, b) = (truncate_point(&a, caps.c), truncate_point(&b, caps.c));
    let alg = a.algebra.clone();
    let q = r.stage("q", generic_tag("PointGauge"), || match &qtext {
        Some(t) => AlgMat::from_text(&alg, t),
        None => Ok(AlgMat::identity(&alg, a.size())),
    })?;
    let verdict = r.stage("conditions", generic_tag("PointGauge"), || check_equivalence_conditions(&a, &b, &q))?;
    r.verdict("condition residues", verdict.conjugate_residues);
    r.verdict("condition mu", verdict.same_mu);
    r.verdict("condition diagonals", verdict.diagonals_agree);
    if !verdict.passed() {
        return Ok((false, json!({ "verdict": verdict })));
    }
    let u_cap = caps.u.unwrap_or(DEFAULT_POINT_U_CAP);
    let g = r.stage("solve", generic_tag("PointGauge"), || solve_point_gauge(&a, &b, &q, u_cap))?;
    r.verdict("conjugation", g.verified);
    let phi: Vec<Value> = g.phi.iter().map(|p| json!(p.to_text(&alg))).collect();
    Ok((g.verified, json!({ "verdict": verdict, "u_cap": u_cap, "phi": phi, "verified": g.verified })))
}

fn elem_texts(alg: &GradedAlgebra, xs: &[Vec<crate::coeff::Scalar>]) -> Vec<String> {
    xs.iter().map(|x| alg.elem_to_text(x)).collect()
}

fn projbundle(r: &mut Runner, input: &Path, caps: &JobCaps) -> Dispatch {
    let j: ProjBundleJson = parse_stage(r, input)?;
    let inp = r.stage("build", generic_tag("ProjBundle"), || ProjBundleInput::from_json(&j))?;
    let inp = match caps.c {
        Some(w) => {
            let (q, keep) = inp.algebra.truncate_degree(2 * w);
            let proj = |x: &Vec<crate::coeff::Scalar>| GradedAlgebra::project(x, &keep);
            r.stage("truncate", generic_tag("ProjBundle"), || {
                ProjBundleInput::new(&q, inp.rank, inp.chern.iter().map(proj).collect(), proj(&inp.c1_tangent))
            })?
        }
        None => inp,
    };
    let alg = inp.algebra.clone();
    let u_cap = caps.u.unwrap_or(DEFAULT_POINT_U_CAP);
    let iso = r.stage("point isomorphism", generic_tag("ProjBundle"), || build_point_isomorphism(&inp, u_cap))?;
    r.verdict("conditions", iso.verdict.passed());
    r.verdict("conjugation", iso.verified);
    let passed = iso.verdict.passed() && iso.verified;
    Ok((
        passed,
        json!({
            "k_lim": iso.limit.k_lim.to_text(&alg),
            "k_lim_operator": iso.limit.k_operator.to_text(),
            "g_lim_operator": iso.limit.g_operator.to_text(),
            "field_order": iso.roots.field_order,
            "roots": elem_texts(&alg, &iso.roots.roots),
            "phi_diagonalizer": iso.diagonalizer.phi.to_text(&alg),
            "base_point": iso.base_point.coords.iter().map(|row| row.iter().map(|x| x.to_text()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "h2_shift_dimension": iso.base_point.shift_dimension,
            "u_cap": u_cap,
            "phi": iso.phi.iter().map(|p| p.to_text(&alg)).collect::<Vec<_>>(),
            "verdict": iso.verdict,
            "verified": iso.verified,
        }),
    ))
}

fn blowup(r: &mut Runner, input: &Path, _caps: &JobCaps) -> Dispatch {
    let j: BlowupJson = parse_stage(r, input)?;
    let inp = r.stage("build", generic_tag("Blowup"), || BlowupInput::from_json(&j))?;
    let data = r.stage("roots", generic_tag("Blowup"), || build_blowup_data(&inp))?;
    let z = &inp.z;
    let m = inp.codim;
    let zero_root = z.is_zero(&data.roots.roots[0]);
    let shift = crate::coeff::Scalar::ratio(1, m as i64 - 1);
    let first_order = (2..=m).all(|i| {
        let expect = z.sub(
            &z.scalar(crate::coeff::Scalar::zeta(data.roots.field_order, 2 * (i as i64 - 1) - 1)),
            &z.scale(&inp.normal_chern[0], &shift),
        );
        below_degree(z, &data.roots.roots[i - 1], 3) == expect
    });
    r.verdict("zero root", zero_root);
    r.verdict("first-order expansion", first_order);
    Ok((
        zero_root && first_order,
        json!({
            "fiber": data.fiber,
            "field_order": data.roots.field_order,
            "roots": elem_texts(z, &data.roots.roots),
        }),
    ))
}

/// Input of the `na-certify` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NaJob {
    GeneralizedFlat { system: FlatSystemJson },
    SplitU {
        connection: ConnectionJson,
        blocks: Vec<Vec<usize>>,
        #[serde(default = "default_grid")]
        grid: i64,
        #[serde(default)]
        phi_valuation: Option<i64>,
    },
    Framing { connection: ConnectionJson },
}

fn default_grid() -> i64 {
    8
}

fn na_certify(r: &mut Runner, input: &Path, caps: &JobCaps) -> Dispatch {
    let j: NaJob = parse_stage(r, input)?;
    match j {
        NaJob::GeneralizedFlat { mut system } => {
            if let Some(t) = caps.t {
                system.order = t;
            }
            let sys = r.stage("build", generic_tag("NaCert"), || PolynomialFlatSystem::from_json(&system))?;
            let f = r.stage("solve", generic_tag("GeneralizedFlat"), || sys.solve(system.order))?;
            let cert = certify_generalized_flat(&sys, &f);
            r.verdict("certificate", cert.passed);
            let sol: Vec<String> = f.iter().map(|s| s.to_string()).collect();
            Ok((cert.passed, json!({ "solution": sol, "certificate": cert })))
        }
        NaJob::SplitU { connection, blocks, grid, phi_valuation } => {
            let c = load_connection(r, &connection, caps)?;
            let s = r.stage("splitting", generic_tag("BlockSplitting"), || BlockSplitting::new(blocks.clone(), None))?;
            let caps2 = (c.ring().t_cap(), c.ring().u_cap());
            let cert = r.stage("certify", generic_tag("NaCert"), || certify_split_u(&c, &s, caps2, grid, phi_valuation))?;
            r.verdict("certificate", cert.certificate.passed);
            Ok((cert.certificate.passed, json!(cert)))
        }
        NaJob::Framing { connection } => {
            let c = load_connection(r, &connection, caps)?;
            let f = r.stage("frame", framing_tag, || extend_framing(&c))?;
            let cert = certify_framing(&c, &f.gauge);
            r.verdict("certificate", cert.passed);
            Ok((cert.passed, json!({ "certificate": cert })))
        }
    }
}

/// Input of the `frobenius` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusJob {
    pub vars: Vec<String>,
    pub order: u32,
    /// `fields[i][j]`: component `j` of field `i`.
    pub fields: Vec<Vec<String>>,
}

fn frobenius(r: &mut Runner, input: &Path, caps: &JobCaps) -> Dispatch {
    let j: FrobeniusJob = parse_stage(r, input)?;
    let order = caps.t.unwrap_or(j.order);
    let ring = Ring::new(j.vars.iter().map(|n| Var::plain(n)).collect(), "u", order, 0);
    let fields = r.stage("build", generic_tag("Series"), || {
        j.fields
            .iter()
            .map(|f| f.iter().map(|t| Series::parse(&ring, t)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()
    })?;
    let phi = r.stage("normalize", generic_tag("Frobenius"), || frobenius_normalize(&fields, order))?;
    Ok((true, json!({ "phi": phi.iter().map(|s| s.to_string()).collect::<Vec<_>>() })))
}

/// Render the report as pretty JSON.
pub fn report_json(report: &Report) -> String {
    serde_json::to_string_pretty(report).expect("reports serialize")
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let spec = JobSpec::from_cli(&cli);
    let outcome = run_job(&spec);
    let text = report_json(&outcome.report);
    match &spec.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text + "\n") {
                eprintln!("cannot write {}: {e}", path.display());
                return 2;
            }
            for line in &outcome.summary {
                println!("{line}");
            }
        }
        None => {
            println!("{text}");
            for line in &outcome.summary {
                eprintln!("{line}");
            }
        }
    }
    outcome.exit_code
}
