mod grid;
mod problem;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use metreg::control::{calm_sweep, kalman_rank, linearize, reachable_interior, Steering, DEFAULT_QUADRATURE_NODES};
use metreg::moduli::{
    certificates_to_csv, clm_estimate, counterexample_mapping, format_real, lg_bound_check, lip_estimate, lsc_probe,
    reg_linear, verify_aubin, verify_metric_regularity, CertificateRow, ForwardOracle, LgConfig, ProbeSet,
    SampledMapping, VerificationReport,
};
use metreg::selection::{
    compute_tau, solve, solve_implicit, sweep, GeneralizedEquation, IterationCertificate, IterationConfig, SolveFailure,
};
use metreg::smooth::{split, SmoothProblem, SmoothSplit};
use metreg::spaces::{LinearOperator, Vector};
use metreg::Error;

use grid::{parse_grid, parse_vector};
use problem::{to_vector, Built, ProblemFile, SampledMapSpec};

const DEFAULT_SAMPLES: usize = 200;

#[derive(Parser)]
#[command(name = "metreg", version, about = "Metric regularity certificates, Lipschitz selections and steering")]
#[command(after_help = "Exit codes: 0 ok, 2 input, 3 numeric, 4 locality/regularity, 5 uncontrollable, \
6 verification failed. Floats are printed with 17 significant digits.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON).
    #[arg(long)]
    input: PathBuf,
    /// Sampling seed; overrides the seed in the problem file.
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate reg, lip and clm for the problem.
    #[command(after_help = "CSV columns: kind,value,radius,samples,seed,verdict,witness. \
kind is reg, lip or clm (control problems add kalman and reachable rows). \
For smooth and generalized problems lip and clm are those of the nonlinear part.")]
    Moduli {
        #[command(flatten)]
        common: Common,
        /// Sampling radius for lip and clm.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
    },
    /// Solve for one right-hand side (or one parameter value).
    #[command(after_help = "CSV columns: quantity,value. Rows x0..x{n-1} (on success), then kappa, lambda, \
alpha, tau, gamma and, once iteration started, iterations, residual, tail_bound, offset, calm_ok, contraction \
and increment1.. incrementK.")]
    Solve {
        #[command(flatten)]
        common: Common,
        /// Right-hand side y, comma separated.
        #[arg(long, conflicts_with = "param")]
        target: Option<String>,
        /// Parameter p for problems with a parameter, comma separated.
        #[arg(long)]
        param: Option<String>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Solve over a grid of right-hand sides offset from the reference value.
    #[command(after_help = "Grid specs: linspace:START:END:COUNT, circle:RADIUS:COUNT, or explicit points \
'a,b;c,d'. CSV columns: index,status,y0..,x0..,iterations,residual,message; status is ok or the error class. \
The continuity summary goes to standard error.")]
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: String,
    },
    /// Controllability tests, then steering to one endpoint or a grid of endpoints.
    #[command(after_help = "With --target: CSV columns t,x0..,u0..; one row per node, control cells empty on \
the last node. With --grid: index,status,b0..,endpoint_error,dynamics_residual,calm_ratio,iterations,message. \
Controllability verdicts and summaries go to standard error.")]
    Control {
        #[command(flatten)]
        common: Common,
        /// Endpoint b, comma separated.
        #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
        target: Option<String>,
        /// Grid of endpoints, same syntax as sweep.
        #[arg(long)]
        grid: Option<String>,
        /// Number of mesh intervals; overrides the problem file.
        #[arg(long)]
        mesh: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Brute-force checks of metric regularity, the Aubin property and the perturbation bound.
    #[command(after_help = "CSV columns: kind,value,radius,samples,seed,verdict,witness. kind is \
metric_regularity or aubin (value = worst ratio, samples = pairs checked), lg and lg_bound for generalized \
problems, lsc for the counterexample mapping (informational; samples = tail steps above the floor).")]
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kappa: Option<f64>,
        /// Lattice points per axis of U.
        #[arg(long)]
        grid: Option<usize>,
    },
}

struct Failure {
    code: u8,
    message: String,
    /// Partial output still written to --out.
    output: Option<String>,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into(), output: None }
    }

    fn with_output(mut self, output: String) -> Self {
        self.output = Some(output);
        self
    }
}

fn code_of(e: &Error) -> u8 {
    match e {
        Error::Shape(_) | Error::Contract(_) => 2,
        Error::NumericBreakdown(_) | Error::InfeasibilitySuspected { .. } | Error::Oracle(_) | Error::Invariant(_) => 3,
        Error::Regularity(_) | Error::Locality(_) | Error::ModulusMisestimate(_) => 4,
    }
}

fn class_of(e: &Error) -> &'static str {
    match e {
        Error::Shape(_) => "shape",
        Error::NumericBreakdown(_) => "numeric",
        Error::Regularity(_) => "regularity",
        Error::Locality(_) => "locality",
        Error::InfeasibilitySuspected { .. } => "infeasible",
        Error::Contract(_) => "contract",
        Error::Oracle(_) => "oracle",
        Error::ModulusMisestimate(_) => "misestimate",
        Error::Invariant(_) => "invariant",
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: code_of(&e), message: e.to_string(), output: None }
    }
}

type Outcome = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, result) = match &cli.command {
        Command::Moduli { common, radius, samples } => (common, cmd_moduli(common, *radius, *samples)),
        Command::Solve { common, target, param, max_iter } => {
            (common, cmd_solve(common, target.as_deref(), param.as_deref(), *max_iter))
        }
        Command::Sweep { common, grid } => (common, cmd_sweep(common, grid)),
        Command::Control { common, target, grid, mesh, max_iter } => {
            (common, cmd_control(common, target.as_deref(), grid.as_deref(), *mesh, *max_iter))
        }
        Command::Verify { common, kappa, grid } => (common, cmd_verify(common, *kappa, *grid)),
    };
    let (text, code) = match result {
        Ok(text) => (Some(text), 0),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (f.output, f.code)
        }
    };
    if let Some(text) = text {
        if let Err(e) = emit(common, &text) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}

fn emit(common: &Common, text: &str) -> std::io::Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, text),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}

fn load(common: &Common) -> Result<ProblemFile, Failure> {
    let text = std::fs::read_to_string(&common.input)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", common.input.display())))?;
    ProblemFile::parse(&text).map_err(Failure::input)
}

fn csv_text(rows: Vec<Vec<String>>) -> Outcome {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| Failure::from(Error::Invariant(format!("csv: {e}"))))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::from(Error::Invariant(format!("csv: {e}"))))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()).into())
}

fn flag_tol(cfg: IterationConfig, common: &Common, max_iter: Option<usize>) -> Result<IterationConfig, Failure> {
    let mut cfg = cfg;
    if let Some(t) = common.tol {
        cfg = cfg.with_tol(t)?;
    }
    if let Some(m) = max_iter {
        cfg = cfg.with_max_iter(m)?;
    }
    Ok(cfg)
}

fn dims_match(v: &Vector, expected: usize, what: &str) -> Result<(), Failure> {
    if v.len() != expected {
        return Err(Failure::input(format!("{what} has dimension {}, expected {expected}", v.len())));
    }
    Ok(())
}

fn estimate_row(kind: &str, value: f64, radius: f64, samples: usize, seed: u64, verdict: &str) -> CertificateRow {
    CertificateRow { kind: kind.into(), value, radius, samples, seed, verdict: verdict.into(), witness: Vec::new() }
}

fn cmd_moduli(common: &Common, radius: Option<f64>, samples: usize) -> Outcome {
    let file = load(common)?;
    let mut rows = Vec::new();
    let sampled = |g: &dyn Fn(&Vector) -> metreg::Result<Vector>, x: &Vector, r: f64, seed: u64| {
        let lip = lip_estimate(g, x, r, samples, seed)?;
        let clm = clm_estimate(g, x, r, samples, seed)?;
        Ok::<_, Error>([CertificateRow::from_estimate(&lip), CertificateRow::from_estimate(&clm)])
    };
    match &file {
        ProblemFile::Linear(s) => {
            let seed = common.seed.or(s.seed).unwrap_or(0);
            let op = s.operator()?;
            let x = s.base_x()?;
            let r = radius.or(s.radius).unwrap_or(1.0);
            rows.push(estimate_row("reg", reg_linear(&op)?, 0.0, 0, seed, "exact"));
            rows.extend(sampled(&|v: &Vector| op.apply(v), &x, r, seed)?);
        }
        ProblemFile::Smooth(s) => {
            let seed = common.seed.or(s.seed).unwrap_or(0);
            let f = s.map()?;
            let x = to_vector(&s.base_x);
            let j = SmoothProblem::new(f.clone(), x.clone())?.jacobian_at(&x)?;
            let r = radius.or(s.radius).unwrap_or(0.1);
            rows.push(estimate_row("reg", reg_linear(&j)?, 0.0, 0, seed, "jacobian"));
            let remainder = |v: &Vector| Ok(f(v)? - j.apply(&(v - &x))?);
            rows.extend(sampled(&remainder, &x, r, seed)?);
        }
        ProblemFile::Generalized(s) => {
            let seed = common.seed.or(s.seed).unwrap_or(0);
            let verdict = if s.constraints.is_some() { "unconstrained" } else { "exact" };
            rows.push(estimate_row("reg", reg_linear(&s.operator()?)?, 0.0, 0, seed, verdict));
            let g = s.g_at_base()?;
            rows.extend(sampled(&*g, &to_vector(&s.base_x), radius.unwrap_or(s.radii.a), seed)?);
        }
        ProblemFile::Control(s) => {
            let problem = s.problem(None)?;
            let sys = linearize(&problem)?;
            let (rank, full) = kalman_rank(&sys)?;
            let directions = s.directions.unwrap_or(64);
            let nodes = s.quadrature_nodes.unwrap_or(DEFAULT_QUADRATURE_NODES);
            let (interior, margin) = reachable_interior(&sys, problem.control_set(), directions, nodes)?;
            rows.push(estimate_row("kalman", rank as f64, 0.0, 0, 0, &full.to_string()));
            rows.push(estimate_row("reachable", margin, 0.0, directions, 0, &interior.to_string()));
            if full {
                let st = Steering::new(&problem, &sys)?;
                rows.push(estimate_row("reg", st.reg(), 0.0, 0, 0, "exact"));
                let verdict = if problem.dynamics().is_linear() { "exact" } else { "sampled" };
                rows.push(estimate_row("lip", st.lambda(), st.radius(), DEFAULT_SAMPLES, 0, verdict));
            }
        }
        ProblemFile::Sampled(_) => {
            return Err(Failure::input("moduli needs a linear, smooth, generalized or control problem"));
        }
    }
    Ok(certificates_to_csv(&rows)?)
}

enum Solvable {
    Split(Box<SmoothSplit>),
    Plain(GeneralizedEquation, IterationConfig),
    Implicit(metreg::selection::ImplicitEquation, IterationConfig),
}

impl Solvable {
    fn build(file: &ProblemFile, seed: Option<u64>) -> Result<Self, Failure> {
        match file {
            ProblemFile::Linear(s) => {
                let p = s.problem(DEFAULT_SAMPLES, seed.or(s.seed).unwrap_or(0))?;
                Ok(Solvable::Split(Box::new(split(&p)?)))
            }
            ProblemFile::Smooth(s) => {
                let p = s.problem(DEFAULT_SAMPLES, seed.or(s.seed).unwrap_or(0))?;
                Ok(Solvable::Split(Box::new(split(&p)?)))
            }
            ProblemFile::Generalized(s) => {
                let cfg = s.config(DEFAULT_SAMPLES, seed.or(s.seed).unwrap_or(0))?;
                Ok(match s.build()? {
                    Built::Plain(eq) => Solvable::Plain(eq, cfg),
                    Built::Implicit(eq) => Solvable::Implicit(eq, cfg),
                })
            }
            ProblemFile::Control(_) => Err(Failure::input("use the control subcommand for control problems")),
            ProblemFile::Sampled(_) => Err(Failure::input("sampled mappings support only verify")),
        }
    }

    fn config(&self) -> IterationConfig {
        match self {
            Solvable::Split(s) => s.config,
            Solvable::Plain(_, c) | Solvable::Implicit(_, c) => *c,
        }
    }

    fn tau(&self, cfg: &IterationConfig) -> metreg::Result<f64> {
        let r = match self {
            Solvable::Split(s) => s.equation.radii(),
            Solvable::Plain(eq, _) => eq.radii(),
            Solvable::Implicit(eq, _) => eq.radii(),
        };
        compute_tau(cfg, r.a, r.b)
    }

    fn equation(&self) -> Option<&GeneralizedEquation> {
        match self {
            Solvable::Split(s) => Some(&s.equation),
            Solvable::Plain(eq, _) => Some(eq),
            Solvable::Implicit(..) => None,
        }
    }
}

fn certificate_rows(
    cfg: &IterationConfig,
    tau: f64,
    x: Option<&Vector>,
    cert: Option<&IterationCertificate>,
) -> Outcome {
    let mut rows = vec![vec!["quantity".to_string(), "value".to_string()]];
    let mut push = |k: String, v: String| rows.push(vec![k, v]);
    if let Some(x) = x {
        for (i, v) in x.iter().enumerate() {
            push(format!("x{i}"), format_real(*v));
        }
    }
    push("kappa".into(), format_real(cfg.kappa));
    push("lambda".into(), format_real(cfg.lambda));
    push("alpha".into(), format_real(cfg.alpha));
    push("tau".into(), format_real(tau));
    push("gamma".into(), format_real(cfg.gamma()));
    if let Some(c) = cert {
        push("iterations".into(), c.iterate_count.to_string());
        push("residual".into(), format_real(c.residual));
        push("tail_bound".into(), format_real(c.tail_bound));
        push("offset".into(), format_real(c.offset));
        push("calm_ok".into(), c.calm_ok.to_string());
        push("contraction".into(), c.contraction_holds().to_string());
        for (i, d) in c.increments.iter().enumerate() {
            push(format!("increment{}", i + 1), format_real(*d));
        }
    }
    csv_text(rows)
}

fn cmd_solve(common: &Common, target: Option<&str>, param: Option<&str>, max_iter: Option<usize>) -> Outcome {
    let file = load(common)?;
    let problem = Solvable::build(&file, common.seed)?;
    let cfg = flag_tol(problem.config(), common, max_iter)?;
    let tau = problem.tau(&cfg)?;
    let outcome: Result<(Vector, IterationCertificate), SolveFailure> = match &problem {
        Solvable::Implicit(eq, _) => {
            let p = param.ok_or_else(|| Failure::input("this problem has a parameter; pass --param"))?;
            let p = parse_vector(p).map_err(Failure::input)?;
            dims_match(&p, eq.base_p().len(), "--param")?;
            solve_implicit(eq, &cfg, &p)
        }
        _ => {
            if param.is_some() {
                return Err(Failure::input("this problem has no parameter; pass --target"));
            }
            let eq = problem.equation().expect("plain equation");
            let y = match target {
                Some(t) => parse_vector(t).map_err(Failure::input)?,
                None => eq.reference_value(),
            };
            dims_match(&y, eq.base_y().len(), "--target")?;
            match &problem {
                Solvable::Split(s) => s.select_with(&cfg, &y),
                _ => solve(eq, &cfg, &y),
            }
        }
    };
    match outcome {
        Ok((x, cert)) => certificate_rows(&cfg, tau, Some(&x), Some(&cert)),
        Err(f) => {
            let partial = certificate_rows(&cfg, tau, None, f.certificate.as_ref())?;
            Err(Failure::from(f.error).with_output(partial))
        }
    }
}

fn cmd_sweep(common: &Common, spec: &str) -> Outcome {
    let file = load(common)?;
    let points = parse_grid(spec).map_err(Failure::input)?;
    if points.is_empty() {
        return Err(Failure::input("grid is empty"));
    }
    let problem = Solvable::build(&file, common.seed)?;
    let cfg = flag_tol(problem.config(), common, None)?;
    let eq = problem.equation().ok_or_else(|| Failure::input("sweep needs a problem without a parameter"))?;
    let reference = eq.reference_value();
    let (m, n) = (reference.len(), eq.base_x().len());
    let grid: Vec<Vector> = points
        .iter()
        .map(|p| {
            dims_match(p, m, "grid point")?;
            Ok(&reference + p)
        })
        .collect::<Result<_, Failure>>()?;
    let report = sweep(eq, &cfg, &grid)?;

    let mut header = vec!["index".to_string(), "status".to_string()];
    header.extend((0..m).map(|i| format!("y{i}")));
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend(["iterations", "residual", "message"].map(String::from));
    let mut rows = vec![header];
    let mut first_error = None;
    let mut solved = 0;
    for (i, row) in report.rows.iter().enumerate() {
        let mut r = vec![i.to_string()];
        let ys = row.y.iter().map(|v| format_real(*v));
        match &row.outcome {
            Ok((x, c)) => {
                solved += 1;
                r.push("ok".into());
                r.extend(ys);
                r.extend(x.iter().map(|v| format_real(*v)));
                r.extend([c.iterate_count.to_string(), format_real(c.residual), String::new()]);
            }
            Err(f) => {
                r.push(class_of(&f.error).into());
                r.extend(ys);
                r.extend(std::iter::repeat_n(String::new(), n + 2));
                r.push(f.error.to_string());
                first_error.get_or_insert_with(|| code_of(&f.error));
            }
        }
        rows.push(r);
    }
    let continuity = report.max_continuity_ratio.map_or_else(|| "none".to_string(), format_real);
    eprintln!(
        "rows={} solved={solved} max_continuity_ratio={continuity} empirical_clm={} kappa={} tau={} gamma={} jumps={}",
        report.rows.len(),
        format_real(report.empirical_clm),
        format_real(cfg.kappa),
        format_real(report.tau),
        format_real(report.gamma),
        report.jumps.len()
    );
    let text = csv_text(rows)?;
    if solved == 0 {
        let code = first_error.unwrap_or(4);
        return Err(Failure { code, message: "no grid point was solved".into(), output: Some(text) });
    }
    Ok(text)
}

fn cmd_control(
    common: &Common,
    target: Option<&str>,
    grid_spec: Option<&str>,
    mesh: Option<usize>,
    max_iter: Option<usize>,
) -> Outcome {
    let file = load(common)?;
    let ProblemFile::Control(spec) = &file else {
        return Err(Failure::input(format!("control needs a control problem, got {}", file.kind())));
    };
    let problem = spec.problem(mesh)?;
    let sys = linearize(&problem)?;
    let (rank, full) = kalman_rank(&sys)?;
    let (interior, margin) = reachable_interior(
        &sys,
        problem.control_set(),
        spec.directions.unwrap_or(64),
        spec.quadrature_nodes.unwrap_or(DEFAULT_QUADRATURE_NODES),
    )?;
    eprintln!("kalman_rank={rank} controllable={full}");
    eprintln!("reachable_interior={interior} margin={}", format_real(margin));
    if !(full && interior) {
        return Err(Failure {
            code: 5,
            message: format!("linearization is not null-controllable: kalman={full}, reachable_interior={interior}"),
            output: None,
        });
    }
    let steering = Steering::new(&problem, &sys)?;
    let cfg = flag_tol(*steering.config(), common, max_iter)?;
    let steering = steering.with_config(cfg)?;
    let n = problem.state_dim();
    eprintln!(
        "reg={} lambda={} radius={} tau={} gamma={}",
        format_real(steering.reg()),
        format_real(steering.lambda()),
        format_real(steering.radius()),
        format_real(steering.tau()?),
        format_real(cfg.gamma())
    );
    if let Some(t) = target {
        let b = parse_vector(t).map_err(Failure::input)?;
        dims_match(&b, n, "--target")?;
        return match steering.steer(&b) {
            Ok(s) => {
                eprintln!(
                    "endpoint_error={} dynamics_residual={} calm_ratio={} iterations={}",
                    format_real(s.endpoint_error),
                    format_real(s.dynamics_residual),
                    format_real(s.calm_ratio),
                    s.certificate.iterate_count
                );
                Ok(s.to_csv()?)
            }
            Err(f) => {
                let tau = steering.tau()?;
                let partial = certificate_rows(&cfg, tau, None, f.certificate.as_ref())?;
                Err(Failure::from(f.error).with_output(partial))
            }
        };
    }
    let points = parse_grid(grid_spec.unwrap_or_default()).map_err(Failure::input)?;
    if points.is_empty() {
        return Err(Failure::input("grid is empty"));
    }
    for p in &points {
        dims_match(p, n, "grid point")?;
    }
    let report = calm_sweep(&steering, &points);
    let mut header = vec!["index".to_string(), "status".to_string()];
    header.extend((0..n).map(|i| format!("b{i}")));
    header.extend(["endpoint_error", "dynamics_residual", "calm_ratio", "iterations", "message"].map(String::from));
    let mut rows = vec![header];
    let mut solved = 0;
    let mut first_error = None;
    for (i, row) in report.rows.iter().enumerate() {
        let mut r = vec![i.to_string()];
        let bs = row.target.iter().map(|v| format_real(*v));
        match &row.outcome {
            Ok(s) => {
                solved += 1;
                r.push("ok".into());
                r.extend(bs);
                r.extend([
                    format_real(s.endpoint_error),
                    format_real(s.dynamics_residual),
                    format_real(s.calm_ratio),
                    s.certificate.iterate_count.to_string(),
                    String::new(),
                ]);
            }
            Err(f) => {
                r.push(class_of(&f.error).into());
                r.extend(bs);
                r.extend(std::iter::repeat_n(String::new(), 4));
                r.push(f.error.to_string());
                first_error.get_or_insert_with(|| code_of(&f.error));
            }
        }
        rows.push(r);
    }
    let continuity = report.max_continuity_ratio.map_or_else(|| "none".to_string(), format_real);
    eprintln!(
        "rows={} solved={solved} max_calm_ratio={} max_continuity_ratio={continuity}",
        report.rows.len(),
        format_real(report.max_calm_ratio)
    );
    let text = csv_text(rows)?;
    if solved == 0 {
        let code = first_error.unwrap_or(4);
        return Err(Failure { code, message: "no endpoint was steered".into(), output: Some(text) });
    }
    Ok(text)
}

fn default_grid(dim: usize) -> usize {
    match dim {
        1 => 201,
        2 => 21,
        3 => 9,
        _ => 5,
    }
}

fn report_row(kind: &str, r: &VerificationReport, radius: f64, seed: u64) -> CertificateRow {
    CertificateRow {
        kind: kind.into(),
        value: r.worst_ratio,
        radius,
        samples: r.pairs_checked,
        seed,
        verdict: r.holds.to_string(),
        witness: r.witness.iter().flat_map(|v| v.iter().copied()).collect(),
    }
}

fn cmd_verify(common: &Common, kappa: Option<f64>, grid: Option<usize>) -> Outcome {
    let file = load(common)?;
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let check = |map: &SampledMapping, kappa: f64, grid: usize, seed: u64| {
        let (a, _) = map.radii();
        let mr = verify_metric_regularity(map, kappa, grid)?;
        let au = verify_aubin(map, kappa, grid)?;
        Ok::<_, Error>([report_row("metric_regularity", &mr, a, seed), report_row("aubin", &au, a, seed)])
    };
    match &file {
        ProblemFile::Linear(s) => {
            let op = s.operator()?;
            let kappa = kappa.unwrap_or(1.1 * reg_linear(&op)?);
            let r = s.radius.unwrap_or(1.0);
            let x = s.base_x()?;
            let matrix = op.matrix().clone();
            let map = SampledMapping::from_function(move |v: &Vector| &matrix * v, x.clone(), r, r)?;
            rows.extend(check(&map, kappa, grid.unwrap_or(default_grid(x.len())), 0)?);
        }
        ProblemFile::Smooth(s) => {
            s.map()?;
            let x = to_vector(&s.base_x);
            let kappa = match kappa {
                Some(k) => k,
                None => {
                    let f = s.map()?;
                    1.1 * reg_linear(&SmoothProblem::new(f, x.clone())?.jacobian_at(&x)?)?
                }
            };
            let r = s.radius.unwrap_or(0.1);
            let poly = s.map.clone();
            let map = SampledMapping::from_function(move |v: &Vector| poly.eval(v.as_slice()), x.clone(), r, r)?;
            rows.extend(check(&map, kappa, grid.unwrap_or(default_grid(x.len())), 0)?);
        }
        ProblemFile::Generalized(s) => {
            let seed = common.seed.or(s.seed).unwrap_or(0);
            let op = s.operator()?;
            let reg = reg_linear(&op)?;
            let kappa = kappa.or(s.kappa).unwrap_or(1.1 * reg);
            let x = to_vector(&s.base_x);
            let g = s.g_at_base()?;
            let constraints = s.constraints()?;
            let forward: ForwardOracle = {
                let (g, op) = (g.clone(), op.clone());
                Arc::new(move |v: &Vector| {
                    if let Some(c) = &constraints {
                        if !c.contains(v, 1e-12).unwrap_or(false) {
                            return Vec::new();
                        }
                    }
                    match (op.apply(v), g(v)) {
                        (Ok(bv), Ok(gv)) => vec![bv + gv],
                        _ => Vec::new(),
                    }
                })
            };
            let y = forward(&x).pop().ok_or_else(|| Failure::input("base_x violates the constraints"))?;
            let map = SampledMapping::new(forward, x.clone(), y, s.radii.a, s.radii.b)?;
            rows.extend(check(&map, kappa, grid.unwrap_or(default_grid(x.len())), seed)?);
            rows.extend(lg_rows(s, &op, &*g, &x, kappa, seed, &mut failed)?);
        }
        ProblemFile::Sampled(s) => {
            let kappa = kappa.ok_or_else(|| Failure::input("sampled mappings need --kappa"))?;
            let map = s.mapping()?;
            rows.extend(check(&map, kappa, grid.unwrap_or(default_grid(s.base_x.len())), 0)?);
            if let SampledMapSpec::Counterexample { k_max } = s.mapping {
                rows.push(lsc_row(s.base_x[0], s.lsc_radius.unwrap_or(s.a), k_max)?);
            }
        }
        ProblemFile::Control(_) => return Err(Failure::input("verify does not apply to control problems")),
    }
    for r in &rows {
        if r.verdict == "false" {
            failed.push(format!(
                "{} fails (worst {}; witness {})",
                r.kind,
                format_real(r.value),
                r.witness.iter().map(|v| format_real(*v)).collect::<Vec<_>>().join(";")
            ));
        }
    }
    failed.dedup();
    let text = certificates_to_csv(&rows)?;
    if failed.is_empty() {
        Ok(text)
    } else {
        Err(Failure { code: 6, message: failed.join("; "), output: Some(text) })
    }
}

fn lg_rows(
    s: &problem::GeneralizedSpec,
    op: &LinearOperator,
    g: &dyn Fn(&Vector) -> metreg::Result<Vector>,
    x: &Vector,
    kappa: f64,
    seed: u64,
    failed: &mut Vec<String>,
) -> Result<Vec<CertificateRow>, Failure> {
    let mut cfg = LgConfig::new(kappa, 0.0);
    cfg.seed = seed;
    cfg.lambda = match s.lambda {
        Some(l) => l,
        None => 1.2 * lip_estimate(g, x, cfg.radius, cfg.samples, seed)?.value,
    };
    match lg_bound_check(op, g, x, &cfg) {
        Ok(r) => Ok(vec![
            estimate_row("lg", r.measured_reg, cfg.radius, cfg.jacobian_points + 1, seed, &r.holds.to_string()),
            estimate_row("lg_bound", r.bound, cfg.radius, cfg.samples, seed, "bound"),
        ]),
        Err(e @ Error::Contract(_)) => {
            failed.push(format!("lg not applicable: {e}"));
            Ok(vec![estimate_row("lg", f64::NAN, cfg.radius, 0, seed, "false")])
        }
        Err(e) => Err(e.into()),
    }
}

/// Probes lower semicontinuity of `M = F^{-1}` truncated to `B_a(x̄)` at the
/// farthest point of `M(ȳ)` in that ball, along `y_k = ȳ + 2^{-k}`.
fn lsc_row(x_bar: f64, a: f64, k_max: usize) -> Result<CertificateRow, Failure> {
    let y_bar = x_bar;
    let near = move |v: f64| (v - x_bar).abs() <= a * (1.0 + 1e-12);
    let truncated = move |y: &Vector| -> metreg::Result<ProbeSet> {
        let pts = counterexample_mapping(y[0], k_max)?;
        Ok(ProbeSet::Finite(pts.into_iter().filter(|&v| near(v)).map(|v| Vector::from_element(1, v)).collect()))
    };
    let probe = counterexample_mapping(y_bar, k_max)?
        .into_iter()
        .filter(|&v| near(v))
        .max_by(|p, q| (p - x_bar).abs().total_cmp(&(q - x_bar).abs()))
        .ok_or_else(|| Failure::input("no probe point in the truncation"))?;
    let approach: Vec<Vector> = (1..=20).map(|k| Vector::from_element(1, y_bar + 0.5f64.powi(k))).collect();
    let r = lsc_probe(&truncated, &Vector::from_element(1, y_bar), &Vector::from_element(1, probe), &approach)?;
    let tail_min = r.distances.iter().skip(r.skipped).copied().fold(f64::INFINITY, f64::min);
    Ok(CertificateRow {
        kind: "lsc".into(),
        value: tail_min,
        radius: a,
        samples: r.steps_above_floor(),
        seed: 0,
        verdict: r.verdict.as_str().into(),
        witness: vec![y_bar, probe],
    })
}
