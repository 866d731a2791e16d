//! Calm local selections of `(G + F)^{-1}` for a metrically regular `F`
//! with closed convex inverse values and a Lipschitz perturbation `G`.
//!
//! Each step picks the point of `F^{-1}(y - G(z_n)) ∩ B(z_n, r_n)` nearest
//! to `z_n`. The ball radii follow the contraction schedule
//!
//! ```text
//! r_0     = kappa |y - ȳ|                  around x̄
//! r_1     = kappa (1 + kappa lambda) |y - ȳ|  around z_0
//! r_{n+1} = alpha lambda |z_n - z_{n-1}|     around z_n
//! ```
//!
//! so successive increments shrink at least geometrically with ratio
//! `alpha lambda`. The nearest point of `C ∩ B(c, r)` to `c` is the
//! projection of `c` onto `C` whenever that lies within `r`, and otherwise
//! the intersection is empty, so every step costs one projection.

use std::sync::Arc;

use rayon::prelude::*;

use crate::convexsets::{truncate, ConvexSet};
use crate::error::{Error, Result};
use crate::moduli::lip_estimate;
use crate::spaces::Vector;

/// `y -> F^{-1}(y) ∩ B_c(x̄)` as a closed convex set.
pub type SetMap = Arc<dyn Fn(&Vector) -> Result<ConvexSet> + Send + Sync>;
/// Single-valued perturbation `G`.
pub type Perturbation = Arc<dyn Fn(&Vector) -> Result<Vector> + Send + Sync>;
/// Parametric perturbation `(x, p) -> G(x, p)`.
pub type ParametricPerturbation = Arc<dyn Fn(&Vector, &Vector) -> Result<Vector> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radii {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Radii {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::Contract(format!("radii must be positive, got a={a}, b={b}, c={c}")));
        }
        if a.max(b) > c {
            return Err(Error::Contract(format!("max(a, b) = {} exceeds c = {c}", a.max(b))));
        }
        Ok(Self { a, b, c })
    }

    pub fn uniform(r: f64) -> Result<Self> {
        Self::new(r, r, r)
    }
}

/// The inclusion `y ∈ G(x) + F(x)` near `(x̄, ȳ + G(x̄))`, where
/// `x̄ ∈ F^{-1}(ȳ)`.
#[derive(Clone)]
pub struct GeneralizedEquation {
    finv: SetMap,
    g: Perturbation,
    base_x: Vector,
    base_y: Vector,
    radii: Radii,
    g_base: Vector,
}

impl std::fmt::Debug for GeneralizedEquation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralizedEquation")
            .field("base_x", &self.base_x.as_slice())
            .field("base_y", &self.base_y.as_slice())
            .field("radii", &self.radii)
            .finish()
    }
}

fn check_base(finv: &SetMap, x: &Vector, y: &Vector) -> Result<()> {
    let set = finv(y)?;
    if set.dim() != x.len() {
        return Err(Error::Shape(format!("F^-1 values live in dimension {}, base point has {}", set.dim(), x.len())));
    }
    if !set.contains(x, 1e-9)? {
        return Err(Error::Contract("base point x̄ is not in F^-1(ȳ)".into()));
    }
    Ok(())
}

impl GeneralizedEquation {
    pub fn new(finv: SetMap, g: Perturbation, base_x: Vector, base_y: Vector, radii: Radii) -> Result<Self> {
        check_base(&finv, &base_x, &base_y)?;
        let g_base = g(&base_x)?;
        if g_base.len() != base_y.len() {
            return Err(Error::Shape(format!("G maps into dimension {}, F into {}", g_base.len(), base_y.len())));
        }
        Ok(Self { finv, g, base_x, base_y, radii, g_base })
    }

    /// `G ≡ 0`.
    pub fn unperturbed(finv: SetMap, base_x: Vector, base_y: Vector, radii: Radii) -> Result<Self> {
        let m = base_y.len();
        Self::new(finv, Arc::new(move |_: &Vector| Ok(Vector::zeros(m))), base_x, base_y, radii)
    }

    pub fn base_x(&self) -> &Vector {
        &self.base_x
    }

    pub fn base_y(&self) -> &Vector {
        &self.base_y
    }

    /// `ȳ + G(x̄)`, the reference value of `G + F`.
    pub fn reference_value(&self) -> Vector {
        &self.base_y + &self.g_base
    }

    pub fn radii(&self) -> Radii {
        self.radii
    }

    pub fn finv(&self) -> &SetMap {
        &self.finv
    }

    pub fn g(&self) -> &Perturbation {
        &self.g
    }

    /// Sampled Lipschitz modulus of `G` on `B_a(x̄)`.
    pub fn sampled_lip(&self, samples: usize, seed: u64) -> Result<f64> {
        Ok(lip_estimate(&*self.g, &self.base_x, self.radii.a, samples, seed)?.value)
    }

    fn engine(&self) -> Engine<'_> {
        Engine { finv: &self.finv, base_x: &self.base_x, base_f: &self.base_y, radii: self.radii }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationConfig {
    pub kappa: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Largest `kappa * lambda` the default schedule accepts.
pub const SCHEDULE_PRODUCT_CAP: f64 = 0.9;

impl IterationConfig {
    pub fn new(kappa: f64, lambda: f64, alpha: f64) -> Result<Self> {
        let cfg = Self { kappa, lambda, alpha, tol: 1e-10, max_iter: 200 };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `kappa = 1.1 reg`, `lambda = 1.2 lip`, `alpha` halfway between
    /// `kappa` and `1/lambda` (or `2 kappa` when `lambda = 0`). Rejects
    /// `kappa lambda >= 0.9`.
    pub fn schedule(reg: f64, lip: f64) -> Result<Self> {
        if !reg.is_finite() || reg <= 0.0 {
            return Err(Error::Regularity(format!("regularity modulus {reg} is not usable")));
        }
        let kappa = 1.1 * reg;
        let lambda = 1.2 * lip;
        if kappa * lambda >= SCHEDULE_PRODUCT_CAP {
            return Err(Error::Contract(format!(
                "kappa * lambda = {} is not below {SCHEDULE_PRODUCT_CAP}",
                kappa * lambda
            )));
        }
        let alpha = if lambda > 0.0 { (kappa + 1.0 / lambda) / 2.0 } else { 2.0 * kappa };
        Self::new(kappa, lambda, alpha)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        self.tol = tol;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Result<Self> {
        self.max_iter = max_iter;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { kappa, lambda, alpha, tol, max_iter } = *self;
        if !(kappa > 0.0 && kappa.is_finite()) || !(lambda >= 0.0) {
            return Err(Error::Contract(format!("need kappa > 0 and lambda >= 0, got {kappa}, {lambda}")));
        }
        if !(alpha > kappa) {
            return Err(Error::Contract(format!("alpha = {alpha} must exceed kappa = {kappa}")));
        }
        if !(kappa * lambda < 1.0 && alpha * lambda < 1.0) {
            return Err(Error::Contract(format!(
                "need kappa*lambda < 1 and alpha*lambda < 1, got {} and {}",
                kappa * lambda,
                alpha * lambda
            )));
        }
        if !(tol > 0.0) || max_iter == 0 {
            return Err(Error::Contract("tol must be > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }

    /// Contraction ratio `alpha lambda`.
    pub fn rate(&self) -> f64 {
        self.alpha * self.lambda
    }

    /// Calmness constant `2 kappa / (1 - alpha lambda)`.
    pub fn gamma(&self) -> f64 {
        2.0 * self.kappa / (1.0 - self.rate())
    }
}

/// `(1 - alpha lambda) min { a / (2 kappa), b / (1 + kappa lambda) }`.
pub fn compute_tau(cfg: &IterationConfig, a: f64, b: f64) -> Result<f64> {
    cfg.validate()?;
    let tau = (1.0 - cfg.rate()) * (a / (2.0 * cfg.kappa)).min(b / (1.0 + cfg.kappa * cfg.lambda));
    if !(tau > 0.0) {
        return Err(Error::Contract(format!("degenerate radii give tau = {tau}")));
    }
    Ok(tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationCertificate {
    pub tau: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub alpha: f64,
    /// `increments[n] = |z_{n+1} - z_n|`.
    pub increments: Vec<f64>,
    /// Distance of the returned point to `F^{-1}(y - G(x))`.
    pub residual: f64,
    /// `|x - x̄| <= gamma * offset + 1e-9`.
    pub calm_ok: bool,
    pub iterate_count: usize,
    /// Cauchy tail bound `alpha lambda / (1 - alpha lambda) * last increment`.
    pub tail_bound: f64,
    /// `|y - G(x̄) - ȳ|`, the distance from the reference the query sits at.
    pub offset: f64,
}

impl IterationCertificate {
    fn new(cfg: &IterationConfig, tau: f64, offset: f64) -> Self {
        Self {
            tau,
            gamma: cfg.gamma(),
            kappa: cfg.kappa,
            lambda: cfg.lambda,
            alpha: cfg.alpha,
            increments: Vec::new(),
            residual: 0.0,
            calm_ok: true,
            iterate_count: 0,
            tail_bound: 0.0,
            offset,
        }
    }

    /// `increments[n] <= (alpha lambda)^n increments[0] (1 + 1e-6)` for all n.
    pub fn contraction_holds(&self) -> bool {
        let Some(&first) = self.increments.first() else {
            return true;
        };
        let rate = self.alpha * self.lambda;
        self.increments.iter().enumerate().all(|(n, &inc)| inc <= rate.powi(n as i32) * first * (1.0 + 1e-6))
    }
}

/// An error together with whatever certificate had been built when it occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveFailure {
    pub error: Error,
    pub certificate: Option<IterationCertificate>,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for SolveFailure {}

impl From<Error> for SolveFailure {
    fn from(error: Error) -> Self {
        Self { error, certificate: None }
    }
}

impl From<SolveFailure> for Error {
    fn from(f: SolveFailure) -> Self {
        f.error
    }
}

pub type SolveResult = std::result::Result<(Vector, IterationCertificate), SolveFailure>;

/// The pieces of a generalized equation that the iteration needs; the
/// right-hand side is supplied as a drive `z -> w(z)` with `z_{n+1} ∈ F^{-1}(w(z_n))`.
struct Engine<'a> {
    finv: &'a SetMap,
    base_x: &'a Vector,
    base_f: &'a Vector,
    radii: Radii,
}

fn dist(u: &Vector, v: &Vector) -> f64 {
    (u - v).norm()
}

impl Engine<'_> {
    fn select(&self, w: &Vector, center: &Vector, radius: f64, step: &str) -> Result<Vector> {
        let set = (self.finv)(w)?;
        let t = truncate(set, center.clone(), radius)?;
        t.project_center().map_err(|e| match e {
            Error::InfeasibilitySuspected { gap, .. } => Error::Regularity(format!(
                "{step}: truncation of radius {radius:e} is empty (short by {gap:e}); kappa is too small for this instance"
            )),
            other => other,
        })
    }

    fn check_x(&self, z: &Vector, n: usize) -> Result<()> {
        let d = dist(z, self.base_x);
        if d > self.radii.a * (1.0 + 1e-12) {
            return Err(Error::Locality(format!("|z_{n} - x̄| = {d:e} exceeds a = {}", self.radii.a)));
        }
        Ok(())
    }

    fn check_w(&self, w: &Vector, n: usize) -> Result<()> {
        let d = dist(w, self.base_f);
        if d > self.radii.b * (1.0 + 1e-12) {
            return Err(Error::Locality(format!("|y - G(z_{n}) - ȳ| = {d:e} exceeds b = {}", self.radii.b)));
        }
        Ok(())
    }

    fn run<D>(&self, cfg: &IterationConfig, drive: D) -> SolveResult
    where
        D: Fn(&Vector) -> Result<Vector>,
    {
        let tau = compute_tau(cfg, self.radii.a, self.radii.b)?;
        let w0 = drive(self.base_x)?;
        if w0.len() != self.base_f.len() {
            return Err(Error::Shape("right-hand side has the wrong dimension".into()).into());
        }
        let offset = dist(&w0, self.base_f);
        let mut cert = IterationCertificate::new(cfg, tau, offset);
        let fail = |error: Error, cert: &IterationCertificate| SolveFailure { error, certificate: Some(cert.clone()) };
        if offset > tau * (1.0 + 1e-12) {
            return Err(fail(
                Error::Locality(format!("query is {offset:e} from the reference, beyond tau = {tau:e}")),
                &cert,
            ));
        }
        if offset == 0.0 {
            return Ok((self.base_x.clone(), cert));
        }
        let kappa = cfg.kappa;
        let rate = cfg.rate();
        let z0 = self.select(&w0, self.base_x, kappa * offset, "z_0").map_err(|e| fail(e, &cert))?;
        let mut prev = z0;
        // Right-hand side the current iterate was selected from.
        let mut prev_w = w0;
        let mut radius = kappa * (1.0 + kappa * cfg.lambda) * offset;
        let mut strikes = 0;
        loop {
            let n = cert.increments.len();
            if n >= cfg.max_iter {
                return Err(fail(
                    Error::ModulusMisestimate(format!("no convergence to {:e} in {} steps", cfg.tol, cfg.max_iter)),
                    &cert,
                ));
            }
            self.check_x(&prev, n).map_err(|e| fail(e, &cert))?;
            let w = drive(&prev).map_err(|e| fail(e, &cert))?;
            self.check_w(&w, n).map_err(|e| fail(e, &cert))?;
            // A point of F^{-1}(w) is its own nearest point there.
            let next = if w == prev_w {
                prev.clone()
            } else {
                self.select(&w, &prev, radius, &format!("z_{}", n + 1)).map_err(|e| fail(e, &cert))?
            };
            prev_w = w;
            let inc = dist(&next, &prev);
            if let Some(&last) = cert.increments.last() {
                if last > 0.0 && inc / last > rate + 1e-6 {
                    strikes += 1;
                } else {
                    strikes = 0;
                }
            }
            cert.increments.push(inc);
            cert.iterate_count = cert.increments.len();
            prev = next;
            if strikes >= 3 {
                return Err(fail(
                    Error::ModulusMisestimate(format!("increments stopped contracting at rate {rate:e}")),
                    &cert,
                ));
            }
            if inc <= cfg.tol {
                break;
            }
            radius = rate * inc;
        }
        let x = prev;
        let w = drive(&x).map_err(|e| fail(e, &cert))?;
        cert.residual = match (self.finv)(&w).and_then(|s| s.project(&x)) {
            Ok(p) => dist(&p, &x),
            Err(Error::InfeasibilitySuspected { .. }) => f64::INFINITY,
            Err(e) => return Err(fail(e, &cert)),
        };
        let last = cert.increments.last().copied().unwrap_or(0.0);
        cert.tail_bound = if rate > 0.0 { rate / (1.0 - rate) * last } else { 0.0 };
        cert.calm_ok = dist(&x, self.base_x) <= cert.gamma * offset + 1e-9;
        if cert.residual > 10.0 * cfg.tol {
            return Err(fail(
                Error::ModulusMisestimate(format!("membership residual {:e} above 10 tol", cert.residual)),
                &cert,
            ));
        }
        Ok((x, cert))
    }
}

/// `z_0(y)`: the point of `F^{-1}(y - G(x̄)) ∩ B(x̄, kappa |y - G(x̄) - ȳ|)` nearest to `x̄`.
pub fn initial_selection(problem: &GeneralizedEquation, cfg: &IterationConfig, y: &Vector) -> Result<Vector> {
    let w = y - &problem.g_base;
    let engine = problem.engine();
    let offset = dist(&w, &problem.base_y);
    if offset > problem.radii.b * (1.0 + 1e-12) {
        return Err(Error::Locality(format!("|y - ȳ| = {offset:e} exceeds b = {}", problem.radii.b)));
    }
    engine.select(&w, &problem.base_x, cfg.kappa * offset, "z_0")
}

/// One step `z_{n+1}` from `z_{n-1} = z_prev` and `z_n = z_curr`.
pub fn iterate_step(
    problem: &GeneralizedEquation,
    cfg: &IterationConfig,
    y: &Vector,
    z_prev: &Vector,
    z_curr: &Vector,
) -> Result<Vector> {
    let engine = problem.engine();
    engine.check_x(z_curr, 0).map_err(relabel_locality("iterate left B_a(x̄)"))?;
    let w = y - (problem.g)(z_curr)?;
    engine.check_w(&w, 0).map_err(relabel_locality("shifted right-hand side left B_b(ȳ)"))?;
    engine.select(&w, z_curr, cfg.rate() * dist(z_curr, z_prev), "step")
}

fn relabel_locality(which: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Locality(m) => Error::Locality(format!("{which}: {m}")),
        other => other,
    }
}

/// Solves `y ∈ G(x) + F(x)` for `y` within `tau` of `ȳ + G(x̄)`.
pub fn solve(problem: &GeneralizedEquation, cfg: &IterationConfig, y: &Vector) -> SolveResult {
    if y.len() != problem.base_y.len() {
        return Err(Error::Shape(format!("y has dimension {}, expected {}", y.len(), problem.base_y.len())).into());
    }
    let g = &problem.g;
    problem.engine().run(cfg, |z| Ok(y - g(z)?))
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub y: Vector,
    pub outcome: SolveResult,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Largest `|x(y_i) - x(y_{i+1})| / |y_i - y_{i+1}|` over adjacent
    /// solved rows; `None` with fewer than two.
    pub max_continuity_ratio: Option<f64>,
    /// Indices `i` whose ratio to row `i + 1` exceeds `10 gamma`.
    pub jumps: Vec<usize>,
    /// Largest `|x(y) - x̄| / offset` over solved rows with nonzero offset.
    pub empirical_clm: f64,
    pub tau: f64,
    pub gamma: f64,
}

/// Solves at every grid point (in parallel, results in grid order).
pub fn sweep(problem: &GeneralizedEquation, cfg: &IterationConfig, grid: &[Vector]) -> Result<SweepReport> {
    let tau = compute_tau(cfg, problem.radii.a, problem.radii.b)?;
    let reference = problem.reference_value();
    for (i, y) in grid.iter().enumerate() {
        if y.len() != reference.len() {
            return Err(Error::Shape(format!("grid point {i} has dimension {}", y.len())));
        }
        let off = dist(y, &reference);
        if off > tau * (1.0 + 1e-12) {
            return Err(Error::Locality(format!(
                "grid point {i} ({:?}) is {off:e} from the reference, beyond tau = {tau:e}",
                y.as_slice()
            )));
        }
    }
    let rows: Vec<SweepRow> =
        grid.par_iter().map(|y| SweepRow { y: y.clone(), outcome: solve(problem, cfg, y) }).collect();
    Ok(summarize(rows, &problem.base_x, tau, cfg.gamma()))
}

fn summarize(rows: Vec<SweepRow>, base_x: &Vector, tau: f64, gamma: f64) -> SweepReport {
    let mut max_ratio: Option<f64> = None;
    let mut jumps = Vec::new();
    for (i, pair) in rows.windows(2).enumerate() {
        if let (Ok((x0, _)), Ok((x1, _))) = (&pair[0].outcome, &pair[1].outcome) {
            let dy = dist(&pair[0].y, &pair[1].y);
            if dy == 0.0 {
                continue;
            }
            let r = dist(x0, x1) / dy;
            max_ratio = Some(max_ratio.map_or(r, |m: f64| m.max(r)));
            if r > 10.0 * gamma {
                jumps.push(i);
            }
        }
    }
    let empirical_clm = rows
        .iter()
        .filter_map(|row| match &row.outcome {
            Ok((x, c)) if c.offset > 0.0 => Some(dist(x, base_x) / c.offset),
            _ => None,
        })
        .fold(0.0, f64::max);
    SweepReport { rows, max_continuity_ratio: max_ratio, jumps, empirical_clm, tau, gamma }
}

/// `ȳ ∈ G(x, p) + F(x)` near `(x̄, p̄)`, with `x̄ ∈ F^{-1}(ȳ - G(x̄, p̄))`.
#[derive(Clone)]
pub struct ImplicitEquation {
    finv: SetMap,
    g: ParametricPerturbation,
    base_x: Vector,
    base_p: Vector,
    target: Vector,
    /// `ȳ - G(x̄, p̄)`, the value of `F` at `x̄`.
    base_f: Vector,
    radii: Radii,
}

impl std::fmt::Debug for ImplicitEquation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImplicitEquation")
            .field("base_x", &self.base_x.as_slice())
            .field("base_p", &self.base_p.as_slice())
            .field("target", &self.target.as_slice())
            .field("radii", &self.radii)
            .finish()
    }
}

impl ImplicitEquation {
    pub fn new(
        finv: SetMap,
        g: ParametricPerturbation,
        base_x: Vector,
        base_p: Vector,
        target: Vector,
        radii: Radii,
    ) -> Result<Self> {
        let g0 = g(&base_x, &base_p)?;
        if g0.len() != target.len() {
            return Err(Error::Shape("G and the target have different dimensions".into()));
        }
        let base_f = &target - g0;
        check_base(&finv, &base_x, &base_f)?;
        Ok(Self { finv, g, base_x, base_p, target, base_f, radii })
    }

    pub fn base_x(&self) -> &Vector {
        &self.base_x
    }

    pub fn base_p(&self) -> &Vector {
        &self.base_p
    }

    pub fn radii(&self) -> Radii {
        self.radii
    }

    /// `|G(x̄, p) - G(x̄, p̄)|`.
    pub fn parameter_offset(&self, p: &Vector) -> Result<f64> {
        Ok(dist(&(self.g)(&self.base_x, p)?, &(self.g)(&self.base_x, &self.base_p)?))
    }

    /// Sampled Lipschitz modulus of `x -> G(x, p̄)` on `B_a(x̄)`.
    pub fn sampled_lip(&self, samples: usize, seed: u64) -> Result<f64> {
        let g = &self.g;
        let p = &self.base_p;
        Ok(lip_estimate(&|x: &Vector| g(x, p), &self.base_x, self.radii.a, samples, seed)?.value)
    }

    fn engine(&self) -> Engine<'_> {
        Engine { finv: &self.finv, base_x: &self.base_x, base_f: &self.base_f, radii: self.radii }
    }
}

/// Radius in parameter space whose image under `p -> G(x̄, p)` stays within
/// `tau`, from a sampled Lipschitz modulus on `B_search(p̄)`.
pub fn parameter_radius(
    problem: &ImplicitEquation,
    cfg: &IterationConfig,
    search: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let tau = compute_tau(cfg, problem.radii.a, problem.radii.b)?;
    let g = &problem.g;
    let x = &problem.base_x;
    let lp = lip_estimate(&|p: &Vector| g(x, p), &problem.base_p, search, samples, seed)?.value;
    Ok(if lp > 0.0 { search.min(tau / lp) } else { search })
}

/// Solves `ȳ ∈ G(x, p) + F(x)` for `x = x(p)`.
pub fn solve_implicit(problem: &ImplicitEquation, cfg: &IterationConfig, p: &Vector) -> SolveResult {
    if p.len() != problem.base_p.len() {
        return Err(Error::Shape("parameter has the wrong dimension".into()).into());
    }
    let g = &problem.g;
    let target = &problem.target;
    problem.engine().run(cfg, |z| Ok(target - g(z, p)?))
}
