//! Sampled estimates of the regularity, Lipschitz and calmness moduli;
//! brute-force verifiers for metric regularity and the Aubin property; the
//! perturbation bound for linear-plus-Lipschitz maps; and a numerical probe
//! of lower semicontinuity.
//!
//! Moduli defined through a limit superior are only ever estimated at a
//! stated radius with a stated seed. Nothing here claims the limit.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::convexsets::ConvexSet;
use crate::error::{Error, Result};
use crate::spaces::{central_difference_jacobian, jacobian_step, LeastNormSolver, LinearOperator, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulusKind {
    Reg,
    Lip,
    Clm,
}

impl ModulusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModulusKind::Reg => "reg",
            ModulusKind::Lip => "lip",
            ModulusKind::Clm => "clm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusEstimate {
    pub kind: ModulusKind,
    /// Nonnegative, possibly `+inf`.
    pub value: f64,
    pub sample_count: usize,
    pub locality_radius: f64,
    pub seed: u64,
}

/// `1 / sigma_min` for a surjective operator and `+inf` otherwise.
pub fn reg_linear(op: &LinearOperator) -> Result<f64> {
    if op.rows() > op.cols() {
        return Ok(f64::INFINITY);
    }
    Ok(LeastNormSolver::new(op.clone())?.reg())
}

/// Sampled `sup { |least_norm_solve(op, r)| : |r| = 1 }` using `samples`
/// unit right-hand sides. The first half is drawn uniformly from the sphere;
/// the rest are local perturbations of the best point so far, with a step
/// size adapted by the one-fifth success rule.
pub fn sampled_reg_linear(op: &LinearOperator, samples: usize, seed: u64) -> Result<f64> {
    let solver = LeastNormSolver::new(op.clone())?;
    if !solver.is_surjective() {
        return Ok(f64::INFINITY);
    }
    let m = op.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |r: &Vector| solver.solve(r).map(|x| x.norm());
    let mut best_dir = unit_gaussian(&mut rng, m);
    let mut best = eval(&best_dir)?;
    let uniform = samples.div_ceil(2);
    for _ in 1..uniform {
        let r = unit_gaussian(&mut rng, m);
        let v = eval(&r)?;
        if v > best {
            best = v;
            best_dir = r;
        }
    }
    let mut step = 0.3;
    for _ in uniform..samples {
        let noise: Vector = Vector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        let cand = &best_dir + noise * step;
        let norm = cand.norm();
        if norm == 0.0 {
            continue;
        }
        let cand = cand / norm;
        let v = eval(&cand)?;
        if v > best {
            best = v;
            best_dir = cand;
            step = (step * 1.5).min(1.0);
        } else {
            step = (step * 0.9).max(1e-12);
        }
    }
    Ok(best)
}

fn unit_gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Uniform point of the closed ball.
pub(crate) fn sample_ball(rng: &mut ChaCha8Rng, center: &Vector, radius: f64) -> Vector {
    let n = center.len();
    let dir = unit_gaussian(rng, n);
    let u: f64 = rng.random();
    center + dir * (radius * u.powf(1.0 / n as f64))
}

fn eval_checked<G>(g: &G, x: &Vector) -> Result<Vector>
where
    G: Fn(&Vector) -> Result<Vector> + ?Sized,
{
    let y = g(x).map_err(|e| match e {
        Error::Oracle(m) => Error::Oracle(m),
        other => Error::Oracle(other.to_string()),
    })?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Oracle(format!("non-finite value at {:?}", x.as_slice())));
    }
    Ok(y)
}

/// Sample points shared by the lip and clm estimators: `2 * samples` uniform
/// ball points, in pairs, plus the two endpoints of the diameter along the top
/// right singular vector of a finite-difference Jacobian at the center.
struct SampleSet {
    center_value: Vector,
    pairs: Vec<(Vector, Vector, Vector, Vector)>,
    axis: Option<(Vector, Vector, Vector, Vector)>,
}

fn build_samples<G>(g: &G, center: &Vector, radius: f64, samples: usize, seed: u64) -> Result<SampleSet>
where
    G: Fn(&Vector) -> Result<Vector> + ?Sized,
{
    if !(radius > 0.0) || samples == 0 {
        return Err(Error::Contract("radius must be > 0 and samples >= 1".into()));
    }
    let center_value = eval_checked(g, center)?;
    let h = jacobian_step(center).min(radius / 2.0);
    let jac = central_difference_jacobian(&|x: &Vector| eval_checked(g, x), center, h)?;
    let svd = jac.svd()?;
    // Below this the difference quotients carry only rounding error and the
    // top singular vector is not a meaningful direction.
    let noise = 1e3 * f64::EPSILON * (1.0 + center_value.norm()) / h;
    let axis = if svd.largest() > noise {
        let v = svd.v_t().row(0).transpose();
        let p = center + &v * radius;
        let q = center - &v * radius;
        let gp = eval_checked(g, &p)?;
        let gq = eval_checked(g, &q)?;
        Some((p, gp, q, gq))
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let p = sample_ball(&mut rng, center, radius);
        let q = sample_ball(&mut rng, center, radius);
        let gp = eval_checked(g, &p)?;
        let gq = eval_checked(g, &q)?;
        pairs.push((p, gp, q, gq));
    }
    Ok(SampleSet { center_value, pairs, axis })
}

fn quotient(x: &Vector, gx: &Vector, y: &Vector, gy: &Vector) -> f64 {
    let d = (x - y).norm();
    if d == 0.0 {
        0.0
    } else {
        (gx - gy).norm() / d
    }
}

impl SampleSet {
    fn clm(&self, center: &Vector) -> f64 {
        let c = &self.center_value;
        let mut best: f64 = 0.0;
        for (p, gp, q, gq) in self.pairs.iter().chain(self.axis.iter()) {
            best = best.max(quotient(p, gp, center, c)).max(quotient(q, gq, center, c));
        }
        best
    }

    fn lip(&self, center: &Vector) -> f64 {
        let mut best = self.clm(center);
        for (p, gp, q, gq) in self.pairs.iter().chain(self.axis.iter()) {
            best = best.max(quotient(p, gp, q, gq));
        }
        best
    }
}

/// Largest difference quotient `|g(x') - g(x)| / |x' - x|` over the sample
/// set in the ball. Exact for linear maps.
pub fn lip_estimate<G>(g: &G, center: &Vector, radius: f64, samples: usize, seed: u64) -> Result<ModulusEstimate>
where
    G: Fn(&Vector) -> Result<Vector> + ?Sized,
{
    let set = build_samples(g, center, radius, samples, seed)?;
    Ok(ModulusEstimate {
        kind: ModulusKind::Lip,
        value: set.lip(center),
        sample_count: samples,
        locality_radius: radius,
        seed,
    })
}

/// Largest quotient `|f(x) - f(center)| / |x - center|` over the same
/// sample set that [`lip_estimate`] uses.
pub fn clm_estimate<F>(f: &F, center: &Vector, radius: f64, samples: usize, seed: u64) -> Result<ModulusEstimate>
where
    F: Fn(&Vector) -> Result<Vector> + ?Sized,
{
    let set = build_samples(f, center, radius, samples, seed)?;
    Ok(ModulusEstimate {
        kind: ModulusKind::Clm,
        value: set.clm(center),
        sample_count: samples,
        locality_radius: radius,
        seed,
    })
}

/// Set-valued forward oracle `x -> F(x)`, returning a finite sample of values.
pub type ForwardOracle = Arc<dyn Fn(&Vector) -> Vec<Vector> + Send + Sync>;

/// A set-valued mapping known through samples of its graph near `(x̄, ȳ)`.
///
/// `U` and `V` are the balls of radii `a` and `b`. The graph is sampled on a
/// lattice out to `graph_radius` so that inverse images of points of `V` are
/// not clipped at the edge of `U`.
#[derive(Clone)]
pub struct SampledMapping {
    forward: ForwardOracle,
    base_x: Vector,
    base_y: Vector,
    a: f64,
    b: f64,
    graph_radius: f64,
}

impl std::fmt::Debug for SampledMapping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledMapping")
            .field("base_x", &self.base_x.as_slice())
            .field("base_y", &self.base_y.as_slice())
            .field("a", &self.a)
            .field("b", &self.b)
            .field("graph_radius", &self.graph_radius)
            .finish()
    }
}

const MATCH_TOL: f64 = 1e-10;
const CELL: f64 = 1e-8;

impl SampledMapping {
    pub fn new(forward: ForwardOracle, base_x: Vector, base_y: Vector, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Contract("sampling radii must be positive".into()));
        }
        let values = forward(&base_x);
        if !values.iter().any(|v| v.len() == base_y.len() && dist(v, &base_y) <= 1e-12) {
            return Err(Error::Contract("base point is not in the sampled graph".into()));
        }
        Ok(Self { forward, base_x, base_y, a, b, graph_radius: 2.0 * a })
    }

    /// Single-valued convenience constructor.
    pub fn from_function<F>(f: F, base_x: Vector, a: f64, b: f64) -> Result<Self>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        let base_y = f(&base_x);
        Self::new(Arc::new(move |x: &Vector| vec![f(x)]), base_x, base_y, a, b)
    }

    pub fn with_graph_radius(mut self, r: f64) -> Result<Self> {
        if !(r >= self.a) {
            return Err(Error::Contract(format!("graph radius {r} is below a = {}", self.a)));
        }
        self.graph_radius = r;
        Ok(self)
    }

    pub fn base_x(&self) -> &Vector {
        &self.base_x
    }

    pub fn base_y(&self) -> &Vector {
        &self.base_y
    }

    pub fn radii(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn graph_radius(&self) -> f64 {
        self.graph_radius
    }

    fn sample(&self, grid: usize) -> Result<GraphSample> {
        if grid < 2 {
            return Err(Error::Contract("grid needs at least 2 points per axis".into()));
        }
        let h = 2.0 * self.a / (grid - 1) as f64;
        let offset = if grid % 2 == 1 { 0.0 } else { 0.5 };
        let graph_x = lattice(&self.base_x, h, offset, self.graph_radius)?;
        let mut graph = Vec::new();
        let mut xs = Vec::new();
        for x in graph_x {
            if dist(&x, &self.base_x) <= self.a * (1.0 + 1e-12) {
                xs.push(x.clone());
            }
            for y in (self.forward)(&x) {
                graph.push((x.clone(), y));
            }
        }
        let mut index: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, (_, y)) in graph.iter().enumerate() {
            index.entry(cell(y)).or_default().push(i);
        }
        let mut ys: Vec<Vector> = Vec::new();
        let mut seen: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (_, y) in &graph {
            if dist(y, &self.base_y) > self.b * (1.0 + 1e-12) {
                continue;
            }
            let dup = neighbor_cells(y)
                .any(|c| seen.get(&c).is_some_and(|list| list.iter().any(|&j| dist(&ys[j], y) <= MATCH_TOL)));
            if !dup {
                seen.entry(cell(y)).or_default().push(ys.len());
                ys.push(y.clone());
            }
        }
        Ok(GraphSample { xs, graph, index, ys })
    }
}

struct GraphSample {
    xs: Vec<Vector>,
    graph: Vec<(Vector, Vector)>,
    index: HashMap<Vec<i64>, Vec<usize>>,
    ys: Vec<Vector>,
}

impl GraphSample {
    fn inverse(&self, y: &Vector) -> Vec<&Vector> {
        let mut out: Vec<&Vector> = Vec::new();
        for c in neighbor_cells(y) {
            if let Some(list) = self.index.get(&c) {
                for &i in list {
                    let (x, yy) = &self.graph[i];
                    if dist(yy, y) <= MATCH_TOL {
                        out.push(x);
                    }
                }
            }
        }
        out
    }
}

fn cell(y: &Vector) -> Vec<i64> {
    y.iter().map(|v| (v / CELL).round() as i64).collect()
}

fn neighbor_cells(y: &Vector) -> impl Iterator<Item = Vec<i64>> {
    let base = cell(y);
    let d = base.len();
    (0..3usize.pow(d as u32)).map(move |mut code| {
        base.iter()
            .map(|&c| {
                let shift = (code % 3) as i64 - 1;
                code /= 3;
                c + shift
            })
            .collect()
    })
}

fn lattice(center: &Vector, h: f64, offset: f64, radius: f64) -> Result<Vec<Vector>> {
    let d = center.len();
    let kmax = (radius / h + 1e-9).floor() as i64 + 1;
    let axis: Vec<f64> =
        (-kmax..=kmax).map(|k| (k as f64 + offset) * h).filter(|t| t.abs() <= radius * (1.0 + 1e-12)).collect();
    let total = (axis.len() as f64).powi(d as i32);
    if total > 5e6 {
        return Err(Error::Contract(format!("graph lattice of {total} points is too large")));
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let p = Vector::from_iterator(d, idx.iter().map(|&i| axis[i]));
        if p.norm() <= radius * (1.0 + 1e-12) {
            out.push(center + p);
        }
        let mut k = 0;
        loop {
            if k == d {
                return Ok(out);
            }
            idx[k] += 1;
            if idx[k] < axis.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn dist(u: &Vector, v: &Vector) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn min_dist<'a>(x: &Vector, set: impl IntoIterator<Item = &'a Vector>) -> f64 {
    set.into_iter().map(|s| dist(x, s)).fold(f64::INFINITY, f64::min)
}

/// Outcome of a brute-force inequality check over a sampled graph.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub holds: bool,
    /// Largest observed `d_x / d_y`; `+inf` when `d_y = 0 < d_x`.
    pub worst_ratio: f64,
    /// Points realizing the worst ratio: `(x, y)` for metric regularity and
    /// `(x, y', y)` for the Aubin property.
    pub witness: Vec<Vector>,
    pub pairs_checked: usize,
}

fn within(dx: f64, kappa: f64, dy: f64) -> bool {
    dx <= kappa * dy * (1.0 + 1e-9) + 1e-12
}

/// Checks `d(x, F^{-1}(y)) <= kappa d(y, F(x))` for every lattice point `x`
/// of `U` and every sampled value `y` in `V`. Both distances are exhaustive
/// minima over the sample.
pub fn verify_metric_regularity(map: &SampledMapping, kappa: f64, grid: usize) -> Result<VerificationReport> {
    let s = map.sample(grid)?;
    let mut report = VerificationReport { holds: true, worst_ratio: 0.0, witness: Vec::new(), pairs_checked: 0 };
    for x in &s.xs {
        let fx = (map.forward)(x);
        for y in &s.ys {
            report.pairs_checked += 1;
            let dx = min_dist(x, s.inverse(y));
            if dx == 0.0 {
                continue;
            }
            let dy = min_dist(y, &fx);
            let ratio = if dy == 0.0 { f64::INFINITY } else { dx / dy };
            if !within(dx, kappa, dy) {
                report.holds = false;
            }
            if ratio > report.worst_ratio || report.witness.is_empty() {
                report.worst_ratio = ratio.max(report.worst_ratio);
                report.witness = vec![x.clone(), y.clone()];
            }
        }
    }
    Ok(report)
}

/// Checks `F^{-1}(y') ∩ U ⊂ F^{-1}(y) + kappa |y' - y| B` over all sampled
/// `y, y'` in `V`.
pub fn verify_aubin(map: &SampledMapping, kappa: f64, grid: usize) -> Result<VerificationReport> {
    let s = map.sample(grid)?;
    let (a, _) = map.radii();
    let mut report = VerificationReport { holds: true, worst_ratio: 0.0, witness: Vec::new(), pairs_checked: 0 };
    let inverses: Vec<Vec<&Vector>> = s.ys.iter().map(|y| s.inverse(y)).collect();
    for (j, yp) in s.ys.iter().enumerate() {
        for x in inverses[j].iter().filter(|x| dist(x, map.base_x()) <= a * (1.0 + 1e-12)) {
            for (i, y) in s.ys.iter().enumerate() {
                report.pairs_checked += 1;
                let dx = min_dist(x, inverses[i].iter().copied());
                if dx == 0.0 {
                    continue;
                }
                let dy = dist(yp, y);
                let ratio = if dy == 0.0 { f64::INFINITY } else { dx / dy };
                if !within(dx, kappa, dy) {
                    report.holds = false;
                }
                if ratio > report.worst_ratio || report.witness.is_empty() {
                    report.worst_ratio = ratio.max(report.worst_ratio);
                    report.witness = vec![(*x).clone(), yp.clone(), y.clone()];
                }
            }
        }
    }
    Ok(report)
}

/// Moduli and sampling for [`lg_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgConfig {
    pub kappa: f64,
    pub lambda: f64,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// Ball points (besides the center) where the perturbed Jacobian is measured.
    pub jacobian_points: usize,
}

impl LgConfig {
    pub fn new(kappa: f64, lambda: f64) -> Self {
        Self { kappa, lambda, radius: 0.1, samples: 200, seed: 0, jacobian_points: 16 }
    }
}

/// Largest `kappa * lambda` accepted by [`lg_bound_check`].
pub const LG_PRODUCT_CAP: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct LgReport {
    pub holds: bool,
    /// Largest `reg` of `F + ∇g(x)` over the center and sampled ball points.
    pub measured_reg: f64,
    /// `(1/kappa - lambda)^{-1}`.
    pub bound: f64,
    pub reg_f: f64,
    pub lip_g: ModulusEstimate,
}

/// Checks `reg(F + g) <= (1/kappa - lambda)^{-1}` near `center` for a linear
/// `F` with `reg F < kappa` and a Lipschitz `g` with `lip g <= lambda`.
///
/// For the smooth single-valued map `F + g` the regularity modulus at a point
/// is `reg` of its derivative there; it is evaluated from finite-difference
/// Jacobians at the center and at `jacobian_points` random points of the ball.
pub fn lg_bound_check<G>(f_linear: &LinearOperator, g: &G, center: &Vector, cfg: &LgConfig) -> Result<LgReport>
where
    G: Fn(&Vector) -> Result<Vector> + ?Sized,
{
    if center.len() != f_linear.cols() {
        return Err(Error::Shape("center dimension does not match F".into()));
    }
    let reg_f = reg_linear(f_linear)?;
    if !(reg_f < cfg.kappa) {
        return Err(Error::Contract(format!("reg F = {reg_f} is not below kappa = {}", cfg.kappa)));
    }
    let lip_g = lip_estimate(g, center, cfg.radius, cfg.samples, cfg.seed)?;
    if lip_g.value > cfg.lambda {
        return Err(Error::Contract(format!("lip g = {} exceeds lambda = {}", lip_g.value, cfg.lambda)));
    }
    let product = cfg.kappa * cfg.lambda;
    if !(product < 1.0) || product > LG_PRODUCT_CAP {
        return Err(Error::Contract(format!("kappa * lambda = {product} exceeds the admissible {LG_PRODUCT_CAP}")));
    }
    let bound = 1.0 / (1.0 / cfg.kappa - cfg.lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut points = vec![center.clone()];
    for _ in 0..cfg.jacobian_points {
        points.push(sample_ball(&mut rng, center, cfg.radius));
    }
    let mut measured: f64 = 0.0;
    for x in points {
        let h = jacobian_step(&x).min(cfg.radius / 2.0);
        let jac = central_difference_jacobian(&|z: &Vector| eval_checked(g, z), &x, h)?;
        if jac.rows() != f_linear.rows() {
            return Err(Error::Shape("g and F have different output dimensions".into()));
        }
        let sum = LinearOperator::new(f_linear.matrix() + jac.matrix())?;
        measured = measured.max(reg_linear(&sum)?);
    }
    Ok(LgReport { holds: measured <= bound + 1e-6, measured_reg: measured, bound, reg_f, lip_g })
}

/// `{y} ∪ {y + 1/k : k = ±1, …, ±k_max}` in increasing order: the values at
/// `y` of the mapping whose graph is the union of the lines `x = y + 1/k`
/// and `x = y`.
pub fn counterexample_mapping(y: f64, k_max: usize) -> Result<Vec<f64>> {
    if k_max == 0 {
        return Err(Error::Contract("k_max must be at least 1".into()));
    }
    let mut out = vec![y];
    for k in 1..=k_max {
        let inv = 1.0 / k as f64;
        out.push(y + inv);
        out.push(y - inv);
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// The forward mapping whose inverse is [`counterexample_mapping`]:
/// `F(x) = {x} ∪ {x - 1/k}`.
pub fn counterexample_forward(k_max: usize) -> ForwardOracle {
    Arc::new(move |x: &Vector| {
        let mut out = vec![x.clone()];
        for k in 1..=k_max {
            let inv = 1.0 / k as f64;
            out.push(x.map(|v| v - inv));
            out.push(x.map(|v| v + inv));
        }
        out
    })
}

/// A value of a probed set-valued map.
#[derive(Debug, Clone)]
pub enum ProbeSet {
    Convex(ConvexSet),
    Finite(Vec<Vector>),
    Empty,
}

impl ProbeSet {
    pub fn distance(&self, x: &Vector) -> Result<f64> {
        match self {
            ProbeSet::Empty => Ok(f64::INFINITY),
            ProbeSet::Finite(points) => Ok(min_dist(x, points)),
            ProbeSet::Convex(set) => match set.project(x) {
                Ok(p) => Ok(dist(&p, x)),
                Err(Error::InfeasibilitySuspected { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LscVerdict {
    Consistent,
    Violated,
}

impl LscVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            LscVerdict::Consistent => "lsc-consistent",
            LscVerdict::Violated => "lsc-violated",
        }
    }
}

/// Distances at or below this are treated as approaching the witness.
pub const LSC_FLOOR: f64 = 1e-3;
/// Leading approach steps excluded from the verdict.
pub const LSC_SKIP: usize = 3;
/// The approach must end this close to `y`.
pub const LSC_TAIL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LscProbeReport {
    pub y: Vector,
    pub x: Vector,
    pub approach: Vec<Vector>,
    pub distances: Vec<f64>,
    pub verdict: LscVerdict,
    pub floor: f64,
    pub skipped: usize,
}

impl LscProbeReport {
    /// Number of steps after the skipped prefix whose distance exceeds the floor.
    pub fn steps_above_floor(&self) -> usize {
        self.distances.iter().skip(self.skipped).filter(|&&d| d > self.floor).count()
    }
}

/// Measures `d(x, M(y_k))` along `y_k -> y`. The verdict is a violation iff
/// every distance after the first [`LSC_SKIP`] steps exceeds [`LSC_FLOOR`]
/// while the approach ends within [`LSC_TAIL`] of `y`.
pub fn lsc_probe<M>(set_map: &M, y: &Vector, x: &Vector, approach: &[Vector]) -> Result<LscProbeReport>
where
    M: Fn(&Vector) -> Result<ProbeSet> + ?Sized,
{
    let at = set_map(y)?;
    if at.distance(x)? > 1e-9 {
        return Err(Error::Contract("probe point is not in the value at y".into()));
    }
    let distances = approach.iter().map(|yk| set_map(yk)?.distance(x)).collect::<Result<Vec<_>>>()?;
    let converges = approach.last().is_some_and(|yk| dist(yk, y) <= LSC_TAIL);
    let tail = &distances[LSC_SKIP.min(distances.len())..];
    let violated = converges && !tail.is_empty() && tail.iter().all(|&d| d > LSC_FLOOR);
    Ok(LscProbeReport {
        y: y.clone(),
        x: x.clone(),
        approach: approach.to_vec(),
        distances,
        verdict: if violated { LscVerdict::Violated } else { LscVerdict::Consistent },
        floor: LSC_FLOOR,
        skipped: LSC_SKIP,
    })
}

/// Formats a float with 17 significant digits, trimming trailing zeros but
/// keeping one digit after the point (`1.0`, `0.10000000000000001`).
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_fraction(&fixed)
    } else {
        format!("{}e{exp}", trim_fraction(mantissa))
    }
}

fn trim_fraction(s: &str) -> String {
    if !s.contains('.') {
        return format!("{s}.0");
    }
    let t = s.trim_end_matches('0');
    if t.ends_with('.') {
        format!("{t}0")
    } else {
        t.to_string()
    }
}

/// One certificate line: `kind,value,radius,samples,seed,verdict,witness`,
/// with witness coordinates joined by `;`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateRow {
    pub kind: String,
    pub value: f64,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub verdict: String,
    pub witness: Vec<f64>,
}

pub const CERTIFICATE_HEADER: [&str; 7] = ["kind", "value", "radius", "samples", "seed", "verdict", "witness"];

impl CertificateRow {
    pub fn from_estimate(e: &ModulusEstimate) -> Self {
        Self {
            kind: e.kind.as_str().into(),
            value: e.value,
            radius: e.locality_radius,
            samples: e.sample_count,
            seed: e.seed,
            verdict: "estimate".into(),
            witness: Vec::new(),
        }
    }

    pub fn fields(&self) -> [String; 7] {
        [
            self.kind.clone(),
            format_real(self.value),
            format_real(self.radius),
            self.samples.to_string(),
            self.seed.to_string(),
            self.verdict.clone(),
            self.witness.iter().map(|v| format_real(*v)).collect::<Vec<_>>().join(";"),
        ]
    }

    pub fn from_fields(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != 7 {
            return Err(Error::Shape(format!("certificate row has {} fields, expected 7", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Shape(format!("field {} is not a number: {}", CERTIFICATE_HEADER[i], &rec[i])))
        };
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Shape(format!("field {} is not an integer: {}", CERTIFICATE_HEADER[i], &rec[i])))
        };
        let witness = if rec[6].is_empty() {
            Vec::new()
        } else {
            rec[6]
                .split(';')
                .map(|t| t.parse().map_err(|_| Error::Shape(format!("bad witness coordinate {t}"))))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            kind: rec[0].to_string(),
            value: num(1)?,
            radius: num(2)?,
            samples: int(3)? as usize,
            seed: int(4)?,
            verdict: rec[5].to_string(),
            witness,
        })
    }
}

/// Writes rows (with header) as CSV.
pub fn certificates_to_csv(rows: &[CertificateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Invariant(format!("csv: {e}"));
    w.write_record(CERTIFICATE_HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.fields()).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
}

/// Parses CSV produced by [`certificates_to_csv`].
pub fn certificates_from_csv(text: &str) -> Result<Vec<CertificateRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Shape(format!("csv: {e}")))?.clone();
    if header.iter().ne(CERTIFICATE_HEADER) {
        return Err(Error::Shape("unexpected certificate header".into()));
    }
    r.records().map(|rec| CertificateRow::from_fields(&rec.map_err(|e| Error::Shape(format!("csv: {e}")))?)).collect()
}
