//! Constrained steering `ẋ = f(x, u)`, `x(0) = 0`, `x(1) = b`, `u(t) ∈ 𝒰`
//! on a uniform mesh of `[0, 1]`: linearization, the two
//! null-controllability tests (Kalman rank and the Aumann-integral interior
//! test), and steering through the selection engine.
//!
//! The discretized unknowns are the interval velocities `v_i` and controls
//! `u_i`; states are recovered as `x_i = (1/N) Σ_{j<i} v_j`, so `x_0 = 0`
//! holds exactly. The affine part collects the trapezoidal residuals of the
//! linearized dynamics and the endpoint row; the nonlinear remainder is the
//! perturbation.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convexsets::{interior_contains, AffineSet, ConvexSet};
use crate::error::{Error, Result};
use crate::moduli::{format_real, lip_estimate};
use crate::selection::{
    compute_tau, solve, GeneralizedEquation, IterationCertificate, IterationConfig, Radii, SolveFailure,
};
use crate::spaces::{LeastNormSolver, LinearOperator, Vector};

pub const DEFAULT_MESH: usize = 64;
pub const DEFAULT_RADIUS: f64 = 20.0;
pub const DEFAULT_QUADRATURE_NODES: usize = 128;
const FD_STEP: f64 = 1e-6;

pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval(&self, x: &Vector, u: &Vector) -> Result<Vector>;

    /// `(∇ₓf, ∇ᵤf)` at `(x, u)` when known in closed form.
    fn jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    /// True when `f` is exactly linear, so the perturbation vanishes.
    fn is_linear(&self) -> bool {
        false
    }

    fn name(&self) -> String;
}

/// `ẋ = u` on `R`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarIntegrator;

/// `ẋ₁ = x₂`, `ẋ₂ = u`.
#[derive(Debug, Clone, Copy)]
pub struct DoubleIntegrator;

/// `ẋ₁ = x₂`, `ẋ₂ = -sin x₁ + u`.
#[derive(Debug, Clone, Copy)]
pub struct Pendulum;

/// `ẋ = sin u` on `R`; no closed-form Jacobian, so linearization differences it.
#[derive(Debug, Clone, Copy)]
pub struct SineControl;

impl Dynamics for ScalarIntegrator {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, _x: &Vector, u: &Vector) -> Result<Vector> {
        Ok(u.clone())
    }
    fn jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((DMatrix::zeros(1, 1), DMatrix::identity(1, 1)))
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "scalar_integrator".into()
    }
}

impl Dynamics for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        Ok(Vector::from_column_slice(&[x[1], u[0]]))
    }
    fn jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0])))
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "double_integrator".into()
    }
}

impl Dynamics for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        Ok(Vector::from_column_slice(&[x[1], -x[0].sin() + u[0]]))
    }
    fn jacobians(&self, x: &Vector, _u: &Vector) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -x[0].cos(), 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0])))
    }
    fn name(&self) -> String {
        "pendulum".into()
    }
}

impl Dynamics for SineControl {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, _x: &Vector, u: &Vector) -> Result<Vector> {
        Ok(u.map(f64::sin))
    }
    fn name(&self) -> String {
        "sine_control".into()
    }
}

/// `ẋ = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || b.nrows() != a.nrows() || a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::Shape(format!(
                "A must be n x n and B n x m, got {}x{} and {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("A and B must be finite".into()));
        }
        Ok(Self { a, b })
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn eval(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        Ok(&self.a * x + &self.b * u)
    }
    fn jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((self.a.clone(), self.b.clone()))
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "linear".into()
    }
}

/// `coeff · Π xⱼ^eⱼ · Π uₖ^eₙ₊ₖ`; `exponents` runs over the state
/// coordinates, then the control coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

/// Each state derivative as a sum of monomials in `(x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialDynamics {
    pub state_dim: usize,
    pub control_dim: usize,
    pub rows: Vec<Vec<Monomial>>,
}

impl PolynomialDynamics {
    pub fn validate(&self) -> Result<()> {
        let k = self.state_dim + self.control_dim;
        if self.state_dim == 0 || self.control_dim == 0 {
            return Err(Error::Shape("state and control dimensions must be positive".into()));
        }
        if self.rows.len() != self.state_dim {
            return Err(Error::Shape(format!("{} rows for state dimension {}", self.rows.len(), self.state_dim)));
        }
        for (i, row) in self.rows.iter().enumerate() {
            for t in row {
                if t.exponents.len() != k {
                    return Err(Error::Shape(format!("row {i}: exponent list must have length {k}")));
                }
                if !t.coeff.is_finite() {
                    return Err(Error::Contract(format!("row {i}: coefficient is not finite")));
                }
            }
        }
        Ok(())
    }

    fn point(x: &Vector, u: &Vector) -> Vec<f64> {
        x.iter().chain(u.iter()).copied().collect()
    }

    fn term(t: &Monomial, p: &[f64]) -> f64 {
        t.exponents.iter().zip(p).fold(t.coeff, |acc, (&e, &v)| acc * v.powi(e as i32))
    }

    fn term_partial(t: &Monomial, p: &[f64], k: usize) -> f64 {
        let e = t.exponents[k];
        if e == 0 {
            return 0.0;
        }
        t.exponents.iter().zip(p).enumerate().fold(t.coeff * e as f64, |acc, (j, (&ej, &v))| {
            let power = if j == k { ej - 1 } else { ej };
            acc * v.powi(power as i32)
        })
    }
}

impl Dynamics for PolynomialDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn eval(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        let p = Self::point(x, u);
        Ok(Vector::from_iterator(
            self.state_dim,
            self.rows.iter().map(|row| row.iter().map(|t| Self::term(t, &p)).sum()),
        ))
    }
    fn jacobians(&self, x: &Vector, u: &Vector) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let p = Self::point(x, u);
        let (n, m) = (self.state_dim, self.control_dim);
        let full = DMatrix::from_fn(n, n + m, |i, k| self.rows[i].iter().map(|t| Self::term_partial(t, &p, k)).sum());
        Some((full.columns(0, n).into_owned(), full.columns(n, m).into_owned()))
    }
    fn is_linear(&self) -> bool {
        self.rows.iter().flatten().all(|t| t.exponents.iter().sum::<u32>() <= 1)
    }
    fn name(&self) -> String {
        "polynomial".into()
    }
}

/// Named dynamics: `scalar_integrator`, `double_integrator`, `pendulum`,
/// `sine_control`.
pub fn fixture(name: &str) -> Option<Arc<dyn Dynamics>> {
    match name {
        "scalar_integrator" => Some(Arc::new(ScalarIntegrator)),
        "double_integrator" => Some(Arc::new(DoubleIntegrator)),
        "pendulum" => Some(Arc::new(Pendulum)),
        "sine_control" => Some(Arc::new(SineControl)),
        _ => None,
    }
}

pub const FIXTURE_NAMES: [&str; 4] = ["scalar_integrator", "double_integrator", "pendulum", "sine_control"];

#[derive(Clone)]
pub struct ControlProblem {
    dynamics: Arc<dyn Dynamics>,
    control_set: ConvexSet,
    mesh: usize,
    /// `None` halves from [`DEFAULT_RADIUS`] until the default schedule
    /// admits the sampled remainder modulus.
    radius: Option<f64>,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("dynamics", &self.dynamics.name())
            .field("control_set", &self.control_set)
            .field("mesh", &self.mesh)
            .field("radius", &self.radius)
            .finish()
    }
}

impl ControlProblem {
    pub fn new(dynamics: Arc<dyn Dynamics>, control_set: ConvexSet, mesh: usize) -> Result<Self> {
        let (n, m) = (dynamics.state_dim(), dynamics.control_dim());
        if n == 0 || m == 0 {
            return Err(Error::Shape("state and control dimensions must be positive".into()));
        }
        if mesh == 0 {
            return Err(Error::Contract("mesh size must be positive".into()));
        }
        if control_set.dim() != m {
            return Err(Error::Shape(format!("control set has dimension {}, controls have {m}", control_set.dim())));
        }
        if !admissible_control_set(&control_set) {
            return Err(Error::Contract("control set must be built from boxes and halfspaces".into()));
        }
        let f0 = dynamics.eval(&Vector::zeros(n), &Vector::zeros(m))?;
        if f0.len() != n {
            return Err(Error::Shape(format!("dynamics return dimension {}, expected {n}", f0.len())));
        }
        if f0.norm() > 1e-12 {
            return Err(Error::Contract(format!("f(0, 0) = {:e} is not zero", f0.norm())));
        }
        if !control_set.contains(&Vector::zeros(m), 1e-12)? {
            return Err(Error::Contract("0 is not in the control set".into()));
        }
        for k in 0..m {
            for s in [1.0, -1.0] {
                let mut e = Vector::zeros(m);
                e[k] = s;
                if !control_set.support(&e)?.is_finite() {
                    return Err(Error::Contract("control set must be bounded".into()));
                }
            }
        }
        Ok(Self { dynamics, control_set, mesh, radius: None })
    }

    /// Locality radius `a = b = c` of the discretized equation.
    pub fn with_radius(mut self, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Contract(format!("radius must be positive, got {r}")));
        }
        self.radius = Some(r);
        Ok(self)
    }

    pub fn with_mesh(mut self, mesh: usize) -> Result<Self> {
        if mesh == 0 {
            return Err(Error::Contract("mesh size must be positive".into()));
        }
        self.mesh = mesh;
        Ok(self)
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn control_set(&self) -> &ConvexSet {
        &self.control_set
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn mesh(&self) -> usize {
        self.mesh
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }
}

fn admissible_control_set(set: &ConvexSet) -> bool {
    match set {
        ConvexSet::Box { .. } | ConvexSet::Halfspaces(_) => true,
        ConvexSet::Intersection(parts) => parts.iter().all(admissible_control_set),
        ConvexSet::Ball { .. } | ConvexSet::Affine(_) => false,
    }
}

#[derive(Debug, Clone)]
pub struct DiscretizedSystem {
    pub a: LinearOperator,
    pub b: LinearOperator,
    pub times: Vec<f64>,
    /// `e^{A/N}`.
    pub transition: DMatrix<f64>,
}

impl DiscretizedSystem {
    pub fn mesh(&self) -> usize {
        self.times.len() - 1
    }
}

/// `A = ∇ₓf(0,0)`, `B = ∇ᵤf(0,0)`, analytic when the dynamics provide them.
pub fn linearize(problem: &ControlProblem) -> Result<DiscretizedSystem> {
    let (n, m) = (problem.state_dim(), problem.control_dim());
    let (a, b) = jacobians(&*problem.dynamics, &Vector::zeros(n), &Vector::zeros(m))?;
    let mesh = problem.mesh;
    let transition = (&a / mesh as f64).exp();
    if transition.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericBreakdown("matrix exponential overflowed".into()));
    }
    Ok(DiscretizedSystem {
        a: LinearOperator::new(a)?,
        b: LinearOperator::new(b)?,
        times: (0..=mesh).map(|i| i as f64 / mesh as f64).collect(),
        transition,
    })
}

fn jacobians(f: &dyn Dynamics, x: &Vector, u: &Vector) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if let Some(j) = f.jacobians(x, u) {
        return Ok(j);
    }
    let (n, m) = (x.len(), u.len());
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for k in 0..n + m {
        let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
        if k < n {
            xp[k] += FD_STEP;
            xm[k] -= FD_STEP;
        } else {
            up[k - n] += FD_STEP;
            um[k - n] -= FD_STEP;
        }
        let col = (f.eval(&xp, &up)? - f.eval(&xm, &um)?) / (2.0 * FD_STEP);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Oracle("dynamics returned a non-finite value".into()));
        }
        if k < n {
            a.set_column(k, &col);
        } else {
            b.set_column(k - n, &col);
        }
    }
    Ok((a, b))
}

/// Rank of `[B, AB, …, A^{n-1}B]` by the relative singular value threshold.
pub fn kalman_rank(sys: &DiscretizedSystem) -> Result<(usize, bool)> {
    let n = sys.a.rows();
    let m = sys.b.cols();
    let mut block = DMatrix::zeros(n, n * m);
    let mut power = sys.b.matrix().clone();
    for k in 0..n {
        block.view_mut((0, k * m), (n, m)).copy_from(&power);
        power = sys.a.matrix() * power;
    }
    let rank = LinearOperator::new(block)?.svd()?.rank();
    Ok((rank, rank == n))
}

/// Whether `0` is interior to `∫₀¹ e^{At} B 𝒰 dt`, tested through its support
/// function `d -> ∫ σ_𝒰(Bᵀ e^{Aᵀt} d) dt` by the composite midpoint rule.
pub fn reachable_interior(
    sys: &DiscretizedSystem,
    control_set: &ConvexSet,
    directions: usize,
    quadrature_nodes: usize,
) -> Result<(bool, f64)> {
    if quadrature_nodes == 0 {
        return Err(Error::Contract("need at least one quadrature node".into()));
    }
    let n = sys.a.rows();
    let k = quadrature_nodes as f64;
    let kernels: Vec<DMatrix<f64>> =
        (0..quadrature_nodes).map(|j| (sys.a.matrix() * ((j as f64 + 0.5) / k)).exp().transpose()).collect();
    let bt = sys.b.matrix().transpose();
    let support = |d: &Vector| -> Result<f64> {
        let mut total = 0.0;
        for e in &kernels {
            total += control_set.support(&(&bt * (e * d)))?;
        }
        Ok(total / k)
    };
    interior_contains(support, &Vector::zeros(n), directions)
}

/// The discretized steering equation for one problem, factored once and
/// reused across endpoints.
#[derive(Clone)]
pub struct Steering {
    problem: ControlProblem,
    sys: DiscretizedSystem,
    equation: GeneralizedEquation,
    config: IterationConfig,
    reg: f64,
    lambda: f64,
}

impl fmt::Debug for Steering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Steering")
            .field("problem", &self.problem)
            .field("config", &self.config)
            .field("reg", &self.reg)
            .field("lambda", &self.lambda)
            .finish()
    }
}

#[derive(Clone, Copy)]
struct Layout {
    n: usize,
    m: usize,
    mesh: usize,
}

impl Layout {
    fn unknowns(&self) -> usize {
        self.mesh * (self.n + self.m)
    }

    fn residuals(&self) -> usize {
        (self.mesh + 1) * self.n
    }

    fn velocity<'a>(&self, z: &'a Vector, i: usize) -> nalgebra::DVectorView<'a, f64> {
        z.rows(i * self.n, self.n)
    }

    fn control<'a>(&self, z: &'a Vector, i: usize) -> nalgebra::DVectorView<'a, f64> {
        z.rows(self.mesh * self.n + i * self.m, self.m)
    }

    fn states(&self, z: &Vector) -> Vec<Vector> {
        let mut out = Vec::with_capacity(self.mesh + 1);
        let mut x = Vector::zeros(self.n);
        out.push(x.clone());
        for i in 0..self.mesh {
            x += self.velocity(z, i) / self.mesh as f64;
            out.push(x.clone());
        }
        out
    }

    /// Rows `A (x_i + x_{i+1})/2 + B u_i - v_i`, then `x_N`.
    fn operator(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<LinearOperator> {
        let (n, m, mesh) = (self.n, self.m, self.mesh);
        let h = 1.0 / mesh as f64;
        let mut l = DMatrix::zeros(self.residuals(), self.unknowns());
        let an = a * h;
        let half = a * (0.5 * h) - DMatrix::identity(n, n);
        for i in 0..mesh {
            for j in 0..i {
                l.view_mut((i * n, j * n), (n, n)).copy_from(&an);
            }
            l.view_mut((i * n, i * n), (n, n)).copy_from(&half);
            l.view_mut((i * n, mesh * n + i * m), (n, m)).copy_from(b);
        }
        for j in 0..mesh {
            l.view_mut((mesh * n, j * n), (n, n)).copy_from(&(DMatrix::identity(n, n) * h));
        }
        LinearOperator::new(l)
    }
}

impl Steering {
    pub fn new(problem: &ControlProblem, sys: &DiscretizedSystem) -> Result<Self> {
        if sys.mesh() != problem.mesh {
            return Err(Error::Contract("discretized system was built for another mesh".into()));
        }
        let layout = Layout { n: problem.state_dim(), m: problem.control_dim(), mesh: problem.mesh };
        let (a, b) = (sys.a.matrix().clone(), sys.b.matrix().clone());
        let solver = Arc::new(LeastNormSolver::new(layout.operator(&a, &b)?)?);
        if !solver.is_surjective() {
            return Err(Error::Regularity(
                "discretized steering operator is not onto; the linearization is not controllable".into(),
            ));
        }
        let reg = solver.reg();
        let total = layout.unknowns();
        let mut lifted = Vec::with_capacity(problem.mesh);
        for i in 0..problem.mesh {
            lifted.push(problem.control_set.embed(total, problem.mesh * layout.n + i * layout.m)?);
        }
        let lifted = merge_boxes(lifted)?;
        let finv = {
            let solver = solver.clone();
            Arc::new(move |w: &Vector| {
                let mut parts = vec![ConvexSet::Affine(AffineSet::from_solver(solver.clone(), w.clone())?)];
                parts.extend(lifted.iter().cloned());
                ConvexSet::intersection(parts)
            })
        };
        let g: Arc<dyn Fn(&Vector) -> Result<Vector> + Send + Sync> = if problem.dynamics.is_linear() {
            let r = layout.residuals();
            Arc::new(move |_: &Vector| Ok(Vector::zeros(r)))
        } else {
            let f = problem.dynamics.clone();
            Arc::new(move |z: &Vector| remainder(&*f, &layout, &a, &b, z))
        };
        let zero_x = Vector::zeros(total);
        let zero_y = Vector::zeros((problem.mesh + 1) * problem.state_dim());
        let linear = problem.dynamics.is_linear();
        let lambda_at = |r: f64| -> Result<f64> {
            if linear {
                Ok(0.0)
            } else {
                Ok(lip_estimate(&*g, &zero_x, r, 200, 0)?.value)
            }
        };
        let (radius, lambda, config) = match problem.radius {
            Some(r) => {
                let lambda = lambda_at(r)?;
                (r, lambda, IterationConfig::schedule(reg, lambda)?)
            }
            None => {
                let mut r = DEFAULT_RADIUS;
                loop {
                    let lambda = lambda_at(r)?;
                    match IterationConfig::schedule(reg, lambda) {
                        Ok(cfg) => break (r, lambda, cfg),
                        Err(e) if r < 1e-6 => return Err(e),
                        Err(_) => r /= 2.0,
                    }
                }
            }
        };
        let equation = GeneralizedEquation::new(finv, g, zero_x, zero_y, Radii::uniform(radius)?)?;
        Ok(Self { problem: problem.clone(), sys: sys.clone(), equation, config, reg, lambda })
    }

    pub fn with_config(mut self, config: IterationConfig) -> Result<Self> {
        config.validate()?;
        self.config = config;
        Ok(self)
    }

    pub fn config(&self) -> &IterationConfig {
        &self.config
    }

    /// `reg` of the discretized affine part.
    pub fn reg(&self) -> f64 {
        self.reg
    }

    /// Sampled Lipschitz modulus of the nonlinear remainder.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Locality radius `a = b = c` in use.
    pub fn radius(&self) -> f64 {
        self.equation.radii().a
    }

    pub fn tau(&self) -> Result<f64> {
        let r = self.equation.radii();
        compute_tau(&self.config, r.a, r.b)
    }

    pub fn equation(&self) -> &GeneralizedEquation {
        &self.equation
    }

    fn layout(&self) -> Layout {
        Layout { n: self.problem.state_dim(), m: self.problem.control_dim(), mesh: self.problem.mesh }
    }

    pub fn steer(&self, target: &Vector) -> std::result::Result<SteeringResult, SolveFailure> {
        let layout = self.layout();
        if target.len() != layout.n {
            return Err(Error::Shape(format!("target has dimension {}, state has {}", target.len(), layout.n)).into());
        }
        let mut y = Vector::zeros(layout.residuals());
        y.rows_mut(layout.mesh * layout.n, layout.n).copy_from(target);
        let (z, certificate) = solve(&self.equation, &self.config, &y).map_err(|mut e| {
            if let Error::Regularity(msg) = &e.error {
                e.error = Error::Regularity(format!("target is outside the certified neighbourhood: {msg}"));
            }
            e
        })?;
        let states = layout.states(&z);
        let controls: Vec<Vector> = (0..layout.mesh).map(|i| layout.control(&z, i).into_owned()).collect();
        for (i, u) in controls.iter().enumerate() {
            if !self.problem.control_set.contains(u, 1e-7)? {
                return Err(SolveFailure {
                    error: Error::Invariant(format!("control u_{i} left the control set")),
                    certificate: Some(certificate),
                });
            }
        }
        let f = &*self.problem.dynamics;
        let mut dynamics_residual: f64 = 0.0;
        let mut max_v: f64 = 0.0;
        let mut max_u: f64 = 0.0;
        for i in 0..layout.mesh {
            let avg = (f.eval(&states[i], &controls[i])? + f.eval(&states[i + 1], &controls[i])?) / 2.0;
            let v = layout.velocity(&z, i);
            dynamics_residual = dynamics_residual.max((v - avg).norm());
            max_v = max_v.max(v.norm());
            max_u = max_u.max(controls[i].norm());
        }
        let endpoint_error = (&states[layout.mesh] - target).norm();
        let norm_b = target.norm();
        let calm_ratio = if norm_b == 0.0 { 0.0 } else { (max_v + max_u) / norm_b };
        Ok(SteeringResult {
            times: self.sys.times.clone(),
            states,
            controls,
            endpoint_error,
            dynamics_residual,
            calm_ratio,
            certificate,
        })
    }
}

/// A single box for all lifted box constraints, so the projection stays
/// closed form.
fn merge_boxes(parts: Vec<ConvexSet>) -> Result<Vec<ConvexSet>> {
    let mut lower: Option<Vector> = None;
    let mut upper: Option<Vector> = None;
    let mut rest = Vec::new();
    for p in parts {
        match p {
            ConvexSet::Box { lower: l, upper: u } => {
                lower = Some(match lower {
                    None => l,
                    Some(acc) => acc.zip_map(&l, f64::max),
                });
                upper = Some(match upper {
                    None => u,
                    Some(acc) => acc.zip_map(&u, f64::min),
                });
            }
            ConvexSet::Intersection(inner) => rest.extend(merge_boxes(inner)?),
            other => rest.push(other),
        }
    }
    if let (Some(l), Some(u)) = (lower, upper) {
        rest.insert(0, ConvexSet::boxed(l, u)?);
    }
    Ok(rest)
}

/// Trapezoidal average of `f` minus its linearization, per interval; zero on
/// the endpoint rows.
fn remainder(f: &dyn Dynamics, layout: &Layout, a: &DMatrix<f64>, b: &DMatrix<f64>, z: &Vector) -> Result<Vector> {
    let states = layout.states(z);
    let mut out = Vector::zeros(layout.residuals());
    for i in 0..layout.mesh {
        let u = layout.control(z, i).into_owned();
        let avg = (f.eval(&states[i], &u)? + f.eval(&states[i + 1], &u)?) / 2.0;
        let lin = a * (&states[i] + &states[i + 1]) / 2.0 + b * &u;
        out.rows_mut(i * layout.n, layout.n).copy_from(&(avg - lin));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Oracle("dynamics returned a non-finite value".into()));
    }
    Ok(out)
}

/// Builds the steering equation and solves for one target.
pub fn steer(
    problem: &ControlProblem,
    sys: &DiscretizedSystem,
    target: &Vector,
) -> std::result::Result<SteeringResult, SolveFailure> {
    Steering::new(problem, sys)?.steer(target)
}

#[derive(Debug, Clone)]
pub struct SteeringResult {
    pub times: Vec<f64>,
    /// `N + 1` nodal states, `states[0] = 0`.
    pub states: Vec<Vector>,
    /// Piecewise-constant control on each of the `N` intervals.
    pub controls: Vec<Vector>,
    pub endpoint_error: f64,
    /// `max_i |v_i - (f(x_i, u_i) + f(x_{i+1}, u_i))/2|`.
    pub dynamics_residual: f64,
    /// `(max_i |v_i| + max_i |u_i|) / |b|`, zero for `b = 0`.
    pub calm_ratio: f64,
    pub certificate: IterationCertificate,
}

impl SteeringResult {
    pub fn csv_header(&self) -> Vec<String> {
        let n = self.states[0].len();
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut h = vec!["t".to_string()];
        h.extend((0..n).map(|i| format!("x{i}")));
        h.extend((0..m).map(|i| format!("u{i}")));
        h
    }

    /// One row per node; the control columns of the last node are empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.csv_header()).map_err(csv_err)?;
        let m = self.controls.first().map_or(0, |u| u.len());
        for (i, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![format_real(*t)];
            row.extend(x.iter().map(|&v| format_real(v)));
            match self.controls.get(i) {
                Some(u) => row.extend(u.iter().map(|&v| format_real(v))),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Contract(format!("csv: {e}")))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Contract(format!("csv: {e}"))
}

/// Parses a trajectory table written by [`SteeringResult::to_csv`] into
/// `(t, x, u)` rows; `u` is `None` on the last node.
pub fn trajectory_from_csv(text: &str, state_dim: usize) -> Result<Vec<(f64, Vec<f64>, Option<Vec<f64>>)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Contract(format!("csv field {s:?}: {e}")));
        let t = parse(rec.get(0).unwrap_or(""))?;
        let x = (1..=state_dim).map(|k| parse(rec.get(k).unwrap_or(""))).collect::<Result<Vec<_>>>()?;
        let rest: Vec<&str> = rec.iter().skip(state_dim + 1).collect();
        let u = if rest.iter().all(|s| s.is_empty()) {
            None
        } else {
            Some(rest.iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?)
        };
        out.push((t, x, u));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CalmSweepRow {
    pub target: Vector,
    pub outcome: std::result::Result<SteeringResult, SolveFailure>,
}

#[derive(Debug, Clone)]
pub struct CalmSweepReport {
    pub rows: Vec<CalmSweepRow>,
    pub max_calm_ratio: f64,
    /// Largest `(max|v - v'| + max|u - u'|) / |b - b'|` over adjacent
    /// successful rows; `None` with fewer than two.
    pub max_continuity_ratio: Option<f64>,
}

/// Steers every grid target in parallel; failures are recorded per row.
pub fn calm_sweep(steering: &Steering, grid: &[Vector]) -> CalmSweepReport {
    let rows: Vec<CalmSweepRow> =
        grid.par_iter().map(|b| CalmSweepRow { target: b.clone(), outcome: steering.steer(b) }).collect();
    let max_calm_ratio = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).map(|s| s.calm_ratio).fold(0.0, f64::max);
    let mut max_continuity_ratio: Option<f64> = None;
    for pair in rows.windows(2) {
        if let (Ok(p), Ok(q)) = (&pair[0].outcome, &pair[1].outcome) {
            let db = (&pair[0].target - &pair[1].target).norm();
            if db == 0.0 {
                continue;
            }
            let dv = velocities(p).iter().zip(velocities(q)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            let du = p.controls.iter().zip(&q.controls).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            let r = (dv + du) / db;
            max_continuity_ratio = Some(max_continuity_ratio.map_or(r, |m| m.max(r)));
        }
    }
    CalmSweepReport { rows, max_calm_ratio, max_continuity_ratio }
}

fn velocities(s: &SteeringResult) -> Vec<Vector> {
    let mesh = s.controls.len() as f64;
    s.states.windows(2).map(|w| (&w[1] - &w[0]) * mesh).collect()
}

/// `x(1)` of the trapezoidal scheme
/// `x_{i+1} = x_i + (f(x_i, u_i) + f(x_{i+1}, u_i)) / (2N)` from `x_0 = 0`,
/// with `N = controls.len()`; each implicit step is solved by Newton's method.
pub fn endpoint_map(dynamics: &dyn Dynamics, controls: &[Vector]) -> Result<Vector> {
    let n = dynamics.state_dim();
    let mesh = controls.len();
    if mesh == 0 {
        return Err(Error::Contract("need at least one interval".into()));
    }
    let h = 1.0 / mesh as f64;
    let mut x = Vector::zeros(n);
    for u in controls {
        let fx = dynamics.eval(&x, u)?;
        let mut next = &x + &fx * h;
        let mut converged = false;
        for _ in 0..50 {
            let r = &next - &x - (&fx + dynamics.eval(&next, u)?) * (0.5 * h);
            let (ja, _) = jacobians(dynamics, &next, u)?;
            let jac = DMatrix::identity(n, n) - ja * (0.5 * h);
            let step = jac
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::NumericBreakdown("singular Newton matrix in the trapezoidal step".into()))?;
            next -= &step;
            if step.norm() <= 1e-14 * (1.0 + next.norm()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NumericBreakdown("Newton iteration for the trapezoidal step did not converge".into()));
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::vector;
    use approx::assert_abs_diff_eq;

    fn unit_box() -> ConvexSet {
        ConvexSet::cube(1, -1.0, 1.0).unwrap()
    }

    fn double_integrator() -> ControlProblem {
        ControlProblem::new(Arc::new(DoubleIntegrator), unit_box(), DEFAULT_MESH).unwrap()
    }

    #[test]
    fn linearize_examples() {
        let p = ControlProblem::new(Arc::new(ScalarIntegrator), unit_box(), 8).unwrap();
        let s = linearize(&p).unwrap();
        assert_eq!(s.a.matrix()[(0, 0)], 0.0);
        assert_eq!(s.b.matrix()[(0, 0)], 1.0);

        let s = linearize(&double_integrator()).unwrap();
        assert_eq!(s.a.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(s.b.matrix(), &DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        // e^{A/N} = I + A/N for nilpotent A.
        assert_abs_diff_eq!(s.transition, DMatrix::from_row_slice(2, 2, &[1.0, 1.0 / 64.0, 0.0, 1.0]), epsilon = 1e-15);

        let p = ControlProblem::new(Arc::new(SineControl), unit_box(), 8).unwrap();
        let s = linearize(&p).unwrap();
        assert_abs_diff_eq!(s.b.matrix()[(0, 0)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn problem_invariants_are_checked() {
        let shifted = ConvexSet::boxed(vector(&[0.5]), vector(&[1.0])).unwrap();
        assert!(ControlProblem::new(Arc::new(DoubleIntegrator), shifted, 8).is_err());
        let ball = ConvexSet::ball(vector(&[0.0]), 1.0).unwrap();
        assert!(ControlProblem::new(Arc::new(DoubleIntegrator), ball, 8).is_err());
        let unbounded = ConvexSet::boxed(vector(&[-1.0]), vector(&[f64::INFINITY])).unwrap();
        assert!(ControlProblem::new(Arc::new(DoubleIntegrator), unbounded, 8).is_err());
        let offset = LinearDynamics::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(ControlProblem::new(Arc::new(offset), unit_box(), 8).is_ok());
    }

    #[test]
    fn kalman_examples() {
        let s = linearize(&double_integrator()).unwrap();
        assert_eq!(kalman_rank(&s).unwrap(), (2, true));

        let zero = LinearDynamics::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let s = linearize(&ControlProblem::new(Arc::new(zero), unit_box(), 4).unwrap()).unwrap();
        assert_eq!(kalman_rank(&s).unwrap(), (0, false));

        let diag = LinearDynamics::new(DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        let s = linearize(&ControlProblem::new(Arc::new(diag), unit_box(), 4).unwrap()).unwrap();
        assert_eq!(kalman_rank(&s).unwrap(), (1, false));
    }

    #[test]
    fn reachable_examples() {
        let s = linearize(&double_integrator()).unwrap();
        let (ok, margin) = reachable_interior(&s, &unit_box(), 64, DEFAULT_QUADRATURE_NODES).unwrap();
        assert!(ok && margin > 0.0);

        let zero = LinearDynamics::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let s = linearize(&ControlProblem::new(Arc::new(zero), unit_box(), 4).unwrap()).unwrap();
        let (ok, margin) = reachable_interior(&s, &unit_box(), 16, 32).unwrap();
        assert!(!ok);
        assert_eq!(margin, 0.0);

        let point = ConvexSet::cube(1, 0.0, 0.0).unwrap();
        let s = linearize(&ControlProblem::new(Arc::new(DoubleIntegrator), point.clone(), 4).unwrap()).unwrap();
        assert!(!reachable_interior(&s, &point, 16, 32).unwrap().0);
    }

    #[test]
    fn steer_zero_target() {
        let p = double_integrator();
        let s = linearize(&p).unwrap();
        let r = steer(&p, &s, &vector(&[0.0, 0.0])).unwrap();
        assert!(r.states.iter().all(|x| x.norm() == 0.0));
        assert!(r.controls.iter().all(|u| u.norm() == 0.0));
        assert_eq!(r.calm_ratio, 0.0);
    }

    #[test]
    fn steer_double_integrator() {
        let p = double_integrator();
        let s = linearize(&p).unwrap();
        let st = Steering::new(&p, &s).unwrap();
        assert_eq!(st.lambda(), 0.0);
        let r = st.steer(&vector(&[0.1, 0.0])).unwrap();
        assert!(r.endpoint_error <= 1e-6, "{}", r.endpoint_error);
        assert!(r.dynamics_residual <= 1e-8);
        assert!(r.controls.iter().all(|u| u[0].abs() <= 1.0 + 1e-7));
        assert_eq!(r.states[0], vector(&[0.0, 0.0]));
        assert_eq!(r.certificate.iterate_count, 1);
        // Replay the controls through the scheme itself.
        let end = endpoint_map(&DoubleIntegrator, &r.controls).unwrap();
        assert_abs_diff_eq!(end, vector(&[0.1, 0.0]), epsilon = 1e-9);
    }

    #[test]
    fn steer_pendulum() {
        let p = ControlProblem::new(Arc::new(Pendulum), unit_box(), DEFAULT_MESH).unwrap();
        let s = linearize(&p).unwrap();
        let r = steer(&p, &s, &vector(&[0.05, 0.0])).unwrap();
        assert!(r.endpoint_error <= 1e-5);
        let end = endpoint_map(&Pendulum, &r.controls).unwrap();
        assert_abs_diff_eq!(end, vector(&[0.05, 0.0]), epsilon = 1e-5);
    }

    #[test]
    fn calm_sweep_examples() {
        let p = double_integrator();
        let s = linearize(&p).unwrap();
        let st = Steering::new(&p, &s).unwrap();
        let single = calm_sweep(&st, &[vector(&[0.0, 0.0])]);
        assert_eq!(single.rows.len(), 1);
        assert!(single.max_continuity_ratio.is_none());

        let tau = st.tau().unwrap();
        let far = calm_sweep(&st, &[vector(&[2.0 * tau, 0.0]), vector(&[0.01, 0.0])]);
        assert!(far.rows[0].outcome.is_err());
        assert!(far.rows[1].outcome.is_ok());
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let p = ControlProblem::new(Arc::new(DoubleIntegrator), unit_box(), 4).unwrap();
        let s = linearize(&p).unwrap();
        let r = steer(&p, &s, &vector(&[0.02, 0.01])).unwrap();
        let text = r.to_csv().unwrap();
        assert!(text.starts_with("t,x0,x1,u0\n"));
        let rows = trajectory_from_csv(&text, 2).unwrap();
        assert_eq!(rows.len(), 5);
        for (i, (t, x, u)) in rows.iter().enumerate() {
            assert_eq!(*t, r.times[i]);
            assert_eq!(x.as_slice(), r.states[i].as_slice());
            match u {
                Some(u) => assert_eq!(u.as_slice(), r.controls[i].as_slice()),
                None => assert_eq!(i, 4),
            }
        }
    }

    #[test]
    fn polynomial_dynamics_match_pendulum_linearization() {
        // ẋ₁ = x₂, ẋ₂ = -x₁ + x₁³/6 + u.
        let poly = PolynomialDynamics {
            state_dim: 2,
            control_dim: 1,
            rows: vec![
                vec![Monomial { coeff: 1.0, exponents: vec![0, 1, 0] }],
                vec![
                    Monomial { coeff: -1.0, exponents: vec![1, 0, 0] },
                    Monomial { coeff: 1.0 / 6.0, exponents: vec![3, 0, 0] },
                    Monomial { coeff: 1.0, exponents: vec![0, 0, 1] },
                ],
            ],
        };
        poly.validate().unwrap();
        assert!(!poly.is_linear());
        let (a, b) = poly.jacobians(&vector(&[0.5, 0.0]), &vector(&[0.0])).unwrap();
        assert_abs_diff_eq!(a[(1, 0)], -1.0 + 0.125, epsilon = 1e-15);
        assert_eq!(b[(1, 0)], 1.0);
        let p = ControlProblem::new(Arc::new(poly), unit_box(), 8).unwrap();
        let s = linearize(&p).unwrap();
        let pend = linearize(&ControlProblem::new(Arc::new(Pendulum), unit_box(), 8).unwrap()).unwrap();
        assert_eq!(s.a.matrix(), pend.a.matrix());
    }

    #[test]
    fn endpoint_map_of_integrator() {
        let controls = vec![vector(&[1.0]); 10];
        let end = endpoint_map(&DoubleIntegrator, &controls).unwrap();
        assert_abs_diff_eq!(end, vector(&[0.5, 1.0]), epsilon = 1e-14);
    }
}
