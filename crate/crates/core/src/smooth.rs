//! Single-valued smooth maps `f: R^n -> R^m` with a surjective derivative at
//! `x̄`: the split `f = B(· - x̄) + (f - B(· - x̄))`, the resulting least-norm
//! Gauss–Newton selection, and checks of its derivative and calmness
//! constant.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::convexsets::{AffineSet, ConvexSet};
use crate::error::{Error, Result};
use crate::moduli::{lip_estimate, reg_linear, sampled_reg_linear, ModulusEstimate};
use crate::selection::{
    compute_tau, solve, GeneralizedEquation, IterationCertificate, IterationConfig, Radii, SolveFailure,
};
use crate::spaces::{
    central_difference_jacobian, is_surjective, jacobian_step, operator_norm, pinv_apply, LeastNormSolver,
    LinearOperator, Vector, SURJECTIVITY_THRESHOLD,
};

pub type SmoothMap = Arc<dyn Fn(&Vector) -> Result<Vector> + Send + Sync>;
pub type JacobianMap = Arc<dyn Fn(&Vector) -> Result<LinearOperator> + Send + Sync>;

/// Radii at which the remainder's Lipschitz modulus is reported.
pub const REMAINDER_RADII: [f64; 3] = [0.1, 0.01, 0.001];

#[derive(Clone)]
pub struct SmoothProblem {
    f: SmoothMap,
    jacobian: Option<JacobianMap>,
    base_x: Vector,
    base_y: Vector,
    /// Common locality radius `a = b = c`; `None` halves from 1 until the
    /// default schedule admits the sampled remainder modulus.
    radius: Option<f64>,
    linear: bool,
    samples: usize,
    seed: u64,
}

impl std::fmt::Debug for SmoothProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothProblem")
            .field("base_x", &self.base_x.as_slice())
            .field("base_y", &self.base_y.as_slice())
            .field("radius", &self.radius)
            .field("linear", &self.linear)
            .finish()
    }
}

impl SmoothProblem {
    pub fn new(f: SmoothMap, base_x: Vector) -> Result<Self> {
        let base_y = f(&base_x)?;
        let p = Self { f, jacobian: None, base_x, base_y, radius: None, linear: false, samples: 400, seed: 0 };
        p.check()?;
        Ok(p)
    }

    /// `f(x) = B x`, with the exact Jacobian and a zero remainder.
    pub fn linear(b: LinearOperator, base_x: Vector) -> Result<Self> {
        let m = b.clone();
        let j = b.clone();
        let f: SmoothMap = Arc::new(move |x: &Vector| m.apply(x));
        let base_y = b.apply(&base_x)?;
        let p = Self {
            f,
            jacobian: Some(Arc::new(move |_: &Vector| Ok(j.clone()))),
            base_x,
            base_y,
            radius: None,
            linear: true,
            samples: 400,
            seed: 0,
        };
        p.check()?;
        Ok(p)
    }

    pub fn with_jacobian(mut self, j: JacobianMap) -> Result<Self> {
        self.jacobian = Some(j);
        self.check()?;
        Ok(self)
    }

    pub fn with_radius(mut self, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Contract(format!("radius must be positive, got {r}")));
        }
        self.radius = Some(r);
        Ok(self)
    }

    /// Sampling budget and seed for the remainder's Lipschitz estimates.
    pub fn with_sampling(mut self, samples: usize, seed: u64) -> Self {
        self.samples = samples.max(1);
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<()> {
        let b = self.jacobian_at(&self.base_x)?;
        if b.rows() > b.cols() {
            return Err(Error::Shape(format!("f maps R^{} to R^{}; need m <= n", b.cols(), b.rows())));
        }
        if b.cols() != self.base_x.len() || b.rows() != self.base_y.len() {
            return Err(Error::Shape("Jacobian shape does not match f".into()));
        }
        if !is_surjective(&b)? {
            return Err(Error::Regularity("Jacobian at the base point is not surjective".into()));
        }
        Ok(())
    }

    pub fn f(&self) -> &SmoothMap {
        &self.f
    }

    pub fn base_x(&self) -> &Vector {
        &self.base_x
    }

    pub fn base_y(&self) -> &Vector {
        &self.base_y
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    pub fn is_linear(&self) -> bool {
        self.linear
    }

    /// Analytic Jacobian if supplied, else central differences with step
    /// `1e-6 (1 + |x|)`.
    pub fn jacobian_at(&self, x: &Vector) -> Result<LinearOperator> {
        match &self.jacobian {
            Some(j) => j(x),
            None => central_difference_jacobian(&*self.f, x, jacobian_step(x)),
        }
    }
}

/// The generalized equation `y ∈ G(x) + F(x)` with `F = B(· - x̄)` and
/// `G = f - F`, plus the constants chosen for it.
#[derive(Clone)]
pub struct SmoothSplit {
    pub equation: GeneralizedEquation,
    pub jacobian: LinearOperator,
    pub reg: f64,
    /// Sampled `lip` of the remainder at each of [`REMAINDER_RADII`] and at
    /// the locality radius (last entry).
    pub remainder_lip: Vec<ModulusEstimate>,
    pub config: IterationConfig,
    f: SmoothMap,
}

impl std::fmt::Debug for SmoothSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothSplit")
            .field("jacobian", &self.jacobian)
            .field("reg", &self.reg)
            .field("remainder_lip", &self.remainder_lip)
            .field("config", &self.config)
            .finish()
    }
}

pub fn split(problem: &SmoothProblem) -> Result<SmoothSplit> {
    let b = problem.jacobian_at(&problem.base_x)?;
    let solver = Arc::new(LeastNormSolver::new(b.clone())?);
    if !solver.is_surjective() {
        return Err(Error::Regularity("Jacobian at the base point is not surjective".into()));
    }
    let reg = solver.reg();
    let shift = b.apply(&problem.base_x)?;
    let finv = {
        let solver = solver.clone();
        Arc::new(move |w: &Vector| {
            if w.len() != shift.len() {
                return Err(Error::Shape("right-hand side has the wrong dimension".into()));
            }
            Ok(ConvexSet::Affine(AffineSet::from_solver(solver.clone(), w + &shift)?))
        })
    };
    let g: Arc<dyn Fn(&Vector) -> Result<Vector> + Send + Sync> = if problem.linear {
        let c = problem.base_y.clone();
        Arc::new(move |_: &Vector| Ok(c.clone()))
    } else {
        let f = problem.f.clone();
        let b = b.clone();
        let x0 = problem.base_x.clone();
        Arc::new(move |x: &Vector| Ok(f(x)? - b.apply(&(x - &x0))?))
    };
    let remainder = |radius: f64| -> Result<Vec<ModulusEstimate>> {
        REMAINDER_RADII
            .iter()
            .copied()
            .chain([radius])
            .map(|r| lip_estimate(&*g, &problem.base_x, r, problem.samples, problem.seed))
            .collect()
    };
    let (r, remainder_lip, config) = match problem.radius {
        Some(r) => {
            let est = remainder(r)?;
            let cfg = IterationConfig::schedule(reg, est.last().expect("nonempty").value)?;
            (r, est, cfg)
        }
        None => {
            let mut r = 1.0;
            loop {
                let est = remainder(r)?;
                match IterationConfig::schedule(reg, est.last().expect("nonempty").value) {
                    Ok(cfg) => break (r, est, cfg),
                    Err(e) if r < 1e-6 => return Err(e),
                    Err(_) => r /= 2.0,
                }
            }
        }
    };
    let m = problem.base_y.len();
    let equation = GeneralizedEquation::new(finv, g, problem.base_x.clone(), Vector::zeros(m), Radii::uniform(r)?)?;
    Ok(SmoothSplit { equation, jacobian: b, reg, remainder_lip, config, f: problem.f.clone() })
}

impl SmoothSplit {
    /// Locality radius `a = b = c` the split was built with.
    pub fn radius(&self) -> f64 {
        self.equation.radii().a
    }

    pub fn tau(&self) -> Result<f64> {
        let r = self.equation.radii();
        compute_tau(&self.config, r.a, r.b)
    }

    /// `x(y)` with `f(x(y)) = y`, verified to `1e-8 (1 + |y|)`.
    pub fn select(&self, y: &Vector) -> std::result::Result<(Vector, IterationCertificate), SolveFailure> {
        self.select_with(&self.config, y)
    }

    pub fn select_with(
        &self,
        cfg: &IterationConfig,
        y: &Vector,
    ) -> std::result::Result<(Vector, IterationCertificate), SolveFailure> {
        let (x, cert) = solve(&self.equation, cfg, y)?;
        let fx = (self.f)(&x)?;
        let err = (fx - y).norm();
        if err > 1e-8 * (1.0 + y.norm()) {
            return Err(SolveFailure {
                error: Error::Invariant(format!("selection misses f(x) = y by {err:e}")),
                certificate: Some(cert),
            });
        }
        Ok((x, cert))
    }
}

/// Splits and solves in one call.
pub fn smooth_selection(
    problem: &SmoothProblem,
    y: &Vector,
) -> std::result::Result<(Vector, IterationCertificate), SolveFailure> {
    split(problem)?.select(y)
}

#[derive(Debug, Clone)]
pub struct DerivativeCheck {
    /// Central differences of `y -> x(y)` at `ȳ`, an `n × m` matrix.
    pub j_fd: DMatrix<f64>,
    /// `|B J_fd - I|`.
    pub right_inverse_error: f64,
    /// `|J_fd - B^T (B B^T)^{-1}|`.
    pub pinv_error: f64,
    pub deviation: f64,
    pub step: f64,
}

/// Finite-difference derivative of the selection at `ȳ` against the
/// minimum-norm right inverse of `B`.
pub fn derivative_check(s: &SmoothSplit) -> Result<DerivativeCheck> {
    let y0 = s.equation.reference_value();
    let h = 1e-5 * (1.0 + y0.norm());
    let tau = s.tau()?;
    if h > tau {
        return Err(Error::Locality(format!("stencil step {h:e} exceeds tau = {tau:e}")));
    }
    let cfg = s.config.with_tol(s.config.tol.min(1e-12))?;
    let b = &s.jacobian;
    let (m, n) = (b.rows(), b.cols());
    let mut j_fd = DMatrix::zeros(n, m);
    for k in 0..m {
        let mut yp = y0.clone();
        let mut ym = y0.clone();
        yp[k] += h;
        ym[k] -= h;
        let (xp, _) = s.select_with(&cfg, &yp)?;
        let (xm, _) = s.select_with(&cfg, &ym)?;
        j_fd.set_column(k, &((xp - xm) / (2.0 * h)));
    }
    let mut pinv = DMatrix::zeros(n, m);
    for k in 0..m {
        let mut e = Vector::zeros(m);
        e[k] = 1.0;
        pinv.set_column(k, &pinv_apply(b, &e)?);
    }
    let right_inverse_error = operator_norm(&LinearOperator::new(b.matrix() * &j_fd - DMatrix::identity(m, m))?)?;
    let pinv_error = operator_norm(&LinearOperator::new(&j_fd - pinv)?)?;
    Ok(DerivativeCheck {
        j_fd,
        right_inverse_error,
        pinv_error,
        deviation: right_inverse_error.max(pinv_error),
        step: h,
    })
}

/// `[[I_n, B^T], [B, 0]]` and whether it is invertible by the
/// relative singular value threshold.
pub fn augmented_jacobian(b: &LinearOperator) -> Result<(LinearOperator, bool)> {
    let (m, n) = (b.rows(), b.cols());
    let mut j = DMatrix::zeros(n + m, n + m);
    j.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    j.view_mut((0, n), (n, m)).copy_from(&b.matrix().transpose());
    j.view_mut((n, 0), (m, n)).copy_from(b.matrix());
    let op = LinearOperator::new(j)?;
    let svd = op.svd()?;
    let s = svd.singular_values();
    let smallest = s.iter().copied().fold(f64::INFINITY, f64::min);
    let verdict = smallest > SURJECTIVITY_THRESHOLD * svd.largest();
    Ok((op, verdict))
}

/// `2 reg B = 2 / sigma_min`, `+inf` when `B` is not onto.
pub fn calm_bound_linear(b: &LinearOperator) -> Result<f64> {
    Ok(2.0 * reg_linear(b)?)
}

/// Twice the sampled supremum of `|least_norm_solve(B, r)|` over unit `r`.
pub fn calm_bound_sampled(b: &LinearOperator, samples: usize, seed: u64) -> Result<f64> {
    Ok(2.0 * sampled_reg_linear(b, samples, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::vector;
    use approx::assert_abs_diff_eq;

    fn wavy() -> SmoothProblem {
        SmoothProblem::new(Arc::new(|x: &Vector| Ok(vector(&[x[0] + x[1] + 0.05 * x[0].sin()]))), vector(&[0.0, 0.0]))
            .unwrap()
    }

    #[test]
    fn split_of_linear_map_has_constant_remainder() {
        let b = LinearOperator::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, -1.0]]).unwrap();
        let s = split(&SmoothProblem::linear(b, vector(&[0.1, 0.2, 0.3])).unwrap()).unwrap();
        assert!(s.remainder_lip.iter().all(|e| e.value == 0.0));
        assert_eq!(s.config.lambda, 0.0);
    }

    #[test]
    fn remainder_lip_of_quadratic() {
        let p = SmoothProblem::new(Arc::new(|x: &Vector| Ok(x.map(|v| v + v * v / 2.0))), vector(&[0.0])).unwrap();
        let s = split(&p).unwrap();
        // Grid oracle: sup |x + x'| / 2 over [-0.1, 0.1] is 0.1.
        let grid: Vec<f64> = (0..=200).map(|i| -0.1 + 0.2 * i as f64 / 200.0).collect();
        let oracle = grid.iter().flat_map(|a| grid.iter().map(move |b| (a + b).abs() / 2.0)).fold(0.0, f64::max);
        assert_abs_diff_eq!(s.remainder_lip[0].value, oracle, epsilon = 5e-3);
        assert!(s.remainder_lip[0].value <= oracle + 1e-9);
        assert!(s.remainder_lip[1].value < s.remainder_lip[0].value);
        assert!(s.remainder_lip[2].value < s.remainder_lip[1].value);
    }

    #[test]
    fn inverse_image_of_sum_is_a_line() {
        let p = SmoothProblem::new(Arc::new(|x: &Vector| Ok(vector(&[x[0] + x[1]]))), vector(&[0.0, 0.0])).unwrap();
        let s = split(&p).unwrap();
        let line = (s.equation.finv())(&vector(&[0.7])).unwrap();
        assert!(line.contains(&vector(&[0.7, 0.0]), 1e-12).unwrap());
        assert!(line.contains(&vector(&[0.2, 0.5]), 1e-12).unwrap());
        assert!(!line.contains(&vector(&[0.0, 0.0]), 1e-6).unwrap());
    }

    #[test]
    fn selection_examples() {
        let p = wavy();
        let (x, _) = smooth_selection(&p, &vector(&[0.0])).unwrap();
        assert_eq!(x, vector(&[0.0, 0.0]));

        let (x, cert) = smooth_selection(&p, &vector(&[0.1])).unwrap();
        assert!((x[0] + x[1] + 0.05 * x[0].sin() - 0.1).abs() <= 1e-8);
        assert!(x.norm() <= cert.gamma * 0.1);

        // Bisection oracle along the least-norm ray s -> s (1.05, 1).
        let f = |s: f64| 1.05 * s + s + 0.05 * (1.05 * s).sin() - 0.1;
        let (mut lo, mut hi) = (0.0, 0.1);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert_abs_diff_eq!(x, vector(&[1.05 * lo, lo]), epsilon = 1e-8);

        let two = SmoothProblem::linear(LinearOperator::from_rows(&[vec![2.0]]).unwrap(), vector(&[0.0])).unwrap();
        let (x, _) = smooth_selection(&two, &vector(&[0.2])).unwrap();
        assert_abs_diff_eq!(x[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn non_surjective_jacobian_is_rejected() {
        let p = SmoothProblem::new(Arc::new(|x: &Vector| Ok(vector(&[x[0] * x[0]]))), vector(&[0.0]));
        assert!(matches!(p, Err(Error::Regularity(_))));
    }

    #[test]
    fn derivative_check_examples() {
        let b = LinearOperator::from_rows(&[vec![1.0, 0.5, -1.0], vec![0.0, 2.0, 1.0]]).unwrap();
        let d =
            derivative_check(&split(&SmoothProblem::linear(b, vector(&[0.0, 0.0, 0.0])).unwrap()).unwrap()).unwrap();
        assert!(d.deviation <= 1e-8, "{}", d.deviation);

        let two = SmoothProblem::linear(LinearOperator::from_rows(&[vec![2.0]]).unwrap(), vector(&[0.0])).unwrap();
        let d = derivative_check(&split(&two).unwrap()).unwrap();
        assert_abs_diff_eq!(d.j_fd[(0, 0)], 0.5, epsilon = 1e-9);

        let d = derivative_check(&split(&wavy()).unwrap()).unwrap();
        let scale = 1.05f64.powi(2) + 1.0;
        assert_abs_diff_eq!(d.j_fd[(0, 0)], 1.05 / scale, epsilon = 1e-4);
        assert_abs_diff_eq!(d.j_fd[(1, 0)], 1.0 / scale, epsilon = 1e-4);
        assert!(d.deviation <= 1e-4);
    }

    #[test]
    fn derivative_check_needs_room() {
        let p = wavy().with_radius(1e-5).unwrap();
        let s = split(&p).unwrap();
        assert!(matches!(derivative_check(&s), Err(Error::Locality(_))));
    }

    #[test]
    fn augmented_examples() {
        let (j, ok) = augmented_jacobian(&LinearOperator::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        assert_eq!(j.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]));
        assert!(ok);
        let (j, ok) = augmented_jacobian(&LinearOperator::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        assert_abs_diff_eq!(j.matrix().determinant(), -1.0, epsilon = 1e-12);
        assert!(ok);
        let (_, ok) = augmented_jacobian(&LinearOperator::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert!(!ok);
    }

    #[test]
    fn calm_bound_examples() {
        assert_abs_diff_eq!(calm_bound_linear(&LinearOperator::identity(3)).unwrap(), 2.0, epsilon = 1e-14);
        let d = LinearOperator::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]).unwrap();
        assert_abs_diff_eq!(calm_bound_linear(&d).unwrap(), 4.0, epsilon = 1e-12);
        let r = LinearOperator::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(calm_bound_linear(&r).unwrap(), 2f64.sqrt(), epsilon = 1e-14);
        let sampled = calm_bound_sampled(&d, 10_000, 1).unwrap();
        assert!((sampled - 4.0).abs() <= 4.0 * 1e-3);
        let singular = LinearOperator::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(calm_bound_linear(&singular).unwrap(), f64::INFINITY);
    }
}
