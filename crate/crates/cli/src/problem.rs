//! Problem files: a versioned JSON document tagged by `kind`.

use std::sync::Arc;

use metreg::control::{fixture, ControlProblem, Dynamics, Monomial, PolynomialDynamics, FIXTURE_NAMES};
use metreg::convexsets::{AffineSet, ConvexSet, ConvexSetSpec};
use metreg::moduli::{counterexample_forward, lip_estimate, reg_linear, ForwardOracle, SampledMapping};
use metreg::selection::{GeneralizedEquation, ImplicitEquation, IterationConfig, Perturbation, Radii, SetMap};
use metreg::smooth::{SmoothMap, SmoothProblem};
use metreg::spaces::{LeastNormSolver, LinearOperator, Vector};
use metreg::{Error, Result};
use serde::Deserialize;

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemFile {
    Linear(LinearSpec),
    Smooth(SmoothSpec),
    Generalized(GeneralizedSpec),
    Control(ControlSpec),
    Sampled(SampledSpec),
}

/// `F(x) = B x` near `x̄`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub version: u32,
    pub matrix: Vec<Vec<f64>>,
    pub base_x: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub seed: Option<u64>,
}

/// `f(x) = y` for a polynomial map `f`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothSpec {
    pub version: u32,
    pub map: PolynomialMap,
    pub base_x: Vec<f64>,
    pub radius: Option<f64>,
    pub seed: Option<u64>,
}

/// `y ∈ g(x) + B x` with `x` in an optional convex constraint set. With a
/// `parameter`, `g` takes `(x, p)` and the target is held at its base value.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizedSpec {
    pub version: u32,
    pub matrix: Vec<Vec<f64>>,
    pub perturbation: Option<PolynomialMap>,
    pub constraints: Option<ConvexSetSpec>,
    pub base_x: Vec<f64>,
    #[serde(default)]
    pub radii: RadiiSpec,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub parameter: Option<ParameterSpec>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiiSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for RadiiSpec {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, c: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub base: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub version: u32,
    pub dynamics: DynamicsSpec,
    pub control_set: ConvexSetSpec,
    pub mesh: Option<usize>,
    pub radius: Option<f64>,
    pub directions: Option<usize>,
    pub quadrature_nodes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DynamicsSpec {
    Fixture(String),
    Polynomial(PolynomialDynamics),
}

/// A set-valued map known only through its graph.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledSpec {
    pub version: u32,
    pub mapping: SampledMapSpec,
    pub base_x: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub graph_radius: Option<f64>,
    /// Truncation radius around `x̄` for the lower semicontinuity probe
    /// (default `a`).
    pub lsc_radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SampledMapSpec {
    /// Graph `x = y` together with the lines `x = y ± 1/k`, `k <= k_max`.
    Counterexample {
        k_max: usize,
    },
    Polynomial(PolynomialMap),
}

/// Each output coordinate as a sum of monomials in the `input_dim` inputs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialMap {
    pub input_dim: usize,
    pub rows: Vec<Vec<Monomial>>,
}

impl PolynomialMap {
    pub fn validate(&self, outputs: Option<usize>) -> Result<()> {
        if self.input_dim == 0 || self.rows.is_empty() {
            return Err(Error::Shape("polynomial map needs at least one input and one output".into()));
        }
        if let Some(m) = outputs {
            if self.rows.len() != m {
                return Err(Error::Shape(format!("polynomial map has {} rows, expected {m}", self.rows.len())));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            for t in row {
                if t.exponents.len() != self.input_dim {
                    return Err(Error::Shape(format!(
                        "map row {i}: exponent list must have length {}",
                        self.input_dim
                    )));
                }
                if !t.coeff.is_finite() {
                    return Err(Error::Contract(format!("map row {i}: coefficient is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Vector {
        Vector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| {
                row.iter()
                    .map(|t| t.exponents.iter().zip(x).fold(t.coeff, |acc, (&e, &v)| acc * v.powi(e as i32)))
                    .sum::<f64>()
            }),
        )
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != VERSION {
        return Err(Error::Contract(format!("unsupported version {v}; this build reads version {VERSION}")));
    }
    Ok(())
}

impl ProblemFile {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let file: ProblemFile = serde_json::from_str(text).map_err(|e| format!("problem file: {e}"))?;
        file.version_check().map_err(|e| e.to_string())?;
        Ok(file)
    }

    fn version_check(&self) -> Result<()> {
        check_version(match self {
            ProblemFile::Linear(s) => s.version,
            ProblemFile::Smooth(s) => s.version,
            ProblemFile::Generalized(s) => s.version,
            ProblemFile::Control(s) => s.version,
            ProblemFile::Sampled(s) => s.version,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProblemFile::Linear(_) => "linear",
            ProblemFile::Smooth(_) => "smooth",
            ProblemFile::Generalized(_) => "generalized",
            ProblemFile::Control(_) => "control",
            ProblemFile::Sampled(_) => "sampled",
        }
    }
}

pub fn to_vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

impl LinearSpec {
    pub fn operator(&self) -> Result<LinearOperator> {
        LinearOperator::from_rows(&self.matrix)
    }

    pub fn base_x(&self) -> Result<Vector> {
        let n = self.operator()?.cols();
        match &self.base_x {
            None => Ok(Vector::zeros(n)),
            Some(x) if x.len() == n => Ok(to_vector(x)),
            Some(x) => Err(Error::Shape(format!("base_x has length {}, matrix has {n} columns", x.len()))),
        }
    }

    pub fn problem(&self, samples: usize, seed: u64) -> Result<SmoothProblem> {
        let mut p = SmoothProblem::linear(self.operator()?, self.base_x()?)?.with_sampling(samples, seed);
        if let Some(r) = self.radius {
            p = p.with_radius(r)?;
        }
        Ok(p)
    }
}

impl SmoothSpec {
    pub fn map(&self) -> Result<SmoothMap> {
        self.map.validate(None)?;
        if self.base_x.len() != self.map.input_dim {
            return Err(Error::Shape(format!(
                "base_x has length {}, map takes {} inputs",
                self.base_x.len(),
                self.map.input_dim
            )));
        }
        let map = self.map.clone();
        Ok(Arc::new(move |x: &Vector| Ok(map.eval(x.as_slice()))))
    }

    pub fn problem(&self, samples: usize, seed: u64) -> Result<SmoothProblem> {
        let mut p = SmoothProblem::new(self.map()?, to_vector(&self.base_x))?.with_sampling(samples, seed);
        if let Some(r) = self.radius {
            p = p.with_radius(r)?;
        }
        Ok(p)
    }
}

/// A generalized equation together with the constants it will be solved with.
pub enum Built {
    Plain(GeneralizedEquation),
    Implicit(ImplicitEquation),
}

impl GeneralizedSpec {
    pub fn operator(&self) -> Result<LinearOperator> {
        LinearOperator::from_rows(&self.matrix)
    }

    pub fn dims(&self) -> Result<(usize, usize)> {
        let op = self.operator()?;
        Ok((op.rows(), op.cols()))
    }

    fn parameter_dim(&self) -> usize {
        self.parameter.as_ref().map_or(0, |p| p.base.len())
    }

    fn check(&self) -> Result<()> {
        let (m, n) = self.dims()?;
        if self.base_x.len() != n {
            return Err(Error::Shape(format!("base_x has length {}, matrix has {n} columns", self.base_x.len())));
        }
        if let Some(g) = &self.perturbation {
            g.validate(Some(m))?;
            if g.input_dim != n + self.parameter_dim() {
                return Err(Error::Shape(format!(
                    "perturbation takes {} inputs, expected {}",
                    g.input_dim,
                    n + self.parameter_dim()
                )));
            }
        } else if self.parameter.is_some() {
            return Err(Error::Contract("a parameter needs a perturbation that depends on it".into()));
        }
        Ok(())
    }

    pub fn constraints(&self) -> Result<Option<ConvexSet>> {
        let Some(spec) = &self.constraints else { return Ok(None) };
        let set = spec.build()?;
        let n = self.base_x.len();
        if set.dim() != n {
            return Err(Error::Shape(format!("constraint set lives in dimension {}, x in {n}", set.dim())));
        }
        Ok(Some(set))
    }

    pub fn finv(&self) -> Result<SetMap> {
        let solver = Arc::new(LeastNormSolver::new(self.operator()?)?);
        let constraints = self.constraints()?;
        Ok(Arc::new(move |w: &Vector| {
            let affine = ConvexSet::Affine(AffineSet::from_solver(solver.clone(), w.clone())?);
            match &constraints {
                None => Ok(affine),
                Some(c) => ConvexSet::intersection(vec![affine, c.clone()]),
            }
        }))
    }

    /// `x -> g(x, p̄)`, or `g(x)` without a parameter; zero when absent.
    pub fn g_at_base(&self) -> Result<Perturbation> {
        self.check()?;
        let (m, _) = self.dims()?;
        let p = self.parameter.as_ref().map(|p| p.base.clone()).unwrap_or_default();
        Ok(match self.perturbation.clone() {
            None => Arc::new(move |_: &Vector| Ok(Vector::zeros(m))),
            Some(g) => Arc::new(move |x: &Vector| {
                let mut args: Vec<f64> = x.iter().copied().collect();
                args.extend(&p);
                Ok(g.eval(&args))
            }),
        })
    }

    pub fn radii(&self) -> Result<Radii> {
        Radii::new(self.radii.a, self.radii.b, self.radii.c)
    }

    pub fn build(&self) -> Result<Built> {
        self.check()?;
        let x = to_vector(&self.base_x);
        let b = self.operator()?;
        let base_f = b.apply(&x)?;
        match (&self.parameter, &self.perturbation) {
            (Some(p), Some(g)) => {
                let g = g.clone();
                let pg = Arc::new(move |x: &Vector, p: &Vector| {
                    let args: Vec<f64> = x.iter().chain(p.iter()).copied().collect();
                    Ok(g.eval(&args))
                });
                let target = &base_f + pg(&x, &to_vector(&p.base))?;
                Ok(Built::Implicit(ImplicitEquation::new(
                    self.finv()?,
                    pg,
                    x,
                    to_vector(&p.base),
                    target,
                    self.radii()?,
                )?))
            }
            _ => Ok(Built::Plain(GeneralizedEquation::new(self.finv()?, self.g_at_base()?, x, base_f, self.radii()?)?)),
        }
    }

    /// Constants from the file, with the default schedule filling the gaps.
    pub fn config(&self, samples: usize, seed: u64) -> Result<IterationConfig> {
        let reg = reg_linear(&self.operator()?)?;
        let sampled = || -> Result<f64> {
            let g = self.g_at_base()?;
            Ok(lip_estimate(&*g, &to_vector(&self.base_x), self.radii.a, samples, seed)?.value)
        };
        match (self.kappa, self.lambda, self.alpha) {
            (None, None, None) => IterationConfig::schedule(reg, sampled()?)
                .map_err(|e| Error::Regularity(format!("default constants rejected: {e}"))),
            (kappa, lambda, alpha) => {
                let kappa = kappa.unwrap_or(1.1 * reg);
                let lambda = match lambda {
                    Some(l) => l,
                    None => 1.2 * sampled()?,
                };
                let alpha = alpha.unwrap_or(if lambda > 0.0 { (kappa + 1.0 / lambda) / 2.0 } else { 2.0 * kappa });
                IterationConfig::new(kappa, lambda, alpha)
            }
        }
    }
}

impl ControlSpec {
    pub fn dynamics(&self) -> Result<Arc<dyn Dynamics>> {
        match &self.dynamics {
            DynamicsSpec::Fixture(name) => fixture(name).ok_or_else(|| {
                Error::Contract(format!("unknown dynamics fixture {name:?}; known: {}", FIXTURE_NAMES.join(", ")))
            }),
            DynamicsSpec::Polynomial(p) => {
                p.validate()?;
                Ok(Arc::new(p.clone()))
            }
        }
    }

    pub fn problem(&self, mesh: Option<usize>) -> Result<ControlProblem> {
        let mesh = mesh.or(self.mesh).unwrap_or(metreg::control::DEFAULT_MESH);
        let mut p = ControlProblem::new(self.dynamics()?, self.control_set.build()?, mesh)?;
        if let Some(r) = self.radius {
            p = p.with_radius(r)?;
        }
        Ok(p)
    }
}

impl SampledSpec {
    pub fn mapping(&self) -> Result<SampledMapping> {
        let x = to_vector(&self.base_x);
        let map = match &self.mapping {
            SampledMapSpec::Counterexample { k_max } => {
                if self.base_x.len() != 1 {
                    return Err(Error::Shape("the counterexample mapping is scalar".into()));
                }
                if *k_max == 0 {
                    return Err(Error::Contract("k_max must be at least 1".into()));
                }
                let forward = counterexample_forward(*k_max);
                let y = forward(&x)[0].clone();
                SampledMapping::new(forward, x, y, self.a, self.b)?
            }
            SampledMapSpec::Polynomial(p) => {
                p.validate(None)?;
                if p.input_dim != self.base_x.len() {
                    return Err(Error::Shape("base_x does not match the map's input dimension".into()));
                }
                let p = p.clone();
                let forward: ForwardOracle = Arc::new(move |x: &Vector| vec![p.eval(x.as_slice())]);
                let y = forward(&x)[0].clone();
                SampledMapping::new(forward, x, y, self.a, self.b)?
            }
        };
        match self.graph_radius {
            Some(r) => map.with_graph_radius(r),
            None => Ok(map),
        }
    }
}
