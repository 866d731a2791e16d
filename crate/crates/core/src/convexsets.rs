//! Closed convex sets in `R^n`: membership, metric projection, support
//! functions, and ball truncations.
//!
//! Projections onto the atomic variants are closed form. Anything built from
//! more than one atom is projected with Dykstra's algorithm, which converges
//! to the nearest point of the intersection rather than to some feasible
//! point.

use std::sync::Arc;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{LeastNormSolver, LinearOperator, Vector};

/// Dykstra stops once a full round moves the iterate by at most this much.
pub const DYKSTRA_STEP_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_ROUNDS: usize = 10_000;
/// Largest distance to a member set accepted after Dykstra stops.
pub const DYKSTRA_GAP_TOL: f64 = 1e-7;

/// `{x : op x = rhs}` with a shared factorization of `op`.
#[derive(Debug, Clone)]
pub struct AffineSet {
    solver: Arc<LeastNormSolver>,
    rhs: Vector,
}

impl AffineSet {
    pub fn new(op: LinearOperator, rhs: Vector) -> Result<Self> {
        Self::from_solver(Arc::new(LeastNormSolver::new(op)?), rhs)
    }

    /// Reuses an existing factorization; the consistency check still runs.
    pub fn from_solver(solver: Arc<LeastNormSolver>, rhs: Vector) -> Result<Self> {
        let op = solver.operator();
        if rhs.len() != op.rows() {
            return Err(Error::Shape(format!(
                "affine set has {} equations but rhs has dimension {}",
                op.rows(),
                rhs.len()
            )));
        }
        if !solver.is_surjective() {
            let x0 = solver.pinv(&rhs)?;
            let residual = (op.matrix() * &x0 - &rhs).norm();
            if residual > 1e-9 * (1.0 + rhs.norm()) {
                return Err(Error::Contract(format!(
                    "affine set is empty: residual {residual:e} of the least-squares point"
                )));
            }
        }
        Ok(Self { solver, rhs })
    }

    pub fn solver(&self) -> &Arc<LeastNormSolver> {
        &self.solver
    }

    pub fn operator(&self) -> &LinearOperator {
        self.solver.operator()
    }

    pub fn rhs(&self) -> &Vector {
        &self.rhs
    }

    pub fn dim(&self) -> usize {
        self.operator().cols()
    }

    /// Minimum-norm member.
    pub fn least_norm_point(&self) -> Vector {
        self.solver.pinv(&self.rhs).expect("rhs dimension checked at construction")
    }

    fn project(&self, x: &Vector) -> Vector {
        let residual = self.operator().matrix() * x - &self.rhs;
        x - self.solver.pinv(&residual).expect("dimension checked")
    }

    /// Component of `d` orthogonal to the row space.
    fn kernel_component(&self, d: &Vector) -> Vector {
        let svd = self.solver.svd();
        let k = self.solver.rank();
        let vk = svd.v_t().rows(0, k);
        d - vk.transpose() * (vk * d)
    }
}

/// The halfspace `<normal, x> <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vector,
    pub offset: f64,
}

impl Halfspace {
    /// Signed violation divided by the normal's length.
    fn excess(&self, x: &Vector) -> f64 {
        (self.normal.dot(x) - self.offset) / self.normal.norm()
    }

    fn project(&self, x: &Vector) -> Vector {
        let viol = self.normal.dot(x) - self.offset;
        if viol <= 0.0 {
            x.clone()
        } else {
            x - &self.normal * (viol / self.normal.norm_squared())
        }
    }
}

#[derive(Debug, Clone)]
pub enum ConvexSet {
    Affine(AffineSet),
    /// Componentwise bounds; infinite bounds are allowed.
    Box {
        lower: Vector,
        upper: Vector,
    },
    Ball {
        center: Vector,
        radius: f64,
    },
    Halfspaces(Vec<Halfspace>),
    Intersection(Vec<ConvexSet>),
}

/// A set with a closed-form projection.
#[derive(Debug, Clone)]
enum Atom<'a> {
    Affine(&'a AffineSet),
    Box(&'a Vector, &'a Vector),
    Ball(&'a Vector, f64),
    Half(&'a Halfspace),
}

impl Atom<'_> {
    fn project(&self, x: &Vector) -> Vector {
        match self {
            Atom::Affine(a) => a.project(x),
            Atom::Box(lo, hi) => clamp(x, lo, hi),
            Atom::Ball(c, r) => project_ball(x, c, *r),
            Atom::Half(h) => h.project(x),
        }
    }

    fn distance(&self, x: &Vector) -> f64 {
        match self {
            Atom::Half(h) => h.excess(x).max(0.0),
            _ => (self.project(x) - x).norm(),
        }
    }
}

fn clamp(x: &Vector, lo: &Vector, hi: &Vector) -> Vector {
    Vector::from_iterator(x.len(), x.iter().zip(lo.iter().zip(hi.iter())).map(|(&v, (&l, &u))| v.clamp(l, u)))
}

fn project_ball(x: &Vector, c: &Vector, r: f64) -> Vector {
    let d = x - c;
    let n = d.norm();
    if n <= r {
        x.clone()
    } else {
        c + d * (r / n)
    }
}

fn check_dim(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("{what}: set has dimension {expected}, vector has {got}")));
    }
    Ok(())
}

impl ConvexSet {
    pub fn affine(op: LinearOperator, rhs: Vector) -> Result<Self> {
        Ok(Self::Affine(AffineSet::new(op, rhs)?))
    }

    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Shape("box bounds must have equal positive dimension".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u) || *l == f64::INFINITY || *u == f64::NEG_INFINITY) {
            return Err(Error::Contract("box requires lower <= upper componentwise".into()));
        }
        Ok(Self::Box { lower, upper })
    }

    /// The cube `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(Vector::from_element(n, lo), Vector::from_element(n, hi))
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::Shape("ball center has dimension 0".into()));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Contract(format!("ball radius must be finite and >= 0, got {radius}")));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn halfspaces(list: Vec<Halfspace>) -> Result<Self> {
        let Some(first) = list.first() else {
            return Err(Error::Contract("halfspace list is empty".into()));
        };
        let n = first.normal.len();
        for h in &list {
            check_dim(n, h.normal.len(), "halfspace normal")?;
            if h.normal.norm() == 0.0 || !h.offset.is_finite() {
                return Err(Error::Contract("halfspace needs a nonzero normal and finite offset".into()));
            }
        }
        Ok(Self::Halfspaces(list))
    }

    pub fn intersection(parts: Vec<ConvexSet>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Contract("intersection of an empty list".into()));
        };
        let n = first.dim();
        for p in &parts {
            check_dim(n, p.dim(), "intersection member")?;
        }
        Ok(Self::Intersection(parts))
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Affine(a) => a.dim(),
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Halfspaces(h) => h[0].normal.len(),
            ConvexSet::Intersection(p) => p[0].dim(),
        }
    }

    fn atoms(&self) -> Vec<Atom<'_>> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<Atom<'a>>) {
        match self {
            ConvexSet::Affine(a) => out.push(Atom::Affine(a)),
            ConvexSet::Box { lower, upper } => out.push(Atom::Box(lower, upper)),
            ConvexSet::Ball { center, radius } => out.push(Atom::Ball(center, *radius)),
            ConvexSet::Halfspaces(hs) => out.extend(hs.iter().map(Atom::Half)),
            ConvexSet::Intersection(parts) => parts.iter().for_each(|p| p.collect_atoms(out)),
        }
    }

    /// `d(x, set) <= tol`. Halfspace lists use the largest single-halfspace
    /// distance; intersections go through [`ConvexSet::project`].
    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool> {
        check_dim(self.dim(), x.len(), "contains")?;
        let atoms = self.atoms();
        if let ConvexSet::Halfspaces(_) = self {
            return Ok(atoms.iter().map(|a| a.distance(x)).fold(0.0, f64::max) <= tol);
        }
        if atoms.len() == 1 {
            return Ok(atoms[0].distance(x) <= tol);
        }
        match dykstra(&atoms, x) {
            Ok(p) => Ok((p - x).norm() <= tol),
            Err(Error::InfeasibilitySuspected { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Nearest point of the set.
    pub fn project(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len(), "project")?;
        let atoms = self.atoms();
        if atoms.len() == 1 {
            return Ok(atoms[0].project(x));
        }
        dykstra(&atoms, x)
    }

    /// Largest distance from `x` to any atom; zero iff `x` is a member.
    pub fn gap(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len(), "gap")?;
        Ok(self.atoms().iter().map(|a| a.distance(x)).fold(0.0, f64::max))
    }

    /// `sup { <d, x> : x in set }`; `+inf` when unbounded along `d` and
    /// `-inf` for an empty polyhedron.
    pub fn support(&self, d: &Vector) -> Result<f64> {
        check_dim(self.dim(), d.len(), "support")?;
        match self {
            ConvexSet::Box { lower, upper } => Ok(box_support(lower, upper, d)),
            ConvexSet::Ball { center, radius } => Ok(center.dot(d) + radius * d.norm()),
            ConvexSet::Affine(a) => {
                let off = a.kernel_component(d).norm();
                if off > 1e-9 * (1.0 + d.norm()) {
                    Ok(f64::INFINITY)
                } else {
                    Ok(d.dot(&a.least_norm_point()))
                }
            }
            ConvexSet::Halfspaces(_) | ConvexSet::Intersection(_) => lp_support(&self.atoms(), d),
        }
    }

    /// Embeds the set into `R^total` acting on coordinates
    /// `offset..offset + dim`, leaving the others free.
    pub fn embed(&self, total: usize, offset: usize) -> Result<Self> {
        let n = self.dim();
        if offset + n > total {
            return Err(Error::Shape(format!("cannot embed dimension {n} at offset {offset} into {total}")));
        }
        let pad = |v: &Vector, fill: f64| {
            let mut out = Vector::from_element(total, fill);
            out.rows_mut(offset, n).copy_from(v);
            out
        };
        match self {
            ConvexSet::Box { lower, upper } => Self::boxed(pad(lower, f64::NEG_INFINITY), pad(upper, f64::INFINITY)),
            ConvexSet::Halfspaces(hs) => Self::halfspaces(
                hs.iter().map(|h| Halfspace { normal: pad(&h.normal, 0.0), offset: h.offset }).collect(),
            ),
            ConvexSet::Affine(a) => {
                let op = a.operator();
                let mut m = DMatrix::zeros(op.rows(), total);
                m.view_mut((0, offset), (op.rows(), n)).copy_from(op.matrix());
                Self::affine(LinearOperator::new(m)?, a.rhs().clone())
            }
            ConvexSet::Intersection(parts) => {
                Self::intersection(parts.iter().map(|p| p.embed(total, offset)).collect::<Result<_>>()?)
            }
            ConvexSet::Ball { .. } => {
                Err(Error::Contract("a ball cannot be embedded as a cylinder in this catalogue".into()))
            }
        }
    }
}

fn box_support(lower: &Vector, upper: &Vector, d: &Vector) -> f64 {
    d.iter()
        .zip(lower.iter().zip(upper.iter()))
        .map(|(&di, (&l, &u))| {
            if di > 0.0 {
                di * u
            } else if di < 0.0 {
                di * l
            } else {
                0.0
            }
        })
        .sum()
}

fn lp_support(atoms: &[Atom<'_>], d: &Vector) -> Result<f64> {
    let n = d.len();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    let mut rows: Vec<(Vec<f64>, ComparisonOp, f64)> = Vec::new();
    for atom in atoms {
        match atom {
            Atom::Box(l, u) => {
                for i in 0..n {
                    lo[i] = lo[i].max(l[i]);
                    hi[i] = hi[i].min(u[i]);
                }
            }
            Atom::Half(h) => rows.push((h.normal.iter().copied().collect(), ComparisonOp::Le, h.offset)),
            Atom::Affine(a) => {
                let m = a.operator().matrix();
                for r in 0..m.nrows() {
                    rows.push((m.row(r).iter().copied().collect(), ComparisonOp::Eq, a.rhs()[r]));
                }
            }
            Atom::Ball(..) => {
                return Err(Error::Contract("support of an intersection with a ball is not polyhedral".into()))
            }
        }
    }
    if lo.iter().zip(&hi).any(|(l, h)| l > h) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..n).map(|i| lp.add_var(d[i], (lo[i], hi[i]))).collect();
    for (coeffs, op, rhs) in rows {
        let expr: Vec<_> = vars.iter().zip(coeffs).filter(|(_, c)| *c != 0.0).map(|(&v, c)| (v, c)).collect();
        lp.add_constraint(expr.as_slice(), op, rhs);
    }
    match lp.solve() {
        Ok(sol) => Ok(sol.objective()),
        Err(minilp::Error::Unbounded) => Ok(f64::INFINITY),
        Err(minilp::Error::Infeasible) => Ok(f64::NEG_INFINITY),
    }
}

fn dykstra(atoms: &[Atom<'_>], start: &Vector) -> Result<Vector> {
    let mut x = start.clone();
    let mut corrections = vec![Vector::zeros(x.len()); atoms.len()];
    // Outputs of every atom in the previous round. The iterate can sit still
    // for several rounds while the corrections are still drifting.
    let mut outputs = vec![start.clone(); atoms.len()];
    let mut rounds = 0;
    while rounds < DYKSTRA_MAX_ROUNDS {
        rounds += 1;
        let mut moved: f64 = 0.0;
        for ((atom, p), out) in atoms.iter().zip(corrections.iter_mut()).zip(outputs.iter_mut()) {
            let shifted = &x + &*p;
            x = atom.project(&shifted);
            let next = shifted - &x;
            moved = moved.max((&x - &*out).norm()).max((&next - &*p).norm());
            *p = next;
            out.copy_from(&x);
        }
        if moved <= DYKSTRA_STEP_TOL {
            break;
        }
    }
    let gap = atoms.iter().map(|a| a.distance(&x)).fold(0.0, f64::max);
    if gap <= DYKSTRA_GAP_TOL {
        Ok(x)
    } else {
        Err(Error::InfeasibilitySuspected { last: x.iter().copied().collect(), gap, rounds })
    }
}

/// `base ∩ ball(center, radius)`; emptiness is discovered by projecting.
#[derive(Debug, Clone)]
pub struct TruncatedSet {
    pub base: ConvexSet,
    pub center: Vector,
    pub radius: f64,
}

pub fn truncate(base: ConvexSet, center: Vector, radius: f64) -> Result<TruncatedSet> {
    check_dim(base.dim(), center.len(), "truncate")?;
    if !(radius >= 0.0) {
        return Err(Error::Contract(format!("truncation radius must be >= 0, got {radius}")));
    }
    Ok(TruncatedSet { base, center, radius })
}

impl TruncatedSet {
    pub fn as_intersection(&self) -> ConvexSet {
        ConvexSet::Intersection(vec![
            self.base.clone(),
            ConvexSet::Ball { center: self.center.clone(), radius: self.radius },
        ])
    }

    /// The nearest point of the truncation to its own center: the base
    /// projection of the center when it lies within the radius, and
    /// otherwise the truncation is empty.
    pub fn project_center(&self) -> Result<Vector> {
        let p = self.base.project(&self.center)?;
        let dist = (&p - &self.center).norm();
        let slack = self.radius * (1.0 + 1e-9) + 4.0 * f64::EPSILON * (1.0 + self.center.norm());
        if dist <= slack {
            Ok(p)
        } else {
            Err(Error::InfeasibilitySuspected { last: p.iter().copied().collect(), gap: dist - self.radius, rounds: 0 })
        }
    }

    pub fn project(&self, x: &Vector) -> Result<Vector> {
        if x == &self.center {
            return self.project_center();
        }
        self.as_intersection().project(x)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool> {
        Ok((x - &self.center).norm() <= self.radius + tol && self.base.contains(x, tol)?)
    }
}

/// `(inside, margin)` where margin is the least of `support(d) - <d, point>`
/// over a spread of unit directions. In the plane the directions are equally
/// spaced angles; otherwise the signed axes are used first, then seeded
/// random unit vectors.
pub fn interior_contains<S>(support: S, point: &Vector, directions: usize) -> Result<(bool, f64)>
where
    S: Fn(&Vector) -> Result<f64>,
{
    let n = point.len();
    if directions < 2 * n {
        return Err(Error::Contract(format!("need at least {} directions, got {directions}", 2 * n)));
    }
    let mut margin = f64::INFINITY;
    for d in direction_grid(n, directions) {
        margin = margin.min(support(&d)? - d.dot(point));
    }
    Ok((margin > 0.0, margin))
}

/// Unit directions used by interior tests.
pub fn direction_grid(n: usize, count: usize) -> Vec<Vector> {
    if n == 1 {
        return (0..count).map(|i| Vector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
    }
    if n == 2 {
        return (0..count)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / count as f64;
                // Snap rounding residue so axis directions are exact.
                let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
                Vector::from_column_slice(&[snap(t.cos()), snap(t.sin())])
            })
            .collect();
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = Vector::zeros(n);
            e[i] = s;
            out.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while out.len() < count {
        let v = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let norm = v.norm();
        if norm > 1e-12 {
            out.push(v / norm);
        }
    }
    out.truncate(count);
    out
}

/// JSON form of a [`ConvexSet`]. Infinite box bounds are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ConvexSetSpec {
    Box { lower: Vec<Option<f64>>, upper: Vec<Option<f64>> },
    Ball { center: Vec<f64>, radius: f64 },
    Affine { matrix: Vec<Vec<f64>>, rhs: Vec<f64> },
    Halfspaces(Vec<HalfspaceSpec>),
    Intersection(Vec<ConvexSetSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceSpec {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl ConvexSetSpec {
    pub fn build(&self) -> Result<ConvexSet> {
        let bound = |v: &[Option<f64>], inf: f64| Vector::from_iterator(v.len(), v.iter().map(|b| b.unwrap_or(inf)));
        match self {
            ConvexSetSpec::Box { lower, upper } => {
                ConvexSet::boxed(bound(lower, f64::NEG_INFINITY), bound(upper, f64::INFINITY))
            }
            ConvexSetSpec::Ball { center, radius } => ConvexSet::ball(Vector::from_column_slice(center), *radius),
            ConvexSetSpec::Affine { matrix, rhs } => {
                ConvexSet::affine(LinearOperator::from_rows(matrix)?, Vector::from_column_slice(rhs))
            }
            ConvexSetSpec::Halfspaces(list) => ConvexSet::halfspaces(
                list.iter()
                    .map(|h| Halfspace { normal: Vector::from_column_slice(&h.normal), offset: h.offset })
                    .collect(),
            ),
            ConvexSetSpec::Intersection(parts) => {
                ConvexSet::intersection(parts.iter().map(ConvexSetSpec::build).collect::<Result<_>>()?)
            }
        }
    }

    pub fn from_set(set: &ConvexSet) -> Self {
        let opt = |v: &Vector| v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        match set {
            ConvexSet::Box { lower, upper } => ConvexSetSpec::Box { lower: opt(lower), upper: opt(upper) },
            ConvexSet::Ball { center, radius } => {
                ConvexSetSpec::Ball { center: center.iter().copied().collect(), radius: *radius }
            }
            ConvexSet::Affine(a) => {
                let m = a.operator().matrix();
                ConvexSetSpec::Affine {
                    matrix: (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect(),
                    rhs: a.rhs().iter().copied().collect(),
                }
            }
            ConvexSet::Halfspaces(hs) => ConvexSetSpec::Halfspaces(
                hs.iter()
                    .map(|h| HalfspaceSpec { normal: h.normal.iter().copied().collect(), offset: h.offset })
                    .collect(),
            ),
            ConvexSet::Intersection(parts) => ConvexSetSpec::Intersection(parts.iter().map(Self::from_set).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::vector;
    use approx::assert_abs_diff_eq;

    fn line(a: f64, b: f64, rhs: f64) -> ConvexSet {
        ConvexSet::affine(LinearOperator::from_rows(&[vec![a, b]]).unwrap(), vector(&[rhs])).unwrap()
    }

    #[test]
    fn contains_examples() {
        let cube = ConvexSet::cube(2, -1.0, 1.0).unwrap();
        assert!(cube.contains(&vector(&[0.0, 0.0]), 1e-9).unwrap());
        assert!(line(1.0, 1.0, 2.0).contains(&vector(&[1.0, 1.0]), 1e-9).unwrap());
        let ball = ConvexSet::ball(vector(&[0.0, 0.0]), 1.0).unwrap();
        assert!(!ball.contains(&vector(&[1.001, 0.0]), 1e-9).unwrap());
        assert!(matches!(ball.contains(&vector(&[1.0]), 1e-9), Err(Error::Shape(_))));
    }

    #[test]
    fn project_examples() {
        let cube = ConvexSet::cube(2, -1.0, 1.0).unwrap();
        assert_abs_diff_eq!(cube.project(&vector(&[2.0, 0.0])).unwrap(), vector(&[1.0, 0.0]));
        let l = line(1.0, 1.0, 0.0);
        assert_abs_diff_eq!(l.project(&vector(&[1.0, 1.0])).unwrap(), vector(&[0.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn intersection_projection_matches_grid_minimization() {
        let set = ConvexSet::intersection(vec![
            line(1.0, 1.0, 2.0),
            ConvexSet::boxed(vector(&[0.0, 0.0]), vector(&[0.5, 5.0])).unwrap(),
        ])
        .unwrap();
        let p = set.project(&vector(&[0.0, 0.0])).unwrap();

        // Feasible points are (t, 2 - t) with t in [0, 0.5]; minimize densely over t.
        let best = (0..=100_000)
            .map(|i| 0.5 * i as f64 / 100_000.0)
            .min_by(|a, b| (a * a + (2.0 - a).powi(2)).total_cmp(&(b * b + (2.0 - b).powi(2))))
            .unwrap();
        assert_abs_diff_eq!(p, vector(&[best, 2.0 - best]), epsilon = 1e-5);
        assert_abs_diff_eq!(p, vector(&[0.5, 1.5]), epsilon = 1e-8);
    }

    #[test]
    fn support_examples() {
        let cube = ConvexSet::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(cube.support(&vector(&[1.0, 0.0])).unwrap(), 1.0);
        let ball = ConvexSet::ball(vector(&[0.0, 0.0]), 0.7).unwrap();
        let d = vector(&[0.6, 0.8]);
        assert_abs_diff_eq!(ball.support(&d).unwrap(), 0.7, epsilon = 1e-15);

        // Vertex enumeration oracle.
        let d = vector(&[1.0, 1.0]);
        let vertices = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]];
        let oracle = vertices.iter().map(|v| v[0] * d[0] + v[1] * d[1]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(cube.support(&d).unwrap(), oracle);
        assert_eq!(oracle, 2.0);
    }

    #[test]
    fn support_of_polytopes_and_affine_sets() {
        let square = ConvexSet::halfspaces(vec![
            Halfspace { normal: vector(&[1.0, 0.0]), offset: 1.0 },
            Halfspace { normal: vector(&[-1.0, 0.0]), offset: 1.0 },
            Halfspace { normal: vector(&[0.0, 1.0]), offset: 1.0 },
            Halfspace { normal: vector(&[0.0, -1.0]), offset: 1.0 },
        ])
        .unwrap();
        assert_abs_diff_eq!(square.support(&vector(&[1.0, 1.0])).unwrap(), 2.0, epsilon = 1e-9);
        let half = ConvexSet::halfspaces(vec![Halfspace { normal: vector(&[1.0, 0.0]), offset: 1.0 }]).unwrap();
        assert_eq!(half.support(&vector(&[0.0, 1.0])).unwrap(), f64::INFINITY);

        let l = line(1.0, 1.0, 2.0);
        assert_abs_diff_eq!(l.support(&vector(&[1.0, 1.0])).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(l.support(&vector(&[1.0, 0.0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn interior_examples() {
        let cube = ConvexSet::cube(2, -1.0, 1.0).unwrap();
        let (inside, margin) = interior_contains(|d| cube.support(d), &vector(&[0.0, 0.0]), 4).unwrap();
        assert!(inside);
        assert_abs_diff_eq!(margin, 1.0, epsilon = 1e-12);

        let corner = ConvexSet::cube(2, 0.0, 1.0).unwrap();
        let (inside, margin) = interior_contains(|d| corner.support(d), &vector(&[0.0, 0.0]), 4).unwrap();
        assert!(!inside);
        assert_abs_diff_eq!(margin, 0.0, epsilon = 1e-12);

        let segment = ConvexSet::boxed(vector(&[-1.0, 0.0]), vector(&[1.0, 0.0])).unwrap();
        assert_eq!(segment.support(&vector(&[0.0, 1.0])).unwrap(), 0.0);
        let (inside, _) = interior_contains(|d| segment.support(d), &vector(&[0.0, 0.0]), 16).unwrap();
        assert!(!inside);

        assert!(interior_contains(|d| cube.support(d), &vector(&[0.0, 0.0]), 3).is_err());
    }

    #[test]
    fn truncate_examples() {
        let t = truncate(line(1.0, 1.0, 0.0), vector(&[0.0, 0.0]), 1.0).unwrap();
        assert!(t.contains(&vector(&[0.0, 0.0]), 1e-12).unwrap());
        assert_abs_diff_eq!(t.project_center().unwrap(), vector(&[0.0, 0.0]), epsilon = 1e-15);

        let far = truncate(line(1.0, 1.0, 2.0), vector(&[0.0, 0.0]), 1.0).unwrap();
        match far.project_center() {
            Err(Error::InfeasibilitySuspected { gap, .. }) => {
                assert_abs_diff_eq!(gap, std::f64::consts::SQRT_2 - 1.0, epsilon = 1e-12)
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
        assert!(matches!(far.project(&vector(&[0.3, 0.0])), Err(Error::InfeasibilitySuspected { .. })));

        let point = truncate(line(1.0, 1.0, 2.0), vector(&[1.0, 1.0]), 0.0).unwrap();
        assert_abs_diff_eq!(point.project_center().unwrap(), vector(&[1.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn truncation_shortcut_agrees_with_dykstra() {
        let t = truncate(line(1.0, 2.0, 1.0), vector(&[0.2, -0.1]), 0.9).unwrap();
        let fast = t.project_center().unwrap();
        let slow = t.as_intersection().project(&t.center).unwrap();
        assert_abs_diff_eq!(fast, slow, epsilon = 1e-8);
    }

    #[test]
    fn inconsistent_affine_set_is_rejected() {
        let op = LinearOperator::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(ConvexSet::affine(op.clone(), vector(&[1.0, 2.0])).is_err());
        let set = ConvexSet::affine(op, vector(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(set.project(&vector(&[3.0, 4.0])).unwrap(), vector(&[1.0, 4.0]), epsilon = 1e-12);
    }

    #[test]
    fn embed_box_leaves_other_coordinates_free() {
        let u = ConvexSet::cube(1, -1.0, 1.0).unwrap();
        let lifted = u.embed(3, 1).unwrap();
        assert_abs_diff_eq!(lifted.project(&vector(&[5.0, 2.0, -7.0])).unwrap(), vector(&[5.0, 1.0, -7.0]));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"intersection":[{"box":{"lower":[0.0,null],"upper":[0.5,5.0]}},{"affine":{"matrix":[[1.0,1.0]],"rhs":[2.0]}}]}"#;
        let spec: ConvexSetSpec = serde_json::from_str(text).unwrap();
        let set = spec.build().unwrap();
        assert_eq!(ConvexSetSpec::from_set(&set), spec);
        assert_abs_diff_eq!(set.support(&vector(&[0.0, -1.0])).unwrap(), -1.5, epsilon = 1e-9);
    }
}
