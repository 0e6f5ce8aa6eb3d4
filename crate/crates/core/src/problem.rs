//! Problems posed over the convex hull of a finite action set.
//!
//! Every solver in this crate works with a finite set of points `D`, its
//! convex hull `C = conv(D)`, a convex objective and (optionally) a vector of
//! convex constraints. Functions are supplied as value/subgradient callbacks
//! together with a declared curvature constant `μ`, meaning
//! `h(z + δ) - h(z) <= ∂h(z)ᵀδ + μ‖δ‖²` on `C`.

use std::fmt;
use std::sync::Arc;

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm2, norm_inf};

/// Absolute tolerance used for equality comparisons of reals.
pub const ABS_TOL: f64 = 1e-12;

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type SubgradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A finite, ordered set of distinct points in `ℝⁿ`.
///
/// The order matters: every argmin over the set breaks ties towards the
/// lowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl ActionSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyActionSet)?.len();
        if dim == 0 {
            return Err(invalid("actions", "points must have dimension >= 1"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                    context: "action point",
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    candidate: i,
                    what: "action coordinate",
                });
            }
            for (j, q) in points[..i].iter().enumerate() {
                if p.iter().zip(q).all(|(a, b)| (a - b).abs() <= ABS_TOL) {
                    return Err(Error::DuplicateAction { index: i, first: j });
                }
            }
        }
        Ok(Self { points, dim })
    }

    /// All `2ⁿ` corners of the cube `[0, side]ⁿ`, ordered as binary counting
    /// with the first coordinate as the most significant bit.
    pub fn cube_corners(n: usize, side: f64) -> Result<Self> {
        if n == 0 || n > 20 {
            return Err(invalid("n", "cube dimension must be in 1..=20"));
        }
        let points = (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|j| if mask >> (n - 1 - j) & 1 == 1 { side } else { 0.0 })
                    .collect()
            })
            .collect();
        Self::new(points)
    }

    /// The unit vectors `e₀ … e_{n-1}`; their hull is the probability simplex.
    pub fn standard_basis(n: usize) -> Result<Self> {
        let points = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect();
        Self::new(points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(Vec::as_slice)
    }

    /// Point of the hull with the given convex-combination weights.
    pub fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for (w, p) in weights.iter().zip(&self.points) {
            for (zi, pi) in z.iter_mut().zip(p) {
                *zi += w * pi;
            }
        }
        z
    }

    /// Solves the linear feasibility problem `w ⪰ 0, Σw = 1, Σ wᵢxᵢ = point`.
    /// Returns the weights on success.
    pub fn hull_weights(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
                context: "hull membership point",
            });
        }
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..self.len())
            .map(|_| lp.add_var(0.0, (0.0, f64::INFINITY)))
            .collect();
        let ones: Vec<_> = vars.iter().map(|&v| (v, 1.0)).collect();
        lp.add_constraint(&ones, ComparisonOp::Eq, 1.0);
        for d in 0..self.dim {
            let row: Vec<_> = vars
                .iter()
                .zip(&self.points)
                .filter(|(_, p)| p[d] != 0.0)
                .map(|(&v, p)| (v, p[d]))
                .collect();
            lp.add_constraint(&row, ComparisonOp::Eq, point[d]);
        }
        let solution = lp
            .solve()
            .map_err(|e| Error::NotInHull(format!("linear feasibility problem: {e}")))?;
        let weights: Vec<f64> = vars.iter().map(|&v| solution[v].max(0.0)).collect();
        check_hull_weights(self, point, &weights, 1e-7)?;
        Ok(weights)
    }
}

fn check_hull_weights(actions: &ActionSet, point: &[f64], weights: &[f64], tol: f64) -> Result<()> {
    if weights.len() != actions.len() {
        return Err(Error::DimensionMismatch {
            expected: actions.len(),
            got: weights.len(),
            context: "convex-combination weights",
        });
    }
    if let Some(w) = weights.iter().find(|w| **w < -ABS_TOL || !w.is_finite()) {
        return Err(Error::NotInHull(format!("negative weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::NotInHull(format!("weights sum to {total}")));
    }
    let z = actions.combine(weights);
    let residual = z
        .iter()
        .zip(point)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if residual > tol {
        return Err(Error::NotInHull(format!("reconstruction residual {residual:e}")));
    }
    Ok(())
}

/// Which constant to report as the diameter of `conv(D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiameterConvention {
    /// `2 max ‖x‖₂`, a guaranteed bound on `‖z - y‖₂` over the hull.
    #[default]
    Strict,
    /// `max ‖x‖₂` without the factor two (`s√n` for the cube `[0, s]ⁿ`).
    MaxNorm,
}

/// `x̄_D = 2 max_{x∈D} ‖x‖₂`.
pub fn diameter(actions: &ActionSet) -> f64 {
    diameter_with(actions, DiameterConvention::Strict)
}

pub fn diameter_with(actions: &ActionSet, convention: DiameterConvention) -> f64 {
    let max_norm = actions.iter().map(norm2).fold(0.0, f64::max);
    match convention {
        DiameterConvention::Strict => 2.0 * max_norm,
        DiameterConvention::MaxNorm => max_norm,
    }
}

/// A convex function given by value and subgradient callbacks plus a
/// declared curvature constant.
#[derive(Clone)]
pub struct ConvexFunctionSpec {
    dim: usize,
    value: ValueFn,
    subgradient: SubgradientFn,
    curvature: f64,
}

impl fmt::Debug for ConvexFunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexFunctionSpec")
            .field("dim", &self.dim)
            .field("curvature", &self.curvature)
            .finish_non_exhaustive()
    }
}

impl ConvexFunctionSpec {
    /// `subgradient` writes one element of `∂h(z)` into its output slice.
    pub fn new<V, G>(dim: usize, value: V, subgradient: G, curvature: f64) -> Result<Self>
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(invalid("dim", "must be >= 1"));
        }
        check_curvature(curvature)?;
        Ok(Self {
            dim,
            value: Arc::new(value),
            subgradient: Arc::new(subgradient),
            curvature,
        })
    }

    /// `aᵀz + c`, curvature zero.
    pub fn linear(coeffs: Vec<f64>, offset: f64) -> Self {
        let dim = coeffs.len();
        let a = Arc::new(coeffs);
        let a2 = Arc::clone(&a);
        Self {
            dim,
            value: Arc::new(move |z| dot(&a, z) + offset),
            subgradient: Arc::new(move |_, out| out.copy_from_slice(&a2)),
            curvature: 0.0,
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::linear(vec![0.0; dim], c)
    }

    /// `½ zᵀAz` for a symmetric matrix `A` given by rows. The caller declares
    /// the curvature (for positive semidefinite `A`, `λ_max(A)` is valid).
    pub fn quadratic(matrix: Vec<Vec<f64>>, curvature: f64) -> Result<Self> {
        let dim = matrix.len();
        if dim == 0 || matrix.iter().any(|r| r.len() != dim) {
            return Err(invalid("matrix", "must be square and non-empty"));
        }
        let a = Arc::new(matrix);
        let a2 = Arc::clone(&a);
        Self::new(
            dim,
            move |z| 0.5 * a.iter().zip(z).map(|(r, zi)| zi * dot(r, z)).sum::<f64>(),
            move |z, out| {
                for (o, r) in out.iter_mut().zip(a2.iter()) {
                    *o = dot(r, z);
                }
            },
            curvature,
        )
    }

    pub fn with_curvature(mut self, curvature: f64) -> Result<Self> {
        check_curvature(curvature)?;
        self.curvature = curvature;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    #[inline]
    pub fn value(&self, z: &[f64]) -> f64 {
        (self.value)(z)
    }

    #[inline]
    pub fn subgradient_into(&self, z: &[f64], out: &mut [f64]) {
        (self.subgradient)(z, out)
    }

    pub fn subgradient(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.subgradient_into(z, &mut out);
        out
    }
}

fn check_curvature(curvature: f64) -> Result<()> {
    if !(curvature >= 0.0) {
        return Err(invalid("curvature", format!("must be >= 0, got {curvature}")));
    }
    Ok(())
}

/// `g(z) = [g¹(z), …, gᵐ(z)]ᵀ`.
#[derive(Debug, Clone)]
pub struct ConstraintVector {
    components: Vec<ConvexFunctionSpec>,
}

impl ConstraintVector {
    pub fn new(components: Vec<ConvexFunctionSpec>) -> Result<Self> {
        let dim = components
            .first()
            .ok_or_else(|| invalid("constraints", "need at least one component"))?
            .dim();
        if let Some(c) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.dim(),
                context: "constraint component",
            });
        }
        Ok(Self { components })
    }

    /// Linear constraints `Az - b ⪯ 0`, one component per row of `A`.
    pub fn linear(rows: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        if rows.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: b.len(),
                context: "right-hand side",
            });
        }
        Self::new(
            rows.iter()
                .zip(b)
                .map(|(r, bj)| ConvexFunctionSpec::linear(r.clone(), -bj))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[ConvexFunctionSpec] {
        &self.components
    }

    pub fn curvatures(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.curvature()).collect()
    }

    pub fn values(&self, z: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.value(z)).collect()
    }

    pub fn values_into(&self, z: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.value(z);
        }
    }

    /// `λᵀg(z)`
    pub fn weighted(&self, lambda: &[f64], z: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(lambda)
            .map(|(c, l)| if *l == 0.0 { 0.0 } else { l * c.value(z) })
            .sum()
    }
}

/// How membership of the Slater point in `conv(D)` is established.
#[derive(Debug, Clone, Default)]
pub enum HullCertificate {
    /// Solve the linear feasibility problem (only below the size limit).
    #[default]
    Solve,
    /// Caller-supplied convex-combination weights over `D`.
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, Copy)]
pub struct ConstructionOptions {
    /// Largest `n·|D|` for which hull membership is solved as an LP.
    pub lp_size_limit: usize,
}

impl Default for ConstructionOptions {
    fn default() -> Self {
        Self {
            lp_size_limit: 200_000,
        }
    }
}

/// `minimise f(z) subject to g(z) ⪯ 0, z ∈ conv(D)`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    objective: ConvexFunctionSpec,
    constraints: Option<ConstraintVector>,
    actions: ActionSet,
    slater_point: Option<Vec<f64>>,
    slater_weights: Option<Vec<f64>>,
}

impl ProblemInstance {
    pub fn unconstrained(objective: ConvexFunctionSpec, actions: ActionSet) -> Result<Self> {
        check_dim(objective.dim(), actions.dim(), "objective")?;
        Ok(Self {
            objective,
            constraints: None,
            actions,
            slater_point: None,
            slater_weights: None,
        })
    }

    pub fn constrained(
        objective: ConvexFunctionSpec,
        constraints: ConstraintVector,
        actions: ActionSet,
        slater_point: Vec<f64>,
        certificate: HullCertificate,
    ) -> Result<Self> {
        Self::constrained_with(
            objective,
            constraints,
            actions,
            Some(slater_point),
            certificate,
            ConstructionOptions::default(),
        )
    }

    /// As [`ProblemInstance::constrained`], but the Slater point is optional
    /// so that a missing one surfaces as [`Error::MissingSlaterPoint`].
    pub fn constrained_with(
        objective: ConvexFunctionSpec,
        constraints: ConstraintVector,
        actions: ActionSet,
        slater_point: Option<Vec<f64>>,
        certificate: HullCertificate,
        options: ConstructionOptions,
    ) -> Result<Self> {
        check_dim(objective.dim(), actions.dim(), "objective")?;
        check_dim(constraints.dim(), actions.dim(), "constraints")?;
        let slater = slater_point.ok_or(Error::MissingSlaterPoint)?;
        check_dim(slater.len(), actions.dim(), "Slater point")?;
        for (index, value) in constraints.values(&slater).into_iter().enumerate() {
            if !(value < 0.0) {
                return Err(Error::NotStrictlyFeasible {
                    index,
                    value,
                    floor: 0.0,
                });
            }
        }
        let weights = match certificate {
            HullCertificate::Weights(w) => {
                check_hull_weights(&actions, &slater, &w, 1e-9)?;
                w
            }
            HullCertificate::Solve => {
                let size = actions.dim() * actions.len();
                if size > options.lp_size_limit {
                    return Err(Error::NotInHull(format!(
                        "n·|D| = {size} exceeds the LP size limit {}; supply convex-combination weights",
                        options.lp_size_limit
                    )));
                }
                actions.hull_weights(&slater)?
            }
        };
        Ok(Self {
            objective,
            constraints: Some(constraints),
            actions,
            slater_point: Some(slater),
            slater_weights: Some(weights),
        })
    }

    pub fn objective(&self) -> &ConvexFunctionSpec {
        &self.objective
    }

    pub fn constraints(&self) -> Option<&ConstraintVector> {
        self.constraints.as_ref()
    }

    pub fn require_constraints(&self) -> Result<&ConstraintVector> {
        self.constraints.as_ref().ok_or(Error::MissingConstraints)
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn dim(&self) -> usize {
        self.actions.dim()
    }

    /// Number of constraints (zero when unconstrained).
    pub fn m(&self) -> usize {
        self.constraints.as_ref().map_or(0, ConstraintVector::len)
    }

    pub fn slater_point(&self) -> Option<&[f64]> {
        self.slater_point.as_deref()
    }

    pub fn slater_weights(&self) -> Option<&[f64]> {
        self.slater_weights.as_deref()
    }
}

fn check_dim(got: usize, expected: usize, context: &'static str) -> Result<()> {
    if got != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        });
    }
    Ok(())
}

/// `ḡ = max_{z∈C} ‖g(z)‖_∞`, bounded by enumerating the vertices of `D`
/// together with caller-supplied probe points.
///
/// The maximum of each convex `gʲ` over the polytope is attained at a vertex,
/// so the upper side is exact. The lower side `-gʲ` can peak in the interior
/// (e.g. an entropy), which is what the probes are for.
pub fn max_constraint_magnitude(problem: &ProblemInstance, probes: &[Vec<f64>]) -> Result<f64> {
    let g = problem.require_constraints()?;
    let mut best = 0.0_f64;
    for z in problem.actions().iter().chain(probes.iter().map(Vec::as_slice)) {
        check_dim(z.len(), g.dim(), "probe point")?;
        best = best.max(norm_inf(&g.values(z)));
    }
    Ok(best)
}

/// `μ̄_L = μ_f + λ̄·Σⱼ μ_gʲ`, the curvature of `L(·, λ)` uniformly over `λ ∈ [0, λ̄]ᵐ`.
pub fn lagrangian_curvature(mu_f: f64, mu_g: &[f64], lambda_cap: f64) -> Result<f64> {
    if !(mu_f >= 0.0) {
        return Err(invalid("mu_f", "must be >= 0"));
    }
    if mu_g.iter().any(|m| !(*m >= 0.0)) {
        return Err(invalid("mu_g", "all components must be >= 0"));
    }
    if !(lambda_cap >= 0.0) {
        return Err(invalid("lambda_cap", "must be >= 0"));
    }
    Ok(mu_f + lambda_cap * mu_g.iter().sum::<f64>())
}
