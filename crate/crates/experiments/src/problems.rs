//! Problem builders for the bundled experiments and user-defined problems.

use maxweight::dual::CustomPrimalFn;
use maxweight::{
    ActionSet, ConstraintVector, ConvexFunctionSpec, HullCertificate, ProblemInstance,
};

use crate::config::{CustomSection, ObjectiveSpec};
use crate::ExperimentError;

/// `min Σᵢ exp(i·zᵢ)` s.t. `b ⪯ z` over the corners of `[0, s]ⁿ`.
#[derive(Debug, Clone)]
pub struct ExpExample {
    pub problem: ProblemInstance,
    pub s: f64,
    pub b: Vec<f64>,
    /// `z₁ = s·1`
    pub initial_point: Vec<f64>,
}

impl ExpExample {
    /// Optimum of the separable problem: `zᵢ = bᵢ` since each term increases.
    pub fn closed_form_optimum(&self) -> (f64, Vec<f64>) {
        let f_star = self
            .b
            .iter()
            .enumerate()
            .map(|(i, b)| ((i + 1) as f64 * b).exp())
            .sum();
        let lambda_star = self
            .b
            .iter()
            .enumerate()
            .map(|(i, b)| (i + 1) as f64 * ((i + 1) as f64 * b).exp())
            .collect();
        (f_star, lambda_star)
    }
}

/// `b = (s / Σᵢ 2i)·[1, …, n]`; the objective declares curvature `μ̄_L`.
pub fn build_exp_example(n: usize, s: Option<f64>, mu_bar: f64) -> Result<ExpExample, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::Config("exp_example.n must be >= 1".into()));
    }
    if !(mu_bar > 0.0) {
        return Err(ExperimentError::Config("exp_example.mu_bar must be > 0".into()));
    }
    let s = s.unwrap_or(1.0 / (n as f64 * mu_bar).sqrt());
    if !(s > 0.0 && s.is_finite()) {
        return Err(ExperimentError::Config("exp_example.s must be > 0".into()));
    }
    let denom: f64 = (1..=n).map(|i| 2.0 * i as f64).sum();
    let b: Vec<f64> = (1..=n).map(|i| s / denom * i as f64).collect();
    let actions = ActionSet::cube_corners(n, s)?;
    let objective = ConvexFunctionSpec::new(
        n,
        |z| z.iter().enumerate().map(|(i, zi)| ((i + 1) as f64 * zi).exp()).sum(),
        |z, out| {
            for (i, (o, zi)) in out.iter_mut().zip(z).enumerate() {
                let w = (i + 1) as f64;
                *o = w * (w * zi).exp();
            }
        },
        mu_bar,
    )?;
    // b - z = (-I)z - (-b)
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { -1.0 } else { 0.0 }).collect())
        .collect();
    let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
    let constraints = ConstraintVector::linear(&rows, &neg_b)?;
    let initial_point = vec![s; n];
    let problem = ProblemInstance::constrained(
        objective,
        constraints,
        actions,
        initial_point.clone(),
        HullCertificate::Solve,
    )?;
    Ok(ExpExample {
        problem,
        s,
        b,
        initial_point,
    })
}

/// Feasibility problem over service-time distributions `p` on `{0, …, T}`.
#[derive(Clone)]
pub struct PrivacyExample {
    pub problem: ProblemInstance,
    pub t_max: usize,
    pub entropy: f64,
    pub xi: f64,
    pub mean_arrival: f64,
    /// The uniform distribution, where the entropy constraint is most negative.
    pub probes: Vec<Vec<f64>>,
}

/// `g¹(p) = Σ pⁱ log pⁱ + E`, `g²(p) = Σ i·pⁱ + ξ - b`, constant objective,
/// `D` the unit vectors of `ℝ^{T+1}`.
pub fn build_privacy_example(
    t_max: usize,
    entropy: f64,
    xi: f64,
    mean_arrival: f64,
    entropy_curvature: f64,
    slater: Option<Vec<f64>>,
) -> Result<PrivacyExample, ExperimentError> {
    if t_max == 0 {
        return Err(ExperimentError::Config("privacy.t_max must be >= 1".into()));
    }
    let n = t_max + 1;
    if !(entropy < (n as f64).ln()) {
        return Err(ExperimentError::Config(format!(
            "privacy.entropy = {entropy} is not achievable: it must be below log(T_max + 1) = {}",
            (n as f64).ln()
        )));
    }
    if !(xi > 0.0) {
        return Err(ExperimentError::Config("privacy.xi must be > 0".into()));
    }
    let actions = ActionSet::standard_basis(n)?;
    let objective = ConvexFunctionSpec::constant(n, 0.0);
    let neg_entropy = ConvexFunctionSpec::new(
        n,
        move |p| p.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).sum::<f64>() + entropy,
        |p, out| {
            for (o, v) in out.iter_mut().zip(p) {
                *o = v.max(f64::MIN_POSITIVE).ln() + 1.0;
            }
        },
        entropy_curvature,
    )?;
    let index: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let delay = ConvexFunctionSpec::linear(index, xi - mean_arrival);
    let constraints = ConstraintVector::new(vec![neg_entropy, delay])?;
    let slater = match slater {
        Some(p) => p,
        None => default_privacy_slater(n, entropy, xi, mean_arrival)?,
    };
    let problem = ProblemInstance::constrained(objective, constraints, actions, slater, HullCertificate::Solve)?;
    Ok(PrivacyExample {
        problem,
        t_max,
        entropy,
        xi,
        mean_arrival,
        probes: vec![vec![1.0 / n as f64; n]],
    })
}

/// Two-point distribution on `{0, 1}` with mass `t` on 1, choosing `t` to
/// balance the two constraint margins.
fn default_privacy_slater(n: usize, entropy: f64, xi: f64, b: f64) -> Result<Vec<f64>, ExperimentError> {
    let h = |t: f64| -(t * t.ln() + (1.0 - t) * (1.0 - t).ln());
    let budget = b - xi;
    let best = (1..1000)
        .map(|i| i as f64 / 2000.0)
        .filter(|t| *t < budget)
        .map(|t| (t, (h(t) - entropy).min(budget - t)))
        .fold((0.0, f64::NEG_INFINITY), |a, c| if c.1 > a.1 { c } else { a });
    if !(best.1 > 0.0) || n < 2 {
        return Err(ExperimentError::Config(
            "privacy: no strictly feasible distribution found; supply privacy.slater".into(),
        ));
    }
    let mut p = vec![0.0; n];
    p[0] = 1.0 - best.0;
    p[1] = best.0;
    Ok(p)
}

/// Closed-form minimiser of `λ¹g¹(p) + λ²g²(p)` over the simplex: the Gibbs
/// distribution `pⁱ ∝ exp(-(λ²/λ¹)i)` when `λ¹ > 0`, otherwise the lowest
/// index minimising `λ²·i`.
pub fn gibbs_step(lambda: &[f64], n: usize) -> Vec<f64> {
    let (l1, l2) = (lambda[0], lambda[1]);
    let mut p = vec![0.0; n];
    if l1 > 0.0 {
        let rate = l2 / l1;
        for (i, v) in p.iter_mut().enumerate() {
            *v = (-rate * i as f64).exp();
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        p[0] = 1.0;
    }
    p
}

pub fn gibbs_primal(n: usize) -> CustomPrimalFn {
    std::sync::Arc::new(move |_z, lambda, _beta| Ok(gibbs_step(lambda, n)))
}

/// Builds a problem from a `[custom]` section.
pub fn build_custom(section: &CustomSection) -> Result<ProblemInstance, ExperimentError> {
    let actions = ActionSet::new(section.actions.clone())?;
    let n = actions.dim();
    let objective = match &section.objective {
        ObjectiveSpec::Linear { coeffs, offset } => ConvexFunctionSpec::linear(coeffs.clone(), *offset),
        ObjectiveSpec::Quadratic {
            matrix,
            linear,
            curvature,
        } => quadratic_objective(matrix, linear.as_deref(), *curvature)?,
        ObjectiveSpec::ExpSum { weights, curvature } => {
            let w = weights.clone();
            let w2 = weights.clone();
            ConvexFunctionSpec::new(
                weights.len(),
                move |z| w.iter().zip(z).map(|(a, b)| (a * b).exp()).sum(),
                move |z, out| {
                    for ((o, a), b) in out.iter_mut().zip(&w2).zip(z) {
                        *o = a * (a * b).exp();
                    }
                },
                *curvature,
            )?
        }
    };
    if objective.dim() != n {
        return Err(ExperimentError::Config(format!(
            "custom.objective has dimension {}, actions have dimension {n}",
            objective.dim()
        )));
    }
    match &section.constraints {
        None => Ok(ProblemInstance::unconstrained(objective, actions)?),
        Some(c) => {
            let g = ConstraintVector::linear(&c.a, &c.b)?;
            Ok(ProblemInstance::constrained_with(
                objective,
                g,
                actions,
                section.slater.clone(),
                HullCertificate::Solve,
                Default::default(),
            )?)
        }
    }
}

/// `½zᵀAz + cᵀz`. Without a declared curvature, `‖A‖_F` (an upper bound
/// on `λ_max`) is used.
fn quadratic_objective(
    matrix: &[Vec<f64>],
    linear: Option<&[f64]>,
    curvature: Option<f64>,
) -> Result<ConvexFunctionSpec, ExperimentError> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|r| r.len() != n) {
        return Err(ExperimentError::Config("custom.objective.matrix must be square".into()));
    }
    let c = linear.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if c.len() != n {
        return Err(ExperimentError::Config("custom.objective.linear has the wrong length".into()));
    }
    let mu = curvature.unwrap_or_else(|| matrix.iter().flatten().map(|v| v * v).sum::<f64>().sqrt());
    let a = matrix.to_vec();
    let a2 = a.clone();
    let c2 = c.clone();
    Ok(ConvexFunctionSpec::new(
        n,
        move |z| {
            let quad: f64 = a.iter().zip(z).map(|(r, zi)| zi * r.iter().zip(z).map(|(x, y)| x * y).sum::<f64>()).sum();
            0.5 * quad + c.iter().zip(z).map(|(x, y)| x * y).sum::<f64>()
        },
        move |z, out| {
            for ((o, r), ci) in out.iter_mut().zip(&a2).zip(&c2) {
                *o = ci + r.iter().zip(z).map(|(x, y)| x * y).sum::<f64>();
            }
        },
        mu,
    )?)
}
