//! Reference computations used to check the solvers: exhaustive argmin over
//! `D`, gap-certified convex minimisation over `conv(D)` and numerical
//! validation of declared curvature constants.
//!
//! Minimisation over the hull runs away-step conditional gradient on the
//! simplex of weights over `D`, so iterates lie in the hull by construction
//! and the Frank-Wolfe gap `∂h(z)ᵀz - min_{x∈D} ∂h(z)ᵀx` bounds the
//! suboptimality of every iterate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm2};
use crate::problem::{ActionSet, ConvexFunctionSpec, ProblemInstance};

/// Result of a certified reference solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    /// `f*` for primal solves, `L(z, λ)` at the returned point for dual solves.
    pub value: f64,
    pub argpoint: Vec<f64>,
    /// Convex-combination weights over `D` reproducing `argpoint`.
    pub weights: Vec<f64>,
    /// Certified bound on `|value - exact optimum|`.
    pub tolerance_achieved: f64,
    pub iterations_used: usize,
    /// Multipliers found by primal solves of constrained problems.
    pub multipliers: Option<Vec<f64>>,
}

impl ReferenceSolution {
    /// A certified lower bound on the exact optimum.
    pub fn lower_bound(&self) -> f64 {
        self.value - self.tolerance_achieved
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 1_000_000,
        }
    }
}

impl OracleOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance", "must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations", "must be >= 1"));
        }
        Ok(())
    }
}

/// Exhaustive `argmin_{x∈D} F(x)`, lowest index on ties.
pub fn brute_argmin<F>(f: F, actions: &ActionSet) -> Result<(usize, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    argmin_by(actions.len(), |i| f(actions.point(i)))
}

/// Lowest-index minimiser of `score(0..len)`; fails on a non-finite score.
pub(crate) fn argmin_by<S>(len: usize, mut score: S) -> Result<(usize, f64)>
where
    S: FnMut(usize) -> f64,
{
    let mut best = (0, f64::INFINITY);
    for i in 0..len {
        let v = score(i);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                candidate: i,
                what: "objective value",
            });
        }
        if v < best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

/// Minimises a convex `h` over the hull of `points`, certified by the
/// Frank-Wolfe gap. `warm_start` are initial weights (uniform by default).
pub fn minimize_over_hull<V, G>(
    points: &[Vec<f64>],
    value: V,
    gradient: G,
    options: OracleOptions,
    warm_start: Option<&[f64]>,
) -> Result<ReferenceSolution>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    options.check()?;
    let count = points.len();
    if count == 0 {
        return Err(Error::EmptyActionSet);
    }
    let dim = points[0].len();
    let mut w = match warm_start {
        Some(w0) if w0.len() == count => w0.iter().map(|v| v.max(0.0)).collect::<Vec<_>>(),
        Some(w0) => {
            return Err(Error::DimensionMismatch {
                expected: count,
                got: w0.len(),
                context: "warm-start weights",
            })
        }
        None => vec![1.0 / count as f64; count],
    };
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);

    let mut z = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut scores = vec![0.0; count];
    let mut direction = vec![0.0; dim];
    let mut probe = vec![0.0; dim];
    let mut probe_grad = vec![0.0; dim];
    let mut gap = f64::INFINITY;

    for iteration in 0..options.max_iterations {
        combine_into(points, &w, &mut z);
        gradient(&z, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                candidate: iteration,
                what: "gradient during hull minimisation",
            });
        }
        let gz = dot(&grad, &z);
        for (s, p) in scores.iter_mut().zip(points) {
            *s = dot(&grad, p);
        }
        let (fw, fw_score) = scores
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &s)| if s < b.1 { (i, s) } else { b });
        gap = (gz - fw_score).max(0.0);
        if gap <= options.tolerance {
            return Ok(ReferenceSolution {
                value: value(&z),
                argpoint: z,
                weights: w,
                tolerance_achieved: gap,
                iterations_used: iteration,
                multipliers: None,
            });
        }
        let (away, away_score) = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| w[*i] > 0.0)
            .fold((0, f64::NEG_INFINITY), |b, (i, &s)| if s > b.1 { (i, s) } else { b });
        let away_gap = away_score - gz;
        let toward = gap >= away_gap || w[away] >= 1.0;
        let t_max = if toward {
            for ((d, p), zi) in direction.iter_mut().zip(&points[fw]).zip(&z) {
                *d = p - zi;
            }
            1.0
        } else {
            for ((d, p), zi) in direction.iter_mut().zip(&points[away]).zip(&z) {
                *d = zi - p;
            }
            w[away] / (1.0 - w[away])
        };
        let t = line_search(&gradient, &z, &direction, t_max, &mut probe, &mut probe_grad);
        if toward {
            w.iter_mut().for_each(|v| *v *= 1.0 - t);
            w[fw] += t;
        } else {
            w.iter_mut().for_each(|v| *v *= 1.0 + t);
            w[away] -= t;
            if t >= t_max || w[away] < 1e-300 {
                w[away] = 0.0;
            }
        }
        if iteration % 64 == 63 {
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
        }
    }
    Err(Error::OracleDidNotConverge {
        requested: options.tolerance,
        achieved: gap,
        iterations: options.max_iterations,
    })
}

fn combine_into(points: &[Vec<f64>], w: &[f64], z: &mut [f64]) {
    z.iter_mut().for_each(|v| *v = 0.0);
    for (wi, p) in w.iter().zip(points) {
        if *wi != 0.0 {
            for (zj, pj) in z.iter_mut().zip(p) {
                *zj += wi * pj;
            }
        }
    }
}

/// Exact line search along `d` on `[0, t_max]` by bisection on the sign of
/// the directional derivative. Non-finite derivatives count as positive.
fn line_search<G>(
    gradient: &G,
    z: &[f64],
    d: &[f64],
    t_max: f64,
    probe: &mut [f64],
    probe_grad: &mut [f64],
) -> f64
where
    G: Fn(&[f64], &mut [f64]),
{
    let mut slope = |t: f64| {
        for ((p, zi), di) in probe.iter_mut().zip(z).zip(d) {
            *p = zi + t * di;
        }
        gradient(probe, probe_grad);
        let s: f64 = probe_grad
            .iter()
            .zip(d)
            .filter(|(_, di)| **di != 0.0)
            .map(|(g, di)| g * di)
            .sum();
        if s.is_nan() {
            f64::INFINITY
        } else {
            s
        }
    };
    if slope(t_max) <= 0.0 {
        return t_max;
    }
    let (mut lo, mut hi) = (0.0, t_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `min_{z∈C} f(z) + λᵀg(z)`, certified to `options.tolerance`.
pub fn reference_dual(
    problem: &ProblemInstance,
    lambda: &[f64],
    options: OracleOptions,
) -> Result<ReferenceSolution> {
    let g = problem.require_constraints()?;
    check_multipliers(lambda, g.len())?;
    let f = problem.objective();
    let n = problem.dim();
    let mut scratch = vec![0.0; n];
    let scratch = std::cell::RefCell::new(&mut scratch);
    minimize_over_hull(
        problem.actions().points(),
        |z| f.value(z) + g.weighted(lambda, z),
        |z, out| {
            f.subgradient_into(z, out);
            let mut s = scratch.borrow_mut();
            for (c, l) in g.components().iter().zip(lambda) {
                if *l != 0.0 {
                    c.subgradient_into(z, &mut s);
                    for (o, v) in out.iter_mut().zip(s.iter()) {
                        *o += l * v;
                    }
                }
            }
        },
        options,
        None,
    )
}

fn check_multipliers(lambda: &[f64], m: usize) -> Result<()> {
    if lambda.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: lambda.len(),
            context: "multiplier vector",
        });
    }
    if lambda.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(invalid("lambda", "multipliers must be finite and >= 0"));
    }
    Ok(())
}

/// `f* = min { f(z) : g(z) ⪯ 0, z ∈ C }`.
///
/// Constrained problems are solved by an augmented-Lagrangian sequence. Each
/// candidate is certified from both sides: the lower bound is a gap-certified
/// dual value `q(λ)`, the upper bound is `f` at the current point mixed with
/// the Slater point just enough to be feasible.
pub fn reference_primal(problem: &ProblemInstance, options: OracleOptions) -> Result<ReferenceSolution> {
    options.check()?;
    let f = problem.objective();
    let Some(g) = problem.constraints() else {
        return minimize_over_hull(
            problem.actions().points(),
            |z| f.value(z),
            |z, out| f.subgradient_into(z, out),
            options,
            None,
        );
    };
    let slater = problem.slater_point().ok_or(Error::MissingSlaterPoint)?;
    let slater_g = g.values(slater);
    let m = g.len();
    let n = problem.dim();
    let points = problem.actions().points();

    let mut lambda = vec![0.0; m];
    let mut rho = 1.0;
    let mut weights: Option<Vec<f64>> = None;
    let mut previous_violation = f64::INFINITY;
    let mut best_gap = f64::INFINITY;
    let mut iterations = 0usize;
    let inner = OracleOptions {
        tolerance: options.tolerance * 0.05,
        max_iterations: options.max_iterations,
    };

    for _outer in 0..200 {
        let lam = lambda.clone();
        let mut gvals = vec![0.0; m];
        let mut scratch = vec![0.0; n];
        let cells = std::cell::RefCell::new((&mut gvals, &mut scratch));
        let solution = minimize_over_hull(
            points,
            |z| {
                let penalty: f64 = g
                    .components()
                    .iter()
                    .zip(&lam)
                    .map(|(c, l)| {
                        let s = (l + rho * c.value(z)).max(0.0);
                        s * s - l * l
                    })
                    .sum();
                f.value(z) + penalty / (2.0 * rho)
            },
            |z, out| {
                f.subgradient_into(z, out);
                let mut cell = cells.borrow_mut();
                let (_, scratch) = &mut *cell;
                for (c, l) in g.components().iter().zip(&lam) {
                    let s = (l + rho * c.value(z)).max(0.0);
                    if s > 0.0 {
                        c.subgradient_into(z, scratch);
                        for (o, v) in out.iter_mut().zip(scratch.iter()) {
                            *o += s * v;
                        }
                    }
                }
            },
            inner,
            weights.as_deref(),
        )?;
        iterations += solution.iterations_used;
        let z = &solution.argpoint;
        let gz = g.values(z);
        for (l, gj) in lambda.iter_mut().zip(&gz) {
            *l = (*l + rho * gj).max(0.0);
        }
        weights = Some(solution.weights.clone());

        // Upper bound: smallest mix toward the Slater point that is feasible.
        let theta = gz
            .iter()
            .zip(&slater_g)
            .map(|(gj, sj)| {
                let plus = gj.max(0.0);
                if plus == 0.0 {
                    0.0
                } else {
                    plus / (plus - sj)
                }
            })
            .fold(0.0, f64::max);
        let feasible: Vec<f64> = z
            .iter()
            .zip(slater)
            .map(|(a, b)| (1.0 - theta) * a + theta * b)
            .collect();
        let upper = f.value(&feasible);

        let dual = reference_dual(problem, &lambda, inner)?;
        iterations += dual.iterations_used;
        let lower = dual.lower_bound();
        let certified = upper - lower;
        best_gap = best_gap.min(certified);
        if certified <= options.tolerance {
            let slater_w = problem.slater_weights().map(<[f64]>::to_vec);
            let weights = match slater_w {
                Some(sw) if theta > 0.0 => solution
                    .weights
                    .iter()
                    .zip(&sw)
                    .map(|(a, b)| (1.0 - theta) * a + theta * b)
                    .collect(),
                _ => solution.weights,
            };
            return Ok(ReferenceSolution {
                value: upper,
                argpoint: feasible,
                weights,
                tolerance_achieved: certified.max(0.0),
                iterations_used: iterations,
                multipliers: Some(lambda),
            });
        }
        let violation = gz.iter().fold(0.0_f64, |a, v| a.max(*v));
        if violation > 0.25 * previous_violation {
            rho = (rho * 4.0).min(1e8);
        }
        previous_violation = violation;
    }
    Err(Error::OracleDidNotConverge {
        requested: options.tolerance,
        achieved: best_gap,
        iterations,
    })
}

/// Outcome of [`curvature_validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub samples: usize,
    /// Largest `h(z+δ) - h(z) - ∂h(z)ᵀδ - μ‖δ‖²` seen.
    pub worst_model_excess: f64,
    /// Largest `(∂h(z+δ) - ∂h(z))ᵀδ - μ‖δ‖²` seen.
    pub worst_monotone_excess: f64,
    /// Largest relative finite-difference mismatch among smooth coordinates.
    pub worst_gradient_error: f64,
    /// `(z, δ)` attaining the worst of the two curvature excesses.
    pub worst_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub model_ok: bool,
    pub monotone_ok: bool,
    pub gradient_ok: bool,
}

impl CurvatureReport {
    pub fn passed(&self) -> bool {
        self.model_ok && self.monotone_ok && self.gradient_ok
    }
}

/// Absolute tolerance for the curvature inequalities, scaled by the size of
/// the quantities compared.
const CURVATURE_TOL: f64 = 1e-10;
const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

/// Random convex combination of `D`'s points (flat Dirichlet weights).
pub fn random_hull_point<R: Rng>(actions: &ActionSet, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..actions.len())
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    actions.combine(&w)
}

/// Checks the declared curvature of `spec` on `samples` random pairs
/// `z, z + δ` in `conv(D)`, and its subgradient against central differences.
pub fn curvature_validate(
    spec: &ConvexFunctionSpec,
    domain: &ActionSet,
    samples: usize,
    seed: u64,
) -> Result<CurvatureReport> {
    if samples == 0 {
        return Err(invalid("samples", "must be >= 1"));
    }
    if spec.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: spec.dim(),
            context: "function vs domain",
        });
    }
    let mu = spec.curvature();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CurvatureReport {
        samples,
        worst_model_excess: f64::NEG_INFINITY,
        worst_monotone_excess: f64::NEG_INFINITY,
        worst_gradient_error: 0.0,
        worst_pair: None,
        model_ok: true,
        monotone_ok: true,
        gradient_ok: true,
    };
    let mut worst_scaled = f64::NEG_INFINITY;
    for _ in 0..samples {
        let z = random_hull_point(domain, &mut rng);
        let y = random_hull_point(domain, &mut rng);
        let delta: Vec<f64> = y.iter().zip(&z).map(|(a, b)| a - b).collect();
        let dd = dot(&delta, &delta);
        let (hz, hy) = (spec.value(&z), spec.value(&y));
        let (gz, gy) = (spec.subgradient(&z), spec.subgradient(&y));
        let lin = dot(&gz, &delta);
        let model = hy - hz - lin - mu * dd;
        let monotone = dot(&gy, &delta) - lin - mu * dd;
        let scale = 1.0 + hz.abs().max(hy.abs()) + lin.abs() + mu * dd;
        report.worst_model_excess = report.worst_model_excess.max(model);
        report.worst_monotone_excess = report.worst_monotone_excess.max(monotone);
        if model > CURVATURE_TOL * scale {
            report.model_ok = false;
        }
        if monotone > CURVATURE_TOL * scale {
            report.monotone_ok = false;
        }
        let scaled = (model.max(monotone)) / scale;
        if scaled > worst_scaled {
            worst_scaled = scaled;
            report.worst_pair = Some((z.clone(), delta));
        }
        let error = gradient_error(spec, &z, &gz);
        report.worst_gradient_error = report.worst_gradient_error.max(error);
        if error > FD_TOL {
            report.gradient_ok = false;
        }
    }
    Ok(report)
}

/// Worst relative mismatch between `grad` and central differences, skipping
/// coordinates where one-sided differences disagree (a kink) or where the
/// function is not finite nearby.
fn gradient_error(spec: &ConvexFunctionSpec, z: &[f64], grad: &[f64]) -> f64 {
    let h0 = spec.value(z);
    let mut x = z.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..z.len() {
        x[i] = z[i] + FD_STEP;
        let hp = spec.value(&x);
        x[i] = z[i] - FD_STEP;
        let hm = spec.value(&x);
        x[i] = z[i];
        if !(hp.is_finite() && hm.is_finite()) {
            continue;
        }
        let forward = (hp - h0) / FD_STEP;
        let backward = (h0 - hm) / FD_STEP;
        let central = (hp - hm) / (2.0 * FD_STEP);
        let scale = 1.0_f64.max(central.abs());
        if (forward - backward).abs() > FD_TOL * scale * 10.0 {
            continue;
        }
        worst = worst.max((central - grad[i]).abs() / scale);
    }
    worst
}

/// `‖z - y‖₂` helper for diagnostics.
pub fn distance(z: &[f64], y: &[f64]) -> f64 {
    norm2(&z.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>())
}
