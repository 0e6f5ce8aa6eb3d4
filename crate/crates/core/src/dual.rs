//! Constrained optimisation by greedy primal steps and clipped dual ascent.
//!
//! Each iteration picks `x_k` against the Lagrangian at the (possibly
//! approximate) multipliers `λ̃_k`, averages `z_{k+1} = (1-β)z_k + βx_k` and
//! takes a clipped subgradient step `λ_{k+1} = [λ_k + αg(z_{k+1})]^{[0,λ̄]}`.
//! Running ("diamond") averages of `z` and `λ` taken after a burn-in `k̄` are
//! compared against closed-form brackets around `f*`.

use std::sync::Arc;

use log::warn;

use crate::descent::{beta_bound, direct_choice, linear_choice};
use crate::error::{invalid, Error, Result};
use crate::linalg::{clip, dot, lerp_into};
use crate::oracle::{minimize_over_hull, reference_dual, OracleOptions};
use crate::problem::{
    diameter_with, lagrangian_curvature, max_constraint_magnitude, ConstraintVector,
    DiameterConvention, ProblemInstance,
};
use crate::trace::{BurnIn, BurnInDetector, ContractFlags, RunTrace, TraceRow};

/// Smallest Slater margin accepted in strict mode.
pub const MARGIN_FLOOR: f64 = 1e-9;

/// `L(z, λ) = f(z) + λᵀg(z)`
pub fn lagrangian_value(problem: &ProblemInstance, z: &[f64], lambda: &[f64]) -> Result<f64> {
    let g = problem.require_constraints()?;
    check_len(z.len(), problem.dim(), "point")?;
    check_len(lambda.len(), g.len(), "multiplier vector")?;
    Ok(problem.objective().value(z) + g.weighted(lambda, z))
}

/// Writes `∂f(z) + Σⱼ λʲ∂gʲ(z)` into `out`.
pub fn lagrangian_subgradient_into(
    problem: &ProblemInstance,
    z: &[f64],
    lambda: &[f64],
    out: &mut [f64],
    scratch: &mut [f64],
) {
    problem.objective().subgradient_into(z, out);
    if let Some(g) = problem.constraints() {
        for (c, l) in g.components().iter().zip(lambda) {
            if *l != 0.0 {
                c.subgradient_into(z, scratch);
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o += l * s;
                }
            }
        }
    }
}

fn check_len(got: usize, expected: usize, context: &'static str) -> Result<()> {
    if got != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        });
    }
    Ok(())
}

/// `υ = min_j -gʲ(z̄)`. In strict mode a margin below [`MARGIN_FLOOR`] is an error.
pub fn slater_margin(problem: &ProblemInstance, strict: bool) -> Result<f64> {
    let g = problem.require_constraints()?;
    let z = problem.slater_point().ok_or(Error::MissingSlaterPoint)?;
    let floor = if strict { MARGIN_FLOOR } else { 0.0 };
    let values = g.values(z);
    let (index, worst) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
    if !(-worst > floor) {
        return Err(Error::NotStrictlyFeasible {
            index,
            value: worst,
            floor,
        });
    }
    Ok(-worst)
}

/// `(1/υ)(f(z̄) - q(λ₀) + δ)`, a bound on `‖λ‖₂` over the multipliers whose
/// dual value is within `δ` of optimal. `q(λ₀)` comes from the reference oracle.
pub fn dual_bound_from_slater(
    problem: &ProblemInstance,
    lambda0: &[f64],
    delta: f64,
    options: OracleOptions,
) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(invalid("delta", "must be >= 0"));
    }
    let upsilon = slater_margin(problem, false)?;
    let z = problem.slater_point().ok_or(Error::MissingSlaterPoint)?;
    let q = reference_dual(problem, lambda0, options)?.lower_bound();
    Ok((problem.objective().value(z) - q + delta) / upsilon)
}

/// `δ = α(mḡ²/2 + m²σ₀ḡ) + 2ε`
pub fn dual_slack(alpha: f64, epsilon: f64, sigma0: f64, gbar: f64, m: usize) -> f64 {
    let m = m as f64;
    alpha * (m * gbar * gbar / 2.0 + m * m * sigma0 * gbar) + 2.0 * epsilon
}

/// Smallest multiplier cap for which the multipliers provably stay in
/// `[0, λ̄]`: `(3/υ)(f(z̄) - q_ref + δ) + αmḡ`.
///
/// `q_ref` is `q(λ*)` or any lower bound on it such as `q(λ₀)`.
pub fn lambda_bar_requirement(
    problem: &ProblemInstance,
    alpha: f64,
    epsilon: f64,
    sigma0: f64,
    gbar: f64,
    q_ref: f64,
) -> Result<f64> {
    for (name, v) in [("alpha", alpha), ("epsilon", epsilon), ("sigma0", sigma0), ("gbar", gbar)] {
        if !(v >= 0.0) {
            return Err(invalid(name, "must be >= 0"));
        }
    }
    let upsilon = slater_margin(problem, false)?;
    let m = problem.m();
    let z = problem.slater_point().ok_or(Error::MissingSlaterPoint)?;
    let delta = dual_slack(alpha, epsilon, sigma0, gbar, m);
    Ok(3.0 / upsilon * (problem.objective().value(z) - q_ref + delta) + alpha * m as f64 * gbar)
}

/// `γ₁γβε / (m²(ḡ² + 2σ₀ḡ))`
pub fn alpha_bound(
    epsilon: f64,
    gamma: f64,
    gamma1: f64,
    beta: f64,
    m: usize,
    gbar: f64,
    sigma0: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be > 0"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", "must lie in (0, 1)"));
    }
    if !(gamma1 > 0.0 && gamma1 < 0.5) {
        return Err(invalid("gamma1", "must lie in (0, 1/2)"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("beta", "must lie in (0, 1]"));
    }
    if !(sigma0 >= 0.0) {
        return Err(invalid("sigma0", "must be >= 0"));
    }
    let m = m as f64;
    let denominator = m * m * (gbar * gbar + 2.0 * sigma0 * gbar);
    if !(denominator > 0.0) || !denominator.is_finite() {
        return Err(invalid("gbar", "the step-size denominator m²(ḡ² + 2σ₀ḡ) must be positive"));
    }
    Ok(gamma1 * gamma * beta * epsilon / denominator)
}

/// Multipliers `λ ∈ [0, λ̄]ᵐ` with ascent step `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierState {
    pub lambda: Vec<f64>,
    pub cap: f64,
    pub alpha: f64,
}

impl MultiplierState {
    pub fn new(lambda: Vec<f64>, cap: f64, alpha: f64) -> Result<Self> {
        if !(cap > 0.0) {
            return Err(invalid("lambda_bar", "must be > 0"));
        }
        if !(alpha > 0.0) {
            return Err(invalid("alpha", "must be > 0"));
        }
        if lambda.iter().any(|l| !(*l >= 0.0 && *l <= cap)) {
            return Err(invalid("lambda", "initial multipliers must lie in [0, λ̄]"));
        }
        Ok(Self { lambda, cap, alpha })
    }
}

/// `λ ← [λ + αg]^{[0,λ̄]}` componentwise.
pub fn multiplier_step(state: &mut MultiplierState, g_value: &[f64]) {
    for (l, g) in state.lambda.iter_mut().zip(g_value) {
        *l = clip(*l + state.alpha * g, state.cap);
    }
}

/// Bracket on `f(z◇_k) - f*` after `k` averaged terms:
/// `[-2mλ̄²/(αk) - α(mḡ²/2 + m²σ₀ḡ) - 2ε, 2ε + α(mḡ² + m²σ₀ḡ) + 3mλ̄²/(2αk)]`.
pub fn bound_main(
    k: f64,
    alpha: f64,
    epsilon: f64,
    sigma0: f64,
    lambda_bar: f64,
    gbar: f64,
    m: usize,
) -> (f64, f64) {
    let m = m as f64;
    let tail = m * lambda_bar * lambda_bar / (alpha * k);
    let lower = -2.0 * tail - alpha * (m * gbar * gbar / 2.0 + m * m * sigma0 * gbar) - 2.0 * epsilon;
    let upper = 2.0 * epsilon + alpha * (m * gbar * gbar + m * m * sigma0 * gbar) + 1.5 * tail;
    (lower, upper)
}

/// Bracket on `(λ◇_k)ᵀg(z◇_k)`: `[-mλ̄²/(2αk) - (α/2)mḡ², mλ̄²/(αk)]`.
pub fn bound_slackness(k: f64, alpha: f64, lambda_bar: f64, gbar: f64, m: usize) -> (f64, f64) {
    let m = m as f64;
    let tail = m * lambda_bar * lambda_bar / (alpha * k);
    (-tail / 2.0 - alpha / 2.0 * m * gbar * gbar, tail)
}

/// Cap on every `gʲ(z◇_k)`: `λ̄/(αk)`.
pub fn feasibility_cap(k: f64, alpha: f64, lambda_bar: f64) -> f64 {
    lambda_bar / (alpha * k)
}

/// Symmetric bracket on `L(z◇_k, λ◇_k) - f*`: `±(2ε + (α/2)mḡ² + mλ̄²/(αk))`.
pub fn bound_lagrangian_average(
    k: f64,
    alpha: f64,
    epsilon: f64,
    lambda_bar: f64,
    gbar: f64,
    m: usize,
) -> (f64, f64) {
    let m = m as f64;
    let w = 2.0 * epsilon + alpha / 2.0 * m * gbar * gbar + m * lambda_bar * lambda_bar / (alpha * k);
    (-w, w)
}

/// All theoretical brackets at one averaging length.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub k: usize,
    pub main_lower: f64,
    pub main_upper: f64,
    pub slackness_lower: f64,
    pub slackness_upper: f64,
    pub feasibility_caps: Vec<f64>,
    pub lag_avg_lower: f64,
    pub lag_avg_upper: f64,
}

impl BoundReport {
    pub fn new(k: usize, p: &ResolvedParams) -> Self {
        let kf = k.max(1) as f64;
        let (main_lower, main_upper) =
            bound_main(kf, p.alpha, p.epsilon, p.sigma0, p.lambda_bar, p.gbar, p.m);
        let (slackness_lower, slackness_upper) = bound_slackness(kf, p.alpha, p.lambda_bar, p.gbar, p.m);
        let (lag_avg_lower, lag_avg_upper) =
            bound_lagrangian_average(kf, p.alpha, p.epsilon, p.lambda_bar, p.gbar, p.m);
        Self {
            k,
            main_lower,
            main_upper,
            slackness_lower,
            slackness_upper,
            feasibility_caps: vec![feasibility_cap(kf, p.alpha, p.lambda_bar); p.m],
            lag_avg_lower,
            lag_avg_upper,
        }
    }
}

/// Running means of `z_{i+1}`, `λ_i` and `λ̃_i` over `i = window_start, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiamondAverages {
    pub window_start: usize,
    pub count: usize,
    sum_z: Vec<f64>,
    sum_lambda: Vec<f64>,
    sum_lambda_tilde: Vec<f64>,
}

impl DiamondAverages {
    pub fn new(window_start: usize, n: usize, m: usize) -> Self {
        Self {
            window_start,
            count: 0,
            sum_z: vec![0.0; n],
            sum_lambda: vec![0.0; m],
            sum_lambda_tilde: vec![0.0; m],
        }
    }

    pub fn push(&mut self, z_next: &[f64], lambda: &[f64], lambda_tilde: &[f64]) {
        self.count += 1;
        for (s, v) in self.sum_z.iter_mut().zip(z_next) {
            *s += v;
        }
        for (s, v) in self.sum_lambda.iter_mut().zip(lambda) {
            *s += v;
        }
        for (s, v) in self.sum_lambda_tilde.iter_mut().zip(lambda_tilde) {
            *s += v;
        }
    }

    fn mean(sum: &[f64], count: usize) -> Vec<f64> {
        let c = count.max(1) as f64;
        sum.iter().map(|s| s / c).collect()
    }

    /// `z◇`, divided by the actual number of summed terms.
    pub fn z(&self) -> Vec<f64> {
        Self::mean(&self.sum_z, self.count)
    }

    pub fn lambda(&self) -> Vec<f64> {
        Self::mean(&self.sum_lambda, self.count)
    }

    pub fn lambda_tilde(&self) -> Vec<f64> {
        Self::mean(&self.sum_lambda_tilde, self.count)
    }
}

/// Caller-supplied inner step: `(z_k, λ̃_k, β) ↦ x_k ∈ C`.
pub type CustomPrimalFn = Arc<dyn Fn(&[f64], &[f64], f64) -> Result<Vec<f64>> + Send + Sync>;

/// `λ ↦ argmin_{z∈C} L(z, λ)`
pub type ArgminFn = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// Exact minimiser of `L(·, λ)` over `conv(D)`, used for dual checkpoints in
/// place of the hull oracle.
#[derive(Clone)]
pub struct LagrangianMinimizer(pub ArgminFn);

impl std::fmt::Debug for LagrangianMinimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LagrangianMinimizer")
    }
}

/// How `x_k` is chosen.
#[derive(Clone, Default)]
pub enum PrimalUpdate {
    /// `argmin_{x∈D} L((1-β)z + βx, λ̃)`
    #[default]
    Discrete,
    /// `argmin_{x∈D} ∂L(z, λ̃)ᵀx`
    FrankWolfe,
    /// `argmin_{x∈conv(D)} L((1-β)z + βx, λ̃)`, solved by the reference oracle.
    ConvexHull,
    /// The better of `Discrete` and `ConvexHull`.
    Hybrid,
    Custom(CustomPrimalFn),
}

impl std::fmt::Debug for PrimalUpdate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Discrete => "Discrete",
            Self::FrankWolfe => "FrankWolfe",
            Self::ConvexHull => "ConvexHull",
            Self::Hybrid => "Hybrid",
            Self::Custom(_) => "Custom",
        };
        f.write_str(name)
    }
}

/// Which region the unified step minimises over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnifiedMode {
    Discrete,
    ConvexHull,
    Hybrid,
}

/// Result of one primal step.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalChoice {
    /// Index into `D` when the chosen point is an action.
    pub action: Option<usize>,
    pub x: Vec<f64>,
    /// `L((1-β)z + βx, λ)`
    pub value: f64,
}

/// `x_k ∈ argmin_{x ∈ C' ∪ D} L((1-β)z + βx, λ)` with `C'` empty, `conv(D)`
/// or both. Hull solves are certified to `1e-8`.
pub fn unified_primal_step(
    problem: &ProblemInstance,
    z: &[f64],
    lambda: &[f64],
    beta: f64,
    mode: UnifiedMode,
) -> Result<PrimalChoice> {
    let g = problem.require_constraints()?;
    check_len(z.len(), problem.dim(), "point")?;
    check_len(lambda.len(), g.len(), "multiplier vector")?;
    let f = problem.objective();
    let actions = problem.actions();
    let lag = |y: &[f64]| f.value(y) + g.weighted(lambda, y);
    let discrete = || -> Result<PrimalChoice> {
        let mut scratch = vec![0.0; z.len()];
        let (i, v) = direct_choice(lag, z, beta, actions, &mut scratch)?;
        Ok(PrimalChoice {
            action: Some(i),
            x: actions.point(i).to_vec(),
            value: v,
        })
    };
    let hull = || -> Result<PrimalChoice> {
        let n = z.len();
        let buf = std::cell::RefCell::new((vec![0.0; n], vec![0.0; n]));
        let sol = minimize_over_hull(
            actions.points(),
            |x| {
                let mut b = buf.borrow_mut();
                lerp_into(z, x, beta, &mut b.0);
                lag(&b.0)
            },
            |x, out| {
                let mut b = buf.borrow_mut();
                let (y, scratch) = &mut *b;
                lerp_into(z, x, beta, y);
                lagrangian_subgradient_into(problem, y, lambda, out, scratch);
                out.iter_mut().for_each(|o| *o *= beta);
            },
            OracleOptions::with_tolerance(1e-8),
            None,
        )?;
        let action = actions
            .iter()
            .position(|p| p.iter().zip(&sol.argpoint).all(|(a, b)| (a - b).abs() <= 1e-12));
        Ok(PrimalChoice {
            action,
            x: sol.argpoint,
            value: sol.value,
        })
    };
    match mode {
        UnifiedMode::Discrete => discrete(),
        UnifiedMode::ConvexHull => hull(),
        UnifiedMode::Hybrid => {
            let d = discrete()?;
            let h = hull()?;
            Ok(if h.value < d.value { h } else { d })
        }
    }
}

/// Produces `λ̃_k` (before clipping) from `k` and `λ_k`.
pub type PerturbationFn = Box<dyn FnMut(usize, &[f64], &mut [f64]) + Send>;
/// Writes the additive constraint offset observed at iteration `k`.
pub type OffsetFn = Box<dyn FnMut(usize, &mut [f64]) + Send>;

/// Where the multipliers used in the primal step come from.
#[derive(Default)]
pub enum MultiplierSource {
    /// `λ̃_k = λ_k`.
    #[default]
    Exact,
    /// `λ̃_k = [hook(k, λ_k)]^{[0,λ̄]}`.
    Perturbed(PerturbationFn),
    /// `λ̃_{k+1} = [λ̃_k + α(g(x_k) + o_k)]^{[0,λ̄]}`; for linear constraints
    /// `Az ⪯ b` with arrivals `b_k` the offset is `b - b_k` and `λ̃/α` is a
    /// queue occupancy.
    Queue(OffsetFn),
    /// `λ̃_k = λ_k` with the exact update itself driven by `g(z_{k+1}) + o_k`.
    Observed(OffsetFn),
}

impl std::fmt::Debug for MultiplierSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "Exact",
            Self::Perturbed(_) => "Perturbed",
            Self::Queue(_) => "Queue",
            Self::Observed(_) => "Observed",
        })
    }
}

/// Where the averaging window starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowStart {
    /// At the burn-in detected from dual checkpoints; until the burn-in is
    /// confirmed, a failed checkpoint restarts the window.
    #[default]
    Detected,
    Fixed(usize),
    FromStart,
}

/// When `q(λ̃_k)` is evaluated by the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSchedule {
    /// Evaluate at every iteration up to this `k`.
    pub dense_until: usize,
    /// Afterwards evaluate at multiples of this stride.
    pub every: usize,
    /// No evaluations after this `k`.
    pub until: Option<usize>,
    pub tolerance: f64,
}

impl Default for DualSchedule {
    fn default() -> Self {
        Self {
            dense_until: 1000,
            every: 100,
            until: None,
            tolerance: 1e-8,
        }
    }
}

impl DualSchedule {
    pub fn is_checkpoint(&self, k: usize) -> bool {
        self.until.is_none_or(|u| k <= u) && (k <= self.dense_until || k.is_multiple_of(self.every.max(1)))
    }
}

/// Parameters of a constrained run.
#[derive(Debug, Clone)]
pub struct SolverParams {
    pub epsilon: f64,
    pub gamma: f64,
    /// `None` means 0.4, or with a pinned `α` the `γ₁` that `α` implies.
    pub gamma1: Option<f64>,
    /// `None` uses the step-size bound in terms of `γ₁γβε`.
    pub alpha: Option<f64>,
    /// `None` uses the smoothing bound `(1-γ)min{ε/(μ̄_L x̄²), 1}`.
    pub beta: Option<f64>,
    pub lambda_bar: f64,
    pub sigma0: f64,
    /// Reject parameters outside the theoretical ranges instead of warning.
    pub strict: bool,
    pub diameter_convention: DiameterConvention,
    /// Override for `ḡ`; `None` computes it by vertex enumeration plus probes.
    pub gbar: Option<f64>,
    pub gbar_probes: Vec<Vec<f64>>,
    pub iterations: usize,
    pub record_every: usize,
    pub primal: PrimalUpdate,
    /// `z₁`; `None` uses the mean of `D`.
    pub initial_point: Option<Vec<f64>>,
    /// `λ₁`; `None` is zero.
    pub initial_lambda: Option<Vec<f64>>,
    pub dual_schedule: Option<DualSchedule>,
    pub dual_minimizer: Option<LagrangianMinimizer>,
    pub window: WindowStart,
    pub confirm_window: usize,
    /// Reference optimum for bracket checks; brackets are skipped without it.
    pub f_star: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            gamma: 0.5,
            gamma1: None,
            alpha: None,
            beta: None,
            lambda_bar: 1.0,
            sigma0: 0.0,
            strict: true,
            diameter_convention: DiameterConvention::Strict,
            gbar: None,
            gbar_probes: Vec::new(),
            iterations: 10_000,
            record_every: 100,
            primal: PrimalUpdate::Discrete,
            initial_point: None,
            initial_lambda: None,
            dual_schedule: Some(DualSchedule::default()),
            dual_minimizer: None,
            window: WindowStart::Detected,
            confirm_window: 100,
            f_star: None,
        }
    }
}

/// Parameters after derivation of `ḡ`, `μ̄_L`, `x̄_D`, `α`, `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_bar: f64,
    pub sigma0: f64,
    pub gbar: f64,
    /// `ḡ` from vertex enumeration (and probes), regardless of overrides.
    pub gbar_computed: f64,
    pub mu_lagrangian: f64,
    pub diameter: f64,
    pub upsilon: f64,
    pub m: usize,
    pub alpha_bound: f64,
    pub beta_bound: f64,
}

impl SolverParams {
    /// Derives the constants and validates step sizes against their bounds.
    pub fn resolve(&self, problem: &ProblemInstance) -> Result<ResolvedParams> {
        let g = problem.require_constraints()?;
        if !(self.lambda_bar > 0.0) {
            return Err(invalid("lambda_bar", "must be > 0"));
        }
        if !(self.sigma0 >= 0.0) {
            return Err(invalid("sigma0", "must be >= 0"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        let upsilon = slater_margin(problem, self.strict)?;
        let gbar_computed = max_constraint_magnitude(problem, &self.gbar_probes)?;
        let gbar = match self.gbar {
            Some(v) => {
                if !(v > 0.0) {
                    return Err(invalid("gbar", "must be > 0"));
                }
                if (v - gbar_computed).abs() > 1e-9 * gbar_computed.max(1.0) {
                    warn!("supplied ḡ = {v} differs from the vertex-enumeration value {gbar_computed}");
                }
                v
            }
            None => gbar_computed,
        };
        let mu_lagrangian =
            lagrangian_curvature(problem.objective().curvature(), &g.curvatures(), self.lambda_bar)?;
        let diameter = diameter_with(problem.actions(), self.diameter_convention);
        let beta_max = beta_bound(self.epsilon, self.gamma, mu_lagrangian, diameter)?;
        let beta = self.check_step("beta", self.beta, beta_max, "(1-γ)·min{ε/(μ̄_L x̄²), 1}")?;
        let bound_at = |gamma1: f64| {
            alpha_bound(self.epsilon, self.gamma, gamma1, beta, g.len(), gbar, self.sigma0)
        };
        let (gamma1, alpha_max, alpha) = match (self.gamma1, self.alpha) {
            (None, Some(a)) => {
                if !(a > 0.0) {
                    return Err(invalid("alpha", "must be > 0"));
                }
                // The bound is linear in γ₁.
                let per_unit = bound_at(0.25)? / 0.25;
                let implied = a / per_unit;
                if !(implied < 0.5) {
                    let msg = format!(
                        "{a} exceeds the step-size bound γ₁γβε/(m²(ḡ² + 2σ₀ḡ)) for every γ₁ < 1/2 (implied γ₁ = {implied})"
                    );
                    if self.strict {
                        return Err(invalid("alpha", msg));
                    }
                    warn!("alpha: {msg}");
                }
                (implied, a, a)
            }
            (gamma1, alpha) => {
                let gamma1 = gamma1.unwrap_or(0.4);
                let alpha_max = bound_at(gamma1)?;
                let alpha = self.check_step("alpha", alpha, alpha_max, "γ₁γβε/(m²(ḡ² + 2σ₀ḡ))")?;
                (gamma1, alpha_max, alpha)
            }
        };
        Ok(ResolvedParams {
            epsilon: self.epsilon,
            gamma: self.gamma,
            gamma1,
            alpha,
            beta,
            lambda_bar: self.lambda_bar,
            sigma0: self.sigma0,
            gbar,
            gbar_computed,
            mu_lagrangian,
            diameter,
            upsilon,
            m: g.len(),
            alpha_bound: alpha_max,
            beta_bound: beta_max,
        })
    }

    fn check_step(&self, name: &'static str, value: Option<f64>, bound: f64, formula: &str) -> Result<f64> {
        let Some(v) = value else { return Ok(bound) };
        if !(v > 0.0) {
            return Err(invalid(name, "must be > 0"));
        }
        if v > bound * (1.0 + 1e-9) {
            let msg = format!("{v} exceeds the step-size bound {formula} = {bound}");
            if self.strict {
                return Err(invalid(name, msg));
            }
            warn!("{name}: {msg}");
        }
        Ok(v)
    }
}

/// Counters of bracket and contract checks over a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViolationLog {
    pub count: usize,
    pub first: Option<usize>,
    pub last: Option<usize>,
    /// Largest amount by which the bracket was exceeded.
    pub worst_excess: f64,
}

impl ViolationLog {
    fn record(&mut self, k: usize, excess: f64) {
        if excess > 0.0 {
            self.count += 1;
            self.first.get_or_insert(k);
            self.last = Some(k);
            self.worst_excess = self.worst_excess.max(excess);
        }
    }

    pub fn is_clean(&self) -> bool {
        self.count == 0
    }
}

/// Everything a constrained run reports besides the trace.
#[derive(Debug, Clone)]
pub struct ConstrainedRun {
    pub trace: RunTrace,
    pub params: ResolvedParams,
    pub burn_in: BurnIn,
    pub averages: Option<DiamondAverages>,
    /// `f(z◇)` at the end of the run (window average).
    pub final_diamond_objective: Option<f64>,
    /// `f` of the average taken from `k = 1`.
    pub from_start_objective: f64,
    pub final_report: Option<BoundReport>,
    pub lambda: Vec<f64>,
    pub lambda_tilde: Vec<f64>,
    /// `|λʲ_k - λ̃ʲ_k| > ασ₀`.
    pub multiplier_contract: ViolationLog,
    pub max_multiplier_gap: f64,
    /// Largest `|λʲ_{k+1} - λʲ_k|`.
    pub max_multiplier_drift: f64,
    pub main_bracket: ViolationLog,
    pub slackness_bracket: ViolationLog,
    pub feasibility: ViolationLog,
    pub lagrangian_bracket: ViolationLog,
    /// Largest `q(λ̃_k)` seen at checkpoints.
    pub max_dual_value: Option<f64>,
}

const CHECK_TOL: f64 = 1e-12;

/// Runs the constrained loop for `params.iterations` steps.
pub fn run_constrained(
    problem: &ProblemInstance,
    params: &SolverParams,
    mut source: MultiplierSource,
) -> Result<ConstrainedRun> {
    let p = params.resolve(problem)?;
    let g = problem.require_constraints()?;
    let f = problem.objective();
    let actions = problem.actions();
    let n = problem.dim();
    let m = g.len();
    if params.window == WindowStart::Detected && params.dual_schedule.is_none() {
        return Err(invalid("window", "burn-in detection needs a dual checkpoint schedule"));
    }

    let mut z = match &params.initial_point {
        Some(z1) => {
            check_len(z1.len(), n, "initial point")?;
            z1.clone()
        }
        None => actions.combine(&vec![1.0 / actions.len() as f64; actions.len()]),
    };
    let lambda1 = match &params.initial_lambda {
        Some(l) => {
            check_len(l.len(), m, "initial multipliers")?;
            l.clone()
        }
        None => vec![0.0; m],
    };
    let mut mult = MultiplierState::new(lambda1.clone(), p.lambda_bar, p.alpha)?;
    let mut lambda_tilde = lambda1;
    let mut queue_tilde = mult.lambda.clone();

    let mut z_next = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut gz = vec![0.0; m];
    let mut offset = vec![0.0; m];
    let mut from_start_sum = vec![0.0; n];

    let mut detector = BurnInDetector::new(2.0 * p.epsilon, params.confirm_window);
    let mut averages: Option<DiamondAverages> = match params.window {
        WindowStart::FromStart => Some(DiamondAverages::new(1, n, m)),
        _ => None,
    };
    let mut dual_weights: Option<Vec<f64>> = None;

    let mut out = ConstrainedRun {
        trace: RunTrace::default(),
        params: p.clone(),
        burn_in: BurnIn::default(),
        averages: None,
        final_diamond_objective: None,
        from_start_objective: f64::NAN,
        final_report: None,
        lambda: Vec::new(),
        lambda_tilde: Vec::new(),
        multiplier_contract: ViolationLog::default(),
        max_multiplier_gap: 0.0,
        max_multiplier_drift: 0.0,
        main_bracket: ViolationLog::default(),
        slackness_bracket: ViolationLog::default(),
        feasibility: ViolationLog::default(),
        lagrangian_bracket: ViolationLog::default(),
        max_dual_value: None,
    };

    for k in 1..=params.iterations {
        // Multipliers used by the primal step.
        match &mut source {
            MultiplierSource::Exact | MultiplierSource::Observed(_) => {
                lambda_tilde.copy_from_slice(&mult.lambda)
            }
            MultiplierSource::Perturbed(hook) => {
                hook(k, &mult.lambda, &mut lambda_tilde);
                lambda_tilde.iter_mut().for_each(|l| *l = clip(*l, p.lambda_bar));
            }
            MultiplierSource::Queue(_) => lambda_tilde.copy_from_slice(&queue_tilde),
        }
        let gap = mult
            .lambda
            .iter()
            .zip(&lambda_tilde)
            .fold(0.0_f64, |a, (l, t)| a.max((l - t).abs()));
        out.max_multiplier_gap = out.max_multiplier_gap.max(gap);
        let contract_breach = gap > p.alpha * p.sigma0 * (1.0 + 1e-9) + CHECK_TOL;
        if contract_breach {
            if out.multiplier_contract.is_clean() {
                warn!("approximate multipliers left the α·σ₀ band at k = {k}; bounds are no longer guaranteed");
            }
            out.multiplier_contract.record(k, gap - p.alpha * p.sigma0);
        }

        // Primal step and averaging.
        let lam = &lambda_tilde;
        let lag = |y: &[f64]| f.value(y) + g.weighted(lam, y);
        let (action, x): (Option<usize>, Option<Vec<f64>>) = match &params.primal {
            PrimalUpdate::Discrete => {
                (Some(direct_choice(lag, &z, p.beta, actions, &mut scratch)?.0), None)
            }
            PrimalUpdate::FrankWolfe => {
                lagrangian_subgradient_into(problem, &z, lam, &mut grad, &mut scratch);
                (Some(linear_choice(&grad, actions)?.0), None)
            }
            PrimalUpdate::ConvexHull | PrimalUpdate::Hybrid => {
                let mode = if matches!(params.primal, PrimalUpdate::Hybrid) {
                    UnifiedMode::Hybrid
                } else {
                    UnifiedMode::ConvexHull
                };
                let c = unified_primal_step(problem, &z, lam, p.beta, mode)?;
                (c.action, Some(c.x))
            }
            PrimalUpdate::Custom(step) => {
                let x = step(&z, lam, p.beta)?;
                check_len(x.len(), n, "custom primal step")?;
                (None, Some(x))
            }
        };
        let x_ref: &[f64] = match (&x, action) {
            (Some(x), _) => x,
            (None, Some(i)) => actions.point(i),
            (None, None) => unreachable!("primal step returned neither an action nor a point"),
        };
        lerp_into(&z, x_ref, p.beta, &mut z_next);
        for (s, v) in from_start_sum.iter_mut().zip(&z_next) {
            *s += v;
        }
        let lagrangian = f.value(&z_next) + g.weighted(lam, &z_next);

        // Dual checkpoint and burn-in detection.
        let mut dual_value = None;
        if let Some(schedule) = &params.dual_schedule {
            if schedule.is_checkpoint(k) {
                let q = match &params.dual_minimizer {
                    Some(LagrangianMinimizer(argmin)) => lagrangian_value(problem, &argmin(lam)?, lam)?,
                    None => dual_checkpoint(problem, lam, schedule.tolerance, &mut dual_weights)?,
                };
                out.max_dual_value = Some(out.max_dual_value.map_or(q, |v: f64| v.max(q)));
                let gap = lagrangian - q;
                let was_confirmed = detector.is_confirmed();
                detector.observe(k, gap);
                dual_value = Some(q);
                if params.window == WindowStart::Detected && !was_confirmed {
                    if gap <= 2.0 * p.epsilon {
                        averages.get_or_insert_with(|| DiamondAverages::new(k, n, m));
                    } else {
                        averages = None;
                    }
                }
            }
        }
        if let WindowStart::Fixed(start) = params.window {
            if k == start.max(1) {
                averages = Some(DiamondAverages::new(k, n, m));
            }
        }
        if let Some(avg) = averages.as_mut() {
            avg.push(&z_next, &mult.lambda, lam);
        }

        // Exact multiplier update.
        g.values_into(&z_next, &mut gz);
        let old = mult.lambda.clone();
        match &mut source {
            MultiplierSource::Observed(offsets) => {
                offsets(k, &mut offset);
                let perturbed: Vec<f64> = gz.iter().zip(&offset).map(|(a, b)| a + b).collect();
                multiplier_step(&mut mult, &perturbed);
            }
            _ => multiplier_step(&mut mult, &gz),
        }
        let drift = old
            .iter()
            .zip(&mult.lambda)
            .fold(0.0_f64, |a, (u, v)| a.max((u - v).abs()));
        out.max_multiplier_drift = out.max_multiplier_drift.max(drift);
        if let MultiplierSource::Queue(offsets) = &mut source {
            offsets(k, &mut offset);
            for ((q, c), o) in queue_tilde.iter_mut().zip(g.components()).zip(&offset) {
                *q = clip(*q + p.alpha * (c.value(x_ref) + o), p.lambda_bar);
            }
        }

        // Bracket checks on the window averages.
        let mut row_bounds = (None, None);
        let mut diamond_objective = None;
        let mut diamond_constraints = Vec::new();
        let mut slackness = None;
        let mut bracket_breach = false;
        if let Some(avg) = averages.as_ref().filter(|a| a.count > 0) {
            let zd = avg.z();
            let fd = f.value(&zd);
            diamond_objective = Some(fd);
            let report = BoundReport::new(avg.count, &p);
            let gd = g.values(&zd);
            let ld = avg.lambda();
            let slack = dot(&ld, &gd);
            slackness = Some(slack);
            out.slackness_bracket.record(
                k,
                (report.slackness_lower - slack).max(slack - report.slackness_upper) - CHECK_TOL,
            );
            let worst_g = gd.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
            out.feasibility.record(k, worst_g - report.feasibility_caps[0] - CHECK_TOL);
            diamond_constraints = gd.clone();
            if let Some(fs) = params.f_star {
                let lower = fs + report.main_lower;
                let upper = fs + report.main_upper;
                row_bounds = (Some(lower), Some(upper));
                let excess = (lower - fd).max(fd - upper) - CHECK_TOL;
                bracket_breach = excess > 0.0;
                out.main_bracket.record(k, excess);
                let lt = avg.lambda_tilde();
                let lag_avg = fd + dot(&lt, &gd) - fs;
                out.lagrangian_bracket.record(
                    k,
                    (report.lag_avg_lower - lag_avg).max(lag_avg - report.lag_avg_upper) - CHECK_TOL,
                );
            }
        }

        let last = k == params.iterations;
        if k == 1 || k % params.record_every == 0 || dual_value.is_some() && k <= 1000 || last {
            out.trace.rows.push(TraceRow {
                k,
                action,
                z: z_next.clone(),
                objective: f.value(&z_next),
                lambda: old,
                lambda_tilde: lambda_tilde.clone(),
                lagrangian: Some(lagrangian),
                dual_value,
                diamond_objective,
                diamond_constraints,
                slackness,
                bound_lower: row_bounds.0,
                bound_upper: row_bounds.1,
                flags: ContractFlags {
                    multiplier_gap: contract_breach,
                    bracket: bracket_breach,
                },
            });
        }
        std::mem::swap(&mut z, &mut z_next);
    }

    let count = params.iterations as f64;
    let from_start: Vec<f64> = from_start_sum.iter().map(|s| s / count).collect();
    out.from_start_objective = f.value(&from_start);
    out.trace.final_z = z;
    out.trace.iterations = params.iterations;
    out.burn_in = detector.result();
    if let Some(avg) = &averages {
        out.final_diamond_objective = Some(f.value(&avg.z()));
        out.final_report = Some(BoundReport::new(avg.count, &p));
    }
    out.averages = averages;
    out.lambda = mult.lambda;
    out.lambda_tilde = lambda_tilde;
    Ok(out)
}

fn dual_checkpoint(
    problem: &ProblemInstance,
    lambda: &[f64],
    tolerance: f64,
    warm: &mut Option<Vec<f64>>,
) -> Result<f64> {
    let g: &ConstraintVector = problem.require_constraints()?;
    let f = problem.objective();
    let n = problem.dim();
    let scratch = std::cell::RefCell::new(vec![0.0; n]);
    let sol = minimize_over_hull(
        problem.actions().points(),
        |z| f.value(z) + g.weighted(lambda, z),
        |z, out| {
            let mut s = scratch.borrow_mut();
            lagrangian_subgradient_into(problem, z, lambda, out, &mut s);
        },
        OracleOptions::with_tolerance(tolerance),
        warm.as_deref(),
    )?;
    let q = sol.value;
    *warm = Some(sol.weights);
    Ok(q)
}
