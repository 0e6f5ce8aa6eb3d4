//! Greedy descent over a finite action set.
//!
//! Each step picks one action `x_k ∈ D` and moves the running average
//! `z_{k+1} = (1-β)z_k + βx_k`. Two selection rules are provided: the direct
//! rule minimises `F((1-β)z_k + βx)` over `D`, the Frank-Wolfe-like rule
//! minimises the linearisation `∂F(z_k)ᵀx`. For linear `F` they coincide.

use log::warn;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, lerp_into};
use crate::oracle::argmin_by;
use crate::problem::{diameter_with, ActionSet, ConvexFunctionSpec, DiameterConvention, ProblemInstance};
use crate::trace::{RunTrace, TraceRow};

/// Largest admissible smoothing step: `(1-γ)·min{ε/(μ x̄²), 1}`.
///
/// With `μ = 0` the first term is infinite and the bound is `1-γ`.
pub fn beta_bound(epsilon: f64, gamma: f64, mu: f64, diameter: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be > 0"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", "must lie in (0, 1)"));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(invalid("mu", "must be finite and >= 0"));
    }
    if !(diameter > 0.0) {
        return Err(invalid("diameter", "must be > 0"));
    }
    let ratio = if mu == 0.0 {
        f64::INFINITY
    } else {
        epsilon / (mu * diameter * diameter)
    };
    Ok((1.0 - gamma) * ratio.min(1.0))
}

/// Action selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// `argmin_{x∈D} F((1-β)z + βx)`
    #[default]
    Direct,
    /// `argmin_{x∈D} ∂F(z)ᵀx`
    FrankWolfe,
}

/// Running average `z_k`, the counter `k` and optionally the convex weights
/// expressing `z_k` in terms of `z₁` and the points of `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentState {
    pub z: Vec<f64>,
    pub k: usize,
    pub beta: f64,
    weights: Option<HullWeights>,
}

/// `z_k = initial·z₁ + Σᵢ actions[i]·xᵢ`
#[derive(Debug, Clone, PartialEq)]
pub struct HullWeights {
    pub initial: f64,
    pub actions: Vec<f64>,
}

impl DescentState {
    /// Starts at `z₁ = z` with `k = 1`.
    pub fn new(z: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid("beta", format!("must lie in (0, 1], got {beta}")));
        }
        Ok(Self {
            z,
            k: 1,
            beta,
            weights: None,
        })
    }

    /// Also tracks convex weights over `{z₁} ∪ D`.
    pub fn tracking(z: Vec<f64>, beta: f64, action_count: usize) -> Result<Self> {
        let mut s = Self::new(z, beta)?;
        s.weights = Some(HullWeights {
            initial: 1.0,
            actions: vec![0.0; action_count],
        });
        Ok(s)
    }

    pub fn weights(&self) -> Option<&HullWeights> {
        self.weights.as_ref()
    }

    /// `z` rebuilt from the tracked weights.
    pub fn reconstruct(&self, z1: &[f64], actions: &ActionSet) -> Option<Vec<f64>> {
        let w = self.weights.as_ref()?;
        let mut z = actions.combine(&w.actions);
        for (zi, a) in z.iter_mut().zip(z1) {
            *zi += w.initial * a;
        }
        Some(z)
    }
}

/// `z' = (1-β)z + βx`, `k' = k + 1`.
pub fn average_update(state: &mut DescentState, x: &[f64]) {
    let z = std::mem::take(&mut state.z);
    state.z = vec![0.0; z.len()];
    lerp_into(&z, x, state.beta, &mut state.z);
    state.k += 1;
}

/// [`average_update`] with the chosen action given by index, keeping the
/// tracked hull weights in sync.
pub fn average_update_indexed(state: &mut DescentState, actions: &ActionSet, index: usize) {
    if let Some(w) = state.weights.as_mut() {
        let keep = 1.0 - state.beta;
        w.initial *= keep;
        w.actions.iter_mut().for_each(|v| *v *= keep);
        w.actions[index] += state.beta;
    }
    average_update(state, actions.point(index));
}

/// Index of `argmin_{x∈D} value((1-β)z + βx)` and the minimum value.
pub(crate) fn direct_choice<V>(
    value: V,
    z: &[f64],
    beta: f64,
    actions: &ActionSet,
    scratch: &mut [f64],
) -> Result<(usize, f64)>
where
    V: Fn(&[f64]) -> f64,
{
    argmin_by(actions.len(), |i| {
        lerp_into(z, actions.point(i), beta, scratch);
        value(scratch)
    })
}

/// Index of `argmin_{x∈D} wᵀx` and the minimum value.
pub(crate) fn linear_choice(weights: &[f64], actions: &ActionSet) -> Result<(usize, f64)> {
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite {
            candidate: i,
            what: "subgradient component",
        });
    }
    argmin_by(actions.len(), |i| dot(weights, actions.point(i)))
}

/// `x_k ∈ argmin_{x∈D} F((1-β)z_k + βx)`, lowest index on ties.
pub fn greedy_direct_step(f: &ConvexFunctionSpec, state: &DescentState, actions: &ActionSet) -> Result<usize> {
    let mut scratch = vec![0.0; actions.dim()];
    Ok(direct_choice(|y| f.value(y), &state.z, state.beta, actions, &mut scratch)?.0)
}

/// `x_k ∈ argmin_{x∈D} ∂F(z_k)ᵀx`, lowest index on ties.
pub fn frank_wolfe_step(f: &ConvexFunctionSpec, state: &DescentState, actions: &ActionSet) -> Result<usize> {
    let grad = f.subgradient(&state.z);
    Ok(linear_choice(&grad, actions)?.0)
}

/// Parameters of an unconstrained descent run.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub max_iterations: usize,
    pub update_rule: UpdateRule,
    /// Explicit `β`; `None` uses [`beta_bound`].
    pub beta: Option<f64>,
    /// Reject (rather than warn about) a `β` above the bound.
    pub strict: bool,
    pub diameter_convention: DiameterConvention,
    /// Starting point; `None` starts at the mean of `D`.
    pub initial_point: Option<Vec<f64>>,
    /// Log every `record_every`-th iteration (the last one is always logged).
    pub record_every: usize,
    pub track_weights: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            gamma: 0.5,
            gamma1: 0.4,
            max_iterations: 10_000,
            update_rule: UpdateRule::Direct,
            beta: None,
            strict: true,
            diameter_convention: DiameterConvention::Strict,
            initial_point: None,
            record_every: 1,
            track_weights: false,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", "must lie in (0, 1)"));
        }
        if !(self.gamma1 > 0.0 && self.gamma1 < 0.5) {
            return Err(invalid("gamma1", "must lie in (0, 1/2)"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations", "must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        Ok(())
    }

    /// The `β` to use for a function of curvature `mu` on `actions`,
    /// checked against the bound in strict mode.
    pub fn resolve_beta(&self, mu: f64, actions: &ActionSet) -> Result<f64> {
        let bound = beta_bound(
            self.epsilon,
            self.gamma,
            mu,
            diameter_with(actions, self.diameter_convention),
        )?;
        match self.beta {
            None => Ok(bound),
            Some(beta) if beta > bound * (1.0 + 1e-12) => {
                if self.strict {
                    Err(invalid(
                        "beta",
                        format!("{beta} exceeds the step-size bound (1-γ)·min{{ε/(μ x̄²), 1}} = {bound}"),
                    ))
                } else {
                    warn!("beta = {beta} exceeds the step-size bound {bound}; convergence is not guaranteed");
                    Ok(beta)
                }
            }
            Some(beta) => Ok(beta),
        }
    }
}

/// A sequence of objectives `F_k`, one per iteration.
pub trait ObjectiveSequence {
    fn value(&self, k: usize, z: &[f64]) -> f64;
    fn subgradient_into(&self, k: usize, z: &[f64], out: &mut [f64]);
}

impl ObjectiveSequence for ConvexFunctionSpec {
    fn value(&self, _k: usize, z: &[f64]) -> f64 {
        ConvexFunctionSpec::value(self, z)
    }

    fn subgradient_into(&self, _k: usize, z: &[f64], out: &mut [f64]) {
        ConvexFunctionSpec::subgradient_into(self, z, out)
    }
}

/// Runs greedy descent on a sequence `F_k` from `state`. Row `k` records the
/// chosen `x_k`, the new average `z_{k+1}` and `F_k(z_{k+1})`.
///
/// Certifying that consecutive `F_k` vary slowly enough is the caller's job.
pub fn run_sequence<S: ObjectiveSequence>(
    sequence: &S,
    actions: &ActionSet,
    state: &mut DescentState,
    iterations: usize,
    rule: UpdateRule,
    record_every: usize,
) -> Result<RunTrace> {
    let n = actions.dim();
    if state.z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: state.z.len(),
            context: "initial point",
        });
    }
    let record_every = record_every.max(1);
    let mut scratch = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut rows = Vec::new();
    for step in 0..iterations {
        let k = state.k;
        let index = match rule {
            UpdateRule::Direct => {
                direct_choice(|y| sequence.value(k, y), &state.z, state.beta, actions, &mut scratch)?.0
            }
            UpdateRule::FrankWolfe => {
                sequence.subgradient_into(k, &state.z, &mut grad);
                linear_choice(&grad, actions)?.0
            }
        };
        average_update_indexed(state, actions, index);
        if step % record_every == 0 || step + 1 == iterations {
            rows.push(TraceRow {
                k,
                action: Some(index),
                z: state.z.clone(),
                objective: sequence.value(k, &state.z),
                ..TraceRow::default()
            });
        }
    }
    Ok(RunTrace {
        rows,
        final_z: state.z.clone(),
        iterations,
    })
}

/// Minimises `f` over `conv(D)` by greedy descent.
pub fn run_unconstrained(problem: &ProblemInstance, config: &DescentConfig) -> Result<RunTrace> {
    config.validate()?;
    if problem.constraints().is_some() {
        return Err(invalid("problem", "use the constrained solver for problems with constraints"));
    }
    let actions = problem.actions();
    let f = problem.objective();
    let beta = config.resolve_beta(f.curvature(), actions)?;
    let z1 = match &config.initial_point {
        Some(z) => z.clone(),
        None => {
            let w = vec![1.0 / actions.len() as f64; actions.len()];
            actions.combine(&w)
        }
    };
    let mut state = if config.track_weights {
        DescentState::tracking(z1, beta, actions.len())?
    } else {
        DescentState::new(z1, beta)?
    };
    run_sequence(
        f,
        actions,
        &mut state,
        config.max_iterations,
        config.update_rule,
        config.record_every,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line() -> ActionSet {
        ActionSet::new(vec![vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn beta_bound_examples() {
        assert_eq!(beta_bound(0.01, 0.5, 0.0, 3.0).unwrap(), 0.5);
        let s = 1.0 / 1.8_f64.sqrt();
        let xbar = s * 3.0_f64.sqrt();
        assert_abs_diff_eq!(beta_bound(0.05, 0.5, 0.6, xbar).unwrap(), 0.025, epsilon = 1e-12);
        assert_eq!(beta_bound(2.0, 0.5, 1.0, 1.0).unwrap(), 0.5);
        assert!(beta_bound(0.0, 0.5, 1.0, 1.0).is_err());
        assert!(beta_bound(0.1, 1.0, 1.0, 1.0).is_err());
        assert!(beta_bound(0.1, 0.5, -1.0, 1.0).is_err());
        assert!(beta_bound(0.1, 0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn direct_step_examples() {
        let f = ConvexFunctionSpec::linear(vec![1.0], 0.0);
        let s = DescentState::new(vec![0.7], 0.1).unwrap();
        assert_eq!(greedy_direct_step(&f, &s, &line()).unwrap(), 0);

        let f = ConvexFunctionSpec::new(1, |z| (z[0] - 0.5).powi(2), |z, o| o[0] = 2.0 * (z[0] - 0.5), 1.0)
            .unwrap();
        let s = DescentState::new(vec![0.0], 0.5).unwrap();
        assert_eq!(greedy_direct_step(&f, &s, &line()).unwrap(), 1);

        let f = ConvexFunctionSpec::constant(1, 3.0);
        assert_eq!(greedy_direct_step(&f, &s, &line()).unwrap(), 0);

        let f = ConvexFunctionSpec::new(1, |z| if z[0] > 0.2 { f64::NAN } else { 0.0 }, |_, o| o[0] = 0.0, 0.0)
            .unwrap();
        assert!(matches!(
            greedy_direct_step(&f, &s, &line()),
            Err(Error::NonFinite { candidate: 1, .. })
        ));
    }

    #[test]
    fn frank_wolfe_examples() {
        let d = ActionSet::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let f = ConvexFunctionSpec::linear(vec![1.0, -1.0], 0.0);
        let s = DescentState::new(vec![0.2, 0.2], 0.3).unwrap();
        assert_eq!(frank_wolfe_step(&f, &s, &d).unwrap(), 2);
        assert_eq!(greedy_direct_step(&f, &s, &d).unwrap(), 2);
        let f = ConvexFunctionSpec::constant(2, 1.0);
        assert_eq!(frank_wolfe_step(&f, &s, &d).unwrap(), 0);
        let f = ConvexFunctionSpec::new(2, |_| 0.0, |_, o| o.fill(f64::INFINITY), 0.0).unwrap();
        assert!(frank_wolfe_step(&f, &s, &d).is_err());
    }

    #[test]
    fn average_update_examples() {
        let mut s = DescentState::new(vec![0.0], 0.1).unwrap();
        average_update(&mut s, &[1.0]);
        assert_abs_diff_eq!(s.z[0], 0.1, epsilon = 1e-15);
        assert_eq!(s.k, 2);
        let mut s = DescentState::new(vec![1.0], 0.37).unwrap();
        average_update(&mut s, &[1.0]);
        assert_eq!(s.z, vec![1.0]);
        let mut s = DescentState::new(vec![0.5, 0.5], 0.5).unwrap();
        average_update(&mut s, &[1.0, 0.0]);
        assert_eq!(s.z, vec![0.75, 0.25]);
        assert!(DescentState::new(vec![0.0], 0.0).is_err());
        assert!(DescentState::new(vec![0.0], 1.5).is_err());
    }

    #[test]
    fn strict_mode_rejects_large_beta() {
        let d = line();
        let f = ConvexFunctionSpec::quadratic(vec![vec![1.0]], 1.0).unwrap();
        let p = ProblemInstance::unconstrained(f, d).unwrap();
        let cfg = DescentConfig {
            beta: Some(0.9),
            ..DescentConfig::default()
        };
        assert!(run_unconstrained(&p, &cfg).is_err());
        let cfg = DescentConfig {
            beta: Some(0.9),
            strict: false,
            max_iterations: 3,
            ..DescentConfig::default()
        };
        assert_eq!(run_unconstrained(&p, &cfg).unwrap().rows.len(), 3);
    }

    #[test]
    fn constant_objective_trace_is_constant() {
        let p = ProblemInstance::unconstrained(ConvexFunctionSpec::constant(1, 2.0), line()).unwrap();
        let cfg = DescentConfig {
            max_iterations: 50,
            ..DescentConfig::default()
        };
        let t = run_unconstrained(&p, &cfg).unwrap();
        assert_eq!(t.rows.len(), 50);
        assert!(t.rows.iter().all(|r| r.objective == 2.0));
    }

    #[test]
    fn tracked_weights_reconstruct_iterate() {
        let d = ActionSet::cube_corners(2, 1.0).unwrap();
        let f = ConvexFunctionSpec::new(
            2,
            |z| (z[0] - 0.3).powi(2) + (z[1] - 0.8).powi(2),
            |z, o| {
                o[0] = 2.0 * (z[0] - 0.3);
                o[1] = 2.0 * (z[1] - 0.8);
            },
            1.0,
        )
        .unwrap();
        let z1 = vec![0.5, 0.5];
        let mut s = DescentState::tracking(z1.clone(), 0.05, d.len()).unwrap();
        run_sequence(&f, &d, &mut s, 500, UpdateRule::Direct, 100).unwrap();
        let rebuilt = s.reconstruct(&z1, &d).unwrap();
        for (a, b) in rebuilt.iter().zip(&s.z) {
            assert!((a - b).abs() <= 1e-9);
        }
        let w = s.weights().unwrap();
        assert_abs_diff_eq!(w.initial + w.actions.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }
}
