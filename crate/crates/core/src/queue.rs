//! Approximate multipliers as clipped accumulators and scaled queues.
//!
//! For linear constraints `Az ⪯ b` the update
//! `λ̃_{k+1} = [λ̃_k + α(Ax_k - b_k)]^{[0,λ̄]}` is `α` times the queue
//! recursion `Q_{k+1} = [Q_k + Ax_k - b_k]^{[0,λ̄/α]}`, so scheduling
//! against queue occupancies tracks the exact multipliers.

use std::path::Path;

use log::warn;
use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descent::{direct_choice, linear_choice};
use crate::error::{invalid, Error, Result};
use crate::linalg::{clip, dot, lerp_into, mat_vec, norm_inf};
use crate::problem::{ActionSet, ConstraintVector, ConvexFunctionSpec};

/// Queue occupancies `Q` with cap `λ̄/α` (possibly `+∞`).
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub q: Vec<f64>,
    pub cap: f64,
    pub alpha: f64,
}

impl QueueState {
    pub fn new(q: Vec<f64>, cap: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(invalid("alpha", "must be > 0"));
        }
        if !(cap > 0.0) {
            return Err(invalid("cap", "must be > 0"));
        }
        if q.iter().any(|v| !(*v >= 0.0 && *v <= cap)) {
            return Err(invalid("q", "occupancies must lie in [0, cap]"));
        }
        Ok(Self { q, cap, alpha })
    }

    /// Queues for multipliers capped at `λ̄`: cap `λ̄/α`.
    pub fn for_multipliers(m: usize, lambda_bar: f64, alpha: f64) -> Result<Self> {
        Self::new(vec![0.0; m], lambda_bar / alpha, alpha)
    }

    /// `λ̃ = αQ`
    pub fn lambda_tilde(&self) -> Vec<f64> {
        self.q.iter().map(|q| self.alpha * q).collect()
    }
}

/// `Az ⪯ b` with an arrival process for `b_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraintSystem {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl LinearConstraintSystem {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::MissingConstraints);
        }
        if a.len() != b.len() {
            return Err(Error::LengthMismatch(a.len(), b.len()));
        }
        let n = a[0].len();
        if let Some(row) = a.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row.len(),
                context: "constraint matrix row",
            });
        }
        Ok(Self { a, b })
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    /// `g(z) = Az - b`
    pub fn constraints(&self) -> Result<ConstraintVector> {
        ConstraintVector::linear(&self.a, &self.b)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.a, x)
    }
}

/// `Q ← [Q + Ax - b_k]^{[0,cap]}` componentwise.
pub fn queue_step(state: &mut QueueState, a: &[Vec<f64>], x: &[f64], b_k: &[f64]) {
    for ((q, row), b) in state.q.iter_mut().zip(a).zip(b_k) {
        *q = clip(*q + dot(row, x) - b, state.cap);
    }
}

/// Iterates `λ_{i+1} = [λ_i + δ_i]^{[0,cap]}` and returns the final value.
pub fn iterate_clipped(lambda1: f64, deltas: &[f64], cap: f64) -> f64 {
    deltas.iter().fold(lambda1, |l, d| clip(l + d, cap))
}

/// Closed form of the uncapped `[·]⁺` accumulator:
/// `Σδᵢ + max{Θ_k, λ₁}` with `Θ_k = -min_{j≤k} Σ_{i≤j} δᵢ`.
pub fn clipped_accumulator_closed_form(lambda1: f64, deltas: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut theta = f64::NEG_INFINITY;
    for d in deltas {
        sum += d;
        theta = theta.max(-sum);
    }
    sum + theta.max(lambda1)
}

/// `σ₁ = 2 max_{x∈D} ‖Ax‖_∞`, exact since the maximum of a convex function
/// over `conv(D)` is attained at a point of `D`.
pub fn sigma1(actions: &ActionSet, a: &[Vec<f64>]) -> f64 {
    2.0 * actions
        .iter()
        .map(|x| norm_inf(&mat_vec(a, x)))
        .fold(0.0, f64::max)
}

/// `2mα(σ₁/β + σ₂)`
pub fn tracking_gap_bound(alpha: f64, beta: f64, sigma1: f64, sigma2: f64, m: usize) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha", "must be > 0"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("beta", "must lie in (0, 1]"));
    }
    if !(sigma1 >= 0.0 && sigma2 >= 0.0) {
        return Err(invalid("sigma", "must be >= 0"));
    }
    Ok(2.0 * m as f64 * alpha * (sigma1 / beta + sigma2))
}

/// Comparison of two clipped accumulators driven by nearby increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    /// `max_k |Σ_{i≤k}(δᵢ - δ̃ᵢ)|`
    pub epsilon_hat: f64,
    /// `max_k |λ_k - λ̃_k|`
    pub max_gap: f64,
    pub holds: bool,
}

/// Checks `max|λ_k - λ̃_k| ≤ 2ε̂` along two scalar accumulator traces.
pub fn sequence_gap_check(
    lambda: &[f64],
    lambda_tilde: &[f64],
    deltas: &[f64],
    deltas_tilde: &[f64],
) -> Result<GapReport> {
    if lambda.len() != lambda_tilde.len() {
        return Err(Error::LengthMismatch(lambda.len(), lambda_tilde.len()));
    }
    if deltas.len() != deltas_tilde.len() {
        return Err(Error::LengthMismatch(deltas.len(), deltas_tilde.len()));
    }
    let mut sum = 0.0;
    let mut epsilon_hat = 0.0_f64;
    for (d, t) in deltas.iter().zip(deltas_tilde) {
        sum += d - t;
        epsilon_hat = epsilon_hat.max(sum.abs());
    }
    let max_gap = lambda
        .iter()
        .zip(lambda_tilde)
        .fold(0.0_f64, |a, (l, t)| a.max((l - t).abs()));
    Ok(GapReport {
        epsilon_hat,
        max_gap,
        holds: max_gap <= 2.0 * epsilon_hat * (1.0 + 1e-12) + 1e-12,
    })
}

/// `argmin_{x∈D} f((1-β)z + βx) + αβQᵀAx`
pub fn queue_action_direct(
    f: &ConvexFunctionSpec,
    actions: &ActionSet,
    z: &[f64],
    q: &[f64],
    alpha: f64,
    beta: f64,
    a: &[Vec<f64>],
) -> Result<usize> {
    let weights = queue_weights(q, a, actions.dim());
    let mut scratch = vec![0.0; z.len()];
    // y = (1-β)z + βx, so βx = y - (1-β)z and QᵀA(βx) differs from the
    // queue term only by a constant in x.
    let shift: Vec<f64> = z.iter().map(|v| (1.0 - beta) * v).collect();
    let score = |y: &[f64]| {
        let bx: f64 = weights
            .iter()
            .zip(y.iter().zip(&shift))
            .map(|(w, (y, s))| w * (y - s))
            .sum();
        f.value(y) + alpha * bx
    };
    Ok(direct_choice(score, z, beta, actions, &mut scratch)?.0)
}

/// `argmin_{x∈D} ∂f(z)ᵀx + αQᵀAx`; neither `b` nor `b_k` enters.
pub fn queue_action_fw(
    f: &ConvexFunctionSpec,
    actions: &ActionSet,
    z: &[f64],
    q: &[f64],
    alpha: f64,
    a: &[Vec<f64>],
) -> Result<usize> {
    let mut c = f.subgradient(z);
    for (ci, w) in c.iter_mut().zip(queue_weights(q, a, actions.dim())) {
        *ci += alpha * w;
    }
    Ok(linear_choice(&c, actions)?.0)
}

/// `Aᵀq`
fn queue_weights(q: &[f64], a: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for (qj, row) in q.iter().zip(a) {
        for (wi, aij) in w.iter_mut().zip(row) {
            *wi += qj * aij;
        }
    }
    w
}

/// Generator of the arrival vectors `b_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalModel {
    Constant(Vec<f64>),
    /// Cycles through the given rows.
    Sequence(Vec<Vec<f64>>),
    /// I.i.d. draws from a finite set of vectors.
    IidDiscrete { outcomes: Vec<Vec<f64>>, probabilities: Vec<f64> },
    /// Independent `U[low, high]` per component.
    IidUniform { low: Vec<f64>, high: Vec<f64> },
}

impl ArrivalModel {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(b) => b.len(),
            Self::Sequence(rows) => rows.first().map_or(0, Vec::len),
            Self::IidDiscrete { outcomes, .. } => outcomes.first().map_or(0, Vec::len),
            Self::IidUniform { low, .. } => low.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if m == 0 {
            return Err(invalid("arrivals", "empty arrival model"));
        }
        let rows: Vec<&Vec<f64>> = match self {
            Self::Constant(b) => vec![b],
            Self::Sequence(r) => r.iter().collect(),
            Self::IidDiscrete { outcomes, probabilities } => {
                if outcomes.len() != probabilities.len() {
                    return Err(Error::LengthMismatch(outcomes.len(), probabilities.len()));
                }
                if probabilities.iter().any(|p| !(*p >= 0.0)) {
                    return Err(invalid("probabilities", "must be >= 0"));
                }
                let s: f64 = probabilities.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(invalid("probabilities", format!("sum to {s}, expected 1")));
                }
                outcomes.iter().collect()
            }
            Self::IidUniform { low, high } => {
                if low.len() != high.len() {
                    return Err(Error::LengthMismatch(low.len(), high.len()));
                }
                if low.iter().zip(high).any(|(l, h)| !(l <= h)) {
                    return Err(invalid("arrivals", "uniform bounds need low <= high"));
                }
                vec![low, high]
            }
        };
        if rows.iter().any(|r| r.len() != m) {
            return Err(invalid("arrivals", "rows have differing lengths"));
        }
        if rows.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("arrivals", "non-finite arrival"));
        }
        Ok(())
    }

    /// `b = E[b_k]` (the cycle average for sequences).
    pub fn mean(&self) -> Vec<f64> {
        let m = self.dim();
        match self {
            Self::Constant(b) => b.clone(),
            Self::Sequence(rows) => {
                let mut s = vec![0.0; m];
                for r in rows {
                    s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                }
                s.iter().map(|v| v / rows.len() as f64).collect()
            }
            Self::IidDiscrete { outcomes, probabilities } => {
                let mut s = vec![0.0; m];
                for (r, p) in outcomes.iter().zip(probabilities) {
                    s.iter_mut().zip(r).for_each(|(a, b)| *a += p * b);
                }
                s
            }
            Self::IidUniform { low, high } => low.iter().zip(high).map(|(l, h)| (l + h) / 2.0).collect(),
        }
    }

    pub fn stream(&self, seed: u64) -> Result<ArrivalStream> {
        ArrivalStream::new(self.clone(), seed, None)
    }
}

/// Pull-based seeded realisation of an [`ArrivalModel`].
#[derive(Debug, Clone)]
pub struct ArrivalStream {
    model: ArrivalModel,
    rng: ChaCha8Rng,
    k: usize,
    mean: Vec<f64>,
    partial: Vec<f64>,
    sigma2_claim: Option<f64>,
    /// Largest `|Σ(bʲᵢ - bʲ)|` seen so far.
    pub max_deviation: f64,
    /// First `k` at which the deviation exceeded the claimed `σ₂`.
    pub claim_breach: Option<usize>,
    weights: Option<WeightedIndex<f64>>,
}

impl ArrivalStream {
    pub fn new(model: ArrivalModel, seed: u64, sigma2_claim: Option<f64>) -> Result<Self> {
        model.validate()?;
        if let Some(s) = sigma2_claim {
            if !(s >= 0.0) {
                return Err(invalid("sigma2", "must be >= 0"));
            }
        }
        let weights = match &model {
            ArrivalModel::IidDiscrete { probabilities, .. } => Some(
                WeightedIndex::new(probabilities.clone()).map_err(|e| invalid("probabilities", e.to_string()))?,
            ),
            _ => None,
        };
        let mean = model.mean();
        let m = mean.len();
        Ok(Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            k: 0,
            mean,
            partial: vec![0.0; m],
            sigma2_claim,
            max_deviation: 0.0,
            claim_breach: None,
            weights,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Writes `b_k` for the next `k` into `out`.
    pub fn next_into(&mut self, out: &mut [f64]) {
        match &self.model {
            ArrivalModel::Constant(b) => out.copy_from_slice(b),
            ArrivalModel::Sequence(rows) => out.copy_from_slice(&rows[self.k % rows.len()]),
            ArrivalModel::IidDiscrete { outcomes, .. } => {
                let i = self.weights.as_ref().expect("weights built for discrete arrivals").sample(&mut self.rng);
                out.copy_from_slice(&outcomes[i]);
            }
            ArrivalModel::IidUniform { low, high } => {
                for ((o, l), h) in out.iter_mut().zip(low).zip(high) {
                    *o = if l == h { *l } else { Uniform::new(*l, *h).sample(&mut self.rng) };
                }
            }
        }
        self.k += 1;
        for ((p, o), b) in self.partial.iter_mut().zip(out.iter()).zip(&self.mean) {
            *p += o - b;
            self.max_deviation = self.max_deviation.max(p.abs());
        }
        if let Some(s2) = self.sigma2_claim {
            if self.claim_breach.is_none() && self.max_deviation > s2 + 1e-12 {
                warn!(
                    "arrival partial sums deviate by {} > σ₂ = {s2} at k = {}; tracking bound no longer guaranteed",
                    self.max_deviation, self.k
                );
                self.claim_breach = Some(self.k);
            }
        }
    }

    pub fn take(&mut self, steps: usize) -> Vec<Vec<f64>> {
        let m = self.mean.len();
        (0..steps)
            .map(|_| {
                let mut b = vec![0.0; m];
                self.next_into(&mut b);
                b
            })
            .collect()
    }
}

/// Reads arrivals from CSV with header `b1,…,bm`, one row per step.
pub fn load_arrivals_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::ArrivalFile(e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::ArrivalFile(e.to_string()))?.clone();
    for (j, h) in header.iter().enumerate() {
        if h.trim() != format!("b{}", j + 1) {
            return Err(Error::ArrivalFile(format!("column {} is named {h:?}, expected b{}", j + 1, j + 1)));
        }
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::ArrivalFile(e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::ArrivalFile(format!("row {}: {e}", line + 1)))?;
        if row.len() != header.len() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::ArrivalFile(format!("row {} is malformed", line + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::ArrivalFile("no arrival rows".into()));
    }
    Ok(rows)
}

/// Per-component `max_k |Σ_{i≤k}(bʲᵢ - bʲ)|`.
pub fn partial_sum_deviation(arrivals: &[Vec<f64>], mean: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; mean.len()];
    let mut worst = vec![0.0_f64; mean.len()];
    for b in arrivals {
        for ((s, w), (bi, mi)) in sum.iter_mut().zip(worst.iter_mut()).zip(b.iter().zip(mean)) {
            *s += bi - mi;
            *w = w.max(s.abs());
        }
    }
    worst
}

/// Monte-Carlo estimate of `p_K = P(max_{k≤K} ‖Σ(B_i - b)‖_∞ ≤ σ₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationEstimate {
    pub p_k: f64,
    /// `max_k ‖Σ(B_i - b)‖_∞` per replicate, in seed order.
    pub deviations: Vec<f64>,
}

/// Runs `replicates` independent streams seeded `seed, seed+1, …` in parallel.
pub fn estimate_deviation_probability(
    model: &ArrivalModel,
    steps: usize,
    replicates: usize,
    seed: u64,
    sigma2: f64,
) -> Result<DeviationEstimate> {
    model.validate()?;
    if replicates == 0 {
        return Err(invalid("replicates", "must be >= 1"));
    }
    let mean = model.mean();
    let deviations: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut s = ArrivalStream::new(model.clone(), seed.wrapping_add(r), None)?;
            let arrivals = s.take(steps);
            Ok(partial_sum_deviation(&arrivals, &mean).into_iter().fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let within = deviations.iter().filter(|d| **d <= sigma2).count();
    Ok(DeviationEstimate {
        p_k: within as f64 / replicates as f64,
        deviations,
    })
}

/// Row-stochastic `p_{xy}` over the action set with precomputed `ȳ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticActionModel {
    transition: Vec<Vec<f64>>,
    expected: Vec<Vec<f64>>,
}

impl StochasticActionModel {
    pub fn new(actions: &ActionSet, transition: Vec<Vec<f64>>) -> Result<Self> {
        if transition.len() != actions.len() {
            return Err(Error::LengthMismatch(transition.len(), actions.len()));
        }
        for (row, p) in transition.iter().enumerate() {
            if p.len() != actions.len() {
                return Err(Error::LengthMismatch(p.len(), actions.len()));
            }
            let sum: f64 = p.iter().sum();
            if p.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::NotStochastic { row, sum });
            }
        }
        let expected = transition.iter().map(|p| actions.combine(p)).collect();
        Ok(Self { transition, expected })
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }
}

/// `ȳ(x) = Σ_y y·p_{xy}` for the action with index `x`.
pub fn expected_action(model: &StochasticActionModel, x: usize) -> &[f64] {
    &model.expected[x]
}

/// Side-by-side trajectories of the exact and queue-driven multipliers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackingRun {
    /// `λ_k`, `k = 1..=K+1`
    pub lambda: Vec<Vec<f64>>,
    /// `λ̃_k`, `k = 1..=K+1`
    pub lambda_tilde: Vec<Vec<f64>>,
    /// `‖λ̃_k - λ_k‖₂`
    pub gaps: Vec<f64>,
    pub max_gap: f64,
}

/// Runs `z_{k+1} = (1-β)z_k + βx_k`, `λ_{k+1} = [λ_k + α(Az_{k+1} - b)]^{[0,λ̄]}`
/// and `λ̃_{k+1} = [λ̃_k + α(Ax_k - b_k)]^{[0,λ̄]}` for a given action sequence.
#[allow(clippy::too_many_arguments)]
pub fn tracking_run(
    system: &LinearConstraintSystem,
    action_sequence: &[Vec<f64>],
    arrivals: &mut ArrivalStream,
    alpha: f64,
    beta: f64,
    z1: &[f64],
    lambda1: &[f64],
    lambda_bar: f64,
) -> Result<TrackingRun> {
    let m = system.m();
    if lambda1.len() != m {
        return Err(Error::LengthMismatch(lambda1.len(), m));
    }
    if !(alpha > 0.0) || !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("step sizes", "need α > 0 and β ∈ (0, 1]"));
    }
    let mut z = z1.to_vec();
    let mut z_next = vec![0.0; z.len()];
    let mut lambda = lambda1.to_vec();
    let mut queue = QueueState::new(
        lambda1.iter().map(|l| l / alpha).collect(),
        lambda_bar / alpha,
        alpha,
    )?;
    let mut b_k = vec![0.0; m];
    let mut out = TrackingRun::default();
    let gap = |l: &[f64], t: &[f64]| l.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let push = |out: &mut TrackingRun, l: &[f64], t: Vec<f64>| {
        let g = gap(l, &t);
        out.max_gap = out.max_gap.max(g);
        out.gaps.push(g);
        out.lambda.push(l.to_vec());
        out.lambda_tilde.push(t);
    };
    push(&mut out, &lambda, queue.lambda_tilde());
    for x in action_sequence {
        lerp_into(&z, x, beta, &mut z_next);
        for ((l, row), b) in lambda.iter_mut().zip(&system.a).zip(&system.b) {
            *l = clip(*l + alpha * (dot(row, &z_next) - b), lambda_bar);
        }
        arrivals.next_into(&mut b_k);
        queue_step(&mut queue, &system.a, x, &b_k);
        std::mem::swap(&mut z, &mut z_next);
        push(&mut out, &lambda, queue.lambda_tilde());
    }
    Ok(out)
}
