//! Turning a configuration into solver runs, traces and summaries.

use std::path::{Path, PathBuf};

use log::info;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use maxweight::dual::{
    bound_main, dual_bound_from_slater, dual_slack, lambda_bar_requirement, run_constrained,
    ConstrainedRun, DualSchedule, LagrangianMinimizer, MultiplierSource, PrimalUpdate, ResolvedParams, SolverParams,
    ViolationLog, WindowStart,
};
use maxweight::descent::{run_unconstrained, DescentConfig};
use maxweight::oracle::{reference_dual, reference_primal, OracleOptions};
use maxweight::queue::{
    load_arrivals_csv, sigma1, tracking_gap_bound, tracking_run, ArrivalModel, ArrivalStream,
    LinearConstraintSystem,
};
use maxweight::trace::fmt_float;
use maxweight::{ActionSet, DiameterConvention, ProblemInstance};

use crate::config::{DiameterKind, ExperimentConfig, ExperimentKind, Perturbation, PrimalKind, WindowKind};
use crate::problems::{build_custom, build_exp_example, build_privacy_example, gibbs_primal, gibbs_step};
use crate::ExperimentError;

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Success,
    Validation,
    Runtime,
    /// A hypothesis of the guarantees was breached, or a bracket that should
    /// hold did not.
    Contract,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::Validation => 1,
            Self::Runtime => 2,
            Self::Contract => 3,
        }
    }
}

/// A built problem plus solver parameters, before any iteration.
pub struct Prepared {
    pub kind: ExperimentKind,
    pub problem: Option<ProblemInstance>,
    pub params: SolverParams,
    /// `λ̃` derivation for the constrained run.
    pub perturbation: Perturbation,
    pub onset: f64,
    /// Privacy arrivals `b_k`, cycled.
    pub arrivals: Option<Vec<f64>>,
    pub mean_arrival: f64,
    pub notes: Vec<String>,
}

/// Reference optimum of the prepared problem.
#[derive(Debug, Clone)]
pub struct Reference {
    pub f_star: f64,
    pub lambda_star: Option<Vec<f64>>,
    pub tolerance: f64,
}

pub fn prepare(config: &ExperimentConfig, strict_override: bool) -> Result<Prepared, ExperimentError> {
    let strict = config.strict || strict_override;
    let s = &config.solver;
    let mut params = SolverParams {
        strict,
        ..SolverParams::default()
    };
    let mut notes = Vec::new();
    let mut perturbation = Perturbation::None;
    let mut onset = 1e5;
    let mut arrivals = None;
    let mut mean_arrival = 0.0;
    let problem = match config.experiment {
        ExperimentKind::ExpExample => {
            let section = config.exp_example.clone().unwrap_or(crate::config::ExpSection {
                n: 3,
                mu_bar: 0.6,
                s: None,
                perturbation: Perturbation::None,
                onset: 1e5,
            });
            let ex = build_exp_example(section.n, section.s, section.mu_bar)?;
            perturbation = section.perturbation;
            onset = section.onset;
            params.lambda_bar = 0.7;
            params.iterations = 200_000;
            params.diameter_convention = DiameterConvention::MaxNorm;
            params.initial_point = Some(ex.initial_point.clone());
            Some(ex.problem)
        }
        ExperimentKind::Privacy => {
            let p = config.privacy.clone().unwrap_or(crate::config::PrivacySection {
                t_max: 5,
                entropy: None,
                xi: None,
                arrivals: vec![0.0, 1.0],
                arrivals_csv: None,
                lambda1: None,
                slater: None,
                entropy_curvature: 50.0,
            });
            let seq = match &p.arrivals_csv {
                Some(path) => load_arrivals_csv(path)?
                    .into_iter()
                    .map(|row| {
                        if row.len() == 1 {
                            Ok(row[0])
                        } else {
                            Err(ExperimentError::Config("privacy arrivals need exactly one column b1".into()))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                None => p.arrivals.clone(),
            };
            if seq.is_empty() {
                return Err(ExperimentError::Config("privacy.arrivals is empty".into()));
            }
            mean_arrival = seq.iter().sum::<f64>() / seq.len() as f64;
            let t = p.t_max as f64;
            let entropy = p.entropy.unwrap_or(t.ln() / t);
            let xi = p.xi.unwrap_or(mean_arrival / 2.0);
            let ex = build_privacy_example(p.t_max, entropy, xi, mean_arrival, p.entropy_curvature, p.slater)?;
            params.lambda_bar = s.lambda_bar.unwrap_or(0.5);
            params.alpha = Some(0.01);
            params.beta = Some(0.01);
            params.iterations = 20_000;
            params.f_star = Some(0.0);
            params.gbar_probes = ex.probes.clone();
            params.primal = PrimalUpdate::Custom(gibbs_primal(p.t_max + 1));
            let n = p.t_max + 1;
            params.dual_minimizer = Some(LagrangianMinimizer(std::sync::Arc::new(move |lambda: &[f64]| {
                Ok(gibbs_step(lambda, n))
            })));
            params.initial_lambda = Some(p.lambda1.clone().unwrap_or(vec![params.lambda_bar, 0.0]));
            arrivals = Some(seq);
            notes.push(
                "distributions are stored over 0..=T with unit sum; the delay constraint sees the observed b_k".into(),
            );
            Some(ex.problem)
        }
        ExperimentKind::Custom => {
            let section = config.custom.as_ref().expect("checked when parsing");
            Some(build_custom(section)?)
        }
        ExperimentKind::FigQ => None,
    };

    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = s.$field {
                params.$field = v;
            }
        };
    }
    set!(epsilon);
    set!(gamma);
    set!(lambda_bar);
    set!(sigma0);
    set!(iterations);
    set!(record_every);
    if s.gamma1.is_some() {
        params.gamma1 = s.gamma1;
    }
    if s.alpha.is_some() {
        params.alpha = s.alpha;
    }
    if s.beta.is_some() {
        params.beta = s.beta;
    }
    if s.gbar.is_some() {
        params.gbar = s.gbar;
    }
    if s.f_star.is_some() {
        params.f_star = s.f_star;
    }
    if let Some(d) = s.diameter {
        params.diameter_convention = match d {
            DiameterKind::Strict => DiameterConvention::Strict,
            DiameterKind::MaxNorm => DiameterConvention::MaxNorm,
        };
    }
    if config.experiment != ExperimentKind::Privacy || s.primal != PrimalKind::Discrete {
        params.primal = match s.primal {
            PrimalKind::Discrete if config.experiment == ExperimentKind::Privacy => params.primal.clone(),
            PrimalKind::Discrete => PrimalUpdate::Discrete,
            PrimalKind::FrankWolfe => PrimalUpdate::FrankWolfe,
            PrimalKind::ConvexHull => PrimalUpdate::ConvexHull,
            PrimalKind::Hybrid => PrimalUpdate::Hybrid,
        };
    }
    params.dual_schedule = s.dual_checkpoints.then(|| DualSchedule {
        dense_until: s.dense_until.unwrap_or(1000),
        every: s.dual_every.unwrap_or(100),
        until: s.dual_until,
        tolerance: 1e-8,
    });
    params.window = match s.window {
        Some(WindowKind::FromStart) => WindowStart::FromStart,
        Some(WindowKind::Fixed) => WindowStart::Fixed(s.window_start.unwrap_or(1)),
        Some(WindowKind::Detected) => WindowStart::Detected,
        None if params.dual_schedule.is_some() => WindowStart::Detected,
        None => WindowStart::FromStart,
    };
    if params.window == WindowStart::Detected && params.dual_schedule.is_none() {
        return Err(ExperimentError::Config(
            "solver.window = \"detected\" needs dual checkpoints (solver.dual_checkpoints = true)".into(),
        ));
    }
    Ok(Prepared {
        kind: config.experiment,
        problem,
        params,
        perturbation,
        onset,
        arrivals,
        mean_arrival,
        notes,
    })
}

impl Prepared {
    pub fn problem(&self) -> Result<&ProblemInstance, ExperimentError> {
        self.problem
            .as_ref()
            .ok_or_else(|| ExperimentError::Config("this experiment has no optimisation problem".into()))
    }

    pub fn resolve(&self) -> Result<ResolvedParams, ExperimentError> {
        Ok(self.params.resolve(self.problem()?)?)
    }

    /// `f*` and `λ*` from the reference oracle.
    pub fn reference(&self) -> Result<Reference, ExperimentError> {
        let r = reference_primal(self.problem()?, OracleOptions::default())?;
        Ok(Reference {
            f_star: r.value,
            lambda_star: r.multipliers,
            tolerance: r.tolerance_achieved,
        })
    }
}

/// Everything a run produces, before it is written anywhere.
pub struct RunOutput {
    pub exit: ExitKind,
    pub summary: Value,
    pub csv: Vec<u8>,
    /// The constrained run, when there was one.
    pub run: Option<ConstrainedRun>,
}

/// Runs the configured experiment in memory.
pub fn execute(config: &ExperimentConfig, seed: Option<u64>, strict: bool) -> Result<RunOutput, ExperimentError> {
    let seed = seed.unwrap_or(config.seed);
    if config.experiment == ExperimentKind::FigQ {
        return execute_fig_q(config, seed);
    }
    let prepared = prepare(config, strict)?;
    let problem = prepared.problem()?;
    if problem.constraints().is_none() {
        return execute_unconstrained(&prepared, problem);
    }
    // A pinned optimum skips the oracle; multipliers are then unknown.
    let reference = match prepared.params.f_star {
        Some(f_star) => Reference {
            f_star,
            lambda_star: None,
            tolerance: 0.0,
        },
        None => prepared.reference()?,
    };
    let mut params = prepared.params.clone();
    if params.f_star.is_none() {
        params.f_star = Some(reference.f_star);
    }
    let resolved = params.resolve(problem)?;
    let source = multiplier_source(&prepared, &resolved, seed);
    info!(
        "running {:?}: {} iterations, α = {:e}, β = {:e}",
        prepared.kind, params.iterations, resolved.alpha, resolved.beta
    );
    let run = run_constrained(problem, &params, source)?;
    let mut csv = Vec::new();
    run.trace.write_csv(&mut csv)?;

    let lambda_star_max = reference
        .lambda_star
        .as_ref()
        .map(|l| l.iter().copied().fold(0.0, f64::max));
    let cap_sufficient = lambda_star_max.is_none_or(|l| resolved.lambda_bar >= l);
    let compliant = resolved.gamma1 < 0.5
        && resolved.alpha <= resolved.alpha_bound * (1.0 + 1e-9)
        && resolved.beta <= resolved.beta_bound * (1.0 + 1e-9);
    let applicable = compliant && cap_sufficient;
    let bracket_breach = [
        &run.main_bracket,
        &run.slackness_bracket,
        &run.feasibility,
        &run.lagrangian_bracket,
    ]
    .iter()
    .any(|v| !v.is_clean());
    let contract = !run.multiplier_contract.is_clean() || (applicable && bracket_breach);
    let exit = if contract { ExitKind::Contract } else { ExitKind::Success };

    let requirement = lambda_bar_requirement(
        problem,
        resolved.alpha,
        resolved.epsilon,
        resolved.sigma0,
        resolved.gbar,
        reference.f_star,
    )?;
    let delta = dual_slack(resolved.alpha, resolved.epsilon, resolved.sigma0, resolved.gbar, resolved.m);
    let zero = vec![0.0; resolved.m];
    let dual_bound = dual_bound_from_slater(problem, &zero, delta, OracleOptions::default())?;

    let mut notes = prepared.notes.clone();
    if !cap_sufficient {
        notes.push(format!(
            "λ̄ = {} is below max λ* = {}; the objective bracket is reported but not guaranteed",
            resolved.lambda_bar,
            lambda_star_max.unwrap_or(f64::NAN)
        ));
    }
    if !compliant {
        notes.push("step sizes are outside the guaranteed ranges; brackets are informational".into());
    }
    let summary = json!({
        "experiment": format!("{:?}", prepared.kind),
        "seed": seed,
        "strict": params.strict,
        "parameters": params_json(&resolved, params.iterations, params.gamma1.is_none() && params.alpha.is_some()),
        "reference": {
            "f_star": reference.f_star,
            "f_star_tolerance": reference.tolerance,
            "lambda_star": reference.lambda_star,
            "lambda_bar_requirement": requirement,
            "dual_norm_bound_from_slater": dual_bound,
            "lambda_bar_covers_lambda_star": cap_sufficient,
        },
        "burn_in": {
            "first_hit": run.burn_in.first_hit,
            "confirmed": run.burn_in.confirmed,
            "last_violation": run.burn_in.last_violation,
        },
        "final": {
            "window_start": run.averages.as_ref().map(|a| a.window_start),
            "window_terms": run.averages.as_ref().map(|a| a.count),
            "diamond_objective": run.final_diamond_objective,
            "diamond_constraints": run.averages.as_ref().map(|a| problem.require_constraints().map(|g| g.values(&a.z())).ok()),
            "from_start_objective": run.from_start_objective,
            "bounds": run.final_report.as_ref().map(|r| json!({
                "k": r.k,
                "objective": [r.main_lower, r.main_upper],
                "slackness": [r.slackness_lower, r.slackness_upper],
                "feasibility_cap": r.feasibility_caps.first(),
                "lagrangian_average": [r.lag_avg_lower, r.lag_avg_upper],
            })),
            "lambda": run.lambda,
            "lambda_tilde": run.lambda_tilde,
        },
        "checks": {
            "brackets_applicable": applicable,
            "multiplier_contract": violations_json(&run.multiplier_contract),
            "objective_bracket": violations_json(&run.main_bracket),
            "slackness_bracket": violations_json(&run.slackness_bracket),
            "feasibility": violations_json(&run.feasibility),
            "lagrangian_bracket": violations_json(&run.lagrangian_bracket),
            "max_multiplier_gap": run.max_multiplier_gap,
            "max_multiplier_drift": run.max_multiplier_drift,
            "contract_violation": contract,
        },
        "notes": notes,
    });
    Ok(RunOutput {
        exit,
        summary,
        csv,
        run: Some(run),
    })
}

fn multiplier_source(prepared: &Prepared, p: &ResolvedParams, seed: u64) -> MultiplierSource {
    if let Some(seq) = &prepared.arrivals {
        let seq = seq.clone();
        let b = prepared.mean_arrival;
        return MultiplierSource::Observed(Box::new(move |k, out| {
            out[0] = 0.0;
            out[1] = b - seq[(k - 1) % seq.len()];
        }));
    }
    let alpha = p.alpha;
    match prepared.perturbation {
        Perturbation::None => MultiplierSource::Exact,
        Perturbation::Uniform => {
            let sigma0 = p.sigma0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let unit = Uniform::new_inclusive(-1.0, 1.0);
            MultiplierSource::Perturbed(Box::new(move |_k, lambda, out| {
                for (o, l) in out.iter_mut().zip(lambda) {
                    *o = l + alpha * sigma0 * unit.sample(&mut rng);
                }
            }))
        }
        Perturbation::Adversarial => {
            let onset = prepared.onset;
            MultiplierSource::Perturbed(Box::new(move |k, lambda, out| {
                let push = alpha * (k as f64 - onset).exp();
                for (o, l) in out.iter_mut().zip(lambda) {
                    *o = l + push;
                }
            }))
        }
    }
}

fn params_json(p: &ResolvedParams, iterations: usize, gamma1_implied: bool) -> Value {
    json!({
        "epsilon": p.epsilon,
        "gamma": p.gamma,
        "gamma1": p.gamma1,
        "gamma1_source": if gamma1_implied { "implied by alpha" } else { "configured" },
        "alpha": p.alpha,
        "alpha_bound": p.alpha_bound,
        "beta": p.beta,
        "beta_bound": p.beta_bound,
        "lambda_bar": p.lambda_bar,
        "sigma0": p.sigma0,
        "gbar": p.gbar,
        "gbar_vertex_enumeration": p.gbar_computed,
        "mu_lagrangian": p.mu_lagrangian,
        "diameter": p.diameter,
        "slater_margin": p.upsilon,
        "constraints": p.m,
        "iterations": iterations,
    })
}

fn violations_json(v: &ViolationLog) -> Value {
    json!({
        "count": v.count,
        "first": v.first,
        "last": v.last,
        "worst_excess": v.worst_excess,
    })
}

fn execute_unconstrained(prepared: &Prepared, problem: &ProblemInstance) -> Result<RunOutput, ExperimentError> {
    let p = &prepared.params;
    let config = DescentConfig {
        epsilon: p.epsilon,
        gamma: p.gamma,
        max_iterations: p.iterations,
        beta: p.beta,
        strict: p.strict,
        diameter_convention: p.diameter_convention,
        record_every: p.record_every,
        ..DescentConfig::default()
    };
    let trace = run_unconstrained(problem, &config)?;
    let reference = prepared.reference()?;
    let final_value = problem.objective().value(&trace.final_z);
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    let summary = json!({
        "experiment": format!("{:?}", prepared.kind),
        "beta": config.resolve_beta(problem.objective().curvature(), problem.actions())?,
        "f_star": reference.f_star,
        "final_objective": final_value,
        "final_gap": final_value - reference.f_star,
        "within_two_epsilon": final_value - reference.f_star <= 2.0 * p.epsilon,
        "final_z": trace.final_z,
    });
    Ok(RunOutput {
        exit: ExitKind::Success,
        summary,
        csv,
        run: None,
    })
}

/// Paired scalar tracking run: exact multiplier driven by `z_{k+1} - b`,
/// queue driven by `x_k - b_k`, with `x_k` uniform on `{0, 1}`.
fn execute_fig_q(config: &ExperimentConfig, seed: u64) -> Result<RunOutput, ExperimentError> {
    let q = config.fig_q.clone().unwrap_or(crate::config::FigQSection {
        alpha: 1.0,
        beta: 0.1,
        b: 0.5,
        steps: 10_000,
        seeds: 20,
        z1: 0.5,
        lambda_bar: f64::INFINITY,
    });
    if q.seeds == 0 || q.steps == 0 {
        return Err(ExperimentError::Config("fig_q.seeds and fig_q.steps must be >= 1".into()));
    }
    let actions = ActionSet::new(vec![vec![0.0], vec![1.0]])?;
    let system = LinearConstraintSystem::new(vec![vec![1.0]], vec![q.b])?;
    let s1 = sigma1(&actions, &system.a);
    let bound = tracking_gap_bound(q.alpha, q.beta, s1, 0.0, 1)?;
    let mut csv = Vec::new();
    {
        use std::io::Write;
        writeln!(csv, "{}", maxweight::trace::TRACE_SCHEMA)?;
        writeln!(csv, "seed,k,lambda1,lambda_tilde1,gap")?;
    }
    let mut per_seed = Vec::new();
    let mut overall = 0.0_f64;
    let mut first_half = 0.0_f64;
    let mut second_half = 0.0_f64;
    for r in 0..q.seeds {
        let run_seed = seed.wrapping_add(r);
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        let pick = Uniform::new(0usize, 2);
        let seq: Vec<Vec<f64>> = (0..q.steps).map(|_| actions.point(pick.sample(&mut rng)).to_vec()).collect();
        let mut arrivals = ArrivalStream::new(ArrivalModel::Constant(vec![q.b]), run_seed, Some(0.0))?;
        let run = tracking_run(&system, &seq, &mut arrivals, q.alpha, q.beta, &[q.z1], &[0.0], q.lambda_bar)?;
        {
            use std::io::Write;
            for (k, ((l, t), g)) in run.lambda.iter().zip(&run.lambda_tilde).zip(&run.gaps).enumerate() {
                writeln!(csv, "{run_seed},{},{},{},{}", k + 1, fmt_float(l[0]), fmt_float(t[0]), fmt_float(*g))?;
            }
        }
        let half = run.gaps.len() / 2;
        first_half = first_half.max(run.gaps[..half].iter().copied().fold(0.0, f64::max));
        second_half = second_half.max(run.gaps[half..].iter().copied().fold(0.0, f64::max));
        overall = overall.max(run.max_gap);
        per_seed.push(json!({ "seed": run_seed, "max_gap": run.max_gap }));
    }
    let exit = if overall <= bound { ExitKind::Success } else { ExitKind::Contract };
    let summary = json!({
        "experiment": "FigQ",
        "seed": seed,
        "alpha": q.alpha,
        "beta": q.beta,
        "b": q.b,
        "steps": q.steps,
        "sigma1": s1,
        "sigma2": 0.0,
        "tracking_bound": bound,
        "max_gap": overall,
        "max_gap_first_half": first_half,
        "max_gap_second_half": second_half,
        "per_seed": per_seed,
        "within_bound": overall <= bound,
    });
    Ok(RunOutput {
        exit,
        summary,
        csv,
        run: None,
    })
}

/// Writes `trace.csv` and `summary.json` into `dir`.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<(PathBuf, PathBuf), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let trace = dir.join("trace.csv");
    let summary = dir.join("summary.json");
    std::fs::write(&trace, &output.csv)?;
    let text = serde_json::to_string_pretty(&output.summary).map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    std::fs::write(&summary, text + "\n")?;
    Ok((trace, summary))
}

/// Theoretical brackets at `k = 10, 10², …` without running the solver.
pub fn bounds_report(prepared: &Prepared) -> Result<Value, ExperimentError> {
    let r = prepared.resolve()?;
    let rows: Vec<Value> = (1..=7)
        .map(|e| {
            let k = 10f64.powi(e);
            let (lo, hi) = bound_main(k, r.alpha, r.epsilon, r.sigma0, r.lambda_bar, r.gbar, r.m);
            json!({ "k": k, "objective_lower": lo, "objective_upper": hi })
        })
        .collect();
    Ok(json!({
        "parameters": params_json(&r, prepared.params.iterations, prepared.params.gamma1.is_none() && prepared.params.alpha.is_some()),
        "brackets_relative_to_f_star": rows,
    }))
}

/// `f*` and `q(λ)` at the given multipliers.
pub fn oracle_report(prepared: &Prepared, lambda: &[f64]) -> Result<Value, ExperimentError> {
    let problem = prepared.problem()?;
    let reference = match prepared.params.f_star {
        Some(f_star) => Reference {
            f_star,
            lambda_star: None,
            tolerance: 0.0,
        },
        None => prepared.reference()?,
    };
    let (value, tolerance, argpoint) = match &prepared.params.dual_minimizer {
        Some(LagrangianMinimizer(argmin)) => {
            let z = argmin(lambda)?;
            (maxweight::dual::lagrangian_value(problem, &z, lambda)?, 0.0, z)
        }
        None => {
            let q = reference_dual(problem, lambda, OracleOptions::default())?;
            (q.value, q.tolerance_achieved, q.argpoint)
        }
    };
    Ok(json!({
        "f_star": reference.f_star,
        "f_star_tolerance": reference.tolerance,
        "lambda_star": reference.lambda_star,
        "lambda": lambda,
        "dual_value": value,
        "dual_tolerance": tolerance,
        "dual_argpoint": argpoint,
    }))
}
