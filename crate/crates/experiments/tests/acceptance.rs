//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maxweight::descent::{frank_wolfe_step, greedy_direct_step, run_unconstrained, DescentConfig, DescentState};
use maxweight::dual::{lagrangian_value, unified_primal_step, UnifiedMode};
use maxweight::oracle::{brute_argmin, reference_dual, reference_primal, OracleOptions};
use maxweight::queue::{
    clipped_accumulator_closed_form, iterate_clipped, queue_action_direct, queue_action_fw,
};
use maxweight::{ActionSet, ConstraintVector, ConvexFunctionSpec, HullCertificate, ProblemInstance};
use maxweight_experiments::problems::build_exp_example;
use maxweight_experiments::{execute, ExperimentConfig, RunOutput};

const INSTANCES: usize = 1000;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run_config(name: &str) -> (RunOutput, Duration) {
    let cfg = ExperimentConfig::load(&config_path(name)).expect("config loads");
    let start = Instant::now();
    let out = execute(&cfg, None, false).expect("run succeeds");
    (out, start.elapsed())
}

fn count(summary: &serde_json::Value, check: &str) -> u64 {
    summary["checks"][check]["count"].as_u64().expect("violation count")
}

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(name.to_string());
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mix(z: &[f64], x: &[f64], beta: f64) -> Vec<f64> {
    z.iter().zip(x).map(|(z, x)| (1.0 - beta) * z + beta * x).collect()
}

fn random_actions(rng: &mut ChaCha8Rng) -> ActionSet {
    loop {
        let n = rng.gen_range(1..=4);
        let len = rng.gen_range(2..=8);
        let pts = (0..len).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        if let Ok(d) = ActionSet::new(pts) {
            return d;
        }
    }
}

fn random_hull_point(d: &ActionSet, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..d.len()).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    d.combine(&w.iter().map(|v| v / s).collect::<Vec<_>>())
}

/// `Q diag(e) Qᵀ` with a Householder reflection `Q`, so `λ_max = max e`.
fn random_psd(n: usize, rng: &mut ChaCha8Rng, floor: f64) -> (Vec<Vec<f64>>, f64) {
    let e: Vec<f64> = (0..n).map(|_| rng.gen_range(floor..2.0)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vv = dot(&v, &v).max(1e-12);
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - 2.0 * v[i] * v[j] / vv).collect())
        .collect();
    let a = (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| q[i][k] * e[k] * q[j][k]).sum()).collect())
        .collect();
    (a, e.iter().copied().fold(0.0, f64::max))
}

fn quadratic(a: Vec<Vec<f64>>, c: Vec<f64>, mu: f64) -> ConvexFunctionSpec {
    let n = c.len();
    let (a2, c2) = (a.clone(), c.clone());
    ConvexFunctionSpec::new(
        n,
        move |z| (0..n).map(|i| c[i] * z[i] + 0.5 * z[i] * dot(&a[i], z)).sum(),
        move |z, out| {
            for i in 0..n {
                out[i] = c2[i] + dot(&a2[i], z);
            }
        },
        mu,
    )
    .unwrap()
}

fn random_quadratic(n: usize, rng: &mut ChaCha8Rng) -> ConvexFunctionSpec {
    let (a, lmax) = random_psd(n, rng, 0.0);
    let c = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    quadratic(a, c, lmax / 2.0)
}

fn random_constrained(rng: &mut ChaCha8Rng) -> ProblemInstance {
    loop {
        let d = random_actions(rng);
        let n = d.dim();
        let f = random_quadratic(n, rng);
        let m = rng.gen_range(1..=3);
        let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let centre = d.combine(&vec![1.0 / d.len() as f64; d.len()]);
        let b: Vec<f64> = a.iter().map(|r| dot(r, &centre) + rng.gen_range(0.05..1.0)).collect();
        let Ok(g) = ConstraintVector::linear(&a, &b) else { continue };
        if let Ok(p) = ProblemInstance::constrained(f, g, d, centre, HullCertificate::Solve) {
            return p;
        }
    }
}

fn excesses(f: &ConvexFunctionSpec, z: &[f64], delta: &[f64], mu: f64) -> (f64, f64) {
    let y: Vec<f64> = z.iter().zip(delta).map(|(a, b)| a + b).collect();
    let gz = f.subgradient(z);
    let gy = f.subgradient(&y);
    let dd = dot(delta, delta);
    let model = f.value(&y) - f.value(z) - dot(&gz, delta) - mu * dd;
    let diff: Vec<f64> = gy.iter().zip(&gz).map(|(a, b)| a - b).collect();
    let monotone = dot(&diff, delta) - mu * dd;
    (model, monotone)
}

fn burn_in_criterion(report: &mut Report) {
    let (out, elapsed) = run_config("exp_baseline.toml");
    let s = &out.summary;
    let first = s["burn_in"]["first_hit"].as_u64();
    let last_violation = s["burn_in"]["last_violation"].as_u64().unwrap_or(0);
    let iterations = s["parameters"]["iterations"].as_u64().unwrap();
    let run = out.run.as_ref().unwrap();
    let after_hit_ok = first.is_some_and(|k| {
        run.trace
            .rows
            .iter()
            .filter(|r| r.k as u64 >= k)
            .filter_map(|r| Some(r.lagrangian? - r.dual_value?))
            .all(|gap| gap <= 0.1 + 1e-12)
    });
    let pass = first.is_some_and(|k| k <= 500 && last_violation < k && iterations - k >= 100_000)
        && after_hit_ok
        && elapsed < Duration::from_secs(60);
    report.line(
        "duality gap reaches 2ε and stays (λ̄ = 0.7, α = 7.29e-5)",
        pass,
        format!(
            "first hit k̄ = {first:?}, last gap > 0.1 at k = {last_violation}, {iterations} iterations, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    println!(
        "    diagnostic: λ̄ = 0.7 is below max λ* = {:.4}; objective bracket violations {} (first at {}), not enforced",
        s["reference"]["lambda_star"].as_array().unwrap().iter().filter_map(|v| v.as_f64()).fold(0.0, f64::max),
        count(s, "objective_bracket"),
        s["checks"]["objective_bracket"]["first"]
    );
}

fn objective_bracket_criterion(report: &mut Report) {
    let ex = build_exp_example(3, None, 0.6).unwrap();
    let (closed_f, _) = ex.closed_form_optimum();
    let mut total = Duration::ZERO;
    let mut details = Vec::new();
    let mut pass = true;
    for sigma in [0, 1, 4] {
        let (out, elapsed) = run_config(&format!("exp_perturbed_sigma{sigma}.toml"));
        total += elapsed;
        let s = &out.summary;
        let f_star = s["reference"]["f_star"].as_f64().unwrap();
        let violations = count(s, "objective_bracket");
        let ok = violations == 0
            && count(s, "multiplier_contract") == 0
            && s["checks"]["brackets_applicable"].as_bool() == Some(true)
            && s["final"]["window_start"].is_u64()
            && (f_star - closed_f).abs() <= 1e-7
            && s["parameters"]["iterations"].as_u64() == Some(1_000_000);
        pass &= ok;
        details.push(format!(
            "σ₀={sigma}: {violations} violations, f(z◇)-f* = {:.4} in [{:.3}, {:.3}]",
            s["final"]["diamond_objective"].as_f64().unwrap() - f_star,
            s["final"]["bounds"]["objective"][0].as_f64().unwrap(),
            s["final"]["bounds"]["objective"][1].as_f64().unwrap(),
        ));
    }
    pass &= total < Duration::from_secs(600);
    report.line(
        "objective bracket under perturbed multipliers, 10⁶ iterations",
        pass,
        format!("{}; {:.1}s total", details.join("; "), total.as_secs_f64()),
    );
}

fn adversarial_criterion(report: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_maxweight"))
        .args(["run", "--config"])
        .arg(config_path("exp_adversarial.toml"))
        .arg("--out")
        .arg(dir.path())
        .env("MAXWEIGHT_LOG", "error")
        .output()
        .unwrap();
    let code = status.status.code();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let first = summary["checks"]["objective_bracket"]["first"].as_u64();
    let contract_first = summary["checks"]["multiplier_contract"]["first"].as_u64();
    let pass = code == Some(3) && first.is_some_and(|k| k > 100_000);
    report.line(
        "adversarial perturbation breaks the bracket only after the onset",
        pass,
        format!("exit code {code:?}, multiplier band left at k = {contract_first:?}, first bracket violation at k = {first:?}"),
    );
}

fn tracking_criterion(report: &mut Report) {
    let (out, _) = run_config("queue_tracking.toml");
    let s = &out.summary;
    let bound = s["tracking_bound"].as_f64().unwrap();
    let max_gap = s["max_gap"].as_f64().unwrap();
    let pass = (bound - 40.0).abs() < 1e-12 && max_gap <= bound && s["per_seed"].as_array().unwrap().len() == 20;
    report.line(
        "queue tracks the exact multiplier within 2mα(σ₁/β + σ₂)",
        pass,
        format!(
            "bound {bound}, max gap {max_gap:.4} (first half {:.4}, second half {:.4})",
            s["max_gap_first_half"].as_f64().unwrap(),
            s["max_gap_second_half"].as_f64().unwrap()
        ),
    );
}

fn privacy_criterion(report: &mut Report) {
    let (out, _) = run_config("private_scheduling.toml");
    let s = &out.summary;
    let run = out.run.as_ref().unwrap();
    let at = run.trace.rows.iter().find(|r| r.k == 10_000).expect("row at k = 10⁴");
    let g = &at.diamond_constraints;
    let pass = s["final"]["window_start"].is_u64()
        && count(s, "feasibility") == 0
        && count(s, "lagrangian_bracket") == 0
        && g.len() == 2
        && g.iter().all(|v| *v <= 1e-2);
    report.line(
        "private scheduling: averaged constraints and multiplier-weighted slack",
        pass,
        format!(
            "k̄ = {}, feasibility violations {}, bracket violations {}, g(p◇) at k = 10⁴: {:?}",
            s["final"]["window_start"],
            count(s, "feasibility"),
            count(s, "lagrangian_bracket"),
            g
        ),
    );
}

fn property_criterion(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut fails: Vec<String> = Vec::new();
    let mut record = |name: &str, bad: usize| {
        if bad > 0 {
            fails.push(format!("{name}: {bad}/{INSTANCES}"));
        }
    };

    // Greedy and linearised steps against exhaustive search.
    let mut bad = 0;
    for _ in 0..INSTANCES {
        let d = random_actions(&mut rng);
        let f = random_quadratic(d.dim(), &mut rng);
        let z = random_hull_point(&d, &mut rng);
        let beta = rng.gen_range(0.01..1.0);
        let state = DescentState::new(z.clone(), beta).unwrap();
        let greedy = greedy_direct_step(&f, &state, &d).unwrap();
        let (brute, _) = brute_argmin(|x| f.value(&mix(&z, x, beta)), &d).unwrap();
        let grad = f.subgradient(&z);
        let fw = frank_wolfe_step(&f, &state, &d).unwrap();
        let (brute_fw, _) = brute_argmin(|x| dot(&grad, x), &d).unwrap();
        bad += usize::from(greedy != brute || fw != brute_fw);
    }
    record("greedy/linearised vs exhaustive", bad);

    // Clipped accumulator: closed form against iteration.
    let mut bad = 0;
    for _ in 0..INSTANCES {
        let l1 = rng.gen_range(0.0..5.0);
        let deltas: Vec<f64> = (0..rng.gen_range(0..200)).map(|_| rng.gen_range(-3.0..3.0)).collect();
        bad += usize::from((0..=deltas.len()).any(|k| {
            let it = iterate_clipped(l1, &deltas[..k], f64::INFINITY);
            let cf = clipped_accumulator_closed_form(l1, &deltas[..k]);
            (it - cf).abs() > 1e-12 * (1.0 + k as f64)
        }));
    }
    record("accumulator closed form", bad);

    // Queue rules against the Lagrangian and linearised argmins; linear
    // objectives pick the same action under both descent rules.
    let mut bad = 0;
    for _ in 0..INSTANCES {
        let d = random_actions(&mut rng);
        let n = d.dim();
        let f = random_quadratic(n, &mut rng);
        let m = rng.gen_range(1..=2);
        let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let q: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..100.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = rng.gen_range(0.001..0.1);
        let beta = rng.gen_range(0.01..1.0);
        let z = random_hull_point(&d, &mut rng);
        let lambda: Vec<f64> = q.iter().map(|v| alpha * v).collect();
        let lag = |x: &[f64]| {
            let y = mix(&z, x, beta);
            f.value(&y) + a.iter().zip(&lambda).zip(&b).map(|((r, l), bj)| l * (dot(r, &y) - bj)).sum::<f64>()
        };
        let (_, best) = brute_argmin(lag, &d).unwrap();
        let direct = queue_action_direct(&f, &d, &z, &q, alpha, beta, &a).unwrap();
        let grad = f.subgradient(&z);
        let lin = |x: &[f64]| dot(&grad, x) + a.iter().zip(&lambda).map(|(r, l)| l * dot(r, x)).sum::<f64>();
        let (_, best_lin) = brute_argmin(lin, &d).unwrap();
        let fw = queue_action_fw(&f, &d, &z, &q, alpha, &a).unwrap();
        let tol = |v: f64| 1e-9 * (1.0 + v.abs());
        let queue_ok = lag(d.point(direct)) - best <= tol(best) && lin(d.point(fw)) - best_lin <= tol(best_lin);

        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let linear = ConvexFunctionSpec::linear(c.clone(), 0.3);
        let state = DescentState::new(z.clone(), beta).unwrap();
        let d1 = greedy_direct_step(&linear, &state, &d).unwrap();
        let d2 = frank_wolfe_step(&linear, &state, &d).unwrap();
        let best_c = d.iter().map(|x| dot(&c, x)).fold(f64::INFINITY, f64::min);
        let linear_ok = d1 == d2 || (dot(&c, d.point(d1)) - best_c <= 1e-9 && dot(&c, d.point(d2)) - best_c <= 1e-9);
        bad += usize::from(!(queue_ok && linear_ok));
    }
    record("queue rules and linear direct-vs-linearised", bad);

    // Some vertex does at least as well as any hull point for a linear score.
    let mut bad = 0;
    for _ in 0..INSTANCES {
        let d = random_actions(&mut rng);
        let y = random_hull_point(&d, &mut rng);
        let w: Vec<f64> = (0..d.dim()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let best = d.iter().map(|x| dot(&w, x) - dot(&w, &y)).fold(f64::INFINITY, f64::min);
        bad += usize::from(best > 1e-12);
    }
    record("vertex dominates hull point", bad);

    // Curvature: model with μ and monotone with 2μ for quadratics declared at
    // λ_max/2; monotone with μ and model with μ for exponential sums.
    let mut bad = 0;
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..=4);
        let (a, lmax) = random_psd(n, &mut rng, 0.01);
        let f = quadratic(a, vec![0.0; n], lmax / 2.0);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = 1.0 + lmax * dot(&delta, &delta);
        let (model, _) = excesses(&f, &z, &delta, lmax / 2.0);
        let (_, monotone) = excesses(&f, &z, &delta, lmax);

        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mu = c.iter().map(|ci| ci * ci * ci.max(0.0).exp()).fold(0.0, f64::max);
        let c2 = c.clone();
        let e = ConvexFunctionSpec::new(
            n,
            move |z| c.iter().zip(z).map(|(ci, zi)| (ci * zi).exp()).sum(),
            move |z, out| {
                for ((o, ci), zi) in out.iter_mut().zip(&c2).zip(z) {
                    *o = ci * (ci * zi).exp();
                }
            },
            mu,
        )
        .unwrap();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let dv: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - b).collect();
        let (e_model, e_monotone) = excesses(&e, &u, &dv, mu);
        let e_scale = 1.0 + e.value(&u).abs();
        bad += usize::from(
            model > 1e-10 * scale || monotone > 1e-10 * scale || e_monotone > 1e-10 * e_scale || e_model > 1e-10 * e_scale,
        );
    }
    record("curvature equivalence", bad);

    // Strong duality between the two reference oracles, and the unified step.
    let mut bad = 0;
    let opts = OracleOptions::with_tolerance(1e-8);
    for _ in 0..INSTANCES {
        let p = random_constrained(&mut rng);
        let primal = reference_primal(&p, opts).unwrap();
        let lambda = primal.multipliers.clone().unwrap();
        let dual = reference_dual(&p, &lambda, opts).unwrap();
        let z = random_hull_point(p.actions(), &mut rng);
        let beta = rng.gen_range(0.01..1.0);
        let step = unified_primal_step(&p, &z, &lambda, beta, UnifiedMode::Discrete).unwrap();
        let (expected, _) =
            brute_argmin(|x| lagrangian_value(&p, &mix(&z, x, beta), &lambda).unwrap(), p.actions()).unwrap();
        bad += usize::from((primal.value - dual.value).abs() > 2e-8 || step.action != Some(expected));
    }
    record("strong duality and unified step", bad);

    report.line(
        "property sweeps over 1000 random instances each",
        fails.is_empty(),
        if fails.is_empty() { "all agree".into() } else { fails.join("; ") },
    );
}

fn examples_criterion(report: &mut Report) {
    let d = ActionSet::cube_corners(3, 1.0).unwrap();
    let f = ConvexFunctionSpec::linear(vec![1.0, -2.0, 0.5], 0.0);
    let p = ProblemInstance::unconstrained(f.clone(), d).unwrap();
    let trace = run_unconstrained(&p, &DescentConfig { max_iterations: 2000, ..DescentConfig::default() }).unwrap();
    let values: Vec<f64> = trace.objectives().map(|(_, v)| v).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0]);
    let linear_final = f.value(&trace.final_z);

    let d = ActionSet::cube_corners(2, 1.0).unwrap();
    let a = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
    let lmax = (3.0 + 2.0_f64.sqrt()) / 2.0;
    let q = quadratic(a, vec![-0.9, -0.75], lmax / 2.0);
    let p = ProblemInstance::unconstrained(q.clone(), d).unwrap();
    let epsilon = 0.01;
    let config = DescentConfig { epsilon, max_iterations: 20_000, record_every: 1000, ..DescentConfig::default() };
    let trace = run_unconstrained(&p, &config).unwrap();
    let f_star = reference_primal(&p, OracleOptions::default()).unwrap().value;
    let gap = q.value(&trace.final_z) - f_star;
    report.line(
        "linear and quadratic descent examples",
        monotone && linear_final == -2.0 && gap <= 2.0 * epsilon,
        format!("linear: monotone {monotone}, final f = {linear_final}; quadratic: f - f* = {gap:.2e}"),
    );
}

#[test]
fn acceptance() {
    let mut report = Report { failures: Vec::new() };
    burn_in_criterion(&mut report);
    objective_bracket_criterion(&mut report);
    adversarial_criterion(&mut report);
    tracking_criterion(&mut report);
    privacy_criterion(&mut report);
    property_criterion(&mut report);
    examples_criterion(&mut report);
    assert!(report.failures.is_empty(), "failed: {:?}", report.failures);
}
