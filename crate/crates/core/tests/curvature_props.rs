mod common;

use common::*;
use maxweight::oracle::curvature_validate;
use maxweight::{ActionSet, ConvexFunctionSpec};
use proptest::prelude::*;

const TOL: f64 = 1e-10;

fn model_excess(f: &ConvexFunctionSpec, z: &[f64], delta: &[f64], mu: f64) -> f64 {
    let y: Vec<f64> = z.iter().zip(delta).map(|(a, b)| a + b).collect();
    f.value(&y) - f.value(z) - dot(&f.subgradient(z), delta) - mu * dot(delta, delta)
}

fn monotone_excess(f: &ConvexFunctionSpec, z: &[f64], delta: &[f64], mu: f64) -> f64 {
    let y: Vec<f64> = z.iter().zip(delta).map(|(a, b)| a + b).collect();
    let gy = f.subgradient(&y);
    let gz = f.subgradient(z);
    let diff: Vec<f64> = gy.iter().zip(&gz).map(|(a, b)| a - b).collect();
    dot(&diff, delta) - mu * dot(delta, delta)
}

/// `Σ exp(cᵢzᵢ)` on `[0, 1]ⁿ`; `max cᵢ² e^{cᵢ⁺}` bounds the gradient's
/// Lipschitz constant on the box.
fn exp_sum(c: Vec<f64>) -> (ConvexFunctionSpec, f64) {
    let n = c.len();
    let mu = c.iter().map(|ci| ci * ci * ci.max(0.0).exp()).fold(0.0, f64::max);
    let c2 = c.clone();
    let f = ConvexFunctionSpec::new(
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
    (f, mu)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// The monotone-gradient condition with constant μ implies the quadratic
    /// upper model with the same μ.
    #[test]
    fn monotone_condition_implies_model(
        n in 1usize..=4,
        c in prop::collection::vec(-2.0..2.0f64, 4),
        z in prop::collection::vec(0.0..1.0f64, 4),
        y in prop::collection::vec(0.0..1.0f64, 4),
    ) {
        let (f, mu) = exp_sum(c[..n].to_vec());
        let z = &z[..n];
        let delta: Vec<f64> = y[..n].iter().zip(z).map(|(a, b)| a - b).collect();
        let scale = 1.0 + f.value(z).abs();
        prop_assert!(monotone_excess(&f, z, &delta, mu) <= TOL * scale);
        prop_assert!(model_excess(&f, z, &delta, mu) <= TOL * scale);
    }

    /// For ½zᵀAz the smallest valid model constant is λ_max/2 and the smallest
    /// monotone constant is λ_max: the model with μ yields the monotone
    /// condition with 2μ, and not in general with μ.
    #[test]
    fn model_implies_monotone_with_twice_the_constant(
        n in 1usize..=4,
        entries in prop::collection::vec(-1.0..1.0f64, 16),
        z in prop::collection::vec(-1.0..1.0f64, 4),
        delta in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let a = psd(n, &entries, 0.01);
        let lmax = lambda_max(&a);
        let f = ConvexFunctionSpec::quadratic(a, lmax / 2.0).unwrap();
        let (z, delta) = (&z[..n], &delta[..n]);
        let scale = 1.0 + lmax * dot(delta, delta);
        prop_assert!(model_excess(&f, z, delta, lmax / 2.0) <= TOL * scale);
        prop_assert!(monotone_excess(&f, z, delta, lmax) <= TOL * scale);
    }

    #[test]
    fn quadratic_with_largest_eigenvalue_has_bounded_curvature(
        n in 1usize..=4,
        entries in prop::collection::vec(-1.0..1.0f64, 16),
        z in prop::collection::vec(-1.0..1.0f64, 4),
        delta in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let a = psd(n, &entries, 0.01);
        let lmax = lambda_max(&a);
        let f = ConvexFunctionSpec::quadratic(a, lmax).unwrap();
        let (z, delta) = (&z[..n], &delta[..n]);
        prop_assert!(model_excess(&f, z, delta, lmax) <= TOL * (1.0 + lmax));
    }
}

#[test]
fn validator_accepts_valid_and_rejects_understated_curvature() {
    let a = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
    let lmax = lambda_max(&a);
    let d = ActionSet::cube_corners(2, 1.0).unwrap();
    let ok = curvature_validate(&ConvexFunctionSpec::quadratic(a.clone(), lmax).unwrap(), &d, 500, 1).unwrap();
    assert!(ok.passed(), "{ok:?}");
    // λ_max/2 is the tight model constant: model holds, monotone check does not.
    let half = curvature_validate(&ConvexFunctionSpec::quadratic(a.clone(), lmax / 2.0).unwrap(), &d, 500, 1).unwrap();
    assert!(half.model_ok && !half.monotone_ok);
    let low = curvature_validate(&ConvexFunctionSpec::quadratic(a, lmax / 4.0).unwrap(), &d, 500, 1).unwrap();
    assert!(!low.model_ok);
}
