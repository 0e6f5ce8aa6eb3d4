#![allow(dead_code)]

use maxweight::{ActionSet, ConvexFunctionSpec};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

pub fn coords(n: usize, len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * len)
}

/// Random action set in dimension 1..=4 with 2..=8 distinct points.
pub fn action_set() -> impl Strategy<Value = ActionSet> {
    (1usize..=4, 2usize..=8)
        .prop_flat_map(|(n, len)| coords(n, len).prop_map(move |c| (n, c)))
        .prop_filter_map("duplicate points", |(n, c)| {
            ActionSet::new(c.chunks(n).map(<[f64]>::to_vec).collect()).ok()
        })
}

/// Flat-Dirichlet weights from raw positive draws.
pub fn normalise(raw: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = raw.iter().map(|u| -(1.0 - u).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

pub fn hull_point(actions: &ActionSet, raw: &[f64]) -> Vec<f64> {
    actions.combine(&normalise(&raw[..actions.len()]))
}

pub fn raw_weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..0.999f64, 8)
}

/// Random symmetric positive semi-definite `BBᵀ + shift·I` of size `n`.
pub fn psd(n: usize, entries: &[f64], shift: f64) -> Vec<Vec<f64>> {
    let b = DMatrix::from_fn(n, n, |i, j| entries[i * n + j]);
    let a = &b * b.transpose() + DMatrix::identity(n, n) * shift;
    (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect()
}

pub fn lambda_max(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    SymmetricEigen::new(m).eigenvalues.max()
}

/// `½zᵀAz + cᵀz`, declared curvature `λ_max(A)/2`.
pub fn quadratic(a: Vec<Vec<f64>>, c: Vec<f64>) -> ConvexFunctionSpec {
    let n = c.len();
    let mu = lambda_max(&a) / 2.0;
    let a2 = a.clone();
    let c2 = c.clone();
    ConvexFunctionSpec::new(
        n,
        move |z| {
            let mut v = 0.0;
            for i in 0..n {
                v += c[i] * z[i];
                for j in 0..n {
                    v += 0.5 * z[i] * a[i][j] * z[j];
                }
            }
            v
        },
        move |z, out| {
            for i in 0..n {
                out[i] = c2[i] + (0..n).map(|j| a2[i][j] * z[j]).sum::<f64>();
            }
        },
        mu,
    )
    .unwrap()
}

/// Index and value of the minimum plus the runner-up value.
pub fn best_two(values: &[f64]) -> (usize, f64, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.iter().enumerate() {
        if *v < best.1 {
            best = (i, *v);
        }
    }
    let second = values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best.0)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    (best.0, best.1, second)
}

pub fn mix(z: &[f64], x: &[f64], beta: f64) -> Vec<f64> {
    z.iter().zip(x).map(|(z, x)| (1.0 - beta) * z + beta * x).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
