//! Small dense vector helpers. Dimensions in this crate are tiny, so plain
//! slices beat pulling in a matrix library.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `out = (1 - t) a + t b`
#[inline]
pub fn lerp_into(a: &[f64], b: &[f64], t: f64, out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = (1.0 - t) * x + t * y;
    }
}

pub fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    lerp_into(a, b, t, &mut out);
    out
}

/// Row-major matrix-vector product.
pub fn mat_vec(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| dot(r, x)).collect()
}

/// Componentwise projection onto `[0, cap]`; `cap` may be `f64::INFINITY`.
#[inline]
pub fn clip(value: f64, cap: f64) -> f64 {
    value.max(0.0).min(cap)
}
