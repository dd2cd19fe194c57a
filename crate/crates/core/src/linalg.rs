//! Dense vector helpers shared by the forward and backward passes. All of
//! these work in f64.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

/// `acc += c * x`
pub fn axpy(acc: &mut [f64], c: f64, x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a += c * v;
    }
}

/// Returns `(x / |x|, |x|)`.
pub fn normalize(x: &[f64], what: &'static str) -> Result<(Vec<f64>, f64)> {
    let n = norm(x);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm(what));
    }
    Ok((scale(x, 1.0 / n), n))
}

/// Vector-Jacobian product of `y = x / |x|`: given `dL/dy`, returns
/// `dL/dx = (g - (g·y) y) / |x|`.
pub fn normalize_backward(y: &[f64], n: f64, g: &[f64]) -> Vec<f64> {
    let gy = dot(g, y);
    g.iter().zip(y).map(|(gi, yi)| (gi - gy * yi) / n).collect()
}

/// Cosine similarity; errors if either vector has zero length.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine argument"));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Cosine similarity with its gradients `(cos, d/da, d/db)`.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine argument"));
    }
    let c = dot(a, b) / (na * nb);
    let ga = a.iter().zip(b).map(|(ai, bi)| (bi / nb - c * ai / na) / na).collect();
    let gb = a.iter().zip(b).map(|(ai, bi)| (ai / na - c * bi / nb) / nb).collect();
    Ok((c, ga, gb))
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax of `xs`.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_gradient_matches_central_difference() {
        let a = [0.3, -1.2, 0.7];
        let b = [1.1, 0.4, -0.5];
        let (_, ga, gb) = cosine_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[k] += h;
            am[k] -= h;
            let fd = (cosine(&ap, &b).unwrap() - cosine(&am, &b).unwrap()) / (2.0 * h);
            assert!((fd - ga[k]).abs() < 1e-8);
            let mut bp = b;
            let mut bm = b;
            bp[k] += h;
            bm[k] -= h;
            let fd = (cosine(&a, &bp).unwrap() - cosine(&a, &bm).unwrap()) / (2.0 * h);
            assert!((fd - gb[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
        let p = softmax(&[0.0, 0.0, 0.0, 0.0]);
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_vector_is_rejected() {
        assert!(normalize(&[0.0, 0.0], "x").is_err());
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }
}
