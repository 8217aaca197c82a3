//! Slice-level numeric kernels shared by the tape and the plain layer functions.

use rand::Rng;

use crate::error::{NnError, Result};

/// `out = W·x` for row-major `W` of shape `(m, n)`.
pub fn matvec(w: &[f64], m: usize, n: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), m * n);
    for (i, o) in out.iter_mut().enumerate().take(m) {
        *o = dot(&w[i * n..(i + 1) * n], x);
    }
}

/// `out += Wᵀ·g`.
pub fn matvec_t_add(w: &[f64], m: usize, n: usize, g: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let gi = g[i];
        if gi == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += gi * wv;
        }
    }
}

/// `acc += g·xᵀ` for `acc` of shape `(g.len(), x.len())`.
pub fn outer_add(g: &[f64], x: &[f64], acc: &mut [f64]) {
    let n = x.len();
    for (i, gi) in g.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        for (a, xv) in acc[i * n..(i + 1) * n].iter_mut().zip(x) {
            *a += gi * xv;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(NnError::Dimension("softmax of an empty vector".into()));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Inverted-dropout mask: 0 with probability `p`, else `1/(1−p)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}
