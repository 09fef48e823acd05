//! Sparse-recovery baseline: Lasso over an overcomplete 2-D discrete
//! cosine dictionary, solved by iterative soft thresholding.
//!
//! The problem is min_beta |A·beta - b|^2 + alpha*|beta|_1 with the
//! recovered image x_hat = Psi*beta. `lasso_exact` is an exhaustive
//! support/sign enumeration usable as an oracle for small p.

use serde::Serialize;

use crate::error::{GeError, Result};
use crate::tensor::{matmul_raw, Tensor};

/// Overcomplete discrete-cosine dictionary. Columns of `psi` are
/// separable cosine atoms on the height x width grid, unit l2-norm.
#[derive(Clone, Debug)]
pub struct Dictionary {
    /// n x p matrix, n = height*width, p = (oc*height)*(oc*width).
    pub psi: Tensor,
    pub height: usize,
    pub width: usize,
    pub overcompleteness: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LassoConfig {
    /// Weight of the l1 penalty.
    pub alpha: f64,
    pub iterations: usize,
    /// Gradient step; `None` estimates 1/|A|_2^2 by 50 power-iteration
    /// steps on A^T A.
    pub step: Option<f64>,
    /// Use FISTA momentum instead of plain ISTA. FISTA is not
    /// guaranteed monotone, so the per-step objective check is skipped.
    pub fista: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            alpha: 0.1,
            iterations: 500,
            step: None,
            fista: false,
        }
    }
}

/// One-dimensional oversampled cosine atom value: frequency k sampled
/// at cell center y of an n-point grid with oversampling factor oc.
fn cos_atom(y: usize, k: usize, n: usize, oc: usize) -> f64 {
    (std::f64::consts::PI * (y as f64 + 0.5) * k as f64 / (oc * n) as f64).cos()
}

/// Build the n x p dictionary of separable 2-D cosine atoms with
/// `overcompleteness`-times frequency oversampling per dimension.
pub fn build_dct_dictionary(height: usize, width: usize, overcompleteness: usize) -> Result<Dictionary> {
    if height == 0 || width == 0 || overcompleteness == 0 {
        return Err(GeError::Config(
            "dictionary dimensions and overcompleteness must be >= 1".into(),
        ));
    }
    let n = height * width;
    let p = (overcompleteness * height) * (overcompleteness * width);
    let mut psi = vec![0.0; n * p];
    let mut col = 0;
    for kh in 0..overcompleteness * height {
        for kw in 0..overcompleteness * width {
            let mut atom = Vec::with_capacity(n);
            for y in 0..height {
                let uy = cos_atom(y, kh, height, overcompleteness);
                for x in 0..width {
                    atom.push(uy * cos_atom(x, kw, width, overcompleteness));
                }
            }
            let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (row, v) in atom.iter().enumerate() {
                psi[row * p + col] = v / norm;
            }
            col += 1;
        }
    }
    Ok(Dictionary {
        psi: Tensor::new(vec![n, p], psi)?,
        height,
        width,
        overcompleteness,
    })
}

/// sign(v) * max(|v| - tau, 0), elementwise.
pub fn soft_threshold(v: &Tensor, tau: f64) -> Tensor {
    let data = v
        .data
        .iter()
        .map(|&x| x.signum() * (x.abs() - tau).max(0.0))
        .collect();
    Tensor::new(v.shape.clone(), data).expect("same shape")
}

fn mat_vec(a: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            a[r * cols..(r + 1) * cols]
                .iter()
                .zip(v)
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect()
}

fn mat_t_vec(a: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += row[c] * v[r];
        }
    }
    out
}

/// |A|_2^2 estimated by power iteration on A^T A from a deterministic
/// start vector.
fn spectral_bound(a: &Tensor, steps: usize) -> f64 {
    let (m, p) = (a.shape[0], a.shape[1]);
    let mut v = vec![1.0 / (p as f64).sqrt(); p];
    let mut lambda = 0.0;
    for _ in 0..steps {
        let av = mat_vec(&a.data, m, p, &v);
        let atav = mat_t_vec(&a.data, m, p, &av);
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        for (vi, w) in v.iter_mut().zip(&atav) {
            *vi = w / norm;
        }
    }
    lambda
}

fn lasso_objective(a: &Tensor, b: &[f64], beta: &[f64], alpha: f64) -> f64 {
    let (m, p) = (a.shape[0], a.shape[1]);
    let ab = mat_vec(&a.data, m, p, beta);
    let resid: f64 = ab.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    resid + alpha * beta.iter().map(|v| v.abs()).sum::<f64>()
}

/// Minimize |A*beta - b|^2 + alpha*|beta|_1 and return
/// (beta_star, x_hat = Psi*beta_star).
///
/// A must be the composed m x p measurement-of-atoms matrix (sensing
/// applied to dictionary columns). In plain ISTA mode the objective is
/// asserted non-increasing every step; an increase means the step size
/// is too large and is reported as a config error.
pub fn lasso_solve(
    a: &Tensor,
    b: &Tensor,
    dict: &Dictionary,
    config: &LassoConfig,
) -> Result<(Tensor, Tensor)> {
    if a.shape.len() != 2 {
        return Err(GeError::Shape("measurement matrix must be 2-d".into()));
    }
    let (m, p) = (a.shape[0], a.shape[1]);
    if p != dict.psi.shape[1] {
        return Err(GeError::Shape(format!(
            "matrix has {p} columns, dictionary has {} atoms",
            dict.psi.shape[1]
        )));
    }
    if b.shape != vec![m] {
        return Err(GeError::Shape(format!(
            "measurement shape {:?} does not match {m} rows",
            b.shape
        )));
    }
    if config.alpha <= 0.0 {
        return Err(GeError::Config("alpha must be > 0".into()));
    }
    let eta = match config.step {
        Some(s) if s > 0.0 => s,
        Some(_) => return Err(GeError::Config("step size must be > 0".into())),
        None => {
            let bound = spectral_bound(a, 50);
            if bound == 0.0 {
                1.0
            } else {
                1.0 / bound
            }
        }
    };
    // Gradient of the smooth part is 2 A^T(A beta - b); a step of
    // eta*A^T(A beta - b) is a half-step, so the matching proximal
    // threshold for alpha*|.|_1 is eta*alpha/2.
    let tau = eta * config.alpha / 2.0;
    let mut beta = vec![0.0; p];
    let mut momentum = beta.clone();
    let mut t: f64 = 1.0;
    let mut prev_obj = lasso_objective(a, &b.data, &beta, config.alpha);
    for iter in 0..config.iterations {
        let point = if config.fista { &momentum } else { &beta };
        let av = mat_vec(&a.data, m, p, point);
        let resid: Vec<f64> = av.iter().zip(&b.data).map(|(x, y)| x - y).collect();
        let grad = mat_t_vec(&a.data, m, p, &resid);
        let stepped: Vec<f64> = point
            .iter()
            .zip(&grad)
            .map(|(x, g)| x - eta * g)
            .collect();
        let next = soft_threshold(&Tensor::from_vec(stepped), tau).data;
        if config.fista {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            momentum = next
                .iter()
                .zip(&beta)
                .map(|(n, o)| n + (t - 1.0) / t_next * (n - o))
                .collect();
            t = t_next;
            beta = next;
        } else {
            let obj = lasso_objective(a, &b.data, &next, config.alpha);
            if obj > prev_obj * (1.0 + 1e-12) + 1e-15 {
                return Err(GeError::Config(format!(
                    "objective increased at iteration {iter} ({prev_obj} -> {obj}): step size too large"
                )));
            }
            prev_obj = obj;
            beta = next;
        }
    }
    let beta_t = Tensor::from_vec(beta);
    let n = dict.psi.shape[0];
    let x_hat = Tensor::new(
        vec![n],
        mat_vec(&dict.psi.data, n, dict.psi.shape[1], &beta_t.data),
    )?;
    Ok((beta_t, x_hat))
}

/// Solve the square system M c = rhs by Gaussian elimination with
/// partial pivoting. Returns None when M is numerically singular.
fn solve_linear(mut m: Vec<f64>, mut rhs: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| {
            m[a * n + col].abs().partial_cmp(&m[b * n + col].abs()).unwrap()
        })?;
        if m[pivot * n + col].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            rhs.swap(col, pivot);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                m[row * n + j] -= factor * m[col * n + j];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for j in row + 1..n {
            acc -= m[row * n + j] * x[j];
        }
        x[row] = acc / m[row * n + row];
    }
    Some(x)
}

/// Exhaustive lasso solver for p <= 16: enumerate every support and
/// sign pattern, solve the restricted stationarity system, and keep the
/// candidate with the smallest objective. The global minimizer's own
/// support/sign pattern is among the candidates, so the minimum is
/// exact.
pub fn lasso_exact(a: &Tensor, b: &[f64], alpha: f64) -> Result<(Vec<f64>, f64)> {
    let (m, p) = (a.shape[0], a.shape[1]);
    if p > 16 {
        return Err(GeError::Config(format!(
            "exhaustive solver limited to p <= 16, got {p}"
        )));
    }
    let mut best = vec![0.0; p];
    let mut best_obj = b.iter().map(|v| v * v).sum::<f64>();
    for support in 1u32..(1 << p) {
        let idx: Vec<usize> = (0..p).filter(|i| support & (1 << i) != 0).collect();
        let s = idx.len();
        if s > m {
            // some minimizer always has support size <= m
            continue;
        }
        // Gram matrix and A_S^T b for the restricted columns
        let mut gram = vec![0.0; s * s];
        let mut atb = vec![0.0; s];
        for r in 0..m {
            let row = &a.data[r * p..(r + 1) * p];
            for (i, &ci) in idx.iter().enumerate() {
                atb[i] += row[ci] * b[r];
                for (j, &cj) in idx.iter().enumerate() {
                    gram[i * s + j] += row[ci] * row[cj];
                }
            }
        }
        for signs in 0u32..(1 << s) {
            let rhs: Vec<f64> = (0..s)
                .map(|i| {
                    let sg = if signs & (1 << i) != 0 { -1.0 } else { 1.0 };
                    atb[i] - alpha / 2.0 * sg
                })
                .collect();
            let Some(beta_s) = solve_linear(gram.clone(), rhs, s) else {
                continue;
            };
            // objective using only the support columns
            let mut resid_sq = 0.0;
            for r in 0..m {
                let row = &a.data[r * p..(r + 1) * p];
                let pred: f64 = idx.iter().zip(&beta_s).map(|(&c, v)| row[c] * v).sum();
                resid_sq += (pred - b[r]) * (pred - b[r]);
            }
            let obj = resid_sq + alpha * beta_s.iter().map(|v| v.abs()).sum::<f64>();
            if obj < best_obj {
                best_obj = obj;
                best = vec![0.0; p];
                for (&c, &v) in idx.iter().zip(&beta_s) {
                    best[c] = v;
                }
            }
        }
    }
    Ok((best, best_obj))
}

/// Minimum-norm coefficients c with Psi*c = x, via the normal equations
/// c = Psi^T (Psi Psi^T + ridge I)^{-1} x with ridge 1e-10.
pub fn pseudo_inverse_apply(dict: &Dictionary, x: &Tensor) -> Result<Tensor> {
    let (n, p) = (dict.psi.shape[0], dict.psi.shape[1]);
    if x.numel() != n {
        return Err(GeError::Shape(format!(
            "image has {} elements, dictionary rows are {n}",
            x.numel()
        )));
    }
    let psi_t = {
        let mut t = vec![0.0; p * n];
        for r in 0..n {
            for c in 0..p {
                t[c * n + r] = dict.psi.data[r * p + c];
            }
        }
        t
    };
    let mut gram = matmul_raw(&dict.psi.data, &psi_t, n, p, n);
    for i in 0..n {
        gram[i * n + i] += 1e-10;
    }
    let y = solve_linear(gram, x.data.clone(), n)
        .ok_or_else(|| GeError::Numeric("singular dictionary Gram matrix".into()))?;
    Ok(Tensor::new(vec![p], mat_vec(&psi_t, p, n, &y))?)
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        // the proximal map of the l1 norm is 1-Lipschitz and never
        // grows magnitudes
        #[test]
        fn soft_threshold_is_nonexpansive(
            a in -10.0f64..10.0,
            b in -10.0f64..10.0,
            tau in 0.0f64..5.0,
        ) {
            let sa = soft_threshold(&Tensor::from_vec(vec![a]), tau).data[0];
            let sb = soft_threshold(&Tensor::from_vec(vec![b]), tau).data[0];
            prop_assert!((sa - sb).abs() <= (a - b).abs() + 1e-12);
            prop_assert!(sa.abs() <= a.abs() + 1e-12);
            prop_assert!(sa == 0.0 || sa.signum() == a.signum());
        }

        // dictionary columns stay unit-norm for arbitrary small sizes
        #[test]
        fn dictionary_columns_unit_norm(
            h in 1usize..5,
            w in 1usize..5,
            oc in 1usize..3,
        ) {
            let dict = build_dct_dictionary(h, w, oc).unwrap();
            let (n, p) = (dict.psi.shape[0], dict.psi.shape[1]);
            for c in 0..p {
                let norm: f64 = (0..n).map(|r| dict.psi.data[r * p + c].powi(2)).sum();
                prop_assert!((norm - 1.0).abs() < 1e-10);
            }
        }
    }
}
