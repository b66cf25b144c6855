//! Jacobi-preconditioned conjugate gradient on a caller-supplied symmetric
//! positive (semi)definite operator.

use crate::error::{Error, Result};

/// Outcome of a CG solve.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Solve `A x = b` with `apply(x, y)` computing `y = A x`.
///
/// `diag` is the operator diagonal used for Jacobi preconditioning (entries
/// <= 0 fall back to 1). Convergence is declared on the 2-norm residual
/// relative to |b|; x is used as the initial guess.
pub fn pcg<F>(
    apply: F,
    b: &[f64],
    x: &mut [f64],
    diag: &[f64],
    tol_rel: f64,
    max_iter: usize,
) -> Result<CgReport>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(x.len(), n);
    let norm_b = norm(b);
    if norm_b == 0.0 {
        x.fill(0.0);
        return Ok(CgReport {
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let inv_d: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 0..max_iter {
        let res = norm(&r) / norm_b;
        if res <= tol_rel {
            return Ok(CgReport {
                iterations: it,
                rel_residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Singular(format!(
                "cg: non-positive curvature {pap:.3e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm(&r) / norm_b;
    if res <= tol_rel {
        Ok(CgReport {
            iterations: max_iter,
            rel_residual: res,
        })
    } else {
        Err(Error::NoConvergence(format!(
            "cg: residual {res:.3e} > {tol_rel:.1e} after {max_iter} iterations"
        )))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
