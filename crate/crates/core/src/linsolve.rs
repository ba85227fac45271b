//! Conjugate gradients over plain `Vec<f64>` unknowns.
//!
//! Both the phase-field step (cell unknowns) and the flow solver (stacked
//! face unknowns) need an SPD solve with a matrix-free operator; this is the
//! single implementation they share.  All reductions are sequential folds so
//! repeated runs produce bitwise-identical iterates.

use crate::error::{ChbError, Result};

/// Outcome of a converged CG solve.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub rel_residual: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = rhs` for SPD `A` given as a matrix-free application.
///
/// `x` carries the initial guess in and the solution out.  `jacobi_inv`, if
/// provided, holds the elementwise inverse diagonal used as preconditioner;
/// callers that must preserve a discrete invariant of the Krylov space (the
/// phase step's mass functional) pass `None`.  Convergence is declared at
/// `||r||_2 <= max(rtol * ||rhs||_2, atol)`; running past `max_iter` or
/// losing positive definiteness is a solver error whose message carries a
/// residual trace.
#[allow(clippy::too_many_arguments)]
pub fn conjugate_gradient<A>(
    mut apply: A,
    rhs: &[f64],
    x: &mut [f64],
    jacobi_inv: Option<&[f64]>,
    rtol: f64,
    atol: f64,
    max_iter: usize,
    label: &str,
) -> Result<CgReport>
where
    A: FnMut(&[f64], &mut [f64]),
{
    let n = rhs.len();
    assert_eq!(x.len(), n, "solution/rhs size mismatch");
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgReport { iterations: 0, rel_residual: 0.0 });
    }
    let target = (rtol * rhs_norm).max(atol);

    let mut work = vec![0.0; n];
    apply(x, &mut work);
    let mut r: Vec<f64> = rhs.iter().zip(&work).map(|(b, ax)| b - ax).collect();
    let precondition = |r: &[f64], z: &mut Vec<f64>| match jacobi_inv {
        Some(d) => {
            z.clear();
            z.extend(r.iter().zip(d).map(|(ri, di)| ri * di));
        }
        None => {
            z.clear();
            z.extend_from_slice(r);
        }
    };

    let mut z = Vec::with_capacity(n);
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt();
    let mut trace: Vec<(usize, f64)> = vec![(0, res / rhs_norm)];

    for it in 1..=max_iter {
        if res <= target {
            return Ok(CgReport { iterations: it - 1, rel_residual: res / rhs_norm });
        }
        apply(&p, &mut work);
        let p_ap = dot(&p, &work);
        if !(p_ap > 0.0) || !p_ap.is_finite() {
            return Err(ChbError::Solver(format!(
                "{label}: CG lost positive definiteness at iteration {it} (pAp = {p_ap:e})"
            )));
        }
        let alpha = rz / p_ap;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        for (ri, api) in r.iter_mut().zip(&work) {
            *ri -= alpha * api;
        }
        res = dot(&r, &r).sqrt();
        if it.is_power_of_two() || it == max_iter {
            trace.push((it, res / rhs_norm));
        }
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }

    if res <= target {
        return Ok(CgReport { iterations: max_iter, rel_residual: res / rhs_norm });
    }
    let trace_str = trace
        .iter()
        .map(|(it, r)| format!("{it}:{r:.3e}"))
        .collect::<Vec<_>>()
        .join(" ");
    Err(ChbError::Solver(format!(
        "{label}: CG did not reach rtol {rtol:e} within {max_iter} iterations \
         (rel residual {:.3e}; trace {trace_str})",
        res / rhs_norm
    )))
}
