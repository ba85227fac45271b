//! Manufactured solutions for code verification.
//!
//! Two studies ship with the crate:
//!
//! * a steady flow with exactly divergence-free velocity and a known
//!   pressure, pushed through the saddle-point solver at `nu = eta = 1`;
//! * a transient phase field with a local (zero-kernel) potential term,
//!   advanced by the IMEX stepper against an analytic source.
//!
//! All forcing expressions below are hand-differentiated from the target
//! fields; the tests cross-check the building-block identities by finite
//! differences so a transcription slip cannot silently skew the study.
//! Both solutions have homogeneous velocity/flux walls, so the interior
//! discretizations converge at clean second order and the studies make
//! useful regression anchors: the error ratio per refinement must sit
//! near four.

use std::f64::consts::PI;

use crate::brinkman::{self, BrinkmanProblem, ViscousForm};
use crate::chsolver::{self, ChState, Transport};
use crate::error::Result;
use crate::grid::{Grid2D, ScalarField, StaggeredVectorField};
use crate::kernel::Kernel;
use crate::material::{MaterialModel, Mobility, ModelConstants, Potential};

/// One refinement level of the flow study.
#[derive(Debug, Clone, Copy)]
pub struct FlowLevelReport {
    pub n: usize,
    pub u_inf_err: f64,
    pub u_l2_err: f64,
    pub pi_l2_err: f64,
}

/// One refinement level of the phase-field study.
#[derive(Debug, Clone, Copy)]
pub struct ChLevelReport {
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
    pub linf_err: f64,
}

fn exact_u1(x: f64, y: f64) -> f64 {
    0.5 * PI * (1.0 - (2.0 * PI * x).cos()) * (2.0 * PI * y).sin()
}

fn exact_u2(x: f64, y: f64) -> f64 {
    -0.5 * PI * (2.0 * PI * x).sin() * (1.0 - (2.0 * PI * y).cos())
}

fn exact_pi(x: f64, y: f64) -> f64 {
    (PI * x).cos() * (PI * y).cos()
}

fn laplace_u1(x: f64, y: f64) -> f64 {
    2.0 * PI.powi(3) * (2.0 * PI * y).sin() * (2.0 * (2.0 * PI * x).cos() - 1.0)
}

fn laplace_u2(x: f64, y: f64) -> f64 {
    -2.0 * PI.powi(3) * (2.0 * PI * x).sin() * (2.0 * (2.0 * PI * y).cos() - 1.0)
}

/// Forcing, exact velocity, and exact (mean-free) pressure for the flow
/// study on the given grid.  The momentum forcing is
/// `f = -laplace(u) + u + grad(pi)` — valid for both viscous forms because
/// the exact velocity is divergence-free.  Boundary faces of the forcing
/// are zeroed: they are not unknowns of the discrete system.
pub fn flow_manufactured_fields(
    g: Grid2D,
) -> (StaggeredVectorField, StaggeredVectorField, ScalarField) {
    let f1 = |x: f64, y: f64| {
        -laplace_u1(x, y) + exact_u1(x, y) - PI * (PI * x).sin() * (PI * y).cos()
    };
    let f2 = |x: f64, y: f64| {
        -laplace_u2(x, y) + exact_u2(x, y) - PI * (PI * x).cos() * (PI * y).sin()
    };
    let mut force = StaggeredVectorField::from_fn(g, f1, f2);
    force.zero_boundary_faces();
    let exact_u = StaggeredVectorField::from_fn(g, exact_u1, exact_u2);
    let pi_cells = ScalarField::from_fn(g, exact_pi);
    let mean = pi_cells.mean();
    let pi_cells = pi_cells.map(|v| v - mean);
    (force, exact_u, pi_cells)
}

/// Runs the flow study at one resolution and reports the discretization
/// errors against the exact fields.
pub fn flow_study_level(n: usize, form: ViscousForm) -> Result<FlowLevelReport> {
    let g = Grid2D::new(n, n, 1.0, 1.0)?;
    let (force, exact_u, exact_p) = flow_manufactured_fields(g);
    let problem = BrinkmanProblem::new(ScalarField::constant(g, 1.0), 1.0, force, form)?;
    let sol = brinkman::solve(&problem, 1e-9, 500, None)?;
    let mut u_err: f64 = 0.0;
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            u_err = u_err.max((sol.u.ux(i, j) - exact_u.ux(i, j)).abs());
        }
    }
    for j in 1..g.ny() {
        for i in 0..g.nx() {
            u_err = u_err.max((sol.u.uy(i, j) - exact_u.uy(i, j)).abs());
        }
    }
    let mut u_diff = sol.u.clone();
    for (d, e) in u_diff.ux_data_mut().iter_mut().zip(exact_u.ux_data()) {
        *d -= e;
    }
    for (d, e) in u_diff.uy_data_mut().iter_mut().zip(exact_u.uy_data()) {
        *d -= e;
    }
    let mut diff = sol.pi.clone();
    for (d, e) in diff.data_mut().iter_mut().zip(exact_p.data()) {
        *d -= e;
    }
    Ok(FlowLevelReport {
        n,
        u_inf_err: u_err,
        u_l2_err: u_diff.l2_norm(),
        pi_l2_err: diff.norms().l2,
    })
}

/// Flow study across a refinement ladder.
pub fn flow_convergence_study(
    levels: &[usize],
    form: ViscousForm,
) -> Result<Vec<FlowLevelReport>> {
    levels.iter().map(|&n| flow_study_level(n, form)).collect()
}

/// Amplitude of the manufactured phase field.
const CH_AMP: f64 = 0.3;

fn exact_phi(x: f64, y: f64, t: f64) -> f64 {
    CH_AMP * (PI * x).cos() * (PI * y).cos() * (-t).exp()
}

/// Analytic source closing `d(phi)/dt = m0 laplace(F'(phi)) + S` for the
/// logarithmic potential with unit prefactor and `m0 = 1`:
/// `S = -phi + 2 pi^2 phi F''(phi) - F'''(phi) |grad phi|^2`.
fn ch_source(x: f64, y: f64, t: f64) -> f64 {
    let p = exact_phi(x, y, t);
    let w = 1.0 - p * p;
    let f2 = 2.0 / w;
    let f3 = 4.0 * p / (w * w);
    let decay = CH_AMP * (-t).exp();
    let gx = -decay * PI * (PI * x).sin() * (PI * y).cos();
    let gy = -decay * PI * (PI * x).cos() * (PI * y).sin();
    let grad_sq = gx * gx + gy * gy;
    -p + 2.0 * PI * PI * p * f2 - f3 * grad_sq
}

/// Material model for the phase study: logarithmic potential, constant
/// unit mobility, and the ellipticity constants that pair carries
/// (`inf lambda = inf 2/(1 - r^2) = 2`; the kernel is zero so `m a` does
/// not contribute).
fn ch_study_model() -> Result<MaterialModel> {
    Ok(
        MaterialModel::new(Potential::logarithmic(), Mobility::constant(1.0)?)?
            .with_constants(ModelConstants { alpha0: 2.0, alpha1: 2.0, eps0: 0.9 }),
    )
}

/// Runs the phase study at one resolution.  The step size shrinks with
/// `h^2` so the first-order-in-time splitting error refines at the same
/// rate as the spatial error and the ladder shows a clean factor of four.
pub fn ch_study_level(n: usize) -> Result<ChLevelReport> {
    ch_level_with(n, 0.05, 50 * (n / 16) * (n / 16))
}

/// Phase study at one resolution with an explicit horizon and step count;
/// with a fixed (resolution-independent) `dt` small enough, the reported
/// error isolates the spatial discretization.
pub fn ch_level_with(n: usize, t_end: f64, steps: usize) -> Result<ChLevelReport> {
    let g = Grid2D::new(n, n, 1.0, 1.0)?;
    let dt = t_end / steps as f64;
    let kernel = Kernel::gaussian(g, 0.0, 0.2)?;
    let model = ch_study_model()?;
    let u = StaggeredVectorField::zeros(g);
    let mut state = ChState::new(ScalarField::from_fn(g, |x, y| exact_phi(x, y, 0.0)), 0.0);
    for _ in 0..steps {
        let t = state.t;
        let source = ScalarField::from_fn(g, |x, y| ch_source(x, y, t));
        state = chsolver::step(
            &state,
            &u,
            &kernel,
            &model,
            dt,
            1e-9,
            Transport::Upwind,
            Some(&source),
        )?;
    }
    let mut err: f64 = 0.0;
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let exact = exact_phi(g.cell_x(i), g.cell_y(j), state.t);
            err = err.max((state.phi.at(i, j) - exact).abs());
        }
    }
    Ok(ChLevelReport { n, dt, steps, linf_err: err })
}

/// Phase study across a refinement ladder.
pub fn ch_convergence_study(levels: &[usize]) -> Result<Vec<ChLevelReport>> {
    levels.iter().map(|&n| ch_study_level(n)).collect()
}

/// Phase study across a refinement ladder at one shared `dt`, so the
/// error ratios measure spatial order alone.
pub fn ch_spatial_study(levels: &[usize], t_end: f64, dt: f64) -> Result<Vec<ChLevelReport>> {
    let steps = (t_end / dt).round() as usize;
    levels.iter().map(|&n| ch_level_with(n, t_end, steps)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd2<F: Fn(f64) -> f64>(f: F, x: f64, eps: f64) -> f64 {
        (f(x + eps) - 2.0 * f(x) + f(x - eps)) / (eps * eps)
    }

    #[test]
    fn manufactured_velocity_is_divergence_free_and_wall_bound() {
        for &(x, y) in &[(0.3, 0.7), (0.11, 0.52), (0.9, 0.25)] {
            let eps = 1e-5;
            let div = ((exact_u1(x + eps, y) - exact_u1(x - eps, y))
                + (exact_u2(x, y + eps) - exact_u2(x, y - eps)))
                / (2.0 * eps);
            assert!(div.abs() < 1e-8, "div at ({x},{y}) = {div:.3e}");
        }
        for k in 0..=8 {
            let s = k as f64 / 8.0;
            for (a, b) in [
                (exact_u1(0.0, s), exact_u2(0.0, s)),
                (exact_u1(1.0, s), exact_u2(1.0, s)),
                (exact_u1(s, 0.0), exact_u2(s, 0.0)),
                (exact_u1(s, 1.0), exact_u2(s, 1.0)),
            ] {
                assert!(a.abs() < 1e-12 && b.abs() < 1e-12, "wall slip at {s}");
            }
        }
    }

    #[test]
    fn hand_derived_laplacians_match_finite_differences() {
        let eps = 1e-4;
        for &(x, y) in &[(0.22, 0.81), (0.5, 0.37), (0.68, 0.09)] {
            let l1 = fd2(|s| exact_u1(s, y), x, eps) + fd2(|s| exact_u1(x, s), y, eps);
            assert!((l1 - laplace_u1(x, y)).abs() < 2e-4 * (1.0 + laplace_u1(x, y).abs()));
            let l2 = fd2(|s| exact_u2(s, y), x, eps) + fd2(|s| exact_u2(x, s), y, eps);
            assert!((l2 - laplace_u2(x, y)).abs() < 2e-4 * (1.0 + laplace_u2(x, y).abs()));
        }
    }

    #[test]
    fn phase_source_closes_the_equation_to_finite_difference_accuracy() {
        // Residual of d(phi)/dt - laplace(F'(phi)) - S with all derivatives
        // replaced by finite differences of the exact solution.
        let eps = 1e-4;
        let fprime = |x: f64, y: f64, t: f64| {
            let p = exact_phi(x, y, t);
            (1.0 + p).ln() - (1.0 - p).ln()
        };
        for &(x, y, t) in &[(0.31, 0.64, 0.02), (0.12, 0.4, 0.0), (0.77, 0.23, 0.04)] {
            let dphi_dt = (exact_phi(x, y, t + eps) - exact_phi(x, y, t - eps)) / (2.0 * eps);
            let lap_fp = fd2(|s| fprime(s, y, t), x, eps) + fd2(|s| fprime(x, s, t), y, eps);
            let resid = dphi_dt - lap_fp - ch_source(x, y, t);
            assert!(resid.abs() < 1e-5, "residual at ({x},{y},{t}) = {resid:.3e}");
        }
    }

    #[test]
    fn phase_study_refines_at_second_order() {
        let reports = ch_convergence_study(&[16, 32]).unwrap();
        let ratio = reports[0].linf_err / reports[1].linf_err;
        assert!(
            (3.0..5.2).contains(&ratio),
            "expected ~4x reduction, got {ratio} ({reports:?})"
        );
    }
}
