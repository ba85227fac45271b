//! Steady Brinkman flow on the staggered grid:
//!
//! ```text
//!   -div( nu(phi) grad(u) ) + eta u + grad(pi) = mu grad(phi) + h,
//!   div(u) = 0,        u = 0 on the walls,
//! ```
//!
//! optionally with the symmetrized viscous stress `-div(2 nu D(u))`.  The
//! saddle point is solved by an Uzawa iteration: each outer sweep solves the
//! SPD velocity block with preconditioned CG and then relaxes the pressure
//! against the remaining divergence, `pi <- pi - rho div(u)` with
//! `rho = mean(nu)`.  (The Schur complement of this sign convention is
//! positive definite, so the divergence residual must be *subtracted*;
//! physically, raising the pressure in a cell must push flow out of it.)
//! Convergence is declared on the max of the momentum and divergence
//! residuals in the sup norm; the pressure is kept mean-free throughout.

use std::cell::RefCell;

use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, StaggeredVectorField};
use crate::linsolve::conjugate_gradient;

/// Form of the viscous operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViscousForm {
    /// Componentwise `-div(nu grad u)`.
    DivGrad,
    /// Symmetrized stress `-div(2 nu D(u))` with `D(u) = (grad u + grad u^T)/2`.
    SymGrad,
}

impl std::str::FromStr for ViscousForm {
    type Err = ChbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divgrad" => Ok(ViscousForm::DivGrad),
            "symgrad" => Ok(ViscousForm::SymGrad),
            other => Err(ChbError::Config(format!(
                "unknown viscous form '{other}' (expected 'divgrad' or 'symgrad')"
            ))),
        }
    }
}

/// Phase-dependent viscosity: linear blend from `nu0` at the pure phase
/// `-1` to `nu1` at `+1`, with the phase argument clamped to `[-1, 1]`.
pub fn viscosity_of_phi(phi: &ScalarField, nu0: f64, nu1: f64) -> Result<ScalarField> {
    if !(nu0 > 0.0 && nu0.is_finite() && nu1 > 0.0 && nu1.is_finite()) {
        return Err(ChbError::Config(format!(
            "viscosities must be positive and finite, got nu0={nu0}, nu1={nu1}"
        )));
    }
    Ok(phi.map(|p| nu0 + (nu1 - nu0) * (1.0 + p.clamp(-1.0, 1.0)) / 2.0))
}

/// Capillary + body forcing on faces: `avg(mu) grad(phi) + h`.
pub fn assemble_forcing(
    mu: &ScalarField,
    phi: &ScalarField,
    body: Option<&StaggeredVectorField>,
) -> StaggeredVectorField {
    let g = mu.grid();
    let mu_faces = mu.face_average();
    let grad_phi = phi.gradient();
    let mut f = StaggeredVectorField::zeros(g);
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            *f.ux_mut(i, j) = mu_faces.ux(i, j) * grad_phi.ux(i, j);
        }
    }
    for j in 1..g.ny() {
        for i in 0..g.nx() {
            *f.uy_mut(i, j) = mu_faces.uy(i, j) * grad_phi.uy(i, j);
        }
    }
    if let Some(h) = body {
        for (o, v) in f.ux_data_mut().iter_mut().zip(h.ux_data()) {
            *o += v;
        }
        for (o, v) in f.uy_data_mut().iter_mut().zip(h.uy_data()) {
            *o += v;
        }
        f.zero_boundary_faces();
    }
    f
}

/// One flow problem instance: cell-centered viscosity, friction
/// coefficient, face forcing, and the viscous form.
pub struct BrinkmanProblem {
    pub nu: ScalarField,
    pub eta: f64,
    pub force: StaggeredVectorField,
    pub form: ViscousForm,
}

impl BrinkmanProblem {
    pub fn new(
        nu: ScalarField,
        eta: f64,
        force: StaggeredVectorField,
        form: ViscousForm,
    ) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(ChbError::Config(format!(
                "friction coefficient must be finite and nonnegative, got {eta}"
            )));
        }
        if nu.data().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(ChbError::Config("viscosity field must be strictly positive".into()));
        }
        if !force.boundary_faces_zero() {
            return Err(ChbError::Config(
                "flow forcing must vanish on boundary faces (no-slip walls)".into(),
            ));
        }
        Ok(BrinkmanProblem { nu, eta, force, form })
    }
}

/// Converged flow state with its final residuals.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub u: StaggeredVectorField,
    pub pi: ScalarField,
    /// Final `max(momentum, divergence)` sup-norm residual.
    pub residual: f64,
    pub div_max: f64,
    pub outer_iters: usize,
}

/// Velocity-block operator `u -> eta u - div(stress(u))` restricted to
/// interior faces, with reflected tangential ghosts at the walls.
struct ViscousOp {
    grid: Grid2D,
    nu: ScalarField,
    nu_nodes: Vec<f64>,
    eta: f64,
    form: ViscousForm,
    scratch_in: RefCell<StaggeredVectorField>,
    scratch_out: RefCell<StaggeredVectorField>,
}

impl ViscousOp {
    fn new(nu: &ScalarField, eta: f64, form: ViscousForm) -> Self {
        let g = nu.grid();
        let (nx, ny) = (g.nx(), g.ny());
        // Corner viscosities: average of the adjacent cells (4 in the
        // interior, 2 on edges, 1 at domain corners).
        let mut nu_nodes = vec![0.0; (nx + 1) * (ny + 1)];
        for jn in 0..=ny {
            for inn in 0..=nx {
                let mut sum = 0.0;
                let mut count = 0.0;
                for dj in 0..2usize {
                    for di in 0..2usize {
                        if inn + di >= 1 && inn + di <= nx && jn + dj >= 1 && jn + dj <= ny {
                            sum += nu.at(inn + di - 1, jn + dj - 1);
                            count += 1.0;
                        }
                    }
                }
                nu_nodes[jn * (nx + 1) + inn] = sum / count;
            }
        }
        ViscousOp {
            grid: g,
            nu: nu.clone(),
            nu_nodes,
            eta,
            form,
            scratch_in: RefCell::new(StaggeredVectorField::zeros(g)),
            scratch_out: RefCell::new(StaggeredVectorField::zeros(g)),
        }
    }

    #[inline]
    fn node(&self, i: usize, j: usize) -> f64 {
        self.nu_nodes[j * (self.grid.nx() + 1) + i]
    }

    fn n_unknowns(&self) -> usize {
        let g = self.grid;
        (g.nx() - 1) * g.ny() + g.nx() * (g.ny() - 1)
    }

    fn pack(&self, u: &StaggeredVectorField, v: &mut [f64]) {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let mut k = 0;
        for j in 0..ny {
            for i in 1..nx {
                v[k] = u.ux(i, j);
                k += 1;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                v[k] = u.uy(i, j);
                k += 1;
            }
        }
    }

    fn unpack(&self, v: &[f64], u: &mut StaggeredVectorField) {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let mut k = 0;
        for j in 0..ny {
            for i in 1..nx {
                *u.ux_mut(i, j) = v[k];
                k += 1;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                *u.uy_mut(i, j) = v[k];
                k += 1;
            }
        }
    }

    /// Applies the operator on full staggered fields (boundary faces must
    /// be zero; they stay zero in the output).
    fn apply_field(&self, u: &StaggeredVectorField, out: &mut StaggeredVectorField) {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let h = g.h();
        let inv_h2 = 1.0 / (h * h);
        let sym = self.form == ViscousForm::SymGrad;
        let normal_scale = if sym { 2.0 } else { 1.0 };

        for j in 0..ny {
            for i in 1..nx {
                let uc = u.ux(i, j);
                let nu_r = self.nu.at(i, j);
                let nu_l = self.nu.at(i - 1, j);
                let flux_x = normal_scale
                    * (nu_r * (u.ux(i + 1, j) - uc) - nu_l * (uc - u.ux(i - 1, j)));
                // Tangential derivative across the corner nodes above and
                // below; the wall rows close with the reflected ghost.
                let dy_n = if j + 1 == ny { -2.0 * uc } else { u.ux(i, j + 1) - uc };
                let dy_s = if j == 0 { 2.0 * uc } else { uc - u.ux(i, j - 1) };
                let (gam_n, gam_s) = if sym {
                    (
                        dy_n + (u.uy(i, j + 1) - u.uy(i - 1, j + 1)),
                        dy_s + (u.uy(i, j) - u.uy(i - 1, j)),
                    )
                } else {
                    (dy_n, dy_s)
                };
                let flux_y = self.node(i, j + 1) * gam_n - self.node(i, j) * gam_s;
                *out.ux_mut(i, j) = self.eta * uc - (flux_x + flux_y) * inv_h2;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let uc = u.uy(i, j);
                let nu_n = self.nu.at(i, j);
                let nu_s = self.nu.at(i, j - 1);
                let flux_y = normal_scale
                    * (nu_n * (u.uy(i, j + 1) - uc) - nu_s * (uc - u.uy(i, j - 1)));
                let dx_e = if i + 1 == nx { -2.0 * uc } else { u.uy(i + 1, j) - uc };
                let dx_w = if i == 0 { 2.0 * uc } else { uc - u.uy(i - 1, j) };
                let (gam_e, gam_w) = if sym {
                    (
                        dx_e + (u.ux(i + 1, j) - u.ux(i + 1, j - 1)),
                        dx_w + (u.ux(i, j) - u.ux(i, j - 1)),
                    )
                } else {
                    (dx_e, dx_w)
                };
                let flux_x = self.node(i + 1, j) * gam_e - self.node(i, j) * gam_w;
                *out.uy_mut(i, j) = self.eta * uc - (flux_y + flux_x) * inv_h2;
            }
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let mut uin = self.scratch_in.borrow_mut();
        let mut uout = self.scratch_out.borrow_mut();
        self.unpack(v, &mut uin);
        self.apply_field(&uin, &mut uout);
        self.pack(&uout, out);
    }

    /// Analytic matrix diagonal (verified against unit-vector probes in the
    /// tests); feeds the Jacobi preconditioner.
    fn diagonal(&self) -> Vec<f64> {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let h = g.h();
        let inv_h2 = 1.0 / (h * h);
        let normal_scale = if self.form == ViscousForm::SymGrad { 2.0 } else { 1.0 };
        let mut d = Vec::with_capacity(self.n_unknowns());
        for j in 0..ny {
            for i in 1..nx {
                let c_n = if j + 1 == ny { 2.0 } else { 1.0 };
                let c_s = if j == 0 { 2.0 } else { 1.0 };
                d.push(
                    self.eta
                        + inv_h2
                            * (normal_scale * (self.nu.at(i, j) + self.nu.at(i - 1, j))
                                + c_n * self.node(i, j + 1)
                                + c_s * self.node(i, j)),
                );
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let c_e = if i + 1 == nx { 2.0 } else { 1.0 };
                let c_w = if i == 0 { 2.0 } else { 1.0 };
                d.push(
                    self.eta
                        + inv_h2
                            * (normal_scale * (self.nu.at(i, j) + self.nu.at(i, j - 1))
                                + c_e * self.node(i + 1, j)
                                + c_w * self.node(i, j)),
                );
            }
        }
        d
    }
}

/// Default cap on inner CG iterations per velocity solve.
const INNER_CG_MAX: usize = 50_000;

/// Solves the Brinkman saddle point by Uzawa iteration.
///
/// `tol` bounds the final sup-norm residuals (momentum and divergence);
/// `max_iter` caps the outer pressure sweeps.  `warm`, if given, seeds both
/// the velocity and the pressure, which is what makes per-time-step calls
/// cheap when the phase field moves slowly.
pub fn solve(
    problem: &BrinkmanProblem,
    tol: f64,
    max_iter: usize,
    warm: Option<&FlowSolution>,
) -> Result<FlowSolution> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(ChbError::Config(format!("flow tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(ChbError::Config("flow solver needs at least one outer iteration".into()));
    }
    let g = problem.nu.grid();
    let op = ViscousOp::new(&problem.nu, problem.eta, problem.form);
    let diag = op.diagonal();
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();

    let mut uvec = vec![0.0; op.n_unknowns()];
    let mut pi;
    match warm {
        Some(w) => {
            if w.u.grid() != g {
                return Err(ChbError::Config("warm start lives on a different grid".into()));
            }
            op.pack(&w.u, &mut uvec);
            pi = w.pi.clone();
        }
        None => {
            pi = ScalarField::zeros(g);
        }
    }
    let mean = pi.mean();
    if mean != 0.0 {
        pi = pi.map(|v| v - mean);
    }

    let rho = problem.nu.mean();
    let mut force_vec = vec![0.0; op.n_unknowns()];
    let mut rhs = vec![0.0; op.n_unknowns()];
    op.pack(&problem.force, &mut force_vec);

    let mut u = StaggeredVectorField::zeros(g);
    let mut trace: Vec<(usize, f64, f64)> = Vec::new();
    for outer in 1..=max_iter {
        // Velocity block with the current pressure frozen.
        let grad_pi = pi.gradient();
        let mut gp = vec![0.0; op.n_unknowns()];
        op.pack(&grad_pi, &mut gp);
        for ((r, f), p) in rhs.iter_mut().zip(&force_vec).zip(&gp) {
            *r = f - p;
        }
        conjugate_gradient(
            |v, out| op.apply(v, out),
            &rhs,
            &mut uvec,
            Some(&inv_diag),
            1e-14,
            0.1 * tol,
            INNER_CG_MAX,
            "flow velocity block",
        )?;
        op.unpack(&uvec, &mut u);

        // Pressure relaxation against the divergence residual.
        let div = u.divergence();
        let div_max = div.norms().linf;
        for (p, d) in pi.data_mut().iter_mut().zip(div.data()) {
            *p -= rho * d;
        }
        let mean = pi.mean();
        for p in pi.data_mut() {
            *p -= mean;
        }

        // Residuals of the coupled system at the updated pair (u, pi).
        let grad_pi = pi.gradient();
        let mut au = vec![0.0; op.n_unknowns()];
        op.apply(&uvec, &mut au);
        op.pack(&grad_pi, &mut gp);
        let mut mom_inf: f64 = 0.0;
        for ((f, a), p) in force_vec.iter().zip(&au).zip(&gp) {
            mom_inf = mom_inf.max((f - a - p).abs());
        }
        let residual = mom_inf.max(div_max);
        trace.push((outer, mom_inf, div_max));
        if residual <= tol {
            return Ok(FlowSolution { u, pi, residual, div_max, outer_iters: outer });
        }
    }

    let tail: Vec<String> = trace
        .iter()
        .rev()
        .take(5)
        .rev()
        .map(|(k, m, d)| format!("{k}:mom={m:.3e},div={d:.3e}"))
        .collect();
    Err(ChbError::Solver(format!(
        "flow solver stalled after {max_iter} outer sweeps (tol {tol:e}; trace {})",
        tail.join(" ")
    )))
}

/// Energy pairing for a converged solution: returns
/// `(nu0 ||grad u||^2 + eta ||u||^2, <force, u>)`; the first never exceeds
/// the second (up to solver residual) when `nu >= nu0` everywhere.
pub fn energy_check(problem: &BrinkmanProblem, sol: &FlowSolution, nu0: f64) -> (f64, f64) {
    let l2 = sol.u.l2_norm();
    let h1 = sol.u.h1_norm();
    let grad_sq = (h1 * h1 - l2 * l2).max(0.0);
    let lhs = nu0 * grad_sq + problem.eta * l2 * l2;
    let rhs = problem.force.inner(&sol.u);
    (lhs, rhs)
}
