//! Time stepping for the nonlocal phase-field equation
//!
//! ```text
//!   d(phi)/dt + div(u phi) = div( m(phi) grad(mu) ),
//!   mu = a(x) phi - J*phi + F'(phi),
//! ```
//!
//! with no-flux walls.  The mobility flux is assembled in its regularized
//! form, which never differentiates the singular `F'` directly:
//!
//! ```text
//!   m grad(mu) = (m a + lambda) grad(phi) + m ( phi grad(a) - (grad J)*phi ),
//!   lambda = m F'',
//! ```
//!
//! so the parabolic face coefficient `m a + lambda` stays bounded below by
//! the validated ellipticity constant even where `F''` blows up.  The scheme
//! is first-order IMEX: the `(m a + lambda)`-diffusion is implicit with
//! coefficients lagged at the old state, everything else explicit.  The
//! implicit solve is written for the increment `delta = phi_new - phi_old`;
//! its right-hand side is a discrete divergence (zero-sum up to rounding)
//! and plain CG keeps every Krylov iterate in that zero-sum class, which is
//! what makes the total mass drift pure rounding noise.

use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, StaggeredVectorField};
use crate::kernel::Kernel;
use crate::linsolve::conjugate_gradient;
use crate::material::MaterialModel;

/// Phase field together with its simulation time.
#[derive(Debug, Clone)]
pub struct ChState {
    pub phi: ScalarField,
    pub t: f64,
}

impl ChState {
    pub fn new(phi: ScalarField, t: f64) -> Self {
        ChState { phi, t }
    }
}

/// Discretization of the advective term `div(u phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// First-order donor-cell fluxes; unconditionally sign-stable.
    Upwind,
    /// Face-averaged fluxes; skew-symmetric against the field for
    /// discretely divergence-free velocities.
    Central,
}

impl std::str::FromStr for Transport {
    type Err = ChbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upwind" => Ok(Transport::Upwind),
            "central" => Ok(Transport::Central),
            other => Err(ChbError::Config(format!(
                "unknown transport scheme '{other}' (expected 'upwind' or 'central')"
            ))),
        }
    }
}

/// Adaptive step-size controller with a multiplicative shrink/grow rule.
///
/// A rejected step halves `dt` (down to `dt_min`); ten consecutive accepted
/// steps grow it again (up to `dt_max`).  Rejection at the floor aborts.
#[derive(Debug, Clone)]
pub struct StepControl {
    dt: f64,
    dt_min: f64,
    dt_max: f64,
    shrink_factor: f64,
    guard_band: f64,
    successes: u32,
}

/// Accepted steps needed before the controller tries growing `dt` again.
const GROW_STREAK: u32 = 10;

impl StepControl {
    pub fn new(dt: f64, dt_min: f64, dt_max: f64) -> Result<Self> {
        Self::with_policy(dt, dt_min, dt_max, 0.5, 1e-9)
    }

    pub fn with_policy(
        dt: f64,
        dt_min: f64,
        dt_max: f64,
        shrink_factor: f64,
        guard_band: f64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt_min.is_finite() && dt_max.is_finite()) {
            return Err(ChbError::Config("step sizes must be finite".into()));
        }
        if !(0.0 < dt_min && dt_min <= dt && dt <= dt_max) {
            return Err(ChbError::Config(format!(
                "need 0 < dt_min <= dt <= dt_max, got dt={dt}, dt_min={dt_min}, dt_max={dt_max}"
            )));
        }
        if !(shrink_factor > 0.0 && shrink_factor < 1.0) {
            return Err(ChbError::Config(format!(
                "shrink factor must lie in (0,1), got {shrink_factor}"
            )));
        }
        if !(guard_band > 0.0 && guard_band.is_finite()) {
            return Err(ChbError::Config(format!(
                "guard band must be positive, got {guard_band}"
            )));
        }
        Ok(StepControl { dt, dt_min, dt_max, shrink_factor, guard_band, successes: 0 })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dt_min(&self) -> f64 {
        self.dt_min
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }

    pub fn guard_band(&self) -> f64 {
        self.guard_band
    }

    /// Records an accepted step; after a streak of them, grows `dt`.
    pub fn on_success(&mut self) {
        self.successes += 1;
        if self.successes >= GROW_STREAK {
            self.dt = (self.dt / self.shrink_factor).min(self.dt_max);
            self.successes = 0;
        }
    }

    /// Records a rejected step, shrinking `dt`; rejection with `dt` already
    /// at the floor is fatal.
    pub fn on_rejection(&mut self) -> Result<()> {
        if self.dt <= self.dt_min * (1.0 + 1e-12) {
            return Err(ChbError::Aborted(format!(
                "step rejected with dt already at its floor {:.3e}",
                self.dt_min
            )));
        }
        self.dt = (self.dt * self.shrink_factor).max(self.dt_min);
        self.successes = 0;
        Ok(())
    }
}

/// Chemical potential `mu = a phi - J*phi + F'(phi)` at cell centers.
pub fn chemical_potential(
    phi: &ScalarField,
    kernel: &Kernel,
    model: &MaterialModel,
) -> Result<ScalarField> {
    let conv = kernel.convolve(phi)?;
    let a = kernel.a_field();
    let mut mu = ScalarField::zeros(phi.grid());
    for (idx, out) in mu.data_mut().iter_mut().enumerate() {
        let p = phi.data()[idx];
        *out = a.data()[idx] * p - conv.data()[idx] + model.potential().f_prime(p)?;
    }
    Ok(mu)
}

/// Face coefficients `avg(m a + lambda)`, verified against the ellipticity
/// floor `alpha_1` from validation.  Boundary faces stay zero (no flux).
fn face_coefficients(
    phi: &ScalarField,
    kernel: &Kernel,
    model: &MaterialModel,
) -> Result<StaggeredVectorField> {
    let g = phi.grid();
    let a = kernel.a_field();
    let alpha1 = model.alpha1()?;
    let floor = alpha1 - 1e-12;
    let mut w = ScalarField::zeros(g);
    for (idx, out) in w.data_mut().iter_mut().enumerate() {
        let p = phi.data()[idx];
        *out = model.m(p) * a.data()[idx] + model.lambda(p);
    }
    let mut coeff = StaggeredVectorField::zeros(g);
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            let c = 0.5 * (w.at(i - 1, j) + w.at(i, j));
            if c < floor {
                return Err(ChbError::Assumption(format!(
                    "face coefficient {c:.6e} fell below the ellipticity floor {alpha1:.6e}"
                )));
            }
            *coeff.ux_mut(i, j) = c;
        }
    }
    for j in 1..g.ny() {
        for i in 0..g.nx() {
            let c = 0.5 * (w.at(i, j - 1) + w.at(i, j));
            if c < floor {
                return Err(ChbError::Assumption(format!(
                    "face coefficient {c:.6e} fell below the ellipticity floor {alpha1:.6e}"
                )));
            }
            *coeff.uy_mut(i, j) = c;
        }
    }
    Ok(coeff)
}

/// The nonlocal drift part of the mobility flux,
/// `avg(m) (avg(phi) grad(a) - (grad J)*phi)`, on interior faces.
fn drift_flux(
    phi: &ScalarField,
    kernel: &Kernel,
    model: &MaterialModel,
) -> Result<StaggeredVectorField> {
    let g = phi.grid();
    let m_cells = phi.map(|p| model.m(p));
    let m_faces = m_cells.face_average();
    let phi_faces = phi.face_average();
    let grad_a = kernel.grad_a();
    let conv_grad = kernel.convolve_grad(phi)?;
    let mut out = StaggeredVectorField::zeros(g);
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            *out.ux_mut(i, j) =
                m_faces.ux(i, j) * (phi_faces.ux(i, j) * grad_a.ux(i, j) - conv_grad.ux(i, j));
        }
    }
    for j in 1..g.ny() {
        for i in 0..g.nx() {
            *out.uy_mut(i, j) =
                m_faces.uy(i, j) * (phi_faces.uy(i, j) * grad_a.uy(i, j) - conv_grad.uy(i, j));
        }
    }
    Ok(out)
}

/// Advective face fluxes `u phi` with the chosen reconstruction; boundary
/// faces are zero because the velocity satisfies no-slip walls.
pub fn transport_flux(
    phi: &ScalarField,
    u: &StaggeredVectorField,
    transport: Transport,
) -> StaggeredVectorField {
    let g = phi.grid();
    let mut out = StaggeredVectorField::zeros(g);
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            let vel = u.ux(i, j);
            let face_phi = match transport {
                Transport::Upwind => {
                    if vel >= 0.0 { phi.at(i - 1, j) } else { phi.at(i, j) }
                }
                Transport::Central => 0.5 * (phi.at(i - 1, j) + phi.at(i, j)),
            };
            *out.ux_mut(i, j) = vel * face_phi;
        }
    }
    for j in 1..g.ny() {
        for i in 0..g.nx() {
            let vel = u.uy(i, j);
            let face_phi = match transport {
                Transport::Upwind => {
                    if vel >= 0.0 { phi.at(i, j - 1) } else { phi.at(i, j) }
                }
                Transport::Central => 0.5 * (phi.at(i, j - 1) + phi.at(i, j)),
            };
            *out.uy_mut(i, j) = vel * face_phi;
        }
    }
    out
}

/// The discrete composite for `m grad(mu)` on faces: coefficient-weighted
/// gradient plus nonlocal drift.  This is the flux whose divergence drives
/// the phase field when no transport acts.
pub fn mobility_flux(
    phi: &ScalarField,
    kernel: &Kernel,
    model: &MaterialModel,
) -> Result<StaggeredVectorField> {
    let coeff = face_coefficients(phi, kernel, model)?;
    let grad = phi.gradient();
    let mut out = drift_flux(phi, kernel, model)?;
    for (o, (c, gr)) in out
        .ux_data_mut()
        .iter_mut()
        .zip(coeff.ux_data().iter().zip(grad.ux_data()))
    {
        *o += c * gr;
    }
    for (o, (c, gr)) in out
        .uy_data_mut()
        .iter_mut()
        .zip(coeff.uy_data().iter().zip(grad.uy_data()))
    {
        *o += c * gr;
    }
    Ok(out)
}

/// Total face flux `m grad(mu) - u phi` entering the divergence.
pub fn regularized_flux(
    phi: &ScalarField,
    u: &StaggeredVectorField,
    kernel: &Kernel,
    model: &MaterialModel,
    transport: Transport,
) -> Result<StaggeredVectorField> {
    let mut flux = mobility_flux(phi, kernel, model)?;
    let adv = transport_flux(phi, u, transport);
    for (f, t) in flux.ux_data_mut().iter_mut().zip(adv.ux_data()) {
        *f -= t;
    }
    for (f, t) in flux.uy_data_mut().iter_mut().zip(adv.uy_data()) {
        *f -= t;
    }
    Ok(flux)
}

/// Helmholtz-type implicit operator `v -> v - dt * div(C grad v)` with face
/// coefficients `C`; applied matrix-free inside CG.
struct ImplicitOp<'a> {
    grid: Grid2D,
    coeff: &'a StaggeredVectorField,
    dt: f64,
}

impl ImplicitOp<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let scale = self.dt / (g.h() * g.h());
        for j in 0..ny {
            for i in 0..nx {
                let c = g.idx(i, j);
                let vc = v[c];
                let mut div = 0.0;
                if i + 1 < nx {
                    div += self.coeff.ux(i + 1, j) * (v[g.idx(i + 1, j)] - vc);
                }
                if i > 0 {
                    div -= self.coeff.ux(i, j) * (vc - v[g.idx(i - 1, j)]);
                }
                if j + 1 < ny {
                    div += self.coeff.uy(i, j + 1) * (v[g.idx(i, j + 1)] - vc);
                }
                if j > 0 {
                    div -= self.coeff.uy(i, j) * (vc - v[g.idx(i, j - 1)]);
                }
                out[c] = vc - scale * div;
            }
        }
    }
}

/// Relative CG tolerance for the implicit phase solve.
const CH_CG_RTOL: f64 = 1e-10;

/// Advances the phase field by one IMEX step of size `dt`.
///
/// The velocity `u` and optional `source` are treated explicitly.  The new
/// iterate must keep a `guard_band` margin to the potential's domain
/// endpoints, otherwise the step is rejected and the caller may retry with
/// a smaller `dt`.
#[allow(clippy::too_many_arguments)]
pub fn step(
    state: &ChState,
    u: &StaggeredVectorField,
    kernel: &Kernel,
    model: &MaterialModel,
    dt: f64,
    guard_band: f64,
    transport: Transport,
    source: Option<&ScalarField>,
) -> Result<ChState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ChbError::Config(format!("step size must be positive, got {dt}")));
    }
    let g = state.phi.grid();
    let coeff = face_coefficients(&state.phi, kernel, model)?;

    // Explicit right-hand side: dt * ( div(total flux at old state) + S ).
    let flux = {
        let mut f = drift_flux(&state.phi, kernel, model)?;
        let grad = state.phi.gradient();
        for (o, (c, gr)) in f
            .ux_data_mut()
            .iter_mut()
            .zip(coeff.ux_data().iter().zip(grad.ux_data()))
        {
            *o += c * gr;
        }
        for (o, (c, gr)) in f
            .uy_data_mut()
            .iter_mut()
            .zip(coeff.uy_data().iter().zip(grad.uy_data()))
        {
            *o += c * gr;
        }
        let adv = transport_flux(&state.phi, u, transport);
        for (fv, t) in f.ux_data_mut().iter_mut().zip(adv.ux_data()) {
            *fv -= t;
        }
        for (fv, t) in f.uy_data_mut().iter_mut().zip(adv.uy_data()) {
            *fv -= t;
        }
        f
    };
    let div = flux.divergence();
    let mut rhs: Vec<f64> = div.data().iter().map(|d| dt * d).collect();
    if let Some(s) = source {
        for (r, sv) in rhs.iter_mut().zip(s.data()) {
            *r += dt * sv;
        }
    }

    let op = ImplicitOp { grid: g, coeff: &coeff, dt };
    let mut delta = vec![0.0; g.n_cells()];
    conjugate_gradient(
        |v, out| op.apply(v, out),
        &rhs,
        &mut delta,
        None,
        CH_CG_RTOL,
        0.0,
        20 * g.n_cells(),
        "phase step",
    )?;

    let mut phi_new = state.phi.clone();
    for (p, d) in phi_new.data_mut().iter_mut().zip(&delta) {
        *p += d;
    }
    if !phi_new.is_finite() {
        return Err(ChbError::Solver("phase step produced a non-finite field".into()));
    }
    let domain = model.domain();
    let mut min_gap = f64::INFINITY;
    for &p in phi_new.data() {
        min_gap = min_gap.min(domain.gap(p));
    }
    if min_gap < guard_band {
        return Err(ChbError::StepRejected(format!(
            "new iterate within {min_gap:.3e} of the domain endpoints \
             (guard band {guard_band:.3e}, dt {dt:.3e})"
        )));
    }
    Ok(ChState { phi: phi_new, t: state.t + dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{ModelConstants, Mobility, Potential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid2D {
        Grid2D::new(n, n, 1.0, 1.0).unwrap()
    }

    fn validated_log_quadratic(g: Grid2D) -> (MaterialModel, Kernel) {
        let kernel = Kernel::gaussian(g, 1.0, 0.2).unwrap();
        let mut model = MaterialModel::new(
            Potential::logarithmic(),
            Mobility::degenerate_quadratic(),
        )
        .unwrap();
        let report = model.validate_assumptions(kernel.a_min(), kernel.a_max(), 20_000);
        model.apply_validation(&report).unwrap();
        (model, kernel)
    }

    /// Discretely divergence-free velocity from a corner-node stream
    /// function that vanishes on the boundary.
    fn stream_velocity(g: Grid2D, amp: f64) -> StaggeredVectorField {
        let (nx, ny, h) = (g.nx(), g.ny(), g.h());
        let psi = |i: usize, j: usize| -> f64 {
            let (x, y) = (i as f64 * h, j as f64 * h);
            amp * (std::f64::consts::PI * x).sin().powi(2)
                * (std::f64::consts::PI * y).sin().powi(2)
        };
        let mut u = StaggeredVectorField::zeros(g);
        for j in 0..ny {
            for i in 1..nx {
                *u.ux_mut(i, j) = (psi(i, j + 1) - psi(i, j)) / h;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                *u.uy_mut(i, j) = -(psi(i + 1, j) - psi(i, j)) / h;
            }
        }
        u
    }

    fn noisy_field(g: Grid2D, mean: f64, amp: f64, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..g.n_cells()).map(|_| mean + rng.gen_range(-amp..amp)).collect();
        ScalarField::from_vec(g, data).unwrap()
    }

    #[test]
    fn constant_states_are_steady_for_all_model_pairs() {
        let g = grid(32);
        let kernel = Kernel::gaussian(g, 0.8, 0.2).unwrap();
        let cases: Vec<(MaterialModel, f64)> = vec![
            (
                MaterialModel::new(
                    Potential::logarithmic(),
                    Mobility::degenerate_quadratic(),
                )
                .unwrap()
                .with_constants(ModelConstants { alpha0: 2.0, alpha1: 2.0, eps0: 0.9 }),
                0.1,
            ),
            (
                MaterialModel::new(
                    Potential::logarithmic(),
                    Mobility::constant(0.7).unwrap(),
                )
                .unwrap()
                .with_constants(ModelConstants { alpha0: 1.4, alpha1: 1.4, eps0: 0.9 }),
                -0.2,
            ),
            (
                MaterialModel::new(
                    Potential::flory(),
                    Mobility::reciprocal_logistic(),
                )
                .unwrap()
                .with_constants(ModelConstants { alpha0: 16.0, alpha1: 16.0, eps0: 0.2 }),
                0.5,
            ),
            (
                MaterialModel::new(
                    Potential::flory(),
                    Mobility::logistic_corrected(),
                )
                .unwrap()
                .with_constants(ModelConstants { alpha0: 1.0, alpha1: 1.0, eps0: 0.2 }),
                0.4,
            ),
        ];
        let u = StaggeredVectorField::zeros(g);
        for (model, value) in cases {
            let mut state = ChState::new(ScalarField::constant(g, value), 0.0);
            for _ in 0..20 {
                state = step(&state, &u, &kernel, &model, 1e-3, 1e-9, Transport::Upwind, None)
                    .unwrap();
            }
            for &p in state.phi.data() {
                assert!(
                    (p - value).abs() <= 1e-12,
                    "constant state drifted: {p} vs {value} ({:?})",
                    model.mobility().kind()
                );
            }
        }
    }

    #[test]
    fn mass_is_conserved_to_rounding_over_many_steps() {
        let g = grid(32);
        let (model, kernel) = validated_log_quadratic(g);
        let u = stream_velocity(g, 0.3);
        let mut state = ChState::new(noisy_field(g, 0.1, 0.2, 11), 0.0);
        let mass0 = state.phi.integrate();
        for _ in 0..100 {
            state =
                step(&state, &u, &kernel, &model, 5e-4, 1e-9, Transport::Upwind, None).unwrap();
        }
        let drift = (state.phi.integrate() - mass0).abs();
        assert!(drift <= 1e-12, "mass drift {drift:.3e}");
    }

    #[test]
    fn mobility_flux_matches_direct_potential_gradient_at_second_order() {
        // Against the unregularized discretization avg(m) grad(mu(cells));
        // both are consistent, so their gap must shrink ~4x per refinement.
        let errs: Vec<f64> = [32usize, 64]
            .iter()
            .map(|&n| {
                let g = grid(n);
                let (model, kernel) = validated_log_quadratic(g);
                let phi = ScalarField::from_fn(g, |x, y| {
                    0.4 * (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).cos()
                });
                let regularized = mobility_flux(&phi, &kernel, &model).unwrap();
                let mu = chemical_potential(&phi, &kernel, &model).unwrap();
                let grad_mu = mu.gradient();
                let m_faces = phi.map(|p| model.m(p)).face_average();
                let mut err: f64 = 0.0;
                for j in 0..g.ny() {
                    for i in 1..g.nx() {
                        err = err
                            .max((regularized.ux(i, j) - m_faces.ux(i, j) * grad_mu.ux(i, j)).abs());
                    }
                }
                for j in 1..g.ny() {
                    for i in 0..g.nx() {
                        err = err
                            .max((regularized.uy(i, j) - m_faces.uy(i, j) * grad_mu.uy(i, j)).abs());
                    }
                }
                err
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio} from {errs:?}");
    }

    #[test]
    fn flux_reduces_to_local_potential_gradient_without_kernel() {
        // Zero kernel: m grad(mu) collapses to m grad(F'(phi)).
        let errs: Vec<f64> = [32usize, 64]
            .iter()
            .map(|&n| {
                let g = grid(n);
                let kernel = Kernel::gaussian(g, 0.0, 0.2).unwrap();
                let model = MaterialModel::new(
                    Potential::logarithmic(),
                    Mobility::constant(1.0).unwrap(),
                )
                .unwrap()
                .with_constants(ModelConstants { alpha0: 2.0, alpha1: 2.0, eps0: 0.9 });
                let phi = ScalarField::from_fn(g, |x, y| {
                    0.3 * (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).cos()
                });
                let flux = mobility_flux(&phi, &kernel, &model).unwrap();
                let fp = phi.map(|p| model.potential().f_prime(p).unwrap());
                let grad_fp = fp.gradient();
                let mut err: f64 = 0.0;
                for j in 0..g.ny() {
                    for i in 1..g.nx() {
                        err = err.max((flux.ux(i, j) - grad_fp.ux(i, j)).abs());
                    }
                }
                err
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio} from {errs:?}");
    }

    #[test]
    fn central_transport_is_skew_symmetric_for_divergence_free_velocity() {
        let g = grid(24);
        let u = stream_velocity(g, 1.0);
        assert!(u.divergence().norms().linf < 1e-12);
        let phi = noisy_field(g, 0.0, 0.5, 3);
        let t = transport_flux(&phi, &u, Transport::Central);
        let pairing = t.divergence().inner(&phi);
        assert!(pairing.abs() <= 1e-12, "central transport pairing {pairing:.3e}");
    }

    #[test]
    fn l2_norm_growth_stays_within_derived_envelope() {
        // Without transport, one step can raise ||phi||^2 by at most
        // dt * (m_sup (|grad a|_inf + b))^2 |Omega| / alpha1.
        let g = grid(32);
        let (model, kernel) = validated_log_quadratic(g);
        let report = {
            let m = MaterialModel::new(
                Potential::logarithmic(),
                Mobility::degenerate_quadratic(),
            )
            .unwrap();
            m.validate_assumptions(kernel.a_min(), kernel.a_max(), 20_000)
        };
        let c_env = (report.m_sup * (kernel.grad_a_inf() + kernel.grad_l1_norm())).powi(2)
            * g.area()
            / report.alpha1;
        let u = StaggeredVectorField::zeros(g);
        let mut state = ChState::new(noisy_field(g, 0.05, 0.4, 7), 0.0);
        let dt = 1e-3;
        for _ in 0..50 {
            let before = state.phi.norms().l2.powi(2);
            state = step(&state, &u, &kernel, &model, dt, 1e-9, Transport::Upwind, None).unwrap();
            let after = state.phi.norms().l2.powi(2);
            assert!(
                after <= before + dt * c_env + 1e-13,
                "||phi||^2 grew {before} -> {after}, envelope {}",
                dt * c_env
            );
        }
    }

    #[test]
    fn spatially_constant_source_integrates_exactly() {
        let g = grid(16);
        let kernel = Kernel::gaussian(g, 0.0, 0.2).unwrap();
        let model = MaterialModel::new(
            Potential::logarithmic(),
            Mobility::constant(1.0).unwrap(),
        )
        .unwrap()
        .with_constants(ModelConstants { alpha0: 2.0, alpha1: 2.0, eps0: 0.9 });
        let u = StaggeredVectorField::zeros(g);
        let src = ScalarField::constant(g, 0.25);
        let dt = 1e-2;
        let mut state = ChState::new(ScalarField::constant(g, -0.3), 0.0);
        for _ in 0..10 {
            state = step(&state, &u, &kernel, &model, dt, 1e-9, Transport::Upwind, Some(&src))
                .unwrap();
        }
        let expected = -0.3 + 10.0 * dt * 0.25;
        for &p in state.phi.data() {
            assert!((p - expected).abs() < 1e-13, "{p} vs {expected}");
        }
    }

    #[test]
    fn iterate_entering_guard_band_is_rejected() {
        // A constant state plus a constant source advances exactly by
        // dt * S, so the new iterate lands a known distance from the
        // endpoint: inside the guard band here.
        let g = grid(16);
        let kernel = Kernel::gaussian(g, 0.0, 0.2).unwrap();
        let model = MaterialModel::new(
            Potential::logarithmic(),
            Mobility::constant(1.0).unwrap(),
        )
        .unwrap()
        .with_constants(ModelConstants { alpha0: 2.0, alpha1: 2.0, eps0: 0.9 });
        let u = StaggeredVectorField::zeros(g);
        let src = ScalarField::constant(g, 1.0);
        let state = ChState::new(ScalarField::constant(g, 1.0 - 5e-9), 0.0);
        let err = step(&state, &u, &kernel, &model, 4.9e-9, 1e-9, Transport::Upwind, Some(&src))
            .unwrap_err();
        assert!(matches!(err, ChbError::StepRejected(_)), "got {err}");
        // The same push with a smaller dt stays clear of the band.
        let ok = step(&state, &u, &kernel, &model, 1e-9, 1e-9, Transport::Upwind, Some(&src));
        assert!(ok.is_ok());
    }

    #[test]
    fn controller_shrinks_to_floor_then_aborts() {
        let mut ctl = StepControl::new(2e-3, 1e-3, 1e-2).unwrap();
        ctl.on_rejection().unwrap();
        assert_eq!(ctl.dt(), 1e-3);
        let err = ctl.on_rejection().unwrap_err();
        assert!(matches!(err, ChbError::Aborted(_)));
    }

    #[test]
    fn controller_grows_after_streak_and_respects_ceiling() {
        let mut ctl = StepControl::new(6e-3, 1e-3, 1e-2).unwrap();
        for _ in 0..9 {
            ctl.on_success();
            assert_eq!(ctl.dt(), 6e-3);
        }
        ctl.on_success();
        assert_eq!(ctl.dt(), 1e-2, "growth is capped at dt_max");
        for _ in 0..10 {
            ctl.on_success();
        }
        assert_eq!(ctl.dt(), 1e-2);
    }

    #[test]
    fn controller_rejects_inconsistent_bounds() {
        assert!(StepControl::new(1e-3, 1e-2, 1e-1).is_err());
        assert!(StepControl::with_policy(1e-3, 1e-4, 1e-2, 1.5, 1e-9).is_err());
        assert!(StepControl::with_policy(1e-3, 1e-4, 1e-2, 0.5, 0.0).is_err());
    }
}
