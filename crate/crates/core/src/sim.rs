//! End-to-end simulation driver.
//!
//! Ties the pieces together in a fixed order: validate the model/kernel
//! pair, realize the initial condition, then alternate flow solves with
//! phase steps under the adaptive controller.  The accepted states feed
//! the diagnostics trajectory; when a separation analysis is configured
//! it runs on the finished trajectory.
//!
//! Runs are deterministic: the only randomness is the seeded initial
//! noise, and every solver below is iteration-order stable, so repeated
//! runs of one config produce identical diagnostics byte for byte.

use crate::brinkman::{self, BrinkmanProblem, FlowSolution, ViscousForm};
use crate::chsolver::{self, ChState};
use crate::config::{DeltaSpec, SimConfig};
use crate::degiorgi::{self, DeGiorgiParams, DeltaScanResult, DgConstants, SeparationCertificate};
use crate::diagnostics::{self, Trajectory};
use crate::error::{ChbError, Result};
use crate::grid::{ScalarField, StaggeredVectorField};
use crate::kernel::Kernel;
use crate::material::{MaterialModel, ValidationReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Resolution of the assumption scan over the phase interval.
pub const VALIDATION_SCAN_POINTS: usize = 20_000;
/// Accepted distance between a step landing and its snapshot time.
const SNAP_TOL: f64 = 1e-9;

/// Everything a finished run hands back to the caller.
#[derive(Debug)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub validation: ValidationReport,
    pub certificate: Option<SeparationCertificate>,
    pub scan: Option<DeltaScanResult>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Solves the flow problem for the current phase field.
fn solve_flow(
    phi: &ScalarField,
    kernel: &Kernel,
    model: &MaterialModel,
    config: &SimConfig,
    body: Option<&StaggeredVectorField>,
    form: ViscousForm,
    warm: Option<&FlowSolution>,
) -> Result<FlowSolution> {
    let mu = chsolver::chemical_potential(phi, kernel, model)?;
    let nu = brinkman::viscosity_of_phi(phi, config.flow.nu0, config.flow.nu1)?;
    let force = brinkman::assemble_forcing(&mu, phi, body);
    let problem = BrinkmanProblem::new(nu, config.flow.eta, force, form)?;
    brinkman::solve(&problem, config.flow.tol, config.flow.max_outer, warm)
}

/// Runs a configured simulation to completion.
pub fn run(config: &SimConfig) -> Result<RunOutput> {
    config.validate()?;
    let g = config.build_grid()?;
    let mut model = config.build_model()?;
    let kernel = config.build_kernel(g)?;
    let report = model.validate_assumptions(kernel.a_min(), kernel.a_max(), VALIDATION_SCAN_POINTS);
    if !report.passed() {
        return Err(ChbError::Assumption(format!(
            "model/kernel pair fails its structural assumptions:\n{}",
            report.summary()
        )));
    }
    model.apply_validation(&report)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let phi0 = config.initial_field(g, &model, &mut rng)?;
    let mean0 = phi0.mean();

    let mut ctl = config.step_control()?;
    let transport = config.transport()?;
    let form = config.viscous_form()?;
    let body = config.body_force(g);
    let t_end = config.stepping.t_end;
    let cadence = config.snapshot_cadence();
    let dom = model.domain();

    let mut traj = Trajectory::new();
    let mut state = ChState::new(phi0, 0.0);
    let mut flow = solve_flow(&state.phi, &kernel, &model, config, body.as_ref(), form, None)?;
    traj.push_record(diagnostics::record(&state, Some(&flow), &kernel, &model, mean0)?)?;
    traj.push_snapshot(state.t, state.phi.clone())?;

    let mut snap_k: usize = 1;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let t_tol = 1e-12 * t_end.max(1.0);
    while t_end - state.t > t_tol {
        let next_snap = snap_k as f64 * cadence;
        let mut dt_eff = ctl.dt().min(t_end - state.t);
        if next_snap <= t_end + t_tol {
            dt_eff = dt_eff.min(next_snap - state.t);
        }
        if dt_eff <= 0.0 {
            break;
        }
        match chsolver::step(
            &state,
            &flow.u,
            &kernel,
            &model,
            dt_eff,
            ctl.guard_band(),
            transport,
            None,
        ) {
            Ok(next) => {
                ctl.on_success();
                accepted += 1;
                state = next;
                let gap = (dom.hi() - state.phi.max()).min(state.phi.min() - dom.lo());
                if gap < ctl.guard_band() {
                    return Err(ChbError::Assumption(format!(
                        "accepted state at t = {:.6} sits {gap:.3e} from the phase \
                         boundary, inside the {:.3e} guard band",
                        state.t,
                        ctl.guard_band()
                    )));
                }
                flow =
                    solve_flow(&state.phi, &kernel, &model, config, body.as_ref(), form, Some(&flow))?;
                traj.push_record(diagnostics::record(&state, Some(&flow), &kernel, &model, mean0)?)?;
                if (state.t - next_snap).abs() <= SNAP_TOL {
                    traj.push_snapshot(state.t, state.phi.clone())?;
                    snap_k += 1;
                }
            }
            Err(ChbError::StepRejected(why)) => {
                rejected += 1;
                ctl.on_rejection().map_err(|_| {
                    ChbError::Aborted(format!(
                        "step rejected at the dt floor near t = {:.6}: {why}",
                        state.t
                    ))
                })?;
            }
            Err(e) => return Err(e),
        }
    }

    let mut certificate = None;
    let mut scan = None;
    if let Some(dg) = &config.degiorgi {
        let constants = DgConstants {
            k_bound: model.entropy_k_bound(),
            lambda_ma_sup: report.lambda_ma_sup,
            m_sup: report.m_sup,
            grad_a_inf: kernel.grad_a_inf(),
            grad_j_l1: kernel.grad_l1_norm(),
            tau_tilde: dg.tau_tilde,
            omega_area: g.lx() * g.ly(),
        };
        match &dg.delta {
            DeltaSpec::Fixed(delta) => {
                let params = DeGiorgiParams::new(dg.t_end, dg.tau_tilde, *delta, dg.n_max)?;
                certificate = Some(degiorgi::certify(&traj, &params, &model, &constants)?);
            }
            DeltaSpec::Mode(_) => {
                let res =
                    degiorgi::scan_delta(&traj, dg.t_end, dg.tau_tilde, dg.n_max, &model, &constants)?;
                certificate = Some(res.certificate.clone());
                scan = Some(res);
            }
        }
    }

    Ok(RunOutput {
        trajectory: traj,
        validation: report,
        certificate,
        scan,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}
