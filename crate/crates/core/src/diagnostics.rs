//! Per-step scalar diagnostics and the windowed estimates built on them.
//!
//! Each accepted step appends one [`DiagnosticsRecord`]; the columns are
//! fixed (and mirrored verbatim in the CSV writer) so downstream tooling
//! can rely on their order.  On top of the raw series this module provides
//!
//! * sliding unit-length dissipation windows (time integrals of the
//!   squared gradient, velocity, and flux norms plus the windowed sup of
//!   the squared `L^2` norm),
//! * a uniform-in-time bound estimate for the singular-potential integral
//!   `f1 = integral |F'(phi)|`, including a Riccati-type cap fitted from
//!   the series itself,
//! * the majority-phase occupancy check used as a cheap coarsening guard.

use crate::brinkman::FlowSolution;
use crate::chsolver;
use crate::error::{ChbError, Result};
use crate::grid::ScalarField;
use crate::kernel::Kernel;
use crate::material::MaterialModel;

/// One row of scalar diagnostics; field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// Total mass `integral phi`.
    pub mass: f64,
    /// `||phi||_{L^2}`.
    pub l2_phi: f64,
    /// Gradient norm `||grad phi||_{L^2}`.
    pub h1_phi: f64,
    /// `||phi||_{L^inf}`.
    pub linf_phi: f64,
    /// Distance to the pure phases, `1 - ||phi||_inf`.
    pub sep_gap: f64,
    /// `H^1` norm of the velocity (zero when no flow is attached).
    pub u_h1: f64,
    /// `L^2` norm of the regularized mobility flux `m grad(mu)`.
    pub mmu_l2: f64,
    /// `integral |F'(phi)|`.
    pub f1_l1: f64,
    /// `theta * integral |log((1 + phi)/2)|`.
    pub log_plus: f64,
    /// `theta * integral |log((1 - phi)/2)|`.
    pub log_minus: f64,
    /// Fraction of cells on the majority side of the occupancy threshold.
    pub omega1_frac: f64,
}

/// Names matching [`DiagnosticsRecord`]'s fields, in CSV column order.
pub const CSV_COLUMNS: [&str; 12] = [
    "t",
    "mass",
    "l2_phi",
    "h1_phi",
    "linf_phi",
    "sep_gap",
    "u_h1",
    "mmu_l2",
    "f1_l1",
    "log_plus",
    "log_minus",
    "omega1_frac",
];

/// Majority-phase occupancy: the fraction of cells with
/// `phi >= -(1 - mean0)/2` and whether it clears `(1 + mean0)/4`.
pub fn omega1_check(phi: &ScalarField, mean0: f64) -> (f64, bool) {
    let threshold = -(1.0 - mean0) / 2.0;
    let count = phi.data().iter().filter(|&&p| p >= threshold).count();
    let frac = count as f64 / phi.data().len() as f64;
    (frac, frac >= (1.0 + mean0) / 4.0)
}

/// Computes the full diagnostics row for a state.  `flow` contributes the
/// velocity norm when present; `mean0` is the initial mean phase used by
/// the occupancy check.
pub fn record(
    state: &chsolver::ChState,
    flow: Option<&FlowSolution>,
    kernel: &Kernel,
    model: &MaterialModel,
    mean0: f64,
) -> Result<DiagnosticsRecord> {
    let phi = &state.phi;
    let g = phi.grid();
    let norms = phi.norms();
    let grad = phi.gradient();
    let theta = model.potential().theta();

    let h2 = g.h() * g.h();
    let mut f1 = 0.0;
    let mut log_plus = 0.0;
    let mut log_minus = 0.0;
    for &p in phi.data() {
        f1 += model.potential().f_prime(p)?.abs();
        log_plus += ((1.0 + p) / 2.0).ln().abs();
        log_minus += ((1.0 - p) / 2.0).ln().abs();
    }
    f1 *= h2;
    log_plus *= theta * h2;
    log_minus *= theta * h2;

    let flux = chsolver::mobility_flux(phi, kernel, model)?;
    let (omega1_frac, _) = omega1_check(phi, mean0);

    Ok(DiagnosticsRecord {
        t: state.t,
        mass: phi.integrate(),
        l2_phi: norms.l2,
        h1_phi: grad.l2_norm(),
        linf_phi: norms.linf,
        sep_gap: 1.0 - norms.linf,
        u_h1: flow.map(|f| f.u.h1_norm()).unwrap_or(0.0),
        mmu_l2: flux.l2_norm(),
        f1_l1: f1,
        log_plus,
        log_minus,
        omega1_frac,
    })
}

/// Diagnostics rows plus phase snapshots, both strictly ordered in time.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    records: Vec<DiagnosticsRecord>,
    snapshots: Vec<(f64, ScalarField)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory::default()
    }

    pub fn push_record(&mut self, rec: DiagnosticsRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.t <= last.t {
                return Err(ChbError::Config(format!(
                    "diagnostics times must increase strictly ({} after {})",
                    rec.t, last.t
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn push_snapshot(&mut self, t: f64, phi: ScalarField) -> Result<()> {
        if let Some((last, _)) = self.snapshots.last() {
            if t <= *last {
                return Err(ChbError::Config(format!(
                    "snapshot times must increase strictly ({t} after {last})"
                )));
            }
        }
        self.snapshots.push((t, phi));
        Ok(())
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn snapshots(&self) -> &[(f64, ScalarField)] {
        &self.snapshots
    }

    /// Covered time range of the diagnostics rows.
    pub fn time_range(&self) -> Option<(f64, f64)> {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => Some((a.t, b.t)),
            _ => None,
        }
    }
}

/// Integral over `[a, b]` of the piecewise-linear interpolant through
/// `(times[i], vals[i])`.  Exactly additive across interior split points.
pub(crate) fn integrate_piecewise_linear(
    times: &[f64],
    vals: &[f64],
    a: f64,
    b: f64,
) -> Result<f64> {
    assert_eq!(times.len(), vals.len());
    if times.len() < 2 {
        return Err(ChbError::Window("need at least two samples to integrate".into()));
    }
    let (t_first, t_last) = (times[0], times[times.len() - 1]);
    if a < t_first - 1e-12 || b > t_last + 1e-12 || a > b {
        return Err(ChbError::Window(format!(
            "requested interval [{a}, {b}] outside sampled range [{t_first}, {t_last}]"
        )));
    }
    let value_at = |t: f64, k: usize| -> f64 {
        // Linear interpolation on segment k.
        let (t0, t1) = (times[k], times[k + 1]);
        let w = (t - t0) / (t1 - t0);
        vals[k] * (1.0 - w) + vals[k + 1] * w
    };
    let mut total = 0.0;
    for k in 0..times.len() - 1 {
        let lo = times[k].max(a);
        let hi = times[k + 1].min(b);
        if hi > lo {
            total += (hi - lo) * 0.5 * (value_at(lo, k) + value_at(hi, k));
        }
    }
    Ok(total)
}

/// Sup over `[a, b]` of the piecewise-linear interpolant (attained either
/// at a sample inside or at an interpolated endpoint).
fn sup_piecewise_linear(times: &[f64], vals: &[f64], a: f64, b: f64) -> Result<f64> {
    if times.len() < 2 {
        return Err(ChbError::Window("need at least two samples".into()));
    }
    let mut sup = f64::NEG_INFINITY;
    for k in 0..times.len() - 1 {
        let lo = times[k].max(a);
        let hi = times[k + 1].min(b);
        if hi >= lo {
            let (t0, t1) = (times[k], times[k + 1]);
            for t in [lo, hi] {
                let w = (t - t0) / (t1 - t0);
                sup = sup.max(vals[k] * (1.0 - w) + vals[k + 1] * w);
            }
        }
    }
    if sup == f64::NEG_INFINITY {
        return Err(ChbError::Window(format!("empty interval [{a}, {b}]")));
    }
    Ok(sup)
}

/// One unit-length dissipation window starting at `t0`.
#[derive(Debug, Clone, Copy)]
pub struct DissipativityWindow {
    pub t0: f64,
    /// `integral_{t0}^{t0+1} ||grad phi||^2`.
    pub grad_phi: f64,
    /// `integral_{t0}^{t0+1} ||u||_{H^1}^2`.
    pub u_h1: f64,
    /// `integral_{t0}^{t0+1} ||m grad mu||^2`.
    pub flux: f64,
    /// `sup_{[t0, t0+1]} ||phi||^2`.
    pub sup_l2: f64,
}

impl DissipativityWindow {
    /// Scalar summary used for trend monitoring.
    pub fn value(&self) -> f64 {
        self.grad_phi + self.u_h1 + self.flux + self.sup_l2
    }
}

/// Evaluates the dissipation window `[t0, t0+1]`; the trajectory must
/// cover it entirely.
pub fn dissipativity_window(traj: &Trajectory, t0: f64) -> Result<DissipativityWindow> {
    let recs = traj.records();
    if recs.len() < 2 {
        return Err(ChbError::Window("trajectory too short for a window".into()));
    }
    let times: Vec<f64> = recs.iter().map(|r| r.t).collect();
    let t1 = t0 + 1.0;
    let grad_sq: Vec<f64> = recs.iter().map(|r| r.h1_phi * r.h1_phi).collect();
    let u_sq: Vec<f64> = recs.iter().map(|r| r.u_h1 * r.u_h1).collect();
    let flux_sq: Vec<f64> = recs.iter().map(|r| r.mmu_l2 * r.mmu_l2).collect();
    let l2_sq: Vec<f64> = recs.iter().map(|r| r.l2_phi * r.l2_phi).collect();
    Ok(DissipativityWindow {
        t0,
        grad_phi: integrate_piecewise_linear(&times, &grad_sq, t0, t1)?,
        u_h1: integrate_piecewise_linear(&times, &u_sq, t0, t1)?,
        flux: integrate_piecewise_linear(&times, &flux_sq, t0, t1)?,
        sup_l2: sup_piecewise_linear(&times, &l2_sq, t0, t1)?,
    })
}

/// Sweeps unit windows from `t0_start` in steps of `stride` for as long as
/// the trajectory covers them.
pub fn dissipativity_sweep(
    traj: &Trajectory,
    t0_start: f64,
    stride: f64,
) -> Result<Vec<DissipativityWindow>> {
    if !(stride > 0.0) {
        return Err(ChbError::Config(format!("sweep stride must be positive, got {stride}")));
    }
    let (_, t_last) = traj
        .time_range()
        .ok_or_else(|| ChbError::Window("empty trajectory".into()))?;
    let mut out = Vec::new();
    let mut t0 = t0_start;
    while t0 + 1.0 <= t_last + 1e-12 {
        out.push(dissipativity_window(traj, t0)?);
        t0 += stride;
    }
    if out.is_empty() {
        return Err(ChbError::Window(format!(
            "no unit window starting at {t0_start} fits before t = {t_last}"
        )));
    }
    Ok(out)
}

/// Trend gate for a window sweep: every window after the first must stay
/// within 5% of the running maximum of its predecessors.
pub fn sweep_trend_ok(windows: &[DissipativityWindow]) -> bool {
    if windows.is_empty() {
        return false;
    }
    let mut running_max = windows[0].value();
    for w in &windows[1..] {
        let v = w.value();
        if v > 1.05 * running_max {
            return false;
        }
        running_max = running_max.max(v);
    }
    true
}

/// Uniform-in-time estimate for the `f1` series past a burn-in time.
#[derive(Debug, Clone, Copy)]
pub struct F1BoundReport {
    /// Largest observed `f1` at `t >= tau`.
    pub sup_val: f64,
    /// Asymptotic cap `c / beta` from the fitted comparison equation
    /// `y' = c^2 - beta^2 y^2`; falls back to the RMS level when the fit
    /// is degenerate or indefinite.
    pub riccati_cap: f64,
    /// Whether the cap came from a genuine two-parameter fit.
    pub fitted: bool,
    /// Finite sup and no late-time growth beyond 5%.
    pub pass: bool,
}

/// Fits `y' = c^2 - beta^2 y^2` by least squares on the series samples and
/// checks that the tail of the series does not grow.
pub fn f1_uniform_bound(traj: &Trajectory, tau: f64) -> Result<F1BoundReport> {
    let recs: Vec<&DiagnosticsRecord> =
        traj.records().iter().filter(|r| r.t >= tau).collect();
    if recs.len() < 4 {
        return Err(ChbError::Window(format!(
            "need at least 4 samples past tau = {tau}, found {}",
            recs.len()
        )));
    }
    let times: Vec<f64> = recs.iter().map(|r| r.t).collect();
    let y: Vec<f64> = recs.iter().map(|r| r.f1_l1).collect();
    let sup_val = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Centered derivative on the (possibly nonuniform) grid; regression of
    // y' on the predictors [1, -y^2].
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 1..y.len() - 1 {
        let dy = (y[k + 1] - y[k - 1]) / (times[k + 1] - times[k - 1]);
        let p = -y[k] * y[k];
        s11 += 1.0;
        s12 += p;
        s22 += p * p;
        b1 += dy;
        b2 += p * dy;
    }
    let det = s11 * s22 - s12 * s12;
    let scale = s11 * s22.abs().max(1e-300);
    let (riccati_cap, fitted) = if det.abs() > 1e-12 * scale {
        let c_sq = (s22 * b1 - s12 * b2) / det;
        let beta_sq = (s11 * b2 - s12 * b1) / det;
        if c_sq > 0.0 && beta_sq > 0.0 {
            ((c_sq / beta_sq).sqrt(), true)
        } else {
            (rms(&y), false)
        }
    } else {
        // Near-constant series: the predictors are collinear and the level
        // itself is the natural cap.
        (rms(&y), false)
    };

    let span = times[times.len() - 1] - times[0];
    let q1_end = times[0] + 0.25 * span;
    let q4_start = times[0] + 0.75 * span;
    let first_q = zip_max(&times, &y, |t| t <= q1_end);
    let last_q = zip_max(&times, &y, |t| t >= q4_start);
    let pass = sup_val.is_finite() && last_q <= 1.05 * first_q;

    Ok(F1BoundReport { sup_val, riccati_cap, fitted, pass })
}

fn rms(y: &[f64]) -> f64 {
    (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt()
}

fn zip_max(times: &[f64], vals: &[f64], keep: impl Fn(f64) -> bool) -> f64 {
    times
        .iter()
        .zip(vals)
        .filter(|(t, _)| keep(**t))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}
