//! Run configuration: TOML schema, cross-field validation, presets, and
//! builders for the objects a simulation needs.
//!
//! Every key has a default and unknown keys are rejected, so a config
//! file documents itself: parse errors name the offending key.  The same
//! struct serializes into `run_meta.json` next to a run's outputs, which
//! is what lets the certifier rebuild the material model and kernel long
//! after the run finished.

use crate::brinkman::ViscousForm;
use crate::chsolver::{StepControl, Transport};
use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, StaggeredVectorField};
use crate::kernel::Kernel;
use crate::material::{MaterialModel, Mobility, MobilityKind, Potential, PotentialKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub grid: GridSection,
    #[serde(default)]
    pub material: MaterialSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub flow: FlowSection,
    pub stepping: SteppingSection,
    #[serde(default)]
    pub degiorgi: Option<DegiorgiSection>,
    pub initial: InitialCondition,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "one")]
    pub lx: f64,
    #[serde(default = "one")]
    pub ly: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    #[serde(default = "default_potential")]
    pub potential: String,
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default = "default_mobility")]
    pub mobility: String,
    /// Level of the constant mobility; ignored by the other kinds.
    #[serde(default = "one")]
    pub m0: f64,
}

fn default_potential() -> String {
    "logarithmic".into()
}

fn default_mobility() -> String {
    "degenerate_quadratic".into()
}

impl Default for MaterialSection {
    fn default() -> Self {
        MaterialSection {
            potential: default_potential(),
            theta: 1.0,
            mobility: default_mobility(),
            m0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default = "default_kernel_kind")]
    pub kind: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Length scale of the Gaussian kernel.
    #[serde(default = "default_kernel_eps")]
    pub eps: f64,
    /// Support radius of the bump kernel.
    #[serde(default = "default_kernel_eps")]
    pub radius: f64,
}

fn default_kernel_kind() -> String {
    "gaussian".into()
}

fn default_kernel_eps() -> f64 {
    0.1
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection { kind: default_kernel_kind(), amplitude: 1.0, eps: 0.1, radius: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "one")]
    pub nu0: f64,
    #[serde(default = "one")]
    pub nu1: f64,
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default = "default_flow_tol")]
    pub tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_form")]
    pub form: String,
    /// Body force: "zero" or "vortex" (a rigid rotation about the domain
    /// center scaled by `body_amp`).
    #[serde(default = "default_body")]
    pub body: String,
    #[serde(default)]
    pub body_amp: f64,
}

fn default_flow_tol() -> f64 {
    1e-8
}

fn default_max_outer() -> usize {
    500
}

fn default_form() -> String {
    "divgrad".into()
}

fn default_body() -> String {
    "zero".into()
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            nu0: 1.0,
            nu1: 1.0,
            eta: 1.0,
            tol: default_flow_tol(),
            max_outer: default_max_outer(),
            form: default_form(),
            body: default_body(),
            body_amp: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteppingSection {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_dt_min")]
    pub dt_min: f64,
    /// Defaults to the initial `dt` (no growth).
    #[serde(default)]
    pub dt_max: Option<f64>,
    #[serde(default = "default_guard_band")]
    pub guard_band: f64,
    #[serde(default = "default_shrink")]
    pub shrink_factor: f64,
    #[serde(default = "default_transport")]
    pub transport: String,
}

fn default_dt_min() -> f64 {
    1e-9
}

fn default_guard_band() -> f64 {
    1e-9
}

fn default_shrink() -> f64 {
    0.5
}

fn default_transport() -> String {
    "upwind".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegiorgiSection {
    /// Final analysis time `T` (at most the run horizon).
    pub t_end: f64,
    pub tau_tilde: f64,
    #[serde(default = "default_delta")]
    pub delta: DeltaSpec,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

fn default_delta() -> DeltaSpec {
    DeltaSpec::Mode("scan".into())
}

fn default_n_max() -> usize {
    5
}

/// Either a fixed separation target or the string `"scan"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Fixed(f64),
    Mode(String),
}

impl DeltaSpec {
    pub fn is_scan(&self) -> bool {
        matches!(self, DeltaSpec::Mode(_))
    }

    fn validate(&self) -> Result<()> {
        match self {
            DeltaSpec::Fixed(d) if *d > 0.0 && *d < 0.25 => Ok(()),
            DeltaSpec::Fixed(d) => Err(ChbError::Config(format!(
                "separation target must lie in (0, 1/4), got {d}"
            ))),
            DeltaSpec::Mode(s) if s == "scan" => Ok(()),
            DeltaSpec::Mode(s) => {
                Err(ChbError::Config(format!("delta must be a number or \"scan\", got {s:?}")))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// Uniform phase `value`.
    Constant { value: f64 },
    /// Uniform `mean` plus iid noise of amplitude `amp`, drawn from the
    /// run seed.
    Spinodal { mean: f64, amp: f64 },
    /// Vertical band of width `width` centered in the domain, with smooth
    /// tanh shoulders.
    Stripe { width: f64 },
    /// Phase field loaded from a snapshot file.
    FromFile { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Snapshot cadence; omitted means automatic (the level-set analyzer's
    /// requirement when configured, otherwise `t_end / 100`).
    #[serde(default)]
    pub snapshot_every: Option<f64>,
    /// Default output directory; the CLI flag overrides it.
    #[serde(default)]
    pub dir: Option<String>,
}

impl SimConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| ChbError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Named scenario presets: "constant", "spinodal", "stripe".
    pub fn preset(name: &str) -> Option<SimConfig> {
        let text = match name {
            "constant" => PRESET_CONSTANT,
            "spinodal" => PRESET_SPINODAL,
            "stripe" => PRESET_STRIPE,
            _ => return None,
        };
        Some(SimConfig::from_toml(text).expect("presets validate"))
    }

    /// Cross-field checks beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        let g = self.build_grid()?;
        let model = self.build_model()?;
        let s = &self.stepping;
        if !(s.dt > 0.0) || !(s.t_end > 0.0) {
            return Err(ChbError::Config(format!(
                "dt and t_end must be positive, got {} and {}",
                s.dt, s.t_end
            )));
        }
        let dt_max = s.dt_max.unwrap_or(s.dt);
        if !(s.dt_min <= s.dt && s.dt <= dt_max) {
            return Err(ChbError::Config(format!(
                "need dt_min <= dt <= dt_max, got {} <= {} <= {dt_max}",
                s.dt_min, s.dt
            )));
        }
        // The constructors enforce the rest of their invariants.
        self.step_control()?;
        self.transport()?;
        self.viscous_form()?;
        match self.flow.body.as_str() {
            "zero" | "vortex" => {}
            other => {
                return Err(ChbError::Config(format!(
                    "body force must be \"zero\" or \"vortex\", got {other:?}"
                )))
            }
        }
        match self.kernel.kind.as_str() {
            "gaussian" | "bump" => {}
            other => {
                return Err(ChbError::Config(format!(
                    "kernel kind must be \"gaussian\" or \"bump\", got {other:?}"
                )))
            }
        }
        match &self.initial {
            InitialCondition::Constant { value } => check_phase_range(&model, *value, 0.0)?,
            InitialCondition::Spinodal { mean, amp } => {
                if *amp < 0.0 {
                    return Err(ChbError::Config(format!("noise amplitude {amp} is negative")));
                }
                check_phase_range(&model, *mean, *amp)?;
            }
            InitialCondition::Stripe { width } => {
                if !(*width > 0.0 && *width < g.lx()) {
                    return Err(ChbError::Config(format!(
                        "stripe width must lie in (0, {}), got {width}",
                        g.lx()
                    )));
                }
            }
            InitialCondition::FromFile { path } => {
                if path.is_empty() {
                    return Err(ChbError::Config("initial condition path is empty".into()));
                }
            }
        }
        if let Some(dg) = &self.degiorgi {
            dg.delta.validate()?;
            if dg.t_end > s.t_end + 1e-12 {
                return Err(ChbError::Config(format!(
                    "analysis end {} exceeds the run horizon {}",
                    dg.t_end, s.t_end
                )));
            }
            if dg.t_end <= 3.0 * dg.tau_tilde {
                return Err(ChbError::Config(format!(
                    "need analysis window t_end > 3 tau_tilde, got {} vs 3 x {}",
                    dg.t_end, dg.tau_tilde
                )));
            }
            if dg.n_max < 3 {
                return Err(ChbError::Config(format!(
                    "analysis ladder depth must be at least 3, got {}",
                    dg.n_max
                )));
            }
            let need = dg.tau_tilde / 2f64.powi(dg.n_max as i32 + 1);
            if let Some(every) = self.output.snapshot_every {
                if every > need + 1e-12 {
                    return Err(ChbError::Config(format!(
                        "snapshot cadence {every} is coarser than the {need} the level-set \
                         analysis needs"
                    )));
                }
            }
        }
        if let Some(every) = self.output.snapshot_every {
            if !(every > 0.0) {
                return Err(ChbError::Config(format!(
                    "snapshot cadence must be positive, got {every}"
                )));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
    }

    pub fn build_model(&self) -> Result<MaterialModel> {
        let potential = match self.material.potential.as_str() {
            "logarithmic" => Potential::new(PotentialKind::Logarithmic, self.material.theta)?,
            "flory" => Potential::new(PotentialKind::FloryType, self.material.theta)?,
            other => {
                return Err(ChbError::Config(format!(
                    "potential must be \"logarithmic\" or \"flory\", got {other:?}"
                )))
            }
        };
        let mobility = match self.material.mobility.as_str() {
            "degenerate_quadratic" => Mobility::degenerate_quadratic(),
            "reciprocal_logistic" => Mobility::reciprocal_logistic(),
            "logistic_corrected" => Mobility::logistic_corrected(),
            "constant" => Mobility::new(MobilityKind::Constant, self.material.m0)?,
            other => {
                return Err(ChbError::Config(format!("unknown mobility kind {other:?}")))
            }
        };
        MaterialModel::new(potential, mobility)
    }

    pub fn build_kernel(&self, g: Grid2D) -> Result<Kernel> {
        match self.kernel.kind.as_str() {
            "gaussian" => Kernel::gaussian(g, self.kernel.amplitude, self.kernel.eps),
            "bump" => Kernel::bump(g, self.kernel.amplitude, self.kernel.radius),
            other => Err(ChbError::Config(format!("unknown kernel kind {other:?}"))),
        }
    }

    pub fn step_control(&self) -> Result<StepControl> {
        let s = &self.stepping;
        StepControl::with_policy(
            s.dt,
            s.dt_min,
            s.dt_max.unwrap_or(s.dt),
            s.shrink_factor,
            s.guard_band,
        )
    }

    pub fn transport(&self) -> Result<Transport> {
        Transport::from_str(&self.stepping.transport)
    }

    pub fn viscous_form(&self) -> Result<ViscousForm> {
        ViscousForm::from_str(&self.flow.form)
    }

    /// Static body force for the momentum equation, `None` when zero.
    pub fn body_force(&self, g: Grid2D) -> Option<StaggeredVectorField> {
        match self.flow.body.as_str() {
            "vortex" if self.flow.body_amp != 0.0 => {
                // Discrete curl of a vertex streamfunction that vanishes on
                // the walls: wall-normal faces are exactly zero and the
                // cellwise divergence telescopes away.
                let h = g.h();
                let pi = std::f64::consts::PI;
                let amp = self.flow.body_amp * g.lx() / pi;
                let psi = |i: usize, j: usize| {
                    if i == 0 || i == g.nx() || j == 0 || j == g.ny() {
                        return 0.0;
                    }
                    amp * (pi * i as f64 * h / g.lx()).sin() * (pi * j as f64 * h / g.ly()).sin()
                };
                let mut f = StaggeredVectorField::zeros(g);
                for j in 0..g.ny() {
                    for i in 0..=g.nx() {
                        *f.ux_mut(i, j) = (psi(i, j + 1) - psi(i, j)) / h;
                    }
                }
                for j in 0..=g.ny() {
                    for i in 0..g.nx() {
                        *f.uy_mut(i, j) = -(psi(i + 1, j) - psi(i, j)) / h;
                    }
                }
                Some(f)
            }
            _ => None,
        }
    }

    /// Resolved snapshot cadence.
    pub fn snapshot_cadence(&self) -> f64 {
        if let Some(every) = self.output.snapshot_every {
            return every;
        }
        match &self.degiorgi {
            Some(dg) => dg.tau_tilde / 2f64.powi(dg.n_max as i32 + 1),
            None => self.stepping.t_end / 100.0,
        }
    }

    /// Mean phase the initial condition aims for (used by the occupancy
    /// diagnostic).
    pub fn initial_mean(&self, g: Grid2D, model: &MaterialModel) -> Result<f64> {
        Ok(self.initial_field(g, model, &mut ChaCha8Rng::seed_from_u64(self.seed))?.mean())
    }

    /// Realizes the initial phase field.  Noise draws come from `rng`;
    /// the result always sits strictly inside the phase domain.
    pub fn initial_field(
        &self,
        g: Grid2D,
        model: &MaterialModel,
        rng: &mut ChaCha8Rng,
    ) -> Result<ScalarField> {
        let dom = model.domain();
        let field = match &self.initial {
            InitialCondition::Constant { value } => ScalarField::constant(g, *value),
            InitialCondition::Spinodal { mean, amp } => {
                let data: Vec<f64> =
                    (0..g.n_cells()).map(|_| mean + rng.gen_range(-*amp..=*amp)).collect();
                ScalarField::from_vec(g, data)?
            }
            InitialCondition::Stripe { width } => {
                let half = dom.span() / 2.0;
                let shoulder = 4.0 * g.h();
                let (w, cx, c) = (*width, g.lx() / 2.0, dom.center());
                ScalarField::from_fn(g, move |x, _| {
                    c + 0.9 * half * ((w / 2.0 - (x - cx).abs()) / shoulder).tanh()
                })
            }
            InitialCondition::FromFile { path } => {
                let f = crate::io::read_scalar_field(std::path::Path::new(path))?;
                if f.grid() != g {
                    return Err(ChbError::Config(format!(
                        "initial field in {path} has grid {}x{}, expected {}x{}",
                        f.grid().nx(),
                        f.grid().ny(),
                        g.nx(),
                        g.ny()
                    )));
                }
                f
            }
        };
        let margin = 0.025 * dom.span();
        let (lo, hi) = (dom.lo() + margin, dom.hi() - margin);
        if field.min() < lo || field.max() > hi {
            return Err(ChbError::Config(format!(
                "initial phase range [{}, {}] leaves no margin inside ({}, {})",
                field.min(),
                field.max(),
                dom.lo(),
                dom.hi()
            )));
        }
        Ok(field)
    }
}

use rand::SeedableRng;

fn check_phase_range(model: &MaterialModel, center: f64, amp: f64) -> Result<()> {
    let dom = model.domain();
    let dev = (center - dom.center()).abs() + amp;
    if dev > 0.475 * dom.span() {
        return Err(ChbError::Config(format!(
            "initial phase {center} +/- {amp} leaves less than a 5% margin to the \
             pure phases"
        )));
    }
    Ok(())
}

const PRESET_CONSTANT: &str = r#"
seed = 42

[grid]
nx = 32
ny = 32

[stepping]
dt = 0.01
t_end = 2.0

[degiorgi]
t_end = 2.0
tau_tilde = 0.5
delta = 0.1
n_max = 3

[initial]
kind = "constant"
value = 0.2
"#;

const PRESET_SPINODAL: &str = r#"
seed = 42

[grid]
nx = 64
ny = 64

[kernel]
kind = "gaussian"
amplitude = 2.0
eps = 0.1

[stepping]
dt = 0.005
dt_min = 1e-7
t_end = 10.0

[degiorgi]
t_end = 10.0
tau_tilde = 1.0
delta = "scan"
n_max = 5

[initial]
kind = "spinodal"
mean = 0.1
amp = 0.05
"#;

const PRESET_STRIPE: &str = r#"
seed = 7

[grid]
nx = 64
ny = 64

[kernel]
kind = "gaussian"
amplitude = 1.0
eps = 0.1

[flow]
body = "vortex"
body_amp = 0.5

[stepping]
dt = 0.005
t_end = 2.0

[degiorgi]
t_end = 2.0
tau_tilde = 0.5
delta = 0.05
n_max = 3

[initial]
kind = "stripe"
width = 0.4
"#;
