//! Material laws: singular potentials, degenerate mobilities, the
//! regularizing coefficient `lambda = m * F''`, entropy functions, and
//! executable validators for the structural assumptions the analysis needs.
//!
//! Two potential families are supported, both purely convex with
//! logarithmic singularities at the ends of their phase domain:
//!
//! * logarithmic, on `(-1, 1)`:  `F(r) = theta * [(1+r)ln(1+r) + (1-r)ln(1-r)]`
//! * Flory-type, on `(0, 1)`:    `F(r) = theta * [r ln r + (1-r)ln(1-r)]`
//!
//! Mobilities either degenerate at the ends of the same domain
//! (`1 - r^2`, `r(1-r)`), stay constant, or -- as one deliberately
//! pathological variant -- blow up there (`1/(r(1-r))`).  The validators
//! measure, rather than assume, the constants the solvers rely on:
//! `alpha0 = inf lambda`, `alpha1 = inf m (F'' + a_min)`, and the width
//! `eps0` of the bands near the endpoints on which `m` and `F''` are
//! monotone.

use serde::{Deserialize, Serialize};

use crate::error::{ChbError, Result};
use crate::grid::ScalarField;

/// Open interval on which a potential/mobility pair is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDomain {
    lo: f64,
    hi: f64,
}

impl PhaseDomain {
    pub const SYMMETRIC: PhaseDomain = PhaseDomain { lo: -1.0, hi: 1.0 };
    pub const UNIT: PhaseDomain = PhaseDomain { lo: 0.0, hi: 1.0 };

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Strictly inside the open interval.
    pub fn is_interior(&self, r: f64) -> bool {
        r > self.lo && r < self.hi
    }

    /// Distance from `r` to the nearest endpoint (negative outside).
    pub fn gap(&self, r: f64) -> f64 {
        (r - self.lo).min(self.hi - r)
    }
}

/// Potential family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotentialKind {
    #[serde(rename = "log")]
    Logarithmic,
    #[serde(rename = "flory")]
    FloryType,
}

impl std::str::FromStr for PotentialKind {
    type Err = ChbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" | "logarithmic" => Ok(PotentialKind::Logarithmic),
            "flory" => Ok(PotentialKind::FloryType),
            other => Err(ChbError::Config(format!("unknown potential '{other}'"))),
        }
    }
}

/// A convex singular potential with temperature-like prefactor `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    kind: PotentialKind,
    theta: f64,
}

impl Potential {
    pub fn new(kind: PotentialKind, theta: f64) -> Result<Self> {
        if !theta.is_finite() || theta <= 0.0 {
            return Err(ChbError::Config(format!(
                "potential prefactor theta must be positive and finite, got {theta}"
            )));
        }
        Ok(Self { kind, theta })
    }

    /// Logarithmic potential on `(-1, 1)` with `theta = 1`.
    pub fn logarithmic() -> Self {
        Self { kind: PotentialKind::Logarithmic, theta: 1.0 }
    }

    /// Flory-type potential on `(0, 1)` with `theta = 1`.
    pub fn flory() -> Self {
        Self { kind: PotentialKind::FloryType, theta: 1.0 }
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn domain(&self) -> PhaseDomain {
        match self.kind {
            PotentialKind::Logarithmic => PhaseDomain::SYMMETRIC,
            PotentialKind::FloryType => PhaseDomain::UNIT,
        }
    }

    fn check_interior(&self, r: f64) -> Result<()> {
        if !r.is_finite() || !self.domain().is_interior(r) {
            return Err(ChbError::Domain(format!(
                "phase value {r} outside the open domain ({}, {})",
                self.domain().lo(),
                self.domain().hi()
            )));
        }
        Ok(())
    }

    /// Unchecked evaluation, valid for interior arguments.
    fn f_raw(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => {
                self.theta * ((1.0 + r) * (1.0 + r).ln() + (1.0 - r) * (1.0 - r).ln())
            }
            PotentialKind::FloryType => self.theta * (r * r.ln() + (1.0 - r) * (1.0 - r).ln()),
        }
    }

    fn f_prime_raw(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => self.theta * ((1.0 + r).ln() - (1.0 - r).ln()),
            PotentialKind::FloryType => self.theta * (r.ln() - (1.0 - r).ln()),
        }
    }

    fn f_double_prime_raw(&self, r: f64) -> f64 {
        match self.kind {
            // Written over the common factor 1 - r*r so that the product
            // with the quadratic mobility cancels to 2*theta exactly.
            PotentialKind::Logarithmic => 2.0 * self.theta / (1.0 - r * r),
            PotentialKind::FloryType => self.theta * (1.0 / r + 1.0 / (1.0 - r)),
        }
    }

    /// `F(r)`; errors outside the open domain.
    pub fn f(&self, r: f64) -> Result<f64> {
        self.check_interior(r)?;
        Ok(self.f_raw(r))
    }

    /// `F'(r)`; errors outside the open domain.
    pub fn f_prime(&self, r: f64) -> Result<f64> {
        self.check_interior(r)?;
        Ok(self.f_prime_raw(r))
    }

    /// `F''(r)`; errors outside the open domain.
    pub fn f_double_prime(&self, r: f64) -> Result<f64> {
        self.check_interior(r)?;
        Ok(self.f_double_prime_raw(r))
    }
}

/// Mobility family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MobilityKind {
    /// `m(r) = 1 - r^2` on `(-1, 1)`.
    #[serde(rename = "degenerate")]
    DegenerateQuadratic,
    /// `m(r) = 1 / (r (1-r))` on `(0, 1)`; blows up at the endpoints and is
    /// kept as a deliberately non-conforming variant for the validators.
    #[serde(rename = "reciprocal")]
    ReciprocalLogistic,
    /// `m(r) = r (1-r)` on `(0, 1)`.
    #[serde(rename = "logistic")]
    LogisticCorrected,
    /// `m(r) = m0`.
    #[serde(rename = "constant")]
    Constant,
}

impl std::str::FromStr for MobilityKind {
    type Err = ChbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degenerate" => Ok(MobilityKind::DegenerateQuadratic),
            "reciprocal" => Ok(MobilityKind::ReciprocalLogistic),
            "logistic" => Ok(MobilityKind::LogisticCorrected),
            "constant" => Ok(MobilityKind::Constant),
            other => Err(ChbError::Config(format!("unknown mobility '{other}'"))),
        }
    }
}

/// A mobility law; `m0` is only meaningful for the constant variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobility {
    kind: MobilityKind,
    m0: f64,
}

impl Mobility {
    pub fn new(kind: MobilityKind, m0: f64) -> Result<Self> {
        if kind == MobilityKind::Constant && (!m0.is_finite() || m0 <= 0.0) {
            return Err(ChbError::Config(format!(
                "constant mobility requires m0 > 0, got {m0}"
            )));
        }
        Ok(Self { kind, m0 })
    }

    pub fn degenerate_quadratic() -> Self {
        Self { kind: MobilityKind::DegenerateQuadratic, m0: 1.0 }
    }

    pub fn reciprocal_logistic() -> Self {
        Self { kind: MobilityKind::ReciprocalLogistic, m0: 1.0 }
    }

    pub fn logistic_corrected() -> Self {
        Self { kind: MobilityKind::LogisticCorrected, m0: 1.0 }
    }

    pub fn constant(m0: f64) -> Result<Self> {
        Self::new(MobilityKind::Constant, m0)
    }

    pub fn kind(&self) -> MobilityKind {
        self.kind
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    /// `m(r)`.  Total on the open domain; may overflow to infinity at the
    /// endpoints for the reciprocal variant.
    #[inline]
    pub fn m(&self, r: f64) -> f64 {
        match self.kind {
            // Same expression 1 - r*r as the logarithmic F'' denominator,
            // so the product m * F'' cancels to within an ulp or two.
            MobilityKind::DegenerateQuadratic => 1.0 - r * r,
            MobilityKind::ReciprocalLogistic => 1.0 / (r * (1.0 - r)),
            MobilityKind::LogisticCorrected => r * (1.0 - r),
            MobilityKind::Constant => self.m0,
        }
    }

    /// The domain this mobility is tied to, if any.
    pub fn natural_domain(&self) -> Option<PhaseDomain> {
        match self.kind {
            MobilityKind::DegenerateQuadratic => Some(PhaseDomain::SYMMETRIC),
            MobilityKind::ReciprocalLogistic | MobilityKind::LogisticCorrected => {
                Some(PhaseDomain::UNIT)
            }
            MobilityKind::Constant => None,
        }
    }
}

/// Constants measured by [`MaterialModel::validate_assumptions`] and
/// consumed by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    /// `inf lambda` over the closed domain.
    pub alpha0: f64,
    /// `inf m (F'' + a_min)` over the closed domain.
    pub alpha1: f64,
    /// Width of the endpoint bands on which `m` and `F''` are monotone.
    pub eps0: f64,
}

/// Outcome of a single structural-assumption check.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Full validator output; `passed()` is the conjunction of all four checks.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub a1: AssumptionCheck,
    pub a2: AssumptionCheck,
    pub a3: AssumptionCheck,
    pub a4: AssumptionCheck,
    pub alpha0: f64,
    pub alpha1: f64,
    pub eps0: f64,
    /// Sup of `m` over the scan.
    pub m_sup: f64,
    /// Sup of `lambda` over the scan (scan-resolution-dependent when
    /// `lambda` is unbounded; the boundedness verdict lives in `a2`).
    pub lambda_sup: f64,
    /// Sup of `lambda + m * a_max` over the scan.
    pub lambda_ma_sup: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.a1.passed && self.a2.passed && self.a3.passed && self.a4.passed
    }

    pub fn constants(&self) -> ModelConstants {
        ModelConstants { alpha0: self.alpha0, alpha1: self.alpha1, eps0: self.eps0 }
    }

    pub fn summary(&self) -> String {
        let line = |c: &AssumptionCheck| {
            format!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail)
        };
        format!(
            "{}\n{}\n{}\n{}\nalpha0 = {:.12}, alpha1 = {:.12}, eps0 = {:.6}",
            line(&self.a1),
            line(&self.a2),
            line(&self.a3),
            line(&self.a4),
            self.alpha0,
            self.alpha1,
            self.eps0
        )
    }
}

/// A potential/mobility pair on a common phase domain, optionally carrying
/// validated constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    potential: Potential,
    mobility: Mobility,
    constants: Option<ModelConstants>,
}

impl MaterialModel {
    /// Pairs a potential with a mobility; fails if the mobility is tied to
    /// a different phase domain than the potential.
    pub fn new(potential: Potential, mobility: Mobility) -> Result<Self> {
        if let Some(md) = mobility.natural_domain() {
            if md != potential.domain() {
                return Err(ChbError::Config(format!(
                    "mobility domain ({}, {}) does not match potential domain ({}, {})",
                    md.lo(),
                    md.hi(),
                    potential.domain().lo(),
                    potential.domain().hi()
                )));
            }
        }
        Ok(Self { potential, mobility, constants: None })
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn mobility(&self) -> &Mobility {
        &self.mobility
    }

    pub fn domain(&self) -> PhaseDomain {
        self.potential.domain()
    }

    pub fn constants(&self) -> Option<ModelConstants> {
        self.constants
    }

    /// Installs solver constants directly (used by manufactured-solution
    /// drivers and tests; production runs go through `apply_validation`).
    pub fn with_constants(mut self, c: ModelConstants) -> Self {
        self.constants = Some(c);
        self
    }

    /// Installs the constants measured by a passing validation report.
    pub fn apply_validation(&mut self, report: &ValidationReport) -> Result<()> {
        if !report.passed() {
            return Err(ChbError::Assumption(format!(
                "cannot adopt constants from a failing validation:\n{}",
                report.summary()
            )));
        }
        self.constants = Some(report.constants());
        Ok(())
    }

    /// `alpha1`, or an error if the model has not been validated.
    pub fn alpha1(&self) -> Result<f64> {
        self.constants
            .map(|c| c.alpha1)
            .ok_or_else(|| ChbError::Assumption("model used before validation: alpha1 unset".into()))
    }

    #[inline]
    pub fn m(&self, r: f64) -> f64 {
        self.mobility.m(r)
    }

    /// Continuous extension of `lambda(r) = m(r) * F''(r)` to the closed
    /// domain.  Arguments are clamped to the closed interval and nudged off
    /// the endpoints, so the degenerate/singular product is evaluated just
    /// inside, where it is finite for every conforming pair.
    pub fn lambda(&self, r: f64) -> f64 {
        let dom = self.domain();
        let nudge = 1e-13 * dom.span();
        let r = r.clamp(dom.lo() + nudge, dom.hi() - nudge);
        self.mobility.m(r) * self.potential.f_double_prime_raw(r)
    }

    fn entropy_check(&self, r: f64) -> Result<()> {
        if !r.is_finite() || !self.domain().is_interior(r) {
            return Err(ChbError::Domain(format!(
                "entropy argument {r} outside the open domain ({}, {})",
                self.domain().lo(),
                self.domain().hi()
            )));
        }
        Ok(())
    }

    /// Entropy function `M` with `m M'' = 1`, anchored so that
    /// `M(c) = M'(c) = 0` at the domain center `c`.
    pub fn entropy_m(&self, r: f64) -> Result<f64> {
        self.entropy_check(r)?;
        let c = self.domain().center();
        Ok(match self.mobility.kind {
            MobilityKind::DegenerateQuadratic => r * r.atanh() + 0.5 * (-r * r).ln_1p(),
            MobilityKind::ReciprocalLogistic => {
                r * r * r / 6.0 - r * r * r * r / 12.0 - r / 12.0 + 5.0 / 192.0
            }
            MobilityKind::LogisticCorrected => {
                r * r.ln() + (1.0 - r) * (1.0 - r).ln() + std::f64::consts::LN_2
            }
            MobilityKind::Constant => {
                let d = r - c;
                0.5 * d * d / self.mobility.m0
            }
        })
    }

    /// `M'`.
    pub fn entropy_m_prime(&self, r: f64) -> Result<f64> {
        self.entropy_check(r)?;
        let c = self.domain().center();
        Ok(match self.mobility.kind {
            MobilityKind::DegenerateQuadratic => r.atanh(),
            MobilityKind::ReciprocalLogistic => r * r / 2.0 - r * r * r / 3.0 - 1.0 / 12.0,
            MobilityKind::LogisticCorrected => r.ln() - (1.0 - r).ln(),
            MobilityKind::Constant => (r - c) / self.mobility.m0,
        })
    }

    /// `M'' = 1/m`, evaluated as the reciprocal of the mobility so the
    /// defining identity holds to rounding.
    pub fn entropy_m_dprime(&self, r: f64) -> Result<f64> {
        self.entropy_check(r)?;
        Ok(1.0 / self.mobility.m(r))
    }

    /// `M'''`.
    pub fn entropy_m_tprime(&self, r: f64) -> Result<f64> {
        self.entropy_check(r)?;
        Ok(match self.mobility.kind {
            MobilityKind::DegenerateQuadratic => {
                let w = 1.0 - r * r;
                2.0 * r / (w * w)
            }
            MobilityKind::ReciprocalLogistic => 1.0 - 2.0 * r,
            MobilityKind::LogisticCorrected => {
                let w = 1.0 - r;
                -1.0 / (r * r) + 1.0 / (w * w)
            }
            MobilityKind::Constant => 0.0,
        })
    }

    /// Measured bound on `|M|, |M'|, |M''|, |M'''|` over the middle half of
    /// the domain (between the center and the midpoints towards either
    /// endpoint), the range the level-set iteration works on.
    pub fn entropy_k_bound(&self) -> f64 {
        let dom = self.domain();
        let c = dom.center();
        let q = 0.25 * dom.span();
        let n = 10_000;
        let mut k: f64 = 0.0;
        for i in 0..=n {
            let r = (c - q) + (2.0 * q) * i as f64 / n as f64;
            for v in [
                self.entropy_m(r),
                self.entropy_m_prime(r),
                self.entropy_m_dprime(r),
                self.entropy_m_tprime(r),
            ]
            .into_iter()
            .flatten()
            {
                k = k.max(v.abs());
            }
        }
        k
    }

    /// Maps a field with values in the open unit interval to the symmetric
    /// domain via `psi = 2 phi - 1`.  For models already posed on `(-1, 1)`
    /// the field is returned unchanged.
    pub fn transform_to_symmetric(&self, phi: &ScalarField) -> Result<ScalarField> {
        if self.domain() == PhaseDomain::SYMMETRIC {
            return Ok(phi.clone());
        }
        for &v in phi.data() {
            if !(v > 0.0 && v < 1.0) {
                return Err(ChbError::Domain(format!(
                    "cannot symmetrize: value {v} outside the open unit interval"
                )));
            }
        }
        Ok(phi.map(|v| 2.0 * v - 1.0))
    }

    /// Measures the structural constants on a scan of the open domain plus
    /// geometric probes toward both endpoints, and renders a verdict for
    /// each of the four assumptions.
    ///
    /// `a_min`/`a_max` are the extremes of the kernel mass `a = J * 1` over
    /// the spatial domain (pass zeros to validate the pair in isolation).
    pub fn validate_assumptions(
        &self,
        a_min: f64,
        a_max: f64,
        scan_points: usize,
    ) -> ValidationReport {
        let dom = self.domain();
        let (lo, hi) = (dom.lo(), dom.hi());
        let span = dom.span();
        let n = scan_points.max(1_000);

        // Uniform interior scan plus probes geometrically close to the ends:
        // the infima of the degenerate products are only approached there.
        let mut pts: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * span / n as f64).collect();
        for k in 2..=14 {
            let d = span * 10f64.powi(-k);
            pts.push(lo + d);
            pts.push(hi - d);
        }

        let m_fn = |r: f64| self.mobility.m(r);
        let lam_fn = |r: f64| self.mobility.m(r) * self.potential.f_double_prime_raw(r);

        let mut m_min = f64::INFINITY;
        let mut m_sup: f64 = f64::NEG_INFINITY;
        let mut lambda_min = f64::INFINITY;
        let mut lambda_sup: f64 = f64::NEG_INFINITY;
        let mut alpha1 = f64::INFINITY;
        let mut lambda_ma_sup: f64 = f64::NEG_INFINITY;
        let mut nonfinite = false;
        for &r in &pts {
            let m = m_fn(r);
            let lam = lam_fn(r);
            let a4v = lam + m * a_min;
            let lma = lam + m * a_max;
            if !(m.is_finite() && lam.is_finite()) {
                nonfinite = true;
                continue;
            }
            m_min = m_min.min(m);
            m_sup = m_sup.max(m);
            lambda_min = lambda_min.min(lam);
            lambda_sup = lambda_sup.max(lam);
            alpha1 = alpha1.min(a4v);
            lambda_ma_sup = lambda_ma_sup.max(lma);
        }

        let m_bounded = !nonfinite && !diverges_polynomially(&m_fn, lo, hi, span);
        let lambda_bounded = !nonfinite && !diverges_polynomially(&lam_fn, lo, hi, span);

        // Monotonicity margins near the endpoints.  The mobility must be
        // non-increasing approaching `hi` and non-decreasing leaving `lo`;
        // F'' the other way around (it grows into both singularities).
        let scan = &pts[..n];
        let m_vals: Vec<f64> = scan.iter().map(|&r| m_fn(r)).collect();
        let f2_vals: Vec<f64> = scan.iter().map(|&r| self.potential.f_double_prime_raw(r)).collect();
        let floor = 4.0 * span / n as f64;
        let cap = 0.5 * span;
        let m_margin_hi = margin_toward_hi(scan, &m_vals, hi, false).min(cap);
        let m_margin_lo = margin_toward_lo(scan, &m_vals, lo, false).min(cap);
        let f2_margin_hi = margin_toward_hi(scan, &f2_vals, hi, true).min(cap);
        let f2_margin_lo = margin_toward_lo(scan, &f2_vals, lo, true).min(cap);
        let m_margin = m_margin_hi.min(m_margin_lo);
        let f2_margin = f2_margin_hi.min(f2_margin_lo);
        let eps0 = m_margin.min(f2_margin);

        // F' must blow up (to +inf at hi, -inf at lo); logarithmic growth is
        // too slow for a ratio test, so look for sustained increments across
        // probe decades instead.
        let fp = |r: f64| self.potential.f_prime_raw(r);
        let blow_hi = sustained_increments(
            fp(hi - span * 1e-3),
            fp(hi - span * 1e-6),
            fp(hi - span * 1e-9),
            1.0,
        );
        let blow_lo = sustained_increments(
            fp(lo + span * 1e-3),
            fp(lo + span * 1e-6),
            fp(lo + span * 1e-9),
            -1.0,
        );

        let interior_zero = m_min <= 0.0;
        let a1_passed = m_bounded && !interior_zero && m_margin >= floor;
        let a1 = AssumptionCheck {
            name: "A1".into(),
            passed: a1_passed,
            detail: format!(
                "m in [{:.3e}, {:.3e}] on scan; bounded: {}; interior zero: {}; \
                 monotone margin {:.4e} (floor {:.1e})",
                m_min, m_sup, m_bounded, interior_zero, m_margin, floor
            ),
        };

        let a2_passed = lambda_bounded && lambda_min > 0.0;
        let a2 = AssumptionCheck {
            name: "A2".into(),
            passed: a2_passed,
            detail: format!(
                "lambda = m F'' in [{:.6e}, {:.6e}] on scan; bounded: {}",
                lambda_min, lambda_sup, lambda_bounded
            ),
        };

        let a3_passed = blow_hi && blow_lo && f2_margin >= floor;
        let a3 = AssumptionCheck {
            name: "A3".into(),
            passed: a3_passed,
            detail: format!(
                "F' blows up at hi: {}, at lo: {}; F'' monotone margin {:.4e}",
                blow_hi, blow_lo, f2_margin
            ),
        };

        let a4_passed = alpha1.is_finite() && alpha1 > 0.0;
        let a4 = AssumptionCheck {
            name: "A4".into(),
            passed: a4_passed,
            detail: format!("alpha1 = inf m (F'' + a_min) = {:.12e} with a_min = {:.6e}", alpha1, a_min),
        };

        ValidationReport {
            a1,
            a2,
            a3,
            a4,
            alpha0: lambda_min,
            alpha1,
            eps0,
            m_sup,
            lambda_sup,
            lambda_ma_sup,
            a_min,
            a_max,
        }
    }
}

/// Ratio test across probe decades: polynomial blow-up multiplies the value
/// by roughly the decade ratio, bounded functions keep it near one.
fn diverges_polynomially(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, span: f64) -> bool {
    for (end, sign) in [(hi, -1.0), (lo, 1.0)] {
        let v6 = f(end + sign * span * 1e-6);
        let v9 = f(end + sign * span * 1e-9);
        if !v9.is_finite() || v9.abs() > 100.0 * v6.abs().max(1e-30) {
            return true;
        }
    }
    false
}

/// True if the increments between successive probe decades keep the sign
/// `sign` and do not collapse -- the signature of a (at least) logarithmic
/// blow-up toward `sign * infinity`.
fn sustained_increments(v3: f64, v6: f64, v9: f64, sign: f64) -> bool {
    let d1 = (v6 - v3) * sign;
    let d2 = (v9 - v6) * sign;
    d1 > 1e-12 && d2 > 0.25 * d1
}

/// Largest `hi - r` such that the samples are monotone on `[r, hi)`:
/// non-increasing toward `hi` when `rising` is false, non-decreasing when
/// true.  Returns the full span when no violation is found.
fn margin_toward_hi(pts: &[f64], vals: &[f64], hi: f64, rising: bool) -> f64 {
    let tol = 1e-12;
    for i in (1..pts.len()).rev() {
        let scale = vals[i].abs().max(vals[i - 1].abs()).max(1.0);
        let ok = if rising {
            vals[i - 1] <= vals[i] + tol * scale
        } else {
            vals[i - 1] >= vals[i] - tol * scale
        };
        if !ok {
            return hi - pts[i];
        }
    }
    hi - pts[0] + (pts[1] - pts[0])
}

/// Mirror image of [`margin_toward_hi`] for the lower endpoint.
fn margin_toward_lo(pts: &[f64], vals: &[f64], lo: f64, falling: bool) -> f64 {
    let tol = 1e-12;
    for i in 0..pts.len() - 1 {
        let scale = vals[i].abs().max(vals[i + 1].abs()).max(1.0);
        let ok = if falling {
            vals[i + 1] <= vals[i] + tol * scale
        } else {
            vals[i + 1] >= vals[i] - tol * scale
        };
        if !ok {
            return pts[i] - lo;
        }
    }
    pts[pts.len() - 1] - lo
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_quad() -> MaterialModel {
        MaterialModel::new(Potential::logarithmic(), Mobility::degenerate_quadratic()).unwrap()
    }

    #[test]
    fn f_prime_reference_values() {
        let p = Potential::logarithmic();
        assert_eq!(p.f_prime(0.0).unwrap(), 0.0);
        assert!((p.f_prime(0.5).unwrap() - 3.0_f64.ln()).abs() < 1e-15);
        let q = Potential::flory();
        assert_eq!(q.f_prime(0.5).unwrap(), 0.0);
        assert!((q.f_prime(0.25).unwrap() - (1.0_f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn f_double_prime_reference_values() {
        let p = Potential::logarithmic();
        assert_eq!(p.f_double_prime(0.0).unwrap(), 2.0);
        assert!((p.f_double_prime(0.5).unwrap() - 8.0 / 3.0).abs() < 1e-15);
        let q = Potential::flory();
        assert_eq!(q.f_double_prime(0.5).unwrap(), 4.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let eps = 1e-5;
        for (p, pts) in [
            (Potential::logarithmic(), vec![-0.9, -0.3, 0.0, 0.5, 0.9]),
            (Potential::flory(), vec![0.1, 0.3, 0.5, 0.7, 0.9]),
        ] {
            for &r in &pts {
                let fd1 = (p.f(r + eps).unwrap() - p.f(r - eps).unwrap()) / (2.0 * eps);
                let d1 = p.f_prime(r).unwrap();
                assert!(
                    (fd1 - d1).abs() < 1e-6 * d1.abs().max(1.0),
                    "F' mismatch at {r}: {fd1} vs {d1}"
                );
                let fd2 = (p.f_prime(r + eps).unwrap() - p.f_prime(r - eps).unwrap()) / (2.0 * eps);
                let d2 = p.f_double_prime(r).unwrap();
                assert!(
                    (fd2 - d2).abs() < 1e-5 * d2.abs().max(1.0),
                    "F'' mismatch at {r}: {fd2} vs {d2}"
                );
            }
        }
    }

    #[test]
    fn potential_rejects_exterior_arguments() {
        let p = Potential::logarithmic();
        assert!(p.f_prime(1.0).is_err());
        assert!(p.f_prime(-1.0).is_err());
        assert!(p.f(1.5).is_err());
        assert!(p.f(f64::NAN).is_err());
        let q = Potential::flory();
        assert!(q.f_prime(0.0).is_err());
        assert!(q.f_prime(-0.2).is_err());
    }

    #[test]
    fn lambda_cancels_exactly_for_log_quadratic_pair() {
        let m = log_quad();
        for r in [-1.0, -0.999999, -0.5, 0.0, 0.3, 0.99, 0.9999999999, 1.0] {
            assert!(
                (m.lambda(r) - 2.0).abs() < 1e-12,
                "lambda({r}) = {} should be 2",
                m.lambda(r)
            );
        }
        // Fine scan including values that round onto the endpoints.
        for i in 0..=20_000 {
            let r = -1.0 + 2.0 * i as f64 / 20_000.0;
            assert!((m.lambda(r) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_for_constant_mobility_tracks_f_double_prime() {
        let m = MaterialModel::new(Potential::logarithmic(), Mobility::constant(2.0).unwrap())
            .unwrap();
        assert!((m.lambda(0.0) - 4.0).abs() < 1e-12);
        assert!((m.lambda(0.9) - 4.0 / (1.0 - 0.81)).abs() < 1e-9);
    }

    #[test]
    fn lambda_for_flory_logistic_pair_is_theta() {
        let m = MaterialModel::new(Potential::flory(), Mobility::logistic_corrected()).unwrap();
        for r in [0.0, 1e-9, 0.25, 0.5, 0.75, 1.0 - 1e-9, 1.0] {
            assert!((m.lambda(r) - 1.0).abs() < 1e-12, "lambda({r}) = {}", m.lambda(r));
        }
    }

    #[test]
    fn mismatched_domains_are_rejected() {
        assert!(MaterialModel::new(Potential::logarithmic(), Mobility::logistic_corrected())
            .is_err());
        assert!(
            MaterialModel::new(Potential::flory(), Mobility::degenerate_quadratic()).is_err()
        );
        assert!(MaterialModel::new(Potential::flory(), Mobility::constant(1.0).unwrap()).is_ok());
    }

    #[test]
    fn entropy_anchored_at_domain_center() {
        let m = log_quad();
        assert_eq!(m.entropy_m(0.0).unwrap(), 0.0);
        assert_eq!(m.entropy_m_prime(0.0).unwrap(), 0.0);
        for mdl in [
            MaterialModel::new(Potential::flory(), Mobility::reciprocal_logistic()).unwrap(),
            MaterialModel::new(Potential::flory(), Mobility::logistic_corrected()).unwrap(),
            MaterialModel::new(Potential::flory(), Mobility::constant(3.0).unwrap()).unwrap(),
        ] {
            assert!(mdl.entropy_m(0.5).unwrap().abs() < 1e-15);
            assert!(mdl.entropy_m_prime(0.5).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn entropy_second_derivative_inverts_mobility() {
        let models = [
            log_quad(),
            MaterialModel::new(Potential::flory(), Mobility::reciprocal_logistic()).unwrap(),
            MaterialModel::new(Potential::flory(), Mobility::logistic_corrected()).unwrap(),
            MaterialModel::new(Potential::logarithmic(), Mobility::constant(0.7).unwrap()).unwrap(),
        ];
        for mdl in &models {
            let dom = mdl.domain();
            for i in 1..40 {
                let r = dom.lo() + dom.span() * i as f64 / 40.0;
                let prod = mdl.m(r) * mdl.entropy_m_dprime(r).unwrap();
                assert!((prod - 1.0).abs() < 1e-12, "m*M'' = {prod} at {r}");
            }
        }
    }

    #[test]
    fn entropy_derivatives_match_finite_differences() {
        let eps = 1e-5;
        let models = [
            log_quad(),
            MaterialModel::new(Potential::flory(), Mobility::reciprocal_logistic()).unwrap(),
            MaterialModel::new(Potential::flory(), Mobility::logistic_corrected()).unwrap(),
        ];
        for mdl in &models {
            let dom = mdl.domain();
            for k in 1..8 {
                let r = dom.lo() + dom.span() * k as f64 / 8.0;
                let fd1 = (mdl.entropy_m(r + eps).unwrap() - mdl.entropy_m(r - eps).unwrap())
                    / (2.0 * eps);
                assert!((fd1 - mdl.entropy_m_prime(r).unwrap()).abs() < 1e-6);
                let fd2 = (mdl.entropy_m_prime(r + eps).unwrap()
                    - mdl.entropy_m_prime(r - eps).unwrap())
                    / (2.0 * eps);
                assert!((fd2 - mdl.entropy_m_dprime(r).unwrap()).abs() < 1e-5);
                let fd3 = (mdl.entropy_m_dprime(r + eps).unwrap()
                    - mdl.entropy_m_dprime(r - eps).unwrap())
                    / (2.0 * eps);
                assert!(
                    (fd3 - mdl.entropy_m_tprime(r).unwrap()).abs()
                        < 1e-4 * mdl.entropy_m_tprime(r).unwrap().abs().max(1.0)
                );
            }
        }
    }

    #[test]
    fn entropy_value_matches_double_quadrature() {
        // Independent oracle: integrate M'' = 1/(1 - s^2) twice from the
        // anchor with Simpson's rule and compare at r = 0.5.
        let m = log_quad();
        let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let n = 4000;
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                let w = if i % 2 == 0 { 2.0 } else { 4.0 };
                s += w * f(a + i as f64 * h);
            }
            s * h / 3.0
        };
        let mprime = |r: f64| simpson(&|s: f64| 1.0 / (1.0 - s * s), 0.0, r);
        let mval = simpson(&|u: f64| mprime(u), 0.0, 0.5);
        let analytic = m.entropy_m(0.5).unwrap();
        assert!((mval - analytic).abs() < 1e-9, "quadrature {mval} vs analytic {analytic}");
        assert!((analytic - 0.130812).abs() < 1e-6);
        // M is even for the symmetric pair.
        assert!((m.entropy_m(-0.5).unwrap() - analytic).abs() < 1e-15);
    }

    #[test]
    fn entropy_k_bound_for_log_quadratic_is_sixteen_ninths() {
        // On [-1/2, 1/2] the largest of |M|..|M'''| is M'''(1/2) = 16/9.
        let k = log_quad().entropy_k_bound();
        assert!((k - 16.0 / 9.0).abs() < 1e-9, "K = {k}");
    }

    #[test]
    fn validation_accepts_log_quadratic_with_exact_constants() {
        let rep = log_quad().validate_assumptions(0.3, 1.2, 100_000);
        assert!(rep.passed(), "{}", rep.summary());
        assert!((rep.alpha0 - 2.0).abs() < 1e-9, "alpha0 = {}", rep.alpha0);
        assert!((rep.alpha1 - 2.0).abs() < 1e-9, "alpha1 = {}", rep.alpha1);
        assert!(rep.eps0 > 0.9, "eps0 = {}", rep.eps0);
        assert!((rep.m_sup - 1.0).abs() < 1e-9);
    }

    #[test]
    fn validation_rejects_reciprocal_mobility_via_a2() {
        let m = MaterialModel::new(Potential::flory(), Mobility::reciprocal_logistic()).unwrap();
        let rep = m.validate_assumptions(0.0, 1.0, 100_000);
        assert!(!rep.a2.passed, "A2 should fail: {}", rep.a2.detail);
        assert!(!rep.a1.passed, "A1 should fail for an unbounded mobility");
        assert!(!rep.passed());
        // The infimum of m(F'' + a_min) is still positive (attained at 1/2).
        assert!((rep.alpha1 - 16.0).abs() < 1e-6, "alpha1 = {}", rep.alpha1);
    }

    #[test]
    fn validation_rejects_constant_mobility_with_log_potential_via_a2() {
        let m = MaterialModel::new(Potential::logarithmic(), Mobility::constant(1.0).unwrap())
            .unwrap();
        let rep = m.validate_assumptions(0.1, 0.5, 100_000);
        assert!(rep.a1.passed, "{}", rep.a1.detail);
        assert!(!rep.a2.passed, "lambda = F'' is unbounded: {}", rep.a2.detail);
        assert!(rep.a3.passed, "{}", rep.a3.detail);
        assert!(rep.a4.passed, "{}", rep.a4.detail);
        assert!((rep.alpha1 - 2.1).abs() < 1e-9, "alpha1 = {}", rep.alpha1);
        assert!(!rep.passed());
    }

    #[test]
    fn validation_accepts_flory_logistic_pair() {
        let m = MaterialModel::new(Potential::flory(), Mobility::logistic_corrected()).unwrap();
        let rep = m.validate_assumptions(0.0, 1.0, 100_000);
        assert!(rep.passed(), "{}", rep.summary());
        assert!((rep.alpha0 - 1.0).abs() < 1e-9);
        assert!((rep.alpha1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn apply_validation_gates_on_overall_verdict() {
        let mut good = log_quad();
        let rep = good.validate_assumptions(0.0, 1.0, 10_000);
        good.apply_validation(&rep).unwrap();
        assert!(good.alpha1().is_ok());

        let mut bad =
            MaterialModel::new(Potential::flory(), Mobility::reciprocal_logistic()).unwrap();
        let rep = bad.validate_assumptions(0.0, 1.0, 10_000);
        assert!(bad.apply_validation(&rep).is_err());
        assert!(bad.alpha1().is_err());
    }

    #[test]
    fn transform_to_symmetric_rescales_unit_interval_fields() {
        use crate::grid::Grid2D;
        let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
        let m = MaterialModel::new(Potential::flory(), Mobility::logistic_corrected()).unwrap();
        let phi = ScalarField::constant(g, 0.3);
        let psi = m.transform_to_symmetric(&phi).unwrap();
        assert!((psi.at(0, 0) + 0.4).abs() < 1e-15);
        let bad = ScalarField::constant(g, 0.0);
        assert!(m.transform_to_symmetric(&bad).is_err());
        // Symmetric models pass through untouched.
        let sym = log_quad();
        let phi = ScalarField::constant(g, -0.2);
        assert_eq!(sym.transform_to_symmetric(&phi).unwrap(), phi);
    }
}
