//! Discrete interaction kernel `J`, the local mass `a(x) = (J*1)(x)`, and
//! the domain-restricted convolutions `J*phi` and `(grad J)*phi`.
//!
//! The convolution is the midpoint quadrature of the integral over the
//! rectangle only (no periodic images):
//!
//! ```text
//!   (J*phi)(x_c) = h^2 * sum_{c'} J(x_c - x_{c'}) phi(x_{c'}).
//! ```
//!
//! Zero-padding both factors to `(2nx) x (2ny)` turns the circular FFT
//! convolution into this exact linear sum, so the fast path agrees with the
//! direct double summation to rounding; the direct sum ships as a
//! cross-checking oracle.  Gradient convolutions use analytically sampled
//! kernel derivatives rather than differenced `J` samples.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, StaggeredVectorField};

/// Immutable kernel tables: raw offset samples for the oracle, padded
/// spectra for the fast path, and the precomputed `a` field with its
/// gradient and extremes.
pub struct Kernel {
    grid: Grid2D,
    samples_j: Vec<f64>,
    samples_gx: Vec<f64>,
    samples_gy: Vec<f64>,
    spec_j: Vec<Complex<f64>>,
    spec_gx: Vec<Complex<f64>>,
    spec_gy: Vec<Complex<f64>>,
    fft_p_fwd: Arc<dyn Fft<f64>>,
    fft_p_inv: Arc<dyn Fft<f64>>,
    fft_q_fwd: Arc<dyn Fft<f64>>,
    fft_q_inv: Arc<dyn Fft<f64>>,
    a: ScalarField,
    grad_a: StaggeredVectorField,
    a_min: f64,
    a_max: f64,
    grad_a_inf: f64,
    l1_norm: f64,
    grad_l1_norm: f64,
}

impl Kernel {
    /// Gaussian kernel `J(z) = amplitude * exp(-|z|^2 / eps^2)`.
    pub fn gaussian(grid: Grid2D, amplitude: f64, eps: f64) -> Result<Kernel> {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(ChbError::Config(format!("gaussian kernel needs eps > 0, got {eps}")));
        }
        if !amplitude.is_finite() || amplitude < 0.0 {
            return Err(ChbError::Config(format!(
                "kernel amplitude must be nonnegative, got {amplitude}"
            )));
        }
        let inv_e2 = 1.0 / (eps * eps);
        let j = move |x: f64, y: f64| amplitude * (-(x * x + y * y) * inv_e2).exp();
        let gx = move |x: f64, y: f64| -2.0 * x * inv_e2 * j(x, y);
        let gy = move |x: f64, y: f64| -2.0 * y * inv_e2 * j(x, y);
        Self::build(grid, j, gx, gy)
    }

    /// Compactly supported bump `J(z) = amplitude * exp(-r0^2/(r0^2 - |z|^2))`
    /// for `|z| < r0`, zero outside; smooth with analytic gradient.
    pub fn bump(grid: Grid2D, amplitude: f64, radius: f64) -> Result<Kernel> {
        if !radius.is_finite() || radius <= 0.0 {
            return Err(ChbError::Config(format!("bump kernel needs radius > 0, got {radius}")));
        }
        if !amplitude.is_finite() || amplitude < 0.0 {
            return Err(ChbError::Config(format!(
                "kernel amplitude must be nonnegative, got {amplitude}"
            )));
        }
        let r2 = radius * radius;
        let j = move |x: f64, y: f64| {
            let s = x * x + y * y;
            if s < r2 { amplitude * (-r2 / (r2 - s)).exp() } else { 0.0 }
        };
        let gslope = move |x: f64, y: f64| {
            let s = x * x + y * y;
            if s < r2 {
                let w = r2 - s;
                -2.0 * r2 / (w * w) * j(x, y)
            } else {
                0.0
            }
        };
        let gx = move |x: f64, y: f64| x * gslope(x, y);
        let gy = move |x: f64, y: f64| y * gslope(x, y);
        Self::build(grid, j, gx, gy)
    }

    /// Samples the kernel and its analytic gradient on the offset lattice,
    /// builds the padded spectra, and precomputes `a = J*1` and `grad a`.
    fn build(
        grid: Grid2D,
        j: impl Fn(f64, f64) -> f64,
        gx: impl Fn(f64, f64) -> f64,
        gy: impl Fn(f64, f64) -> f64,
    ) -> Result<Kernel> {
        let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
        let (sw, sh) = (2 * nx - 1, 2 * ny - 1);
        let mut samples_j = vec![0.0; sw * sh];
        let mut samples_gx = vec![0.0; sw * sh];
        let mut samples_gy = vec![0.0; sw * sh];
        for dj in -(ny as isize - 1)..=(ny as isize - 1) {
            for di in -(nx as isize - 1)..=(nx as isize - 1) {
                let k = offset_index(nx, ny, di, dj);
                let (x, y) = (di as f64 * h, dj as f64 * h);
                samples_j[k] = j(x, y);
                samples_gx[k] = gx(x, y);
                samples_gy[k] = gy(x, y);
            }
        }
        let h2 = h * h;
        let l1_norm = h2 * samples_j.iter().map(|v| v.abs()).sum::<f64>();
        let grad_l1_norm = h2
            * samples_gx
                .iter()
                .zip(&samples_gy)
                .map(|(a, b)| (a * a + b * b).sqrt())
                .sum::<f64>();

        let mut planner = FftPlanner::new();
        let (p, q) = (2 * nx, 2 * ny);
        let fft_p_fwd = planner.plan_fft_forward(p);
        let fft_p_inv = planner.plan_fft_inverse(p);
        let fft_q_fwd = planner.plan_fft_forward(q);
        let fft_q_inv = planner.plan_fft_inverse(q);

        let mut kernel = Kernel {
            grid,
            spec_j: Vec::new(),
            spec_gx: Vec::new(),
            spec_gy: Vec::new(),
            samples_j,
            samples_gx,
            samples_gy,
            fft_p_fwd,
            fft_p_inv,
            fft_q_fwd,
            fft_q_inv,
            a: ScalarField::zeros(grid),
            grad_a: StaggeredVectorField::zeros(grid),
            a_min: 0.0,
            a_max: 0.0,
            grad_a_inf: 0.0,
            l1_norm,
            grad_l1_norm,
        };
        kernel.spec_j = kernel.spectrum_of(&kernel.samples_j);
        kernel.spec_gx = kernel.spectrum_of(&kernel.samples_gx);
        kernel.spec_gy = kernel.spectrum_of(&kernel.samples_gy);

        let ones = ScalarField::constant(grid, 1.0);
        let a = kernel.convolve(&ones)?;
        let a_min = a.min();
        let a_max = a.max();
        if a_min < -1e-12 {
            return Err(ChbError::Assumption(format!(
                "kernel mass a(x) dips to {a_min}; an admissible kernel needs a >= 0"
            )));
        }
        let (gax, gay) = kernel.convolve_grad_cells(&ones)?;
        let mut grad_a_inf: f64 = 0.0;
        for (vx, vy) in gax.data().iter().zip(gay.data()) {
            grad_a_inf = grad_a_inf.max((vx * vx + vy * vy).sqrt());
        }
        kernel.a = a;
        kernel.grad_a = faces_from_cell_pair(&gax, &gay);
        kernel.a_min = a_min;
        kernel.a_max = a_max;
        kernel.grad_a_inf = grad_a_inf;
        Ok(kernel)
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// `a(x) = (J*1)(x)`.
    pub fn a_field(&self) -> &ScalarField {
        &self.a
    }

    /// `grad a` interpolated to faces (zero on boundary faces).
    pub fn grad_a(&self) -> &StaggeredVectorField {
        &self.grad_a
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    /// Pointwise sup of `|grad a|` over cell centers.
    pub fn grad_a_inf(&self) -> f64 {
        self.grad_a_inf
    }

    /// Quadrature of `integral |J|`.
    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }

    /// Quadrature estimate of `b = sup_x integral |grad J|`.
    pub fn grad_l1_norm(&self) -> f64 {
        self.grad_l1_norm
    }

    /// Raw kernel sample at offset `(di, dj)` cells.
    pub fn sample_j(&self, di: isize, dj: isize) -> f64 {
        self.samples_j[offset_index(self.grid.nx(), self.grid.ny(), di, dj)]
    }

    /// Raw gradient samples at offset `(di, dj)` cells.
    pub fn sample_grad(&self, di: isize, dj: isize) -> (f64, f64) {
        let k = offset_index(self.grid.nx(), self.grid.ny(), di, dj);
        (self.samples_gx[k], self.samples_gy[k])
    }

    fn check_grid(&self, phi: &ScalarField) -> Result<()> {
        if phi.grid() != self.grid {
            return Err(ChbError::Config(
                "kernel and field live on different grids".into(),
            ));
        }
        Ok(())
    }

    /// `J*phi` by zero-padded FFT.
    pub fn convolve(&self, phi: &ScalarField) -> Result<ScalarField> {
        self.check_grid(phi)?;
        Ok(self.convolve_with_spec(&self.spec_j, phi))
    }

    /// Cell-centered components of `(grad J)*phi`.
    pub fn convolve_grad_cells(&self, phi: &ScalarField) -> Result<(ScalarField, ScalarField)> {
        self.check_grid(phi)?;
        Ok((
            self.convolve_with_spec(&self.spec_gx, phi),
            self.convolve_with_spec(&self.spec_gy, phi),
        ))
    }

    /// `(grad J)*phi` interpolated to faces (zero on boundary faces).
    pub fn convolve_grad(&self, phi: &ScalarField) -> Result<StaggeredVectorField> {
        let (gx, gy) = self.convolve_grad_cells(phi)?;
        Ok(faces_from_cell_pair(&gx, &gy))
    }

    /// Direct double-sum oracle for [`Kernel::convolve`]; quadratic cost,
    /// meant for cross-checks at small sizes.
    pub fn convolve_direct(&self, phi: &ScalarField) -> Result<ScalarField> {
        self.check_grid(phi)?;
        Ok(self.direct_with_samples(&self.samples_j, phi))
    }

    /// Direct oracle for the cell-centered gradient convolutions.
    pub fn convolve_grad_cells_direct(
        &self,
        phi: &ScalarField,
    ) -> Result<(ScalarField, ScalarField)> {
        self.check_grid(phi)?;
        Ok((
            self.direct_with_samples(&self.samples_gx, phi),
            self.direct_with_samples(&self.samples_gy, phi),
        ))
    }

    fn direct_with_samples(&self, samples: &[f64], phi: &ScalarField) -> ScalarField {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let h2 = g.h() * g.h();
        let mut out = ScalarField::zeros(g);
        for j in 0..ny {
            for i in 0..nx {
                let mut s = 0.0;
                for jp in 0..ny {
                    for ip in 0..nx {
                        let k = offset_index(
                            nx,
                            ny,
                            i as isize - ip as isize,
                            j as isize - jp as isize,
                        );
                        s += samples[k] * phi.at(ip, jp);
                    }
                }
                *out.at_mut(i, j) = s * h2;
            }
        }
        out
    }

    /// Packs offset samples into the zero-padded `(2nx) x (2ny)` array (row
    /// `r = di mod P`) and transforms; the excluded offsets `|di| = nx` stay
    /// zero, which is what makes the circular product alias-free.
    fn spectrum_of(&self, samples: &[f64]) -> Vec<Complex<f64>> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let (p, q) = (2 * nx, 2 * ny);
        let mut pad = vec![Complex::new(0.0, 0.0); p * q];
        for dj in -(ny as isize - 1)..=(ny as isize - 1) {
            for di in -(nx as isize - 1)..=(nx as isize - 1) {
                let r = ((dj + q as isize) % q as isize) as usize;
                let c = ((di + p as isize) % p as isize) as usize;
                pad[r * p + c] =
                    Complex::new(samples[offset_index(nx, ny, di, dj)], 0.0);
            }
        }
        self.fft2_forward(&mut pad);
        pad
    }

    /// Forward 2-D FFT: rows of length P, transpose, rows of length Q.  The
    /// output stays in the transposed layout; only elementwise products ever
    /// touch it, so the layout cancels against [`Self::fft2_inverse`].
    fn fft2_forward(&self, buf: &mut Vec<Complex<f64>>) {
        let (p, q) = (2 * self.grid.nx(), 2 * self.grid.ny());
        self.fft_p_fwd.process(buf);
        let mut t = transpose(buf, p, q);
        self.fft_q_fwd.process(&mut t);
        *buf = t;
    }

    /// Inverse of [`Self::fft2_forward`] (unnormalized; callers fold the
    /// 1/(PQ) factor into their output scaling).
    fn fft2_inverse(&self, buf: &mut Vec<Complex<f64>>) {
        let (p, q) = (2 * self.grid.nx(), 2 * self.grid.ny());
        self.fft_q_inv.process(buf);
        let mut t = transpose(buf, q, p);
        self.fft_p_inv.process(&mut t);
        *buf = t;
    }

    fn convolve_with_spec(&self, spec: &[Complex<f64>], phi: &ScalarField) -> ScalarField {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (p, q) = (2 * nx, 2 * ny);
        let mut pad = vec![Complex::new(0.0, 0.0); p * q];
        for j in 0..ny {
            for i in 0..nx {
                pad[j * p + i] = Complex::new(phi.at(i, j), 0.0);
            }
        }
        self.fft2_forward(&mut pad);
        for (v, s) in pad.iter_mut().zip(spec) {
            *v *= s;
        }
        self.fft2_inverse(&mut pad);
        let scale = g.h() * g.h() / (p * q) as f64;
        let mut out = ScalarField::zeros(g);
        for j in 0..ny {
            for i in 0..nx {
                *out.at_mut(i, j) = pad[j * p + i].re * scale;
            }
        }
        out
    }
}

/// Index into the `(2nx-1) x (2ny-1)` offset table.
#[inline]
fn offset_index(nx: usize, ny: usize, di: isize, dj: isize) -> usize {
    debug_assert!(di.unsigned_abs() < nx && dj.unsigned_abs() < ny);
    let c = (di + nx as isize - 1) as usize;
    let r = (dj + ny as isize - 1) as usize;
    r * (2 * nx - 1) + c
}

/// Out-of-place transpose of a `rows x cols` row-major array.
fn transpose(src: &[Complex<f64>], cols: usize, rows: usize) -> Vec<Complex<f64>> {
    let mut dst = vec![Complex::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

/// Interpolates a pair of cell-centered vector components onto faces by
/// two-cell averaging; boundary faces are zero (no-flux convention).
fn faces_from_cell_pair(gx: &ScalarField, gy: &ScalarField) -> StaggeredVectorField {
    let g = gx.grid();
    let mut out = StaggeredVectorField::zeros(g);
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            *out.ux_mut(i, j) = 0.5 * (gx.at(i - 1, j) + gx.at(i, j));
        }
    }
    for j in 1..g.ny() {
        for i in 0..g.nx() {
            *out.uy_mut(i, j) = 0.5 * (gy.at(i, j - 1) + gy.at(i, j));
        }
    }
    out
}
