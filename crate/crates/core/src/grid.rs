//! Uniform cell-centered grid with a marker-and-cell (MAC) staggering.
//!
//! Scalars (phase field, chemical potential, pressure) live at cell centers
//! `((i+1/2)h, (j+1/2)h)`.  Vector quantities (velocities, fluxes) live at
//! cell faces: the x-component on vertical faces `(i h, (j+1/2)h)` and the
//! y-component on horizontal faces `((i+1/2)h, j h)`.  The discrete gradient
//! (centers to faces) and divergence (faces to centers) form an exact
//! adjoint pair under the natural `h^2`-weighted inner products, which is
//! what makes discrete integration by parts, and with it mass conservation
//! and the energy identities, hold to machine precision.

use crate::error::{ChbError, Result};

/// Geometry of a uniform rectangular grid with square cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    h: f64,
}

impl Grid2D {
    /// Builds a grid with `nx * ny` square cells covering `[0,lx] x [0,ly]`.
    ///
    /// Fails if either direction has fewer than 4 cells, if the extents are
    /// not positive and finite, or if the cells would not be square.
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(ChbError::Config(format!(
                "grid must have at least 4 cells per direction, got {nx} x {ny}"
            )));
        }
        if !(lx.is_finite() && ly.is_finite()) || lx <= 0.0 || ly <= 0.0 {
            return Err(ChbError::Config(format!(
                "grid extents must be positive and finite, got {lx} x {ly}"
            )));
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        if (hx - hy).abs() > 1e-12 * hx.max(hy) {
            return Err(ChbError::Config(format!(
                "cells must be square: lx/nx = {hx} but ly/ny = {hy}"
            )));
        }
        Ok(Self { nx, ny, lx, ly, h: hx })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    /// Cell size (identical in both directions).
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of cells.
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Domain area `lx * ly`.
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Flat index of cell `(i, j)`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// x-coordinate of the center of cell column `i`.
    #[inline]
    pub fn cell_x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    /// y-coordinate of the center of cell row `j`.
    #[inline]
    pub fn cell_y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }
}

/// Norms of a cell-centered field under the `h^2`-weighted measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    /// `l2` norm of the discrete gradient (interior faces).
    pub h1_semi: f64,
    /// Full `H^1` norm, `sqrt(l2^2 + h1_semi^2)`.
    pub h1: f64,
}

/// A scalar field sampled at cell centers, stored row-major (`j` outer).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, data: vec![0.0; grid.n_cells()] }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self { grid, data: vec![c; grid.n_cells()] }
    }

    /// Samples `f(x, y)` at every cell center.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny() {
            let y = grid.cell_y(j);
            for i in 0..grid.nx() {
                data.push(f(grid.cell_x(i), y));
            }
        }
        Self { grid, data }
    }

    /// Wraps an existing row-major buffer; its length must match the grid.
    pub fn from_vec(grid: Grid2D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.n_cells() {
            return Err(ChbError::Config(format!(
                "field buffer has {} entries for a {} cell grid",
                data.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[self.grid.idx(i, j)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Midpoint-rule integral `h^2 * sum(f)`, summed sequentially so the
    /// result is reproducible bit-for-bit.
    pub fn integrate(&self) -> f64 {
        let mut s = 0.0;
        for v in &self.data {
            s += v;
        }
        s * self.grid.h * self.grid.h
    }

    /// Mean value `integrate / area`.
    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.area()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies `f` pointwise, returning a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// `h^2`-weighted inner product with another field on the same grid.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid, "inner product requires matching grids");
        let mut s = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            s += a * b;
        }
        s * self.grid.h * self.grid.h
    }

    /// All `h^2`-weighted norms plus the discrete `H^1` seminorm.
    pub fn norms(&self) -> FieldNorms {
        let h2 = self.grid.h * self.grid.h;
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        let mut linf: f64 = 0.0;
        for &v in &self.data {
            l1 += v.abs();
            l2 += v * v;
            linf = linf.max(v.abs());
        }
        let g = self.gradient();
        let h1_semi = g.l2_norm();
        let l2 = (l2 * h2).sqrt();
        FieldNorms {
            l1: l1 * h2,
            l2,
            linf,
            h1_semi,
            h1: (l2 * l2 + h1_semi * h1_semi).sqrt(),
        }
    }

    /// Discrete gradient onto faces.  Interior faces carry the centered
    /// difference of the two adjacent cells; boundary faces are zero, which
    /// encodes the homogeneous Neumann condition.
    pub fn gradient(&self) -> StaggeredVectorField {
        let g = self.grid;
        let mut out = StaggeredVectorField::zeros(g);
        let inv_h = 1.0 / g.h;
        for j in 0..g.ny() {
            for i in 1..g.nx() {
                let v = (self.at(i, j) - self.at(i - 1, j)) * inv_h;
                *out.ux_mut(i, j) = v;
            }
        }
        for j in 1..g.ny() {
            for i in 0..g.nx() {
                let v = (self.at(i, j) - self.at(i, j - 1)) * inv_h;
                *out.uy_mut(i, j) = v;
            }
        }
        out
    }

    /// Averages the field onto faces.  Interior faces get the arithmetic
    /// mean of the two adjacent cells; boundary faces get the one-sided
    /// cell value (only ever multiplied by fluxes that vanish there).
    pub fn face_average(&self) -> StaggeredVectorField {
        let g = self.grid;
        let mut out = StaggeredVectorField::zeros(g);
        for j in 0..g.ny() {
            *out.ux_mut(0, j) = self.at(0, j);
            for i in 1..g.nx() {
                *out.ux_mut(i, j) = 0.5 * (self.at(i - 1, j) + self.at(i, j));
            }
            *out.ux_mut(g.nx(), j) = self.at(g.nx() - 1, j);
        }
        for i in 0..g.nx() {
            *out.uy_mut(i, 0) = self.at(i, 0);
            *out.uy_mut(i, g.ny()) = self.at(i, g.ny() - 1);
        }
        for j in 1..g.ny() {
            for i in 0..g.nx() {
                *out.uy_mut(i, j) = 0.5 * (self.at(i, j - 1) + self.at(i, j));
            }
        }
        out
    }
}

/// A vector field on the MAC staggering: `ux` on the `(nx+1) * ny` vertical
/// faces, `uy` on the `nx * (ny+1)` horizontal faces.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredVectorField {
    grid: Grid2D,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl StaggeredVectorField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            ux: vec![0.0; (grid.nx() + 1) * grid.ny()],
            uy: vec![0.0; grid.nx() * (grid.ny() + 1)],
        }
    }

    /// Samples component functions at the face centers.
    pub fn from_fn(
        grid: Grid2D,
        fx: impl Fn(f64, f64) -> f64,
        fy: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(grid);
        let h = grid.h();
        for j in 0..grid.ny() {
            let y = grid.cell_y(j);
            for i in 0..=grid.nx() {
                *out.ux_mut(i, j) = fx(i as f64 * h, y);
            }
        }
        for j in 0..=grid.ny() {
            let y = j as f64 * h;
            for i in 0..grid.nx() {
                *out.uy_mut(i, j) = fy(grid.cell_x(i), y);
            }
        }
        out
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    fn xidx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.grid.nx() && j < self.grid.ny());
        j * (self.grid.nx() + 1) + i
    }

    #[inline]
    fn yidx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.grid.nx() && j <= self.grid.ny());
        j * self.grid.nx() + i
    }

    #[inline]
    pub fn ux(&self, i: usize, j: usize) -> f64 {
        self.ux[self.xidx(i, j)]
    }

    #[inline]
    pub fn ux_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.xidx(i, j);
        &mut self.ux[k]
    }

    #[inline]
    pub fn uy(&self, i: usize, j: usize) -> f64 {
        self.uy[self.yidx(i, j)]
    }

    #[inline]
    pub fn uy_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.yidx(i, j);
        &mut self.uy[k]
    }

    pub fn ux_data(&self) -> &[f64] {
        &self.ux
    }

    pub fn uy_data(&self) -> &[f64] {
        &self.uy
    }

    pub fn ux_data_mut(&mut self) -> &mut [f64] {
        &mut self.ux
    }

    pub fn uy_data_mut(&mut self) -> &mut [f64] {
        &mut self.uy
    }

    /// True if every face on the domain boundary carries a zero value.
    pub fn boundary_faces_zero(&self) -> bool {
        let g = self.grid;
        (0..g.ny()).all(|j| self.ux(0, j) == 0.0 && self.ux(g.nx(), j) == 0.0)
            && (0..g.nx()).all(|i| self.uy(i, 0) == 0.0 && self.uy(i, g.ny()) == 0.0)
    }

    /// Forces all boundary faces to zero (no-penetration).
    pub fn zero_boundary_faces(&mut self) {
        let g = self.grid;
        for j in 0..g.ny() {
            *self.ux_mut(0, j) = 0.0;
            *self.ux_mut(g.nx(), j) = 0.0;
        }
        for i in 0..g.nx() {
            *self.uy_mut(i, 0) = 0.0;
            *self.uy_mut(i, g.ny()) = 0.0;
        }
    }

    /// Discrete divergence back to cell centers; exact adjoint (up to sign)
    /// of [`ScalarField::gradient`] whenever the boundary faces vanish.
    pub fn divergence(&self) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        let inv_h = 1.0 / g.h();
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let d = (self.ux(i + 1, j) - self.ux(i, j)) + (self.uy(i, j + 1) - self.uy(i, j));
                *out.at_mut(i, j) = d * inv_h;
            }
        }
        out
    }

    /// `h^2`-weighted inner product over all faces of both components.
    pub fn inner(&self, other: &StaggeredVectorField) -> f64 {
        assert_eq!(self.grid, other.grid, "inner product requires matching grids");
        let mut s = 0.0;
        for (a, b) in self.ux.iter().zip(&other.ux) {
            s += a * b;
        }
        for (a, b) in self.uy.iter().zip(&other.uy) {
            s += a * b;
        }
        s * self.grid.h() * self.grid.h()
    }

    /// Face-weighted `l2` norm.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Largest absolute face value over both components.
    pub fn linf_norm(&self) -> f64 {
        let mx = self.ux.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.uy.iter().fold(mx, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().chain(self.uy.iter()).all(|v| v.is_finite())
    }

    /// Discrete `H^1` norm for a no-slip field: the `l2` norm plus all first
    /// differences, with tangential values reflected across the walls so the
    /// homogeneous Dirichlet condition contributes its shear.
    ///
    /// Wall-closure rows carry half weight; with that convention the squared
    /// seminorm equals the quadratic form of the ghost-closed vector
    /// Laplacian exactly, so discrete energy identities balance.
    pub fn h1_norm(&self) -> f64 {
        let g = self.grid;
        let h = g.h();
        let inv_h = 1.0 / h;
        let l2 = self.l2_norm();
        let mut grad2 = 0.0;
        // d(ux)/dx at cell centers.
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let d = (self.ux(i + 1, j) - self.ux(i, j)) * inv_h;
                grad2 += d * d;
            }
        }
        // d(ux)/dy at corner nodes, ghost row reflected: ux(i,-1) = -ux(i,0).
        for i in 0..=g.nx() {
            for j in 0..=g.ny() {
                let lo = if j == 0 { -self.ux(i, 0) } else { self.ux(i, j - 1) };
                let hi = if j == g.ny() { -self.ux(i, g.ny() - 1) } else { self.ux(i, j) };
                let d = (hi - lo) * inv_h;
                let w = if j == 0 || j == g.ny() { 0.5 } else { 1.0 };
                grad2 += w * d * d;
            }
        }
        // d(uy)/dy at cell centers.
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let d = (self.uy(i, j + 1) - self.uy(i, j)) * inv_h;
                grad2 += d * d;
            }
        }
        // d(uy)/dx at corner nodes, ghost column reflected.
        for j in 0..=g.ny() {
            for i in 0..=g.nx() {
                let lo = if i == 0 { -self.uy(0, j) } else { self.uy(i - 1, j) };
                let hi = if i == g.nx() { -self.uy(g.nx() - 1, j) } else { self.uy(i, j) };
                let d = (hi - lo) * inv_h;
                let w = if i == 0 || i == g.nx() { 0.5 } else { 1.0 };
                grad2 += w * d * d;
            }
        }
        (l2 * l2 + grad2 * h * h).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> Grid2D {
        Grid2D::new(n, n, 1.0, 1.0).unwrap()
    }

    fn random_field(grid: Grid2D, rng: &mut ChaCha8Rng) -> ScalarField {
        let data = (0..grid.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::from_vec(grid, data).unwrap()
    }

    fn random_interior_vector(grid: Grid2D, rng: &mut ChaCha8Rng) -> StaggeredVectorField {
        let mut f = StaggeredVectorField::zeros(grid);
        for j in 0..grid.ny() {
            for i in 1..grid.nx() {
                *f.ux_mut(i, j) = rng.gen_range(-1.0..1.0);
            }
        }
        for j in 1..grid.ny() {
            for i in 0..grid.nx() {
                *f.uy_mut(i, j) = rng.gen_range(-1.0..1.0);
            }
        }
        f
    }

    #[test]
    fn rejects_tiny_and_nonsquare_grids() {
        assert!(Grid2D::new(3, 8, 1.0, 1.0).is_err());
        assert!(Grid2D::new(8, 8, 1.0, 2.0).is_err());
        assert!(Grid2D::new(8, 8, 0.0, 1.0).is_err());
        // Rectangular domains are fine as long as cells stay square.
        assert!(Grid2D::new(8, 16, 1.0, 2.0).is_ok());
    }

    #[test]
    fn integrate_constant_is_exact() {
        let g = unit_grid(16);
        let f = ScalarField::constant(g, 1.0);
        assert_eq!(f.integrate(), 1.0);
        let f = ScalarField::constant(g, -2.5);
        assert_eq!(f.integrate(), -2.5);
    }

    #[test]
    fn integrate_linear_is_exact_by_midpoint_symmetry() {
        // The midpoint rule integrates linear functions exactly; with
        // power-of-two cell counts the arithmetic is dyadic, so we expect
        // the integral of x over the unit square to be exactly one half.
        let g = unit_grid(32);
        let f = ScalarField::from_fn(g, |x, _| x);
        assert_eq!(f.integrate(), 0.5);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = unit_grid(12);
        let grad = ScalarField::constant(g, 4.2).gradient();
        assert_eq!(grad.l2_norm(), 0.0);
        assert!(grad.boundary_faces_zero());
    }

    #[test]
    fn gradient_of_linear_field_is_one_on_interior_faces() {
        let g = unit_grid(8);
        let grad = ScalarField::from_fn(g, |x, _| x).gradient();
        for j in 0..8 {
            assert_eq!(grad.ux(0, j), 0.0);
            assert_eq!(grad.ux(8, j), 0.0);
            for i in 1..8 {
                assert!((grad.ux(i, j) - 1.0).abs() < 1e-12);
            }
        }
        for j in 1..8 {
            for i in 0..8 {
                assert!(grad.uy(i, j).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        // <div F, phi> = -<F, grad phi> for interior-supported F, checked by
        // brute-force inner products on random fields.
        let g = unit_grid(8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let phi = random_field(g, &mut rng);
            let f = random_interior_vector(g, &mut rng);
            let lhs = f.divergence().inner(&phi);
            let rhs = -f.inner(&phi.gradient());
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())),
                "adjointness violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn divergence_integrates_to_zero_for_interior_fields() {
        let g = unit_grid(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_interior_vector(g, &mut rng);
        assert!(f.divergence().integrate().abs() < 1e-13);
        // Also holds for the gradient of anything.
        let smooth = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() * (2.0 * y).cos());
        assert!(smooth.gradient().divergence().integrate().abs() < 1e-13);
    }

    #[test]
    fn gradient_is_linear() {
        let g = unit_grid(8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_field(g, &mut rng);
        let b = random_field(g, &mut rng);
        let combo_data: Vec<f64> =
            a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let combo = ScalarField::from_vec(g, combo_data).unwrap().gradient();
        let ga = a.gradient();
        let gb = b.gradient();
        for j in 0..g.ny() {
            for i in 0..=g.nx() {
                let want = 2.0 * ga.ux(i, j) - 0.5 * gb.ux(i, j);
                assert!((combo.ux(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = unit_grid(16);
        let ones = ScalarField::constant(g, 1.0);
        let n = ones.norms();
        assert_eq!(n.l1, 1.0);
        assert_eq!(n.l2, 1.0);
        assert_eq!(n.linf, 1.0);
        assert_eq!(n.h1_semi, 0.0);
        assert_eq!(n.h1, 1.0);

        let minus = ones.map(|v| -v).norms();
        assert_eq!(minus.l1, n.l1);
        assert_eq!(minus.l2, n.l2);
        assert_eq!(minus.linf, n.linf);

        let g8 = unit_grid(8);
        let checker =
            ScalarField::from_fn(g8, |x, y| {
                let i = (x * 8.0) as usize;
                let j = (y * 8.0) as usize;
                if (i + j).is_multiple_of(2) { 1.0 } else { -1.0 }
            });
        let n = checker.norms();
        assert!((n.l2 - 1.0).abs() < 1e-14);
        assert_eq!(n.linf, 1.0);
    }

    #[test]
    fn face_average_of_constant_is_constant_everywhere() {
        let g = unit_grid(8);
        let avg = ScalarField::constant(g, 0.7).face_average();
        for j in 0..8 {
            for i in 0..=8 {
                assert_eq!(avg.ux(i, j), 0.7);
            }
        }
        for j in 0..=8 {
            for i in 0..8 {
                assert_eq!(avg.uy(i, j), 0.7);
            }
        }
    }

    #[test]
    fn staggered_h1_norm_of_zero_field_is_zero() {
        let g = unit_grid(8);
        assert_eq!(StaggeredVectorField::zeros(g).h1_norm(), 0.0);
    }

    #[test]
    fn staggered_h1_sees_wall_shear_of_tangential_flow() {
        // A uniform tangential slip along the wall must contribute shear
        // through the reflected ghost values, so h1 > l2.
        let g = unit_grid(8);
        let mut u = StaggeredVectorField::zeros(g);
        for j in 0..8 {
            for i in 1..8 {
                *u.ux_mut(i, j) = 1.0;
            }
        }
        let h1 = u.h1_norm();
        let l2 = u.l2_norm();
        assert!(h1 > l2 + 0.5, "h1 = {h1}, l2 = {l2}");
    }

    #[test]
    fn from_fn_staggered_places_components_on_faces() {
        let g = unit_grid(4);
        let u = StaggeredVectorField::from_fn(g, |x, _| x, |_, y| y);
        // Vertical faces sit at x = i*h.
        assert_eq!(u.ux(0, 0), 0.0);
        assert_eq!(u.ux(4, 3), 1.0);
        assert!((u.ux(2, 1) - 0.5).abs() < 1e-15);
        // Horizontal faces sit at y = j*h.
        assert_eq!(u.uy(0, 0), 0.0);
        assert_eq!(u.uy(3, 4), 1.0);
    }
}
