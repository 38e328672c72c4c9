//! Discrete diffusion operators with homogeneous Neumann boundaries.
//!
//! Both the plain Laplacian and the ideal-free predator operator are built
//! from the same face-flux form: for every interior face with conductivity
//! `w`, a flux `w * (f_nb - f_self) / h^2` is scattered with opposite signs
//! into the two adjacent cells. Boundary faces carry no flux, which is the
//! mirror-ghost-cell Neumann condition. This form is symmetric, negative
//! semi-definite, and conserves mass to rounding, all by construction.
//!
//! The ideal-free operator `P -> sigma * div(r_P grad(P / r_P))` is the
//! face form applied to `P / r_P` with face conductivities averaged from
//! `r_P`. Its implicit solve works in the transformed variable
//! `P~ = P / r_P`, where the system matrix `diag(r_P) - dt * sigma * B` is
//! symmetric positive definite and CG applies.

use crate::error::Error;
use crate::field::Field;
use crate::geometry::Grid;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Rule for turning cell-centered conductivities into face values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceAverage {
    /// Mean of the two adjacent cells (default).
    Arithmetic,
    /// Harmonic mean; damps flux across sharp conductivity jumps.
    Harmonic,
}

impl FaceAverage {
    #[inline]
    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5 * (a + b),
            FaceAverage::Harmonic => 2.0 * a * b / (a + b),
        }
    }
}

/// Conjugate-gradient options.
#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Relative residual target, measured against `||b||_2`.
    pub tol: f64,
    pub max_iter: usize,
    /// Enable the diagonal (Jacobi) preconditioner.
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iter: 20_000,
            jacobi: false,
        }
    }
}

/// Outcome of a CG solve.
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive-definite
/// operator given as a matvec closure. `x0` is the starting guess; if its
/// residual is already below tolerance no iteration runs.
pub fn conjugate_gradient(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x0: Vec<f64>,
    inv_diag: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<CgSolution> {
    let n = b.len();
    assert_eq!(x0.len(), n);
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
        });
    }

    let mut x = x0;
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();

    let precondition = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        match inv_diag {
            Some(d) => z.extend(r.iter().zip(d).map(|(ri, di)| ri * di)),
            None => z.extend_from_slice(r),
        }
    };

    let mut z = Vec::with_capacity(n);
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];

    for iter in 0..=opts.max_iter {
        let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = norm_r / norm_b;
        if rel <= opts.tol {
            return Ok(CgSolution {
                x,
                iterations: iter,
                rel_residual: rel,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::SolverDidNotConverge(format!(
                "cg: operator not positive definite (p.Ap = {pap} at iteration {iter})"
            )));
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        precondition(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        rz = rz_new;
    }
    Err(Error::SolverDidNotConverge(format!(
        "cg: relative residual stayed above {} after {} iterations",
        opts.tol, opts.max_iter
    )))
}

/// A diffusion generator in face-flux form. `apply` evaluates the full
/// operator (including the `P / r_P` substitution for the ideal-free case);
/// `apply_sym` evaluates the symmetric bilinear part `sigma * B`.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    grid: Grid,
    sigma: f64,
    /// Conductivity per interior x-face, length (nx-1)*ny.
    wx: Vec<f64>,
    /// Conductivity per interior y-face, length nx*(ny-1).
    wy: Vec<f64>,
    /// Set for the ideal-free operator; `apply` divides by it first.
    r_p: Option<Field>,
}

impl StencilOperator {
    /// Plain Laplacian `sigma * Delta` with unit face conductivities.
    pub fn laplacian(grid: &Grid, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!(
                "diffusivity must be nonnegative and finite, got {sigma}"
            )));
        }
        Ok(StencilOperator {
            grid: *grid,
            sigma,
            wx: vec![1.0; (grid.nx - 1) * grid.ny],
            wy: vec![1.0; grid.nx * (grid.ny - 1)],
            r_p: None,
        })
    }

    /// Ideal-free operator `sigma * div(r_P grad(. / r_P))`.
    pub fn ideal_free(grid: &Grid, sigma: f64, r_p: &Field, avg: FaceAverage) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!(
                "diffusivity must be nonnegative and finite, got {sigma}"
            )));
        }
        if r_p.nx() != grid.nx || r_p.ny() != grid.ny {
            return Err(Error::config("r_P field shape does not match the grid"));
        }
        if !(r_p.inf() > 0.0) {
            return Err(Error::config(
                "ideal-free operator needs strictly positive r_P",
            ));
        }
        let (nx, ny) = (grid.nx, grid.ny);
        let mut wx = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            for i in 0..nx - 1 {
                wx.push(avg.combine(r_p.get(i, j), r_p.get(i + 1, j)));
            }
        }
        let mut wy = Vec::with_capacity(nx * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx {
                wy.push(avg.combine(r_p.get(i, j), r_p.get(i, j + 1)));
            }
        }
        Ok(StencilOperator {
            grid: *grid,
            sigma,
            wx,
            wy,
            r_p: Some(r_p.clone()),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// The conductivity field of the ideal-free case, if any.
    pub fn conductivity(&self) -> Option<&Field> {
        self.r_p.as_ref()
    }

    /// `out = sigma * B f` where `B` is the symmetric face-flux form.
    pub fn apply_sym_slice(&self, f: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        debug_assert_eq!(f.len(), nx * ny);
        let cx = self.sigma / (self.grid.dx() * self.grid.dx());
        let cy = self.sigma / (self.grid.dy() * self.grid.dy());
        out.fill(0.0);
        for j in 0..ny {
            let row = j * nx;
            let wrow = j * (nx - 1);
            for i in 0..nx - 1 {
                let flux = self.wx[wrow + i] * cx * (f[row + i + 1] - f[row + i]);
                out[row + i] += flux;
                out[row + i + 1] -= flux;
            }
        }
        for j in 0..ny - 1 {
            let row = j * nx;
            let next = (j + 1) * nx;
            for i in 0..nx {
                let flux = self.wy[row + i] * cy * (f[next + i] - f[row + i]);
                out[row + i] += flux;
                out[next + i] -= flux;
            }
        }
    }

    pub fn apply_sym(&self, f: &Field) -> Field {
        let mut out = vec![0.0; f.len()];
        self.apply_sym_slice(f.as_slice(), &mut out);
        Field::from_vec(f.nx(), f.ny(), out)
    }

    /// Full operator action: `sigma * Delta f` for the Laplacian,
    /// `sigma * div(r_P grad(f / r_P))` for the ideal-free case.
    pub fn apply(&self, f: &Field) -> Field {
        match &self.r_p {
            None => self.apply_sym(f),
            Some(r_p) => self.apply_sym(&f.zip_with(r_p, |a, b| a / b)),
        }
    }

    /// Diagonal of `sigma * B` (nonpositive entries).
    pub(crate) fn sym_diagonal(&self) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let cx = self.sigma / (self.grid.dx() * self.grid.dx());
        let cy = self.sigma / (self.grid.dy() * self.grid.dy());
        let mut diag = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx - 1 {
                let w = self.wx[j * (nx - 1) + i] * cx;
                diag[j * nx + i] -= w;
                diag[j * nx + i + 1] -= w;
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let w = self.wy[j * nx + i] * cy;
                diag[j * nx + i] -= w;
                diag[(j + 1) * nx + i] -= w;
            }
        }
        diag
    }

    /// Backward-Euler diffusion step: solve `(I - dt * op) u = rhs`.
    ///
    /// For the ideal-free case the SPD system
    /// `(diag(r_P) - dt * sigma * B) u~ = rhs` is solved and `u = r_P * u~`
    /// returned; the result satisfies the untransformed equation exactly.
    pub fn solve_implicit(&self, rhs: &Field, dt: f64) -> Result<Field> {
        self.solve_implicit_with(rhs, dt, &CgOptions::default())
    }

    pub fn solve_implicit_with(&self, rhs: &Field, dt: f64, opts: &CgOptions) -> Result<Field> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::config(format!(
                "implicit solve needs dt >= 0, got {dt}"
            )));
        }
        if rhs.nx() != self.grid.nx || rhs.ny() != self.grid.ny {
            return Err(Error::config("rhs shape does not match the operator grid"));
        }
        if dt == 0.0 || self.sigma == 0.0 {
            return Ok(rhs.clone());
        }
        let n = rhs.len();
        let mut sym = vec![0.0; n];
        let inv_diag: Option<Vec<f64>> = if opts.jacobi {
            let sd = self.sym_diagonal();
            let d: Vec<f64> = match &self.r_p {
                None => sd.iter().map(|s| 1.0 / (1.0 - dt * s)).collect(),
                Some(r_p) => sd
                    .iter()
                    .zip(r_p.as_slice())
                    .map(|(s, r)| 1.0 / (r - dt * s))
                    .collect(),
            };
            Some(d)
        } else {
            None
        };

        match &self.r_p {
            None => {
                let mut apply = |x: &[f64], out: &mut [f64]| {
                    self.apply_sym_slice(x, &mut sym);
                    for k in 0..n {
                        out[k] = x[k] - dt * sym[k];
                    }
                };
                let sol = conjugate_gradient(
                    &mut apply,
                    rhs.as_slice(),
                    rhs.as_slice().to_vec(),
                    inv_diag.as_deref(),
                    opts,
                )?;
                Ok(Field::from_vec(rhs.nx(), rhs.ny(), sol.x))
            }
            Some(r_p) => {
                let rp = r_p.as_slice();
                let mut apply = |x: &[f64], out: &mut [f64]| {
                    self.apply_sym_slice(x, &mut sym);
                    for k in 0..n {
                        out[k] = rp[k] * x[k] - dt * sym[k];
                    }
                };
                let guess: Vec<f64> = rhs.as_slice().iter().zip(rp).map(|(b, r)| b / r).collect();
                let sol = conjugate_gradient(
                    &mut apply,
                    rhs.as_slice(),
                    guess,
                    inv_diag.as_deref(),
                    opts,
                )?;
                let u: Vec<f64> = sol.x.iter().zip(rp).map(|(y, r)| y * r).collect();
                Ok(Field::from_vec(rhs.nx(), rhs.ny(), u))
            }
        }
    }
}

/// `sigma * Delta f` with homogeneous Neumann boundaries.
pub fn laplacian_apply(f: &Field, sigma: f64, grid: &Grid) -> Result<Field> {
    Ok(StencilOperator::laplacian(grid, sigma)?.apply(f))
}

/// Ideal-free dispersal `sigma * div(r_P grad(P / r_P))` with arithmetic
/// face averaging (the shipped default; see [`FaceAverage`]).
pub fn ideal_free_apply(p: &Field, r_p: &Field, sigma: f64, grid: &Grid) -> Result<Field> {
    Ok(StencilOperator::ideal_free(grid, sigma, r_p, FaceAverage::Arithmetic)?.apply(p))
}

/// Backward-Euler diffusion step (free-function form of
/// [`StencilOperator::solve_implicit`]).
pub fn implicit_diffusion_solve(rhs: &Field, op: &StencilOperator, dt: f64) -> Result<Field> {
    op.solve_implicit(rhs, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, seed: u64, lo: f64, hi: f64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(grid.nx, grid.ny, |_, _| rng.gen_range(lo..hi))
    }

    /// Dense matrix of a linear field operator obtained by probing with
    /// unit vectors; oracle-only, O(n^2).
    fn dense_of(op: impl Fn(&Field) -> Field, grid: &Grid) -> DMatrix<f64> {
        let n = grid.ncells();
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let col = op(&Field::from_vec(grid.nx, grid.ny, e));
            for (r, v) in col.as_slice().iter().enumerate() {
                m[(r, k)] = *v;
            }
        }
        m
    }

    #[test]
    fn laplacian_of_constant_is_zero_exactly() {
        let g = build_grid(7, 5, 3.5, 2.5).unwrap();
        let f = Field::constant(7, 5, 4.2);
        let lap = laplacian_apply(&f, 2.0, &g).unwrap();
        assert_eq!(lap.abs_sup(), 0.0);
    }

    #[test]
    fn laplacian_spike_stencil_values() {
        // Unit spacing makes the expected stencil values exact.
        let g = build_grid(5, 5, 5.0, 5.0).unwrap();
        let mut f = Field::zeros(5, 5);
        f.set(2, 2, 1.0);
        let lap = laplacian_apply(&f, 1.0, &g).unwrap();
        assert_eq!(lap.get(2, 2), -4.0);
        assert_eq!(lap.get(1, 2), 1.0);
        assert_eq!(lap.get(3, 2), 1.0);
        assert_eq!(lap.get(2, 1), 1.0);
        assert_eq!(lap.get(2, 3), 1.0);
        assert_eq!(lap.get(1, 1), 0.0);
    }

    #[test]
    fn laplacian_boundary_mirror() {
        // A corner spike only couples to its two interior neighbors.
        let g = build_grid(4, 4, 4.0, 4.0).unwrap();
        let mut f = Field::zeros(4, 4);
        f.set(0, 0, 1.0);
        let lap = laplacian_apply(&f, 1.0, &g).unwrap();
        assert_eq!(lap.get(0, 0), -2.0);
        assert_eq!(lap.get(1, 0), 1.0);
        assert_eq!(lap.get(0, 1), 1.0);
    }

    #[test]
    fn laplacian_cosine_mode_second_order() {
        // f = cos(pi x / lx) is a Neumann mode: Delta f = -(pi/lx)^2 f.
        let sigma = 2.0;
        let mut errs = Vec::new();
        for nx in [16usize, 32] {
            let g = build_grid(nx, 4, 1.0, 1.0).unwrap();
            let f = Field::from_fn(g.nx, g.ny, |i, j| {
                let (x, _) = g.cell_center(i, j);
                (std::f64::consts::PI * x).cos()
            });
            let lap = laplacian_apply(&f, sigma, &g).unwrap();
            let k2 = std::f64::consts::PI * std::f64::consts::PI;
            let err = lap
                .zip_with(&f, |l, v| (l + sigma * k2 * v).abs())
                .sup();
            errs.push(err);
        }
        // Second order: halving dx shrinks the error by about 4.
        assert!(errs[1] < errs[0] / 3.0, "errors {errs:?}");
        assert!(errs[0] < 0.2 * sigma);
    }

    #[test]
    fn ideal_free_annihilates_conductivity_multiples() {
        let g = build_grid(10, 8, 5.0, 4.0).unwrap();
        let r_p = random_field(&g, 7, 0.2, 1.7);
        for c in [1.0, 3.5] {
            let p = r_p.map(|v| c * v);
            let out = ideal_free_apply(&p, &r_p, 2.3, &g).unwrap();
            assert!(out.abs_sup() < 1e-13, "sup {}", out.abs_sup());
        }
    }

    #[test]
    fn ideal_free_constant_conductivity_matches_laplacian() {
        let g = build_grid(9, 9, 3.0, 3.0).unwrap();
        let p = random_field(&g, 3, -1.0, 2.0);
        // Power-of-two conductivity: division and remultiplication are
        // exact, so the match is bitwise.
        let r_p = Field::constant(9, 9, 2.0);
        let a = ideal_free_apply(&p, &r_p, 1.5, &g).unwrap();
        let b = laplacian_apply(&p, 1.5, &g).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        // Generic constant: equal to rounding.
        let r_p = Field::constant(9, 9, 0.7);
        let a = ideal_free_apply(&p, &r_p, 1.5, &g).unwrap();
        let diff = a.zip_with(&b, |x, y| (x - y).abs()).sup();
        assert!(diff < 1e-12 * b.abs_sup().max(1.0));
    }

    #[test]
    fn ideal_free_harmonic_face_switch() {
        let g = build_grid(4, 2, 4.0, 2.0).unwrap();
        let r_p = Field::from_vec(4, 2, vec![1.0, 4.0, 1.0, 4.0, 1.0, 4.0, 1.0, 4.0]);
        let arith = StencilOperator::ideal_free(&g, 1.0, &r_p, FaceAverage::Arithmetic).unwrap();
        let harm = StencilOperator::ideal_free(&g, 1.0, &r_p, FaceAverage::Harmonic).unwrap();
        // Face conductivities differ: (1+4)/2 = 2.5 vs 2*4/5 = 1.6.
        let p = Field::from_vec(4, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let a = arith.apply(&p);
        let h = harm.apply(&p);
        assert!(a.zip_with(&h, |x, y| (x - y).abs()).sup() > 1e-3);
        // Both still conserve mass.
        assert!(a.sum().abs() < 1e-12 * a.abs_sup().max(1.0) * a.len() as f64);
        assert!(h.sum().abs() < 1e-12 * h.abs_sup().max(1.0) * h.len() as f64);
    }

    #[test]
    fn ideal_free_rejects_nonpositive_conductivity() {
        let g = build_grid(3, 3, 3.0, 3.0).unwrap();
        let mut r_p = Field::constant(3, 3, 1.0);
        r_p.set(1, 1, 0.0);
        assert!(StencilOperator::ideal_free(&g, 1.0, &r_p, FaceAverage::Arithmetic).is_err());
    }

    #[test]
    fn implicit_solve_constant_rhs_is_identity() {
        let g = build_grid(8, 8, 2.0, 2.0).unwrap();
        let op = StencilOperator::laplacian(&g, 3.0).unwrap();
        let rhs = Field::constant(8, 8, 1.75);
        let u = op.solve_implicit(&rhs, 0.1).unwrap();
        // Constants are in the kernel: the initial guess already solves it.
        assert_eq!(u.as_slice(), rhs.as_slice());
    }

    #[test]
    fn implicit_solve_matches_dense_direct() {
        let g = build_grid(8, 8, 4.0, 4.0).unwrap();
        let dt = 0.07;
        for (seed, sigma) in [(11u64, 1.0), (12, 5.0)] {
            let op = StencilOperator::laplacian(&g, sigma).unwrap();
            let rhs = random_field(&g, seed, -1.0, 1.0);
            let u = op.solve_implicit(&rhs, dt).unwrap();
            let m = dense_of(
                |f| {
                    let lap = op.apply(f);
                    f.zip_with(&lap, |a, l| a - dt * l)
                },
                &g,
            );
            let b = DVector::from_column_slice(rhs.as_slice());
            let x = m.lu().solve(&b).expect("dense solve");
            for k in 0..g.ncells() {
                assert_abs_diff_eq!(u.as_slice()[k], x[k], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn implicit_solve_ideal_free_matches_dense_direct() {
        let g = build_grid(7, 6, 3.5, 3.0).unwrap();
        let dt = 0.05;
        let r_p = random_field(&g, 21, 0.3, 1.5);
        let op = StencilOperator::ideal_free(&g, 2.0, &r_p, FaceAverage::Arithmetic).unwrap();
        let rhs = random_field(&g, 22, 0.0, 2.0);
        let u = op.solve_implicit(&rhs, dt).unwrap();
        let m = dense_of(
            |f| {
                let a = op.apply(f);
                f.zip_with(&a, |x, l| x - dt * l)
            },
            &g,
        );
        let b = DVector::from_column_slice(rhs.as_slice());
        let x = m.lu().solve(&b).expect("dense solve");
        for k in 0..g.ncells() {
            assert_abs_diff_eq!(u.as_slice()[k], x[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn implicit_solve_dt_to_zero_returns_rhs() {
        let g = build_grid(10, 10, 1.0, 1.0).unwrap();
        let op = StencilOperator::laplacian(&g, 1.0).unwrap();
        let rhs = random_field(&g, 5, 0.0, 1.0);
        let mut last = f64::INFINITY;
        for dt in [1e-2, 1e-3, 1e-4] {
            let u = op.solve_implicit(&rhs, dt).unwrap();
            let diff = u.zip_with(&rhs, |a, b| (a - b).abs()).sup();
            assert!(diff < last);
            assert!(diff <= 1.1 * dt * op.apply(&rhs).abs_sup());
            last = diff;
        }
        let u = op.solve_implicit(&rhs, 0.0).unwrap();
        assert_eq!(u.as_slice(), rhs.as_slice());
    }

    #[test]
    fn implicit_solve_jacobi_agrees_with_plain() {
        let g = build_grid(12, 12, 2.0, 2.0).unwrap();
        let op = StencilOperator::laplacian(&g, 4.0).unwrap();
        let rhs = random_field(&g, 9, -1.0, 1.0);
        let plain = op.solve_implicit(&rhs, 0.3).unwrap();
        let pre = op
            .solve_implicit_with(
                &rhs,
                0.3,
                &CgOptions {
                    jacobi: true,
                    ..CgOptions::default()
                },
            )
            .unwrap();
        let diff = plain.zip_with(&pre, |a, b| (a - b).abs()).sup();
        assert!(diff < 1e-8);
    }

    #[test]
    fn cg_matches_dense_on_random_spd() {
        let n = 24;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a_raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        // A = raw^T raw + n I is SPD.
        let a = &a_raw.transpose() * &a_raw + DMatrix::identity(n, n) * n as f64;
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut apply = |x: &[f64], out: &mut [f64]| {
            let v = &a * DVector::from_column_slice(x);
            out.copy_from_slice(v.as_slice());
        };
        let sol = conjugate_gradient(
            &mut apply,
            &b,
            vec![0.0; n],
            None,
            &CgOptions::default(),
        )
        .unwrap();
        let x_ref = a
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(&b))
            .unwrap();
        for k in 0..n {
            assert_abs_diff_eq!(sol.x[k], x_ref[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let g = build_grid(16, 16, 1.0, 1.0).unwrap();
        let op = StencilOperator::laplacian(&g, 50.0).unwrap();
        let rhs = random_field(&g, 13, -1.0, 1.0);
        let out = op.solve_implicit_with(
            &rhs,
            10.0,
            &CgOptions {
                max_iter: 2,
                ..CgOptions::default()
            },
        );
        assert!(matches!(out, Err(Error::SolverDidNotConverge(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Mass conservation: the face form telescopes, so cell sums vanish
        /// to rounding for both operators.
        #[test]
        fn operators_conserve_mass(seed in 0u64..1000) {
            let g = build_grid(9, 7, 4.5, 3.5).unwrap();
            let f = random_field(&g, seed, -2.0, 2.0);
            let lap = laplacian_apply(&f, 1.7, &g).unwrap();
            let scale = lap.as_slice().iter().map(|v| v.abs()).sum::<f64>().max(1e-30);
            prop_assert!(lap.sum().abs() / scale <= 1e-13);

            let r_p = random_field(&g, seed.wrapping_add(1), 0.2, 2.0);
            let ifr = ideal_free_apply(&f, &r_p, 1.7, &g).unwrap();
            let scale = ifr.as_slice().iter().map(|v| v.abs()).sum::<f64>().max(1e-30);
            prop_assert!(ifr.sum().abs() / scale <= 1e-13);
        }

        /// The symmetric part is self-adjoint and negative semi-definite.
        #[test]
        fn sym_form_is_symmetric_negative(seed in 0u64..1000) {
            let g = build_grid(6, 8, 3.0, 4.0).unwrap();
            let w = random_field(&g, seed, 0.1, 2.0);
            let op = StencilOperator::ideal_free(&g, 1.3, &w, FaceAverage::Arithmetic).unwrap();
            let x = random_field(&g, seed.wrapping_add(10), -1.0, 1.0);
            let y = random_field(&g, seed.wrapping_add(20), -1.0, 1.0);
            let xay = x.dot(&op.apply_sym(&y));
            let yax = y.dot(&op.apply_sym(&x));
            let scale = xay.abs().max(yax.abs()).max(1e-30);
            prop_assert!((xay - yax).abs() / scale <= 1e-12);
            let xax = x.dot(&op.apply_sym(&x));
            prop_assert!(xax <= 1e-12 * x.dot(&x));
            // Constants are in the kernel.
            let c = Field::constant(6, 8, 1.0);
            prop_assert!(op.apply_sym(&c).abs_sup() == 0.0);
        }
    }
}
