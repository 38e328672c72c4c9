//! Principal eigenvalues of the linearized vector and predator operators.
//!
//! Three self-adjoint operators control the dynamics near the
//! vector-free state with predators at their equilibrium `r_P / s_P`:
//!
//! * susceptible vectors: `L_Vs = -sigma_V Delta - r_V + h r_P / s_P`
//! * infective vectors: `L_Vi = -sigma_V Delta + alpha + d_V + h r_P / s_P`
//! * predators: `L_P = -sigma_P div(r_P grad(. / r_P)) + r_P`
//!
//! The sign of the principal eigenvalue of `L_Vs` decides the regime:
//! positive means vector extinction, negative persistence. `L_Vi` and `L_P`
//! are always positive. The predator operator is handled through the
//! substitution `phi~ = phi / r_P`, which turns it into the symmetric
//! pencil `(-sigma_P B + diag(r_P^2)) phi~ = lambda diag(r_P) phi~`.
//!
//! The solver is shifted inverse power iteration: the shift sits strictly
//! below the smallest generalized Rayleigh quotient of the diagonal part,
//! so every inner system is symmetric positive definite and CG applies.
//! A dense symmetric eigensolver doubles as an independent oracle on
//! small grids.

use crate::coefficients::{self, CoefficientFields, ModelParams, Preset};
use crate::error::Error;
use crate::field::Field;
use crate::geometry::{refuge_frequency_mask, refuge_uniform_mask, Grid};
use crate::operators::{conjugate_gradient, CgOptions, FaceAverage, StencilOperator};
use crate::Result;
use serde::{Deserialize, Serialize};

/// How the returned eigenfunction is scaled. The eigenfunction is positive,
/// so all three normalizations are well defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// `min phi = 1` (used for the susceptible-vector envelope).
    MinOne,
    /// `max phi = 1` (used for the infective-vector floor).
    MaxOne,
    /// Unit L2 norm over the domain.
    L2,
}

/// Converged principal eigenpair.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub lambda1: f64,
    /// Positive eigenfunction, scaled per the requested normalization.
    pub eigenfunction: Field,
    pub iterations: usize,
    /// `||L phi - lambda1 W phi||_2 / ||phi||_2` in the original variables.
    pub residual: f64,
}

/// Eigensolver tolerances.
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Stop when the eigenvalue moves less than this between iterations.
    pub tol_lambda: f64,
    /// Residual target relative to `||phi||_2`.
    pub tol_residual: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol_lambda: 1e-12,
            tol_residual: 1e-10,
            max_iter: 500,
        }
    }
}

fn normalize(phi: &mut Field, normalization: Normalization, cell_area: f64) {
    let scale = match normalization {
        Normalization::MinOne => phi.inf(),
        Normalization::MaxOne => phi.sup(),
        Normalization::L2 => (phi.dot(phi) * cell_area).sqrt(),
    };
    // Divide rather than multiply by the reciprocal so the pinned extremum
    // is exactly 1.
    for v in phi.as_mut_slice() {
        *v /= scale;
    }
}

/// Inverse power iteration on the pencil `(q - sigma B) phi = lambda W phi`
/// given the symmetric stencil part. Returns the eigenpair in pencil
/// variables (unnormalized, positive).
fn eigen_pencil(
    stencil: &StencilOperator,
    q: &Field,
    weight: Option<&Field>,
    opts: &EigenOptions,
    residual_target: f64,
) -> Result<(f64, Field, usize, f64)> {
    let grid = *stencil.grid();
    let n = grid.ncells();
    if q.nx() != grid.nx || q.ny() != grid.ny {
        return Err(Error::config("potential shape does not match the grid"));
    }
    if let Some(w) = weight {
        if w.nx() != grid.nx || w.ny() != grid.ny {
            return Err(Error::config("weight shape does not match the grid"));
        }
        if !(w.inf() > 0.0) {
            return Err(Error::config("eigenproblem weight must be positive"));
        }
    }
    let ones = Field::constant(grid.nx, grid.ny, 1.0);
    let w = weight.unwrap_or(&ones);

    // Lower bound for the pencil spectrum: lambda >= min(q_i / w_i) because
    // -B is positive semi-definite. A shift strictly below keeps the inner
    // systems SPD.
    let ratio_min = q
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(qi, wi)| qi / wi)
        .fold(f64::INFINITY, f64::min);
    let ratio_max = q
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(qi, wi)| qi / wi)
        .fold(f64::NEG_INFINITY, f64::max);
    let delta = (1e-3 * ratio_min.abs().max(1.0)).max(1e-2 * (ratio_max - ratio_min));
    let mut shift = ratio_min - delta;

    let qs = q.as_slice();
    let ws = w.as_slice();
    let w_min = ws.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sym = vec![0.0; n];
    // Diagonal of M = q - sigma B - shift W for Jacobi preconditioning.
    let op_diag = stencil.sym_diagonal();
    let mut inv_diag: Vec<f64> = op_diag
        .iter()
        .enumerate()
        .map(|(k, d)| 1.0 / (qs[k] - d - shift * ws[k]))
        .collect();

    let cg_opts = CgOptions {
        tol: (residual_target * 1e-2).min(1e-12),
        max_iter: 200_000,
        jacobi: true,
    };

    let mut x = Field::constant(grid.nx, grid.ny, 1.0);
    let wx_norm = |f: &Field| -> f64 {
        f.as_slice()
            .iter()
            .zip(ws)
            .map(|(v, wi)| v * v * wi)
            .sum::<f64>()
            .sqrt()
    };
    let nrm = wx_norm(&x);
    x.scale_in_place(1.0 / nrm);

    let mut lambda = f64::INFINITY;
    let mut guess_scale = 1.0;
    for iter in 1..=opts.max_iter {
        let b: Vec<f64> = x.as_slice().iter().zip(ws).map(|(v, wi)| v * wi).collect();
        let guess: Vec<f64> = x.as_slice().iter().map(|v| v * guess_scale).collect();
        let mut apply = |v: &[f64], out: &mut [f64]| {
            stencil.apply_sym_slice(v, &mut sym);
            for k in 0..n {
                out[k] = qs[k] * v[k] - sym[k] - shift * ws[k] * v[k];
            }
        };
        let sol = conjugate_gradient(&mut apply, &b, guess, Some(&inv_diag), &cg_opts)?;
        let mut y = Field::from_vec(grid.nx, grid.ny, sol.x);
        let ny = wx_norm(&y);
        if !(ny > 0.0 && ny.is_finite()) {
            return Err(Error::SolverDidNotConverge(
                "eigen iteration produced a degenerate vector".into(),
            ));
        }
        y.scale_in_place(1.0 / ny);
        if y.sum() < 0.0 {
            y.scale_in_place(-1.0);
        }

        // Rayleigh quotient in pencil variables (y is W-normalized).
        stencil.apply_sym_slice(y.as_slice(), &mut sym);
        let ys = y.as_slice();
        let mut ray = 0.0;
        for k in 0..n {
            ray += ys[k] * (qs[k] * ys[k] - sym[k]);
        }
        let mut res2 = 0.0;
        for k in 0..n {
            let r = qs[k] * ys[k] - sym[k] - ray * ws[k] * ys[k];
            res2 += r * r;
        }
        let res = res2.sqrt() / y.norm_l2();

        let moved = (ray - lambda).abs();
        lambda = ray;
        x = y;
        if moved < opts.tol_lambda && res <= residual_target {
            return Ok((lambda, x, iter, res));
        }

        // Close the gap to the eigenvalue once the iterate is credible.
        // The Rayleigh quotient lies above lambda1 by at most res / w_min,
        // so a three-residual margin keeps the shifted system positive
        // definite; requiring a tenfold margin improvement prevents rash
        // jumps while the iterate is still far off. Near-degenerate pairs
        // then converge superlinearly instead of stalling at a fixed-shift
        // contraction rate.
        let bound = 3.0 * res / w_min;
        if bound.is_finite() && bound < 0.1 * (lambda - shift) {
            let margin = bound.max(1e-10 * lambda.abs().max(1.0));
            let proposed = lambda - margin;
            if proposed > shift {
                shift = proposed;
                for (k, d) in op_diag.iter().enumerate() {
                    inv_diag[k] = 1.0 / (qs[k] - d - shift * ws[k]);
                }
            }
        }
        guess_scale = 1.0 / (lambda - shift).max(f64::MIN_POSITIVE);
    }
    Err(Error::SolverDidNotConverge(format!(
        "eigen iteration: no convergence after {} iterations (lambda ~ {lambda})",
        opts.max_iter
    )))
}

/// Principal eigenpair of `-sigma Delta + q` (optionally with a diagonal
/// mass weight) on a Neumann grid.
pub fn principal_eigenpair(
    sigma: f64,
    q: &Field,
    grid: &Grid,
    weight: Option<&Field>,
    normalization: Normalization,
    opts: &EigenOptions,
) -> Result<SpectralResult> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!(
            "eigenproblem diffusivity must be positive, got {sigma}"
        )));
    }
    let stencil = StencilOperator::laplacian(grid, sigma)?;
    let (lambda1, mut phi, iterations, residual) =
        eigen_pencil(&stencil, q, weight, opts, opts.tol_residual)?;
    if !(phi.inf() > 0.0) {
        return Err(Error::SolverDidNotConverge(
            "principal eigenfunction is not strictly positive".into(),
        ));
    }
    normalize(&mut phi, normalization, grid.cell_area());
    Ok(SpectralResult {
        lambda1,
        eigenfunction: phi,
        iterations,
        residual,
    })
}

/// Potential of the susceptible-vector operator: `-r_V + h r_P / s_P`.
pub fn potential_vs(fields: &CoefficientFields, params: &ModelParams) -> Field {
    fields
        .r_v
        .zip_with(&fields.r_p, |rv, rp| -rv + params.h * rp / params.s_p)
}

/// Potential of the infective-vector operator:
/// `alpha + d_V + h r_P / s_P`.
pub fn potential_vi(fields: &CoefficientFields, params: &ModelParams) -> Field {
    fields
        .r_p
        .map(|rp| params.alpha + params.d_v + params.h * rp / params.s_p)
}

/// Principal eigenpair of `L_Vs`, eigenfunction normalized to `min = 1`.
pub fn lambda1_vs(
    fields: &CoefficientFields,
    params: &ModelParams,
    opts: &EigenOptions,
) -> Result<SpectralResult> {
    principal_eigenpair(
        params.sigma_v,
        &potential_vs(fields, params),
        &fields.grid,
        None,
        Normalization::MinOne,
        opts,
    )
}

/// Principal eigenpair of `L_Vi`, eigenfunction normalized to `max = 1`.
/// The potential is strictly positive, so `lambda1 > 0` always.
pub fn lambda1_vi(
    fields: &CoefficientFields,
    params: &ModelParams,
    opts: &EigenOptions,
) -> Result<SpectralResult> {
    principal_eigenpair(
        params.sigma_v,
        &potential_vi(fields, params),
        &fields.grid,
        None,
        Normalization::MaxOne,
        opts,
    )
}

/// Principal eigenpair of the predator operator `L_P` via the `phi / r_P`
/// substitution; always positive. The eigenfunction is returned in the
/// original variables with `max = 1`.
pub fn lambda1_p(
    fields: &CoefficientFields,
    params: &ModelParams,
    opts: &EigenOptions,
) -> Result<SpectralResult> {
    let grid = fields.grid;
    let r_p = &fields.r_p;
    let stencil =
        StencilOperator::ideal_free(&grid, params.sigma_p, r_p, FaceAverage::Arithmetic)?;
    let q = r_p.zip_with(r_p, |a, b| a * b);
    // Converge the transformed residual tightly enough that the original
    // variables meet the requested target after multiplying by r_P.
    let target = opts.tol_residual * r_p.inf().min(1.0) * 0.5;
    let (lambda1, phi_t, iterations, _) = eigen_pencil(&stencil, &q, Some(r_p), opts, target)?;
    let mut phi = phi_t.zip_with(r_p, |t, r| t * r);
    if !(phi.inf() > 0.0) {
        return Err(Error::SolverDidNotConverge(
            "principal eigenfunction is not strictly positive".into(),
        ));
    }
    // Residual in original variables: L_P phi - lambda phi.
    let ifree = stencil.apply(&phi);
    let mut res2 = 0.0;
    for k in 0..phi.len() {
        let lp = -ifree.as_slice()[k] + r_p.as_slice()[k] * phi.as_slice()[k];
        let r = lp - lambda1 * phi.as_slice()[k];
        res2 += r * r;
    }
    let residual = res2.sqrt() / phi.norm_l2();
    normalize(&mut phi, Normalization::MaxOne, grid.cell_area());
    Ok(SpectralResult {
        lambda1,
        eigenfunction: phi,
        iterations,
        residual,
    })
}

/// Width of the marginal band around zero when classifying regimes.
pub const DEFAULT_REGIME_TOL: f64 = 1e-8;

/// Long-run fate of the vector population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `lambda1(L_Vs) > tol`: vectors die out, infection stalls.
    Extinction,
    /// `lambda1(L_Vs) < -tol`: vectors persist, infection saturates.
    Persistence,
    /// `|lambda1|` within tolerance of zero: no verdict at this resolution.
    Marginal,
}

/// Classify the regime from the principal eigenvalue of `L_Vs`.
pub fn regime_classify(lambda1: f64, tol: f64) -> Regime {
    if lambda1 > tol {
        Regime::Extinction
    } else if lambda1 < -tol {
        Regime::Persistence
    } else {
        Regime::Marginal
    }
}

/// High-frequency limit of `lambda1(L_Vs)` for the square-lattice refuge
/// family at a given area fraction: the potential homogenizes to its
/// spatial average.
pub fn homogenized_limit(params: &ModelParams, area_fraction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&area_fraction) || !area_fraction.is_finite() {
        return Err(Error::config(format!(
            "area fraction must lie in [0, 1], got {area_fraction}"
        )));
    }
    let field_part = -params.r_v_field + params.h * params.r_p_field / params.s_p;
    let refuge_part = -params.r_v_refuge + params.h * params.r_p_refuge / params.s_p;
    Ok(field_part + area_fraction * refuge_part)
}

/// `lambda1(L_Vs)` across refuge frequencies at fixed total area.
pub fn frequency_curve(
    grid: &Grid,
    params: &ModelParams,
    area: f64,
    frequencies: &[u32],
    opts: &EigenOptions,
) -> Result<Vec<(u32, f64)>> {
    let mut rows = Vec::with_capacity(frequencies.len());
    for &n in frequencies {
        let mask = refuge_frequency_mask(grid, n, area)?;
        let fields = coefficients::assemble_fields(params, &mask)?;
        let eig = lambda1_vs(&fields, params, opts)?;
        rows.push((n, eig.lambda1));
    }
    Ok(rows)
}

/// Two-column CSV for a frequency curve.
pub fn frequency_curve_csv(rows: &[(u32, f64)]) -> String {
    let mut out = String::from("n,lambda1\n");
    for (n, l) in rows {
        out.push_str(&format!("{n},{l}\n"));
    }
    out
}

/// Check that a preset realizes its advertised regime on a uniform
/// refuge-free landscape; returns the measured eigenvalue.
pub fn verify_preset(which: Preset) -> Result<f64> {
    let params = coefficients::preset(which);
    let grid = crate::geometry::build_grid(8, 8, 300.0, 300.0)?;
    let mask = refuge_uniform_mask(&grid, 0.0)?;
    let fields = coefficients::assemble_fields(&params, &mask)?;
    let eig = lambda1_vs(&fields, &params, &EigenOptions::default())?;
    let regime = regime_classify(eig.lambda1, DEFAULT_REGIME_TOL);
    let expected = match which {
        Preset::Extinction => Regime::Extinction,
        Preset::Persistence => Regime::Persistence,
    };
    if regime != expected {
        return Err(Error::config(format!(
            "preset `{}` fails its regime check: lambda1 = {} classifies as {:?}",
            which.name(),
            eig.lambda1,
            regime
        )));
    }
    Ok(eig.lambda1)
}

/// Dense symmetric oracle for the pencil `(-sigma B + diag(q)) phi =
/// lambda W phi` on grids of at most `DENSE_ORACLE_MAX_CELLS` cells.
/// Independent of the iterative path: the operator is assembled by probing
/// and handed to a dense symmetric eigensolver.
pub const DENSE_ORACLE_MAX_CELLS: usize = 400;

pub fn dense_principal_eigenvalue(
    stencil: &StencilOperator,
    q: &Field,
    weight: Option<&Field>,
) -> Result<f64> {
    use nalgebra::{DMatrix, SymmetricEigen};
    let grid = *stencil.grid();
    let n = grid.ncells();
    if n > DENSE_ORACLE_MAX_CELLS {
        return Err(Error::config(format!(
            "dense oracle supports at most {DENSE_ORACLE_MAX_CELLS} cells, got {n}"
        )));
    }
    let mut a = DMatrix::zeros(n, n);
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        stencil.apply_sym_slice(&e, &mut out);
        for r in 0..n {
            a[(r, k)] = -out[r];
        }
        a[(k, k)] += q.as_slice()[k];
    }
    // Symmetrize away probing roundoff.
    let a = (&a + a.transpose()) * 0.5;
    let a = match weight {
        None => a,
        Some(w) => {
            let d: Vec<f64> = w.as_slice().iter().map(|v| 1.0 / v.sqrt()).collect();
            DMatrix::from_fn(n, n, |r, c| d[r] * a[(r, c)] * d[c])
        }
    };
    let eig = SymmetricEigen::new(a);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Dense oracle for `lambda1(L_Vs)` on a small grid.
pub fn dense_lambda1_vs(fields: &CoefficientFields, params: &ModelParams) -> Result<f64> {
    let stencil = StencilOperator::laplacian(&fields.grid, params.sigma_v)?;
    dense_principal_eigenvalue(&stencil, &potential_vs(fields, params), None)
}
