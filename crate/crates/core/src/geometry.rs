//! Grids, refuge masks, and patch layouts.
//!
//! The domain is the rectangle `[0, lx] x [0, ly]` split into `nx * ny`
//! cells. Every spatial indicator in this crate (refuge masks, patch
//! layouts) is sampled at cell centers: a cell belongs to a region exactly
//! when its center does. Membership intervals are half-open (`[a, a + w)`),
//! which makes adjacent rectangles partition cells without double counting.

use crate::error::Error;
use crate::field::Field;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Uniform rectangular grid over `[0, lx] x [0, ly]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid {
    #[inline]
    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    #[inline]
    pub fn ncells(&self) -> usize {
        self.nx * self.ny
    }

    /// Center of cell `(i, j)`.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }

    pub fn domain_area(&self) -> f64 {
        self.lx * self.ly
    }
}

/// Validated grid constructor.
///
/// At least two cells per direction are required so the interior stencil is
/// nonempty; side lengths must be positive and finite.
pub fn build_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
    if nx < 2 || ny < 2 {
        return Err(Error::config(format!(
            "grid needs at least 2 cells per direction, got {nx} x {ny}"
        )));
    }
    if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
        return Err(Error::config(format!(
            "grid side lengths must be positive and finite, got {lx} x {ly}"
        )));
    }
    Ok(Grid { nx, ny, lx, ly })
}

/// Refuge indicator (or fraction) per cell, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefugeMask {
    pub grid: Grid,
    pub values: Field,
}

/// Total refuge area `integral of R` over the domain.
pub fn mask_area(mask: &RefugeMask) -> f64 {
    mask.values.integral(mask.grid.cell_area())
}

/// Frequency-family refuge: `n^2` squares of side `sqrt(area) / n`, one
/// anchored at the low corner of each period cell `[m L / n, (m+1) L / n)`.
/// Total area is `area` for every `n`, up to cell-center quantization.
///
/// Requires a square domain (`lx == ly`) and sub-squares no smaller than a
/// grid cell, otherwise the layout cannot be resolved.
pub fn refuge_frequency_mask(grid: &Grid, n: u32, area: f64) -> Result<RefugeMask> {
    if grid.lx != grid.ly {
        return Err(Error::config(format!(
            "frequency masks need a square domain, got {} x {}",
            grid.lx, grid.ly
        )));
    }
    let l = grid.lx;
    if n < 1 {
        return Err(Error::config("frequency n must be at least 1"));
    }
    if !(area > 0.0 && area <= l * l) {
        return Err(Error::config(format!(
            "refuge area must lie in (0, {}], got {area}",
            l * l
        )));
    }
    let side = area.sqrt() / n as f64;
    let h = grid.dx().max(grid.dy());
    if side < h {
        return Err(Error::config(format!(
            "frequency {n} gives sub-squares of side {side} below the cell size {h}; \
             refine the grid or lower the frequency"
        )));
    }
    let period = l / n as f64;
    let in_band = |x: f64| -> bool {
        let u = x - period * (x / period).floor();
        u < side
    };
    let values = Field::from_fn(grid.nx, grid.ny, |i, j| {
        let (x, y) = grid.cell_center(i, j);
        if in_band(x) && in_band(y) {
            1.0
        } else {
            0.0
        }
    });
    Ok(RefugeMask { grid: *grid, values })
}

/// Spatially uniform refuge fraction `r` in `[0, 1]` on every cell.
pub fn refuge_uniform_mask(grid: &Grid, r: f64) -> Result<RefugeMask> {
    if !(0.0..=1.0).contains(&r) || !r.is_finite() {
        return Err(Error::config(format!(
            "uniform refuge fraction must lie in [0, 1], got {r}"
        )));
    }
    Ok(RefugeMask {
        grid: *grid,
        values: Field::constant(grid.nx, grid.ny, r),
    })
}

/// Axis-aligned rectangle with an attached density value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRect {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    pub density: f64,
}

impl PatchRect {
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// A list of rectangles with densities; later entries override earlier ones
/// where rectangles overlap.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub rectangles: Vec<PatchRect>,
}

impl PatchSpec {
    pub fn new(rectangles: Vec<PatchRect>) -> Self {
        PatchSpec { rectangles }
    }

    /// Text form: one rectangle per line, `x0 y0 width height density`,
    /// units meters (density in the caller's units). `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# x0 y0 width height density\n");
        for r in &self.rectangles {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                r.x0, r.y0, r.width, r.height, r.density
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rectangles = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::Parse {
                    context: "patch layout".into(),
                    message: format!(
                        "line {}: expected `x0 y0 width height density`, got `{line}`",
                        lineno + 1
                    ),
                });
            }
            let mut vals = [0.0f64; 5];
            for (k, p) in parts.iter().enumerate() {
                vals[k] = p.parse().map_err(|_| Error::Parse {
                    context: "patch layout".into(),
                    message: format!("line {}: `{p}` is not a number", lineno + 1),
                })?;
            }
            rectangles.push(PatchRect {
                x0: vals[0],
                y0: vals[1],
                width: vals[2],
                height: vals[3],
                density: vals[4],
            });
        }
        Ok(PatchSpec { rectangles })
    }
}

/// Piecewise-constant field from a patch layout; cells outside every
/// rectangle get 0, overlaps resolve to the last-listed rectangle.
pub fn patches_field(grid: &Grid, patches: &PatchSpec) -> Result<Field> {
    for (k, r) in patches.rectangles.iter().enumerate() {
        if !(r.width > 0.0 && r.height > 0.0) {
            return Err(Error::config(format!(
                "patch {k}: width and height must be positive"
            )));
        }
        if r.x0 < 0.0 || r.y0 < 0.0 || r.x0 + r.width > grid.lx || r.y0 + r.height > grid.ly {
            return Err(Error::config(format!(
                "patch {k} escapes the domain [0, {}] x [0, {}]",
                grid.lx, grid.ly
            )));
        }
        if !(r.density >= 0.0 && r.density.is_finite()) {
            return Err(Error::config(format!(
                "patch {k}: density must be finite and nonnegative, got {}",
                r.density
            )));
        }
    }
    Ok(Field::from_fn(grid.nx, grid.ny, |i, j| {
        let (x, y) = grid.cell_center(i, j);
        let mut v = 0.0;
        for r in &patches.rectangles {
            if r.contains(x, y) {
                v = r.density;
            }
        }
        v
    }))
}
