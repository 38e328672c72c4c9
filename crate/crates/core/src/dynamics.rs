//! Time integration of the host-vector-predator system.
//!
//! Four coupled fields evolve on the grid:
//!
//! * `I`: infected host tissue, bounded by the host density `H`;
//!   reaction only, `dI/dt = beta_VH (H - I) V_i`
//! * `V_i`, `V_s`: infective and susceptible vectors, diffusing with
//!   `sigma_V`, exchanging through transmission (`beta_HV I V_s`) and
//!   recovery (`alpha V_i`), dying at `d_V`, crowding at `s_V V`, eaten
//!   at `h P`, with all births (`b_V V`) entering the susceptible pool
//! * `P`: predators with ideal-free dispersal toward `r_P`, logistic
//!   growth, and a `gamma h V P` feeding bonus
//!
//! The default scheme treats reactions with forward Euler and diffusion
//! with backward Euler (unconditionally stable); a fully explicit scheme
//! with a CFL guard is available for cross-checks. Runtime monitors track
//! positivity clamping, infection monotonicity, and comparison-principle
//! sup bounds, either warning or aborting on violation.

use crate::coefficients::{self, CoefficientFields, ModelParams};
use crate::error::Error;
use crate::field::Field;
use crate::geometry::{Grid, PatchSpec, RefugeMask};
use crate::operators::{FaceAverage, StencilOperator};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Vector initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VectorIc {
    /// `V_i = vi_scale * layout`, `V_s = vs_scale * layout` where the
    /// layout is a union of density rectangles.
    Patches {
        layout: PatchSpec,
        vi_scale: f64,
        vs_scale: f64,
    },
    /// Spatially uniform populations.
    Uniform { vi: f64, vs: f64 },
}

/// Predator initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PredatorIc {
    /// The ideal-free equilibrium `P = r_P / s_P`.
    Equilibrium,
    /// A spatially uniform density.
    Uniform { p: f64 },
}

/// Complete initial data. Infection always starts at zero: the harvest
/// bounds assume a clean crop at planting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    pub vectors: VectorIc,
    pub predators: PredatorIc,
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Explicit reactions, backward-Euler diffusion. No step restriction.
    SemiImplicit,
    /// Forward Euler throughout; rejected if `dt` violates the CFL bound.
    Explicit,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::SemiImplicit => "semi-implicit",
            Scheme::Explicit => "explicit",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "semi-implicit" => Ok(Scheme::SemiImplicit),
            "explicit" => Ok(Scheme::Explicit),
            other => Err(Error::config(format!(
                "unknown scheme `{other}` (expected `semi-implicit` or `explicit`)"
            ))),
        }
    }
}

/// What to do when a runtime monitor trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitorMode {
    Warn,
    Abort,
}

/// Runtime monitor thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub mode: MonitorMode,
    /// Cumulative clamped mass allowed, relative to the largest integral
    /// the field has attained.
    pub clamp_tol: f64,
    /// Relative slack on the comparison-principle sup bounds.
    pub sup_tol: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            mode: MonitorMode::Warn,
            clamp_tol: 1e-8,
            sup_tol: 1e-6,
        }
    }
}

/// A full simulation description; `run` consumes it by reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: Grid,
    pub params: ModelParams,
    pub mask: RefugeMask,
    pub initial: InitialSpec,
    pub t_end: f64,
    pub n_steps: usize,
    pub scheme: Scheme,
    pub monitor: MonitorConfig,
    /// Times at which to capture full-field snapshots; each is rounded to
    /// the nearest step boundary.
    pub snapshot_times: Vec<f64>,
    /// Record a summary-series row every this many steps (the initial and
    /// final states are always recorded).
    pub series_stride: usize,
}

/// The four prognostic fields plus the running time integral of `V_i`
/// (trapezoidal), which drives the closed-form infection level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub i: Field,
    pub v_i: Field,
    pub v_s: Field,
    pub p: Field,
    pub cum_vi: Field,
}

/// One row of the scalar summary series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub sup_i: f64,
    pub inf_i: f64,
    pub int_i: f64,
    pub sup_vi: f64,
    pub inf_vi: f64,
    pub int_vi: f64,
    pub sup_vs: f64,
    pub inf_vs: f64,
    pub int_vs: f64,
    pub sup_p: f64,
    pub inf_p: f64,
    pub int_p: f64,
}

/// A captured state at a step boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub state: State,
}

/// Monitor outcome for a completed run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    /// Cumulative clamped mass per field, in field units times area:
    /// `[i, v_i, v_s, p]`.
    pub clamped_mass: [f64; 4],
    /// Largest integral each field attained (denominator for the clamp
    /// ratio).
    pub max_integral: [f64; 4],
    /// First few violation messages; `n_warnings` counts all of them.
    pub warnings: Vec<String>,
    pub n_warnings: usize,
}

impl MonitorReport {
    /// Clamped-to-integral ratios per field (zero integrals give zero).
    pub fn clamp_ratios(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for k in 0..4 {
            if self.max_integral[k] > 0.0 {
                out[k] = self.clamped_mass[k] / self.max_integral[k];
            }
        }
        out
    }
}

/// Everything `run` produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dt: f64,
    pub steps: usize,
    pub final_state: State,
    pub series: Vec<SeriesRow>,
    pub snapshots: Vec<Snapshot>,
    pub monitor: MonitorReport,
}

/// Infection level implied by the accumulated vector exposure:
/// `I = H (1 - exp(-beta_VH * cum_Vi))`, the exact solution of the
/// pointwise infection equation given the vector history.
pub fn closed_form_i(host: &Field, beta_vh: f64, cum_vi: &Field) -> Field {
    host.zip_with(cum_vi, |h, c| h * (1.0 - (-beta_vh * c).exp()))
}

/// Least-squares slope of `ln(values)` against `times`; the decay rate of
/// an exponentially shrinking series is the negative of this. Entries that
/// are not strictly positive are skipped; at least two must survive.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::config("decay fit: mismatched series lengths"));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::config(
            "decay fit: need at least two positive samples",
        ));
    }
    let n = pts.len() as f64;
    let st: f64 = pts.iter().map(|(t, _)| t).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let stt: f64 = pts.iter().map(|(t, _)| t * t).sum();
    let sty: f64 = pts.iter().map(|(t, y)| t * y).sum();
    let denom = n * stt - st * st;
    if denom <= 0.0 {
        return Err(Error::config("decay fit: degenerate time samples"));
    }
    Ok((n * sty - st * sy) / denom)
}

/// Build the initial state for a scenario's grid and coefficients.
pub fn initial_state(
    fields: &CoefficientFields,
    params: &ModelParams,
    initial: &InitialSpec,
) -> Result<State> {
    let grid = fields.grid;
    let (v_i, v_s) = match &initial.vectors {
        VectorIc::Patches {
            layout,
            vi_scale,
            vs_scale,
        } => {
            for s in [*vi_scale, *vs_scale] {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::config(format!(
                        "vector initial scale must be nonnegative, got {s}"
                    )));
                }
            }
            let base = crate::geometry::patches_field(&grid, layout)?;
            (base.map(|v| v * vi_scale), base.map(|v| v * vs_scale))
        }
        VectorIc::Uniform { vi, vs } => {
            for s in [*vi, *vs] {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::config(format!(
                        "vector initial density must be nonnegative, got {s}"
                    )));
                }
            }
            (
                Field::constant(grid.nx, grid.ny, *vi),
                Field::constant(grid.nx, grid.ny, *vs),
            )
        }
    };
    let p = match initial.predators {
        PredatorIc::Equilibrium => coefficients::predator_equilibrium(fields, params),
        PredatorIc::Uniform { p } => {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::config(format!(
                    "predator initial density must be nonnegative, got {p}"
                )));
            }
            Field::constant(grid.nx, grid.ny, p)
        }
    };
    Ok(State {
        t: 0.0,
        i: Field::zeros(grid.nx, grid.ny),
        v_i,
        v_s,
        p,
        cum_vi: Field::zeros(grid.nx, grid.ny),
    })
}

struct Monitors {
    config: MonitorConfig,
    /// Comparison-principle ceiling for the total vector density.
    v_bound: f64,
    /// Ceiling for `P / r_P`.
    ptilde_bound: f64,
    report: MonitorReport,
}

const MAX_KEPT_WARNINGS: usize = 16;

impl Monitors {
    fn new(
        config: MonitorConfig,
        state: &State,
        fields: &CoefficientFields,
        params: &ModelParams,
    ) -> Self {
        let v0 = state.v_i.zip_with(&state.v_s, |a, b| a + b);
        let v_bound = v0.sup().max(fields.r_v.sup() / params.s_v);
        let rp_min = fields.r_p.inf();
        let rp_max = fields.r_p.sup();
        let pt0 = state.p.zip_with(&fields.r_p, |p, r| p / r).sup();
        let ptilde_bound =
            pt0.max((params.gamma * params.h * v_bound + rp_max) / (params.s_p * rp_min));
        Monitors {
            config,
            v_bound,
            ptilde_bound,
            report: MonitorReport::default(),
        }
    }

    fn flag(&mut self, message: String) -> Result<()> {
        self.report.n_warnings += 1;
        if self.report.warnings.len() < MAX_KEPT_WARNINGS {
            self.report.warnings.push(message.clone());
        }
        match self.config.mode {
            MonitorMode::Warn => Ok(()),
            MonitorMode::Abort => Err(Error::MonitorAbort(message)),
        }
    }

    /// Clamp `value` into `[lo, hi]`, charging the excess to the field's
    /// clamp account.
    fn clamp(&mut self, field_idx: usize, value: f64, lo: f64, hi: f64, cell_area: f64) -> f64 {
        if value < lo {
            self.report.clamped_mass[field_idx] += (lo - value) * cell_area;
            lo
        } else if value > hi {
            self.report.clamped_mass[field_idx] += (value - hi) * cell_area;
            hi
        } else {
            value
        }
    }

    fn check_step(
        &mut self,
        step: usize,
        state: &State,
        prev_i: &Field,
        fields: &CoefficientFields,
        cell_area: f64,
    ) -> Result<()> {
        let integrals = [
            state.i.integral(cell_area),
            state.v_i.integral(cell_area),
            state.v_s.integral(cell_area),
            state.p.integral(cell_area),
        ];
        for k in 0..4 {
            self.report.max_integral[k] = self.report.max_integral[k].max(integrals[k]);
            if self.report.max_integral[k] > 0.0
                && self.report.clamped_mass[k]
                    > self.config.clamp_tol * self.report.max_integral[k]
            {
                self.flag(format!(
                    "step {step}: clamped mass in field {k} exceeds {:e} of its integral",
                    self.config.clamp_tol
                ))?;
            }
        }

        // Infection stays within [0, H] and never recedes.
        let names = ["i", "v_i", "v_s", "p"];
        for (k, f) in [&state.i, &state.v_i, &state.v_s, &state.p]
            .into_iter()
            .enumerate()
        {
            if f.inf() < 0.0 {
                self.flag(format!(
                    "step {step}: field {} fell below zero ({})",
                    names[k],
                    f.inf()
                ))?;
            }
        }
        let over_h = state.i.zip_with(&fields.host, |i, h| i - h).sup();
        if over_h > 1e-12 * fields.host.sup().max(1.0) {
            self.flag(format!("step {step}: infection exceeds host density by {over_h}"))?;
        }
        let recede = prev_i.zip_with(&state.i, |old, new| old - new).sup();
        if recede > 1e-12 * fields.host.sup().max(1.0) {
            self.flag(format!("step {step}: infection receded by {recede}"))?;
        }

        let v_sup = state.v_i.zip_with(&state.v_s, |a, b| a + b).sup();
        if v_sup > self.v_bound * (1.0 + self.config.sup_tol) {
            self.flag(format!(
                "step {step}: total vectors {v_sup} exceed the comparison bound {}",
                self.v_bound
            ))?;
        }
        let pt_sup = state.p.zip_with(&fields.r_p, |p, r| p / r).sup();
        if pt_sup > self.ptilde_bound * (1.0 + self.config.sup_tol) {
            self.flag(format!(
                "step {step}: P/r_P = {pt_sup} exceeds the comparison bound {}",
                self.ptilde_bound
            ))?;
        }
        Ok(())
    }
}

/// Largest explicit-stable step for the two diffusion operators.
fn explicit_dt_limit(grid: &Grid, params: &ModelParams, fields: &CoefficientFields) -> f64 {
    let inv_h2 = 1.0 / (grid.dx() * grid.dx()) + 1.0 / (grid.dy() * grid.dy());
    let mut limit = f64::INFINITY;
    if params.sigma_v > 0.0 {
        limit = limit.min(1.0 / (2.0 * params.sigma_v * inv_h2));
    }
    if params.sigma_p > 0.0 {
        // The ideal-free stencil divides by r_P, inflating the spectral
        // radius by at most max(r_P) / min(r_P).
        let ratio = fields.r_p.sup() / fields.r_p.inf();
        limit = limit.min(1.0 / (2.0 * params.sigma_p * ratio * inv_h2));
    }
    limit
}

struct Stepper<'a> {
    fields: &'a CoefficientFields,
    params: &'a ModelParams,
    op_v: StencilOperator,
    op_p: StencilOperator,
    scheme: Scheme,
    dt: f64,
    cell_area: f64,
}

impl Stepper<'_> {
    fn step(&self, state: &mut State, monitors: &mut Monitors) -> Result<()> {
        let p = self.params;
        let n = state.i.len();
        let host = self.fields.host.as_slice();
        let r_p = self.fields.r_p.as_slice();
        let b_v = self.fields.b_v.as_slice();
        let dt = self.dt;

        let mut i_new = vec![0.0; n];
        let mut vi_new = vec![0.0; n];
        let mut vs_new = vec![0.0; n];
        let mut p_new = vec![0.0; n];
        {
            let i = state.i.as_slice();
            let vi = state.v_i.as_slice();
            let vs = state.v_s.as_slice();
            let pr = state.p.as_slice();
            for k in 0..n {
                let v = vi[k] + vs[k];
                let transmission = p.beta_hv * i[k] * vs[k];
                let predation = p.h * pr[k];
                i_new[k] = i[k] + dt * p.beta_vh * (host[k] - i[k]) * vi[k];
                vi_new[k] = vi[k]
                    + dt * (transmission
                        - (p.alpha + p.d_v + p.s_v * v + predation) * vi[k]);
                vs_new[k] = vs[k]
                    + dt * (-transmission + p.alpha * vi[k] + b_v[k] * v
                        - (p.d_v + p.s_v * v + predation) * vs[k]);
                p_new[k] = pr[k] + dt * (p.gamma * predation * v + (r_p[k] - p.s_p * pr[k]) * pr[k]);
            }
        }

        if self.scheme == Scheme::Explicit {
            let mut diff = vec![0.0; n];
            self.op_v.apply_sym_slice(state.v_i.as_slice(), &mut diff);
            for k in 0..n {
                vi_new[k] += dt * diff[k];
            }
            self.op_v.apply_sym_slice(state.v_s.as_slice(), &mut diff);
            for k in 0..n {
                vs_new[k] += dt * diff[k];
            }
            let pdiff = self.op_p.apply(&state.p);
            for k in 0..n {
                p_new[k] += dt * pdiff.as_slice()[k];
            }
        }

        for k in 0..n {
            i_new[k] = monitors.clamp(0, i_new[k], 0.0, host[k], self.cell_area);
            vi_new[k] = monitors.clamp(1, vi_new[k], 0.0, f64::INFINITY, self.cell_area);
            vs_new[k] = monitors.clamp(2, vs_new[k], 0.0, f64::INFINITY, self.cell_area);
            p_new[k] = monitors.clamp(3, p_new[k], 0.0, f64::INFINITY, self.cell_area);
        }

        let (nx, ny) = (state.i.nx(), state.i.ny());
        let i_next = Field::from_vec(nx, ny, i_new);
        let (vi_next, vs_next, p_next) = match self.scheme {
            Scheme::Explicit => (
                Field::from_vec(nx, ny, vi_new),
                Field::from_vec(nx, ny, vs_new),
                Field::from_vec(nx, ny, p_new),
            ),
            Scheme::SemiImplicit => (
                self.op_v.solve_implicit(&Field::from_vec(nx, ny, vi_new), dt)?,
                self.op_v.solve_implicit(&Field::from_vec(nx, ny, vs_new), dt)?,
                self.op_p.solve_implicit(&Field::from_vec(nx, ny, p_new), dt)?,
            ),
        };

        // Trapezoidal accumulation of the vector exposure.
        for k in 0..n {
            state.cum_vi.as_mut_slice()[k] +=
                0.5 * dt * (state.v_i.as_slice()[k] + vi_next.as_slice()[k]);
        }
        state.v_i = vi_next;
        state.v_s = vs_next;
        state.p = p_next;
        state.i = i_next;
        Ok(())
    }
}

fn series_row(state: &State, cell_area: f64) -> SeriesRow {
    SeriesRow {
        t: state.t,
        sup_i: state.i.sup(),
        inf_i: state.i.inf(),
        int_i: state.i.integral(cell_area),
        sup_vi: state.v_i.sup(),
        inf_vi: state.v_i.inf(),
        int_vi: state.v_i.integral(cell_area),
        sup_vs: state.v_s.sup(),
        inf_vs: state.v_s.inf(),
        int_vs: state.v_s.integral(cell_area),
        sup_p: state.p.sup(),
        inf_p: state.p.inf(),
        int_p: state.p.integral(cell_area),
    }
}

/// Integrate a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunSummary> {
    if !(scenario.t_end > 0.0 && scenario.t_end.is_finite()) {
        return Err(Error::config(format!(
            "t_end must be positive, got {}",
            scenario.t_end
        )));
    }
    if scenario.n_steps == 0 {
        return Err(Error::config("n_steps must be at least 1"));
    }
    if scenario.series_stride == 0 {
        return Err(Error::config("series_stride must be at least 1"));
    }
    let patched = {
        // Validate through the assembly path, but let either diffusivity be
        // exactly zero: a motionless run is the pointwise reaction system,
        // useful on its own, and the coefficient fields never involve sigma.
        let mut p = scenario.params;
        if p.sigma_v == 0.0 {
            p.sigma_v = 1.0;
        }
        if p.sigma_p == 0.0 {
            p.sigma_p = 1.0;
        }
        p
    };
    let fields = coefficients::assemble_fields(&patched, &scenario.mask)?;
    let params = scenario.params;
    let grid = fields.grid;
    let dt = scenario.t_end / scenario.n_steps as f64;

    if scenario.scheme == Scheme::Explicit {
        let limit = explicit_dt_limit(&grid, &params, &fields);
        if dt > limit {
            return Err(Error::config(format!(
                "explicit scheme violates the CFL bound: dt = {dt} but the \
                 diffusion-stability limit is {limit}; increase n_steps to at \
                 least {}",
                (scenario.t_end / limit).ceil() as u64
            )));
        }
    }

    let mut snap_steps: Vec<usize> = scenario
        .snapshot_times
        .iter()
        .map(|t| {
            if !(t.is_finite() && *t >= 0.0 && *t <= scenario.t_end * (1.0 + 1e-12)) {
                Err(Error::config(format!(
                    "snapshot time {t} outside [0, {}]",
                    scenario.t_end
                )))
            } else {
                Ok(((t / dt).round() as usize).min(scenario.n_steps))
            }
        })
        .collect::<Result<_>>()?;
    snap_steps.sort_unstable();
    snap_steps.dedup();

    let mut state = initial_state(&fields, &params, &scenario.initial)?;
    let mut monitors = Monitors::new(scenario.monitor, &state, &fields, &params);
    let stepper = Stepper {
        fields: &fields,
        params: &params,
        op_v: StencilOperator::laplacian(&grid, params.sigma_v)?,
        op_p: StencilOperator::ideal_free(
            &grid,
            params.sigma_p,
            &fields.r_p,
            FaceAverage::Arithmetic,
        )?,
        scheme: scenario.scheme,
        dt,
        cell_area: grid.cell_area(),
    };

    let mut series = Vec::new();
    let mut snapshots = Vec::new();
    series.push(series_row(&state, grid.cell_area()));
    if snap_steps.first() == Some(&0) {
        snapshots.push(Snapshot {
            t: 0.0,
            step: 0,
            state: state.clone(),
        });
    }

    let mut prev_i = state.i.clone();
    for step in 1..=scenario.n_steps {
        stepper.step(&mut state, &mut monitors)?;
        state.t = dt * step as f64;
        monitors.check_step(step, &state, &prev_i, &fields, grid.cell_area())?;
        prev_i = state.i.clone();

        if step % scenario.series_stride == 0 || step == scenario.n_steps {
            series.push(series_row(&state, grid.cell_area()));
        }
        if snap_steps.binary_search(&step).is_ok() {
            snapshots.push(Snapshot {
                t: state.t,
                step,
                state: state.clone(),
            });
        }
    }

    Ok(RunSummary {
        dt,
        steps: scenario.n_steps,
        final_state: state,
        series,
        snapshots,
        monitor: monitors.report,
    })
}

/// CSV encoding of the summary series, one row per record.
pub fn timeseries_csv(series: &[SeriesRow]) -> String {
    let mut out = String::from(
        "t,sup_i,inf_i,int_i,sup_v_i,inf_v_i,int_v_i,sup_v_s,inf_v_s,int_v_s,sup_p,inf_p,int_p\n",
    );
    for r in series {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.sup_i,
            r.inf_i,
            r.int_i,
            r.sup_vi,
            r.inf_vi,
            r.int_vi,
            r.sup_vs,
            r.inf_vs,
            r.int_vs,
            r.sup_p,
            r.inf_p,
            r.int_p
        )
        .expect("string write cannot fail");
    }
    out
}

/// One scalar field as CSV: a `# nx,ny,lx,ly` header then `ny` rows of
/// `nx` values. Values are printed with shortest-roundtrip formatting, so
/// a read-back is bit exact.
pub fn field_csv(field: &Field, grid: &Grid) -> String {
    let mut out = format!("# {},{},{},{}\n", grid.nx, grid.ny, grid.lx, grid.ly);
    for j in 0..field.ny() {
        for i in 0..field.nx() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{}", field.get(i, j)).expect("string write cannot fail");
        }
        out.push('\n');
    }
    out
}

/// Parse a field CSV produced by `field_csv`; returns the field and its
/// grid.
pub fn parse_field_csv(text: &str) -> Result<(Field, Grid)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::config("field csv: empty input"))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| Error::config("field csv: missing `#` header"))?;
    let parts: Vec<&str> = header.trim().split(',').collect();
    if parts.len() != 4 {
        return Err(Error::config("field csv: header needs nx,ny,lx,ly"));
    }
    let nx: usize = parts[0].trim().parse().map_err(|e| Error::Parse {
        context: "field csv header".into(),
        message: format!("{e}"),
    })?;
    let ny: usize = parts[1].trim().parse().map_err(|e| Error::Parse {
        context: "field csv header".into(),
        message: format!("{e}"),
    })?;
    let lx: f64 = parts[2].trim().parse().map_err(|e| Error::Parse {
        context: "field csv header".into(),
        message: format!("{e}"),
    })?;
    let ly: f64 = parts[3].trim().parse().map_err(|e| Error::Parse {
        context: "field csv header".into(),
        message: format!("{e}"),
    })?;
    let grid = crate::geometry::build_grid(nx, ny, lx, ly)?;
    let mut data = Vec::with_capacity(nx * ny);
    for (j, line) in lines.enumerate() {
        if j >= ny {
            return Err(Error::config("field csv: more rows than the header says"));
        }
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|e| Error::Parse {
                context: format!("field csv row {j}"),
                message: format!("{e}"),
            })?;
            data.push(v);
        }
        if data.len() != (j + 1) * nx {
            return Err(Error::config(format!(
                "field csv: row {j} has {} values, expected {nx}",
                data.len() - j * nx
            )));
        }
    }
    if data.len() != nx * ny {
        return Err(Error::config(format!(
            "field csv: got {} values, expected {}",
            data.len(),
            nx * ny
        )));
    }
    Ok((Field::from_vec(nx, ny, data), grid))
}

/// FNV-1a hash of the canonical parameter text; identifies which
/// parameter set produced a snapshot directory.
pub fn params_hash(params: &ModelParams) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in params.to_text().bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Index file for a snapshot directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub params_hash: String,
    pub fields: Vec<String>,
    /// `(step, t)` per captured snapshot, in file order.
    pub captures: Vec<(usize, f64)>,
}

pub const SNAPSHOT_FIELDS: [&str; 5] = ["i", "v_i", "v_s", "p", "cum_vi"];

fn snapshot_file_name(index: usize, field: &str) -> String {
    format!("snap_{index:04}_{field}.csv")
}

/// Write all snapshots of a run into a directory: one CSV per field per
/// capture plus `manifest.json`.
pub fn write_snapshots(
    dir: &Path,
    snapshots: &[Snapshot],
    grid: &Grid,
    params: &ModelParams,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (idx, snap) in snapshots.iter().enumerate() {
        let fields: [(&str, &Field); 5] = [
            ("i", &snap.state.i),
            ("v_i", &snap.state.v_i),
            ("v_s", &snap.state.v_s),
            ("p", &snap.state.p),
            ("cum_vi", &snap.state.cum_vi),
        ];
        for (name, field) in fields {
            std::fs::write(
                dir.join(snapshot_file_name(idx, name)),
                field_csv(field, grid),
            )?;
        }
    }
    let manifest = SnapshotManifest {
        nx: grid.nx,
        ny: grid.ny,
        lx: grid.lx,
        ly: grid.ly,
        params_hash: params_hash(params),
        fields: SNAPSHOT_FIELDS.iter().map(|s| s.to_string()).collect(),
        captures: snapshots.iter().map(|s| (s.step, s.t)).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Read back a snapshot directory written by `write_snapshots`.
pub fn read_snapshots(dir: &Path) -> Result<(SnapshotManifest, Vec<Snapshot>)> {
    let manifest: SnapshotManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut snapshots = Vec::with_capacity(manifest.captures.len());
    for (idx, (step, t)) in manifest.captures.iter().enumerate() {
        let mut loaded: Vec<Field> = Vec::with_capacity(5);
        for name in SNAPSHOT_FIELDS {
            let text = std::fs::read_to_string(dir.join(snapshot_file_name(idx, name)))?;
            let (field, _) = parse_field_csv(&text)?;
            loaded.push(field);
        }
        let cum_vi = loaded.pop().expect("five fields");
        let p = loaded.pop().expect("five fields");
        let v_s = loaded.pop().expect("five fields");
        let v_i = loaded.pop().expect("five fields");
        let i = loaded.pop().expect("five fields");
        snapshots.push(Snapshot {
            t: *t,
            step: *step,
            state: State {
                t: *t,
                i,
                v_i,
                v_s,
                p,
                cum_vi,
            },
        });
    }
    Ok((manifest, snapshots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{preset, Preset};
    use crate::geometry::{build_grid, refuge_uniform_mask, PatchRect};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn uniform_scenario(
        vi: f64,
        vs: f64,
        t_end: f64,
        n_steps: usize,
        scheme: Scheme,
    ) -> Scenario {
        let grid = build_grid(8, 8, 300.0, 300.0).unwrap();
        let mask = refuge_uniform_mask(&grid, 0.0).unwrap();
        Scenario {
            grid,
            params: preset(Preset::Extinction),
            mask,
            initial: InitialSpec {
                vectors: VectorIc::Uniform { vi, vs },
                predators: PredatorIc::Equilibrium,
            },
            t_end,
            n_steps,
            scheme,
            monitor: MonitorConfig::default(),
            snapshot_times: vec![],
            series_stride: 1,
        }
    }

    /// Scalar forward-Euler reference for spatially uniform data; the PDE
    /// reduces to this exactly because diffusion annihilates constants.
    #[derive(Clone, Copy, Debug)]
    struct ScalarState {
        i: f64,
        vi: f64,
        vs: f64,
        p: f64,
    }

    fn scalar_rhs(s: ScalarState, params: &ModelParams, host: f64, r_p: f64) -> [f64; 4] {
        let v = s.vi + s.vs;
        let b_v = params.r_v_field + params.d_v;
        let transmission = params.beta_hv * s.i * s.vs;
        [
            params.beta_vh * (host - s.i) * s.vi,
            transmission - (params.alpha + params.d_v + params.s_v * v + params.h * s.p) * s.vi,
            -transmission + params.alpha * s.vi + b_v * v
                - (params.d_v + params.s_v * v + params.h * s.p) * s.vs,
            params.gamma * params.h * s.p * v + (r_p - params.s_p * s.p) * s.p,
        ]
    }

    fn scalar_euler(mut s: ScalarState, params: &ModelParams, host: f64, r_p: f64, dt: f64, n: usize) -> ScalarState {
        for _ in 0..n {
            let d = scalar_rhs(s, params, host, r_p);
            s = ScalarState {
                i: s.i + dt * d[0],
                vi: s.vi + dt * d[1],
                vs: s.vs + dt * d[2],
                p: s.p + dt * d[3],
            };
        }
        s
    }

    fn scalar_rk4(mut s: ScalarState, params: &ModelParams, host: f64, r_p: f64, dt: f64, n: usize) -> ScalarState {
        let add = |a: ScalarState, k: [f64; 4], w: f64| ScalarState {
            i: a.i + w * k[0],
            vi: a.vi + w * k[1],
            vs: a.vs + w * k[2],
            p: a.p + w * k[3],
        };
        for _ in 0..n {
            let k1 = scalar_rhs(s, params, host, r_p);
            let k2 = scalar_rhs(add(s, k1, dt / 2.0), params, host, r_p);
            let k3 = scalar_rhs(add(s, k2, dt / 2.0), params, host, r_p);
            let k4 = scalar_rhs(add(s, k3, dt), params, host, r_p);
            s = ScalarState {
                i: s.i + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                vi: s.vi + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                vs: s.vs + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
                p: s.p + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
            };
        }
        s
    }

    #[test]
    fn disease_free_equilibrium_is_preserved() {
        let mut scenario = uniform_scenario(0.0, 0.0, 20.0, 1000, Scheme::SemiImplicit);
        scenario.monitor.mode = MonitorMode::Abort;
        let summary = run(&scenario).unwrap();
        let eq = preset(Preset::Extinction).r_p_field / preset(Preset::Extinction).s_p;
        let drift = summary.final_state.p.map(|v| v - eq).abs_sup();
        assert!(drift <= 1e-10 * eq, "predator drift {drift}");
        assert_eq!(summary.final_state.v_i.sup(), 0.0);
        assert_eq!(summary.final_state.v_s.sup(), 0.0);
        assert_eq!(summary.final_state.i.sup(), 0.0);
    }

    #[test]
    fn uniform_run_matches_scalar_euler_exactly_per_step() {
        // With uniform data the discrete diffusion is exactly zero, so one
        // semi-implicit step must equal one scalar Euler step (the CG solve
        // returns its right-hand side untouched).
        let params = preset(Preset::Extinction);
        let scenario = uniform_scenario(0.3, 1.2, 0.5, 10, Scheme::SemiImplicit);
        let summary = run(&scenario).unwrap();
        let s = scalar_euler(
            ScalarState { i: 0.0, vi: 0.3, vs: 1.2, p: params.r_p_field / params.s_p },
            &params,
            params.h_field,
            params.r_p_field,
            0.05,
            10,
        );
        for (field, want) in [
            (&summary.final_state.i, s.i),
            (&summary.final_state.v_i, s.vi),
            (&summary.final_state.v_s, s.vs),
            (&summary.final_state.p, s.p),
        ] {
            assert_abs_diff_eq!(field.sup(), want, epsilon = 1e-13 * want.abs().max(1.0));
            assert_abs_diff_eq!(field.inf(), want, epsilon = 1e-13 * want.abs().max(1.0));
        }
    }

    #[test]
    fn first_order_convergence_to_reference() {
        let params = preset(Preset::Extinction);
        let reference = scalar_rk4(
            ScalarState { i: 0.0, vi: 0.3, vs: 1.2, p: params.r_p_field / params.s_p },
            &params,
            params.h_field,
            params.r_p_field,
            2.0 / 4096.0,
            4096,
        );
        let mut errors = Vec::new();
        for n in [100usize, 200] {
            let scenario = uniform_scenario(0.3, 1.2, 2.0, n, Scheme::SemiImplicit);
            let got = run(&scenario).unwrap().final_state;
            let err = (got.i.sup() - reference.i).abs()
                + (got.v_i.sup() - reference.vi).abs()
                + (got.v_s.sup() - reference.vs).abs()
                + (got.p.sup() - reference.p).abs();
            errors.push(err);
        }
        let ratio = errors[0] / errors[1];
        assert!(
            (1.7..=2.3).contains(&ratio),
            "halving dt should halve the error, got ratio {ratio} ({errors:?})"
        );
    }

    #[test]
    fn susceptible_only_run_follows_the_logistic_solution() {
        // No infectives, no predators: V = V_s obeys the logistic equation
        // dV/dt = r_V V - s_V V^2 exactly.
        let params = preset(Preset::Extinction);
        let grid = build_grid(8, 8, 300.0, 300.0).unwrap();
        let mask = refuge_uniform_mask(&grid, 0.0).unwrap();
        let scenario = Scenario {
            grid,
            params,
            mask,
            initial: InitialSpec {
                vectors: VectorIc::Uniform { vi: 0.0, vs: 5.0 },
                predators: PredatorIc::Uniform { p: 0.0 },
            },
            t_end: 30.0,
            n_steps: 6000,
            scheme: Scheme::SemiImplicit,
            monitor: MonitorConfig::default(),
            snapshot_times: vec![],
            series_stride: 100,
        };
        let summary = run(&scenario).unwrap();
        let r = params.r_v_field;
        let k = r / params.s_v;
        let v0 = 5.0;
        let exact = k / (1.0 + (k / v0 - 1.0) * (-r * 30.0f64).exp());
        let got = summary.final_state.v_s.sup();
        assert_abs_diff_eq!(got, exact, epsilon = 2e-3 * exact);
        assert_eq!(summary.final_state.v_i.sup(), 0.0);
        assert_eq!(summary.final_state.p.sup(), 0.0);
    }

    #[test]
    fn infection_tracks_the_closed_form() {
        let params = preset(Preset::Extinction);
        let scenario = uniform_scenario(0.5, 1.0, 10.0, 2000, Scheme::SemiImplicit);
        let summary = run(&scenario).unwrap();
        let grid = scenario.grid;
        let host = Field::constant(grid.nx, grid.ny, params.h_field);
        let closed = closed_form_i(&host, params.beta_vh, &summary.final_state.cum_vi);
        let diff = closed
            .zip_with(&summary.final_state.i, |a, b| a - b)
            .abs_sup();
        assert!(
            diff <= 1e-2 * params.h_field,
            "closed-form infection differs by {diff}"
        );
    }

    #[test]
    fn explicit_and_semi_implicit_agree_at_small_dt() {
        let grid = build_grid(10, 10, 300.0, 300.0).unwrap();
        let mask = refuge_uniform_mask(&grid, 0.0).unwrap();
        let layout = PatchSpec::new(vec![PatchRect {
            x0: 60.0,
            y0: 60.0,
            width: 90.0,
            height: 90.0,
            density: 1.0,
        }]);
        let mut scenario = Scenario {
            grid,
            params: preset(Preset::Extinction),
            mask,
            initial: InitialSpec {
                vectors: VectorIc::Patches {
                    layout,
                    vi_scale: 0.4,
                    vs_scale: 1.0,
                },
                predators: PredatorIc::Equilibrium,
            },
            t_end: 2.0,
            n_steps: 2000,
            scheme: Scheme::SemiImplicit,
            monitor: MonitorConfig::default(),
            snapshot_times: vec![],
            series_stride: 2000,
        };
        let semi = run(&scenario).unwrap();
        scenario.scheme = Scheme::Explicit;
        let expl = run(&scenario).unwrap();
        for (a, b) in [
            (&semi.final_state.v_i, &expl.final_state.v_i),
            (&semi.final_state.v_s, &expl.final_state.v_s),
            (&semi.final_state.p, &expl.final_state.p),
            (&semi.final_state.i, &expl.final_state.i),
        ] {
            let scale = a.abs_sup().max(1e-12);
            let diff = a.zip_with(b, |x, y| x - y).abs_sup();
            assert!(
                diff <= 5e-3 * scale,
                "schemes disagree: {diff} vs scale {scale}"
            );
        }
    }

    #[test]
    fn explicit_scheme_rejects_cfl_violations() {
        let scenario = uniform_scenario(0.1, 0.1, 50.0, 10, Scheme::Explicit);
        let err = run(&scenario).unwrap_err();
        assert!(err.is_config(), "expected a config error, got {err}");
        assert!(format!("{err}").contains("CFL"));
    }

    #[test]
    fn monitor_abort_stops_blowups_and_warn_reports_them() {
        // A huge dt makes the explicit reaction overshoot; predators
        // collapse below zero and get clamped en masse.
        let mut scenario = uniform_scenario(20.0, 20.0, 40.0, 4, Scheme::SemiImplicit);
        scenario.initial.predators = PredatorIc::Uniform { p: 400.0 };
        scenario.monitor.mode = MonitorMode::Abort;
        let err = run(&scenario).unwrap_err();
        assert!(matches!(err, Error::MonitorAbort(_)), "got {err}");

        scenario.monitor.mode = MonitorMode::Warn;
        let summary = run(&scenario).unwrap();
        assert!(summary.monitor.n_warnings > 0);
        assert!(!summary.monitor.warnings.is_empty());
    }

    #[test]
    fn series_respects_stride_and_endpoints() {
        let mut scenario = uniform_scenario(0.1, 0.5, 1.0, 10, Scheme::SemiImplicit);
        scenario.series_stride = 3;
        scenario.snapshot_times = vec![0.0, 0.52, 1.0];
        let summary = run(&scenario).unwrap();
        let times: Vec<f64> = summary.series.iter().map(|r| r.t).collect();
        assert_eq!(times.first(), Some(&0.0));
        assert_eq!(times.last(), Some(&1.0));
        // Steps 3, 6, 9 plus the endpoints.
        assert_eq!(summary.series.len(), 5);
        assert_eq!(summary.snapshots.len(), 3);
        assert_eq!(summary.snapshots[0].step, 0);
        assert_eq!(summary.snapshots[1].step, 5);
        assert_eq!(summary.snapshots[2].step, 10);
    }

    #[test]
    fn snapshot_directory_roundtrip_is_bit_exact() {
        let mut scenario = uniform_scenario(0.3, 0.9, 1.0, 10, Scheme::SemiImplicit);
        scenario.snapshot_times = vec![0.0, 0.5, 1.0];
        let summary = run(&scenario).unwrap();
        let dir = std::env::temp_dir().join(format!("snaps_{}", std::process::id()));
        write_snapshots(&dir, &summary.snapshots, &scenario.grid, &scenario.params).unwrap();
        let (manifest, loaded) = read_snapshots(&dir).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(manifest.nx, 8);
        assert_eq!(manifest.captures.len(), 3);
        assert_eq!(manifest.params_hash, params_hash(&scenario.params));
        assert_eq!(loaded.len(), summary.snapshots.len());
        for (a, b) in loaded.iter().zip(&summary.snapshots) {
            assert_eq!(a.state.i, b.state.i);
            assert_eq!(a.state.v_i, b.state.v_i);
            assert_eq!(a.state.v_s, b.state.v_s);
            assert_eq!(a.state.p, b.state.p);
            assert_eq!(a.state.cum_vi, b.state.cum_vi);
        }
    }

    #[test]
    fn field_csv_rejects_malformed_input() {
        assert!(parse_field_csv("").is_err());
        assert!(parse_field_csv("no header\n1,2\n").is_err());
        assert!(parse_field_csv("# 2,2,1.0,1.0\n1,2\n3\n").is_err());
        assert!(parse_field_csv("# 2,2,1.0,1.0\n1,2\n").is_err());
        assert!(parse_field_csv("# 2,2,1.0,1.0\n1,2\n3,x\n").is_err());
    }

    #[test]
    fn timeseries_csv_has_13_columns() {
        let scenario = uniform_scenario(0.1, 0.5, 1.0, 4, Scheme::SemiImplicit);
        let summary = run(&scenario).unwrap();
        let csv = timeseries_csv(&summary.series);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 13);
        for line in lines {
            assert_eq!(line.split(',').count(), 13);
        }
    }

    #[test]
    fn decay_fit_recovers_a_synthetic_rate() {
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.5).collect();
        let values: Vec<f64> = times.iter().map(|t| 3.0 * (-0.37 * t).exp()).collect();
        let slope = fit_decay_rate(&times, &values).unwrap();
        assert_abs_diff_eq!(slope, -0.37, epsilon = 1e-12);
        assert!(fit_decay_rate(&[1.0], &[1.0]).is_err());
        assert!(fit_decay_rate(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_diffusivity_runs_the_pointwise_system() {
        let mut scenario = uniform_scenario(0.3, 1.2, 0.5, 10, Scheme::SemiImplicit);
        scenario.params.sigma_v = 0.0;
        scenario.params.sigma_p = 0.0;
        let got = run(&scenario).unwrap().final_state;
        let params = preset(Preset::Extinction);
        let s = scalar_euler(
            ScalarState { i: 0.0, vi: 0.3, vs: 1.2, p: params.r_p_field / params.s_p },
            &params,
            params.h_field,
            params.r_p_field,
            0.05,
            10,
        );
        assert_abs_diff_eq!(got.v_i.sup(), s.vi, epsilon = 1e-13);
        assert_abs_diff_eq!(got.p.sup(), s.p, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        /// Positivity and the comparison bounds hold along random runs.
        #[test]
        fn invariants_hold_on_random_runs(
            vi in 0.0f64..2.0,
            vs in 0.0f64..4.0,
            steps in 20usize..60,
        ) {
            let mut scenario = uniform_scenario(vi, vs, 5.0, 0, Scheme::SemiImplicit);
            scenario.n_steps = steps;
            scenario.monitor.mode = MonitorMode::Abort;
            let summary = run(&scenario).unwrap();
            let f = &summary.final_state;
            prop_assert!(f.i.inf() >= 0.0);
            prop_assert!(f.v_i.inf() >= 0.0);
            prop_assert!(f.v_s.inf() >= 0.0);
            prop_assert!(f.p.inf() >= 0.0);
            let host = preset(Preset::Extinction).h_field;
            prop_assert!(f.i.sup() <= host * (1.0 + 1e-12));
            prop_assert!(summary.monitor.n_warnings == 0);
        }
    }
}
