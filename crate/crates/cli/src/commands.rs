//! The six subcommands. Each one writes its artifacts plus a
//! `config.resolved.json` sidecar into the output directory and prints a
//! one-line summary on stdout.

use std::fmt::Write as _;
use std::path::Path;

use refugesim::analysis;
use refugesim::coefficients::{self, CoefficientFields, ModelParams};
use refugesim::control;
use refugesim::dynamics::{self, RunSummary};
use refugesim::error::Error;
use refugesim::Result;
use refugesim::field::Field;
use refugesim::geometry::RefugeMask;
use refugesim::operators::{FaceAverage, StencilOperator};
use refugesim::spectral::{self, EigenOptions};

use crate::config::ResolvedConfig;
use crate::pgm;

/// Coefficient fields for analysis of a possibly diffusion-free config.
/// Parameter validation insists on positive diffusivities, which the
/// coefficient fields themselves never use, so validate with them patched
/// to 1 (`dynamics::run` applies the same convention).
fn assemble_for_analysis(params: &ModelParams, mask: &RefugeMask) -> Result<CoefficientFields> {
    let mut patched = *params;
    if patched.sigma_v == 0.0 {
        patched.sigma_v = 1.0;
    }
    if patched.sigma_p == 0.0 {
        patched.sigma_p = 1.0;
    }
    coefficients::assemble_fields(&patched, mask)
}

fn write_sidecar(cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.resolved.json"), cfg.to_json()?)?;
    Ok(())
}

/// Decay rate of `sup V_i` fitted over the second half of the series;
/// `None` when the vectors are not decaying (matches the sweep cells).
fn fitted_decay(run: &RunSummary) -> Option<f64> {
    let times: Vec<f64> = run.series.iter().map(|r| r.t).collect();
    let sups: Vec<f64> = run.series.iter().map(|r| r.sup_vi).collect();
    let tail = times.len() / 2;
    dynamics::fit_decay_rate(&times[tail..], &sups[tail..])
        .ok()
        .and_then(|slope| (slope < 0.0).then_some(-slope))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "none".into(),
    }
}

fn regime_name(r: spectral::Regime) -> &'static str {
    match r {
        spectral::Regime::Extinction => "extinction",
        spectral::Regime::Persistence => "persistence",
        spectral::Regime::Marginal => "marginal",
    }
}

/// Run the configured scenario; write series, snapshots, and a harvest and
/// regime report.
pub fn cmd_simulate(cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    write_sidecar(cfg, out)?;
    let scenario = cfg.scenario()?;
    let fields = assemble_for_analysis(&cfg.params, &scenario.mask)?;
    let eig = spectral::lambda1_vs(&fields, &cfg.params, &EigenOptions::default())?;
    let regime = spectral::regime_classify(eig.lambda1, spectral::DEFAULT_REGIME_TOL);

    let run = dynamics::run(&scenario)?;
    std::fs::write(out.join("timeseries.csv"), dynamics::timeseries_csv(&run.series))?;
    if !run.snapshots.is_empty() {
        dynamics::write_snapshots(&out.join("snapshots"), &run.snapshots, &scenario.grid, &cfg.params)?;
    }

    let decay = fitted_decay(&run);
    let report = analysis::harvest(&run.final_state, &fields, &cfg.params, decay);
    let sup_v0 = {
        let init = dynamics::initial_state(&fields, &cfg.params, &scenario.initial)?;
        init.v_i.zip_with(&init.v_s, |a, b| a + b).sup()
    };
    let sup_v_final = run
        .final_state
        .v_i
        .zip_with(&run.final_state.v_s, |a, b| a + b)
        .sup();
    let reduction = if sup_v0 > 0.0 {
        (sup_v0 - sup_v_final) / sup_v0
    } else {
        0.0
    };
    let clamp_max = run
        .monitor
        .clamp_ratios()
        .into_iter()
        .fold(0.0_f64, f64::max);

    let mut txt = String::new();
    let _ = writeln!(txt, "lambda1_vs = {}", eig.lambda1);
    let _ = writeln!(txt, "regime = {}", regime_name(regime));
    let _ = writeln!(txt, "harvest = {}", report.harvest);
    let _ = writeln!(txt, "total_hosts = {}", report.total_hosts);
    let _ = writeln!(txt, "healthy_fraction = {}", report.ratio);
    let _ = writeln!(txt, "sup_vi_final = {}", report.sup_vi);
    let _ = writeln!(txt, "tail_bound = {}", report.tail_bound);
    let _ = writeln!(txt, "fitted_decay = {}", fmt_opt(decay));
    let _ = writeln!(txt, "sup_v_initial = {sup_v0}");
    let _ = writeln!(txt, "sup_v_final = {sup_v_final}");
    let _ = writeln!(txt, "sup_v_reduction = {reduction}");
    let _ = writeln!(txt, "monitor_warnings = {}", run.monitor.n_warnings);
    let _ = writeln!(txt, "clamp_ratio_max = {clamp_max}");
    std::fs::write(out.join("report.txt"), &txt)?;

    println!(
        "simulate: {} steps, lambda1 = {:.6}, regime {}, healthy fraction {:.6}",
        run.steps,
        eig.lambda1,
        regime_name(regime),
        report.ratio
    );
    Ok(())
}

/// Principal eigenvalues of the three linearized operators plus the regime
/// verdict; optionally cross-checked against the dense oracle.
pub fn cmd_eig(cfg: &ResolvedConfig, out: &Path, oracle: bool) -> Result<()> {
    write_sidecar(cfg, out)?;
    let mask = cfg.mask()?;
    let fields = assemble_for_analysis(&cfg.params, &mask)?;
    let params = &cfg.params;
    let opts = EigenOptions::default();
    if oracle && fields.grid.ncells() > spectral::DENSE_ORACLE_MAX_CELLS {
        return Err(Error::config(format!(
            "--oracle runs a dense eigensolver, limited to {} cells; this grid has {}",
            spectral::DENSE_ORACLE_MAX_CELLS,
            fields.grid.ncells()
        )));
    }

    let vs = spectral::lambda1_vs(&fields, params, &opts)?;
    let vi = spectral::lambda1_vi(&fields, params, &opts)?;
    let p = spectral::lambda1_p(&fields, params, &opts)?;
    let regime = spectral::regime_classify(vs.lambda1, spectral::DEFAULT_REGIME_TOL);

    let dense: [Option<f64>; 3] = if oracle {
        let grid = fields.grid;
        let lap = StencilOperator::laplacian(&grid, params.sigma_v)?;
        let d_vs = spectral::dense_principal_eigenvalue(&lap, &spectral::potential_vs(&fields, params), None)?;
        let d_vi = spectral::dense_principal_eigenvalue(&lap, &spectral::potential_vi(&fields, params), None)?;
        let ideal = StencilOperator::ideal_free(&grid, params.sigma_p, &fields.r_p, FaceAverage::Arithmetic)?;
        let q = fields.r_p.zip_with(&fields.r_p, |a, b| a * b);
        let d_p = spectral::dense_principal_eigenvalue(&ideal, &q, Some(&fields.r_p))?;
        [Some(d_vs), Some(d_vi), Some(d_p)]
    } else {
        [None, None, None]
    };

    let mut csv = String::from("operator,lambda1,iterations,residual,oracle_lambda1,oracle_diff\n");
    for (name, res, d) in [
        ("L_Vs", &vs, dense[0]),
        ("L_Vi", &vi, dense[1]),
        ("L_P", &p, dense[2]),
    ] {
        let (oracle_s, diff_s) = match d {
            Some(dv) => (format!("{dv}"), format!("{}", (res.lambda1 - dv).abs())),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            csv,
            "{name},{},{},{},{oracle_s},{diff_s}",
            res.lambda1, res.iterations, res.residual
        );
    }
    std::fs::write(out.join("eig.csv"), &csv)?;
    let verdict = format!(
        "regime = {}\nlambda1_vs = {}\ntol = {}\n",
        regime_name(regime),
        vs.lambda1,
        spectral::DEFAULT_REGIME_TOL
    );
    std::fs::write(out.join("regime.txt"), verdict)?;

    println!(
        "eig: lambda1(L_Vs) = {:.8}, lambda1(L_Vi) = {:.8}, lambda1(L_P) = {:.8}, regime {}",
        vs.lambda1,
        vi.lambda1,
        p.lambda1,
        regime_name(regime)
    );
    Ok(())
}

/// Shared tail of the two sweep commands.
fn finish_sweep(table: &control::SweepTable, out: &Path) -> Result<()> {
    std::fs::write(out.join("sweep.csv"), control::sweep_csv(table))?;
    std::fs::write(out.join("sweep.json"), control::sweep_json(table)?)?;
    let failed = table
        .rows
        .iter()
        .filter(|r| r.status != control::RowStatus::Ok)
        .count();
    println!(
        "sweep: {} rows ({failed} failed), argmax {} = {}",
        table.rows.len(),
        table.axis_name,
        fmt_opt(table.argmax)
    );
    Ok(())
}

pub fn cmd_sweep_frequency(cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    write_sidecar(cfg, out)?;
    let spec = cfg.sweep_spec(true)?;
    let table = control::sweep_frequency(&spec)?;
    finish_sweep(&table, out)
}

pub fn cmd_sweep_quantity(cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    write_sidecar(cfg, out)?;
    let spec = cfg.sweep_spec(false)?;
    let table = control::sweep_quantity(&spec)?;
    finish_sweep(&table, out)
}

/// Rigorous healthy-fraction sandwich for the configured initial data.
pub fn cmd_bounds(cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    write_sidecar(cfg, out)?;
    let mask = cfg.mask()?;
    let fields = assemble_for_analysis(&cfg.params, &mask)?;
    let scenario = cfg.scenario()?;
    let init = dynamics::initial_state(&fields, &cfg.params, &scenario.initial)?;
    let v0_sup = init.v_i.zip_with(&init.v_s, |a, b| a + b).sup();
    let vi0_inf = init.v_i.inf();
    let bounds = analysis::corollary_bounds(
        &fields,
        &cfg.params,
        v0_sup,
        vi0_inf,
        cfg.eps,
        &EigenOptions::default(),
    )?;

    let mut txt = String::new();
    let _ = writeln!(txt, "lower = {}", bounds.lower);
    let _ = writeln!(txt, "upper = {}", bounds.upper);
    let _ = writeln!(txt, "lambda1_vs = {}", bounds.lambda1_vs);
    let _ = writeln!(txt, "lambda1_vi = {}", bounds.lambda1_vi);
    let _ = writeln!(txt, "max_phi_s = {}", bounds.max_phi_s);
    let _ = writeln!(txt, "min_phi_i = {}", bounds.min_phi_i);
    let _ = writeln!(txt, "eps = {}", bounds.eps);
    let _ = writeln!(txt, "decay_rate = {}", bounds.decay_rate);
    let _ = writeln!(txt, "lambda_i_eff = {}", bounds.lambda_i_eff);
    let _ = writeln!(txt, "v0_sup = {v0_sup}");
    let _ = writeln!(txt, "vi0_inf = {vi0_inf}");
    std::fs::write(out.join("bounds.txt"), &txt)?;

    println!(
        "bounds: healthy fraction in [{:.6}, {:.6}] (eps = {:.4})",
        bounds.lower, bounds.upper, bounds.eps
    );
    Ok(())
}

/// Render every captured field of a snapshot directory as PGM images with
/// a caption file recording the grayscale ranges.
pub fn cmd_render(snapshots: &Path, out: &Path) -> Result<()> {
    let (manifest, snaps) = dynamics::read_snapshots(snapshots)?;
    std::fs::create_dir_all(out)?;
    let mut captions = String::new();
    let mut count = 0usize;
    for (idx, snap) in snaps.iter().enumerate() {
        let named: [(&str, &Field); 5] = [
            ("i", &snap.state.i),
            ("v_i", &snap.state.v_i),
            ("v_s", &snap.state.v_s),
            ("p", &snap.state.p),
            ("cum_vi", &snap.state.cum_vi),
        ];
        for (name, field) in named {
            let file = format!("snap_{idx:04}_{name}.pgm");
            let (min, max) = pgm::write(&out.join(&file), field)?;
            let _ = writeln!(
                captions,
                "{file} field={name} step={} t={} min={min} max={max}",
                snap.step, snap.t
            );
            count += 1;
        }
    }
    std::fs::write(out.join("captions.txt"), &captions)?;
    println!(
        "render: {count} images from {} captures ({} x {} cells)",
        snaps.len(),
        manifest.nx,
        manifest.ny
    );
    Ok(())
}
