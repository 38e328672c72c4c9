//! Run configuration: a small key=value text format for humans plus a
//! fully resolved JSON form that every command echoes next to its outputs.
//!
//! The resolved form is self-contained: presets are expanded to explicit
//! parameters, patch layout files are inlined as rectangle lists, and every
//! default is materialized. Re-running a command from the sidecar therefore
//! reproduces the original outputs byte for byte, with no dependence on the
//! files the original run read.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use refugesim::coefficients::{self, ModelParams, Preset};
use refugesim::control::{SweepAxis, SweepIc, SweepSpec};
use refugesim::dynamics::{
    InitialSpec, MonitorConfig, MonitorMode, PredatorIc, Scenario, Scheme, VectorIc,
};
use refugesim::error::Error;
use refugesim::Result;
use refugesim::geometry::{self, PatchSpec, RefugeMask};
use refugesim::spectral;

/// Refuge layout selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RefugeConfig {
    /// No refuges anywhere (uniform zero mask).
    None,
    /// The whole domain carries refuge fraction `r` in `[0, 1)`.
    Uniform { r: f64 },
    /// Square-lattice family: `n^2` squares of total area `area`.
    Frequency { n: u32, area: f64 },
}

/// Sweep axis in resolved form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepAxisConfig {
    Frequency { ns: Vec<u32>, area: f64 },
    Quantity { rs: Vec<f64> },
}

/// Sweep description in resolved form: the axis plus the per-cell initial
/// condition (patch layouts inlined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxisConfig,
    pub ic: SweepIc,
}

/// Everything a command needs, defaults materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub t_end: f64,
    /// Derived `t_end / n_steps`; informational. `n_steps` is authoritative.
    pub dt: f64,
    pub n_steps: usize,
    pub scheme: Scheme,
    pub monitor: MonitorMode,
    /// Name of the preset the parameters came from, if any.
    pub preset: Option<String>,
    pub params: ModelParams,
    pub refuge: RefugeConfig,
    pub ic_vectors: VectorIc,
    pub ic_predators: PredatorIc,
    pub snapshot_times: Vec<f64>,
    pub series_stride: usize,
    /// Perturbation budget for the harvest bounds; `None` means the
    /// analysis default `0.5 lambda1(L_Vs) / h`.
    pub eps: Option<f64>,
    pub sweep: Option<SweepConfig>,
}

const CONFIG_KEYS: [&str; 17] = [
    "preset",
    "params_file",
    "nx",
    "ny",
    "lx",
    "ly",
    "t_end",
    "dt",
    "scheme",
    "monitor",
    "refuge",
    "ic_vectors",
    "ic_predators",
    "snapshots",
    "series_stride",
    "eps",
    "sweep_ic",
];
const SWEEP_KEYS: [&str; 3] = ["sweep_ns", "sweep_area", "sweep_rs"];

/// Parse `key = value` lines. `#` starts a comment, blank lines are
/// skipped, duplicate keys are rejected.
fn parse_kv(text: &str, context: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            context: context.to_string(),
            message: format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(Error::Parse {
                context: context.to_string(),
                message: format!("duplicate key `{key}`"),
            });
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| Error::Parse {
        context: "config".into(),
        message: format!("key `{key}`: `{value}` is not a number"),
    })
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse::<usize>().map_err(|_| Error::Parse {
        context: "config".into(),
        message: format!("key `{key}`: `{value}` is not a nonnegative integer"),
    })
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

fn parse_u32_list(key: &str, value: &str) -> Result<Vec<u32>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>().map_err(|_| Error::Parse {
                context: "config".into(),
                message: format!("key `{key}`: `{s}` is not a frequency"),
            })
        })
        .collect()
}

fn load_patches(dir: &Path, rel: &str) -> Result<PatchSpec> {
    let path = dir.join(rel);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::config(format!("cannot read patch layout `{}`: {e}", path.display()))
    })?;
    PatchSpec::from_text(&text)
}

/// `uniform:VI:VS` or `patches:PATH:VI_SCALE:VS_SCALE`; paths are relative
/// to the config file's directory.
fn parse_vector_ic(value: &str, dir: &Path) -> Result<VectorIc> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    match parts.as_slice() {
        ["uniform", vi, vs] => Ok(VectorIc::Uniform {
            vi: parse_f64("ic_vectors", vi)?,
            vs: parse_f64("ic_vectors", vs)?,
        }),
        ["patches", path, vi, vs] => Ok(VectorIc::Patches {
            layout: load_patches(dir, path)?,
            vi_scale: parse_f64("ic_vectors", vi)?,
            vs_scale: parse_f64("ic_vectors", vs)?,
        }),
        _ => Err(Error::config(format!(
            "ic_vectors must be `uniform:VI:VS` or `patches:PATH:VI:VS`, got `{value}`"
        ))),
    }
}

fn parse_predator_ic(value: &str) -> Result<PredatorIc> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    match parts.as_slice() {
        ["equilibrium"] => Ok(PredatorIc::Equilibrium),
        ["uniform", p] => Ok(PredatorIc::Uniform {
            p: parse_f64("ic_predators", p)?,
        }),
        _ => Err(Error::config(format!(
            "ic_predators must be `equilibrium` or `uniform:P`, got `{value}`"
        ))),
    }
}

fn parse_refuge(value: &str) -> Result<RefugeConfig> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    match parts.as_slice() {
        ["none"] => Ok(RefugeConfig::None),
        ["uniform", r] => Ok(RefugeConfig::Uniform {
            r: parse_f64("refuge", r)?,
        }),
        ["frequency", n, area] => Ok(RefugeConfig::Frequency {
            n: n.parse::<u32>().map_err(|_| {
                Error::config(format!("refuge frequency `{n}` is not an integer"))
            })?,
            area: parse_f64("refuge", area)?,
        }),
        _ => Err(Error::config(format!(
            "refuge must be `none`, `uniform:R`, or `frequency:N:AREA`, got `{value}`"
        ))),
    }
}

/// `uniform:VI:VS`, `patches:PATH:VI:VS`, or `centered:VI:VS`.
fn parse_sweep_ic(value: &str, dir: &Path) -> Result<SweepIc> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    match parts.as_slice() {
        ["uniform", vi, vs] => Ok(SweepIc::Uniform {
            vi: parse_f64("sweep_ic", vi)?,
            vs: parse_f64("sweep_ic", vs)?,
        }),
        ["centered", vi, vs] => Ok(SweepIc::CenteredPatch {
            vi_scale: parse_f64("sweep_ic", vi)?,
            vs_scale: parse_f64("sweep_ic", vs)?,
        }),
        ["patches", path, vi, vs] => Ok(SweepIc::RandomPatches {
            layout: load_patches(dir, path)?,
            vi_scale: parse_f64("sweep_ic", vi)?,
            vs_scale: parse_f64("sweep_ic", vs)?,
        }),
        _ => Err(Error::config(format!(
            "sweep_ic must be `uniform:VI:VS`, `patches:PATH:VI:VS`, or `centered:VI:VS`, got `{value}`"
        ))),
    }
}

/// Load a config: `.json` files are resolved sidecars, anything else is
/// the key=value format.
pub fn load_config(path: &Path) -> Result<ResolvedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config `{}`: {e}", path.display())))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<ResolvedConfig>(&text)?
    } else {
        let dir = path.parent().map(PathBuf::from).unwrap_or_default();
        from_text(&text, &dir)?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Build a resolved config from key=value text. `dir` anchors relative
/// paths (the config file's directory).
pub fn from_text(text: &str, dir: &Path) -> Result<ResolvedConfig> {
    let pairs = parse_kv(text, "config")?;
    for (key, _) in &pairs {
        if !CONFIG_KEYS.contains(&key.as_str()) && !SWEEP_KEYS.contains(&key.as_str()) {
            return Err(Error::UnknownKey {
                key: key.clone(),
                context: "config".into(),
            });
        }
    }
    let get = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());

    let (preset, params) = match (get("preset"), get("params_file")) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "give either `preset` or `params_file`, not both",
            ));
        }
        (Some(name), None) => {
            let which = Preset::from_name(name)?;
            // A preset claims a regime; prove it on a coarse landscape
            // before letting the run proceed.
            spectral::verify_preset(which)?;
            (Some(name.to_string()), coefficients::preset(which))
        }
        (None, Some(rel)) => {
            let path = dir.join(rel);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Error::config(format!("cannot read params `{}`: {e}", path.display()))
            })?;
            (None, ModelParams::from_text(&text)?)
        }
        (None, None) => {
            return Err(Error::MissingKey {
                key: "preset".into(),
                context: "config (or `params_file`)".into(),
            });
        }
    };

    let nx = get("nx").map(|v| parse_usize("nx", v)).transpose()?.unwrap_or(80);
    let ny = get("ny").map(|v| parse_usize("ny", v)).transpose()?.unwrap_or(80);
    let lx = get("lx").map(|v| parse_f64("lx", v)).transpose()?.unwrap_or(300.0);
    let ly = get("ly").map(|v| parse_f64("ly", v)).transpose()?.unwrap_or(300.0);
    let t_end = get("t_end")
        .map(|v| parse_f64("t_end", v))
        .transpose()?
        .unwrap_or(91.25);
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::config(format!("t_end must be positive, got {t_end}")));
    }
    let dt = get("dt")
        .map(|v| parse_f64("dt", v))
        .transpose()?
        .unwrap_or(t_end / 4000.0);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("dt must be positive, got {dt}")));
    }
    let n_steps = (t_end / dt).round().max(1.0) as usize;

    let scheme = match get("scheme") {
        None => Scheme::SemiImplicit,
        Some(name) => Scheme::from_name(name)?,
    };
    let monitor = match get("monitor") {
        None | Some("warn") => MonitorMode::Warn,
        Some("abort") => MonitorMode::Abort,
        Some(other) => {
            return Err(Error::config(format!(
                "monitor must be `warn` or `abort`, got `{other}`"
            )));
        }
    };
    let refuge = match get("refuge") {
        None => RefugeConfig::None,
        Some(v) => parse_refuge(v)?,
    };
    let ic_vectors = match get("ic_vectors") {
        None => VectorIc::Uniform { vi: 0.0, vs: 0.0 },
        Some(v) => parse_vector_ic(v, dir)?,
    };
    let ic_predators = match get("ic_predators") {
        None => PredatorIc::Equilibrium,
        Some(v) => parse_predator_ic(v)?,
    };
    let snapshot_times = match get("snapshots") {
        None => vec![0.0, t_end],
        Some("none") => Vec::new(),
        Some(v) => parse_f64_list("snapshots", v)?,
    };
    let series_stride = get("series_stride")
        .map(|v| parse_usize("series_stride", v))
        .transpose()?
        .unwrap_or(10)
        .max(1);
    let eps = get("eps").map(|v| parse_f64("eps", v)).transpose()?;

    let sweep_ns = get("sweep_ns").map(|v| parse_u32_list("sweep_ns", v)).transpose()?;
    let sweep_area = get("sweep_area").map(|v| parse_f64("sweep_area", v)).transpose()?;
    let sweep_rs = get("sweep_rs").map(|v| parse_f64_list("sweep_rs", v)).transpose()?;
    let axis = match (sweep_ns, sweep_rs) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "give either `sweep_ns` (frequency axis) or `sweep_rs` (quantity axis), not both",
            ));
        }
        (Some(ns), None) => {
            let area = sweep_area.ok_or_else(|| Error::MissingKey {
                key: "sweep_area".into(),
                context: "config (frequency sweep)".into(),
            })?;
            Some(SweepAxisConfig::Frequency { ns, area })
        }
        (None, Some(rs)) => {
            if sweep_area.is_some() {
                return Err(Error::config("`sweep_area` only applies to a frequency sweep"));
            }
            Some(SweepAxisConfig::Quantity { rs })
        }
        (None, None) => {
            if sweep_area.is_some() {
                return Err(Error::config("`sweep_area` needs `sweep_ns`"));
            }
            None
        }
    };
    let sweep = match (axis, get("sweep_ic")) {
        (Some(axis), ic) => Some(SweepConfig {
            axis,
            ic: match ic {
                None => SweepIc::Uniform { vi: 0.0, vs: 0.0 },
                Some(v) => parse_sweep_ic(v, dir)?,
            },
        }),
        (None, Some(_)) => {
            return Err(Error::config("`sweep_ic` needs a sweep axis (`sweep_ns` or `sweep_rs`)"));
        }
        (None, None) => None,
    };

    Ok(ResolvedConfig {
        nx,
        ny,
        lx,
        ly,
        t_end,
        dt: t_end / n_steps as f64,
        n_steps,
        scheme,
        monitor,
        preset,
        params,
        refuge,
        ic_vectors,
        ic_predators,
        snapshot_times,
        series_stride,
        eps,
        sweep,
    })
}

impl ResolvedConfig {
    /// Re-check the invariants; loading from a hand-edited sidecar must be
    /// as safe as loading the text format.
    pub fn validate(&self) -> Result<()> {
        geometry::build_grid(self.nx, self.ny, self.lx, self.ly)?;
        self.params.validate()?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps must be at least 1"));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::config(format!("eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }

    /// Apply command-line overrides on top of the file config.
    pub fn apply_overrides(&mut self, preset: Option<&str>, scheme: Option<&str>) -> Result<()> {
        if let Some(name) = preset {
            let which = Preset::from_name(name)?;
            spectral::verify_preset(which)?;
            self.preset = Some(name.to_string());
            self.params = coefficients::preset(which);
        }
        if let Some(name) = scheme {
            // Accept the short form used by the flag's value set.
            self.scheme = match name {
                "semi" => Scheme::SemiImplicit,
                other => Scheme::from_name(other)?,
            };
        }
        Ok(())
    }

    /// The refuge mask this config describes.
    pub fn mask(&self) -> Result<RefugeMask> {
        let grid = geometry::build_grid(self.nx, self.ny, self.lx, self.ly)?;
        match self.refuge {
            RefugeConfig::None => geometry::refuge_uniform_mask(&grid, 0.0),
            RefugeConfig::Uniform { r } => geometry::refuge_uniform_mask(&grid, r),
            RefugeConfig::Frequency { n, area } => geometry::refuge_frequency_mask(&grid, n, area),
        }
    }

    /// The scenario this config describes.
    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario {
            grid: geometry::build_grid(self.nx, self.ny, self.lx, self.ly)?,
            params: self.params,
            mask: self.mask()?,
            initial: InitialSpec {
                vectors: self.ic_vectors.clone(),
                predators: self.ic_predators,
            },
            t_end: self.t_end,
            n_steps: self.n_steps,
            scheme: self.scheme,
            monitor: MonitorConfig {
                mode: self.monitor,
                ..MonitorConfig::default()
            },
            snapshot_times: self.snapshot_times.clone(),
            series_stride: self.series_stride,
        })
    }

    /// The sweep this config describes, or a config error if the axis kind
    /// does not match the subcommand.
    pub fn sweep_spec(&self, want_frequency: bool) -> Result<SweepSpec> {
        let sweep = self.sweep.as_ref().ok_or_else(|| {
            Error::config("this command needs sweep keys (`sweep_ns`/`sweep_area` or `sweep_rs`)")
        })?;
        let axis = match (&sweep.axis, want_frequency) {
            (SweepAxisConfig::Frequency { ns, area }, true) => SweepAxis::Frequency {
                n_values: ns.clone(),
                area: *area,
            },
            (SweepAxisConfig::Quantity { rs }, false) => SweepAxis::Quantity { r_values: rs.clone() },
            (SweepAxisConfig::Frequency { .. }, false) => {
                return Err(Error::config(
                    "config defines a frequency axis; use `sweep-frequency`",
                ));
            }
            (SweepAxisConfig::Quantity { .. }, true) => {
                return Err(Error::config(
                    "config defines a quantity axis; use `sweep-quantity`",
                ));
            }
        };
        let mut base = self.scenario()?;
        // Sweeps do not capture fields; the per-cell series is enough.
        base.snapshot_times = Vec::new();
        Ok(SweepSpec {
            base,
            axis,
            ic: sweep.ic.clone(),
        })
    }

    /// Pretty JSON for the sidecar; stable field order, trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
