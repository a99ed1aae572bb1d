//! Run configuration, CSV output and the run driver behind the CLI.
//!
//! Config files are TOML. A minimal file only names the device:
//!
//! ```toml
//! device = "diode400"
//! ```
//!
//! Everything else falls back to the preset: the published grid, `rk2` for
//! the diodes and `euler` for the MOSFET, the scheme's default CFL number and
//! the preset's end time (5.0, 3.0, 0.5). A full file:
//!
//! ```toml
//! device = "diode50"        # or a [device] table with kind = "diode" | "mosfet"
//! scheme = "rk2"
//! cfl = 0.2
//! t_end = 3.0
//! w_max = 40.0
//! out_dir = "out/diode50"
//!
//! [grid]
//! resolution = "paper"      # or "ci"
//! x = [[0.0, 0.1, 0.01], [0.1, 0.25, 0.005]]   # (start, end, width) segments
//! mu = [[-1.0, 0.0, 0.2], [0.0, 1.0, 0.1]]
//! nw = 60
//!
//! [model]
//! x_boundary = "contact"    # contact | specular | zero_inflow
//! y_boundary = "specular"
//! transport = true
//! collision = true
//!
//! [output]
//! snapshots = [1.0, 2.0]
//! slices = [0.1, 0.125, 0.15]     # x0 (1D) ...
//! slices_xy = [[0.075, 0.06]]     # ... or (x0, y0) (2D)
//! cartesian = true
//! log_every = 100
//! checkpoint = false
//! ```
//!
//! A MOSFET grid is given as a `[grid.mosfet]` table with the fields of
//! [`MosfetMeshSpec`].

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{write_checkpoint, Layout};
use crate::constants::{default_silicon, ConversionFactors, DimensionlessConstants};
use crate::device::{Device, DeviceSpec, XBoundary, YBoundary};
use crate::mesh::{DiodeMeshSpec, MosfetMeshSpec, PhaseGrid, Preset, Resolution, DEFAULT_W_MAX};
use crate::moments::MacroField;
use crate::quadtables::{build_collision_tables, build_streaming_tables, s_weight};
use crate::stepper::{RunPlan, RunState, Scheme, Simulation, StepOptions};
use crate::{Error, Result};

/// Device in a config: a preset name or an explicit spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceChoice {
    Preset(Preset),
    Spec(DeviceSpec),
}

impl DeviceChoice {
    pub fn spec(&self) -> DeviceSpec {
        match self {
            DeviceChoice::Preset(p) => DeviceSpec::preset(*p),
            DeviceChoice::Spec(s) => s.clone(),
        }
    }

    pub fn is_2d(&self) -> bool {
        matches!(self.spec(), DeviceSpec::Mosfet(_))
    }

    fn preset(&self) -> Option<Preset> {
        match self {
            DeviceChoice::Preset(p) => Some(*p),
            DeviceChoice::Spec(_) => None,
        }
    }
}

/// Grid section: a preset resolution, optionally overridden by breakpoints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub resolution: Resolution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nw: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mosfet: Option<MosfetMeshSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub x_boundary: XBoundary,
    #[serde(default)]
    pub y_boundary: YBoundary,
    #[serde(default = "yes")]
    pub transport: bool,
    #[serde(default = "yes")]
    pub collision: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { x_boundary: XBoundary::Contact, y_boundary: YBoundary::Specular, transport: true, collision: true }
    }
}

fn yes() -> bool {
    true
}

fn default_log_every() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<Vec<f64>>,
    #[serde(default)]
    pub slices_xy: Vec<[f64; 2]>,
    #[serde(default = "yes")]
    pub cartesian: bool,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub checkpoint: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            snapshots: vec![],
            slices: None,
            slices_xy: vec![],
            cartesian: true,
            log_every: default_log_every(),
            checkpoint: false,
            max_steps: None,
        }
    }
}

/// File form of the config; unset scalars take preset defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    device: DeviceChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cfl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    grid: GridConfig,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    output: OutputConfig,
}

/// A validated run description with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub device: DeviceChoice,
    pub scheme: Scheme,
    pub cfl: f64,
    pub t_end: f64,
    pub w_max: f64,
    pub out_dir: PathBuf,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub output: OutputConfig,
}

/// End time at which each preset is reported to be steady.
pub fn preset_t_end(p: Preset) -> f64 {
    match p {
        Preset::Diode400 => 5.0,
        Preset::Diode50 => 3.0,
        Preset::Mosfet => 0.5,
    }
}

/// Slice positions shown for each diode preset.
pub fn preset_slices(p: Preset) -> Vec<f64> {
    match p {
        Preset::Diode400 => vec![0.3, 0.5, 0.7],
        Preset::Diode50 => vec![0.1, 0.125, 0.15],
        Preset::Mosfet => vec![],
    }
}

impl RunConfig {
    /// Preset run with all defaults.
    pub fn preset(p: Preset) -> Self {
        Self::resolve(RawConfig {
            device: DeviceChoice::Preset(p),
            scheme: None,
            cfl: None,
            t_end: None,
            w_max: None,
            out_dir: None,
            grid: GridConfig::default(),
            model: ModelConfig::default(),
            output: OutputConfig::default(),
        })
        .expect("presets are valid")
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let two_d = raw.device.is_2d();
        let scheme = raw.scheme.unwrap_or(if two_d { Scheme::Euler } else { Scheme::Rk2 });
        let preset = raw.device.preset();
        let t_end = match (raw.t_end, preset) {
            (Some(t), _) => t,
            (None, Some(p)) => preset_t_end(p),
            (None, None) => return Err(Error::Config("t_end is required for a custom device".into())),
        };
        let mut output = raw.output;
        if output.slices.is_none() && !two_d {
            output.slices = Some(preset.map(preset_slices).unwrap_or_default());
        }
        let out_dir = raw.out_dir.unwrap_or_else(|| PathBuf::from(format!("out/{}", preset.map_or("custom", Preset::name))));
        let cfg = Self {
            device: raw.device,
            scheme,
            cfl: raw.cfl.unwrap_or(scheme.default_cfl()),
            t_end,
            w_max: raw.w_max.unwrap_or(DEFAULT_W_MAX),
            out_dir,
            grid: raw.grid,
            model: raw.model,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn to_raw(&self) -> RawConfig {
        RawConfig {
            device: self.device.clone(),
            scheme: Some(self.scheme),
            cfl: Some(self.cfl),
            t_end: Some(self.t_end),
            w_max: Some(self.w_max),
            out_dir: Some(self.out_dir.clone()),
            grid: self.grid.clone(),
            model: self.model,
            output: self.output.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        self.device.spec().validate()?;
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("cfl", format!("{} is outside (0, 1]", self.cfl));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end", format!("{} must be finite and >= 0", self.t_end));
        }
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return bad("w_max", format!("{} must be positive", self.w_max));
        }
        if let Some(t) = self.output.snapshots.iter().find(|&&t| !(t >= 0.0 && t <= self.t_end)) {
            return bad("output.snapshots", format!("{t} is outside [0, t_end = {}]", self.t_end));
        }
        let two_d = self.device.is_2d();
        if two_d && (self.grid.x.is_some() || self.grid.mu.is_some() || self.grid.nw.is_some()) {
            return bad("grid", "x / mu / nw breakpoints apply to diodes; use [grid.mosfet]".into());
        }
        if !two_d && self.grid.mosfet.is_some() {
            return bad("grid.mosfet", "given for a diode".into());
        }
        if two_d && self.output.slices.as_ref().is_some_and(|s| !s.is_empty()) {
            return bad("output.slices", "2D slices are (x0, y0) pairs in slices_xy".into());
        }
        if !two_d && !self.output.slices_xy.is_empty() {
            return bad("output.slices_xy", "given for a diode".into());
        }
        if self.device.preset().is_none() && !two_d && (self.grid.x.is_none() || self.grid.mu.is_none()) {
            return bad("grid", "a custom diode needs x and mu breakpoints".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, hex.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn build_grid(&self) -> Result<PhaseGrid> {
        let res = self.grid.resolution;
        if self.device.is_2d() {
            let mut spec = self.grid.mosfet.unwrap_or_else(|| MosfetMeshSpec::preset(res));
            spec.w_max = self.w_max;
            return spec.build();
        }
        let mut spec = match self.device.preset() {
            Some(p) => DiodeMeshSpec::preset(p, res)?,
            None => DiodeMeshSpec { x: vec![], mu: vec![], nw: 60, w_max: DEFAULT_W_MAX },
        };
        let tuples = |v: &Vec<[f64; 3]>| v.iter().map(|s| (s[0], s[1], s[2])).collect();
        if let Some(x) = &self.grid.x {
            spec.x = tuples(x);
        }
        if let Some(mu) = &self.grid.mu {
            spec.mu = tuples(mu);
        }
        if let Some(nw) = self.grid.nw {
            spec.nw = nw;
        }
        spec.w_max = self.w_max;
        spec.build()
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            transport: self.model.transport,
            collision: self.model.collision,
            x_boundary: self.model.x_boundary,
            y_boundary: self.model.y_boundary,
            ..Default::default()
        }
    }

    pub fn plan(&self) -> RunPlan {
        RunPlan {
            scheme: self.scheme,
            cfl: self.cfl,
            t_end: self.t_end,
            snapshots: self.output.snapshots.clone(),
            log_every: self.output.log_every,
            max_steps: self.output.max_steps,
        }
    }

    /// Grid, device and simulation for this config.
    pub fn simulation(&self) -> Result<Simulation> {
        let grid = self.build_grid()?;
        let device = Device::new(&self.device.spec(), &grid, &ConversionFactors::default())?;
        Simulation::new(grid, default_silicon(), device, self.step_options())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Comment lines identifying a run, shared by every output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub constants: DimensionlessConstants,
    pub grid_hash: String,
    pub config_digest: String,
}

impl Provenance {
    pub fn new(constants: &DimensionlessConstants, grid: &PhaseGrid, config_digest: impl Into<String>) -> Self {
        Self { constants: *constants, grid_hash: grid.hash_hex(), config_digest: config_digest.into() }
    }

    fn write(&self, out: &mut String, state: &RunState, extra: &[String]) {
        let _ = writeln!(out, "# bte-dg {}", env!("CARGO_PKG_VERSION"));
        for l in self.constants.header_lines() {
            let _ = writeln!(out, "# {l}");
        }
        let _ = writeln!(out, "# grid_hash={}", self.grid_hash);
        let _ = writeln!(out, "# config_digest={}", self.config_digest);
        let _ = writeln!(out, "# t={:.16e} step={}", state.t, state.step);
        for l in extra {
            let _ = writeln!(out, "# {l}");
        }
    }
}

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Macroscopic quantities per silicon cell center, physical units first,
/// then the dimensionless values.
pub fn macroscopic_csv(state: &RunState, sim: &Simulation, prov: &Provenance) -> Result<String> {
    let grid = &sim.grid;
    let conv = ConversionFactors::default();
    let m = MacroField::compute(&state.field, grid, &sim.tables)?;
    let two_d = grid.is_2d();
    let potentials: Vec<String> = sim
        .device
        .spec
        .contact_potentials()
        .iter()
        .map(|(name, v)| format!("potential_{name}_V={}", num(conv.potential_to_volt(*v))))
        .collect();
    let mut out = String::new();
    prov.write(&mut out, state, &potentials);
    let header: &[&str] = if two_d {
        &[
            "x", "y", "density_cm3", "velocity_x_cm_s", "velocity_y_cm_s", "energy_eV", "Efield_x_kV_cm",
            "Efield_y_kV_cm", "potential_V", "momentum_x_cm2_s", "momentum_y_cm2_s", "rho", "u_x", "u_y",
            "w_mean", "E_x", "E_y", "psi", "j_x", "j_y", "empty",
        ]
    } else {
        &[
            "x", "density_cm3", "velocity_x_cm_s", "energy_eV", "Efield_x_kV_cm", "potential_V", "momentum_cm2_s",
            "rho", "u_x", "w_mean", "E_x", "psi", "j_x", "empty",
        ]
    };
    let _ = writeln!(out, "{}", header.join(","));
    for s in 0..grid.n_spatial() {
        let (i, j) = grid.spatial_coords(s);
        let rho = m.density[s][0];
        let n_cm3 = conv.density_to_cm3(rho);
        let v = [conv.velocity_to_cm_s(m.velocity[s][0]), conv.velocity_to_cm_s(m.velocity[s][1])];
        let psi = state.poisson.as_ref().map_or(f64::NAN, |p| p.psi[s][0]);
        let (ex, ey) = (state.e.ex[s], state.e.ey[s]);
        let mut row: Vec<String> = vec![num(grid.x.center(i))];
        if let Some(y) = &grid.y {
            row.push(num(y.center(j)));
        }
        row.push(num(n_cm3));
        row.push(num(v[0]));
        if two_d {
            row.push(num(v[1]));
        }
        row.push(num(conv.energy_to_ev(m.mean_energy[s])));
        row.push(num(conv.field_to_kv_cm(ex)));
        if two_d {
            row.push(num(conv.field_to_kv_cm(ey)));
        }
        row.push(num(conv.potential_to_volt(psi)));
        row.push(num(n_cm3 * v[0]));
        if two_d {
            row.push(num(n_cm3 * v[1]));
        }
        row.push(num(rho));
        row.push(num(m.velocity[s][0]));
        if two_d {
            row.push(num(m.velocity[s][1]));
        }
        row.push(num(m.mean_energy[s]));
        row.push(num(ex));
        if two_d {
            row.push(num(ey));
        }
        row.push(num(psi));
        row.push(num(m.momentum[s][0]));
        if two_d {
            row.push(num(m.momentum[s][1]));
        }
        row.push(u8::from(m.empty[s]).to_string());
        let _ = writeln!(out, "{}", row.join(","));
    }
    Ok(out)
}

pub fn write_macroscopic(state: &RunState, sim: &Simulation, prov: &Provenance, path: &Path) -> Result<()> {
    fs::write(path, macroscopic_csv(state, sim, prov)?)?;
    Ok(())
}

/// Spatial position of a distribution slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceLocation {
    pub x: f64,
    pub y: Option<f64>,
}

/// `Phi_h(x0[, y0], w, mu)` at the energy and angle cell centers; 2D values
/// are averaged over `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfSlice {
    pub location: SliceLocation,
    /// Spatial cell containing the location.
    pub cell: (usize, usize),
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
    /// Row-major in `(w, mu)`.
    pub values: Vec<f64>,
    pub alpha_k: f64,
}

impl PdfSlice {
    pub fn extract(state: &RunState, grid: &PhaseGrid, alpha_k: f64, at: SliceLocation) -> Result<Self> {
        let outside = || Error::Domain(format!("slice location {at:?} is outside the device"));
        let i = grid.x.locate(at.x).ok_or_else(outside)?;
        let j = match (&grid.y, at.y) {
            (Some(y), Some(y0)) => y.locate(y0).ok_or_else(outside)?,
            (None, None) => 0,
            _ => return Err(Error::Domain("slice needs y0 exactly when the device is 2D".into())),
        };
        let s = grid.spatial_index(i, j);
        let lay = Layout::for_grid(grid);
        let xi_x = grid.x.xi(i, at.x);
        let xi_y = match (&grid.y, at.y) {
            (Some(y), Some(y0)) => y.xi(j, y0),
            _ => 0.0,
        };
        let phi_widths: Vec<f64> = grid.phi.as_ref().map_or(vec![1.0], |p| p.widths().to_vec());
        let phi_total: f64 = phi_widths.iter().sum();
        let mut values = Vec::with_capacity(grid.nw() * grid.nmu());
        for k in 0..grid.nw() {
            for m in 0..grid.nmu() {
                let v: f64 = phi_widths
                    .iter()
                    .enumerate()
                    .map(|(n, dphi)| {
                        let p = grid.phase_index(k, m, n);
                        let mut v = state.field.get(s, Layout::T, p) + xi_x * state.field.get(s, Layout::X, p);
                        if let Some(yb) = lay.y {
                            v += xi_y * state.field.get(s, yb, p);
                        }
                        v * dphi
                    })
                    .sum();
                values.push(v / phi_total);
            }
        }
        Ok(Self {
            location: at,
            cell: (i, j),
            w: grid.w.centers().to_vec(),
            mu: grid.mu.centers().to_vec(),
            values,
            alpha_k,
        })
    }

    pub fn value(&self, k: usize, m: usize) -> f64 {
        self.values[k * self.mu.len() + m]
    }

    /// `(V1, V2, Phi)` with `V1 = |k| mu` along the field direction and
    /// `V2 = |k| sqrt(1 - mu^2)`, `|k|^2 = w (1 + alpha_K w)`.
    pub fn cartesian(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.values.len());
        for (k, &w) in self.w.iter().enumerate() {
            let r = (w * (1.0 + self.alpha_k * w)).sqrt();
            for (m, &mu) in self.mu.iter().enumerate() {
                out.push([r * mu, r * (1.0 - mu * mu).sqrt(), self.value(k, m)]);
            }
        }
        out
    }

    /// Relative L2 distance (cell-center samples) of the slice from the best
    /// fit `a s(w) exp(-w / theta)` over amplitude and temperature.
    pub fn maxwellian_distance(&self) -> f64 {
        let norm2: f64 = self.values.iter().map(|v| v * v).sum();
        if norm2 == 0.0 {
            return 0.0;
        }
        let misfit = |theta: f64| {
            let shape: Vec<f64> = self
                .w
                .iter()
                .flat_map(|&w| {
                    let g = s_weight(w, self.alpha_k) * (-w / theta).exp();
                    std::iter::repeat_n(g, self.mu.len())
                })
                .collect();
            let gg: f64 = shape.iter().map(|g| g * g).sum();
            let fg: f64 = shape.iter().zip(&self.values).map(|(g, f)| g * f).sum();
            let a = if gg > 0.0 { fg / gg } else { 0.0 };
            let r2: f64 = shape.iter().zip(&self.values).map(|(g, f)| (f - a * g).powi(2)).sum();
            (r2 / norm2).sqrt()
        };
        // Golden-section search in log(theta) after a coarse scan.
        let (lo, hi) = (0.1f64.ln(), 50.0f64.ln());
        let scan: Vec<f64> = (0..=200).map(|q| lo + (hi - lo) * q as f64 / 200.0).collect();
        let best = scan.iter().copied().min_by(|a, b| misfit(a.exp()).total_cmp(&misfit(b.exp()))).unwrap_or(0.0);
        let step = (hi - lo) / 200.0;
        let (mut a, mut b) = (best - step, best + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if misfit(c.exp()) < misfit(d.exp()) {
                b = d;
            } else {
                a = c;
            }
        }
        misfit((0.5 * (a + b)).exp()).min(misfit(best.exp()))
    }

    pub fn to_csv(&self, state: &RunState, prov: &Provenance, cartesian: bool) -> String {
        let mut out = String::new();
        let loc = match self.location.y {
            Some(y) => format!("slice x0={} y0={} cell=({}, {})", num(self.location.x), num(y), self.cell.0, self.cell.1),
            None => format!("slice x0={} cell={}", num(self.location.x), self.cell.0),
        };
        prov.write(&mut out, state, &[loc]);
        let cart = cartesian.then(|| self.cartesian());
        let _ = writeln!(out, "{}", if cartesian { "w,mu,Phi,V1,V2" } else { "w,mu,Phi" });
        for (k, &w) in self.w.iter().enumerate() {
            for (m, &mu) in self.mu.iter().enumerate() {
                let idx = k * self.mu.len() + m;
                let _ = write!(out, "{},{},{}", num(w), num(mu), num(self.values[idx]));
                if let Some(c) = &cart {
                    let _ = write!(out, ",{},{}", num(c[idx][0]), num(c[idx][1]));
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn write_pdf_slice(
    state: &RunState,
    sim: &Simulation,
    at: SliceLocation,
    prov: &Provenance,
    cartesian: bool,
    path: &Path,
) -> Result<PdfSlice> {
    let slice = PdfSlice::extract(state, &sim.grid, sim.constants.alpha_k, at)?;
    fs::write(path, slice.to_csv(state, prov, cartesian))?;
    Ok(slice)
}

/// Text dump of the energy-cell quadrature tables.
pub fn tables_dump(grid: &PhaseGrid, c: &DimensionlessConstants) -> String {
    let col = build_collision_tables(grid, c);
    let st = build_streaming_tables(grid, c);
    let mut out = String::new();
    let _ = writeln!(out, "# grid_hash={}", grid.hash_hex());
    for l in c.header_lines() {
        let _ = writeln!(out, "# {l}");
    }
    let _ = writeln!(out, "# shifts={:?}", col.shifts);
    let _ = writeln!(out, "[energy]");
    let _ = writeln!(out, "k,w_lo,w_hi,loss0,loss1,loss2,s1_0,s1_1,s1_2,s2_0,s2_1,s2_2");
    for k in 0..grid.nw() {
        let (a, b) = grid.w.bounds(k);
        let l = col.loss[k];
        let (s1, s2) = (st.s1[k], st.s2[k]);
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{},{},{},{},{},{},{}",
            num(a),
            num(b),
            num(l[0]),
            num(l[1]),
            num(l[2]),
            num(s1[0]),
            num(s1[1]),
            num(s1[2]),
            num(s2[0]),
            num(s2[1]),
            num(s2[2])
        );
    }
    let _ = writeln!(out, "[overlaps]");
    let _ = writeln!(out, "shift,k,k_src,o00,o01,o10,o11");
    for (sigma, rows) in col.overlaps.iter().enumerate() {
        for (k, row) in rows.iter().enumerate() {
            for ov in row {
                let o = ov.o;
                let _ = writeln!(out, "{sigma},{k},{},{},{},{},{}", ov.k_src, num(o[0]), num(o[1]), num(o[2]), num(o[3]));
            }
        }
    }
    let _ = writeln!(out, "[angle]");
    let _ = writeln!(out, "factor,m,mu_lo,mu_hi,p0,p1,p2");
    for (f, rows) in st.mu_moments.iter().enumerate() {
        for (m, v) in rows.iter().enumerate() {
            let (a, b) = grid.mu.bounds(m);
            let _ = writeln!(out, "{f},{m},{},{},{},{},{}", num(a), num(b), num(v[0]), num(v[1]), num(v[2]));
        }
    }
    out
}

/// What a run left behind.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub state: RunState,
    pub files: Vec<PathBuf>,
}

fn time_tag(t: f64) -> String {
    format!("{t:.4}")
}

/// Runs `cfg` and writes the config echo, a macroscopic CSV and the
/// distribution slices at each snapshot and at the end, plus an optional
/// checkpoint.
pub fn run(cfg: &RunConfig, log: &mut dyn Write) -> Result<RunReport> {
    let sim = cfg.simulation()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let prov = Provenance::new(&sim.constants, &sim.grid, cfg.digest());
    let mut files = vec![cfg.out_dir.join("config.toml")];
    cfg.save(&files[0])?;

    let slices: Vec<SliceLocation> = match &cfg.output.slices {
        Some(xs) if !sim.grid.is_2d() => xs.iter().map(|&x| SliceLocation { x, y: None }).collect(),
        _ => cfg.output.slices_xy.iter().map(|p| SliceLocation { x: p[0], y: Some(p[1]) }).collect(),
    };
    // Catch bad slice positions before spending time on the run.
    let s0 = sim.initial_state()?;
    for &at in &slices {
        PdfSlice::extract(&s0, &sim.grid, sim.constants.alpha_k, at)?;
    }

    let emit = |state: &RunState, tag: &str, files: &mut Vec<PathBuf>| -> Result<()> {
        let path = cfg.out_dir.join(format!("macro_{tag}.csv"));
        write_macroscopic(state, &sim, &prov, &path)?;
        files.push(path);
        for at in &slices {
            let name = match at.y {
                Some(y) => format!("pdf_x{}_y{}_{tag}.csv", at.x, y),
                None => format!("pdf_x{}_{tag}.csv", at.x),
            };
            let path = cfg.out_dir.join(name);
            write_pdf_slice(state, &sim, *at, &prov, cfg.output.cartesian, &path)?;
            files.push(path);
        }
        Ok(())
    };
    emit(&s0, "t0.0000", &mut files)?;
    let plan = cfg.plan();
    let mut snap_files = vec![];
    let state = sim.run_transient(
        s0,
        &plan,
        &mut |s| {
            if (s.t - plan.t_end).abs() > 1e-12 * plan.t_end.max(1.0) {
                emit(s, &format!("t{}", time_tag(s.t)), &mut snap_files)?;
            }
            Ok(())
        },
        log,
    )?;
    files.append(&mut snap_files);
    emit(&state, "final", &mut files)?;
    if cfg.output.checkpoint {
        let path = cfg.out_dir.join("checkpoint_final.bin");
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        write_checkpoint(&mut f, &state.field, &sim.grid, state.t, &sim.constants)?;
        f.flush()?;
        files.push(path);
    }
    Ok(RunReport { state, files })
}
