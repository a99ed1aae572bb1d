//! Device descriptions: doping, contacts, dielectric layout, the initial
//! state and the kinetic boundary closures.

use serde::{Deserialize, Serialize};

use crate::basis::{DgField, Layout};
use crate::constants::{ConversionFactors, DimensionlessConstants};
use crate::mesh::{Axis, PhaseGrid, Preset};
use crate::moments::cell_density;
use crate::poisson::{BcKind, BcSegment, Poisson1d, Poisson2d, PoissonBc, PoissonBc1d, PoissonSolution};
use crate::quadrature::GaussLegendre;
use crate::quadtables::maxwellian_moments;
use crate::transport::GhostLayer;
use crate::{Error, Result};

/// `(N+ - N-)(1 - y^3)^3 + N-` with `y = (x - x0 + dx) / (2 dx + 1e-20)`
/// clamped to `[0, 1]`: `N+` left of the transition, `N-` right of it.
pub fn smoothed_doping(x: f64, x0: f64, dx: f64, n_plus: f64, n_minus: f64) -> f64 {
    let y = ((x - x0 + dx) / (2.0 * dx + 1e-20)).clamp(0.0, 1.0);
    (n_plus - n_minus) * (1.0 - y * y * y).powi(3) + n_minus
}

/// n+ / n- / n+ profile along x with optional smoothing at the junctions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopingProfile {
    pub n_plus: f64,
    pub n_minus: f64,
    pub channel: [f64; 2],
    /// Transition half-widths at the two junctions; zero means a sharp step.
    pub half_width: [f64; 2],
}

impl DopingProfile {
    pub fn at(&self, x: f64) -> f64 {
        let [a, b] = self.channel;
        if x < 0.5 * (a + b) {
            smoothed_doping(x, a, self.half_width[0], self.n_plus, self.n_minus)
        } else {
            // mirror image of the left junction
            smoothed_doping(2.0 * b - x, b, self.half_width[1], self.n_plus, self.n_minus)
        }
    }

    fn breakpoints(&self) -> [f64; 6] {
        let [a, b] = self.channel;
        let [ha, hb] = self.half_width;
        [a - ha, a, a + ha, b - hb, b, b + hb]
    }

    /// Exact-to-rounding average over `[lo, hi]`, split at the kinks.
    pub fn average(&self, lo: f64, hi: f64) -> f64 {
        let gl = GaussLegendre::new(8);
        let mut pts = vec![lo, hi];
        pts.extend(self.breakpoints().into_iter().filter(|&t| t > lo && t < hi));
        pts.sort_by(f64::total_cmp);
        let total: f64 = pts.windows(2).map(|w| gl.integrate(w[0], w[1], |t| self.at(t))).sum();
        total / (hi - lo)
    }

    /// Cell averages on `x`.
    pub fn cell_averages(&self, x: &Axis) -> Vec<f64> {
        (0..x.len()).map(|i| {
            let (lo, hi) = x.bounds(i);
            self.average(lo, hi)
        }).collect()
    }
}

/// Transition half-width at a junction: the mean width of the two cells
/// meeting there (two cells of transition in total).
fn junction_width(x: &Axis, x0: f64) -> Result<f64> {
    let tol = 1e-12 * (x.end() - x.start());
    let right = x.locate(x0 + tol).ok_or_else(|| Error::Domain(format!("junction {x0} outside the device")))?;
    let left = x.locate(x0 - tol).unwrap_or(right);
    Ok(0.5 * (x.width(left) + x.width(right)))
}

fn default_true() -> bool {
    true
}

/// n+ n n+ diode along `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiodeSpec {
    pub length: f64,
    pub channel: [f64; 2],
    pub n_plus_cm3: f64,
    pub n_minus_cm3: f64,
    pub psi_left: f64,
    pub psi_right: f64,
    #[serde(default = "default_true")]
    pub smoothing: bool,
}

/// Double-gate MOSFET, upper half above the symmetry line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MosfetSpec {
    /// Lightly doped region in x.
    pub channel: [f64; 2],
    /// Gate electrode extent on top of the oxide.
    pub gate: [f64; 2],
    pub n_plus_cm3: f64,
    pub n_minus_cm3: f64,
    pub psi_source: f64,
    pub psi_drain: f64,
    pub psi_gate: f64,
    #[serde(default)]
    pub smoothing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceSpec {
    Diode(DiodeSpec),
    Mosfet(MosfetSpec),
}

impl DeviceSpec {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Diode400 => DeviceSpec::Diode(DiodeSpec {
                length: 1.0,
                channel: [0.3, 0.7],
                n_plus_cm3: 5e17,
                n_minus_cm3: 2e15,
                psi_left: 0.0,
                psi_right: 1.0,
                smoothing: true,
            }),
            Preset::Diode50 => DeviceSpec::Diode(DiodeSpec {
                length: 0.25,
                channel: [0.1, 0.15],
                n_plus_cm3: 5e18,
                n_minus_cm3: 1e15,
                psi_left: 0.0,
                psi_right: 1.0,
                smoothing: true,
            }),
            Preset::Mosfet => DeviceSpec::Mosfet(MosfetSpec {
                channel: [0.05, 0.10],
                gate: [0.05, 0.10],
                n_plus_cm3: 1e19,
                n_minus_cm3: 1e15,
                psi_source: 0.52354,
                psi_drain: 1.5235,
                psi_gate: 1.06,
                smoothing: false,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (channel, np, nm) = match self {
            DeviceSpec::Diode(d) => {
                if !(d.length > 0.0) || d.channel[1] >= d.length {
                    return Err(Error::Config("diode channel must lie inside the device".into()));
                }
                (d.channel, d.n_plus_cm3, d.n_minus_cm3)
            }
            DeviceSpec::Mosfet(m) => {
                if !(m.gate[0] < m.gate[1]) {
                    return Err(Error::Config("gate extent must be increasing".into()));
                }
                (m.channel, m.n_plus_cm3, m.n_minus_cm3)
            }
        };
        if !(channel[0] > 0.0 && channel[0] < channel[1]) {
            return Err(Error::Config(format!("bad channel {channel:?}")));
        }
        if !(np > 0.0 && nm > 0.0) {
            return Err(Error::Config("doping values must be positive".into()));
        }
        Ok(())
    }

    /// Named boundary potentials, in volts.
    pub fn contact_potentials(&self) -> Vec<(&'static str, f64)> {
        match self {
            DeviceSpec::Diode(d) => vec![("left", d.psi_left), ("right", d.psi_right)],
            DeviceSpec::Mosfet(m) => vec![("source", m.psi_source), ("drain", m.psi_drain), ("gate", m.psi_gate)],
        }
    }
}

/// Kinetic closure at the x ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XBoundary {
    /// Neutral-charge contacts: adjacent cell scaled by `N_D / rho`.
    #[default]
    Contact,
    /// Mirror in x (needs a mirror-symmetric mu axis).
    Specular,
    /// Empty ghost cells.
    ZeroInflow,
}

/// Kinetic closure at the y walls (2D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YBoundary {
    #[default]
    Specular,
    ZeroInflow,
}

/// Solver for the electrostatic field matching the device.
#[derive(Debug, Clone)]
pub enum FieldSolver {
    OneD(Poisson1d),
    TwoD { solver: Poisson2d, n_silicon: usize },
}

impl FieldSolver {
    /// Solves with `R = c_p (rho - N_D)`; `rho` holds `[T^, X^, Y^]` per
    /// silicon cell, `doping` the cell averages.
    pub fn solve(&self, rho: &[[f64; 3]], doping: &[f64], c_p: f64) -> Result<PoissonSolution> {
        if rho.len() != doping.len() {
            return Err(Error::GridMismatch("density and doping lengths differ".into()));
        }
        match self {
            FieldSolver::OneD(s) => {
                let r: Vec<[f64; 2]> = rho.iter().zip(doping).map(|(a, d)| [c_p * (a[0] - d), c_p * a[1]]).collect();
                s.solve(&r)
            }
            FieldSolver::TwoD { solver, n_silicon } => {
                let n_total = solver.eps().len();
                if rho.len() != *n_silicon {
                    return Err(Error::GridMismatch("density does not cover the silicon cells".into()));
                }
                let mut r = vec![[0.0; 3]; n_total];
                for (c, (a, d)) in rho.iter().zip(doping).enumerate() {
                    r[c] = [c_p * (a[0] - d), c_p * a[1], c_p * a[2]];
                }
                solver.solve(&r)
            }
        }
    }
}

/// A device resolved on a grid.
#[derive(Debug, Clone)]
pub struct Device {
    pub spec: DeviceSpec,
    pub profile: DopingProfile,
    /// Dimensionless doping cell averages per silicon spatial cell.
    pub doping: Vec<f64>,
}

impl Device {
    pub fn new(spec: &DeviceSpec, grid: &PhaseGrid, conv: &ConversionFactors) -> Result<Self> {
        spec.validate()?;
        let (channel, np, nm, smooth) = match (spec, grid.is_2d()) {
            (DeviceSpec::Diode(d), false) => {
                let tol = 1e-9 * d.length;
                if (grid.x.start()).abs() > tol || (grid.x.end() - d.length).abs() > tol {
                    return Err(Error::GridMismatch(format!("x axis does not span [0, {}]", d.length)));
                }
                (d.channel, d.n_plus_cm3, d.n_minus_cm3, d.smoothing)
            }
            (DeviceSpec::Mosfet(m), true) => (m.channel, m.n_plus_cm3, m.n_minus_cm3, m.smoothing),
            _ => return Err(Error::GridMismatch("device and grid dimensionality differ".into())),
        };
        let half_width = if smooth {
            [junction_width(&grid.x, channel[0])?, junction_width(&grid.x, channel[1])?]
        } else {
            [0.0, 0.0]
        };
        let profile = DopingProfile {
            n_plus: conv.density_from_cm3(np),
            n_minus: conv.density_from_cm3(nm),
            channel,
            half_width,
        };
        let per_x = profile.cell_averages(&grid.x);
        let doping = (0..grid.n_spatial()).map(|s| per_x[grid.spatial_coords(s).0]).collect();
        Ok(Self { spec: spec.clone(), profile, doping })
    }

    /// Relative dielectric constant per Poisson cell (silicon rows first).
    pub fn dielectric_map(&self, grid: &PhaseGrid, c: &DimensionlessConstants) -> Vec<f64> {
        let n_si = grid.n_spatial();
        let n_total = grid.poisson_y().map_or(n_si, |y| y.len() * grid.nx());
        (0..n_total).map(|c_| if c_ < n_si { c.eps_r_si } else { c.eps_r_ox }).collect()
    }

    pub fn field_solver(&self, grid: &PhaseGrid, c: &DimensionlessConstants) -> Result<FieldSolver> {
        let eps = self.dielectric_map(grid, c);
        match &self.spec {
            DeviceSpec::Diode(d) => {
                let bc = PoissonBc1d { left: BcKind::dirichlet(d.psi_left), right: BcKind::dirichlet(d.psi_right) };
                Ok(FieldSolver::OneD(Poisson1d::new(&grid.x, &eps, &bc, c.c_v)?))
            }
            DeviceSpec::Mosfet(m) => {
                let y = grid.poisson_y().ok_or_else(|| Error::Mesh("2D grid without y axis".into()))?;
                let h_si = grid.y.as_ref().map_or(0.0, |a| a.end());
                let (x0, x1, y1) = (grid.x.start(), grid.x.end(), y.end());
                let seg = |a: f64, b: f64, kind: BcKind| BcSegment { start: a, end: b, kind };
                let side = |v: f64| {
                    let mut s = vec![seg(0.0, h_si, BcKind::dirichlet(v))];
                    if y1 > h_si {
                        s.push(seg(h_si, y1, BcKind::Neumann));
                    }
                    s
                };
                let bc = PoissonBc {
                    left: side(m.psi_source),
                    right: side(m.psi_drain),
                    bottom: vec![seg(x0, x1, BcKind::Neumann)],
                    top: [
                        seg(x0, m.gate[0], BcKind::Neumann),
                        seg(m.gate[0], m.gate[1], BcKind::dirichlet(m.psi_gate)),
                        seg(m.gate[1], x1, BcKind::Neumann),
                    ]
                    .into_iter()
                    .filter(|s| s.end > s.start)
                    .collect(),
                };
                let solver = Poisson2d::new(&grid.x, &y, &eps, &bc, c.c_v)?;
                Ok(FieldSolver::TwoD { solver, n_silicon: grid.n_spatial() })
            }
        }
    }
}

/// Locally Maxwellian initial state whose density cell averages equal
/// `doping`: `T = F M0 / dw`, `W = 3 F M1 / dw` with
/// `M_p = int_k s(w) e^-w xi^p dw` and `F = N_D / (2 pi sum_k M0_k)`.
pub fn initial_condition(grid: &PhaseGrid, doping: &[f64], alpha: f64) -> Result<DgField> {
    if doping.len() != grid.n_spatial() {
        return Err(Error::GridMismatch("doping length".into()));
    }
    let lay = Layout::for_grid(grid);
    let mm = maxwellian_moments(&grid.w, alpha);
    let total: f64 = mm.iter().map(|m| m[0]).sum();
    // Angular measure is 2 pi in both dimensionalities (pi * 2 in 1D).
    let unit = 1.0 / (2.0 * std::f64::consts::PI * total);
    let np = grid.n_phase();
    let mut field = DgField::zeros(grid);
    for (s, blk) in field.blocks_mut().enumerate() {
        let f = doping[s] * unit;
        for p in 0..np {
            let (k, _, _) = grid.phase_coords(p);
            let dw = grid.w.width(k);
            blk[p] = f * mm[k][0] / dw;
            blk[lay.w * np + p] = 3.0 * f * mm[k][1] / dw;
        }
    }
    Ok(field)
}

/// Mirror of a block under `mu -> -mu` (x reflection) or `phi -> pi - phi`
/// (y reflection): phase cells are reversed along that axis and the
/// coefficients odd under the reflection change sign.
fn mirror_block(grid: &PhaseGrid, blk: &[f64], in_x: bool) -> Vec<f64> {
    let lay = Layout::for_grid(grid);
    let np = grid.n_phase();
    let (nmu, nphi) = (grid.nmu(), grid.nphi());
    let odd: Vec<usize> = if in_x { vec![Layout::X, lay.m] } else { lay.y.into_iter().chain(lay.p).collect() };
    let mut out = vec![0.0; blk.len()];
    for p in 0..np {
        let (k, m, n) = grid.phase_coords(p);
        let q = if in_x { grid.phase_index(k, nmu - 1 - m, n) } else { grid.phase_index(k, m, nphi - 1 - n) };
        for b in 0..lay.n_basis {
            let sg = if odd.contains(&b) { -1.0 } else { 1.0 };
            out[b * np + q] = sg * blk[b * np + p];
        }
    }
    out
}

/// Contact ghosts: the boundary cell scaled by `N_D / rho` of that cell.
pub fn contact_ghosts(field: &DgField, doping: &[f64], grid: &PhaseGrid) -> Result<GhostLayer> {
    field.check_grid(grid)?;
    let scaled = |i: usize, j: usize| -> Result<Vec<f64>> {
        let s = grid.spatial_index(i, j);
        let rho = cell_density(field, grid, s);
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Boundary(format!("nonpositive density {rho:e} at contact cell ({i}, {j})")));
        }
        let a = doping[s] / rho;
        Ok(field.block(s).iter().map(|v| a * v).collect())
    };
    let nx = grid.nx();
    Ok(GhostLayer {
        x_lo: (0..grid.ny()).map(|j| scaled(0, j)).collect::<Result<_>>()?,
        x_hi: (0..grid.ny()).map(|j| scaled(nx - 1, j)).collect::<Result<_>>()?,
        ..Default::default()
    })
}

/// Mirror ghosts at the x ends (test mode for closed systems).
pub fn mirror_x_ghosts(field: &DgField, grid: &PhaseGrid) -> Result<GhostLayer> {
    field.check_grid(grid)?;
    if !grid.mu.is_mirror_symmetric(1e-12) {
        return Err(Error::Boundary("x reflection needs a mirror-symmetric mu axis".into()));
    }
    let nx = grid.nx();
    Ok(GhostLayer {
        x_lo: (0..grid.ny()).map(|j| mirror_block(grid, field.block(grid.spatial_index(0, j)), true)).collect(),
        x_hi: (0..grid.ny()).map(|j| mirror_block(grid, field.block(grid.spatial_index(nx - 1, j)), true)).collect(),
        ..Default::default()
    })
}

/// Specular ghosts below the bottom row and above the top row.
pub fn specular_ghosts(field: &DgField, grid: &PhaseGrid) -> Result<GhostLayer> {
    field.check_grid(grid)?;
    let phi = grid.phi.as_ref().ok_or_else(|| Error::Boundary("specular walls need a phi axis".into()))?;
    if !phi.is_mirror_symmetric(1e-12) {
        return Err(Error::Boundary("phi axis is not symmetric under phi -> pi - phi".into()));
    }
    let ny = grid.ny();
    Ok(GhostLayer {
        y_lo: (0..grid.nx()).map(|i| mirror_block(grid, field.block(grid.spatial_index(i, 0)), false)).collect(),
        y_hi: (0..grid.nx()).map(|i| mirror_block(grid, field.block(grid.spatial_index(i, ny - 1)), false)).collect(),
        ..Default::default()
    })
}

/// All ghost blocks for one transport evaluation.
pub fn ghost_layer(field: &DgField, grid: &PhaseGrid, doping: &[f64], xb: XBoundary, yb: YBoundary) -> Result<GhostLayer> {
    let zeros = |n: usize| vec![vec![0.0; field.block_len()]; n];
    let mut g = match xb {
        XBoundary::Contact => contact_ghosts(field, doping, grid)?,
        XBoundary::Specular => mirror_x_ghosts(field, grid)?,
        XBoundary::ZeroInflow => GhostLayer { x_lo: zeros(grid.ny()), x_hi: zeros(grid.ny()), ..Default::default() },
    };
    if grid.is_2d() {
        let y = match yb {
            YBoundary::Specular => specular_ghosts(field, grid)?,
            YBoundary::ZeroInflow => GhostLayer { y_lo: zeros(grid.nx()), y_hi: zeros(grid.nx()), ..Default::default() },
        };
        g.y_lo = y.y_lo;
        g.y_hi = y.y_hi;
    }
    Ok(g)
}
