//! Nonuniform tensor-product grids over `(x[, y], w, mu[, phi])` and the
//! spatial grid used by the Poisson solver.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

use crate::{Error, Result};

/// Relative slack allowed when a cell width must tile a segment.
const DIVISIBILITY_TOL: f64 = 1e-12;

/// Default upper energy cutoff (units of `k_B T_L`).
pub const DEFAULT_W_MAX: f64 = 40.0;

/// One coordinate direction: strictly increasing edges with cached centers
/// and widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl Axis {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Mesh("an axis needs at least two edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Mesh("axis edges must be finite".into()));
        }
        let widths: Vec<f64> = edges.windows(2).map(|p| p[1] - p[0]).collect();
        if let Some(i) = widths.iter().position(|&h| h <= 0.0) {
            return Err(Error::Mesh(format!(
                "edges not strictly increasing at index {i}: {} -> {}",
                edges[i],
                edges[i + 1]
            )));
        }
        let centers = edges.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        Ok(Self { edges, centers, widths })
    }

    pub fn uniform(start: f64, end: f64, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::Mesh("uniform axis with zero cells".into()));
        }
        let h = (end - start) / cells as f64;
        let mut edges: Vec<f64> = (0..=cells).map(|i| start + h * i as f64).collect();
        edges[cells] = end;
        Self::from_edges(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.edges[0]
    }

    pub fn end(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn center(&self, i: usize) -> f64 {
        self.centers[i]
    }

    pub fn width(&self, i: usize) -> f64 {
        self.widths[i]
    }

    /// Lower and upper edge of cell `i`.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.edges[i], self.edges[i + 1])
    }

    /// Cell containing `t`; a point on an interior edge belongs to the
    /// upper cell, the final edge to the last cell.
    pub fn locate(&self, t: f64) -> Option<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return None;
        }
        let idx = self.edges.partition_point(|&e| e <= t);
        Some(idx.saturating_sub(1).min(self.len() - 1))
    }

    /// Local coordinate `2 (t - t_i) / dt_i` of `t` in cell `i`.
    pub fn xi(&self, i: usize, t: f64) -> f64 {
        2.0 * (t - self.centers[i]) / self.widths[i]
    }

    /// Whether `t` coincides with one of the edges.
    pub fn has_edge(&self, t: f64, tol: f64) -> bool {
        self.edges.iter().any(|e| (e - t).abs() <= tol)
    }

    /// Edge symmetry under `t -> start + end - t`.
    pub fn is_mirror_symmetric(&self, tol: f64) -> bool {
        let s = self.start() + self.end();
        let n = self.edges.len();
        (0..n).all(|i| (self.edges[i] + self.edges[n - 1 - i] - s).abs() <= tol)
    }
}

/// Concatenate piecewise-uniform segments `(start, end, cell_width)`.
pub fn build_axis(segments: &[(f64, f64, f64)]) -> Result<Axis> {
    let Some(first) = segments.first() else {
        return Err(Error::Mesh("no axis segments given".into()));
    };
    let mut edges = vec![first.0];
    for (idx, &(a, b, h)) in segments.iter().enumerate() {
        let last = *edges.last().unwrap();
        if (a - last).abs() > DIVISIBILITY_TOL * last.abs().max(1.0) {
            return Err(Error::Mesh(format!(
                "segment {idx} starts at {a}, previous ended at {last}"
            )));
        }
        if !(b > a) || !(h > 0.0) {
            return Err(Error::Mesh(format!("segment {idx} ({a}, {b}, {h}) is empty")));
        }
        let ratio = (b - a) / h;
        let n = ratio.round();
        if n < 1.0 || (n * h - (b - a)).abs() > DIVISIBILITY_TOL * (b - a).abs().max(1.0) {
            return Err(Error::Mesh(format!(
                "width {h} does not divide segment {idx} [{a}, {b}] (ratio {ratio})"
            )));
        }
        let n = n as usize;
        let step = (b - a) / n as f64;
        edges.extend((1..n).map(|i| a + step * i as f64));
        edges.push(b);
    }
    Axis::from_edges(edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimensionality {
    Diode1d,
    Mosfet2d,
}

/// Phase-space grid for one device run.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    pub kind: Dimensionality,
    pub x: Axis,
    pub y: Option<Axis>,
    pub w: Axis,
    pub mu: Axis,
    pub phi: Option<Axis>,
    /// Oxide rows stacked above the silicon, Poisson grid only.
    pub oxide: Option<Axis>,
}

impl PhaseGrid {
    pub fn new_1d(x: Axis, w: Axis, mu: Axis) -> Result<Self> {
        let g = Self { kind: Dimensionality::Diode1d, x, y: None, w, mu, phi: None, oxide: None };
        g.validate()?;
        Ok(g)
    }

    pub fn new_2d(x: Axis, y: Axis, w: Axis, mu: Axis, phi: Axis, oxide: Option<Axis>) -> Result<Self> {
        let g = Self {
            kind: Dimensionality::Mosfet2d,
            x,
            y: Some(y),
            w,
            mu,
            phi: Some(phi),
            oxide,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        const TOL: f64 = 1e-12;
        if self.w.start() != 0.0 {
            return Err(Error::Mesh(format!("w axis must start at 0, got {}", self.w.start())));
        }
        if (self.mu.start() + 1.0).abs() > TOL || (self.mu.end() - 1.0).abs() > TOL {
            return Err(Error::Mesh("mu axis must span [-1, 1]".into()));
        }
        if !self.mu.len().is_multiple_of(2) {
            return Err(Error::Mesh(format!("N_mu must be even, got {}", self.mu.len())));
        }
        if !self.mu.has_edge(0.0, TOL) {
            return Err(Error::Mesh("a mu cell straddles mu = 0".into()));
        }
        match self.kind {
            Dimensionality::Diode1d => {
                if self.y.is_some() || self.phi.is_some() || self.oxide.is_some() {
                    return Err(Error::Mesh("1D grid carries 2D axes".into()));
                }
            }
            Dimensionality::Mosfet2d => {
                let (Some(y), Some(phi)) = (&self.y, &self.phi) else {
                    return Err(Error::Mesh("2D grid needs y and phi axes".into()));
                };
                if phi.start().abs() > TOL || (phi.end() - PI).abs() > TOL {
                    return Err(Error::Mesh("phi axis must span [0, pi]".into()));
                }
                if phi.len() % 2 != 0 {
                    return Err(Error::Mesh(format!("N_phi must be even, got {}", phi.len())));
                }
                if !phi.is_mirror_symmetric(1e-12) {
                    return Err(Error::Mesh("phi edges not symmetric under phi -> pi - phi".into()));
                }
                if let Some(ox) = &self.oxide {
                    if (ox.start() - y.end()).abs() > TOL {
                        return Err(Error::Mesh("oxide rows must start at the silicon top".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_2d(&self) -> bool {
        self.kind == Dimensionality::Mosfet2d
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    /// Silicon rows (1 in 1D).
    pub fn ny(&self) -> usize {
        self.y.as_ref().map_or(1, Axis::len)
    }

    pub fn nw(&self) -> usize {
        self.w.len()
    }

    pub fn nmu(&self) -> usize {
        self.mu.len()
    }

    /// phi cells (1 in 1D).
    pub fn nphi(&self) -> usize {
        self.phi.as_ref().map_or(1, Axis::len)
    }

    pub fn n_spatial(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn n_phase(&self) -> usize {
        self.nw() * self.nmu() * self.nphi()
    }

    pub fn n_basis(&self) -> usize {
        if self.is_2d() { 6 } else { 4 }
    }

    pub fn n_cells(&self) -> usize {
        self.n_spatial() * self.n_phase()
    }

    pub fn w_max(&self) -> f64 {
        self.w.end()
    }

    #[inline]
    pub fn spatial_index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    #[inline]
    pub fn spatial_coords(&self, s: usize) -> (usize, usize) {
        (s % self.nx(), s / self.nx())
    }

    #[inline]
    pub fn phase_index(&self, k: usize, m: usize, n: usize) -> usize {
        (k * self.nmu() + m) * self.nphi() + n
    }

    #[inline]
    pub fn phase_coords(&self, p: usize) -> (usize, usize, usize) {
        let nphi = self.nphi();
        let n = p % nphi;
        let km = p / nphi;
        (km / self.nmu(), km % self.nmu(), n)
    }

    /// Spatial cell measure `dx` (1D) or `dx dy` (2D).
    pub fn spatial_measure(&self, s: usize) -> f64 {
        let (i, j) = self.spatial_coords(s);
        self.x.width(i) * self.y.as_ref().map_or(1.0, |y| y.width(j))
    }

    /// `dw dmu [dphi]` of phase cell `p`.
    pub fn phase_measure(&self, p: usize) -> f64 {
        let (k, m, n) = self.phase_coords(p);
        self.w.width(k) * self.mu.width(m) * self.phi.as_ref().map_or(1.0, |a| a.width(n))
    }

    /// y axis of the Poisson grid: silicon rows followed by oxide rows.
    pub fn poisson_y(&self) -> Option<Axis> {
        let y = self.y.as_ref()?;
        let mut edges = y.edges().to_vec();
        if let Some(ox) = &self.oxide {
            edges.extend_from_slice(&ox.edges()[1..]);
        }
        Axis::from_edges(edges).ok()
    }

    /// SHA-256 over the kind tag and every axis' edges.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([self.kind as u8]);
        let mut feed = |tag: &[u8], axis: Option<&Axis>| {
            h.update(tag);
            match axis {
                Some(a) => {
                    h.update((a.edges().len() as u64).to_le_bytes());
                    for e in a.edges() {
                        h.update(e.to_le_bytes());
                    }
                }
                None => h.update([0u8]),
            }
        };
        feed(b"x", Some(&self.x));
        feed(b"y", self.y.as_ref());
        feed(b"w", Some(&self.w));
        feed(b"mu", Some(&self.mu));
        feed(b"phi", self.phi.as_ref());
        feed(b"ox", self.oxide.as_ref());
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Built-in device names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Diode400,
    Diode50,
    Mosfet,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Diode400, Preset::Diode50, Preset::Mosfet];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Diode400 => "diode400",
            Preset::Diode50 => "diode50",
            Preset::Mosfet => "mosfet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

/// Mesh density for the presets: the published grids or the reduced grids
/// used by the quick checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    #[default]
    Paper,
    Ci,
}

/// Breakpoint lists for the three diode axes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiodeMeshSpec {
    pub x: Vec<(f64, f64, f64)>,
    pub mu: Vec<(f64, f64, f64)>,
    pub nw: usize,
    pub w_max: f64,
}

impl DiodeMeshSpec {
    pub fn preset(device: Preset, res: Resolution) -> Result<Self> {
        let third = 1.0 / 3.0;
        let (x, mu, nw) = match (device, res) {
            (Preset::Diode400, Resolution::Paper) => (
                vec![(0.0, 0.2, 0.01), (0.2, 0.4, 0.005), (0.4, 1.0, 0.01)],
                vec![(-1.0, 0.0, 1.0 / 6.0), (0.0, 0.7, 0.7 / 6.0), (0.7, 1.0, 0.025)],
                60,
            ),
            (Preset::Diode400, Resolution::Ci) => (
                vec![(0.0, 0.2, 0.02), (0.2, 0.4, 0.01), (0.4, 1.0, 0.02)],
                vec![(-1.0, 0.0, third), (0.0, 0.7, 0.7 * third), (0.7, 1.0, 0.05)],
                30,
            ),
            (Preset::Diode50, Resolution::Paper) => (
                vec![
                    (0.0, 0.09, 0.01),
                    (0.09, 0.11, 0.001),
                    (0.11, 0.14, 0.005),
                    (0.14, 0.16, 0.001),
                    (0.16, 0.25, 0.01),
                ],
                vec![(-1.0, 0.0, 0.2), (0.0, 0.7, 0.14), (0.7, 1.0, 0.03)],
                60,
            ),
            (Preset::Diode50, Resolution::Ci) => (
                vec![
                    (0.0, 0.09, 0.015),
                    (0.09, 0.11, 0.004),
                    (0.11, 0.14, 0.01),
                    (0.14, 0.16, 0.004),
                    (0.16, 0.25, 0.015),
                ],
                vec![(-1.0, 0.0, third), (0.0, 0.7, 0.7 * third), (0.7, 1.0, 0.05)],
                30,
            ),
            (Preset::Mosfet, _) => {
                return Err(Error::Config("mosfet is not a diode preset".into()));
            }
        };
        Ok(Self { x, mu, nw, w_max: DEFAULT_W_MAX })
    }

    pub fn build(&self) -> Result<PhaseGrid> {
        PhaseGrid::new_1d(
            build_axis(&self.x)?,
            Axis::uniform(0.0, self.w_max, self.nw)?,
            build_axis(&self.mu)?,
        )
    }
}

/// Uniform MOSFET grid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MosfetMeshSpec {
    pub length_x: f64,
    /// Silicon half-height above the symmetry line.
    pub height_si: f64,
    pub oxide_thickness: f64,
    pub nx: usize,
    pub ny: usize,
    pub nw: usize,
    pub nmu: usize,
    pub nphi: usize,
    pub oxide_rows: usize,
    pub w_max: f64,
}

impl Default for MosfetMeshSpec {
    fn default() -> Self {
        Self::preset(Resolution::Paper)
    }
}

impl MosfetMeshSpec {
    pub fn preset(res: Resolution) -> Self {
        let (nx, ny, nw) = match res {
            Resolution::Paper => (24, 14, 120),
            Resolution::Ci => (12, 7, 60),
        };
        Self {
            length_x: 0.15,
            height_si: 0.12,
            oxide_thickness: 0.01,
            nx,
            ny,
            nw,
            nmu: 8,
            nphi: 6,
            oxide_rows: 2,
            w_max: DEFAULT_W_MAX,
        }
    }

    pub fn build(&self) -> Result<PhaseGrid> {
        let oxide = if self.oxide_rows > 0 {
            Some(Axis::uniform(self.height_si, self.height_si + self.oxide_thickness, self.oxide_rows)?)
        } else {
            None
        };
        PhaseGrid::new_2d(
            Axis::uniform(0.0, self.length_x, self.nx)?,
            Axis::uniform(0.0, self.height_si, self.ny)?,
            Axis::uniform(0.0, self.w_max, self.nw)?,
            Axis::uniform(-1.0, 1.0, self.nmu)?,
            Axis::uniform(0.0, PI, self.nphi)?,
            oxide,
        )
    }
}

/// Published diode grid (`w_max` = 40).
pub fn preset_diode_mesh(device: Preset) -> Result<PhaseGrid> {
    DiodeMeshSpec::preset(device, Resolution::Paper)?.build()
}

/// Published MOSFET grid with the default geometry.
pub fn preset_mosfet_mesh() -> Result<PhaseGrid> {
    MosfetMeshSpec::preset(Resolution::Paper).build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_axis_examples() {
        let a = build_axis(&[(0.0, 1.0, 0.5)]).unwrap();
        assert_eq!(a.edges(), &[0.0, 0.5, 1.0]);

        let a = build_axis(&[(0.0, 0.2, 0.01), (0.2, 0.4, 0.005), (0.4, 0.6, 0.01)]).unwrap();
        assert_eq!(a.len(), 80);

        // 1.7 / (0.85/6) = 12 cells, plus 0.3 / 0.025 = 12 cells.
        let a = build_axis(&[(-1.0, 0.7, 0.85 / 6.0), (0.7, 1.0, 0.025)]).unwrap();
        assert_eq!(a.len(), 24);
    }

    #[test]
    fn build_axis_rejects_bad_segments() {
        assert!(build_axis(&[(0.0, 1.0, 0.3)]).is_err());
        assert!(build_axis(&[(0.0, 0.5, 0.1), (0.6, 1.0, 0.1)]).is_err());
        assert!(build_axis(&[]).is_err());
        assert!(build_axis(&[(1.0, 0.0, 0.1)]).is_err());
    }

    #[test]
    fn axis_rejects_unsorted_edges() {
        assert!(Axis::from_edges(vec![0.0, 1.0, 1.0]).is_err());
        assert!(Axis::from_edges(vec![0.0]).is_err());
    }

    #[test]
    fn locate_and_xi() {
        let a = build_axis(&[(0.0, 1.0, 0.25)]).unwrap();
        assert_eq!(a.locate(0.0), Some(0));
        assert_eq!(a.locate(0.25), Some(1));
        assert_eq!(a.locate(1.0), Some(3));
        assert_eq!(a.locate(1.1), None);
        assert!((a.xi(1, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diode_presets_match_published_counts() {
        let g = preset_diode_mesh(Preset::Diode400).unwrap();
        assert_eq!((g.nx(), g.nw(), g.nmu()), (120, 60, 24));
        assert_eq!(g.n_cells(), 120 * 60 * 24);
        let below = g.mu.centers().iter().filter(|&&m| m < 0.7).count();
        assert_eq!(below, 12);
        let dx = g.x.widths();
        for (c, h) in g.x.centers().iter().zip(dx) {
            let want = if (0.2..0.4).contains(c) { 0.005 } else { 0.01 };
            assert!((h - want).abs() < 1e-12);
        }

        let g = preset_diode_mesh(Preset::Diode50).unwrap();
        assert_eq!((g.nx(), g.nw(), g.nmu()), (64, 60, 20));
        assert_eq!(g.n_cells(), 64 * 60 * 20);
        let below = g.mu.centers().iter().filter(|&&m| m < 0.7).count();
        assert_eq!(below, 10);
        assert!((g.x.end() - 0.25).abs() < 1e-15);
        let fine = g.x.widths().iter().filter(|&&h| (h - 0.001).abs() < 1e-12).count();
        assert_eq!(fine, 40);
    }

    #[test]
    fn mosfet_preset() {
        let g = preset_mosfet_mesh().unwrap();
        assert_eq!(g.n_cells(), 24 * 14 * 120 * 8 * 6);
        let phi = g.phi.as_ref().unwrap();
        for n in 0..=6 {
            assert!((phi.edges()[n] + phi.edges()[6 - n] - PI).abs() < 1e-14);
        }
        assert_eq!(g.nmu() % 2, 0);
        assert_eq!(g.nphi() % 2, 0);
        let py = g.poisson_y().unwrap();
        assert_eq!(py.len(), 16);
    }

    #[test]
    fn grid_validation() {
        let x = Axis::uniform(0.0, 1.0, 4).unwrap();
        let w = Axis::uniform(0.0, 10.0, 4).unwrap();
        assert!(PhaseGrid::new_1d(x.clone(), w.clone(), Axis::uniform(-1.0, 1.0, 3).unwrap()).is_err());
        let straddle = Axis::from_edges(vec![-1.0, -0.5, 0.5, 1.0, 1.5]).unwrap();
        assert!(PhaseGrid::new_1d(x.clone(), w.clone(), straddle).is_err());
        let straddle = Axis::from_edges(vec![-1.0, -0.5, 0.1, 0.5, 1.0]).unwrap();
        assert!(PhaseGrid::new_1d(x.clone(), w.clone(), straddle).is_err());
        let w1 = Axis::uniform(0.5, 10.0, 4).unwrap();
        assert!(PhaseGrid::new_1d(x.clone(), w1, Axis::uniform(-1.0, 1.0, 4).unwrap()).is_err());
        assert!(PhaseGrid::new_1d(x, w, Axis::uniform(-1.0, 1.0, 4).unwrap()).is_ok());
    }

    #[test]
    fn hash_depends_on_edges() {
        let a = preset_diode_mesh(Preset::Diode50).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.w = Axis::uniform(0.0, 41.0, 60).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn index_roundtrip() {
        let g = MosfetMeshSpec::preset(Resolution::Ci).build().unwrap();
        for p in [0, 1, 17, g.n_phase() - 1] {
            let (k, m, n) = g.phase_coords(p);
            assert_eq!(g.phase_index(k, m, n), p);
        }
        for s in [0, 5, g.n_spatial() - 1] {
            let (i, j) = g.spatial_coords(s);
            assert_eq!(g.spatial_index(i, j), s);
        }
    }
}
