//! Piecewise-linear DG representation of `Phi_h`.
//!
//! Each phase cell carries one constant and one linear coefficient per
//! coordinate, multiplying `{1, xi_x, [xi_y,] xi_w, xi_mu, [xi_phi]}` with
//! `xi = 2 (t - t_c) / dt`. On a cell the basis is orthogonal with
//! `int 1 = |K|` and `int xi^2 = |K| / 3`.
//!
//! Coefficients are stored block-wise per spatial cell: inside a block the
//! coefficient name is the slow index and the phase cell `(k, m, n)` the fast
//! one, so collision sums and phase-space fluxes read contiguous memory.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::constants::DimensionlessConstants;
use crate::mesh::PhaseGrid;
use crate::quadrature::GaussLegendre;
use crate::{Error, Result};

/// Positions of the coefficient names inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_basis: usize,
    pub y: Option<usize>,
    pub w: usize,
    pub m: usize,
    pub p: Option<usize>,
}

impl Layout {
    pub const T: usize = 0;
    pub const X: usize = 1;

    pub fn for_grid(grid: &PhaseGrid) -> Self {
        if grid.is_2d() {
            Self { n_basis: 6, y: Some(2), w: 3, m: 4, p: Some(5) }
        } else {
            Self { n_basis: 4, y: None, w: 2, m: 3, p: None }
        }
    }

    /// Coefficient names in storage order.
    pub fn names(&self) -> &'static [&'static str] {
        if self.n_basis == 6 { &["T", "X", "Y", "W", "M", "P"] } else { &["T", "X", "W", "M"] }
    }
}

/// A point of phase space; unused coordinates are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasePoint {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub mu: f64,
    pub phi: f64,
}

/// Coefficient tensor of `Phi_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DgField {
    n_spatial: usize,
    n_basis: usize,
    n_phase: usize,
    data: Vec<f64>,
}

impl DgField {
    pub fn zeros(grid: &PhaseGrid) -> Self {
        Self::with_shape(grid.n_spatial(), grid.n_basis(), grid.n_phase())
    }

    pub fn with_shape(n_spatial: usize, n_basis: usize, n_phase: usize) -> Self {
        Self { n_spatial, n_basis, n_phase, data: vec![0.0; n_spatial * n_basis * n_phase] }
    }

    pub fn from_raw(n_spatial: usize, n_basis: usize, n_phase: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_spatial * n_basis * n_phase {
            return Err(Error::GridMismatch(format!(
                "coefficient count {} != {n_spatial}*{n_basis}*{n_phase}",
                data.len()
            )));
        }
        Ok(Self { n_spatial, n_basis, n_phase, data })
    }

    pub fn n_spatial(&self) -> usize {
        self.n_spatial
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn n_phase(&self) -> usize {
        self.n_phase
    }

    pub fn block_len(&self) -> usize {
        self.n_basis * self.n_phase
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn block(&self, s: usize) -> &[f64] {
        let n = self.block_len();
        &self.data[s * n..(s + 1) * n]
    }

    pub fn block_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.block_len();
        &mut self.data[s * n..(s + 1) * n]
    }

    /// Mutable per-spatial-cell chunks for parallel writers.
    pub fn blocks_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        let n = self.block_len();
        self.data.chunks_exact_mut(n)
    }

    pub fn par_blocks_mut(&mut self) -> rayon::slice::ChunksExactMut<'_, f64> {
        let n = self.block_len();
        self.data.par_chunks_exact_mut(n)
    }

    #[inline]
    pub fn index(&self, s: usize, b: usize, p: usize) -> usize {
        (s * self.n_basis + b) * self.n_phase + p
    }

    #[inline]
    pub fn get(&self, s: usize, b: usize, p: usize) -> f64 {
        self.data[self.index(s, b, p)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, b: usize, p: usize, v: f64) {
        let i = self.index(s, b, p);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_spatial == other.n_spatial && self.n_basis == other.n_basis && self.n_phase == other.n_phase
    }

    pub fn check_grid(&self, grid: &PhaseGrid) -> Result<()> {
        if self.n_spatial != grid.n_spatial() || self.n_basis != grid.n_basis() || self.n_phase != grid.n_phase() {
            return Err(Error::GridMismatch(format!(
                "field shape ({}, {}, {}) vs grid ({}, {}, {})",
                self.n_spatial,
                self.n_basis,
                self.n_phase,
                grid.n_spatial(),
                grid.n_basis(),
                grid.n_phase()
            )));
        }
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        self.data.iter_mut().zip(&other.data).for_each(|(u, v)| *u += a * v);
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `int Phi_h^2` over all cells, using the basis orthogonality.
    pub fn l2_integral(&self, grid: &PhaseGrid) -> f64 {
        let mut total = 0.0;
        for s in 0..self.n_spatial {
            let ms = grid.spatial_measure(s);
            let blk = self.block(s);
            for p in 0..self.n_phase {
                let mp = grid.phase_measure(p);
                let mut acc = blk[p] * blk[p];
                for b in 1..self.n_basis {
                    let c = blk[b * self.n_phase + p];
                    acc += c * c / 3.0;
                }
                total += ms * mp * acc;
            }
        }
        total
    }

    /// `int Phi_h` over all cells.
    pub fn total_mass(&self, grid: &PhaseGrid) -> f64 {
        (0..self.n_spatial)
            .map(|s| {
                let blk = self.block(s);
                grid.spatial_measure(s) * (0..self.n_phase).map(|p| grid.phase_measure(p) * blk[p]).sum::<f64>()
            })
            .sum()
    }
}

/// Value of cell `(s, p)`'s polynomial at `pt` (no bounds check, so traces
/// on either side of a face can be taken explicitly).
pub fn evaluate_in_cell(field: &DgField, grid: &PhaseGrid, s: usize, p: usize, pt: &PhasePoint) -> f64 {
    let lay = Layout::for_grid(grid);
    let (i, j) = grid.spatial_coords(s);
    let (k, m, n) = grid.phase_coords(p);
    let mut v = field.get(s, Layout::T, p) + field.get(s, Layout::X, p) * grid.x.xi(i, pt.x);
    if let (Some(yb), Some(ya)) = (lay.y, &grid.y) {
        v += field.get(s, yb, p) * ya.xi(j, pt.y);
    }
    v += field.get(s, lay.w, p) * grid.w.xi(k, pt.w);
    v += field.get(s, lay.m, p) * grid.mu.xi(m, pt.mu);
    if let (Some(pb), Some(pa)) = (lay.p, &grid.phi) {
        v += field.get(s, pb, p) * pa.xi(n, pt.phi);
    }
    v
}

/// Cell indices `(s, p)` containing `pt`.
pub fn locate(grid: &PhaseGrid, pt: &PhasePoint) -> Result<(usize, usize)> {
    let out = |name: &str, v: f64| Error::Domain(format!("{name} = {v} outside the grid"));
    let i = grid.x.locate(pt.x).ok_or_else(|| out("x", pt.x))?;
    let j = match &grid.y {
        Some(a) => a.locate(pt.y).ok_or_else(|| out("y", pt.y))?,
        None => 0,
    };
    let k = grid.w.locate(pt.w).ok_or_else(|| out("w", pt.w))?;
    let m = grid.mu.locate(pt.mu).ok_or_else(|| out("mu", pt.mu))?;
    let n = match &grid.phi {
        Some(a) => a.locate(pt.phi).ok_or_else(|| out("phi", pt.phi))?,
        None => 0,
    };
    Ok((grid.spatial_index(i, j), grid.phase_index(k, m, n)))
}

/// Point value of `Phi_h`; on interior faces the upper cell is used.
pub fn evaluate(field: &DgField, grid: &PhaseGrid, pt: &PhasePoint) -> Result<f64> {
    field.check_grid(grid)?;
    let (s, p) = locate(grid, pt)?;
    Ok(evaluate_in_cell(field, grid, s, p, pt))
}

/// Default Gauss–Legendre points per axis for projection.
pub const PROJECTION_ORDER: usize = 4;

/// L2 projection of `f` onto the piecewise-linear space.
///
/// `T` is the cell average of `f` and each linear coefficient is three times
/// the cell average of `f` times its basis function.
pub fn project<F>(f: F, grid: &PhaseGrid, order: usize) -> DgField
where
    F: Fn(&PhasePoint) -> f64 + Sync,
{
    let gl = GaussLegendre::new(order);
    let lay = Layout::for_grid(grid);
    let mut field = DgField::zeros(grid);
    let n_phase = grid.n_phase();
    let is_2d = grid.is_2d();
    // Reference nodes in [-1, 1] with weights normalized to sum to one.
    let nodes: Vec<(f64, f64)> = gl.nodes.iter().zip(&gl.weights).map(|(&x, &w)| (x, 0.5 * w)).collect();
    let single = [(0.0, 1.0)];
    let ynodes: &[(f64, f64)] = if is_2d { &nodes } else { &single };
    let pnodes: &[(f64, f64)] = if is_2d { &nodes } else { &single };

    field.par_blocks_mut().enumerate().for_each(|(s, blk)| {
        let (i, j) = grid.spatial_coords(s);
        let (xc, hx) = (grid.x.center(i), 0.5 * grid.x.width(i));
        let (yc, hy) = grid.y.as_ref().map_or((0.0, 0.0), |a| (a.center(j), 0.5 * a.width(j)));
        for p in 0..n_phase {
            let (k, m, n) = grid.phase_coords(p);
            let (wc, hw) = (grid.w.center(k), 0.5 * grid.w.width(k));
            let (mc, hm) = (grid.mu.center(m), 0.5 * grid.mu.width(m));
            let (pc, hp) = grid.phi.as_ref().map_or((0.0, 0.0), |a| (a.center(n), 0.5 * a.width(n)));
            let mut acc = [0.0f64; 6];
            for &(ex, ax) in &nodes {
                for &(ey, ay) in ynodes {
                    for &(ew, aw) in &nodes {
                        for &(em, am) in &nodes {
                            for &(ep, ap) in pnodes {
                                let pt = PhasePoint {
                                    x: xc + hx * ex,
                                    y: yc + hy * ey,
                                    w: wc + hw * ew,
                                    mu: mc + hm * em,
                                    phi: pc + hp * ep,
                                };
                                let v = f(&pt) * ax * ay * aw * am * ap;
                                acc[Layout::T] += v;
                                acc[Layout::X] += v * ex;
                                if let Some(yb) = lay.y {
                                    acc[yb] += v * ey;
                                }
                                acc[lay.w] += v * ew;
                                acc[lay.m] += v * em;
                                if let Some(pb) = lay.p {
                                    acc[pb] += v * ep;
                                }
                            }
                        }
                    }
                }
            }
            blk[p] = acc[0];
            for b in 1..lay.n_basis {
                blk[b * n_phase + p] = 3.0 * acc[b];
            }
        }
    });
    field
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BTEDGCK1";
const CHECKPOINT_VERSION: u32 = 1;

/// Restart data read back from a checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub time: f64,
    pub grid_hash: [u8; 32],
    pub constants: Vec<f64>,
    pub field: DgField,
}

/// Binary checkpoint, all little-endian:
///
/// | bytes | content |
/// |-------|---------|
/// | 8     | magic `BTEDGCK1` |
/// | 4     | u32 format version (1) |
/// | 4 x 3 | u32 n_spatial, n_basis, n_phase |
/// | 32    | SHA-256 grid hash |
/// | 8     | f64 time |
/// | 4     | u32 number of constants `c` |
/// | 8 c   | f64 constants in declaration order |
/// | 8 N   | f64 coefficients in storage order |
pub fn write_checkpoint<W: Write>(
    mut out: W,
    field: &DgField,
    grid: &PhaseGrid,
    time: f64,
    constants: &DimensionlessConstants,
) -> Result<()> {
    field.check_grid(grid)?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for n in [field.n_spatial, field.n_basis, field.n_phase] {
        out.write_all(&(n as u32).to_le_bytes())?;
    }
    out.write_all(&grid.hash())?;
    out.write_all(&time.to_le_bytes())?;
    let cs = constants.to_array();
    out.write_all(&(cs.len() as u32).to_le_bytes())?;
    for c in cs {
        out.write_all(&c.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(field.data.len() * 8);
    for v in &field.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads a checkpoint and checks it against `grid`.
pub fn read_checkpoint<R: Read>(mut input: R, grid: &PhaseGrid) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let ns = read_u32(&mut input)? as usize;
    let nb = read_u32(&mut input)? as usize;
    let np = read_u32(&mut input)? as usize;
    let mut grid_hash = [0u8; 32];
    input.read_exact(&mut grid_hash)?;
    if grid_hash != grid.hash() {
        return Err(Error::GridMismatch("checkpoint was written on a different grid".into()));
    }
    let time = read_f64(&mut input)?;
    let nc = read_u32(&mut input)? as usize;
    let constants = (0..nc).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
    let mut raw = vec![0u8; ns * nb * np * 8];
    input.read_exact(&mut raw)?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let field = DgField::from_raw(ns, nb, np, data)?;
    field.check_grid(grid)?;
    Ok(Checkpoint { time, grid_hash, constants, field })
}
