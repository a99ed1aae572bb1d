//! Optical-phonon collision operator projected onto the DG space.
//!
//! `C(Phi) = s(w) sum_sigma c_sigma int Phi(w + sigma, mu', phi') - nu(w) Phi`
//! where the angular integral is `pi int dmu'` in 1D (the `phi'` integral done
//! analytically) and `int dmu' dphi'` in 2D. The gain part is independent of
//! the angles, so its projections onto `xi_mu` and `xi_phi` vanish.

use rayon::prelude::*;
use std::f64::consts::PI;

use crate::basis::{DgField, Layout};
use crate::constants::DimensionlessConstants;
use crate::mesh::PhaseGrid;
use crate::quadtables::{build_collision_tables, shift_strengths, CollisionTables};
use crate::Result;

/// Collision tables plus the per-grid factors needed to apply them.
#[derive(Debug, Clone)]
pub struct CollisionOperator {
    pub tables: CollisionTables,
    strengths: [f64; 3],
    /// Angular measure of each `(m, n)` cell, including the 1D `pi`.
    ang: Vec<f64>,
    inv_dw: Vec<f64>,
    layout: Layout,
    nw: usize,
    n_ang: usize,
    grid_hash: [u8; 32],
}

impl CollisionOperator {
    pub fn new(grid: &PhaseGrid, c: &DimensionlessConstants) -> Self {
        Self::from_tables(grid, c, build_collision_tables(grid, c))
    }

    pub fn from_tables(grid: &PhaseGrid, c: &DimensionlessConstants, tables: CollisionTables) -> Self {
        let pre = if grid.is_2d() { 1.0 } else { PI };
        let mut ang = Vec::with_capacity(grid.nmu() * grid.nphi());
        for m in 0..grid.nmu() {
            for n in 0..grid.nphi() {
                ang.push(pre * grid.mu.width(m) * grid.phi.as_ref().map_or(1.0, |a| a.width(n)));
            }
        }
        Self {
            tables,
            strengths: shift_strengths(c),
            ang,
            inv_dw: grid.w.widths().iter().map(|h| 1.0 / h).collect(),
            layout: Layout::for_grid(grid),
            nw: grid.nw(),
            n_ang: grid.nmu() * grid.nphi(),
            grid_hash: grid.hash(),
        }
    }

    fn check(&self, grid: &PhaseGrid, field: &DgField, rhs: &DgField) -> Result<()> {
        if grid.hash() != self.grid_hash {
            return Err(crate::Error::GridMismatch("collision tables built on another grid".into()));
        }
        field.check_grid(grid)?;
        rhs.check_grid(grid)
    }

    /// `rhs += M^{-1} (C(Phi_h), v)` for every cell and test function.
    pub fn add_to(&self, grid: &PhaseGrid, field: &DgField, rhs: &mut DgField) -> Result<()> {
        self.check(grid, field, rhs)?;
        rhs.par_blocks_mut()
            .enumerate()
            .for_each(|(s, out)| self.apply_block(field.block(s), out, grid.n_phase()));
        Ok(())
    }

    /// Collision contribution as a fresh field.
    pub fn apply(&self, grid: &PhaseGrid, field: &DgField) -> Result<DgField> {
        let mut rhs = DgField::zeros(grid);
        self.add_to(grid, field, &mut rhs)?;
        Ok(rhs)
    }

    /// Only the loss part `-nu Phi`, used to normalize residuals.
    pub fn apply_loss(&self, grid: &PhaseGrid, field: &DgField) -> Result<DgField> {
        let mut rhs = DgField::zeros(grid);
        self.check(grid, field, &rhs)?;
        let np = grid.n_phase();
        rhs.par_blocks_mut().enumerate().for_each(|(s, out)| self.loss_block(field.block(s), out, np));
        Ok(rhs)
    }

    fn loss_block(&self, blk: &[f64], out: &mut [f64], np: usize) {
        let lay = self.layout;
        for k in 0..self.nw {
            let [l0, l1, l2] = self.tables.loss[k];
            let idw = self.inv_dw[k];
            for a in 0..self.n_ang {
                let p = k * self.n_ang + a;
                let t = blk[p];
                let w = blk[lay.w * np + p];
                out[p] -= (t * l0 + w * l1) * idw;
                out[lay.w * np + p] -= 3.0 * (t * l1 + w * l2) * idw;
                for b in 1..lay.n_basis {
                    if b != lay.w {
                        out[b * np + p] -= blk[b * np + p] * l0 * idw;
                    }
                }
            }
        }
    }

    fn apply_block(&self, blk: &[f64], out: &mut [f64], np: usize) {
        let lay = self.layout;
        let nw = self.nw;
        // Angle-integrated coefficients per energy cell, ascending (m, n).
        let mut a_t = vec![0.0; nw];
        let mut a_w = vec![0.0; nw];
        let mut a_x = vec![0.0; nw];
        let mut a_y = vec![0.0; nw];
        for k in 0..nw {
            let base = k * self.n_ang;
            let (mut st, mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0);
            for (a, &g) in self.ang.iter().enumerate() {
                let p = base + a;
                st += g * blk[p];
                sw += g * blk[lay.w * np + p];
                sx += g * blk[Layout::X * np + p];
                if let Some(yb) = lay.y {
                    sy += g * blk[yb * np + p];
                }
            }
            a_t[k] = st;
            a_w[k] = sw;
            a_x[k] = sx;
            a_y[k] = sy;
        }
        for k in 0..nw {
            let (mut g0, mut gw, mut gx, mut gy) = (0.0, 0.0, 0.0, 0.0);
            for (sigma, &cs) in self.strengths.iter().enumerate() {
                let (mut h0, mut hw, mut hx, mut hy) = (0.0, 0.0, 0.0, 0.0);
                for ov in &self.tables.overlaps[sigma][k] {
                    let kp = ov.k_src;
                    let [o0, o1, o2, o3] = ov.o;
                    h0 += a_t[kp] * o0 + a_w[kp] * o1;
                    hw += a_t[kp] * o2 + a_w[kp] * o3;
                    hx += a_x[kp] * o0;
                    hy += a_y[kp] * o0;
                }
                g0 += cs * h0;
                gw += cs * hw;
                gx += cs * hx;
                gy += cs * hy;
            }
            let idw = self.inv_dw[k];
            let (g0, gw, gx, gy) = (g0 * idw, 3.0 * gw * idw, gx * idw, gy * idw);
            for a in 0..self.n_ang {
                let p = k * self.n_ang + a;
                out[p] += g0;
                out[lay.w * np + p] += gw;
                out[Layout::X * np + p] += gx;
                if let Some(yb) = lay.y {
                    out[yb * np + p] += gy;
                }
            }
        }
        self.loss_block(blk, out, np);
    }
}
