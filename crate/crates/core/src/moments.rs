//! Macroscopic quantities from the DG coefficients.
//!
//! Density keeps its linear coefficients (it feeds Poisson); momentum,
//! velocity and energy are reported at spatial cell centers where the
//! spatial linear terms vanish.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::basis::{DgField, Layout};
use crate::constants::ConversionFactors;
use crate::mesh::PhaseGrid;
use crate::quadtables::StreamingTables;
use crate::Result;

/// Below this the cell density counts as empty and ratios are reported as 0.
pub const RHO_FLOOR: f64 = 1e-300;

/// `pi` in 1D (the azimuth is integrated out), 1 in 2D.
pub fn angular_factor(grid: &PhaseGrid) -> f64 {
    if grid.is_2d() { 1.0 } else { PI }
}

/// `[T^, X^, Y^]` per spatial cell: `rho_h = T^ + X^ xi_x + Y^ xi_y`.
pub fn density(field: &DgField, grid: &PhaseGrid) -> Result<Vec<[f64; 3]>> {
    field.check_grid(grid)?;
    let lay = Layout::for_grid(grid);
    let ang = angular_factor(grid);
    let meas: Vec<f64> = (0..grid.n_phase()).map(|p| grid.phase_measure(p)).collect();
    Ok((0..grid.n_spatial())
        .into_par_iter()
        .map(|s| {
            let blk = field.block(s);
            let np = grid.n_phase();
            let sum = |b: usize| ang * blk[b * np..(b + 1) * np].iter().zip(&meas).map(|(v, m)| v * m).sum::<f64>();
            [sum(Layout::T), sum(Layout::X), lay.y.map_or(0.0, sum)]
        })
        .collect())
}

/// Cell average of the density in spatial cell `s`.
pub fn cell_density(field: &DgField, grid: &PhaseGrid, s: usize) -> f64 {
    let blk = field.block(s);
    angular_factor(grid) * (0..grid.n_phase()).map(|p| blk[p] * grid.phase_measure(p)).sum::<f64>()
}

/// Cell-center `int g1 Phi` and (2D) `int g2 Phi`.
pub fn momentum(field: &DgField, grid: &PhaseGrid, tabs: &StreamingTables) -> Result<Vec<[f64; 2]>> {
    field.check_grid(grid)?;
    let lay = Layout::for_grid(grid);
    let ang = angular_factor(grid);
    let np = grid.n_phase();
    Ok((0..grid.n_spatial())
        .into_par_iter()
        .map(|s| {
            let blk = field.block(s);
            let at = |b: usize, p: usize| blk[b * np + p];
            let (mut mx, mut my) = (0.0, 0.0);
            for p in 0..np {
                let (k, m, n) = grid.phase_coords(p);
                let dphi = grid.phi.as_ref().map_or(1.0, |a| a.width(n));
                mx += dphi * (at(Layout::T, p) * tabs.g1(k, m) + at(lay.w, p) * tabs.g1w(k, m) + at(lay.m, p) * tabs.g1mu(k, m));
                if let Some(pp) = lay.p {
                    my += at(Layout::T, p) * tabs.g2(k, m, n)
                        + at(lay.w, p) * tabs.g2w(k, m, n)
                        + at(lay.m, p) * tabs.g2mu(k, m, n)
                        + at(pp, p) * tabs.g2phi(k, m, n);
                }
            }
            [ang * mx, my]
        })
        .collect())
}

/// Cell-center `int w Phi`.
pub fn energy_density(field: &DgField, grid: &PhaseGrid) -> Result<Vec<f64>> {
    field.check_grid(grid)?;
    let lay = Layout::for_grid(grid);
    let ang = angular_factor(grid);
    let np = grid.n_phase();
    Ok((0..grid.n_spatial())
        .into_par_iter()
        .map(|s| {
            let blk = field.block(s);
            let e: f64 = (0..np)
                .map(|p| {
                    let (k, m, n) = grid.phase_coords(p);
                    let dw = grid.w.width(k);
                    let ang_meas = grid.mu.width(m) * grid.phi.as_ref().map_or(1.0, |a| a.width(n));
                    (grid.w.center(k) * dw * blk[p] + dw * dw / 6.0 * blk[lay.w * np + p]) * ang_meas
                })
                .sum();
            ang * e
        })
        .collect())
}

/// Macroscopic state per spatial cell, dimensionless.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroField {
    pub density: Vec<[f64; 3]>,
    pub momentum: Vec<[f64; 2]>,
    pub velocity: Vec<[f64; 2]>,
    pub energy_density: Vec<f64>,
    pub mean_energy: Vec<f64>,
    /// True where the cell density is below [`RHO_FLOOR`] and ratios were
    /// set to zero.
    pub empty: Vec<bool>,
}

impl MacroField {
    pub fn compute(field: &DgField, grid: &PhaseGrid, tabs: &StreamingTables) -> Result<Self> {
        let density = density(field, grid)?;
        let momentum = momentum(field, grid, tabs)?;
        let energy_density = energy_density(field, grid)?;
        let empty: Vec<bool> = density.iter().map(|r| !(r[0].abs() >= RHO_FLOOR)).collect();
        let ratio = |v: f64, s: usize| if empty[s] { 0.0 } else { v / density[s][0] };
        let velocity = momentum.iter().enumerate().map(|(s, m)| [ratio(m[0], s), ratio(m[1], s)]).collect();
        let mean_energy = energy_density.iter().enumerate().map(|(s, &e)| ratio(e, s)).collect();
        Ok(Self { density, momentum, velocity, energy_density, mean_energy, empty })
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn density_cm3(&self, conv: &ConversionFactors) -> Vec<f64> {
        self.density.iter().map(|r| conv.density_to_cm3(r[0])).collect()
    }

    /// Mean velocity components in cm/s.
    pub fn velocity_cm_s(&self, conv: &ConversionFactors) -> Vec<[f64; 2]> {
        self.velocity.iter().map(|v| [conv.velocity_to_cm_s(v[0]), conv.velocity_to_cm_s(v[1])]).collect()
    }

    pub fn mean_energy_ev(&self, conv: &ConversionFactors) -> Vec<f64> {
        self.mean_energy.iter().map(|&e| conv.energy_to_ev(e)).collect()
    }

    /// Total particle number `sum rho |cell|`.
    pub fn total_mass(&self, grid: &PhaseGrid) -> f64 {
        self.density.iter().enumerate().map(|(s, r)| r[0] * grid.spatial_measure(s)).sum()
    }
}
