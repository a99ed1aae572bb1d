//! Dimensionless parameters of the transformed Boltzmann–Poisson system and
//! the factors converting solver quantities back to physical units.
//!
//! The lattice temperature is fixed at 300 K; length, time and voltage are
//! scaled by 1 um, 1 ps and 1 V, and the electric field by
//! `E* = 0.1 V* / l*` (1 kV/cm).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance of the detailed-balance check `c_-(n_q+1) = c_+ n_q`.
pub const DETAILED_BALANCE_TOL: f64 = 1e-3;

/// Scaled parameter set shared (read-only) by every formula of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionlessConstants {
    /// Elastic (acoustic) collision strength.
    pub c0: f64,
    /// Phonon absorption strength, `(n_q + 1) K` scaled.
    pub c_plus: f64,
    /// Phonon emission strength, `n_q K` scaled.
    pub c_minus: f64,
    /// Streaming speed scale.
    pub c_x: f64,
    /// Force scale.
    pub c_k: f64,
    /// Poisson coupling.
    pub c_p: f64,
    /// Field scale, `E = -c_v grad Psi`.
    pub c_v: f64,
    /// Phonon energy in units of `k_B T_L`.
    pub gamma: f64,
    /// Non-parabolicity `k_B T_L alpha`.
    pub alpha_k: f64,
    pub eps_r_si: f64,
    pub eps_r_ox: f64,
}

impl Default for DimensionlessConstants {
    fn default() -> Self {
        default_silicon()
    }
}

/// Parameter table for bulk silicon at 300 K.
pub fn default_silicon() -> DimensionlessConstants {
    DimensionlessConstants {
        c0: 0.26531,
        c_plus: 0.50705,
        c_minus: 0.04432,
        c_x: 0.16857,
        c_k: 0.32606,
        c_p: 1_830_349.0,
        c_v: 10.0,
        gamma: 2.43723,
        alpha_k: 0.01292,
        eps_r_si: 11.7,
        eps_r_ox: 3.9,
    }
}

/// Bose–Einstein occupation `1 / (e^gamma - 1)` of the optical phonon mode.
pub fn phonon_occupation(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!(
            "phonon energy must be positive and finite, got {gamma}"
        )));
    }
    Ok(1.0 / gamma.exp_m1())
}

impl DimensionlessConstants {
    /// Values in declaration order; used for checkpoint and output headers.
    pub fn to_array(&self) -> [f64; 11] {
        [
            self.c0,
            self.c_plus,
            self.c_minus,
            self.c_x,
            self.c_k,
            self.c_p,
            self.c_v,
            self.gamma,
            self.alpha_k,
            self.eps_r_si,
            self.eps_r_ox,
        ]
    }

    pub fn from_array(v: [f64; 11]) -> Self {
        Self {
            c0: v[0],
            c_plus: v[1],
            c_minus: v[2],
            c_x: v[3],
            c_k: v[4],
            c_p: v[5],
            c_v: v[6],
            gamma: v[7],
            alpha_k: v[8],
            eps_r_si: v[9],
            eps_r_ox: v[10],
        }
    }

    pub const NAMES: [&'static str; 11] = [
        "c0", "c_plus", "c_minus", "c_x", "c_k", "c_p", "c_v", "gamma", "alpha_k", "eps_r_si",
        "eps_r_ox",
    ];

    /// Relative mismatch `|c_-(n_q+1) - c_+ n_q| / (c_+ n_q)`.
    pub fn detailed_balance_defect(&self) -> Result<f64> {
        let nq = phonon_occupation(self.gamma)?;
        let lhs = self.c_minus * (nq + 1.0);
        let rhs = self.c_plus * nq;
        Ok((lhs - rhs).abs() / rhs)
    }

    /// Checks positivity of every field and the detailed-balance relation.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("constant {name} must be positive, got {v}")));
            }
        }
        let defect = self.detailed_balance_defect()?;
        if defect > DETAILED_BALANCE_TOL {
            return Err(Error::Domain(format!(
                "detailed balance violated: relative defect {defect:.3e} > {DETAILED_BALANCE_TOL:e}"
            )));
        }
        Ok(())
    }

    /// `key=value` lines for output headers.
    pub fn header_lines(&self) -> Vec<String> {
        Self::NAMES
            .iter()
            .zip(self.to_array())
            .map(|(k, v)| format!("{k}={v:.17e}"))
            .collect()
    }
}

/// Factors from solver units to physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionFactors {
    /// rho -> electrons per m^3.
    pub density_factor: f64,
    /// mean w -> eV.
    pub energy_factor: f64,
    /// dimensionless velocity -> m/s (`l*/t*`).
    pub velocity_factor: f64,
    pub length_scale: f64,
    pub time_scale: f64,
    pub voltage_scale: f64,
}

impl Default for ConversionFactors {
    fn default() -> Self {
        Self {
            density_factor: 1.0115e26,
            energy_factor: 0.025849,
            velocity_factor: 1e-6 / 1e-12,
            length_scale: 1e-6,
            time_scale: 1e-12,
            voltage_scale: 1.0,
        }
    }
}

impl ConversionFactors {
    /// Field scale `E* = 0.1 V*/l*` in V/m.
    pub fn field_scale(&self) -> f64 {
        0.1 * self.voltage_scale / self.length_scale
    }

    /// cm^-3 doping to dimensionless density.
    pub fn density_from_cm3(&self, n_cm3: f64) -> f64 {
        n_cm3 * 1e6 / self.density_factor
    }

    pub fn density_to_cm3(&self, rho: f64) -> f64 {
        rho * self.density_factor * 1e-6
    }

    pub fn velocity_to_cm_s(&self, v: f64) -> f64 {
        v * self.velocity_factor * 100.0
    }

    pub fn energy_to_ev(&self, w: f64) -> f64 {
        w * self.energy_factor
    }

    /// Dimensionless field to kV/cm.
    pub fn field_to_kv_cm(&self, e: f64) -> f64 {
        e * self.field_scale() / 1e5
    }

    pub fn potential_to_volt(&self, psi: f64) -> f64 {
        psi * self.voltage_scale
    }
}
