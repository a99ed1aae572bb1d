//! Coupled time advance: density, Poisson, ghost cells, transport plus
//! collision right-hand side, then a forward Euler or SSP Runge-Kutta update.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::basis::DgField;
use crate::collision::CollisionOperator;
use crate::constants::DimensionlessConstants;
use crate::device::{ghost_layer, initial_condition, Device, FieldSolver, XBoundary, YBoundary};
use crate::mesh::PhaseGrid;
use crate::moments::density;
use crate::poisson::PoissonSolution;
use crate::quadtables::{build_streaming_tables, nu, StreamingTables};
use crate::transport::{FieldSample, TransportOperator};
use crate::{Error, Result};

/// Largest allowed `nu_max dt`.
pub const COLLISION_DT_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Rk2,
}

impl Scheme {
    pub fn default_cfl(self) -> f64 {
        match self {
            Scheme::Euler => 0.1,
            Scheme::Rk2 => 0.2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk2" => Ok(Scheme::Rk2),
            _ => Err(Error::Config(format!("unknown scheme {s:?} (euler | rk2)"))),
        }
    }
}

/// Where the electric field comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldMode {
    /// Solve Poisson at every stage.
    SelfConsistent,
    /// Fixed cell-mean field, no Poisson solve.
    Frozen(FieldSample),
}

/// Switches for the physics and closures; the defaults are the full model.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOptions {
    pub transport: bool,
    pub collision: bool,
    pub field: FieldMode,
    pub x_boundary: XBoundary,
    pub y_boundary: YBoundary,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            transport: true,
            collision: true,
            field: FieldMode::SelfConsistent,
            x_boundary: XBoundary::Contact,
            y_boundary: YBoundary::Specular,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub t: f64,
    pub field: DgField,
    /// Potential for `field` (absent with a frozen field).
    pub poisson: Option<PoissonSolution>,
    /// Cell-mean field used for the next stage.
    pub e: FieldSample,
    pub step: u64,
    pub dt: f64,
}

/// Everything that stays fixed during a run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub grid: PhaseGrid,
    pub constants: DimensionlessConstants,
    pub device: Device,
    pub tables: StreamingTables,
    pub options: StepOptions,
    transport: TransportOperator,
    collision: CollisionOperator,
    solver: FieldSolver,
    nu_max: f64,
}

impl Simulation {
    pub fn new(grid: PhaseGrid, constants: DimensionlessConstants, device: Device, options: StepOptions) -> Result<Self> {
        constants.validate()?;
        if device.doping.len() != grid.n_spatial() {
            return Err(Error::GridMismatch("device resolved on another grid".into()));
        }
        if let FieldMode::Frozen(e) = &options.field {
            e.check(grid.n_spatial())?;
        }
        let tables = build_streaming_tables(&grid, &constants);
        let transport = TransportOperator::new(&grid, &tables, &constants);
        let collision = CollisionOperator::new(&grid, &constants);
        let solver = device.field_solver(&grid, &constants)?;
        let nu_max = grid.w.edges().iter().map(|&w| nu(w, &constants)).fold(0.0, f64::max);
        Ok(Self { grid, constants, device, tables, options, transport, collision, solver, nu_max })
    }

    pub fn nu_max(&self) -> f64 {
        self.nu_max
    }

    pub fn field_solver(&self) -> &FieldSolver {
        &self.solver
    }

    /// Electric field for `field`: Poisson from its density, or the frozen one.
    pub fn electric_field(&self, field: &DgField) -> Result<(FieldSample, Option<PoissonSolution>)> {
        match &self.options.field {
            FieldMode::Frozen(e) => Ok((e.clone(), None)),
            FieldMode::SelfConsistent => {
                let rho = density(field, &self.grid)?;
                let sol = self.solver.solve(&rho, &self.device.doping, self.constants.c_p)?;
                let e = sol.field_sample(self.grid.n_spatial());
                if !e.ex.iter().chain(&e.ey).all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("electric field".into()));
                }
                Ok((e, Some(sol)))
            }
        }
    }

    pub fn state_from_field(&self, t: f64, field: DgField) -> Result<RunState> {
        field.check_grid(&self.grid)?;
        let (e, poisson) = self.electric_field(&field)?;
        Ok(RunState { t, field, poisson, e, step: 0, dt: 0.0 })
    }

    /// Locally Maxwellian state with density equal to the doping.
    pub fn initial_state(&self) -> Result<RunState> {
        let f = initial_condition(&self.grid, &self.device.doping, self.constants.alpha_k)?;
        self.state_from_field(0.0, f)
    }

    /// `d Phi / dt` for a field and the electric field belonging to it.
    pub fn rhs(&self, field: &DgField, e: &FieldSample) -> Result<DgField> {
        let mut out = DgField::zeros(&self.grid);
        if self.options.transport {
            let ghosts = ghost_layer(field, &self.grid, &self.device.doping, self.options.x_boundary, self.options.y_boundary)?;
            self.transport.add_to(&self.grid, field, &ghosts, e, &mut out)?;
        }
        if self.options.collision {
            self.collision.add_to(&self.grid, field, &mut out)?;
        }
        Ok(out)
    }

    /// `cfl / max_cells sum_terms |strength| max_corners |shape| / width`,
    /// further limited by `nu_max dt <= 0.9` when collisions are on.
    pub fn compute_dt(&self, e: &FieldSample, cfl: f64) -> Result<f64> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0, 1], got {cfl}")));
        }
        if !e.ex.iter().chain(&e.ey).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("electric field".into()));
        }
        let mut dt = f64::INFINITY;
        if self.options.transport {
            let rate = self.transport.max_rate(&self.grid, e)?;
            if rate > 0.0 {
                dt = cfl / rate;
            }
        }
        if self.options.collision && self.nu_max > 0.0 {
            dt = dt.min(COLLISION_DT_LIMIT / self.nu_max);
        }
        if !dt.is_finite() {
            return Err(Error::Config("no active term bounds the time step".into()));
        }
        Ok(dt)
    }

    /// Advances by exactly `dt`. Both Runge-Kutta stages use the same `dt`.
    pub fn step_once(&self, state: &RunState, scheme: Scheme, dt: f64) -> Result<RunState> {
        if !(dt >= 0.0) {
            return Err(Error::Domain(format!("negative time step {dt}")));
        }
        let mut next = state.field.clone();
        next.axpy(dt, &self.rhs(&state.field, &state.e)?);
        if scheme == Scheme::Rk2 {
            let (e1, _) = self.electric_field(&next)?;
            let mut stage = next.clone();
            stage.axpy(dt, &self.rhs(&next, &e1)?);
            next = state.field.clone();
            next.axpy(1.0, &stage);
            next.scale(0.5);
        }
        if !next.is_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite coefficients after step {} at t = {} (dt = {dt:e})",
                state.step + 1,
                state.t + dt
            )));
        }
        let (e, poisson) = self.electric_field(&next)?;
        Ok(RunState { t: state.t + dt, field: next, poisson, e, step: state.step + 1, dt })
    }

    /// One step with the CFL-limited `dt`, clipped so as not to pass `t_stop`.
    pub fn step(&self, state: &RunState, scheme: Scheme, cfl: f64, t_stop: f64) -> Result<RunState> {
        let dt = self.compute_dt(&state.e, cfl)?.min(t_stop - state.t);
        self.step_once(state, scheme, dt)
    }

    /// Advances to `plan.t_end`, calling `observer` at every snapshot time
    /// (and at the end) and logging progress to `log` every `plan.log_every`
    /// steps.
    pub fn run_transient(
        &self,
        mut state: RunState,
        plan: &RunPlan,
        observer: &mut dyn FnMut(&RunState) -> Result<()>,
        log: &mut dyn Write,
    ) -> Result<RunState> {
        if !(plan.t_end >= state.t) {
            return Err(Error::Config(format!("t_end {} is before the current time {}", plan.t_end, state.t)));
        }
        let mut targets: Vec<f64> = plan.snapshots.iter().copied().filter(|&t| t > state.t && t < plan.t_end).collect();
        targets.sort_by(f64::total_cmp);
        targets.dedup();
        targets.push(plan.t_end);
        let tol = 1e-12 * plan.t_end.max(1.0);
        let mass0 = state.field.total_mass(&self.grid);
        for target in targets {
            while target - state.t > tol {
                if plan.max_steps.is_some_and(|n| state.step >= n) {
                    return Ok(state);
                }
                let prev = state.field.norm_l2();
                let next = self.step(&state, plan.scheme, plan.cfl, target)?;
                if plan.log_every > 0 && next.step % plan.log_every == 0 {
                    let mut d = next.field.clone();
                    d.axpy(-1.0, &state.field);
                    let resid = d.norm_l2() / (next.dt * prev).max(f64::MIN_POSITIVE);
                    let mass = next.field.total_mass(&self.grid) / mass0;
                    // best effort: a closed log stream must not stop the run
                    let _ = writeln!(
                        log,
                        "step {:>7}  t {:.6e}  dt {:.3e}  mass {:.12}  residual {:.3e}",
                        next.step, next.t, next.dt, mass, resid
                    );
                }
                state = next;
            }
            state.t = state.t.max(target);
            observer(&state)?;
        }
        Ok(state)
    }
}

/// Time-stepping plan of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub scheme: Scheme,
    pub cfl: f64,
    pub t_end: f64,
    pub snapshots: Vec<f64>,
    pub log_every: u64,
    /// Stop early after this many steps (the state is returned as is).
    pub max_steps: Option<u64>,
}

impl RunPlan {
    pub fn new(scheme: Scheme, t_end: f64) -> Self {
        Self { scheme, cfl: scheme.default_cfl(), t_end, snapshots: vec![], log_every: 0, max_steps: None }
    }
}
