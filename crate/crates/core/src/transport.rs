//! Free-streaming residual: volume integrals and upwind face fluxes of
//! `div(g Phi)` in `(x[, y], w, mu[, phi])`.
//!
//! Every advection coefficient is a sum of separable terms
//! `strength(E) * W(w) * M(mu) * P(phi)`. Their cell and face integrals
//! against the linear basis factor into one-dimensional moments, which are
//! precomputed per phase cell; only the `E`-dependent strength is applied at
//! run time. Each term is upwinded on its own, using the sign of its speed at
//! the face center with the other coordinates at the cell centers.

use rayon::prelude::*;

use crate::basis::{DgField, Layout};
use crate::constants::DimensionlessConstants;
use crate::mesh::PhaseGrid;
use crate::quadtables::{MuFactor, PhiFactor, StreamingTables, WFactor};
use crate::{Error, Result};

/// Direction a flux term acts along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FluxAxis {
    X,
    Y,
    W,
    Mu,
    Phi,
}

impl FluxAxis {
    fn is_spatial(self) -> bool {
        matches!(self, FluxAxis::X | FluxAxis::Y)
    }
}

/// Prefactor of a term: `c_x`, or `mult * c_k * E_x` / `mult * c_k * E_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strength {
    Stream,
    Ex(f64),
    Ey(f64),
}

/// One separable piece of a `g_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GTerm {
    pub axis: FluxAxis,
    pub strength: Strength,
    pub w: WFactor,
    pub mu: MuFactor,
    pub phi: PhiFactor,
}

impl GTerm {
    pub fn strength_value(&self, c: &DimensionlessConstants, ex: f64, ey: f64) -> f64 {
        match self.strength {
            Strength::Stream => c.c_x,
            Strength::Ex(m) => m * c.c_k * ex,
            Strength::Ey(m) => m * c.c_k * ey,
        }
    }

    pub fn shape(&self, w: f64, mu: f64, phi: f64, alpha: f64) -> f64 {
        self.w.eval(w, alpha) * self.mu.eval(mu) * self.phi.eval(phi)
    }
}

/// The decomposition of `g_1 .. g_5` (1D keeps `g_1`, `g_3`, `g_4` with
/// `E_y = 0`, `phi` integrated out).
pub fn g_terms(is_2d: bool) -> Vec<GTerm> {
    use FluxAxis::*;
    use MuFactor as M;
    use PhiFactor as P;
    use Strength::*;
    use WFactor::*;
    let t = |axis, strength, w, mu, phi| GTerm { axis, strength, w, mu, phi };
    let mut v = vec![
        t(X, Stream, S1, M::Mu, P::One),
        t(W, Ex(-2.0), S1, M::Mu, P::One),
        t(Mu, Ex(-1.0), S2, M::OneMinusSq, P::One),
    ];
    if is_2d {
        v.extend([
            t(Y, Stream, S1, M::Sqrt, P::Cos),
            t(W, Ey(-2.0), S1, M::Sqrt, P::Cos),
            t(Mu, Ey(1.0), S2, M::MuSqrt, P::Cos),
            t(Phi, Ey(1.0), S2, M::InvSqrt, P::Sin),
        ]);
    }
    v
}

/// Pointwise `g_index` (1 = x, 2 = y, 3 = w, 4 = mu, 5 = phi).
///
/// Singular at `w = 0` for indices 4, 5 and at `mu = +-1` for index 5; the
/// discretization never evaluates those points.
pub fn eval_g(index: usize, w: f64, mu: f64, phi: f64, ex: f64, ey: f64, c: &DimensionlessConstants) -> Result<f64> {
    let axis = match index {
        1 => FluxAxis::X,
        2 => FluxAxis::Y,
        3 => FluxAxis::W,
        4 => FluxAxis::Mu,
        5 => FluxAxis::Phi,
        _ => return Err(Error::Domain(format!("no coefficient g_{index}"))),
    };
    Ok(g_terms(true)
        .iter()
        .filter(|t| t.axis == axis)
        .map(|t| t.strength_value(c, ex, ey) * t.shape(w, mu, phi, c.alpha_k))
        .sum())
}

/// Cell-mean electric field per silicon spatial cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
}

impl FieldSample {
    pub fn zeros(n_spatial: usize) -> Self {
        Self { ex: vec![0.0; n_spatial], ey: vec![0.0; n_spatial] }
    }

    pub fn uniform(n_spatial: usize, ex: f64, ey: f64) -> Self {
        Self { ex: vec![ex; n_spatial], ey: vec![ey; n_spatial] }
    }

    pub fn check(&self, n_spatial: usize) -> Result<()> {
        if self.ex.len() != n_spatial || self.ey.len() != n_spatial {
            return Err(Error::GridMismatch("field sample length".into()));
        }
        if !self.ex.iter().chain(&self.ey).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("electric field".into()));
        }
        Ok(())
    }
}

/// Neighbor data outside the spatial domain, one block per boundary cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GhostLayer {
    /// Left of `i = 0`, indexed by row `j`.
    pub x_lo: Vec<Vec<f64>>,
    /// Right of `i = N_x - 1`, indexed by row `j`.
    pub x_hi: Vec<Vec<f64>>,
    /// Below `j = 0`, indexed by column `i` (2D only).
    pub y_lo: Vec<Vec<f64>>,
    /// Above `j = N_y - 1`, indexed by column `i` (2D only).
    pub y_hi: Vec<Vec<f64>>,
}

impl GhostLayer {
    fn check(&self, grid: &PhaseGrid, block_len: usize) -> Result<()> {
        let ok = |v: &Vec<Vec<f64>>, n: usize| v.len() == n && v.iter().all(|b| b.len() == block_len);
        let ny = if grid.is_2d() { grid.nx() } else { 0 };
        if !ok(&self.x_lo, grid.ny()) || !ok(&self.x_hi, grid.ny()) || !ok(&self.y_lo, ny) || !ok(&self.y_hi, ny) {
            return Err(Error::Boundary("missing or malformed ghost blocks".into()));
        }
        Ok(())
    }
}

/// Face-integral matrix of one term, sparse over the reduced index set.
#[derive(Debug, Clone)]
struct FaceFamily {
    term: usize,
    /// Basis index of the flux direction's linear function.
    normal: usize,
    /// Reduced set: `red[0]` is the constant, then the other directions.
    red: Vec<usize>,
    pattern: Vec<(usize, usize)>,
    /// Entry-major: `vals[e * n + f]` for pattern entry `e` and face (phase
    /// directions) or phase cell (spatial directions) `f`.
    vals: Vec<f64>,
    /// Sign of the speed without the strength, per face or per phase cell.
    sign: Vec<f64>,
    /// Lower and upper phase cell of each face (phase directions only).
    faces: Vec<(usize, usize)>,
    /// `1 / width` along the flux direction of each face's lower cell.
    inv_lo: Vec<f64>,
    /// Same for the upper cell.
    inv_hi: Vec<f64>,
    /// Upper cell index minus lower cell index.
    stride: usize,
    /// Faces `f0..f0 + len` whose lower cells are `lo0..lo0 + len`, as
    /// `(f0, lo0, len)`.
    runs: Vec<(usize, usize, usize)>,
}

/// Maximal runs of faces with consecutive lower cells.
fn face_runs(faces: &[(usize, usize)]) -> Vec<(usize, usize, usize)> {
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    for (f, &(lo, _)) in faces.iter().enumerate() {
        match runs.last_mut() {
            Some((_, lo0, len)) if *lo0 + *len == lo => *len += 1,
            _ => runs.push((f, lo, 1)),
        }
    }
    runs
}

/// Volume integral vector of one term.
#[derive(Debug, Clone)]
struct VolumeTerm {
    term: usize,
    normal: usize,
    /// Basis indices with structurally nonzero entries.
    cols: Vec<usize>,
    /// Column-major: `vals[c * n_phase + p]`, including `6 / width` for
    /// phase directions.
    vals: Vec<f64>,
}

/// Precomputed streaming operator for one grid.
#[derive(Debug, Clone)]
pub struct TransportOperator {
    constants: DimensionlessConstants,
    terms: Vec<GTerm>,
    volumes: Vec<VolumeTerm>,
    phase_faces: Vec<FaceFamily>,
    x_faces: Vec<FaceFamily>,
    y_faces: Vec<FaceFamily>,
    /// Per term and phase cell: max over cell corners of `|shape|`, divided
    /// by the cell width for phase directions.
    rate_coef: Vec<Vec<f64>>,
    n_phase: usize,
    grid_hash: [u8; 32],
}

fn basis_axis(lay: &Layout, b: usize) -> Option<FluxAxis> {
    if b == Layout::T {
        None
    } else if b == Layout::X {
        Some(FluxAxis::X)
    } else if Some(b) == lay.y {
        Some(FluxAxis::Y)
    } else if b == lay.w {
        Some(FluxAxis::W)
    } else if b == lay.m {
        Some(FluxAxis::Mu)
    } else {
        Some(FluxAxis::Phi)
    }
}

fn axis_basis(lay: &Layout, a: FluxAxis) -> usize {
    match a {
        FluxAxis::X => Layout::X,
        FluxAxis::Y => lay.y.expect("y basis in 2D"),
        FluxAxis::W => lay.w,
        FluxAxis::Mu => lay.m,
        FluxAxis::Phi => lay.p.expect("phi basis in 2D"),
    }
}

/// Normalized moments `(1/h) int f xi^q`, `q = 0, 1, 2`, of the term's
/// factor along `axis` in the given phase cell.
fn norm_moments(grid: &PhaseGrid, tabs: &StreamingTables, t: &GTerm, axis: FluxAxis, p: usize) -> [f64; 3] {
    let (k, m, n) = grid.phase_coords(p);
    let scale = |v: [f64; 3], h: f64| v.map(|x| x / h);
    match axis {
        FluxAxis::X | FluxAxis::Y => [1.0, 0.0, 1.0 / 3.0],
        FluxAxis::W => scale(tabs.w_moment(t.w, k), grid.w.width(k)),
        FluxAxis::Mu => scale(tabs.mu_moment(t.mu, m), grid.mu.width(m)),
        FluxAxis::Phi => match &grid.phi {
            Some(phi) => scale(tabs.phi_moment(t.phi, n), phi.width(n)),
            None => [1.0, 0.0, 1.0 / 3.0],
        },
    }
}

fn axes(grid: &PhaseGrid) -> Vec<FluxAxis> {
    use FluxAxis::*;
    if grid.is_2d() { vec![X, Y, W, Mu, Phi] } else { vec![X, W, Mu] }
}

/// Factor value at a cell center (or at `face` along the flux direction).
fn center_shape(grid: &PhaseGrid, t: &GTerm, p: usize, face: Option<f64>, alpha: f64) -> f64 {
    let (k, m, n) = grid.phase_coords(p);
    let mut w = grid.w.center(k);
    let mut mu = grid.mu.center(m);
    let mut phi = grid.phi.as_ref().map_or(0.0, |a| a.center(n));
    if let Some(f) = face {
        match t.axis {
            FluxAxis::W => w = f,
            FluxAxis::Mu => mu = f,
            FluxAxis::Phi => phi = f,
            _ => {}
        }
    }
    let pv = if grid.is_2d() { t.phi.eval(phi) } else { 1.0 };
    t.w.eval(w, alpha) * t.mu.eval(mu) * pv
}

/// Row-major `n x width` to column-major.
fn transpose(rows: &[f64], width: usize) -> Vec<f64> {
    if width == 0 {
        return vec![];
    }
    let n = rows.len() / width;
    (0..width).flat_map(|c| (0..n).map(move |r| rows[r * width + c])).collect()
}

/// Work arrays of one block, laid out like the entry-major face values.
struct Scratch {
    chat: Vec<f64>,
    flux: Vec<f64>,
}

impl Scratch {
    fn new(np: usize) -> Self {
        Self { chat: vec![0.0; 6 * np], flux: vec![0.0; 6 * np] }
    }
}

/// `flux[a] += vals[e] * chat[b]` over the pattern, all items at once.
fn apply_pattern(pattern: &[(usize, usize)], vals: &[f64], n: usize, chat: &[f64], flux: &mut [f64], nr: usize) {
    flux[..nr * n].fill(0.0);
    for (e, &(a, b)) in pattern.iter().enumerate() {
        let v = &vals[e * n..(e + 1) * n];
        let c = &chat[b * n..(b + 1) * n];
        for ((y, &v), &c) in flux[a * n..(a + 1) * n].iter_mut().zip(v).zip(c) {
            *y += v * c;
        }
    }
}

fn sign_of(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl TransportOperator {
    pub fn new(grid: &PhaseGrid, tabs: &StreamingTables, c: &DimensionlessConstants) -> Self {
        let lay = Layout::for_grid(grid);
        let terms = g_terms(grid.is_2d());
        let all_axes = axes(grid);
        let np = grid.n_phase();
        let alpha = c.alpha_k;

        let p_of = |b: usize, ax: FluxAxis| usize::from(basis_axis(&lay, b) == Some(ax));

        let mut volumes = Vec::new();
        let mut phase_faces = Vec::new();
        let mut x_faces = Vec::new();
        let mut y_faces = Vec::new();
        for (ti, t) in terms.iter().enumerate() {
            let normal = axis_basis(&lay, t.axis);
            // Volume: test xi_a against every basis function; spatial
            // directions carry constant factors, so their linear functions drop.
            let cols: Vec<usize> =
                (0..lay.n_basis).filter(|&b| !basis_axis(&lay, b).is_some_and(FluxAxis::is_spatial)).collect();
            let mut vals = Vec::with_capacity(np * cols.len());
            for p in 0..np {
                let mom: Vec<[f64; 3]> = all_axes.iter().map(|&ax| norm_moments(grid, tabs, t, ax, p)).collect();
                let h = match t.axis {
                    FluxAxis::W => grid.w.width(grid.phase_coords(p).0),
                    FluxAxis::Mu => grid.mu.width(grid.phase_coords(p).1),
                    FluxAxis::Phi => grid.phi.as_ref().unwrap().width(grid.phase_coords(p).2),
                    _ => 1.0,
                };
                for &b in &cols {
                    let prod: f64 = all_axes.iter().zip(&mom).map(|(&ax, mm)| mm[p_of(b, ax)]).product();
                    vals.push(6.0 / h * prod);
                }
            }
            let vals = transpose(&vals, cols.len());
            volumes.push(VolumeTerm { term: ti, normal, cols, vals });

            // Faces: reduced index set and structural sparsity.
            let mut red = vec![Layout::T];
            red.extend((1..lay.n_basis).filter(|&b| b != normal));
            let others: Vec<FluxAxis> = all_axes.iter().copied().filter(|&a| a != t.axis).collect();
            let mut pattern = Vec::new();
            for (ti_, &tb) in red.iter().enumerate() {
                for (bi_, &bb) in red.iter().enumerate() {
                    let structural_zero = others
                        .iter()
                        .any(|&ax| ax.is_spatial() && p_of(tb, ax) + p_of(bb, ax) == 1);
                    if !structural_zero {
                        pattern.push((ti_, bi_));
                    }
                }
            }
            let face_vals = |p: usize, face_coord: Option<f64>| -> Vec<f64> {
                let mom: Vec<[f64; 3]> = others.iter().map(|&ax| norm_moments(grid, tabs, t, ax, p)).collect();
                let fa = match t.axis {
                    FluxAxis::X | FluxAxis::Y => 1.0,
                    FluxAxis::W => t.w.eval(face_coord.unwrap(), alpha),
                    FluxAxis::Mu => t.mu.eval(face_coord.unwrap()),
                    FluxAxis::Phi => t.phi.eval(face_coord.unwrap()),
                };
                pattern
                    .iter()
                    .map(|&(a, b)| {
                        fa * others
                            .iter()
                            .zip(&mom)
                            .map(|(&ax, mm)| mm[p_of(red[a], ax) + p_of(red[b], ax)])
                            .product::<f64>()
                    })
                    .collect()
            };

            if t.axis.is_spatial() {
                let mut vals = Vec::with_capacity(np * pattern.len());
                let mut sign = Vec::with_capacity(np);
                for p in 0..np {
                    vals.extend(face_vals(p, None));
                    sign.push(sign_of(center_shape(grid, t, p, None, alpha)));
                }
                let vals = transpose(&vals, pattern.len());
                let fam = FaceFamily {
                    term: ti,
                    normal,
                    red,
                    pattern,
                    vals,
                    sign,
                    faces: vec![],
                    inv_lo: vec![],
                    inv_hi: vec![],
                    stride: 0,
                    runs: vec![],
                };
                if t.axis == FluxAxis::X { x_faces.push(fam) } else { y_faces.push(fam) }
            } else {
                let mut faces = Vec::new();
                let mut inv_h = Vec::new();
                let mut vals = Vec::new();
                let mut sign = Vec::new();
                let (nw, nmu, nphi) = (grid.nw(), grid.nmu(), grid.nphi());
                for k in 0..nw {
                    for m in 0..nmu {
                        for n in 0..nphi {
                            let lo = grid.phase_index(k, m, n);
                            let (hi, coord, hl, hh) = match t.axis {
                                FluxAxis::W if k + 1 < nw => (
                                    grid.phase_index(k + 1, m, n),
                                    grid.w.edges()[k + 1],
                                    grid.w.width(k),
                                    grid.w.width(k + 1),
                                ),
                                FluxAxis::Mu if m + 1 < nmu => (
                                    grid.phase_index(k, m + 1, n),
                                    grid.mu.edges()[m + 1],
                                    grid.mu.width(m),
                                    grid.mu.width(m + 1),
                                ),
                                FluxAxis::Phi if n + 1 < nphi => {
                                    let phi = grid.phi.as_ref().unwrap();
                                    (grid.phase_index(k, m, n + 1), phi.edges()[n + 1], phi.width(n), phi.width(n + 1))
                                }
                                _ => continue,
                            };
                            faces.push((lo, hi));
                            inv_h.push((1.0 / hl, 1.0 / hh));
                            vals.extend(face_vals(lo, Some(coord)));
                            sign.push(sign_of(center_shape(grid, t, lo, Some(coord), alpha)));
                        }
                    }
                }
                let vals = transpose(&vals, pattern.len());
                let stride = match t.axis {
                    FluxAxis::W => nmu * nphi,
                    FluxAxis::Mu => nphi,
                    _ => 1,
                };
                debug_assert!(faces.iter().all(|&(lo, hi)| hi == lo + stride));
                let runs = face_runs(&faces);
                let (inv_lo, inv_hi) = inv_h.into_iter().unzip();
                phase_faces.push(FaceFamily {
                    term: ti,
                    normal,
                    red,
                    pattern,
                    vals,
                    sign,
                    faces,
                    inv_lo,
                    inv_hi,
                    stride,
                    runs,
                });
            }
        }

        let rate_coef = terms
            .iter()
            .map(|t| {
                (0..np)
                    .map(|p| {
                        let (k, m, n) = grid.phase_coords(p);
                        let h = match t.axis {
                            FluxAxis::W => grid.w.width(k),
                            FluxAxis::Mu => grid.mu.width(m),
                            FluxAxis::Phi => grid.phi.as_ref().unwrap().width(n),
                            FluxAxis::X | FluxAxis::Y => 1.0,
                        };
                        corner_max_shape(grid, tabs, t, p, alpha) / h
                    })
                    .collect()
            })
            .collect();

        Self {
            constants: *c,
            terms,
            volumes,
            phase_faces,
            x_faces,
            y_faces,
            rate_coef,
            n_phase: np,
            grid_hash: grid.hash(),
        }
    }

    pub fn terms(&self) -> &[GTerm] {
        &self.terms
    }

    /// `rhs += M^{-1}` (volume terms minus face fluxes) of `div(g Phi)`.
    pub fn add_to(
        &self,
        grid: &PhaseGrid,
        field: &DgField,
        ghosts: &GhostLayer,
        e: &FieldSample,
        rhs: &mut DgField,
    ) -> Result<()> {
        if grid.hash() != self.grid_hash {
            return Err(Error::GridMismatch("transport operator built on another grid".into()));
        }
        field.check_grid(grid)?;
        rhs.check_grid(grid)?;
        e.check(grid.n_spatial())?;
        ghosts.check(grid, field.block_len())?;
        let np = self.n_phase;
        rhs.par_blocks_mut().enumerate().for_each_init(
            || Scratch::new(np),
            |sc, (s, out)| self.block_rhs(grid, field, ghosts, e, s, out, sc),
        );
        Ok(())
    }

    /// Transport contribution as a fresh field.
    pub fn apply(&self, grid: &PhaseGrid, field: &DgField, ghosts: &GhostLayer, e: &FieldSample) -> Result<DgField> {
        let mut rhs = DgField::zeros(grid);
        self.add_to(grid, field, ghosts, e, &mut rhs)?;
        Ok(rhs)
    }

    #[allow(clippy::too_many_arguments)]
    fn block_rhs(
        &self,
        grid: &PhaseGrid,
        field: &DgField,
        ghosts: &GhostLayer,
        e: &FieldSample,
        s: usize,
        out: &mut [f64],
        sc: &mut Scratch,
    ) {
        let np = self.n_phase;
        let blk = field.block(s);
        let (ex, ey) = (e.ex[s], e.ey[s]);
        let (i, j) = grid.spatial_coords(s);
        let c = &self.constants;

        for v in &self.volumes {
            let t = &self.terms[v.term];
            let mut st = t.strength_value(c, ex, ey);
            if st == 0.0 {
                continue;
            }
            match t.axis {
                FluxAxis::X => st /= grid.x.width(i),
                FluxAxis::Y => st /= grid.y.as_ref().unwrap().width(j),
                _ => {}
            }
            let acc = &mut sc.flux[..np];
            acc.fill(0.0);
            for (ci, &b) in v.cols.iter().enumerate() {
                let vals = &v.vals[ci * np..(ci + 1) * np];
                for ((a, &val), &x) in acc.iter_mut().zip(vals).zip(&blk[b * np..(b + 1) * np]) {
                    *a += val * x;
                }
            }
            for (d, &a) in out[v.normal * np..(v.normal + 1) * np].iter_mut().zip(acc.iter()) {
                *d += st * a;
            }
        }

        for fam in &self.phase_faces {
            let t = &self.terms[fam.term];
            let st = t.strength_value(c, ex, ey);
            if st == 0.0 {
                continue;
            }
            let ssign = sign_of(st);
            let nr = fam.red.len();
            let n = fam.faces.len();
            let (chat, flux) = (&mut sc.chat, &mut sc.flux);
            let nrm = fam.normal * np;
            let d = fam.stride;
            for &(f0, lo0, len) in &fam.runs {
                let sg = &fam.sign[f0..f0 + len];
                for r in 0..nr {
                    let b = fam.red[r] * np;
                    let (l, h) = (&blk[b + lo0..b + lo0 + len], &blk[b + lo0 + d..b + lo0 + d + len]);
                    let dst = &mut chat[r * n + f0..r * n + f0 + len];
                    if r == 0 {
                        let (ln, hn) = (&blk[nrm + lo0..nrm + lo0 + len], &blk[nrm + lo0 + d..nrm + lo0 + d + len]);
                        for q in 0..len {
                            dst[q] = if sg[q] * ssign > 0.0 { l[q] + ln[q] } else { h[q] - hn[q] };
                        }
                    } else {
                        for q in 0..len {
                            dst[q] = if sg[q] * ssign > 0.0 { l[q] } else { h[q] };
                        }
                    }
                }
            }
            apply_pattern(&fam.pattern, &fam.vals, n, chat, flux, nr);
            // Lower cells of every run first, then upper cells.
            for (shift, ih, sgn) in [(0, &fam.inv_lo, -1.0), (d, &fam.inv_hi, 1.0)] {
                for &(f0, lo0, len) in &fam.runs {
                    let c0 = lo0 + shift;
                    let ih = &ih[f0..f0 + len];
                    let f1 = &flux[f0..f0 + len];
                    for (o, (&fx, &h)) in out[c0..c0 + len].iter_mut().zip(f1.iter().zip(ih)) {
                        *o += sgn * (st * fx * h);
                    }
                    for (o, (&fx, &h)) in out[nrm + c0..nrm + c0 + len].iter_mut().zip(f1.iter().zip(ih)) {
                        *o -= 3.0 * (st * fx * h);
                    }
                    for r in 1..nr {
                        let b = fam.red[r] * np + c0;
                        let fr = &flux[r * n + f0..r * n + f0 + len];
                        for (o, (&fx, &h)) in out[b..b + len].iter_mut().zip(fr.iter().zip(ih)) {
                            *o += sgn * (3.0 * st * fx * h);
                        }
                    }
                }
            }
        }

        // Spatial faces of this block: lower neighbor across the low face,
        // upper neighbor across the high face.
        let nx = grid.nx();
        let left: &[f64] = if i > 0 { field.block(grid.spatial_index(i - 1, j)) } else { &ghosts.x_lo[j] };
        let right: &[f64] = if i + 1 < nx { field.block(grid.spatial_index(i + 1, j)) } else { &ghosts.x_hi[j] };
        let ihx = 1.0 / grid.x.width(i);
        for fam in &self.x_faces {
            let st = self.terms[fam.term].strength_value(c, ex, ey);
            self.spatial_face(fam, st, left, blk, ihx, Side::Upper, out, sc);
            self.spatial_face(fam, st, blk, right, ihx, Side::Lower, out, sc);
        }
        if let Some(ya) = &grid.y {
            let ny = grid.ny();
            let below: &[f64] = if j > 0 { field.block(grid.spatial_index(i, j - 1)) } else { &ghosts.y_lo[i] };
            let above: &[f64] = if j + 1 < ny { field.block(grid.spatial_index(i, j + 1)) } else { &ghosts.y_hi[i] };
            let ihy = 1.0 / ya.width(j);
            for fam in &self.y_faces {
                let st = self.terms[fam.term].strength_value(c, ex, ey);
                self.spatial_face(fam, st, below, blk, ihy, Side::Upper, out, sc);
                self.spatial_face(fam, st, blk, above, ihy, Side::Lower, out, sc);
            }
        }
    }

    /// Flux through a spatial face between blocks `lo` and `hi`, applied to
    /// the block playing role `me`.
    #[allow(clippy::too_many_arguments)]
    fn spatial_face(
        &self,
        fam: &FaceFamily,
        st: f64,
        lo: &[f64],
        hi: &[f64],
        ih: f64,
        me: Side,
        out: &mut [f64],
        sc: &mut Scratch,
    ) {
        let np = self.n_phase;
        let nr = fam.red.len();
        let (chat, flux) = (&mut sc.chat, &mut sc.flux);
        for (r, &b) in fam.red.iter().enumerate() {
            let dst = &mut chat[r * np..(r + 1) * np];
            let (l, h) = (&lo[b * np..(b + 1) * np], &hi[b * np..(b + 1) * np]);
            if r == 0 {
                let (ln, hn) = (&lo[fam.normal * np..(fam.normal + 1) * np], &hi[fam.normal * np..(fam.normal + 1) * np]);
                for p in 0..np {
                    dst[p] = if fam.sign[p] > 0.0 { l[p] + ln[p] } else { h[p] - hn[p] };
                }
            } else {
                for p in 0..np {
                    dst[p] = if fam.sign[p] > 0.0 { l[p] } else { h[p] };
                }
            }
        }
        apply_pattern(&fam.pattern, &fam.vals, np, chat, flux, nr);
        let sgn = match me {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        };
        let f0 = &flux[..np];
        for (o, &fx) in out[..np].iter_mut().zip(f0) {
            *o += sgn * (st * fx * ih);
        }
        for (o, &fx) in out[fam.normal * np..(fam.normal + 1) * np].iter_mut().zip(f0) {
            *o -= 3.0 * (st * fx * ih);
        }
        for r in 1..nr {
            let b = fam.red[r];
            for (o, &fx) in out[b * np..(b + 1) * np].iter_mut().zip(&flux[r * np..(r + 1) * np]) {
                *o += sgn * (3.0 * st * fx * ih);
            }
        }
    }

    /// Largest `sum_axes speed / width` over all cells, with the speed of an
    /// axis bounded by `sum_terms |strength| max_corners |shape|`.
    pub fn max_rate(&self, grid: &PhaseGrid, e: &FieldSample) -> Result<f64> {
        e.check(grid.n_spatial())?;
        let c = &self.constants;
        let rates: Vec<f64> = (0..grid.n_spatial())
            .into_par_iter()
            .map(|s| {
                let (i, j) = grid.spatial_coords(s);
                let mut acc = vec![0.0; self.n_phase];
                for (t, coef) in self.terms.iter().zip(&self.rate_coef) {
                    let mut st = t.strength_value(c, e.ex[s], e.ey[s]).abs();
                    match t.axis {
                        FluxAxis::X => st /= grid.x.width(i),
                        FluxAxis::Y => st /= grid.y.as_ref().unwrap().width(j),
                        _ => {}
                    }
                    for (a, &k) in acc.iter_mut().zip(coef) {
                        *a += st * k;
                    }
                }
                acc.into_iter().fold(0.0, f64::max)
            })
            .collect();
        Ok(rates.into_iter().fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

/// Max of `|W(w) M(mu) P(phi)|` over the cell corners. A corner where a
/// factor is singular (`s2` at `w = 0`, `1/sqrt(1 - mu^2)` at `mu = +-1`)
/// uses that factor's cell average instead.
pub fn corner_max_shape(grid: &PhaseGrid, tabs: &StreamingTables, t: &GTerm, p: usize, alpha: f64) -> f64 {
    let (k, m, n) = grid.phase_coords(p);
    let (w0, w1) = grid.w.bounds(k);
    let (m0, m1) = grid.mu.bounds(m);
    let wv = |w: f64| {
        let v = t.w.eval(w, alpha);
        if v.is_finite() { v.abs() } else { (tabs.w_moment(t.w, k)[0] / grid.w.width(k)).abs() }
    };
    let mv = |mu: f64| {
        let v = t.mu.eval(mu);
        if v.is_finite() { v.abs() } else { (tabs.mu_moment(t.mu, m)[0] / grid.mu.width(m)).abs() }
    };
    let pvals: Vec<f64> = match &grid.phi {
        Some(phi) => {
            let (p0, p1) = phi.bounds(n);
            vec![t.phi.eval(p0).abs(), t.phi.eval(p1).abs()]
        }
        None => vec![1.0],
    };
    let mut best = 0.0f64;
    for w in [w0, w1] {
        for mu in [m0, m1] {
            for &pv in &pvals {
                best = best.max(wv(w) * mv(mu) * pv);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::default_silicon;

    #[test]
    fn g_examples() {
        let c = DimensionlessConstants { alpha_k: 0.0, ..default_silicon() };
        assert_eq!(eval_g(1, 0.0, 0.3, 0.2, 1.0, 1.0, &c).unwrap(), 0.0);
        let v = eval_g(1, 1.0, 0.5, 0.0, 0.0, 0.0, &c).unwrap();
        assert!((v - 0.084285).abs() < 1e-12);
        let g4 = eval_g(4, 2.0, 1.0, 0.4, 3.0, 0.0, &c).unwrap();
        assert_eq!(g4, 0.0);
        for phi in [0.0, std::f64::consts::PI] {
            assert!(eval_g(5, 2.0, 0.2, phi, 0.0, 3.0, &c).unwrap().abs() < 1e-15);
        }
        let a = eval_g(2, 1.3, 0.2, 0.4, 0.0, 0.0, &c).unwrap();
        let b = eval_g(2, 1.3, 0.2, std::f64::consts::PI - 0.4, 0.0, 0.0, &c).unwrap();
        assert!((a + b).abs() < 1e-15);
        assert!(eval_g(6, 1.0, 0.0, 0.0, 0.0, 0.0, &c).is_err());
    }

    use crate::mesh::{Axis, MosfetMeshSpec, Resolution};
    use crate::quadrature::GaussLegendre;
    use crate::quadtables::build_streaming_tables;

    type TermFn = Box<dyn Fn(f64, f64, f64, f64, f64) -> f64>;

    /// The advection terms written out directly from the formulas, keyed by
    /// the basis index of their direction.
    fn oracle_terms(c: DimensionlessConstants, lay: &Layout) -> Vec<(usize, TermFn)> {
        let a = c.alpha_k;
        let rt = move |w: f64| (w * (1.0 + a * w)).sqrt();
        let den = move |w: f64| 1.0 + 2.0 * a * w;
        let q = |mu: f64| (1.0 - mu * mu).max(0.0).sqrt();
        let mut v: Vec<(usize, TermFn)> = vec![
            (Layout::X, Box::new(move |w, mu, _, _, _| c.c_x * mu * rt(w) / den(w))),
            (lay.w, Box::new(move |w, mu, _, ex, _| -2.0 * c.c_k * rt(w) / den(w) * mu * ex)),
            (lay.m, Box::new(move |w, mu, _, ex, _| -c.c_k * q(mu) / rt(w) * q(mu) * ex)),
        ];
        if let (Some(y), Some(pb)) = (lay.y, lay.p) {
            v.push((y, Box::new(move |w, mu, phi, _, _| c.c_x * q(mu) * rt(w) * phi.cos() / den(w))));
            v.push((lay.w, Box::new(move |w, mu, phi, _, ey| -2.0 * c.c_k * rt(w) / den(w) * q(mu) * phi.cos() * ey)));
            v.push((lay.m, Box::new(move |w, mu, phi, _, ey| c.c_k * q(mu) / rt(w) * mu * phi.cos() * ey)));
            v.push((pb, Box::new(move |w, mu, phi, _, ey| c.c_k * phi.sin() / (rt(w) * q(mu)) * ey)));
        }
        v
    }

    /// Quadrature nodes `(xi, coordinate, weight)` along one direction of a
    /// cell; `w` uses `w = r^2`, `mu` uses `mu = sin(theta)`.
    fn nodes(kind: usize, lo: f64, hi: f64) -> Vec<(f64, f64, f64)> {
        let gl = GaussLegendre::new(10);
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        match kind {
            1 => gl.mapped(lo.sqrt(), hi.sqrt()).map(|(r, wt)| (((r * r) - c) / h, r * r, wt * 2.0 * r)).collect(),
            2 => gl
                .mapped(lo.asin(), hi.asin())
                .map(|(th, wt)| ((th.sin() - c) / h, th.sin(), wt * th.cos()))
                .collect(),
            _ => gl.mapped(lo, hi).map(|(t, wt)| ((t - c) / h, t, wt)).collect(),
        }
    }

    struct Cell {
        /// Per basis direction (index 1..n_basis): bounds and node kind.
        dirs: Vec<(f64, f64, usize)>,
    }

    fn cell_of(grid: &PhaseGrid, lay: &Layout, s: usize, p: usize) -> Cell {
        let (i, j) = grid.spatial_coords(s);
        let (k, m, n) = grid.phase_coords(p);
        let mut dirs = vec![(0.0, 0.0, 0); lay.n_basis];
        dirs[Layout::X] = (grid.x.bounds(i).0, grid.x.bounds(i).1, 0);
        if let Some(yb) = lay.y {
            let b = grid.y.as_ref().unwrap().bounds(j);
            dirs[yb] = (b.0, b.1, 0);
        }
        dirs[lay.w] = (grid.w.bounds(k).0, grid.w.bounds(k).1, 1);
        dirs[lay.m] = (grid.mu.bounds(m).0, grid.mu.bounds(m).1, 2);
        if let Some(pb) = lay.p {
            let b = grid.phi.as_ref().unwrap().bounds(n);
            dirs[pb] = (b.0, b.1, 0);
        }
        Cell { dirs }
    }

    fn poly(blk: &[f64], np: usize, p: usize, xi: &[f64]) -> f64 {
        blk[p] + (1..xi.len()).map(|b| blk[b * np + p] * xi[b]).sum::<f64>()
    }

    /// Tensor quadrature over the directions in `free`, with the rest fixed.
    #[allow(clippy::type_complexity)]
    fn tensor(cell: &Cell, free: &[usize], fixed: &[(usize, f64, f64)], nb: usize, f: &mut dyn FnMut(&[f64], &[f64], f64)) {
        let lists: Vec<Vec<(f64, f64, f64)>> = free.iter().map(|&b| nodes(cell.dirs[b].2, cell.dirs[b].0, cell.dirs[b].1)).collect();
        let mut idx = vec![0usize; free.len()];
        loop {
            let mut xi = vec![0.0; nb];
            let mut x = vec![0.0; nb];
            let mut wt = 1.0;
            for (d, &b) in free.iter().enumerate() {
                let (a, c, w) = lists[d][idx[d]];
                xi[b] = a;
                x[b] = c;
                wt *= w;
            }
            for &(b, a, c) in fixed {
                xi[b] = a;
                x[b] = c;
            }
            f(&xi, &x, wt);
            let mut d = 0;
            loop {
                if d == free.len() {
                    return;
                }
                idx[d] += 1;
                if idx[d] < lists[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    /// Brute-force DG residual built from pointwise formulas.
    fn oracle_rhs(grid: &PhaseGrid, c: DimensionlessConstants, field: &DgField, ghosts: &GhostLayer, e: &FieldSample) -> DgField {
        let lay = Layout::for_grid(grid);
        let nb = lay.n_basis;
        let np = grid.n_phase();
        let terms = oracle_terms(c, &lay);
        let mut out = DgField::zeros(grid);
        let coords = |x: &[f64]| (x[lay.w], x[lay.m], lay.p.map_or(0.0, |pb| x[pb]));
        for s in 0..grid.n_spatial() {
            let (i, j) = grid.spatial_coords(s);
            let (ex, ey) = (e.ex[s], e.ey[s]);
            for p in 0..np {
                let (k, m, n) = grid.phase_coords(p);
                let cell = cell_of(grid, &lay, s, p);
                let mut acc = vec![0.0; nb];
                let all: Vec<usize> = (1..nb).collect();
                // Volume terms.
                tensor(&cell, &all, &[], nb, &mut |xi, x, wt| {
                    let (w, mu, phi) = coords(x);
                    let phi_v = poly(field.block(s), np, p, xi);
                    for (b, g) in &terms {
                        let h = cell.dirs[*b].1 - cell.dirs[*b].0;
                        acc[*b] += wt * g(w, mu, phi, ex, ey) * phi_v * 2.0 / h;
                    }
                });
                // Faces.
                for a in 1..nb {
                    let others: Vec<usize> = (1..nb).filter(|&b| b != a).collect();
                    for upper in [false, true] {
                        let (lo_c, hi_c, _) = cell.dirs[a];
                        let fc = if upper { hi_c } else { lo_c };
                        let nrm = if upper { 1.0 } else { -1.0 };
                        // Neighbor block and phase index across this face.
                        let nbr: Option<(&[f64], usize)> = if a == Layout::X {
                            if upper {
                                Some(if i + 1 < grid.nx() { (field.block(grid.spatial_index(i + 1, j)), p) } else { (&ghosts.x_hi[j][..], p) })
                            } else {
                                Some(if i > 0 { (field.block(grid.spatial_index(i - 1, j)), p) } else { (&ghosts.x_lo[j][..], p) })
                            }
                        } else if Some(a) == lay.y {
                            if upper {
                                Some(if j + 1 < grid.ny() { (field.block(grid.spatial_index(i, j + 1)), p) } else { (&ghosts.y_hi[i][..], p) })
                            } else {
                                Some(if j > 0 { (field.block(grid.spatial_index(i, j - 1)), p) } else { (&ghosts.y_lo[i][..], p) })
                            }
                        } else {
                            let (mut kk, mut mm, mut nn) = (k as isize, m as isize, n as isize);
                            let d = if upper { 1 } else { -1 };
                            if a == lay.w {
                                kk += d;
                            } else if a == lay.m {
                                mm += d;
                            } else {
                                nn += d;
                            }
                            let ok = kk >= 0 && (kk as usize) < grid.nw() && mm >= 0 && (mm as usize) < grid.nmu() && nn >= 0 && (nn as usize) < grid.nphi();
                            ok.then(|| (field.block(s), grid.phase_index(kk as usize, mm as usize, nn as usize)))
                        };
                        let Some((nblk, np2)) = nbr else { continue };
                        // Centers for the sign test.
                        let mut xc = vec![0.0; nb];
                        for b in 1..nb {
                            xc[b] = 0.5 * (cell.dirs[b].0 + cell.dirs[b].1);
                        }
                        xc[a] = fc;
                        let (wc, mc, pc) = coords(&xc);
                        for (b, g) in &terms {
                            if *b != a {
                                continue;
                            }
                            let speed = g(wc, mc, pc, ex, ey);
                            // Upwind side: lower cell if speed > 0.
                            let from_lower = speed > 0.0;
                            let use_self = from_lower == upper;
                            tensor(&cell, &others, &[(a, nrm, fc)], nb, &mut |xi, x, wt| {
                                let (w, mu, phi) = coords(x);
                                let val = if use_self {
                                    poly(field.block(s), np, p, xi)
                                } else {
                                    let mut xn = xi.to_vec();
                                    xn[a] = -nrm;
                                    poly(nblk, np, np2, &xn)
                                };
                                let gv = g(w, mu, phi, ex, ey) * val * wt;
                                acc[0] -= nrm * gv;
                                for t in 1..nb {
                                    acc[t] -= nrm * gv * xi[t];
                                }
                            });
                        }
                    }
                }
                for t in 0..nb {
                    let mass = if t == 0 { 1.0 } else { 1.0 / 3.0 };
                    out.set(s, t, p, acc[t] / mass);
                }
            }
        }
        // Normalize by the cell measure.
        for s in 0..grid.n_spatial() {
            for p in 0..np {
                let meas = grid.spatial_measure(s) * grid.phase_measure(p);
                for t in 0..nb {
                    let v = out.get(s, t, p) / meas;
                    out.set(s, t, p, v);
                }
            }
        }
        out
    }

    fn fill(v: &mut [f64], seed: u64) {
        let mut x = seed;
        for e in v.iter_mut() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *e = ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
        }
    }

    fn random_ghosts(grid: &PhaseGrid, bl: usize, seed: u64) -> GhostLayer {
        let mk = |n: usize, sd: u64| {
            (0..n)
                .map(|q| {
                    let mut b = vec![0.0; bl];
                    fill(&mut b, sd + q as u64);
                    b
                })
                .collect()
        };
        let ncol = if grid.is_2d() { grid.nx() } else { 0 };
        GhostLayer { x_lo: mk(grid.ny(), seed), x_hi: mk(grid.ny(), seed + 100), y_lo: mk(ncol, seed + 200), y_hi: mk(ncol, seed + 300) }
    }

    fn compare_with_oracle(grid: &PhaseGrid, e: FieldSample) {
        let c = default_silicon();
        let tabs = build_streaming_tables(grid, &c);
        let op = TransportOperator::new(grid, &tabs, &c);
        let mut f = DgField::zeros(grid);
        fill(f.as_mut_slice(), 17);
        let ghosts = random_ghosts(grid, f.block_len(), 5);
        let got = op.apply(grid, &f, &ghosts, &e).unwrap();
        let want = oracle_rhs(grid, c, &f, &ghosts, &e);
        let scale = want.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (idx, (a, b)) in got.as_slice().iter().zip(want.as_slice()).enumerate() {
            assert!((a - b).abs() <= 1e-9 * scale, "entry {idx}: {a} vs {b} (scale {scale})");
        }
    }

    #[test]
    fn matches_brute_force_assembly_1d() {
        let grid = PhaseGrid::new_1d(
            Axis::from_edges(vec![0.0, 0.3, 0.5, 1.0]).unwrap(),
            Axis::from_edges(vec![0.0, 0.7, 2.0, 3.1, 6.0]).unwrap(),
            Axis::from_edges(vec![-1.0, -0.4, 0.0, 0.6, 1.0]).unwrap(),
        )
        .unwrap();
        compare_with_oracle(&grid, FieldSample { ex: vec![0.7, -0.4, 1.3], ey: vec![0.0; 3] });
    }

    #[test]
    fn matches_brute_force_assembly_2d() {
        let grid = MosfetMeshSpec { nx: 2, ny: 2, nw: 3, nmu: 2, nphi: 2, w_max: 6.0, ..MosfetMeshSpec::preset(Resolution::Ci) }
            .build()
            .unwrap();
        compare_with_oracle(&grid, FieldSample { ex: vec![0.7, -0.4, 1.3, -2.0], ey: vec![-0.5, 0.9, 0.3, -1.1] });
    }
}
