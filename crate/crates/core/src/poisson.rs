//! Local DG solvers for `div(eps_r grad Psi) = R` written as the first-order
//! system `q = Psi_x`, `s = Psi_y`, `(eps_r q)_x + (eps_r s)_y = R`.
//!
//! Interior fluxes: `Psi^ = Psi^-` and `(eps q)^ = eps q^+ + [Psi]`, with
//! `[Psi] = Psi^+ - Psi^-`, in both directions. A Dirichlet face on the low
//! side of the domain takes the outside state to be the data; on the high
//! side the roles of the two traces are exchanged. Homogeneous Neumann faces
//! use the interior potential trace and zero normal flux.
//!
//! The jump enters with a positive sign. Testing the scheme with
//! `(v, p) = (eps q, Psi)` gives `-(eps q, q) - sum [Psi]^2 = (R, Psi)` up to
//! boundary data, which is definite; the opposite sign leaves the form
//! indefinite and the 2D solve loses its convergence order.
//!
//! The system matrix depends only on the mesh, the dielectric map and the
//! boundary kinds, so it is factorized once; each solve is a band
//! back-substitution.

use std::fmt;
use std::sync::Arc;

use crate::linalg::{BandLu, BandMatrix};
use crate::mesh::Axis;
use crate::quadrature::GaussLegendre;
use crate::transport::FieldSample;
use crate::{Error, Result};

/// Dirichlet data: a constant, or a function of the boundary point `(x, y)`.
#[derive(Clone)]
pub enum BcValue {
    Const(f64),
    Func(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for BcValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BcValue::Const(v) => write!(f, "Const({v})"),
            BcValue::Func(_) => write!(f, "Func(..)"),
        }
    }
}

impl BcValue {
    fn at(&self, x: f64, y: f64) -> f64 {
        match self {
            BcValue::Const(v) => *v,
            BcValue::Func(g) => g(x, y),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BcKind {
    Dirichlet(BcValue),
    Neumann,
}

impl BcKind {
    pub fn dirichlet(v: f64) -> Self {
        BcKind::Dirichlet(BcValue::Const(v))
    }

    fn is_dirichlet(&self) -> bool {
        matches!(self, BcKind::Dirichlet(_))
    }
}

/// Boundary condition on `[start, end]` of one side (coordinate along the
/// side).
#[derive(Debug, Clone)]
pub struct BcSegment {
    pub start: f64,
    pub end: f64,
    pub kind: BcKind,
}

/// Boundary conditions of the rectangle, per side, as segments.
#[derive(Debug, Clone, Default)]
pub struct PoissonBc {
    pub left: Vec<BcSegment>,
    pub right: Vec<BcSegment>,
    pub bottom: Vec<BcSegment>,
    pub top: Vec<BcSegment>,
}

impl PoissonBc {
    fn kind_at<'a>(segs: &'a [BcSegment], t: f64, side: &str) -> Result<&'a BcKind> {
        segs.iter()
            .find(|s| t >= s.start && t <= s.end)
            .map(|s| &s.kind)
            .ok_or_else(|| Error::Boundary(format!("no boundary condition at {t} on the {side} side")))
    }

    /// Whole-side segment.
    pub fn side(kind: BcKind, lo: f64, hi: f64) -> Vec<BcSegment> {
        vec![BcSegment { start: lo, end: hi, kind }]
    }
}

/// Boundary pair for the 1D problem.
#[derive(Debug, Clone)]
pub struct PoissonBc1d {
    pub left: BcKind,
    pub right: BcKind,
}

/// Linear coefficients of `Psi_h`, `q_h` and (2D) `s_h` per spatial cell on
/// the basis `{1, xi_x, xi_y}`; 1D leaves the `xi_y` slot zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub psi: Vec<[f64; 3]>,
    pub q: Vec<[f64; 3]>,
    pub s: Vec<[f64; 3]>,
    pub c_v: f64,
}

impl PoissonSolution {
    /// Cell-mean `E_x = -c_v q`.
    pub fn e_x(&self, cell: usize) -> f64 {
        -self.c_v * self.q[cell][0]
    }

    pub fn e_y(&self, cell: usize) -> f64 {
        -self.c_v * self.s[cell][0]
    }

    /// Cell means of `E` on the first `n` cells (the silicon rows).
    pub fn field_sample(&self, n: usize) -> FieldSample {
        FieldSample { ex: (0..n).map(|c| self.e_x(c)).collect(), ey: (0..n).map(|c| self.e_y(c)).collect() }
    }
}

/// Coefficient of `[Psi]` in the normal-flux formula.
const JUMP: f64 = 1.0;

/// A linear form in the unknowns plus a constant.
#[derive(Debug, Clone, Default)]
struct Form {
    terms: Vec<(usize, f64)>,
    c: f64,
}

impl Form {
    fn constant(c: f64) -> Self {
        Self { terms: vec![], c }
    }

    fn var(i: usize, a: f64) -> Self {
        Self { terms: vec![(i, a)], c: 0.0 }
    }

    fn plus(mut self, o: &Form, a: f64) -> Self {
        self.terms.extend(o.terms.iter().map(|&(i, v)| (i, a * v)));
        self.c += a * o.c;
        self
    }
}

/// Adds `a * form` to row `row` of `A x = b` (constants move to `b`).
fn add_form(a: &mut BandMatrix, b: &mut [f64], row: usize, f: &Form, w: f64) {
    for &(j, v) in &f.terms {
        a.add(row, j, w * v);
    }
    b[row] -= w * f.c;
}

/// Factorized 1D LDG system.
#[derive(Debug, Clone)]
pub struct Poisson1d {
    x: Axis,
    eps: Vec<f64>,
    lu: BandLu,
    /// Right-hand side from the Dirichlet data.
    b_bc: Vec<f64>,
    c_v: f64,
}

impl Poisson1d {
    pub fn new(x: &Axis, eps: &[f64], bc: &PoissonBc1d, c_v: f64) -> Result<Self> {
        let n = x.len();
        if eps.len() != n {
            return Err(Error::GridMismatch(format!("{} dielectric values for {n} cells", eps.len())));
        }
        if eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Domain("dielectric constants must be positive".into()));
        }
        if !bc.left.is_dirichlet() && !bc.right.is_dirichlet() {
            return Err(Error::Singular("pure Neumann problem has no unique solution".into()));
        }
        let nu = 4 * n;
        let mut a = BandMatrix::zeros(nu, 7, 7);
        let mut b = vec![0.0; nu];
        let (pa0, pa1, qb0, qb1) = (|i: usize| 4 * i, |i: usize| 4 * i + 1, |i: usize| 4 * i + 2, |i: usize| 4 * i + 3);
        // Traces at the right (+1) or left (-1) end of cell i.
        let psi_tr = |i: usize, sg: f64| Form::var(pa0(i), 1.0).plus(&Form::var(pa1(i), sg), 1.0);
        let q_tr = |i: usize, sg: f64| Form::var(qb0(i), 1.0).plus(&Form::var(qb1(i), sg), 1.0);
        let gval = |k: &BcKind, xv: f64| match k {
            BcKind::Dirichlet(v) => Some(v.at(xv, 0.0)),
            BcKind::Neumann => None,
        };
        // Face f sits between cells f-1 and f.
        let mut psi_hat = Vec::with_capacity(n + 1);
        let mut flux = Vec::with_capacity(n + 1);
        for f in 0..=n {
            let (ph, fl) = if f == 0 {
                match gval(&bc.left, x.start()) {
                    Some(g) => (
                        Form::constant(g),
                        q_tr(0, -1.0).scaled(eps[0]).plus(&psi_tr(0, -1.0), JUMP).plus(&Form::constant(g), -JUMP),
                    ),
                    None => (psi_tr(0, -1.0), Form::default()),
                }
            } else if f == n {
                match gval(&bc.right, x.end()) {
                    Some(g) => (
                        Form::constant(g),
                        q_tr(n - 1, 1.0).scaled(eps[n - 1]).plus(&Form::constant(g), JUMP).plus(&psi_tr(n - 1, 1.0), -JUMP),
                    ),
                    None => (psi_tr(n - 1, 1.0), Form::default()),
                }
            } else {
                let (l, r) = (f - 1, f);
                (
                    psi_tr(l, 1.0),
                    q_tr(r, -1.0).scaled(eps[r]).plus(&psi_tr(r, -1.0), JUMP).plus(&psi_tr(l, 1.0), -JUMP),
                )
            };
            psi_hat.push(ph);
            flux.push(fl);
        }
        for i in 0..n {
            let h = x.width(i);
            let (r0, r1, r2, r3) = (4 * i, 4 * i + 1, 4 * i + 2, 4 * i + 3);
            // h q0 - Psi^_r + Psi^_l = 0
            a.add(r0, qb0(i), h);
            add_form(&mut a, &mut b, r0, &psi_hat[i + 1], -1.0);
            add_form(&mut a, &mut b, r0, &psi_hat[i], 1.0);
            // h q1 / 3 + 2 Psi0 - Psi^_r - Psi^_l = 0
            a.add(r1, qb1(i), h / 3.0);
            a.add(r1, pa0(i), 2.0);
            add_form(&mut a, &mut b, r1, &psi_hat[i + 1], -1.0);
            add_form(&mut a, &mut b, r1, &psi_hat[i], -1.0);
            // F_r - F_l = int R
            add_form(&mut a, &mut b, r2, &flux[i + 1], 1.0);
            add_form(&mut a, &mut b, r2, &flux[i], -1.0);
            // -2 eps q0 + F_r + F_l = int R xi
            a.add(r3, qb0(i), -2.0 * eps[i]);
            add_form(&mut a, &mut b, r3, &flux[i + 1], 1.0);
            add_form(&mut a, &mut b, r3, &flux[i], 1.0);
        }
        let lu = a.factorize()?;
        Ok(Self { x: x.clone(), eps: eps.to_vec(), lu, b_bc: b, c_v })
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    /// Solves with source `R = r[i][0] + r[i][1] xi_x` on each cell.
    pub fn solve(&self, r: &[[f64; 2]]) -> Result<PoissonSolution> {
        let n = self.x.len();
        if r.len() != n {
            return Err(Error::GridMismatch("source length".into()));
        }
        let mut b = self.b_bc.clone();
        for i in 0..n {
            let h = self.x.width(i);
            b[4 * i + 2] += h * r[i][0];
            b[4 * i + 3] += h * r[i][1] / 3.0;
        }
        self.lu.solve(&mut b);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Poisson solution".into()));
        }
        Ok(PoissonSolution {
            psi: (0..n).map(|i| [b[4 * i], b[4 * i + 1], 0.0]).collect(),
            q: (0..n).map(|i| [b[4 * i + 2], b[4 * i + 3], 0.0]).collect(),
            s: vec![[0.0; 3]; n],
            c_v: self.c_v,
        })
    }
}

impl Form {
    fn scaled(mut self, a: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= a);
        self.c *= a;
        self
    }
}

/// `R = c_p (rho - N_D)` as per-cell linear coefficients.
pub fn poisson_source(c_p: f64, rho: &[[f64; 2]], doping: &[[f64; 2]]) -> Vec<[f64; 2]> {
    rho.iter().zip(doping).map(|(r, d)| [c_p * (r[0] - d[0]), c_p * (r[1] - d[1])]).collect()
}

/// One-shot 1D solve: `R = c_p (rho - N_D)`.
pub fn solve_poisson_1d(
    rho: &[[f64; 2]],
    doping: &[[f64; 2]],
    bc: &PoissonBc1d,
    x: &Axis,
    eps: &[f64],
    c_p: f64,
    c_v: f64,
) -> Result<PoissonSolution> {
    Poisson1d::new(x, eps, bc, c_v)?.solve(&poisson_source(c_p, rho, doping))
}

/// Face modes of a function along a face: constant and tangential slope.
type Modes = [Form; 2];

/// Factorized 2D LDG system on the tensor grid `x` by `y`.
#[derive(Debug, Clone)]
pub struct Poisson2d {
    x: Axis,
    y: Axis,
    eps: Vec<f64>,
    lu: BandLu,
    b_bc: Vec<f64>,
    c_v: f64,
    matrix: Vec<(usize, usize, f64)>,
}

const NV: usize = 9;
const PSI: usize = 0;
const QV: usize = 3;
const SV: usize = 6;

impl Poisson2d {
    /// `eps[j * nx + i]` per cell.
    pub fn new(x: &Axis, y: &Axis, eps: &[f64], bc: &PoissonBc, c_v: f64) -> Result<Self> {
        let (nx, ny) = (x.len(), y.len());
        let nc = nx * ny;
        if eps.len() != nc {
            return Err(Error::GridMismatch(format!("{} dielectric values for {nc} cells", eps.len())));
        }
        if eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Domain("dielectric constants must be positive".into()));
        }
        let any_dirichlet = [&bc.left, &bc.right, &bc.bottom, &bc.top]
            .iter()
            .any(|segs| segs.iter().any(|s| s.kind.is_dirichlet()));
        if !any_dirichlet {
            return Err(Error::Singular("pure Neumann problem has no unique solution".into()));
        }
        let band = NV * nx + NV - 1;
        let nu = NV * nc;
        let mut a = BandMatrix::zeros(nu, band, band);
        let mut b = vec![0.0; nu];
        let cell = |i: usize, j: usize| j * nx + i;
        let gl = GaussLegendre::new(4);

        // Trace modes of variable block `off` of cell c on an x-face (dir 0)
        // or y-face (dir 1) at side sg.
        let trace = |c: usize, off: usize, dir: usize, sg: f64| -> Modes {
            let base = NV * c + off;
            let (nrm, tan) = if dir == 0 { (1, 2) } else { (2, 1) };
            [Form::var(base, 1.0).plus(&Form::var(base + nrm, sg), 1.0), Form::var(base + tan, 1.0)]
        };
        let comb = |a: &Modes, wa: f64, bm: &Modes, wb: f64| -> Modes {
            [a[0].clone().scaled(wa).plus(&bm[0], wb), a[1].clone().scaled(wa).plus(&bm[1], wb)]
        };
        // Projection of Dirichlet data onto {1, xi_t} along a face.
        let project = |v: &BcValue, pts: &dyn Fn(f64) -> (f64, f64)| -> [f64; 2] {
            let mut m = [0.0; 2];
            for (t, wt) in gl.mapped(-1.0, 1.0) {
                let (px, py) = pts(t);
                let g = v.at(px, py);
                m[0] += 0.5 * wt * g;
                m[1] += 1.5 * wt * g * t;
            }
            m
        };
        let consts = |m: [f64; 2]| -> Modes { [Form::constant(m[0]), Form::constant(m[1])] };
        let zero = || -> Modes { [Form::default(), Form::default()] };

        // x-faces: index (f, j) with f in 0..=nx.
        let mut xf_psi = Vec::with_capacity((nx + 1) * ny);
        let mut xf_flux = Vec::with_capacity((nx + 1) * ny);
        for j in 0..ny {
            let (ylo, yhi) = y.bounds(j);
            let ymid = y.center(j);
            let along = |t: f64| 0.5 * (ylo + yhi) + 0.5 * (yhi - ylo) * t;
            for f in 0..=nx {
                let (ph, fl) = if f == 0 {
                    let r = cell(0, j);
                    match PoissonBc::kind_at(&bc.left, ymid, "left")? {
                        BcKind::Dirichlet(v) => {
                            let g = consts(project(v, &|t| (x.start(), along(t))));
                            let fl = comb(&trace(r, QV, 0, -1.0), eps[r], &trace(r, PSI, 0, -1.0), JUMP);
                            (g.clone(), comb(&fl, 1.0, &g, -JUMP))
                        }
                        BcKind::Neumann => (trace(r, PSI, 0, -1.0), zero()),
                    }
                } else if f == nx {
                    let l = cell(nx - 1, j);
                    match PoissonBc::kind_at(&bc.right, ymid, "right")? {
                        BcKind::Dirichlet(v) => {
                            let g = consts(project(v, &|t| (x.end(), along(t))));
                            let fl = comb(&trace(l, QV, 0, 1.0), eps[l], &trace(l, PSI, 0, 1.0), -JUMP);
                            (g.clone(), comb(&fl, 1.0, &g, JUMP))
                        }
                        BcKind::Neumann => (trace(l, PSI, 0, 1.0), zero()),
                    }
                } else {
                    let (l, r) = (cell(f - 1, j), cell(f, j));
                    let jump = comb(&trace(r, PSI, 0, -1.0), 1.0, &trace(l, PSI, 0, 1.0), -1.0);
                    (trace(l, PSI, 0, 1.0), comb(&trace(r, QV, 0, -1.0), eps[r], &jump, JUMP))
                };
                xf_psi.push(ph);
                xf_flux.push(fl);
            }
        }
        // y-faces: index (i, f) with f in 0..=ny, stored f * nx + i.
        let mut yf_psi = Vec::with_capacity((ny + 1) * nx);
        let mut yf_flux = Vec::with_capacity((ny + 1) * nx);
        for f in 0..=ny {
            for i in 0..nx {
                let (xlo, xhi) = x.bounds(i);
                let xmid = x.center(i);
                let along = |t: f64| 0.5 * (xlo + xhi) + 0.5 * (xhi - xlo) * t;
                let (ph, fl) = if f == 0 {
                    let a_ = cell(i, 0);
                    match PoissonBc::kind_at(&bc.bottom, xmid, "bottom")? {
                        BcKind::Dirichlet(v) => {
                            let g = consts(project(v, &|t| (along(t), y.start())));
                            let fl = comb(&trace(a_, SV, 1, -1.0), eps[a_], &trace(a_, PSI, 1, -1.0), JUMP);
                            (g.clone(), comb(&fl, 1.0, &g, -JUMP))
                        }
                        BcKind::Neumann => (trace(a_, PSI, 1, -1.0), zero()),
                    }
                } else if f == ny {
                    let b_ = cell(i, ny - 1);
                    match PoissonBc::kind_at(&bc.top, xmid, "top")? {
                        BcKind::Dirichlet(v) => {
                            let g = consts(project(v, &|t| (along(t), y.end())));
                            let fl = comb(&trace(b_, SV, 1, 1.0), eps[b_], &trace(b_, PSI, 1, 1.0), -JUMP);
                            (g.clone(), comb(&fl, 1.0, &g, JUMP))
                        }
                        BcKind::Neumann => (trace(b_, PSI, 1, 1.0), zero()),
                    }
                } else {
                    let (lo, hi) = (cell(i, f - 1), cell(i, f));
                    let jump = comb(&trace(hi, PSI, 1, -1.0), 1.0, &trace(lo, PSI, 1, 1.0), -1.0);
                    (trace(lo, PSI, 1, 1.0), comb(&trace(hi, SV, 1, -1.0), eps[hi], &jump, JUMP))
                };
                yf_psi.push(ph);
                yf_flux.push(fl);
            }
        }

        // Face term: sign * len * sum_l modes[l] * v_l * {1, 1/3}[l].
        let face = |a: &mut BandMatrix, b: &mut [f64], row: usize, m: &Modes, v: [f64; 2], sign: f64, len: f64| {
            if v[0] != 0.0 {
                add_form(a, b, row, &m[0], sign * len * v[0]);
            }
            if v[1] != 0.0 {
                add_form(a, b, row, &m[1], sign * len * v[1] / 3.0);
            }
        };
        for j in 0..ny {
            for i in 0..nx {
                let c = cell(i, j);
                let (hx, hy) = (x.width(i), y.width(j));
                let area = hx * hy;
                let e = eps[c];
                let base = NV * c;
                let xl = j * (nx + 1) + i;
                let xr = xl + 1;
                let yb = j * nx + i;
                let yt = (j + 1) * nx + i;
                // Test functions 1, xi_x, xi_y restricted to x-faces
                // (right side, left side) and y-faces (top, bottom).
                let tests_x = [([1.0, 0.0], [1.0, 0.0]), ([1.0, 0.0], [-1.0, 0.0]), ([0.0, 1.0], [0.0, 1.0])];
                let tests_y = [([1.0, 0.0], [1.0, 0.0]), ([0.0, 1.0], [0.0, 1.0]), ([1.0, 0.0], [-1.0, 0.0])];
                let mass = [area, area / 3.0, area / 3.0];
                for t in 0..3 {
                    // q equation: int q v + int Psi v_x - Psi^ v|_r + Psi^ v|_l = 0
                    let row = base + QV + t;
                    a.add(row, base + QV + t, mass[t]);
                    if t == 1 {
                        a.add(row, base + PSI, 2.0 / hx * area);
                    }
                    let (vr, vl) = tests_x[t];
                    face(&mut a, &mut b, row, &xf_psi[xr], vr, -1.0, hy);
                    face(&mut a, &mut b, row, &xf_psi[xl], vl, 1.0, hy);

                    // s equation with y in place of x.
                    let row = base + SV + t;
                    a.add(row, base + SV + t, mass[t]);
                    if t == 2 {
                        a.add(row, base + PSI, 2.0 / hy * area);
                    }
                    let (vt, vb) = tests_y[t];
                    face(&mut a, &mut b, row, &yf_psi[yt], vt, -1.0, hx);
                    face(&mut a, &mut b, row, &yf_psi[yb], vb, 1.0, hx);

                    // Potential equation.
                    let row = base + PSI + t;
                    if t == 1 {
                        a.add(row, base + QV, -e * 2.0 / hx * area);
                    }
                    if t == 2 {
                        a.add(row, base + SV, -e * 2.0 / hy * area);
                    }
                    face(&mut a, &mut b, row, &xf_flux[xr], vr, 1.0, hy);
                    face(&mut a, &mut b, row, &xf_flux[xl], vl, -1.0, hy);
                    face(&mut a, &mut b, row, &yf_flux[yt], vt, 1.0, hx);
                    face(&mut a, &mut b, row, &yf_flux[yb], vb, -1.0, hx);
                }
            }
        }
        let matrix = a.triplets();
        let lu = a.factorize()?;
        Ok(Self { x: x.clone(), y: y.clone(), eps: eps.to_vec(), lu, b_bc: b, c_v, matrix })
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    /// Assembled (unfactorized) matrix entries, row-major.
    pub fn matrix_triplets(&self) -> &[(usize, usize, f64)] {
        &self.matrix
    }

    /// Boundary part of the right-hand side.
    pub fn boundary_rhs(&self) -> &[f64] {
        &self.b_bc
    }

    /// Solves with source `R = r0 + rx xi_x + ry xi_y` per cell.
    pub fn solve(&self, r: &[[f64; 3]]) -> Result<PoissonSolution> {
        let (nx, ny) = (self.x.len(), self.y.len());
        if r.len() != nx * ny {
            return Err(Error::GridMismatch("source length".into()));
        }
        let mut b = self.b_bc.clone();
        for j in 0..ny {
            for i in 0..nx {
                let c = j * nx + i;
                let area = self.x.width(i) * self.y.width(j);
                b[NV * c + PSI] += area * r[c][0];
                b[NV * c + PSI + 1] += area * r[c][1] / 3.0;
                b[NV * c + PSI + 2] += area * r[c][2] / 3.0;
            }
        }
        self.lu.solve(&mut b);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Poisson solution".into()));
        }
        let pick = |off: usize| (0..nx * ny).map(|c| [b[NV * c + off], b[NV * c + off + 1], b[NV * c + off + 2]]).collect();
        Ok(PoissonSolution { psi: pick(PSI), q: pick(QV), s: pick(SV), c_v: self.c_v })
    }
}

/// One-shot 2D solve; `rho` and `doping` cover the first `rho.len()` cells
/// (silicon), the remaining rows carry no charge.
#[allow(clippy::too_many_arguments)]
pub fn solve_poisson_2d(
    rho: &[[f64; 3]],
    doping: &[[f64; 3]],
    bc: &PoissonBc,
    eps: &[f64],
    x: &Axis,
    y: &Axis,
    c_p: f64,
    c_v: f64,
) -> Result<PoissonSolution> {
    let solver = Poisson2d::new(x, y, eps, bc, c_v)?;
    solver.solve(&source_2d(c_p, rho, doping, x.len() * y.len())?)
}

/// `R = c_p (rho - N_D)` on the silicon cells, zero on the rest.
pub fn source_2d(c_p: f64, rho: &[[f64; 3]], doping: &[[f64; 3]], n_cells: usize) -> Result<Vec<[f64; 3]>> {
    if rho.len() != doping.len() || rho.len() > n_cells {
        return Err(Error::GridMismatch("density/doping length".into()));
    }
    let mut r = vec![[0.0; 3]; n_cells];
    for (c, (a, d)) in rho.iter().zip(doping).enumerate() {
        r[c] = [c_p * (a[0] - d[0]), c_p * (a[1] - d[1]), c_p * (a[2] - d[2])];
    }
    Ok(r)
}

/// L2 projection of `f` onto `{1, xi}` on each cell of `x`.
pub fn project_1d(x: &Axis, f: impl Fn(f64) -> f64) -> Vec<[f64; 2]> {
    let gl = GaussLegendre::new(6);
    (0..x.len())
        .map(|i| {
            let (c, h) = (x.center(i), 0.5 * x.width(i));
            let mut m = [0.0; 2];
            for (t, w) in gl.mapped(-1.0, 1.0) {
                let v = f(c + h * t);
                m[0] += 0.5 * w * v;
                m[1] += 1.5 * w * v * t;
            }
            m
        })
        .collect()
}

/// L2 projection of `f` onto `{1, xi_x, xi_y}` on each cell, `j * nx + i`.
pub fn project_2d(x: &Axis, y: &Axis, f: impl Fn(f64, f64) -> f64) -> Vec<[f64; 3]> {
    let gl = GaussLegendre::new(6);
    let mut out = Vec::with_capacity(x.len() * y.len());
    for j in 0..y.len() {
        for i in 0..x.len() {
            let (cx, hx) = (x.center(i), 0.5 * x.width(i));
            let (cy, hy) = (y.center(j), 0.5 * y.width(j));
            let mut m = [0.0; 3];
            for (s, ws) in gl.mapped(-1.0, 1.0) {
                for (t, wt) in gl.mapped(-1.0, 1.0) {
                    let v = 0.25 * ws * wt * f(cx + hx * s, cy + hy * t);
                    m[0] += v;
                    m[1] += 3.0 * v * s;
                    m[2] += 3.0 * v * t;
                }
            }
            out.push(m);
        }
    }
    out
}

/// `||u_h - u||_{L2}` for a piecewise-linear 1D solution.
pub fn l2_error_1d(x: &Axis, coef: &[[f64; 3]], exact: impl Fn(f64) -> f64) -> f64 {
    let gl = GaussLegendre::new(6);
    let mut acc = 0.0;
    for i in 0..x.len() {
        let (c, h) = (x.center(i), 0.5 * x.width(i));
        for (t, w) in gl.mapped(-1.0, 1.0) {
            let d = coef[i][0] + coef[i][1] * t - exact(c + h * t);
            acc += h * w * d * d;
        }
    }
    acc.sqrt()
}

/// `||u_h - u||_{L2}` for a piecewise-linear 2D solution.
pub fn l2_error_2d(x: &Axis, y: &Axis, coef: &[[f64; 3]], exact: impl Fn(f64, f64) -> f64) -> f64 {
    let gl = GaussLegendre::new(6);
    let mut acc = 0.0;
    for j in 0..y.len() {
        for i in 0..x.len() {
            let c = j * x.len() + i;
            let (cx, hx) = (x.center(i), 0.5 * x.width(i));
            let (cy, hy) = (y.center(j), 0.5 * y.width(j));
            for (s, ws) in gl.mapped(-1.0, 1.0) {
                for (t, wt) in gl.mapped(-1.0, 1.0) {
                    let d = coef[c][0] + coef[c][1] * s + coef[c][2] * t - exact(cx + hx * s, cy + hy * t);
                    acc += hx * hy * ws * wt * d * d;
                }
            }
        }
    }
    acc.sqrt()
}

/// One row of a manufactured-solution convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub error: f64,
    /// Observed order against the previous row.
    pub order: Option<f64>,
}

fn with_orders(rows: Vec<(usize, f64)>) -> Vec<ConvergenceRow> {
    let mut out: Vec<ConvergenceRow> = Vec::with_capacity(rows.len());
    for (idx, &(cells, error)) in rows.iter().enumerate() {
        let order = (idx > 0).then(|| {
            let (pc, pe) = rows[idx - 1];
            (pe / error).ln() / (cells as f64 / pc as f64).ln()
        });
        out.push(ConvergenceRow { cells, error, order });
    }
    out
}

/// `Psi = sin(pi x)` on `[0, 1]`, `eps_r = 11.7`, homogeneous Dirichlet.
pub fn manufactured_1d(cells: &[usize]) -> Result<Vec<ConvergenceRow>> {
    use std::f64::consts::PI;
    let eps = 11.7;
    let mut rows = Vec::new();
    for &n in cells {
        let x = Axis::uniform(0.0, 1.0, n)?;
        let bc = PoissonBc1d { left: BcKind::dirichlet(0.0), right: BcKind::dirichlet(0.0) };
        let solver = Poisson1d::new(&x, &vec![eps; n], &bc, 1.0)?;
        let r = project_1d(&x, |t| -eps * PI * PI * (PI * t).sin());
        let sol = solver.solve(&r)?;
        rows.push((n, l2_error_1d(&x, &sol.psi, |t| (PI * t).sin())));
    }
    Ok(with_orders(rows))
}

/// `Psi = sin(pi x) cos(pi y / 2)` on the unit square with Dirichlet data on
/// the left, right and top and homogeneous Neumann at the bottom.
pub fn manufactured_2d(cells: &[usize]) -> Result<Vec<ConvergenceRow>> {
    use std::f64::consts::PI;
    let eps = 11.7;
    let exact = |x: f64, y: f64| (PI * x).sin() * (0.5 * PI * y).cos();
    let mut rows = Vec::new();
    for &n in cells {
        let x = Axis::uniform(0.0, 1.0, n)?;
        let y = Axis::uniform(0.0, 1.0, n)?;
        let g = BcValue::Func(Arc::new(exact));
        let bc = PoissonBc {
            left: PoissonBc::side(BcKind::Dirichlet(g.clone()), 0.0, 1.0),
            right: PoissonBc::side(BcKind::Dirichlet(g.clone()), 0.0, 1.0),
            bottom: PoissonBc::side(BcKind::Neumann, 0.0, 1.0),
            top: PoissonBc::side(BcKind::Dirichlet(g), 0.0, 1.0),
        };
        let solver = Poisson2d::new(&x, &y, &vec![eps; n * n], &bc, 1.0)?;
        let lap = -(PI * PI + 0.25 * PI * PI);
        let r = project_2d(&x, &y, |a, b| eps * lap * exact(a, b));
        let sol = solver.solve(&r)?;
        rows.push((n, l2_error_2d(&x, &y, &sol.psi, exact)));
    }
    Ok(with_orders(rows))
}

/// Two dielectric layers stacked in `y`, interface at `y = 0.5`:
/// `Psi = sin(pi x) u(y)` with `u` continuous and `eps u'` continuous.
pub fn manufactured_slab(cells: &[usize]) -> Result<Vec<ConvergenceRow>> {
    use std::f64::consts::PI;
    let (e1, e2) = (11.7, 3.9);
    // u(y) = cos(pi y) below, matched above by a + b (y - 1/2) + c (y - 1/2)^2
    // with u(1/2) = 0 -> a = 0, eps2 b = eps1 u'(1/2) = -eps1 pi.
    let b_up = -e1 * PI / e2;
    let c_up = 1.0;
    let u = move |y: f64| if y <= 0.5 { (PI * y).cos() } else { b_up * (y - 0.5) + c_up * (y - 0.5).powi(2) };
    let upp = move |y: f64| if y <= 0.5 { -PI * PI * (PI * y).cos() } else { 2.0 * c_up };
    let exact = move |x: f64, y: f64| (PI * x).sin() * u(y);
    let mut rows = Vec::new();
    for &n in cells {
        let x = Axis::uniform(0.0, 1.0, n)?;
        let y = Axis::uniform(0.0, 1.0, n)?;
        let eps: Vec<f64> = (0..n * n).map(|c| if y.center(c / n) < 0.5 { e1 } else { e2 }).collect();
        let g = BcValue::Func(Arc::new(exact));
        let bc = PoissonBc {
            left: PoissonBc::side(BcKind::Dirichlet(g.clone()), 0.0, 1.0),
            right: PoissonBc::side(BcKind::Dirichlet(g.clone()), 0.0, 1.0),
            bottom: PoissonBc::side(BcKind::Neumann, 0.0, 1.0),
            top: PoissonBc::side(BcKind::Dirichlet(g), 0.0, 1.0),
        };
        let solver = Poisson2d::new(&x, &y, &eps, &bc, 1.0)?;
        let r = project_2d(&x, &y, |a, b| {
            let e = if b < 0.5 { e1 } else { e2 };
            e * (PI * a).sin() * (upp(b) - PI * PI * u(b))
        });
        let sol = solver.solve(&r)?;
        rows.push((n, l2_error_2d(&x, &y, &sol.psi, exact)));
    }
    Ok(with_orders(rows))
}
