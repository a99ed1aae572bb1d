//! Energy and angle integrals shared by the collision, streaming and moment
//! computations.
//!
//! Every integrand in `w` carries a `sqrt(w)` type factor. Substituting
//! `w + shift = r^2` turns these into smooth functions of `r`, which are
//! then integrated with composite Gauss–Legendre rules. Angular factors with
//! `1/sqrt(1 - mu^2)` are handled the same way through `mu = sin(theta)`.

use std::f64::consts::PI;

use crate::constants::DimensionlessConstants;
use crate::mesh::{Axis, PhaseGrid};
use crate::quadrature::GaussLegendre;
use crate::{Error, Result};

/// Default Gauss–Legendre points per sub-interval in `r`.
pub const DEFAULT_R_ORDER: usize = 8;
/// Longest `r` sub-interval integrated by one rule.
const MAX_R_PANEL: f64 = 0.5;
/// Points per angular cell.
const ANGLE_ORDER: usize = 16;
/// Magnitudes below this are stored as exact zero.
const ZERO_CUTOFF: f64 = 1e-300;

/// Density-of-states weight `s(w) = sqrt(w (1 + a w)) (1 + 2 a w)`; zero for
/// negative energies.
#[inline]
pub fn s_weight(w: f64, alpha: f64) -> f64 {
    if w <= 0.0 { 0.0 } else { (w * (1.0 + alpha * w)).sqrt() * (1.0 + 2.0 * alpha * w) }
}

/// `s1(w) = sqrt(w (1 + a w)) / (1 + 2 a w)`.
#[inline]
pub fn s1(w: f64, alpha: f64) -> f64 {
    if w <= 0.0 { 0.0 } else { (w * (1.0 + alpha * w)).sqrt() / (1.0 + 2.0 * alpha * w) }
}

/// `s2(w) = 1 / sqrt(w (1 + a w))`, singular at `w = 0`.
#[inline]
pub fn s2(w: f64, alpha: f64) -> f64 {
    1.0 / (w * (1.0 + alpha * w)).sqrt()
}

/// Total scattering rate `nu(w) = 2 pi [c0 s(w) + c+ s(w - g) + c- s(w + g)]`.
pub fn nu(w: f64, c: &DimensionlessConstants) -> f64 {
    let a = c.alpha_k;
    2.0 * PI * (c.c0 * s_weight(w, a) + c.c_plus * s_weight(w - c.gamma, a) + c.c_minus * s_weight(w + c.gamma, a))
}

/// Quadratic weight `c0 + c1 w + c2 w^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightPoly(pub [f64; 3]);

impl WeightPoly {
    pub const ONE: Self = Self([1.0, 0.0, 0.0]);

    /// `2 (w + shift - center) / width`, the local coordinate of a cell.
    pub fn xi(center: f64, width: f64, shift: f64) -> Self {
        Self([2.0 * (shift - center) / width, 2.0 / width, 0.0])
    }

    pub fn product(self, o: Self) -> Self {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        debug_assert!(a2 == 0.0 || (b1 == 0.0 && b2 == 0.0));
        debug_assert!(b2 == 0.0 || (a1 == 0.0 && a2 == 0.0));
        Self([a0 * b0, a0 * b1 + a1 * b0, a0 * b2 + a1 * b1 + a2 * b0])
    }

    #[inline]
    pub fn eval(&self, w: f64) -> f64 {
        self.0[0] + w * (self.0[1] + w * self.0[2])
    }
}

/// Composite Gauss–Legendre integration in `r = sqrt(u)` over `u in [lo, hi]`
/// (clamped at zero). `h(r)` must already contain the Jacobian `2r`.
fn integrate_in_r(gl: &GaussLegendre, lo: f64, hi: f64, h: impl Fn(f64) -> f64) -> f64 {
    let lo = lo.max(0.0);
    if hi <= lo {
        return 0.0;
    }
    let (ra, rb) = (lo.sqrt(), hi.sqrt());
    let panels = ((rb - ra) / MAX_R_PANEL).ceil().max(1.0) as usize;
    let step = (rb - ra) / panels as f64;
    (0..panels)
        .map(|i| {
            let a = ra + step * i as f64;
            let b = if i + 1 == panels { rb } else { a + step };
            gl.integrate(a, b, &h)
        })
        .sum()
}

fn s_weighted_with(gl: &GaussLegendre, a: f64, b: f64, shift: f64, weight: WeightPoly, alpha: f64) -> f64 {
    // u = w + shift = r^2; s(u) dw = r sqrt(1 + a r^2)(1 + 2 a r^2) 2r dr.
    integrate_in_r(gl, a + shift, b + shift, |r| {
        let r2 = r * r;
        2.0 * r2 * (1.0 + alpha * r2).sqrt() * (1.0 + 2.0 * alpha * r2) * weight.eval(r2 - shift)
    })
}

/// `int_a^b s(w + shift) p(w) dw`, with `s` taken as zero where its argument
/// is negative.
pub fn s_weighted_integral(a: f64, b: f64, shift: f64, weight: WeightPoly, alpha: f64) -> Result<f64> {
    if !(a < b) || a < 0.0 {
        return Err(Error::Domain(format!("need 0 <= a < b, got a={a}, b={b}")));
    }
    Ok(s_weighted_with(&GaussLegendre::new(DEFAULT_R_ORDER), a, b, shift, weight, alpha))
}

/// Energy shifts of the three scattering channels, in table order.
pub fn shifts(c: &DimensionlessConstants) -> [f64; 3] {
    [0.0, c.gamma, -c.gamma]
}

/// Strength paired with each shift: `c0` elastic, `c+` for `w + gamma`,
/// `c-` for `w - gamma`.
pub fn shift_strengths(c: &DimensionlessConstants) -> [f64; 3] {
    [c.c0, c.c_plus, c.c_minus]
}

/// Nonzero overlap of cell `k` with the shifted image of cell `k'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub k_src: usize,
    /// `int s(w) {1, xi_k'(w+sigma), xi_k(w), xi_k'(w+sigma) xi_k(w)} dw`.
    pub o: [f64; 4],
}

/// Precomputed collision integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionTables {
    pub nw: usize,
    pub shifts: [f64; 3],
    /// `overlaps[sigma][k]`: nonzero entries in ascending `k'`.
    pub overlaps: [Vec<Vec<Overlap>>; 3],
    /// `int_k nu(w) xi_k^p dw`, `p = 0, 1, 2`.
    pub loss: Vec<[f64; 3]>,
}

impl CollisionTables {
    /// Full overlap quadruple for `(k, k', sigma)`, zero when disjoint.
    pub fn overlap(&self, sigma: usize, k: usize, k_src: usize) -> [f64; 4] {
        self.overlaps[sigma][k].iter().find(|o| o.k_src == k_src).map_or([0.0; 4], |o| o.o)
    }
}

fn clean(v: f64) -> f64 {
    if v.abs() < ZERO_CUTOFF { 0.0 } else { v }
}

pub fn build_collision_tables(grid: &PhaseGrid, c: &DimensionlessConstants) -> CollisionTables {
    build_collision_tables_with_order(&grid.w, c, DEFAULT_R_ORDER)
}

pub fn build_collision_tables_with_order(w: &Axis, c: &DimensionlessConstants, order: usize) -> CollisionTables {
    let gl = GaussLegendre::new(order);
    let a = c.alpha_k;
    let nw = w.len();
    let sh = shifts(c);
    let overlaps = sh.map(|sigma| {
        (0..nw)
            .map(|k| {
                let (lo, hi) = w.bounds(k);
                let xk = WeightPoly::xi(w.center(k), w.width(k), 0.0);
                (0..nw)
                    .filter_map(|kp| {
                        let (plo, phi) = w.bounds(kp);
                        let a0 = lo.max(plo - sigma);
                        let b0 = hi.min(phi - sigma);
                        if b0 <= a0 {
                            return None;
                        }
                        let xkp = WeightPoly::xi(w.center(kp), w.width(kp), sigma);
                        let weights = [WeightPoly::ONE, xkp, xk, xkp.product(xk)];
                        let o = weights.map(|p| clean(s_weighted_with(&gl, a0, b0, 0.0, p, a)));
                        Some(Overlap { k_src: kp, o })
                    })
                    .collect()
            })
            .collect()
    });
    let loss = (0..nw)
        .map(|k| {
            let (lo, hi) = w.bounds(k);
            let xk = WeightPoly::xi(w.center(k), w.width(k), 0.0);
            let weights = [WeightPoly::ONE, xk, xk.product(xk)];
            weights.map(|p| {
                let el = s_weighted_with(&gl, lo, hi, 0.0, p, a);
                let em = s_weighted_with(&gl, lo, hi, -c.gamma, p, a);
                let ab = s_weighted_with(&gl, lo, hi, c.gamma, p, a);
                clean(2.0 * PI * (c.c0 * el + c.c_plus * em + c.c_minus * ab))
            })
        })
        .collect();
    CollisionTables { nw, shifts: sh, overlaps, loss }
}

/// Angular factors appearing in the streaming coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MuFactor {
    One,
    Mu,
    /// `sqrt(1 - mu^2)`
    Sqrt,
    /// `1 - mu^2`
    OneMinusSq,
    /// `mu sqrt(1 - mu^2)`
    MuSqrt,
    /// `1 / sqrt(1 - mu^2)`
    InvSqrt,
}

impl MuFactor {
    pub const ALL: [MuFactor; 6] =
        [MuFactor::One, MuFactor::Mu, MuFactor::Sqrt, MuFactor::OneMinusSq, MuFactor::MuSqrt, MuFactor::InvSqrt];

    pub fn eval(self, mu: f64) -> f64 {
        let q = (1.0 - mu * mu).max(0.0);
        match self {
            MuFactor::One => 1.0,
            MuFactor::Mu => mu,
            MuFactor::Sqrt => q.sqrt(),
            MuFactor::OneMinusSq => q,
            MuFactor::MuSqrt => mu * q.sqrt(),
            MuFactor::InvSqrt => 1.0 / q.sqrt(),
        }
    }

    /// The factor times `cos(theta)` at `mu = sin(theta)`.
    fn in_theta(self, th: f64) -> f64 {
        let (s, c) = th.sin_cos();
        match self {
            MuFactor::One => c,
            MuFactor::Mu => s * c,
            MuFactor::Sqrt => c * c,
            MuFactor::OneMinusSq => c * c * c,
            MuFactor::MuSqrt => s * c * c,
            MuFactor::InvSqrt => 1.0,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhiFactor {
    One,
    Cos,
    Sin,
}

impl PhiFactor {
    pub const ALL: [PhiFactor; 3] = [PhiFactor::One, PhiFactor::Cos, PhiFactor::Sin];

    pub fn eval(self, phi: f64) -> f64 {
        match self {
            PhiFactor::One => 1.0,
            PhiFactor::Cos => phi.cos(),
            PhiFactor::Sin => phi.sin(),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WFactor {
    S1,
    S2,
}

impl WFactor {
    pub fn eval(self, w: f64, alpha: f64) -> f64 {
        match self {
            WFactor::S1 => s1(w, alpha),
            WFactor::S2 => s2(w, alpha),
        }
    }
}

/// `int_{t_c - h}^{t_c + h} f(t) ((t - t_c)/h)^p dt` for `f = cos, sin`,
/// from antiderivatives.
fn trig_moments(f: PhiFactor, center: f64, width: f64) -> [f64; 3] {
    let h = 0.5 * width;
    let (sc, cc) = center.sin_cos();
    let (sh, ch) = h.sin_cos();
    // Even and odd kernels: int cos(u)(u/h)^p, int sin(u)(u/h)^p over [-h, h].
    let e0 = 2.0 * sh;
    let (o1, e2) = if h < 0.5 {
        // Power series avoid the cancellation of the closed forms:
        // o1 = 2 h^2 sum (-1)^j h^2j / ((2j+1)! (2j+3)),
        // e2 = 2 h sum (-1)^j h^2j / ((2j)! (2j+3)).
        let (mut so, mut se) = (0.0, 0.0);
        let mut pow = 1.0;
        let mut fact_even = 1.0;
        for j in 0..12 {
            let jf = j as f64;
            if j > 0 {
                fact_even *= (2.0 * jf - 1.0) * (2.0 * jf);
            }
            let fact_odd = fact_even * (2.0 * jf + 1.0);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            so += sign * pow / (fact_odd * (2.0 * jf + 3.0));
            se += sign * pow / (fact_even * (2.0 * jf + 3.0));
            pow *= h * h;
        }
        (2.0 * h * h * so, 2.0 * h * se)
    } else {
        (2.0 * (sh - h * ch) / h, 2.0 * (h * h * sh + 2.0 * h * ch - 2.0 * sh) / (h * h))
    };
    match f {
        PhiFactor::One => [width, 0.0, width / 3.0],
        // cos(c + u) = cos c cos u - sin c sin u
        PhiFactor::Cos => [cc * e0, -sc * o1, cc * e2],
        // sin(c + u) = sin c cos u + cos c sin u
        PhiFactor::Sin => [sc * e0, cc * o1, sc * e2],
    }
}

/// Streaming and moment integrals over single energy and angle cells.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingTables {
    pub c_x: f64,
    /// `int_k s1 xi_w^p dw`.
    pub s1: Vec<[f64; 3]>,
    /// `int_k s2 xi_w^p dw`.
    pub s2: Vec<[f64; 3]>,
    /// `mu_moments[factor][m][p] = int_m f(mu) xi_mu^p dmu`.
    pub mu_moments: Vec<Vec<[f64; 3]>>,
    /// `phi_moments[factor][n][p]`, empty in 1D.
    pub phi_moments: Vec<Vec<[f64; 3]>>,
}

impl StreamingTables {
    pub fn w_moment(&self, f: WFactor, k: usize) -> [f64; 3] {
        match f {
            WFactor::S1 => self.s1[k],
            WFactor::S2 => self.s2[k],
        }
    }

    pub fn mu_moment(&self, f: MuFactor, m: usize) -> [f64; 3] {
        self.mu_moments[f.index()][m]
    }

    pub fn phi_moment(&self, f: PhiFactor, n: usize) -> [f64; 3] {
        self.phi_moments[f.index()][n]
    }

    /// `g_{1,km} = int int g1 dw dmu`.
    pub fn g1(&self, k: usize, m: usize) -> f64 {
        self.c_x * self.s1[k][0] * self.mu_moment(MuFactor::Mu, m)[0]
    }

    /// `int int g1 xi_w dw dmu`.
    pub fn g1w(&self, k: usize, m: usize) -> f64 {
        self.c_x * self.s1[k][1] * self.mu_moment(MuFactor::Mu, m)[0]
    }

    /// `int int g1 xi_mu dw dmu`.
    pub fn g1mu(&self, k: usize, m: usize) -> f64 {
        self.c_x * self.s1[k][0] * self.mu_moment(MuFactor::Mu, m)[1]
    }

    /// `g_{2,kmn} = int int int g2 dw dmu dphi`.
    pub fn g2(&self, k: usize, m: usize, n: usize) -> f64 {
        self.c_x * self.s1[k][0] * self.mu_moment(MuFactor::Sqrt, m)[0] * self.phi_moment(PhiFactor::Cos, n)[0]
    }

    pub fn g2w(&self, k: usize, m: usize, n: usize) -> f64 {
        self.c_x * self.s1[k][1] * self.mu_moment(MuFactor::Sqrt, m)[0] * self.phi_moment(PhiFactor::Cos, n)[0]
    }

    pub fn g2mu(&self, k: usize, m: usize, n: usize) -> f64 {
        self.c_x * self.s1[k][0] * self.mu_moment(MuFactor::Sqrt, m)[1] * self.phi_moment(PhiFactor::Cos, n)[0]
    }

    pub fn g2phi(&self, k: usize, m: usize, n: usize) -> f64 {
        self.c_x * self.s1[k][0] * self.mu_moment(MuFactor::Sqrt, m)[0] * self.phi_moment(PhiFactor::Cos, n)[1]
    }
}

/// `int_m f(mu) xi^p dmu` through `mu = sin(theta)`.
pub fn mu_cell_moments(f: MuFactor, lo: f64, hi: f64, order: usize) -> [f64; 3] {
    let gl = GaussLegendre::new(order);
    let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let (ta, tb) = (lo.clamp(-1.0, 1.0).asin(), hi.clamp(-1.0, 1.0).asin());
    let mut out = [0.0; 3];
    for (th, wt) in gl.mapped(ta, tb) {
        let v = wt * f.in_theta(th);
        let xi = (th.sin() - c) / h;
        out[0] += v;
        out[1] += v * xi;
        out[2] += v * xi * xi;
    }
    out
}

pub fn build_streaming_tables(grid: &PhaseGrid, c: &DimensionlessConstants) -> StreamingTables {
    build_streaming_tables_with_order(grid, c, DEFAULT_R_ORDER)
}

pub fn build_streaming_tables_with_order(grid: &PhaseGrid, c: &DimensionlessConstants, order: usize) -> StreamingTables {
    let gl = GaussLegendre::new(order);
    let a = c.alpha_k;
    let w = &grid.w;
    let w_moments = |f: &dyn Fn(f64) -> f64| -> Vec<[f64; 3]> {
        (0..w.len())
            .map(|k| {
                let (lo, hi) = w.bounds(k);
                let (wc, h) = (w.center(k), 0.5 * w.width(k));
                let mut out = [0.0; 3];
                for (p, slot) in out.iter_mut().enumerate() {
                    *slot = integrate_in_r(&gl, lo, hi, |r| {
                        let xi = (r * r - wc) / h;
                        f(r) * xi.powi(p as i32)
                    });
                }
                out
            })
            .collect()
    };
    // With w = r^2: s1 dw = 2 r^2 sqrt(1 + a r^2) / (1 + 2 a r^2) dr and
    // s2 dw = 2 / sqrt(1 + a r^2) dr.
    let s1m = w_moments(&|r| {
        let r2 = r * r;
        2.0 * r2 * (1.0 + a * r2).sqrt() / (1.0 + 2.0 * a * r2)
    });
    let s2m = w_moments(&|r| 2.0 / (1.0 + a * r * r).sqrt());
    let mu_moments = MuFactor::ALL
        .iter()
        .map(|&f| (0..grid.nmu()).map(|m| {
            let (lo, hi) = grid.mu.bounds(m);
            mu_cell_moments(f, lo, hi, ANGLE_ORDER)
        }).collect())
        .collect();
    let phi_moments = match &grid.phi {
        Some(phi) => PhiFactor::ALL
            .iter()
            .map(|&f| (0..phi.len()).map(|n| trig_moments(f, phi.center(n), phi.width(n))).collect())
            .collect(),
        None => Vec::new(),
    };
    StreamingTables {
        c_x: c.c_x,
        s1: s1m.into_iter().map(|v| v.map(clean)).collect(),
        s2: s2m.into_iter().map(|v| v.map(clean)).collect(),
        mu_moments,
        phi_moments,
    }
}

/// `int_k s(w) e^{-w} xi_w^p dw`, `p = 0, 1`, for every energy cell.
pub fn maxwellian_moments(w: &Axis, alpha: f64) -> Vec<[f64; 2]> {
    let gl = GaussLegendre::new(DEFAULT_R_ORDER);
    (0..w.len())
        .map(|k| {
            let (lo, hi) = w.bounds(k);
            let (wc, h) = (w.center(k), 0.5 * w.width(k));
            let f = |p: i32| {
                integrate_in_r(&gl, lo, hi, |r| {
                    let r2 = r * r;
                    2.0 * r2 * (1.0 + alpha * r2).sqrt() * (1.0 + 2.0 * alpha * r2) * (-r2).exp() * ((r2 - wc) / h).powi(p)
                })
            };
            [f(0), f(1)]
        })
        .collect()
}
