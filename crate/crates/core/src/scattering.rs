//! Scattering map of a saddle-center on its center disc: spectral geometry,
//! tangency radii, heteroclinic chains through KAM circles, and the
//! tangency-bifurcation solvers.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::model::ModelSpec;

const DET_TOL: f64 = 1e-12;

/// Linear part `L = (b11 b12; b21 b22)` of the scattering map and the
/// offset `S(O) = (mu, nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatLinear {
    pub b11: f64,
    pub b12: f64,
    pub b21: f64,
    pub b22: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub nu: f64,
}

impl ScatLinear {
    pub fn new(b11: f64, b12: f64, b21: f64, b22: f64) -> Result<Self> {
        let l = ScatLinear {
            b11,
            b12,
            b21,
            b22,
            mu: 0.0,
            nu: 0.0,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn diag(a: f64) -> Result<Self> {
        ScatLinear::new(a, 0.0, 0.0, 1.0 / a)
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        ScatLinear {
            b11: c,
            b12: -s,
            b21: s,
            b22: c,
            mu: 0.0,
            nu: 0.0,
        }
    }

    pub fn det(&self) -> f64 {
        self.b11 * self.b22 - self.b12 * self.b21
    }

    pub fn validate(&self) -> Result<()> {
        let entries = [self.b11, self.b12, self.b21, self.b22, self.mu, self.nu];
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("scattering matrix has non-finite entries"));
        }
        if (self.det() - 1.0).abs() > DET_TOL {
            return Err(Error::domain(format!("det L = {} is not 1", self.det())));
        }
        Ok(())
    }

    /// `tr(L^T L)`.
    pub fn trace_ltl(&self) -> f64 {
        self.b11 * self.b11 + self.b12 * self.b12 + self.b21 * self.b21 + self.b22 * self.b22
    }

    /// `g0(phi) = |L (cos phi, sin phi)|^2`.
    pub fn g0(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let a = self.b11 * c + self.b12 * s;
        let b = self.b21 * c + self.b22 * s;
        a * a + b * b
    }

    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.mu + self.b11 * u + self.b12 * v,
            self.nu + self.b21 * u + self.b22 * v,
        )
    }

    /// `R L R^-1` for the rotation `R` by `theta`.
    pub fn conjugate(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let rl = [
            [c * self.b11 - s * self.b21, c * self.b12 - s * self.b22],
            [s * self.b11 + c * self.b21, s * self.b12 + c * self.b22],
        ];
        ScatLinear {
            b11: rl[0][0] * c - rl[0][1] * s,
            b12: rl[0][0] * s + rl[0][1] * c,
            b21: rl[1][0] * c - rl[1][1] * s,
            b22: rl[1][0] * s + rl[1][1] * c,
            mu: self.mu,
            nu: self.nu,
        }
    }

    /// Squared row norms `(b11^2 + b12^2, b21^2 + b22^2)`.
    pub fn row_norms_sq(&self) -> (f64, f64) {
        (
            self.b11 * self.b11 + self.b12 * self.b12,
            self.b21 * self.b21 + self.b22 * self.b22,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub lambda: f64,
    /// Argmax of `g0` on `[0, pi)`, radians.
    pub phi_plus: f64,
    /// Argmin of `g0` on `[0, pi)`, radians.
    pub phi_minus: f64,
}

fn wrap_pi(a: f64) -> f64 {
    let w = a.rem_euclid(PI);
    if w >= PI {
        0.0
    } else {
        w
    }
}

/// `g0(phi) = c0 + p cos 2phi + q sin 2phi`.
fn g0_harmonics(l: &ScatLinear) -> (f64, f64, f64) {
    let c0 = 0.5 * l.trace_ltl();
    let p = 0.5 * (l.b11 * l.b11 + l.b21 * l.b21 - l.b12 * l.b12 - l.b22 * l.b22);
    let q = l.b11 * l.b12 + l.b21 * l.b22;
    (c0, p, q)
}

pub fn scat_spectrum(l: &ScatLinear) -> Result<Spectrum> {
    l.validate()?;
    let (c0, p, q) = g0_harmonics(l);
    let amp = p.hypot(q);
    let phi_plus = if amp == 0.0 { 0.0 } else { wrap_pi(0.5 * q.atan2(p)) };
    Ok(Spectrum {
        lambda: c0 + amp,
        phi_plus,
        phi_minus: wrap_pi(phi_plus + 0.5 * PI),
    })
}

/// `lambda > 1 + tol`, i.e. `L` is not a rotation.
pub fn c3_check(l: &ScatLinear, tol: f64) -> Result<bool> {
    Ok(scat_spectrum(l)?.lambda > 1.0 + tol)
}

/// Smallest grid angle `theta` for which the rows of `R L R^-1` have squared
/// norms differing by at least `(lambda - 1/lambda) / 4`.
pub fn normalize_rows(l: &ScatLinear) -> Result<f64> {
    let lam = scat_spectrum(l)?.lambda;
    if !c3_check(l, 1e-10)? {
        return Err(Error::domain("L is a rotation: all conjugates have equal row norms"));
    }
    let need = (lam - 1.0 / lam) / 4.0;
    let n = 7200;
    (0..n)
        .map(|i| PI * i as f64 / n as f64)
        .find(|&t| {
            let (a, b) = l.conjugate(t).row_norms_sq();
            (a - b).abs() >= need
        })
        .ok_or_else(|| Error::Search("no rotation separates the row norms".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangencyRadii {
    pub r_plus: f64,
    pub r_minus: f64,
    pub degenerate: bool,
}

/// Leading-order radii `(lambda r, r / lambda)` of the circles tangent to
/// the image of the circle of radius `r`.
pub fn tangency_radii(l: &ScatLinear, r: f64) -> Result<TangencyRadii> {
    if !(r > 0.0 && r < 0.1) {
        return Err(Error::domain("tangency radii need r in (0, 0.1)"));
    }
    let lam = scat_spectrum(l)?.lambda;
    Ok(TangencyRadii {
        r_plus: lam * r,
        r_minus: r / lam,
        degenerate: lam <= 1.0 + 1e-10,
    })
}

/// Nonlinear scattering map `L o shear`, with the symplectic shear
/// `(u, v) -> (u, v + quad u^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatModel {
    pub linear: ScatLinear,
    pub quad: f64,
}

impl ScatModel {
    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        self.linear.apply(u, v + self.quad * u * u)
    }

    /// `rbar` of the image of the point `(r, phi)`, with `u = sqrt(2r) cos phi`.
    pub fn rbar(&self, r: f64, phi: f64) -> f64 {
        let s = (2.0 * r).sqrt();
        let (u, v) = self.apply(s * phi.cos(), s * phi.sin());
        0.5 * (u * u + v * v)
    }

    /// Extrema of `rbar` over the circle of radius `r`: the radii of the two
    /// circles the image is tangent to.
    pub fn measured_radii(&self, r: f64) -> (f64, f64) {
        let f = |p: f64| self.rbar(r, p);
        let n = 4096;
        let grid: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
        let h = 2.0 * PI / n as f64;
        let refine = |sign: f64| -> f64 {
            let i0 = (0..n)
                .max_by(|&a, &b| (sign * f(grid[a])).total_cmp(&(sign * f(grid[b]))))
                .unwrap();
            golden_max(|p| sign * f(p), grid[i0] - h, grid[i0] + h) * sign
        };
        (refine(1.0), refine(-1.0))
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangencyResidualFit {
    pub radii: Vec<f64>,
    pub residuals: Vec<f64>,
    pub exponent: f64,
}

/// Deviation of the measured tangency radii from `(lambda r, r / lambda)`
/// and its fitted power law in `r`.
pub fn tangency_residuals(m: &ScatModel, radii: &[f64]) -> Result<TangencyResidualFit> {
    let mut residuals = Vec::with_capacity(radii.len());
    for &r in radii {
        let lead = tangency_radii(&m.linear, r)?;
        let (rp, rm) = m.measured_radii(r);
        residuals.push((rp - lead.r_plus).abs().max((rm - lead.r_minus).abs()));
    }
    let exponent = loglog_slope(radii, &residuals)?;
    Ok(TangencyResidualFit {
        radii: radii.to_vec(),
        residuals,
        exponent,
    })
}

/// Sorted positive radii of invariant circles. A synthetic proxy for the
/// KAM Cantor set: the radii are generated, not continued from a real map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KamRadiiSet {
    pub radii: Vec<f64>,
    pub c: f64,
    pub tau: f64,
    pub r_range: (f64, f64),
}

impl KamRadiiSet {
    pub fn from_radii(mut radii: Vec<f64>, r_max: f64) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::domain("empty radii set"));
        }
        if radii.iter().any(|r| !(*r > 0.0 && *r < r_max)) {
            return Err(Error::domain("radii must lie in (0, r_max)"));
        }
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        let lo = radii[0];
        let hi = radii[radii.len() - 1];
        Ok(KamRadiiSet {
            radii,
            c: 0.0,
            tau: 0.0,
            r_range: (lo, hi),
        })
    }

    /// `r_lo * ratio^j` up to `r_hi`.
    pub fn geometric(r_lo: f64, r_hi: f64, ratio: f64) -> Result<Self> {
        if !(r_lo > 0.0 && r_hi >= r_lo && ratio > 1.0) {
            return Err(Error::domain("geometric grid needs 0 < r_lo <= r_hi and ratio > 1"));
        }
        let mut radii = Vec::new();
        let mut r = r_lo;
        while r <= r_hi * (1.0 + 1e-12) {
            radii.push(r);
            r *= ratio;
        }
        let mut s = KamRadiiSet::from_radii(radii, f64::INFINITY)?;
        s.r_range = (r_lo, r_hi);
        Ok(s)
    }

    /// Radii `r` on a uniform grid whose frequency `rho0 + twist r` is
    /// `(c, tau)`-Diophantine against every `p/q` with `q <= q_max`.
    pub fn diophantine(rho0: f64, twist: f64, c: f64, tau: f64, r_range: (f64, f64), n_grid: usize, q_max: i64) -> Result<Self> {
        if !(r_range.0 > 0.0 && r_range.1 > r_range.0) || n_grid < 2 {
            return Err(Error::domain("bad radius range"));
        }
        let radii: Vec<f64> = (0..n_grid)
            .map(|i| r_range.0 + (r_range.1 - r_range.0) * i as f64 / (n_grid - 1) as f64)
            .filter(|&r| {
                let w = rho0 + twist * r;
                (1..=q_max).all(|q| {
                    let qf = q as f64;
                    let p = (w * qf).round();
                    (w - p / qf).abs() > c / qf.powf(tau)
                })
            })
            .collect();
        if radii.is_empty() {
            return Err(Error::Search("no Diophantine radius in range".into()));
        }
        let mut s = KamRadiiSet::from_radii(radii, f64::INFINITY)?;
        s.c = c;
        s.tau = tau;
        s.r_range = r_range;
        Ok(s)
    }

    fn index_of(&self, r: f64) -> Option<usize> {
        self.radii.iter().position(|v| (v - r).abs() <= 1e-12 * r.abs().max(1e-300))
    }
}

pub const CHAIN_MAX_LEN: usize = 64;

/// Shortest chain `s_0 = r_start, ..., s_n = r_end` in `G` whose consecutive
/// ratios lie in `(lambda^-1 (1 + eta), lambda (1 - eta))`.
pub fn hetero_chain(g: &KamRadiiSet, l: &ScatLinear, r_start: f64, r_end: f64, eta: f64) -> Result<Vec<f64>> {
    let lam = scat_spectrum(l)?.lambda;
    let i0 = g
        .index_of(r_start)
        .ok_or_else(|| Error::domain("r_start is not in the radii set"))?;
    let i1 = g
        .index_of(r_end)
        .ok_or_else(|| Error::domain("r_end is not in the radii set"))?;
    if i0 == i1 {
        return Ok(vec![g.radii[i0]]);
    }
    let lo = (1.0 + eta) / lam;
    let hi = lam * (1.0 - eta);
    if lo >= hi {
        return Err(Error::Search(format!("ratio window ({lo}, {hi}) is empty")));
    }
    let n = g.radii.len();
    let mut prev = vec![usize::MAX; n];
    let mut depth = vec![usize::MAX; n];
    depth[i0] = 1;
    let mut queue = VecDeque::from([i0]);
    while let Some(i) = queue.pop_front() {
        if i == i1 {
            break;
        }
        if depth[i] >= CHAIN_MAX_LEN {
            continue;
        }
        let s = g.radii[i];
        let a = g.radii.partition_point(|v| *v <= s * lo);
        let b = g.radii.partition_point(|v| *v < s * hi);
        for j in a..b {
            if depth[j] == usize::MAX {
                depth[j] = depth[i] + 1;
                prev[j] = i;
                queue.push_back(j);
            }
        }
    }
    if depth[i1] == usize::MAX {
        return Err(Error::Search(format!(
            "no heteroclinic chain of length <= {CHAIN_MAX_LEN} from {r_start} to {r_end}"
        )));
    }
    let mut chain = vec![g.radii[i1]];
    let mut j = i1;
    while j != i0 {
        j = prev[j];
        chain.push(g.radii[j]);
    }
    chain.reverse();
    Ok(chain)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleCenterConnection {
    pub theta: f64,
    pub mu: f64,
    pub nu: f64,
    pub residual: f64,
}

/// Leading-order `r`-coordinates of `S(O)` and `S^-1(O)`.
pub fn r_u_r_s(l: &ScatLinear, mu: f64, nu: f64) -> (f64, f64) {
    let ru = 0.5 * (mu * mu + nu * nu);
    let rs = 0.5
        * ((l.b22 * l.b22 + l.b21 * l.b21) * mu * mu + (l.b12 * l.b12 + l.b11 * l.b11) * nu * nu
            - 2.0 * (l.b12 * l.b22 + l.b21 * l.b11) * mu * nu);
    (ru, rs)
}

/// Splitting `(mu, nu)` on the circle `mu^2 + nu^2 = 2 r` with
/// `r^s = r^u = r_target`.
pub fn connect_saddle_center(l: &ScatLinear, r_target: f64) -> Result<SaddleCenterConnection> {
    l.validate()?;
    if !(r_target > 0.0 && r_target < 0.01) {
        return Err(Error::domain("r_target must lie in (0, 0.01)"));
    }
    let tr = l.trace_ltl();
    if tr <= 2.0 + 1e-12 {
        return Err(Error::Infeasible(format!("tr(L^T L) = {tr} is not above 2")));
    }
    // P cos 2t - Q sin 2t = 1 - tr/2
    let p = 0.5 * (l.b22 * l.b22 + l.b21 * l.b21 - l.b12 * l.b12 - l.b11 * l.b11);
    let q = l.b12 * l.b22 + l.b21 * l.b11;
    let amp = p.hypot(q);
    let rhs = 1.0 - 0.5 * tr;
    if amp < rhs.abs() {
        return Err(Error::Infeasible("no angle solves the r^s equation".into()));
    }
    // P cos 2t - Q sin 2t = amp cos(2t + psi)
    let psi = q.atan2(p);
    let base = (rhs / amp).clamp(-1.0, 1.0).acos();
    let mut cands: Vec<f64> = [base - psi, -base - psi]
        .iter()
        .flat_map(|w| [0.5 * w, 0.5 * w + 0.5 * PI])
        .map(|t| t.rem_euclid(PI))
        .filter(|t| {
            let m = t.rem_euclid(0.5 * PI);
            m > 1e-9 && m < 0.5 * PI - 1e-9
        })
        .collect();
    cands.sort_by(f64::total_cmp);
    let theta = *cands
        .first()
        .ok_or_else(|| Error::Infeasible("only axis angles solve the r^s equation".into()))?;
    let s = (2.0 * r_target).sqrt();
    let (mu, nu) = (s * theta.cos(), s * theta.sin());
    let (ru, rs) = r_u_r_s(l, mu, nu);
    Ok(SaddleCenterConnection {
        theta,
        mu,
        nu,
        residual: (ru - rs).abs().max((rs - r_target).abs()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiiPair {
    pub r_plus: f64,
    pub r_minus: f64,
    pub mu: f64,
    pub residual: f64,
}

/// Pair of circles giving two coexisting quadratic tangencies. For
/// `alpha > 0` match `r+ = -r- / alpha` with `mu = r+`; for `alpha < 0`
/// match `r+ = r- / alpha` with `mu = 0`. Among admissible pairs the one
/// with `r+` closest to `mu_hint` wins.
pub fn pair_radii_two_quadratics(g_plus: &KamRadiiSet, g_minus: &[f64], alpha: f64, mu_hint: f64) -> Result<RadiiPair> {
    const TOL: f64 = 1e-3;
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::domain("alpha must be finite and nonzero"));
    }
    if g_minus.iter().any(|r| *r >= 0.0) {
        return Err(Error::domain("G_minus radii must be negative"));
    }
    let mut minus: Vec<f64> = g_minus.to_vec();
    minus.sort_by(f64::total_cmp);
    let target = |rm: f64| if alpha > 0.0 { -rm / alpha } else { rm / alpha };
    let mut best: Option<(f64, RadiiPair)> = None;
    for &rp in &g_plus.radii {
        // target is monotone in rm, so binary search the closest match
        let want = if alpha > 0.0 { -alpha * rp } else { alpha * rp };
        let i = minus.partition_point(|v| *v < want);
        for j in [i.wrapping_sub(1), i] {
            let Some(&rm) = minus.get(j) else { continue };
            let res = (rp - target(rm)).abs();
            if res <= TOL * rp {
                let score = (rp - mu_hint).abs();
                if best.as_ref().map_or(true, |b| score < b.0) {
                    best = Some((
                        score,
                        RadiiPair {
                            r_plus: rp,
                            r_minus: rm,
                            mu: if alpha > 0.0 { rp } else { 0.0 },
                            residual: res,
                        },
                    ));
                }
            }
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::Search("no pair of radii matches the tangency condition".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicSolution {
    pub phi_t: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Largest absolute residual of the three tangency equations.
    pub residual: f64,
    pub newton_steps: usize,
}

/// `P(Phi) = mu2 + B (mu1 + Phi^2) + (mu1 + Phi + Phi^2)^2 + c Phi^3 / k`
/// and its first three derivatives in `Phi`.
fn cubic_system(b: f64, corr: f64, phi: f64, mu1: f64, mu2: f64) -> [f64; 3] {
    let w = mu1 + phi + phi * phi;
    let dw = 1.0 + 2.0 * phi;
    let p = mu2 + b * (mu1 + phi * phi) + w * w + corr * phi.powi(3);
    let dp = 2.0 * b * phi + 2.0 * w * dw + 3.0 * corr * phi * phi;
    let d2p = 2.0 * b + 2.0 * dw * dw + 4.0 * w + 6.0 * corr * phi;
    [p, dp, d2p]
}

/// Coefficient of the model `O(1/k)` correction used for finite `k`.
pub const CUBIC_CORRECTION: f64 = 1.0;

/// Cubic tangency created from two quadratic ones: `k = None` is the limit
/// system, solved in closed form; finite `k` adds `Phi^3 / k` to the
/// composed map and refines by Newton.
pub fn cubic_from_two_quadratics(b: f64, k: Option<u64>) -> Result<CubicSolution> {
    if b == 0.0 || !b.is_finite() {
        return Err(Error::domain("B must be finite and nonzero"));
    }
    let phi = 0.5 * ((-b).cbrt() - 1.0);
    let den = 1.0 + 2.0 * phi;
    if den == 0.0 {
        return Err(Error::domain("1 + 2 Phi vanishes"));
    }
    let mu1 = -((1.0 + b) * phi + 3.0 * phi * phi + 2.0 * phi.powi(3)) / den;
    let w = mu1 + phi + phi * phi;
    let mu2 = -(b * (mu1 + phi * phi) + w * w);
    let limit = CubicSolution {
        phi_t: phi,
        mu1,
        mu2,
        residual: cubic_system(b, 0.0, phi, mu1, mu2).iter().fold(0.0f64, |m, v| m.max(v.abs())),
        newton_steps: 0,
    };
    let Some(k) = k else { return Ok(limit) };
    if k == 0 {
        return Err(Error::domain("k must be positive"));
    }
    let corr = CUBIC_CORRECTION / k as f64;
    let mut x = nalgebra::Vector3::new(phi, mu1, mu2);
    let f = |x: &nalgebra::Vector3<f64>| nalgebra::Vector3::from(cubic_system(b, corr, x[0], x[1], x[2]));
    for step in 1..=50 {
        let fx = f(&x);
        let res = fx.amax();
        if res <= 1e-13 {
            return Ok(CubicSolution {
                phi_t: x[0],
                mu1: x[1],
                mu2: x[2],
                residual: res,
                newton_steps: step - 1,
            });
        }
        let (p, m1) = (x[0], x[1]);
        let w = m1 + p + p * p;
        let dw = 1.0 + 2.0 * p;
        let d3 = 12.0 * dw + 6.0 * corr;
        let jac = nalgebra::Matrix3::new(
            2.0 * b * p + 2.0 * w * dw + 3.0 * corr * p * p,
            b + 2.0 * w,
            1.0,
            2.0 * b + 2.0 * dw * dw + 4.0 * w + 6.0 * corr * p,
            2.0 * dw,
            0.0,
            d3,
            4.0,
            0.0,
        );
        let dx = jac
            .lu()
            .solve(&fx)
            .ok_or_else(|| Error::solver("cubic tangency Newton (singular Jacobian)", res))?;
        x -= dx;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::solver("cubic tangency Newton diverged", res));
        }
    }
    Err(Error::solver("cubic tangency Newton", f(&x).amax()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondaryCubicParams {
    /// Bound `k^-2` on `|mu|`.
    pub mu_order: f64,
    pub nu: f64,
    pub alpha_new: f64,
}

/// Leading-order parameters of the secondary cubic tangency.
pub fn secondary_cubic_params(b: f64, a12: f64, k: u64) -> Result<SecondaryCubicParams> {
    if b == 0.0 || a12 == 0.0 {
        return Err(Error::domain("b and a12 must be nonzero"));
    }
    if k < 10 {
        return Err(Error::domain("k must be at least 10"));
    }
    let kf = k as f64;
    Ok(SecondaryCubicParams {
        mu_order: kf.powi(-2),
        nu: -b * b / kf,
        alpha_new: -kf / (b * a12),
    })
}

/// Coefficients of the two transition maps around the secondary cubic
/// tangency, in the unscaled cross form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondaryCubicSetup {
    pub b: f64,
    pub beta: f64,
    pub a12: f64,
    pub a22: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondaryCubicSolve {
    pub k: u64,
    pub mu: f64,
    pub nu: f64,
    /// Phase offset `phibar - phi1+` of the tangency point.
    pub s_star: f64,
    /// `d phibar / d phi` along the unstable leaf.
    pub alpha_new: f64,
    pub residual: f64,
}

/// Inner-map orbit along `W^u(gamma)`: for the phase offset `s` at the
/// tangency side, the radius `rt` leaving `T2` and the radius after `k`
/// inner steps.
fn secondary_leaf(m: &ModelSpec, setup: &SecondaryCubicSetup, k: u64, s: f64) -> Result<(f64, f64)> {
    let rho = m.rho_value();
    // phases measured from phi2+, whose k-th image lands on phi1- exactly
    let run = |rt: f64| -> Result<(f64, f64)> {
        let (mut r, mut ph) = (rt, setup.a22 * rt);
        let mut excess = 0.0;
        for _ in 0..k {
            let (rn, ex) = m.inner_step(r, ph);
            r = rn;
            excess += ex;
            ph = ph + rho + ex;
        }
        Ok((r, setup.a22 * rt + excess))
    };
    let target = setup.b * s;
    let mut rt = target / (k as f64 * m.twist + setup.a22);
    for _ in 0..60 {
        let (_, d) = run(rt)?;
        let h = 1e-7 * rt.abs().max(1e-12);
        let (_, d2) = run(rt + h)?;
        let slope = (d2 - d) / h;
        let step = (d - target) / slope;
        rt -= step;
        if step.abs() <= 1e-15 * rt.abs().max(1e-300) {
            break;
        }
    }
    let (rk, d) = run(rt)?;
    if (d - target).abs() > 1e-12 * target.abs().max(1e-300) {
        return Err(Error::solver("secondary tangency leaf", (d - target).abs()));
    }
    Ok((rt, rk))
}

/// Numeric secondary cubic tangency: solve `rbar(s) = rbar' = rbar'' = 0` for
/// `(mu, nu, s)` along the image of `W^u(gamma)` under `T1 o T0^k o T2`.
pub fn secondary_cubic_numeric(m: &ModelSpec, setup: &SecondaryCubicSetup, k: u64) -> Result<SecondaryCubicSolve> {
    if k < 10 {
        return Err(Error::domain("k must be at least 10"));
    }
    if setup.b == 0.0 || setup.beta == 0.0 || setup.a12 == 0.0 {
        return Err(Error::domain("b, beta and a12 must be nonzero"));
    }
    let scale = (k as f64).powf(-0.5);
    let g = |s: f64| -> Result<f64> {
        let (_, rk) = secondary_leaf(m, setup, k, s)?;
        Ok(setup.b * rk + setup.beta * s.powi(3))
    };
    let h = 1e-3 * scale;
    let h1 = 1e-6 * scale;
    let d1 = |s: f64| -> Result<f64> { Ok((g(s + h1)? - g(s - h1)?) / (2.0 * h1)) };
    let d2 = |s: f64| -> Result<f64> { Ok((g(s + h)? - 2.0 * g(s)? + g(s - h)?) / (h * h)) };
    let mut s = 0.0;
    let mut res = f64::INFINITY;
    for _ in 0..30 {
        let v = d2(s)?;
        let dv = (d2(s + h)? - d2(s - h)?) / (2.0 * h);
        res = v.abs();
        if dv == 0.0 {
            break;
        }
        let step = v / dv;
        s -= step;
        if step.abs() <= 1e-10 * scale {
            break;
        }
    }
    let nu = -d1(s)?;
    let mu = -nu * s - g(s)?;
    let (rt, _) = secondary_leaf(m, setup, k, s)?;
    let (rt2, _) = secondary_leaf(m, setup, k, s + h)?;
    // phi - phi2- = a12 rt along the leaf
    let alpha_new = h / (setup.a12 * (rt2 - rt));
    Ok(SecondaryCubicSolve {
        k,
        mu,
        nu,
        s_star: s,
        alpha_new,
        residual: res * scale,
    })
}

/// Leading determinant `-(lambda0 - 1)^2 / lambda0^2 * A * r` of the
/// two-tangency unfolding.
pub fn unfold_two_tangencies_det(lambda0: f64, a: f64, r_star: f64) -> Result<f64> {
    if !(lambda0 > 1.0) || a == 0.0 || !(r_star > 0.0) {
        return Err(Error::domain("need lambda0 > 1, A != 0, r_star > 0"));
    }
    Ok(-(lambda0 - 1.0).powi(2) / (lambda0 * lambda0) * a * r_star)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_examples() {
        let d = ScatLinear::diag(2.0).unwrap();
        let s = scat_spectrum(&d).unwrap();
        assert!((s.lambda - 4.0).abs() < 1e-14);
        assert!(s.phi_plus.abs() < 1e-14);
        assert!((s.phi_minus - PI / 2.0).abs() < 1e-14);
        let sh = ScatLinear::new(1.0, 1.0, 0.0, 1.0).unwrap();
        assert!((scat_spectrum(&sh).unwrap().lambda - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
        let rot = ScatLinear::rotation(0.7);
        assert!((scat_spectrum(&rot).unwrap().lambda - 1.0).abs() < 1e-14);
        assert!(!c3_check(&rot, 1e-10).unwrap());
        assert!(c3_check(&d, 1e-10).unwrap());
        assert!(ScatLinear::new(1.01, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn rows_and_radii() {
        assert_eq!(normalize_rows(&ScatLinear::diag(2.0).unwrap()).unwrap(), 0.0);
        assert!(normalize_rows(&ScatLinear::rotation(0.3)).is_err());
        let t = tangency_radii(&ScatLinear::diag(2.0).unwrap(), 0.01).unwrap();
        assert!((t.r_plus - 0.04).abs() < 1e-16 && (t.r_minus - 0.0025).abs() < 1e-16);
        assert!(tangency_radii(&ScatLinear::rotation(0.3), 0.01).unwrap().degenerate);
    }

    #[test]
    fn connection_example() {
        let c = connect_saddle_center(&ScatLinear::diag(2.0).unwrap(), 1e-3).unwrap();
        assert!((c.theta - 0.46365).abs() < 1e-5, "{c:?}");
        assert!((c.mu - 0.04008).abs() < 1e-4 && (c.nu - 0.02004).abs() < 1e-4);
        assert!((c.mu * c.mu + c.nu * c.nu - 2e-3).abs() < 1e-18);
        assert!(c.residual <= 1e-10);
        assert!(matches!(
            connect_saddle_center(&ScatLinear::rotation(0.2), 1e-3),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn cubic_examples() {
        for (b, want) in [(1.0, [-1.0, -1.0, -1.0]), (-1.0, [0.0, 0.0, 0.0]), (8.0, [-1.5, -6.75, 0.0])] {
            let s = cubic_from_two_quadratics(b, None).unwrap();
            assert!((s.phi_t - want[0]).abs() < 1e-12);
            assert!((s.mu1 - want[1]).abs() < 1e-12);
            assert!((s.mu2 - want[2]).abs() < 1e-12);
            assert!(s.residual <= 1e-12);
            let f = cubic_from_two_quadratics(b, Some(1000)).unwrap();
            assert!(f.residual <= 1e-12 && (f.phi_t - s.phi_t).abs() < 1e-2);
        }
    }

    #[test]
    fn secondary_cubic() {
        let p = secondary_cubic_params(0.5, 1.0, 100).unwrap();
        assert!((p.nu + 0.0025).abs() < 1e-16 && (p.alpha_new + 200.0).abs() < 1e-12);
        let m = ModelSpec::canonical();
        let setup = SecondaryCubicSetup {
            b: 0.5,
            beta: m.beta,
            a12: 1.0,
            a22: 0.5,
        };
        let n = secondary_cubic_numeric(&m, &setup, 100).unwrap();
        let want = -0.25 / (100.0 + 0.5);
        assert!((n.nu - want).abs() < 1e-6 * want.abs(), "{n:?}");
        assert!(n.mu.abs() <= 1e-4, "{n:?}");
        assert!((n.alpha_new - 100.5 / 0.5).abs() < 1e-3 * 201.0, "{n:?}");
        assert!((unfold_two_tangencies_det(4.0, 1.0, 0.01).unwrap() + 5.625e-3).abs() < 1e-15);
    }
}
