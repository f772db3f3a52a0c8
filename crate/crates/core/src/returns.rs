//! Orbits of `T0`, the boundary-value problem in cross form, and the
//! first-return maps `T_k = T0^k o T1` with their rescaled versions.
//!
//! Forward iteration of a generic point multiplies the strong-unstable
//! coordinate by `lambda^-k`, so everything that needs the return map on a
//! whole box goes through the cross form instead: prescribe `(R, Phi, X)` at
//! the start and `Ybar` at the end, and solve for the rest.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diophantine::{approx_for_q, build_return_set, phase_offset, RationalApprox, ReturnSet};
use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::geometry::{from_rescaled, to_rescaled, wrap, Anchor, PhasePoint, RescaledPoint, Scales, Scheme};
use crate::model::{MapKind, ModelSpec};

pub const K_CAP: u64 = 1_000_000;

/// `lambda^k`, flushed to zero below 1e-300.
pub fn lambda_pow(lambda: f64, k: u64) -> f64 {
    let v = lambda.powi(k.min(i32::MAX as u64) as i32);
    if v < 1e-300 {
        0.0
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnFamily {
    pub model: ModelSpec,
    pub approx: RationalApprox,
    pub returns: ReturnSet,
    pub scheme: Scheme,
}

/// `d = (|alpha| - 1) / (|alpha| + 1)`.
pub fn default_d(alpha: f64) -> f64 {
    (alpha.abs() - 1.0) / (alpha.abs() + 1.0)
}

impl ReturnFamily {
    pub fn new(model: ModelSpec, approx: RationalApprox, d: f64, scheme: Scheme) -> Result<Self> {
        model.validate()?;
        if model.ell != 2 {
            return Err(Error::Precondition(format!(
                "rescaled return families are built for cubic tangencies (ell = 2), got ell = {}",
                model.ell
            )));
        }
        let returns = build_return_set(&model.rho, model.phi_plus, model.phi_minus, model.alpha, approx, d)?;
        Ok(ReturnFamily {
            model,
            approx,
            returns,
            scheme,
        })
    }

    /// Family for denominator `q` with the default `d`.
    pub fn for_q(model: ModelSpec, q: i64, scheme: Scheme) -> Result<Self> {
        let approx = approx_for_q(&model.rho, q)?;
        let d = default_d(model.alpha);
        ReturnFamily::new(model, approx, d, scheme)
    }

    pub fn delta(&self) -> f64 {
        self.returns.delta
    }

    pub fn d(&self) -> f64 {
        self.returns.d
    }

    pub fn scales(&self) -> Scales {
        self.scheme.scales(self.delta())
    }

    /// Affine shift `c(k) = delta^-1 ((phi^+ - phi^- + k rho) mod0 1)`.
    pub fn c_of_k(&self, k: i64) -> f64 {
        phase_offset(self.model.rho_value(), self.model.phi_plus, self.model.phi_minus, k) / self.delta()
    }

    pub fn require_k(&self, k: i64) -> Result<()> {
        if self.returns.contains(k) {
            Ok(())
        } else {
            Err(Error::Precondition(format!("k = {k} is not in K_q for q = {}", self.returns.q)))
        }
    }
}

/// Copy of `m` with `phi^+` moved so that `c(k) = a` exactly at this `delta`.
pub fn pin_offset(m: &ModelSpec, k: i64, delta: f64, a: f64) -> ModelSpec {
    let mut out = m.clone();
    let kr = crate::geometry::mod0_1(k as f64 * m.rho_value());
    out.phi_plus = wrap(m.phi_minus - kr + a * delta);
    out
}

/// Family for `q` with `phi^+` pinned so that the first `k` in `K_q` has
/// `c(k) = a`. Returns the family and that `k`.
pub fn pinned_family(m: &ModelSpec, q: i64, a: f64, scheme: Scheme) -> Result<(ReturnFamily, i64)> {
    let base = ReturnFamily::for_q(m.clone(), q, scheme)?;
    let k = base.returns.k[0];
    let fam = ReturnFamily::for_q(pin_offset(m, k, base.delta(), a), q, scheme)?;
    fam.require_k(k)?;
    Ok((fam, k))
}

// ---- forward orbits ---------------------------------------------------------

pub fn iterate_t0(m: &ModelSpec, p: &PhasePoint, k: usize) -> Result<Vec<PhasePoint>> {
    let mut traj = Vec::with_capacity(k + 1);
    if !m.in_v(p) {
        return Err(Error::DomainExit {
            stage: "T0 orbit".into(),
            index: 0,
            partial: traj,
        });
    }
    traj.push(p.clone());
    let mut cur = p.clone();
    for j in 0..k {
        let next = m.apply_t0(&cur)?;
        if !m.in_v(&next) {
            return Err(Error::DomainExit {
                stage: "T0 orbit".into(),
                index: j + 1,
                partial: traj,
            });
        }
        traj.push(next.clone());
        cur = next;
    }
    Ok(traj)
}

/// CSV export of a trajectory: `step, r, phi, x_1.., y_1..`.
pub fn trajectory_csv(traj: &[PhasePoint]) -> String {
    let n = traj.first().map(|p| p.x.len()).unwrap_or(0);
    let mut head = vec!["step".to_string(), "r".into(), "phi".into()];
    head.extend((1..=n).map(|i| format!("x_{i}")));
    head.extend((1..=n).map(|i| format!("y_{i}")));
    let mut out = head.join(",");
    out.push('\n');
    for (i, p) in traj.iter().enumerate() {
        let mut row = vec![i.to_string(), fmt15(p.r), fmt15(p.phi)];
        row.extend(p.x.iter().map(|v| fmt15(*v)));
        row.extend(p.y.iter().map(|v| fmt15(*v)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// 15 significant digits.
pub fn fmt15(v: f64) -> String {
    format!("{v:.14e}")
}

// ---- boundary-value problem ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvpSolution {
    pub r_k: f64,
    /// Wrapped final angle.
    pub phi_k: f64,
    pub x_k: Vec<f64>,
    pub y_0: Vec<f64>,
    /// `phi_k - phi_0 - k rho` on the covering line.
    pub drift: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Stored orbit of a solved BVP, needed for the variational equations.
struct BvpOrbit {
    r: Vec<f64>,
    phi: Vec<f64>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

enum Solved {
    Closed,
    Orbit(BvpOrbit),
}

fn bvp_checks(m: &ModelSpec, r0: f64, x0: &[f64], y_k: &[f64], k: u64) -> Result<()> {
    if k > K_CAP {
        return Err(Error::domain(format!("k = {k} exceeds the cap {K_CAP}")));
    }
    if x0.len() != m.n() || y_k.len() != m.n() {
        return Err(Error::domain("strong blocks must have length N-1"));
    }
    if r0.abs() > m.r_max || x0.iter().chain(y_k).any(|v| v.abs() > m.xy_max) {
        return Err(Error::DomainExit {
            stage: "BVP".into(),
            index: 0,
            partial: Vec::new(),
        });
    }
    Ok(())
}

fn solve_bvp_inner(
    m: &ModelSpec,
    r0: f64,
    phi0: f64,
    x0: &[f64],
    y_k: &[f64],
    k: u64,
    tol: f64,
) -> Result<(BvpSolution, Solved)> {
    bvp_checks(m, r0, x0, y_k, k)?;
    let lam = m.lambda_ss;
    let lk = lambda_pow(lam, k);
    let rho = m.rho_value();
    if m.is_decoupled() {
        let (r_k, drift) = if m.is_integrable() {
            (r0, k as f64 * m.twist * r0)
        } else {
            let (mut r, mut ph, mut drift) = (r0, phi0, 0.0);
            for j in 0..k {
                let (rn, ex) = m.inner_step(r, ph);
                r = rn;
                ph += rho + ex;
                drift += ex;
                if r.abs() > m.r_max {
                    return Err(Error::DomainExit {
                        stage: "BVP".into(),
                        index: j as usize + 1,
                        partial: Vec::new(),
                    });
                }
            }
            (r, drift)
        };
        let sol = BvpSolution {
            r_k,
            phi_k: wrap(phi0 + crate::geometry::mod0_1(k as f64 * rho) + drift),
            x_k: x0.iter().map(|v| lk * v).collect(),
            y_0: y_k.iter().map(|v| lk * v).collect(),
            drift,
            iterations: 0,
            residual: 0.0,
        };
        return Ok((sol, Solved::Closed));
    }

    let kk = k as usize;
    let n = m.n();
    let c = m.couple;
    let mut r = vec![r0; kk + 1];
    let mut phi = vec![phi0; kk + 1];
    let mut x: Vec<Vec<f64>> = (0..=kk).map(|j| x0.iter().map(|v| v * lambda_pow(lam, j as u64)).collect()).collect();
    let mut y: Vec<Vec<f64>> = (0..=kk)
        .map(|j| y_k.iter().map(|v| v * lambda_pow(lam, (kk - j) as u64)).collect())
        .collect();
    let mut drift = 0.0;
    let mut omega = 1.0;
    let mut last_change = f64::INFINITY;
    let max_iter = 200;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // forward sweep for (r, phi, x) given y
        drift = 0.0;
        for j in 0..kk {
            let (rn, ex, xn, _) = m.t0_raw(r[j], phi[j], &x[j], &y[j]);
            r[j + 1] = rn;
            phi[j + 1] = phi[j] + rho + ex;
            x[j + 1] = xn;
            drift += ex;
            if rn.abs() > m.r_max || x[j + 1].iter().any(|v| v.abs() > m.xy_max) {
                return Err(Error::DomainExit {
                    stage: "BVP".into(),
                    index: j + 1,
                    partial: Vec::new(),
                });
            }
        }
        // backward sweep for y given r
        let mut change = 0.0f64;
        for j in (0..kk).rev() {
            let f = lam * (c * r[j]).exp();
            for i in 0..n {
                let target = f * y[j + 1][i];
                let new = (1.0 - omega) * y[j][i] + omega * target;
                let scale = y_k[i].abs().max(1e-300);
                change = change.max((new - y[j][i]).abs() / scale);
                y[j][i] = new;
            }
            if y[j].iter().any(|v| v.abs() > m.xy_max) {
                return Err(Error::DomainExit {
                    stage: "BVP".into(),
                    index: j,
                    partial: Vec::new(),
                });
            }
        }
        if change <= tol.min(1e-15) || change == 0.0 {
            converged = true;
            break;
        }
        if change > last_change && omega == 1.0 {
            omega = 0.5;
        }
        last_change = change;
    }
    // one more forward sweep so that (r, phi, x) match the final y
    drift = if converged {
        let mut dsum = 0.0;
        for j in 0..kk {
            let (rn, ex, xn, _) = m.t0_raw(r[j], phi[j], &x[j], &y[j]);
            r[j + 1] = rn;
            phi[j + 1] = phi[j] + rho + ex;
            x[j + 1] = xn;
            dsum += ex;
        }
        dsum
    } else {
        drift
    };
    // shooting residual: forward iterate from the solved start
    let (mut rr, mut pp, mut xx, mut yy) = (r0, phi0, x0.to_vec(), y[0].clone());
    for _ in 0..kk {
        let (rn, ex, xn, yn) = m.t0_raw(rr, pp, &xx, &yy);
        rr = rn;
        pp += rho + ex;
        xx = xn;
        yy = yn;
    }
    let residual = yy.iter().zip(y_k).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
    if !converged || residual > tol.max(1e-15) {
        return Err(Error::solver("T0 boundary-value problem", residual));
    }
    let sol = BvpSolution {
        r_k: r[kk],
        phi_k: wrap(phi[kk]),
        x_k: x[kk].clone(),
        y_0: y[0].clone(),
        drift,
        iterations,
        residual,
    };
    Ok((sol, Solved::Orbit(BvpOrbit { r, phi, x, y })))
}

/// Given `(r0, phi0, x0)` and `y_k`, find the unique orbit segment of length
/// `k` and return `(r_k, phi_k, x_k, y_0)`.
pub fn solve_t0_bvp(m: &ModelSpec, r0: f64, phi0: f64, x0: &[f64], y_k: &[f64], k: u64, tol: f64) -> Result<BvpSolution> {
    solve_bvp_inner(m, r0, phi0, x0, y_k, k, tol).map(|(s, _)| s)
}

/// Solution plus its Jacobian: rows `(r_k, phi_k, x_k, y_0)`, columns
/// `(r0, phi0, x0, y_k)`.
pub fn solve_t0_bvp_with_jacobian(
    m: &ModelSpec,
    r0: f64,
    phi0: f64,
    x0: &[f64],
    y_k: &[f64],
    k: u64,
    tol: f64,
) -> Result<(BvpSolution, DMatrix<f64>)> {
    let (sol, solved) = solve_bvp_inner(m, r0, phi0, x0, y_k, k, tol)?;
    let n = m.n();
    let dim = 2 + 2 * n;
    let lk = lambda_pow(m.lambda_ss, k);
    let jac = match solved {
        Solved::Closed => {
            let mut j = DMatrix::<f64>::zeros(dim, dim);
            if m.is_integrable() {
                j[(0, 0)] = 1.0;
                j[(1, 0)] = k as f64 * m.twist;
                j[(1, 1)] = 1.0;
            } else {
                let mut cj = nalgebra::Matrix2::<f64>::identity();
                let (mut r, mut ph) = (r0, phi0);
                let rho = m.rho_value();
                for _ in 0..k {
                    let ji = m.inner_jacobian(r, ph);
                    cj = nalgebra::Matrix2::new(ji[0][0], ji[0][1], ji[1][0], ji[1][1]) * cj;
                    let (rn, ex) = m.inner_step(r, ph);
                    r = rn;
                    ph += rho + ex;
                }
                j[(0, 0)] = cj[(0, 0)];
                j[(0, 1)] = cj[(0, 1)];
                j[(1, 0)] = cj[(1, 0)];
                j[(1, 1)] = cj[(1, 1)];
            }
            for i in 0..n {
                j[(2 + i, 2 + i)] = lk;
                j[(2 + n + i, 2 + n + i)] = lk;
            }
            j
        }
        Solved::Orbit(orbit) => variational_bvp(m, &orbit, k as usize)?,
    };
    Ok((sol, jac))
}

/// Linearized BVP solved by the same forward/backward sweeps, one input
/// direction at a time.
fn variational_bvp(m: &ModelSpec, orbit: &BvpOrbit, k: usize) -> Result<DMatrix<f64>> {
    let n = m.n();
    let nu = 2 + n;
    let dim = nu + n;
    let steps: Vec<DMatrix<f64>> = (0..k)
        .map(|j| {
            let p = PhasePoint {
                r: orbit.r[j],
                phi: orbit.phi[j],
                x: orbit.x[j].clone(),
                y: orbit.y[j].clone(),
            };
            m.jacobian(&MapKind::T0, &p)
        })
        .collect::<Result<_>>()?;
    let dinv: Vec<DMatrix<f64>> = steps
        .iter()
        .map(|jm| {
            jm.view((nu, nu), (n, n))
                .into_owned()
                .try_inverse()
                .ok_or_else(|| Error::solver("singular strong block in variational BVP", f64::NAN))
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::<f64>::zeros(dim, dim);
    for col in 0..dim {
        let mut du: Vec<nalgebra::DVector<f64>> = vec![nalgebra::DVector::zeros(nu); k + 1];
        let mut dy: Vec<nalgebra::DVector<f64>> = vec![nalgebra::DVector::zeros(n); k + 1];
        if col < nu {
            du[0][col] = 1.0;
        } else {
            dy[k][col - nu] = 1.0;
        }
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..200 {
            for j in 0..k {
                let jm = &steps[j];
                let a = jm.view((0, 0), (nu, nu));
                let b = jm.view((0, nu), (nu, n));
                du[j + 1] = a * &du[j] + b * &dy[j];
            }
            change = 0.0;
            for j in (0..k).rev() {
                let jm = &steps[j];
                let cb = jm.view((nu, 0), (n, nu));
                let new = &dinv[j] * (&dy[j + 1] - cb * &du[j]);
                change = change.max((&new - &dy[j]).amax());
                dy[j] = new;
            }
            if change <= 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::solver("variational BVP", change));
        }
        for j in 0..k {
            let jm = &steps[j];
            du[j + 1] = jm.view((0, 0), (nu, nu)) * &du[j] + jm.view((0, nu), (nu, n)) * &dy[j];
        }
        for i in 0..nu {
            out[(i, col)] = du[k][i];
        }
        for i in 0..n {
            out[(nu + i, col)] = dy[0][i];
        }
    }
    Ok(out)
}

// ---- return maps ----------------------------------------------------------------

pub fn return_map(fam: &ReturnFamily, k: i64, p: &PhasePoint) -> Result<PhasePoint> {
    fam.require_k(k)?;
    let m = &fam.model;
    let p1 = m.apply_t1(p)?;
    if !m.in_v(&p1) {
        return Err(Error::DomainExit {
            stage: "T1".into(),
            index: 0,
            partial: vec![p1],
        });
    }
    if m.is_decoupled() && m.is_integrable() {
        let lk = lambda_pow(m.lambda_ss, k as u64);
        let kf = k as f64;
        let ly = m.lambda_ss.powf(-kf);
        let y: Vec<f64> = p1.y.iter().map(|v| v * ly).collect();
        if y.iter().any(|v| !(v.abs() <= m.xy_max)) {
            let first = (0..=k as usize)
                .find(|&j| p1.y.iter().any(|v| (v * m.lambda_ss.powi(-(j as i32))).abs() > m.xy_max))
                .unwrap_or(k as usize);
            return Err(Error::DomainExit {
                stage: "T0 iteration".into(),
                index: first,
                partial: vec![p1],
            });
        }
        let phi = p1.phi + crate::geometry::mod0_1(kf * m.rho_value()) + kf * m.twist * p1.r;
        return Ok(PhasePoint::new(p1.r, phi, p1.x.iter().map(|v| v * lk).collect(), y));
    }
    let traj = iterate_t0(m, &p1, k as usize).map_err(|e| match e {
        Error::DomainExit { index, partial, .. } => Error::DomainExit {
            stage: "T0 iteration".into(),
            index,
            partial,
        },
        other => other,
    })?;
    Ok(traj.last().cloned().unwrap())
}

/// Exact conjugate of `return_map` in the chart at M^-.
pub fn rescaled_return(fam: &ReturnFamily, k: i64, rp: &RescaledPoint) -> Result<RescaledPoint> {
    let frame = fam.model.frame(Anchor::Minus);
    let p = from_rescaled(rp, &frame)?;
    let q = return_map(fam, k, &p)?;
    to_rescaled(&q, &frame, rp.delta, rp.scheme)
}

/// Cross-form input: `(R, Phi, X)` at the start and `Ybar` at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossIn {
    pub r: f64,
    pub phi: f64,
    pub x: Vec<f64>,
    pub y_out: Vec<f64>,
}

/// Cross-form output: `(Rbar, Phibar, Xbar)` at the end and `Y` at the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossOut {
    pub r: f64,
    pub phi: f64,
    pub x: Vec<f64>,
    pub y_in: Vec<f64>,
}

impl CrossOut {
    pub fn central(&self) -> (f64, f64) {
        (self.r, self.phi)
    }
}

const BVP_TOL: f64 = 1e-14;

/// Rescaled `T_k` in cross form. The Jacobian (if requested) has rows
/// `(Rbar, Phibar, Xbar.., Y..)` and columns `(R, Phi, X.., Ybar..)`.
pub fn cross_return(fam: &ReturnFamily, k: i64, inp: &CrossIn, want_jac: bool) -> Result<(CrossOut, Option<DMatrix<f64>>)> {
    fam.require_k(k)?;
    cross_return_unchecked(fam, k, inp, want_jac)
}

pub(crate) fn cross_return_unchecked(
    fam: &ReturnFamily,
    k: i64,
    inp: &CrossIn,
    want_jac: bool,
) -> Result<(CrossOut, Option<DMatrix<f64>>)> {
    let m = &fam.model;
    let n = m.n();
    let sc = fam.scales();
    let (sr, delta, ss) = (sc.central_r, sc.delta, sc.strong);
    let (_, b, _, d) = m.abcd();
    let alpha = m.alpha;
    let r = sr * inp.r;
    let t = delta * inp.phi;
    if r.abs() > m.t1_radius || t.abs() > m.t1_radius {
        return Err(Error::DomainExit {
            stage: "T1".into(),
            index: 0,
            partial: Vec::new(),
        });
    }
    let s = alpha * t;
    let r_t = r / alpha + m.g(s);
    let phi_t = m.phi_plus + s;
    let x: Vec<f64> = inp.x.iter().map(|v| ss * v).collect();
    let a43 = m.a43();

    // Picard on the two weak feedbacks: x~ depends on y~ through b/d, and
    // ybar depends on xbar through the chart shear.
    let mut y_t = vec![0.0; n];
    let mut x_bar = vec![0.0; n];
    let mut sol = None;
    for _ in 0..20 {
        let x_t: Vec<f64> = (0..n).map(|i| m.x_plus[i] + x[i] / d + b / d * y_t[i]).collect();
        let y_bar: Vec<f64> = (0..n).map(|i| m.y_minus[i] + ss * inp.y_out[i] + a43 * x_bar[i]).collect();
        let out = if want_jac {
            let (s, j) = solve_t0_bvp_with_jacobian(m, r_t, phi_t, &x_t, &y_bar, k as u64, BVP_TOL)?;
            (s, Some(j))
        } else {
            (solve_t0_bvp(m, r_t, phi_t, &x_t, &y_bar, k as u64, BVP_TOL)?, None)
        };
        let change = out
            .0
            .y_0
            .iter()
            .zip(&y_t)
            .chain(out.0.x_k.iter().zip(&x_bar))
            .fold(0.0f64, |a, (u, v)| a.max((u - v).abs() / u.abs().max(1e-300)));
        y_t = out.0.y_0.clone();
        x_bar = out.0.x_k.clone();
        let done = change <= 1e-15;
        sol = Some(out);
        if done {
            break;
        }
    }
    let (bvp, jb) = sol.unwrap();
    let c0 = fam.c_of_k(k);
    let out = CrossOut {
        r: bvp.r_k / sr,
        phi: c0 + (s + bvp.drift) / delta,
        x: bvp.x_k.iter().map(|v| v / ss).collect(),
        y_in: bvp.y_0.iter().map(|v| v / (d * ss)).collect(),
    };
    let jac = jb.map(|jb| {
        let dim = 2 + 2 * n;
        // v = (dr~, dphi~, dx~, dybar) = P dz + Q w, w = JB v
        let mut p = DMatrix::<f64>::zeros(dim, dim);
        p[(0, 0)] = sr / alpha;
        p[(0, 1)] = m.dg(s) * alpha * delta;
        p[(1, 1)] = alpha * delta;
        for i in 0..n {
            p[(2 + i, 2 + i)] = ss / d;
            p[(2 + n + i, 2 + n + i)] = ss;
        }
        let mut q = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            q[(2 + i, 2 + n + i)] = b / d;
            q[(2 + n + i, 2 + i)] = a43;
        }
        let lhs = DMatrix::<f64>::identity(dim, dim) - &q * &jb;
        let v = lhs.lu().solve(&p).expect("feedback system is a small perturbation of the identity");
        let mut w = &jb * v;
        w.row_mut(0).scale_mut(1.0 / sr);
        w.row_mut(1).scale_mut(1.0 / delta);
        for i in 0..n {
            w.row_mut(2 + i).scale_mut(1.0 / ss);
            w.row_mut(2 + n + i).scale_mut(1.0 / (d * ss));
        }
        w
    });
    Ok((out, jac))
}

/// The limit map the rescaled return converges to: affine for IFS, affine
/// plus the cubic term for CUBIC. Same layout as `CrossOut`.
pub fn limit_target(fam: &ReturnFamily, k: i64, inp: &CrossIn) -> CrossOut {
    let m = &fam.model;
    let a = m.alpha;
    let mut r = inp.r / a;
    if fam.scheme == Scheme::Cubic {
        r += m.beta * (a * inp.phi).powi(3);
    }
    CrossOut {
        r,
        phi: fam.c_of_k(k) + a * inp.phi,
        x: vec![0.0; m.n()],
        y_in: vec![0.0; m.n()],
    }
}

fn limit_jacobian(fam: &ReturnFamily, inp: &CrossIn) -> DMatrix<f64> {
    let m = &fam.model;
    let dim = 2 * m.N;
    let mut j = DMatrix::<f64>::zeros(dim, dim);
    j[(0, 0)] = 1.0 / m.alpha;
    if fam.scheme == Scheme::Cubic {
        j[(0, 1)] = 3.0 * m.beta * m.alpha.powi(3) * inp.phi * inp.phi;
    }
    j[(1, 1)] = m.alpha;
    j
}

/// Regular grid over the cross-form domain: `grid_n` points per central
/// axis and `strong_n` per strong axis, all on `[-1, 1]`.
pub fn cross_grid(n: usize, grid_n: usize, strong_n: usize) -> Vec<CrossIn> {
    let axis = |cnt: usize| -> Vec<f64> {
        if cnt == 1 {
            vec![0.0]
        } else {
            (0..cnt).map(|i| -1.0 + 2.0 * i as f64 / (cnt - 1) as f64).collect()
        }
    };
    let ca = axis(grid_n);
    let sa = axis(strong_n);
    let strong_pts: Vec<Vec<f64>> = {
        let mut pts = vec![Vec::new()];
        for _ in 0..2 * n {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    sa.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        pts
    };
    let mut out = Vec::with_capacity(ca.len() * ca.len() * strong_pts.len());
    for &r in &ca {
        for &phi in &ca {
            for sp in &strong_pts {
                out.push(CrossIn {
                    r,
                    phi,
                    x: sp[..n].to_vec(),
                    y_out: sp[n..].to_vec(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub dev_c0: f64,
    pub dev_c1: f64,
    /// Largest deviation in the strong components alone.
    pub dev_strong: f64,
}

/// Sup distance between the rescaled return (cross form) and its limit map
/// over the grid, for values and Jacobians.
pub fn deviation_from_affine(fam: &ReturnFamily, k: i64, grid_n: usize) -> Result<Deviation> {
    if grid_n < 8 {
        return Err(Error::domain("grid_n must be at least 8"));
    }
    fam.require_k(k)?;
    let grid = cross_grid(fam.model.n(), grid_n, 4);
    let parts: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .map(|inp| -> Result<(f64, f64, f64)> {
            let (out, jac) = cross_return_unchecked(fam, k, inp, true)?;
            let tgt = limit_target(fam, k, inp);
            let strong = out
                .x
                .iter()
                .zip(&tgt.x)
                .chain(out.y_in.iter().zip(&tgt.y_in))
                .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
            let c0 = (out.r - tgt.r).abs().max((out.phi - tgt.phi).abs()).max(strong);
            let c1 = (jac.unwrap() - limit_jacobian(fam, inp)).amax();
            Ok((c0, c1, strong))
        })
        .collect::<Result<_>>()?;
    let mut dev = Deviation {
        dev_c0: 0.0,
        dev_c1: 0.0,
        dev_strong: 0.0,
    };
    for (a, b, c) in parts {
        dev.dev_c0 = dev.dev_c0.max(a);
        dev.dev_c1 = dev.dev_c1.max(b);
        dev.dev_strong = dev.dev_strong.max(c);
    }
    Ok(dev)
}

/// Largest deviation over every `k` in `K_q`.
pub fn family_deviation(fam: &ReturnFamily, grid_n: usize) -> Result<Deviation> {
    let mut acc = Deviation {
        dev_c0: 0.0,
        dev_c1: 0.0,
        dev_strong: 0.0,
    };
    for &k in &fam.returns.k {
        let d = deviation_from_affine(fam, k, grid_n)?;
        acc.dev_c0 = acc.dev_c0.max(d.dev_c0);
        acc.dev_c1 = acc.dev_c1.max(d.dev_c1);
        acc.dev_strong = acc.dev_strong.max(d.dev_strong);
    }
    Ok(acc)
}

// ---- inner-map growth ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerGrowthSample {
    pub r0: f64,
    pub k: u64,
    /// `max_j |r_j - r0|` over the orbit and the sampled start angles.
    pub r_dev: f64,
    /// `max |phi_k - phi0 - k rho - k twist r0|` on the covering line.
    pub phi_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerGrowthReport {
    pub samples: Vec<InnerGrowthSample>,
    /// Fitted slope of `log r_dev` against `log(k r0^m)`.
    pub r_slope: f64,
    /// Fitted slope of `log phi_dev` against `log(k^2 r0^m)`.
    pub phi_slope: f64,
}

/// Inner-orbit deviations for each `r0`, with `k = floor(r0^(1-m)/10)`.
pub fn inner_growth_samples(m: &ModelSpec, r0_list: &[f64]) -> Result<Vec<InnerGrowthSample>> {
    let mexp = m.inner_exp as i32;
    let rho = m.rho_value();
    let mut out = Vec::new();
    for &r0 in r0_list {
        let k = (r0.powi(1 - mexp) / 10.0).floor() as u64;
        let (mut r_dev, mut phi_dev) = (0.0f64, 0.0f64);
        if m.is_integrable() {
            // exact rigid twist: no deviation, only summation roundoff
            out.push(InnerGrowthSample { r0, k, r_dev, phi_dev });
            continue;
        }
        for a in 0..8 {
            let phi0 = a as f64 / 8.0 + 0.03;
            let (mut r, mut ph) = (r0, phi0);
            let mut drift = 0.0;
            for j in 0..k {
                let (rn, ex) = m.inner_step(r, ph);
                r = rn;
                ph += rho + ex;
                drift += ex;
                r_dev = r_dev.max((r - r0).abs());
                if r.abs() > m.r_max {
                    return Err(Error::DomainExit {
                        stage: "inner map".into(),
                        index: j as usize + 1,
                        partial: Vec::new(),
                    });
                }
            }
            phi_dev = phi_dev.max((drift - k as f64 * m.twist * r0).abs());
        }
        out.push(InnerGrowthSample { r0, k, r_dev, phi_dev });
    }
    Ok(out)
}

pub fn verify_inner_growth(m: &ModelSpec, r0_list: &[f64]) -> Result<InnerGrowthReport> {
    let samples = inner_growth_samples(m, r0_list)?;
    let mexp = m.inner_exp as i32;
    let valid: Vec<&InnerGrowthSample> = samples.iter().filter(|s| s.r_dev > 0.0 && s.phi_dev > 0.0 && s.k > 0).collect();
    if valid.len() < 3 {
        return Err(Error::Data(format!("only {} usable r0 values (need 3)", valid.len())));
    }
    let xs: Vec<f64> = valid.iter().map(|s| s.k as f64 * s.r0.powi(mexp)).collect();
    let ys: Vec<f64> = valid.iter().map(|s| s.r_dev).collect();
    let r_slope = loglog_slope(&xs, &ys)?;
    let xs2: Vec<f64> = valid.iter().map(|s| (s.k as f64).powi(2) * s.r0.powi(mexp)).collect();
    let ys2: Vec<f64> = valid.iter().map(|s| s.phi_dev).collect();
    let phi_slope = loglog_slope(&xs2, &ys2)?;
    Ok(InnerGrowthReport {
        samples,
        r_slope,
        phi_slope,
    })
}
