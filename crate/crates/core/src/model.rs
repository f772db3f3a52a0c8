//! The local map `T0`, the transition map `T1` and the perturbation
//! generators, all exactly symplectic for `dr^dphi + sum dx_i^dy_i`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diophantine::Rotation;
use crate::error::{Error, Result};
use crate::geometry::{mod0_1, wrap, Anchor, Frame, PhasePoint};

fn default_twist() -> f64 {
    1.0
}
fn default_t1_radius() -> f64 {
    0.2
}
fn default_inner_exp() -> u32 {
    3
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub N: usize,
    pub rho: Rotation,
    pub alpha: f64,
    pub beta: f64,
    pub ell: u32,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub nu: f64,
    pub lambda_ss: f64,
    pub hyp_block: [[f64; 2]; 2],
    pub phi_minus: f64,
    pub phi_plus: f64,
    pub x_plus: Vec<f64>,
    pub y_minus: Vec<f64>,
    #[serde(default)]
    pub couple: f64,
    #[serde(default)]
    pub inner_pert: f64,
    /// Exponent `m` of the inner perturbation.
    #[serde(default = "default_inner_exp")]
    pub inner_exp: u32,
    pub r_max: f64,
    pub xy_max: f64,
    /// Twist coefficient of the inner map (`phi' = phi + rho + twist r'`).
    #[serde(default = "default_twist")]
    pub twist: f64,
    /// Max-norm radius of the T1 domain around M^- (and of T1^-1 around M^+).
    #[serde(default = "default_t1_radius")]
    pub t1_radius: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::canonical()
    }
}

impl ModelSpec {
    /// alpha = 3, beta = 1, cubic tangency, golden rotation, lambda_ss = 0.4,
    /// hyp_block (1,1;1,2), mu = nu = 0, decoupled and integrable.
    pub fn canonical() -> Self {
        ModelSpec {
            N: 2,
            rho: Rotation::Golden,
            alpha: 3.0,
            beta: 1.0,
            ell: 2,
            mu: 0.0,
            nu: 0.0,
            lambda_ss: 0.4,
            hyp_block: [[1.0, 1.0], [1.0, 2.0]],
            phi_minus: 0.2,
            phi_plus: 0.2,
            x_plus: vec![0.3],
            y_minus: vec![0.3],
            couple: 0.0,
            inner_pert: 0.0,
            inner_exp: 3,
            r_max: 0.5,
            xy_max: 1.0,
            twist: 1.0,
            t1_radius: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Domain(format!("{field}: {why}")));
        if self.N < 2 {
            return bad("N", format!("must be >= 2, got {}", self.N));
        }
        let n = self.N - 1;
        if self.x_plus.len() != n {
            return bad("x_plus", format!("length {} != N-1 = {n}", self.x_plus.len()));
        }
        if self.y_minus.len() != n {
            return bad("y_minus", format!("length {} != N-1 = {n}", self.y_minus.len()));
        }
        let rv = self.rho.value();
        if !rv.is_finite() {
            return bad("rho", "not a finite number".into());
        }
        if !self.alpha.is_finite() || (self.alpha.abs() - 1.0).abs() < 1e-12 {
            return bad("alpha", format!("|alpha| must differ from 1, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta != 0.0) {
            return bad("beta", "must be nonzero".into());
        }
        if !(self.ell == 1 || self.ell == 2) {
            return bad("ell", format!("must be 1 or 2, got {}", self.ell));
        }
        if !(self.lambda_ss > 0.0 && self.lambda_ss < 1.0) {
            return bad("lambda_ss", format!("must lie in (0,1), got {}", self.lambda_ss));
        }
        let [[a, b], [c, d]] = self.hyp_block;
        if ((a * d - b * c) - 1.0).abs() > 1e-12 {
            return bad("hyp_block", format!("determinant {} != 1", a * d - b * c));
        }
        if d == 0.0 {
            return bad("hyp_block", "entry d must be nonzero".into());
        }
        if !(self.couple >= 0.0) {
            return bad("couple", "must be >= 0".into());
        }
        if !(self.inner_pert >= 0.0) {
            return bad("inner_pert", "must be >= 0".into());
        }
        if self.inner_exp < 2 {
            return bad("inner_exp", "must be >= 2".into());
        }
        if !(self.r_max > 0.0) {
            return bad("r_max", "must be positive".into());
        }
        if !(self.xy_max > 0.0) {
            return bad("xy_max", "must be positive".into());
        }
        if !(self.t1_radius > 0.0) {
            return bad("t1_radius", "must be positive".into());
        }
        if !(self.twist.is_finite() && self.twist != 0.0) {
            return bad("twist", "must be nonzero".into());
        }
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm(&self.x_plus) > self.xy_max || norm(&self.y_minus) > self.xy_max {
            return bad("x_plus", "anchors must lie inside xy_max".into());
        }
        Ok(())
    }

    /// Number of strong coordinates, N - 1.
    pub fn n(&self) -> usize {
        self.N - 1
    }

    pub fn rho_value(&self) -> f64 {
        self.rho.value()
    }

    pub fn is_decoupled(&self) -> bool {
        self.couple == 0.0
    }

    pub fn is_integrable(&self) -> bool {
        self.inner_pert == 0.0
    }

    /// `g(s) = mu + nu s + beta s^(ell+1)`.
    pub fn g(&self, s: f64) -> f64 {
        self.mu + self.nu * s + self.beta * s.powi(self.ell as i32 + 1)
    }

    pub fn dg(&self, s: f64) -> f64 {
        let e = self.ell as i32;
        self.nu + (e + 1) as f64 * self.beta * s.powi(e)
    }

    pub fn d2g(&self, s: f64) -> f64 {
        let e = self.ell as i32;
        ((e + 1) * e) as f64 * self.beta * s.powi(e - 1)
    }

    /// Entries `(a, b, c, d)` of the hyperbolic block.
    pub fn abcd(&self) -> (f64, f64, f64, f64) {
        let [[a, b], [c, d]] = self.hyp_block;
        (a, b, c, d)
    }

    /// Shear of the strong chart at M^-: `y - y^- = s Y + a43 x`.
    pub fn a43(&self) -> f64 {
        let (_, _, c, d) = self.abcd();
        -c / d
    }

    /// Shear of the strong chart at M^+: `x - x^+ = s X + a34 y`.
    pub fn a34(&self) -> f64 {
        let (_, b, _, d) = self.abcd();
        b / d
    }

    pub fn frame(&self, anchor: Anchor) -> Frame {
        let n = self.n();
        match anchor {
            Anchor::Minus => Frame {
                anchor,
                phi0: self.phi_minus,
                x0: vec![0.0; n],
                y0: self.y_minus.clone(),
                shear: self.a43(),
            },
            Anchor::Plus => Frame {
                anchor,
                phi0: self.phi_plus,
                x0: self.x_plus.clone(),
                y0: vec![0.0; n],
                shear: self.a34(),
            },
        }
    }

    pub fn anchor_point(&self, anchor: Anchor) -> PhasePoint {
        let n = self.n();
        match anchor {
            Anchor::Minus => PhasePoint::new(0.0, self.phi_minus, vec![0.0; n], self.y_minus.clone()),
            Anchor::Plus => PhasePoint::new(0.0, self.phi_plus, self.x_plus.clone(), vec![0.0; n]),
        }
    }

    // ---- inner map ------------------------------------------------------

    /// One inner step. Returns `r'` and the unwrapped phase excess
    /// `phi' - phi - rho`.
    ///
    /// The perturbed map comes from the generating function
    /// `S(r', phi) = r' phi + rho r' + twist r'^2/2 + eps r'^m cos(2 pi phi)/(2 pi)`,
    /// so `r' = r + eps r'^m sin(2 pi phi)` and the phase picks up the
    /// matching `eta = eps m r'^(m-1) cos(2 pi phi)/(2 pi)`.
    pub fn inner_step(&self, r: f64, phi: f64) -> (f64, f64) {
        if self.inner_pert == 0.0 {
            return (r, self.twist * r);
        }
        let eps = self.inner_pert;
        let m = self.inner_exp as i32;
        let (sn, cs) = (2.0 * PI * phi).sin_cos();
        let mut rp = r;
        for _ in 0..60 {
            let f = rp - eps * rp.powi(m) * sn - r;
            let df = 1.0 - eps * m as f64 * rp.powi(m - 1) * sn;
            let step = f / df;
            rp -= step;
            if step.abs() <= 1e-17 * (1.0 + rp.abs()) {
                break;
            }
        }
        let eta = eps * m as f64 * rp.powi(m - 1) * cs / (2.0 * PI);
        (rp, self.twist * rp + eta)
    }

    /// Jacobian `[[dr'/dr, dr'/dphi], [dphi'/dr, dphi'/dphi]]` of the inner step.
    pub fn inner_jacobian(&self, r: f64, phi: f64) -> [[f64; 2]; 2] {
        if self.inner_pert == 0.0 {
            return [[1.0, 0.0], [self.twist, 1.0]];
        }
        let eps = self.inner_pert;
        let m = self.inner_exp as i32;
        let mf = m as f64;
        let (rp, _) = self.inner_step(r, phi);
        let (sn, cs) = (2.0 * PI * phi).sin_cos();
        let den = 1.0 - eps * mf * rp.powi(m - 1) * sn;
        let drr = 1.0 / den;
        let drp = eps * rp.powi(m) * 2.0 * PI * cs / den;
        let w = self.twist + eps * mf * (mf - 1.0) * rp.powi(m - 2) * cs / (2.0 * PI);
        let dpr = w * drr;
        let dpp = 1.0 + w * drp - eps * mf * rp.powi(m - 1) * sn;
        [[drr, drp], [dpr, dpp]]
    }

    pub fn apply_inner(&self, r: f64, phi: f64, k: u64) -> Result<(f64, f64)> {
        if r.abs() > self.r_max {
            return Err(Error::DomainExit {
                stage: "inner map".into(),
                index: 0,
                partial: Vec::new(),
            });
        }
        let rho = self.rho_value();
        if self.inner_pert == 0.0 {
            let kf = k as f64;
            return Ok((r, wrap(phi + mod0_1(kf * rho) + kf * self.twist * r)));
        }
        let (mut rr, mut ph) = (r, phi);
        for j in 0..k {
            let (rn, ex) = self.inner_step(rr, ph);
            rr = rn;
            ph = wrap(ph + rho + ex);
            if rr.abs() > self.r_max {
                return Err(Error::DomainExit {
                    stage: "inner map".into(),
                    index: j as usize + 1,
                    partial: Vec::new(),
                });
            }
        }
        Ok((rr, ph))
    }

    // ---- T0 -------------------------------------------------------------

    pub fn in_v(&self, p: &PhasePoint) -> bool {
        p.r.abs() <= self.r_max
            && p.x.iter().all(|v| v.abs() <= self.xy_max)
            && p.y.iter().all(|v| v.abs() <= self.xy_max)
    }

    /// One T0 step on raw coordinates; returns `(r', phase excess, x', y')`
    /// where the new angle is `phi + rho + excess`.
    pub(crate) fn t0_raw(&self, r: f64, phi: f64, x: &[f64], y: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let c = self.couple;
        let lam = self.lambda_ss;
        let (shift, ex, ey) = if c == 0.0 {
            (0.0, 1.0, 1.0)
        } else {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            (-c * dot, (c * r).exp(), (-c * r).exp())
        };
        let (rp, ex_inner) = self.inner_step(r, phi + shift);
        let xn = x.iter().map(|v| lam * ex * v).collect();
        let yn = y.iter().map(|v| ey * v / lam).collect();
        (rp, shift + ex_inner, xn, yn)
    }

    pub fn apply_t0(&self, p: &PhasePoint) -> Result<PhasePoint> {
        if !self.in_v(p) {
            return Err(Error::DomainExit {
                stage: "T0".into(),
                index: 0,
                partial: Vec::new(),
            });
        }
        let (r, ex, x, y) = self.t0_raw(p.r, p.phi, &p.x, &p.y);
        Ok(PhasePoint::new(r, p.phi + self.rho_value() + ex, x, y))
    }

    // ---- T1 -------------------------------------------------------------

    fn t1_distance(&self, p: &PhasePoint, anchor: Anchor) -> f64 {
        let f = self.frame(anchor);
        let mut m = p.r.abs().max(mod0_1(p.phi - f.phi0).abs());
        for (v, v0) in p.x.iter().zip(&f.x0) {
            m = m.max((v - v0).abs());
        }
        for (v, v0) in p.y.iter().zip(&f.y0) {
            m = m.max((v - v0).abs());
        }
        m
    }

    pub fn apply_t1(&self, p: &PhasePoint) -> Result<PhasePoint> {
        if self.t1_distance(p, Anchor::Minus) > self.t1_radius {
            return Err(Error::DomainExit {
                stage: "T1".into(),
                index: 0,
                partial: Vec::new(),
            });
        }
        let (a, b, c, d) = self.abcd();
        let s = self.alpha * mod0_1(p.phi - self.phi_minus);
        let r = p.r / self.alpha + self.g(s);
        let mut x = Vec::with_capacity(p.x.len());
        let mut y = Vec::with_capacity(p.x.len());
        for i in 0..p.x.len() {
            let dy = p.y[i] - self.y_minus[i];
            x.push(self.x_plus[i] + a * p.x[i] + b * dy);
            y.push(c * p.x[i] + d * dy);
        }
        Ok(PhasePoint::new(r, self.phi_plus + s, x, y))
    }

    pub fn apply_t1_inverse(&self, p: &PhasePoint) -> Result<PhasePoint> {
        if self.t1_distance(p, Anchor::Plus) > self.t1_radius {
            return Err(Error::DomainExit {
                stage: "T1 inverse".into(),
                index: 0,
                partial: Vec::new(),
            });
        }
        let (a, b, c, d) = self.abcd();
        let s = mod0_1(p.phi - self.phi_plus);
        let r = self.alpha * (p.r - self.g(s));
        let mut x = Vec::with_capacity(p.x.len());
        let mut y = Vec::with_capacity(p.x.len());
        for i in 0..p.x.len() {
            let dx = p.x[i] - self.x_plus[i];
            x.push(d * dx - b * p.y[i]);
            y.push(self.y_minus[i] - c * dx + a * p.y[i]);
        }
        Ok(PhasePoint::new(r, self.phi_minus + s / self.alpha, x, y))
    }

    // ---- generic dispatch --------------------------------------------------

    pub fn apply(&self, kind: &MapKind, p: &PhasePoint) -> Result<PhasePoint> {
        match kind {
            MapKind::T0 => self.apply_t0(p),
            MapKind::T1 => self.apply_t1(p),
            MapKind::T1Inverse => self.apply_t1_inverse(p),
            MapKind::Generator(g) => g.apply(self, p),
        }
    }

    pub fn jacobian(&self, kind: &MapKind, p: &PhasePoint) -> Result<DMatrix<f64>> {
        let n = self.n();
        let dim = 2 * self.N;
        let mut j = DMatrix::<f64>::zeros(dim, dim);
        match kind {
            MapKind::T0 => {
                if !self.in_v(p) {
                    return Err(Error::DomainExit {
                        stage: "T0".into(),
                        index: 0,
                        partial: Vec::new(),
                    });
                }
                let c = self.couple;
                let lam = self.lambda_ss;
                // coupling flow C
                let mut jc = DMatrix::<f64>::identity(dim, dim);
                let dot: f64 = p.x.iter().zip(&p.y).map(|(a, b)| a * b).sum();
                let (ex, ey) = ((c * p.r).exp(), (-c * p.r).exp());
                for i in 0..n {
                    jc[(1, 2 + i)] = -c * p.y[i];
                    jc[(1, 2 + n + i)] = -c * p.x[i];
                    jc[(2 + i, 0)] = c * p.x[i] * ex;
                    jc[(2 + i, 2 + i)] = ex;
                    jc[(2 + n + i, 0)] = -c * p.y[i] * ey;
                    jc[(2 + n + i, 2 + n + i)] = ey;
                }
                let ji = self.inner_jacobian(p.r, p.phi - c * dot);
                let mut jd = DMatrix::<f64>::zeros(dim, dim);
                jd[(0, 0)] = ji[0][0];
                jd[(0, 1)] = ji[0][1];
                jd[(1, 0)] = ji[1][0];
                jd[(1, 1)] = ji[1][1];
                for i in 0..n {
                    jd[(2 + i, 2 + i)] = lam;
                    jd[(2 + n + i, 2 + n + i)] = 1.0 / lam;
                }
                j = jd * jc;
            }
            MapKind::T1 => {
                if self.t1_distance(p, Anchor::Minus) > self.t1_radius {
                    return Err(Error::DomainExit {
                        stage: "T1".into(),
                        index: 0,
                        partial: Vec::new(),
                    });
                }
                let (a, b, c, d) = self.abcd();
                let s = self.alpha * mod0_1(p.phi - self.phi_minus);
                j[(0, 0)] = 1.0 / self.alpha;
                j[(0, 1)] = self.dg(s) * self.alpha;
                j[(1, 1)] = self.alpha;
                for i in 0..n {
                    j[(2 + i, 2 + i)] = a;
                    j[(2 + i, 2 + n + i)] = b;
                    j[(2 + n + i, 2 + i)] = c;
                    j[(2 + n + i, 2 + n + i)] = d;
                }
            }
            MapKind::T1Inverse => {
                if self.t1_distance(p, Anchor::Plus) > self.t1_radius {
                    return Err(Error::DomainExit {
                        stage: "T1 inverse".into(),
                        index: 0,
                        partial: Vec::new(),
                    });
                }
                let (a, b, c, d) = self.abcd();
                let s = mod0_1(p.phi - self.phi_plus);
                j[(0, 0)] = self.alpha;
                j[(0, 1)] = -self.alpha * self.dg(s);
                j[(1, 1)] = 1.0 / self.alpha;
                for i in 0..n {
                    j[(2 + i, 2 + i)] = d;
                    j[(2 + i, 2 + n + i)] = -b;
                    j[(2 + n + i, 2 + i)] = -c;
                    j[(2 + n + i, 2 + n + i)] = a;
                }
            }
            MapKind::Generator(g) => {
                let c = g.central_jacobian(self, p)?;
                j = DMatrix::identity(dim, dim);
                j[(0, 0)] = c[0][0];
                j[(0, 1)] = c[0][1];
                j[(1, 0)] = c[1][0];
                j[(1, 1)] = c[1][1];
            }
        }
        Ok(j)
    }

    pub fn symplectic_defect(&self, kind: &MapKind, p: &PhasePoint) -> Result<f64> {
        let j = self.jacobian(kind, p)?;
        let omega = symplectic_form(self.N);
        let d = j.transpose() * &omega * &j - omega;
        Ok(d.amax())
    }

    /// Model obtained by composing a generator with the appropriate map:
    /// after `T1` for `near_M_plus`, before `T1` for `near_M_minus`, after
    /// the inner step of `T0` for `inner`.
    pub fn compose_perturbation(&self, pert: &PerturbationSpec) -> Result<ModelSpec> {
        let mut m = self.clone();
        let e = |i: usize| pert.coefficients.get(i).copied().unwrap_or(0.0);
        if pert.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("perturbation coefficients must be finite"));
        }
        let a = self.alpha;
        let l2 = self.ell as i32 + 2;
        let unsupported = || {
            Err(Error::Domain(format!(
                "{:?} is not available with support {:?}",
                pert.kind, pert.support
            )))
        };
        match (pert.kind, pert.support) {
            (PertKind::Shear, Support::NearMPlus) => {
                m.mu += e(0);
                m.nu += e(1);
                m.beta += e(2);
            }
            (PertKind::Shear, Support::NearMMinus) => {
                m.mu += e(0) / a;
                m.nu += e(1) / (a * a);
                m.beta += e(2) / a.powi(l2);
            }
            (PertKind::AlphaScale, Support::NearMPlus) => {
                let s = e(0).exp();
                m.alpha = a / s;
                m.mu *= s;
                m.nu *= s * s;
                m.beta *= s.powi(l2);
            }
            (PertKind::AlphaScale, Support::NearMMinus) => {
                m.alpha = a / e(0).exp();
            }
            (PertKind::Translate, Support::NearMPlus) => {
                m.mu += e(0);
                m.phi_plus = wrap(m.phi_plus + e(1));
            }
            (PertKind::Translate, Support::NearMMinus) => {
                m.mu += e(0) / a;
                m.phi_minus = wrap(m.phi_minus - e(1));
            }
            (PertKind::Rotate, Support::Inner) => {
                m.rho = Rotation::Decimal(format!("{:?}", self.rho_value() + e(0)));
            }
            (PertKind::Twist, Support::Inner) => {
                m.twist += e(0);
            }
            _ => return unsupported(),
        }
        Ok(m)
    }
}

/// The standard form `Omega` in coordinates `(r, phi, x.., y..)`.
pub fn symplectic_form(big_n: usize) -> DMatrix<f64> {
    let n = big_n - 1;
    let dim = 2 * big_n;
    let mut o = DMatrix::<f64>::zeros(dim, dim);
    o[(0, 1)] = 1.0;
    o[(1, 0)] = -1.0;
    for i in 0..n {
        o[(2 + i, 2 + n + i)] = 1.0;
        o[(2 + n + i, 2 + i)] = -1.0;
    }
    o
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PertKind {
    Shear,
    AlphaScale,
    Translate,
    Rotate,
    Twist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    #[serde(rename = "near_M_plus")]
    NearMPlus,
    #[serde(rename = "near_M_minus")]
    NearMMinus,
    #[serde(rename = "inner")]
    Inner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PertKind,
    pub coefficients: Vec<f64>,
    pub support: Support,
}

impl PerturbationSpec {
    fn anchor_phi(&self, m: &ModelSpec) -> f64 {
        match self.support {
            Support::NearMPlus => m.phi_plus,
            Support::NearMMinus => m.phi_minus,
            Support::Inner => 0.0,
        }
    }

    fn coef(&self, i: usize) -> f64 {
        self.coefficients.get(i).copied().unwrap_or(0.0)
    }

    /// The generator itself, acting on `(r, phi)` only.
    pub fn apply(&self, m: &ModelSpec, p: &PhasePoint) -> Result<PhasePoint> {
        let s = mod0_1(p.phi - self.anchor_phi(m));
        let (r, phi) = match self.kind {
            PertKind::Shear => {
                let h = self.coef(0) + self.coef(1) * s + self.coef(2) * s.powi(m.ell as i32 + 1);
                (p.r + h, p.phi)
            }
            PertKind::AlphaScale => {
                let e = self.coef(0).exp();
                (p.r * e, self.anchor_phi(m) + s / e)
            }
            PertKind::Translate => (p.r + self.coef(0), p.phi + self.coef(1)),
            PertKind::Rotate => (p.r, p.phi + self.coef(0)),
            PertKind::Twist => (p.r, p.phi + self.coef(0) * p.r),
        };
        Ok(PhasePoint::new(r, phi, p.x.clone(), p.y.clone()))
    }

    fn central_jacobian(&self, m: &ModelSpec, p: &PhasePoint) -> Result<[[f64; 2]; 2]> {
        let s = mod0_1(p.phi - self.anchor_phi(m));
        Ok(match self.kind {
            PertKind::Shear => {
                let e = m.ell as i32;
                let dh = self.coef(1) + (e + 1) as f64 * self.coef(2) * s.powi(e);
                [[1.0, dh], [0.0, 1.0]]
            }
            PertKind::AlphaScale => {
                let e = self.coef(0).exp();
                [[e, 0.0], [0.0, 1.0 / e]]
            }
            PertKind::Translate | PertKind::Rotate => [[1.0, 0.0], [0.0, 1.0]],
            PertKind::Twist => [[1.0, 0.0], [self.coef(0), 1.0]],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapKind {
    T0,
    T1,
    T1Inverse,
    Generator(PerturbationSpec),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn canonical_validates() {
        ModelSpec::canonical().validate().unwrap();
        let mut m = ModelSpec::canonical();
        m.hyp_block = [[1.0, 1.0], [1.0, 2.01]];
        assert!(matches!(m.validate(), Err(Error::Domain(s)) if s.contains("hyp_block")));
        let mut m = ModelSpec::canonical();
        m.alpha = 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn inner_examples() {
        let mut m = ModelSpec::canonical();
        m.rho = Rotation::Decimal("0.25".into());
        let (r, phi) = m.apply_inner(0.1, 0.05, 4).unwrap();
        assert_eq!(r, 0.1);
        assert!(close(phi, wrap(0.05 + 1.4), 1e-14));
        assert_eq!(m.apply_inner(0.1, 0.05, 0).unwrap(), (0.1, 0.05));
        assert!(m.apply_inner(0.6, 0.0, 1).is_err());

        let mut m = ModelSpec::canonical();
        m.inner_pert = 1e-4;
        m.inner_exp = 3;
        let (r, _) = m.apply_inner(0.05, 0.1, 100).unwrap();
        assert!((r - 0.05).abs() <= 2.5e-6);
    }

    #[test]
    fn t0_examples() {
        let mut m = ModelSpec::canonical();
        let p = PhasePoint::new(0.0, 0.3, vec![0.0], vec![0.0]);
        let q = m.apply_t0(&p).unwrap();
        assert!(close(q.phi, wrap(0.3 + m.rho_value()), 1e-15));
        assert_eq!((q.r, q.x[0], q.y[0]), (0.0, 0.0, 0.0));
        m.lambda_ss = 0.5;
        let q = m.apply_t0(&PhasePoint::new(0.01, 0.0, vec![0.5], vec![0.25])).unwrap();
        assert_eq!((q.x[0], q.y[0]), (0.25, 0.5));
        let j = m.jacobian(&MapKind::T0, &p).unwrap();
        assert_eq!(j[(0, 0)], 1.0);
        assert_eq!(j[(1, 0)], 1.0);
        assert_eq!(j[(1, 1)], 1.0);
        assert_eq!(j[(0, 1)], 0.0);
        assert_eq!(j[(2, 2)], 0.5);
        assert_eq!(j[(3, 3)], 2.0);
    }

    #[test]
    fn t1_anchors_and_blocks() {
        let m = ModelSpec::canonical();
        let q = m.apply_t1(&m.anchor_point(Anchor::Minus)).unwrap();
        let mp = m.anchor_point(Anchor::Plus);
        assert!(close(q.r, 0.0, 1e-15) && close(q.phi, mp.phi, 1e-15));
        assert!(close(q.x[0], mp.x[0], 1e-15) && close(q.y[0], 0.0, 1e-15));
        let j = m.jacobian(&MapKind::T1, &m.anchor_point(Anchor::Minus)).unwrap();
        assert!(close(j[(0, 0)], 1.0 / 3.0, 1e-15) && j[(0, 1)] == 0.0 && j[(1, 1)] == 3.0);
        // strong-unstable direction (0,0,0,1) maps to (b, d) = (1, 2)
        assert_eq!((j[(2, 3)], j[(3, 3)]), (1.0, 2.0));
        // image of W^u_loc: r = 0, x = 0 gives r~ = beta s^3
        let s = 0.01;
        let p = PhasePoint::new(0.0, m.phi_minus + s / 3.0, vec![0.0], m.y_minus.clone());
        let q = m.apply_t1(&p).unwrap();
        assert!(close(q.r, s * s * s, 1e-18));
    }

    #[test]
    fn t1_roundtrip() {
        let m = ModelSpec::canonical();
        let p = PhasePoint::new(0.01, 0.23, vec![0.02], vec![0.31]);
        let back = m.apply_t1_inverse(&m.apply_t1(&p).unwrap()).unwrap();
        for (a, b) in p.to_vec().iter().zip(back.to_vec()) {
            assert!(close(*a, b, 1e-12));
        }
        let far = PhasePoint::new(0.3, 0.23, vec![0.0], vec![0.3]);
        assert!(m.apply_t1(&far).is_err());
    }

    #[test]
    fn broken_block_defect() {
        let mut m = ModelSpec::canonical();
        m.hyp_block = [[1.01, 0.0], [0.0, 1.0]];
        let d = m.symplectic_defect(&MapKind::T1, &m.anchor_point(Anchor::Minus)).unwrap();
        assert!(d >= 1e-2);
    }

    #[test]
    fn coupled_t0_is_symplectic() {
        use rand::{Rng, SeedableRng};
        let mut m = ModelSpec::canonical();
        m.couple = 0.1;
        m.inner_pert = 1e-3;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = PhasePoint::new(
                rng.gen_range(-0.45..0.45),
                rng.gen_range(0.0..1.0),
                vec![rng.gen_range(-0.9..0.9)],
                vec![rng.gen_range(-0.9..0.9)],
            );
            assert!(m.symplectic_defect(&MapKind::T0, &p).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn perturbation_updates() {
        let m = ModelSpec::canonical();
        let sh = PerturbationSpec {
            kind: PertKind::Shear,
            coefficients: vec![0.01, 0.0],
            support: Support::NearMPlus,
        };
        assert!(close(m.compose_perturbation(&sh).unwrap().mu, 0.01, 1e-15));
        let al = PerturbationSpec {
            kind: PertKind::AlphaScale,
            coefficients: vec![2f64.ln()],
            support: Support::NearMPlus,
        };
        assert!(close(m.compose_perturbation(&al).unwrap().alpha, 1.5, 1e-14));
        let ro = PerturbationSpec {
            kind: PertKind::Rotate,
            coefficients: vec![0.01],
            support: Support::Inner,
        };
        assert!(close(m.compose_perturbation(&ro).unwrap().rho_value(), m.rho_value() + 0.01, 1e-15));
    }
}
