//! Phase-space points, centered angle reduction, boxes and the rescaling
//! charts around the two homoclinic anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centered reduction of `a` modulo `b` into `[-b/2, b/2)`.
pub fn mod0(a: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::domain(format!("mod0 needs b > 0, got {b}")));
    }
    Ok(mod0_b(a, b))
}

/// `mod0(a, 1)` without the error path.
pub fn mod0_1(a: f64) -> f64 {
    mod0_b(a, 1.0)
}

fn mod0_b(a: f64, b: f64) -> f64 {
    let h = 0.5 * b;
    let mut v = (a + h).rem_euclid(b) - h;
    // rem_euclid can round up to b itself
    if v >= h {
        v -= b;
    }
    v
}

/// Wrap an angle (in turns) into `[0, 1)`.
pub fn wrap(phi: f64) -> f64 {
    let v = phi.rem_euclid(1.0);
    if v >= 1.0 {
        0.0
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub r: f64,
    pub phi: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PhasePoint {
    pub fn new(r: f64, phi: f64, x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), y.len(), "x and y blocks must have equal length");
        PhasePoint {
            r,
            phi: wrap(phi),
            x,
            y,
        }
    }

    /// Half phase dimension N.
    pub fn dim(&self) -> usize {
        self.x.len() + 1
    }

    /// Flat coordinates `(r, phi, x.., y..)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim());
        v.push(self.r);
        v.push(self.phi);
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.y);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let n = (v.len() - 2) / 2;
        PhasePoint::new(v[0], v[1], v[2..2 + n].to_vec(), v[2 + n..2 + 2 * n].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "IFS")]
    Ifs,
    #[serde(rename = "CUBIC")]
    Cubic,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "IFS" | "ifs" => Ok(Scheme::Ifs),
            "CUBIC" | "cubic" => Ok(Scheme::Cubic),
            other => Err(Error::domain(format!("unknown rescaling scheme `{other}`"))),
        }
    }
}

/// Scale factors of one chart: `r = central_r * R`, `phi - phi0 = delta * Phi`,
/// strong coordinates scaled by `strong`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub central_r: f64,
    pub delta: f64,
    pub strong: f64,
}

impl Scheme {
    /// IFS: `p_hat = delta^(1/2)`, `p_tilde = delta^(3/4)`, so `r ~ delta^2.5`
    /// and strong coordinates `~ delta^2.75`. CUBIC: `delta^3` and `delta^3.5`.
    pub fn scales(self, delta: f64) -> Scales {
        match self {
            Scheme::Ifs => Scales {
                central_r: delta.sqrt() * delta * delta,
                delta,
                strong: delta.powf(0.75) * delta * delta,
            },
            Scheme::Cubic => Scales {
                central_r: delta * delta * delta,
                delta,
                strong: delta.powf(3.5),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    /// M^- = (0, phi^-, 0, y^-), the start of the homoclinic excursion.
    #[serde(rename = "M_minus")]
    Minus,
    /// M^+ = (0, phi^+, x^+, 0), its image under T1.
    #[serde(rename = "M_plus")]
    Plus,
}

/// Anchor data needed by the charts: the base point and the linear shear
/// that straightens the strong block.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub anchor: Anchor,
    pub phi0: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    /// At M^-: `y - y^- = s*Y + shear*x`. At M^+: `x - x^+ = s*X + shear*y`.
    pub shear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledPoint {
    pub r: f64,
    pub phi: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub scheme: Scheme,
    pub delta: f64,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 0.1 {
        Ok(())
    } else {
        Err(Error::domain(format!("delta must lie in (0, 0.1], got {delta}")))
    }
}

pub fn to_rescaled(p: &PhasePoint, frame: &Frame, delta: f64, scheme: Scheme) -> Result<RescaledPoint> {
    check_delta(delta)?;
    let sc = scheme.scales(delta);
    let s = sc.strong;
    let (x, y) = match frame.anchor {
        Anchor::Minus => {
            let x: Vec<f64> = p.x.iter().map(|v| v / s).collect();
            let y = p
                .y
                .iter()
                .zip(&frame.y0)
                .zip(&p.x)
                .map(|((y, y0), x)| (y - y0 - frame.shear * x) / s)
                .collect();
            (x, y)
        }
        Anchor::Plus => {
            let y: Vec<f64> = p.y.iter().map(|v| v / s).collect();
            let x = p
                .x
                .iter()
                .zip(&frame.x0)
                .zip(&p.y)
                .map(|((x, x0), y)| (x - x0 - frame.shear * y) / s)
                .collect();
            (x, y)
        }
    };
    Ok(RescaledPoint {
        r: p.r / sc.central_r,
        phi: mod0_1(p.phi - frame.phi0) / delta,
        x,
        y,
        scheme,
        delta,
    })
}

pub fn from_rescaled(p: &RescaledPoint, frame: &Frame) -> Result<PhasePoint> {
    check_delta(p.delta)?;
    let sc = p.scheme.scales(p.delta);
    let s = sc.strong;
    let (x, y) = match frame.anchor {
        Anchor::Minus => {
            let x: Vec<f64> = p.x.iter().map(|v| v * s).collect();
            let y = p
                .y
                .iter()
                .zip(&frame.y0)
                .zip(&x)
                .map(|((yy, y0), xx)| y0 + s * yy + frame.shear * xx)
                .collect();
            (x, y)
        }
        Anchor::Plus => {
            let y: Vec<f64> = p.y.iter().map(|v| v * s).collect();
            let x = p
                .x
                .iter()
                .zip(&frame.x0)
                .zip(&y)
                .map(|((xx, x0), yy)| x0 + s * xx + frame.shear * yy)
                .collect();
            (x, y)
        }
    };
    let out = PhasePoint::new(sc.central_r * p.r, frame.phi0 + p.delta * p.phi, x, y);
    if !out.r.is_finite() || out.x.iter().chain(&out.y).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite coordinate after unscaling"));
    }
    Ok(out)
}

/// Axis-aligned box in rescaled coordinates. Each block has one half-width
/// and one center offset shared by its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub r_half: f64,
    pub phi_half: f64,
    pub x_half: f64,
    pub y_half: f64,
    pub r_center: f64,
    pub phi_center: f64,
    pub x_center: f64,
    pub y_center: f64,
}

impl BoxSpec {
    pub fn centered(r_half: f64, phi_half: f64, x_half: f64, y_half: f64) -> Result<Self> {
        if !(r_half > 0.0 && phi_half > 0.0 && x_half > 0.0 && y_half > 0.0) {
            return Err(Error::domain("box half-widths must be positive"));
        }
        Ok(BoxSpec {
            r_half,
            phi_half,
            x_half,
            y_half,
            r_center: 0.0,
            phi_center: 0.0,
            x_center: 0.0,
            y_center: 0.0,
        })
    }

    /// The unit box `Pi`.
    pub fn pi() -> Self {
        BoxSpec::centered(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    pub fn pi_d(d: f64) -> Result<Self> {
        BoxSpec::centered(1.0, d, 1.0, 1.0)
    }

    pub fn pi_prime(d: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::domain("kappa must lie in (0, 1)"));
        }
        BoxSpec::centered(1.0 - kappa, d * (1.0 - kappa), 0.5, 1.0)
    }

    /// Smallest signed clearance of the central and X coordinates from the
    /// box boundary (positive means strictly inside).
    pub fn central_clearance(&self, r: f64, phi: f64, x: &[f64]) -> f64 {
        let mut m = self.r_half - (r - self.r_center).abs();
        m = m.min(self.phi_half - (phi - self.phi_center).abs());
        for v in x {
            m = m.min(self.x_half - (v - self.x_center).abs());
        }
        m
    }

    pub fn contains(&self, r: f64, phi: f64, x: &[f64], y: &[f64]) -> bool {
        let mut m = self.central_clearance(r, phi, x);
        for v in y {
            m = m.min(self.y_half - (v - self.y_center).abs());
        }
        m >= 0.0
    }

    /// Whether `self` sits inside `outer` with positive clearance in every block.
    pub fn strictly_inside(&self, outer: &BoxSpec) -> bool {
        let gap = |h: f64, c: f64, oh: f64, oc: f64| (oh - h) - (c - oc).abs() > 0.0;
        gap(self.r_half, self.r_center, outer.r_half, outer.r_center)
            && gap(self.phi_half, self.phi_center, outer.phi_half, outer.phi_center)
            && gap(self.x_half, self.x_center, outer.x_half, outer.x_center)
            && (gap(self.y_half, self.y_center, outer.y_half, outer.y_center)
                || (self.y_half == outer.y_half && self.y_center == outer.y_center))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_minus() -> Frame {
        Frame {
            anchor: Anchor::Minus,
            phi0: 0.3,
            x0: vec![0.0],
            y0: vec![0.25],
            shear: -0.5,
        }
    }

    #[test]
    fn mod0_examples() {
        assert!((mod0(0.7, 1.0).unwrap() + 0.3).abs() < 1e-15);
        assert!((mod0(-0.3, 1.0).unwrap() + 0.3).abs() < 1e-15);
        assert!((mod0(3.1, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(mod0(1.0, 0.0).is_err());
        assert!(mod0(1.0, -2.0).is_err());
        assert_eq!(mod0(0.5, 1.0).unwrap(), -0.5);
    }

    #[test]
    fn cubic_chart_examples() {
        let f = frame_minus();
        let p = PhasePoint::new(1e-3, 0.35, vec![0.0], vec![0.25]);
        let rp = to_rescaled(&p, &f, 0.1, Scheme::Cubic).unwrap();
        assert!((rp.r - 1.0).abs() < 1e-12);
        assert!((rp.phi - 0.5).abs() < 1e-12);
        assert_eq!(rp.x, vec![0.0]);
        assert!(rp.y[0].abs() < 1e-12);

        let anchor = PhasePoint::new(0.0, 0.3, vec![0.0], vec![0.25]);
        let o = to_rescaled(&anchor, &f, 0.1, Scheme::Cubic).unwrap();
        assert_eq!((o.r, o.phi, o.x[0], o.y[0]), (0.0, 0.0, 0.0, 0.0));
        let back = from_rescaled(&o, &f).unwrap();
        assert!((back.phi - 0.3).abs() < 1e-15 && (back.y[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ifs_radial_scale() {
        let f = frame_minus();
        let rp = RescaledPoint {
            r: 2.0,
            phi: 0.0,
            x: vec![0.0],
            y: vec![0.0],
            scheme: Scheme::Ifs,
            delta: 0.04,
        };
        let p = from_rescaled(&rp, &f).unwrap();
        assert!((p.r - 6.4e-4).abs() < 1e-15);
    }

    #[test]
    fn bad_delta() {
        let f = frame_minus();
        let p = PhasePoint::new(0.0, 0.3, vec![0.0], vec![0.25]);
        assert!(to_rescaled(&p, &f, 0.2, Scheme::Cubic).is_err());
        assert!("QUAD".parse::<Scheme>().is_err());
    }

    #[test]
    fn boxes_nest() {
        let d = 0.5;
        let pd = BoxSpec::pi_d(d).unwrap();
        let pp = BoxSpec::pi_prime(d, 0.05).unwrap();
        assert!(pp.strictly_inside(&pd));
        assert!(BoxSpec::centered(0.0, 1.0, 1.0, 1.0).is_err());
    }
}
