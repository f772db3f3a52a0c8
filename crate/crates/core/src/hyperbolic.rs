//! Cone fields, coding orbits, fixed points and local unstable manifolds of
//! the rescaled return maps.
//!
//! Everything is expressed through the cross-form Jacobian of `T_k`, with
//! blocks `Abar = A a + B Ybar`, `Y = C a + D Ybar` for `a = (R, Phi, X)`.
//! Tangent pairs `(v, DT_k v)` are produced from these blocks directly, so
//! the `lambda^{-k}` growth in the strong directions never has to be stored
//! as a matrix entry.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::polyfit;
use crate::geometry::{from_rescaled, PhasePoint, RescaledPoint, Scheme};
use crate::model::ModelSpec;
use crate::returns::{cross_grid, cross_return, CrossIn, CrossOut, ReturnFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConeKind {
    #[serde(rename = "u")]
    U,
    #[serde(rename = "uu")]
    UU,
    #[serde(rename = "s")]
    S,
    #[serde(rename = "ss")]
    SS,
}

impl ConeKind {
    pub const ALL: [ConeKind; 4] = [ConeKind::U, ConeKind::UU, ConeKind::S, ConeKind::SS];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    #[serde(rename = "L")]
    pub l: f64,
}

impl ConeSpec {
    pub fn new(l: f64) -> Result<Self> {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::domain(format!("cone constant L must lie in (0, 1), got {l}")));
        }
        Ok(ConeSpec { l })
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Signed margin of a tangent vector `(dR, dPhi, dX.., dY..)`; positive
/// means strictly inside.
pub fn cone_margin(v: &[f64], cone: &ConeSpec, kind: ConeKind) -> Result<f64> {
    if v.len() < 2 || v.len() % 2 != 0 {
        return Err(Error::domain("tangent vector must have length 2N"));
    }
    if v.iter().all(|c| *c == 0.0) {
        return Err(Error::domain("zero tangent vector"));
    }
    let n = (v.len() - 2) / 2;
    let (dr, dphi) = (v[0].abs(), v[1].abs());
    let dx = sup(&v[2..2 + n]);
    let dy = sup(&v[2 + n..]);
    let l = cone.l;
    Ok(match kind {
        ConeKind::U => l * (dphi + dy) - dr.max(dx),
        ConeKind::UU => l * dy - dr.max(dphi).max(dx),
        ConeKind::S => l * (dr + dx) - dphi.max(dy),
        ConeKind::SS => l * dx - dr.max(dphi).max(dy),
    })
}

fn normalized_margin(v: &[f64], cone: &ConeSpec, kind: ConeKind) -> f64 {
    let s = sup(v);
    let w: Vec<f64> = v.iter().map(|c| c / s).collect();
    cone_margin(&w, cone, kind).unwrap_or(f64::NEG_INFINITY)
}

/// Cross-form blocks of a return-map Jacobian.
struct Blocks {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Blocks {
    fn new(j: &DMatrix<f64>, n: usize) -> Self {
        let m = 2 + n;
        Blocks {
            a: j.view((0, 0), (m, m)).into_owned(),
            b: j.view((0, m), (m, n)).into_owned(),
            c: j.view((m, 0), (n, m)).into_owned(),
            d: j.view((m, m), (n, n)).into_owned(),
        }
    }
}

/// Solve `M z = r`; a block flushed to exactly zero by the `lambda^k` clamp
/// is replaced by `1e-300 I`, i.e. the limiting direction of the huge
/// solution.
fn solve_limit(m: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    if let Some(z) = m.clone().lu().solve(r) {
        if z.iter().all(|v| v.is_finite()) {
            return z;
        }
    }
    let mut reg = m.clone();
    for i in 0..reg.nrows() {
        if reg.row(i).iter().all(|v| *v == 0.0) {
            reg[(i, i)] = 1e-300;
        }
    }
    let z = reg.lu().solve(r).unwrap_or_else(|| DVector::zeros(r.len()));
    let s = z.amax();
    if s.is_finite() {
        z
    } else {
        r.clone()
    }
}

fn join(a: &DVector<f64>, y: &DVector<f64>) -> Vec<f64> {
    a.iter().chain(y.iter()).copied().collect()
}

/// Unit directions in a plane on the sup-sphere of radius `rad`.
fn sup_circle(rad: f64) -> Vec<(f64, f64)> {
    (0..16)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / 16.0;
            let (c, s) = (t.cos(), t.sin());
            let m = c.abs().max(s.abs());
            (rad * c / m, rad * s / m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeWitness {
    pub kind: ConeKind,
    pub k: i64,
    /// Cross-form point `(R, Phi, X.., Ybar..)`.
    pub point: Vec<f64>,
    /// Tangent vector at the base point of the tested direction.
    pub vector: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    #[serde(rename = "L")]
    pub l: f64,
    pub q: i64,
    pub points_tested: usize,
    pub vectors_tested: usize,
    pub margin_u: f64,
    pub margin_uu: f64,
    pub margin_s: f64,
    pub margin_ss: f64,
    pub margin_min: f64,
    pub expansion_min: f64,
    pub contraction_max: f64,
    pub witnesses: Vec<ConeWitness>,
    pub pass: bool,
}

struct PointStats {
    margins: [f64; 4],
    expansion: f64,
    contraction: f64,
    vectors: usize,
    worst: Vec<ConeWitness>,
}

fn point_stats(cone: &ConeSpec, k: i64, inp: &CrossIn, jac: &DMatrix<f64>, n: usize) -> PointStats {
    let bl = Blocks::new(jac, n);
    let l = cone.l;
    let mut margins = [f64::INFINITY; 4];
    let mut expansion = f64::INFINITY;
    let mut contraction = 0.0f64;
    let mut vectors = 0;
    let mut worst: Vec<ConeWitness> = Vec::new();
    let point: Vec<f64> = [inp.r, inp.phi]
        .iter()
        .chain(&inp.x)
        .chain(&inp.y_out)
        .copied()
        .collect();
    let mut record = |kind: ConeKind, idx: usize, v: Vec<f64>, margin: f64, worst: &mut Vec<ConeWitness>| {
        if margin < margins[idx] {
            margins[idx] = margin;
        }
        if margin <= 0.0 && worst.len() < 4 {
            worst.push(ConeWitness {
                kind,
                k,
                point: point.clone(),
                vector: v,
                margin,
            });
        }
    };
    let m = 2 + n;
    // forward images of C^u and C^uu: v = (a, Y), Ybar = D^-1 (Y - C a)
    let forward = |a: DVector<f64>, y: DVector<f64>| -> (Vec<f64>, Vec<f64>) {
        let yb = solve_limit(&bl.d, &(&y - &bl.c * &a));
        let abar = &bl.a * &a + &bl.b * &yb;
        (join(&a, &y), join(&abar, &yb))
    };
    // backward images of C^s and C^ss: w = (abar, Ybar), a = A^-1 (abar - B Ybar)
    let backward = |abar: DVector<f64>, yb: DVector<f64>| -> (Vec<f64>, Vec<f64>) {
        let a = solve_limit(&bl.a, &(&abar - &bl.b * &yb));
        let y = &bl.c * &a + &bl.d * &yb;
        (join(&a, &y), join(&abar, &yb))
    };
    for j in 0..n {
        for (cu, su) in sup_circle(1.0) {
            // unstable part (dPhi, dY_j) = (cu, su); stable part on the boundary
            let rad = l * (cu.abs() + su.abs());
            for (sr, sx) in sup_circle(rad) {
                let mut a = DVector::zeros(m);
                a[0] = sr;
                a[1] = cu;
                a[2 + j] = sx;
                let mut y = DVector::zeros(n);
                y[j] = su;
                let (v, w) = forward(a, y);
                let mg = normalized_margin(&w, cone, ConeKind::U);
                record(ConeKind::U, 0, v.clone(), mg, &mut worst);
                let den = v[1].abs() + sup(&v[2 + n..]);
                let num = w[1].abs() + sup(&w[2 + n..]);
                expansion = expansion.min(num / den);
                vectors += 1;
            }
            // C^uu: dY_j = 1, central and X parts on the L-sphere
            for plane in 0..3 {
                let (p0, p1) = match plane {
                    0 => (0, 1),
                    1 => (0, 2 + j),
                    _ => (1, 2 + j),
                };
                let mut a = DVector::zeros(m);
                a[p0] = l * cu / cu.abs().max(su.abs());
                a[p1] = l * su / cu.abs().max(su.abs());
                let mut y = DVector::zeros(n);
                y[j] = 1.0;
                let (v, w) = forward(a, y);
                let mg = normalized_margin(&w, cone, ConeKind::UU);
                record(ConeKind::UU, 1, v, mg, &mut worst);
                vectors += 1;
            }
            // C^s: stable part (dRbar, dXbar_j) = (cu, su) at the image
            let rad = l * (cu.abs() + su.abs());
            for (sp, sy) in sup_circle(rad) {
                let mut abar = DVector::zeros(m);
                abar[0] = cu;
                abar[1] = sp;
                abar[2 + j] = su;
                let mut yb = DVector::zeros(n);
                yb[j] = sy;
                let (v, w) = backward(abar, yb);
                let mg = normalized_margin(&v, cone, ConeKind::S);
                record(ConeKind::S, 2, w.clone(), mg, &mut worst);
                let den = v[0].abs() + sup(&v[2..2 + n]);
                let num = w[0].abs() + sup(&w[2..2 + n]);
                contraction = contraction.max(num / den);
                vectors += 1;
            }
            // C^ss: dXbar_j = 1, the rest on the L-sphere
            for plane in 0..3 {
                let mut abar = DVector::zeros(m);
                let mut yb = DVector::zeros(n);
                abar[2 + j] = 1.0;
                let (e0, e1) = (l * cu / cu.abs().max(su.abs()), l * su / cu.abs().max(su.abs()));
                match plane {
                    0 => {
                        abar[0] = e0;
                        abar[1] = e1;
                    }
                    1 => {
                        abar[0] = e0;
                        yb[j] = e1;
                    }
                    _ => {
                        abar[1] = e0;
                        yb[j] = e1;
                    }
                }
                let (v, w) = backward(abar, yb);
                let mg = normalized_margin(&v, cone, ConeKind::SS);
                record(ConeKind::SS, 3, w, mg, &mut worst);
                vectors += 1;
            }
        }
    }
    PointStats {
        margins,
        expansion,
        contraction,
        vectors,
        worst,
    }
}

fn in_pi(inp: &CrossIn, out: &CrossOut) -> bool {
    let ok = |v: f64| v.abs() <= 1.0;
    ok(out.r) && ok(out.phi) && out.x.iter().all(|v| ok(*v)) && out.y_in.iter().all(|v| ok(*v)) && ok(inp.r) && ok(inp.phi)
}

/// Sampled cone-field check over all `k` in `K_q`. Always returns the
/// report; `pass` is false when any margin is non-positive or the
/// expansion/contraction is not uniform.
pub fn cone_report(fam: &ReturnFamily, l: f64, grid_n: usize) -> Result<ConeReport> {
    let cone = ConeSpec::new(l)?;
    if !(fam.model.alpha.abs() > 1.0) {
        return Err(Error::Precondition("cone fields are stated for |alpha| > 1".into()));
    }
    if grid_n < 2 {
        return Err(Error::domain("grid_n must be at least 2"));
    }
    let n = fam.model.n();
    let grid = cross_grid(n, grid_n, 3);
    let jobs: Vec<(i64, &CrossIn)> = fam.returns.k.iter().flat_map(|&k| grid.iter().map(move |p| (k, p))).collect();
    let stats: Vec<Option<PointStats>> = jobs
        .par_iter()
        .map(|(k, inp)| -> Result<Option<PointStats>> {
            let (out, jac) = cross_return(fam, *k, inp, true)?;
            if !in_pi(inp, &out) {
                return Ok(None);
            }
            Ok(Some(point_stats(&cone, *k, inp, &jac.unwrap(), n)))
        })
        .collect::<Result<_>>()?;
    let mut rep = ConeReport {
        l,
        q: fam.returns.q,
        points_tested: 0,
        vectors_tested: 0,
        margin_u: f64::INFINITY,
        margin_uu: f64::INFINITY,
        margin_s: f64::INFINITY,
        margin_ss: f64::INFINITY,
        margin_min: f64::INFINITY,
        expansion_min: f64::INFINITY,
        contraction_max: 0.0,
        witnesses: Vec::new(),
        pass: false,
    };
    for s in stats.into_iter().flatten() {
        rep.points_tested += 1;
        rep.vectors_tested += s.vectors;
        rep.margin_u = rep.margin_u.min(s.margins[0]);
        rep.margin_uu = rep.margin_uu.min(s.margins[1]);
        rep.margin_s = rep.margin_s.min(s.margins[2]);
        rep.margin_ss = rep.margin_ss.min(s.margins[3]);
        rep.expansion_min = rep.expansion_min.min(s.expansion);
        rep.contraction_max = rep.contraction_max.max(s.contraction);
        for w in s.worst {
            if rep.witnesses.len() < 32 {
                rep.witnesses.push(w);
            }
        }
    }
    rep.margin_min = rep.margin_u.min(rep.margin_uu).min(rep.margin_s).min(rep.margin_ss);
    rep.pass = rep.points_tested > 0 && rep.margin_min > 0.0 && rep.expansion_min > 1.0 && rep.contraction_max < 1.0;
    Ok(rep)
}

/// Like `cone_report`, but a failed check is an error carrying the report.
pub fn verify_cones(fam: &ReturnFamily, l: f64, grid_n: usize) -> Result<ConeReport> {
    let rep = cone_report(fam, l, grid_n)?;
    if rep.pass {
        Ok(rep)
    } else {
        Err(Error::Certification(format!(
            "cone check failed at q = {}: margins u {:.3e}, uu {:.3e}, s {:.3e}, ss {:.3e}; {} witnesses, first {:?}",
            rep.q,
            rep.margin_u,
            rep.margin_uu,
            rep.margin_s,
            rep.margin_ss,
            rep.witnesses.len(),
            rep.witnesses.first()
        )))
    }
}

// ---- coding orbits ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coding {
    pub word: Vec<i64>,
    pub periodic: bool,
}

impl Coding {
    pub fn periodic(word: Vec<i64>) -> Self {
        Coding { word, periodic: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingOrbit {
    pub word: Vec<i64>,
    /// Orbit points in the chart at M^-, `(R, Phi, X.., Y..)`.
    pub rescaled: Vec<Vec<f64>>,
    pub points: Vec<PhasePoint>,
    /// Largest cross-form closure defect.
    pub residual: f64,
    pub newton_steps: usize,
    /// Number of period-map multipliers of modulus above one.
    pub unstable_count: usize,
    pub inside_pi: bool,
}

/// Affine-limit seed: `Phi_{j+1} = c_j + alpha Phi_j` around the cycle, and
/// `R` from the contracting limit recursion.
fn coding_seed(fam: &ReturnFamily, word: &[i64]) -> Vec<(f64, f64)> {
    let a = fam.model.alpha;
    let jn = word.len();
    let c: Vec<f64> = word.iter().map(|&k| fam.c_of_k(k)).collect();
    // Phi_0 = alpha^J Phi_0 + sum_j alpha^{J-1-j} c_j
    let s: f64 = (0..jn).map(|j| a.powi((jn - 1 - j) as i32) * c[j]).sum();
    let mut phi = vec![s / (1.0 - a.powi(jn as i32)); jn];
    for j in 1..jn {
        phi[j] = c[j - 1] + a * phi[j - 1];
    }
    let cubic = fam.scheme == Scheme::Cubic;
    let beta = fam.model.beta;
    let mut r = vec![0.0; jn];
    if cubic {
        for _ in 0..200 {
            for j in 0..jn {
                let nx = (j + 1) % jn;
                r[nx] = r[j] / a + beta * (a * phi[j]).powi(3);
            }
        }
    }
    r.into_iter().zip(phi).collect()
}

/// Periodic orbit with the given coding, solved on the cycle of cross maps
/// by a Picard warm start and Newton polish.
pub fn coding_orbit(fam: &ReturnFamily, coding: &Coding, tol: f64) -> Result<CodingOrbit> {
    if coding.word.is_empty() {
        return Err(Error::domain("empty coding word"));
    }
    if !coding.periodic {
        return Err(Error::Precondition("only periodic codings are supported".into()));
    }
    for &k in &coding.word {
        fam.require_k(k)?;
    }
    let word = &coding.word;
    let jn = word.len();
    let n = fam.model.n();
    let dim = 2 * (n + 1);
    let alpha = fam.model.alpha;
    // state per point: (R, Phi, X.., Y..)
    let mut st: Vec<Vec<f64>> = coding_seed(fam, word)
        .into_iter()
        .map(|(r, p)| {
            let mut v = vec![0.0; dim];
            v[0] = r;
            v[1] = p;
            v
        })
        .collect();
    let cross_in = |st: &Vec<Vec<f64>>, j: usize| -> CrossIn {
        let nx = (j + 1) % jn;
        CrossIn {
            r: st[j][0],
            phi: st[j][1],
            x: st[j][2..2 + n].to_vec(),
            y_out: st[nx][2 + n..].to_vec(),
        }
    };
    let residuals = |st: &Vec<Vec<f64>>, with_jac: bool| -> Result<(Vec<f64>, Vec<Option<DMatrix<f64>>>)> {
        let mut f = vec![0.0; jn * dim];
        let mut jacs = Vec::with_capacity(jn);
        for j in 0..jn {
            let nx = (j + 1) % jn;
            let (out, jac) = cross_return(fam, word[j], &cross_in(st, j), with_jac)?;
            let o = j * dim;
            f[o] = out.r - st[nx][0];
            f[o + 1] = out.phi - st[nx][1];
            for i in 0..n {
                f[o + 2 + i] = out.x[i] - st[nx][2 + i];
                f[o + 2 + n + i] = out.y_in[i] - st[j][2 + n + i];
            }
            jacs.push(jac);
        }
        Ok((f, jacs))
    };
    // Picard warm start: contracting coordinates forward, Phi backward
    for _ in 0..20 {
        let (f, _) = residuals(&st, false)?;
        for j in 0..jn {
            let nx = (j + 1) % jn;
            let o = j * dim;
            st[nx][0] += f[o];
            for i in 0..n {
                st[nx][2 + i] += f[o + 2 + i];
                st[j][2 + n + i] += f[o + 2 + n + i];
            }
            st[j][1] -= f[o + 1] / alpha;
        }
    }
    let mut steps = 0;
    let mut res;
    loop {
        let (f, jacs) = residuals(&st, true)?;
        res = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if res <= tol.min(1e-12) || steps >= 50 {
            break;
        }
        let mut big = DMatrix::<f64>::zeros(jn * dim, jn * dim);
        for j in 0..jn {
            let nx = (j + 1) % jn;
            let jx = jacs[j].as_ref().unwrap();
            let o = j * dim;
            let m = 2 + n;
            for r in 0..dim {
                for c in 0..m {
                    big[(o + r, j * dim + c)] += jx[(r, c)];
                }
                for c in 0..n {
                    big[(o + r, nx * dim + m + c)] += jx[(r, m + c)];
                }
            }
            for r in 0..m {
                big[(o + r, nx * dim + r)] -= 1.0;
            }
            for i in 0..n {
                big[(o + m + i, j * dim + m + i)] -= 1.0;
            }
        }
        let rhs = DVector::from_vec(f.iter().map(|v| -v).collect());
        let du = big
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::solver("coding orbit Newton matrix is singular", res))?;
        for j in 0..jn {
            for c in 0..dim {
                st[j][c] += du[j * dim + c];
            }
        }
        steps += 1;
    }
    if !(res <= tol) {
        return Err(Error::solver("coding orbit", res));
    }
    let (_, jacs) = residuals(&st, true)?;
    let jacs: Vec<DMatrix<f64>> = jacs.into_iter().map(|j| j.unwrap()).collect();
    let unstable_count = unstable_multipliers(&jacs, n)?;
    let frame = fam.model.frame(crate::geometry::Anchor::Minus);
    let sc = fam.scheme;
    let points = st
        .iter()
        .map(|v| {
            from_rescaled(
                &RescaledPoint {
                    r: v[0],
                    phi: v[1],
                    x: v[2..2 + n].to_vec(),
                    y: v[2 + n..].to_vec(),
                    scheme: sc,
                    delta: fam.delta(),
                },
                &frame,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let inside_pi = st.iter().all(|v| v.iter().all(|c| c.abs() <= 1.0));
    Ok(CodingOrbit {
        word: word.clone(),
        rescaled: st,
        points,
        residual: res,
        newton_steps: steps,
        unstable_count,
        inside_pi,
    })
}

/// Number of multipliers of the period map outside the unit circle.
///
/// The Floquet problem is posed on the cycle of cross maps, which gives a
/// pencil `L(mu)` linear in `mu` whose determinant vanishes exactly at the
/// multipliers. Zeros inside the unit disc are counted by the winding of
/// `det L` along the circle; the rest (including those pushed to infinity by
/// the `lambda^k` clamp) are unstable.
pub fn unstable_multipliers(jacs: &[DMatrix<f64>], n: usize) -> Result<usize> {
    let jn = jacs.len();
    let dim = 2 * (n + 1);
    let m = 2 + n;
    let size = jn * dim;
    let build = |mu: Complex<f64>| -> DMatrix<Complex<f64>> {
        let one = Complex::new(1.0, 0.0);
        let mut l = DMatrix::<Complex<f64>>::zeros(size, size);
        for j in 0..jn {
            let nx = (j + 1) % jn;
            let wrapf = if nx == 0 { mu } else { one };
            let jx = &jacs[j];
            let o = j * dim;
            for r in 0..dim {
                for c in 0..m {
                    l[(o + r, j * dim + c)] += Complex::new(jx[(r, c)], 0.0);
                }
                for c in 0..n {
                    l[(o + r, nx * dim + m + c)] += wrapf * jx[(r, m + c)];
                }
            }
            for r in 0..m {
                l[(o + r, nx * dim + r)] -= wrapf;
            }
            for i in 0..n {
                l[(o + m + i, j * dim + m + i)] -= one;
            }
        }
        l
    };
    let arg_det = |theta: f64| -> Option<f64> {
        let lu = build(Complex::from_polar(1.0, theta)).lu();
        let u = lu.u();
        let mut arg = if lu.p().determinant::<f64>() < 0.0 { std::f64::consts::PI } else { 0.0 };
        for i in 0..size {
            let d = u[(i, i)];
            if d.norm() == 0.0 {
                return None;
            }
            arg += d.arg();
        }
        Some(arg)
    };
    let mut samples = 1024;
    while samples <= 1 << 16 {
        let mut total = 0.0;
        let mut ok = true;
        let mut prev = arg_det(0.0).ok_or_else(|| Error::solver("multiplier on the unit circle", 0.0))?;
        for i in 1..=samples {
            let th = std::f64::consts::TAU * i as f64 / samples as f64;
            let Some(a) = arg_det(th) else {
                return Err(Error::solver("multiplier on the unit circle", 0.0));
            };
            let mut dlt = (a - prev) % std::f64::consts::TAU;
            if dlt > std::f64::consts::PI {
                dlt -= std::f64::consts::TAU;
            } else if dlt < -std::f64::consts::PI {
                dlt += std::f64::consts::TAU;
            }
            if dlt.abs() > std::f64::consts::FRAC_PI_4 {
                ok = false;
                break;
            }
            total += dlt;
            prev = a;
        }
        if ok {
            let inside = (total / std::f64::consts::TAU).round() as i64;
            return Ok((2 * (n + 1)) - inside.clamp(0, 2 * (n as i64 + 1)) as usize);
        }
        samples *= 4;
    }
    Err(Error::solver("winding count did not resolve", f64::NAN))
}

/// Hausdorff distance between two orbits in rescaled coordinates.
pub fn orbit_distance(a: &CodingOrbit, b: &CodingOrbit) -> f64 {
    let d = |p: &Vec<f64>, q: &Vec<f64>| p.iter().zip(q).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
    let one = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.iter()
            .map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0f64, f64::max)
    };
    one(&a.rescaled, &b.rescaled).max(one(&b.rescaled, &a.rescaled))
}

// ---- fixed points and manifolds -----------------------------------------------------

/// Fixed point of the limit map `Rbar = R/alpha + beta (alpha Phi)^3`,
/// `Phibar = A + alpha Phi`.
pub fn fixed_point_formula(alpha: f64, beta: f64, a: f64) -> (f64, f64) {
    let r = -beta * alpha.powi(4) * a.powi(3) / (1.0 - alpha).powi(4);
    (r, a / (1.0 - alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub k: i64,
    #[serde(rename = "A")]
    pub a: f64,
    /// Cross-form coordinates `(R, Phi, X.., Y..)`.
    pub point: Vec<f64>,
    pub formula: (f64, f64),
    pub formula_gap: f64,
    pub residual: f64,
}

pub fn rescaled_fixed_point(fam: &ReturnFamily, k: i64) -> Result<FixedPoint> {
    if fam.scheme != Scheme::Cubic {
        return Err(Error::Precondition("fixed-point formulas are stated for the CUBIC scheme".into()));
    }
    let orbit = coding_orbit(fam, &Coding::periodic(vec![k]), 1e-10)?;
    let a = fam.c_of_k(k);
    let formula = fixed_point_formula(fam.model.alpha, fam.model.beta, a);
    let p = orbit.rescaled[0].clone();
    let gap = (p[0] - formula.0).abs().max((p[1] - formula.1).abs());
    Ok(FixedPoint {
        k,
        a,
        point: p,
        formula,
        formula_gap: gap,
        residual: orbit.residual,
    })
}

/// Closed-form coefficients of the invariant cubic graph `R = sum a_i Phi^i`.
pub fn unstable_coeffs(alpha: f64, beta: f64, a: f64) -> [f64; 4] {
    let al = alpha;
    let a3 = al.powi(4) * beta / (al.powi(4) - 1.0);
    let a2 = 3.0 * al.powi(3) * a3 * a / (1.0 - al.powi(3));
    let a1 = (2.0 * al * al * a2 * a + 3.0 * al * al * a3 * a * a) / (1.0 - al * al);
    let a0 = (a1 * a + a2 * a * a + a3 * a.powi(3)) / (1.0 / al - 1.0);
    [a0, a1, a2, a3]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldSide {
    #[serde(rename = "u")]
    U,
    #[serde(rename = "s")]
    S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldGraph {
    pub side: ManifoldSide,
    pub k: i64,
    #[serde(rename = "A")]
    pub a: f64,
    pub coeffs: [f64; 4],
    pub predicted: [f64; 4],
    /// RMS misfit of the cubic over the sampled graph.
    pub fit_residual: f64,
    /// Largest `|X|`, `|Y|` along the computed graph.
    pub strong_residual: f64,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let i = match xs.partition_point(|v| *v < x) {
        0 => 1,
        i if i >= n => n - 1,
        i => i,
    };
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Local unstable graph `R = w(Phi)` of the fixed point of `T_k` over
/// `Phi in [-1, 1]`, by graph transform in cross form, then a cubic fit.
pub fn unstable_graph(fam: &ReturnFamily, k: i64) -> Result<ManifoldGraph> {
    let fp = rescaled_fixed_point(fam, k)?;
    let n = fam.model.n();
    let xs_fp = fp.point[2..2 + n].to_vec();
    let ys_fp = fp.point[2 + n..].to_vec();
    let alpha = fam.model.alpha;
    let c = fp.a;
    let npts = 200;
    let grid: Vec<f64> = (0..npts).map(|i| -1.0 + 2.0 * i as f64 / (npts - 1) as f64).collect();
    let mut w: Vec<f64> = vec![fp.point[0]; npts];
    let mut strong = 0.0f64;
    let eval = |r: f64, phi: f64| -> Result<(CrossOut, DMatrix<f64>)> {
        let (o, j) = cross_return(
            fam,
            k,
            &CrossIn {
                r,
                phi,
                x: xs_fp.clone(),
                y_out: ys_fp.clone(),
            },
            true,
        )?;
        Ok((o, j.unwrap()))
    };
    for _ in 0..40 {
        let mut next = vec![0.0; npts];
        strong = 0.0;
        for (i, &target) in grid.iter().enumerate() {
            let mut phi = (target - c) / alpha;
            let mut out = None;
            for _ in 0..30 {
                let r = interp(&grid, &w, phi);
                let h = 1e-7;
                let slope = (interp(&grid, &w, phi + h) - interp(&grid, &w, phi - h)) / (2.0 * h);
                let (o, j) = eval(r, phi)?;
                let f = o.phi - target;
                let df = j[(1, 1)] + j[(1, 0)] * slope;
                let step = f / df;
                phi -= step;
                out = Some(o);
                if step.abs() < 1e-14 {
                    break;
                }
            }
            let (o, _) = eval(interp(&grid, &w, phi), phi)?;
            let _ = out;
            next[i] = o.r;
            strong = strong.max(sup(&o.x)).max(sup(&o.y_in));
        }
        w = next;
    }
    let coeffs_v = polyfit(&grid, &w, 3)?;
    if coeffs_v.iter().any(|v| !v.is_finite()) {
        return Err(Error::solver("unstable graph fit", f64::NAN));
    }
    let coeffs = [coeffs_v[0], coeffs_v[1], coeffs_v[2], coeffs_v[3]];
    let fit_residual = (grid
        .iter()
        .zip(&w)
        .map(|(x, y)| {
            let p = coeffs[0] + x * (coeffs[1] + x * (coeffs[2] + x * coeffs[3]));
            (p - y).powi(2)
        })
        .sum::<f64>()
        / npts as f64)
        .sqrt();
    Ok(ManifoldGraph {
        side: ManifoldSide::U,
        k,
        a: c,
        coeffs,
        predicted: unstable_coeffs(alpha, fam.model.beta, c),
        fit_residual,
        strong_residual: strong,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingStatus {
    Transverse,
    Tangent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub status: CrossingStatus,
    /// Smallest crossing angle (radians) among the real roots in the window.
    pub angle: f64,
    pub roots: Vec<f64>,
    /// Coefficients of `Rtilde(Phi)` along the image of the graph.
    pub image_coeffs: [f64; 4],
}

impl CrossingReport {
    pub fn transverse(&self) -> bool {
        self.status == CrossingStatus::Transverse
    }
}

fn real_cubic_roots(c: &[f64; 4]) -> Vec<f64> {
    let lead = c[3];
    if lead == 0.0 {
        return Vec::new();
    }
    let (b, cc, d) = (c[2] / lead, c[1] / lead, c[0] / lead);
    let f = |x: f64| d + x * (cc + x * (b + x));
    // one real root by bisection on a Cauchy bracket, polished by Newton
    let bound = 1.0 + b.abs().max(cc.abs()).max(d.abs());
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut x0 = 0.5 * (lo + hi);
    for _ in 0..5 {
        let df = cc + x0 * (2.0 * b + 3.0 * x0);
        if df == 0.0 {
            break;
        }
        let nx = x0 - f(x0) / df;
        if f(nx).abs() < f(x0).abs() {
            x0 = nx;
        } else {
            break;
        }
    }
    // deflate: x^2 + p x + r
    let p = b + x0;
    let r = cc + p * x0;
    let disc = p * p - 4.0 * r;
    let mut out = vec![x0];
    if disc >= 0.0 {
        let sq = disc.sqrt();
        out.push(0.5 * (-p - sq));
        out.push(0.5 * (-p + sq));
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Transversality of the graph `Rtilde = c0 + c1 Phi + c2 Phi^2 + c3 Phi^3`
/// to `Rtilde = 0`: a perfect cube is a tangency; otherwise the smallest
/// crossing angle over the real roots in `[-window, window]` decides.
pub fn crossing_from_coeffs(c: [f64; 4], window: f64, angle_tol: f64) -> CrossingReport {
    let scale = c.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * scale * scale;
    let perfect_cube = c[3] != 0.0 && rel(c[2] * c[2], 3.0 * c[1] * c[3]) && rel(c[1] * c[1], 3.0 * c[0] * c[2]);
    let roots: Vec<f64> = real_cubic_roots(&c).into_iter().filter(|r| r.abs() <= window).collect();
    let angle = roots
        .iter()
        .map(|x| (c[1] + x * (2.0 * c[2] + 3.0 * x * c[3])).abs().atan())
        .fold(f64::INFINITY, f64::min);
    let status = if perfect_cube || roots.is_empty() || !(angle > angle_tol) {
        CrossingStatus::Tangent
    } else {
        CrossingStatus::Transverse
    };
    CrossingReport {
        status,
        angle: if roots.is_empty() { 0.0 } else { angle },
        roots,
        image_coeffs: c,
    }
}

/// Does the `T1` image of the unstable graph of the fixed point of `T_k`
/// cross `W^s(gamma) = {Rtilde = 0, Ytilde = 0}` transversally?
pub fn transverse_heteroclinic_check(fam: &ReturnFamily, k: i64) -> Result<CrossingReport> {
    if fam.scheme != Scheme::Cubic {
        return Err(Error::Precondition("transversality check uses the CUBIC scheme".into()));
    }
    let a = fam.c_of_k(k);
    if a.abs() < 1e-8 {
        return Ok(CrossingReport {
            status: CrossingStatus::Inconclusive,
            angle: 0.0,
            roots: Vec::new(),
            image_coeffs: [0.0; 4],
        });
    }
    let g = unstable_graph(fam, k)?;
    Ok(transversality_of_graph(&fam.model, &g.coeffs, 1e-4))
}

/// `Rtilde = w(Phi)/alpha + beta (alpha Phi)^3` for the graph `w`.
pub fn transversality_of_graph(m: &ModelSpec, w: &[f64; 4], angle_tol: f64) -> CrossingReport {
    let a = m.alpha;
    let c = [w[0] / a, w[1] / a, w[2] / a, w[3] / a + m.beta * a.powi(3)];
    crossing_from_coeffs(c, 1.0, angle_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::returns::pin_offset;

    #[test]
    fn margin_examples() {
        let c = ConeSpec::new(0.1).unwrap();
        assert!((cone_margin(&[0.0, 1.0, 0.0, 0.0], &c, ConeKind::U).unwrap() - 0.1).abs() < 1e-15);
        assert!((cone_margin(&[1.0, 0.0, 0.0, 0.0], &c, ConeKind::U).unwrap() + 1.0).abs() < 1e-15);
        assert!((cone_margin(&[0.0, 0.0, 0.0, 1.0], &c, ConeKind::UU).unwrap() - 0.1).abs() < 1e-15);
        assert!(cone_margin(&[0.0; 4], &c, ConeKind::U).is_err());
    }

    #[test]
    fn coefficient_examples() {
        let c = unstable_coeffs(2.0, 1.0, 0.6);
        assert!((c[3] - 16.0 / 15.0).abs() < 1e-12);
        assert!((c[2] + 2.1943).abs() < 1e-4);
        assert_eq!(&unstable_coeffs(2.0, 1.0, 0.0)[..3], &[0.0, 0.0, 0.0]);
        let (r, p) = fixed_point_formula(2.0, 1.0, 0.6);
        assert!((p + 0.6).abs() < 1e-15 && (r + 3.456).abs() < 1e-12);
    }

    #[test]
    fn crossing_controls() {
        assert_eq!(crossing_from_coeffs([0.0, 0.0, 0.0, 2.0], 1.0, 1e-4).status, CrossingStatus::Tangent);
        // (Phi + 0.5)^3
        assert_eq!(crossing_from_coeffs([0.125, 0.75, 1.5, 1.0], 1.0, 1e-4).status, CrossingStatus::Tangent);
        let r = crossing_from_coeffs([0.1, 1.0, 0.0, 1.0], 1.0, 1e-4);
        assert!(r.transverse() && r.roots.len() == 1);
    }

    #[test]
    fn fixed_point_in_symbol_limit() {
        let f = ReturnFamily::for_q(ModelSpec::canonical(), 144, Scheme::Ifs).unwrap();
        let k = f.returns.k[0];
        let o = coding_orbit(&f, &Coding::periodic(vec![k]), 1e-10).unwrap();
        let phi_lim = f.c_of_k(k) / (1.0 - 3.0);
        assert!((o.rescaled[0][1] - phi_lim).abs() < 0.1, "{} vs {}", o.rescaled[0][1], phi_lim);
        assert_eq!(o.unstable_count, 2);
    }

    fn pinned(q: i64, a: f64) -> (ReturnFamily, i64) {
        let mut m = ModelSpec::canonical();
        m.alpha = 2.0;
        let base = ReturnFamily::for_q(m.clone(), q, Scheme::Cubic).unwrap();
        let k = base.returns.k[0];
        let f = ReturnFamily::for_q(pin_offset(&m, k, base.delta(), a), q, Scheme::Cubic).unwrap();
        (f, k)
    }

    #[test]
    fn cubic_fixed_point_and_graph() {
        let (f, k) = pinned(233, 0.6);
        assert!((f.c_of_k(k) - 0.6).abs() < 1e-9);
        let gap233 = rescaled_fixed_point(&f, k).unwrap().formula_gap;
        let (f987, k987) = pinned(987, 0.6);
        let gap987 = rescaled_fixed_point(&f987, k987).unwrap().formula_gap;
        assert!(gap987 < 0.5 * gap233, "{gap233} {gap987}");
        let (f, k) = pinned(2584, 0.0);
        let g = unstable_graph(&f, k).unwrap();
        assert!((g.coeffs[3] / g.predicted[3] - 1.0).abs() < 0.03, "{:?}", g.coeffs);
        assert!(g.coeffs[0].abs() < 1e-9 && g.coeffs[2].abs() < 1e-9);
        let t = transverse_heteroclinic_check(&f987, k987).unwrap();
        assert!(t.transverse(), "{t:?}");
        assert_eq!(transverse_heteroclinic_check(&f, k).unwrap().status, CrossingStatus::Inconclusive);
    }
}
