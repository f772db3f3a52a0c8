//! Sampled strong-unstable discs, the covering property, and the end-to-end
//! blender certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diophantine::{convergents, RationalApprox};
use crate::error::{Error, Result};
use crate::geometry::{BoxSpec, Scheme};
use crate::hyperbolic::{cone_report, coding_orbit, Coding, ConeReport};
use crate::model::ModelSpec;
use crate::returns::{cross_return, default_d, CrossIn, ReturnFamily};

pub const DEFAULT_KAPPA: f64 = 0.05;
pub const DEFAULT_L: f64 = 0.1;

/// Graph `Y -> (R, Phi, X)` sampled on a tensor grid over `[-1, 1]^(N-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscSample {
    pub per_axis: usize,
    pub nodes: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// Largest finite-difference slope between grid neighbours.
    pub lipschitz: f64,
}

fn axis(per_axis: usize) -> Vec<f64> {
    (0..per_axis).map(|i| -1.0 + 2.0 * i as f64 / (per_axis - 1) as f64).collect()
}

fn tensor_nodes(n: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let ax = axis(per_axis);
    let mut nodes = vec![Vec::new()];
    for _ in 0..n {
        nodes = nodes
            .into_iter()
            .flat_map(|p| {
                ax.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    nodes
}

impl DiscSample {
    pub fn from_fn(n: usize, per_axis: usize, f: impl Fn(&[f64]) -> (f64, f64, Vec<f64>)) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::domain("a disc needs at least two samples per axis"));
        }
        let nodes = tensor_nodes(n, per_axis);
        let mut r = Vec::with_capacity(nodes.len());
        let mut phi = Vec::with_capacity(nodes.len());
        let mut x = Vec::with_capacity(nodes.len());
        for y in &nodes {
            let (a, b, c) = f(y);
            r.push(a);
            phi.push(b);
            x.push(c);
        }
        let mut d = DiscSample {
            per_axis,
            nodes,
            r,
            phi,
            x,
            lipschitz: 0.0,
        };
        d.lipschitz = d.estimate_lipschitz();
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.nodes.first().map(|v| v.len()).unwrap_or(0)
    }

    /// The vertical leaf `R = r0, Phi = phi0, X = x0`.
    pub fn leaf(n: usize, per_axis: usize, r0: f64, phi0: f64, x0: f64) -> Result<Self> {
        DiscSample::from_fn(n, per_axis, |_| (r0, phi0, vec![x0; n]))
    }

    fn index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.per_axis + i)
    }

    fn estimate_lipschitz(&self) -> f64 {
        let n = self.n();
        let h = 2.0 / (self.per_axis - 1) as f64;
        let mut lip = 0.0f64;
        for (idx, _) in self.nodes.iter().enumerate() {
            let mut multi = vec![0; n];
            let mut rem = idx;
            for a in (0..n).rev() {
                multi[a] = rem % self.per_axis;
                rem /= self.per_axis;
            }
            for a in 0..n {
                if multi[a] + 1 < self.per_axis {
                    let mut nb = multi.clone();
                    nb[a] += 1;
                    let j = self.index(&nb);
                    let dr = (self.r[j] - self.r[idx]).abs();
                    let dp = (self.phi[j] - self.phi[idx]).abs();
                    let dx = self.x[j].iter().zip(&self.x[idx]).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
                    lip = lip.max(dr.max(dp).max(dx) / h);
                }
            }
        }
        lip
    }

    /// Multilinear interpolation of `(R, Phi, X)` at `y`.
    pub fn eval(&self, y: &[f64]) -> (f64, f64, Vec<f64>) {
        let n = self.n();
        let m = self.per_axis;
        let h = 2.0 / (m - 1) as f64;
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for a in 0..n {
            let t = ((y[a].clamp(-1.0, 1.0) + 1.0) / h).min((m - 1) as f64);
            let i = (t.floor() as usize).min(m - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let (mut r, mut p) = (0.0, 0.0);
        let mut x = vec![0.0; n];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut multi = base.clone();
            for a in 0..n {
                if corner >> a & 1 == 1 {
                    multi[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let j = self.index(&multi);
            r += w * self.r[j];
            p += w * self.phi[j];
            for i in 0..n {
                x[i] += w * self.x[j][i];
            }
        }
        (r, p, x)
    }
}

/// Smallest clearance of the graph inside the central extent of `bx`
/// over the box's Y-range; positive iff the disc crosses the box.
pub fn crossing_margin(d: &DiscSample, bx: &BoxSpec) -> Result<f64> {
    let y_lo = bx.y_center - bx.y_half;
    let y_hi = bx.y_center + bx.y_half;
    if y_lo < -1.0 - 1e-12 || y_hi > 1.0 + 1e-12 {
        return Err(Error::Resolution("disc grid does not cover the box's Y-extent".into()));
    }
    let spacing = 2.0 / (d.per_axis - 1) as f64;
    if (y_hi - y_lo) / spacing + 1.0 < 8.0 - 1e-9 {
        return Err(Error::Resolution(format!(
            "fewer than 8 disc samples across the box (per_axis = {})",
            d.per_axis
        )));
    }
    let mut m = f64::INFINITY;
    for (i, y) in d.nodes.iter().enumerate() {
        if y.iter().any(|v| *v < y_lo - 1e-12 || *v > y_hi + 1e-12) {
            continue;
        }
        m = m.min(bx.central_clearance(d.r[i], d.phi[i], &d.x[i]));
    }
    Ok(m)
}

pub fn crosses(d: &DiscSample, bx: &BoxSpec) -> Result<bool> {
    Ok(crossing_margin(d, bx)? > 0.0)
}

/// Random `C^uu`-tangent disc crossing `Pi_d`, with Lipschitz bound below
/// `0.9 L`: affine part plus a small sine bump in each coordinate.
pub fn random_disc(rng: &mut ChaCha8Rng, n: usize, per_axis: usize, d: f64, l: f64) -> Result<DiscSample> {
    let budget = 0.9 * l;
    let mut coord = |half: f64| -> (f64, Vec<f64>, Vec<f64>) {
        let reach = budget * n as f64;
        let c = rng.gen_range(-(half - reach)..(half - reach));
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5 * budget..0.5 * budget)).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.4 * budget..0.4 * budget)).collect();
        (c, s, a)
    };
    let r = coord(0.95);
    let p = coord(d * 0.95);
    let xs: Vec<_> = (0..n).map(|_| coord(0.95)).collect();
    let f = |c: &(f64, Vec<f64>, Vec<f64>), y: &[f64]| -> f64 {
        c.0 + (0..n)
            .map(|i| c.1[i] * y[i] + c.2[i] * (std::f64::consts::PI * y[i]).sin() / std::f64::consts::PI)
            .sum::<f64>()
    };
    DiscSample::from_fn(n, per_axis, |y| (f(&r, y), f(&p, y), xs.iter().map(|c| f(c, y)).collect()))
}

/// `T_k` image of a disc, reparameterized over `Ybar`. The start value `Y`
/// of each orbit solves `Y = h4(R(Y), Phi(Y), X(Y), Ybar)` by Picard.
pub fn image_disc(fam: &ReturnFamily, k: i64, d: &DiscSample) -> Result<DiscSample> {
    let n = d.n();
    let rows: Vec<(f64, f64, Vec<f64>)> = d
        .nodes
        .iter()
        .map(|yb| -> Result<(f64, f64, Vec<f64>)> {
            let mut y = vec![0.0; n];
            let mut out = None;
            for _ in 0..50 {
                let (r, p, x) = d.eval(&y);
                let (o, _) = cross_return(
                    fam,
                    k,
                    &CrossIn {
                        r,
                        phi: p,
                        x,
                        y_out: yb.clone(),
                    },
                    false,
                )?;
                let change = o.y_in.iter().zip(&y).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
                y = o.y_in.clone();
                out = Some(o);
                if change <= 1e-14 {
                    break;
                }
            }
            let o = out.unwrap();
            if y.iter().any(|v| v.abs() > 1.0) {
                return Err(Error::domain("image disc start point leaves the Y-range"));
            }
            Ok((o.r, o.phi, o.x))
        })
        .collect::<Result<_>>()?;
    let lookup: Vec<_> = rows;
    let nodes = d.nodes.clone();
    let mut img = DiscSample {
        per_axis: d.per_axis,
        nodes,
        r: lookup.iter().map(|v| v.0).collect(),
        phi: lookup.iter().map(|v| v.1).collect(),
        x: lookup.iter().map(|v| v.2.clone()).collect(),
        lipschitz: 0.0,
    };
    img.lipschitz = img.estimate_lipschitz();
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringStep {
    pub k: i64,
    pub margin: f64,
    pub lipschitz_in: f64,
    pub lipschitz_out: f64,
    /// Crossing margin of every candidate `k` in `K_q`, in order.
    pub per_k: Vec<(i64, f64)>,
}

/// One covering step: among `k` in `K_q`, the image crossing `Pi'_d` with the
/// largest margin (ties to the smaller `k`).
pub fn covering_step(fam: &ReturnFamily, d: &DiscSample, kappa: f64, l: f64) -> Result<(CoveringStep, DiscSample)> {
    let pi_d = BoxSpec::pi_d(fam.d())?;
    if !(crossing_margin(d, &pi_d)? > 0.0) {
        return Err(Error::Precondition("input disc does not cross Pi_d".into()));
    }
    if d.lipschitz > l {
        return Err(Error::Precondition(format!("input disc slope {} exceeds L = {l}", d.lipschitz)));
    }
    let target = BoxSpec::pi_prime(fam.d(), kappa)?;
    let mut per_k = Vec::with_capacity(fam.returns.k.len());
    let mut best: Option<(i64, f64, DiscSample)> = None;
    for &k in &fam.returns.k {
        let margin = match image_disc(fam, k, d) {
            Ok(img) => {
                let m = crossing_margin(&img, &target)?;
                let m = if img.lipschitz <= l { m } else { m.min(l - img.lipschitz) };
                if best.as_ref().map_or(true, |b| m > b.1) {
                    best = Some((k, m, img));
                }
                m
            }
            Err(Error::DomainExit { .. }) | Err(Error::Domain(_)) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        per_k.push((k, margin));
    }
    match best {
        Some((k, m, img)) if m > 0.0 => Ok((
            CoveringStep {
                k,
                margin: m,
                lipschitz_in: d.lipschitz,
                lipschitz_out: img.lipschitz,
                per_k,
            },
            img,
        )),
        _ => Err(Error::Certification(format!("no k in K_q covers the disc; per-k margins {per_k:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringChain {
    pub seed: usize,
    pub word: Vec<i64>,
    pub margins: Vec<f64>,
    pub complete: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub n_discs: usize,
    pub n_steps: usize,
    pub kappa: f64,
    pub margin_min: f64,
    pub success_rate: f64,
    /// Largest ratio of output to input disc slope over all steps.
    pub lipschitz_ratio_max: f64,
    pub chains: Vec<CoveringChain>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringOptions {
    pub n_discs: usize,
    pub n_steps: usize,
    pub kappa: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub per_axis: usize,
    pub seed: u64,
}

impl Default for CoveringOptions {
    fn default() -> Self {
        CoveringOptions {
            n_discs: 200,
            n_steps: 10,
            kappa: DEFAULT_KAPPA,
            l: DEFAULT_L,
            per_axis: 33,
            seed: 0,
        }
    }
}

/// Chains of covering steps from seeded random discs.
pub fn covering_sweep(fam: &ReturnFamily, opts: &CoveringOptions) -> Result<CoveringReport> {
    if opts.n_steps < 1 {
        return Err(Error::domain("n_steps must be at least 1"));
    }
    let n = fam.model.n();
    let d = fam.d();
    let seeds: Vec<DiscSample> = {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        (0..opts.n_discs)
            .map(|_| random_disc(&mut rng, n, opts.per_axis, d, opts.l))
            .collect::<Result<_>>()?
    };
    let chains: Vec<(CoveringChain, f64)> = seeds
        .into_par_iter()
        .enumerate()
        .map(|(i, disc)| -> Result<(CoveringChain, f64)> {
            let mut cur = disc;
            let mut chain = CoveringChain {
                seed: i,
                word: Vec::new(),
                margins: Vec::new(),
                complete: false,
                failure: None,
            };
            let mut ratio = 0.0f64;
            for _ in 0..opts.n_steps {
                match covering_step(fam, &cur, opts.kappa, opts.l) {
                    Ok((step, img)) => {
                        chain.word.push(step.k);
                        chain.margins.push(step.margin);
                        if step.lipschitz_in > 0.0 {
                            ratio = ratio.max(step.lipschitz_out / step.lipschitz_in);
                        }
                        cur = img;
                    }
                    Err(e @ Error::Certification(_)) | Err(e @ Error::Precondition(_)) => {
                        chain.failure = Some(e.to_string());
                        return Ok((chain, ratio));
                    }
                    Err(e) => return Err(e),
                }
            }
            chain.complete = true;
            Ok((chain, ratio))
        })
        .collect::<Result<_>>()?;
    let done = chains.iter().filter(|c| c.0.complete).count();
    let margin_min = chains
        .iter()
        .flat_map(|c| c.0.margins.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let lipschitz_ratio_max = chains.iter().map(|c| c.1).fold(0.0f64, f64::max);
    let success_rate = if chains.is_empty() { 0.0 } else { done as f64 / chains.len() as f64 };
    Ok(CoveringReport {
        n_discs: opts.n_discs,
        n_steps: opts.n_steps,
        kappa: opts.kappa,
        margin_min,
        success_rate,
        lipschitz_ratio_max,
        pass: done == chains.len() && !chains.is_empty(),
        chains: chains.into_iter().map(|c| c.0).collect(),
    })
}

/// Largest `min_k |c(k) + alpha Phi| - d` over a `Phi`-grid of `[-d, d]`;
/// negative means every grid value is covered with the strict inequality.
pub fn phase_cover_check(fam: &ReturnFamily, n_grid: usize) -> (bool, f64) {
    let d = fam.d();
    let a = fam.model.alpha;
    let cs: Vec<f64> = fam.returns.k.iter().map(|&k| fam.c_of_k(k)).collect();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n_grid {
        let phi = -d + 2.0 * d * i as f64 / (n_grid - 1) as f64;
        let best = cs.iter().map(|c| (c + a * phi).abs()).fold(f64::INFINITY, f64::min);
        worst = worst.max(best - d);
    }
    (worst < 0.0, worst)
}

// ---- certificate ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSummary {
    #[serde(rename = "L")]
    pub l: f64,
    pub margin_min: f64,
    pub expansion_min: f64,
    pub contraction_max: f64,
    pub points_tested: usize,
}

impl From<&ConeReport> for ConeSummary {
    fn from(r: &ConeReport) -> Self {
        ConeSummary {
            l: r.l,
            margin_min: r.margin_min,
            expansion_min: r.expansion_min,
            contraction_max: r.contraction_max,
            points_tested: r.points_tested,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringSummary {
    pub n_discs: usize,
    pub n_steps: usize,
    pub margin_min: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingCheck {
    pub word: Vec<i64>,
    pub residual: f64,
    pub unstable_count: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDiagnostic {
    pub q: i64,
    pub cone: Option<ConeSummary>,
    pub cone_pass: bool,
    pub covering: Option<CoveringSummary>,
    pub covering_pass: bool,
    pub codings_pass: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlenderCertificate {
    pub model: ModelSpec,
    pub model_hash: String,
    pub q: Option<i64>,
    pub p: Option<i64>,
    pub delta: Option<f64>,
    pub d: f64,
    pub kappa: f64,
    #[serde(rename = "K")]
    pub k: Vec<i64>,
    pub offsets: Vec<f64>,
    pub cone: Option<ConeSummary>,
    pub covering: Option<CoveringSummary>,
    pub codings: Vec<CodingCheck>,
    pub diagnostics: Vec<QDiagnostic>,
    pub method: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    #[serde(rename = "L")]
    pub l: f64,
    pub cone_grid: usize,
    pub covering: CoveringOptions,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions {
            l: DEFAULT_L,
            cone_grid: 16,
            covering: CoveringOptions::default(),
        }
    }
}

/// Convergent denominators of `rho` in `[89, 400000]`.
pub fn default_q_list(m: &ModelSpec) -> Result<Vec<i64>> {
    Ok(convergents(&m.rho, 400_000)?
        .into_iter()
        .map(|a: RationalApprox| a.q)
        .filter(|q| *q >= 89)
        .collect())
}

/// SHA-256 of the model's JSON form, hex encoded.
pub fn model_hash(m: &ModelSpec) -> String {
    let bytes = serde_json::to_vec(m).expect("model serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Try each `q` in increasing order; the first one passing the cone check,
/// the covering sweep and two coding-orbit spot checks is certified.
pub fn blender_certificate(m: &ModelSpec, q_list: &[i64], opts: &CertificateOptions) -> Result<BlenderCertificate> {
    m.validate()?;
    if m.alpha.abs() < 1.0 {
        return Err(Error::Precondition(
            "|alpha| < 1: invert the model (the cs-blender case reduces to |alpha| > 1)".into(),
        ));
    }
    if m.alpha.abs() == 1.0 {
        return Err(Error::Precondition("|alpha| = 1 gives d = 0: no blender box".into()));
    }
    if m.ell != 2 {
        return Err(Error::Precondition("certificate requires ell = 2".into()));
    }
    let d = default_d(m.alpha);
    let mut qs = q_list.to_vec();
    qs.sort_unstable();
    qs.dedup();
    let mut cert = BlenderCertificate {
        model: m.clone(),
        model_hash: model_hash(m),
        q: None,
        p: None,
        delta: None,
        d,
        kappa: opts.covering.kappa,
        k: Vec::new(),
        offsets: Vec::new(),
        cone: None,
        covering: None,
        codings: Vec::new(),
        diagnostics: Vec::new(),
        method: "floating-point sampling; not an interval-validated proof".into(),
        pass: false,
    };
    for q in qs {
        let mut diag = QDiagnostic {
            q,
            cone: None,
            cone_pass: false,
            covering: None,
            covering_pass: false,
            codings_pass: false,
            note: None,
        };
        let fam = match ReturnFamily::for_q(m.clone(), q, Scheme::Ifs) {
            Ok(f) => f,
            Err(e) => {
                diag.note = Some(e.to_string());
                cert.diagnostics.push(diag);
                continue;
            }
        };
        let cones = cone_report(&fam, opts.l, opts.cone_grid)?;
        diag.cone = Some(ConeSummary::from(&cones));
        diag.cone_pass = cones.pass;
        if !cones.pass {
            diag.note = Some("cone margins not positive; covering and codings skipped".into());
            cert.diagnostics.push(diag);
            continue;
        }
        let cov = covering_sweep(&fam, &opts.covering)?;
        let cov_sum = CoveringSummary {
            n_discs: cov.n_discs,
            n_steps: cov.n_steps,
            margin_min: cov.margin_min,
            success_rate: cov.success_rate,
        };
        diag.covering = Some(cov_sum.clone());
        diag.covering_pass = cov.pass;
        let ks = &fam.returns.k;
        let words = [vec![ks[0]], vec![ks[0], ks[ks.len() - 1]]];
        let mut codings = Vec::new();
        for w in words {
            let check = match coding_orbit(&fam, &Coding::periodic(w.clone()), 1e-9) {
                Ok(o) => CodingCheck {
                    word: w,
                    residual: o.residual,
                    unstable_count: o.unstable_count,
                    pass: o.residual <= 1e-9 && o.unstable_count == m.N,
                },
                Err(Error::Solver { residual, .. }) => CodingCheck {
                    word: w,
                    residual,
                    unstable_count: 0,
                    pass: false,
                },
                Err(e) => return Err(e),
            };
            codings.push(check);
        }
        diag.codings_pass = codings.iter().all(|c| c.pass);
        let ok = diag.cone_pass && diag.covering_pass && diag.codings_pass;
        cert.diagnostics.push(diag);
        if ok {
            cert.q = Some(q);
            cert.p = Some(fam.approx.p);
            cert.delta = Some(fam.delta());
            cert.k = fam.returns.k.clone();
            cert.offsets = fam.returns.offsets.clone();
            cert.cone = Some(ConeSummary::from(&cones));
            cert.covering = Some(cov_sum);
            cert.codings = codings;
            cert.pass = true;
            break;
        }
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_examples() {
        let leaf = DiscSample::leaf(1, 33, 0.0, 0.0, 0.0).unwrap();
        for d in [0.1, 0.5, 0.9] {
            assert!(crosses(&leaf, &BoxSpec::pi_d(d).unwrap()).unwrap());
        }
        let eps = 0.01;
        let flat = DiscSample::leaf(1, 33, 0.0, 0.5 * (1.0 + eps), 0.0).unwrap();
        assert!(!crosses(&flat, &BoxSpec::pi_d(0.5).unwrap()).unwrap());
        let tilt = DiscSample::from_fn(1, 33, |y| (0.0, 0.05 * y[0], vec![0.0])).unwrap();
        assert!(tilt.lipschitz <= 0.1 + 1e-12);
        assert!(crosses(&tilt, &BoxSpec::pi_d(0.5).unwrap()).unwrap());
        let coarse = DiscSample::leaf(1, 5, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(crosses(&coarse, &BoxSpec::pi_d(0.5).unwrap()), Err(Error::Resolution(_))));
    }

    #[test]
    fn leaf_selection_rule() {
        let fam = ReturnFamily::for_q(ModelSpec::canonical(), 144, Scheme::Ifs).unwrap();
        let leaf = DiscSample::leaf(1, 33, 0.0, 0.0, 0.0).unwrap();
        let (step, img) = covering_step(&fam, &leaf, DEFAULT_KAPPA, DEFAULT_L).unwrap();
        let best = fam
            .returns
            .k
            .iter()
            .copied()
            .min_by(|a, b| fam.c_of_k(*a).abs().total_cmp(&fam.c_of_k(*b).abs()))
            .unwrap();
        assert_eq!(step.k, best);
        assert!(img.lipschitz <= leaf.lipschitz + 1e-12);
    }

    #[test]
    fn small_sweep_completes() {
        let fam = ReturnFamily::for_q(ModelSpec::canonical(), 144, Scheme::Ifs).unwrap();
        let opts = CoveringOptions {
            n_discs: 8,
            n_steps: 3,
            ..Default::default()
        };
        let rep = covering_sweep(&fam, &opts).unwrap();
        assert!(rep.pass, "{:?}", rep.chains.iter().find(|c| !c.complete));
        assert!(rep.margin_min >= DEFAULT_KAPPA / 2.0);
    }

    #[test]
    fn certificate_preconditions() {
        let mut m = ModelSpec::canonical();
        m.alpha = 0.5;
        assert!(matches!(
            blender_certificate(&m, &[144], &CertificateOptions::default()),
            Err(Error::Precondition(_)) | Err(Error::Domain(_))
        ));
        assert!((default_d(3.0) - 0.5).abs() < 1e-16);
        assert!((default_d(1.05) - 0.024390243902439).abs() < 1e-12);
    }
}
