//! Acceptance criteria, one test per criterion. Each test prints a single
//! `criterion N: PASS|FAIL` line with its measurements and wall time; the
//! tests share a lock so the timings are not distorted by each other.

use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use blender_lab::blender::{covering_sweep, phase_cover_check, CoveringOptions};
use blender_lab::diophantine::{convergents, gcd, solve_covering_congruence, Rotation};
use blender_lab::hyperbolic::{
    coding_orbit, cone_report, orbit_distance, rescaled_fixed_point, unstable_coeffs, unstable_graph, Coding,
};
use blender_lab::returns::{family_deviation, pinned_family, solve_t0_bvp, ReturnFamily};
use blender_lab::scattering::{
    connect_saddle_center, cubic_from_two_quadratics, scat_spectrum, secondary_cubic_numeric,
    secondary_cubic_params, tangency_residuals, ScatLinear, ScatModel, SecondaryCubicSetup,
};
use blender_lab::{Error, MapKind, ModelSpec, PertKind, PerturbationSpec, PhasePoint, Scheme, Support};
use blenderlab_cli::run::{fixed_point_model, random_words};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

/// Runs one criterion under the shared lock, prints its line and fails the
/// test when a check or the time budget is missed.
fn criterion(n: u32, budget_s: u64, body: impl FnOnce() -> (bool, String)) {
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let (ok, detail) = body();
    let dt = t.elapsed();
    let in_time = dt <= Duration::from_secs(budget_s);
    let pass = ok && in_time;
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n}: {verdict} ({detail}; {:.2} s of {budget_s} s{})",
        dt.as_secs_f64(),
        if in_time { "" } else { ", over budget" }
    );
    assert!(pass, "criterion {n} failed: {detail}; {:.2} s", dt.as_secs_f64());
}

fn coupled_model() -> ModelSpec {
    let mut m = ModelSpec::canonical();
    m.couple = 0.05;
    m.inner_pert = 1e-3;
    m
}

fn random_point(rng: &mut ChaCha8Rng, m: &ModelSpec, center: &PhasePoint, radius: f64) -> PhasePoint {
    let mut u = |c: f64, h: f64| c + rng.gen_range(-h..h);
    let r = u(center.r, radius.min(m.r_max));
    let phi = u(center.phi, radius.min(0.5));
    let x = center.x.iter().map(|&c| u(c, radius)).collect();
    let y = center.y.iter().map(|&c| u(c, radius)).collect();
    PhasePoint::new(r, phi, x, y)
}

/// Central-difference Jacobian of `kind`, on the unwrapped angle.
fn fd_jacobian(m: &ModelSpec, kind: &MapKind, p: &PhasePoint) -> Vec<Vec<f64>> {
    let v = p.to_vec();
    let dim = v.len();
    let h = 1e-6;
    let mut j = vec![vec![0.0; dim]; dim];
    for c in 0..dim {
        let mut a = v.clone();
        let mut b = v.clone();
        a[c] += h;
        b[c] -= h;
        let fa = m.apply(kind, &PhasePoint::from_slice(&a)).unwrap().to_vec();
        let fb = m.apply(kind, &PhasePoint::from_slice(&b)).unwrap().to_vec();
        for r in 0..dim {
            let mut d = fa[r] - fb[r];
            if r == 1 {
                d -= (d + 0.5).floor();
            }
            j[r][c] = d / (2.0 * h);
        }
    }
    j
}

#[test]
fn criterion_01_symplecticity() {
    criterion(1, 5, || {
        let m = coupled_model();
        let n = m.n();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gens = [
            (PertKind::Shear, vec![0.01, 0.02, 0.05], Support::NearMPlus),
            (PertKind::AlphaScale, vec![0.1], Support::NearMMinus),
            (PertKind::Translate, vec![0.01, 0.03], Support::NearMPlus),
            (PertKind::Rotate, vec![0.07], Support::Inner),
            (PertKind::Twist, vec![0.3], Support::Inner),
        ];
        let center_v = PhasePoint::new(0.0, 0.5, vec![0.0; n], vec![0.0; n]);
        let mut maps: Vec<(MapKind, PhasePoint, f64)> = vec![
            (MapKind::T0, center_v.clone(), 0.45),
            (MapKind::T1, m.anchor_point(blender_lab::Anchor::Minus), m.t1_radius * 0.99),
            (MapKind::T1Inverse, m.anchor_point(blender_lab::Anchor::Plus), m.t1_radius * 0.99),
        ];
        for (kind, coefficients, support) in gens {
            maps.push((
                MapKind::Generator(PerturbationSpec { kind, coefficients, support }),
                center_v.clone(),
                0.45,
            ));
        }
        let mut worst = 0.0f64;
        let mut fd_worst = 0.0f64;
        for (kind, center, radius) in &maps {
            for i in 0..10_000 {
                let p = random_point(&mut rng, &m, center, *radius);
                worst = worst.max(m.symplectic_defect(kind, &p).unwrap());
                if i % 100 == 0 {
                    let j = m.jacobian(kind, &p).unwrap();
                    let fd = fd_jacobian(&m, kind, &p);
                    for (r, row) in fd.iter().enumerate() {
                        for (c, v) in row.iter().enumerate() {
                            fd_worst = fd_worst.max((v - j[(r, c)]).abs() / (1.0 + v.abs()));
                        }
                    }
                }
            }
        }
        let ok = worst <= 1e-12 && fd_worst <= 1e-6;
        (ok, format!("max defect {worst:.2e} over 8 maps x 1e4 points, Jacobian vs FD {fd_worst:.2e}"))
    });
}

fn isqrt(n: i128) -> i128 {
    let mut x = (n as f64).sqrt() as i128;
    while x * x > n {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= n {
        x += 1;
    }
    x
}

/// Convergents of `(p0 + sqrt(dd)) / q0` by the exact integer recurrence for
/// quadratic irrationals.
fn quadratic_convergents(p0: i128, dd: i128, q0: i128, q_max: i128) -> Vec<(i128, i128)> {
    let s = isqrt(dd);
    let (mut pp, mut qq) = (p0, q0);
    let (mut h0, mut k0, mut h1, mut k1) = (0i128, 1i128, 1i128, 0i128);
    let mut out: Vec<(i128, i128)> = Vec::new();
    loop {
        let a = (pp + s).div_euclid(qq);
        let (h, k) = (a * h1 + h0, a * k1 + k0);
        if k > q_max {
            break;
        }
        out.push((h, k));
        (h0, k0, h1, k1) = (h1, k1, h, k);
        pp = a * qq - pp;
        qq = (dd - pp * pp) / qq;
    }
    out
}

#[test]
fn criterion_02_diophantine() {
    criterion(2, 2, || {
        let mut ok = true;
        let mut checked = 0;
        for (rho, p0, dd, q0) in [(Rotation::Golden, -1, 5, 2), (Rotation::Silver, -1, 2, 1)] {
            let got: Vec<(i128, i128)> = convergents(&rho, 100_000)
                .unwrap()
                .iter()
                .map(|a| (a.p as i128, a.q as i128))
                .collect();
            // a repeated denominator (q = 1 for golden) keeps the later, closer convergent
            let mut want = quadratic_convergents(p0, dd, q0, 100_000);
            want.reverse();
            want.dedup_by_key(|e| e.1);
            want.reverse();
            ok &= got == want;
            checked += got.len();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cases = 0;
        while cases < 1000 {
            let q: i64 = rng.gen_range(1..200_000);
            let p: i64 = rng.gen_range(0..q.max(2));
            let s: i64 = rng.gen_range(-1_000_000..1_000_000);
            if gcd(p as i128, q as i128) != 1 {
                continue;
            }
            cases += 1;
            let (k, n) = solve_covering_congruence(p, q, s).unwrap();
            let lhs = k as i128 * p as i128 - n as i128 * q as i128;
            ok &= lhs == -(s as i128) && (q..2 * q).contains(&k);
        }
        (ok, format!("{checked} convergents against the exact oracle, {cases} congruences"))
    });
}

#[test]
fn criterion_03_covering() {
    criterion(3, 60, || {
        let m = ModelSpec::canonical();
        let mut ok = true;
        let mut parts = Vec::new();
        for q in [89, 144, 233] {
            let fam = ReturnFamily::for_q(m.clone(), q, Scheme::Ifs).unwrap();
            let d = fam.d();
            ok &= (d - 0.5).abs() < 1e-15;
            let (lib_grid, _) = phase_cover_check(&fam, 400);
            let grid_ok = (0..400).all(|i| {
                let phi = -d + 2.0 * d * i as f64 / 399.0;
                fam.returns.k.iter().any(|&k| (fam.c_of_k(k) + m.alpha * phi).abs() < d)
            });
            let rep = covering_sweep(&fam, &CoveringOptions::default()).unwrap();
            ok &= lib_grid && grid_ok && rep.pass && rep.success_rate == 1.0 && rep.margin_min >= 0.025;
            ok &= rep.chains.len() == 200 && rep.chains.iter().all(|c| c.margins.len() == 10);
            parts.push(format!("q={q} margin {:.3} rate {:.2}", rep.margin_min, rep.success_rate));
        }
        (ok, parts.join(", "))
    });
}

#[test]
fn criterion_04_cones() {
    criterion(4, 30, || {
        let fam = ReturnFamily::for_q(ModelSpec::canonical(), 144, Scheme::Ifs).unwrap();
        let rep = cone_report(&fam, 0.1, 16).unwrap();
        let ok = rep.margin_min > 0.0 && rep.expansion_min >= 2.5 && rep.contraction_max <= 0.45;
        (
            ok,
            format!(
                "margin_min {:.4} (u {:.4}, uu {:.4}, s {:.4}, ss {:.4}), expansion {:.3}, contraction {:.3}",
                rep.margin_min, rep.margin_u, rep.margin_uu, rep.margin_s, rep.margin_ss, rep.expansion_min, rep.contraction_max
            ),
        )
    });
}

#[test]
fn criterion_05_coding_orbits() {
    criterion(5, 30, || {
        let m = ModelSpec::canonical();
        let fam = ReturnFamily::for_q(m.clone(), 144, Scheme::Ifs).unwrap();
        let words = random_words(&fam.returns.k, 50, 4, 5);
        let orbits: Vec<_> = words
            .iter()
            .map(|w| coding_orbit(&fam, &Coding::periodic(w.clone()), 1e-9).unwrap())
            .collect();
        let res = orbits.iter().map(|o| o.residual).fold(0.0f64, f64::max);
        let split = orbits.iter().all(|o| o.unstable_count == m.N);
        let mut sep = f64::INFINITY;
        for i in 0..orbits.len() {
            for j in i + 1..orbits.len() {
                sep = sep.min(orbit_distance(&orbits[i], &orbits[j]));
            }
        }
        let ok = words.len() == 50 && words.iter().all(|w| w.len() <= 4) && res <= 1e-9 && split && sep >= 1e-6;
        (ok, format!("{} words, residual {res:.2e}, spectrum split {split}, separation {sep:.3e}", words.len()))
    });
}

/// Least-squares slope of `log y` against `log delta` and monotonicity with slack.
fn rate(qs: &[i64], ys: &[f64]) -> (f64, bool) {
    let xs: Vec<f64> = qs.iter().map(|&q| (2.5 / q as f64).ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ls.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxy / sxx, ys.windows(2).all(|w| w[1] <= 1.1 * w[0]))
}

#[test]
fn criterion_06_rates() {
    criterion(6, 120, || {
        let qs = [89, 144, 233, 377];
        let (mut c0, mut c1, mut gap) = (Vec::new(), Vec::new(), Vec::new());
        for q in qs {
            let fam = ReturnFamily::for_q(ModelSpec::canonical(), q, Scheme::Ifs).unwrap();
            let dev = family_deviation(&fam, 8).unwrap();
            c0.push(dev.dev_c0);
            c1.push(dev.dev_c1);
            let (pf, k) = pinned_family(&fixed_point_model(), q, 0.6, Scheme::Cubic).unwrap();
            gap.push(rescaled_fixed_point(&pf, k).unwrap().formula_gap);
        }
        let fits = [rate(&qs, &c0), rate(&qs, &c1), rate(&qs, &gap)];
        let ok = fits.iter().all(|(e, mono)| *mono && *e >= 0.4);
        (
            ok,
            format!(
                "exponents C0 {:.3}, C1 {:.3}, fixed point {:.3}; monotone {:?}",
                fits[0].0,
                fits[1].0,
                fits[2].0,
                fits.map(|f| f.1)
            ),
        )
    });
}

#[test]
fn criterion_07_unstable_coefficients() {
    criterion(7, 60, || {
        let m = fixed_point_model();
        let (fam, k) = pinned_family(&m, 377, 0.6, Scheme::Cubic).unwrap();
        let g = unstable_graph(&fam, k).unwrap();
        // closed form of the invariant cubic of Rbar = R/a + b (a Phi)^3, Phibar = A + a Phi
        let a = m.alpha;
        let a3 = a.powi(4) * m.beta / (a.powi(4) - 1.0);
        let want = unstable_coeffs(a, m.beta, 0.6);
        let closed_ok = (a3 - 16.0 / 15.0).abs() < 1e-15 && (want[3] - a3).abs() < 1e-15;
        let rel: Vec<f64> = g
            .coeffs
            .iter()
            .zip(&want)
            .map(|(c, w)| (c - w).abs() / w.abs())
            .collect();
        let match_ok = rel.iter().all(|r| *r <= 0.05);
        let (fam0, k0) = pinned_family(&m, 377, 0.0, Scheme::Cubic).unwrap();
        let g0 = unstable_graph(&fam0, k0).unwrap();
        let zero_ok = g0.coeffs[..3].iter().all(|c| c.abs() <= 5e-3);
        (
            closed_ok && match_ok && zero_ok,
            format!(
                "A=0.6 relative errors {:?}; A=0 a0..a2 {:?}, a3 {:.4}",
                rel.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
                g0.coeffs[..3].iter().map(|c| format!("{c:.2e}")).collect::<Vec<_>>(),
                g0.coeffs[3]
            ),
        )
    });
}

#[test]
fn criterion_08_bvp_bounds() {
    criterion(8, 10, || {
        let m = coupled_model();
        let lam = m.lambda_ss;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-2;
        let mut worst = [0.0f64; 3];
        for k in 1..=50u64 {
            for _ in 0..4 {
                let r0 = rng.gen_range(-0.05..0.05);
                let phi0 = rng.gen_range(0.0..1.0);
                let x0 = rng.gen_range(-0.9..0.9);
                let yk = rng.gen_range(-0.9..0.9);
                let s = solve_t0_bvp(&m, r0, phi0, &[x0], &[yk], k, 1e-14).unwrap();
                let lk = lam.powi(k as i32);
                worst[0] = worst[0].max(s.x_k[0].abs() / (2.0 * lk * x0.abs()));
                worst[1] = worst[1].max(s.y_0[0].abs() / (2.0 * lk * yk.abs()));
                let central = |x: f64, y: f64| {
                    let s = solve_t0_bvp(&m, r0, phi0, &[x], &[y], k, 1e-14).unwrap();
                    [s.r_k, s.drift]
                };
                let mut frob = 0.0;
                for (dx, dy) in [(h, 0.0), (0.0, h)] {
                    let a = central(x0 + dx, yk + dy);
                    let b = central(x0 - dx, yk - dy);
                    for i in 0..2 {
                        frob += ((a[i] - b[i]) / (2.0 * h)).powi(2);
                    }
                }
                worst[2] = worst[2].max(frob.sqrt() / (2.0 * lam.powf(k as f64 / 2.0)));
            }
        }
        let ok = worst.iter().all(|w| *w <= 1.0);
        (
            ok,
            format!(
                "largest ratio to bound: x_k {:.3}, y_0 {:.3}, d(r,phi)/d(x0,yk) {:.3}",
                worst[0], worst[1], worst[2]
            ),
        )
    });
}

#[test]
fn criterion_09_scattering() {
    criterion(9, 10, || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut spec_err = 0.0f64;
        for _ in 0..100 {
            let b11 = rng.gen_range(0.3..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let b12 = rng.gen_range(-2.0..2.0);
            let b21 = rng.gen_range(-2.0..2.0);
            let l = ScatLinear::new(b11, b12, b21, (1.0 + b12 * b21) / b11).unwrap();
            // eigenvalues of L^T L for det L = 1: t/2 +- sqrt(t^2/4 - 1)
            let t = l.b11 * l.b11 + l.b12 * l.b12 + l.b21 * l.b21 + l.b22 * l.b22;
            let big = 0.5 * t + (0.25 * t * t - 1.0).max(0.0).sqrt();
            let sp = scat_spectrum(&l).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
            spec_err = spec_err
                .max(rel(sp.lambda, big))
                .max(rel(l.g0(sp.phi_plus), big))
                .max(rel(l.g0(sp.phi_minus), 1.0 / big));
        }
        let lin = ScatLinear::new(1.5, 0.5, 0.4, 0.8).unwrap();
        let model = ScatModel { linear: lin, quad: 0.7 };
        let fit = tangency_residuals(&model, &[1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3]).unwrap();
        let diag = ScatLinear::diag(2.0).unwrap();
        let conn = connect_saddle_center(&diag, 1e-3).unwrap();
        let ru = 0.5 * (conn.mu * conn.mu + conn.nu * conn.nu);
        let rs = 0.5 * (0.25 * conn.mu * conn.mu + 4.0 * conn.nu * conn.nu);
        let conn_ok = conn.residual <= 1e-10 && (ru - 1e-3).abs() <= 1e-10 && (rs - 1e-3).abs() <= 1e-10;
        let rot_ok = [0.3, 1.0, 2.0]
            .iter()
            .all(|&th| matches!(connect_saddle_center(&ScatLinear::rotation(th), 1e-3), Err(Error::Infeasible(_))));
        let ok = spec_err <= 1e-12 && fit.exponent >= 1.4 && conn_ok && rot_ok;
        (
            ok,
            format!(
                "spectrum error {spec_err:.1e}, tangency exponent {:.3}, connection residual {:.1e}, rotations infeasible {rot_ok}",
                fit.exponent, conn.residual
            ),
        )
    });
}

/// `P, P', P''` of `mu2 + B (mu1 + Phi^2) + (mu1 + Phi + Phi^2)^2`.
fn cubic_residual(b: f64, phi: f64, mu1: f64, mu2: f64) -> f64 {
    let w = mu1 + phi + phi * phi;
    let p = mu2 + b * (mu1 + phi * phi) + w * w;
    let dp = 2.0 * b * phi + 2.0 * w * (1.0 + 2.0 * phi);
    let d2p = 2.0 * b + 2.0 * (1.0 + 2.0 * phi).powi(2) + 4.0 * w;
    p.abs().max(dp.abs()).max(d2p.abs())
}

#[test]
fn criterion_10_bifurcation() {
    criterion(10, 20, || {
        let mut ok = true;
        let mut worst = 0.0f64;
        for (b, want) in [(1.0, [-1.0, -1.0, -1.0]), (-1.0, [0.0, 0.0, 0.0]), (8.0, [-1.5, -6.75, 0.0])] {
            let s = cubic_from_two_quadratics(b, None).unwrap();
            let got = [s.phi_t, s.mu1, s.mu2];
            ok &= got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-12);
            let r = cubic_residual(b, s.phi_t, s.mu1, s.mu2);
            worst = worst.max(r);
            ok &= r <= 1e-12;
        }
        let (bb, k) = (0.5, 100u64);
        let lead = secondary_cubic_params(bb, 1.0, k).unwrap();
        let setup = SecondaryCubicSetup { b: bb, beta: 1.0, a12: 1.0, a22: 0.5 };
        let num = secondary_cubic_numeric(&ModelSpec::canonical(), &setup, k).unwrap();
        let target = -bb * bb / k as f64;
        let band = 10.0 / (k as f64).sqrt();
        let ratio = num.nu / target;
        ok &= (lead.nu - target).abs() < 1e-15 && ratio > 1.0 - band && ratio < 1.0 + band;
        (ok, format!("substitution residual {worst:.1e}, numeric nu / (-b^2/k) = {ratio:.4} at k = {k}"))
    });
}

#[test]
fn criterion_11_end_to_end() {
    criterion(11, 120, || {
        let bin = env!("CARGO_BIN_EXE_blenderlab");
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("cert");
        let status = Command::new(bin).args(["certificate", "--out"]).arg(&out).output().unwrap();
        let code = status.status.code();
        let text = std::fs::read_to_string(out.join("certificate.json")).unwrap_or_default();
        let cert: serde_json::Value = serde_json::from_str(&text).unwrap_or(serde_json::Value::Null);
        let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/certificate.schema.json");
        let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
        let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
        let schema_ok = validator.is_valid(&cert);
        let cert_ok = code == Some(0) && schema_ok && cert["pass"] == serde_json::json!(true);

        let cfg = dir.path().join("alpha_one.toml");
        std::fs::write(&cfg, "[model]\nrho = \"golden\"\nalpha = 1.0\n").unwrap();
        let bad_out = dir.path().join("bad");
        let bad = Command::new(bin)
            .args(["certificate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&bad_out)
            .output()
            .unwrap();
        let failure = std::fs::read_to_string(bad_out.join("failure.json")).unwrap_or_default();
        let reject_ok = bad.status.code() == Some(2) && failure.contains("alpha") && !bad_out.join("certificate.json").exists();
        (
            cert_ok && reject_ok,
            format!(
                "certificate exit {code:?}, schema valid {schema_ok}, certified q {}; |alpha| = 1 rejected {reject_ok}",
                cert["q"]
            ),
        )
    });
}
