//! Subcommand drivers. Each writes its artifacts and reports whether every
//! asserted check passed.

use std::collections::BTreeSet;

use blender_lab::blender::{
    blender_certificate, covering_sweep, default_q_list, phase_cover_check, CertificateOptions, CoveringOptions,
};
use blender_lab::diophantine::{approx_for_q, build_return_set, convergents};
use blender_lab::fit::loglog_slope;
use blender_lab::hyperbolic::{coding_orbit, cone_report, orbit_distance, rescaled_fixed_point, Coding, CodingOrbit};
use blender_lab::returns::{default_d, family_deviation, iterate_t0, pinned_family, ReturnFamily};
use blender_lab::scattering::{
    c3_check, connect_saddle_center, cubic_from_two_quadratics, hetero_chain, normalize_rows, scat_spectrum,
    secondary_cubic_numeric, secondary_cubic_params, tangency_radii, tangency_residuals, unfold_two_tangencies_det,
    KamRadiiSet, ScatLinear, ScatModel, SecondaryCubicSetup,
};
use blender_lab::{Error, ModelSpec, PhasePoint, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{ExperimentSpec, Subcommand};
use crate::error::CliError;
use crate::output::{num, Artifacts};

pub struct Outcome {
    pub pass: bool,
    pub summary: Value,
}

pub fn run(spec: &ExperimentSpec, cmd: Subcommand, art: &mut Artifacts) -> Result<Outcome, CliError> {
    match cmd {
        Subcommand::Certificate => certificate(spec, art),
        Subcommand::Covering => covering(spec, art),
        Subcommand::Cones => cones(spec, art),
        Subcommand::Kq => kq(spec, art),
        Subcommand::Orbit => orbit(spec, art),
        Subcommand::Scatter => scatter(spec, art),
        Subcommand::Bifurcate => bifurcate(spec, art),
        Subcommand::Rates => rates(spec, art),
    }
}

fn q_list_or(spec: &ExperimentSpec, default: &[i64]) -> Vec<i64> {
    if spec.q_list.is_empty() {
        default.to_vec()
    } else {
        spec.q_list.clone()
    }
}

fn certificate(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let qs = if spec.q_list.is_empty() {
        default_q_list(&spec.model)?
    } else {
        spec.q_list.clone()
    };
    let opts = CertificateOptions {
        l: spec.tol.L,
        cone_grid: spec.grid.cone_grid,
        covering: covering_options(spec),
    };
    let cert = blender_certificate(&spec.model, &qs, &opts)?;
    art.json("certificate.json", &cert)?;
    Ok(Outcome {
        pass: cert.pass,
        summary: json!({ "pass": cert.pass, "q": cert.q, "tried": qs.len() }),
    })
}

fn covering_options(spec: &ExperimentSpec) -> CoveringOptions {
    CoveringOptions {
        n_discs: spec.grid.covering_discs,
        n_steps: spec.grid.covering_steps,
        kappa: spec.tol.kappa,
        l: spec.tol.L,
        per_axis: spec.grid.disc_per_axis,
        seed: spec.seed,
    }
}

fn covering(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let qs = q_list_or(spec, &[89, 144, 233]);
    let opts = covering_options(spec);
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut pass = true;
    for &q in &qs {
        let fam = ReturnFamily::for_q(spec.model.clone(), q, Scheme::Ifs)?;
        let (grid_ok, worst) = phase_cover_check(&fam, spec.grid.phase_grid);
        let rep = covering_sweep(&fam, &opts)?;
        let ok = grid_ok && rep.pass && rep.margin_min >= spec.tol.covering_margin;
        pass &= ok;
        for c in &rep.chains {
            for (step, (k, m)) in c.word.iter().zip(&c.margins).enumerate() {
                rows.push(vec![q.to_string(), c.seed.to_string(), step.to_string(), k.to_string(), num(*m)]);
            }
        }
        runs.push(json!({
            "q": q,
            "K": fam.returns.k,
            "phase_grid_pass": grid_ok,
            "phase_grid_worst": worst,
            "margin_min": rep.margin_min,
            "success_rate": rep.success_rate,
            "lipschitz_ratio_max": rep.lipschitz_ratio_max,
            "failures": rep.chains.iter().filter_map(|c| c.failure.clone()).collect::<Vec<_>>(),
            "pass": ok,
        }));
    }
    art.json(
        "covering.json",
        &json!({ "runs": runs, "options": opts, "required_margin": spec.tol.covering_margin, "pass": pass }),
    )?;
    art.csv(
        "covering.csv",
        "rescaled coordinates (dimensionless)",
        &["q", "disc", "step", "k", "margin"],
        &rows,
    )?;
    Ok(Outcome {
        pass,
        summary: json!({ "pass": pass, "q_list": qs }),
    })
}

fn cones(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let qs = q_list_or(spec, &[144]);
    let mut reports = Vec::new();
    let mut pass = true;
    for &q in &qs {
        let fam = ReturnFamily::for_q(spec.model.clone(), q, Scheme::Ifs)?;
        let rep = cone_report(&fam, spec.tol.L, spec.grid.cone_grid)?;
        let ok = rep.pass && rep.expansion_min >= spec.tol.expansion_min && rep.contraction_max <= spec.tol.contraction_max;
        pass &= ok;
        let mut v = serde_json::to_value(&rep).expect("report");
        v["pass_thresholds"] = json!(ok);
        reports.push(v);
    }
    art.json("cones.json", &json!({ "reports": reports, "pass": pass }))?;
    Ok(Outcome {
        pass,
        summary: json!({ "pass": pass, "q_list": qs }),
    })
}

fn kq(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let m = &spec.model;
    let q_cap = spec.q_list.iter().copied().max().unwrap_or(10_000).max(89);
    let conv = convergents(&m.rho, q_cap)?;
    let qs: Vec<i64> = if spec.q_list.is_empty() {
        conv.iter().map(|a| a.q).filter(|q| *q >= 89).collect()
    } else {
        spec.q_list.clone()
    };
    let d = default_d(m.alpha);
    let mut rows = Vec::new();
    let mut sets = Vec::new();
    for &q in &qs {
        let approx = approx_for_q(&m.rho, q)?;
        let set = build_return_set(&m.rho, m.phi_plus, m.phi_minus, m.alpha, approx, d)?;
        for (k, off) in set.k.iter().zip(&set.offsets) {
            rows.push(vec![
                q.to_string(),
                approx.p.to_string(),
                num(approx.c),
                k.to_string(),
                num(*off),
                num(off / set.delta),
            ]);
        }
        sets.push(json!({ "approx": approx, "set": set }));
    }
    art.json("kq.json", &json!({ "convergents": conv, "return_sets": sets, "pass": true }))?;
    art.csv(
        "kq.csv",
        "phases in turns; A = offset / delta",
        &["q", "p", "C", "k", "offset", "A"],
        &rows,
    )?;
    Ok(Outcome {
        pass: true,
        summary: json!({ "pass": true, "q_list": qs }),
    })
}

/// Distinct seeded words of length `1..=max_len` over `ks`.
pub fn random_words(ks: &[i64], n: usize, max_len: usize, seed: u64) -> Vec<Vec<i64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < n && tries < 100 * n.max(1) {
        tries += 1;
        let len = rng.gen_range(1..=max_len);
        let w: Vec<i64> = (0..len).map(|_| ks[rng.gen_range(0..ks.len())]).collect();
        if canonical_rotation(&w) != w || !primitive(&w) {
            continue;
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Lexicographically least cyclic rotation.
fn canonical_rotation(w: &[i64]) -> Vec<i64> {
    (0..w.len())
        .map(|s| w[s..].iter().chain(&w[..s]).copied().collect::<Vec<_>>())
        .min()
        .unwrap_or_default()
}

/// Not a power of a shorter word.
fn primitive(w: &[i64]) -> bool {
    let n = w.len();
    (1..n).filter(|p| n % p == 0).all(|p| (0..n).any(|i| w[i] != w[i % p]))
}

fn orbit(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let o = &spec.orbit;
    let fam = ReturnFamily::for_q(spec.model.clone(), o.q, Scheme::Ifs)?;
    let words = if o.words.is_empty() {
        random_words(&fam.returns.k, o.n_words, o.max_len, spec.seed)
    } else {
        o.words.clone()
    };
    let mut orbits: Vec<CodingOrbit> = Vec::new();
    let mut rows = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let orb = coding_orbit(&fam, &Coding::periodic(w.clone()), spec.tol.newton)?;
        for (j, p) in orb.rescaled.iter().enumerate() {
            let mut row = vec![i.to_string(), j.to_string(), w[j].to_string()];
            row.extend(p.iter().map(|v| num(*v)));
            rows.push(row);
        }
        orbits.push(orb);
    }
    let n_big = spec.model.N;
    let mut min_sep = f64::INFINITY;
    for i in 0..orbits.len() {
        for j in i + 1..orbits.len() {
            min_sep = min_sep.min(orbit_distance(&orbits[i], &orbits[j]));
        }
    }
    let residual_max = orbits.iter().map(|o| o.residual).fold(0.0f64, f64::max);
    let spectrum_ok = orbits.iter().all(|o| o.unstable_count == n_big);
    let pass = residual_max <= spec.tol.newton && spectrum_ok && (orbits.len() < 2 || min_sep >= o.min_separation);
    let n = spec.model.n();
    let mut header = vec!["word_index".to_string(), "position".into(), "k".into(), "R".into(), "Phi".into()];
    header.extend((0..n).map(|i| format!("X{i}")));
    header.extend((0..n).map(|i| format!("Y{i}")));
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    art.csv("orbit.csv", "rescaled cross-form coordinates at M^-", &header, &rows)?;
    let mut traj_len = 0;
    if !o.start.is_empty() {
        if o.start.len() != 2 * spec.model.N {
            return Err(CliError::Input(format!("orbit.start must have {} entries", 2 * spec.model.N)));
        }
        let p = PhasePoint::from_slice(&o.start);
        let traj = iterate_t0(&spec.model, &p, o.steps)?;
        traj_len = traj.len();
        let rows: Vec<Vec<String>> = traj
            .iter()
            .enumerate()
            .map(|(j, p)| std::iter::once(j.to_string()).chain(p.to_vec().into_iter().map(num)).collect())
            .collect();
        let mut h = vec!["step".to_string(), "r".into(), "phi".into()];
        h.extend((0..n).map(|i| format!("x{i}")));
        h.extend((0..n).map(|i| format!("y{i}")));
        let h: Vec<&str> = h.iter().map(|s| s.as_str()).collect();
        art.csv("trajectory.csv", "phi in turns", &h, &rows)?;
    }
    let summaries: Vec<Value> = orbits
        .iter()
        .map(|o| {
            json!({
                "word": o.word,
                "residual": o.residual,
                "newton_steps": o.newton_steps,
                "unstable_count": o.unstable_count,
                "inside_pi": o.inside_pi,
            })
        })
        .collect();
    art.json(
        "orbit.json",
        &json!({
            "q": o.q,
            "orbits": summaries,
            "residual_max": residual_max,
            "min_separation": if min_sep.is_finite() { json!(min_sep) } else { Value::Null },
            "trajectory_points": traj_len,
            "pass": pass,
        }),
    )?;
    Ok(Outcome {
        pass,
        summary: json!({ "pass": pass, "words": words.len() }),
    })
}

fn soft<T: serde::Serialize>(r: Result<T, Error>) -> Result<Value, CliError> {
    match r {
        Ok(v) => Ok(json!({ "ok": true, "value": v })),
        Err(e @ (Error::Infeasible(_) | Error::Search(_) | Error::Domain(_))) => {
            Ok(json!({ "ok": false, "error": e.to_string() }))
        }
        Err(e) => Err(e.into()),
    }
}

fn scatter(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let s = &spec.scatter;
    let mut lin = ScatLinear::new(s.b11, s.b12, s.b21, s.b22)?;
    lin.mu = s.mu;
    lin.nu = s.nu;
    let spectrum = scat_spectrum(&lin)?;
    let c3 = c3_check(&lin, 1e-10)?;
    let theta = soft(normalize_rows(&lin))?;
    let model = ScatModel {
        linear: ScatLinear { mu: 0.0, nu: 0.0, ..lin },
        quad: s.quad,
    };
    let fit = tangency_residuals(&model, &s.radii)?;
    let leading: Vec<_> = s
        .radii
        .iter()
        .map(|&r| tangency_radii(&lin, r))
        .collect::<Result<_, _>>()?;
    let connection = soft(connect_saddle_center(&lin, s.r_target))?;
    let kam = KamRadiiSet::geometric(s.kam_r_lo, s.kam_r_hi, s.kam_ratio)?;
    let snap = |r: f64| {
        kam.radii
            .iter()
            .copied()
            .min_by(|a, b| (a - r).abs().total_cmp(&(b - r).abs()))
            .unwrap()
    };
    let chain_res = hetero_chain(&kam, &lin, snap(s.chain_start), snap(s.chain_end), s.eta);
    let chain_rows: Vec<Vec<String>> = match &chain_res {
        Ok(c) => c
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let ratio = if i == 0 { f64::NAN } else { r / c[i - 1] };
                vec![i.to_string(), num(*r), num(ratio)]
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    let chain = soft(chain_res)?;
    let det = if c3 {
        json!(unfold_two_tangencies_det(spectrum.lambda, 1.0, s.r_target)?)
    } else {
        Value::Null
    };
    let conn_ok = connection["ok"] == json!(true) && connection["value"]["residual"].as_f64().is_some_and(|r| r <= 1e-10);
    let pass = c3 && fit.exponent >= s.residual_exponent && conn_ok && chain["ok"] == json!(true);
    art.csv("chain.csv", "radii r = (u^2 + v^2) / 2", &["link", "radius", "ratio"], &chain_rows)?;
    art.json(
        "scatter.json",
        &json!({
            "units": "phi in radians on [0, pi)",
            "spectrum": spectrum,
            "c3": c3,
            "normalize_theta": theta,
            "tangency_radii": leading,
            "tangency_residuals": fit,
            "connection": connection,
            "chain": chain,
            "unfold_det_per_A": det,
            "pass": pass,
        }),
    )?;
    Ok(Outcome {
        pass,
        summary: json!({ "pass": pass, "lambda": spectrum.lambda }),
    })
}

fn bifurcate(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let bs = &spec.bifurcate;
    let mut rows = Vec::new();
    let mut sols = Vec::new();
    let mut pass = true;
    for &b in &bs.B {
        let ks = std::iter::once(None).chain(bs.k.iter().map(|k| Some(*k)));
        for k in ks {
            let s = cubic_from_two_quadratics(b, k)?;
            pass &= s.residual <= 1e-12;
            rows.push(vec![
                num(b),
                k.map_or("inf".to_string(), |k| k.to_string()),
                num(s.phi_t),
                num(s.mu1),
                num(s.mu2),
                num(s.residual),
            ]);
            sols.push(json!({ "B": b, "k": k, "solution": s }));
        }
    }
    let mut secondary = Vec::new();
    let mut srows = Vec::new();
    let setup = SecondaryCubicSetup {
        b: bs.b,
        beta: spec.model.beta,
        a12: bs.a12,
        a22: bs.a22,
    };
    for &k in &bs.k_secondary {
        let lead = secondary_cubic_params(bs.b, bs.a12, k)?;
        let numeric = secondary_cubic_numeric(&spec.model, &setup, k)?;
        let band = 10.0 / (k as f64).sqrt();
        let ratio = numeric.nu / lead.nu;
        let ok = ratio > 1.0 - band && ratio < 1.0 + band;
        pass &= ok;
        srows.push(vec![
            k.to_string(),
            num(lead.nu),
            num(numeric.nu),
            num(numeric.mu),
            num(lead.alpha_new),
            num(numeric.alpha_new),
        ]);
        secondary.push(json!({ "k": k, "leading": lead, "numeric": numeric, "nu_ratio": ratio, "pass": ok }));
    }
    art.csv(
        "bifurcate.csv",
        "rescaled cubic-tangency coordinates",
        &["B", "k", "Phi_t", "mu1", "mu2", "residual"],
        &rows,
    )?;
    art.csv(
        "secondary.csv",
        "unscaled parameters",
        &["k", "nu_leading", "nu_numeric", "mu_numeric", "alpha_leading", "alpha_numeric"],
        &srows,
    )?;
    art.json(
        "bifurcate.json",
        &json!({ "cubic": sols, "secondary": secondary, "pass": pass }),
    )?;
    Ok(Outcome {
        pass,
        summary: json!({ "pass": pass }),
    })
}

/// Slope of `log y` against `log delta`, and whether `y` is non-increasing
/// along `qs` up to the relative slack.
fn rate_fit(qs: &[i64], ys: &[f64], slack: f64) -> Result<(f64, bool), Error> {
    let deltas: Vec<f64> = qs.iter().map(|q| 2.5 / *q as f64).collect();
    let slope = loglog_slope(&deltas, ys)?;
    let mono = ys.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack));
    Ok((slope, mono))
}

/// Test model for the cubic-scheme fixed point: `alpha = 2`, phase pinned
/// so that `A = 0.6` at the first return time.
pub fn fixed_point_model() -> ModelSpec {
    let mut m = ModelSpec::canonical();
    m.alpha = 2.0;
    m
}

fn rates(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let qs = q_list_or(spec, &[89, 144, 233, 377]);
    let mut c0 = Vec::new();
    let mut c1 = Vec::new();
    let mut gaps = Vec::new();
    let fp_model = fixed_point_model();
    for &q in &qs {
        let fam = ReturnFamily::for_q(spec.model.clone(), q, Scheme::Ifs)?;
        let dev = family_deviation(&fam, spec.grid.deviation_grid)?;
        c0.push(dev.dev_c0);
        c1.push(dev.dev_c1);
        let (pf, k) = pinned_family(&fp_model, q, 0.6, Scheme::Cubic)?;
        gaps.push(rescaled_fixed_point(&pf, k)?.formula_gap);
    }
    let slack = spec.tol.monotone_slack;
    let (e0, m0) = rate_fit(&qs, &c0, slack)?;
    let (e1, m1) = rate_fit(&qs, &c1, slack)?;
    let (eg, mg) = rate_fit(&qs, &gaps, slack)?;
    let need = spec.tol.rate_exponent;
    let pass = m0 && m1 && mg && e0 >= need && e1 >= need && eg >= need;
    let rows: Vec<Vec<String>> = qs
        .iter()
        .enumerate()
        .map(|(i, q)| vec![q.to_string(), num(2.5 / *q as f64), num(c0[i]), num(c1[i]), num(gaps[i])])
        .collect();
    art.csv(
        "rates.csv",
        "rescaled coordinates; delta = 2.5 / q",
        &["q", "delta", "dev_c0", "dev_c1", "fixed_point_gap"],
        &rows,
    )?;
    let fit = |e: f64, m: bool| json!({ "exponent": e, "monotone": m });
    art.json(
        "rates.json",
        &json!({
            "q_list": qs,
            "dev_c0": fit(e0, m0),
            "dev_c1": fit(e1, m1),
            "fixed_point_gap": fit(eg, mg),
            "required_exponent": need,
            "pass": pass,
        }),
    )?;
    Ok(Outcome {
        pass,
        summary: json!({ "pass": pass, "exponents": [e0, e1, eg] }),
    })
}
