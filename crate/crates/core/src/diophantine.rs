//! Continued fractions, Dirichlet pairs, the covering congruence and the
//! return-time set `K_q`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::mod0_1;

/// Partial quotients above this size mark a decimal input as rational at
/// working precision.
const HUGE_QUOTIENT: i128 = 100_000_000;

/// A rotation number. Quadratic irrationals are kept as exact partial
/// quotient streams; decimals are read as exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub enum Rotation {
    Golden,
    Silver,
    /// `[a0; a1, a2, ...]`, optionally repeating the listed tail forever.
    Quotients { head: Vec<u64>, period: Vec<u64> },
    Decimal(String),
    Ratio(i64, i64),
}

impl Rotation {
    pub fn value(&self) -> f64 {
        match self {
            Rotation::Golden => (5f64.sqrt() - 1.0) / 2.0,
            Rotation::Silver => 2f64.sqrt() - 1.0,
            Rotation::Decimal(s) => s.trim().parse().unwrap_or(f64::NAN),
            Rotation::Ratio(p, q) => *p as f64 / *q as f64,
            Rotation::Quotients { .. } => {
                let (a, _) = self.quotients(64);
                let mut v = 0.0f64;
                for &ai in a.iter().skip(1).rev() {
                    v = 1.0 / (ai as f64 + v);
                }
                a.first().map(|&a0| a0 as f64).unwrap_or(0.0) + v
            }
        }
    }

    /// Up to `max_terms` partial quotients and whether the expansion ended.
    pub fn quotients(&self, max_terms: usize) -> (Vec<i128>, bool) {
        match self {
            Rotation::Golden => (periodic(&[0], &[1], max_terms), false),
            Rotation::Silver => (periodic(&[0], &[2], max_terms), false),
            Rotation::Quotients { head, period } => {
                if period.is_empty() {
                    let v: Vec<i128> = head.iter().take(max_terms).map(|&a| a as i128).collect();
                    let done = head.len() <= max_terms;
                    (v, done)
                } else {
                    (periodic(head, period, max_terms), false)
                }
            }
            Rotation::Ratio(p, q) => euclid(*p as i128, *q as i128, max_terms),
            Rotation::Decimal(s) => match decimal_rational(s) {
                Some((num, den)) => {
                    let (mut a, mut done) = euclid(num, den, max_terms);
                    if let Some(pos) = a.iter().skip(1).position(|&v| v > HUGE_QUOTIENT) {
                        a.truncate(pos + 1);
                        done = true;
                    }
                    (a, done)
                }
                None => (Vec::new(), true),
            },
        }
    }
}

fn periodic(head: &[u64], period: &[u64], max_terms: usize) -> Vec<i128> {
    head.iter()
        .chain(period.iter().cycle())
        .take(max_terms)
        .map(|&a| a as i128)
        .collect()
}

fn euclid(mut num: i128, mut den: i128, max_terms: usize) -> (Vec<i128>, bool) {
    let mut out = Vec::new();
    if den == 0 {
        return (out, true);
    }
    if den < 0 {
        num = -num;
        den = -den;
    }
    while out.len() < max_terms {
        let a = num.div_euclid(den);
        out.push(a);
        let rem = num - a * den;
        if rem == 0 {
            return (out, true);
        }
        num = den;
        den = rem;
    }
    (out, false)
}

/// Exact rational value of a plain decimal string such as `0.6180339887`.
fn decimal_rational(s: &str) -> Option<(i128, i128)> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((a, b)) => (a, b),
        None => (body, ""),
    };
    if frac_part.len() > 30 || !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut num: i128 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let den = 10i128.checked_pow(frac_part.len() as u32)?;
    if neg {
        num = -num;
    }
    Some((num, den))
}

impl std::fmt::Display for Rotation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rotation::Golden => write!(f, "golden"),
            Rotation::Silver => write!(f, "silver"),
            Rotation::Decimal(s) => write!(f, "{s}"),
            Rotation::Ratio(p, q) => write!(f, "{p}/{q}"),
            Rotation::Quotients { head, period } => {
                let join = |v: &[u64]| v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
                if period.is_empty() {
                    write!(f, "[{}]", join(head))
                } else {
                    write!(f, "[{}|{}]", join(head), join(period))
                }
            }
        }
    }
}

impl std::str::FromStr for Rotation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "golden" => return Ok(Rotation::Golden),
            "silver" => return Ok(Rotation::Silver),
            _ => {}
        }
        if let Some(inner) = t.strip_prefix('[').and_then(|v| v.strip_suffix(']')) {
            let parse = |v: &str| -> Result<Vec<u64>> {
                v.split([',', ';'])
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| x.parse::<u64>().map_err(|_| Error::domain(format!("bad partial quotient `{x}`"))))
                    .collect()
            };
            let (head, period) = match inner.split_once('|') {
                Some((h, p)) => (parse(h)?, parse(p)?),
                None => (parse(inner)?, Vec::new()),
            };
            if head.is_empty() {
                return Err(Error::domain("empty partial quotient list"));
            }
            return Ok(Rotation::Quotients { head, period });
        }
        if let Some((p, q)) = t.split_once('/') {
            let p: i64 = p.trim().parse().map_err(|_| Error::domain(format!("bad rotation `{t}`")))?;
            let q: i64 = q.trim().parse().map_err(|_| Error::domain(format!("bad rotation `{t}`")))?;
            if q <= 0 {
                return Err(Error::domain("rotation denominator must be positive"));
            }
            return Ok(Rotation::Ratio(p, q));
        }
        if decimal_rational(t).is_some() {
            return Ok(Rotation::Decimal(t.to_string()));
        }
        Err(Error::domain(format!("cannot read rotation number `{t}`")))
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
            List(Vec<u64>),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Rotation::Decimal(format!("{v}"))),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
            Raw::List(head) if !head.is_empty() => Ok(Rotation::Quotients { head, period: Vec::new() }),
            Raw::List(_) => Err(serde::de::Error::custom("empty partial quotient list")),
        }
    }
}

/// Dirichlet pair: `rho = p/q + C/q^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationalApprox {
    pub p: i64,
    pub q: i64,
    #[serde(rename = "C")]
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineClass {
    pub c: f64,
    pub tau: f64,
}

impl DiophantineClass {
    pub fn new(c: f64, tau: f64) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0 && tau >= 2.0) {
            return Err(Error::domain("Diophantine class needs 0 < c <= 1 and tau >= 2"));
        }
        Ok(DiophantineClass { c, tau })
    }
}

pub fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Convergents `p/q` of `rho` with `q <= q_max`, sorted by `q`.
pub fn convergents(rho: &Rotation, q_max: i64) -> Result<Vec<RationalApprox>> {
    let value = rho.value();
    let (a, terminated) = rho.quotients(200);
    let (mut p0, mut q0, mut p1, mut q1) = (0i128, 1i128, 1i128, 0i128);
    let mut out: Vec<RationalApprox> = Vec::new();
    let mut passed = false;
    for (level, &ai) in a.iter().enumerate() {
        let p = ai * p1 + p0;
        let q = ai * q1 + q0;
        p0 = p1;
        q0 = q1;
        p1 = p;
        q1 = q;
        if q > q_max as i128 {
            passed = true;
            break;
        }
        if level + 1 == a.len() && terminated {
            return Err(Error::Precision {
                level,
                msg: format!("continued fraction of {rho} terminates at {p}/{q}, below q_max = {q_max}"),
            });
        }
        let qf = q as f64;
        let c = qf * (qf * value - p as f64);
        let approx = RationalApprox { p: p as i64, q: q as i64, c };
        match out.last() {
            Some(last) if last.q == approx.q => {
                if c.abs() < last.c.abs() {
                    *out.last_mut().unwrap() = approx;
                }
            }
            _ => out.push(approx),
        }
    }
    if !passed && terminated {
        return Err(Error::Precision {
            level: a.len(),
            msg: format!("continued fraction of {rho} terminates below q_max = {q_max}"),
        });
    }
    Ok(out)
}

/// The Dirichlet pair with denominator `q` (nearest numerator); fails unless
/// `gcd(p, q) = 1` and `|C| < 1`.
pub fn approx_for_q(rho: &Rotation, q: i64) -> Result<RationalApprox> {
    if q <= 0 {
        return Err(Error::domain("q must be positive"));
    }
    let value = rho.value();
    let p = (q as f64 * value).round() as i64;
    let c = q as f64 * (q as f64 * value - p as f64);
    if gcd(p as i128, q as i128) != 1 || c.abs() >= 1.0 {
        return Err(Error::domain(format!("q = {q} is not a Dirichlet denominator of {rho} (p = {p}, C = {c})")));
    }
    Ok(RationalApprox { p, q, c })
}

fn inverse_mod(a: i128, m: i128) -> Option<i128> {
    let (mut old_r, mut r) = (a.rem_euclid(m), m);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let qt = old_r / r;
        (old_r, r) = (r, old_r - qt * r);
        (old_s, s) = (s, old_s - qt * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m))
}

/// Solve `k p - n q = -s` with `k` in `[q, 2q - 1]`.
pub fn solve_covering_congruence(p: i64, q: i64, s: i64) -> Result<(i64, i64)> {
    if q <= 0 {
        return Err(Error::domain("q must be positive"));
    }
    let (p, q, s) = (p as i128, q as i128, s as i128);
    if gcd(p, q) != 1 {
        return Err(Error::domain(format!("gcd({p}, {q}) != 1")));
    }
    let k0 = if q == 1 {
        0
    } else {
        let inv = inverse_mod(p, q).ok_or_else(|| Error::domain("p not invertible mod q"))?;
        (-s * inv).rem_euclid(q)
    };
    let k = k0 + q;
    let num = k * p + s;
    debug_assert_eq!(num.rem_euclid(q), 0);
    let n = num / q;
    Ok((k as i64, n as i64))
}

/// The congruence shift `s = round(q (phi^+ - phi^- + delta alpha Phi))`,
/// halves rounded toward zero.
pub fn covering_shift(q: i64, phi_plus: f64, phi_minus: f64, delta: f64, alpha: f64, phi_big: f64) -> i64 {
    let v = q as f64 * (phi_plus - phi_minus + delta * alpha * phi_big);
    let f = v.floor();
    let frac = v - f;
    if (frac - 0.5).abs() < 1e-12 {
        v.trunc() as i64
    } else {
        v.round() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSet {
    pub q: i64,
    pub delta: f64,
    pub d: f64,
    #[serde(rename = "K")]
    pub k: Vec<i64>,
    pub offsets: Vec<f64>,
    /// Some member has `|offset| / delta >= 3/5`.
    pub has_large_offset: bool,
}

impl ReturnSet {
    pub fn contains(&self, k: i64) -> bool {
        self.k.binary_search(&k).is_ok()
    }

    pub fn offset(&self, k: i64) -> Option<f64> {
        self.k.binary_search(&k).ok().map(|i| self.offsets[i])
    }
}

/// `(phi^+ - phi^- + k rho) mod0 1`, with `k rho` reduced through the exact
/// convergent when one is supplied.
pub fn phase_offset(rho: f64, phi_plus: f64, phi_minus: f64, k: i64) -> f64 {
    let kr = mod0_1(k as f64 * rho);
    mod0_1(phi_plus - phi_minus + kr)
}

pub fn build_return_set(
    rho: &Rotation,
    phi_plus: f64,
    phi_minus: f64,
    alpha: f64,
    approx: RationalApprox,
    d: f64,
) -> Result<ReturnSet> {
    if !(alpha.abs() > 1.0) {
        return Err(Error::Precondition(format!("|alpha| must exceed 1, got {alpha}")));
    }
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::domain(format!("d must lie in (0, 1), got {d}")));
    }
    let q = approx.q;
    let delta = 2.5 / q as f64;
    let bound = d * (1.0 + alpha.abs()) * delta;
    let value = rho.value();
    let mut k_set = Vec::new();
    let mut offsets = Vec::new();
    for k in q..2 * q {
        let off = phase_offset(value, phi_plus, phi_minus, k);
        if off.abs() < bound {
            k_set.push(k);
            offsets.push(off);
        }
    }
    if k_set.is_empty() {
        return Err(Error::EmptyReturnSet { q });
    }
    let has_large_offset = offsets.iter().any(|o| o.abs() / delta >= 0.6);
    Ok(ReturnSet {
        q,
        delta,
        d,
        k: k_set,
        offsets,
        has_large_offset,
    })
}

/// `delta^-1 ((phi^+ - phi^- + k rho) mod0 1)`.
#[allow(non_snake_case)]
pub fn A_of_k(rho: &Rotation, phi_plus: f64, phi_minus: f64, k: i64, delta: f64) -> f64 {
    phase_offset(rho.value(), phi_plus, phi_minus, k) / delta
}

/// Check `|rho - p/q| > c / q^tau` over all convergents with `q <= q_max`.
/// Returns the verdict and the convergent denominator with the smallest
/// ratio `|rho - p/q| q^tau / c`.
pub fn check_diophantine(rho: &Rotation, cls: DiophantineClass, q_max: i64) -> Result<(bool, i64)> {
    if q_max < 2 {
        return Err(Error::domain("q_max must be at least 2"));
    }
    let value = rho.value();
    let list = convergents(rho, q_max)?;
    let mut ok = true;
    let mut worst = (f64::INFINITY, 1i64);
    for a in &list {
        let qf = a.q as f64;
        let err = (value - a.p as f64 / qf).abs();
        let ratio = err * qf.powf(cls.tau) / cls.c;
        if ratio <= 1.0 {
            ok = false;
        }
        if ratio < worst.0 {
            worst = (ratio, a.q);
        }
    }
    Ok((ok, worst.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_and_silver_convergents() {
        let g = convergents(&Rotation::Golden, 150).unwrap();
        assert!(g.iter().any(|a| a.p == 55 && a.q == 89));
        assert!(g.iter().any(|a| a.p == 89 && a.q == 144));
        assert!(g.windows(2).all(|w| w[0].q < w[1].q));
        let s = convergents(&Rotation::Silver, 100).unwrap();
        assert!(s.iter().any(|a| a.p == 12 && a.q == 29));
        assert!(s.iter().any(|a| a.p == 29 && a.q == 70));
    }

    #[test]
    fn rational_rejected() {
        assert!(matches!(convergents(&Rotation::Ratio(1, 3), 150), Err(Error::Precision { .. })));
        let dec: Rotation = "0.3333333333333333".parse().unwrap();
        assert!(matches!(convergents(&dec, 150), Err(Error::Precision { .. })));
        let dec: Rotation = "0.6180339887498949".parse().unwrap();
        assert!(convergents(&dec, 150).is_ok());
    }

    #[test]
    fn congruence_examples() {
        assert_eq!(solve_covering_congruence(3, 5, 2).unwrap(), (6, 4));
        assert_eq!(solve_covering_congruence(1, 2, 0).unwrap(), (2, 1));
        assert_eq!(solve_covering_congruence(2, 3, 1).unwrap(), (4, 3));
        assert!(solve_covering_congruence(2, 4, 1).is_err());
    }

    #[test]
    fn return_set_example() {
        let approx = RationalApprox { p: 55, q: 89, c: 0.0 };
        let ks = build_return_set(&Rotation::Golden, 0.2, 0.2, 3.0, approx, 0.5).unwrap();
        assert!(ks.contains(89));
        let off = ks.offset(89).unwrap();
        assert!((off.abs() - 5.03e-3).abs() < 1e-5);
        let bound = 0.5 * 4.0 * 5.0 / 178.0;
        assert!(ks.offsets.iter().all(|o| o.abs() < bound));
        assert!(ks.k.iter().all(|&k| (89..178).contains(&k)));
    }

    #[test]
    fn a_of_k_examples() {
        let v = A_of_k(&Rotation::Golden, 0.0, 0.0, 89, 5.0 / 178.0);
        assert!((v - 0.179).abs() < 1e-3);
        assert_eq!(A_of_k(&Rotation::Ratio(1, 2), 0.1, 0.1, 8, 0.01), 0.0);
    }

    #[test]
    fn diophantine_examples() {
        let (ok, _) = check_diophantine(&Rotation::Golden, DiophantineClass::new(0.38, 2.0).unwrap(), 10_000).unwrap();
        assert!(ok);
        let (ok, w) = check_diophantine(&Rotation::Golden, DiophantineClass::new(0.5, 2.0).unwrap(), 10_000).unwrap();
        assert!(!ok);
        let fib = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377, 610, 987, 1597, 2584, 4181, 6765];
        assert!(fib.contains(&w));
        let (ok, _) = check_diophantine(&Rotation::Silver, DiophantineClass::new(1e-6, 3.0).unwrap(), 50).unwrap();
        assert!(ok);
    }

    #[test]
    fn rotation_parsing() {
        let r: Rotation = "[0;1,2,3]".parse().unwrap();
        assert!((r.value() - 1.0 / (1.0 + 1.0 / (2.0 + 1.0 / 3.0))).abs() < 1e-15);
        let r: Rotation = "[0|1]".parse().unwrap();
        assert!((r.value() - Rotation::Golden.value()).abs() < 1e-14);
        assert!("abc".parse::<Rotation>().is_err());
    }
}
