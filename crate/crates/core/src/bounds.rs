//! Recovery-guarantee calculators: the (epsilon, p) lemma quantities, the
//! weak-recovery bounds for SSII and Mix-and-Match, the explicit failure
//! rates and the basis-pursuit measurement count.
//!
//! Every probability is reported twice: the raw formula value and the value
//! clamped to `[0, 1]`. Inside the theorem formulas epsilon and p are clamped
//! to `[0, 1]` first, since negative values carry no probabilistic meaning
//! and would otherwise flip signs in products.

use std::io::Write;

use libm::lgamma as ln_gamma;
use serde::{Deserialize, Serialize};

use crate::codebook::binomial;
use crate::error::{invalid, Result};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.9;

/// How `C(a, l)` is evaluated when `a = n/2 (1 + sqrt(2 alpha))` is fractional.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinomialRule {
    /// Round `a` down to an integer.
    #[default]
    Floor,
    /// Use `Gamma(a+1) / (Gamma(l+1) Gamma(a-l+1))` directly.
    Gamma,
}

impl BinomialRule {
    pub fn other(self) -> Self {
        match self {
            BinomialRule::Floor => BinomialRule::Gamma,
            BinomialRule::Gamma => BinomialRule::Floor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub n: u32,
    pub d: u32,
    /// Number of subsets; `m = 0` is accepted so limits can be evaluated.
    pub m: u32,
    pub k: u64,
    pub alpha: f64,
    pub lambda: f64,
    #[serde(default)]
    pub rule: BinomialRule,
}

impl BoundParams {
    pub fn new(n: u32, d: u32, m: u32, k: u64) -> Self {
        BoundParams { n, d, m, k, alpha: DEFAULT_ALPHA, lambda: DEFAULT_LAMBDA, rule: BinomialRule::Floor }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_rule(mut self, rule: BinomialRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.d > self.n {
            return invalid(format!("need 1 <= d <= n, got d = {}, n = {}", self.d, self.n));
        }
        if self.k < 1 {
            return invalid("k must be at least 1");
        }
        check_alpha(self.alpha)?;
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return invalid(format!("lambda must lie in (0, 1), got {}", self.lambda));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return invalid(format!("alpha must lie in (0, 1/2), got {alpha}"));
    }
    Ok(())
}

/// A probability as given by its formula and clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probability {
    pub raw: f64,
    pub clamped: f64,
}

impl Probability {
    pub fn new(raw: f64) -> Self {
        Probability { raw, clamped: clamp01(raw) }
    }
}

fn clamp01(v: f64) -> f64 {
    if v.is_nan() || v <= 0.0 {
        return 0.0;
    }
    v.min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsP {
    pub epsilon: f64,
    pub p: f64,
}

impl EpsP {
    fn effective(self) -> (f64, f64) {
        (clamp01(self.epsilon), clamp01(self.p))
    }
}

/// `ln C(a, l)`, or `None` when the binomial is zero (`a < l`).
fn ln_binomial(a: f64, l: u32) -> Option<f64> {
    let l = l as f64;
    if a < l {
        return None;
    }
    Some(ln_gamma(a + 1.0) - ln_gamma(l + 1.0) - ln_gamma(a - l + 1.0))
}

/// `epsilon = 1 - k C(n/2 (1 + sqrt(2 alpha)), l) / C(n, l)` and
/// `p = 1 - k^2 e^(-alpha n)`, unclamped.
pub fn lemma_eps_p(n: u32, l: u32, k: u64, alpha: f64, rule: BinomialRule) -> Result<EpsP> {
    if l > n {
        return invalid(format!("lemma needs l <= n, got l = {l}, n = {n}"));
    }
    check_alpha(alpha)?;
    let k = k as f64;
    let a = n as f64 / 2.0 * (1.0 + (2.0 * alpha).sqrt());
    let a = match rule {
        BinomialRule::Floor => a.floor(),
        BinomialRule::Gamma => a,
    };
    let ratio = match ln_binomial(a, l) {
        None => 0.0,
        Some(ln_num) => (ln_num - ln_binomial(n as f64, l).expect("l <= n")).exp(),
    };
    let epsilon = if k == 0.0 { 1.0 } else { 1.0 - k * ratio };
    let p = 1.0 - k * k * (-alpha * n as f64).exp();
    Ok(EpsP { epsilon, p })
}

/// Certified strong-recovery sparsity for summaries of width `l`.
pub fn f_s_lower(l: u32) -> u128 {
    1u128 << l
}

/// Failure bound `k n (1 - p + p (1 - epsilon d / n)^m)` for SSII on a
/// random codebook, with (epsilon, p) taken at `(n - 1, d - 1)`.
pub fn ssii_failure_bound(params: &BoundParams) -> Result<Probability> {
    Ok(ssii_failure_with(params, ssii_lemma(params)?))
}

fn ssii_lemma(params: &BoundParams) -> Result<EpsP> {
    params.validate()?;
    lemma_eps_p(params.n - 1, params.d - 1, params.k, params.alpha, params.rule)
}

fn ssii_failure_with(params: &BoundParams, lemma: EpsP) -> Probability {
    let (eps, p) = lemma.effective();
    let (n, d, k) = (params.n as f64, params.d as f64, params.k as f64);
    let miss = (1.0 - eps * d / n).powf(params.m as f64);
    Probability::new(k * n * (1.0 - p + p * miss))
}

/// Success bound `p (1 - k (1 - epsilon)^m)` for Mix-and-Match, with
/// (epsilon, p) taken at `(n, d)`.
pub fn mm_success_bound(params: &BoundParams) -> Result<Probability> {
    Ok(mm_success_with(params, mm_lemma(params)?))
}

fn mm_lemma(params: &BoundParams) -> Result<EpsP> {
    params.validate()?;
    lemma_eps_p(params.n, params.d, params.k, params.alpha, params.rule)
}

fn mm_success_with(params: &BoundParams, lemma: EpsP) -> Probability {
    let (eps, p) = lemma.effective();
    let k = params.k as f64;
    Probability::new(p * (1.0 - k * (1.0 - eps).powf(params.m as f64)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitRates {
    /// `k^3 n e^(-alpha n) + k n (1 - (1 - lambda) d / n)^m`
    pub ssii: Probability,
    /// `k^2 e^(-alpha n) + k lambda^m`
    pub mm: Probability,
    /// `lambda 2^(-d log2(sqrt(alpha/2) + 1/2))`
    pub k_of_lambda: f64,
}

/// The closed-form failure rates, evaluated at the given `k`, together with
/// the sparsity `k(lambda, d, alpha)` they were derived for.
pub fn explicit_rates(params: &BoundParams) -> Result<ExplicitRates> {
    params.validate()?;
    let (n, d, k) = (params.n as f64, params.d as f64, params.k as f64);
    let (alpha, lambda, m) = (params.alpha, params.lambda, params.m as f64);
    let tail = (-alpha * n).exp();
    let ssii = k.powi(3) * n * tail + k * n * (1.0 - (1.0 - lambda) * d / n).powf(m);
    let mm = k * k * tail + k * lambda.powf(m);
    let k_of_lambda = lambda * 2f64.powf(-d * ((alpha / 2.0).sqrt() + 0.5).log2());
    Ok(ExplicitRates { ssii: Probability::new(ssii), mm: Probability::new(mm), k_of_lambda })
}

/// `2k C(log2 N, log2 k)`, logs rounded to the nearest integer.
pub fn bp_measurement_formula(big_n: f64, k: f64) -> Result<f64> {
    if !(big_n >= 1.0 && k >= 1.0 && big_n.is_finite() && k.is_finite()) {
        return invalid(format!("need N >= 1 and k >= 1, got N = {big_n}, k = {k}"));
    }
    let (ln, lk) = (big_n.log2().round() as u32, k.log2().round() as u32);
    if lk > ln {
        return invalid(format!("log2 k = {lk} exceeds log2 N = {ln}"));
    }
    let c = binomial(ln as u64, lk as u64).map_or_else(|| ln_binomial(ln as f64, lk).unwrap().exp(), |c| c as f64);
    Ok(2.0 * k * c)
}

/// Measurement scale `k log N log log N` (base-2 logs) for SSII.
pub fn ssii_measurement_scale(n: u32, k: u64) -> f64 {
    let n = n as f64;
    k as f64 * n * n.log2().max(0.0)
}

/// Measurement scale `2 log N + k log k` (base-2 logs) for Mix-and-Match.
pub fn mm_measurement_scale(n: u32, k: u64) -> f64 {
    let k = k as f64;
    2.0 * n as f64 + k * k.log2()
}

/// Quantities that change when the binomial rule is switched.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleDependent {
    pub rule: BinomialRule,
    pub ssii_lemma: EpsP,
    pub mm_lemma: EpsP,
    pub ssii_failure: Probability,
    pub mm_success: Probability,
}

impl RuleDependent {
    fn evaluate(params: &BoundParams) -> Result<Self> {
        let ssii_lemma = ssii_lemma(params)?;
        let mm_lemma = mm_lemma(params)?;
        Ok(RuleDependent {
            rule: params.rule,
            ssii_lemma,
            mm_lemma,
            ssii_failure: ssii_failure_with(params, ssii_lemma),
            mm_success: mm_success_with(params, mm_lemma),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub params: BoundParams,
    /// Lemma values at `(n, d)`, clamped to `[0, 1]`; the raw values are in
    /// `selected.mm_lemma`.
    pub epsilon: f64,
    pub p: f64,
    pub ssii_failure: f64,
    pub mm_success: f64,
    pub ssii_failure_explicit: f64,
    pub mm_failure_explicit: f64,
    pub k_of_lambda: f64,
    /// Measurements of a random codebook, `m 2^d`.
    pub measurements: f64,
    pub bp_measurements: f64,
    pub ssii_measurement_scale: f64,
    pub mm_measurement_scale: f64,
    pub f_s_lower: f64,
    pub raw: RawProbabilities,
    pub selected: RuleDependent,
    pub alternate: RuleDependent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawProbabilities {
    pub ssii_failure: f64,
    pub mm_success: f64,
    pub ssii_failure_explicit: f64,
    pub mm_failure_explicit: f64,
}

pub fn report(params: &BoundParams) -> Result<BoundReport> {
    params.validate()?;
    let selected = RuleDependent::evaluate(params)?;
    let alternate = RuleDependent::evaluate(&params.with_rule(params.rule.other()))?;
    let rates = explicit_rates(params)?;
    let big_n = 2f64.powi(params.n as i32);
    // the formula needs k <= N; beyond that it is undefined
    let bp = bp_measurement_formula(big_n, params.k as f64).unwrap_or(f64::NAN);
    Ok(BoundReport {
        params: *params,
        epsilon: selected.mm_lemma.effective().0,
        p: selected.mm_lemma.effective().1,
        ssii_failure: selected.ssii_failure.clamped,
        mm_success: selected.mm_success.clamped,
        ssii_failure_explicit: rates.ssii.clamped,
        mm_failure_explicit: rates.mm.clamped,
        k_of_lambda: rates.k_of_lambda,
        measurements: params.m as f64 * 2f64.powi(params.d as i32),
        bp_measurements: bp,
        ssii_measurement_scale: ssii_measurement_scale(params.n, params.k),
        mm_measurement_scale: mm_measurement_scale(params.n, params.k),
        f_s_lower: 2f64.powi(params.d as i32 - 1),
        raw: RawProbabilities {
            ssii_failure: selected.ssii_failure.raw,
            mm_success: selected.mm_success.raw,
            ssii_failure_explicit: rates.ssii.raw,
            mm_failure_explicit: rates.mm.raw,
        },
        selected,
        alternate,
    })
}

pub const GRID_HEADER: [&str; 18] = [
    "n",
    "d",
    "m",
    "k",
    "alpha",
    "lambda",
    "rule",
    "epsilon",
    "p",
    "ssii_failure_raw",
    "ssii_failure",
    "mm_success_raw",
    "mm_success",
    "ssii_explicit_raw",
    "ssii_explicit",
    "mm_explicit_raw",
    "mm_explicit",
    "k_of_lambda",
];

/// Writes one CSV row per valid parameter point; invalid points are skipped.
/// Returns the number of rows written.
pub fn write_grid_csv<W: Write>(points: impl IntoIterator<Item = BoundParams>, out: W) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GRID_HEADER)?;
    let mut written = 0;
    for params in points {
        let Ok(r) = report(&params) else { continue };
        let rule = match params.rule {
            BinomialRule::Floor => "floor",
            BinomialRule::Gamma => "gamma",
        };
        w.write_record([
            params.n.to_string(),
            params.d.to_string(),
            params.m.to_string(),
            params.k.to_string(),
            params.alpha.to_string(),
            params.lambda.to_string(),
            rule.to_string(),
            r.epsilon.to_string(),
            r.p.to_string(),
            r.raw.ssii_failure.to_string(),
            r.ssii_failure.to_string(),
            r.raw.mm_success.to_string(),
            r.mm_success.to_string(),
            r.raw.ssii_failure_explicit.to_string(),
            r.ssii_failure_explicit.to_string(),
            r.raw.mm_failure_explicit.to_string(),
            r.mm_failure_explicit.to_string(),
            r.k_of_lambda.to_string(),
        ])?;
        written += 1;
    }
    w.flush()?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma_against_exact_rationals() {
        // n = 20, alpha = 0.1: floor(10 (1 + sqrt 0.2)) = 14
        let r = lemma_eps_p(20, 2, 4, 0.1, BinomialRule::Floor).unwrap();
        let (num, den) = (4 * binomial(14, 2).unwrap() as i128, binomial(20, 2).unwrap() as i128);
        assert_eq!((num, den), (364, 190));
        let exact = (den - num) as f64 / den as f64;
        assert!((r.epsilon - exact).abs() < 1e-13, "{} vs {}", r.epsilon, exact);
        assert!((r.p - (1.0 - 16.0 * (-2.0f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn lemma_limits() {
        assert_eq!(lemma_eps_p(20, 2, 0, 0.1, BinomialRule::Floor).unwrap().epsilon, 1.0);
        // tiny alpha: floor(n/2 (1 + sqrt(2 alpha))) = n/2
        let r = lemma_eps_p(20, 3, 2, 1e-9, BinomialRule::Floor).unwrap();
        let exact = 1.0 - 2.0 * binomial(10, 3).unwrap() as f64 / binomial(20, 3).unwrap() as f64;
        assert!((r.epsilon - exact).abs() < 1e-12);
        // numerator argument below l: binomial vanishes
        let r = lemma_eps_p(4, 4, 7, 0.1, BinomialRule::Floor).unwrap();
        assert_eq!(r.epsilon, 1.0);
        assert!(lemma_eps_p(3, 4, 1, 0.1, BinomialRule::Floor).is_err());
        assert!(lemma_eps_p(3, 1, 1, 0.5, BinomialRule::Floor).is_err());
    }

    #[test]
    fn gamma_rule_is_between_integer_neighbours() {
        // a = 10 (1 + sqrt 0.2) ~ 14.47, so C(14,2) <= C(a,2) <= C(15,2)
        let f = lemma_eps_p(20, 2, 1, 0.1, BinomialRule::Floor).unwrap().epsilon;
        let g = lemma_eps_p(20, 2, 1, 0.1, BinomialRule::Gamma).unwrap().epsilon;
        let ceil = 1.0 - binomial(15, 2).unwrap() as f64 / binomial(20, 2).unwrap() as f64;
        assert!(g <= f && g >= ceil, "{ceil} <= {g} <= {f}");
    }

    #[test]
    fn f_s_lower_values() {
        assert_eq!(f_s_lower(0), 1);
        assert_eq!(f_s_lower(3), 8);
        assert_eq!(f_s_lower(7), 128);
    }

    #[test]
    fn bp_formula_values() {
        for n in 1..30 {
            assert_eq!(bp_measurement_formula(2f64.powi(n), 2.0).unwrap(), 4.0 * n as f64);
            assert_eq!(bp_measurement_formula(2f64.powi(n), 1.0).unwrap(), 2.0);
        }
        assert_eq!(bp_measurement_formula(1024.0, 8.0).unwrap(), 1920.0);
        assert!(bp_measurement_formula(8.0, 16.0).is_err());
    }

    #[test]
    fn mm_bound_limits() {
        // d = n makes the numerator argument smaller than l, so epsilon = 1
        let params = BoundParams::new(8, 8, 3, 2);
        let lemma = mm_lemma(&params).unwrap();
        assert_eq!(lemma.epsilon, 1.0);
        assert_eq!(mm_success_bound(&params).unwrap().raw, clamp01(lemma.p));
        let zero = BoundParams::new(40, 3, 0, 3);
        let b = mm_success_bound(&zero).unwrap();
        let p = mm_lemma(&zero).unwrap().p;
        assert!((b.raw - p * (1.0 - 3.0)).abs() < 1e-12);
        assert_eq!(b.clamped, 0.0);
    }

    #[test]
    fn ssii_bound_vanishes_for_large_m() {
        let params = BoundParams::new(63, 4, 5000, 1).with_alpha(0.2);
        let b = ssii_failure_bound(&params).unwrap();
        assert!(b.raw < 1e-3, "{b:?}");
    }

    #[test]
    fn explicit_rates_limits() {
        let params = BoundParams::new(30, 4, 2000, 3);
        let r = explicit_rates(&params).unwrap();
        assert!((r.mm.raw - 9.0 * (-3.0f64).exp()).abs() < 1e-12);
        // log2(sqrt(0.04) + 0.5) < 0, so k grows with d
        let at = |d| explicit_rates(&BoundParams::new(30, d, 1, 1).with_alpha(0.08)).unwrap().k_of_lambda;
        assert!(at(7) > at(6));
        let expected = 0.9 * 2f64.powf(-7.0 * (0.04f64.sqrt() + 0.5).log2());
        assert!((at(7) - expected).abs() < 1e-12);
    }

    #[test]
    fn report_is_consistent() {
        let params = BoundParams::new(16, 4, 8, 5);
        let r = report(&params).unwrap();
        assert_eq!(r.measurements, 128.0);
        assert_eq!(r.mm_success, mm_success_bound(&params).unwrap().clamped);
        assert_eq!(r.alternate.rule, BinomialRule::Gamma);
        let json = serde_json::to_string(&r).unwrap();
        let back: BoundReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.params, params);
    }

    #[test]
    fn grid_skips_invalid_points() {
        let mut buf = Vec::new();
        let pts = vec![BoundParams::new(10, 2, 3, 2), BoundParams::new(10, 11, 3, 2)];
        assert_eq!(write_grid_csv(pts, &mut buf).unwrap(), 1);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,d,m,k,alpha"));
        assert_eq!(text.lines().count(), 2);
    }
}
