//! Monte-Carlo experiment engine: seeded trials, the oversampling search and
//! the success-probability sweep, CSV output, and summary ingestion.
//!
//! Every trial draws its own codebook and signal from a seed derived from
//! `(master, n, k, d, m, trial)`, so results do not depend on the order in
//! which trials run or on the number of worker threads.

mod ingest;

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis_pursuit::{solve_bp, BpOptions};
use crate::codebook::{binomial, Codebook, SamplingMode};
use crate::error::{invalid, Error, Result};
use crate::mixmatch::{decode_mm, StackedCodebook};
use crate::operator::encode;
use crate::signal::{is_distinguishable, SparseSignal, ValueMode, MAX_DISTINGUISHABLE_K};
use crate::ssii::{decode_ssii, CompletionRule, DecodeResult, SsiiOptions};

pub use ingest::{ingest_stacked, ingest_summaries, IngestOptions, Ingested, IngestedStacked};

pub const CSV_HEADER: [&str; 11] =
    ["n", "N", "k", "d", "m", "M", "successes", "trials", "rate", "oversampling", "seconds"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Ssii,
    Mm,
    Bp,
}

/// Signal value type used by generated trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    #[default]
    Int,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodebookChoice {
    Complete,
    Random { m: usize, sampling: SamplingMode },
}

/// One grid point of an experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialSpec {
    pub n: u8,
    pub k: usize,
    pub d: usize,
    pub codebook: CodebookChoice,
    pub algorithm: Algorithm,
    pub mode: ValueMode,
    pub completion: CompletionRule,
    /// Redraw signals until they are distinguishable (only for `k <= 20`).
    pub distinguishable: bool,
}

impl TrialSpec {
    pub fn random(n: u8, k: usize, d: usize, m: usize) -> Self {
        TrialSpec {
            n,
            k,
            d,
            codebook: CodebookChoice::Random { m, sampling: SamplingMode::Distinct },
            algorithm: Algorithm::Ssii,
            mode: ValueMode::ExactInteger,
            completion: CompletionRule::default(),
            distinguishable: false,
        }
    }

    pub fn complete(n: u8, k: usize, d: usize) -> Self {
        TrialSpec { codebook: CodebookChoice::Complete, ..TrialSpec::random(n, k, d, 1) }
    }

    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    fn m_key(&self) -> usize {
        match self.codebook {
            CodebookChoice::Complete => 0,
            CodebookChoice::Random { m, .. } => m,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrialOutcome {
    /// Recovered signal equals the planted one.
    pub success: bool,
    /// The decoder reported success.
    pub claimed: bool,
    /// Claimed success whose re-encoding differs from the measurements.
    pub unsound: bool,
    /// The decoder refused the instance on capacity grounds.
    pub capacity_error: bool,
    /// Rows of the constructed codebook (both parts for Mix-and-Match).
    pub measurements: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` at grid point `(n, k, d, m)`.
pub fn derive_seed(master: u64, n: u8, k: usize, d: usize, m: usize, trial: usize) -> u64 {
    [n as u64, k as u64, d as u64, m as u64, trial as u64]
        .into_iter()
        .fold(splitmix64(master), |h, v| splitmix64(h ^ v))
}

const CODEBOOK_STREAM: u64 = 0x636f_6465_626f_6f6b;
const SIGNAL_STREAM: u64 = 0x7369_676e_616c_0000;

/// Generates a signal, encodes it, decodes it and compares.
pub fn run_trial(spec: &TrialSpec, seed: u64) -> Result<TrialOutcome> {
    let codebook = match spec.codebook {
        CodebookChoice::Complete => Codebook::complete(spec.n, spec.d)?,
        CodebookChoice::Random { m, sampling } => {
            Codebook::random(spec.n, spec.d, m, splitmix64(seed ^ CODEBOOK_STREAM), sampling)?
        }
    };
    let signal = trial_signal(spec, seed)?;
    match spec.algorithm {
        Algorithm::Ssii => {
            let y = encode(&signal, &codebook)?;
            let decoded = decode_ssii(&y, SsiiOptions::for_sparsity(spec.k).with_completion(spec.completion));
            judge(decoded, &signal, codebook.rows(), |r| Ok(encode(&r.recovered, &codebook)?.agrees_with(y.values())))
        }
        Algorithm::Mm => {
            let stacked = StackedCodebook::new(codebook)?;
            let y = stacked.encode(&signal)?;
            let decoded = decode_mm(&y, &stacked);
            judge(decoded, &signal, stacked.rows(), |r| {
                let again = stacked.encode(&r.recovered)?;
                Ok(again.part1.agrees_with(y.part1.values()) && again.part2.agrees_with(y.part2.values()))
            })
        }
        Algorithm::Bp => {
            let y = encode(&signal, &codebook)?;
            let mut outcome = TrialOutcome { measurements: codebook.rows(), ..Default::default() };
            match solve_bp(&y, BpOptions::default()) {
                Ok(s) => outcome.success = s.signal.matches(&signal),
                Err(Error::Capacity(_)) => outcome.capacity_error = true,
                Err(Error::InvalidArgument(msg)) => return Err(Error::InvalidArgument(msg)),
                Err(_) => {}
            }
            Ok(outcome)
        }
    }
}

fn trial_signal(spec: &TrialSpec, seed: u64) -> Result<SparseSignal> {
    let mut s = splitmix64(seed ^ SIGNAL_STREAM);
    loop {
        let signal = SparseSignal::generate(spec.n, spec.k, spec.mode, s)?;
        if !spec.distinguishable || spec.k > MAX_DISTINGUISHABLE_K || is_distinguishable(&signal)? {
            return Ok(signal);
        }
        s = splitmix64(s);
    }
}

fn judge(
    decoded: Result<DecodeResult>,
    planted: &SparseSignal,
    measurements: usize,
    reencodes: impl FnOnce(&DecodeResult) -> Result<bool>,
) -> Result<TrialOutcome> {
    let mut outcome = TrialOutcome { measurements, ..Default::default() };
    match decoded {
        Ok(result) => {
            outcome.claimed = result.is_success();
            outcome.success = outcome.claimed && result.recovered.matches(planted);
            outcome.unsound = outcome.claimed && !reencodes(&result)?;
        }
        Err(Error::Capacity(_)) => outcome.capacity_error = true,
        Err(e) => return Err(e),
    }
    Ok(outcome)
}

/// Aggregate over the trials of one grid point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PointResult {
    pub successes: usize,
    pub trials: usize,
    pub claimed: usize,
    pub unsound: usize,
    pub capacity_errors: usize,
    pub measurements: usize,
}

impl PointResult {
    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        self.successes as f64 / self.trials as f64
    }
}

/// Runs `trials` seeded trials in parallel and tallies them in trial order.
pub fn run_point(spec: &TrialSpec, trials: usize, master: u64) -> Result<PointResult> {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(spec, derive_seed(master, spec.n, spec.k, spec.d, spec.m_key(), t)))
        .collect::<Result<_>>()?;
    let mut r = PointResult { trials, ..Default::default() };
    for o in outcomes {
        r.successes += o.success as usize;
        r.claimed += o.claimed as usize;
        r.unsound += o.unsound as usize;
        r.capacity_errors += o.capacity_error as usize;
        r.measurements = r.measurements.max(o.measurements);
    }
    Ok(r)
}

fn default_trials() -> usize {
    50
}

fn default_threshold() -> f64 {
    0.9
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_sampling() -> SamplingMode {
    SamplingMode::Distinct
}

/// Parameters of both experiment kinds. Fields irrelevant to a kind are
/// ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: Vec<u8>,
    pub k: Vec<usize>,
    /// Summary widths to sweep; `None` means the automatic range.
    #[serde(default)]
    pub d: Option<Vec<usize>>,
    /// Upper limit on subsets per codebook in the oversampling search.
    #[serde(default)]
    pub m_max: Option<usize>,
    /// Upper limit on measurements in the oversampling search; defaults to
    /// `min(N, 64 k n)`.
    #[serde(default)]
    pub max_measurements: Option<usize>,
    /// Target measurement counts for the success-probability sweep.
    #[serde(default)]
    pub measurements: Vec<usize>,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub values: ValueKind,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingMode,
    /// SSII zero-row completion rule.
    #[serde(default)]
    pub completion: CompletionRule,
}

impl ExperimentConfig {
    pub fn new(n: Vec<u8>, k: Vec<usize>, seed: u64) -> Self {
        ExperimentConfig {
            n,
            k,
            d: None,
            m_max: None,
            max_measurements: None,
            measurements: Vec::new(),
            algorithm: Algorithm::Ssii,
            trials: default_trials(),
            threshold: default_threshold(),
            seed,
            values: ValueKind::Int,
            tolerance: default_tolerance(),
            sampling: default_sampling(),
            completion: CompletionRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return invalid(format!("threshold must lie in (0, 1], got {}", self.threshold));
        }
        if self.n.is_empty() || self.k.is_empty() {
            return invalid("experiment needs at least one n and one k");
        }
        if let Some(&n) = self.n.iter().find(|&&n| !(2..=crate::codebook::MAX_BITS).contains(&n)) {
            return invalid(format!("n = {n} outside 2..={}", crate::codebook::MAX_BITS));
        }
        self.value_mode()?;
        Ok(())
    }

    pub fn value_mode(&self) -> Result<ValueMode> {
        match self.values {
            ValueKind::Int => Ok(ValueMode::ExactInteger),
            ValueKind::Real => ValueMode::real(self.tolerance),
        }
    }

    /// Widths swept for `(n, k)`: the configured list, or
    /// `2 ..= min(n - 1, ceil(log2 k) + 3)`.
    pub fn d_range(&self, n: u8, k: usize) -> Vec<usize> {
        match &self.d {
            Some(ds) => ds.iter().copied().filter(|&d| d >= 1 && d <= n as usize).collect(),
            None => {
                let log_k = usize::BITS - k.max(1).saturating_sub(1).leading_zeros();
                let hi = (n as usize - 1).min(log_k as usize + 3);
                (2..=hi).collect()
            }
        }
    }

    pub fn measurement_cap(&self, n: u8, k: usize) -> usize {
        self.max_measurements.unwrap_or_else(|| {
            let big_n = if n >= 63 { usize::MAX } else { 1usize << n };
            big_n.min(64 * k.max(1) * n as usize)
        })
    }

    fn spec(&self, n: u8, k: usize, d: usize, m: usize) -> Result<TrialSpec> {
        Ok(TrialSpec {
            n,
            k,
            d,
            codebook: CodebookChoice::Random { m, sampling: self.sampling },
            algorithm: self.algorithm,
            mode: self.value_mode()?,
            completion: self.completion,
            distinguishable: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub n: u8,
    pub k: usize,
    /// `None` when no configuration reached the threshold.
    pub d: Option<usize>,
    pub m: Option<usize>,
    /// Actual rows of the constructed codebooks.
    pub measurements: Option<usize>,
    pub successes: usize,
    pub trials: usize,
    pub seconds: f64,
    /// Requested measurement count (success-probability sweep only).
    pub target: Option<usize>,
    pub unsound: usize,
    pub capacity_errors: usize,
}

impl ExperimentRow {
    fn new(n: u8, k: usize, d: usize, m: usize, point: &PointResult, seconds: f64) -> Self {
        ExperimentRow {
            n,
            k,
            d: Some(d),
            m: Some(m),
            measurements: Some(point.measurements),
            successes: point.successes,
            trials: point.trials,
            seconds,
            target: None,
            unsound: point.unsound,
            capacity_errors: point.capacity_errors,
        }
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    pub fn oversampling(&self) -> Option<f64> {
        self.measurements.map(|m| m as f64 / self.k.max(1) as f64)
    }

    pub fn big_n(&self) -> u64 {
        1u64 << self.n
    }
}

/// Memoized grid-point evaluations for one `(n, k)` search.
struct Evaluator<'a> {
    config: &'a ExperimentConfig,
    n: u8,
    k: usize,
    cache: HashMap<(usize, usize), PointResult>,
}

impl Evaluator<'_> {
    fn eval(&mut self, d: usize, m: usize) -> Result<PointResult> {
        if let Some(r) = self.cache.get(&(d, m)) {
            return Ok(*r);
        }
        let r = run_point(&self.config.spec(self.n, self.k, d, m)?, self.config.trials, self.config.seed)?;
        self.cache.insert((d, m), r);
        Ok(r)
    }

    fn passes(&mut self, d: usize, m: usize) -> Result<bool> {
        Ok(self.eval(d, m)?.rate() >= self.config.threshold)
    }

    /// Smallest passing `m <= cap`, found by galloping then bisection, then
    /// walked down while smaller values still pass.
    fn minimal_m(&mut self, d: usize, cap: usize) -> Result<Option<usize>> {
        if cap == 0 {
            return Ok(None);
        }
        let (mut lo, mut hi) = (0, None);
        let mut m = 1;
        loop {
            if self.passes(d, m)? {
                hi = Some(m);
                break;
            }
            lo = m;
            if m == cap {
                break;
            }
            m = (2 * m).min(cap);
        }
        let Some(mut hi) = hi else { return Ok(None) };
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.passes(d, mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        while hi > 1 && self.passes(d, hi - 1)? {
            hi -= 1;
        }
        Ok(Some(hi))
    }
}

fn max_subsets(n: u8, d: usize, sampling: SamplingMode) -> usize {
    let rows_cap = crate::codebook::MAX_ROWS >> d;
    let cap = match sampling {
        SamplingMode::Distinct => {
            binomial(n as u64, d as u64).map_or(usize::MAX, |c| c.min(usize::MAX as u128) as usize)
        }
        SamplingMode::Dedup => usize::MAX,
    };
    cap.min(rows_cap)
}

/// Minimal measurement count reaching the success threshold for every
/// `(n, k)` in the config, minimized over the swept `d`.
pub fn oversampling_curve(config: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    let extra = |n: u8| if config.algorithm == Algorithm::Mm { 2 * n as usize } else { 0 };
    let mut rows = Vec::new();
    for &n in &config.n {
        for &k in &config.k {
            let start = Instant::now();
            let mut ev = Evaluator { config, n, k, cache: HashMap::new() };
            let mut best: Option<(usize, usize, PointResult)> = None;
            let mut best_rate = PointResult::default();
            // widths near log2 k first, so the best M found prunes the rest
            let centre = (k.max(1) as f64).log2().ceil() as usize;
            let mut widths = config.d_range(n, k);
            widths.sort_by_key(|&d| (d.abs_diff(centre), d));
            for d in widths {
                let mut cap = max_subsets(n, d, config.sampling)
                    .min(config.m_max.unwrap_or(usize::MAX))
                    .min(config.measurement_cap(n, k).saturating_sub(extra(n)) >> d);
                if let Some((bd, _, p)) = &best {
                    // ties go to the smaller width
                    let limit = if d < *bd { p.measurements } else { p.measurements.saturating_sub(1) };
                    cap = cap.min(limit.saturating_sub(extra(n)) >> d);
                }
                if let Some(m) = ev.minimal_m(d, cap)? {
                    let p = ev.eval(d, m)?;
                    let better = best.as_ref().is_none_or(|(bd, _, b)| {
                        p.measurements < b.measurements || (p.measurements == b.measurements && d < *bd)
                    });
                    if better {
                        best = Some((d, m, p));
                    }
                }
            }
            for p in ev.cache.values() {
                if p.rate() > best_rate.rate() {
                    best_rate = *p;
                }
            }
            let unsound: usize = ev.cache.values().map(|p| p.unsound).sum();
            let capacity: usize = ev.cache.values().map(|p| p.capacity_errors).sum();
            let seconds = start.elapsed().as_secs_f64();
            let mut row = match best {
                Some((d, m, p)) => ExperimentRow::new(n, k, d, m, &p, seconds),
                None => ExperimentRow {
                    n,
                    k,
                    d: None,
                    m: None,
                    measurements: None,
                    successes: best_rate.successes,
                    trials: config.trials,
                    seconds,
                    target: None,
                    unsound: 0,
                    capacity_errors: 0,
                },
            };
            row.unsound = unsound;
            row.capacity_errors = capacity;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Success rate for every `(M, d, k)` with `m = floor(M / 2^d)` (after
/// removing the `2n` part-2 rows for Mix-and-Match).
pub fn success_prob_curve(config: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    if config.measurements.is_empty() {
        return invalid("success-probability sweep needs at least one target measurement count");
    }
    let mut rows = Vec::new();
    for &n in &config.n {
        let extra = if config.algorithm == Algorithm::Mm { 2 * n as usize } else { 0 };
        for &target in &config.measurements {
            let ds: Vec<usize> = match &config.d {
                Some(ds) => ds.iter().copied().filter(|&d| d >= 1 && d < n as usize).collect(),
                None => (1..n as usize).collect(),
            };
            for d in ds {
                let m = target.saturating_sub(extra) >> d;
                if m == 0 || m > max_subsets(n, d, config.sampling) {
                    continue;
                }
                for &k in &config.k {
                    let start = Instant::now();
                    let point = run_point(&config.spec(n, k, d, m)?, config.trials, config.seed)?;
                    let mut row = ExperimentRow::new(n, k, d, m, &point, start.elapsed().as_secs_f64());
                    row.target = Some(target);
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

/// Sparsity at which the success rate of one curve first falls below
/// `level`, interpolated linearly between the neighbouring grid points.
/// Points must be sorted by `k`. Returns the largest `k` if the curve never
/// drops below `level`, and `None` if it starts below it.
pub fn crossing_sparsity(points: &[(usize, f64)], level: f64) -> Option<f64> {
    let first = points.first()?;
    if first.1 < level {
        return None;
    }
    for w in points.windows(2) {
        let ((k0, r0), (k1, r1)) = (w[0], w[1]);
        if r1 < level {
            let t = (r0 - level) / (r0 - r1);
            return Some(k0 as f64 + t * (k1 as f64 - k0 as f64));
        }
    }
    points.last().map(|p| p.0 as f64)
}

/// Best crossing sparsity over `d` for each target measurement count of a
/// success-probability sweep, with the winning `(d, M)`.
pub fn recoverable_sparsity(rows: &[ExperimentRow], level: f64) -> Vec<(usize, usize, usize, f64)> {
    let mut curves: std::collections::BTreeMap<(usize, usize), Vec<&ExperimentRow>> = Default::default();
    for r in rows {
        if let (Some(t), Some(d)) = (r.target, r.d) {
            curves.entry((t, d)).or_default().push(r);
        }
    }
    let mut best: std::collections::BTreeMap<usize, (usize, usize, f64)> = Default::default();
    for ((target, d), mut pts) in curves {
        pts.sort_by_key(|r| r.k);
        let curve: Vec<(usize, f64)> = pts.iter().map(|r| (r.k, r.rate())).collect();
        let Some(k) = crossing_sparsity(&curve, level) else { continue };
        let m_actual = pts[0].measurements.unwrap_or(0);
        if best.get(&target).is_none_or(|b| k > b.2) {
            best.insert(target, (d, m_actual, k));
        }
    }
    best.into_iter().map(|(t, (d, m, k))| (t, d, m, k)).collect()
}

/// Writes rows under [`CSV_HEADER`]. With `omit_timing` the `seconds`
/// column is written as `0` so repeated runs are byte-identical.
pub fn write_rows_csv<W: Write>(rows: &[ExperimentRow], out: W, omit_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.big_n().to_string(),
            r.k.to_string(),
            opt(r.d),
            opt(r.m),
            opt(r.measurements),
            r.successes.to_string(),
            r.trials.to_string(),
            format!("{:.4}", r.rate()),
            r.oversampling().map(|o| format!("{o:.4}")).unwrap_or_default(),
            if omit_timing { "0".to_string() } else { format!("{:.3}", r.seconds) },
        ])?;
    }
    w.flush()?;
    Ok(())
}
