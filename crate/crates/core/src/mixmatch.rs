//! Mix-and-Match decoding over a stacked codebook.
//!
//! Part 1 (a random `(m, n, d)` codebook) reveals the signal values: the
//! smallest measurement not yet explained as a subset sum of the values
//! found so far must itself be a value. Part 2 (the complete `(n, 1)`
//! codebook) then tells, for each bit, which values sit on the `0` side and
//! which on the `1` side.

use std::collections::HashMap;

use crate::codebook::{Codebook, Label, SamplingMode};
use crate::error::{invalid, Error, Result};
use crate::operator::{encode, MeasurementVector};
use crate::signal::{Entry, SparseSignal, ValueMode};
use crate::ssii::{DecodeResult, DecodeStatus};

/// Largest value set the subset-sum phases accept.
pub const MAX_VALUES: usize = 24;

/// Above this many values, support matching switches to meet-in-the-middle.
const DIRECT_ENUMERATION_LIMIT: usize = 16;

/// `A = [A1; A2]` with `A1` a random codebook and `A2` the complete `(n, 1)`
/// codebook.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackedCodebook {
    part1: Codebook,
    part2: Codebook,
}

impl StackedCodebook {
    pub fn new(part1: Codebook) -> Result<Self> {
        let part2 = Codebook::complete(part1.n(), 1)?;
        Ok(StackedCodebook { part1, part2 })
    }

    pub fn from_parts(part1: Codebook, part2: Codebook) -> Result<Self> {
        if part1.n() != part2.n() {
            return invalid("stacked parts disagree on n");
        }
        if part2.d() != 1 || part2.m() != part2.n() as usize {
            return invalid("part 2 must be the complete (n,1) codebook");
        }
        Ok(StackedCodebook { part1, part2 })
    }

    pub fn random(n: u8, d: usize, m: usize, seed: u64, mode: SamplingMode) -> Result<Self> {
        StackedCodebook::new(Codebook::random(n, d, m, seed, mode)?)
    }

    pub fn part1(&self) -> &Codebook {
        &self.part1
    }

    pub fn part2(&self) -> &Codebook {
        &self.part2
    }

    pub fn n(&self) -> u8 {
        self.part1.n()
    }

    /// `m * 2^d + 2n`.
    pub fn rows(&self) -> usize {
        self.part1.rows() + self.part2.rows()
    }

    pub fn encode<'a>(&'a self, signal: &SparseSignal) -> Result<StackedMeasurements<'a>> {
        Ok(StackedMeasurements { part1: encode(signal, &self.part1)?, part2: encode(signal, &self.part2)? })
    }
}

#[derive(Clone, Debug)]
pub struct StackedMeasurements<'a> {
    pub part1: MeasurementVector<'a>,
    pub part2: MeasurementVector<'a>,
}

impl StackedMeasurements<'_> {
    /// Writes the measurements CSV with a trailing `part` column.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subset", "pattern", "value", "part"])?;
        for (part, y) in [("1", &self.part1), ("2", &self.part2)] {
            for r in 0..y.len() {
                if y.is_missing(r) {
                    continue;
                }
                let (subset, pattern) = y.row_strings(r);
                w.write_record([subset, pattern, crate::operator::format_value(y.values()[r], y.mode()), part.into()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Why a Mix-and-Match phase gave up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatchFailure {
    /// More values were added than there are distinct measurements.
    ValueLoop,
    /// A part-2 measurement is the sum of no subset of the values.
    NoSubset {
        value: u64,
    },
    /// A part-2 measurement is the sum of several subsets of the values.
    AmbiguousSubset {
        value: u64,
    },
    /// A value was placed on both or neither side of some bit.
    BitCoverage {
        value: u64,
        position: u8,
    },
    DuplicateLabels,
}

impl std::fmt::Display for MatchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatchFailure::ValueLoop => write!(f, "value identification did not terminate"),
            MatchFailure::NoSubset { value } => write!(f, "no subset of values sums to {value}"),
            MatchFailure::AmbiguousSubset { value } => write!(f, "several subsets of values sum to {value}"),
            MatchFailure::BitCoverage { value, position } => {
                write!(f, "value {value} is not on exactly one side of bit {position}")
            }
            MatchFailure::DuplicateLabels => write!(f, "two values were assigned the same label"),
        }
    }
}

fn as_integer(v: f64) -> Result<u64> {
    if v < 0.0 || v.fract() != 0.0 || v > crate::signal::MAX_EXACT {
        return invalid(format!("Mix-and-Match needs nonnegative integer measurements, got {v}"));
    }
    Ok(v as u64)
}

/// Greedy value identification: returns the set `X` (ascending) such that
/// every distinct nonzero entry of `y1` is a subset sum of `X`.
pub fn identify_values(y1: &[f64]) -> Result<std::result::Result<Vec<u64>, MatchFailure>> {
    let mut targets: Vec<u64> = y1.iter().filter(|&&v| v != 0.0).map(|&v| as_integer(v)).collect::<Result<_>>()?;
    targets.sort_unstable();
    targets.dedup();

    let mut values: Vec<u64> = Vec::new();
    // sorted subset sums of `values`
    let mut sums: Vec<u64> = vec![0];
    let mut cursor = 0;
    loop {
        while cursor < targets.len() && sums.binary_search(&targets[cursor]).is_ok() {
            cursor += 1;
        }
        if cursor == targets.len() {
            return Ok(Ok(values));
        }
        if values.len() >= targets.len() {
            return Ok(Err(MatchFailure::ValueLoop));
        }
        if values.len() == MAX_VALUES {
            return Err(Error::Capacity(format!("more than {MAX_VALUES} values; subset sums would not fit")));
        }
        let x = targets[cursor];
        values.push(x);
        let shifted: Vec<u64> = sums.iter().map(|s| s + x).collect();
        sums = merge_sorted(&sums, &shifted);
    }
}

fn merge_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = if j == b.len() || (i < a.len() && a[i] <= b[j]) {
            i += 1;
            a[i - 1]
        } else {
            j += 1;
            b[j - 1]
        };
        if out.last() != Some(&next) {
            out.push(next);
        }
    }
    out
}

/// Finds the subsets of a value list that hit a given sum.
enum SubsetIndex {
    /// sum -> mask, or `None` when several masks share the sum
    Direct(HashMap<u64, Option<u32>>),
    Split {
        low_bits: usize,
        low: Vec<(u64, u32)>,
        high: Vec<(u64, u32)>,
    },
}

enum Lookup {
    None,
    Unique(u32),
    Many,
}

fn all_sums(values: &[u64]) -> Vec<(u64, u32)> {
    let mut out = vec![(0u64, 0u32)];
    for (i, &v) in values.iter().enumerate() {
        let extra: Vec<(u64, u32)> = out.iter().map(|&(s, m)| (s + v, m | 1 << i)).collect();
        out.extend(extra);
    }
    out
}

impl SubsetIndex {
    fn build(values: &[u64]) -> Self {
        if values.len() <= DIRECT_ENUMERATION_LIMIT {
            let mut map = HashMap::with_capacity(1 << values.len());
            for (s, m) in all_sums(values) {
                map.entry(s).and_modify(|e| *e = None).or_insert(Some(m));
            }
            SubsetIndex::Direct(map)
        } else {
            let low_bits = values.len() / 2;
            let low = all_sums(&values[..low_bits]);
            let mut high = all_sums(&values[low_bits..]);
            high.sort_unstable();
            SubsetIndex::Split { low_bits, low, high }
        }
    }

    fn find(&self, target: u64) -> Lookup {
        match self {
            SubsetIndex::Direct(map) => match map.get(&target) {
                None => Lookup::None,
                Some(Some(m)) => Lookup::Unique(*m),
                Some(None) => Lookup::Many,
            },
            SubsetIndex::Split { low_bits, low, high } => {
                let mut found = None;
                for &(s, lm) in low {
                    if s > target {
                        continue;
                    }
                    let rest = target - s;
                    let start = high.partition_point(|&(h, _)| h < rest);
                    for &(_, hm) in high[start..].iter().take_while(|&&(h, _)| h == rest) {
                        if found.is_some() {
                            return Lookup::Many;
                        }
                        found = Some(lm | hm << low_bits);
                    }
                }
                found.map_or(Lookup::None, Lookup::Unique)
            }
        }
    }
}

/// Support identification from the part-2 measurements, laid out as
/// `y2[2(i-1) + c]` for summary `({i}, c)`. Values must be distinct and
/// positive.
pub fn identify_support(values: &[u64], y2: &[f64], n: u8) -> Result<std::result::Result<SparseSignal, MatchFailure>> {
    if y2.len() != 2 * n as usize {
        return invalid(format!("part 2 must have {} rows, got {}", 2 * n as usize, y2.len()));
    }
    if values.len() > MAX_VALUES {
        return Err(Error::Capacity(format!("more than {MAX_VALUES} values")));
    }
    if values.contains(&0) {
        return invalid("values must be positive");
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return invalid("values must be distinct");
    }
    let index = SubsetIndex::build(values);
    let mut bits = vec![0u64; values.len()];
    // per value and bit: which of the two patterns claimed it
    let mut seen = vec![vec![0u8; n as usize]; values.len()];
    for position in 1..=n {
        for c in 0..2u32 {
            let raw = y2[((position as usize - 1) << 1) | c as usize];
            if raw == 0.0 {
                continue;
            }
            let target = as_integer(raw)?;
            let mask = match index.find(target) {
                Lookup::Unique(m) => m,
                Lookup::None => return Ok(Err(MatchFailure::NoSubset { value: target })),
                Lookup::Many => return Ok(Err(MatchFailure::AmbiguousSubset { value: target })),
            };
            for (j, b) in bits.iter_mut().enumerate() {
                if mask >> j & 1 == 1 {
                    *b |= (c as u64) << (n - position);
                    seen[j][position as usize - 1] += 1;
                }
            }
        }
    }
    for (j, counts) in seen.iter().enumerate() {
        if let Some(p) = counts.iter().position(|&c| c != 1) {
            return Ok(Err(MatchFailure::BitCoverage { value: values[j], position: p as u8 + 1 }));
        }
    }
    let mut labels = bits.clone();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Ok(Err(MatchFailure::DuplicateLabels));
    }
    let entries = values
        .iter()
        .zip(&bits)
        .map(|(&v, &b)| Ok(Entry { label: Label::new(n, b)?, value: v as f64 }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ok(SparseSignal::new(n, ValueMode::ExactInteger, entries)?))
}

/// Runs both phases. Identification failures come back as
/// [`DecodeStatus::Contradiction`]; real-valued input and oversized value
/// sets are errors.
pub fn decode_mm(y: &StackedMeasurements<'_>, stacked: &StackedCodebook) -> Result<DecodeResult> {
    if !y.part1.mode().is_exact() || !y.part2.mode().is_exact() {
        return invalid("Mix-and-Match requires exact integer measurements");
    }
    if y.part1.codebook() != stacked.part1() || y.part2.codebook() != stacked.part2() {
        return invalid("measurements were not produced by this stacked codebook");
    }
    if y.part1.missing_mask().is_some() || y.part2.missing_mask().is_some() {
        return invalid("Mix-and-Match needs every row observed");
    }
    let n = stacked.n();
    let fail = |reason: String| -> Result<DecodeResult> {
        Ok(DecodeResult {
            recovered: SparseSignal::empty(n, ValueMode::ExactInteger)?,
            status: DecodeStatus::Contradiction { reason },
            iterations: 1,
        })
    };
    let values = match identify_values(y.part1.values())? {
        Ok(v) => v,
        Err(f) => return fail(f.to_string()),
    };
    let recovered = match identify_support(&values, y.part2.values(), n)? {
        Ok(s) => s,
        Err(f) => return fail(f.to_string()),
    };
    let ok = y.part1.agrees_with(encode(&recovered, stacked.part1())?.values())
        && y.part2.agrees_with(encode(&recovered, stacked.part2())?.values());
    if !ok {
        return Ok(DecodeResult {
            recovered,
            status: DecodeStatus::Contradiction { reason: "re-encoded signal does not reproduce y".into() },
            iterations: 1,
        });
    }
    Ok(DecodeResult { recovered, status: DecodeStatus::Success, iterations: 1 })
}
