//! Binary labels, bit subsets, summaries and summary codebooks.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Labels are stored in one machine word; `N = 2^n` is never materialized.
pub const MAX_BITS: u8 = 63;

/// Upper bound on the number of measurement rows a codebook may define.
pub const MAX_ROWS: usize = 1 << 26;

/// Exact binomial coefficient, `None` on overflow of `u128`.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// The `n`-bit name of a signal coordinate. Bit position 1 is the most
/// significant bit, so the label value equals the zero-based column index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    n: u8,
    bits: u64,
}

impl Label {
    pub fn new(n: u8, bits: u64) -> Result<Self> {
        check_bits(n)?;
        if bits >> n != 0 {
            return invalid(format!("label value {bits} does not fit in {n} bits"));
        }
        Ok(Label { n, bits })
    }

    /// Parses an `n`-character string of `0`/`1`, position 1 first.
    pub fn from_bitstring(s: &str) -> Result<Self> {
        let n = u8::try_from(s.len()).map_err(|_| Error::Parse(format!("label too long: {s}")))?;
        check_bits(n)?;
        let mut bits = 0u64;
        for ch in s.chars() {
            bits = (bits << 1)
                | match ch {
                    '0' => 0,
                    '1' => 1,
                    _ => return Err(Error::Parse(format!("bad label bitstring {s:?}"))),
                };
        }
        Ok(Label { n, bits })
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Zero-based column index of this label in `A`.
    pub fn column(&self) -> u64 {
        self.bits
    }

    /// Bit at 1-based `position` (1 = most significant).
    pub fn bit(&self, position: u8) -> u8 {
        debug_assert!(position >= 1 && position <= self.n);
        ((self.bits >> (self.n - position)) & 1) as u8
    }

    pub fn to_bitstring(&self) -> String {
        (1..=self.n).map(|p| if self.bit(p) == 1 { '1' } else { '0' }).collect()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

fn check_bits(n: u8) -> Result<()> {
    if n == 0 || n > MAX_BITS {
        return invalid(format!("bit count must be in 1..={MAX_BITS}, got {n}"));
    }
    Ok(())
}

/// A set of `d` bit positions out of `{1..n}`, kept in increasing order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitSubset {
    n: u8,
    positions: Vec<u8>,
    /// The positions as a mask over label bits.
    mask: u64,
}

impl BitSubset {
    /// Positions must be strictly increasing and within `1..=n`.
    pub fn new(n: u8, positions: Vec<u8>) -> Result<Self> {
        check_bits(n)?;
        if positions.is_empty() {
            return invalid("bit subset must be nonempty");
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("subset positions must be strictly increasing: {positions:?}"));
        }
        if positions[0] < 1 || *positions.last().unwrap() > n {
            return invalid(format!("subset positions {positions:?} outside 1..={n}"));
        }
        let mask = positions.iter().fold(0u64, |m, &p| m | 1u64 << (n - p));
        Ok(BitSubset { n, positions, mask })
    }

    /// Builds the subset whose positions are the set bits of `mask`.
    pub(crate) fn from_mask(n: u8, mask: u64) -> Self {
        let positions = (1..=n).filter(|&p| mask >> (n - p) & 1 == 1).collect();
        BitSubset { n, positions, mask }
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn d(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[u8] {
        &self.positions
    }

    pub fn label_mask(&self) -> u64 {
        self.mask
    }

    /// Gathers the label bits at this subset's positions; position
    /// `positions[0]` lands in the most significant pattern bit.
    #[inline]
    pub(crate) fn gather(&self, bits: u64) -> u32 {
        let mut pattern = 0u32;
        for &p in &self.positions {
            pattern = (pattern << 1) | ((bits >> (self.n - p)) & 1) as u32;
        }
        pattern
    }

    /// Inverse of [`gather`](Self::gather): spreads a pattern onto label bits.
    #[inline]
    pub(crate) fn scatter(&self, pattern: u32) -> u64 {
        let d = self.positions.len();
        let mut bits = 0u64;
        for (t, &p) in self.positions.iter().enumerate() {
            bits |= (((pattern >> (d - 1 - t)) & 1) as u64) << (self.n - p);
        }
        bits
    }
}

impl fmt::Display for BitSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.positions.iter().map(|p| p.to_string()).collect();
        f.write_str(&parts.join(";"))
    }
}

/// One measurement row: labels whose bits on `subset` equal `pattern`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Summary {
    pub subset: BitSubset,
    pub pattern: u32,
}

impl Summary {
    pub fn new(subset: BitSubset, pattern: u32) -> Result<Self> {
        if (pattern as u64) >> subset.d() != 0 {
            return invalid(format!("pattern {pattern} does not fit in {} bits", subset.d()));
        }
        Ok(Summary { subset, pattern })
    }

    pub fn pattern_bitstring(&self) -> String {
        pattern_to_bitstring(self.pattern, self.subset.d())
    }
}

pub fn pattern_to_bitstring(pattern: u32, d: usize) -> String {
    (0..d).map(|t| if pattern >> (d - 1 - t) & 1 == 1 { '1' } else { '0' }).collect()
}

pub fn pattern_from_bitstring(s: &str) -> Result<u32> {
    if s.is_empty() || s.len() > 31 {
        return Err(Error::Parse(format!("bad pattern {s:?}")));
    }
    s.chars().try_fold(0u32, |acc, ch| match ch {
        '0' => Ok(acc << 1),
        '1' => Ok(acc << 1 | 1),
        _ => Err(Error::Parse(format!("bad pattern {s:?}"))),
    })
}

/// The bits of `label` on `subset`, in subset order.
pub fn extract(label: &Label, subset: &BitSubset) -> Result<u32> {
    if label.n != subset.n {
        return invalid(format!("label has {} bits, subset expects {}", label.n, subset.n));
    }
    Ok(subset.gather(label.bits))
}

/// Whether `label` belongs to the support of the row for `summary`.
pub fn conforms(label: &Label, summary: &Summary) -> Result<bool> {
    Ok(extract(label, &summary.subset)? == summary.pattern)
}

/// How a random codebook handles repeated subset draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Draw `m` subsets with replacement and drop repeats, so the codebook
    /// may hold fewer than `m` subsets.
    #[default]
    Dedup,
    /// Redraw until exactly `m` distinct subsets are held.
    Distinct,
}

/// `m` distinct `d`-subsets of `{1..n}`, each crossed with all `2^d` patterns.
/// Row `i * 2^d + j` is the summary `(subsets[i], j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codebook {
    n: u8,
    d: usize,
    subsets: Vec<BitSubset>,
    /// Number of subsets asked for; differs from `subsets.len()` only for
    /// deduplicated random codebooks.
    requested_m: usize,
}

impl Codebook {
    pub fn from_subsets(n: u8, d: usize, subsets: Vec<BitSubset>) -> Result<Self> {
        check_bits(n)?;
        if d == 0 || d > n as usize {
            return invalid(format!("summary width d={d} must satisfy 1 <= d <= n={n}"));
        }
        if subsets.is_empty() {
            return invalid("codebook needs at least one subset");
        }
        let mut seen = HashSet::with_capacity(subsets.len());
        for s in &subsets {
            if s.n != n || s.d() != d {
                return invalid(format!("subset {s} is not a {d}-subset of 1..={n}"));
            }
            if !seen.insert(s.mask) {
                return invalid(format!("duplicate subset {s}"));
            }
        }
        check_rows(subsets.len(), d)?;
        let requested_m = subsets.len();
        Ok(Codebook { n, d, subsets, requested_m })
    }

    /// All `C(n, d)` subsets in lexicographic order.
    pub fn complete(n: u8, d: usize) -> Result<Self> {
        check_bits(n)?;
        if d == 0 || d > n as usize {
            return invalid(format!("summary width d={d} must satisfy 1 <= d <= n={n}"));
        }
        let m = subset_count(n, d)?;
        check_rows(m, d)?;
        let subsets = lexicographic_subsets(n, d).map(|mask| BitSubset::from_mask(n, mask)).collect();
        Ok(Codebook { n, d, subsets, requested_m: m })
    }

    /// `m` uniformly random `d`-subsets; deterministic in `seed`.
    pub fn random(n: u8, d: usize, m: usize, seed: u64, mode: SamplingMode) -> Result<Self> {
        check_bits(n)?;
        if d == 0 || d > n as usize {
            return invalid(format!("summary width d={d} must satisfy 1 <= d <= n={n}"));
        }
        if m == 0 {
            return invalid("codebook needs at least one subset");
        }
        let total = binomial(n as u64, d as u64).unwrap_or(u128::MAX);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks: Vec<u64> = match mode {
            SamplingMode::Dedup => {
                check_rows(m, d)?;
                let mut seen = HashSet::with_capacity(m);
                (0..m).map(|_| random_subset_mask(&mut rng, n, d)).filter(|mask| seen.insert(*mask)).collect()
            }
            SamplingMode::Distinct => {
                if m as u128 > total {
                    return invalid(format!("cannot draw {m} distinct {d}-subsets out of {total}"));
                }
                check_rows(m, d)?;
                if 2 * m as u128 > total {
                    // dense regime: choose among all subsets without rejection
                    let all: Vec<u64> = lexicographic_subsets(n, d).collect();
                    index::sample(&mut rng, all.len(), m).into_iter().map(|i| all[i]).collect()
                } else {
                    let mut seen = HashSet::with_capacity(m);
                    let mut out = Vec::with_capacity(m);
                    while out.len() < m {
                        let mask = random_subset_mask(&mut rng, n, d);
                        if seen.insert(mask) {
                            out.push(mask);
                        }
                    }
                    out
                }
            }
        };
        let subsets = masks.into_iter().map(|mask| BitSubset::from_mask(n, mask)).collect();
        Ok(Codebook { n, d, subsets, requested_m: m })
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of distinct subsets actually held.
    pub fn m(&self) -> usize {
        self.subsets.len()
    }

    pub fn requested_m(&self) -> usize {
        self.requested_m
    }

    pub fn subsets(&self) -> &[BitSubset] {
        &self.subsets
    }

    pub fn patterns_per_subset(&self) -> usize {
        1 << self.d
    }

    /// Total measurement count `M = m * 2^d`.
    pub fn rows(&self) -> usize {
        self.subsets.len() << self.d
    }

    pub fn row_index(&self, subset_index: usize, pattern: u32) -> Result<usize> {
        if subset_index >= self.subsets.len() {
            return invalid(format!("subset index {subset_index} out of range (m={})", self.m()));
        }
        if (pattern as u64) >> self.d != 0 {
            return invalid(format!("pattern {pattern} does not fit in d={} bits", self.d));
        }
        Ok((subset_index << self.d) | pattern as usize)
    }

    pub fn summary_of_row(&self, row: usize) -> Result<Summary> {
        if row >= self.rows() {
            return invalid(format!("row {row} out of range (M={})", self.rows()));
        }
        let subset = self.subsets[row >> self.d].clone();
        Ok(Summary { subset, pattern: (row & ((1 << self.d) - 1)) as u32 })
    }

    /// Position of `subset` in this codebook, if present.
    pub fn subset_index(&self, subset: &BitSubset) -> Option<usize> {
        self.subsets.iter().position(|s| s == subset)
    }

    /// The `m` rows that `label` conforms to, one per subset, in subset order.
    pub fn conforming_rows(&self, label: &Label) -> Result<impl Iterator<Item = usize> + '_> {
        if label.n != self.n {
            return invalid(format!("label has {} bits, codebook expects {}", label.n, self.n));
        }
        Ok(self.rows_of_bits(label.bits))
    }

    #[inline]
    pub(crate) fn rows_of_bits(&self, bits: u64) -> impl Iterator<Item = usize> + '_ {
        let d = self.d;
        self.subsets.iter().enumerate().map(move |(i, s)| (i << d) | s.gather(bits) as usize)
    }

    pub fn to_json(&self) -> Result<String> {
        let file =
            CodebookFile { n: self.n, d: self.d, subsets: self.subsets.iter().map(|s| s.positions.clone()).collect() };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodebookFile = serde_json::from_str(text)?;
        let subsets = file.subsets.into_iter().map(|p| BitSubset::new(file.n, p)).collect::<Result<Vec<_>>>()?;
        Codebook::from_subsets(file.n, file.d, subsets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Codebook::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    n: u8,
    d: usize,
    subsets: Vec<Vec<u8>>,
}

fn subset_count(n: u8, d: usize) -> Result<usize> {
    binomial(n as u64, d as u64)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::Capacity(format!("C({n},{d}) does not fit in memory")))
}

fn check_rows(m: usize, d: usize) -> Result<()> {
    let rows = if d >= usize::BITS as usize { None } else { m.checked_mul(1usize << d) };
    match rows {
        Some(r) if r <= MAX_ROWS => Ok(()),
        _ => Err(Error::Capacity(format!("m={m}, d={d} exceeds {MAX_ROWS} measurement rows"))),
    }
}

fn random_subset_mask<R: Rng>(rng: &mut R, n: u8, d: usize) -> u64 {
    index::sample(rng, n as usize, d).into_iter().fold(0u64, |m, i| m | 1u64 << i)
}

/// Masks of all `d`-subsets of `{1..n}` in lexicographic order of their
/// position lists.
fn lexicographic_subsets(n: u8, d: usize) -> impl Iterator<Item = u64> {
    let n = n as usize;
    let mut current: Option<Vec<usize>> = Some((1..=d).collect());
    std::iter::from_fn(move || {
        let positions = current.take()?;
        let mask = positions.iter().fold(0u64, |m, &p| m | 1u64 << (n - p));
        // advance to the next combination
        let mut next = positions;
        let mut i = d;
        while i > 0 && next[i - 1] == n - d + i {
            i -= 1;
        }
        if i > 0 {
            next[i - 1] += 1;
            for j in i..d {
                next[j] = next[j - 1] + 1;
            }
            current = Some(next);
        }
        Some(mask)
    })
}
