//! Summarized support index inference (SSII).
//!
//! Each distinct nonzero value of `y` is tried as a single signal entry: the
//! summaries of all rows carrying that value are merged into one label. Bits
//! left open are filled from rows that are zero (a subset for which exactly
//! one compatible pattern is still nonzero pins that pattern). A fully
//! determined label is subtracted from `y` and the search repeats until `y`
//! vanishes or a pass makes no progress.

use std::collections::BTreeMap;
use std::fmt;

use crate::codebook::Label;
use crate::error::{Error, Result};
use crate::operator::{encode, group_equal, MeasurementVector};
use crate::signal::{Entry, SparseSignal};

/// A label under construction: bits outside `known` are unassigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartialLabel {
    n: u8,
    known: u64,
    bits: u64,
}

/// Two summaries demanded different values for the same bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conflict {
    pub position: u8,
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conflicting assignments at bit {}", self.position)
    }
}

impl PartialLabel {
    pub fn new(n: u8) -> Self {
        PartialLabel { n, known: 0, bits: 0 }
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    /// Mask (over label bits) of assigned positions.
    pub fn known_mask(&self) -> u64 {
        self.known
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn known_count(&self) -> u32 {
        self.known.count_ones()
    }

    pub fn is_known(&self, position: u8) -> bool {
        self.known >> (self.n - position) & 1 == 1
    }

    pub fn is_complete(&self) -> bool {
        self.known.count_ones() == self.n as u32
    }

    /// Sets one bit (1-based position). Re-assigning the same value is a
    /// no-op; a different value is a [`Conflict`] and nothing changes.
    pub fn assign(&mut self, position: u8, bit: u8) -> std::result::Result<(), Conflict> {
        let m = 1u64 << (self.n - position);
        self.merge(m, if bit == 1 { m } else { 0 })
    }

    /// Merges the assignments in `bits` on the positions of `mask`.
    pub fn merge(&mut self, mask: u64, bits: u64) -> std::result::Result<(), Conflict> {
        let clash = (self.bits ^ bits) & self.known & mask;
        if clash != 0 {
            let position = self.n - (63 - clash.leading_zeros()) as u8;
            return Err(Conflict { position });
        }
        self.known |= mask;
        self.bits |= bits & mask;
        Ok(())
    }

    pub fn to_label(&self) -> Option<Label> {
        self.is_complete().then(|| Label::new(self.n, self.bits).expect("complete label fits"))
    }
}

impl fmt::Display for PartialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in 1..=self.n {
            let c = if !self.is_known(p) {
                '*'
            } else if self.bits >> (self.n - p) & 1 == 1 {
                '1'
            } else {
                '0'
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StallReason {
    /// A full pass over the value groups accepted no label.
    NoProgress,
    /// The outer iteration budget ran out.
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecodeStatus {
    Success,
    Partial { residual: Vec<f64>, reason: StallReason },
    Contradiction { reason: String },
}

impl DecodeStatus {
    pub fn name(&self) -> &'static str {
        match self {
            DecodeStatus::Success => "success",
            DecodeStatus::Partial { .. } => "partial",
            DecodeStatus::Contradiction { .. } => "contradiction",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Entries recovered so far (everything, on success).
    pub recovered: SparseSignal,
    pub status: DecodeStatus,
    pub iterations: usize,
}

impl DecodeResult {
    pub fn is_success(&self) -> bool {
        self.status == DecodeStatus::Success
    }

    /// `status=... iterations=...`
    pub fn status_line(&self) -> String {
        format!("status={} iterations={}", self.status.name(), self.iterations)
    }
}

/// Which rows count as candidates during zero-row completion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionRule {
    /// Any observed nonzero row.
    #[default]
    Nonzero,
    /// With nonnegative measurements, only rows holding at least the value
    /// being placed; a row below it cannot contain the entry.
    AtLeastValue,
    /// `Nonzero`, switching to `AtLeastValue` for a pass only after a
    /// `Nonzero` pass has stalled.
    Escalating,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SsiiOptions {
    /// Maximum number of passes over the value groups.
    pub max_iterations: usize,
    pub completion: CompletionRule,
    /// Regroup and start a new pass after every accepted label; otherwise the
    /// pass continues over the remaining groups.
    pub restart: bool,
}

impl SsiiOptions {
    /// Budget of `4 k + 16` passes for signals of sparsity up to `k`.
    pub fn for_sparsity(k_max: usize) -> Self {
        SsiiOptions { max_iterations: 4 * k_max + 16, completion: CompletionRule::default(), restart: true }
    }

    pub fn with_completion(mut self, completion: CompletionRule) -> Self {
        self.completion = completion;
        self
    }
}

/// Merges `b(S_i) := c_i` over the rows of one value group, then completes
/// the open bits from zero rows.
pub fn infer_label(rows: &[usize], y: &MeasurementVector<'_>) -> std::result::Result<PartialLabel, Conflict> {
    infer_with(rows, y, None)
}

fn infer_with(
    rows: &[usize],
    y: &MeasurementVector<'_>,
    threshold: Option<f64>,
) -> std::result::Result<PartialLabel, Conflict> {
    let codebook = y.codebook();
    let d = codebook.d();
    let mut b = PartialLabel::new(codebook.n());
    for &r in rows {
        let subset = &codebook.subsets()[r >> d];
        let pattern = (r & ((1 << d) - 1)) as u32;
        b.merge(subset.label_mask(), subset.scatter(pattern))?;
    }
    if b.is_complete() {
        return Ok(b);
    }
    Ok(complete_with(b, y, threshold))
}

/// Fills unknown bits of `b`: for a subset where exactly one pattern
/// compatible with the known bits has a nonzero measurement, that pattern is
/// adopted. Repeats until `b` is complete or no subset pins anything.
pub fn zero_row_completion(b: PartialLabel, y: &MeasurementVector<'_>) -> PartialLabel {
    complete_with(b, y, None)
}

fn complete_with(mut b: PartialLabel, y: &MeasurementVector<'_>, threshold: Option<f64>) -> PartialLabel {
    let codebook = y.codebook();
    let d = codebook.d();
    let values = y.values();
    let candidate = |r: usize| -> bool {
        if y.is_missing(r) {
            return true;
        }
        match threshold {
            None => y.is_nonzero(r),
            Some(t) => y.is_nonzero(r) && values[r] >= t,
        }
    };
    loop {
        let mut changed = false;
        for (i, subset) in codebook.subsets().iter().enumerate() {
            if b.is_complete() {
                return b;
            }
            let open = subset.label_mask() & !b.known;
            if open == 0 {
                continue;
            }
            let base = subset.gather(b.bits);
            let free = subset.gather(open);
            // walk all submasks of `free`
            let mut sub = free;
            let mut hits = 0;
            let mut hit_pattern = 0u32;
            loop {
                let pattern = base | sub;
                if candidate((i << d) | pattern as usize) {
                    hits += 1;
                    hit_pattern = pattern;
                    if hits > 1 {
                        break;
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & free;
            }
            match hits {
                // no compatible row survives: `b` cannot be a support label
                0 => return b,
                1 => {
                    b.merge(open, subset.scatter(hit_pattern)).expect("open bits cannot clash");
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return b;
        }
    }
}

/// A fully determined label is taken only if every row it conforms to is
/// still nonzero and, for nonnegative data, holds at least `value`.
fn acceptable(y: &MeasurementVector<'_>, label: &Label, value: f64) -> bool {
    let slack = y.mode().tolerance() * value.abs() + y.zero_tolerance();
    y.codebook().rows_of_bits(label.bits()).all(|r| {
        if y.is_missing(r) {
            return true;
        }
        y.is_nonzero(r) && (!y.is_nonnegative() || y.values()[r] >= value - slack)
    })
}

/// Runs SSII on `y`.
pub fn decode_ssii(y: &MeasurementVector<'_>, options: SsiiOptions) -> Result<DecodeResult> {
    let codebook = y.codebook();
    let mode = y.mode();
    let mut residual = y.clone();
    let mut found: BTreeMap<Label, f64> = BTreeMap::new();
    let mut iterations = 0;
    let mut escalated = false;

    let finish = |found: &BTreeMap<Label, f64>, status: DecodeStatus, iterations: usize| -> Result<DecodeResult> {
        let entries = found.iter().map(|(&label, &value)| Entry { label, value }).collect();
        let recovered = SparseSignal::new(codebook.n(), mode, entries)?;
        Ok(DecodeResult { recovered, status, iterations })
    };

    loop {
        if residual.all_zero() {
            break;
        }
        if iterations >= options.max_iterations {
            let residual = residual.values().to_vec();
            return finish(&found, DecodeStatus::Partial { residual, reason: StallReason::IterationLimit }, iterations);
        }
        iterations += 1;

        let mut groups = group_equal(&residual).groups;
        groups.sort_by(|a, b| b.rows.len().cmp(&a.rows.len()).then(b.value.total_cmp(&a.value)));

        let mut progress = false;
        for group in groups {
            // earlier subtractions in this pass may have moved some rows
            let rows: Vec<usize> = group
                .rows
                .iter()
                .copied()
                .filter(|&r| residual.is_nonzero(r) && mode.approx_eq(residual.values()[r], group.value))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let by_value = match options.completion {
                CompletionRule::Nonzero => false,
                CompletionRule::AtLeastValue => true,
                CompletionRule::Escalating => escalated,
            };
            let threshold = match by_value {
                true if residual.is_nonnegative() => {
                    Some(group.value - mode.tolerance() * group.value.abs() - residual.zero_tolerance())
                }
                _ => None,
            };
            let Ok(b) = infer_with(&rows, &residual, threshold) else {
                continue;
            };
            let Some(label) = b.to_label() else {
                continue;
            };
            if !acceptable(&residual, &label, group.value) {
                continue;
            }
            match residual.subtract(&label, group.value) {
                Ok(()) => {}
                Err(Error::Contradiction(reason)) => {
                    return finish(&found, DecodeStatus::Contradiction { reason }, iterations);
                }
                Err(e) => return Err(e),
            }
            let v = found.entry(label).or_insert(0.0);
            *v += group.value;
            if *v == 0.0 {
                found.remove(&label);
            }
            progress = true;
            if options.restart {
                break;
            }
        }
        if progress {
            escalated = false;
        } else if options.completion == CompletionRule::Escalating && !escalated && residual.is_nonnegative() {
            escalated = true;
        } else {
            let residual = residual.values().to_vec();
            return finish(&found, DecodeStatus::Partial { residual, reason: StallReason::NoProgress }, iterations);
        }
    }

    let result = finish(&found, DecodeStatus::Success, iterations)?;
    let reencoded = encode(&result.recovered, codebook)?;
    if !y.agrees_with(reencoded.values()) {
        return finish(
            &found,
            DecodeStatus::Contradiction { reason: "re-encoded signal does not reproduce y".into() },
            iterations,
        );
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{BitSubset, Codebook};
    use crate::signal::ValueMode;

    fn row(c: &Codebook, positions: &[u8], pattern: u32) -> usize {
        let s = BitSubset::new(c.n(), positions.to_vec()).unwrap();
        c.row_index(c.subset_index(&s).unwrap(), pattern).unwrap()
    }

    fn signal(n: u8, entries: &[(u64, f64)]) -> SparseSignal {
        let e = entries.iter().map(|&(b, v)| Entry { label: Label::new(n, b).unwrap(), value: v }).collect();
        SparseSignal::new(n, ValueMode::ExactInteger, e).unwrap()
    }

    #[test]
    fn partial_label_assign_and_conflict() {
        let mut b = PartialLabel::new(4);
        b.assign(1, 1).unwrap();
        b.assign(1, 1).unwrap();
        assert_eq!(b.assign(1, 0), Err(Conflict { position: 1 }));
        assert_eq!(b.to_string(), "1***");
        b.assign(4, 0).unwrap();
        assert_eq!(b.known_count(), 2);
        assert!(b.to_label().is_none());
    }

    #[test]
    fn infer_from_disjoint_summaries() {
        let c = Codebook::complete(4, 2).unwrap();
        let y = MeasurementVector::zeros(&c, ValueMode::ExactInteger);
        let rows = [row(&c, &[1, 2], 0b10), row(&c, &[3, 4], 0b01)];
        let b = infer_label(&rows, &y).unwrap();
        assert_eq!(b.to_label().unwrap().to_bitstring(), "1001");
    }

    #[test]
    fn infer_reports_conflict() {
        let c = Codebook::complete(4, 2).unwrap();
        let y = MeasurementVector::zeros(&c, ValueMode::ExactInteger);
        let rows = [row(&c, &[1, 2], 0b10), row(&c, &[2, 3], 0b11)];
        assert_eq!(infer_label(&rows, &y), Err(Conflict { position: 2 }));
    }

    #[test]
    fn single_summary_leaves_bits_open() {
        let c = Codebook::complete(4, 2).unwrap();
        // two entries sharing no pattern on any subset keep every row ambiguous
        let y = encode(&signal(4, &[(0b1000, 5.0), (0b0111, 3.0), (0b1011, 4.0), (0b1100, 9.0)]), &c).unwrap();
        let mut b = PartialLabel::new(4);
        b.merge(0b1100, 0b1000).unwrap();
        let out = zero_row_completion(b, &y);
        assert!(out.is_known(1) && out.is_known(2));
        assert_eq!(out, b);
    }

    #[test]
    fn completion_pins_bit_from_zero_rows() {
        // b known on {1,2} = 10; on {2,3} only pattern 01 is nonzero among
        // the patterns with bit2 = 0
        let c = Codebook::from_subsets(
            4,
            2,
            vec![BitSubset::new(4, vec![1, 2]).unwrap(), BitSubset::new(4, vec![2, 3]).unwrap()],
        )
        .unwrap();
        let y = encode(&signal(4, &[(0b1010, 5.0), (0b0110, 3.0)]), &c).unwrap();
        assert!(y.is_nonzero(row(&c, &[2, 3], 0b01)));
        assert!(y.is_zero(row(&c, &[2, 3], 0b00)));
        let mut b = PartialLabel::new(4);
        b.merge(0b1100, 0b1000).unwrap();
        let out = zero_row_completion(b, &y);
        assert!(out.is_known(3));
        assert_eq!(out.bits() >> 1 & 1, 1);
        assert!(!out.is_known(4));
    }

    #[test]
    fn completion_of_complete_label_is_identity() {
        let c = Codebook::complete(4, 2).unwrap();
        let y = MeasurementVector::zeros(&c, ValueMode::ExactInteger);
        let mut b = PartialLabel::new(4);
        b.merge(0b1111, 0b0110).unwrap();
        assert_eq!(zero_row_completion(b, &y), b);
    }

    #[test]
    fn decodes_single_entry() {
        let c = Codebook::complete(4, 2).unwrap();
        let x = signal(4, &[(0b1010, 7.0)]);
        let y = encode(&x, &c).unwrap();
        let g = group_equal(&y);
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].rows.len(), 6);
        let r = decode_ssii(&y, SsiiOptions::for_sparsity(1)).unwrap();
        assert!(r.is_success());
        assert_eq!(r.recovered, x);
        assert_eq!(r.status_line(), "status=success iterations=1");
    }

    #[test]
    fn zero_measurements_decode_to_empty() {
        let c = Codebook::complete(5, 2).unwrap();
        let y = MeasurementVector::zeros(&c, ValueMode::ExactInteger);
        let r = decode_ssii(&y, SsiiOptions::for_sparsity(0)).unwrap();
        assert!(r.is_success());
        assert_eq!(r.recovered.k(), 0);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn strong_regime_small_example() {
        let c = Codebook::complete(6, 3).unwrap();
        let x = signal(6, &[(0b000000, 3.0), (0b111000, 5.0), (0b010101, 9.0), (0b110011, 20.0)]);
        let y = encode(&x, &c).unwrap();
        let r = decode_ssii(&y, SsiiOptions::for_sparsity(4)).unwrap();
        assert!(r.is_success(), "{:?}", r.status);
        assert_eq!(r.recovered, x);
    }

    #[test]
    fn undecodable_input_is_partial() {
        // one subset only: bits outside it are never observed
        let c = Codebook::from_subsets(4, 2, vec![BitSubset::new(4, vec![1, 2]).unwrap()]).unwrap();
        let y = encode(&signal(4, &[(0b1011, 4.0)]), &c).unwrap();
        let r = decode_ssii(&y, SsiiOptions::for_sparsity(1)).unwrap();
        assert!(matches!(r.status, DecodeStatus::Partial { reason: StallReason::NoProgress, .. }));
        assert_eq!(r.recovered.k(), 0);
    }

    #[test]
    fn iteration_limit_is_reported() {
        let c = Codebook::complete(6, 3).unwrap();
        let x = signal(6, &[(1, 3.0), (60, 5.0), (21, 9.0)]);
        let y = encode(&x, &c).unwrap();
        let r = decode_ssii(&y, SsiiOptions { max_iterations: 0, ..SsiiOptions::for_sparsity(1) }).unwrap();
        assert!(matches!(r.status, DecodeStatus::Partial { reason: StallReason::IterationLimit, .. }));
    }
}
