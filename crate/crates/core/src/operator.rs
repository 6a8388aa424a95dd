//! The implicit measurement operator `y = A x` of a summary codebook.
//!
//! `A` is never formed: an entry with label `b` contributes to exactly one
//! row per subset, namely `(S_i, b(S_i))`, so encoding costs `O(k * m * d)`.

use std::io::Write;

use crate::codebook::{pattern_to_bitstring, Codebook, Label};
use crate::error::{invalid, Error, Result};
use crate::signal::{SparseSignal, ValueMode};

/// Dense materialization is refused above this many label bits.
pub const MAX_DENSE_BITS: u8 = 14;
const MAX_DENSE_CELLS: usize = 1 << 28;

/// Measurements indexed by codebook row.
#[derive(Clone, Debug)]
pub struct MeasurementVector<'a> {
    codebook: &'a Codebook,
    values: Vec<f64>,
    mode: ValueMode,
    /// Rows with no observation (partial ingestion). Never treated as zero.
    missing: Option<Vec<bool>>,
    nonnegative: bool,
    zero_tol: f64,
}

impl<'a> MeasurementVector<'a> {
    pub fn zeros(codebook: &'a Codebook, mode: ValueMode) -> Self {
        MeasurementVector {
            codebook,
            values: vec![0.0; codebook.rows()],
            mode,
            missing: None,
            nonnegative: true,
            zero_tol: 0.0,
        }
    }

    /// Wraps externally supplied values. `missing[r] == true` marks row `r`
    /// as unobserved; its value is ignored.
    pub fn from_values(
        codebook: &'a Codebook,
        values: Vec<f64>,
        mode: ValueMode,
        missing: Option<Vec<bool>>,
    ) -> Result<Self> {
        if values.len() != codebook.rows() {
            return invalid(format!("expected {} measurements, got {}", codebook.rows(), values.len()));
        }
        if let Some(m) = &missing {
            if m.len() != values.len() {
                return invalid("missing-row mask has the wrong length");
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("measurements must be finite");
        }
        let mut y = MeasurementVector { codebook, values, mode, missing, nonnegative: true, zero_tol: 0.0 };
        if let Some(m) = &y.missing {
            for (v, &miss) in y.values.iter_mut().zip(m) {
                if miss {
                    *v = 0.0;
                }
            }
        }
        y.nonnegative = y.values.iter().all(|&v| v >= 0.0);
        y.reset_scale();
        Ok(y)
    }

    fn reset_scale(&mut self) {
        let scale = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.zero_tol = self.mode.tolerance() * scale;
    }

    pub fn codebook(&self) -> &'a Codebook {
        self.codebook
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> ValueMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether the contradiction check on negative entries is active.
    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    /// Absolute threshold below which a real-mode entry counts as zero.
    pub fn zero_tolerance(&self) -> f64 {
        self.zero_tol
    }

    #[inline]
    pub fn is_missing(&self, row: usize) -> bool {
        self.missing.as_ref().is_some_and(|m| m[row])
    }

    pub fn missing_mask(&self) -> Option<&[bool]> {
        self.missing.as_deref()
    }

    /// Observed and equal to zero.
    #[inline]
    pub fn is_zero(&self, row: usize) -> bool {
        !self.is_missing(row) && self.values[row].abs() <= self.zero_tol
    }

    /// Observed and nonzero.
    #[inline]
    pub fn is_nonzero(&self, row: usize) -> bool {
        !self.is_missing(row) && self.values[row].abs() > self.zero_tol
    }

    pub fn all_zero(&self) -> bool {
        (0..self.values.len()).all(|r| self.is_missing(r) || self.is_zero(r))
    }

    pub fn nonzero_count(&self) -> usize {
        (0..self.values.len()).filter(|&r| self.is_nonzero(r)).count()
    }

    /// Adds `value` to the `m` rows `label` conforms to.
    pub fn add(&mut self, label: &Label, value: f64) -> Result<()> {
        let rows: Vec<usize> = self.codebook.conforming_rows(label)?.collect();
        for r in rows {
            if !self.is_missing(r) {
                self.values[r] += value;
            }
        }
        Ok(())
    }

    /// Removes one signal entry: `value` is subtracted from the `m` rows
    /// `label` conforms to. With nonnegative measurements a result below zero
    /// is a [`Error::Contradiction`] and leaves `self` untouched.
    pub fn subtract(&mut self, label: &Label, value: f64) -> Result<()> {
        let rows: Vec<usize> = self.codebook.conforming_rows(label)?.filter(|&r| !self.is_missing(r)).collect();
        if self.nonnegative {
            if let Some(&r) = rows.iter().find(|&&r| self.values[r] - value < -self.zero_tol) {
                return Err(Error::Contradiction(format!(
                    "removing {value} at {label} drives row {r} to {}",
                    self.values[r] - value
                )));
            }
        }
        for r in rows {
            let v = self.values[r] - value;
            // snap real-mode residue to zero
            self.values[r] = if v.abs() <= self.zero_tol { 0.0 } else { v };
        }
        Ok(())
    }

    /// Exact (integer mode) or tolerance (real mode) agreement on every
    /// observed row.
    pub fn agrees_with(&self, other: &[f64]) -> bool {
        other.len() == self.values.len()
            && (0..self.values.len()).all(|r| {
                if self.is_missing(r) {
                    return true;
                }
                let (a, b) = (self.values[r], other[r]);
                match self.mode {
                    ValueMode::ExactInteger => a == b,
                    ValueMode::Real { tolerance } => (a - b).abs() <= tolerance * a.abs().max(b.abs()) + self.zero_tol,
                }
            })
    }

    /// Writes `subset,pattern,value` rows in codebook order. Missing rows are
    /// skipped.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subset", "pattern", "value"])?;
        for r in 0..self.values.len() {
            if self.is_missing(r) {
                continue;
            }
            let (subset, pattern) = self.row_strings(r);
            w.write_record([subset, pattern, format_value(self.values[r], self.mode)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub(crate) fn row_strings(&self, row: usize) -> (String, String) {
        let d = self.codebook.d();
        let subset = &self.codebook.subsets()[row >> d];
        (subset.to_string(), pattern_to_bitstring((row & ((1 << d) - 1)) as u32, d))
    }
}

pub(crate) fn format_value(v: f64, mode: ValueMode) -> String {
    match mode {
        ValueMode::ExactInteger => format!("{}", v as i64),
        ValueMode::Real { .. } => format!("{v}"),
    }
}

/// `y = A x` computed through the implicit operator.
pub fn encode<'a>(signal: &SparseSignal, codebook: &'a Codebook) -> Result<MeasurementVector<'a>> {
    if signal.n() != codebook.n() {
        return invalid(format!("signal has {} bits, codebook expects {}", signal.n(), codebook.n()));
    }
    let mut values = vec![0.0; codebook.rows()];
    for e in signal.entries() {
        for r in codebook.rows_of_bits(e.label.bits()) {
            values[r] += e.value;
        }
    }
    let mut y =
        MeasurementVector { codebook, values, mode: signal.mode(), missing: None, nonnegative: true, zero_tol: 0.0 };
    y.nonnegative = signal.is_nonnegative();
    y.reset_scale();
    Ok(y)
}

/// `A` as a dense row-major 0/1 matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl DenseMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<usize> {
        (0..self.rows).map(|r| self.row(r).iter().map(|&a| a as usize).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.cols];
        for r in 0..self.rows {
            for (s, &a) in sums.iter_mut().zip(self.row(r)) {
                *s += a as usize;
            }
        }
        sums
    }

    pub fn multiply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return invalid(format!("vector length {} does not match {} columns", x.len(), self.cols));
        }
        Ok((0..self.rows).map(|r| self.row(r).iter().zip(x).filter(|(&a, _)| a == 1).map(|(_, &v)| v).sum()).collect())
    }
}

/// Builds `A[r][j] = 1{label_j conforms to summary_of_row(r)}` by testing
/// every (row, column) pair.
pub fn materialize_dense(codebook: &Codebook) -> Result<DenseMatrix> {
    let n = codebook.n();
    if n > MAX_DENSE_BITS {
        return Err(Error::Capacity(format!("dense matrix limited to n <= {MAX_DENSE_BITS}, got {n}")));
    }
    let cols = 1usize << n;
    let rows = codebook.rows();
    if rows.saturating_mul(cols) > MAX_DENSE_CELLS {
        return Err(Error::Capacity(format!("{rows} x {cols} dense matrix is too large")));
    }
    let mut data = vec![0u8; rows * cols];
    for r in 0..rows {
        let summary = codebook.summary_of_row(r)?;
        for j in 0..cols {
            let label = Label::new(n, j as u64)?;
            if crate::codebook::conforms(&label, &summary)? {
                data[r * cols + j] = 1;
            }
        }
    }
    Ok(DenseMatrix { rows, cols, data })
}

/// Rows of `y` sharing one value.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGroup {
    pub value: f64,
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    /// Nonzero groups in increasing value order.
    pub groups: Vec<ValueGroup>,
    pub zero_rows: Vec<usize>,
}

/// Partitions observed rows into the zero set and equal-value groups. Real
/// mode links sorted neighbours within the relative tolerance (single
/// linkage) and reports the group mean.
pub fn group_equal(y: &MeasurementVector<'_>) -> Grouping {
    let mut zero_rows = Vec::new();
    let mut nonzero: Vec<(f64, usize)> = Vec::new();
    for r in 0..y.len() {
        if y.is_missing(r) {
            continue;
        }
        if y.is_zero(r) {
            zero_rows.push(r);
        } else {
            nonzero.push((y.values[r], r));
        }
    }
    nonzero.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut groups: Vec<ValueGroup> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut last = f64::NAN;
    for (v, r) in nonzero {
        match groups.last_mut() {
            Some(g) if y.mode.approx_eq(last, v) => {
                g.rows.push(r);
                *sums.last_mut().unwrap() += v;
            }
            _ => {
                groups.push(ValueGroup { value: v, rows: vec![r] });
                sums.push(v);
            }
        }
        last = v;
    }
    if !y.mode.is_exact() {
        for (g, s) in groups.iter_mut().zip(sums) {
            g.value = s / g.rows.len() as f64;
        }
    }
    Grouping { groups, zero_rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{BitSubset, SamplingMode};
    use crate::signal::Entry;

    fn signal(n: u8, entries: &[(u64, f64)]) -> SparseSignal {
        let e = entries.iter().map(|&(b, v)| Entry { label: Label::new(n, b).unwrap(), value: v }).collect();
        SparseSignal::new(n, ValueMode::ExactInteger, e).unwrap()
    }

    #[test]
    fn empty_signal_encodes_to_zero() {
        let c = Codebook::complete(4, 2).unwrap();
        let y = encode(&SparseSignal::empty(4, ValueMode::ExactInteger).unwrap(), &c).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
        assert!(y.all_zero());
    }

    #[test]
    fn single_entry_hits_one_row_per_subset() {
        let c = Codebook::complete(4, 2).unwrap();
        let y = encode(&signal(4, &[(0b1010, 7.0)]), &c).unwrap();
        let hit: Vec<usize> = (0..c.rows()).filter(|&r| y.values()[r] == 7.0).collect();
        assert_eq!(hit.len(), 6);
        assert_eq!(y.nonzero_count(), 6);
        let s12 = BitSubset::new(4, vec![1, 2]).unwrap();
        let row = c.row_index(c.subset_index(&s12).unwrap(), 0b10).unwrap();
        assert!(hit.contains(&row));
        // 1010 on {1,2},{1,3},{1,4},{2,3},{2,4},{3,4}: 10,11,10,01,00,10
        let expected: Vec<usize> =
            [0b10, 0b11, 0b10, 0b01, 0b00, 0b10].iter().enumerate().map(|(i, &p)| c.row_index(i, p).unwrap()).collect();
        assert_eq!(hit, expected);
    }

    #[test]
    fn subtract_is_inverse_of_encoding() {
        let c = Codebook::complete(5, 3).unwrap();
        let l = Label::new(5, 0b10110).unwrap();
        let mut y = encode(&signal(5, &[(0b10110, 9.0)]), &c).unwrap();
        y.subtract(&l, 9.0).unwrap();
        assert!(y.all_zero());

        let mut y = encode(&signal(5, &[(3, 4.0), (17, 6.0)]), &c).unwrap();
        let before = y.values().to_vec();
        y.subtract(&Label::new(5, 3).unwrap(), 0.0).unwrap();
        assert_eq!(y.values(), &before[..]);
        y.subtract(&Label::new(5, 3).unwrap(), 4.0).unwrap();
        let only = encode(&signal(5, &[(17, 6.0)]), &c).unwrap();
        assert_eq!(y.values(), only.values());
    }

    #[test]
    fn subtract_detects_contradiction() {
        let c = Codebook::complete(4, 2).unwrap();
        let mut y = encode(&signal(4, &[(5, 3.0)]), &c).unwrap();
        let before = y.values().to_vec();
        let err = y.subtract(&Label::new(4, 5).unwrap(), 4.0).unwrap_err();
        assert!(matches!(err, Error::Contradiction(_)));
        assert_eq!(y.values(), &before[..]);
        assert!(y.subtract(&Label::new(4, 6).unwrap(), 1.0).is_err());
    }

    #[test]
    fn dense_matrix_shape() {
        let c = Codebook::complete(4, 2).unwrap();
        let a = materialize_dense(&c).unwrap();
        assert_eq!((a.rows(), a.cols()), (24, 16));
        assert!(a.row_sums().iter().all(|&s| s == 4));
        assert!(a.col_sums().iter().all(|&s| s == 6));
        let s12 = BitSubset::new(4, vec![1, 2]).unwrap();
        let row = c.row_index(c.subset_index(&s12).unwrap(), 0b10).unwrap();
        let ones: Vec<usize> = (0..16).filter(|&j| a.get(row, j) == 1).collect();
        assert_eq!(ones, vec![8, 9, 10, 11]);
    }

    #[test]
    fn dense_matrix_guard() {
        let c = Codebook::random(15, 2, 3, 0, SamplingMode::Distinct).unwrap();
        assert!(matches!(materialize_dense(&c), Err(Error::Capacity(_))));
    }

    #[test]
    fn grouping_examples() {
        let c = Codebook::complete(2, 1).unwrap();
        let y = MeasurementVector::zeros(&c, ValueMode::ExactInteger);
        let g = group_equal(&y);
        assert!(g.groups.is_empty());
        assert_eq!(g.zero_rows, vec![0, 1, 2, 3]);

        let y = MeasurementVector::from_values(&c, vec![5.0, 0.0, 5.0, 3.0], ValueMode::ExactInteger, None).unwrap();
        let g = group_equal(&y);
        assert_eq!(
            g.groups,
            vec![ValueGroup { value: 3.0, rows: vec![3] }, ValueGroup { value: 5.0, rows: vec![0, 2] }]
        );
        assert_eq!(g.zero_rows, vec![1]);
    }

    #[test]
    fn grouping_real_tolerance() {
        let tau = 1e-6;
        let c = Codebook::complete(2, 1).unwrap();
        let mode = ValueMode::real(tau).unwrap();
        let y = MeasurementVector::from_values(&c, vec![1.0, 1.0 + tau / 2.0, 0.0, 2.0], mode, None).unwrap();
        let g = group_equal(&y);
        assert_eq!(g.groups.len(), 2);
        assert_eq!(g.groups[0].rows, vec![0, 1]);
        let y = MeasurementVector::from_values(&c, vec![1.0, 1.0 + 3.0 * tau, 0.0, 2.0], mode, None).unwrap();
        assert_eq!(group_equal(&y).groups.len(), 3);
    }

    #[test]
    fn missing_rows_are_neither_zero_nor_grouped() {
        let c = Codebook::complete(2, 1).unwrap();
        let y = MeasurementVector::from_values(
            &c,
            vec![5.0, 0.0, 5.0, 3.0],
            ValueMode::ExactInteger,
            Some(vec![false, true, false, true]),
        )
        .unwrap();
        let g = group_equal(&y);
        assert_eq!(g.zero_rows, Vec::<usize>::new());
        assert_eq!(g.groups, vec![ValueGroup { value: 5.0, rows: vec![0, 2] }]);
        assert!(!y.is_zero(1) && !y.is_nonzero(1));
    }

    #[test]
    fn csv_layout() {
        let c = Codebook::complete(3, 2).unwrap();
        let y = encode(&signal(3, &[(0b101, 2.0)]), &c).unwrap();
        let mut buf = Vec::new();
        y.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "subset,pattern,value");
        assert_eq!(lines.len(), 1 + 12);
        assert!(lines.contains(&"1;2,10,2"));
        assert!(lines.contains(&"1;3,11,2"));
        assert!(lines.contains(&"2;3,01,2"));
    }
}
