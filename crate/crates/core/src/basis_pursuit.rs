//! Nonnegative l1 minimization over the materialized operator:
//! `min sum(x)  s.t.  A x = y, x >= 0`.
//!
//! Only practical for small `n`; it serves as a reference decoder.

use crate::codebook::Label;
use crate::error::{invalid, Error, Result};
use crate::lp::{LinearProgram, SimplexOptions};
use crate::operator::MeasurementVector;
use crate::signal::{Entry, SparseSignal, ValueMode};

/// Largest label width accepted by [`solve_bp`].
pub const MAX_BP_BITS: u8 = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BpOptions {
    /// Relative pivot tolerance of the simplex solver.
    pub tol: f64,
    /// Entries below `support_threshold * max(x)` are dropped.
    pub support_threshold: f64,
    pub max_pivots: usize,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions { tol: 1e-8, support_threshold: 1e-6, max_pivots: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BpSolution {
    pub signal: SparseSignal,
    /// `sum(x)` of the optimizer before thresholding, in measurement units.
    pub objective: f64,
}

/// Solves the nonnegative l1 program for `y`.
///
/// Columns touching a zero measurement are fixed to zero before the LP is
/// formed (with `A >= 0` and `x >= 0` they cannot carry mass), and linearly
/// dependent equality rows are dropped.
pub fn solve_bp(y: &MeasurementVector<'_>, options: BpOptions) -> Result<BpSolution> {
    let codebook = y.codebook();
    let n = codebook.n();
    if n > MAX_BP_BITS {
        return Err(Error::Capacity(format!(
            "basis pursuit materializes 2^n columns and is limited to n <= {MAX_BP_BITS}, got n = {n}"
        )));
    }
    if y.values().iter().enumerate().any(|(r, &v)| !y.is_missing(r) && v < -y.zero_tolerance()) {
        return invalid("basis pursuit expects nonnegative measurements");
    }
    let mode = y.mode();
    let scale = y.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || y.all_zero() {
        return Ok(BpSolution { signal: SparseSignal::empty(n, mode)?, objective: 0.0 });
    }

    let rows: Vec<usize> = (0..y.len()).filter(|&r| y.is_nonzero(r)).collect();
    let mut row_slot = vec![usize::MAX; y.len()];
    for (i, &r) in rows.iter().enumerate() {
        row_slot[r] = i;
    }
    let columns: Vec<u64> =
        (0..1u64 << n).filter(|&j| codebook.rows_of_bits(j).all(|r| y.is_missing(r) || y.is_nonzero(r))).collect();
    if columns.is_empty() {
        return Err(Error::Infeasible);
    }

    let mut matrix = vec![vec![0.0; columns.len()]; rows.len()];
    for (c, &j) in columns.iter().enumerate() {
        for r in codebook.rows_of_bits(j) {
            if row_slot[r] != usize::MAX {
                matrix[row_slot[r]][c] = 1.0;
            }
        }
    }
    let rhs: Vec<f64> = rows.iter().map(|&r| y.values()[r] / scale).collect();
    let (matrix, rhs) = independent_rows(matrix, rhs, options.tol)?;

    let lp = LinearProgram::new(vec![1.0; columns.len()], matrix, rhs)?;
    let solution = lp.solve(SimplexOptions { tol: options.tol * 0.1, max_pivots: options.max_pivots })?;

    let peak = solution.x.iter().fold(0.0f64, |m, &v| m.max(v));
    let support: Vec<(u64, f64)> = columns
        .iter()
        .zip(&solution.x)
        .filter(|(_, &v)| v > options.support_threshold * peak)
        .map(|(&j, &v)| (j, v * scale))
        .collect();

    let entries = match mode {
        ValueMode::ExactInteger => {
            exact_values(y, &support).unwrap_or_else(|| support.iter().map(|&(j, v)| (j, v.round())).collect())
        }
        ValueMode::Real { .. } => support,
    };
    let entries = entries
        .into_iter()
        .filter(|&(_, v)| v != 0.0)
        .map(|(j, value)| Ok(Entry { label: Label::new(n, j)?, value }))
        .collect::<Result<Vec<_>>>()?;
    Ok(BpSolution { signal: SparseSignal::new(n, mode, entries)?, objective: solution.objective * scale })
}

/// Keeps a maximal linearly independent subset of the equality rows;
/// errors if a dropped row is inconsistent with the kept ones.
fn independent_rows(matrix: Vec<Vec<f64>>, rhs: Vec<f64>, tol: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let cols = matrix.first().map_or(0, |r| r.len());
    let mut work: Vec<Vec<f64>> =
        matrix.iter().zip(&rhs).map(|(row, &b)| row.iter().copied().chain([b]).collect()).collect();
    let mut kept = Vec::new();
    let mut remaining: Vec<usize> = (0..work.len()).collect();
    for c in 0..cols {
        let Some((pos, &pr)) =
            remaining.iter().enumerate().max_by(|a, b| work[*a.1][c].abs().total_cmp(&work[*b.1][c].abs()))
        else {
            break;
        };
        let p = work[pr][c];
        if p.abs() <= tol {
            continue;
        }
        remaining.swap_remove(pos);
        kept.push(pr);
        let pivot_row = work[pr].clone();
        for &r in &remaining {
            let f = work[r][c] / p;
            if f != 0.0 {
                for (x, &pv) in work[r].iter_mut().zip(&pivot_row).skip(c) {
                    *x -= f * pv;
                }
            }
        }
    }
    if remaining.iter().any(|&r| work[r][cols].abs() > tol.sqrt()) {
        return Err(Error::Infeasible);
    }
    kept.sort_unstable();
    let rhs_kept = kept.iter().map(|&r| rhs[r]).collect();
    let mut matrix = matrix;
    let rows_kept = kept.iter().map(|&r| std::mem::take(&mut matrix[r])).collect();
    Ok((rows_kept, rhs_kept))
}

/// Recomputes support values exactly by peeling: a row touched by a single
/// unresolved support label gives that label's value directly.
fn exact_values(y: &MeasurementVector<'_>, support: &[(u64, f64)]) -> Option<Vec<(u64, f64)>> {
    let codebook = y.codebook();
    let rows_of: Vec<Vec<usize>> =
        support.iter().map(|&(j, _)| codebook.rows_of_bits(j).filter(|&r| !y.is_missing(r)).collect()).collect();
    let mut members: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
    for (s, rows) in rows_of.iter().enumerate() {
        for &r in rows {
            members.entry(r).or_default().push(s);
        }
    }
    let mut value: Vec<Option<f64>> = vec![None; support.len()];
    let mut progress = true;
    while progress && value.iter().any(Option::is_none) {
        progress = false;
        for (&r, ms) in &members {
            let open: Vec<usize> = ms.iter().copied().filter(|&s| value[s].is_none()).collect();
            if open.len() != 1 {
                continue;
            }
            let known: f64 = ms.iter().filter_map(|&s| value[s]).sum();
            value[open[0]] = Some(y.values()[r] - known);
            progress = true;
        }
    }
    let value: Vec<f64> = value.into_iter().collect::<Option<_>>()?;
    // every touched row must balance exactly
    let consistent = members.iter().all(|(&r, ms)| ms.iter().map(|&s| value[s]).sum::<f64>() == y.values()[r]);
    consistent.then(|| support.iter().zip(value).map(|(&(j, _), v)| (j, v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{Codebook, SamplingMode};
    use crate::operator::encode;

    fn signal(n: u8, entries: &[(u64, f64)]) -> SparseSignal {
        let e = entries.iter().map(|&(b, v)| Entry { label: Label::new(n, b).unwrap(), value: v }).collect();
        SparseSignal::new(n, ValueMode::ExactInteger, e).unwrap()
    }

    #[test]
    fn zero_measurements() {
        let c = Codebook::complete(6, 3).unwrap();
        let y = MeasurementVector::zeros(&c, ValueMode::ExactInteger);
        let s = solve_bp(&y, BpOptions::default()).unwrap();
        assert_eq!(s.signal.k(), 0);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn recovers_within_strong_regime() {
        let c = Codebook::complete(6, 3).unwrap();
        let x = signal(6, &[(0, 3.0), (9, 5.0), (44, 9.0), (63, 20.0)]);
        let y = encode(&x, &c).unwrap();
        let s = solve_bp(&y, BpOptions::default()).unwrap();
        assert_eq!(s.signal, x);
        assert!((s.objective - 37.0).abs() < 1e-6);
    }

    #[test]
    fn single_entry_on_random_codebook() {
        let c = Codebook::random(8, 2, 3, 4, SamplingMode::Distinct).unwrap();
        let x = signal(8, &[(77, 123456789.0)]);
        let y = encode(&x, &c).unwrap();
        let s = solve_bp(&y, BpOptions::default()).unwrap();
        assert!((s.objective - 123456789.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_large_n_and_negative_input() {
        let c = Codebook::random(13, 2, 2, 0, SamplingMode::Distinct).unwrap();
        let y = MeasurementVector::zeros(&c, ValueMode::ExactInteger);
        assert!(matches!(solve_bp(&y, BpOptions::default()), Err(Error::Capacity(_))));
        let c = Codebook::complete(3, 1).unwrap();
        let y = MeasurementVector::from_values(&c, vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0], ValueMode::ExactInteger, None)
            .unwrap();
        assert!(solve_bp(&y, BpOptions::default()).is_err());
    }

    #[test]
    fn inconsistent_measurements_are_infeasible() {
        // every label sits in one row of each subset; totals per subset differ
        let c = Codebook::complete(3, 1).unwrap();
        let y = MeasurementVector::from_values(&c, vec![1.0, 1.0, 1.0, 2.0, 1.0, 1.0], ValueMode::ExactInteger, None)
            .unwrap();
        assert!(matches!(solve_bp(&y, BpOptions::default()), Err(Error::Infeasible)));
    }

    #[test]
    fn real_mode_values() {
        let c = Codebook::complete(5, 3).unwrap();
        let e = vec![
            Entry { label: Label::new(5, 3).unwrap(), value: 0.25 },
            Entry { label: Label::new(5, 30).unwrap(), value: 0.7 },
        ];
        let x = SparseSignal::new(5, ValueMode::real(1e-6).unwrap(), e).unwrap();
        let y = encode(&x, &c).unwrap();
        let s = solve_bp(&y, BpOptions::default()).unwrap();
        assert!(s.signal.matches(&x), "{:?}", s.signal);
    }
}
