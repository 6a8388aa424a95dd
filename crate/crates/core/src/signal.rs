//! Sparse test signals and the distinguishability predicate.

use std::collections::HashSet;
use std::path::Path;

use rand::distributions::Open01;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codebook::{Label, MAX_BITS};
use crate::error::{invalid, Error, Result};

/// Integer values are held in `f64`; sums stay exact while the total
/// magnitude is at most `2^53`.
pub const MAX_EXACT: f64 = 9_007_199_254_740_992.0;

/// Upper end of the generated integer value range, `2^40`.
pub const VALUE_RANGE: u64 = 1 << 40;

/// Largest signal the brute-force distinguishability check accepts.
pub const MAX_DISTINGUISHABLE_K: usize = 20;

const DEFAULT_TOLERANCE: f64 = 1e-9;

/// How signal and measurement values are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum ValueMode {
    /// Exact integer arithmetic; equality is `==`.
    #[default]
    ExactInteger,
    /// Reals compared with relative tolerance `|a-b| <= tol * max(|a|,|b|)`.
    Real { tolerance: f64 },
}

impl ValueMode {
    pub fn real(tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0 && tolerance.is_finite()) {
            return invalid(format!("tolerance must be positive, got {tolerance}"));
        }
        Ok(ValueMode::Real { tolerance })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ValueMode::ExactInteger)
    }

    pub fn tolerance(&self) -> f64 {
        match self {
            ValueMode::ExactInteger => 0.0,
            ValueMode::Real { tolerance } => *tolerance,
        }
    }

    #[inline]
    pub fn approx_eq(&self, a: f64, b: f64) -> bool {
        match self {
            ValueMode::ExactInteger => a == b,
            ValueMode::Real { tolerance } => (a - b).abs() <= tolerance * a.abs().max(b.abs()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ValueMode::ExactInteger => "int",
            ValueMode::Real { .. } => "real",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    pub label: Label,
    pub value: f64,
}

/// A `k`-sparse vector over the `2^n` labels. Entries are kept sorted by
/// label so that two signals with equal support compare equal.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSignal {
    n: u8,
    mode: ValueMode,
    entries: Vec<Entry>,
}

impl SparseSignal {
    pub fn new(n: u8, mode: ValueMode, mut entries: Vec<Entry>) -> Result<Self> {
        if n == 0 || n > MAX_BITS {
            return invalid(format!("bit count must be in 1..={MAX_BITS}, got {n}"));
        }
        if let ValueMode::Real { tolerance } = mode {
            ValueMode::real(tolerance)?;
        }
        entries.sort_by_key(|e| e.label);
        let mut mass = 0.0;
        for (i, e) in entries.iter().enumerate() {
            if e.label.n() != n {
                return invalid(format!("label {} has {} bits, expected {n}", e.label, e.label.n()));
            }
            if i > 0 && entries[i - 1].label == e.label {
                return invalid(format!("duplicate label {}", e.label));
            }
            if e.value == 0.0 || !e.value.is_finite() {
                return invalid(format!("entry {} has value {}", e.label, e.value));
            }
            if mode.is_exact() && e.value.fract() != 0.0 {
                return invalid(format!("entry {} is not an integer: {}", e.label, e.value));
            }
            mass += e.value.abs();
        }
        if mode.is_exact() && mass > MAX_EXACT {
            return Err(Error::Capacity("integer signal mass exceeds 2^53".into()));
        }
        Ok(SparseSignal { n, mode, entries })
    }

    pub fn empty(n: u8, mode: ValueMode) -> Result<Self> {
        SparseSignal::new(n, mode, Vec::new())
    }

    /// `k` distinct uniform labels with values uniform on `1..=2^40`
    /// (integer mode) or on `(0, 1)` (real mode).
    pub fn generate(n: u8, k: usize, mode: ValueMode, seed: u64) -> Result<Self> {
        if n == 0 || n > MAX_BITS {
            return invalid(format!("bit count must be in 1..={MAX_BITS}, got {n}"));
        }
        if n < 64 && (k as u128) > (1u128 << n) {
            return invalid(format!("k={k} exceeds 2^{n} labels"));
        }
        if mode.is_exact() && k as f64 * VALUE_RANGE as f64 > MAX_EXACT {
            return Err(Error::Capacity(format!("k={k} too large for exact 2^40-range values")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u64> = if n <= 24 || 2 * k as u128 > (1u128 << n) {
            index::sample(&mut rng, 1usize << n, k).into_iter().map(|j| j as u64).collect()
        } else {
            let mut seen = HashSet::with_capacity(k);
            let mut out = Vec::with_capacity(k);
            while out.len() < k {
                let j = rng.gen_range(0..1u64 << n);
                if seen.insert(j) {
                    out.push(j);
                }
            }
            out
        };
        let entries = labels
            .into_iter()
            .map(|bits| {
                let value = match mode {
                    ValueMode::ExactInteger => rng.gen_range(1..=VALUE_RANGE) as f64,
                    ValueMode::Real { .. } => rng.sample::<f64, _>(Open01),
                };
                Entry { label: Label::new(n, bits).expect("label in range"), value }
            })
            .collect();
        SparseSignal::new(n, mode, entries)
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn mode(&self) -> ValueMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.value)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.entries.iter().all(|e| e.value > 0.0)
    }

    pub fn mass(&self) -> f64 {
        self.values().sum()
    }

    /// Same support and values, compared under this signal's value mode.
    pub fn matches(&self, other: &SparseSignal) -> bool {
        self.n == other.n
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.label == b.label && self.mode.approx_eq(a.value, b.value))
    }

    pub fn to_json(&self) -> Result<String> {
        let entries: Vec<serde_json::Value> = self
            .entries
            .iter()
            .map(|e| match self.mode {
                ValueMode::ExactInteger => json!({"label": e.label.to_bitstring(), "value": e.value as i64}),
                ValueMode::Real { .. } => json!({"label": e.label.to_bitstring(), "value": e.value}),
            })
            .collect();
        let mut doc = json!({"n": self.n, "mode": self.mode.name(), "entries": entries});
        if let ValueMode::Real { tolerance } = self.mode {
            doc["tolerance"] = json!(tolerance);
        }
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SignalFile = serde_json::from_str(text)?;
        let mode = match file.mode.as_str() {
            "int" => ValueMode::ExactInteger,
            "real" => ValueMode::real(file.tolerance.unwrap_or(DEFAULT_TOLERANCE))?,
            other => return Err(Error::Parse(format!("unknown value mode {other:?}"))),
        };
        let entries = file
            .entries
            .into_iter()
            .map(|e| {
                let label = Label::from_bitstring(&e.label)?;
                if label.n() != file.n {
                    return invalid(format!("label {} does not have {} bits", e.label, file.n));
                }
                Ok(Entry { label, value: e.value })
            })
            .collect::<Result<Vec<_>>>()?;
        SparseSignal::new(file.n, mode, entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SparseSignal::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

#[derive(Deserialize, Serialize)]
struct SignalFile {
    n: u8,
    mode: String,
    #[serde(default)]
    tolerance: Option<f64>,
    entries: Vec<EntryFile>,
}

#[derive(Deserialize, Serialize)]
struct EntryFile {
    label: String,
    value: f64,
}

/// One half of a split signal, every `{left, right, neither}` assignment.
struct HalfSums {
    diff: f64,
    left: f64,
    right: f64,
    /// bit 0: left side nonempty, bit 1: right side nonempty
    sides: u8,
}

fn assignments(values: &[f64]) -> Vec<HalfSums> {
    let mut out = vec![HalfSums { diff: 0.0, left: 0.0, right: 0.0, sides: 0 }];
    for &v in values {
        let mut next = Vec::with_capacity(out.len() * 3);
        for h in &out {
            next.push(HalfSums { ..*h });
            next.push(HalfSums { diff: h.diff + v, left: h.left + v, right: h.right, sides: h.sides | 1 });
            next.push(HalfSums { diff: h.diff - v, left: h.left, right: h.right + v, sides: h.sides | 2 });
        }
        out = next;
    }
    out
}

/// True iff no two disjoint nonempty subsets of the signal's values have
/// equal sums (under the signal's value mode).
///
/// Equivalent to enumerating all `3^k` left/right/neither assignments; the
/// search is split into two halves of `3^(k/2)` each.
pub fn is_distinguishable(signal: &SparseSignal) -> Result<bool> {
    let values: Vec<f64> = signal.values().collect();
    if values.len() > MAX_DISTINGUISHABLE_K {
        return Err(Error::Capacity(format!(
            "distinguishability check limited to k <= {MAX_DISTINGUISHABLE_K}, got {}",
            values.len()
        )));
    }
    let mode = signal.mode();
    let (a, b) = values.split_at(values.len() / 2);
    let left = assignments(a);
    let mut right = assignments(b);
    right.sort_by(|x, y| x.diff.total_cmp(&y.diff));
    let window = mode.tolerance() * values.iter().map(|v| v.abs()).sum::<f64>();
    for h in &left {
        let target = -h.diff;
        let start = right.partition_point(|r| r.diff < target - window);
        for r in right[start..].iter().take_while(|r| r.diff <= target + window) {
            if h.sides | r.sides != 3 {
                continue;
            }
            if mode.approx_eq(h.left + r.left, h.right + r.right) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
