//! Reading measurement CSVs (`subset,pattern,value[,weight][,part]`) back
//! into a codebook and measurement vector.
//!
//! With a `weight` column, each value is taken as an average over `weight`
//! conforming items and converted to a sum.

use std::collections::HashMap;
use std::io::Read;

use crate::codebook::{pattern_from_bitstring, BitSubset, Codebook};
use crate::error::{invalid, Error, Result};
use crate::mixmatch::{StackedCodebook, StackedMeasurements};
use crate::operator::MeasurementVector;
use crate::signal::{ValueMode, MAX_EXACT};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IngestOptions {
    /// Label width; defaults to the largest position mentioned.
    pub n: Option<u8>,
    /// Accept files that omit rows; omitted rows are marked missing.
    pub allow_partial: bool,
    /// Value mode; defaults to exact integers when every value is integral.
    pub mode: Option<ValueMode>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub codebook: Codebook,
    pub values: Vec<f64>,
    pub missing: Option<Vec<bool>>,
    pub mode: ValueMode,
}

impl Ingested {
    pub fn measurements(&self) -> Result<MeasurementVector<'_>> {
        MeasurementVector::from_values(&self.codebook, self.values.clone(), self.mode, self.missing.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestedStacked {
    pub stacked: StackedCodebook,
    pub part1: Vec<f64>,
    pub part2: Vec<f64>,
    pub mode: ValueMode,
}

impl IngestedStacked {
    pub fn measurements(&self) -> Result<StackedMeasurements<'_>> {
        Ok(StackedMeasurements {
            part1: MeasurementVector::from_values(self.stacked.part1(), self.part1.clone(), self.mode, None)?,
            part2: MeasurementVector::from_values(self.stacked.part2(), self.part2.clone(), self.mode, None)?,
        })
    }
}

struct Record {
    line: usize,
    positions: Vec<u8>,
    pattern: u32,
    pattern_len: usize,
    value: f64,
    part: u8,
}

fn parse_records<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ci), Some(pi), Some(vi)) = (col("subset"), col("pattern"), col("value")) else {
        return Err(Error::Parse("measurement CSV needs subset, pattern and value columns".into()));
    };
    let (wi, parti) = (col("weight"), col("part"));
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let bad = |what: &str, s: &str| Error::Parse(format!("line {line}: bad {what} {s:?}"));
        let positions = field(ci)
            .split(';')
            .map(|p| p.trim().parse::<u8>().map_err(|_| bad("subset", field(ci))))
            .collect::<Result<Vec<_>>>()?;
        let pattern_text = field(pi);
        let pattern = pattern_from_bitstring(pattern_text).map_err(|_| bad("pattern", pattern_text))?;
        let mut value: f64 = field(vi).parse().map_err(|_| bad("value", field(vi)))?;
        if let Some(wi) = wi {
            let w: f64 = field(wi).parse().map_err(|_| bad("weight", field(wi)))?;
            value *= w;
        }
        if !value.is_finite() {
            return Err(bad("value", field(vi)));
        }
        let part = match parti {
            None => 1,
            Some(j) => match field(j) {
                "1" => 1,
                "2" => 2,
                s => return Err(bad("part", s)),
            },
        };
        out.push(Record { line, positions, pattern, pattern_len: pattern_text.len(), value, part });
    }
    if out.is_empty() {
        return Err(Error::Parse("measurement CSV has no rows".into()));
    }
    Ok(out)
}

fn label_width(records: &[Record], options: &IngestOptions) -> Result<u8> {
    let max = records.iter().flat_map(|r| r.positions.iter().copied()).max().unwrap_or(0);
    match options.n {
        Some(n) if n < max => invalid(format!("position {max} exceeds n = {n}")),
        Some(n) => Ok(n),
        None => Ok(max),
    }
}

fn detect_mode(values: impl Iterator<Item = f64> + Clone, options: &IngestOptions) -> Result<ValueMode> {
    if let Some(mode) = options.mode {
        if mode.is_exact() && values.clone().any(|v| v.fract() != 0.0 || v.abs() > MAX_EXACT) {
            return invalid("exact mode needs integral values of magnitude at most 2^53");
        }
        return Ok(mode);
    }
    if values.clone().all(|v| v.fract() == 0.0 && v.abs() <= MAX_EXACT) {
        Ok(ValueMode::ExactInteger)
    } else {
        ValueMode::real(1e-9)
    }
}

/// Lays `records` out on `codebook`, or on a codebook built from the subsets
/// in order of first appearance when `codebook` is `None`.
fn assemble(
    records: &[&Record],
    n: u8,
    codebook: Option<Codebook>,
    allow_partial: bool,
) -> Result<(Codebook, Vec<f64>, Option<Vec<bool>>)> {
    let d = records[0].positions.len();
    let mut subsets: Vec<BitSubset> = Vec::new();
    let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut placed = Vec::with_capacity(records.len());
    for r in records {
        if r.positions.len() != d {
            return invalid(format!(
                "line {}: subset has {} positions but earlier rows have {d}; codebooks use a single width",
                r.line,
                r.positions.len()
            ));
        }
        if r.pattern_len != d {
            return invalid(format!(
                "line {}: pattern length {} does not match subset size {d}",
                r.line, r.pattern_len
            ));
        }
        let i = match index.get(&r.positions) {
            Some(&i) => i,
            None => {
                subsets.push(BitSubset::new(n, r.positions.clone())?);
                index.insert(r.positions.clone(), subsets.len() - 1);
                subsets.len() - 1
            }
        };
        placed.push((i, r));
    }
    let codebook = match codebook {
        None => Codebook::from_subsets(n, d, subsets.clone())?,
        Some(c) => c,
    };
    let mut values = vec![0.0; codebook.rows()];
    let mut seen = vec![false; codebook.rows()];
    for (i, r) in placed {
        let Some(target) = codebook.subset_index(&subsets[i]) else {
            return invalid(format!("line {}: subset {} does not belong to the expected codebook", r.line, subsets[i]));
        };
        let row = codebook.row_index(target, r.pattern)?;
        if seen[row] {
            return invalid(format!("line {}: duplicate row ({}, {:0d$b})", r.line, subsets[i], r.pattern, d = d));
        }
        seen[row] = true;
        values[row] = r.value;
    }
    let absent = seen.iter().filter(|&&s| !s).count();
    let missing = match (absent, allow_partial) {
        (0, _) => None,
        (_, true) => Some(seen.iter().map(|&s| !s).collect()),
        (_, false) => {
            return invalid(format!(
                "{absent} of {} rows are absent; pass allow-partial to mark them missing",
                values.len()
            ))
        }
    };
    Ok((codebook, values, missing))
}

/// Reads a plain measurement CSV.
pub fn ingest_summaries<R: Read>(input: R, options: IngestOptions) -> Result<Ingested> {
    let records = parse_records(input)?;
    if records.iter().any(|r| r.part != 1) {
        return invalid("file has part-2 rows; read it as a stacked measurement file");
    }
    let n = label_width(&records, &options)?;
    let mode = detect_mode(records.iter().map(|r| r.value), &options)?;
    let refs: Vec<&Record> = records.iter().collect();
    let (codebook, values, missing) = assemble(&refs, n, None, options.allow_partial)?;
    Ok(Ingested { codebook, values, missing, mode })
}

/// Reads a stacked measurement CSV with a `part` column; part 2 must be the
/// complete `(n, 1)` codebook. Partial files are rejected.
pub fn ingest_stacked<R: Read>(input: R, options: IngestOptions) -> Result<IngestedStacked> {
    let records = parse_records(input)?;
    let n = label_width(&records, &options)?;
    let mode = detect_mode(records.iter().map(|r| r.value), &options)?;
    let part = |p: u8| records.iter().filter(|r| r.part == p).collect::<Vec<_>>();
    let (one, two) = (part(1), part(2));
    if one.is_empty() || two.is_empty() {
        return invalid("stacked file needs rows for both parts");
    }
    let (part1, y1, _) = assemble(&one, n, None, false)?;
    let (part2, y2, _) = assemble(&two, n, Some(Codebook::complete(n, 1)?), false)?;
    Ok(IngestedStacked { stacked: StackedCodebook::from_parts(part1, part2)?, part1: y1, part2: y2, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::encode;
    use crate::signal::SparseSignal;

    #[test]
    fn complete_codebook_roundtrip() {
        let c = Codebook::complete(4, 2).unwrap();
        let x = SparseSignal::generate(4, 3, ValueMode::ExactInteger, 9).unwrap();
        let y = encode(&x, &c).unwrap();
        let mut buf = Vec::new();
        y.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 25);
        let back = ingest_summaries(buf.as_slice(), IngestOptions::default()).unwrap();
        assert_eq!(back.codebook, c);
        assert_eq!(back.values, y.values());
        assert_eq!(back.mode, ValueMode::ExactInteger);
        assert!(back.missing.is_none());
    }

    #[test]
    fn rejects_duplicates_and_mixed_widths() {
        let dup = "subset,pattern,value\n1;2,00,1\n1;2,00,2\n";
        assert!(ingest_summaries(dup.as_bytes(), IngestOptions { allow_partial: true, ..Default::default() }).is_err());
        let mixed = "subset,pattern,value\n1;2,00,1\n3,0,2\n";
        assert!(
            ingest_summaries(mixed.as_bytes(), IngestOptions { allow_partial: true, ..Default::default() }).is_err()
        );
    }

    #[test]
    fn partial_files() {
        let text = "subset,pattern,value\n1;3,00,5\n1;3,01,0\n1;3,11,2\n";
        assert!(ingest_summaries(text.as_bytes(), IngestOptions::default()).is_err());
        let opts = IngestOptions { allow_partial: true, n: Some(4), ..Default::default() };
        let got = ingest_summaries(text.as_bytes(), opts).unwrap();
        assert_eq!(got.codebook.n(), 4);
        assert_eq!(got.missing, Some(vec![false, false, true, false]));
        let y = got.measurements().unwrap();
        assert!(y.is_missing(2) && !y.is_zero(2));
    }

    #[test]
    fn weights_and_real_values() {
        let text = "subset,pattern,value,weight\n1,0,2.5,4\n1,1,0.25,2\n";
        let got = ingest_summaries(text.as_bytes(), IngestOptions::default()).unwrap();
        assert_eq!(got.values, vec![10.0, 0.5]);
        assert!(!got.mode.is_exact());
    }

    #[test]
    fn stacked_roundtrip() {
        let s = StackedCodebook::random(6, 2, 3, 1, crate::codebook::SamplingMode::Distinct).unwrap();
        let x = SparseSignal::generate(6, 3, ValueMode::ExactInteger, 2).unwrap();
        let y = s.encode(&x).unwrap();
        let mut buf = Vec::new();
        y.write_csv(&mut buf).unwrap();
        let back = ingest_stacked(buf.as_slice(), IngestOptions::default()).unwrap();
        assert_eq!(&back.stacked, &s);
        assert_eq!(back.part1, y.part1.values());
        assert_eq!(back.part2, y.part2.values());
    }
}
