use proptest::prelude::*;

use summcs::basis_pursuit::{solve_bp, BpOptions};
use summcs::bounds::{lemma_eps_p, mm_success_bound, report, ssii_failure_bound, BinomialRule, BoundParams};
use summcs::codebook::{binomial, conforms, extract, BitSubset, Codebook, Label, SamplingMode};
use summcs::harness::{run_point, TrialSpec};
use summcs::mixmatch::{decode_mm, identify_values, StackedCodebook};
use summcs::operator::{encode, materialize_dense};
use summcs::signal::{is_distinguishable, Entry, SparseSignal, ValueMode};
use summcs::ssii::{decode_ssii, SsiiOptions};

/// `(n, d, m)` with `1 <= d < n <= max_n` and `m <= C(n, d)`.
fn shape(max_n: u8) -> impl Strategy<Value = (u8, usize, usize)> {
    (2..=max_n).prop_flat_map(|n| (Just(n), 1..n as usize)).prop_flat_map(|(n, d)| {
        let subsets = binomial(n as u64, d as u64).unwrap() as usize;
        (Just(n), Just(d), 1..=subsets.min(16))
    })
}

fn random_codebook(max_n: u8) -> impl Strategy<Value = Codebook> {
    (shape(max_n), any::<u64>())
        .prop_map(|((n, d, m), seed)| Codebook::random(n, d, m, seed, SamplingMode::Distinct).unwrap())
}

fn dense_signal(x: &SparseSignal) -> Vec<f64> {
    let mut v = vec![0.0; 1 << x.n()];
    for e in x.entries() {
        v[e.label.column() as usize] = e.value;
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_and_columns_have_fixed_weight(c in random_codebook(9)) {
        let dense = materialize_dense(&c).unwrap();
        prop_assert_eq!(dense.rows(), c.rows());
        prop_assert_eq!(c.rows(), c.m() << c.d());
        let per_row = 1usize << (c.n() as usize - c.d());
        prop_assert!(dense.row_sums().iter().all(|&s| s == per_row));
        prop_assert!(dense.col_sums().iter().all(|&s| s == c.m()));
    }

    #[test]
    fn conforming_rows_match_summaries(c in random_codebook(10), bits in any::<u64>()) {
        let n = c.n();
        let label = Label::new(n, bits & ((1u64 << n) - 1)).unwrap();
        let rows: Vec<usize> = c.conforming_rows(&label).unwrap().collect();
        prop_assert_eq!(rows.len(), c.m());
        for r in 0..c.rows() {
            let s = c.summary_of_row(r).unwrap();
            prop_assert_eq!(conforms(&label, &s).unwrap(), rows.contains(&r));
        }
        for (i, &r) in rows.iter().enumerate() {
            let pattern = extract(&label, &c.subsets()[i]).unwrap();
            prop_assert_eq!(c.row_index(i, pattern).unwrap(), r);
        }
    }

    #[test]
    fn unordered_positions_are_rejected(n in 3u8..20, a in 1u8..20, b in 1u8..20) {
        prop_assume!(a <= n && b <= n && a != b);
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(BitSubset::new(n, vec![lo, hi]).is_ok());
        prop_assert!(BitSubset::new(n, vec![hi, lo]).is_err());
    }

    #[test]
    fn encode_matches_dense_product(c in random_codebook(10), k in 0usize..40, seed in any::<u64>()) {
        let k = k.min(1 << c.n());
        let x = SparseSignal::generate(c.n(), k, ValueMode::ExactInteger, seed).unwrap();
        let y = encode(&x, &c).unwrap();
        prop_assert_eq!(materialize_dense(&c).unwrap().multiply(&dense_signal(&x)).unwrap(), y.values().to_vec());
    }

    #[test]
    fn encode_is_linear(c in random_codebook(10), s1 in any::<u64>(), s2 in any::<u64>()) {
        let n = c.n();
        let k = 8.min(1 << n);
        let a = SparseSignal::generate(n, k, ValueMode::ExactInteger, s1).unwrap();
        let b = SparseSignal::generate(n, k, ValueMode::ExactInteger, s2).unwrap();
        let taken: Vec<u64> = a.entries().iter().map(|e| e.label.bits()).collect();
        let b_entries: Vec<Entry> = b.entries().iter().filter(|e| !taken.contains(&e.label.bits())).cloned().collect();
        let b = SparseSignal::new(n, ValueMode::ExactInteger, b_entries.clone()).unwrap();
        let both = SparseSignal::new(n, ValueMode::ExactInteger, a.entries().iter().cloned().chain(b_entries).collect()).unwrap();
        let (ya, yb, yab) = (encode(&a, &c).unwrap(), encode(&b, &c).unwrap(), encode(&both, &c).unwrap());
        let sum: Vec<f64> = ya.values().iter().zip(yb.values()).map(|(p, q)| p + q).collect();
        prop_assert_eq!(yab.values(), sum.as_slice());
    }

    #[test]
    fn each_subset_sees_the_whole_mass(c in random_codebook(16), k in 0usize..50, seed in any::<u64>()) {
        let x = SparseSignal::generate(c.n(), k.min(1 << c.n()), ValueMode::ExactInteger, seed).unwrap();
        let y = encode(&x, &c).unwrap();
        for block in y.values().chunks(1 << c.d()) {
            prop_assert_eq!(block.iter().sum::<f64>(), x.mass());
        }
    }

    #[test]
    fn distinguishability_ignores_order(values in prop::collection::vec(1i64..40, 1..9), rot in 0usize..9) {
        let entries = |vals: &[i64]| -> Vec<Entry> {
            vals.iter().enumerate().map(|(i, &v)| Entry { label: Label::new(6, i as u64).unwrap(), value: v as f64 }).collect()
        };
        let x = SparseSignal::new(6, ValueMode::ExactInteger, entries(&values)).unwrap();
        let mut shuffled = values.clone();
        shuffled.rotate_left(rot % values.len());
        shuffled.reverse();
        let y = SparseSignal::new(6, ValueMode::ExactInteger, entries(&shuffled)).unwrap();
        prop_assert_eq!(is_distinguishable(&x).unwrap(), is_distinguishable(&y).unwrap());
    }

    #[test]
    fn generated_signals_are_distinguishable(n in 5u8..30, k in 1usize..=20, seed in any::<u64>()) {
        let k = k.min(1 << n);
        let x = SparseSignal::generate(n, k, ValueMode::ExactInteger, seed).unwrap();
        prop_assert!(is_distinguishable(&x).unwrap());
    }

    #[test]
    fn ssii_success_reproduces_measurements(c in random_codebook(14), k in 1usize..30, seed in any::<u64>()) {
        let x = SparseSignal::generate(c.n(), k.min(1 << c.n()), ValueMode::ExactInteger, seed).unwrap();
        let y = encode(&x, &c).unwrap();
        let r = decode_ssii(&y, SsiiOptions::for_sparsity(k)).unwrap();
        if r.is_success() {
            prop_assert!(encode(&r.recovered, &c).unwrap().agrees_with(y.values()));
        }
        // every accepted label removes mass, so the pass budget is never the limit
        prop_assert!(r.iterations <= SsiiOptions::for_sparsity(k).max_iterations);
    }

    #[test]
    fn mm_success_reproduces_measurements((n, d, m) in shape(14), k in 1usize..8, seed in any::<u64>()) {
        let stacked = StackedCodebook::random(n, d, m, seed, SamplingMode::Distinct).unwrap();
        let x = SparseSignal::generate(n, k.min(1 << n), ValueMode::ExactInteger, seed ^ 1).unwrap();
        let y = stacked.encode(&x).unwrap();
        let r = decode_mm(&y, &stacked).unwrap();
        if r.is_success() {
            let again = stacked.encode(&r.recovered).unwrap();
            prop_assert!(again.part1.agrees_with(y.part1.values()) && again.part2.agrees_with(y.part2.values()));
        }
    }

    #[test]
    fn value_identification_finds_planted_values(n in 6u8..14, k in 1usize..10, seed in any::<u64>()) {
        let x = SparseSignal::generate(n, k, ValueMode::ExactInteger, seed).unwrap();
        prop_assume!(is_distinguishable(&x).unwrap());
        // planted values, each also observed alone, plus sums of them
        let mut y1: Vec<f64> = x.values().collect();
        let vals: Vec<f64> = x.values().collect();
        for w in vals.windows(2) {
            y1.push(w[0] + w[1]);
        }
        y1.push(x.mass());
        let mut want: Vec<u64> = vals.iter().map(|&v| v as u64).collect();
        want.sort_unstable();
        prop_assert_eq!(identify_values(&y1).unwrap(), Ok(want));
    }

    #[test]
    fn bp_objective_never_exceeds_planted_mass(c in random_codebook(8), k in 1usize..12, seed in any::<u64>()) {
        let x = SparseSignal::generate(c.n(), k.min(1 << c.n()), ValueMode::ExactInteger, seed).unwrap();
        let y = encode(&x, &c).unwrap();
        let s = solve_bp(&y, BpOptions::default()).unwrap();
        prop_assert!(s.objective <= x.mass() * (1.0 + 1e-7));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn strong_regime_ssii_and_bp_agree(n in 4u8..=9, d in 2usize..=4, kk in 0usize..8, seed in any::<u64>()) {
        prop_assume!(d < n as usize);
        let k = 1 + kk % (1 << (d - 1));
        let c = Codebook::complete(n, d).unwrap();
        let x = SparseSignal::generate(n, k, ValueMode::ExactInteger, seed).unwrap();
        prop_assume!(is_distinguishable(&x).unwrap());
        let y = encode(&x, &c).unwrap();
        let ssii = decode_ssii(&y, SsiiOptions::for_sparsity(k)).unwrap();
        prop_assert!(ssii.is_success());
        prop_assert_eq!(&ssii.recovered, &x);
        let bp = solve_bp(&y, BpOptions::default()).unwrap();
        prop_assert_eq!(&bp.signal, &x);
    }

    #[test]
    fn bounds_stay_in_range(n in 1u32..64, dd in 0u32..64, m in any::<u32>(), k in 1u64..1_000_000, alpha in 0.001f64..0.499, gamma in any::<bool>()) {
        let d = 1 + dd % n;
        let rule = if gamma { BinomialRule::Gamma } else { BinomialRule::Floor };
        let r = report(&BoundParams::new(n, d, m, k).with_alpha(alpha).with_rule(rule)).unwrap();
        for v in [r.ssii_failure, r.mm_success, r.ssii_failure_explicit, r.mm_failure_explicit, r.epsilon, r.p] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for v in [r.raw.ssii_failure, r.raw.mm_success, r.raw.ssii_failure_explicit, r.raw.mm_failure_explicit] {
            prop_assert!(v.is_finite());
        }
    }

    #[test]
    fn bounds_are_monotone_in_m(n in 4u32..40, dd in 0u32..40, m in 0u32..500, k in 1u64..100, alpha in 0.01f64..0.49) {
        let d = 1 + dd % n;
        let p = BoundParams::new(n, d, m, k).with_alpha(alpha);
        let q = BoundParams { m: m + 1, ..p };
        prop_assert!(ssii_failure_bound(&q).unwrap().raw <= ssii_failure_bound(&p).unwrap().raw + 1e-12);
        prop_assert!(mm_success_bound(&q).unwrap().raw >= mm_success_bound(&p).unwrap().raw - 1e-12);
    }

    #[test]
    fn lemma_is_monotone(n in 4u32..60, ll in 0u32..60, k in 1u64..1000, alpha in 0.01f64..0.49, gamma in any::<bool>()) {
        let l = 1 + ll % n;
        let rule = if gamma { BinomialRule::Gamma } else { BinomialRule::Floor };
        let base = lemma_eps_p(n, l, k, alpha, rule).unwrap();
        let more_k = lemma_eps_p(n, l, k + 1, alpha, rule).unwrap();
        prop_assert!(more_k.epsilon <= base.epsilon + 1e-12);
        prop_assert!(more_k.p <= base.p + 1e-12);
        let more_n = lemma_eps_p(n + 1, l, k, alpha, rule).unwrap();
        prop_assert!(more_n.p >= base.p - 1e-12);
    }
}

#[test]
fn success_rate_grows_with_m() {
    // Monte-Carlo rates at 100 trials; allow one standard error of slack
    let rates: Vec<f64> = [2usize, 4, 8, 16, 32]
        .iter()
        .map(|&m| run_point(&TrialSpec::random(12, 8, 3, m), 100, 5).unwrap().rate())
        .collect();
    for w in rates.windows(2) {
        assert!(w[1] >= w[0] - 0.05, "{rates:?}");
    }
    assert!(rates[4] > rates[0], "{rates:?}");
}

#[test]
fn complete_codebook_has_every_subset_once() {
    for n in 1..=12u8 {
        for d in 1..=n as usize {
            let c = Codebook::complete(n, d).unwrap();
            assert_eq!(c.m() as u128, binomial(n as u64, d as u64).unwrap());
            let mut masks: Vec<u64> = c.subsets().iter().map(|s| s.label_mask()).collect();
            masks.sort_unstable();
            masks.dedup();
            assert_eq!(masks.len(), c.m());
        }
    }
}

#[test]
fn strong_sparsity_limit_is_recovered_exhaustively() {
    // every k = 2^(d-1) instance on a small complete codebook, both decoders
    let (n, d) = (5u8, 3usize);
    let k = summcs::bounds::f_s_lower(d as u32 - 1) as usize;
    let c = Codebook::complete(n, d).unwrap();
    let values = [1.0, 2.0, 4.0, 8.0];
    let mut labels: Vec<u64> = vec![];
    let mut checked = 0;
    fn choose(start: u64, left: usize, n: u8, acc: &mut Vec<u64>, out: &mut dyn FnMut(&[u64])) {
        if left == 0 {
            out(acc);
            return;
        }
        for b in start..(1u64 << n) {
            acc.push(b);
            choose(b + 1, left - 1, n, acc, out);
            acc.pop();
        }
    }
    choose(0, k, n, &mut labels, &mut |support| {
        let entries =
            support.iter().zip(values).map(|(&b, v)| Entry { label: Label::new(n, b).unwrap(), value: v }).collect();
        let x = SparseSignal::new(n, ValueMode::ExactInteger, entries).unwrap();
        let y = encode(&x, &c).unwrap();
        assert_eq!(decode_ssii(&y, SsiiOptions::for_sparsity(k)).unwrap().recovered, x);
        assert_eq!(solve_bp(&y, BpOptions::default()).unwrap().signal, x);
        checked += 1;
    });
    assert_eq!(checked, 35960);
}
