//! Evaluation: F1 scores, paired t-tests, and word-entropy diagnostics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{Corpus, DocId, Document, FineId, LabelHierarchy, TokenId, Vocabulary};
use crate::pipeline::{run_c2f, PipelineConfig, PipelineError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("vector lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: u32, k: usize },
    #[error("no countable tokens in the document set")]
    EmptySet,
    #[error("document {0} appears in more than one partition cell")]
    OverlappingCells(DocId),
    #[error("document {0} in the partition is not part of the document set")]
    NotInDocSet(DocId),
}

// ---------------------------------------------------------------------------
// F1

/// Per-class true positives, false positives, false negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionTally {
    pub true_pos: Vec<u64>,
    pub false_pos: Vec<u64>,
    pub false_neg: Vec<u64>,
}

pub fn confusion_tally(
    pred: &[FineId],
    gold: &[FineId],
    num_classes: usize,
) -> Result<ConfusionTally, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            a: pred.len(),
            b: gold.len(),
        });
    }
    let mut tally = ConfusionTally {
        true_pos: vec![0; num_classes],
        false_pos: vec![0; num_classes],
        false_neg: vec![0; num_classes],
    };
    for (&p, &g) in pred.iter().zip(gold) {
        for label in [p, g] {
            if label.idx() >= num_classes {
                return Err(EvalError::LabelOutOfRange {
                    label: label.0,
                    k: num_classes,
                });
            }
        }
        if p == g {
            tally.true_pos[p.idx()] += 1;
        } else {
            tally.false_pos[p.idx()] += 1;
            tally.false_neg[g.idx()] += 1;
        }
    }
    Ok(tally)
}

#[derive(Clone, Debug, Serialize)]
pub struct F1Scores {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
}

fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0 // no predictions and no gold instances for this class
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Micro (pooled counts) and macro (unweighted mean over all `num_classes`)
/// F1 for single-label predictions.
pub fn micro_macro_f1(
    pred: &[FineId],
    gold: &[FineId],
    num_classes: usize,
) -> Result<F1Scores, EvalError> {
    let tally = confusion_tally(pred, gold, num_classes)?;
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| f1_from_counts(tally.true_pos[c], tally.false_pos[c], tally.false_neg[c]))
        .collect();
    let (tp, fp, fn_) = (0..num_classes).fold((0, 0, 0), |(a, b, c), i| {
        (
            a + tally.true_pos[i],
            b + tally.false_pos[i],
            c + tally.false_neg[i],
        )
    });
    let macro_f1 = if num_classes == 0 {
        0.0
    } else {
        per_class.iter().sum::<f64>() / num_classes as f64
    };
    Ok(F1Scores {
        micro_f1: f1_from_counts(tp, fp, fn_),
        macro_f1,
        per_class,
    })
}

// ---------------------------------------------------------------------------
// Paired t-test

#[derive(Clone, Debug, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Zero variance with a nonzero mean difference: t is infinite, p is 0.
    pub degenerate_variance: bool,
}

/// Lanczos approximation, g = 7. Valid for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection keeps small arguments accurate
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided paired t-test. With d = a - b: t = mean(d) / (sd(d) / sqrt(n)),
/// sample sd (n - 1), p from the Student-t survival function via the
/// regularized incomplete beta with n - 1 degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let ss = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (n - 1) as f64).sqrt();
    let df = (n - 1) as f64;
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            // identical inputs: no evidence of a difference
            TTest {
                t: 0.0,
                df,
                p: 1.0,
                degenerate_variance: false,
            }
        } else {
            TTest {
                t: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                df,
                p: 0.0,
                degenerate_variance: true,
            }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let p = reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
    Ok(TTest {
        t,
        df,
        p,
        degenerate_variance: false,
    })
}

// ---------------------------------------------------------------------------
// Word entropy

/// Entropy in bits of the pooled word distribution; special tokens never count.
pub fn word_entropy<'a>(
    bags: impl IntoIterator<Item = &'a [TokenId]>,
    vocab: &Vocabulary,
) -> Result<f64, EvalError> {
    let mut counts = vec![0u64; vocab.len()];
    let mut total = 0u64;
    for bag in bags {
        for &t in bag {
            if !vocab.is_special(t) {
                counts[t.idx()] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::EmptySet);
    }
    let total = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EntropyStats {
    /// Entropy of the pooled document set.
    pub overall: f64,
    /// Unweighted mean entropy over non-empty partition cells.
    pub mean_within: f64,
    /// overall - mean_within.
    pub drop: f64,
}

/// Entropy drop over explicit token bags: `cells` partitions (a subset of)
/// `all`, which is pooled for the overall entropy.
pub fn entropy_drop_bags(
    all: &[&[TokenId]],
    cells: &[Vec<&[TokenId]>],
    vocab: &Vocabulary,
) -> Result<EntropyStats, EvalError> {
    let overall = word_entropy(all.iter().copied(), vocab)?;
    let mut within = Vec::new();
    for cell in cells {
        match word_entropy(cell.iter().copied(), vocab) {
            Ok(h) => within.push(h),
            Err(EvalError::EmptySet) => {} // empty cells are skipped, not averaged
            Err(e) => return Err(e),
        }
    }
    if within.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mean_within = within.iter().sum::<f64>() / within.len() as f64;
    Ok(EntropyStats {
        overall,
        mean_within,
        drop: overall - mean_within,
    })
}

/// Entropy drop of a fine-label partition over a document set. Every cell
/// document must come from `docs`, and cells must be disjoint.
pub fn entropy_drop(
    docs: &[&Document],
    partition: &BTreeMap<FineId, Vec<DocId>>,
    vocab: &Vocabulary,
) -> Result<EntropyStats, EvalError> {
    let by_id: std::collections::HashMap<DocId, &Document> =
        docs.iter().map(|d| (d.id, *d)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut cells = Vec::new();
    for ids in partition.values() {
        let mut cell = Vec::with_capacity(ids.len());
        for &id in ids {
            if !seen.insert(id) {
                return Err(EvalError::OverlappingCells(id));
            }
            let doc = by_id.get(&id).ok_or(EvalError::NotInDocSet(id))?;
            cell.push(doc.tokens.as_slice());
        }
        cells.push(cell);
    }
    let all: Vec<&[TokenId]> = docs.iter().map(|d| d.tokens.as_slice()).collect();
    entropy_drop_bags(&all, &cells, vocab)
}

/// Formats with six significant digits; used for every real in CSV output.
pub fn sig6(x: f64) -> String {
    format!("{x:.5e}")
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Final-iteration scores of one full pipeline run per margin value, plus the
/// population standard deviation of each column — the robustness measure.
#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub micro_f1_std: f64,
    pub macro_f1_std: f64,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,micro_f1,macro_f1\n");
        for r in &self.rows {
            out.push_str(&sig6(r.epsilon));
            out.push(',');
            out.push_str(&sig6(r.micro_f1));
            out.push(',');
            out.push_str(&sig6(r.macro_f1));
            out.push('\n');
        }
        out
    }
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// The canonical margin grid {ln 1, ln 2, ..., ln 10}.
pub fn default_epsilon_grid() -> Vec<f64> {
    (1..=10).map(|n| (n as f64).ln()).collect()
}

/// Reruns the whole pipeline once per margin value, all other settings and
/// seeds identical, and tabulates the final iteration's scores. Runs are
/// sequential; each already parallelizes internally across `workers`.
pub fn epsilon_sweep(
    corpus: &Corpus,
    hier: &LabelHierarchy,
    base: &PipelineConfig,
    eps_values: &[f64],
    workers: usize,
) -> Result<SweepTable, PipelineError> {
    if eps_values.is_empty() {
        return Err(PipelineError::BadConfig("epsilon grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(eps_values.len());
    for &eps in eps_values {
        let mut cfg = base.clone();
        cfg.lm_config.epsilon = eps;
        let out = run_c2f(corpus, hier, &cfg, workers, None)?;
        let last = out.report.iterations.last().expect("iterations >= 1");
        let (Some(micro_f1), Some(macro_f1)) = (last.micro_f1, last.macro_f1) else {
            return Err(PipelineError::NoGoldLabels);
        };
        rows.push(SweepRow {
            epsilon: eps,
            micro_f1,
            macro_f1,
        });
    }
    let micro: Vec<f64> = rows.iter().map(|r| r.micro_f1).collect();
    let mac: Vec<f64> = rows.iter().map(|r| r.macro_f1).collect();
    Ok(SweepTable {
        micro_f1_std: population_std(&micro),
        macro_f1_std: population_std(&mac),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelHierarchy, Vocabulary};
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Vec<FineId> {
        v.iter().copied().map(FineId).collect()
    }

    #[test]
    fn f1_worked_example() {
        let scores = micro_macro_f1(&ids(&[0, 1, 1, 1]), &ids(&[0, 0, 1, 1]), 2).unwrap();
        assert_eq!(scores.micro_f1, 0.75);
        assert_eq!(scores.per_class, vec![2.0 / 3.0, 0.8]);
        assert_eq!(scores.macro_f1, (2.0 / 3.0 + 0.8) / 2.0);
    }

    #[test]
    fn f1_counts_absent_classes_as_zero() {
        // class 2 never appears: contributes 0 to the macro mean
        let scores = micro_macro_f1(&ids(&[0, 1]), &ids(&[0, 1]), 3).unwrap();
        assert_eq!(scores.per_class, vec![1.0, 1.0, 0.0]);
        assert_eq!(scores.macro_f1, 2.0 / 3.0);
        assert_eq!(scores.micro_f1, 1.0);
    }

    #[test]
    fn f1_rejects_bad_shapes() {
        assert!(matches!(
            micro_macro_f1(&ids(&[0]), &ids(&[0, 1]), 2),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            micro_macro_f1(&ids(&[5]), &ids(&[0]), 2),
            Err(EvalError::LabelOutOfRange { .. })
        ));
    }

    /// Independent tally: per-class loops straight over the vectors.
    fn brute_force_f1(pred: &[FineId], gold: &[FineId], k: usize) -> (f64, f64) {
        let mut per = Vec::new();
        let (mut tps, mut fps, mut fns) = (0u64, 0u64, 0u64);
        for c in 0..k as u32 {
            let tp = pred
                .iter()
                .zip(gold)
                .filter(|(p, g)| p.0 == c && g.0 == c)
                .count() as u64;
            let fp = pred
                .iter()
                .zip(gold)
                .filter(|(p, g)| p.0 == c && g.0 != c)
                .count() as u64;
            let fn_ = pred
                .iter()
                .zip(gold)
                .filter(|(p, g)| p.0 != c && g.0 == c)
                .count() as u64;
            tps += tp;
            fps += fp;
            fns += fn_;
            let denom = 2 * tp + fp + fn_;
            per.push(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 });
        }
        let micro_denom = 2 * tps + fps + fns;
        let micro = if micro_denom == 0 { 0.0 } else { 2.0 * tps as f64 / micro_denom as f64 };
        (micro, per.iter().sum::<f64>() / k as f64)
    }

    proptest! {
        #[test]
        fn f1_matches_brute_force_exactly(
            labels in proptest::collection::vec((0u32..6, 0u32..6), 1..50),
            k_extra in 0usize..2,
        ) {
            let pred: Vec<FineId> = labels.iter().map(|(p, _)| FineId(*p)).collect();
            let gold: Vec<FineId> = labels.iter().map(|(_, g)| FineId(*g)).collect();
            let k = 6 + k_extra;
            let scores = micro_macro_f1(&pred, &gold, k).unwrap();
            let (micro, macro_) = brute_force_f1(&pred, &gold, k);
            prop_assert_eq!(scores.micro_f1, micro);
            prop_assert_eq!(scores.macro_f1, macro_);
            // single-label micro-F1 is accuracy
            let acc = pred.iter().zip(&gold).filter(|(p, g)| p == g).count() as f64
                / pred.len() as f64;
            prop_assert_eq!(scores.micro_f1, acc);
        }
    }

    #[test]
    fn t_test_golden() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - 4.242640687119285).abs() < 1e-12, "t = {}", r.t);
        assert_eq!(r.df, 4.0);
        assert!((r.p - 0.013235599563682695).abs() < 1e-10, "p = {}", r.p);
        assert!(!r.degenerate_variance);
    }

    #[test]
    fn t_test_is_symmetric() {
        let a = [0.31, 0.72, 0.55, 0.91];
        let b = [0.12, 0.80, 0.60, 0.40];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
    }

    #[test]
    fn t_test_degenerate_cases() {
        let r = paired_t_test(&[0.4, 0.4, 0.4], &[0.4, 0.4, 0.4]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        assert!(!r.degenerate_variance);

        let r = paired_t_test(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.t, f64::INFINITY);
        assert_eq!(r.p, 0.0);
        assert!(r.degenerate_variance);

        assert!(matches!(
            paired_t_test(&[1.0], &[2.0]),
            Err(EvalError::TooFewSamples(1))
        ));
        assert!(matches!(
            paired_t_test(&[1.0, 2.0], &[1.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ln_gamma_spot_values() {
        for (x, want) in [
            (0.5, 0.5723649429247),
            (4.7, 2.736405146315567),
            (12.0, 17.502307845873887),
        ] {
            assert!((ln_gamma(x) - want).abs() < 1e-10, "lgamma({x})");
        }
    }

    #[test]
    fn reg_inc_beta_spot_values() {
        for (a, b, x, want) in [
            (2.0, 0.5, 4.0 / 22.0, 0.013235599563682685),
            (0.5, 0.5, 0.3, 0.36901011956554536),
            (5.0, 3.0, 0.71, 0.66963972362365),
            (0.5, 2.0, 0.05, 0.32982002668121896),
            (8.0, 10.0, 0.4, 0.3594923429330944),
            (1.0, 1.0, 0.37, 0.37),
        ] {
            let got = reg_inc_beta(a, b, x);
            assert!((got - want).abs() < 1e-12, "I_{x}({a},{b}) = {got}, want {want}");
        }
        assert_eq!(reg_inc_beta(3.0, 4.0, 0.0), 0.0);
        assert_eq!(reg_inc_beta(3.0, 4.0, 1.0), 1.0);
    }

    fn toy_vocab() -> (Vocabulary, Vec<TokenId>) {
        let hier = LabelHierarchy::from_json_str(r#"{"c": ["f1", "f2"]}"#).unwrap();
        let mut vocab = Vocabulary::new(&hier);
        let toks = vocab.tokenize_grow("a b c d e f g h");
        (vocab, toks)
    }

    #[test]
    fn entropy_golden_and_exclusions() {
        let (vocab, t) = toy_vocab();
        // counts a:2 b:2 c:4 -> 1.5 bits
        let bag = vec![t[0], t[0], t[1], t[1], t[2], t[2], t[2], t[2]];
        assert_eq!(word_entropy([bag.as_slice()], &vocab).unwrap(), 1.5);
        // specials never count
        let with_specials = vec![t[0], Vocabulary::EOS, Vocabulary::UNK, t[0]];
        assert_eq!(word_entropy([with_specials.as_slice()], &vocab).unwrap(), 0.0);
        assert!(matches!(
            word_entropy([[Vocabulary::EOS].as_slice()], &vocab),
            Err(EvalError::EmptySet)
        ));
        assert!(matches!(
            word_entropy(std::iter::empty(), &vocab),
            Err(EvalError::EmptySet)
        ));
    }

    #[test]
    fn entropy_pools_across_documents() {
        let (vocab, t) = toy_vocab();
        let (d1, d2) = (vec![t[0], t[1]], vec![t[2], t[3]]);
        let pooled = word_entropy([d1.as_slice(), d2.as_slice()], &vocab).unwrap();
        assert_eq!(pooled, 2.0); // uniform over 4 words
    }

    #[test]
    fn entropy_drop_zero_for_identical_cells() {
        let (vocab, t) = toy_vocab();
        let bag1 = vec![t[0], t[1]];
        let bag2 = vec![t[0], t[1]];
        let all: Vec<&[TokenId]> = vec![&bag1, &bag2];
        let cells = vec![vec![bag1.as_slice()], vec![bag2.as_slice()]];
        let stats = entropy_drop_bags(&all, &cells, &vocab).unwrap();
        assert_eq!(stats.drop, 0.0);
    }

    #[test]
    fn entropy_drop_uses_unweighted_mean() {
        let (vocab, t) = toy_vocab();
        // cell A: one token of one word (H = 0); cell B: four distinct words (H = 2)
        let a = vec![t[0]];
        let b = vec![t[1], t[2], t[3], t[4]];
        let all: Vec<&[TokenId]> = vec![&a, &b];
        let cells = vec![vec![a.as_slice()], vec![b.as_slice()]];
        let stats = entropy_drop_bags(&all, &cells, &vocab).unwrap();
        assert_eq!(stats.mean_within, 1.0);
        let weighted = (1.0 * 0.0 + 4.0 * 2.0) / 5.0;
        assert_ne!(stats.mean_within, weighted);
        assert_eq!(stats.drop, stats.overall - 1.0);
    }

    #[test]
    fn entropy_drop_checks_partition() {
        use crate::corpus::Document;
        let (vocab, t) = toy_vocab();
        let mk = |id: u32, toks: &[TokenId]| Document {
            id: DocId(id),
            raw_text: String::new(),
            tokens: toks.to_vec(),
            coarse: crate::corpus::CoarseId(0),
            gold_fine: None,
        };
        let d0 = mk(0, &[t[0], t[1]]);
        let d1 = mk(1, &[t[2]]);
        let docs = vec![&d0, &d1];
        let mut partition = BTreeMap::new();
        partition.insert(FineId(0), vec![DocId(0)]);
        partition.insert(FineId(1), vec![DocId(0)]);
        assert!(matches!(
            entropy_drop(&docs, &partition, &vocab),
            Err(EvalError::OverlappingCells(_))
        ));
        let mut partition = BTreeMap::new();
        partition.insert(FineId(0), vec![DocId(7)]);
        assert!(matches!(
            entropy_drop(&docs, &partition, &vocab),
            Err(EvalError::NotInDocSet(_))
        ));
        let mut partition = BTreeMap::new();
        partition.insert(FineId(0), vec![DocId(0)]);
        partition.insert(FineId(1), vec![DocId(1)]);
        let stats = entropy_drop(&docs, &partition, &vocab).unwrap();
        assert!(stats.overall > 1.0 && stats.drop > 0.0);
    }

    #[test]
    fn sig6_formats_six_significant_digits() {
        assert_eq!(sig6(0.75), "7.50000e-1");
        assert_eq!(sig6(0.0051234567), "5.12346e-3");
        assert_eq!(sig6(0.0), "0.00000e0");
    }

    #[test]
    fn population_std_divides_by_n() {
        assert_eq!(population_std(&[2.0]), 0.0);
        assert_eq!(population_std(&[1.0, 3.0]), 1.0);
        assert_eq!(population_std(&[0.5, 0.5, 0.5]), 0.0);
    }

    #[test]
    fn default_grid_is_ln_1_through_ln_10() {
        let grid = default_epsilon_grid();
        assert_eq!(grid.len(), 10);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[4], 5.0f64.ln());
        assert_eq!(grid[9], 10.0f64.ln());
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    fn sweep_fixture() -> (crate::corpus::Corpus, LabelHierarchy, PipelineConfig) {
        use crate::corpus::synth::{synth_corpus, SynthSpec};
        use crate::langmodel::LMConfig;
        use crate::pipeline::{Mode, StageSeeds};
        let spec = SynthSpec::from_json_str(
            r#"{
                "hierarchy": {"sport": ["tennis", "golf"]},
                "docs_per_fine": 6, "len_min": 4, "len_max": 7, "mention_rate": 0.5,
                "topics": {
                    "tennis": {"racket": 2.0, "net": 1.0},
                    "golf": {"club": 2.0, "hole": 1.0}
                }
            }"#,
        )
        .unwrap();
        let corpus = synth_corpus(&spec, 19).unwrap();
        let hier = spec.hierarchy().clone();
        let cfg = PipelineConfig {
            iterations: 1,
            mode: Mode::Joint,
            lm_config: LMConfig {
                context_size: 2,
                embed_dim: 3,
                hidden_dim: 4,
                label_embed_dim: 2,
                epochs: 1,
                max_gen_len: 8,
                ..LMConfig::default()
            },
            generation_factor: 1.0,
            seeds: StageSeeds::from_master(3),
        };
        (corpus, hier, cfg)
    }

    #[test]
    fn sweep_tabulates_one_row_per_epsilon() {
        let (corpus, hier, cfg) = sweep_fixture();
        let grid = [0.0, 2.0f64.ln()];
        let table = epsilon_sweep(&corpus, &hier, &cfg, &grid, 1).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].epsilon, 0.0);
        assert_eq!(table.rows[1].epsilon, 2.0f64.ln());
        for r in &table.rows {
            assert!((0.0..=1.0).contains(&r.micro_f1));
            assert!((0.0..=1.0).contains(&r.macro_f1));
        }
        let micro: Vec<f64> = table.rows.iter().map(|r| r.micro_f1).collect();
        assert_eq!(table.micro_f1_std, population_std(&micro));
        // only epsilon varies, so a single value cannot spread
        let one = epsilon_sweep(&corpus, &hier, &cfg, &grid[..1], 1).unwrap();
        assert_eq!(one.macro_f1_std, 0.0);
        assert_eq!(one.rows[0].micro_f1, table.rows[0].micro_f1);
    }

    #[test]
    fn sweep_csv_has_header_and_sig6_cells() {
        let (corpus, hier, cfg) = sweep_fixture();
        let table = epsilon_sweep(&corpus, &hier, &cfg, &[5.0f64.ln()], 1).unwrap();
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epsilon,micro_f1,macro_f1"));
        let row = lines.next().unwrap();
        assert!(lines.next().is_none());
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0], "1.60944e0");
        for c in cells {
            assert!(c.contains('e'), "{c} not sig6-formatted");
        }
    }

    #[test]
    fn sweep_rejects_empty_grid_and_missing_gold() {
        let (mut corpus, hier, cfg) = sweep_fixture();
        assert!(matches!(
            epsilon_sweep(&corpus, &hier, &cfg, &[], 1),
            Err(PipelineError::BadConfig(_))
        ));
        for d in &mut corpus.docs {
            d.gold_fine = None;
        }
        assert!(matches!(
            epsilon_sweep(&corpus, &hier, &cfg, &[0.5], 1),
            Err(PipelineError::NoGoldLabels)
        ));
    }

    proptest! {
        /// Entropy depends only on the pooled multiset, not how tokens are
        /// split across documents.
        #[test]
        fn entropy_invariant_to_document_splits(
            counts in proptest::collection::vec(1u64..6, 1..6),
            cut in 0.0f64..1.0,
        ) {
            let (vocab, t) = toy_vocab();
            let pooled: Vec<TokenId> = counts
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| std::iter::repeat(t[i]).take(c as usize))
                .collect();
            let k = ((pooled.len() as f64) * cut) as usize;
            let (left, right) = pooled.split_at(k);
            let one = word_entropy([pooled.as_slice()], &vocab).unwrap();
            let two = word_entropy([left, right], &vocab).unwrap();
            prop_assert_eq!(one, two);
        }
    }
}
