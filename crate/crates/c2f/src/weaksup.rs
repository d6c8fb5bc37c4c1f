//! Weak supervision from exclusive fine-label-name mentions.
//!
//! A document is assigned to fine label F when, among the fine labels under
//! the document's own coarse label, F is the only one whose name occurs in the
//! text. Names under other coarse labels play no part. Assignments can then be
//! balanced down to the smallest non-empty class.


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{normalize_words, Corpus, DocId, FineId, LabelHierarchy, TokenId, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum WeakSupError {
    #[error("no document mentions exactly one fine label; unmatched: {0:?}")]
    AllEmpty(Vec<String>),
    #[error("document {0} is assigned to more than one fine label")]
    DuplicateDoc(DocId),
    #[error("assignments cover {got} fine labels, hierarchy has {want}")]
    WrongClassCount { got: usize, want: usize },
    #[error("balanced flag set but class sizes differ: {0:?}")]
    NotBalanced(Vec<usize>),
    #[error("document {doc} under {fine:?} has a different coarse label")]
    ParentMismatch { doc: DocId, fine: String },
    #[error("document id {0} is out of range for the corpus")]
    UnknownDoc(DocId),
    #[error("unknown fine label {0:?} in serialized assignments")]
    UnknownFineLabel(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed weak supervision file: {0}")]
    Malformed(String),
}

/// Per-fine-label document assignments for one bootstrap iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeakSupervision {
    assignments: Vec<Vec<DocId>>,
    pub iteration: u32,
    pub balanced: bool,
}

impl WeakSupervision {
    /// Builds and checks shape invariants: one list per fine label, no
    /// document in two lists, equal non-empty sizes when `balanced`.
    pub fn new(
        assignments: Vec<Vec<DocId>>,
        num_fine: usize,
        iteration: u32,
        balanced: bool,
    ) -> Result<Self, WeakSupError> {
        if assignments.len() != num_fine {
            return Err(WeakSupError::WrongClassCount {
                got: assignments.len(),
                want: num_fine,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for list in &assignments {
            for &d in list {
                if !seen.insert(d) {
                    return Err(WeakSupError::DuplicateDoc(d));
                }
            }
        }
        if balanced {
            let sizes: Vec<usize> = assignments.iter().map(Vec::len).collect();
            let mut nonzero = sizes.iter().filter(|&&s| s > 0);
            if let Some(&first) = nonzero.next() {
                if nonzero.any(|&s| s != first) {
                    return Err(WeakSupError::NotBalanced(sizes));
                }
            }
        }
        Ok(WeakSupervision {
            assignments,
            iteration,
            balanced,
        })
    }

    pub fn assignments(&self) -> &[Vec<DocId>] {
        &self.assignments
    }

    pub fn class(&self, f: FineId) -> &[DocId] {
        &self.assignments[f.idx()]
    }

    pub fn class_size(&self, f: FineId) -> usize {
        self.assignments[f.idx()].len()
    }

    pub fn total(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn is_all_empty(&self) -> bool {
        self.assignments.iter().all(Vec::is_empty)
    }

    /// Checks document-level invariants against a corpus: ids in range and
    /// every assigned document's coarse label is the fine label's parent.
    pub fn validate_against(
        &self,
        corpus: &Corpus,
        hier: &LabelHierarchy,
    ) -> Result<(), WeakSupError> {
        for f in hier.fine_ids() {
            for &d in self.class(f) {
                let doc = corpus
                    .docs
                    .get(d.idx())
                    .ok_or(WeakSupError::UnknownDoc(d))?;
                if doc.coarse != hier.parent(f) {
                    return Err(WeakSupError::ParentMismatch {
                        doc: d,
                        fine: hier.fine_name(f).to_owned(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self, hier: &LabelHierarchy) -> serde_json::Value {
        let mut assignments = serde_json::Map::new();
        // emitted sorted by fine label name for stable bytes
        let mut names: Vec<(String, FineId)> = hier
            .fine_ids()
            .map(|f| (hier.fine_name(f).to_owned(), f))
            .collect();
        names.sort();
        for (name, f) in names {
            let ids: Vec<serde_json::Value> = self.class(f)
                .iter()
                .map(|d| serde_json::Value::from(d.0))
                .collect();
            assignments.insert(name, serde_json::Value::Array(ids));
        }
        serde_json::json!({
            "iteration": self.iteration,
            "balanced": self.balanced,
            "assignments": assignments,
        })
    }

    pub fn from_json(value: &serde_json::Value, hier: &LabelHierarchy) -> Result<Self, WeakSupError> {
        let obj = value
            .as_object()
            .ok_or_else(|| WeakSupError::Malformed("not a JSON object".into()))?;
        let iteration = obj
            .get("iteration")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| WeakSupError::Malformed("missing integer `iteration`".into()))?
            as u32;
        let balanced = obj
            .get("balanced")
            .and_then(|v| v.as_bool())
            .ok_or_else(|| WeakSupError::Malformed("missing boolean `balanced`".into()))?;
        let map = obj
            .get("assignments")
            .and_then(|v| v.as_object())
            .ok_or_else(|| WeakSupError::Malformed("missing object `assignments`".into()))?;
        let mut assignments = vec![Vec::new(); hier.num_fine()];
        for (name, ids) in map {
            let f = hier
                .fine_by_name(name)
                .ok_or_else(|| WeakSupError::UnknownFineLabel(name.clone()))?;
            let ids = ids
                .as_array()
                .ok_or_else(|| WeakSupError::Malformed(format!("{name:?} is not an id array")))?;
            assignments[f.idx()] = ids
                .iter()
                .map(|v| {
                    v.as_u64()
                        .map(|n| DocId(n as u32))
                        .ok_or_else(|| WeakSupError::Malformed(format!("bad doc id under {name:?}")))
                })
                .collect::<Result<_, _>>()?;
        }
        Self::new(assignments, hier.num_fine(), iteration, balanced)
    }

    pub fn write(&self, hier: &LabelHierarchy, path: &std::path::Path) -> Result<(), WeakSupError> {
        let mut bytes = serde_json::to_vec_pretty(&self.to_json(hier)).expect("json");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|source| WeakSupError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &std::path::Path, hier: &LabelHierarchy) -> Result<Self, WeakSupError> {
        let text = std::fs::read_to_string(path).map_err(|source| WeakSupError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| WeakSupError::Malformed(e.to_string()))?;
        Self::from_json(&value, hier)
    }
}

/// Token-id phrase for a label name, or None when some word never occurs in
/// the vocabulary (the phrase then cannot match any document).
fn phrase_ids(name: &str, vocab: &Vocabulary) -> Option<Vec<TokenId>> {
    normalize_words(name)
        .iter()
        .map(|w| vocab.lookup(w))
        .collect()
}

fn contains_subsequence(tokens: &[TokenId], phrase: &[TokenId]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

/// Assigns each document that mentions exactly one of its sibling fine label
/// names. Iteration 0, unbalanced.
pub fn extract_weak_supervision(
    corpus: &Corpus,
    hier: &LabelHierarchy,
) -> Result<WeakSupervision, WeakSupError> {
    let phrases: Vec<Option<Vec<TokenId>>> = hier
        .fine_ids()
        .map(|f| phrase_ids(hier.fine_name(f), &corpus.vocab))
        .collect();
    let mut assignments = vec![Vec::new(); hier.num_fine()];
    for doc in &corpus.docs {
        let mut only: Option<FineId> = None;
        let mut multiple = false;
        for &f in hier.children(doc.coarse) {
            let hit = matches!(&phrases[f.idx()], Some(p) if contains_subsequence(&doc.tokens, p));
            if hit {
                if only.is_some() {
                    multiple = true;
                    break;
                }
                only = Some(f);
            }
        }
        if let (Some(f), false) = (only, multiple) {
            assignments[f.idx()].push(doc.id);
        }
    }
    let ws = WeakSupervision::new(assignments, hier.num_fine(), 0, false)?;
    if ws.is_all_empty() {
        return Err(WeakSupError::AllEmpty(
            hier.fine_ids().map(|f| hier.fine_name(f).to_owned()).collect(),
        ));
    }
    Ok(ws)
}

/// Subsamples every non-empty class down to the smallest non-empty size.
/// Returns the balanced assignments plus the fine labels left empty.
pub fn stratified_balance(
    ws: &WeakSupervision,
    seed: u64,
) -> Result<(WeakSupervision, Vec<FineId>), WeakSupError> {
    if ws.is_all_empty() {
        return Err(WeakSupError::AllEmpty(Vec::new()));
    }
    let target = ws
        .assignments
        .iter()
        .filter(|l| !l.is_empty())
        .map(Vec::len)
        .min()
        .expect("some class is non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ws.assignments.len());
    let mut empty = Vec::new();
    for (i, list) in ws.assignments.iter().enumerate() {
        if list.is_empty() {
            empty.push(FineId(i as u32));
            out.push(Vec::new());
            continue;
        }
        // partial Fisher-Yates over indices, then restore ascending id order
        let mut idx: Vec<usize> = (0..list.len()).collect();
        for j in 0..target {
            let pick = rng.gen_range(j..idx.len());
            idx.swap(j, pick);
        }
        let mut keep: Vec<DocId> = idx[..target].iter().map(|&j| list[j]).collect();
        keep.sort();
        out.push(keep);
    }
    let balanced = WeakSupervision::new(out, ws.assignments.len(), ws.iteration, true)?;
    Ok((balanced, empty))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, LabelHierarchy};
    use proptest::prelude::*;
    use rand::Rng;

    fn hier() -> LabelHierarchy {
        LabelHierarchy::from_json_str(
            r#"{"sports": ["soccer", "tennis"], "arts": ["music", "movies"]}"#,
        )
        .unwrap()
    }

    fn corpus_of(texts_coarse: &[(&str, &str)]) -> Corpus {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let body: String = texts_coarse
            .iter()
            .map(|(t, c)| format!("{{\"text\": {t:?}, \"coarse\": {c:?}}}\n"))
            .collect();
        std::fs::write(&path, body).unwrap();
        load_corpus(&path, &hier()).unwrap()
    }

    #[test]
    fn exclusive_mentions_only() {
        let corpus = corpus_of(&[
            ("messi scored and soccer fans cheered", "sports"), // exclusive -> soccer
            ("soccer and tennis share a stadium", "sports"),    // both siblings -> dropped
            ("the soccer film won awards", "arts"),             // cross-coarse mention ignored
            ("a tennis racket on court", "sports"),             // exclusive -> tennis
        ]);
        let ws = extract_weak_supervision(&corpus, &hier()).unwrap();
        assert_eq!(ws.class(FineId(0)), &[DocId(0)]);
        assert_eq!(ws.class(FineId(1)), &[DocId(3)]);
        assert!(ws.class(FineId(2)).is_empty());
        assert!(ws.class(FineId(3)).is_empty());
        assert_eq!(ws.iteration, 0);
        assert!(!ws.balanced);
    }

    #[test]
    fn multiword_names_match_as_phrases() {
        let hier = LabelHierarchy::from_json_str(
            r#"{"business": ["stocks & bonds", "economy"]}"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"text": "stocks and bonds rallied", "coarse": "business"}"#,
                "\n",
                r#"{"text": "Stocks & Bonds rallied", "coarse": "business"}"#,
                "\n",
                r#"{"text": "bonds then stocks", "coarse": "business"}"#,
                "\n"
            ),
        )
        .unwrap();
        let corpus = load_corpus(&path, &hier).unwrap();
        let ws = extract_weak_supervision(&corpus, &hier).unwrap();
        // only the contiguous "stocks bonds" sequence matches
        assert_eq!(ws.class(FineId(0)), &[DocId(1)]);
    }

    #[test]
    fn all_empty_is_an_error_listing_labels() {
        let corpus = corpus_of(&[("nothing relevant here", "sports")]);
        match extract_weak_supervision(&corpus, &hier()) {
            Err(WeakSupError::AllEmpty(names)) => {
                assert_eq!(names, ["soccer", "tennis", "music", "movies"]);
            }
            other => panic!("expected AllEmpty, got {other:?}"),
        }
    }

    #[test]
    fn balance_subsamples_to_smallest_nonempty() {
        let assignments = vec![
            (0..5).map(DocId).collect(),
            (10..13).map(DocId).collect(),
            (20..27).map(DocId).collect(),
            Vec::new(),
        ];
        let ws = WeakSupervision::new(assignments, 4, 0, false).unwrap();
        let (bal, empty) = stratified_balance(&ws, 7).unwrap();
        assert!(bal.balanced);
        assert_eq!(bal.iteration, 0);
        assert_eq!(empty, vec![FineId(3)]);
        for f in 0..3 {
            let class = bal.class(FineId(f));
            assert_eq!(class.len(), 3);
            assert!(class.windows(2).all(|w| w[0] < w[1]), "ascending ids");
            assert!(class.iter().all(|d| ws.class(FineId(f)).contains(d)));
        }
        assert!(bal.class(FineId(3)).is_empty());
        // deterministic under seed, different under another
        let (bal2, _) = stratified_balance(&ws, 7).unwrap();
        assert_eq!(bal, bal2);
    }

    #[test]
    fn balance_of_all_empty_errors() {
        let ws = WeakSupervision::new(vec![Vec::new(), Vec::new()], 2, 0, false).unwrap();
        assert!(matches!(
            stratified_balance(&ws, 1),
            Err(WeakSupError::AllEmpty(_))
        ));
    }

    #[test]
    fn shape_invariants_enforced() {
        assert!(matches!(
            WeakSupervision::new(vec![vec![DocId(1)], vec![DocId(1)]], 2, 0, false),
            Err(WeakSupError::DuplicateDoc(_))
        ));
        assert!(matches!(
            WeakSupervision::new(vec![vec![DocId(1)]], 2, 0, false),
            Err(WeakSupError::WrongClassCount { .. })
        ));
        assert!(matches!(
            WeakSupervision::new(vec![vec![DocId(1)], vec![DocId(2), DocId(3)]], 2, 0, true),
            Err(WeakSupError::NotBalanced(_))
        ));
        let corpus = corpus_of(&[("soccer game", "sports")]);
        let ws = WeakSupervision::new(vec![Vec::new(), Vec::new(), vec![DocId(0)], Vec::new()], 4, 0, false)
            .unwrap();
        assert!(matches!(
            ws.validate_against(&corpus, &hier()),
            Err(WeakSupError::ParentMismatch { .. })
        ));
        let ws = WeakSupervision::new(vec![vec![DocId(9)], Vec::new(), Vec::new(), Vec::new()], 4, 0, false)
            .unwrap();
        assert!(matches!(
            ws.validate_against(&corpus, &hier()),
            Err(WeakSupError::UnknownDoc(_))
        ));
    }

    #[test]
    fn json_roundtrip_and_shape() {
        let ws = WeakSupervision::new(
            vec![vec![DocId(2), DocId(5)], Vec::new(), vec![DocId(1), DocId(7)], Vec::new()],
            4,
            1,
            true,
        )
        .unwrap();
        let h = hier();
        let value = ws.to_json(&h);
        assert_eq!(value["iteration"], 1);
        assert_eq!(value["balanced"], true);
        assert_eq!(value["assignments"]["soccer"][1], 5);
        assert_eq!(value["assignments"]["movies"].as_array().unwrap().len(), 0);
        let back = WeakSupervision::from_json(&value, &h).unwrap();
        assert_eq!(back, ws);
        let bad = serde_json::json!({"iteration": 0, "balanced": false, "assignments": {"golf": []}});
        assert!(matches!(
            WeakSupervision::from_json(&bad, &h),
            Err(WeakSupError::UnknownFineLabel(_))
        ));
    }

    /// Direct re-derivation from strings: phrase scan plus the set equation.
    fn brute_force(corpus: &Corpus, hier: &LabelHierarchy) -> Vec<Vec<DocId>> {
        let mut out = vec![Vec::new(); hier.num_fine()];
        for doc in &corpus.docs {
            let words = normalize_words(&doc.raw_text);
            let hits: Vec<FineId> = hier
                .children(doc.coarse)
                .iter()
                .copied()
                .filter(|&f| {
                    let phrase = normalize_words(hier.fine_name(f));
                    words.windows(phrase.len()).any(|w| w == phrase.as_slice())
                })
                .collect();
            if let [only] = hits.as_slice() {
                out[only.idx()].push(doc.id);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn extraction_matches_brute_force(
            n_docs in 1usize..12,
            seed in 0u64..500,
        ) {
            // small vocabulary so mentions and collisions are frequent
            let pool = ["ball", "net", "goal", "court", "ice", "drum", "note"];
            let names = ["goal net", "court", "ice", "drum"];
            let h = LabelHierarchy::from_json_str(
                r#"{"a": ["goal net", "court"], "b": ["ice", "drum"]}"#,
            ).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lines = String::new();
            for _ in 0..n_docs {
                let len = rng.gen_range(1..8);
                let words: Vec<&str> = (0..len)
                    .map(|_| {
                        if rng.gen::<f64>() < 0.35 {
                            names[rng.gen_range(0..names.len())]
                        } else {
                            pool[rng.gen_range(0..pool.len())]
                        }
                    })
                    .collect();
                let coarse = if rng.gen::<bool>() { "a" } else { "b" };
                lines.push_str(&format!(
                    "{{\"text\": \"{}\", \"coarse\": \"{coarse}\"}}\n",
                    words.join(" ")
                ));
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.jsonl");
            std::fs::write(&path, lines).unwrap();
            let corpus = load_corpus(&path, &h).unwrap();
            let expect = brute_force(&corpus, &h);
            match extract_weak_supervision(&corpus, &h) {
                Ok(ws) => prop_assert_eq!(ws.assignments(), expect.as_slice()),
                Err(WeakSupError::AllEmpty(_)) => {
                    prop_assert!(expect.iter().all(Vec::is_empty))
                }
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }
    }
}
