//! Corpora, label hierarchies, and the shared vocabulary.
//!
//! A corpus is JSON-lines with keys `text`, `coarse`, and optional
//! `fine_gold`; unknown keys are ignored. The hierarchy manifest is a single
//! JSON object mapping each coarse label to its fine label names.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub mod synth;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("hierarchy manifest is not a JSON object of coarse -> [fine names]")]
    BadManifestShape,
    #[error("hierarchy has no coarse labels")]
    EmptyHierarchy,
    #[error("label name {0:?} is empty after normalization")]
    EmptyLabelName(String),
    #[error("duplicate label name {0:?}")]
    DuplicateLabel(String),
    #[error("fine label {0:?} is listed under more than one coarse label")]
    MultipleParents(String),
    #[error("coarse label {0:?} has no fine labels")]
    EmptyCoarseClass(String),
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: unknown coarse label {name:?}")]
    UnknownCoarseLabel { line: usize, name: String },
    #[error("line {line}: unknown fine label {name:?}")]
    UnknownFineLabel { line: usize, name: String },
    #[error("line {line}: document tokenizes to nothing")]
    EmptyDocument { line: usize },
    #[error("synth spec invalid: {0}")]
    BadSynthSpec(String),
}

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn idx(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_type!(
    /// Index of a coarse label within the hierarchy.
    CoarseId
);
id_type!(
    /// Index of a fine label within the hierarchy (global across coarse classes).
    FineId
);
id_type!(
    /// Index into the vocabulary.
    TokenId
);
id_type!(
    /// Position of a document within its corpus.
    DocId
);

/// A conditioning label: language models can condition on either level.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Label {
    Coarse(CoarseId),
    Fine(FineId),
}

impl Label {
    /// Row in the label embedding table: coarse labels first, then fine.
    pub fn embedding_row(self, num_coarse: usize) -> usize {
        match self {
            Label::Coarse(c) => c.idx(),
            Label::Fine(f) => num_coarse + f.idx(),
        }
    }
}

/// Lowercased alphanumeric runs; everything else separates tokens.
///
/// Combining marks introduced by lowercasing (e.g. dotted capital I) are
/// dropped so that normalizing is idempotent.
pub fn normalize_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase().filter(|c| c.is_alphanumeric()));
        } else if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

fn normalize_name(name: &str) -> String {
    normalize_words(name).join(" ")
}

/// Two-level label hierarchy: every fine label has exactly one coarse parent.
#[derive(Clone, Debug)]
pub struct LabelHierarchy {
    coarse_names: Vec<String>,
    fine_names: Vec<String>,
    parent: Vec<CoarseId>,
    children: Vec<Vec<FineId>>,
    coarse_by_norm: HashMap<String, CoarseId>,
    fine_by_norm: HashMap<String, FineId>,
}

impl LabelHierarchy {
    pub fn from_value(value: &serde_json::Value) -> Result<Self, CorpusError> {
        let obj = value.as_object().ok_or(CorpusError::BadManifestShape)?;
        if obj.is_empty() {
            return Err(CorpusError::EmptyHierarchy);
        }
        let mut h = LabelHierarchy {
            coarse_names: Vec::new(),
            fine_names: Vec::new(),
            parent: Vec::new(),
            children: Vec::new(),
            coarse_by_norm: HashMap::new(),
            fine_by_norm: HashMap::new(),
        };
        for (coarse, fines) in obj {
            let cid = CoarseId(h.coarse_names.len() as u32);
            let cnorm = normalize_name(coarse);
            if cnorm.is_empty() {
                return Err(CorpusError::EmptyLabelName(coarse.clone()));
            }
            if h.coarse_by_norm.contains_key(&cnorm) || h.fine_by_norm.contains_key(&cnorm) {
                return Err(CorpusError::DuplicateLabel(coarse.clone()));
            }
            let fines = fines.as_array().ok_or(CorpusError::BadManifestShape)?;
            if fines.is_empty() {
                return Err(CorpusError::EmptyCoarseClass(coarse.clone()));
            }
            let mut kids = Vec::new();
            for fine in fines {
                let fine = fine.as_str().ok_or(CorpusError::BadManifestShape)?;
                let fnorm = normalize_name(fine);
                if fnorm.is_empty() {
                    return Err(CorpusError::EmptyLabelName(fine.to_owned()));
                }
                if h.fine_by_norm.contains_key(&fnorm) {
                    return Err(CorpusError::MultipleParents(fine.to_owned()));
                }
                if h.coarse_by_norm.contains_key(&fnorm) || fnorm == cnorm {
                    return Err(CorpusError::DuplicateLabel(fine.to_owned()));
                }
                let fid = FineId(h.fine_names.len() as u32);
                h.fine_names.push(fine.to_owned());
                h.parent.push(cid);
                h.fine_by_norm.insert(fnorm, fid);
                kids.push(fid);
            }
            h.coarse_names.push(coarse.clone());
            h.coarse_by_norm.insert(cnorm, cid);
            h.children.push(kids);
        }
        Ok(h)
    }

    pub fn from_json_str(json: &str) -> Result<Self, CorpusError> {
        let value: serde_json::Value =
            serde_json::from_str(json).map_err(|e| CorpusError::MalformedLine {
                line: e.line(),
                message: e.to_string(),
            })?;
        Self::from_value(&value)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Manifest value in id order, with the original surface names.
    pub fn to_manifest_value(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (c, name) in self.coarse_names.iter().enumerate() {
            let kids: Vec<serde_json::Value> = self.children[c]
                .iter()
                .map(|f| serde_json::Value::String(self.fine_names[f.idx()].clone()))
                .collect();
            obj.insert(name.clone(), serde_json::Value::Array(kids));
        }
        serde_json::Value::Object(obj)
    }

    pub fn num_coarse(&self) -> usize {
        self.coarse_names.len()
    }

    pub fn num_fine(&self) -> usize {
        self.fine_names.len()
    }

    /// Total number of conditioning labels (coarse then fine).
    pub fn num_labels(&self) -> usize {
        self.num_coarse() + self.num_fine()
    }

    pub fn coarse_name(&self, c: CoarseId) -> &str {
        &self.coarse_names[c.idx()]
    }

    pub fn fine_name(&self, f: FineId) -> &str {
        &self.fine_names[f.idx()]
    }

    pub fn parent(&self, f: FineId) -> CoarseId {
        self.parent[f.idx()]
    }

    pub fn children(&self, c: CoarseId) -> &[FineId] {
        &self.children[c.idx()]
    }

    pub fn coarse_by_name(&self, name: &str) -> Option<CoarseId> {
        self.coarse_by_norm.get(&normalize_name(name)).copied()
    }

    pub fn fine_by_name(&self, name: &str) -> Option<FineId> {
        self.fine_by_norm.get(&normalize_name(name)).copied()
    }

    pub fn coarse_ids(&self) -> impl Iterator<Item = CoarseId> {
        (0..self.coarse_names.len() as u32).map(CoarseId)
    }

    pub fn fine_ids(&self) -> impl Iterator<Item = FineId> {
        (0..self.fine_names.len() as u32).map(FineId)
    }
}

/// Token table shared by every model in a run.
///
/// Fixed layout: `<labelsep>` (also the left-padding token), `<eos>`, `<unk>`,
/// one conditioning token per label (coarse then fine), then words in first-seen
/// order. Word ids and special ids are disjoint; tokenization never emits a
/// special for input text.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    id_to_word: Vec<String>,
    word_to_id: HashMap<String, TokenId>,
    num_coarse: usize,
    num_fine: usize,
}

impl Vocabulary {
    pub const LABELSEP: TokenId = TokenId(0);
    pub const EOS: TokenId = TokenId(1);
    pub const UNK: TokenId = TokenId(2);

    pub fn new(hier: &LabelHierarchy) -> Self {
        let mut id_to_word = vec![
            "<labelsep>".to_owned(),
            "<eos>".to_owned(),
            "<unk>".to_owned(),
        ];
        for c in hier.coarse_ids() {
            id_to_word.push(format!("<label:{}>", normalize_name(hier.coarse_name(c))));
        }
        for f in hier.fine_ids() {
            id_to_word.push(format!("<label:{}>", normalize_name(hier.fine_name(f))));
        }
        Vocabulary {
            id_to_word,
            word_to_id: HashMap::new(),
            num_coarse: hier.num_coarse(),
            num_fine: hier.num_fine(),
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds the specials
    }

    pub fn num_coarse(&self) -> usize {
        self.num_coarse
    }

    pub fn num_fine(&self) -> usize {
        self.num_fine
    }

    /// First id that denotes an actual word.
    pub fn first_word_id(&self) -> usize {
        3 + self.num_coarse + self.num_fine
    }

    pub fn is_special(&self, t: TokenId) -> bool {
        t.idx() < self.first_word_id()
    }

    pub fn conditioning_token(&self, label: Label) -> TokenId {
        TokenId(3 + label.embedding_row(self.num_coarse) as u32)
    }

    pub fn word(&self, t: TokenId) -> &str {
        &self.id_to_word[t.idx()]
    }

    pub fn lookup(&self, word: &str) -> Option<TokenId> {
        self.word_to_id.get(word).copied()
    }

    /// Tokenizes, assigning fresh ids to unseen words.
    pub fn tokenize_grow(&mut self, text: &str) -> Vec<TokenId> {
        normalize_words(text)
            .into_iter()
            .map(|w| match self.word_to_id.get(&w) {
                Some(&id) => id,
                None => {
                    let id = TokenId(self.id_to_word.len() as u32);
                    self.id_to_word.push(w.clone());
                    self.word_to_id.insert(w, id);
                    id
                }
            })
            .collect()
    }

    /// Tokenizes against the frozen table; unseen words map to `<unk>`.
    pub fn tokenize_frozen(&self, text: &str) -> Vec<TokenId> {
        normalize_words(text)
            .iter()
            .map(|w| self.lookup(w).unwrap_or(Self::UNK))
            .collect()
    }

    /// Space-joined surface forms; specials render as their tags.
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|t| self.word(*t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Digest of the full table; checkpoints refuse to load across a mismatch.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.num_coarse as u64).to_le_bytes());
        hasher.update((self.num_fine as u64).to_le_bytes());
        for word in &self.id_to_word {
            hasher.update((word.len() as u64).to_le_bytes());
            hasher.update(word.as_bytes());
        }
        hasher.finalize().into()
    }
}

/// A single labeled document.
#[derive(Clone, Debug)]
pub struct Document {
    pub id: DocId,
    pub raw_text: String,
    pub tokens: Vec<TokenId>,
    pub coarse: CoarseId,
    pub gold_fine: Option<FineId>,
}

/// Documents plus the vocabulary they were tokenized under.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub docs: Vec<Document>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, id: DocId) -> &Document {
        &self.docs[id.idx()]
    }

    /// Number of documents carrying the given coarse label.
    pub fn coarse_count(&self, c: CoarseId) -> usize {
        self.docs.iter().filter(|d| d.coarse == c).count()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    coarse: String,
    #[serde(default)]
    fine_gold: Option<String>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    text: &'a str,
    coarse: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    fine_gold: Option<&'a str>,
}

/// Loads a JSON-lines corpus, growing a fresh vocabulary over it.
pub fn load_corpus(path: &Path, hier: &LabelHierarchy) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut vocab = Vocabulary::new(hier);
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let coarse = hier
            .coarse_by_name(&raw.coarse)
            .ok_or_else(|| CorpusError::UnknownCoarseLabel {
                line: line_no,
                name: raw.coarse.clone(),
            })?;
        let gold_fine = match &raw.fine_gold {
            None => None,
            Some(name) => Some(hier.fine_by_name(name).ok_or_else(|| {
                CorpusError::UnknownFineLabel {
                    line: line_no,
                    name: name.clone(),
                }
            })?),
        };
        let tokens = vocab.tokenize_grow(&raw.text);
        if tokens.is_empty() {
            return Err(CorpusError::EmptyDocument { line: line_no });
        }
        docs.push(Document {
            id: DocId(docs.len() as u32),
            raw_text: raw.text,
            tokens,
            coarse,
            gold_fine,
        });
    }
    Ok(Corpus { docs, vocab })
}

/// Writes the corpus back out; loading the result reproduces tokens, coarse,
/// and gold labels exactly.
pub fn save_corpus(
    corpus: &Corpus,
    hier: &LabelHierarchy,
    mut w: impl Write,
) -> Result<(), std::io::Error> {
    for doc in &corpus.docs {
        let rec = RecordOut {
            text: &doc.raw_text,
            coarse: hier.coarse_name(doc.coarse),
            fine_gold: doc.gold_fine.map(|f| hier.fine_name(f)),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sports_arts() -> LabelHierarchy {
        LabelHierarchy::from_json_str(
            r#"{"sports": ["soccer", "tennis"], "arts": ["music", "movies"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        let words = normalize_words("Messi plays for FC Barcelona");
        assert_eq!(words, ["messi", "plays", "for", "fc", "barcelona"]);
    }

    #[test]
    fn tokenize_strips_punctuation() {
        assert_eq!(normalize_words("stocks & bonds!"), ["stocks", "bonds"]);
        assert_eq!(normalize_words("win-win, really?"), ["win", "win", "really"]);
        assert_eq!(normalize_words("...!?"), Vec::<String>::new());
    }

    #[test]
    fn frozen_tokenize_maps_unseen_to_unk() {
        let hier = sports_arts();
        let mut vocab = Vocabulary::new(&hier);
        let stocks = vocab.tokenize_grow("stocks")[0];
        // "&" drops at the punctuation boundary, "bonds" was never seen
        assert_eq!(
            vocab.tokenize_frozen("stocks & bonds!"),
            vec![stocks, Vocabulary::UNK]
        );
    }

    #[test]
    fn vocabulary_layout_and_bijection() {
        let hier = sports_arts();
        let mut vocab = Vocabulary::new(&hier);
        assert_eq!(vocab.first_word_id(), 3 + 2 + 4);
        let toks = vocab.tokenize_grow("soccer labelsep soccer");
        assert_eq!(toks[0], toks[2]);
        assert_ne!(toks[1], Vocabulary::LABELSEP); // plain word, not the special
        assert!(!vocab.is_special(toks[0]));
        assert!(vocab.is_special(Vocabulary::UNK));
        assert!(vocab.is_special(vocab.conditioning_token(Label::Fine(FineId(3)))));
        // ids and surface forms stay in bijection
        let mut seen = std::collections::HashSet::new();
        for t in 0..vocab.len() {
            assert!(seen.insert(vocab.word(TokenId(t as u32)).to_owned()));
        }
        for t in toks {
            assert_eq!(vocab.lookup(vocab.word(t)), Some(t));
        }
    }

    #[test]
    fn content_hash_tracks_vocab_growth() {
        let hier = sports_arts();
        let mut vocab = Vocabulary::new(&hier);
        vocab.tokenize_grow("one two three");
        let h1 = vocab.content_hash();
        assert_eq!(h1, vocab.content_hash());
        vocab.tokenize_grow("four");
        assert_ne!(h1, vocab.content_hash());
    }

    #[test]
    fn hierarchy_indices_and_lookup() {
        let hier = sports_arts();
        assert_eq!(hier.num_coarse(), 2);
        assert_eq!(hier.num_fine(), 4);
        let soccer = hier.fine_by_name("Soccer").unwrap();
        assert_eq!(hier.parent(soccer), hier.coarse_by_name("sports").unwrap());
        assert_eq!(hier.children(CoarseId(0)), &[FineId(0), FineId(1)]);
        assert_eq!(hier.fine_name(soccer), "soccer");
        assert!(hier.fine_by_name("absent").is_none());
    }

    #[test]
    fn hierarchy_rejects_duplicate_and_shared_fine_labels() {
        let err = LabelHierarchy::from_json_str(r#"{"a": ["x", "x"]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::MultipleParents(_)));
        let err =
            LabelHierarchy::from_json_str(r#"{"a": ["x"], "b": ["x"]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::MultipleParents(_)));
        let err = LabelHierarchy::from_json_str(r#"{"a": ["a"]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateLabel(_)));
        let err = LabelHierarchy::from_json_str(r#"{"a": []}"#).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyCoarseClass(_)));
        let err = LabelHierarchy::from_json_str(r#"{"a": ["!!"]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyLabelName(_)));
        let err = LabelHierarchy::from_json_str(r#"[1, 2]"#).unwrap_err();
        assert!(matches!(err, CorpusError::BadManifestShape));
    }

    #[test]
    fn loads_news_style_taxonomy() {
        let manifest = r#"{
            "arts": ["dance", "music", "movies", "television"],
            "business": ["economy", "energy companies", "international business", "stocks & bonds"],
            "politics": ["abortion", "federal budget", "gay rights", "gun control",
                         "immigration", "law enforcement", "military", "surveillance",
                         "the affordable care act"],
            "science": ["cosmos", "environment"],
            "sports": ["baseball", "basketball", "football", "golf", "hockey", "soccer", "tennis"]
        }"#;
        let hier = LabelHierarchy::from_json_str(manifest).unwrap();
        assert_eq!(hier.num_coarse(), 5);
        assert_eq!(hier.num_fine(), 26);
        let sb = hier.fine_by_name("stocks & bonds").unwrap();
        assert_eq!(hier.coarse_name(hier.parent(sb)), "business");
    }

    #[test]
    fn load_corpus_assigns_ids_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"text": "Messi plays.", "coarse": "sports", "fine_gold": "soccer", "extra": 1}"#,
                "\n",
                r#"{"text": "a violin", "coarse": "arts"}"#,
                "\n"
            ),
        )
        .unwrap();
        let hier = sports_arts();
        let corpus = load_corpus(&path, &hier).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.docs[0].id, DocId(0));
        assert_eq!(corpus.docs[0].gold_fine, Some(FineId(0)));
        assert_eq!(corpus.docs[1].coarse, CoarseId(1));
        assert_eq!(corpus.docs[1].gold_fine, None);
        assert_eq!(corpus.coarse_count(CoarseId(0)), 1);
    }

    #[test]
    fn load_corpus_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let good = r#"{"text": "ok", "coarse": "sports"}"#;
        for (body, want) in [
            (format!("{good}\nnot json\n"), "malformed record"),
            (
                format!("{good}\n{{\"text\": \"x\", \"coarse\": \"cooking\"}}\n"),
                "unknown coarse label",
            ),
            (
                format!("{good}\n{{\"text\": \"x\", \"coarse\": \"sports\", \"fine_gold\": \"golf\"}}\n"),
                "unknown fine label",
            ),
            (
                format!("{good}\n{{\"text\": \"?!\", \"coarse\": \"sports\"}}\n"),
                "tokenizes to nothing",
            ),
        ] {
            fs::write(&path, body).unwrap();
            let err = load_corpus(&path, &sports_arts()).unwrap_err().to_string();
            assert!(err.starts_with("line 2"), "{err}");
            assert!(err.contains(want), "{err}");
        }
        let err = load_corpus(Path::new("/nonexistent/x.jsonl"), &sports_arts()).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn corpus_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"text": "Ünïcode, tennis & such", "coarse": "sports", "fine_gold": "tennis"}"#,
                "\n",
                r#"{"text": "drums 101", "coarse": "arts"}"#,
                "\n"
            ),
        )
        .unwrap();
        let hier = sports_arts();
        let a = load_corpus(&path, &hier).unwrap();
        let out = dir.path().join("c2.jsonl");
        let mut buf = Vec::new();
        save_corpus(&a, &hier, &mut buf).unwrap();
        fs::write(&out, &buf).unwrap();
        let b = load_corpus(&out, &hier).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.docs.iter().zip(&b.docs) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.coarse, y.coarse);
            assert_eq!(x.gold_fine, y.gold_fine);
        }
    }

    #[test]
    fn counts_large_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.jsonl");
        let mut body = String::new();
        for i in 0..16_468 {
            body.push_str(&format!(
                "{{\"text\": \"doc number {i}\", \"coarse\": \"sports\"}}\n"
            ));
        }
        fs::write(&path, body).unwrap();
        let corpus = load_corpus(&path, &sports_arts()).unwrap();
        assert_eq!(corpus.len(), 16_468);
    }

    proptest! {
        #[test]
        fn tokenize_idempotent_on_detokenized_output(text in "[a-zA-Z0-9 ,.!?'-]{0,80}") {
            let hier = sports_arts();
            let mut vocab = Vocabulary::new(&hier);
            let toks = vocab.tokenize_grow(&text);
            let detok = vocab.detokenize(&toks);
            prop_assert_eq!(vocab.tokenize_frozen(&detok), toks);
        }

        #[test]
        fn normalized_words_survive_renormalization(text in "\\PC{0,60}") {
            for w in normalize_words(&text) {
                let again = normalize_words(&w);
                prop_assert_eq!(again, vec![w]);
            }
        }
    }
}
