//! Synthetic corpus generation from per-label topic distributions.
//!
//! Each document's words come from its gold fine label's topic; with
//! probability `mention_rate` the label's own surface name is spliced in at a
//! random position. Surface names of any fine label sharing the document's
//! coarse class never occur otherwise, so planted mentions are exclusive by
//! construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{
    normalize_words, Corpus, CorpusError, DocId, Document, LabelHierarchy, Vocabulary,
};

#[derive(Deserialize)]
struct RawSynthSpec {
    hierarchy: serde_json::Value,
    topics: std::collections::BTreeMap<String, std::collections::BTreeMap<String, f64>>,
    docs_per_fine: usize,
    len_min: usize,
    len_max: usize,
    mention_rate: f64,
}

/// One fine label's word distribution, cumulative over words sorted by name.
#[derive(Clone, Debug)]
struct Topic {
    words: Vec<String>,
    cumulative: Vec<f64>,
    total: f64,
}

/// Validated recipe for a synthetic corpus.
#[derive(Debug)]
pub struct SynthSpec {
    hier: LabelHierarchy,
    topics: Vec<Topic>, // indexed by fine id
    docs_per_fine: usize,
    len_min: usize,
    len_max: usize,
    mention_rate: f64,
}

fn bad(msg: impl Into<String>) -> CorpusError {
    CorpusError::BadSynthSpec(msg.into())
}

impl SynthSpec {
    pub fn from_json_str(json: &str) -> Result<Self, CorpusError> {
        let raw: RawSynthSpec =
            serde_json::from_str(json).map_err(|e| bad(format!("parse error: {e}")))?;
        let hier = LabelHierarchy::from_value(&raw.hierarchy)?;
        if !(0.0..=1.0).contains(&raw.mention_rate) {
            return Err(bad(format!(
                "mention_rate {} outside [0, 1]",
                raw.mention_rate
            )));
        }
        if raw.len_min < 1 || raw.len_min > raw.len_max {
            return Err(bad(format!(
                "need 1 <= len_min <= len_max, got {}..{}",
                raw.len_min, raw.len_max
            )));
        }
        if raw.docs_per_fine == 0 {
            return Err(bad("docs_per_fine must be at least 1"));
        }
        let mut topics = Vec::with_capacity(hier.num_fine());
        for f in hier.fine_ids() {
            let name = hier.fine_name(f);
            let entries = raw
                .topics
                .get(name)
                .ok_or_else(|| bad(format!("fine label {name:?} has no topic")))?;
            if entries.is_empty() {
                return Err(bad(format!("topic for {name:?} is empty")));
            }
            let mut words = Vec::new();
            let mut cumulative = Vec::new();
            let mut total = 0.0;
            for (word, &weight) in entries {
                let norm = normalize_words(word);
                if norm.len() != 1 {
                    return Err(bad(format!(
                        "topic word {word:?} for {name:?} must normalize to one word"
                    )));
                }
                if !(weight.is_finite() && weight > 0.0) {
                    return Err(bad(format!(
                        "topic weight {weight} for {word:?} under {name:?} must be finite and positive"
                    )));
                }
                total += weight;
                words.push(norm.into_iter().next().unwrap());
                cumulative.push(total);
            }
            topics.push(Topic {
                words,
                cumulative,
                total,
            });
        }
        for extra in raw.topics.keys() {
            if hier.fine_by_name(extra).is_none() {
                return Err(bad(format!("topic {extra:?} names no fine label")));
            }
        }
        Ok(SynthSpec {
            hier,
            topics,
            docs_per_fine: raw.docs_per_fine,
            len_min: raw.len_min,
            len_max: raw.len_max,
            mention_rate: raw.mention_rate,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn hierarchy(&self) -> &LabelHierarchy {
        &self.hier
    }
}

/// True when appending `candidate` to `words` would complete an occurrence of
/// any forbidden phrase.
fn completes_phrase(words: &[String], candidate: &str, phrases: &[Vec<String>]) -> bool {
    phrases.iter().any(|p| {
        let (last, head) = p.split_last().expect("phrases are non-empty");
        candidate == last && words.ends_with(head)
    })
}

fn sample_topic_word(
    topic: &Topic,
    words: &[String],
    forbidden: &[Vec<String>],
    rng: &mut ChaCha8Rng,
    fine_name: &str,
) -> Result<String, CorpusError> {
    for _ in 0..64 {
        let u = rng.gen::<f64>() * topic.total;
        let i = topic.cumulative.partition_point(|&c| c <= u);
        let w = &topic.words[i.min(topic.words.len() - 1)];
        if !completes_phrase(words, w, forbidden) {
            return Ok(w.clone());
        }
    }
    // Degenerate topic: almost all mass completes a label name. Fall back to
    // the first acceptable word so generation stays total and deterministic.
    topic
        .words
        .iter()
        .find(|w| !completes_phrase(words, w, forbidden))
        .cloned()
        .ok_or_else(|| {
            bad(format!(
                "every word in the topic for {fine_name:?} spells a label name"
            ))
        })
}

/// Generates the corpus. Same spec and seed always produce identical bytes.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<Corpus, CorpusError> {
    let hier = &spec.hier;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // fine label name phrases, grouped per coarse class
    let phrases: Vec<Vec<String>> = hier
        .fine_ids()
        .map(|f| normalize_words(hier.fine_name(f)))
        .collect();
    let mut vocab = Vocabulary::new(hier);
    let mut docs = Vec::new();
    for f in hier.fine_ids() {
        let coarse = hier.parent(f);
        let forbidden: Vec<Vec<String>> = hier
            .children(coarse)
            .iter()
            .map(|s| phrases[s.idx()].clone())
            .collect();
        let topic = &spec.topics[f.idx()];
        for _ in 0..spec.docs_per_fine {
            let len = rng.gen_range(spec.len_min..=spec.len_max);
            let mention = rng.gen::<f64>() < spec.mention_rate;
            let mut words: Vec<String> = Vec::with_capacity(len + 3);
            for _ in 0..len {
                let w =
                    sample_topic_word(topic, &words, &forbidden, &mut rng, hier.fine_name(f))?;
                words.push(w);
            }
            if mention {
                let pos = rng.gen_range(0..=words.len());
                for (off, w) in phrases[f.idx()].iter().enumerate() {
                    words.insert(pos + off, w.clone());
                }
            }
            let raw_text = words.join(" ");
            let tokens = vocab.tokenize_grow(&raw_text);
            docs.push(Document {
                id: DocId(docs.len() as u32),
                raw_text,
                tokens,
                coarse,
                gold_fine: Some(f),
            });
        }
    }
    Ok(Corpus { docs, vocab })
}
