//! Multinomial naive Bayes with add-one smoothing, trained on generated
//! pseudo-documents. Predictions are masked to the children of each
//! document's coarse label and softmax-renormalized within the mask.

use std::path::Path;

use crate::corpus::{Document, FineId, LabelHierarchy, TokenId, Vocabulary};
use crate::langmodel::ckpt::{read_container, write_container, CkptError};

const NB_MAGIC: &[u8; 5] = b"C2FNB";

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("no training documents")]
    EmptyTrainingSet,
    #[error("fine label `{0}` has no training documents")]
    MissingClass(String),
    #[error("fine label `{0}` is outside the trained class set")]
    UnexpectedClass(String),
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("every child of the document's coarse label is untrained")]
    UntrainedMask,
    #[error(transparent)]
    Ckpt(#[from] CkptError),
}

/// Log-priors and Laplace-smoothed log-likelihoods over the full fine-label
/// set. Classes outside the trained subset carry -inf priors and uniform
/// likelihood rows, so every exp-row still sums to 1.
#[derive(Clone, Debug)]
pub struct NaiveBayesModel {
    pub num_fine: usize,
    pub vocab_size: usize,
    /// length num_fine; exp sums to 1 over trained classes
    pub class_log_prior: Vec<f64>,
    /// num_fine x vocab_size, row-major
    pub word_log_likelihood: Vec<f64>,
    pub vocab_hash: [u8; 32],
}

impl NaiveBayesModel {
    fn likelihood_row(&self, f: FineId) -> &[f64] {
        &self.word_log_likelihood[f.idx() * self.vocab_size..(f.idx() + 1) * self.vocab_size]
    }
}

/// Fits the model on (tokens, fine label) pairs. `classes` restricts which
/// fine labels are trained (independent mode trains one coarse class's
/// children at a time); `None` trains all of them. Every trained class must
/// appear at least once.
pub fn train_classifier(
    pseudo_docs: &[(Vec<TokenId>, FineId)],
    vocab: &Vocabulary,
    hier: &LabelHierarchy,
    classes: Option<&[FineId]>,
) -> Result<NaiveBayesModel, ClassifierError> {
    if pseudo_docs.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let (k, v) = (hier.num_fine(), vocab.len());
    let mut trained = vec![false; k];
    match classes {
        Some(list) => list.iter().for_each(|f| trained[f.idx()] = true),
        None => trained.fill(true),
    }
    let mut word_counts = vec![0u64; k * v];
    let mut class_docs = vec![0u64; k];
    let mut class_tokens = vec![0u64; k];
    for (tokens, f) in pseudo_docs {
        if f.idx() >= k || !trained[f.idx()] {
            return Err(ClassifierError::UnexpectedClass(
                if f.idx() < k { hier.fine_name(*f).to_owned() } else { format!("#{}", f.0) },
            ));
        }
        class_docs[f.idx()] += 1;
        class_tokens[f.idx()] += tokens.len() as u64;
        for &t in tokens {
            if t.idx() >= v {
                return Err(ClassifierError::TokenOutOfRange { token: t.0, vocab: v });
            }
            word_counts[f.idx() * v + t.idx()] += 1;
        }
    }
    let total_docs: u64 = class_docs.iter().sum();
    let mut class_log_prior = vec![f64::NEG_INFINITY; k];
    let mut word_log_likelihood = vec![0.0; k * v];
    for c in 0..k {
        if !trained[c] {
            // untrained: impossible a priori, uniform over words
            let lp = -(v as f64).ln();
            word_log_likelihood[c * v..(c + 1) * v].fill(lp);
            continue;
        }
        if class_docs[c] == 0 {
            return Err(ClassifierError::MissingClass(
                hier.fine_name(FineId(c as u32)).to_owned(),
            ));
        }
        class_log_prior[c] = (class_docs[c] as f64).ln() - (total_docs as f64).ln();
        let denom = ((class_tokens[c] + v as u64) as f64).ln();
        for w in 0..v {
            word_log_likelihood[c * v + w] = ((word_counts[c * v + w] + 1) as f64).ln() - denom;
        }
    }
    Ok(NaiveBayesModel {
        num_fine: k,
        vocab_size: v,
        class_log_prior,
        word_log_likelihood,
        vocab_hash: vocab.content_hash(),
    })
}

/// One document's masked prediction: probabilities renormalized over the
/// children of its coarse label, zero elsewhere.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub doc: crate::corpus::DocId,
    pub fine: FineId,
    pub score: f64,
    pub scores: Vec<f64>,
}

pub fn predict(
    model: &NaiveBayesModel,
    doc: &Document,
    hier: &LabelHierarchy,
) -> Result<Prediction, ClassifierError> {
    let children = hier.children(doc.coarse);
    let mut joint = Vec::with_capacity(children.len());
    for &f in children {
        let row = model.likelihood_row(f);
        let mut score = model.class_log_prior[f.idx()];
        for &t in &doc.tokens {
            if t.idx() >= model.vocab_size {
                return Err(ClassifierError::TokenOutOfRange {
                    token: t.0,
                    vocab: model.vocab_size,
                });
            }
            score += row[t.idx()];
        }
        joint.push(score);
    }
    let max = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(ClassifierError::UntrainedMask);
    }
    let unnorm: Vec<f64> = joint.iter().map(|j| (j - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let mut scores = vec![0.0; model.num_fine];
    let mut best = (children[0], f64::NEG_INFINITY);
    for (&f, u) in children.iter().zip(&unnorm) {
        let p = u / total;
        scores[f.idx()] = p;
        // strict >: the lowest fine id wins ties
        if p > best.1 {
            best = (f, p);
        }
    }
    Ok(Prediction {
        doc: doc.id,
        fine: best.0,
        score: best.1,
        scores,
    })
}

pub fn save_nb_checkpoint(path: &Path, model: &NaiveBayesModel) -> Result<(), ClassifierError> {
    let dims = [model.num_fine as u64, model.vocab_size as u64];
    let blocks: [&[f64]; 2] = [&model.class_log_prior, &model.word_log_likelihood];
    write_container(path, NB_MAGIC, b"{}", &model.vocab_hash, &dims, &blocks)?;
    Ok(())
}

pub fn load_nb_checkpoint(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<NaiveBayesModel, ClassifierError> {
    let c = read_container(path, NB_MAGIC)?;
    if c.vocab_hash != vocab.content_hash() {
        return Err(CkptError::VocabMismatch.into());
    }
    if c.dims.len() != 2 || c.blocks.len() != 2 {
        return Err(CkptError::ShapeMismatch("expected 2 dims and 2 blocks".into()).into());
    }
    let (k, v) = (c.dims[0] as usize, c.dims[1] as usize);
    if v != vocab.len() {
        return Err(CkptError::VocabMismatch.into());
    }
    if c.blocks[0].len() != k || c.blocks[1].len() != k * v {
        return Err(CkptError::ShapeMismatch("block lengths disagree with dims".into()).into());
    }
    // priors may be -inf (untrained classes); NaN or +inf is corruption
    if c.blocks[0].iter().any(|p| p.is_nan() || *p == f64::INFINITY) {
        return Err(CkptError::ShapeMismatch("bad prior".into()).into());
    }
    for (row, chunk) in c.blocks[1].chunks(v).enumerate() {
        if chunk.iter().any(|l| !l.is_finite()) {
            return Err(
                CkptError::ShapeMismatch(format!("non-finite likelihood in row {row}")).into(),
            );
        }
        let mass: f64 = chunk.iter().map(|l| l.exp()).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(CkptError::ShapeMismatch(format!(
                "likelihood row {row} is not normalized"
            ))
            .into());
        }
    }
    let mut blocks = c.blocks.into_iter();
    Ok(NaiveBayesModel {
        num_fine: k,
        vocab_size: v,
        class_log_prior: blocks.next().unwrap(),
        word_log_likelihood: blocks.next().unwrap(),
        vocab_hash: c.vocab_hash,
    })
}
