//! Nucleus (top-p) sampling and autoregressive document generation.

use rand::Rng;

use crate::corpus::{FineId, Label, TokenId, Vocabulary};

use super::{forward, LMConfig, LMError, LMParams};

/// Token indices of the nucleus: probability-descending order (ties broken
/// by ascending index), cut at the smallest prefix whose cumulative mass
/// reaches `top_p`. If rounding leaves the total short, the nucleus is the
/// whole distribution.
pub fn nucleus_prefix(probs: &[f64], top_p: f64) -> Result<Vec<usize>, LMError> {
    if probs.iter().any(|p| p.is_nan()) {
        return Err(LMError::DegenerateDistribution);
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(LMError::BadConfig("top_p must lie in (0, 1]".to_owned()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut prefix = Vec::new();
    let mut cum = 0.0;
    for i in order {
        prefix.push(i);
        cum += probs[i];
        if cum >= top_p {
            break;
        }
    }
    Ok(prefix)
}

/// Samples an index from `probs` restricted (and renormalized) to `prefix`.
fn sample_within(probs: &[f64], prefix: &[usize], rng: &mut impl Rng) -> usize {
    let total: f64 = prefix.iter().map(|&i| probs[i]).sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &i in prefix {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    *prefix.last().expect("nucleus is never empty")
}

/// Nucleus sampling over a log-probability vector.
pub fn nucleus_sample(
    log_probs: &[f64],
    top_p: f64,
    rng: &mut impl Rng,
) -> Result<TokenId, LMError> {
    let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
    let prefix = nucleus_prefix(&probs, top_p)?;
    Ok(TokenId(sample_within(&probs, &prefix, rng) as u32))
}

/// A generated pseudo-document. `degenerate` marks the fallback case where
/// the model insisted on ending immediately and a lone `<unk>` was emitted.
#[derive(Clone, Debug)]
pub struct GeneratedDoc {
    pub tokens: Vec<TokenId>,
    pub degenerate: bool,
}

/// Autoregressively samples a document conditioned on `fine`, stopping at
/// `<eos>` or after `max_gen_len` tokens. Special tokens other than `<eos>`
/// are masked out, so the output is plain words. An immediate `<eos>` gets
/// one resample; a second one yields a single `<unk>` flagged degenerate.
pub fn generate_doc(
    params: &LMParams,
    cfg: &LMConfig,
    vocab: &Vocabulary,
    fine: FineId,
    rng: &mut impl Rng,
) -> Result<GeneratedDoc, LMError> {
    cfg.validate()?;
    if vocab.len() != params.vocab_size {
        return Err(LMError::BadConfig(format!(
            "vocabulary has {} tokens but the model was built for {}",
            vocab.len(),
            params.vocab_size
        )));
    }
    let row = params.label_row(Label::Fine(fine))?;
    let mut ctx = vec![Vocabulary::LABELSEP; params.context_size];
    let mut out: Vec<TokenId> = Vec::new();
    while out.len() < cfg.max_gen_len {
        let fwd = forward(params, row, &ctx)?;
        let mut probs: Vec<f64> = fwd.log_probs.iter().map(|lp| lp.exp()).collect();
        for i in 0..vocab.first_word_id() {
            if TokenId(i as u32) != Vocabulary::EOS {
                probs[i] = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let prefix = nucleus_prefix(&probs, cfg.top_p)?;
        let mut pick = TokenId(sample_within(&probs, &prefix, rng) as u32);
        if out.is_empty() && pick == Vocabulary::EOS {
            pick = TokenId(sample_within(&probs, &prefix, rng) as u32);
            if pick == Vocabulary::EOS {
                return Ok(GeneratedDoc {
                    tokens: vec![Vocabulary::UNK],
                    degenerate: true,
                });
            }
        }
        if pick == Vocabulary::EOS {
            break;
        }
        out.push(pick);
        ctx.rotate_left(1);
        let last = ctx.len() - 1;
        ctx[last] = pick;
    }
    Ok(GeneratedDoc {
        tokens: out,
        degenerate: false,
    })
}
