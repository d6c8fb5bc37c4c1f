//! Analytic gradients of the training objective, validated against central
//! finite differences.

use crate::corpus::{CoarseId, FineId, Label, LabelHierarchy, TokenId};

use super::{fold_doc_steps, forward, LMConfig, LMError, LMParams};

/// Gradient accumulator shaped like [`LMParams`].
#[derive(Clone, Debug)]
pub struct LMGradient {
    pub token_embeddings: Vec<f64>,
    pub label_embeddings: Vec<f64>,
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

impl LMGradient {
    pub fn zeros(params: &LMParams) -> LMGradient {
        LMGradient {
            token_embeddings: vec![0.0; params.token_embeddings.len()],
            label_embeddings: vec![0.0; params.label_embeddings.len()],
            hidden_weights: vec![0.0; params.hidden_weights.len()],
            hidden_bias: vec![0.0; params.hidden_bias.len()],
            output_weights: vec![0.0; params.output_weights.len()],
            output_bias: vec![0.0; params.output_bias.len()],
        }
    }

    pub fn reset(&mut self) {
        for (_, block) in self.blocks_mut() {
            block.fill(0.0);
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("token_embeddings", &self.token_embeddings),
            ("label_embeddings", &self.label_embeddings),
            ("hidden_weights", &self.hidden_weights),
            ("hidden_bias", &self.hidden_bias),
            ("output_weights", &self.output_weights),
            ("output_bias", &self.output_bias),
        ]
    }

    fn blocks_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 6] {
        [
            ("token_embeddings", &mut self.token_embeddings),
            ("label_embeddings", &mut self.label_embeddings),
            ("hidden_weights", &mut self.hidden_weights),
            ("hidden_bias", &mut self.hidden_bias),
            ("output_weights", &mut self.output_weights),
            ("output_bias", &mut self.output_bias),
        ]
    }

    pub fn check_finite(&self) -> Result<(), LMError> {
        for (name, block) in self.blocks() {
            if block.iter().any(|v| !v.is_finite()) {
                return Err(LMError::NonFiniteGradient { block: name });
            }
        }
        Ok(())
    }
}

impl LMParams {
    /// Gradient-ascent step: params += learning_rate * grad.
    pub fn apply_ascent(&mut self, grad: &LMGradient, learning_rate: f64) {
        let pairs: [(&mut Vec<f64>, &Vec<f64>); 6] = [
            (&mut self.token_embeddings, &grad.token_embeddings),
            (&mut self.label_embeddings, &grad.label_embeddings),
            (&mut self.hidden_weights, &grad.hidden_weights),
            (&mut self.hidden_bias, &grad.hidden_bias),
            (&mut self.output_weights, &grad.output_weights),
            (&mut self.output_bias, &grad.output_bias),
        ];
        for (p, g) in pairs {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv += learning_rate * gv;
            }
        }
    }
}

/// Accumulates `scale` times the gradient of log P(tokens | label row) into
/// `grad` and returns the log-likelihood. Backpropagates through every step
/// of the document including the terminal `<eos>`.
pub(crate) fn accumulate_ll(
    params: &LMParams,
    grad: &mut LMGradient,
    label_row: usize,
    tokens: &[TokenId],
    scale: f64,
) -> Result<f64, LMError> {
    if tokens.is_empty() {
        return Err(LMError::EmptyDoc);
    }
    let (e, dl, hd, v) = (
        params.embed_dim,
        params.label_embed_dim,
        params.hidden_dim,
        params.vocab_size,
    );
    let mut total = 0.0;
    fold_doc_steps(params.context_size, tokens, |ctx, target| {
        super::check_token(params, target)?;
        let fwd = forward(params, label_row, ctx)?;
        total += fwd.log_probs[target.idx()];

        // d objective / d logits = scale * (one_hot(target) - softmax)
        let mut dlogits: Vec<f64> = fwd.log_probs.iter().map(|lp| -scale * lp.exp()).collect();
        dlogits[target.idx()] += scale;

        for (db, dv) in grad.output_bias.iter_mut().zip(&dlogits) {
            *db += dv;
        }
        let mut dh = vec![0.0; hd];
        for (j, &hj) in fwd.h.iter().enumerate() {
            let w_row = &params.output_weights[j * v..(j + 1) * v];
            let g_row = &mut grad.output_weights[j * v..(j + 1) * v];
            let mut acc = 0.0;
            for ((gw, &w), &dv) in g_row.iter_mut().zip(w_row).zip(&dlogits) {
                *gw += hj * dv;
                acc += w * dv;
            }
            dh[j] = acc;
        }
        // tanh backward
        let dpre: Vec<f64> = dh
            .iter()
            .zip(&fwd.h)
            .map(|(dhj, hj)| dhj * (1.0 - hj * hj))
            .collect();
        for (db, dp) in grad.hidden_bias.iter_mut().zip(&dpre) {
            *db += dp;
        }
        let mut dx = vec![0.0; fwd.x.len()];
        for (i, &xi) in fwd.x.iter().enumerate() {
            let w_row = &params.hidden_weights[i * hd..(i + 1) * hd];
            let g_row = &mut grad.hidden_weights[i * hd..(i + 1) * hd];
            let mut acc = 0.0;
            for ((gw, &w), &dp) in g_row.iter_mut().zip(w_row).zip(&dpre) {
                *gw += xi * dp;
                acc += w * dp;
            }
            dx[i] = acc;
        }
        // slice dx back into the embedding tables; repeated context tokens
        // accumulate once per occurrence
        for (c, &t) in ctx.iter().enumerate() {
            let row = &mut grad.token_embeddings[t.idx() * e..(t.idx() + 1) * e];
            for (g, dv) in row.iter_mut().zip(&dx[c * e..(c + 1) * e]) {
                *g += dv;
            }
        }
        let lab = &mut grad.label_embeddings[label_row * dl..(label_row + 1) * dl];
        for (g, dv) in lab.iter_mut().zip(&dx[params.context_size * e..]) {
            *g += dv;
        }
        Ok::<(), LMError>(())
    })?;
    Ok(total)
}

/// Accumulates the gradient of one weak-supervision item:
/// L(D|fine) - lambda * max(0, L(D|coarse) - L(D|fine) + epsilon).
/// Returns the item's objective contribution. The subgradient at the hinge
/// kink is zero, and an active hinge backpropagates through both likelihood
/// branches.
pub(crate) fn accumulate_fine_item(
    params: &LMParams,
    cfg: &LMConfig,
    grad: &mut LMGradient,
    tokens: &[TokenId],
    fine_row: usize,
    coarse_row: usize,
) -> Result<f64, LMError> {
    if cfg.lambda == 0.0 {
        return accumulate_ll(params, grad, fine_row, tokens, 1.0);
    }
    let ll_c = ll_only(params, coarse_row, tokens)?;
    let ll_f = ll_only(params, fine_row, tokens)?;
    let arg = ll_c - ll_f + cfg.epsilon;
    let active = arg > 0.0;
    let fine_scale = if active { 1.0 + cfg.lambda } else { 1.0 };
    let got_f = accumulate_ll(params, grad, fine_row, tokens, fine_scale)?;
    debug_assert_eq!(got_f, ll_f);
    if active {
        accumulate_ll(params, grad, coarse_row, tokens, -cfg.lambda)?;
    }
    Ok(ll_f - cfg.lambda * arg.max(0.0))
}

fn ll_only(params: &LMParams, label_row: usize, tokens: &[TokenId]) -> Result<f64, LMError> {
    if tokens.is_empty() {
        return Err(LMError::EmptyDoc);
    }
    let mut total = 0.0;
    fold_doc_steps(params.context_size, tokens, |ctx, target| {
        super::check_token(params, target)?;
        total += forward(params, label_row, ctx)?.log_probs[target.idx()];
        Ok::<(), LMError>(())
    })?;
    Ok(total)
}

/// Objective value and its gradient over a slice of coarse-conditioned
/// documents and a slice of weak-supervision items.
pub fn gradient(
    params: &LMParams,
    cfg: &LMConfig,
    hier: &LabelHierarchy,
    coarse_items: &[(&[TokenId], CoarseId)],
    fine_items: &[(&[TokenId], FineId)],
) -> Result<(f64, LMGradient), LMError> {
    if coarse_items.is_empty() && fine_items.is_empty() {
        return Err(LMError::EmptySlice);
    }
    let mut grad = LMGradient::zeros(params);
    let mut obj = 0.0;
    for &(tokens, c) in coarse_items {
        let row = params.label_row(Label::Coarse(c))?;
        obj += accumulate_ll(params, &mut grad, row, tokens, 1.0)?;
    }
    for &(tokens, f) in fine_items {
        let fine_row = params.label_row(Label::Fine(f))?;
        let coarse_row = params.label_row(Label::Coarse(hier.parent(f)))?;
        obj += accumulate_fine_item(params, cfg, &mut grad, tokens, fine_row, coarse_row)?;
    }
    grad.check_finite()?;
    Ok((obj, grad))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::langmodel::doc_log_likelihood;

    fn toy_hier() -> LabelHierarchy {
        LabelHierarchy::from_json_str(r#"{"c": ["f1", "f2"]}"#).unwrap()
    }

    /// Forward-only recomputation of the slice objective for the FD oracle.
    fn slice_objective(
        params: &LMParams,
        cfg: &LMConfig,
        hier: &LabelHierarchy,
        coarse_items: &[(&[TokenId], CoarseId)],
        fine_items: &[(&[TokenId], FineId)],
    ) -> f64 {
        let mut obj = 0.0;
        for &(tokens, c) in coarse_items {
            obj += doc_log_likelihood(params, tokens, Label::Coarse(c)).unwrap();
        }
        for &(tokens, f) in fine_items {
            let ll_f = doc_log_likelihood(params, tokens, Label::Fine(f)).unwrap();
            let ll_c =
                doc_log_likelihood(params, tokens, Label::Coarse(hier.parent(f))).unwrap();
            obj += ll_f - cfg.lambda * (ll_c - ll_f + cfg.epsilon).max(0.0);
        }
        obj
    }

    fn perturbed(params: &LMParams, block: usize, idx: usize, delta: f64) -> LMParams {
        let mut p = params.clone();
        match block {
            0 => p.token_embeddings[idx] += delta,
            1 => p.label_embeddings[idx] += delta,
            2 => p.hidden_weights[idx] += delta,
            3 => p.hidden_bias[idx] += delta,
            4 => p.output_weights[idx] += delta,
            _ => p.output_bias[idx] += delta,
        }
        p
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let hier = toy_hier();
        let params = fill_params(8, 3, 1, 2, 2, 2, 2);
        let d0 = toks(&[6, 7, 6]);
        let d1 = toks(&[7, 7]);
        let coarse_items: Vec<(&[TokenId], CoarseId)> =
            vec![(&d0, CoarseId(0)), (&d1, CoarseId(0))];
        let fine_items: Vec<(&[TokenId], FineId)> = vec![(&d1, FineId(0)), (&d0, FineId(1))];
        // one config with the hinge active (large epsilon), one inactive
        for cfg in [
            LMConfig { lambda: 0.01, epsilon: 5.0_f64.ln(), ..LMConfig::default() },
            LMConfig { lambda: 0.7, epsilon: 3.0, ..LMConfig::default() },
            LMConfig { lambda: 0.3, epsilon: 0.0, ..LMConfig::default() },
        ] {
            // stay clear of the hinge kink where the subgradient jumps
            for &(tokens, f) in &fine_items {
                let ll_f = doc_log_likelihood(&params, tokens, Label::Fine(f)).unwrap();
                let ll_c =
                    doc_log_likelihood(&params, tokens, Label::Coarse(hier.parent(f))).unwrap();
                assert!((ll_c - ll_f + cfg.epsilon).abs() > 1e-3);
            }
            let (obj, grad) =
                gradient(&params, &cfg, &hier, &coarse_items, &fine_items).unwrap();
            assert!(
                (obj - slice_objective(&params, &cfg, &hier, &coarse_items, &fine_items)).abs()
                    < 1e-9
            );
            let h = 1e-5;
            for (b, (name, block)) in grad.blocks().iter().enumerate() {
                for (i, &g) in block.iter().enumerate() {
                    let plus = slice_objective(
                        &perturbed(&params, b, i, h),
                        &cfg,
                        &hier,
                        &coarse_items,
                        &fine_items,
                    );
                    let minus = slice_objective(
                        &perturbed(&params, b, i, -h),
                        &cfg,
                        &hier,
                        &coarse_items,
                        &fine_items,
                    );
                    let fd = (plus - minus) / (2.0 * h);
                    let rel = (g - fd).abs() / f64::max(1.0, f64::max(g.abs(), fd.abs()));
                    assert!(rel < 1e-4, "{name}[{i}]: analytic {g} vs fd {fd}");
                }
            }
        }
    }

    #[test]
    fn kink_subgradient_is_zero_and_matches_lambda_zero() {
        let hier = toy_hier();
        let mut params = fill_params(8, 3, 1, 2, 2, 2, 2);
        // make coarse row 0 and fine row 1 identical: ll_c == ll_f exactly,
        // so epsilon = 0 lands the hinge argument exactly on the kink
        let dl = params.label_embed_dim;
        let row0: Vec<f64> = params.label_embeddings[0..dl].to_vec();
        params.label_embeddings[dl..2 * dl].copy_from_slice(&row0);
        let d1 = toks(&[7, 7]);
        let fine_items: Vec<(&[TokenId], FineId)> = vec![(&d1, FineId(0))];
        let with_hinge = LMConfig { lambda: 0.9, epsilon: 0.0, ..LMConfig::default() };
        let without = LMConfig { lambda: 0.0, epsilon: 0.0, ..LMConfig::default() };
        let (o1, g1) = gradient(&params, &with_hinge, &hier, &[], &fine_items).unwrap();
        let (o0, g0) = gradient(&params, &without, &hier, &[], &fine_items).unwrap();
        assert_eq!(o1, o0);
        for ((_, a), (_, b)) in g1.blocks().iter().zip(g0.blocks().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn active_hinge_changes_the_gradient() {
        let hier = toy_hier();
        let params = fill_params(8, 3, 1, 2, 2, 2, 2);
        let d1 = toks(&[7, 7]);
        let fine_items: Vec<(&[TokenId], FineId)> = vec![(&d1, FineId(0))];
        let active = LMConfig { lambda: 0.5, epsilon: 20.0, ..LMConfig::default() };
        let zero = LMConfig { lambda: 0.0, ..LMConfig::default() };
        let (_, g1) = gradient(&params, &active, &hier, &[], &fine_items).unwrap();
        let (_, g0) = gradient(&params, &zero, &hier, &[], &fine_items).unwrap();
        assert_ne!(g1.label_embeddings, g0.label_embeddings);
    }

    #[test]
    fn empty_slices_and_non_finite_params_error() {
        let hier = toy_hier();
        let mut params = fill_params(8, 3, 1, 2, 2, 2, 2);
        assert!(matches!(
            gradient(&params, &LMConfig::default(), &hier, &[], &[]),
            Err(LMError::EmptySlice)
        ));
        params.output_bias[0] = f64::INFINITY;
        let d = toks(&[6]);
        let coarse_items: Vec<(&[TokenId], CoarseId)> = vec![(&d, CoarseId(0))];
        assert!(matches!(
            gradient(&params, &LMConfig::default(), &hier, &coarse_items, &[]),
            Err(LMError::NonFiniteGradient { .. })
        ));
    }
}
