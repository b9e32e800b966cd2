//! Representation metrics, the contrastive loss, the spell-checking
//! cross-entropy, and the combined objective, with exact analytic gradients.
//!
//! The contrastive loss over a positive score and N negative scores is
//! `-log(pos / (pos + sum(neg)))`. For the dot-product metrics the scores
//! are `exp(dot)`, so the loss is evaluated entirely in log space
//! (log-sum-exp over the exponents) and never materializes an `exp` that
//! could overflow.

use thiserror::Error;

use crate::encoder::RepSequence;
use crate::math::{cosine, dot, logsumexp, norm, softmax_in_place, Mat};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("position {pos} is outside the valid length {valid}")]
    Position { pos: usize, valid: usize },
    #[error("hidden size mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("scores must be strictly positive and finite")]
    InvalidScores,
    #[error("at least one negative score is required")]
    NoNegatives,
    #[error("zero-norm pooled vector")]
    DegenerateInput,
    #[error("logits have {rows} rows but target has {targets} positions")]
    TargetLength { rows: usize, targets: usize },
    #[error("target id {id} is outside the vocabulary (size {vocab})")]
    TargetOutOfVocab { id: usize, vocab: usize },
    #[error("non-finite loss in {0}")]
    NonFinite(&'static str),
}

/// Task weights for the combined loss; all four default to 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub csc: f64,
    pub phonetics: f64,
    pub vision: f64,
    pub definition: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            csc: 1.0,
            phonetics: 1.0,
            vision: 1.0,
            definition: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let all = [self.csc, self.phonetics, self.vision, self.definition];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ObjectiveError::InvalidScores);
        }
        Ok(())
    }
}

/// Metric values for one contrastive mini-batch, held in log space so the
/// loss can be evaluated without overflow. Scores themselves are strictly
/// positive by construction (`score = exp(log_score)`).
#[derive(Debug, Clone)]
pub struct MetricScores {
    log_positive: f64,
    log_negatives: Vec<f64>,
}

impl MetricScores {
    /// From log-domain scores (the exponents of the metric).
    pub fn from_log(log_positive: f64, log_negatives: Vec<f64>) -> Result<Self, ObjectiveError> {
        if log_negatives.is_empty() {
            return Err(ObjectiveError::NoNegatives);
        }
        if !log_positive.is_finite() || log_negatives.iter().any(|v| !v.is_finite()) {
            return Err(ObjectiveError::InvalidScores);
        }
        Ok(MetricScores {
            log_positive,
            log_negatives,
        })
    }

    /// From raw positive scores.
    pub fn from_scores(positive: f64, negatives: &[f64]) -> Result<Self, ObjectiveError> {
        if !(positive.is_finite() && positive > 0.0)
            || negatives.iter().any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(ObjectiveError::InvalidScores);
        }
        Self::from_log(positive.ln(), negatives.iter().map(|v| v.ln()).collect())
    }

    pub fn positive_score(&self) -> f64 {
        self.log_positive.exp()
    }

    pub fn negative_scores(&self) -> Vec<f64> {
        self.log_negatives.iter().map(|v| v.exp()).collect()
    }

    pub fn log_positive(&self) -> f64 {
        self.log_positive
    }

    pub fn log_negatives(&self) -> &[f64] {
        &self.log_negatives
    }

    pub fn negatives_len(&self) -> usize {
        self.log_negatives.len()
    }
}

/// Dot-product metric at the error position: `exp(rep_o[s] . rep_other[s])`.
/// Can overflow to infinity for extreme inputs; training paths stay in log
/// space via [`MetricScores::from_log`] instead.
pub fn metric_dot(
    rep_o: &RepSequence,
    rep_other: &RepSequence,
    s: usize,
) -> Result<f64, ObjectiveError> {
    Ok(metric_dot_log(rep_o, rep_other, s)?.exp())
}

/// The exponent of [`metric_dot`]: the raw dot product at position `s`.
pub fn metric_dot_log(
    rep_o: &RepSequence,
    rep_other: &RepSequence,
    s: usize,
) -> Result<f64, ObjectiveError> {
    if rep_o.dim() != rep_other.dim() {
        return Err(ObjectiveError::DimMismatch {
            left: rep_o.dim(),
            right: rep_other.dim(),
        });
    }
    let valid = rep_o.valid_length().min(rep_other.valid_length());
    if s >= valid {
        return Err(ObjectiveError::Position { pos: s, valid });
    }
    Ok(dot(rep_o.row(s), rep_other.row(s)))
}

/// Cosine between the mean-pooled span `s..=s+w` of the original
/// representation and the mean over the valid rows of a definition
/// representation.
pub fn metric_cosine_span(
    rep_o: &RepSequence,
    rep_def: &RepSequence,
    s: usize,
    w: usize,
) -> Result<f64, ObjectiveError> {
    if rep_o.dim() != rep_def.dim() {
        return Err(ObjectiveError::DimMismatch {
            left: rep_o.dim(),
            right: rep_def.dim(),
        });
    }
    if s + w >= rep_o.valid_length() {
        return Err(ObjectiveError::Position {
            pos: s + w,
            valid: rep_o.valid_length(),
        });
    }
    let span = rep_o
        .mean_pool(s, s + w)
        .map_err(|_| ObjectiveError::Position {
            pos: s + w,
            valid: rep_o.valid_length(),
        })?;
    let def = rep_def
        .mean_pool_valid()
        .map_err(|_| ObjectiveError::DegenerateInput)?;
    cosine(&span, &def).ok_or(ObjectiveError::DegenerateInput)
}

/// Contrastive loss `-log(pos / (pos + sum(neg)))`, evaluated in log space.
pub fn info_nce(scores: &MetricScores) -> f64 {
    let mut all = Vec::with_capacity(scores.negatives_len() + 1);
    all.push(scores.log_positive);
    all.extend_from_slice(&scores.log_negatives);
    logsumexp(&all) - scores.log_positive
}

/// How definition cosines enter the contrastive loss. Cosines can be
/// negative while the loss requires positive scores; the default maps them
/// through `exp(cos / temperature)`, which is monotone in the cosine. The
/// clamped variant keeps the raw cosine, flooring it at a small positive
/// value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DefinitionScoreMode {
    ExpCosine { temperature: f64 },
    ClampedCosine { floor: f64 },
}

impl Default for DefinitionScoreMode {
    fn default() -> Self {
        DefinitionScoreMode::ExpCosine { temperature: 1.0 }
    }
}

/// Loss plus its gradient with respect to the original-sentence
/// representation. The positive/negative side comes from frozen encoders and
/// receives no gradient.
#[derive(Debug, Clone)]
pub struct ContrastiveGrad {
    pub loss: f64,
    /// Same shape as the original representation matrix; nonzero only at the
    /// rows the metric touched.
    pub grad_original: Mat,
}

/// Contrastive loss under the dot-product metric (phonetic and visual
/// objectives), with the gradient on `rep_o`.
pub fn dot_info_nce_with_grad(
    rep_o: &RepSequence,
    positive: &RepSequence,
    negatives: &[RepSequence],
    s: usize,
) -> Result<ContrastiveGrad, ObjectiveError> {
    if negatives.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    let z_pos = metric_dot_log(rep_o, positive, s)?;
    let mut z_all = Vec::with_capacity(negatives.len() + 1);
    z_all.push(z_pos);
    for negative in negatives {
        z_all.push(metric_dot_log(rep_o, negative, s)?);
    }
    let lse = logsumexp(&z_all);
    let loss = lse - z_pos;
    if !loss.is_finite() {
        return Err(ObjectiveError::NonFinite("contrastive dot loss"));
    }

    // softmax weights over [positive, negatives]
    let mut sigma = z_all;
    softmax_in_place(&mut sigma);
    let mut grad = Mat::zeros(rep_o.rows(), rep_o.dim());
    {
        let row = grad.row_mut(s);
        let coeff_pos = sigma[0] - 1.0;
        for (g, v) in row.iter_mut().zip(positive.row(s)) {
            *g += coeff_pos * v;
        }
        for (i, negative) in negatives.iter().enumerate() {
            let coeff = sigma[i + 1];
            for (g, v) in row.iter_mut().zip(negative.row(s)) {
                *g += coeff * v;
            }
        }
    }
    Ok(ContrastiveGrad {
        loss,
        grad_original: grad,
    })
}

/// Contrastive loss under the span-cosine metric (definition objective),
/// with the gradient on `rep_o` distributed over the word span `s..=s+w`.
pub fn cosine_span_info_nce_with_grad(
    rep_o: &RepSequence,
    positive: &RepSequence,
    negatives: &[RepSequence],
    s: usize,
    w: usize,
    mode: DefinitionScoreMode,
) -> Result<ContrastiveGrad, ObjectiveError> {
    if negatives.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    let span = rep_o
        .mean_pool(s, s + w)
        .map_err(|_| ObjectiveError::Position {
            pos: s + w,
            valid: rep_o.valid_length(),
        })?;
    let span_norm = norm(&span);
    if span_norm == 0.0 {
        return Err(ObjectiveError::DegenerateInput);
    }

    let pooled_defs: Vec<Vec<f64>> = std::iter::once(positive)
        .chain(negatives)
        .map(|rep| {
            if rep.dim() != rep_o.dim() {
                return Err(ObjectiveError::DimMismatch {
                    left: rep_o.dim(),
                    right: rep.dim(),
                });
            }
            rep.mean_pool_valid()
                .map_err(|_| ObjectiveError::DegenerateInput)
        })
        .collect::<Result<_, _>>()?;
    let cosines: Vec<f64> = pooled_defs
        .iter()
        .map(|d| cosine(&span, d).ok_or(ObjectiveError::DegenerateInput))
        .collect::<Result<_, _>>()?;

    // map cosines to log-domain scores and loss derivatives d loss / d cosine
    let (log_scores, dloss_dcos): (Vec<f64>, Vec<f64>) = match mode {
        DefinitionScoreMode::ExpCosine { temperature } => {
            let z: Vec<f64> = cosines.iter().map(|c| c / temperature).collect();
            let mut sigma = z.clone();
            softmax_in_place(&mut sigma);
            let d: Vec<f64> = sigma
                .iter()
                .enumerate()
                .map(|(i, sg)| {
                    let indicator = if i == 0 { 1.0 } else { 0.0 };
                    (sg - indicator) / temperature
                })
                .collect();
            (z, d)
        }
        DefinitionScoreMode::ClampedCosine { floor } => {
            let scores: Vec<f64> = cosines.iter().map(|c| c.max(floor)).collect();
            let total: f64 = scores.iter().sum();
            let d: Vec<f64> = scores
                .iter()
                .enumerate()
                .map(|(i, sc)| {
                    let active = if cosines[i] > floor { 1.0 } else { 0.0 };
                    let dscore = if i == 0 {
                        1.0 / total - 1.0 / sc
                    } else {
                        1.0 / total
                    };
                    dscore * active
                })
                .collect();
            (scores.iter().map(|sc| sc.ln()).collect(), d)
        }
    };
    let scores = MetricScores::from_log(log_scores[0], log_scores[1..].to_vec())?;
    let loss = info_nce(&scores);
    if !loss.is_finite() {
        return Err(ObjectiveError::NonFinite("contrastive cosine loss"));
    }

    // d cos(u, v) / d u = v/(|u||v|) - cos * u/|u|^2, then spread over the
    // span rows (each row contributes 1/(w+1) of the pooled vector)
    let h = rep_o.dim();
    let mut d_span = vec![0.0; h];
    for (i, pooled) in pooled_defs.iter().enumerate() {
        let coeff = dloss_dcos[i];
        if coeff == 0.0 {
            continue;
        }
        let def_norm = norm(pooled);
        let cos = cosines[i];
        for j in 0..h {
            let dcos = pooled[j] / (span_norm * def_norm) - cos * span[j] / (span_norm * span_norm);
            d_span[j] += coeff * dcos;
        }
    }
    let mut grad = Mat::zeros(rep_o.rows(), rep_o.dim());
    let row_scale = 1.0 / (w + 1) as f64;
    for r in s..=(s + w) {
        for (g, v) in grad.row_mut(r).iter_mut().zip(&d_span) {
            *g = v * row_scale;
        }
    }
    Ok(ContrastiveGrad {
        loss,
        grad_original: grad,
    })
}

/// Mean per-position cross-entropy of `softmax(logits)` against the target
/// ids, over the masked positions. An empty mask is defined as loss 0.
pub fn csc_loss(logits: &Mat, target_ids: &[usize], mask: &[usize]) -> Result<f64, ObjectiveError> {
    csc_loss_with_grad(logits, target_ids, mask).map(|(loss, _)| loss)
}

/// As [`csc_loss`], also returning the gradient with respect to the logits.
pub fn csc_loss_with_grad(
    logits: &Mat,
    target_ids: &[usize],
    mask: &[usize],
) -> Result<(f64, Mat), ObjectiveError> {
    if target_ids.len() != logits.rows() {
        return Err(ObjectiveError::TargetLength {
            rows: logits.rows(),
            targets: target_ids.len(),
        });
    }
    let vocab = logits.cols();
    let mut grad = Mat::zeros(logits.rows(), vocab);
    if mask.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / mask.len() as f64;
    let mut total = 0.0;
    for &pos in mask {
        if pos >= logits.rows() {
            return Err(ObjectiveError::Position {
                pos,
                valid: logits.rows(),
            });
        }
        let target = target_ids[pos];
        if target >= vocab {
            return Err(ObjectiveError::TargetOutOfVocab { id: target, vocab });
        }
        let row = logits.row(pos);
        let lse = logsumexp(row);
        total += lse - row[target];
        let g_row = grad.row_mut(pos);
        for (j, g) in g_row.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *g = (p - if j == target { 1.0 } else { 0.0 }) * inv;
        }
    }
    let loss = total * inv;
    if !loss.is_finite() {
        return Err(ObjectiveError::NonFinite("csc loss"));
    }
    Ok((loss, grad))
}

/// Weighted sum of the four objective values.
pub fn combined_loss(l_csc: f64, l_p: f64, l_v: f64, l_d: f64, weights: &LossWeights) -> f64 {
    weights.csc * l_csc + weights.phonetics * l_p + weights.vision * l_v + weights.definition * l_d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(rows: &[Vec<f64>]) -> RepSequence {
        RepSequence::from_rows(rows, rows.len()).unwrap()
    }

    #[test]
    fn metric_dot_known_values() {
        let zero = rep(&[vec![0.0, 0.0]]);
        assert!((metric_dot(&zero, &zero, 0).unwrap() - 1.0).abs() < 1e-12);

        let e1 = rep(&[vec![1.0, 0.0]]);
        let val = metric_dot(&e1, &e1, 0).unwrap();
        assert!((val - std::f64::consts::E).abs() < 1e-9);

        let e2 = rep(&[vec![0.0, 1.0]]);
        assert!((metric_dot(&e1, &e2, 0).unwrap() - 1.0).abs() < 1e-12);

        assert!(matches!(
            metric_dot(&e1, &e2, 1),
            Err(ObjectiveError::Position { pos: 1, valid: 1 })
        ));
    }

    #[test]
    fn metric_cosine_span_known_values() {
        let a = rep(&[vec![1.0, 2.0]]);
        let same = rep(&[vec![2.0, 4.0]]);
        assert!((metric_cosine_span(&a, &same, 0, 0).unwrap() - 1.0).abs() < 1e-12);

        let opposite = rep(&[vec![-1.0, -2.0]]);
        assert!((metric_cosine_span(&a, &opposite, 0, 0).unwrap() + 1.0).abs() < 1e-12);

        let x = rep(&[vec![1.0, 0.0]]);
        let y = rep(&[vec![0.0, 1.0]]);
        assert!(metric_cosine_span(&x, &y, 0, 0).unwrap().abs() < 1e-12);

        let zero = rep(&[vec![0.0, 0.0]]);
        assert!(matches!(
            metric_cosine_span(&x, &zero, 0, 0),
            Err(ObjectiveError::DegenerateInput)
        ));
    }

    #[test]
    fn cosine_span_excludes_padding_rows() {
        let a = rep(&[vec![1.0, 0.0]]);
        let padded = RepSequence::from_rows(
            &[vec![1.0, 0.0], vec![1000.0, -1000.0]],
            1, // second row is padding
        )
        .unwrap();
        assert!((metric_cosine_span(&a, &padded, 0, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn info_nce_uniform_scores() {
        let scores = MetricScores::from_scores(2.5, &[2.5; 8]).unwrap();
        let loss = info_nce(&scores);
        assert!((loss - 9.0_f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn info_nce_hand_computed_case() {
        let scores = MetricScores::from_scores(std::f64::consts::E, &[1.0, 1.0]).unwrap();
        let loss = info_nce(&scores);
        let expected = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((loss - expected).abs() < 1e-9);
        assert!((expected - 0.551445).abs() < 1e-6);
    }

    #[test]
    fn info_nce_vanishes_as_positive_dominates() {
        let scores = MetricScores::from_log(200.0, vec![0.0, 0.0, 0.0]).unwrap();
        assert!(info_nce(&scores) < 1e-12);
        assert!(info_nce(&scores) >= 0.0);
    }

    #[test]
    fn info_nce_log_space_matches_naive_formula() {
        let mut rng = crate::rng::stream(12, "scores");
        use rand::Rng;
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let pos: f64 = rng.random_range(0.01..5.0);
            let negs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..5.0)).collect();
            let scores = MetricScores::from_scores(pos, &negs).unwrap();
            let naive = -(pos / (pos + negs.iter().sum::<f64>())).ln();
            assert!((info_nce(&scores) - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn info_nce_monotone_and_permutation_invariant() {
        let base = MetricScores::from_scores(1.0, &[0.5, 2.0, 1.5]).unwrap();
        let higher = MetricScores::from_scores(1.1, &[0.5, 2.0, 1.5]).unwrap();
        assert!(info_nce(&higher) < info_nce(&base));

        let permuted = MetricScores::from_scores(1.0, &[2.0, 1.5, 0.5]).unwrap();
        assert!((info_nce(&base) - info_nce(&permuted)).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_invariant_under_positive_rescaling() {
        use rand::Rng;
        let mut rng = crate::rng::stream(8, "rescale");
        for _ in 0..50 {
            let h = rng.random_range(2..6);
            let row_a: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let row_b: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = rep(std::slice::from_ref(&row_a));
            let b = rep(std::slice::from_ref(&row_b));
            let base = metric_cosine_span(&a, &b, 0, 0).unwrap();
            assert!((-1.0..=1.0).contains(&base));
            let scale = rng.random_range(0.1..50.0);
            let scaled_a = rep(&[row_a.iter().map(|v| v * scale).collect()]);
            let scaled_b = rep(&[row_b.iter().map(|v| v * scale).collect()]);
            assert!((metric_cosine_span(&scaled_a, &b, 0, 0).unwrap() - base).abs() < 1e-9);
            assert!((metric_cosine_span(&a, &scaled_b, 0, 0).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn info_nce_is_strictly_positive() {
        use rand::Rng;
        let mut rng = crate::rng::stream(9, "positive");
        for _ in 0..100 {
            let n = rng.random_range(1..6);
            let log_pos = rng.random_range(-5.0..5.0);
            let log_negs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let scores = MetricScores::from_log(log_pos, log_negs).unwrap();
            assert!(info_nce(&scores) > 0.0);
        }
    }

    #[test]
    fn metric_scores_validation() {
        assert!(MetricScores::from_scores(0.0, &[1.0]).is_err());
        assert!(MetricScores::from_scores(1.0, &[-1.0]).is_err());
        assert!(MetricScores::from_scores(1.0, &[]).is_err());
        assert!(MetricScores::from_log(f64::INFINITY, vec![0.0]).is_err());
        let s = MetricScores::from_scores(2.0, &[3.0]).unwrap();
        assert!((s.positive_score() - 2.0).abs() < 1e-12);
        assert!((s.negative_scores()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn csc_loss_uniform_logits() {
        let vocab = 7;
        let logits = Mat::zeros(3, vocab);
        let loss = csc_loss(&logits, &[1, 2, 3], &[0, 1, 2]).unwrap();
        assert!((loss - (vocab as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn csc_loss_goes_to_zero_with_confident_correct_logits() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 80.0] {
            let mut logits = Mat::zeros(1, 4);
            logits.set(0, 2, margin);
            let loss = csc_loss(&logits, &[2], &[0]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-9);
    }

    #[test]
    fn csc_loss_matches_direct_softmax_oracle() {
        // two positions with hand-set logits, checked against explicit
        // softmax + log arithmetic
        let logits = Mat::from_rows(&[vec![0.2, -1.0, 0.5], vec![2.0, 0.0, -0.3]]);
        let targets = [2usize, 0usize];
        let mask = [0usize, 1usize];
        let oracle: f64 = mask
            .iter()
            .map(|&m| {
                let row = logits.row(m);
                let denom: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[targets[m]].exp() / denom).ln()
            })
            .sum::<f64>()
            / mask.len() as f64;
        let loss = csc_loss(&logits, &targets, &mask).unwrap();
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn csc_loss_empty_mask_is_zero() {
        let logits = Mat::zeros(2, 3);
        let (loss, grad) = csc_loss_with_grad(&logits, &[0, 1], &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn combined_loss_cases() {
        let w = LossWeights::default();
        assert!((combined_loss(2.0, 1.0, 1.0, 1.0, &w) - 5.0).abs() < 1e-12);

        let only_csc = LossWeights {
            csc: 1.0,
            phonetics: 0.0,
            vision: 0.0,
            definition: 0.0,
        };
        assert!((combined_loss(2.0, 9.0, 9.0, 9.0, &only_csc) - 2.0).abs() < 1e-12);

        let zero = LossWeights {
            csc: 0.0,
            phonetics: 0.0,
            vision: 0.0,
            definition: 0.0,
        };
        assert_eq!(combined_loss(1.0, 2.0, 3.0, 4.0, &zero), 0.0);
    }

    // --- gradient checks against central finite differences ---

    fn fd_check_rep_grad(
        loss_fn: &dyn Fn(&RepSequence) -> f64,
        rep: &RepSequence,
        analytic: &Mat,
        tol: f64,
    ) {
        let eps = 1e-4;
        for r in 0..rep.rows() {
            for c in 0..rep.dim() {
                let mut rows: Vec<Vec<f64>> =
                    (0..rep.rows()).map(|i| rep.row(i).to_vec()).collect();
                rows[r][c] += eps;
                let plus = RepSequence::from_rows(&rows, rep.valid_length()).unwrap();
                rows[r][c] -= 2.0 * eps;
                let minus = RepSequence::from_rows(&rows, rep.valid_length()).unwrap();
                let fd = (loss_fn(&plus) - loss_fn(&minus)) / (2.0 * eps);
                let a = analytic.get(r, c);
                let denom = a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (a - fd).abs() / denom < tol,
                    "entry ({r},{c}): analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn dot_info_nce_gradient_matches_fd() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, "dot-fd");
        for _ in 0..10 {
            let t = rng.random_range(1..5);
            let h = rng.random_range(2..8);
            let s = rng.random_range(0..t);
            let n = rng.random_range(1..4);
            let rand_rep = |rng: &mut rand_chacha::ChaCha8Rng| {
                let rows: Vec<Vec<f64>> = (0..t)
                    .map(|_| (0..h).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                RepSequence::from_rows(&rows, t).unwrap()
            };
            let rep_o = rand_rep(&mut rng);
            let pos = rand_rep(&mut rng);
            let negs: Vec<RepSequence> = (0..n).map(|_| rand_rep(&mut rng)).collect();
            let out = dot_info_nce_with_grad(&rep_o, &pos, &negs, s).unwrap();
            fd_check_rep_grad(
                &|r| {
                    dot_info_nce_with_grad(r, &pos, &negs, s).unwrap().loss
                },
                &rep_o,
                &out.grad_original,
                1e-3,
            );
        }
    }

    #[test]
    fn cosine_span_info_nce_gradient_matches_fd() {
        use rand::Rng;
        let mut rng = crate::rng::stream(4, "cos-fd");
        for _ in 0..10 {
            let t = rng.random_range(2..6);
            let h = rng.random_range(2..8);
            let s = rng.random_range(0..t - 1);
            let w = rng.random_range(0..(t - s).min(3));
            let n = rng.random_range(1..4);
            let rand_rep = |rng: &mut rand_chacha::ChaCha8Rng, rows_n: usize| {
                let rows: Vec<Vec<f64>> = (0..rows_n)
                    .map(|_| (0..h).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                RepSequence::from_rows(&rows, rows_n).unwrap()
            };
            let rep_o = rand_rep(&mut rng, t);
            let def_len = rng.random_range(1..5);
            let pos = rand_rep(&mut rng, def_len);
            let negs: Vec<RepSequence> = (0..n)
                .map(|_| {
                    let len = rng.random_range(1..5);
                    rand_rep(&mut rng, len)
                })
                .collect();
            let mode = DefinitionScoreMode::default();
            let out = cosine_span_info_nce_with_grad(&rep_o, &pos, &negs, s, w, mode).unwrap();
            fd_check_rep_grad(
                &|r| {
                    cosine_span_info_nce_with_grad(r, &pos, &negs, s, w, mode)
                        .unwrap()
                        .loss
                },
                &rep_o,
                &out.grad_original,
                1e-3,
            );
        }
    }

    #[test]
    fn csc_loss_gradient_matches_fd() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, "csc-fd");
        for _ in 0..10 {
            let t = rng.random_range(1..5);
            let v = rng.random_range(2..7);
            let rows: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..v).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let logits = Mat::from_rows(&rows);
            let targets: Vec<usize> = (0..t).map(|_| rng.random_range(0..v)).collect();
            let mask: Vec<usize> = (0..t).filter(|_| rng.random_range(0..2) == 0).collect();
            let (_, grad) = csc_loss_with_grad(&logits, &targets, &mask).unwrap();
            let eps = 1e-4;
            for r in 0..t {
                for c in 0..v {
                    let mut plus = logits.clone();
                    plus.set(r, c, plus.get(r, c) + eps);
                    let mut minus = logits.clone();
                    minus.set(r, c, minus.get(r, c) - eps);
                    let fd = (csc_loss(&plus, &targets, &mask).unwrap()
                        - csc_loss(&minus, &targets, &mask).unwrap())
                        / (2.0 * eps);
                    let a = grad.get(r, c);
                    let denom = a.abs().max(fd.abs()).max(1e-8);
                    assert!((a - fd).abs() / denom < 1e-3);
                }
            }
        }
    }

    #[test]
    fn clamped_cosine_mode_keeps_scores_positive() {
        let rep_o = rep(&[vec![1.0, 0.5], vec![0.3, -0.2]]);
        let pos = rep(&[vec![-1.0, -0.5]]); // cosine -1: clamps to the floor
        let negs = vec![rep(&[vec![1.0, 0.4]])];
        let out = cosine_span_info_nce_with_grad(
            &rep_o,
            &pos,
            &negs,
            0,
            0,
            DefinitionScoreMode::ClampedCosine { floor: 1e-3 },
        )
        .unwrap();
        assert!(out.loss.is_finite());
        assert!(out.loss > 0.0);
    }
}
