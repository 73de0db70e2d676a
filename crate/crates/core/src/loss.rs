//! Training objective: utterance squared error plus a frame-level constraint
//! weighted by `alpha = 10^(q_hat - q_max)`, and its exact partial derivatives.

use crate::error::{Error, Result};
use crate::net::AssessmentResult;
use crate::signal::Q_MAX;

/// Options shaping the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub q_max: f64,
    /// When false the frame term is dropped (alpha = 0).
    pub alpha_enabled: bool,
    /// Divide the frame term by the number of frames.
    pub frame_term_mean: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            q_max: Q_MAX,
            alpha_enabled: true,
            frame_term_mean: false,
        }
    }
}

/// True utterance score and the metric maximum it is measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityLabel {
    pub q_hat: f64,
    pub q_max: f64,
}

impl QualityLabel {
    pub fn new(q_hat: f64, q_max: f64) -> Result<Self> {
        if !(q_hat.is_finite() && q_max.is_finite()) || q_hat > q_max {
            return Err(Error::LabelAboveMax { q_hat, q_max });
        }
        Ok(QualityLabel { q_hat, q_max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub utterance_term: f64,
    /// Sum (or mean, with `frame_term_mean`) of squared frame deviations, before weighting.
    pub frame_term: f64,
    pub alpha: f64,
}

pub fn alpha_weight(q_hat: f64, q_max: f64) -> Result<f64> {
    QualityLabel::new(q_hat, q_max)?;
    Ok(10f64.powf(q_hat - q_max))
}

fn effective_alpha(label: &QualityLabel, cfg: &LossConfig) -> f64 {
    if cfg.alpha_enabled {
        10f64.powf(label.q_hat - label.q_max)
    } else {
        0.0
    }
}

pub fn utterance_loss(
    label: &QualityLabel,
    result: &AssessmentResult,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let q = result.frame_scores();
    if q.is_empty() {
        return Err(Error::Empty("frame scores"));
    }
    let utterance_term = (label.q_hat - result.utterance_score()).powi(2);
    let mut frame_term: f64 = q.iter().map(|qt| (label.q_hat - qt).powi(2)).sum();
    if cfg.frame_term_mean {
        frame_term /= q.len() as f64;
    }
    let alpha = effective_alpha(label, cfg);
    Ok(LossBreakdown {
        total: utterance_term + alpha * frame_term,
        utterance_term,
        frame_term,
        alpha,
    })
}

/// Partials of [`utterance_loss`] with respect to the utterance and frame scores.
///
/// The path through the global average is folded into the frame partials, so
/// the returned utterance partial is always zero.
pub fn loss_grads(
    label: &QualityLabel,
    result: &AssessmentResult,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let q = result.frame_scores();
    if q.is_empty() {
        return Err(Error::Empty("frame scores"));
    }
    let t = q.len() as f64;
    let from_mean = 2.0 * (result.utterance_score() - label.q_hat) / t;
    let mut alpha = effective_alpha(label, cfg);
    if cfg.frame_term_mean {
        alpha /= t;
    }
    let dq = q
        .iter()
        .map(|qt| from_mean + 2.0 * alpha * (qt - label.q_hat))
        .collect();
    Ok((0.0, dq))
}

/// Mean per-utterance loss over a batch.
pub fn batch_loss(
    labels: &[QualityLabel],
    results: &[AssessmentResult],
    cfg: &LossConfig,
) -> Result<f64> {
    if labels.len() != results.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: results.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut sum = 0.0;
    for (l, r) in labels.iter().zip(results) {
        sum += utterance_loss(l, r, cfg)?.total;
    }
    Ok(sum / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn label(q: f64) -> QualityLabel {
        QualityLabel::new(q, 4.5).unwrap()
    }

    fn result(q: Vec<f64>) -> AssessmentResult {
        AssessmentResult::from_frames(q).unwrap()
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha_weight(4.5, 4.5).unwrap(), 1.0);
        assert_abs_diff_eq!(alpha_weight(3.5, 4.5).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(alpha_weight(1.0, 4.5).unwrap(), 3.1623e-4, epsilon = 1e-8);
        assert!(matches!(alpha_weight(4.6, 4.5), Err(Error::LabelAboveMax { .. })));
    }

    #[test]
    fn worked_losses() {
        let cfg = LossConfig::default();
        let l = utterance_loss(&label(4.5), &result(vec![4.5, 4.5, 4.5]), &cfg).unwrap();
        assert_eq!(l.total, 0.0);
        let l = utterance_loss(&label(4.5), &result(vec![4.0]), &cfg).unwrap();
        assert_abs_diff_eq!(l.total, 0.5, epsilon = 1e-15);
        let l = utterance_loss(&label(4.5), &result(vec![4.5, 3.5]), &cfg).unwrap();
        assert_abs_diff_eq!(l.total, 1.25, epsilon = 1e-15);
        assert_abs_diff_eq!(l.utterance_term, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(l.frame_term, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn disabled_alpha_is_plain_utterance_error() {
        let cfg = LossConfig {
            alpha_enabled: false,
            ..Default::default()
        };
        let l = utterance_loss(&label(4.5), &result(vec![4.5, 3.5]), &cfg).unwrap();
        assert_eq!(l.total, 0.25);
        assert_eq!(l.alpha, 0.0);
    }

    #[test]
    fn frame_mean_option_divides_by_frames() {
        let cfg = LossConfig {
            frame_term_mean: true,
            ..Default::default()
        };
        let l = utterance_loss(&label(4.5), &result(vec![4.5, 3.5]), &cfg).unwrap();
        assert_abs_diff_eq!(l.total, 0.25 + 0.5, epsilon = 1e-15);
    }

    #[test]
    fn worked_gradients() {
        let cfg = LossConfig::default();
        let (dq_total, dq) = loss_grads(&label(4.5), &result(vec![4.5, 3.5]), &cfg).unwrap();
        assert_eq!(dq_total, 0.0);
        assert_abs_diff_eq!(dq[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(dq[1], -2.5, epsilon = 1e-15);
        let (_, dq) = loss_grads(&label(3.0), &result(vec![3.0, 3.0]), &cfg).unwrap();
        assert!(dq.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn batch_mean_and_errors() {
        let cfg = LossConfig::default();
        let labels = [label(4.5), label(4.5)];
        let results = [result(vec![4.0]), result(vec![4.5, 3.5])];
        assert_abs_diff_eq!(batch_loss(&labels, &results, &cfg).unwrap(), 0.875, epsilon = 1e-15);
        assert_abs_diff_eq!(
            batch_loss(&labels[..1], &results[..1], &cfg).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert!(batch_loss(&[], &[], &cfg).is_err());
        assert!(batch_loss(&labels, &results[..1], &cfg).is_err());
    }
}
