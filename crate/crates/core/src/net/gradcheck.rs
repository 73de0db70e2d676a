use ndarray::Array2;
use rand::Rng;

use super::{backward, forward, init_model, ModelDims, ModelParams, ParamGrads};
use crate::error::{Error, Result};
use crate::features::Spectrogram;
use crate::loss::{loss_grads, utterance_loss, LossBreakdown, LossConfig, QualityLabel};
use crate::signal::{Q_MAX, Q_MIN};
use crate::util::rng_from;

/// Denominator floor for the relative error, so parameters whose true
/// gradient is essentially zero are judged on absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Loss value and exact parameter gradients for one utterance.
pub fn analytic_grads(
    p: &ModelParams,
    spec: &Spectrogram,
    label: &QualityLabel,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, ParamGrads)> {
    let (result, trace) = forward(spec, p)?;
    let loss = utterance_loss(label, &result, cfg)?;
    let (d_utt, dq) = loss_grads(label, &result, cfg)?;
    Ok((loss, backward(&trace, d_utt, &dq, p)?))
}

fn loss_at(p: &ModelParams, spec: &Spectrogram, label: &QualityLabel, cfg: &LossConfig) -> Result<f64> {
    let (result, _) = forward(spec, p)?;
    Ok(utterance_loss(label, &result, cfg)?.total)
}

/// Worst relative disagreement between analytic gradients and central
/// differences of the loss, over every parameter.
pub fn grad_check(
    p: &ModelParams,
    spec: &Spectrogram,
    label: &QualityLabel,
    eps: f64,
    cfg: &LossConfig,
) -> Result<f64> {
    grad_check_biased(p, spec, label, eps, cfg, 0.0)
}

/// [`grad_check`] with `bias` added to every analytic gradient entry.
///
/// Exists so callers can confirm the check actually fails on wrong gradients.
pub fn grad_check_biased(
    p: &ModelParams,
    spec: &Spectrogram,
    label: &QualityLabel,
    eps: f64,
    cfg: &LossConfig,
    bias: f64,
) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidEpsilon(eps));
    }
    let (_, grads) = analytic_grads(p, spec, label, cfg)?;
    let mut probe = p.clone();
    let mut worst = 0.0f64;
    for (k, analytic) in grads.tensors().iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let a = a + bias;
            let orig = probe.tensors()[k][i];
            probe.tensors_mut()[k][i] = orig + eps;
            let up = loss_at(&probe, spec, label, cfg)?;
            probe.tensors_mut()[k][i] = orig - eps;
            let down = loss_at(&probe, spec, label, cfg)?;
            probe.tensors_mut()[k][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// A reproducible small model, input and label for gradient checking.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub params: ModelParams,
    pub spec: Spectrogram,
    pub label: QualityLabel,
}

impl GradCheckCase {
    /// Random weights with nonzero biases everywhere, inputs in `[0, 2)`, and
    /// a label in `[1, 4.5]`. The forget bias alternates between -3 and +1.
    pub fn random(dims: ModelDims, frames: usize, seed: u64) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Empty("frames"));
        }
        let mut rng = rng_from(seed, 0x6c);
        let fgb = if rng.random_bool(0.5) { -3.0 } else { 1.0 };
        let mut params = init_model(dims, fgb, seed)?;
        for b in [&mut params.fwd.b, &mut params.bwd.b, &mut params.dense1.b, &mut params.dense2.b] {
            b.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        params.out.b[0] = rng.random_range(1.5..3.5);
        let spec = Spectrogram::from_frames(Array2::from_shape_fn((frames, dims.input), |_| {
            rng.random_range(0.0..2.0)
        }))?;
        let label = QualityLabel::new(rng.random_range(Q_MIN..=Q_MAX), Q_MAX)?;
        Ok(GradCheckCase { params, spec, label })
    }

    pub fn check(&self, eps: f64, cfg: &LossConfig) -> Result<f64> {
        grad_check(&self.params, &self.spec, &self.label, eps, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epsilon_is_rejected() {
        let c = GradCheckCase::random(ModelDims { input: 3, hidden: 2 }, 2, 0).unwrap();
        for eps in [0.0, -1e-5, f64::NAN] {
            assert!(matches!(c.check(eps, &LossConfig::default()), Err(Error::InvalidEpsilon(_))));
        }
    }

    #[test]
    fn random_instance_passes() {
        let c = GradCheckCase::random(ModelDims { input: 4, hidden: 3 }, 4, 11).unwrap();
        let err = c.check(1e-5, &LossConfig::default()).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn repeat_is_identical() {
        let c = GradCheckCase::random(ModelDims { input: 3, hidden: 2 }, 3, 5).unwrap();
        let cfg = LossConfig::default();
        assert_eq!(c.check(1e-5, &cfg).unwrap().to_bits(), c.check(1e-5, &cfg).unwrap().to_bits());
    }

    #[test]
    fn biased_gradients_fail() {
        let c = GradCheckCase::random(ModelDims { input: 3, hidden: 2 }, 3, 5).unwrap();
        let err = grad_check_biased(&c.params, &c.spec, &c.label, 1e-5, &LossConfig::default(), 1e-3).unwrap();
        assert!(err > 1e-4);
    }
}
