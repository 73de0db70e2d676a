use crate::error::{Error, Result};
use crate::signal::{AudioClip, Q_MAX, Q_MIN};

/// Ceiling reported by [`global_snr_db`] once the residual is 60 dB below the reference.
pub const SNR_CAP_DB: f64 = 60.0;

/// Adds `noise` to `clean` at the requested global SNR, reading the noise from sample 0.
pub fn mix_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip> {
    mix_at_snr_offset(clean, noise, snr_db, 0)
}

/// Like [`mix_at_snr`], reading noise from `offset` and wrapping around its end.
pub fn mix_at_snr_offset(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    offset: usize,
) -> Result<AudioClip> {
    if clean.sample_rate_hz() != noise.sample_rate_hz() {
        return Err(Error::InvalidAudio(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate_hz(),
            noise.sample_rate_hz()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("snr {snr_db} dB")));
    }
    let n = clean.len();
    let src = noise.samples();
    let segment: Vec<f64> = (0..n).map(|i| src[(offset + i) % src.len()]).collect();
    let p_clean = clean.power();
    let p_noise = segment.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if p_clean <= 0.0 {
        return Err(Error::ZeroPower("clean signal"));
    }
    if p_noise <= 0.0 {
        return Err(Error::ZeroPower("noise segment"));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = clean
        .samples()
        .iter()
        .zip(&segment)
        .map(|(c, v)| c + gain * v)
        .collect();
    AudioClip::new(mixed, clean.sample_rate_hz())
}

/// Adds noise only to `span` (a sample range) of `clean`, scaled so the SNR
/// measured inside the span equals `snr_db`. Samples outside stay untouched.
pub fn inject_noise_span(
    clean: &AudioClip,
    noise: &AudioClip,
    span: std::ops::Range<usize>,
    snr_db: f64,
) -> Result<AudioClip> {
    if span.is_empty() || span.end > clean.len() {
        return Err(Error::InvalidConfig(format!(
            "noise span {span:?} outside a {}-sample clip",
            clean.len()
        )));
    }
    let inner = AudioClip::new(clean.samples()[span.clone()].to_vec(), clean.sample_rate_hz())?;
    let mixed = mix_at_snr_offset(&inner, noise, snr_db, span.start)?;
    let mut out = clean.samples().to_vec();
    out[span].copy_from_slice(mixed.samples());
    AudioClip::new(out, clean.sample_rate_hz())
}

/// Global SNR of `degraded` against `reference`, capped at +60 dB.
pub fn global_snr_db(reference: &AudioClip, degraded: &AudioClip) -> Result<f64> {
    if reference.len() != degraded.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: degraded.len(),
        });
    }
    let signal = reference.energy();
    if signal <= 0.0 {
        return Err(Error::ZeroPower("reference"));
    }
    let residual: f64 = reference
        .samples()
        .iter()
        .zip(degraded.samples())
        .map(|(r, d)| (d - r) * (d - r))
        .sum();
    if residual <= 1e-6 * signal {
        return Ok(SNR_CAP_DB);
    }
    Ok(10.0 * (signal / residual).log10())
}

/// Affine SNR-to-score map: -5 dB and below gives 1.0, 25 dB and above gives 4.5.
pub fn snr_to_quality(snr_db: f64) -> f64 {
    (Q_MIN + 3.5 * (snr_db + 5.0) / 30.0).clamp(Q_MIN, Q_MAX)
}

/// Intrusive proxy quality label in [1.0, 4.5] derived from the global SNR.
pub fn proxy_quality(reference: &AudioClip, degraded: &AudioClip) -> Result<f64> {
    global_snr_db(reference, degraded).map(snr_to_quality)
}
