//! Property tests for signal processing, features and metrics.

use proptest::prelude::*;
use qualitynet::features::{extract, magnitude_spectrogram, FeatureConfig, StftConfig};
use qualitynet::metrics::{mse, pearson_lcc, spearman_srcc};
use qualitynet::signal::{
    decode_wav, encode_wav, global_snr_db, mix_at_snr, snr_to_quality, spectral_subtract, synth_noise,
    synth_speechlike, AudioClip, NoiseKind,
};

fn clip(v: Vec<f64>) -> AudioClip {
    AudioClip::new(v, 16000).unwrap()
}

fn samples(min: usize, max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, min..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn magnitudes_are_finite_and_nonnegative(x in samples(512, 3000)) {
        let s = magnitude_spectrogram(&clip(x), &StftConfig::default()).unwrap();
        prop_assert!(s.frames().iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert_eq!(s.n_bins(), 257);
    }

    #[test]
    fn hop_shift_drops_first_frame(x in samples(512 + 3 * 256, 4000)) {
        let cfg = StftConfig::default();
        let a = magnitude_spectrogram(&clip(x.clone()), &cfg).unwrap();
        let b = magnitude_spectrogram(&clip(x[cfg.hop..].to_vec()), &cfg).unwrap();
        prop_assert_eq!(b.n_frames(), a.n_frames() - 1);
        for t in 0..b.n_frames() {
            prop_assert_eq!(b.frames().row(t), a.frames().row(t + 1));
        }
    }

    #[test]
    fn magnitudes_scale_linearly(x in samples(512, 2000), c in 0.0f64..4.0) {
        let cfg = StftConfig::default();
        let a = magnitude_spectrogram(&clip(x.clone()), &cfg).unwrap();
        let b = magnitude_spectrogram(&clip(x.iter().map(|v| v * c).collect()), &cfg).unwrap();
        for (u, v) in a.frames().iter().zip(b.frames().iter()) {
            prop_assert!((u * c - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn log1p_is_monotone_compression(x in samples(512, 1500)) {
        let raw = extract(&clip(x.clone()), &FeatureConfig::default()).unwrap();
        let cfg = FeatureConfig { log1p: true, ..Default::default() };
        let comp = extract(&clip(x), &cfg).unwrap();
        for (r, c) in raw.frames().iter().zip(comp.frames().iter()) {
            prop_assert_eq!(*c, r.ln_1p());
        }
    }

    #[test]
    fn wav_roundtrip_is_within_half_step(x in samples(1, 800)) {
        let (bytes, clamped) = encode_wav(&clip(x.clone()));
        prop_assert_eq!(clamped, 0);
        let back = decode_wav(&bytes).unwrap();
        prop_assert_eq!(back.len(), x.len());
        for (a, b) in x.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
        let (again, _) = encode_wav(&back);
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn mixing_hits_requested_snr(kind in 0usize..4, snr in -10.0f64..25.0, seed in 0u64..1000) {
        let clean = synth_speechlike(seed, 1.0).unwrap();
        let noise = synth_noise(NoiseKind::ALL[kind], seed + 1, 1.0).unwrap();
        let mixed = mix_at_snr(&clean, &noise, snr).unwrap();
        prop_assert!((global_snr_db(&clean, &mixed).unwrap() - snr).abs() < 0.01);
    }

    #[test]
    fn proxy_quality_is_monotone(a in -40.0f64..80.0, b in -40.0f64..80.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(snr_to_quality(lo) <= snr_to_quality(hi));
        prop_assert!((1.0..=4.5).contains(&snr_to_quality(a)));
    }

    #[test]
    fn enhancement_preserves_length(len in (512 + 9 * 256)..12_000usize, seed in 0u64..100) {
        let noise = synth_noise(NoiseKind::Pink, seed, 1.0).unwrap();
        let x = clip(noise.samples()[..len].to_vec());
        prop_assert_eq!(spectral_subtract(&x, &StftConfig::default()).unwrap().len(), len);
    }

    #[test]
    fn pearson_is_affine_invariant(
        x in prop::collection::vec(-10.0f64..10.0, 3..40),
        noise in prop::collection::vec(-1.0f64..1.0, 40),
        a in 0.1f64..5.0,
        b in -3.0f64..3.0,
    ) {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(u, n)| u + n).collect();
        if let Ok(r) = pearson_lcc(&x, &y) {
            let ax: Vec<f64> = x.iter().map(|u| a * u + b).collect();
            prop_assert!((pearson_lcc(&ax, &y).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn spearman_is_monotone_invariant(
        x in prop::collection::vec(-3.0f64..3.0, 3..40),
        y in prop::collection::vec(-3.0f64..3.0, 40),
    ) {
        let y = &y[..x.len()];
        if let Ok(r) = spearman_srcc(&x, y) {
            let tx: Vec<f64> = x.iter().map(|u| u.exp() * 2.0 + u.powi(3)).collect();
            prop_assert!((spearman_srcc(&tx, y).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_is_symmetric_and_zero_on_diagonal(
        x in prop::collection::vec(-5.0f64..5.0, 1..30),
        y in prop::collection::vec(-5.0f64..5.0, 30),
    ) {
        let y = &y[..x.len()];
        prop_assert_eq!(mse(&x, &x).unwrap(), 0.0);
        prop_assert_eq!(mse(&x, y).unwrap(), mse(y, &x).unwrap());
    }
}

#[test]
fn synthesis_is_deterministic() {
    for kind in NoiseKind::ALL {
        assert_eq!(synth_noise(kind, 9, 1.0).unwrap(), synth_noise(kind, 9, 1.0).unwrap());
    }
    assert_eq!(synth_speechlike(9, 1.5).unwrap(), synth_speechlike(9, 1.5).unwrap());
}
