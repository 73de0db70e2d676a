//! Deterministic speech-like and noise generators.
//!
//! Everything here is a pure function of `(seed, duration)`. Speech-like clips
//! alternate harmonic voiced segments (drifting f0, resonator "formants") with
//! fricative-like unvoiced bursts and pauses. Noise kinds are stand-ins for
//! real recordings and only need distinct spectral/temporal character.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal::{AudioClip, SAMPLE_RATE};
use crate::util::{mix_seed, rng_from};

const FS: f64 = SAMPLE_RATE as f64;
const SPEECH_PEAK: f64 = 0.5;
const NOISE_RMS: f64 = 0.1;
const BABBLE_TALKERS: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseKind {
    White,
    Pink,
    Engine,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Engine,
        NoiseKind::Babble,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Engine => "engine",
            NoiseKind::Babble => "babble",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownNoiseKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Voiced,
    Unvoiced,
    Pause,
}

/// Sample span `[start, end)` of one synthesized segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

/// Two-pole resonator with per-sample retunable center frequency.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Resonator { y1: 0.0, y2: 0.0 }
    }

    fn step(&mut self, x: f64, center_hz: f64, bandwidth_hz: f64) -> f64 {
        let r = (-PI * bandwidth_hz / FS).exp();
        let a1 = 2.0 * r * (2.0 * PI * center_hz / FS).cos();
        let a2 = -r * r;
        let y = (1.0 - r) * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn secs(s: f64) -> usize {
    (s * FS).round() as usize
}

fn normalize_peak(x: &mut [f64], target: f64) {
    let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = target / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        let g = target / rms;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Raised-cosine fade applied to both ends of a segment.
fn apply_fades(x: &mut [f64], fade: usize) {
    let fade = fade.min(x.len() / 2);
    let n = x.len();
    for i in 0..fade {
        let w = 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
        x[i] *= w;
        x[n - 1 - i] *= w;
    }
}

fn voiced_segment(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let f0_start = uniform(rng, 100.0, 220.0);
    let f0_end = uniform(rng, 100.0, 220.0);
    let n_formants = if rng.random_bool(0.5) { 2 } else { 3 };
    let bands = [(300.0, 850.0, 1.0), (900.0, 2300.0, 0.5), (2300.0, 3200.0, 0.25)];
    let formants: Vec<(f64, f64, f64, f64)> = bands[..n_formants]
        .iter()
        .map(|&(lo, hi, gain)| (uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, 70.0, 140.0), gain))
        .collect();
    let n_harm = (3800.0 / f0_start.max(f0_end)).floor() as usize;
    let mut resonators: Vec<Resonator> = formants.iter().map(|_| Resonator::new()).collect();
    let mut phase = 0.0_f64;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let frac = n as f64 / len as f64;
        let f0 = f0_start + (f0_end - f0_start) * frac;
        phase += 2.0 * PI * f0 / FS;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        let source: f64 = (1..=n_harm).map(|k| (k as f64 * phase).sin() / k as f64).sum();
        let mut y = 0.0;
        for ((fa, fb, bw, gain), res) in formants.iter().zip(resonators.iter_mut()) {
            y += gain * res.step(source, fa + (fb - fa) * frac, *bw);
        }
        out.push(y);
    }
    normalize_peak(&mut out, uniform(rng, 0.6, 1.0));
    apply_fades(&mut out, secs(0.015));
    out
}

fn unvoiced_segment(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let center = uniform(rng, 3000.0, 5000.0);
    let mut res = Resonator::new();
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            res.step(w, center, 1500.0)
        })
        .collect();
    normalize_peak(&mut out, uniform(rng, 0.1, 0.25));
    apply_fades(&mut out, secs(0.01));
    out
}

/// Speech-like samples with their segment annotation, peak-normalized to 0.5.
fn speechlike(seed: u64, n: usize) -> (Vec<f64>, Vec<Segment>) {
    let mut rng = rng_from(seed, 0x5eec);
    let mut samples = Vec::with_capacity(n);
    let mut segments = Vec::new();
    let mut push = |kind: SegmentKind, seg: Vec<f64>, samples: &mut Vec<f64>| {
        let start = samples.len();
        let take = seg.len().min(n - start);
        samples.extend_from_slice(&seg[..take]);
        if take > 0 {
            segments.push(Segment {
                kind,
                start,
                end: start + take,
            });
        }
    };
    let lead = secs(uniform(&mut rng, 0.2, 0.3));
    push(SegmentKind::Pause, vec![0.0; lead], &mut samples);
    while samples.len() < n {
        let len = secs(uniform(&mut rng, 0.12, 0.35));
        let seg = voiced_segment(&mut rng, len);
        push(SegmentKind::Voiced, seg, &mut samples);
        if samples.len() < n && rng.random_bool(0.35) {
            let len = secs(uniform(&mut rng, 0.05, 0.12));
            let seg = unvoiced_segment(&mut rng, len);
            push(SegmentKind::Unvoiced, seg, &mut samples);
        }
        if samples.len() < n && rng.random_bool(0.5) {
            let len = secs(uniform(&mut rng, 0.04, 0.15));
            push(SegmentKind::Pause, vec![0.0; len], &mut samples);
        }
    }
    normalize_peak(&mut samples, SPEECH_PEAK);
    (samples, segments)
}

fn check_speech_duration(duration_s: f64) -> Result<()> {
    if !(1.0..=5.0).contains(&duration_s) {
        return Err(Error::InvalidConfig(format!(
            "speech duration {duration_s} s outside [1, 5]"
        )));
    }
    Ok(())
}

/// Speech-like clip of `duration_s` seconds (1 to 5), peak amplitude 0.5.
pub fn synth_speechlike(seed: u64, duration_s: f64) -> Result<AudioClip> {
    synth_speechlike_annotated(seed, duration_s).map(|(clip, _)| clip)
}

/// Like [`synth_speechlike`], also returning where each voiced/unvoiced/pause segment lies.
pub fn synth_speechlike_annotated(seed: u64, duration_s: f64) -> Result<(AudioClip, Vec<Segment>)> {
    check_speech_duration(duration_s)?;
    let (samples, segments) = speechlike(seed, secs(duration_s));
    Ok((AudioClip::new(samples, SAMPLE_RATE)?, segments))
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// 1/f power spectrum by shaping white noise in the frequency domain.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = white(rng, n).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for (k, z) in buf.iter_mut().enumerate().skip(1) {
        let bin = k.min(n - k) as f64;
        *z /= bin.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|z| z.re).collect()
}

/// Amplitude-modulated low harmonic stack plus rumble, concentrated below 300 Hz.
fn engine(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let base = uniform(rng, 25.0, 50.0);
    let harmonics: Vec<(f64, f64, f64)> = (1..)
        .map(|h| h as f64 * base)
        .take_while(|&f| f < 280.0)
        .enumerate()
        .map(|(i, f)| (f, 1.0 / (i + 1) as f64, uniform(rng, 0.0, 2.0 * PI)))
        .collect();
    let mod_hz = uniform(rng, 3.0, 10.0);
    let mod_phase = uniform(rng, 0.0, 2.0 * PI);
    // one-pole low-pass at ~150 Hz
    let k = (-2.0 * PI * 150.0 / FS).exp();
    let mut lp = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / FS;
            let tone: f64 = harmonics
                .iter()
                .map(|(f, a, ph)| a * (2.0 * PI * f * t + ph).sin())
                .sum();
            let am = 1.0 + 0.6 * (2.0 * PI * mod_hz * t + mod_phase).sin();
            let w: f64 = StandardNormal.sample(rng);
            lp = k * lp + (1.0 - k) * w;
            am * tone + 2.0 * lp
        })
        .collect()
}

fn babble(seed: u64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for talker in 0..BABBLE_TALKERS {
        let (voice, _) = speechlike(mix_seed(seed, 0xbab0 + talker), n);
        out.iter_mut().zip(voice).for_each(|(o, v)| *o += v);
    }
    out
}

/// Noise clip of `duration_s` seconds with RMS 0.1.
pub fn synth_noise(kind: NoiseKind, seed: u64, duration_s: f64) -> Result<AudioClip> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise duration {duration_s} s")));
    }
    let n = secs(duration_s).max(1);
    let mut rng = rng_from(seed, 0x0015e + kind as u64);
    let mut samples = match kind {
        NoiseKind::White => white(&mut rng, n),
        NoiseKind::Pink => pink(&mut rng, n),
        NoiseKind::Engine => engine(&mut rng, n),
        NoiseKind::Babble => babble(seed, n),
    };
    normalize_rms(&mut samples, NOISE_RMS);
    AudioClip::new(samples, SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{magnitude_spectrogram, StftConfig};

    #[test]
    fn speech_is_deterministic_and_peak_normalized() {
        let a = synth_speechlike(11, 2.0).unwrap();
        let b = synth_speechlike(11, 2.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 32000);
        assert!((a.peak() - 0.5).abs() < 1e-9);
        assert_ne!(a, synth_speechlike(12, 2.0).unwrap());
    }

    #[test]
    fn speech_duration_bounds() {
        assert!(synth_speechlike(1, 0.5).is_err());
        assert!(synth_speechlike(1, 5.5).is_err());
        assert!(synth_speechlike(1, 1.0).is_ok());
    }

    #[test]
    fn segments_tile_the_clip_and_start_silent() {
        let (clip, segs) = synth_speechlike_annotated(3, 3.0).unwrap();
        assert_eq!(segs[0].kind, SegmentKind::Pause);
        assert_eq!(segs[0].start, 0);
        assert!(segs.windows(2).all(|w| w[0].end == w[1].start));
        assert_eq!(segs.last().unwrap().end, clip.len());
        assert!(segs.iter().any(|s| s.kind == SegmentKind::Voiced));
    }

    #[test]
    fn voiced_centroid_in_speech_band() {
        let cfg = StftConfig::default();
        for seed in 0..5 {
            let (clip, segs) = synth_speechlike_annotated(seed, 3.0).unwrap();
            let spec = magnitude_spectrogram(&clip, &cfg).unwrap();
            let hz_per_bin = 16000.0 / 512.0;
            for seg in segs.iter().filter(|s| s.kind == SegmentKind::Voiced) {
                let first = seg.start.div_ceil(cfg.hop);
                let mut t = first;
                let (mut num, mut den) = (0.0, 0.0);
                while t * cfg.hop + cfg.frame_len <= seg.end && t < spec.n_frames() {
                    for (k, m) in spec.frames().row(t).iter().enumerate() {
                        num += k as f64 * hz_per_bin * m * m;
                        den += m * m;
                    }
                    t += 1;
                }
                if den > 0.0 {
                    let centroid = num / den;
                    assert!((200.0..=3000.0).contains(&centroid), "centroid {centroid}");
                }
            }
        }
    }

    #[test]
    fn noise_is_deterministic_with_fixed_rms() {
        for kind in NoiseKind::ALL {
            let a = synth_noise(kind, 5, 1.5).unwrap();
            assert_eq!(a, synth_noise(kind, 5, 1.5).unwrap());
            assert!((a.rms() - 0.1).abs() < 1e-9, "{kind}: {}", a.rms());
        }
    }

    #[test]
    fn white_noise_mean_within_statistical_bound() {
        let c = synth_noise(NoiseKind::White, 9, 2.0).unwrap();
        let l = c.len() as f64;
        let mean = c.samples().iter().sum::<f64>() / l;
        assert!(mean.abs() <= 3.0 * c.rms() / l.sqrt());
    }

    #[test]
    fn engine_noise_is_low_frequency() {
        let c = synth_noise(NoiseKind::Engine, 2, 2.0).unwrap();
        let spec = magnitude_spectrogram(&c, &StftConfig::default()).unwrap();
        let cut = (300.0 / (16000.0 / 512.0)) as usize;
        let (mut low, mut total) = (0.0, 0.0);
        for row in spec.frames().outer_iter() {
            for (k, m) in row.iter().enumerate() {
                total += m * m;
                if k <= cut {
                    low += m * m;
                }
            }
        }
        assert!(low / total > 0.9, "low fraction {}", low / total);
    }

    #[test]
    fn pink_noise_slope_is_minus_three_db_per_octave() {
        let c = synth_noise(NoiseKind::Pink, 4, 4.0).unwrap();
        let spec = magnitude_spectrogram(&c, &StftConfig::default()).unwrap();
        let hz = 16000.0 / 512.0;
        let mut psd = vec![0.0; spec.n_bins()];
        for row in spec.frames().outer_iter() {
            for (p, m) in psd.iter_mut().zip(row.iter()) {
                *p += m * m;
            }
        }
        // mean density per octave band, 100 Hz .. 3200 Hz (5 bands)
        let mut pts = Vec::new();
        let mut lo = 100.0;
        while lo * 2.0 <= 4000.0 {
            let bins: Vec<f64> = (0..psd.len())
                .filter(|&k| (k as f64 * hz) >= lo && (k as f64 * hz) < lo * 2.0)
                .map(|k| psd[k])
                .collect();
            let mean = bins.iter().sum::<f64>() / bins.len() as f64;
            pts.push(((lo * 2f64.sqrt()).log2(), 10.0 * mean.log10()));
            lo *= 2.0;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((slope + 3.0).abs() <= 1.0, "slope {slope}");
        assert!(pts.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!("street".parse::<NoiseKind>(), Err(Error::UnknownNoiseKind(_))));
        assert_eq!("babble".parse::<NoiseKind>().unwrap(), NoiseKind::Babble);
    }
}
