//! RIFF/WAVE PCM16 mono reader and writer.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::AudioClip;
use crate::util::write_atomic;

const PCM_FORMAT: u16 = 1;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a PCM16 mono WAV image. Samples are scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::MalformedWav(format!(
                    "chunk {:?} overruns file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::MalformedWav("fmt chunk shorter than 16 bytes".into()));
                }
                fmt = Some((
                    u16_at(body, 0),
                    u16_at(body, 2),
                    u32_at(body, 4),
                    u16_at(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::MalformedWav("missing fmt chunk".into()))?;
    if format != PCM_FORMAT {
        return Err(Error::UnsupportedEncoding(format));
    }
    if channels != 1 {
        return Err(Error::UnsupportedChannels(channels));
    }
    if bits != 16 {
        return Err(Error::UnsupportedBitDepth(bits));
    }
    if rate == 0 {
        return Err(Error::MalformedWav("sample rate is zero".into()));
    }
    let data = data.ok_or_else(|| Error::MalformedWav("missing data chunk".into()))?;
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
        .collect();
    AudioClip::new(samples, rate)
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Quantizes one sample to PCM16, reporting whether it lay outside [-1, 1].
/// +1.0 itself saturates to `i16::MAX` without counting as clamped.
fn quantize(x: f64) -> (i16, bool) {
    let scaled = (x * 32768.0).round().clamp(-32768.0, 32767.0);
    (scaled as i16, !(-1.0..=1.0).contains(&x))
}

/// Encodes a clip as PCM16 mono. Returns the image and the number of clamped samples.
pub fn encode_wav(clip: &AudioClip) -> (Vec<u8>, usize) {
    let n = clip.len();
    let data_len = (n * 2) as u32;
    let rate = clip.sample_rate_hz();
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    let mut clamped = 0;
    for &x in clip.samples() {
        let (q, c) = quantize(x);
        clamped += usize::from(c);
        out.extend_from_slice(&q.to_le_bytes());
    }
    (out, clamped)
}

/// Writes `clip` as PCM16 mono. Out-of-range samples are clamped; the count is returned.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<usize> {
    let (bytes, clamped) = encode_wav(clip);
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} out-of-range samples", path.display());
    }
    write_atomic(path, &bytes)?;
    Ok(clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_wav(channels: u16, bits: u16, format: u16, payload: &[i16]) -> Vec<u8> {
        let mut v = Vec::new();
        let data_len = (payload.len() * 2) as u32;
        v.extend_from_slice(b"RIFF");
        v.extend_from_slice(&(36 + data_len).to_le_bytes());
        v.extend_from_slice(b"WAVE");
        v.extend_from_slice(b"fmt ");
        v.extend_from_slice(&16u32.to_le_bytes());
        v.extend_from_slice(&format.to_le_bytes());
        v.extend_from_slice(&channels.to_le_bytes());
        v.extend_from_slice(&16000u32.to_le_bytes());
        v.extend_from_slice(&(16000u32 * 2 * channels as u32).to_le_bytes());
        v.extend_from_slice(&(2 * channels).to_le_bytes());
        v.extend_from_slice(&bits.to_le_bytes());
        v.extend_from_slice(b"data");
        v.extend_from_slice(&data_len.to_le_bytes());
        for s in payload {
            v.extend_from_slice(&s.to_le_bytes());
        }
        v
    }

    #[test]
    fn decodes_scaled_samples() {
        let clip = decode_wav(&raw_wav(1, 16, 1, &[0, 16384, -32768])).unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate_hz(), 16000);
    }

    #[test]
    fn distinct_errors_per_unsupported_field() {
        assert!(matches!(
            decode_wav(&raw_wav(2, 16, 1, &[0, 0])),
            Err(Error::UnsupportedChannels(2))
        ));
        assert!(matches!(
            decode_wav(&raw_wav(1, 24, 1, &[0, 0])),
            Err(Error::UnsupportedBitDepth(24))
        ));
        assert!(matches!(
            decode_wav(&raw_wav(1, 16, 3, &[0, 0])),
            Err(Error::UnsupportedEncoding(3))
        ));
        assert!(matches!(decode_wav(b"RIFX...."), Err(Error::MalformedWav(_))));
        let mut truncated = raw_wav(1, 16, 1, &[1, 2, 3]);
        truncated.truncate(truncated.len() - 2);
        assert!(matches!(decode_wav(&truncated), Err(Error::MalformedWav(_))));
        let err = decode_wav(&raw_wav(2, 16, 1, &[0, 0])).unwrap_err();
        assert!(err.to_string().contains("unsupported channel count"));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut v = raw_wav(1, 16, 1, &[100]);
        let list = [b'L', b'I', b'S', b'T', 3, 0, 0, 0, b'a', b'b', b'c', 0];
        v.splice(36..36, list);
        let clip = decode_wav(&v).unwrap();
        assert_eq!(clip.samples(), &[100.0 / 32768.0]);
    }

    #[test]
    fn single_zero_sample() {
        let clip = AudioClip::new(vec![0.0], 16000).unwrap();
        let (bytes, clamped) = encode_wav(&clip);
        assert_eq!(clamped, 0);
        assert_eq!(bytes.len(), 46);
        assert_eq!(&bytes[44..], &[0, 0]);
    }

    #[test]
    fn out_of_range_is_clamped_and_counted() {
        let clip = AudioClip::new(vec![1.5, -2.0, 0.25], 16000).unwrap();
        let (bytes, clamped) = encode_wav(&clip);
        assert_eq!(clamped, 2);
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), -32768);
        let (bytes, c) = encode_wav(&AudioClip::new(vec![1.0], 16000).unwrap());
        assert_eq!(c, 0);
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
    }
}
