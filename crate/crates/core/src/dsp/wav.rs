//! Minimal RIFF/WAVE reader and writer for 16-bit mono PCM.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const PCM_SCALE: f32 = 32768.0;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    read_wav_from(&bytes)
}

/// Parses a complete WAV file held in memory.
pub fn read_wav_from(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(Error::Format("missing RIFF header".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing WAVE tag".into()));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format(format!("chunk {:?} overruns file", lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Format("fmt chunk too short".into()));
                }
                let tag = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([body[14], body[15]]);
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    fmt.ok_or_else(|| Error::Format("data chunk before fmt chunk".into()))?;
                if tag != 1 {
                    return Err(Error::UnsupportedFormat(format!(
                        "format tag {tag}, only PCM (1) is supported"
                    )));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat(format!(
                        "{channels} channels, only mono is supported"
                    )));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat(format!(
                        "{bits}-bit samples, only 16-bit is supported"
                    )));
                }
                if rate == 0 {
                    return Err(Error::Format("zero sample rate".into()));
                }
                if !body.len().is_multiple_of(2) {
                    return Err(Error::Format("odd-sized 16-bit data chunk".into()));
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / PCM_SCALE)
                    .collect();
                return Ok(Waveform::new(samples, rate));
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    Err(Error::Format("no data chunk".into()))
}

pub fn write_wav(waveform: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_wav_to(waveform, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Serializes as PCM16 mono. Out-of-range samples saturate.
pub fn write_wav_to(waveform: &Waveform, out: &mut impl Write) -> std::io::Result<()> {
    let data_len = (waveform.samples.len() * 2) as u32;
    let rate = waveform.sample_rate_hz;
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?;
    out.write_all(&rate.to_le_bytes())?;
    out.write_all(&(rate * 2).to_le_bytes())?;
    out.write_all(&2u16.to_le_bytes())?;
    out.write_all(&16u16.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    let mut buf = Vec::with_capacity(waveform.samples.len() * 2);
    for &s in &waveform.samples {
        buf.extend_from_slice(&to_pcm16(s).to_le_bytes());
    }
    out.write_all(&buf)
}

fn to_pcm16(s: f32) -> i16 {
    if s.is_nan() {
        return 0;
    }
    (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

fn lossy(id: &[u8]) -> String {
    String::from_utf8_lossy(id).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn encode(w: &Waveform) -> Vec<u8> {
        let mut v = Vec::new();
        write_wav_to(w, &mut v).unwrap();
        v
    }

    #[test]
    fn header_arithmetic() {
        let w = Waveform::silence(16_000, 16_000);
        let bytes = encode(&w);
        assert_eq!(bytes.len(), 44 + 32_000);
        let r = read_wav_from(&bytes).unwrap();
        assert_eq!(r.len(), 16_000);
        assert_eq!(r.sample_rate_hz, 16_000);
        assert!(r.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn round_trip_within_quantization_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f32> = (0..5000).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let w = Waveform::new(samples, 16_000);
        let r = read_wav_from(&encode(&w)).unwrap();
        let max_err = w
            .samples
            .iter()
            .zip(&r.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 32768.0, "max error {max_err}");
    }

    #[test]
    fn saturates_out_of_range() {
        let w = Waveform::new(vec![2.0, -3.0], 8000);
        let bytes = encode(&w);
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), -32768);
    }

    #[test]
    fn empty_waveform_is_valid() {
        let w = Waveform::new(vec![], 16_000);
        let bytes = encode(&w);
        assert_eq!(bytes.len(), 44);
        assert_eq!(&bytes[40..44], &0u32.to_le_bytes());
        assert!(read_wav_from(&bytes).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encode(&Waveform::silence(10, 16_000));
        bytes[0] = b'X';
        assert!(matches!(read_wav_from(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_stereo_and_8bit() {
        let mut stereo = encode(&Waveform::silence(10, 16_000));
        stereo[22] = 2;
        assert!(matches!(
            read_wav_from(&stereo),
            Err(Error::UnsupportedFormat(_))
        ));
        let mut eight = encode(&Waveform::silence(10, 16_000));
        eight[34] = 8;
        assert!(matches!(
            read_wav_from(&eight),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let w = Waveform::new(vec![0.5, -0.25], 16_000);
        let plain = encode(&w);
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[36..]);
        let r = read_wav_from(&bytes).unwrap();
        assert_eq!(r.samples, vec![0.5, -0.25]);
    }
}
