//! Minimal PCM WAV reader/writer for the mono 16-bit recordings used here.

use std::fs;
use std::path::Path;

use super::DataError;

/// Header-level facts about a WAV file, read without decoding samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub samples: u64,
}

struct FmtChunk {
    audio_format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16, DataError> {
    let b: [u8; 2] = bytes
        .get(at..at + 2)
        .ok_or_else(|| DataError::TruncatedFile("short read inside chunk".into()))?
        .try_into()
        .unwrap();
    Ok(u16::from_le_bytes(b))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    let b: [u8; 4] = bytes
        .get(at..at + 4)
        .ok_or_else(|| DataError::TruncatedFile("short read inside chunk".into()))?
        .try_into()
        .unwrap();
    Ok(u32::from_le_bytes(b))
}

/// Walk the RIFF chunks, returning the fmt description and the data payload
/// range. Chunk sizes are padded to even offsets per the RIFF rules.
fn parse_chunks(bytes: &[u8]) -> Result<(FmtChunk, (usize, usize)), DataError> {
    if bytes.len() < 12 {
        return Err(DataError::TruncatedFile(format!(
            "file is {} bytes, smaller than a RIFF header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DataError::UnsupportedEncoding(
            "missing RIFF/WAVE magic".into(),
        ));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<(usize, usize)> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = read_u32(bytes, at + 4)? as usize;
        let body = at + 8;
        if body + size > bytes.len() {
            return Err(DataError::TruncatedFile(format!(
                "chunk {:?} declares {} bytes but only {} remain",
                String::from_utf8_lossy(id),
                size,
                bytes.len() - body
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(DataError::TruncatedFile("fmt chunk shorter than 16".into()));
                }
                fmt = Some(FmtChunk {
                    audio_format: read_u16(bytes, body)?,
                    channels: read_u16(bytes, body + 2)?,
                    sample_rate: read_u32(bytes, body + 4)?,
                    bits_per_sample: read_u16(bytes, body + 14)?,
                });
            }
            b"data" => {
                data = Some((body, size));
            }
            _ => {}
        }
        at = body + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| DataError::TruncatedFile("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| DataError::TruncatedFile("no data chunk".into()))?;
    Ok((fmt, data))
}

fn check_format(fmt: &FmtChunk) -> Result<(), DataError> {
    if fmt.audio_format != 1 {
        return Err(DataError::UnsupportedEncoding(format!(
            "audio format {} (only PCM is supported)",
            fmt.audio_format
        )));
    }
    if fmt.channels != 1 {
        return Err(DataError::UnsupportedEncoding(format!(
            "{} channels (only mono is supported)",
            fmt.channels
        )));
    }
    if fmt.bits_per_sample != 16 {
        return Err(DataError::UnsupportedEncoding(format!(
            "{} bits per sample (only 16 is supported)",
            fmt.bits_per_sample
        )));
    }
    Ok(())
}

/// Decode a mono 16-bit PCM WAV file into samples scaled by 1/32768,
/// giving values in [-1, 1), along with the header sample rate.
pub fn decode_wav(path: &Path) -> Result<(Vec<f64>, u32), DataError> {
    let bytes = fs::read(path)?;
    let (fmt, (start, size)) = parse_chunks(&bytes)?;
    check_format(&fmt)?;
    if size == 0 {
        return Err(DataError::TruncatedFile(format!(
            "{}: empty data chunk",
            path.display()
        )));
    }
    let n = size / 2;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let v = i16::from_le_bytes([bytes[start + 2 * i], bytes[start + 2 * i + 1]]);
        samples.push(f64::from(v) / 32768.0);
    }
    Ok((samples, fmt.sample_rate))
}

/// Read only the header facts (rate, sample count) of a WAV file.
pub fn probe_wav(path: &Path) -> Result<WavInfo, DataError> {
    let bytes = fs::read(path)?;
    let (fmt, (_, size)) = parse_chunks(&bytes)?;
    check_format(&fmt)?;
    if size == 0 {
        return Err(DataError::TruncatedFile(format!(
            "{}: empty data chunk",
            path.display()
        )));
    }
    Ok(WavInfo {
        sample_rate: fmt.sample_rate,
        samples: (size / 2) as u64,
    })
}

/// Write samples as mono 16-bit PCM. Values are clamped to [-1, 1] and
/// scaled by 32767.
pub fn write_wav_mono16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), DataError> {
    let data_size = (samples.len() * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + samples.len() * 2);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_size).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_size.to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled WAV bytes, independent of `write_wav_mono16`.
    fn raw_wav(samples: &[i16], rate: u32, channels: u16, bits: u16, format: u16) -> Vec<u8> {
        let data_size = (samples.len() * 2) as u32;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data_size).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * u32::from(channels) * 2).to_le_bytes());
        b.extend_from_slice(&(channels * 2).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&data_size.to_le_bytes());
        for &s in samples {
            b.extend_from_slice(&s.to_le_bytes());
        }
        b
    }

    fn write_tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn decodes_int16_scaling() {
        let f = write_tmp(&raw_wav(&[0, 16384, -32768], 2000, 1, 16, 1));
        let (samples, rate) = decode_wav(f.path()).unwrap();
        assert_eq!(rate, 2000);
        assert_eq!(samples, vec![0.0, 0.5, -1.0]);
    }

    #[test]
    fn rejects_empty_data_chunk() {
        let f = write_tmp(&raw_wav(&[], 2000, 1, 16, 1));
        match decode_wav(f.path()) {
            Err(DataError::TruncatedFile(_)) => {}
            other => panic!("expected TruncatedFile, got {other:?}"),
        }
    }

    #[test]
    fn decodes_4khz_file_of_8000_samples() {
        let samples: Vec<i16> = (0..8000).map(|i| (i % 128) as i16).collect();
        let f = write_tmp(&raw_wav(&samples, 4000, 1, 16, 1));
        let (decoded, rate) = decode_wav(f.path()).unwrap();
        assert_eq!(rate, 4000);
        assert_eq!(decoded.len(), 8000);
    }

    #[test]
    fn rejects_unsupported_encodings() {
        for (ch, bits, format) in [(2u16, 16u16, 1u16), (1, 8, 1), (1, 16, 3)] {
            let f = write_tmp(&raw_wav(&[1, 2, 3], 2000, ch, bits, format));
            match decode_wav(f.path()) {
                Err(DataError::UnsupportedEncoding(_)) => {}
                other => panic!("expected UnsupportedEncoding, got {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_truncated_data() {
        let mut bytes = raw_wav(&[1, 2, 3, 4], 2000, 1, 16, 1);
        bytes.truncate(bytes.len() - 3);
        let f = write_tmp(&bytes);
        match decode_wav(f.path()) {
            Err(DataError::TruncatedFile(_)) => {}
            other => panic!("expected TruncatedFile, got {other:?}"),
        }
    }

    #[test]
    fn probe_matches_decode() {
        let f = write_tmp(&raw_wav(&[5; 321], 4000, 1, 16, 1));
        let info = probe_wav(f.path()).unwrap();
        assert_eq!(
            info,
            WavInfo {
                sample_rate: 4000,
                samples: 321
            }
        );
    }

    #[test]
    fn writer_roundtrips_through_decoder() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples = vec![0.0, 0.25, -0.25, 0.999, -1.0];
        write_wav_mono16(&path, &samples, 2000).unwrap();
        let (decoded, rate) = decode_wav(&path).unwrap();
        assert_eq!(rate, 2000);
        assert_eq!(decoded.len(), samples.len());
        // Write scales by 32767, decode by 1/32768: half an LSB of
        // quantization plus one LSB of scale skew.
        for (a, b) in decoded.iter().zip(&samples) {
            assert!((a - b).abs() < 2.0 / 32768.0, "{a} vs {b}");
        }
    }
}
