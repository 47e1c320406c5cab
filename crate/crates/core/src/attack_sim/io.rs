//! Signal files: binary PGM (P5), binary PPM (P6) and raw little-endian
//! float64 with a JSON sidecar `{"n": .., "channels": ..}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalFormat {
    Pgm,
    Ppm,
    RawF64,
}

impl SignalFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(SignalFormat::Pgm),
            "ppm" => Some(SignalFormat::Ppm),
            "f64" | "raw" | "bin" => Some(SignalFormat::RawF64),
            _ => None,
        }
    }
}

/// A vectorized signal; multi-channel data is stored channel-major
/// (all of channel 0, then channel 1, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSignal {
    pub signal: Signal,
    pub channels: usize,
}

impl LoadedSignal {
    pub fn channel_len(&self) -> usize {
        self.signal.len() / self.channels
    }

    pub fn channel(&self, c: usize) -> Signal {
        let n = self.channel_len();
        Signal::from_vec_unchecked(self.signal.as_slice()[c * n..(c + 1) * n].to_vec())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    n: usize,
    channels: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn load_signal(path: &Path, format: SignalFormat) -> Result<LoadedSignal> {
    let bytes = fs::read(path)?;
    match format {
        SignalFormat::Pgm => parse_pnm(&bytes, b"P5", 1),
        SignalFormat::Ppm => parse_pnm(&bytes, b"P6", 3),
        SignalFormat::RawF64 => {
            let sidecar: RawSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)
                .map_err(|e| Error::Parse(format!("raw sidecar: {e}")))?;
            parse_raw(&bytes, sidecar)
        }
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("malformed header: missing {what}")))
    }
}

fn parse_pnm(bytes: &[u8], magic: &[u8], channels: usize) -> Result<LoadedSignal> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Parse(format!("malformed header: expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("malformed header: {width}x{height} maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::Parse("malformed header: no raster separator".into()));
    }
    let raster = &bytes[cur.pos + 1..];
    let pixels = width * height;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let expected = pixels * channels * sample_bytes;
    if raster.len() < expected {
        return Err(Error::Parse(format!("truncated raster: {} of {expected} bytes", raster.len())));
    }
    let sample = |i: usize| -> usize {
        if sample_bytes == 1 {
            raster[i] as usize
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
        }
    };
    // interleaved RGB -> channel-major
    let mut values = vec![0.0; pixels * channels];
    for p in 0..pixels {
        for c in 0..channels {
            let v = sample(p * channels + c);
            if v > maxval {
                return Err(Error::Parse(format!("pixel value {v} exceeds maxval {maxval}")));
            }
            values[c * pixels + p] = v as f64 / maxval as f64;
        }
    }
    Ok(LoadedSignal { signal: Signal::new(values)?, channels })
}

fn parse_raw(bytes: &[u8], sidecar: RawSidecar) -> Result<LoadedSignal> {
    if sidecar.channels == 0 || sidecar.n == 0 {
        return Err(Error::Parse("raw sidecar: n and channels must be positive".into()));
    }
    let total = sidecar.n * sidecar.channels;
    if bytes.len() != total * 8 {
        return Err(Error::Parse(format!("raw file has {} bytes, expected {}", bytes.len(), total * 8)));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(LoadedSignal { signal: Signal::new(values)?, channels: sidecar.channels })
}

/// Side length for a square image of `n` pixels, or `(n, 1)` otherwise.
fn image_shape(n: usize) -> (usize, usize) {
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        (side, side)
    } else {
        (n, 1)
    }
}

/// Writes a grayscale (1 channel) or RGB (3 channel) binary PNM, clamping
/// samples to [0, 1].
pub fn write_pgm(path: &Path, signal: &Signal, channels: usize) -> Result<()> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::InvalidParameter(format!("cannot write {channels}-channel PNM"))),
    };
    let pixels = signal.len() / channels;
    let (w, h) = image_shape(pixels);
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let s = signal.as_slice();
    for p in 0..pixels {
        for c in 0..channels {
            out.push((s[c * pixels + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes raw little-endian float64 plus its JSON sidecar.
pub fn write_raw_f64(path: &Path, signal: &Signal, channels: usize) -> Result<()> {
    if channels == 0 || !signal.len().is_multiple_of(channels) {
        return Err(Error::InvalidParameter(format!("{} samples do not split into {channels} channels", signal.len())));
    }
    let bytes: Vec<u8> = signal.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let sidecar = RawSidecar { n: signal.len() / channels, channels };
    fs::write(sidecar_path(path), serde_json::to_vec(&sidecar).expect("sidecar serializes"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pgm_is_all_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.pgm");
        let mut bytes = b"P5\n# comment\n28 28\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(255u8, 784));
        fs::write(&path, bytes).unwrap();
        let loaded = load_signal(&path, SignalFormat::Pgm).unwrap();
        assert_eq!(loaded.channels, 1);
        assert_eq!(loaded.signal.len(), 784);
        assert!(loaded.signal.as_slice().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn raw_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f64");
        let values: Vec<f64> = (0..784).map(|i| i as f64 / 783.0).collect();
        let s = Signal::new(values).unwrap();
        write_raw_f64(&path, &s, 1).unwrap();
        let loaded = load_signal(&path, SignalFormat::RawF64).unwrap();
        assert_eq!(loaded.signal, s);
    }

    #[test]
    fn malformed_header_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        fs::write(&path, b"P5\n28 x\n255\n").unwrap();
        assert!(matches!(load_signal(&path, SignalFormat::Pgm), Err(Error::Parse(_))));
        fs::write(&path, b"P2\n2 2\n255\n0 0 0 0").unwrap();
        assert!(load_signal(&path, SignalFormat::Pgm).is_err());
    }

    #[test]
    fn out_of_range_pixel_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("range.pgm");
        let mut bytes = b"P5 2 1 100\n".to_vec();
        bytes.extend([50u8, 101u8]);
        fs::write(&path, bytes).unwrap();
        assert!(load_signal(&path, SignalFormat::Pgm).is_err());
    }

    #[test]
    fn ppm_splits_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([255u8, 0, 51, 0, 255, 102]);
        fs::write(&path, bytes).unwrap();
        let loaded = load_signal(&path, SignalFormat::Ppm).unwrap();
        assert_eq!(loaded.channels, 3);
        assert_eq!(loaded.channel(0).as_slice(), &[1.0, 0.0]);
        assert_eq!(loaded.channel(1).as_slice(), &[0.0, 1.0]);
        assert_eq!(loaded.channel(2).as_slice(), &[0.2, 0.4]);

        let out = dir.path().join("back.ppm");
        write_pgm(&out, &loaded.signal, 3).unwrap();
        assert_eq!(load_signal(&out, SignalFormat::Ppm).unwrap(), loaded);
    }
}
