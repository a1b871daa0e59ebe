//! Frames and frame sequences, plus their on-disk formats.
//!
//! The sequence file is `DYNU`, three little-endian `u32` (n_x, n_y, n_t)
//! and then `n_x·n_y·n_t` little-endian `f64` values, frame after frame,
//! each frame column-stacked.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const SEQUENCE_MAGIC: &[u8; 4] = b"DYNU";

/// A single `n_x × n_y` frame, column-stacked (`x + n_x·y`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub n_x: usize,
    pub n_y: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(n_x: usize, n_y: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_x * n_y {
            return Err(Error::Shape(format!(
                "{} values for a {n_x}x{n_y} image",
                data.len()
            )));
        }
        Ok(Self { n_x, n_y, data })
    }

    pub fn zeros(n_x: usize, n_y: usize) -> Self {
        Self {
            n_x,
            n_y,
            data: vec![0.0; n_x * n_y],
        }
    }

    pub fn from_fn(n_x: usize, n_y: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_x * n_y);
        for y in 0..n_y {
            for x in 0..n_x {
                data.push(f(x, y));
            }
        }
        Self { n_x, n_y, data }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x + self.n_x * y
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x + self.n_x * y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[x + self.n_x * y] = v;
    }

    pub fn n_pixels(&self) -> usize {
        self.data.len()
    }

    /// Bilinear sample at fractional coordinates, clamped to the grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.n_x - 1) as f64);
        let yc = y.clamp(0.0, (self.n_y - 1) as f64);
        let x0 = (xc.floor() as usize).min(self.n_x.saturating_sub(2));
        let y0 = (yc.floor() as usize).min(self.n_y.saturating_sub(2));
        let x1 = (x0 + 1).min(self.n_x - 1);
        let y1 = (y0 + 1).min(self.n_y - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        (1.0 - fx) * (1.0 - fy) * self.get(x0, y0)
            + fx * (1.0 - fy) * self.get(x1, y0)
            + (1.0 - fx) * fy * self.get(x0, y1)
            + fx * fy * self.get(x1, y1)
    }

    /// Bilinear resampling onto an `n_x × n_y` grid with pixel centres
    /// aligned (`x_src = (x + 0.5)·scale − 0.5`).
    pub fn resample(&self, n_x: usize, n_y: usize) -> Image {
        let sx = self.n_x as f64 / n_x as f64;
        let sy = self.n_y as f64 / n_y as f64;
        Image::from_fn(n_x, n_y, |x, y| {
            self.sample_bilinear((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
        })
    }

    /// Writes an 8-bit binary PGM, mapping `[lo, hi]` linearly to `[0, 255]`.
    pub fn write_pgm(&self, path: impl AsRef<Path>, lo: f64, hi: f64) -> Result<()> {
        let path = path.as_ref();
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut bytes = format!("P5\n{} {}\n255\n", self.n_y, self.n_x).into_bytes();
        // PGM is row-major: rows are x, columns are y
        for x in 0..self.n_x {
            for y in 0..self.n_y {
                let v = ((self.get(x, y) - lo) / span * 255.0).round().clamp(0.0, 255.0);
                bytes.push(v as u8);
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// `n_t` frames of `n_x × n_y` pixels stored as one vector, frame `t`
/// occupying `[t·n_s, (t+1)·n_s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSequence {
    pub n_x: usize,
    pub n_y: usize,
    pub n_t: usize,
    pub data: Vec<f64>,
}

impl ImageSequence {
    pub fn new(n_x: usize, n_y: usize, n_t: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_x * n_y * n_t {
            return Err(Error::Shape(format!(
                "{} values for a {n_x}x{n_y}x{n_t} sequence",
                data.len()
            )));
        }
        Ok(Self { n_x, n_y, n_t, data })
    }

    pub fn zeros(n_x: usize, n_y: usize, n_t: usize) -> Self {
        Self {
            n_x,
            n_y,
            n_t,
            data: vec![0.0; n_x * n_y * n_t],
        }
    }

    pub fn from_frames(frames: &[Image]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty frame list".into()))?;
        let (n_x, n_y) = (first.n_x, first.n_y);
        if frames.iter().any(|f| f.n_x != n_x || f.n_y != n_y) {
            return Err(Error::Shape("frames of differing size".into()));
        }
        let data = frames.iter().flat_map(|f| f.data.iter().copied()).collect();
        Ok(Self {
            n_x,
            n_y,
            n_t: frames.len(),
            data,
        })
    }

    pub fn n_s(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let ns = self.n_s();
        &self.data[t * ns..(t + 1) * ns]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let ns = self.n_s();
        &mut self.data[t * ns..(t + 1) * ns]
    }

    pub fn frame_image(&self, t: usize) -> Image {
        Image {
            n_x: self.n_x,
            n_y: self.n_y,
            data: self.frame(t).to_vec(),
        }
    }

    pub fn frames(&self) -> Vec<Image> {
        (0..self.n_t).map(|t| self.frame_image(t)).collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_sequence(self, path)
    }

    /// Exports frame `t` as PGM scaled by the global min/max of the sequence.
    pub fn write_frame_pgm(&self, t: usize, path: impl AsRef<Path>) -> Result<()> {
        let (lo, hi) = self.min_max();
        self.frame_image(t).write_pgm(path, lo, hi)
    }
}

pub fn save_sequence(seq: &ImageSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + 8 * seq.data.len());
    bytes.extend_from_slice(SEQUENCE_MAGIC);
    for d in [seq.n_x, seq.n_y, seq.n_t] {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for v in &seq.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<ImageSequence> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_sequence(&bytes)
}

pub fn decode_sequence(bytes: &[u8]) -> Result<ImageSequence> {
    if bytes.len() < 16 || &bytes[..4] != SEQUENCE_MAGIC {
        return Err(Error::Format("missing DYNU header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n_x, n_y, n_t) = (dim(0), dim(1), dim(2));
    let n = n_x
        .checked_mul(n_y)
        .and_then(|v| v.checked_mul(n_t))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != 8 * n {
        return Err(Error::Format(format!(
            "expected {} payload bytes for {n_x}x{n_y}x{n_t}, found {}",
            8 * n,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ImageSequence { n_x, n_y, n_t, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let seq = ImageSequence::new(2, 3, 2, (0..12).map(f64::from).collect()).unwrap();
        let rebuilt = ImageSequence::from_frames(&seq.frames()).unwrap();
        assert_eq!(rebuilt, seq);
        assert_eq!(seq.frame(1)[0], 6.0);
        assert!(ImageSequence::new(2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn decode_rejects_bad_input() {
        let seq = ImageSequence::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dir = std::env::temp_dir().join(format!("dynamo-seq-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.dynu");
        seq.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(decode_sequence(&bytes).unwrap(), seq);
        assert!(matches!(decode_sequence(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_sequence(&bad), Err(Error::Format(_))));
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn bilinear_sampling() {
        let img = Image::from_fn(3, 3, |x, y| (x + 10 * y) as f64);
        assert_eq!(img.sample_bilinear(1.0, 1.0), 11.0);
        assert!((img.sample_bilinear(0.5, 0.0) - 0.5).abs() < 1e-15);
        assert!((img.sample_bilinear(2.0, 2.0) - 22.0).abs() < 1e-15);
        let half = img.resample(3, 3);
        assert_eq!(half, img);
    }
}
