//! Binary PPM input, CSV/PGM attribution output.

use std::fs;
use std::path::{Path, PathBuf};

use super::graph::Preprocess;
use crate::error::{Error, Result};
use crate::lrp::AttributionMap;
use crate::tensor::Tensor;

/// An input image in raw [0, 255] and model-normalised form.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub raw: Tensor,
    pub normalized: Tensor,
    pub source: Option<PathBuf>,
}

impl ImageSample {
    /// `raw` is 3×H×W with values in [0, 255].
    pub fn from_raw(raw: Tensor, preprocess: &Preprocess) -> Result<Self> {
        let (c, h, w) = raw.chw("image")?;
        if c != 3 {
            return Err(Error::ShapeMismatch {
                op: "image",
                dim: "channels".into(),
                expected: 3,
                actual: c,
            });
        }
        let hw = h * w;
        let normalized = raw
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i / hw;
                (v / 255.0 - preprocess.mean[ch]) / preprocess.std[ch]
            })
            .collect();
        Ok(Self {
            normalized: Tensor::new(vec![3, h, w], normalized)?,
            raw,
            source: None,
        })
    }

    pub fn height(&self) -> usize {
        self.raw.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.raw.shape()[2]
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .filter(|s| !s.is_empty())
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::BadHeader(format!("missing or invalid {what}")))
    }
}

/// Decodes a binary `P6` image into a 3×H×W tensor of [0, 255] values.
pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let magic = r.token().unwrap_or_default().to_string();
    if magic != "P6" {
        return Err(Error::BadMagic(magic));
    }
    let w = r.number("width")? as usize;
    let h = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(Error::BadMaxval(maxval));
    }
    if w == 0 || h == 0 {
        return Err(Error::BadHeader(format!("empty image {w}×{h}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = r.pos + 1;
    let n = w * h;
    let pixels = bytes
        .get(start..start + 3 * n)
        .ok_or(Error::TruncatedPixelData)?;
    let mut data = vec![0f32; 3 * n];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Encodes a 3×H×W tensor as binary `P6`, rounding and clamping to [0, 255].
pub fn encode_ppm(raw: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = raw.chw("ppm")?;
    if c != 3 {
        return Err(Error::ShapeMismatch {
            op: "ppm",
            dim: "channels".into(),
            expected: 3,
            actual: c,
        });
    }
    let n = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..n {
        for ch in 0..3 {
            out.push(raw.data()[ch * n + i].round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes).map_err(|e| e.in_layer(path.display().to_string()))
}

pub fn write_ppm(path: impl AsRef<Path>, raw: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(raw)?).map_err(|e| Error::io(path, e))
}

/// Reads a PPM and normalises it with the model's preprocessing.
pub fn load_ppm(path: impl AsRef<Path>, preprocess: &Preprocess) -> Result<ImageSample> {
    let path = path.as_ref();
    let mut sample = ImageSample::from_raw(read_ppm(path)?, preprocess)?;
    sample.source = Some(path.to_path_buf());
    Ok(sample)
}

/// Min-max scales an H×W map into bytes; a constant map becomes all zeros.
pub fn scale_to_bytes(map: &Tensor) -> Vec<u8> {
    let (min, max) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = max - min;
    map.data()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                (((v as f64 - min) / range) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = hw_of(map)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(scale_to_bytes(map));
    Ok(out)
}

/// One row per line, values comma-separated in shortest round-trip form.
pub fn encode_csv(map: &Tensor) -> Result<String> {
    let (_, w) = hw_of(map)?;
    let mut out = String::new();
    for row in map.data().chunks_exact(w) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn hw_of(map: &Tensor) -> Result<(usize, usize)> {
    match map.shape() {
        &[h, w] => Ok((h, w)),
        s => Err(Error::InvalidShape {
            op: "attribution",
            reason: format!("expected an H×W map, got {s:?}"),
        }),
    }
}

/// Writes `<prefix>.csv` and `<prefix>.pgm` for the map's final (quantized if present) values.
pub fn write_attribution(
    map: &AttributionMap,
    out_prefix: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    let prefix = out_prefix.as_ref();
    let values = map.final_values();
    let csv = with_suffix(prefix, "csv");
    let pgm = with_suffix(prefix, "pgm");
    fs::write(&csv, encode_csv(values)?).map_err(|e| Error::io(&csv, e))?;
    fs::write(&pgm, encode_pgm(values)?).map_err(|e| Error::io(&pgm, e))?;
    Ok((csv, pgm))
}

pub(crate) fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Parses an attribution CSV written by [`write_attribution`].
pub fn parse_attribution_csv(text: &str) -> Result<Tensor> {
    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f32> = line
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| {
                Error::InvalidConfig(format!("attribution csv line {}: {e}", lineno + 1))
            })?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::InvalidConfig(format!(
                "attribution csv line {}: ragged row",
                lineno + 1
            )));
        }
        data.extend(row);
        rows += 1;
    }
    let w = width.ok_or_else(|| Error::InvalidConfig("attribution csv is empty".into()))?;
    Tensor::new(vec![rows, w], data)
}

pub fn read_attribution_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_attribution_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrp::QuantizeMode;

    #[test]
    fn white_pixel_normalizes_to_one() {
        let raw = parse_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        let s = ImageSample::from_raw(raw, &Preprocess::default()).unwrap();
        assert_eq!(s.raw.data(), &[255.0; 3]);
        assert_eq!(s.normalized.data(), &[1.0; 3]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            parse_ppm(b"P5\n1 1\n255\n\x00"),
            Err(Error::BadMagic(_))
        ));
        assert!(matches!(
            parse_ppm(b"P6\n1 1\n65535\n\x00\x00"),
            Err(Error::BadMaxval(65535))
        ));
        let err = parse_ppm(b"P6\n2 2\n255\n\x00\x01\x02").unwrap_err();
        assert!(matches!(err, Error::TruncatedPixelData));
        assert_eq!(err.to_string(), "truncated pixel data");
    }

    #[test]
    fn comments_in_header() {
        let t = parse_ppm(b"P6 # made by hand\n1 # width\n1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn gradient_round_trip_is_bit_exact() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([0, 10, 20, 85, 95, 105, 170, 180, 190, 255, 245, 235]);
        let t = parse_ppm(&bytes).unwrap();
        assert_eq!(t.data()[..4], [0.0, 85.0, 170.0, 255.0]);
        assert_eq!(encode_ppm(&t).unwrap(), bytes);
    }

    #[test]
    fn attribution_files() {
        let dir = tempfile::tempdir().unwrap();
        let map = AttributionMap::new(
            Tensor::from_slice(&[1, 1], &[0.5]).unwrap(),
            QuantizeMode::Off,
            8,
        );
        let (csv, pgm) = write_attribution(&map, dir.path().join("a")).unwrap();
        assert_eq!(fs::read_to_string(csv).unwrap(), "0.5\n");
        assert_eq!(fs::read(pgm).unwrap(), b"P5\n1 1\n255\n\x00");

        let map = AttributionMap::new(
            Tensor::from_slice(&[1, 2], &[0.0, 1.0]).unwrap(),
            QuantizeMode::Off,
            8,
        );
        let (csv, pgm) = write_attribution(&map, dir.path().join("b")).unwrap();
        assert_eq!(fs::read_to_string(&csv).unwrap(), "0,1\n");
        assert_eq!(fs::read(pgm).unwrap(), b"P5\n2 1\n255\n\x00\xff");
        assert_eq!(read_attribution_csv(csv).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn csv_round_trips_exactly() {
        let t = Tensor::from_slice(&[2, 2], &[0.1, -3.25e-7, 1.0 / 3.0, 12345.678]).unwrap();
        let back = parse_attribution_csv(&encode_csv(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
