//! Binary netpbm I/O: P6 (RGB) images in, P5 label maps and P6 colorized
//! predictions out, plus the `index r g b` palette text format.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::runtime::LabelMap;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PnmHeader {
    pub magic: [u8; 2],
    pub width: usize,
    pub height: usize,
    pub maxval: usize,
    /// Offset of the first raster byte.
    pub data_offset: usize,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Parses a binary netpbm header. Comments (`#` to end of line) may appear
/// anywhere whitespace is allowed; exactly one whitespace byte separates
/// maxval from the raster.
pub fn parse_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(format_err(0, "not a netpbm file"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][k];
            return Err(format_err(start, format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|e| format_err(start, format!("bad header number: {e}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(pos, "missing whitespace before raster")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format_err(2, "image has a zero dimension"));
    }
    Ok(PnmHeader {
        magic,
        width,
        height,
        maxval,
        data_offset: pos,
    })
}

/// Decodes a binary P6 image with maxval 255 into a `3 × H × W` tensor with
/// values `byte / 255`, channels in R, G, B order.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(format_err(
            0,
            format!("expected binary PPM (P6), found {}", String::from_utf8_lossy(&h.magic)),
        ));
    }
    if h.maxval != 255 {
        return Err(format_err(2, format!("maxval must be 255, found {}", h.maxval)));
    }
    let plane = h.width * h.height;
    let raster = &bytes[h.data_offset..];
    if raster.len() < 3 * plane {
        return Err(format_err(
            bytes.len(),
            format!("raster truncated: {} of {} bytes", raster.len(), 3 * plane),
        ));
    }
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in raster[..3 * plane].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(Shape::new(3, h.height, h.width)?, data)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

/// Encodes a 3-channel tensor as P6, mapping `[0, 1]` to `0..=255` with
/// rounding and clamping.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.channels != 3 {
        return Err(Error::shape(format!("PPM needs 3 channels, got {s}")));
    }
    let plane = s.plane();
    let mut out = format!("P6\n{} {}\n255\n", s.width, s.height).into_bytes();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = image.data()[c * plane + i];
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

pub fn encode_labelmap(labels: &LabelMap) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    out.reserve(labels.labels.len());
    for &l in &labels.labels {
        let b = u8::try_from(l)
            .map_err(|_| Error::Domain(format!("class {l} does not fit an 8-bit PGM")))?;
        out.push(b);
    }
    Ok(out)
}

/// Writes class indices as an 8-bit P5 image.
pub fn save_labelmap(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_labelmap(labels)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Palette {
    colors: BTreeMap<u32, [u8; 3]>,
}

impl Palette {
    pub fn new(colors: impl IntoIterator<Item = (u32, [u8; 3])>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, rgb) in colors {
            if map.insert(i, rgb).is_some() {
                return Err(Error::Domain(format!("palette index {i} defined twice")));
            }
        }
        Ok(Palette { colors: map })
    }

    pub fn get(&self, class: u32) -> Option<[u8; 3]> {
        self.colors.get(&class).copied()
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Parses `index r g b` lines; `#` comments and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |message: String| Error::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [idx, r, g, b] = fields[..] else {
                return Err(fail(format!("expected `index r g b`, got {line:?}")));
            };
            let idx: u32 = idx.parse().map_err(|e| fail(format!("bad index {idx:?}: {e}")))?;
            let mut rgb = [0u8; 3];
            for (slot, v) in rgb.iter_mut().zip([r, g, b]) {
                *slot = v
                    .parse()
                    .map_err(|_| fail(format!("color component {v:?} is not in 0..=255")))?;
            }
            entries.push((idx, rgb));
        }
        Self::new(entries).map_err(|e| match e {
            Error::Domain(m) => Error::Parse { line: 0, message: m },
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

pub fn encode_colormap(labels: &LabelMap, palette: &Palette) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    out.reserve(3 * labels.labels.len());
    for &l in &labels.labels {
        let rgb = palette.get(l).ok_or(Error::Palette { class: l })?;
        out.extend_from_slice(&rgb);
    }
    Ok(out)
}

/// Writes a P6 image with each pixel colored by its class.
pub fn save_colormap(labels: &LabelMap, palette: &Palette, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_colormap(labels, palette)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ppm(w: usize, h: usize, raster: &[u8]) -> Vec<u8> {
        let mut b = format!("P6\n{w} {h}\n255\n").into_bytes();
        b.extend_from_slice(raster);
        b
    }

    #[test]
    fn red_pixel() {
        let t = decode_ppm(&ppm(1, 1, &[255, 0, 0])).unwrap();
        assert_eq!(t.shape(), Shape::new(3, 1, 1).unwrap());
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn black_image_is_zero() {
        let t = decode_ppm(&ppm(2, 2, &[0; 12])).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn roundtrip_bytes() {
        let raster: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let bytes = ppm(3, 2, &raster);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(3, 2, 3).unwrap());
        assert_eq!(encode_ppm(&t).unwrap(), bytes);
    }

    #[test]
    fn header_with_comments() {
        let mut b = b"P6 # made by hand\n# another\n2 1\n255\n".to_vec();
        b.extend_from_slice(&[0, 0, 0, 255, 255, 255]);
        let t = decode_ppm(&b).unwrap();
        assert_eq!(t.get(0, 0, 1), 1.0);
    }

    #[test]
    fn rejects_other_formats() {
        let mut p3 = b"P3\n1 1\n255\n".to_vec();
        p3.extend_from_slice(b"0 0 0");
        assert!(matches!(decode_ppm(&p3), Err(Error::Format { .. })));
        let mut deep = b"P6\n1 1\n65535\n".to_vec();
        deep.extend_from_slice(&[0; 6]);
        assert!(matches!(decode_ppm(&deep), Err(Error::Format { .. })));
        assert!(decode_ppm(&ppm(2, 2, &[0; 5])).is_err());
        assert!(decode_ppm(b"JUNK").is_err());
    }

    #[test]
    fn labelmap_pgm() {
        let lm = LabelMap {
            height: 2,
            width: 2,
            labels: vec![0; 4],
        };
        let bytes = encode_labelmap(&lm).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0; 4]);
        let big = LabelMap {
            height: 1,
            width: 1,
            labels: vec![256],
        };
        assert!(encode_labelmap(&big).is_err());
    }

    #[test]
    fn checkerboard_colormap() {
        let palette = Palette::parse("0 0 0 0\n1 255 0 0\n").unwrap();
        let lm = LabelMap {
            height: 2,
            width: 2,
            labels: vec![0, 1, 1, 0],
        };
        let bytes = encode_colormap(&lm, &palette).unwrap();
        let header = b"P6\n2 2\n255\n".len();
        assert_eq!(
            &bytes[header..],
            &[0, 0, 0, 255, 0, 0, 255, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn missing_palette_entry() {
        let palette = Palette::parse("0 0 0 0\n1 1 1 1\n2 2 2 2").unwrap();
        let lm = LabelMap {
            height: 1,
            width: 1,
            labels: vec![5],
        };
        let err = encode_colormap(&lm, &palette).unwrap_err();
        assert!(matches!(err, Error::Palette { class: 5 }));
        assert!(err.to_string().contains("class 5"));
    }

    #[test]
    fn palette_validation() {
        assert!(Palette::parse("0 256 0 0").is_err());
        assert!(Palette::parse("0 1 2").is_err());
        assert!(Palette::parse("0 1 2 3\n0 4 5 6").is_err());
        assert_eq!(Palette::parse("# c\n\n3 1 2 3").unwrap().get(3), Some([1, 2, 3]));
    }
}
