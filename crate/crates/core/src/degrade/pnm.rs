//! Binary PGM (`P5`) and PPM (`P6`) with 8-bit samples.

use std::path::Path;

use crate::image::{snap, Image};
use crate::{Error, Result};

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

/// Writes a 1-channel image as PGM and a 3-channel image as PPM.
pub fn save_image(x: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pnm(x)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pnm(x: &Image) -> Result<Vec<u8>> {
    let magic = match x.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Dimension(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", x.width(), x.height()).into_bytes();
    out.extend(x.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
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
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        return Err(cur.err("missing magic number"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(cur.err("unsupported magic, expected P5 or P6")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err(format!("empty image {width}×{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(cur.err(format!("maxval {maxval} not supported (1..=255)")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected whitespace after maxval")),
    }
    let expected = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(cur.err(format!(
            "truncated payload: expected {expected} bytes, found {}",
            payload.len()
        )));
    }
    let scale = 1.0 / maxval as f32;
    let data = payload[..expected]
        .iter()
        .map(|&b| snap((b as f32 * scale).min(1.0)))
        .collect();
    Image::new(height, width, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use rand::Rng as _;

    #[test]
    fn p6_by_definition() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend((0..12).map(|i| (i * 20) as u8));
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2, 3));
        assert!((img.get(1, 1, 2) - 220.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn comments_are_skipped() {
        let mut bytes = b"P5 # gray\n# size next\n3 1 255\n".to_vec();
        bytes.extend([0u8, 128, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.dims(), (1, 3, 1));
        assert_eq!(img.get(0, 2, 0), 1.0);
    }

    #[test]
    fn truncated_payload_names_counts() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([0u8; 7]);
        match decode_pnm(&bytes) {
            Err(Error::Parse { offset, msg }) => {
                assert_eq!(offset, 11);
                assert!(msg.contains("expected 12") && msg.contains("found 7"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(decode_pnm(b"P5\nx 1\n255\n"), Err(Error::Parse { .. })));
        assert!(matches!(decode_pnm(b"P5\n1 1\n65535\n\0\0"), Err(Error::Parse { .. })));
    }

    #[test]
    fn save_load_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng_from_seed(3);
        for c in [1, 3] {
            let img = Image::from_fn(5, 7, c, |_, _, _| rng.random::<f32>());
            let path = dir.path().join(format!("x{c}.pnm"));
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(back.dims(), img.dims());
            for (a, b) in back.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        assert!(matches!(load_image(dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    }
}
