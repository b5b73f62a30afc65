use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Parses a binary greymap with maxval 255. Header tokens may be separated
/// by any whitespace and interleaved with `#` comments.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::format(format!(
            "expected binary PGM magic P5, found {magic:?}"
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format!(
                "PGM header field {} is missing or not a number",
                i + 1
            )));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PGM header number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(
            "PGM header must end with a single whitespace byte",
        ));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(format!(
            "PGM maxval {maxval} unsupported, expected 255"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(format!(
            "PGM extent {width}x{height} is empty"
        )));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("PGM extent overflows"))?;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(Error::format(format!(
            "PGM payload truncated: {} of {n} bytes",
            payload.len()
        )));
    }
    GrayImage::new(height, width, payload[..n].to_vec())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_pixel_file_layout() {
        let img = GrayImage::new(1, 1, vec![7]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(bytes, b"P5\n1 1\n255\n\x07");
        assert_eq!(bytes.len(), 11 + 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            decode_pgm(b"P2\n1 1\n255\n7"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n65535\n"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n255\n\x01\x02"),
            Err(Error::Format(_))
        ));
        assert!(matches!(decode_pgm(b"P5\n2\n"), Err(Error::Format(_))));
        assert!(matches!(decode_pgm(b""), Err(Error::Format(_))));
    }

    #[test]
    fn accepts_comments_and_loose_whitespace() {
        let img = decode_pgm(b"P5 # made by hand\n2   1\n# max\n255 \x05\x06").unwrap();
        assert_eq!(img.dims(), (1, 2));
        assert_eq!(img.pixels(), &[5, 6]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = GrayImage::from_fn(3, 4, |r, c| (r * 40 + c) as u8).unwrap();
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
        assert!(matches!(
            read_pgm(dir.path().join("missing.pgm")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(h in 1usize..20, w in 1usize..20, seed in any::<u8>()) {
            let img = GrayImage::from_fn(h, w, |r, c| seed.wrapping_mul(r as u8).wrapping_add((c as u8).wrapping_mul(31))).unwrap();
            let bytes = encode_pgm(&img);
            let back = decode_pgm(&bytes).unwrap();
            prop_assert_eq!(encode_pgm(&back), bytes);
            prop_assert_eq!(back, img);
        }
    }
}
