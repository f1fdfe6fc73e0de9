//! Binary PGM (P5, maxval 255) interchange for pages and masks.

use std::fs;
use std::path::Path;

use super::{BinMask, GrayImage};
use crate::error::{Error, Result};

/// 8-bit grayscale raster, the storage form of a page.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Gray8 {
    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|&b| b as f64 / 255.0).collect(),
        )
        .expect("consistent dims")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            kind: "pgm",
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary (P5) PGM"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        pos += 1; // single whitespace after maxval
        let need = width * height;
        if bytes.len() < pos + need {
            return Err(bad("truncated raster"));
        }
        Ok(Self {
            width,
            height,
            data: bytes[pos..pos + need].to_vec(),
        })
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, Gray8::from_image(img).encode()).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Gray8::decode(&bytes, path)?.to_image())
}

/// Masks are stored as PGM with values {0, 255}.
pub fn write_pgm_mask(path: impl AsRef<Path>, mask: &BinMask) -> Result<()> {
    let path = path.as_ref();
    let g = Gray8 {
        width: mask.width(),
        height: mask.height(),
        data: mask.data().iter().map(|&b| if b != 0 { 255 } else { 0 }).collect(),
    };
    fs::write(path, g.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_pgm_mask(path: impl AsRef<Path>) -> Result<BinMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let g = Gray8::decode(&bytes, path)?;
    BinMask::from_vec(
        g.width,
        g.height,
        g.data.into_iter().map(|b| (b >= 128) as u8).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment_parses() {
        let bytes = b"P5\n# made by hand\n3 2\n255\n\x00\x80\xff\x01\x02\x03";
        let g = Gray8::decode(bytes, Path::new("x.pgm")).unwrap();
        assert_eq!((g.width, g.height), (3, 2));
        assert_eq!(g.data, vec![0, 128, 255, 1, 2, 3]);
    }

    #[test]
    fn rejects_ascii_pgm() {
        assert!(Gray8::decode(b"P2\n1 1\n255\n0", Path::new("x.pgm")).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| ((x + y * 7) * 6) as f64 / 255.0);
        let p = dir.path().join("a.pgm");
        write_pgm(&p, &img).unwrap();
        let back = read_pgm(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let m = BinMask::from_fn(7, 5, |x, y| (x * y) % 3 == 1);
        let q = dir.path().join("a.mask.pgm");
        write_pgm_mask(&q, &m).unwrap();
        assert_eq!(read_pgm_mask(&q).unwrap(), m);
    }
}
