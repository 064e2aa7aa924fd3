//! File formats: PGM/PPM images, raw float masks and matrices, JSONL annotations.
//!
//! Float files are little-endian `f32` after a 16-byte header of a 4-byte
//! magic and three `u32` fields:
//!
//! | magic  | field 1 | field 2 | field 3 | payload           |
//! |--------|---------|---------|---------|-------------------|
//! | `EXPM` | width   | height  | 0       | `width·height` f32 |
//! | `EXTM` | n       | 0       | 0       | `n·n` f32, row-major |

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::GuideImage;
use crate::grid::{BinaryMask, ExtremePoints, Pixel, ProbMask};
use crate::tpm::{Matrix, SimilarityMatrix};
use crate::{Error, Result};

const HEADER: usize = 16;

/// A decoded 8-bit netpbm image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Netpbm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn encode_netpbm(img: &Netpbm) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::BadDimensions(format!("{c} channels"))),
    };
    if img.data.len() != img.width * img.height * img.channels {
        return Err(Error::size_mismatch(
            img.width * img.height * img.channels,
            img.data.len(),
        ));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    Ok(out)
}

/// Strict P5/P6 reader: maxval must be 255 and the payload exact.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Netpbm> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::BadMagic { expected: "P5 or P6" }),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments before each header field
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
            return Err(Error::BadDimensions("malformed netpbm header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::BadDimensions("header value out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::BadDimensions("malformed netpbm header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::BadDimensions(format!("maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::BadDimensions(format!("{width}x{height}")));
    }
    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedFile {
            expected: pos + expected,
            found: bytes.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::BadDimensions(format!(
            "{} trailing bytes",
            payload.len() - expected
        )));
    }
    Ok(Netpbm {
        width,
        height,
        channels,
        data: payload.to_vec(),
    })
}

pub fn read_netpbm(path: &Path) -> Result<Netpbm> {
    decode_netpbm(&fs::read(path)?)
}

pub fn write_netpbm(path: &Path, img: &Netpbm) -> Result<()> {
    fs::write(path, encode_netpbm(img)?)?;
    Ok(())
}

/// Binary mask as PGM with 0 for background and 255 for foreground.
pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let img = Netpbm {
        width: mask.width(),
        height: mask.height(),
        channels: 1,
        data: mask.values().iter().map(|&v| v * 255).collect(),
    };
    encode_netpbm(&img).expect("mask dimensions are consistent")
}

/// Grayscale PGM to mask; values of 128 and above are foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let img = decode_netpbm(bytes)?;
    if img.channels != 1 {
        return Err(Error::BadDimensions("mask must be a P5 graymap".into()));
    }
    let data = img.data.iter().map(|&v| u8::from(v >= 128)).collect();
    BinaryMask::from_vec(img.width, img.height, data)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    decode_mask(&fs::read(path)?)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    fs::write(path, encode_mask(mask))?;
    Ok(())
}

/// Guide image from a P5 or P6 file.
pub fn read_image(path: &Path) -> Result<GuideImage> {
    let img = read_netpbm(path)?;
    GuideImage::from_u8(img.width, img.height, img.channels, &img.data)
}

/// Writes an integer-valued guide image as P5 or P6.
pub fn write_image(path: &Path, img: &GuideImage) -> Result<()> {
    let data = img.values().iter().map(|&v| v.round() as u8).collect();
    write_netpbm(
        path,
        &Netpbm {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data,
        },
    )
}

fn header(magic: &[u8; 4], a: u32, b: u32, c: u32, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * payload);
    out.extend_from_slice(magic);
    for v in [a, b, c] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Checks magic and length; returns the three header fields.
fn parse_header(
    bytes: &[u8],
    magic: &'static str,
    payload_len: impl Fn(u32, u32) -> Option<usize>,
) -> Result<[u32; 3]> {
    if bytes.len() < 4 || &bytes[..4] != magic.as_bytes() {
        return Err(Error::BadMagic { expected: magic });
    }
    if bytes.len() < HEADER {
        return Err(Error::TruncatedFile {
            expected: HEADER,
            found: bytes.len(),
        });
    }
    let field = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let fields = [field(0), field(1), field(2)];
    let count = payload_len(fields[0], fields[1])
        .ok_or_else(|| Error::BadDimensions(format!("{}x{}", fields[0], fields[1])))?;
    let expected = HEADER + 4 * count;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::BadDimensions(format!(
            "{} trailing bytes",
            bytes.len() - expected
        )));
    }
    Ok(fields)
}

fn floats(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
}

/// Values are narrowed to `f32`.
pub fn encode_prob_mask(mask: &ProbMask) -> Vec<u8> {
    let n = mask.values().len();
    let mut out = header(b"EXPM", mask.width() as u32, mask.height() as u32, 0, n);
    for &v in mask.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_prob_mask(bytes: &[u8]) -> Result<ProbMask> {
    let [w, h, _] = parse_header(bytes, "EXPM", |w, h| {
        (w > 0 && h > 0).then_some(w as usize * h as usize)
    })?;
    ProbMask::new(w as usize, h as usize, floats(bytes).collect())
}

pub fn read_prob_mask(path: &Path) -> Result<ProbMask> {
    decode_prob_mask(&fs::read(path)?)
}

pub fn write_prob_mask(path: &Path, mask: &ProbMask) -> Result<()> {
    fs::write(path, encode_prob_mask(mask))?;
    Ok(())
}

/// Values are narrowed to `f32`.
pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let n = m.n();
    let mut out = header(b"EXTM", n as u32, 0, 0, n * n);
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Nonnegative square matrix; the first negative entry is reported by flat index.
pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let [n, _, _] = parse_header(bytes, "EXTM", |n, _| {
        (n > 0).then(|| n as usize * n as usize)
    })?;
    let data: Vec<f64> = floats(bytes).collect();
    if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        if value.is_nan() {
            return Err(Error::NonFinite(format!("entry {index} is NaN")));
        }
        return Err(Error::NegativeEntry { index, value });
    }
    Matrix::from_vec(n as usize, data)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    decode_matrix(&fs::read(path)?)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, encode_matrix(m))?;
    Ok(())
}

pub fn read_similarity(path: &Path) -> Result<SimilarityMatrix> {
    SimilarityMatrix::new(read_matrix(path)?)
}

/// One annotated object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub object_id: u64,
    pub class_id: u32,
    pub extreme: ExtremePoints,
    pub image: String,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    object_id: u64,
    class_id: u32,
    extreme: Vec<[i32; 2]>,
    image: String,
}

impl AnnotationRecord {
    fn to_raw(&self) -> RawRecord {
        RawRecord {
            object_id: self.object_id,
            class_id: self.class_id,
            extreme: self.extreme.to_array().iter().map(|p| [p.x, p.y]).collect(),
            image: self.image.clone(),
        }
    }

    fn from_raw(raw: RawRecord) -> std::result::Result<Self, String> {
        let [t, l, b, r]: [[i32; 2]; 4] = raw
            .extreme
            .try_into()
            .map_err(|v: Vec<_>| format!("expected 4 extreme points, got {}", v.len()))?;
        let p = |[x, y]: [i32; 2]| Pixel::new(x, y);
        let extreme = ExtremePoints::new(p(t), p(l), p(b), p(r)).map_err(|e| e.to_string())?;
        Ok(AnnotationRecord {
            object_id: raw.object_id,
            class_id: raw.class_id,
            extreme,
            image: raw.image,
        })
    }
}

/// One JSON object per line; blank lines are skipped, unknown keys ignored.
pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: k + 1,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(AnnotationRecord::from_raw(raw).map_err(parse_err)?);
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    parse_annotations(BufReader::new(fs::File::open(path)?))
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r.to_raw()).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_annotations(records).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_mask_file_size() {
        let m = ProbMask::constant(3, 2, 0.25).unwrap();
        let bytes = encode_prob_mask(&m);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..4], b"EXPM");
        assert_eq!(decode_prob_mask(&bytes).unwrap(), m);
    }

    #[test]
    fn matrix_file_size() {
        let bytes = encode_matrix(&Matrix::identity(1024));
        assert_eq!(bytes.len(), 16 + 4 * 1024 * 1024);
    }

    #[test]
    fn negative_entry_named() {
        let mut m = Matrix::identity(3);
        m.set(1, 2, -1.0);
        match decode_matrix(&encode_matrix(&m)) {
            Err(Error::NegativeEntry { index, value }) => {
                assert_eq!(index, 5);
                assert_eq!(value, -1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        let bytes = encode_matrix(&Matrix::identity(2));
        assert!(matches!(
            decode_prob_mask(&bytes),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            decode_matrix(&bytes[..20]),
            Err(Error::TruncatedFile { .. })
        ));
        assert!(matches!(
            decode_matrix(&bytes[..10]),
            Err(Error::TruncatedFile { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_matrix(&long), Err(Error::BadDimensions(_))));
    }

    #[test]
    fn pgm_strict_maxval() {
        let bytes = b"P5\n2 1\n15\n\x00\x0f";
        assert!(matches!(decode_mask(bytes), Err(Error::BadDimensions(_))));
    }

    #[test]
    fn pgm_threshold_and_comments() {
        let bytes = b"P5 # a comment\n3 1\n# another\n255\n\x00\x7f\x80";
        let m = decode_mask(bytes).unwrap();
        assert_eq!(m.values(), &[0, 0, 1]);
    }

    #[test]
    fn annotation_errors_carry_line() {
        let text = "\n{\"object_id\":0,\"class_id\":2,\"extreme\":[[1,0],[0,1],[1,2],[2,1]],\"image\":\"a\"}\n\
                    {\"object_id\":1,\"class_id\":2,\"extreme\":[[1,0],[0,1],[1,2]],\"image\":\"a\"}\n";
        match parse_annotations(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_annotations("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn unknown_keys_ignored() {
        let text = "{\"object_id\":4,\"class_id\":2,\"extreme\":[[1,0],[0,1],[1,2],[2,1]],\"image\":\"a\",\"note\":[1]}";
        let recs = parse_annotations(text.as_bytes()).unwrap();
        assert_eq!(recs[0].object_id, 4);
        assert_eq!(recs[0].extreme.right, Pixel::new(2, 1));
    }
}
