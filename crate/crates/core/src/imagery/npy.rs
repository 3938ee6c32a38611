//! Minimal NPY reader/writer for the dtypes this toolkit exchanges:
//! little-endian `f32`, `i32` and single-byte `u8`/`bool`, C order only.
//!
//! Written files use format version 1.0 with the header padded so the data
//! starts on a 64-byte boundary. Readers accept versions 1.0 through 3.0 and
//! any header alignment.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, PartialEq, Eq)]
pub struct Header {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Splits an NPY byte buffer into its parsed header and the raw payload.
pub fn parse(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Decode("missing NPY magic".into()));
    }
    let major = bytes[6];
    let (header_len, start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Decode("truncated NPY preamble".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(Error::UnsupportedFormat(format!("NPY version {v}"))),
    };
    let end = start + header_len;
    if bytes.len() < end {
        return Err(Error::Decode("truncated NPY header".into()));
    }
    let text = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| Error::Decode("NPY header is not text".into()))?;
    Ok((parse_header(text)?, &bytes[end..]))
}

fn dict_value<'a>(text: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}'");
    let at = text
        .find(&pat)
        .ok_or_else(|| Error::Decode(format!("NPY header lacks {pat}")))?;
    let rest = text[at + pat.len()..].trim_start();
    rest.strip_prefix(':')
        .map(str::trim_start)
        .ok_or_else(|| Error::Decode(format!("malformed NPY entry {pat}")))
}

fn parse_header(text: &str) -> Result<Header> {
    let descr_src = dict_value(text, "descr")?;
    let descr = descr_src
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| Error::Decode("malformed descr".into()))?
        .to_string();

    let fortran_src = dict_value(text, "fortran_order")?;
    let fortran_order = if fortran_src.starts_with("True") {
        true
    } else if fortran_src.starts_with("False") {
        false
    } else {
        return Err(Error::Decode("malformed fortran_order".into()));
    };

    let shape_src = dict_value(text, "shape")?;
    let inner = shape_src
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::Decode("malformed shape".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::Decode(format!("bad shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        descr,
        fortran_order,
        shape,
    })
}

/// Renders a version 1.0 header (magic through the trailing newline).
pub fn encode_header(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_txt = match shape {
        [one] => format!("({one},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // 10 preamble bytes + dict + padding + '\n' must be a multiple of 64.
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat(' ').take(pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

fn check_payload(header: &Header, payload: &[u8], item: usize) -> Result<usize> {
    if header.fortran_order {
        return Err(Error::UnsupportedFormat("Fortran-ordered NPY".into()));
    }
    let count: usize = header.shape.iter().product();
    if payload.len() < count * item {
        return Err(Error::Decode(format!(
            "NPY payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            header.shape,
            count * item
        )));
    }
    Ok(count)
}

fn dtype_err(expected: &str, found: &str) -> Error {
    Error::DType {
        expected: expected.into(),
        found: found.into(),
    }
}

pub fn read_f32(path: impl AsRef<Path>) -> Result<NpyArray<f32>> {
    let bytes = read_file(path.as_ref())?;
    let (header, payload) = parse(&bytes)?;
    if header.descr != "<f4" {
        return Err(dtype_err("<f4", &header.descr));
    }
    let count = check_payload(&header, payload, 4)?;
    let data = payload[..count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

pub fn read_i32(path: impl AsRef<Path>) -> Result<NpyArray<i32>> {
    let bytes = read_file(path.as_ref())?;
    let (header, payload) = parse(&bytes)?;
    if header.descr != "<i4" {
        return Err(dtype_err("<i4", &header.descr));
    }
    let count = check_payload(&header, payload, 4)?;
    let data = payload[..count * 4]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

/// Reads `|u1` arrays; `|b1` (numpy bool) is accepted as 0/1 bytes.
pub fn read_u8(path: impl AsRef<Path>) -> Result<NpyArray<u8>> {
    let bytes = read_file(path.as_ref())?;
    let (header, payload) = parse(&bytes)?;
    if !matches!(header.descr.as_str(), "|u1" | "<u1" | "|b1") {
        return Err(dtype_err("|u1", &header.descr));
    }
    let count = check_payload(&header, payload, 1)?;
    Ok(NpyArray {
        shape: header.shape,
        data: payload[..count].to_vec(),
    })
}

fn write_raw(path: &Path, descr: &str, shape: &[usize], payload: &[u8]) -> Result<()> {
    let mut buf = encode_header(descr, shape);
    buf.extend_from_slice(payload);
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {count} values, buffer has {len}"
        )));
    }
    Ok(())
}

pub fn write_f32(path: impl AsRef<Path>, shape: &[usize], data: &[f32]) -> Result<()> {
    check_len(shape, data.len())?;
    let payload: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_raw(path.as_ref(), "<f4", shape, &payload)
}

pub fn write_i32(path: impl AsRef<Path>, shape: &[usize], data: &[i32]) -> Result<()> {
    check_len(shape, data.len())?;
    let payload: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_raw(path.as_ref(), "<i4", shape, &payload)
}

pub fn write_u8(path: impl AsRef<Path>, shape: &[usize], data: &[u8]) -> Result<()> {
    check_len(shape, data.len())?;
    write_raw(path.as_ref(), "|u1", shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_byte_aligned() {
        for shape in [vec![1], vec![2, 3, 4], vec![21, 500, 375]] {
            let h = encode_header("<f4", &shape);
            assert_eq!(h.len() % 64, 0);
            assert_eq!(*h.last().unwrap(), b'\n');
        }
    }

    #[test]
    fn single_axis_shape_has_trailing_comma() {
        let h = encode_header("|u1", &[7]);
        let text = String::from_utf8_lossy(&h[10..]);
        assert!(text.contains("'shape': (7,)"));
    }

    #[test]
    fn sixteen_byte_aligned_fixture() {
        // Older numpy releases pad the header to 16 bytes.
        let dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3, 4), }";
        let mut header = dict.to_string();
        while (10 + header.len() + 1) % 16 != 0 {
            header.push(' ');
        }
        header.push('\n');
        assert_eq!((10 + header.len()) % 16, 0);
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        for i in 0..24 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let (h, payload) = parse(&bytes).unwrap();
        assert_eq!(h.shape, vec![2, 3, 4]);
        assert_eq!(h.descr, "<f4");
        assert!(!h.fortran_order);
        assert_eq!(payload.len(), 96);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(parse(b"NOTNUMPY00"), Err(Error::Decode(_))));
        let h = encode_header("<f4", &[2]);
        assert!(matches!(parse(&h[..20]), Err(Error::Decode(_))));
    }

    #[test]
    fn wrong_dtype_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.npy");
        write_i32(&p, &[2], &[1, 2]).unwrap();
        assert!(matches!(read_f32(&p), Err(Error::DType { .. })));
        assert_eq!(read_i32(&p).unwrap().data, vec![1, 2]);
    }

    #[test]
    fn short_payload_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.npy");
        write_f32(&p, &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_f32(&p), Err(Error::Decode(_))));
    }
}
