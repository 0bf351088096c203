//! Reader and writer for the `.npy` array format (versions 1.0, 2.0, 3.0).
//!
//! A file is the magic `\x93NUMPY`, a major/minor version byte pair, a
//! little-endian header length (`u16` for v1, `u32` for v2/v3), and an ASCII
//! Python-literal dict with keys `descr`, `fortran_order` and `shape`,
//! padded with spaces and terminated by `\n`. Raw data follows.

use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NpyError {
    #[error("not an npy payload (bad magic)")]
    BadMagic,
    #[error("unsupported npy version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("malformed npy header: {0}")]
    BadHeader(String),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("fortran-ordered arrays are not supported")]
    FortranOrder,
    #[error("truncated npy payload: need {expected} bytes, have {got}")]
    Truncated { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum NpyData {
    Bool(Vec<bool>),
    U8(Vec<u8>),
    I8(Vec<i8>),
    U16(Vec<u16>),
    I16(Vec<i16>),
    U32(Vec<u32>),
    I32(Vec<i32>),
    U64(Vec<u64>),
    I64(Vec<i64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

macro_rules! dispatch {
    ($data:expr, $v:ident => $body:expr) => {
        match $data {
            NpyData::Bool($v) => $body,
            NpyData::U8($v) => $body,
            NpyData::I8($v) => $body,
            NpyData::U16($v) => $body,
            NpyData::I16($v) => $body,
            NpyData::U32($v) => $body,
            NpyData::I32($v) => $body,
            NpyData::U64($v) => $body,
            NpyData::I64($v) => $body,
            NpyData::F32($v) => $body,
            NpyData::F64($v) => $body,
        }
    };
}

impl NpyData {
    pub fn len(&self) -> usize {
        dispatch!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The numpy `descr` string for this element type.
    pub fn descr(&self) -> &'static str {
        match self {
            NpyData::Bool(_) => "|b1",
            NpyData::U8(_) => "|u1",
            NpyData::I8(_) => "|i1",
            NpyData::U16(_) => "<u2",
            NpyData::I16(_) => "<i2",
            NpyData::U32(_) => "<u4",
            NpyData::I32(_) => "<i4",
            NpyData::U64(_) => "<u8",
            NpyData::I64(_) => "<i8",
            NpyData::F32(_) => "<f4",
            NpyData::F64(_) => "<f8",
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            NpyData::Bool(v) => v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            NpyData::U8(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::I8(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::U16(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::I16(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::U32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::I32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::U64(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::I64(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::F64(v) => v.clone(),
        }
    }

    /// Integer view, or `None` for floating-point data or negative values.
    pub fn to_usize(&self) -> Option<Vec<usize>> {
        fn conv<T: Copy + TryInto<usize>>(v: &[T]) -> Option<Vec<usize>> {
            v.iter().map(|&x| x.try_into().ok()).collect()
        }
        match self {
            NpyData::Bool(v) => Some(v.iter().map(|&b| b as usize).collect()),
            NpyData::U8(v) => conv(v),
            NpyData::I8(v) => conv(v),
            NpyData::U16(v) => conv(v),
            NpyData::I16(v) => conv(v),
            NpyData::U32(v) => conv(v),
            NpyData::I32(v) => conv(v),
            NpyData::U64(v) => conv(v),
            NpyData::I64(v) => conv(v),
            NpyData::F32(_) | NpyData::F64(_) => None,
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            NpyData::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
            NpyData::U8(v) => out.extend_from_slice(v),
            NpyData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            other => dispatch!(other, v => {
                for x in v {
                    out.extend_from_slice(&LeBytes::le(x));
                }
            }),
        }
    }
}

trait LeBytes {
    fn le(&self) -> Vec<u8>;
}

macro_rules! le_bytes {
    ($($t:ty),*) => {$(
        impl LeBytes for $t {
            fn le(&self) -> Vec<u8> {
                self.to_le_bytes().to_vec()
            }
        }
    )*};
}
le_bytes!(u8, i8, u16, i16, u32, i32, u64, i64, f32, f64);

impl LeBytes for bool {
    fn le(&self) -> Vec<u8> {
        vec![*self as u8]
    }
}

/// A C-ordered dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray, NpyError> {
    if bytes.len() < 8 || &bytes[..6] != MAGIC {
        return Err(NpyError::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, header_start) = match major {
        1 => {
            need(bytes, 10)?;
            (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10)
        }
        2 | 3 => {
            need(bytes, 12)?;
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        _ => return Err(NpyError::UnsupportedVersion(major, minor)),
    };
    let data_start = header_start + header_len;
    need(bytes, data_start)?;
    let header = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| NpyError::BadHeader("header is not UTF-8".into()))?;
    let header = parse_header(header)?;
    if header.fortran_order {
        return Err(NpyError::FortranOrder);
    }
    let count: usize = header.shape.iter().product();
    let elem = dtype_size(&header.descr)?;
    let expected = count
        .checked_mul(elem)
        .ok_or_else(|| NpyError::BadHeader("shape overflows".into()))?;
    need(bytes, data_start + expected)?;
    let raw = &bytes[data_start..data_start + expected];
    let data = decode(&header.descr, raw)?;
    Ok(NpyArray { shape: header.shape, data })
}

/// Serialises as npy v1.0 with the header padded to a 64-byte boundary.
pub fn write_npy(array: &NpyArray) -> Vec<u8> {
    let shape = match array.shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", array.shape[0]),
        _ => format!(
            "({})",
            array.shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.data.descr(),
        shape
    );
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + array.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    array.data.write_le(&mut out);
    out
}

fn need(bytes: &[u8], expected: usize) -> Result<(), NpyError> {
    if bytes.len() < expected {
        Err(NpyError::Truncated { expected, got: bytes.len() })
    } else {
        Ok(())
    }
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the header dict literal. Only the value forms numpy emits are
/// accepted: a quoted string, `True`/`False`, and a tuple of integers.
fn parse_header(text: &str) -> Result<Header, NpyError> {
    let bad = |m: &str| NpyError::BadHeader(m.to_string());
    let body = text.trim().strip_prefix('{').and_then(|s| s.strip_suffix('}'));
    let mut rest = body.ok_or_else(|| bad("header is not a dict"))?.trim();

    let (mut descr, mut fortran, mut shape) = (None, None, None);
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or_else(|| bad("expected quoted key"))?;
        let after = after.trim_start().strip_prefix(':').ok_or_else(|| bad("expected ':'"))?;
        let after = after.trim_start();
        rest = match key {
            "descr" => {
                let (v, r) = take_quoted(after).ok_or_else(|| bad("descr must be a string"))?;
                descr = Some(v.to_string());
                r
            }
            "fortran_order" => {
                if let Some(r) = after.strip_prefix("True") {
                    fortran = Some(true);
                    r
                } else if let Some(r) = after.strip_prefix("False") {
                    fortran = Some(false);
                    r
                } else {
                    return Err(bad("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let inner = after.strip_prefix('(').ok_or_else(|| bad("shape must be a tuple"))?;
                let close = inner.find(')').ok_or_else(|| bad("unterminated shape"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim_end_matches('L').parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad("shape entries must be non-negative integers"))?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(NpyError::BadHeader(format!("unexpected key {other:?}"))),
        }
        .trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    Ok(Header {
        descr: descr.ok_or_else(|| bad("missing descr"))?,
        fortran_order: fortran.ok_or_else(|| bad("missing fortran_order"))?,
        shape: shape.ok_or_else(|| bad("missing shape"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let end = s[1..].find(q)? + 1;
    Some((&s[1..end], &s[end + 1..]))
}

/// Normalises byte-order markers: `=` is native (little-endian on every
/// supported target), `|` means not applicable.
fn canonical(descr: &str) -> Result<(char, usize), NpyError> {
    let unsupported = || NpyError::UnsupportedDtype(descr.to_string());
    let mut chars = descr.chars();
    let order = chars.next().ok_or_else(unsupported)?;
    let (kind, size) = match order {
        '<' | '|' | '=' => {
            let kind = chars.next().ok_or_else(unsupported)?;
            let size: usize = chars.as_str().parse().map_err(|_| unsupported())?;
            (kind, size)
        }
        _ => return Err(unsupported()),
    };
    if cfg!(target_endian = "big") && order == '=' && size > 1 {
        return Err(unsupported());
    }
    Ok((kind, size))
}

fn dtype_size(descr: &str) -> Result<usize, NpyError> {
    let (kind, size) = canonical(descr)?;
    match (kind, size) {
        ('b', 1) | ('u', 1 | 2 | 4 | 8) | ('i', 1 | 2 | 4 | 8) | ('f', 4 | 8) => Ok(size),
        _ => Err(NpyError::UnsupportedDtype(descr.to_string())),
    }
}

fn decode(descr: &str, raw: &[u8]) -> Result<NpyData, NpyError> {
    macro_rules! le {
        ($t:ty, $n:expr) => {
            raw.chunks_exact($n)
                .map(|c| <$t>::from_le_bytes(c.try_into().expect("element-sized chunk")))
                .collect()
        };
    }
    let (kind, size) = canonical(descr)?;
    Ok(match (kind, size) {
        ('b', 1) => NpyData::Bool(raw.iter().map(|&b| b != 0).collect()),
        ('u', 1) => NpyData::U8(raw.to_vec()),
        ('i', 1) => NpyData::I8(raw.iter().map(|&b| b as i8).collect()),
        ('u', 2) => NpyData::U16(le!(u16, 2)),
        ('i', 2) => NpyData::I16(le!(i16, 2)),
        ('u', 4) => NpyData::U32(le!(u32, 4)),
        ('i', 4) => NpyData::I32(le!(i32, 4)),
        ('u', 8) => NpyData::U64(le!(u64, 8)),
        ('i', 8) => NpyData::I64(le!(i64, 8)),
        ('f', 4) => NpyData::F32(le!(f32, 4)),
        ('f', 8) => NpyData::F64(le!(f64, 8)),
        _ => return Err(NpyError::UnsupportedDtype(descr.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds an npy v1 payload byte by byte from the published layout,
    /// independently of [`write_npy`].
    fn fixture(header_dict: &str, data: &[u8]) -> Vec<u8> {
        let mut header = header_dict.to_string();
        while (10 + header.len() + 1) % 64 != 0 {
            header.push(' ');
        }
        header.push('\n');
        let mut out = b"\x93NUMPY\x01\x00".to_vec();
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn two_by_two_u8() {
        let bytes = fixture("{'descr': '|u1', 'fortran_order': False, 'shape': (2, 2), }", &[0, 1, 2, 3]);
        let a = parse_npy(&bytes).unwrap();
        assert_eq!(a.shape, vec![2, 2]);
        assert_eq!(a.data, NpyData::U8(vec![0, 1, 2, 3]));
        assert_eq!(write_npy(&a), bytes);
    }

    #[test]
    fn scalar_shape() {
        let bytes = fixture(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (), }",
            &2.5f64.to_le_bytes(),
        );
        let a = parse_npy(&bytes).unwrap();
        assert!(a.shape.is_empty());
        assert_eq!(a.data, NpyData::F64(vec![2.5]));
    }

    #[test]
    fn v2_header_and_key_order() {
        let dict = "{'shape': (3,), 'fortran_order': False, 'descr': '<i4'}";
        let mut header = dict.to_string();
        header.push('\n');
        let mut bytes = b"\x93NUMPY\x02\x00".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        for v in [-1i32, 7, 300] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let a = parse_npy(&bytes).unwrap();
        assert_eq!(a.shape, vec![3]);
        assert_eq!(a.data, NpyData::I32(vec![-1, 7, 300]));
    }

    #[test]
    fn distinct_errors() {
        let good = fixture("{'descr': '|u1', 'fortran_order': False, 'shape': (4,), }", &[1, 2, 3, 4]);

        let mut bad = good.clone();
        bad[1] = b'X';
        assert_eq!(parse_npy(&bad), Err(NpyError::BadMagic));

        assert!(matches!(parse_npy(&good[..good.len() - 1]), Err(NpyError::Truncated { .. })));
        assert!(matches!(parse_npy(&good[..20]), Err(NpyError::Truncated { .. })));

        let f = fixture("{'descr': '|u1', 'fortran_order': True, 'shape': (2, 2), }", &[0; 4]);
        assert_eq!(parse_npy(&f), Err(NpyError::FortranOrder));

        let d = fixture("{'descr': '<c16', 'fortran_order': False, 'shape': (1,), }", &[0; 16]);
        assert!(matches!(parse_npy(&d), Err(NpyError::UnsupportedDtype(_))));

        let be = fixture("{'descr': '>f8', 'fortran_order': False, 'shape': (1,), }", &[0; 8]);
        assert!(matches!(parse_npy(&be), Err(NpyError::UnsupportedDtype(_))));

        let mut v = good.clone();
        v[6] = 9;
        assert_eq!(parse_npy(&v), Err(NpyError::UnsupportedVersion(9, 0)));

        let h = fixture("{'descr': '|u1', 'shape': (4,), }", &[0; 4]);
        assert!(matches!(parse_npy(&h), Err(NpyError::BadHeader(_))));
    }

    #[test]
    fn header_alignment() {
        let a = NpyArray::new(vec![5, 3], NpyData::F32(vec![0.5; 15]));
        let bytes = write_npy(&a);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(bytes[10 + hlen - 1], b'\n');
    }
}
