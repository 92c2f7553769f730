//! Minimal NPY v1.0 reader and writer.
//!
//! Only little-endian, C-order payloads are accepted. Float payloads are
//! widened to `f64`; integer and boolean payloads are kept separate so callers
//! can reject them where a real tensor is required.

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Float(Vec<f64>),
    Int(Vec<i64>),
    Bool(Vec<bool>),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Float(_) => "float",
            Payload::Int(_) => "integer",
            Payload::Bool(_) => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
    Bool,
    Int { bytes: usize, signed: bool },
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self, String> {
        if !descr.is_ascii() || descr.len() < 2 {
            return Err(format!("unrecognised dtype {descr:?}"));
        }
        let (order, tail) = descr.split_at(1);
        match order {
            "<" | "|" => {}
            ">" => return Err(format!("big-endian dtype {descr:?} is not supported")),
            "=" => return Err(format!("native-order dtype {descr:?} is ambiguous")),
            _ => return Err(format!("unrecognised dtype {descr:?}")),
        }
        match tail {
            "f4" => Ok(Dtype::F4),
            "f8" => Ok(Dtype::F8),
            "b1" => Ok(Dtype::Bool),
            "i1" | "i2" | "i4" | "i8" | "u1" | "u2" | "u4" | "u8" => Ok(Dtype::Int {
                bytes: tail[1..].parse().expect("digit suffix"),
                signed: tail.starts_with('i'),
            }),
            _ => Err(format!("unsupported dtype {descr:?}")),
        }
    }

    fn item_size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
            Dtype::Bool => 1,
            Dtype::Int { bytes, .. } => bytes,
        }
    }
}

/// Decodes an in-memory NPY v1.0 container.
pub fn decode(bytes: &[u8]) -> Result<NpyArray, String> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err("missing NPY magic".into());
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(format!(
            "unsupported NPY version {}.{} (only 1.0)",
            bytes[6], bytes[7]
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body_start = 10 + header_len;
    if bytes.len() < body_start {
        return Err("truncated header".into());
    }
    let header = std::str::from_utf8(&bytes[10..body_start])
        .map_err(|_| "header is not valid text".to_string())?;
    let header = Header::parse(header)?;
    if header.fortran_order {
        return Err("Fortran-order payloads are not supported".into());
    }
    let dtype = Dtype::parse(&header.descr)?;
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("shape overflows")?;
    let body = &bytes[body_start..];
    let expected = count * dtype.item_size();
    if body.len() != expected {
        return Err(format!(
            "payload has {} bytes, shape {:?} of {} needs {expected}",
            body.len(),
            header.shape,
            header.descr
        ));
    }
    let payload = match dtype {
        Dtype::F8 => Payload::Float(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F4 => Payload::Float(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        ),
        Dtype::Bool => Payload::Bool(
            body.iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(format!("boolean byte {other} is not 0 or 1")),
                })
                .collect::<Result<_, _>>()?,
        ),
        Dtype::Int { bytes: n, signed } => Payload::Int(
            body.chunks_exact(n)
                .map(|c| decode_int(c, signed))
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok(NpyArray {
        shape: header.shape,
        payload,
    })
}

fn decode_int(chunk: &[u8], signed: bool) -> Result<i64, String> {
    let mut buf = [0u8; 8];
    buf[..chunk.len()].copy_from_slice(chunk);
    if signed {
        // sign-extend
        if chunk[chunk.len() - 1] & 0x80 != 0 {
            buf[chunk.len()..].fill(0xff);
        }
        Ok(i64::from_le_bytes(buf))
    } else {
        i64::try_from(u64::from_le_bytes(buf)).map_err(|_| "unsigned value exceeds i64".into())
    }
}

/// Encodes an `f64` array as an NPY v1.0 container (`<f8`, C order).
pub fn encode_f64(shape: &[usize], data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let shape_str = match shape {
        [one] => format!("({one},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_str}, }}");
    // total preamble length (magic + version + len + header + '\n') is padded to 64
    let unpadded = 10 + header.len() + 1;
    let padding = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[derive(Debug)]
struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl Header {
    /// Parses the Python dict literal numpy writes, e.g.
    /// `{'descr': '<f8', 'fortran_order': False, 'shape': (3, 4), }`.
    fn parse(text: &str) -> Result<Self, String> {
        let body = text
            .trim_end_matches(['\n', ' ', '\0'])
            .trim()
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or("header is not a dict literal")?;
        let mut cursor = Cursor { s: body, pos: 0 };
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        loop {
            cursor.skip_ws();
            if cursor.done() {
                break;
            }
            let key = cursor.string()?;
            cursor.skip_ws();
            cursor.expect(':')?;
            cursor.skip_ws();
            match key.as_str() {
                "descr" => descr = Some(cursor.string()?),
                "fortran_order" => fortran = Some(cursor.boolean()?),
                "shape" => shape = Some(cursor.tuple()?),
                other => return Err(format!("unexpected header key {other:?}")),
            }
            cursor.skip_ws();
            if !cursor.eat(',') {
                cursor.skip_ws();
                if !cursor.done() {
                    return Err("expected ',' between header entries".into());
                }
            }
        }
        Ok(Header {
            descr: descr.ok_or("header lacks 'descr'")?,
            fortran_order: fortran.ok_or("header lacks 'fortran_order'")?,
            shape: shape.ok_or("header lacks 'shape'")?,
        })
    }
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn rest(&self) -> &str {
        &self.s[self.pos..]
    }

    fn done(&self) -> bool {
        self.pos >= self.s.len()
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.s.len() - trimmed.len();
    }

    fn eat(&mut self, c: char) -> bool {
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected {c:?} in header at offset {}", self.pos))
        }
    }

    fn string(&mut self) -> Result<String, String> {
        let quote = match self.rest().chars().next() {
            Some(q @ ('\'' | '"')) => q,
            _ => return Err(format!("expected quoted string at offset {}", self.pos)),
        };
        self.pos += 1;
        let end = self
            .rest()
            .find(quote)
            .ok_or("unterminated string in header")?;
        let value = self.rest()[..end].to_string();
        self.pos += end + 1;
        Ok(value)
    }

    fn boolean(&mut self) -> Result<bool, String> {
        if self.rest().starts_with("True") {
            self.pos += 4;
            Ok(true)
        } else if self.rest().starts_with("False") {
            self.pos += 5;
            Ok(false)
        } else {
            Err("expected True or False".into())
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>, String> {
        self.expect('(')?;
        let end = self.rest().find(')').ok_or("unterminated shape tuple")?;
        let inner = &self.rest()[..end];
        let dims = inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.trim_end_matches('L')
                    .parse::<usize>()
                    .map_err(|_| format!("bad shape entry {s:?}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.pos += end + 1;
        Ok(dims)
    }
}
