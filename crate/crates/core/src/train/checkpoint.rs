//! Checkpoint container: `BNNC`, a u32 version, a u32 record count, then
//! records of
//! `name_len u32 | name | dtype u8 | ndim u32 | dims u64* | payload_len u64 | payload`,
//! all little-endian.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BNNC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
            Payload::U8(_) => 2,
            Payload::U64(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
            Payload::U64(v) => v.len(),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
            Payload::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<u64>,
    pub payload: Payload,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Checkpoint {
            path: self.path.to_path_buf(),
            detail: format!("truncated at byte {} (wanted {n} more)", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], payload: Payload) {
        self.records.push(Record {
            name: name.into(),
            shape: shape.iter().map(|&d| d as u64).collect(),
            payload,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.payload.tag());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for d in &r.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            let mut payload = Vec::new();
            r.payload.write(&mut payload);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.fail("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(format!("format version {version}, expected {VERSION}")));
        }
        let count = r.u32()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.fail("record name is not UTF-8"))?;
            let tag = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(r.fail(format!("record {name} has {ndim} dimensions")));
            }
            let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let len = r.u64()? as usize;
            let raw = r.take(len)?;
            let width = match tag {
                0 => 4,
                1 | 3 => 8,
                2 => 1,
                _ => return Err(r.fail(format!("record {name} has unknown dtype {tag}"))),
            };
            if len % width != 0 {
                return Err(r.fail(format!("record {name} payload is not a whole number of elements")));
            }
            let payload = match tag {
                0 => Payload::F32(raw.chunks(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect()),
                1 => Payload::F64(raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect()),
                2 => Payload::U8(raw.to_vec()),
                _ => Payload::U64(raw.chunks(8).map(|c| u64::from_le_bytes(c.try_into().expect("8"))).collect()),
            };
            let elems: u64 = shape.iter().product();
            if elems != payload.len() as u64 {
                return Err(r.fail(format!("record {name}: shape {shape:?} vs {} elements", payload.len())));
            }
            records.push(Record { name, shape, payload });
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes after the last record"));
        }
        Ok(Checkpoint { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    fn need(&self, name: &str) -> Result<&Record> {
        self.get(name).ok_or_else(|| Error::Checkpoint {
            path: Default::default(),
            detail: format!("missing record {name}"),
        })
    }

    pub fn f32s(&self, name: &str) -> Result<(&[u64], &[f32])> {
        match self.need(name)? {
            Record { shape, payload: Payload::F32(v), .. } => Ok((shape, v)),
            _ => Err(Error::Checkpoint {
                path: Default::default(),
                detail: format!("record {name} is not f32"),
            }),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.need(name)? {
            Record { payload: Payload::U8(v), .. } => Ok(v),
            _ => Err(Error::Checkpoint {
                path: Default::default(),
                detail: format!("record {name} is not bytes"),
            }),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.need(name)? {
            Record { payload: Payload::U64(v), .. } => Ok(v),
            _ => Err(Error::Checkpoint {
                path: Default::default(),
                detail: format!("record {name} is not u64"),
            }),
        }
    }
}
