//! Checkpoint container: a versioned flat binary file.
//!
//! All integers are little-endian. Layout, byte for byte:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "MSRCKPT\0"
//! 8       4     u32 format version (currently 1)
//! 12      4     u32 entry count E
//! 16      8     u64 config length C
//! 24      C     resolved config text, UTF-8
//! ...           E manifest records:
//!                 u16 name length L, L bytes UTF-8 name,
//!                 u8 dtype (0 = f64, 1 = u64),
//!                 u8 rank R, R x u64 dimensions,
//!                 u64 byte offset of the values inside the payload
//! ...     8     u64 payload length P
//! ...     P     payload: each entry's values as 8-byte little-endian words,
//!               entries back to back in manifest order
//! ```
//!
//! Offsets must equal the running sum of the preceding entries' sizes, and
//! nothing may follow the payload. `f64` values are stored as their IEEE-754
//! bit patterns, so a load restores them exactly.

use std::path::Path;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"MSRCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Values {
    fn len(&self) -> usize {
        match self {
            Values::F64(v) => v.len(),
            Values::U64(v) => v.len(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            Values::F64(_) => 0,
            Values::U64(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Values,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: String,
    pub entries: Vec<Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
                CliError::data(format!("checkpoint truncated: need {n} bytes at offset {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| CliError::data("checkpoint length does not fit in memory"))
    }
}

impl Checkpoint {
    pub fn new(config: String) -> Self {
        Checkpoint { config, entries: Vec::new() }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) {
        self.push(name.into(), shape, Values::F64(values));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, values: Vec<u64>) {
        let n = values.len();
        self.push(name.into(), &[n], Values::U64(values));
    }

    fn push(&mut self, name: String, shape: &[usize], values: Values) {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "entry {name}: shape does not match values");
        self.entries.push(Entry { name, shape: shape.to_vec(), values });
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CliError::data(format!("checkpoint has no entry {name:?}")))
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Entry { shape, values: Values::F64(v), .. } => Ok((shape, v)),
            _ => Err(CliError::data(format!("checkpoint entry {name:?} is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            Entry { values: Values::U64(v), .. } => Ok(v),
            _ => Err(CliError::data(format!("checkpoint entry {name:?} is not u64"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        let mut offset = 0u64;
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.values.dtype());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * e.values.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for e in &self.entries {
            match &e.values {
                Values::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CliError::data("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::data(format!("checkpoint version {version} is not supported (expected {VERSION})")));
        }
        let count = r.u32()? as usize;
        let clen = r.len()?;
        let config =
            String::from_utf8(r.take(clen)?.to_vec()).map_err(|_| CliError::data("checkpoint config is not UTF-8"))?;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        let mut expected = 0usize;
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| CliError::data("checkpoint entry name is not UTF-8"))?;
            let dtype = r.u8()?;
            if dtype > 1 {
                return Err(CliError::data(format!("entry {name:?}: unknown dtype {dtype}")));
            }
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let offset = r.len()?;
            if offset != expected {
                return Err(CliError::data(format!("entry {name:?}: offset {offset}, expected {expected}")));
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| CliError::data(format!("entry {name:?}: shape overflows")))?;
            expected += n;
            manifest.push((name, dtype, shape, n / 8));
        }
        let plen = r.len()?;
        if plen != expected {
            return Err(CliError::data(format!("payload length {plen}, manifest needs {expected}")));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, dtype, shape, n) in manifest {
            let words = r.take(8 * n)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")));
            let values = match dtype {
                0 => Values::F64(words.map(f64::from_bits).collect()),
                _ => Values::U64(words.collect()),
            };
            entries.push(Entry { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(CliError::data(format!("{} trailing bytes after the payload", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::read(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}
