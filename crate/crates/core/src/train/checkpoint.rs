//! Single-file checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"RD2V"            magic
//! u32                format version (1)
//! [u8; 32]           SHA-256 digest of the training config
//! u64                completed steps
//! u64                seed
//! u32                blob count
//! per blob:
//!   u32              name length
//!   [u8]             name (UTF-8)
//!   u64, u64         rows, cols
//!   [f64]            rows * cols values, row-major
//! ```
//!
//! Blob names are prefixed `student/`, `teacher/`, `adam_m/` or `adam_v/`.

use std::io::{Read, Write};
use std::path::Path;

use crate::ema::ParameterSet;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const MAGIC: &[u8; 4] = b"RD2V";
pub const FORMAT_VERSION: u32 = 1;

const GROUPS: [&str; 4] = ["student", "teacher", "adam_m", "adam_v"];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_digest: [u8; 32],
    pub step: u64,
    pub seed: u64,
    pub student: ParameterSet,
    pub teacher: ParameterSet,
    pub adam_m: ParameterSet,
    pub adam_v: ParameterSet,
}

impl Checkpoint {
    fn groups(&self) -> [&ParameterSet; 4] {
        [&self.student, &self.teacher, &self.adam_m, &self.adam_v]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let count: usize = self.groups().iter().map(|g| g.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, group) in GROUPS.iter().zip(self.groups()) {
            for (name, m) in group.iter() {
                let full = format!("{prefix}/{name}");
                out.extend_from_slice(&(full.len() as u32).to_le_bytes());
                out.extend_from_slice(full.as_bytes());
                out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
                out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
                for v in m.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let step = r.u64()?;
        let seed = r.u64()?;
        let count = r.u32()?;
        let mut groups: [ParameterSet; 4] = Default::default();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("blob name is not UTF-8".into()))?
                .to_string();
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Format(format!("blob {name:?} is truncated")))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::new(rows, cols, data).map_err(|e| Error::Format(format!("blob {name:?}: {e}")))?;
            let (prefix, rest) = name
                .split_once('/')
                .ok_or_else(|| Error::Format(format!("blob name {name:?} has no group")))?;
            let g = GROUPS
                .iter()
                .position(|&p| p == prefix)
                .ok_or_else(|| Error::Format(format!("unknown blob group {prefix:?}")))?;
            groups[g].insert(rest, m);
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        let [student, teacher, adam_m, adam_v] = groups;
        for g in [&teacher, &adam_m, &adam_v] {
            student
                .check_same_structure(g)
                .map_err(|e| Error::Format(format!("inconsistent checkpoint: {e}")))?;
        }
        Ok(Self {
            config_digest,
            step,
            seed,
            student,
            teacher,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
