//! Binary tensor container shared by weight and saliency checkpoints.
//!
//! All integers are little-endian.
//!
//! ```text
//! header   magic "ZCNASCKP" | version u32 | kind u8 | 3 zero bytes
//!          spec_hash [32] | seed u64 | aux u64 | sections u32
//! section  name_len u16 | name utf-8 | precision u8 (4 or 8) | ndim u8
//!          dims u64 * ndim | payload row-major | crc32 u32
//! trailer  crc32 u32 of every preceding byte
//! ```
//!
//! A section's crc32 covers its bytes from `name_len` through the payload.

use crate::archspace::{SearchSpaceSpec, SpecHash};
use crate::autodiff::{Precision, Real, Tensor};
use crate::supernet::SupernetWeights;
use crate::zerocost::SaliencyTable;

use super::IoError;

pub const MAGIC: &[u8; 8] = b"ZCNASCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CheckpointKind {
    Weights = 1,
    Saliency = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub precision: Precision,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl Section {
    pub fn from_tensor<T: Real>(name: &str, t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.len() * T::PRECISION.bytes());
        for &v in t.data() {
            v.to_le(&mut payload);
        }
        Self { name: name.to_string(), precision: T::PRECISION, shape: t.shape().to_vec(), payload }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>, IoError> {
        if self.precision != T::PRECISION {
            return Err(IoError::Format(format!(
                "section {} holds {:?} values, expected {:?}",
                self.name,
                self.precision,
                T::PRECISION
            )));
        }
        let data = self.payload.chunks_exact(T::PRECISION.bytes()).map(T::from_le).collect();
        Tensor::new(self.shape.clone(), data)
            .map_err(|e| IoError::Format(format!("section {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub spec_hash: SpecHash,
    pub seed: u64,
    /// Training step for weights, batch size for saliency.
    pub aux: u64,
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&self.spec_hash.0);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.aux.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            let start = out.len();
            out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(s.precision.bytes() as u8);
            out.push(s.shape.len() as u8);
            for &d in &s.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&s.payload);
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        if bytes.len() < 4 {
            return Err(IoError::Format("truncated checkpoint".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(IoError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(IoError::Version { found: version, supported: CHECKPOINT_VERSION });
        }
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(IoError::Format("file checksum mismatch".into()));
        }
        let kind = match r.take(4)?[0] {
            1 => CheckpointKind::Weights,
            2 => CheckpointKind::Saliency,
            k => return Err(IoError::Format(format!("unknown checkpoint kind {k}"))),
        };
        let spec_hash = SpecHash(r.take(32)?.try_into().expect("32 bytes"));
        let seed = r.u64()?;
        let aux = r.u64()?;
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let start = r.pos;
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| IoError::Format("section name is not utf-8".into()))?;
            let precision = match r.take(1)?[0] {
                4 => Precision::F32,
                8 => Precision::F64,
                p => return Err(IoError::Format(format!("section {name}: unknown precision {p}"))),
            };
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(
                    usize::try_from(r.u64()?).map_err(|_| IoError::Format("dimension overflow".into()))?,
                );
            }
            let len = shape
                .iter()
                .try_fold(precision.bytes(), |a, &d| a.checked_mul(d))
                .ok_or_else(|| IoError::Format(format!("section {name}: size overflow")))?;
            let payload = r.take(len)?.to_vec();
            let crc = crc32fast::hash(&body[start..r.pos]);
            if crc != r.u32()? {
                return Err(IoError::Format(format!("section {name}: checksum mismatch")));
            }
            sections.push(Section { name, precision, shape, payload });
        }
        if r.pos != body.len() {
            return Err(IoError::Format("trailing bytes after the last section".into()));
        }
        Ok(Self { kind, spec_hash, seed, aux, sections })
    }

    fn expect(&self, kind: CheckpointKind, spec: &SearchSpaceSpec) -> Result<(), IoError> {
        if self.kind != kind {
            return Err(IoError::Format(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        let want = spec.hash();
        if self.spec_hash != want {
            return Err(IoError::SpecMismatch { expected: want.to_hex(), found: self.spec_hash.to_hex() });
        }
        Ok(())
    }

    pub fn from_weights<T: Real>(w: &SupernetWeights<T>, step: u64) -> Self {
        Self {
            kind: CheckpointKind::Weights,
            spec_hash: w.spec().hash(),
            seed: w.seed(),
            aux: step,
            sections: w.params().iter().map(|p| Section::from_tensor(&p.name, &p.tensor)).collect(),
        }
    }

    /// Rebuilds weights for `spec`; returns them with the stored step.
    pub fn into_weights<T: Real>(
        &self,
        spec: &SearchSpaceSpec,
    ) -> Result<(SupernetWeights<T>, u64), IoError> {
        self.expect(CheckpointKind::Weights, spec)?;
        let parts = self
            .sections
            .iter()
            .map(|s| Ok((s.name.clone(), s.to_tensor()?)))
            .collect::<Result<_, IoError>>()?;
        let w = SupernetWeights::from_parts(spec, self.seed, parts)
            .map_err(|e| IoError::Format(e.to_string()))?;
        Ok((w, self.aux))
    }

    pub fn from_saliency(t: &SaliencyTable) -> Self {
        Self {
            kind: CheckpointKind::Saliency,
            spec_hash: t.spec().hash(),
            seed: t.seed(),
            aux: t.batch() as u64,
            sections: t.tensors().map(|(n, v)| Section::from_tensor(n, v)).collect(),
        }
    }

    pub fn into_saliency(&self, spec: &SearchSpaceSpec) -> Result<SaliencyTable, IoError> {
        self.expect(CheckpointKind::Saliency, spec)?;
        let parts = self
            .sections
            .iter()
            .map(|s| Ok((s.name.clone(), s.to_tensor::<f64>()?)))
            .collect::<Result<_, IoError>>()?;
        SaliencyTable::from_raw(spec, self.seed, self.aux as usize, parts)
            .map_err(|e| IoError::Format(e.to_string()))
    }

    /// Precision of the stored tensors, if they agree.
    pub fn precision(&self) -> Option<Precision> {
        let p = self.sections.first()?.precision;
        self.sections.iter().all(|s| s.precision == p).then_some(p)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IoError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
