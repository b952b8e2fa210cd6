//! Versioned binary checkpoint container.
//!
//! ```text
//! "CIMC" | version u8 | phase u32 | rng seed u64 | rng word position u128
//!        | json length u32 | architecture + class order (JSON)
//!        | theta f64[] | omega f64[] | phi f64[] | phi_trainable u8[]
//! ```
//!
//! Arrays are length-prefixed with a u32; everything is little-endian.

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelState};
use crate::error::{Error, Result};
use crate::pau::CimParams;

const MAGIC: &[u8; 4] = b"CIMC";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    classes: usize,
    class_order: Vec<usize>,
    num_degree: usize,
    den_degree: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub phase: usize,
    pub state: ModelState,
    /// Global class ids in the order the classifier rows were added.
    pub class_order: Vec<usize>,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad length".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.state;
        let header = Header {
            arch: s.arch.clone(),
            classes: s.classes,
            class_order: self.class_order.clone(),
            num_degree: s.phi.num_degree,
            den_degree: s.phi.den_degree,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.phase as u32).to_le_bytes());
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        put_f64s(&mut out, &s.theta);
        put_f64s(&mut out, &s.omega);
        put_f64s(&mut out, &s.phi.coeffs);
        out.extend_from_slice(&(s.phi_trainable.len() as u32).to_le_bytes());
        out.extend(s.phi_trainable.iter().map(|&t| t as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let phase = r.u32()? as usize;
        let rng_seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let rng_word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let json_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let theta = r.f64s()?;
        let omega = r.f64s()?;
        let coeffs = r.f64s()?;
        let n = r.u32()? as usize;
        let phi_trainable = r.take(n)?.iter().map(|&b| b != 0).collect();
        let state = ModelState {
            theta,
            omega,
            classes: header.classes,
            phi: CimParams {
                num_degree: header.num_degree,
                den_degree: header.den_degree,
                coeffs,
            },
            phi_trainable,
            arch: header.arch,
        };
        if state.theta.len() != state.arch.theta_len()
            || state.omega.len() != state.classes * state.arch.feature_dim()
            || state.phi.coeffs.len() != state.arch.activation_sites() * state.phi.per_site()
        {
            return Err(Error::Checkpoint("array lengths disagree with the architecture".into()));
        }
        Ok(Checkpoint {
            phase,
            state,
            class_order: header.class_order,
            rng_seed,
            rng_word_pos,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&crate::io::read(path)?)
    }
}
