//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "AMOTNET\0" | version u32 | topology 6 x u32 | flags u32
//! tensor count u32 | per tensor: len u64, len x f64
//! [flags & 1] step u64 | episode u64 | epsilon f64
//!             beta1 f64 | beta2 f64 | eps f64 | t u64 | m tensors | v tensors
//! sha256 of everything above (32 bytes)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Adam, NetError, NetworkParams, Topology};

const MAGIC: &[u8; 8] = b"AMOTNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const HAS_TRAINING: u32 = 1;

/// Trainer counters and optimizer moments stored next to the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub step: u64,
    pub episode: u64,
    pub epsilon: f64,
    pub optimizer: Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub training: Option<TrainingState>,
}

fn put_tensors(out: &mut Vec<u8>, params: &NetworkParams) {
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NetError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self, into: &mut NetworkParams) -> Result<(), NetError> {
        let count = self.u32()? as usize;
        let mut dst = into.tensors_mut();
        if count != dst.len() {
            return Err(NetError::Corrupt(format!("expected {} tensors, found {count}", dst.len())));
        }
        for (i, t) in dst.iter_mut().enumerate() {
            let len = self.u64()?;
            if len != t.len() as u64 {
                return Err(NetError::Corrupt(format!("tensor {i} has {len} values, expected {}", t.len())));
            }
            for v in t.iter_mut() {
                *v = self.f64()?;
            }
        }
        Ok(())
    }
}

fn topology_fields(t: &Topology) -> [usize; 6] {
    [t.observation_dim, t.n_agents, t.encoder1, t.encoder2, t.trunk, t.hidden]
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for f in topology_fields(&self.params.topology) {
            out.extend_from_slice(&(f as u32).to_le_bytes());
        }
        let flags = if self.training.is_some() { HAS_TRAINING } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        put_tensors(&mut out, &self.params);
        if let Some(tr) = &self.training {
            out.extend_from_slice(&tr.step.to_le_bytes());
            out.extend_from_slice(&tr.episode.to_le_bytes());
            out.extend_from_slice(&tr.epsilon.to_le_bytes());
            let o = &tr.optimizer;
            for v in [o.beta1, o.beta2, o.epsilon] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&o.t.to_le_bytes());
            put_tensors(&mut out, &o.m);
            put_tensors(&mut out, &o.v);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Decodes a container. With `expected` set, a different topology is an
    /// error.
    pub fn from_bytes(bytes: &[u8], expected: Option<Topology>) -> Result<Self, NetError> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(NetError::Corrupt("bad magic".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(NetError::Corrupt("digest mismatch".into()));
        }
        let mut r = Reader {
            bytes: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NetError::Corrupt(format!("unsupported version {version}")));
        }
        let mut f = [0usize; 6];
        for v in &mut f {
            *v = r.u32()? as usize;
        }
        let found = Topology {
            observation_dim: f[0],
            n_agents: f[1],
            encoder1: f[2],
            encoder2: f[3],
            trunk: f[4],
            hidden: f[5],
        };
        if let Some(expected) = expected {
            if expected != found {
                return Err(NetError::TopologyMismatch { expected, found });
            }
        }
        found
            .validate()
            .map_err(|_| NetError::Corrupt(format!("invalid topology {found}")))?;
        let flags = r.u32()?;
        let mut params = NetworkParams::zeros(found);
        r.tensors(&mut params)?;
        let training = if flags & HAS_TRAINING != 0 {
            let step = r.u64()?;
            let episode = r.u64()?;
            let epsilon = r.f64()?;
            let mut optimizer = Adam::new(&params);
            optimizer.beta1 = r.f64()?;
            optimizer.beta2 = r.f64()?;
            optimizer.epsilon = r.f64()?;
            optimizer.t = r.u64()?;
            r.tensors(&mut optimizer.m)?;
            r.tensors(&mut optimizer.v)?;
            Some(TrainingState {
                step,
                episode,
                epsilon,
                optimizer,
            })
        } else {
            None
        };
        if r.pos != body.len() {
            return Err(NetError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { params, training })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<Topology>) -> Result<Self, NetError> {
        Self::from_bytes(&std::fs::read(path)?, expected)
    }
}
