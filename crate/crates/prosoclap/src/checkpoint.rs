//! Encoder checkpoint: one binary archive holding the resolved config, the
//! text frontend, named parameter tensors (f32 little-endian), optimizer
//! state (f64, for exact resume), the step counter and the training rng state.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::text::TextFrontend;

const MAGIC: &[u8; 4] = b"PCP1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 word position split into (high, low) halves.
    pub word_pos: (u64, u64),
}

impl RngState {
    pub fn capture(rng: &ChaCha20Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: ((pos >> 64) as u64, pos as u64),
        }
    }

    pub fn restore(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos.0 as u128) << 64) | self.word_pos.1 as u128);
        rng
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    frontend: TextFrontend,
    step: u64,
    adam_t: u64,
    rng: RngState,
}

pub struct Checkpoint {
    pub config: RunConfig,
    pub frontend: TextFrontend,
    pub step: u64,
    pub adam_t: u64,
    pub rng: RngState,
    pub params: Vec<(String, Array2<f64>)>,
    /// Adam first/second moments by parameter name.
    pub opt_state: Vec<(String, Array2<f64>, Array2<f64>)>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = Header {
            config: self.config.clone(),
            frontend: self.frontend.clone(),
            step: self.step,
            adam_t: self.adam_t,
            rng: self.rng.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);

        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, tensor) in &self.params {
            write_name(&mut out, name);
            out.extend_from_slice(&(tensor.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(tensor.ncols() as u32).to_le_bytes());
            for &v in tensor.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.opt_state.len() as u32).to_le_bytes());
        for (name, m, v) in &self.opt_state {
            write_name(&mut out, name);
            out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
            for &x in m.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for &x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r: &[u8] = &bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::CheckpointMalformed("truncated".into()))?;
        if &magic != MAGIC {
            return Err(Error::CheckpointMalformed("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::CheckpointMalformed(format!("unsupported version {version}")));
        }
        let json_len = read_u32(&mut r)? as usize;
        if r.len() < json_len {
            return Err(Error::CheckpointMalformed("truncated header".into()));
        }
        let (json, rest) = r.split_at(json_len);
        r = rest;
        let mut header: Header = serde_json::from_slice(json)?;
        header.frontend.rebuild_indexes();

        let n_params = read_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = read_name(&mut r)?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut tensor = Array2::zeros((rows, cols));
            for i in 0..rows {
                for j in 0..cols {
                    tensor[(i, j)] = f32::from_le_bytes(read_arr(&mut r)?) as f64;
                }
            }
            params.push((name, tensor));
        }
        let n_opt = read_u32(&mut r)? as usize;
        let mut opt_state = Vec::with_capacity(n_opt);
        for _ in 0..n_opt {
            let name = read_name(&mut r)?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut m = Array2::zeros((rows, cols));
            let mut v = Array2::zeros((rows, cols));
            for i in 0..rows {
                for j in 0..cols {
                    m[(i, j)] = f64::from_le_bytes(read_arr(&mut r)?);
                }
            }
            for i in 0..rows {
                for j in 0..cols {
                    v[(i, j)] = f64::from_le_bytes(read_arr(&mut r)?);
                }
            }
            opt_state.push((name, m, v));
        }
        Ok(Checkpoint {
            config: header.config,
            frontend: header.frontend,
            step: header.step,
            adam_t: header.adam_t,
            rng: header.rng,
            params,
            opt_state,
        })
    }
}

fn write_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn read_name(r: &mut &[u8]) -> Result<String> {
    let len = read_u32(r)? as usize;
    if r.len() < len {
        return Err(Error::CheckpointMalformed("truncated name".into()));
    }
    let (s, rest) = r.split_at(len);
    *r = rest;
    String::from_utf8(s.to_vec()).map_err(|_| Error::CheckpointMalformed("non-utf8 name".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(read_arr(r)?))
}

fn read_arr<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CheckpointMalformed("truncated tensor data".into()))?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn rng_state_round_trips_mid_stream() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        rng.set_stream(3);
        for _ in 0..17 {
            rng.next_u64();
        }
        let state = RngState::capture(&rng);
        let mut restored = state.restore();
        for _ in 0..10 {
            assert_eq!(rng.next_u64(), restored.next_u64());
        }
    }

    #[test]
    fn checkpoint_file_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let params = vec![(
            "a.w".to_string(),
            Array2::from_shape_fn((2, 3), |(i, j)| ((i * 3 + j) as f64 * 0.311) as f32 as f64),
        )];
        let opt_state = vec![(
            "a.w".to_string(),
            Array2::from_elem((2, 3), 0.123456789123456789),
            Array2::from_elem((2, 3), 98.7654321),
        )];
        let ckpt = Checkpoint {
            config: RunConfig::default(),
            frontend: TextFrontend::from_parts(
                crate::text::Lexicon::new(),
                crate::text::BpeTable::default(),
                &[],
            ),
            step: 7,
            adam_t: 7,
            rng: RngState::capture(&ChaCha20Rng::seed_from_u64(5)),
            params: params.clone(),
            opt_state: opt_state.clone(),
        };
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.step, 7);
        assert_eq!(back.params.len(), 1);
        for ((n1, t1), (n2, t2)) in params.iter().zip(&back.params) {
            assert_eq!(n1, n2);
            for (a, b) in t1.iter().zip(t2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        for ((_, m1, v1), (_, m2, v2)) in opt_state.iter().zip(&back.opt_state) {
            for (a, b) in m1.iter().zip(m2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in v1.iter().zip(v2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn malformed_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointMalformed(_))
        ));
    }
}
