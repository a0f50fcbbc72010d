//! Checkpoint format.
//!
//! Little-endian binary, bit-exact and language-neutral:
//!
//! ```text
//! magic  b"SDLAB\x01"
//! u32    format version (1)
//! str    architecture descriptor (JSON ModelSpec)
//! str    config hash (hex)
//! u64    step counter
//! [u8;32] rng seed, u64 rng stream, u128 rng word position
//! u32    param count, then the length-prefixed UTF-8 name table
//! per param: u32 ndim, u64 dims..., raw f64 data
//! u8     optimizer-state flag; if set: u64 t, then per param m and v arrays
//! ```
//!
//! Strings are u32-length-prefixed UTF-8. Adapter parameters (distillation)
//! share the table under an `adapter.` name prefix.

use crate::error::{Result, SdError};
use crate::lab::arrayio::{
    read_f64_vec, read_string, read_u32, read_u64, write_f64_slice, write_string, write_u32,
    write_u64,
};
use crate::models::ModelSpec;
use crate::optim::AdamW;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"SDLAB\x01";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha12Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct OptState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptState {
    pub fn capture(opt: &AdamW) -> Self {
        let (t, m, v) = opt.state();
        OptState {
            t,
            m: m.to_vec(),
            v: v.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub config_hash: String,
    pub step: u64,
    pub rng: RngState,
    pub params: Vec<(String, Tensor)>,
    pub opt: Option<OptState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        write_u32(&mut out, VERSION)?;
        let arch = serde_json::to_string(&self.spec)
            .map_err(|e| SdError::Checkpoint(e.to_string()))?;
        write_string(&mut out, &arch)?;
        write_string(&mut out, &self.config_hash)?;
        write_u64(&mut out, self.step)?;
        out.write_all(&self.rng.seed)?;
        write_u64(&mut out, self.rng.stream)?;
        out.write_all(&self.rng.word_pos.to_le_bytes())?;
        write_u32(&mut out, self.params.len() as u32)?;
        for (name, _) in &self.params {
            write_string(&mut out, name)?;
        }
        for (_, t) in &self.params {
            write_u32(&mut out, t.shape().len() as u32)?;
            for &d in t.shape() {
                write_u64(&mut out, d as u64)?;
            }
            write_f64_slice(&mut out, t.data())?;
        }
        match &self.opt {
            Some(opt) => {
                out.write_all(&[1u8])?;
                write_u64(&mut out, opt.t)?;
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    write_f64_slice(&mut out, m)?;
                    write_f64_slice(&mut out, v)?;
                }
            }
            None => out.write_all(&[0u8])?,
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(
            File::open(path).map_err(|e| SdError::Checkpoint(format!("{}: {e}", path.display())))?,
        );
        let mut magic = [0u8; 6];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SdError::Checkpoint(format!(
                "{}: bad magic",
                path.display()
            )));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(SdError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let arch = read_string(&mut input)?;
        let spec: ModelSpec =
            serde_json::from_str(&arch).map_err(|e| SdError::Checkpoint(e.to_string()))?;
        let config_hash = read_string(&mut input)?;
        let step = read_u64(&mut input)?;
        let mut seed = [0u8; 32];
        input.read_exact(&mut seed)?;
        let stream = read_u64(&mut input)?;
        let mut wp = [0u8; 16];
        input.read_exact(&mut wp)?;
        let rng = RngState {
            seed,
            stream,
            word_pos: u128::from_le_bytes(wp),
        };
        let n = read_u32(&mut input)? as usize;
        let mut names = Vec::with_capacity(n);
        for _ in 0..n {
            names.push(read_string(&mut input)?);
        }
        let mut params = Vec::with_capacity(n);
        for name in names {
            let ndim = read_u32(&mut input)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut input)? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = read_f64_vec(&mut input, numel)?;
            params.push((name, Tensor::new(shape, data)?));
        }
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        let opt = if flag[0] == 1 {
            let t = read_u64(&mut input)?;
            let mut m = Vec::with_capacity(params.len());
            let mut v = Vec::with_capacity(params.len());
            for (_, p) in &params {
                m.push(read_f64_vec(&mut input, p.numel())?);
                v.push(read_f64_vec(&mut input, p.numel())?);
            }
            Some(OptState { t, m, v })
        } else {
            None
        };
        Ok(Checkpoint {
            spec,
            config_hash,
            step,
            rng,
            params,
            opt,
        })
    }

    /// Copies the stored values into a named parameter list; every name must
    /// match and no parameter may be missing.
    pub fn load_into(&self, target: &mut [(&str, &mut Tensor)]) -> Result<()> {
        if target.len() != self.params.len() {
            return Err(SdError::Checkpoint(format!(
                "checkpoint has {} params, model expects {}",
                self.params.len(),
                target.len()
            )));
        }
        for ((name, t), (ck_name, ck_t)) in target.iter_mut().zip(&self.params) {
            if *name != ck_name {
                return Err(SdError::Checkpoint(format!(
                    "parameter order mismatch: {name} vs {ck_name}"
                )));
            }
            if t.shape() != ck_t.shape() {
                return Err(SdError::Checkpoint(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    t.shape(),
                    ck_t.shape()
                )));
            }
            t.data_mut().copy_from_slice(ck_t.data());
        }
        Ok(())
    }
}
