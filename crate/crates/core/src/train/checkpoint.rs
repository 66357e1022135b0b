//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic      4 bytes  "ASCV"
//! version    u32      1
//! config     u32 length + UTF-8 text, one `key = value` line per
//!                     ModelConfig field
//! iteration  u64
//! rng        32-byte seed, u64 stream, u128 word position
//! count      u32 number of parameters
//! per parameter:
//!   name     u32 length + UTF-8 bytes
//!   rank     u32
//!   dims     rank x u32
//!   values   product(dims) x f32
//! adam flag  u8 (0 or 1)
//! if 1:
//!   step     u64
//!   per parameter, in the same order: m then v, product(dims) x f32 each
//! ```

use std::path::Path;

use super::optim::AdamState;
use crate::error::{Error, Result};
use crate::model::{AsConvSr, ModelConfig};
use crate::rng::RngState;
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ASCV";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam moments stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamSnapshot {
    pub step: u64,
    /// `(m, v)` per parameter in parameter order.
    pub moments: Vec<(Tensor<f32>, Tensor<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration: u64,
    pub rng: RngState,
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam: Option<AdamSnapshot>,
}

impl Checkpoint {
    pub fn from_model<T: Element>(
        model: &AsConvSr<T>,
        iteration: u64,
        rng: RngState,
        adam: Option<&AdamState<T>>,
    ) -> Result<Self> {
        let params = model
            .params()
            .iter()
            .map(|(n, p)| Ok((n.to_string(), p.value.cast::<f32>()?)))
            .collect::<Result<Vec<_>>>()?;
        let adam = adam
            .map(|a| -> Result<AdamSnapshot> {
                Ok(AdamSnapshot {
                    step: a.step(),
                    moments: a
                        .moments()
                        .map(|(_, m, v)| Ok((m.cast()?, v.cast()?)))
                        .collect::<Result<_>>()?,
                })
            })
            .transpose()?;
        Ok(Checkpoint {
            config: model.config().clone(),
            iteration,
            rng,
            params,
            adam,
        })
    }

    /// Builds a model from the stored config and parameters.
    pub fn to_model<T: Element>(&self) -> Result<AsConvSr<T>> {
        let mut model = AsConvSr::new_uninit(self.config.clone())?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    /// Copies the stored parameters into `model`. Every parameter must match
    /// by name and shape, and then the configs must agree key by key.
    pub fn restore_into<T: Element>(&self, model: &mut AsConvSr<T>) -> Result<()> {
        for (name, value) in &self.params {
            let expected = match model.params().value(name) {
                Ok(v) => v.shape().to_vec(),
                Err(_) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` does not exist in the model"
                    )))
                }
            };
            if expected != value.shape() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected,
                    got: value.shape().to_vec(),
                });
            }
        }
        if self.params.len() != model.params().len() {
            let missing = model
                .params()
                .iter()
                .map(|(n, _)| n)
                .find(|n| !self.params.iter().any(|(p, _)| p == n))
                .unwrap_or("?");
            return Err(Error::Checkpoint(format!(
                "parameter `{missing}` missing from checkpoint"
            )));
        }
        for ((key, theirs), (_, ours)) in self
            .config
            .to_pairs()
            .into_iter()
            .zip(model.config().to_pairs())
        {
            if theirs != ours {
                return Err(Error::ConfigMismatch {
                    key: key.to_string(),
                    model: ours,
                    checkpoint: theirs,
                });
            }
        }
        for (name, value) in &self.params {
            model.params_mut().set_value(name, value.cast()?)?;
        }
        Ok(())
    }

    /// Optimizer state for `model`, if the checkpoint carries one.
    pub fn adam_state<T: Element>(&self) -> Result<Option<AdamState<T>>> {
        let Some(a) = &self.adam else { return Ok(None) };
        let moments = self
            .params
            .iter()
            .zip(&a.moments)
            .map(|((n, _), (m, v))| Ok((n.clone(), m.cast()?, v.cast()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(AdamState::from_parts(a.step, moments)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text: String = self
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        put_bytes(&mut out, text.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_values(&mut out, t);
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                for (m, v) in &a.moments {
                    put_values(&mut out, m);
                    put_values(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let text = r.string()?;
        let mut config = ModelConfig::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed config line `{line}`")))?;
            if !config.set(k.trim(), v.trim())? {
                return Err(Error::Checkpoint(format!(
                    "unknown config key `{}`",
                    k.trim()
                )));
            }
        }
        config.validate()?;
        let iteration = r.u64()?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let count = r.u32()? as usize;
        let mut params: Vec<(String, Tensor<f32>)> = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            if params.iter().any(|(n, _)| *n == name) {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` appears twice"
                )));
            }
            let rank = r.u32()? as usize;
            if !(1..=crate::tensor::MAX_RANK).contains(&rank) {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has rank {rank}"
                )));
            }
            let shape = (0..rank)
                .map(|_| Ok(r.u32()? as usize))
                .collect::<Result<Vec<_>>>()?;
            let t = r.values(&shape)?;
            params.push((name, t));
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let moments = params
                    .iter()
                    .map(|(_, p)| Ok((r.values(p.shape())?, r.values(p.shape())?)))
                    .collect::<Result<Vec<_>>>()?;
                Some(AdamSnapshot { step, moments })
            }
            flag => return Err(Error::Checkpoint(format!("invalid optimizer flag {flag}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            iteration,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            params,
            adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn put_values(out: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::CheckpointTruncated {
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }

    fn values(&mut self, shape: &[usize]) -> Result<Tensor<f32>> {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("shape {shape:?} overflows")))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn model(channels: usize) -> AsConvSr<f32> {
        let cfg = ModelConfig {
            channels,
            num_bases: 2,
            ..ModelConfig::asconvsr()
        };
        AsConvSr::new(cfg, &mut Rng::new(3)).unwrap()
    }

    fn checkpoint() -> Checkpoint {
        let m = model(8);
        let mut adam = AdamState::new(m.params()).unwrap();
        adam.step = 7;
        adam.moments[0].1.data_mut()[0] = 0.25;
        Checkpoint::from_model(&m, 12, Rng::new(5).state(), Some(&adam)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = checkpoint();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let m: AsConvSr<f32> = back.to_model().unwrap();
        for ((_, a), (_, b)) in m.params().iter().zip(model(8).params().iter()) {
            assert_eq!(a.value, b.value);
        }
        let adam = back.adam_state::<f32>().unwrap().unwrap();
        assert_eq!(adam.step(), 7);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = checkpoint();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn truncation_is_structured() {
        let bytes = checkpoint().to_bytes();
        for cut in [0, 3, 9, 40, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::CheckpointTruncated { len, .. }) => assert_eq!(len, cut),
                Err(Error::Checkpoint(_)) if cut < 4 => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_headers() {
        let mut bytes = checkpoint().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
        let mut bytes = checkpoint().to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let mut bytes = checkpoint().to_bytes();
        // Absurd config length.
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointTruncated { .. })
        ));
    }

    #[test]
    fn mismatched_model_names_parameter() {
        let ck = checkpoint();
        let mut other = model(16);
        match ck.restore_into(&mut other) {
            Err(Error::ParamShape { name, .. }) => assert_eq!(name, "head.weight"),
            r => panic!("{r:?}"),
        }
        let mut relu_off = AsConvSr::<f32>::new(
            ModelConfig {
                activation: crate::model::Activation::None,
                ..ck.config.clone()
            },
            &mut Rng::new(0),
        )
        .unwrap();
        assert!(matches!(
            ck.restore_into(&mut relu_off),
            Err(Error::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ck = checkpoint();
        ck.adam = None;
        let first = ck.params[0].clone();
        ck.params.push(first);
        assert!(matches!(
            Checkpoint::from_bytes(&ck.to_bytes()),
            Err(Error::Checkpoint(_))
        ));
    }
}
