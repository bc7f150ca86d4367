//! Binary checkpoint: magic, version, JSON config echo, epoch, RNG state,
//! named parameter tensors and the Adam moments. All numbers little-endian.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig, Trainer};
use crate::config::ModelConfig;
use crate::error::{Result, SomoError};
use crate::model::MotionModel;
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SOMOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConfigEcho {
    model: ModelConfig,
    train: TrainConfig,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub params: Vec<(String, Tensor)>,
    pub adam_step: u64,
    pub adam_first: Vec<Tensor>,
    pub adam_second: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        Checkpoint {
            model_config: trainer.model.config.clone(),
            train_config: trainer.config.clone(),
            epoch: trainer.epoch,
            rng_seed: trainer.rng.get_seed(),
            rng_stream: trainer.rng.get_stream(),
            rng_word_pos: trainer.rng.get_word_pos(),
            params: trainer
                .model
                .params
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
            adam_step: trainer.adam.step,
            adam_first: trainer.adam.first.clone(),
            adam_second: trainer.adam.second.clone(),
        }
    }

    pub fn model(&self) -> Result<MotionModel> {
        MotionModel::from_parts(self.model_config.clone(), self.params.clone())
    }

    /// Restores the full training state. `config` overrides the stored
    /// training settings (for example to extend the epoch count).
    pub fn into_trainer(self, config: Option<TrainConfig>) -> Result<Trainer> {
        let model = self.model()?;
        let mut adam = Adam::new(&model.params);
        for (dst, src) in adam.first.iter_mut().chain(adam.second.iter_mut()).zip(self.adam_first.iter().chain(&self.adam_second)) {
            if dst.shape() != src.shape() {
                return Err(SomoError::Checkpoint(format!(
                    "optimizer moment shape {:?} does not match parameter shape {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        adam.step = self.adam_step;
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        let config = config.unwrap_or(self.train_config);
        config.validate()?;
        Ok(Trainer {
            model,
            config,
            adam,
            epoch: self.epoch,
            rng,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let echo = serde_json::to_vec(&ConfigEcho {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
        })
        .map_err(|e| SomoError::Checkpoint(format!("config echo: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(echo.len() as u64).to_le_bytes());
        out.extend_from_slice(&echo);
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.rng_seed);
        out.extend_from_slice(&self.rng_stream.to_le_bytes());
        out.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_tensor(&mut out, t);
        }
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        out.extend_from_slice(&(self.adam_first.len() as u32).to_le_bytes());
        for t in self.adam_first.iter().chain(&self.adam_second) {
            write_tensor(&mut out, t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(SomoError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(SomoError::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let echo_len = r.u64()? as usize;
        let echo: ConfigEcho = serde_json::from_slice(r.take(echo_len)?)
            .map_err(|e| SomoError::Checkpoint(format!("config echo: {e}")))?;
        let epoch = r.u64()? as usize;
        let rng_seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let rng_stream = r.u64()?;
        let rng_word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| SomoError::Checkpoint(format!("tensor name at offset {} is not UTF-8", r.pos)))?;
            params.push((name, r.tensor()?));
        }
        let adam_step = r.u64()?;
        let moments = r.u32()? as usize;
        let adam_first = (0..moments).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let adam_second = (0..moments).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(SomoError::Checkpoint(format!(
                "{} trailing bytes after offset {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        Ok(Checkpoint {
            model_config: echo.model,
            train_config: echo.train,
            epoch,
            rng_seed,
            rng_stream,
            rng_word_pos,
            params,
            adam_step,
            adam_first,
            adam_second,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| SomoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SomoError::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            SomoError::Checkpoint(m) => SomoError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            SomoError::Checkpoint(format!("truncated checkpoint: need {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(SomoError::Checkpoint(format!("tensor rank {rank} at offset {}", self.pos)));
        }
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = self.take(len.checked_mul(8).ok_or_else(|| SomoError::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Tensor::new(shape, data).map_err(|e| SomoError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{generate_synthetic_scene, SceneSpec};
    use crate::training::Sample;

    fn trained() -> Trainer {
        let spec = SceneSpec {
            frames: 18,
            ..SceneSpec::default()
        };
        let data: Vec<Sample> = (0..2)
            .map(|i| Sample::from_scene(&generate_synthetic_scene(&spec, i).unwrap(), 14, 4).unwrap())
            .collect();
        let model = MotionModel::new(ModelConfig::gradcheck(), 11).unwrap();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 2,
            horizon: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(model, config).unwrap();
        t.train(&data, &[], |_, _| Ok(())).unwrap();
        t
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = trained();
        let ck = Checkpoint::from_trainer(&t);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let restored = back.into_trainer(None).unwrap();
        assert_eq!(restored.model.params, t.model.params);
        assert_eq!(restored.adam, t.adam);
        assert_eq!(restored.rng, t.rng);
        assert_eq!(restored.epoch, 1);
    }

    #[test]
    fn corrupt_input_is_reported() {
        let bytes = Checkpoint::from_trainer(&trained()).to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(b"garbage!"), Err(SomoError::Checkpoint(_))));
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn mismatched_architecture_names_the_tensor() {
        let mut ck = Checkpoint::from_trainer(&trained());
        ck.model_config.feature_dim = 10;
        let err = ck.model().unwrap_err().to_string();
        assert!(err.contains("shape mismatch"), "{err}");
    }
}
