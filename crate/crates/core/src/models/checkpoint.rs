//! Checkpoint file format: magic "UADC", a u16 version, the length-prefixed
//! config text, then every parameter as (name, shape, f32 LE payload) in
//! registration order. Loading rebuilds the model from the embedded config
//! and overwrites each parameter by name, so a checkpoint is self-describing
//! and refuses files whose structure disagrees with it.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::numerics::Tensor;

use super::config::ModelConfig;
use super::model::{Model, ModelError};

const MAGIC: &[u8; 4] = b"UADC";
const VERSION: u16 = 1;

impl Model {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let config = self.config.to_text();
        w.write_all(&(config.len() as u32).to_le_bytes())?;
        w.write_all(config.as_bytes())?;
        w.write_all(&(self.store.len() as u32).to_le_bytes())?;
        for (name, t) in self.store.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.rank() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut bytes = Vec::with_capacity(t.numel() * 4);
            for &v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let bytes = fs::read(path)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Format("bad magic; not a checkpoint file".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let config_len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| ModelError::Format("config block is not UTF-8".into()))?;
        let config = ModelConfig::from_text(config_text).map_err(ModelError::Format)?;
        let mut model = Model::new(config, 0)?;

        let count = r.u32()? as usize;
        if count != model.store.len() {
            return Err(ModelError::Format(format!(
                "file holds {count} parameters, model wants {}",
                model.store.len()
            )));
        }
        let mut seen = vec![false; count];
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ModelError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel * 4)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();

            let id = model
                .store
                .find(&name)
                .ok_or_else(|| ModelError::Format(format!("unknown parameter {name:?}")))?;
            if seen[id_index(&model, &name)] {
                return Err(ModelError::Format(format!("parameter {name:?} appears twice")));
            }
            seen[id_index(&model, &name)] = true;
            if model.store.tensor(id).shape() != shape.as_slice() {
                return Err(ModelError::Format(format!(
                    "parameter {name:?} has shape {shape:?}, model wants {:?}",
                    model.store.tensor(id).shape()
                )));
            }
            let tensor = Tensor::new(shape, data)
                .map_err(|e| ModelError::Format(format!("parameter {name:?}: {e}")))?;
            *model.store.tensor_mut(id) = tensor;
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Format("trailing bytes after last parameter".into()));
        }
        Ok(model)
    }
}

fn id_index(model: &Model, name: &str) -> usize {
    model.store.iter().position(|(n, _)| n == name).unwrap()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Format("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, Preset};
    use crate::numerics::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("uadseg-checkpoint-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_preserves_weights_and_config() {
        let model =
            Model::new(ModelConfig::preset(Architecture::DcTae, Preset::Desk), 42).unwrap();
        let path = tmp("round_trip.uadc");
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();

        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.store.len(), model.store.len());
        for ((an, at), (bn, bt)) in model.store.iter().zip(loaded.store.iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.shape(), bt.shape());
            assert_eq!(at.data(), bt.data(), "{an} changed across save/load");
        }

        let mut rng = Rng::new(0);
        let x = crate::numerics::Tensor::from_fn(vec![1, 64, 64, 1], |_| rng.uniform());
        assert_eq!(model.infer(&x).unwrap().data(), loaded.infer(&x).unwrap().data());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let model =
            Model::new(ModelConfig::preset(Architecture::BTae, Preset::Desk), 1).unwrap();
        let path = tmp("corrupt.uadc");
        model.save(&path).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad_magic = tmp("bad_magic.uadc");
        fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(Model::load(&bad_magic), Err(ModelError::Format(_))));

        let truncated = tmp("truncated.uadc");
        let orig = fs::read(&path).unwrap();
        fs::write(&truncated, &orig[..orig.len() / 2]).unwrap();
        assert!(matches!(Model::load(&truncated), Err(ModelError::Format(_))));
    }
}
