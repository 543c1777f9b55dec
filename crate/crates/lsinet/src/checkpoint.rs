//! Checkpoint archive: one little-endian binary file holding the resolved
//! run config plus every parameter as a name / dtype / shape / values
//! record. Values are widened to f64 on disk (lossless for both compute
//! widths); the dtype tag records the width that wrote them and must match
//! on load, which keeps the save/load/eval round trip bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::tensor::Scalar;

const MAGIC: &[u8; 4] = b"LSIN";
const VERSION: u32 = 1;

pub fn save<T: Scalar>(path: &Path, cfg: &RunConfig, params: &Params<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_bytes(&mut w, cfg.to_text().as_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, p) in params {
        write_bytes(&mut w, name.as_bytes())?;
        write_bytes(&mut w, T::DTYPE.as_bytes())?;
        let shape = p.shape().to_vec();
        w.write_all(&(shape.len() as u64).to_le_bytes())?;
        for d in &shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in p.to_vec() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One stored array, still dtype-tagged and f64-carried.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub entries: Vec<Entry>,
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::Data(format!("cannot open checkpoint {}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!(
            "{} is not a checkpoint (bad leading bytes)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "checkpoint format {version} unsupported (this build reads {VERSION})"
        )));
    }
    let config_text = String::from_utf8(read_bytes(&mut r)?)
        .map_err(|_| Error::Data("checkpoint config block is not UTF-8".into()))?;
    let config = RunConfig::from_text(&config_text)?;
    let count = read_u64(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::Data("checkpoint parameter name is not UTF-8".into()))?;
        let dtype = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::Data("checkpoint dtype tag is not UTF-8".into()))?;
        let ndim = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut r, &mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        entries.push(Entry { name, dtype, shape, values });
    }
    Ok(Checkpoint { config, entries })
}

impl Checkpoint {
    /// Copies stored values into live parameters, insisting on an exact
    /// name/dtype/shape agreement in both directions.
    pub fn restore<T: Scalar>(&self, params: &Params<T>) -> Result<()> {
        if params.len() != self.entries.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, model has {}",
                self.entries.len(),
                params.len()
            )));
        }
        for (name, p) in params {
            let e = self
                .entries
                .iter()
                .find(|e| &e.name == name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing parameter '{name}'")))?;
            if e.dtype != T::DTYPE {
                return Err(Error::Data(format!(
                    "parameter '{name}' was trained at {} but the model computes at {}",
                    e.dtype,
                    T::DTYPE
                )));
            }
            if e.shape != p.shape() {
                return Err(Error::Data(format!(
                    "parameter '{name}' has shape {:?} in the checkpoint, {:?} in the model",
                    e.shape,
                    p.shape()
                )));
            }
            let mut data = p.data_mut();
            for (d, v) in data.iter_mut().zip(&e.values) {
                *d = T::from_f64_lossy(*v);
            }
        }
        Ok(())
    }
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Data("checkpoint truncated or corrupt".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    if len > 1 << 30 {
        return Err(Error::Data(format!("implausible checkpoint block length {len}")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use crate::patch::PatchConfig;
    use crate::rng::Streams;

    fn tiny_run_config() -> RunConfig {
        let mut cfg = RunConfig::for_dataset("synthetic");
        cfg.n = 16;
        cfg.patch_target = 4;
        cfg.pred_len = 3;
        cfg.heads = 2;
        cfg.d_model = 8;
        cfg.memory_dim = 8;
        cfg.hidden = 8;
        cfg
    }

    fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            patch: PatchConfig { n: 16, l: 8, k: 4, count: 4, d: 8 },
            heads: 2,
            depth: 1,
            horizon: 3,
            memory_dim: 8,
            hidden: 8,
        }
    }

    #[test]
    fn save_load_restores_parameters_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsin");
        let cfg = tiny_run_config();
        let trained = Model::<f32>::new(tiny_model_config(), &mut Streams::new(9).init()).unwrap();
        save(&path, &cfg, &trained.params()).unwrap();

        let ckpt = load(&path).unwrap();
        assert_eq!(ckpt.config, cfg);
        let fresh = Model::<f32>::new(tiny_model_config(), &mut Streams::new(77).init()).unwrap();
        ckpt.restore(&fresh.params()).unwrap();
        for ((na, pa), (nb, pb)) in trained.params().iter().zip(fresh.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(pa.to_vec(), pb.to_vec(), "{na} not restored exactly");
        }
    }

    #[test]
    fn f64_round_trip_is_exact_too() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsin");
        let model = Model::<f64>::new(tiny_model_config(), &mut Streams::new(3).init()).unwrap();
        save(&path, &tiny_run_config(), &model.params()).unwrap();
        let ckpt = load(&path).unwrap();
        let fresh = Model::<f64>::new(tiny_model_config(), &mut Streams::new(4).init()).unwrap();
        ckpt.restore(&fresh.params()).unwrap();
        for ((_, pa), (_, pb)) in model.params().iter().zip(fresh.params().iter()) {
            assert_eq!(pa.to_vec(), pb.to_vec());
        }
    }

    #[test]
    fn wrong_leading_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_checkpoint");
        std::fs::write(&path, b"PNG\x0d plus whatever").unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("not a checkpoint"), "{err}");
    }

    #[test]
    fn future_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsin");
        let model = Model::<f32>::new(tiny_model_config(), &mut Streams::new(0).init()).unwrap();
        save(&path, &tiny_run_config(), &model.params()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("format 99"), "{err}");
    }

    #[test]
    fn truncation_is_an_error_not_a_panic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsin");
        let model = Model::<f32>::new(tiny_model_config(), &mut Streams::new(0).init()).unwrap();
        save(&path, &tiny_run_config(), &model.params()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn dtype_mismatch_is_labeled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsin");
        let model = Model::<f64>::new(tiny_model_config(), &mut Streams::new(0).init()).unwrap();
        save(&path, &tiny_run_config(), &model.params()).unwrap();
        let ckpt = load(&path).unwrap();
        let f32_model = Model::<f32>::new(tiny_model_config(), &mut Streams::new(0).init()).unwrap();
        let err = ckpt.restore(&f32_model.params()).unwrap_err().to_string();
        assert!(err.contains("trained at f64"), "{err}");
    }

    #[test]
    fn shape_mismatch_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsin");
        let model = Model::<f32>::new(tiny_model_config(), &mut Streams::new(0).init()).unwrap();
        save(&path, &tiny_run_config(), &model.params()).unwrap();
        let ckpt = load(&path).unwrap();
        let mut other_cfg = tiny_model_config();
        other_cfg.horizon = 5;
        let other = Model::<f32>::new(other_cfg, &mut Streams::new(0).init()).unwrap();
        let err = ckpt.restore(&other.params()).unwrap_err().to_string();
        assert!(err.contains("predictor.weight"), "{err}");
        assert!(err.contains("shape"), "{err}");
    }

    #[test]
    fn parameter_names_follow_the_dot_path_convention() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsin");
        let model = Model::<f32>::new(tiny_model_config(), &mut Streams::new(0).init()).unwrap();
        save(&path, &tiny_run_config(), &model.params()).unwrap();
        let ckpt = load(&path).unwrap();
        let names: Vec<&str> = ckpt.entries.iter().map(|e| e.name.as_str()).collect();
        assert!(names.contains(&"sti.0.head.1.memory"), "{names:?}");
        assert!(names.contains(&"patch.w_pos"), "{names:?}");
    }
}
