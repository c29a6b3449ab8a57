use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::moe::{ModelConfig, PathMoe};

const MAGIC: &str = "PATHMOE-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelConfig,
    /// Number of fused experts (1 for a plain backbone).
    pub experts: usize,
    pub lambda_int: f64,
    /// 1-based epoch the parameters were taken from (0 = untrained).
    pub epoch: usize,
    pub val_macro_f1: f64,
    pub fold: usize,
    /// Seed of the fold plan the run used.
    pub split_seed: u64,
    pub train_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Manifest plus the flat parameter table of a trained model.
///
/// Layout: a magic line, the manifest as one JSON line, the parameter table
/// (`[{name, rows, cols}, ..]`) as one JSON line, then every parameter's
/// values in table order as little-endian `f64`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub store: ParamStore,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Rebuilds the architecture; its parameters are those of the checkpoint.
    pub fn model(&self) -> Result<PathMoe> {
        let (model, fresh) = PathMoe::new(self.manifest.model.clone())?;
        if fresh.len() != self.store.len() {
            return Err(corrupt(format!(
                "architecture has {} parameters, checkpoint has {}",
                fresh.len(),
                self.store.len()
            )));
        }
        for (a, b) in fresh.iter().zip(self.store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(corrupt(format!("parameter {} does not match the architecture", b.name)));
            }
        }
        Ok(model)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "{}", serde_json::to_string(&self.manifest)?)?;
        let table: Vec<ParamEntry> = self
            .store
            .iter()
            .map(|p| ParamEntry { name: p.name.clone(), rows: p.value.rows(), cols: p.value.cols() })
            .collect();
        writeln!(out, "{}", serde_json::to_string(&table)?)?;
        for p in self.store.iter() {
            for v in p.value.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(corrupt("truncated header"));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut input)? != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let manifest: CheckpointManifest = serde_json::from_str(&next_line(&mut input)?)?;
        let table: Vec<ParamEntry> = serde_json::from_str(&next_line(&mut input)?)?;
        let mut store = ParamStore::new();
        let mut buf = [0u8; 8];
        for e in table {
            let mut data = Vec::with_capacity(e.rows * e.cols);
            for _ in 0..e.rows * e.cols {
                input.read_exact(&mut buf).map_err(|_| corrupt(format!("payload truncated in {}", e.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            store.add(e.name, Tensor::new(e.rows, e.cols, data)?)?;
        }
        if input.read(&mut buf)? != 0 {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Self { manifest, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::{ModelKind, Variant};

    fn checkpoint() -> Checkpoint {
        let mut cfg = ModelConfig::new(ModelKind::PATHMOE_SG, Variant::full(), 4);
        cfg.arch.tokens = 2;
        cfg.arch.width = 4;
        let (model, mut store) = PathMoe::new(cfg.clone()).unwrap();
        // awkward values survive the trip too
        store.iter_mut().next().unwrap().value.data_mut()[..3].copy_from_slice(&[-0.0, f64::MIN_POSITIVE, 1e300]);
        Checkpoint {
            manifest: CheckpointManifest {
                experts: model.roles().len(),
                model: cfg,
                lambda_int: 0.1,
                epoch: 7,
                val_macro_f1: 0.75,
                fold: 2,
                split_seed: 9,
                train_seed: 3,
            },
            store,
        }
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        let ck = checkpoint();
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.manifest, ck.manifest);
        for (a, b) in ck.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        back.model().unwrap();
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ck = checkpoint();
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert!(matches!(Checkpoint::read_from(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::read_from(extra.as_slice()).is_err());
        assert!(Checkpoint::read_from(&b"hello\n"[..]).is_err());

        let mut wrong = ck.clone();
        wrong.manifest.model.arch.width = 5;
        assert!(wrong.model().is_err());
    }
}
