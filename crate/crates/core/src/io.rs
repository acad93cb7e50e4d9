//! On-disk formats: JSONL records, JSON checkpoints, checksums and run
//! manifests.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::{Matrix, PolicyParams, TokenPolicy};
use crate::transcript::OutputVocab;

pub const CHECKPOINT_FORMAT: &str = "r1lab-checkpoint/1";

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL file; blank lines are skipped and parse failures name the
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(|e| {
        Error::Data(format!("cannot open {}: {e}", path.display()))
    })?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut h = Sha256::new();
    std::io::copy(&mut file, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

/// Self-describing JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub vocab: OutputVocab,
    pub rows: usize,
    pub cols: usize,
    pub step_count: u64,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn new(policy: &TokenPolicy, params: &PolicyParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config_hash: policy.config_hash(),
            vocab: policy.vocab().clone(),
            rows: params.weights.rows(),
            cols: params.weights.cols(),
            step_count: params.step_count,
            weights: params.weights.as_slice().to_vec(),
        }
    }

    /// Recovers the parameters, refusing checkpoints built for a different
    /// vocabulary or feature layout.
    pub fn into_params(self, policy: &TokenPolicy) -> Result<PolicyParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Compatibility(format!("unknown checkpoint format `{}`", self.format)));
        }
        let expected = policy.config_hash();
        if self.config_hash != expected {
            return Err(Error::Compatibility(format!(
                "checkpoint config hash {} does not match data config hash {expected}",
                self.config_hash
            )));
        }
        if self.rows != policy.vocab_size() || self.cols != policy.feature_dim() {
            return Err(Error::Compatibility(format!(
                "checkpoint shape {}x{} does not match policy {}x{}",
                self.rows,
                self.cols,
                policy.vocab_size(),
                policy.feature_dim()
            )));
        }
        let weights = Matrix::from_vec(self.rows, self.cols, self.weights)
            .map_err(|e| Error::Compatibility(format!("checkpoint weights: {e}")))?;
        if !weights.is_finite() {
            return Err(Error::Numerical("checkpoint contains non-finite weights".into()));
        }
        Ok(PolicyParams {
            weights,
            step_count: self.step_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written at the end of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<Artifact>,
    pub duration_secs: f64,
}

impl RunManifest {
    /// Checksums `outputs` (paths relative to `base` are recorded relative).
    pub fn build(
        command: &str,
        config_hash: &str,
        seed: u64,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        base: &Path,
        duration_secs: f64,
    ) -> Result<Self> {
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(Artifact {
                    path: p.strip_prefix(base).unwrap_or(p).display().to_string(),
                    sha256: file_sha256(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs,
            duration_secs,
        })
    }

    /// Temp file plus rename so a reader never sees a partial manifest.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        write_json(&tmp, self)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Checks every listed output exists under `base` with the recorded hash.
    pub fn verify(&self, base: &Path) -> Result<()> {
        for a in &self.outputs {
            let path = base.join(&a.path);
            let actual = file_sha256(&path)
                .map_err(|e| Error::Data(format!("manifest output {}: {e}", a.path)))?;
            if actual != a.sha256 {
                return Err(Error::Data(format!("manifest output {}: checksum mismatch", a.path)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::GenerativeConfig;

    fn tmpdir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("r1lab-io-{name}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn checkpoint_round_trip_and_hash_guard() {
        let dir = tmpdir("ckpt");
        let policy = TokenPolicy::new(GenerativeConfig::with_classes(4).vocab().unwrap());
        let mut params = PolicyParams::zeros(&policy);
        params.weights.set(3, 7, 0.125);
        params.step_count = 9;
        let path = dir.join("p.json");
        Checkpoint::new(&policy, &params).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().into_params(&policy).unwrap();
        assert_eq!(back, params);

        let other = TokenPolicy::new(GenerativeConfig::with_classes(5).vocab().unwrap());
        let err = Checkpoint::load(&path).unwrap().into_params(&other).unwrap_err();
        assert!(matches!(err, Error::Compatibility(_)));
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let dir = tmpdir("jsonl");
        let path = dir.join("x.jsonl");
        fs::write(&path, "{\"a\":1}\n\nnot json\n").unwrap();
        let err = read_jsonl::<serde_json::Value>(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        write_jsonl(&path, &[1u32, 2, 3]).unwrap();
        assert_eq!(read_jsonl::<u32>(&path).unwrap(), vec![1, 2, 3]);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn manifest_detects_tampering() {
        let dir = tmpdir("manifest");
        let out = dir.join("a.txt");
        fs::write(&out, "hello").unwrap();
        let m = RunManifest::build("test", "h", 1, &[], std::slice::from_ref(&out), &dir, 0.0).unwrap();
        assert_eq!(m.outputs[0].path, "a.txt");
        m.write_atomic(&dir.join("manifest.json")).unwrap();
        m.verify(&dir).unwrap();
        fs::write(&out, "bye").unwrap();
        assert!(m.verify(&dir).is_err());
        fs::remove_dir_all(dir).ok();
    }
}
