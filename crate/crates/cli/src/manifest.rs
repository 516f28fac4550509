//! Run manifests: the resolved config plus content hashes of the inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// Git-style object hash: SHA-256 over `blob <len>\0<bytes>`, hex encoded.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Everything needed to rerun a training run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: RunConfig,
    pub dataset_hash: String,
    pub config_hash: String,
    /// Hash over the dataset and config hashes.
    pub input_hash: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, dataset_hash: String, outputs: Vec<PathBuf>) -> Self {
        let config_hash = blob_hash(config.to_text().as_bytes());
        let input_hash = blob_hash(format!("{dataset_hash}\n{config_hash}\n").as_bytes());
        Self {
            config: config.clone(),
            dataset_hash,
            config_hash,
            input_hash,
            outputs,
        }
    }

    /// Config-file text; the hashes and outputs ride along as comments, so
    /// the manifest itself is a valid `--config` file.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# om2p run manifest\n");
        let _ = writeln!(out, "# input_hash: {}", self.input_hash);
        let _ = writeln!(out, "# dataset_hash: {}", self.dataset_hash);
        let _ = writeln!(out, "# config_hash: {}", self.config_hash);
        for p in &self.outputs {
            let _ = writeln!(out, "# output: {}", p.display());
        }
        out.push_str(&self.config.to_text());
        out
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config = RunConfig::default();
        config.apply_file_text(text)?;
        let field = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(&format!("# {key}: ")))
                .map(str::to_string)
                .ok_or_else(|| CliError::Config(format!("manifest lacks {key}")))
        };
        let outputs = text
            .lines()
            .filter_map(|l| l.strip_prefix("# output: "))
            .map(PathBuf::from)
            .collect();
        Ok(Self {
            config,
            dataset_hash: field("dataset_hash")?,
            config_hash: field("config_hash")?,
            input_hash: field("input_hash")?,
            outputs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read manifest {}: {e}", path.display()))
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_blob_matches_reference() {
        // `printf 'blob 0\0' | sha256sum`
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let mut c = RunConfig::default();
        c.set("env", "coop_nav_lite").unwrap();
        let m = RunManifest::new(&c, blob_hash(b"data"), vec!["a/metrics.csv".into()]);
        assert_eq!(RunManifest::parse(&m.to_text()).unwrap(), {
            let mut m2 = m.clone();
            m2.config.data_seed = Some(c.train.seed);
            m2
        });
    }
}
