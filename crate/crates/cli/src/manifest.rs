//! Run manifests: the config echo preceded by `#` comment lines holding the
//! content hash of every artifact, so the manifest can be fed back as a
//! config to reproduce the run.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// Git-style blob hash: SHA-256 of `"blob <len>\0"` followed by the content.
pub fn blob_hash(content: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", content.len()).as_bytes());
    hasher.update(content);
    hex::encode(hasher.finalize())
}

pub fn manifest_text(cfg: &ExperimentConfig, artifacts: &[(String, Vec<u8>)]) -> String {
    let mut sorted: Vec<&(String, Vec<u8>)> = artifacts.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut text = format!("# renorm-plap {} manifest\n", env!("CARGO_PKG_VERSION"));
    for (name, bytes) in sorted {
        text.push_str(&format!("# sha256 {} {name}\n", blob_hash(bytes)));
    }
    text.push_str(&cfg.echo());
    text
}

pub fn write_manifest(cfg: &ExperimentConfig, artifacts: &[(String, Vec<u8>)], path: &Path) -> io::Result<()> {
    fs::write(path, manifest_text(cfg, artifacts))
}

/// `(hash, file name)` pairs listed in a manifest.
pub fn listed_hashes(manifest: &str) -> Vec<(String, String)> {
    manifest
        .lines()
        .filter_map(|l| l.strip_prefix("# sha256 "))
        .filter_map(|l| l.split_once(' '))
        .map(|(h, n)| (h.to_string(), n.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;

    #[test]
    fn blob_hash_matches_git() {
        // `git hash-object --stdin` in a sha256 repository
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_eq!(
            blob_hash(b"1"),
            "36456d9b87f21fc54ed5babf1222a9ab0fbbd0c4ad239a7933522d5e4447049c"
        );
    }

    #[test]
    fn manifest_is_a_config() {
        let cfg = ExperimentConfig::defaults(Command::Regularizer);
        let text = manifest_text(
            &cfg,
            &[("b.csv".into(), b"2".to_vec()), ("a.csv".into(), b"1".to_vec())],
        );
        assert_eq!(ExperimentConfig::parse(&text, Command::Regularizer).unwrap(), cfg);
        let listed = listed_hashes(&text);
        assert_eq!(listed.len(), 2);
        assert_eq!(listed[0].1, "a.csv");
        assert_eq!(listed[0].0, blob_hash(b"1"));
    }
}
