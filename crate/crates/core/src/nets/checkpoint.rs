//! JSON checkpoints for [`ValueNetwork`].
//!
//! The on-disk schema is a single flat document: architecture fields, the
//! full parameter vector, and a small metadata block identifying the run.
//! Floats are written with serde_json's shortest-roundtrip formatting, so a
//! save/load cycle reproduces the parameter vector bit for bit.

use super::{NetKind, ValueNetwork};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Run metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Environment name the network was trained on.
    pub env: String,
    /// RNG seed of the training run.
    pub seed: u64,
    /// Number of completed optimizer epochs.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    kind: String,
    layer_widths: Vec<usize>,
    activation: String,
    epsilon: f64,
    params: Vec<f64>,
    metadata: CheckpointMeta,
}

/// Serialize `net` to pretty-printed JSON at `path`.
pub fn save_checkpoint(net: &ValueNetwork, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let doc = CheckpointDoc {
        kind: net.kind().as_str().to_string(),
        layer_widths: net.widths().to_vec(),
        activation: "softplus".to_string(),
        epsilon: net.epsilon(),
        params: net.params().to_vec(),
        metadata: meta.clone(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    fs::write(path, text)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`]. Parse errors name the
/// offending field; architecture errors report what was found.
pub fn load_checkpoint(path: &Path) -> Result<(ValueNetwork, CheckpointMeta)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    let doc: CheckpointDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if doc.activation != "softplus" {
        return Err(Error::Checkpoint(format!(
            "unsupported activation {:?}",
            doc.activation
        )));
    }
    let mut net = match doc.kind.as_str() {
        k if k == NetKind::Fcn.as_str() => ValueNetwork::fcn(&doc.layer_widths)?,
        k if k == NetKind::IcnnPd.as_str() => {
            ValueNetwork::icnn_pd(&doc.layer_widths, doc.epsilon)?
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown network kind {other:?}")));
        }
    };
    net.set_params(&doc.params).map_err(|_| {
        Error::Checkpoint(format!(
            "params length {} does not match architecture {:?}",
            doc.params.len(),
            doc.layer_widths
        ))
    })?;
    Ok((net, doc.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ValueFunction;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("hjb-core-ckpt-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            env: "double_integrator".to_string(),
            seed: 7,
            epoch: 65,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut net = ValueNetwork::icnn_pd(&[3, 4, 4, 1], 0.1).unwrap();
        net.randomize(21);
        // Include values that would be mangled by fixed-precision printing.
        net.params_mut()[0] = 0.1 + 0.2;
        net.params_mut()[1] = f64::MIN_POSITIVE;
        let path = tmp("roundtrip.json");
        save_checkpoint(&net, &meta(), &path).unwrap();
        let (loaded, m) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params(), net.params());
        assert_eq!(loaded.widths(), net.widths());
        assert_eq!(loaded.epsilon(), net.epsilon());
        assert_eq!(m, meta());
        let x = [0.3, -1.2];
        assert_eq!(
            loaded.forward(&x, 0.5).unwrap(),
            net.forward(&x, 0.5).unwrap()
        );
    }

    #[test]
    fn fcn_roundtrip_preserves_kind() {
        let mut net = ValueNetwork::fcn(&[5, 8, 1]).unwrap();
        net.randomize(3);
        let path = tmp("fcn.json");
        save_checkpoint(&net, &meta(), &path).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.kind(), net.kind());
        assert_eq!(loaded.params(), net.params());
    }

    #[test]
    fn malformed_document_errors_name_the_problem() {
        let path = tmp("missing-field.json");
        fs::write(&path, r#"{"kind": "fcn", "layer_widths": [3, 1]}"#).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("activation") || msg.contains("missing"), "{msg}");

        let path = tmp("bad-kind.json");
        fs::write(
            &path,
            r#"{"kind": "transformer", "layer_widths": [3, 1], "activation": "softplus",
               "epsilon": 0.0, "params": [0.0, 0.0, 0.0, 0.0],
               "metadata": {"env": "e", "seed": 0, "epoch": 0}}"#,
        )
        .unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("transformer"), "{err}");

        let path = tmp("short-params.json");
        fs::write(
            &path,
            r#"{"kind": "fcn", "layer_widths": [3, 1], "activation": "softplus",
               "epsilon": 0.0, "params": [0.0],
               "metadata": {"env": "e", "seed": 0, "epoch": 0}}"#,
        )
        .unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("length"), "{err}");
    }
}
