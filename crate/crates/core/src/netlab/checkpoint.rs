//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! load reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Network, NetworkConfig, Stage};
use crate::error::{Error, Result};
use crate::model::{hex, Matrix, Vector};

const FORMAT: &str = "sparselab-network";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DenseMatrix {
    rows: usize,
    cols: usize,
    /// Column-major.
    data: Vec<f64>,
}

impl DenseMatrix {
    fn from(a: &Matrix) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.as_slice().to_vec(),
        }
    }

    fn into_matrix(self) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::parse("checkpoint", "matrix data length does not match its shape"));
        }
        Ok(Matrix::from_vec(self.rows, self.cols, self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct StageRecord {
    w: DenseMatrix,
    b: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    config: NetworkConfig,
    stages: Vec<StageRecord>,
    head_w: DenseMatrix,
    head_b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    sha256: String,
    payload: Payload,
}

fn digest(payload: &Payload) -> Result<String> {
    let text = serde_json::to_string(payload).map_err(|e| Error::parse("checkpoint", e))?;
    Ok(hex(&Sha256::digest(text.as_bytes())))
}

fn payload(net: &Network) -> Payload {
    let v = |x: &Vector| x.as_slice().to_vec();
    Payload {
        config: *net.config(),
        stages: net
            .stages()
            .iter()
            .map(|s| StageRecord {
                w: DenseMatrix::from(&s.w),
                b: v(&s.b),
                gamma: v(&s.gamma),
                beta: v(&s.beta),
                running_mean: v(&s.running_mean),
                running_var: v(&s.running_var),
            })
            .collect(),
        head_w: DenseMatrix::from(net.head().0),
        head_b: v(net.head().1),
    }
}

/// Content hash of the network's configuration and parameters.
pub fn network_hash(net: &Network) -> String {
    digest(&payload(net)).expect("network parameters serialize")
}

pub fn to_checkpoint_string(net: &Network) -> Result<String> {
    let payload = payload(net);
    let envelope = Envelope {
        format: FORMAT.into(),
        version: VERSION,
        sha256: digest(&payload)?,
        payload,
    };
    serde_json::to_string_pretty(&envelope).map_err(|e| Error::parse("checkpoint", e))
}

pub fn parse_checkpoint(text: &str) -> Result<Network> {
    let envelope: Envelope = serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e))?;
    if envelope.format != FORMAT || envelope.version != VERSION {
        return Err(Error::parse(
            "checkpoint",
            format!("unsupported format {} v{}", envelope.format, envelope.version),
        ));
    }
    let actual = digest(&envelope.payload)?;
    if actual != envelope.sha256 {
        return Err(Error::parse(
            "checkpoint",
            format!("content hash mismatch: recorded {}, computed {actual}", envelope.sha256),
        ));
    }
    let p = envelope.payload;
    let stages = p
        .stages
        .into_iter()
        .map(|s| {
            Ok(Stage {
                w: s.w.into_matrix()?,
                b: Vector::from_vec(s.b),
                gamma: Vector::from_vec(s.gamma),
                beta: Vector::from_vec(s.beta),
                running_mean: Vector::from_vec(s.running_mean),
                running_var: Vector::from_vec(s.running_var),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_parts(p.config, stages, p.head_w.into_matrix()?, Vector::from_vec(p.head_b))
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    std::fs::write(path, to_checkpoint_string(net)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::{train, Activation, Mode, TrainConfig};
    use super::*;
    use crate::seeding;

    fn trained() -> Network {
        let config = NetworkConfig {
            activation: Activation::Helu { sigma: 0.3 },
            ..NetworkConfig::classifier(6, 12, 5)
        };
        let mut net = Network::init(config, 8).unwrap();
        let x = seeding::gaussian_matrix(&mut seeding::rng(1), 6, 40, 1.0);
        let t = Matrix::from_fn(12, 40, |i, j| ((i * 7 + j) % 4 == 0) as u8 as f64);
        let tc = TrainConfig {
            batch_size: 10,
            ..TrainConfig::reference()
        }
        .with_epochs(2, 1);
        train(&mut net, &x, &t, &tc).unwrap();
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = trained();
        let loaded = parse_checkpoint(&to_checkpoint_string(&net).unwrap()).unwrap();
        assert_eq!(loaded, net);
        let x = seeding::gaussian_matrix(&mut seeding::rng(2), 6, 9, 1.0);
        let a = net.forward(&x, Mode::Eval).unwrap();
        let b = loaded.forward(&x, Mode::Eval).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(network_hash(&net), network_hash(&loaded));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = trained();
        save_checkpoint(&path, &net).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), net);
        assert!(matches!(
            load_checkpoint(&dir.path().join("absent.json")),
            Err(Error::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn tampering_is_detected() {
        let text = to_checkpoint_string(&trained()).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["payload"]["head_b"][0] = serde_json::json!(0.125);
        let err = parse_checkpoint(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("hash"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = trained();
        let mut p = payload(&net);
        p.head_b.pop();
        let envelope = Envelope {
            format: FORMAT.into(),
            version: VERSION,
            sha256: digest(&p).unwrap(),
            payload: p,
        };
        assert!(parse_checkpoint(&serde_json::to_string(&envelope).unwrap()).is_err());
    }
}
