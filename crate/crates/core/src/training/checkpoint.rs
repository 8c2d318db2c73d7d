//! Versioned JSON checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::Moments;
use crate::data::NormalizationRecord;
use crate::elasticity::{MaterialParam, MaterialParams, Trainable};
use crate::field::{Field, Problem};
use crate::networks::{Activation, ArchMode, DenseNetwork, FieldModel, Layer, NetworkArch, NetworkError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("checkpoint file is truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("{0}")]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialState {
    pub lambda: f64,
    pub mu: f64,
    pub sigma_y: Option<f64>,
    pub trainable: Vec<MaterialParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Complete training state. Networks are keyed by field name (or `shared`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub problem: Problem,
    pub arch: NetworkArch,
    pub inputs: Vec<String>,
    pub field_order: Vec<Field>,
    pub fields: BTreeMap<String, Vec<LayerWeights>>,
    pub material: MaterialState,
    pub normalization: Option<NormalizationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamState>,
    pub seed: u64,
}

fn network_key(model: &FieldModel, i: usize) -> String {
    match model.arch().mode {
        ArchMode::Independent => model.fields()[i].name().to_string(),
        ArchMode::Shared => "shared".to_string(),
    }
}

impl Checkpoint {
    pub fn capture(
        problem: Problem,
        model: &FieldModel,
        material: &MaterialParams,
        normalization: Option<&NormalizationRecord>,
        adam: Option<(&Moments, u64)>,
        seed: u64,
    ) -> Self {
        let mut fields = BTreeMap::new();
        for (i, net) in model.networks().iter().enumerate() {
            let layers = net
                .layers()
                .iter()
                .map(|l| LayerWeights {
                    w: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: l.bias.to_vec(),
                    activation: l.activation,
                })
                .collect();
            fields.insert(network_key(model, i), layers);
        }
        Self {
            version: CHECKPOINT_VERSION,
            problem,
            arch: *model.arch(),
            inputs: model.inputs().to_vec(),
            field_order: model.fields().to_vec(),
            fields,
            material: MaterialState {
                lambda: material.lambda,
                mu: material.mu,
                sigma_y: material.sigma_y,
                trainable: material.trainable_params(),
            },
            normalization: normalization.cloned(),
            adam: adam.map(|(m, step)| AdamState {
                step,
                m: m.m.clone(),
                v: m.v.clone(),
            }),
            seed,
        }
    }

    pub fn model(&self) -> Result<FieldModel, CheckpointError> {
        let keys: Vec<String> = match self.arch.mode {
            ArchMode::Independent => self.field_order.iter().map(|f| f.name().to_string()).collect(),
            ArchMode::Shared => vec!["shared".to_string()],
        };
        let mut networks = Vec::with_capacity(keys.len());
        for key in keys {
            let layers = self
                .fields
                .get(&key)
                .ok_or_else(|| CheckpointError::Malformed(format!("no weights for `{key}`")))?;
            let layers = layers
                .iter()
                .map(|l| {
                    let rows = l.w.len();
                    let cols = l.w.first().map_or(0, Vec::len);
                    if l.w.iter().any(|r| r.len() != cols) {
                        return Err(CheckpointError::Malformed(format!("ragged weights in `{key}`")));
                    }
                    let flat: Vec<f64> = l.w.iter().flatten().copied().collect();
                    let weights = Array2::from_shape_vec((rows, cols), flat)
                        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
                    Ok(Layer {
                        weights,
                        bias: Array1::from(l.b.clone()),
                        activation: l.activation,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            networks.push(DenseNetwork::from_layers(layers)?);
        }
        Ok(FieldModel::from_networks(
            self.arch,
            self.inputs.clone(),
            self.field_order.clone(),
            networks,
        )?)
    }

    pub fn material(&self) -> MaterialParams {
        let t = &self.material.trainable;
        MaterialParams {
            lambda: self.material.lambda,
            mu: self.material.mu,
            sigma_y: self.material.sigma_y,
            trainable: Trainable {
                lambda: t.contains(&MaterialParam::Lambda),
                mu: t.contains(&MaterialParam::Mu),
                sigma_y: t.contains(&MaterialParam::SigmaY),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let classify = |e: serde_json::Error| {
            if e.is_eof() {
                CheckpointError::Truncated
            } else {
                CheckpointError::Malformed(e.to_string())
            }
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(classify)?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| CheckpointError::Malformed("missing version".into()))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(CheckpointError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        // Parse the text again rather than the Value so floats keep their
        // exact round-trip parsing.
        serde_json::from_str(text).map_err(classify)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Optimizer moments, or zeros when the checkpoint carries none.
    pub fn moments(&self, n: usize) -> (Moments, u64) {
        match &self.adam {
            Some(a) if a.m.len() == n && a.v.len() == n => (
                Moments {
                    m: a.m.clone(),
                    v: a.v.clone(),
                },
                a.step,
            ),
            _ => (Moments::zeros(n), 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample() -> (Checkpoint, FieldModel) {
        let arch = NetworkArch::new(3, 7, Activation::Tanh);
        let model = FieldModel::build(Problem::Elastic.network_fields(), &arch, &["x", "y"], 11).unwrap();
        let mat = MaterialParams::fixed(1.25, 0.5).identify();
        let rec = NormalizationRecord {
            columns: [(Field::Sxx, 3.7)].into_iter().collect(),
            length: 2.0,
        };
        let ck = Checkpoint::capture(Problem::Elastic, &model, &mat, Some(&rec), None, 11);
        (ck, model)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (ck, model) = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let m2 = back.model().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0)];
            let a = model.predict(&x).unwrap();
            let b = m2.predict(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert_eq!(u.1.to_bits(), v.1.to_bits());
            }
        }
        assert_eq!(back.material(), MaterialParams::fixed(1.25, 0.5).identify());
    }

    #[test]
    fn version_and_truncation_errors() {
        let (ck, _) = sample();
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json()).unwrap();
        v["version"] = 99.into();
        let err = Checkpoint::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, CheckpointError::Version { found: 99, .. }), "{err}");
        let text = ck.to_json();
        let err = Checkpoint::from_json(&text[..text.len() / 2]).unwrap_err();
        assert!(matches!(err, CheckpointError::Truncated), "{err}");
    }

    #[test]
    fn missing_moments_start_at_zero() {
        let (ck, model) = sample();
        let (m, step) = ck.moments(model.param_count() + 2);
        assert_eq!(step, 0);
        assert!(m.m.iter().chain(&m.v).all(|v| *v == 0.0));
    }
}
