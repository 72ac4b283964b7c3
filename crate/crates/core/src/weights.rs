//! JSON envelope for trained weights.
//!
//! Tensors are stored at 32-bit precision; a save/load round trip therefore
//! rounds every parameter to the nearest `f32`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tensor {
    Matrix(Vec<Vec<f32>>),
    Vector(Vec<f32>),
    Scalar(f32),
}

impl Tensor {
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Tensor::Matrix(
            m.rows()
                .into_iter()
                .map(|r| r.iter().map(|&v| v as f32).collect())
                .collect(),
        )
    }

    pub fn from_vector(v: &Array1<f64>) -> Self {
        Tensor::Vector(v.iter().map(|&x| x as f32).collect())
    }

    pub fn to_matrix(&self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let Tensor::Matrix(m) = self else {
            return Err(invalid("expected a matrix tensor"));
        };
        if m.len() != rows || m.iter().any(|r| r.len() != cols) {
            return Err(invalid(format!("expected a {rows}x{cols} matrix")));
        }
        let flat: Vec<f64> = m.iter().flatten().map(|&v| v as f64).collect();
        Ok(Array2::from_shape_vec((rows, cols), flat).expect("shape checked"))
    }

    pub fn to_vector(&self, len: usize) -> Result<Array1<f64>> {
        let v: Vec<f64> = match self {
            Tensor::Vector(v) => v.iter().map(|&x| x as f64).collect(),
            Tensor::Scalar(s) => vec![*s as f64],
            Tensor::Matrix(m) if m.iter().all(|r| r.len() == 1) => m.iter().map(|r| r[0] as f64).collect(),
            Tensor::Matrix(_) => return Err(invalid("expected a vector tensor")),
        };
        if v.len() != len {
            return Err(invalid(format!("expected a vector of length {len}, got {}", v.len())));
        }
        Ok(Array1::from(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEnvelope {
    pub kind: String,
    pub d: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(flatten)]
    pub tensors: BTreeMap<String, Tensor>,
    #[serde(default)]
    pub train_meta: serde_json::Value,
}

impl WeightEnvelope {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| invalid(format!("weight envelope is missing `{name}`")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip() {
        let m = Array2::from_shape_vec((2, 3), vec![0.1, 0.2, 0.3, -1.0, 2.5, 1e-3]).unwrap();
        let mut tensors = BTreeMap::new();
        tensors.insert("layer1".to_string(), Tensor::from_matrix(&m));
        tensors.insert("bias2".to_string(), Tensor::Scalar(0.5));
        tensors.insert(
            "bias1".to_string(),
            Tensor::from_vector(&Array1::from(vec![1.0, 2.0, 3.0])),
        );
        let env = WeightEnvelope {
            kind: "test".into(),
            d: 1,
            hidden: 3,
            tensors,
            train_meta: serde_json::json!({"epochs": 1}),
        };
        let json = serde_json::to_string(&env).unwrap();
        assert!(json.contains("\"H\":3"));
        let back: WeightEnvelope = serde_json::from_str(&json).unwrap();
        assert_eq!(back, env);
        let m2 = back.tensor("layer1").unwrap().to_matrix(2, 3).unwrap();
        assert!((m2[[0, 0]] - 0.1).abs() < 1e-7);
        assert_eq!(back.tensor("bias2").unwrap().to_vector(1).unwrap()[0], 0.5);
        assert!(back.tensor("layer1").unwrap().to_matrix(3, 2).is_err());
        assert!(back.tensor("missing").is_err());
    }
}
