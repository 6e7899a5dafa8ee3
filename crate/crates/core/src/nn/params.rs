use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Shape of one named tensor inside a [`ParamVector`]. Vectors are stored
/// with `cols == 1`; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Flat parameter storage plus a manifest mapping named tensors to slices.
/// The manifest slices partition the flat array in registration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    data: Vec<f64>,
    manifest: Vec<TensorShape>,
    offsets: BTreeMap<String, usize>,
}

/// Incremental registrar for building a [`ParamVector`] layout.
#[derive(Debug, Default)]
pub struct ParamBuilder {
    manifest: Vec<TensorShape>,
}

impl ParamBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> &mut Self {
        self.manifest.push(TensorShape {
            name: name.to_string(),
            rows,
            cols,
        });
        self
    }

    pub fn vector(&mut self, name: &str, len: usize) -> &mut Self {
        self.matrix(name, len, 1)
    }

    /// Finish the layout with all parameters at zero.
    pub fn finish(self) -> ParamVector {
        let total: usize = self.manifest.iter().map(|t| t.len()).sum();
        let mut offsets = BTreeMap::new();
        let mut off = 0;
        for t in &self.manifest {
            offsets.insert(t.name.clone(), off);
            off += t.len();
        }
        ParamVector {
            data: vec![0.0; total],
            manifest: self.manifest,
            offsets,
        }
    }
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn manifest(&self) -> &[TensorShape] {
        &self.manifest
    }

    pub fn shape(&self, name: &str) -> Result<&TensorShape> {
        self.manifest
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CoreError::UnknownTensor(name.to_string()))
    }

    pub fn offset(&self, name: &str) -> Result<usize> {
        self.offsets
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::UnknownTensor(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        let off = self.offset(name)?;
        let len = self.shape(name)?.len();
        Ok(&self.data[off..off + len])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let off = self.offset(name)?;
        let len = self.shape(name)?.len();
        Ok(&mut self.data[off..off + len])
    }

    pub fn fill_tensor(&mut self, name: &str, value: f64) -> Result<()> {
        for v in self.tensor_mut(name)? {
            *v = value;
        }
        Ok(())
    }

    /// Xavier-uniform initialization of every matrix tensor; vectors (biases)
    /// are left at zero. Callers override individual biases afterwards when a
    /// different convention applies (e.g. LSTM forget gates).
    pub fn init_xavier<R: Rng>(&mut self, rng: &mut R) {
        let shapes: Vec<(usize, usize, usize)> = {
            let mut off = 0;
            self.manifest
                .iter()
                .map(|t| {
                    let entry = (off, t.rows, t.cols);
                    off += t.len();
                    entry
                })
                .collect()
        };
        for (off, rows, cols) in shapes {
            if cols <= 1 {
                continue;
            }
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for v in &mut self.data[off..off + rows * cols] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::NonFinite("parameter vector".into()))
        }
    }

    /// Serialize to the persistence container (see [`ParamContainer`]).
    /// f64 values survive the round trip bit-exactly.
    pub fn to_json(&self) -> String {
        let container = ParamContainer {
            format: FORMAT_TAG.to_string(),
            tensors: self.manifest.clone(),
            data: self.data.clone(),
        };
        serde_json::to_string(&container).expect("param serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let container: ParamContainer = serde_json::from_str(text)?;
        if container.format != FORMAT_TAG {
            return Err(CoreError::Config(format!(
                "unsupported parameter container format `{}`",
                container.format
            )));
        }
        let total: usize = container.tensors.iter().map(|t| t.len()).sum();
        if total != container.data.len() {
            return Err(CoreError::DimMismatch(format!(
                "manifest wants {total} values, container has {}",
                container.data.len()
            )));
        }
        let mut offsets = BTreeMap::new();
        let mut off = 0;
        for t in &container.tensors {
            offsets.insert(t.name.clone(), off);
            off += t.len();
        }
        let pv = ParamVector {
            data: container.data,
            manifest: container.tensors,
            offsets,
        };
        pv.assert_finite()?;
        Ok(pv)
    }
}

const FORMAT_TAG: &str = "arc-params-v1";

/// On-disk container: a self-describing JSON document holding the shape
/// manifest and the flat array. Stable across versions via the format tag.
#[derive(Serialize, Deserialize)]
struct ParamContainer {
    format: String,
    tensors: Vec<TensorShape>,
    data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn manifest_partitions_array() {
        let mut b = ParamBuilder::new();
        b.matrix("w", 3, 2).vector("b", 3);
        let p = b.finish();
        assert_eq!(p.len(), 9);
        assert_eq!(p.offset("w").unwrap(), 0);
        assert_eq!(p.offset("b").unwrap(), 6);
        assert!(p.offset("nope").is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut b = ParamBuilder::new();
        b.matrix("w", 4, 5).vector("b", 4);
        let mut p = b.finish();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        p.init_xavier(&mut rng);
        p.tensor_mut("b").unwrap()[2] = -0.0;
        p.tensor_mut("b").unwrap()[1] = 1.0e-308 * 0.5; // subnormal
        let back = ParamVector::from_json(&p.to_json()).unwrap();
        assert_eq!(back.manifest(), p.manifest());
        for (a, b) in back.data().iter().zip(p.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn xavier_bound_respected() {
        let mut b = ParamBuilder::new();
        b.matrix("w", 10, 20);
        let mut p = b.finish();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        p.init_xavier(&mut rng);
        let bound = (6.0 / 30.0f64).sqrt();
        assert!(p.data().iter().all(|v| v.abs() <= bound));
    }
}
