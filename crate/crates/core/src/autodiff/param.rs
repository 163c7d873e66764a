use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named array owned by a model. Trainable parameters carry a gradient
/// accumulator of the same shape once a backward pass has touched them.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    trainable: bool,
    pinned_rows: Vec<usize>,
}

impl Param {
    pub fn trainable(&self) -> bool {
        self.trainable
    }

    /// Leading-axis rows whose gradient is always discarded (e.g. the padding embedding).
    pub fn pinned_rows(&self) -> &[usize] {
        &self.pinned_rows
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub(crate) fn mask_pinned(&self, grad: &mut Tensor) {
        if self.pinned_rows.is_empty() {
            return;
        }
        let row = grad.numel() / grad.shape()[0];
        for &r in &self.pinned_rows {
            grad.data_mut()[r * row..(r + 1) * row].iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// Ordered collection of parameters. Insertion order is the canonical
/// order for counting, optimization and serialization.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
            trainable,
            pinned_rows: Vec::new(),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn pin_rows(&mut self, id: ParamId, rows: Vec<usize>) {
        self.params[id.0].pinned_rows = rows;
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        let p = &mut self.params[id.0];
        p.trainable = trainable;
        if !trainable {
            p.grad = None;
        }
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(Param::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds gradients produced by a backward pass into the accumulators of
    /// trainable parameters. Pinned rows stay at zero.
    pub fn accumulate(&mut self, grads: ParamGrads) -> Result<()> {
        for (id, update) in grads.updates {
            let param = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::InvalidState(format!("gradient for unknown parameter #{}", id.0)))?;
            if !param.trainable {
                continue;
            }
            let shape = param.value.shape().to_vec();
            let grad = param.grad.get_or_insert_with(|| Tensor::zeros(shape.clone()));
            match update {
                GradUpdate::Dense(g) => {
                    if g.shape() != shape.as_slice() {
                        return Err(Error::InvalidState(format!(
                            "gradient shape {:?} does not match parameter {} of shape {shape:?}",
                            g.shape(),
                            param.name
                        )));
                    }
                    grad.add_assign(&g);
                }
                GradUpdate::Rows { rows, values } => {
                    let width = param.value.numel() / shape[0];
                    let data = grad.data_mut();
                    for (&r, chunk) in rows.iter().zip(values.chunks_exact(width)) {
                        data[r * width..(r + 1) * width]
                            .iter_mut()
                            .zip(chunk)
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            let mut g = param.grad.take().expect("gradient allocated above");
            param.mask_pinned(&mut g);
            param.grad = Some(g);
        }
        Ok(())
    }

    /// Serializable snapshot of every parameter in canonical order.
    pub fn to_manifest(&self) -> ParamManifest {
        ParamManifest {
            format: PARAM_MANIFEST_FORMAT.to_string(),
            version: PARAM_MANIFEST_VERSION,
            params: self
                .params
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites parameter values from a manifest. Names, order and shapes
    /// must match exactly.
    pub fn load_manifest(&mut self, manifest: &ParamManifest) -> Result<()> {
        if manifest.format != PARAM_MANIFEST_FORMAT || manifest.version != PARAM_MANIFEST_VERSION {
            return Err(Error::invalid(format!(
                "unsupported parameter manifest {} v{}",
                manifest.format, manifest.version
            )));
        }
        if manifest.params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "manifest has {} parameters, model has {}",
                manifest.params.len(),
                self.params.len()
            )));
        }
        for (p, rec) in self.params.iter().zip(&manifest.params) {
            if p.name != rec.name || p.value.shape() != rec.shape.as_slice() {
                return Err(Error::invalid(format!(
                    "manifest entry {} {:?} does not match parameter {} {:?}",
                    rec.name,
                    rec.shape,
                    p.name,
                    p.value.shape()
                )));
            }
        }
        for (p, rec) in self.params.iter_mut().zip(&manifest.params) {
            p.value = Tensor::new(rec.shape.clone(), rec.values.clone())?;
            p.grad = None;
        }
        Ok(())
    }
}

pub const PARAM_MANIFEST_FORMAT: &str = "kaconvtext-params";
pub const PARAM_MANIFEST_VERSION: u32 = 1;

/// On-disk parameter format: a versioned header followed by
/// `(name, shape, values)` records in model order, values row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format: String,
    pub version: u32,
    pub params: Vec<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum GradUpdate {
    Dense(Tensor),
    /// Sparse rows of the leading axis, `values` holding `rows.len()` rows back to back.
    Rows { rows: Vec<usize>, values: Vec<f64> },
}

/// Parameter gradients produced by [`Tape::backward`](super::Tape::backward).
#[derive(Debug, Clone, Default)]
pub struct ParamGrads {
    pub(crate) updates: Vec<(ParamId, GradUpdate)>,
}

impl ParamGrads {
    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    /// Dense gradient for `id`, summing all contributions. `None` if the
    /// parameter received no gradient.
    pub fn dense(&self, id: ParamId, shape: &[usize]) -> Option<Tensor> {
        let mut out: Option<Tensor> = None;
        for (pid, update) in &self.updates {
            if *pid != id {
                continue;
            }
            let acc = out.get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
            match update {
                GradUpdate::Dense(g) => acc.add_assign(g),
                GradUpdate::Rows { rows, values } => {
                    let width = acc.numel() / shape[0];
                    for (&r, chunk) in rows.iter().zip(values.chunks_exact(width)) {
                        acc.data_mut()[r * width..(r + 1) * width]
                            .iter_mut()
                            .zip(chunk)
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
        out
    }
}
