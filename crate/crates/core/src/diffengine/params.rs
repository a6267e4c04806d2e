use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{EngineError, Gradients, Tape, Tensor, Var};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Named parameters, iterated lexicographically by path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
}

/// Tape variables for every parameter of a store, keyed by path.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, path: &str) -> Result<Var, EngineError> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| EngineError::UnknownParam(path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<(), EngineError> {
        let path = path.into();
        if self.params.contains_key(&path) {
            return Err(EngineError::DuplicateParam(path));
        }
        if !value.is_finite() {
            return Err(EngineError::NonFinite(format!("parameter `{path}`")));
        }
        self.params.insert(path, Parameter { value, grad: None });
        Ok(())
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, path: &str, value: Tensor) -> Result<(), EngineError> {
        let p = self
            .params
            .get_mut(path)
            .ok_or_else(|| EngineError::UnknownParam(path.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(EngineError::ShapeMismatch(format!(
                "parameter `{path}`: {:?} vs {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor, EngineError> {
        self.params
            .get(path)
            .map(|p| &p.value)
            .ok_or_else(|| EngineError::UnknownParam(path.to_string()))
    }

    pub fn param(&self, path: &str) -> Option<&Parameter> {
        self.params.get(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.params.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter)> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Moves every parameter of `other` into this store under `prefix/`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: ParamStore) -> Result<(), EngineError> {
        for (path, p) in other.params {
            self.insert(format!("{prefix}/{path}"), p.value)?;
        }
        Ok(())
    }

    /// Registers every parameter as a leaf on `tape`. Parameters whose path
    /// starts with one of `frozen_prefixes` do not require grad.
    pub fn bind(&self, tape: &mut Tape, frozen_prefixes: &[&str]) -> Result<Bindings, EngineError> {
        let mut vars = BTreeMap::new();
        for (path, p) in &self.params {
            let trainable = !frozen_prefixes.iter().any(|f| path.starts_with(f));
            vars.insert(path.clone(), tape.leaf(p.value.clone(), trainable)?);
        }
        Ok(Bindings { vars })
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<Bindings, EngineError> {
        let mut vars = BTreeMap::new();
        for (path, p) in &self.params {
            vars.insert(path.clone(), tape.constant(p.value.clone())?);
        }
        Ok(Bindings { vars })
    }

    /// Adds leaf gradients into each bound parameter's `grad` buffer.
    pub fn accumulate_grads(&mut self, bindings: &Bindings, grads: &Gradients) -> Result<(), EngineError> {
        for (path, var) in bindings.iter() {
            let Some(g) = grads.get(*var) else { continue };
            let p = self
                .params
                .get_mut(path)
                .ok_or_else(|| EngineError::UnknownParam(path.clone()))?;
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            if let Some(g) = &mut p.grad {
                g.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn to_json(&self) -> Result<String, EngineError> {
        let doc = self.to_document()?;
        serde_json::to_string(&doc).map_err(|e| EngineError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let doc: ParamsIn =
            serde_json::from_str(text).map_err(|e| EngineError::Serialization(e.to_string()))?;
        Self::from_document(doc)
    }

    pub(crate) fn to_document(&self) -> Result<ParamsOut, EngineError> {
        let mut params = BTreeMap::new();
        for (path, p) in &self.params {
            let body = p
                .value
                .data()
                .iter()
                .map(|v| format_f64(*v))
                .collect::<Vec<_>>()
                .join(",");
            let data = RawValue::from_string(format!("[{body}]"))
                .map_err(|e| EngineError::Serialization(e.to_string()))?;
            params.insert(
                path.clone(),
                TensorOut {
                    shape: p.value.shape().to_vec(),
                    data,
                },
            );
        }
        Ok(ParamsOut {
            format_version: PARAMS_FORMAT_VERSION,
            params,
        })
    }

    pub(crate) fn from_document(doc: ParamsIn) -> Result<Self, EngineError> {
        if doc.format_version != PARAMS_FORMAT_VERSION {
            return Err(EngineError::Serialization(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let mut store = ParamStore::new();
        for (path, t) in doc.params {
            store.insert(path, Tensor::new(t.shape, t.data)?)?;
        }
        Ok(store)
    }
}

/// 17 significant digits: enough to round-trip any binary64 value.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Serialize)]
pub(crate) struct TensorOut {
    shape: Vec<usize>,
    data: Box<RawValue>,
}

#[derive(Serialize)]
pub(crate) struct ParamsOut {
    format_version: u32,
    params: BTreeMap<String, TensorOut>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TensorIn {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ParamsIn {
    format_version: u32,
    params: BTreeMap<String, TensorIn>,
}
