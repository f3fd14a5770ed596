//! Named parameters with an explicit trainable/frozen partition.

use super::Tensor;
use crate::{Error, Result};
use std::collections::HashMap;

/// Naming rule for the trainable partition: only the audio cross-attention
/// adapters and the audio feature projections train, and both families carry
/// the marker in their names. Every other tensor is frozen.
pub fn is_trainable_name(name: &str) -> bool {
    name.contains("audio_xattn") || name.contains("proj")
}

/// One named tensor plus its gradient buffer and trainable flag.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Insertion-ordered parameter set. Order is part of the checkpoint format,
/// so it must be deterministic across builds with the same seed.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter '{name}'")));
        }
        if !value.is_finite() {
            return Err(Error::Numerical(format!("parameter '{name}' is non-finite")));
        }
        let grad = Tensor::zeros(&value.shape);
        let idx = self.params.len();
        self.params.push(Parameter { name: name.to_string(), value, grad, trainable });
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    /// Insert with the trainable flag derived from [`is_trainable_name`].
    /// All model registration goes through here so the partition can never
    /// drift from the naming rule.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<usize> {
        self.insert(name, value, is_trainable_name(name))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        let i = self.index_of(name)?;
        Some(&mut self.params[i])
    }

    pub fn get_by_index(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Accumulate into the grad buffer when the entry is trainable; frozen
    /// entries keep grad = 0 by construction.
    pub(crate) fn accumulate_grad(&mut self, idx: usize, g: &[f64]) {
        let p = &mut self.params[idx];
        if !p.trainable {
            return;
        }
        for (gv, av) in p.grad.data.iter_mut().zip(g) {
            *gv += av;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.fill(0.0);
        }
    }

    /// Disjoint, exhaustive trainable/frozen split with value counts.
    pub fn partition(&self) -> ParameterPartition {
        let mut trainable = Vec::new();
        let mut frozen = Vec::new();
        let mut nt = 0usize;
        let mut nf = 0usize;
        for p in &self.params {
            if p.trainable {
                trainable.push(p.name.clone());
                nt += p.value.numel();
            } else {
                frozen.push(p.name.clone());
                nf += p.value.numel();
            }
        }
        ParameterPartition {
            trainable_names: trainable,
            frozen_names: frozen,
            trainable_values: nt,
            frozen_values: nf,
        }
    }
}

/// Report of the trainable/frozen split.
#[derive(Debug, Clone)]
pub struct ParameterPartition {
    pub trainable_names: Vec<String>,
    pub frozen_names: Vec<String>,
    pub trainable_values: usize,
    pub frozen_values: usize,
}

impl ParameterPartition {
    pub fn total_values(&self) -> usize {
        self.trainable_values + self.frozen_values
    }

    pub fn trainable_fraction(&self) -> f64 {
        if self.total_values() == 0 {
            0.0
        } else {
            self.trainable_values as f64 / self.total_values() as f64
        }
    }
}

impl std::fmt::Display for ParameterPartition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "parameters: {} trainable / {} total (fraction {:.3})",
            self.trainable_values,
            self.total_values(),
            self.trainable_fraction()
        )?;
        for n in &self.trainable_names {
            writeln!(f, "  trainable {n}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_is_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[2]), true).unwrap();
        assert!(matches!(s.insert("w", Tensor::zeros(&[2]), true), Err(Error::Contract(_))));
    }

    #[test]
    fn register_derives_trainable_from_name() {
        let mut s = ParamStore::new();
        s.register("block0.audio_xattn.w_q", Tensor::zeros(&[2])).unwrap();
        s.register("audio_proj.semantic.3.w", Tensor::zeros(&[2])).unwrap();
        s.register("base.block0.w_q", Tensor::zeros(&[2])).unwrap();
        s.register("base.null.image_tokens", Tensor::zeros(&[2])).unwrap();
        assert!(s.get("block0.audio_xattn.w_q").unwrap().trainable);
        assert!(s.get("audio_proj.semantic.3.w").unwrap().trainable);
        assert!(!s.get("base.block0.w_q").unwrap().trainable);
        assert!(!s.get("base.null.image_tokens").unwrap().trainable);
    }

    #[test]
    fn partition_counts_values_and_fraction() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(&[3]), true).unwrap();
        s.insert("b", Tensor::zeros(&[9]), false).unwrap();
        let p = s.partition();
        assert_eq!(p.trainable_values, 3);
        assert_eq!(p.frozen_values, 9);
        assert!((p.trainable_fraction() - 0.25).abs() < 1e-12);
        assert_eq!(p.trainable_names, vec!["a".to_string()]);
    }
}
