use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

/// Training/freezing unit a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Encoder,
    BlankBranch,
    Ilm,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Encoder, Group::BlankBranch, Group::Ilm];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::BlankBranch => "blank_branch",
            Group::Ilm => "ilm",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Group::Encoder),
            "blank_branch" => Ok(Group::BlankBranch),
            "ilm" => Ok(Group::Ilm),
            other => Err(Error::Config(format!("unknown parameter group {other:?}"))),
        }
    }
}

/// Named, grouped collection of tensors. Insertion order is preserved and is
/// the serialization order.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    groups: Vec<Group>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl PartialEq for ParameterSet {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.groups == other.groups && self.tensors == other.tensors
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        group: Group,
        tensor: Tensor,
    ) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.groups.push(group);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn group(&self, id: usize) -> Group {
        self.groups[id]
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(move |i| &mut self.tensors[i])
    }

    /// Raw values of tensor `id`.
    pub(crate) fn values(&self, id: usize) -> &[f64] {
        self.tensors[id].data()
    }

    pub(crate) fn values_mut(&mut self, id: usize) -> &mut [f64] {
        self.tensors[id].data_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Group, &Tensor)> {
        self.names
            .iter()
            .zip(&self.groups)
            .zip(&self.tensors)
            .map(|((n, g), t)| (n.as_str(), *g, t))
    }

    /// Same names, groups and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            groups: self.groups.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn group_count(&self, group: Group) -> usize {
        self.iter()
            .filter(|(_, g, _)| *g == group)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    /// Parameter counts per group, in `Group::ALL` order.
    pub fn group_counts(&self) -> Vec<(Group, usize)> {
        Group::ALL
            .iter()
            .map(|&g| (g, self.group_count(g)))
            .collect()
    }

    /// SHA-256 over names, shapes and value bits of every tensor in `group`.
    pub fn checksum(&self, group: Group) -> String {
        let mut h = Sha256::new();
        for (name, g, t) in self.iter() {
            if g != group {
                continue;
            }
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// `self += scale * other`, restricted to tensors whose group is in `groups`.
    pub fn axpy(&mut self, scale: f64, other: &ParameterSet, groups: &[Group]) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if !groups.contains(&self.groups[i]) {
                continue;
            }
            for (a, b) in t.data_mut().iter_mut().zip(other.tensors[i].data()) {
                *a += scale * b;
            }
        }
    }

    pub fn add_assign(&mut self, other: &ParameterSet) {
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    /// Euclidean norm over all values (or over `groups` when given).
    pub fn norm(&self, groups: Option<&[Group]>) -> f64 {
        self.iter()
            .filter(|(_, g, _)| groups.is_none_or(|gs| gs.contains(g)))
            .flat_map(|(_, _, t)| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Copies every tensor of `group` from `src`; names and shapes must match.
    pub fn copy_group_from(&mut self, src: &ParameterSet, group: Group) -> Result<()> {
        for i in 0..self.len() {
            if self.groups[i] != group {
                continue;
            }
            let other = src.get(&self.names[i]).ok_or_else(|| {
                Error::Config(format!("source parameters lack {:?}", self.names[i]))
            })?;
            if other.shape() != self.tensors[i].shape() {
                return Err(Error::Dimension(format!(
                    "{}: shape {:?} vs {:?}",
                    self.names[i],
                    other.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = other.clone();
        }
        Ok(())
    }

    /// Rounds every value through `f32`, the checkpoint storage precision.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}
