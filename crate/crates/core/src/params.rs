//! Ordered named parameter collections and their binding onto a tape.

use std::collections::HashMap;

use scarcegan_autodiff::{Array, Tape, Tensor};

use crate::error::{contract, Result};

/// Named tensors in a fixed insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Array)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.entries[i].1 = value;
        } else {
            self.index.insert(name.clone(), self.entries.len());
            self.entries.push((name, value));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.entries.iter_mut().map(|(n, a)| (n.as_str(), a))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }

    /// Same names, zero values.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, a) in self.iter() {
            out.insert(n, Array::zeros(a.shape()));
        }
        out
    }

    /// Binds every parameter as a tensor. Names for which `trainable`
    /// returns true become leaves on `tape`; the rest are constants.
    pub fn bind(&self, tape: Option<&Tape>, trainable: impl Fn(&str) -> bool) -> Bound {
        let mut map = HashMap::with_capacity(self.entries.len());
        let mut leaves = Vec::new();
        for (name, value) in &self.entries {
            let t = match tape {
                Some(tape) if trainable(name) => {
                    let t = tape.leaf(value.clone());
                    leaves.push((name.clone(), t.clone()));
                    t
                }
                _ => Tensor::constant(value.clone()),
            };
            map.insert(name.clone(), t);
        }
        Bound { map, leaves }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn compatibility_report(&self, other: &ParamSet, label: &str) -> Vec<String> {
        let mut issues = Vec::new();
        for (n, a) in self.iter() {
            match other.get(n) {
                None => issues.push(format!("{label}: `{n}` missing from source")),
                Some(b) if b.shape() != a.shape() => issues.push(format!(
                    "{label}: `{n}` has shape {:?} in source, expected {:?}",
                    b.shape(),
                    a.shape()
                )),
                _ => {}
            }
        }
        for n in other.names() {
            if !self.contains(n) {
                issues.push(format!("{label}: unexpected `{n}` in source"));
            }
        }
        issues
    }
}

/// Parameters bound as tensors for one forward/backward pass.
pub struct Bound {
    map: HashMap<String, Tensor>,
    leaves: Vec<(String, Tensor)>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| contract(format!("unknown parameter `{name}`")))
    }

    /// Trainable leaves in parameter order.
    pub fn leaves(&self) -> &[(String, Tensor)] {
        &self.leaves
    }
}
