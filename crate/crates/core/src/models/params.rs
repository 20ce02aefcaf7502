use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, uniquely named trainable tensors plus the subset selected as
/// attack targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
    attackable: BTreeSet<String>,
}

impl ParameterSet {
    /// Builds a set whose attackable names default to every non-bias tensor.
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
            }
        }
        let attackable = entries
            .iter()
            .map(|(n, _)| n)
            .filter(|n| !is_bias(n))
            .cloned()
            .collect();
        Ok(Self {
            entries,
            attackable,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn attackable(&self) -> &BTreeSet<String> {
        &self.attackable
    }

    pub fn is_attackable(&self, name: &str) -> bool {
        self.attackable.contains(name)
    }

    /// Replaces the attackable selection; every name must exist.
    pub fn set_attackable<I, S>(&mut self, names: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for n in names {
            let n = n.into();
            if !self.contains(&n) {
                return Err(Error::UnknownParameter(n));
            }
            set.insert(n);
        }
        self.attackable = set;
        Ok(())
    }

    /// `(name, L2 norm)` per tensor, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.norm()))
            .collect()
    }
}

/// Bias tensors are named `*.b`.
pub fn is_bias(name: &str) -> bool {
    name.ends_with(".b")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> ParameterSet {
        ParameterSet::new(vec![
            ("fc.w".into(), Tensor::zeros(&[2, 2])),
            ("fc.b".into(), Tensor::zeros(&[2])),
        ])
        .unwrap()
    }

    #[test]
    fn biases_not_attackable_by_default() {
        let p = set();
        assert!(p.is_attackable("fc.w"));
        assert!(!p.is_attackable("fc.b"));
        assert_eq!(p.count(), 6);
    }

    #[test]
    fn duplicate_and_unknown_names_rejected() {
        assert!(ParameterSet::new(vec![
            ("a".into(), Tensor::zeros(&[1])),
            ("a".into(), Tensor::zeros(&[1])),
        ])
        .is_err());
        let mut p = set();
        assert!(matches!(
            p.set_attackable(["nope"]),
            Err(Error::UnknownParameter(_))
        ));
        p.set_attackable(["fc.b"]).unwrap();
        assert!(p.is_attackable("fc.b"));
    }
}
