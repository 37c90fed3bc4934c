//! Labelled examples and the chunks they are partitioned into.

use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Target,
    Demonstration,
}

/// One labelled input. `features` is the toy-task input vector and `label`
/// a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub role: Role,
}

impl Example {
    pub fn new(id: u64, features: Vec<f64>, label: usize) -> Self {
        Self {
            id,
            features,
            label,
            role: Role::Target,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }
}

/// Errors if any id occurs twice in `examples`.
pub fn ensure_unique_ids(examples: &[Example]) -> Result<()> {
    let mut seen = HashSet::with_capacity(examples.len());
    for ex in examples {
        if !seen.insert(ex.id) {
            return Err(Error::InvalidDataset(format!("duplicate example id {}", ex.id)));
        }
    }
    Ok(())
}

/// One target plus its `K` demonstrations: the unit processed by a single
/// forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    target: Example,
    demos: Vec<Example>,
}

impl Chunk {
    pub fn new(target: Example, demos: Vec<Example>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(demos.len() + 1);
        ids.insert(target.id);
        for d in &demos {
            if !ids.insert(d.id) {
                return Err(Error::InvalidDataset(format!(
                    "example id {} repeated within a chunk",
                    d.id
                )));
            }
        }
        Ok(Self {
            target: target.with_role(Role::Target),
            demos: demos
                .into_iter()
                .map(|d| d.with_role(Role::Demonstration))
                .collect(),
        })
    }

    pub fn target(&self) -> &Example {
        &self.target
    }

    pub fn demos(&self) -> &[Example] {
        &self.demos
    }

    pub fn k(&self) -> usize {
        self.demos.len()
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        std::iter::once(&self.target).chain(self.demos.iter())
    }

    /// Replaces the example with id `id` (target or demo) by `replacement`,
    /// keeping its role. Returns false when `id` is not in the chunk.
    pub fn replace(&mut self, id: u64, replacement: Example) -> bool {
        if self.target.id == id {
            self.target = replacement.with_role(Role::Target);
            return true;
        }
        match self.demos.iter_mut().find(|d| d.id == id) {
            Some(slot) => {
                *slot = replacement.with_role(Role::Demonstration);
                true
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: u64) -> Example {
        Example::new(id, vec![0.0], 0)
    }

    #[test]
    fn chunk_rejects_repeated_ids() {
        assert!(Chunk::new(ex(1), vec![ex(2), ex(3)]).is_ok());
        assert!(Chunk::new(ex(1), vec![ex(2), ex(1)]).is_err());
        assert!(Chunk::new(ex(1), vec![ex(2), ex(2)]).is_err());
    }

    #[test]
    fn chunk_assigns_roles() {
        let c = Chunk::new(ex(1).with_role(Role::Demonstration), vec![ex(2)]).unwrap();
        assert_eq!(c.target().role, Role::Target);
        assert_eq!(c.demos()[0].role, Role::Demonstration);
    }

    #[test]
    fn replace_keeps_role() {
        let mut c = Chunk::new(ex(1), vec![ex(2), ex(3)]).unwrap();
        assert!(c.replace(3, ex(9)));
        assert_eq!(c.demos()[1].id, 9);
        assert_eq!(c.demos()[1].role, Role::Demonstration);
        assert!(!c.replace(42, ex(10)));
    }

    #[test]
    fn unique_ids() {
        assert!(ensure_unique_ids(&[ex(1), ex(2)]).is_ok());
        assert!(ensure_unique_ids(&[ex(1), ex(1)]).is_err());
    }
}
