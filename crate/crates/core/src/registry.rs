//! Name → constructor tables for the interchangeable strategies (clearing
//! methods, optimizers, trainers). Lookups of unknown names fail with the
//! list of valid names.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Registry<C> {
    kind: &'static str,
    entries: BTreeMap<&'static str, C>,
}

impl<C: Copy> Registry<C> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, ctor: C) -> &mut Self {
        self.entries.insert(name, ctor);
        self
    }

    pub fn get(&self, name: &str) -> Result<C> {
        self.entries
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
                valid: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl<C> std::fmt::Debug for Registry<C> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_lists_valid() {
        let mut r: Registry<fn() -> u8> = Registry::new("widget");
        r.register("a", || 1).register("b", || 2);
        assert_eq!(r.get("b").unwrap()(), 2);
        let err = r.get("c").unwrap_err().to_string();
        assert!(err.contains("widget `c`") && err.contains("a, b"), "{err}");
    }
}
