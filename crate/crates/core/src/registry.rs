//! Name-keyed factories for interchangeable strategies.
//!
//! A [`Registry`] maps a short name (`"magan"`, `"ring8"`, ...) to a factory
//! that builds a boxed trait object from a parameter struct. Callers pick the
//! strategy at runtime from config or command-line input.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("unknown {kind} `{name}` (known: {known})")]
    Unknown {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("{kind} `{name}`: {reason}")]
    Invalid {
        kind: &'static str,
        name: String,
        reason: String,
    },
}

pub type Factory<T, P> = fn(&P) -> Result<Box<T>, String>;

pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Factory<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, factory: Factory<T, P>) -> &mut Self {
        self.entries.insert(name, factory);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>, RegistryError> {
        let factory = self.entries.get(name).ok_or_else(|| RegistryError::Unknown {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().collect::<Vec<_>>().join(", "),
        })?;
        factory(params).map_err(|reason| RegistryError::Invalid {
            kind: self.kind,
            name: name.to_string(),
            reason,
        })
    }
}

impl<T: ?Sized, P> fmt::Debug for Registry<T, P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}
