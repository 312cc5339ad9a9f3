//! Name-keyed registries of interchangeable strategies.
//!
//! A registry maps a stable name (as written in config files and on the
//! command line) to a factory producing a boxed trait object. Constraint
//! handlers and noise mechanisms are both selected this way.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Factory closure building one strategy from shared construction arguments.
pub type Factory<A, T> = Box<dyn Fn(&A) -> Box<T> + Send + Sync>;

pub struct Registry<A, T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Factory<A, T>>,
}

impl<A, T: ?Sized> Registry<A, T> {
    /// An empty registry; `kind` names the strategy family in error messages.
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Adds or replaces the factory registered under `name`.
    pub fn register(&mut self, name: &'static str, factory: impl Fn(&A) -> Box<T> + Send + Sync + 'static) {
        self.entries.insert(name, Box::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(&self, name: &str, args: &A) -> Result<Box<T>> {
        self.entries
            .get(name)
            .map(|f| f(args))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    /// Checks a name without building anything.
    pub fn check(&self, name: &str) -> Result<()> {
        if self.contains(name) {
            Ok(())
        } else {
            Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
        }
    }
}

impl<A, T: ?Sized> fmt::Debug for Registry<A, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}
