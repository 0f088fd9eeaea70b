//! Environments and the store.
//!
//! An environment maps names to values; the store keeps a stack of
//! environments per processor, one frame per feature execution.

use std::collections::BTreeMap;

use super::error::{StateError, StateResult};
use super::ids::{Proc, Value};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Env {
    values: BTreeMap<String, Value>,
}

impl Env {
    pub fn make() -> Env {
        Env::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|s| s.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn value(&self, name: &str) -> StateResult<Value> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| StateError::pre("ENV.value", format!("unknown name '{name}'")))
    }

    /// Updated environment mapping `name` to `v`, defining the name if
    /// needed.
    pub fn update(&self, name: &str, v: Value) -> Env {
        let mut e = self.clone();
        e.values.insert(name.to_string(), v);
        e
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Value)> {
        self.values.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Store {
    envs: BTreeMap<Proc, Vec<Env>>,
}

impl Store {
    pub fn make() -> Store {
        Store::default()
    }

    /// The environment stack of `p`; empty for processors never pushed to.
    pub fn envs(&self, p: Proc) -> &[Env] {
        self.envs.get(&p).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn top(&self, p: Proc) -> StateResult<&Env> {
        self.envs(p)
            .last()
            .ok_or_else(|| StateError::pre("STORE.top", format!("no environment on {p}")))
    }

    pub fn push_env(&self, p: Proc, e: Env) -> Store {
        let mut s = self.clone();
        s.envs.entry(p).or_default().push(e);
        s
    }

    pub fn pop_env(&self, p: Proc) -> StateResult<Store> {
        if self.envs(p).is_empty() {
            return Err(StateError::pre(
                "STORE.pop_env",
                format!("no environment on {p}"),
            ));
        }
        let mut s = self.clone();
        s.envs.get_mut(&p).expect("non-empty").pop();
        Ok(s)
    }

    pub fn procs_with_envs(&self) -> impl Iterator<Item = (Proc, &[Env])> {
        self.envs.iter().map(|(p, stack)| (*p, stack.as_slice()))
    }
}
