use std::collections::BTreeMap;
use std::future::Future;
use std::pin::Pin;

use serde::Serialize;
use thiserror::Error;

use super::{ParamSpec, RoleContext, RoleError, RoleExit};

pub type RoleFuture = Pin<Box<dyn Future<Output = Result<RoleExit, RoleError>>>>;

/// Builds a role's task from its context.
pub type RoleFactory = fn(RoleContext) -> RoleFuture;

#[derive(Clone)]
pub struct RoleSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub factory: RoleFactory,
}

/// Published form of a role, consumed by parameter forms in clients.
#[derive(Clone, Debug, Serialize)]
pub struct RoleSchema {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("role {0:?} is already registered")]
    Duplicate(String),
}

#[derive(Clone, Default)]
pub struct RoleRegistry {
    roles: BTreeMap<String, RoleSpec>,
}

impl RoleRegistry {
    /// An empty registry.
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding every stock protocol role.
    pub fn standard() -> Self {
        let mut registry = Self::new();
        crate::protocols::register_all(&mut registry).expect("stock role names are unique");
        registry
    }

    pub fn register(&mut self, spec: RoleSpec) -> Result<(), RegistryError> {
        if self.roles.contains_key(&spec.name) {
            return Err(RegistryError::Duplicate(spec.name));
        }
        self.roles.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RoleSpec> {
        self.roles.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.roles.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.roles.keys().map(String::as_str)
    }

    pub fn schemas(&self) -> Vec<RoleSchema> {
        self.roles
            .values()
            .map(|r| RoleSchema {
                name: r.name.clone(),
                description: r.description.clone(),
                params: r.params.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noop(_ctx: RoleContext) -> RoleFuture {
        Box::pin(async { Ok(RoleExit::Completed) })
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut r = RoleRegistry::new();
        let spec = RoleSpec {
            name: "bb84_sender".into(),
            description: String::new(),
            params: vec![],
            factory: noop,
        };
        r.register(spec.clone()).unwrap();
        assert!(r.contains("bb84_sender"));
        assert_eq!(
            r.register(spec),
            Err(RegistryError::Duplicate("bb84_sender".into()))
        );
    }

    #[test]
    fn standard_registry_has_stock_roles() {
        let r = RoleRegistry::standard();
        let names: Vec<&str> = r.names().collect();
        for role in [
            "bb84_receiver",
            "bb84_sender",
            "cascade_receiver",
            "cascade_sender",
            "ent_dist_receiver",
            "ent_dist_source",
        ] {
            assert!(names.contains(&role), "{role}");
        }
    }
}
