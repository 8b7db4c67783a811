use std::collections::BTreeMap;
use std::sync::Arc;

use super::{ComponentError, ConfigTree, NumericalComponent};
use crate::meshfield::Mesh;

/// Builds an uninitialized component bound to a mesh.
pub type Factory = Box<dyn Fn(Arc<Mesh>) -> Box<dyn NumericalComponent> + Send + Sync>;

/// Maps `(application, implementation)` to a component factory.
#[derive(Default)]
pub struct Registry {
    factories: BTreeMap<(String, String), Factory>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry pre-loaded with the reference flow, transport and chemistry
    /// implementations.
    pub fn with_reference_components() -> Self {
        let mut r = Registry::new();
        r.register("flow", "darcy-reference", Box::new(|m| Box::new(crate::flow::DarcyComponent::new(m))))
            .expect("fresh registry");
        r.register("transport", "fv-reference", Box::new(|m| Box::new(crate::transport::TransportComponent::new(m))))
            .expect("fresh registry");
        r.register(
            "chemistry",
            "equilibrium-reference",
            Box::new(|m| Box::new(crate::chemistry::EquilibriumComponent::new(m))),
        )
        .expect("fresh registry");
        r
    }

    pub fn register(
        &mut self,
        application: impl Into<String>,
        implementation: impl Into<String>,
        factory: Factory,
    ) -> Result<(), ComponentError> {
        let key = (application.into(), implementation.into());
        if self.factories.contains_key(&key) {
            return Err(ComponentError::DuplicateKey {
                application: key.0,
                implementation: key.1,
            });
        }
        self.factories.insert(key, factory);
        Ok(())
    }

    pub fn contains(&self, application: &str, implementation: &str) -> bool {
        self.factories.contains_key(&(application.to_string(), implementation.to_string()))
    }

    /// Registered pairs in lexical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        self.factories.keys().cloned().collect()
    }

    /// Instantiates and initializes a component.
    pub fn create(
        &self,
        application: &str,
        implementation: &str,
        mesh: Arc<Mesh>,
        config: &ConfigTree,
    ) -> Result<Box<dyn NumericalComponent>, ComponentError> {
        let key = (application.to_string(), implementation.to_string());
        let factory = self.factories.get(&key).ok_or_else(|| ComponentError::UnknownImplementation {
            application: application.to_string(),
            implementation: implementation.to_string(),
            known: self.factories.keys().map(|(a, i)| format!("{a}/{i}")).collect(),
        })?;
        let mut component = factory(mesh);
        component.initialize(config)?;
        Ok(component)
    }
}
