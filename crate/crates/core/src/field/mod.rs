//! Radiance-field backends behind a common trait, selected by name.
//!
//! A field maps a world point and a time code in `[0, 1]` to a density and
//! an RGB color. Besides plain queries, every backend exposes
//! vector-Jacobian products with respect to the query position (for pose
//! gradients) and to its own parameters (for field training).

mod blob;
mod mlp;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use nalgebra::Vector3;
use serde_json::Value;

use crate::error::{invalid, Result};

pub use blob::{Blob, BlobField, BlobInit, BLOB_PARAMS};
pub use mlp::{MlpField, MlpFieldConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub density: f64,
    pub color: Vector3<f64>,
}

pub trait RadianceField: Send + Sync + fmt::Debug {
    /// Registry name of the backend.
    fn backend(&self) -> &'static str;

    fn query(&self, x: &Vector3<f64>, t: f64) -> FieldSample;

    /// Gradient with respect to `x` of `d_density·density + d_color·color`.
    fn vjp_position(
        &self,
        x: &Vector3<f64>,
        t: f64,
        d_density: f64,
        d_color: &Vector3<f64>,
    ) -> Vector3<f64>;

    /// Adds the parameter gradient of `d_density·density + d_color·color`
    /// into `grads`.
    fn vjp_params(
        &self,
        x: &Vector3<f64>,
        t: f64,
        d_density: f64,
        d_color: &Vector3<f64>,
        grads: &mut [f64],
    );

    fn num_params(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Coarse-to-fine encoding progress; ignored by backends without a
    /// frequency encoding.
    fn set_encoding_progress(&mut self, _alpha: f64) {}

    fn clone_box(&self) -> Box<dyn RadianceField>;

    fn write_checkpoint(&self, w: &mut dyn Write) -> Result<()>;
}

impl Clone for Box<dyn RadianceField> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Inputs available to a backend factory.
#[derive(Clone, Copy, Debug)]
pub struct FieldInit<'a> {
    /// Backend-specific options (a JSON object, possibly empty).
    pub options: &'a Value,
    /// Ground-truth scene, for backends that initialize from a prior.
    pub reference: Option<&'a BlobField>,
    pub seed: u64,
}

pub type BuildFn = fn(&FieldInit<'_>) -> Result<Box<dyn RadianceField>>;
pub type LoadFn = fn(&mut dyn Read, &Value) -> Result<Box<dyn RadianceField>>;

#[derive(Clone, Copy)]
pub struct FieldBackend {
    pub build: BuildFn,
    pub load: LoadFn,
}

/// Name → backend table.
#[derive(Clone, Default)]
pub struct FieldRegistry {
    backends: BTreeMap<String, FieldBackend>,
}

impl FieldRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding `blob` and `mlp`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(
            blob::NAME,
            FieldBackend {
                build: blob::build,
                load: blob::load,
            },
        );
        reg.register(
            mlp::NAME,
            FieldBackend {
                build: mlp::build,
                load: mlp::load,
            },
        );
        reg
    }

    pub fn register(&mut self, name: &str, backend: FieldBackend) {
        self.backends.insert(name.to_string(), backend);
    }

    pub fn names(&self) -> Vec<&str> {
        self.backends.keys().map(String::as_str).collect()
    }

    fn get(&self, name: &str) -> Result<&FieldBackend> {
        match self.backends.get(name) {
            Some(b) => Ok(b),
            None => invalid(format!(
                "unknown field backend '{name}' (available: {})",
                self.names().join(", ")
            )),
        }
    }

    pub fn build(&self, name: &str, init: &FieldInit<'_>) -> Result<Box<dyn RadianceField>> {
        (self.get(name)?.build)(init)
    }

    pub fn load(
        &self,
        name: &str,
        reader: &mut dyn Read,
        options: &Value,
    ) -> Result<Box<dyn RadianceField>> {
        (self.get(name)?.load)(reader, options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_registered() {
        let reg = FieldRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["blob", "mlp"]);
        let opts = Value::Null;
        let init = FieldInit {
            options: &opts,
            reference: None,
            seed: 0,
        };
        assert!(reg.build("nope", &init).is_err());
        let mlp = reg.build("mlp", &init).unwrap();
        assert_eq!(mlp.backend(), "mlp");
    }
}
