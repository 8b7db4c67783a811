use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Scenario description of a 0D waste package.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct WastePackageConfig {
    /// mol per released species
    pub inventory: BTreeMap<String, f64>,
    /// First-order release rate constant, 1/s.
    pub rate: f64,
    pub host_cell: usize,
}

/// Remaining inventory of a package, one entry per transported species.
#[derive(Clone, Debug, PartialEq)]
pub struct WastePackageState {
    pub inventory: Vec<f64>,
    pub rate: f64,
    pub host_cell: usize,
}

impl WastePackageState {
    /// Resolves species names against the transported species.
    pub fn from_config(config: &WastePackageConfig, species: &[String]) -> Result<Self, String> {
        let mut inventory = vec![0.0; species.len()];
        for (name, amount) in &config.inventory {
            let k = species
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| format!("unknown species {name}; transported species: {}", species.join(", ")))?;
            if !(*amount >= 0.0) || !amount.is_finite() {
                return Err(format!("inventory of {name} must be non-negative"));
            }
            inventory[k] = *amount;
        }
        if !(config.rate >= 0.0) || !config.rate.is_finite() {
            return Err(format!("rate {} must be non-negative", config.rate));
        }
        Ok(WastePackageState { inventory, rate: config.rate, host_cell: config.host_cell })
    }
}

/// Exact exponential release over `dt`.
///
/// Returns the updated package and the release rate per species (mol/s),
/// constant over the step, that delivers exactly the released amount.
pub fn waste_package_step(wp: &WastePackageState, dt: f64) -> (WastePackageState, Vec<f64>) {
    let decay = (-wp.rate * dt).exp();
    let remaining: Vec<f64> = wp.inventory.iter().map(|m| m * decay).collect();
    let source = wp.inventory.iter().zip(&remaining).map(|(m, m1)| (m - m1) / dt).collect();
    (WastePackageState { inventory: remaining, ..wp.clone() }, source)
}
