//! Operator-splitting drivers coupling transport and chemistry, porosity
//! feedback onto transport and flow, waste-package sources and the global
//! mass ledger.
//!
//! Drivers reach components only through [`NumericalComponent`], so any
//! registered implementation can stand in for the reference ones.
//!
//! [`NumericalComponent`]: crate::component::NumericalComponent

mod driver;
mod ledger;
mod package;
mod step;

pub use driver::{CoupledComponents, Coupler, CouplingError, StepReport};
pub use ledger::{LedgerEntry, MassLedger};
pub use package::{waste_package_step, WastePackageConfig, WastePackageState};
pub use step::{
    sia_step, snia_step, ChemistryLink, CoupledState, SiaReport, SiaSettings, SpeciesMap, StepError, StepOutcome,
    RESIDUAL_FLOOR,
};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CouplingMode {
    Snia,
    Sia,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CouplingConfig {
    pub mode: CouplingMode,
    /// s
    pub dt: f64,
    /// s
    pub t_end: f64,
    #[serde(default = "default_sia_max_iters")]
    pub sia_max_iters: usize,
    #[serde(default = "default_sia_tol")]
    pub sia_tol: f64,
    #[serde(default)]
    pub porosity_feedback: bool,
    #[serde(default = "default_reflow_threshold")]
    pub reflow_threshold: f64,
    /// Start each SIA loop from the previous step's reaction source.
    #[serde(default)]
    pub sia_warm_start: bool,
}

fn default_sia_max_iters() -> usize {
    50
}

fn default_sia_tol() -> f64 {
    1e-8
}

fn default_reflow_threshold() -> f64 {
    1e-3
}

impl CouplingConfig {
    pub fn new(mode: CouplingMode, dt: f64, t_end: f64) -> Self {
        CouplingConfig {
            mode,
            dt,
            t_end,
            sia_max_iters: default_sia_max_iters(),
            sia_tol: default_sia_tol(),
            porosity_feedback: false,
            reflow_threshold: default_reflow_threshold(),
            sia_warm_start: false,
        }
    }

    /// Problems as `(field, message)` pairs.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            out.push(("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) || !self.t_end.is_finite() {
            out.push(("tEnd", format!("must be at least dt, got {}", self.t_end)));
        }
        if self.sia_max_iters == 0 {
            out.push(("siaMaxIters", "must be at least 1".into()));
        }
        if !(self.sia_tol > 0.0) {
            out.push(("siaTol", format!("must be positive, got {}", self.sia_tol)));
        }
        if !(self.reflow_threshold > 0.0) {
            out.push(("reflowThreshold", format!("must be positive, got {}", self.reflow_threshold)));
        }
        out
    }

    pub fn sia_settings(&self) -> SiaSettings {
        match self.mode {
            CouplingMode::Snia => SiaSettings::non_iterative(),
            CouplingMode::Sia => SiaSettings { max_iters: self.sia_max_iters, tol: self.sia_tol },
        }
    }
}
