//! Local equilibrium chemistry: aqueous speciation and mineral
//! precipitation/dissolution, solved cell by cell.

mod component;
mod system;

pub use component::{ChemistryConfig, ComplexConfig, EquilibriumComponent, InitialChemistry, MineralConfig};
pub use system::{
    equilibrate_cell, speciate, totals_from_state, update_porosity, CellEquilibrium, ChemState, ChemicalSystem, Complex,
    Mineral, Speciation, LN_FLOOR, NEWTON_TOL, SATURATION_TOL,
};

#[derive(Debug, thiserror::Error)]
pub enum ChemistryError {
    #[error("invalid chemical system: {0}")]
    InvalidSystem(String),
    #[error("invalid chemistry input: {0}")]
    InvalidInput(String),
    #[error("equilibrium solve failed: {0}")]
    NoConvergence(String),
}
