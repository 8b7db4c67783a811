//! Reactive-transport coupling platform.
//!
//! A shared mesh/field data model, a uniform component interface with a
//! registry of swappable implementations, reference flow, transport and
//! chemistry components, and operator-splitting drivers that couple them.

pub mod chemistry;
pub mod component;
pub mod coupling;
pub mod flow;
pub mod meshfield;
pub mod numerics;
pub mod run;
pub mod scenario;
pub mod transport;
