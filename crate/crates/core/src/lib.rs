//! Micro-Penning trap arrays: ion and site model, equilibrium crystals, normal modes,
//! laser cooling, spin-spin couplings and two-qubit gate dynamics.

pub mod cooling;
pub mod equilibrium;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod modes;
pub mod gates;
pub mod spinspin;
