pub mod continuum;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod grid;
pub mod heat;
pub mod means;
pub mod path;
pub mod transport;
pub mod regularize;
pub mod solver;
