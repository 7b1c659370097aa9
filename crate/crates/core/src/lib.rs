//! Kinetic simulated annealing with an entropy-driven feedback cooling
//! control, a particle (DSMC) optimizer, a mean-field Fokker-Planck
//! reference solver and the experiment harness around them.

pub mod acceptance;
pub mod cooling;
pub mod density;
pub mod dsmc;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod meanfield;
pub mod objective;

pub use error::{Error, Result};
