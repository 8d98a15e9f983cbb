pub mod cli;
pub mod config;
pub mod diffusion;
pub mod experiments;
pub mod error;
pub mod integrals;
pub mod ito;
pub mod localtime;
pub mod numerics;
pub mod report;
pub mod reversal;
pub mod simulate;
