//! Two-arm reach-avoid workbench.

pub mod baselines;
pub mod bounds;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod human_sim;
pub mod nn;
pub mod predictor;
pub mod reachavoid;
pub mod world;
