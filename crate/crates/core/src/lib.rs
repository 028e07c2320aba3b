//! Core of the FairFlow simulator: transaction model, VRF, commit-reveal
//! envelopes, slot auction, verifiable ordering, chain simulation, attack
//! harness and the role incentive model.

pub mod auction;
pub mod chain;
pub mod config;
pub mod envelope;
pub mod fraction;
pub mod game;
pub mod harness;
pub mod hash;
pub mod model;
pub mod ordering;
pub mod trace;
pub mod vrf;
