//! Deterministic synchronous-network simulator for the Slide edge-scheduling
//! protocol, its authenticated extension, conforming adversaries and
//! sender-side fault localization.

pub mod adversary;
pub mod cli;
pub mod auth_proto;
pub mod codec;
pub mod crypto;
pub mod engine;
pub mod localize;
pub mod slide_core;
