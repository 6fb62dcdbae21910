//! Deterministic co-simulation of microscopic road traffic and a federated
//! learning process hosted at a roadside unit (RSU), with model-poisoning
//! adversaries that fabricate updates from a single vehicle or from a swarm
//! of Sybil identities.

pub mod adversary;
pub mod harness;
pub mod learner;
pub mod network;
pub mod protocol;
pub mod seed;
pub mod traffic;
