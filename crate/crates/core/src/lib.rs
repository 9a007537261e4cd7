//! Training-data generation for mobile GUI agents.
//!
//! The pipeline explores apps ([`explorer`]), builds a per-app environment
//! memory ([`memory`]), synthesizes and filters task instructions
//! ([`synthesizer`]), and rolls tasks out under expert/learner switching
//! strategies ([`rollout`]). [`analyzer`] compares instruction sets against a
//! test corpus. Apps come from the deterministic simulator in [`sim`]; model
//! roles are the traits in [`providers`], with seeded mocks and an HTTP
//! backend. [`pipeline`] ties the stages together with on-disk manifests.

pub mod analyzer;
pub mod config;
pub mod explorer;
pub mod hashing;
pub mod memory;
pub mod pipeline;
pub mod providers;
pub mod rollout;
pub mod sim;
pub mod store;
pub mod synthesizer;
