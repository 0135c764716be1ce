//! Orchestration for agentic formal theorem proving.

pub mod agent;
pub mod bench;
pub mod config;
pub mod curation;
pub mod lean_text;
pub mod prompts;
pub mod sketch;
pub mod tools;
pub mod verifier;
pub mod workflow;
