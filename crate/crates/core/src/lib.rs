pub mod config;
pub mod engine;
pub mod env;
pub mod grounding;
pub mod harness;
pub mod mcts;
pub mod metrics;
pub mod parallel;
pub mod reasoner;
pub mod skill;
pub mod store;
