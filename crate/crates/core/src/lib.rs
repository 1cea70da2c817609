pub mod cli;
pub mod decoder;
pub mod domain;
pub mod encoder;
pub mod evaluator;
pub mod explorer;
pub mod gateway;
pub mod instructions;
pub mod optimizer;
mod par;
pub mod projector;
pub mod toy;
