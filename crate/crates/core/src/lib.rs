//! Simulation engine for LLM-driven interactive retrieval users.
//!
//! The pipeline is: parse a test collection ([`corpus`]), index it
//! ([`index`]), run simulated search sessions for one of eight user
//! configurations ([`agents`], [`sim`]) against a chat-completion backend
//! ([`llm`]), and score the logged sessions ([`eval`]).

pub mod agents;
pub mod corpus;
pub mod eval;
pub mod index;
pub mod llm;
pub mod sim;
pub mod text;
