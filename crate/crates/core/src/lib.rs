//! Human decision-making models for normal-form games and fog-computing
//! price negotiation.
//!
//! - [`game`]: normal-form games, mixed strategies, beliefs, pure Nash.
//! - [`behavior`]: bounded-rationality models (QBR, level-k, cognitive
//!   hierarchy, noisy introspection, epsilon-Nash).
//! - [`utility`]: prospect-theory and social-preference payoff transforms.
//! - [`fog`]: the user/fog-node negotiation with noise and signal averaging.
//! - [`estimation`]: likelihood, maximum-likelihood fitting, cross-validation.
//! - [`config`]: experiment configuration and the `hdm` command implementations.

pub mod behavior;
pub mod config;
pub mod error;
pub mod estimation;
pub mod fog;
pub mod game;
pub mod utility;

pub use behavior::{predict, BehavioralModel};
pub use error::{Error, Result};
pub use fog::{run_negotiation, FogScenario, NegotiationTrace, PriceRule, RoundState};
pub use game::{Belief, MixedStrategy, NormalFormGame};
