//! Behavioural fingerprints for the 262,144 semi-totalistic cellular automata.
//!
//! A rule's behaviour vector estimates how often each of the 36 state
//! transitions (born, survive, unborn, die, by neighbour count) occurs once a
//! random soup has evolved for a while. Rules with B0 are first rewritten
//! into B0-free emulations; strobing rules get separate even and odd halves,
//! so every vector has 72 components. Euclidean distance between vectors
//! measures behavioural similarity.
//!
//! - [`rules`]: rule notation, ids, B0 emulation, Boolean transition vectors
//! - [`engine`]: grid and steppers
//! - [`sampling`]: soups, transition sampling, vector estimation
//! - [`metricspace`]: vector stores and similarity queries
//! - [`sweep`]: checkpointed, parallel computation of whole stores

pub mod engine;
pub mod metricspace;
pub mod rules;
pub mod sampling;
pub mod sweep;

pub use engine::{Grid, Rect};
pub use metricspace::{Neighbour, VectorStore};
pub use rules::{classify, parse_rule, EmulationPlan, PlanKind, Rule, RuleId};
pub use sampling::{estimate_vector, BehaviourVector, SeedRecipe, SoupParams};
