//! Laboratory for random Steiner triple systems and Latin squares.
//!
//! The crate is organised around partial triple systems and their leave
//! graphs. On top of the data model it provides:
//!
//! - the triangle removal process, binomial bites, and trajectory tracking
//!   against the predicted `(1 - i/N)^k * n` curves ([`removal`]);
//! - `(eps, h)`-quasirandomness checking, rooted subgraph extension counting
//!   and linked-triple censuses ([`quasirandom`]);
//! - hill-climbing completion and exact completion counting ([`completion`]);
//! - exact perfect/maximum matching search and counting ([`matching`]);
//! - the absorber gadget, resilient templates and the constructive
//!   perfect-matching pipeline ([`absorbing`]);
//! - closed-form entropy-style counting bounds ([`bounds`]);
//! - concentration-inequality evaluators with Monte-Carlo tail checks
//!   ([`concentration`]);
//! - Latin squares as tripartite triple systems ([`latin`]).
//!
//! Everything randomized takes an explicit 64-bit seed; see [`rng`] for the
//! stream-splitting rule.

pub mod absorbing;
pub mod bitset;
pub mod bounds;
pub mod completion;
pub mod concentration;
pub mod design;
pub mod latin;
pub mod matching;
pub mod quasirandom;
pub mod removal;
pub mod rng;
pub mod stats;

pub use design::{LeaveGraph, PartialSystem, SystemStatus, Triple, Vertex};
