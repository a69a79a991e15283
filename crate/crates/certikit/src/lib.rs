//! certikit: a self-certifying symbolic CTL model checker.
//!
//! The library has three layers:
//!
//! * a reduced ordered BDD engine ([`bdd`]) plus the expanded-BDD structures
//!   a prover uses to answer polynomial challenges ([`ebdd`]),
//! * generalized boolean circuits compiled from solver traces ([`circuit`])
//!   and the interactive certification protocol over them ([`protocol`]),
//! * a small symbolic CTL model checker ([`modelcheck`]) whose runs emit the
//!   traces that get certified.
//!
//! The flow: `modelcheck::check` decides a CTL property and records every
//! BDD operation it performed as a trace. The trace compiles to an
//! arithmetized circuit over the 61-bit Mersenne prime field ([`field`]); an
//! interactive protocol between a verifier (cheap, randomized) and a prover
//! (holding the BDDs) then certifies that every assertion the solver relied
//! on is true, with an explicit error probability. A garbage-collecting
//! variant certifies fixpoint iterations incrementally so the prover can
//! drop intermediate BDDs early.

pub mod bdd;
pub mod circuit;
pub mod ebdd;
pub mod field;
pub mod modelcheck;
pub mod protocol;
