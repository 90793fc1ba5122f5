//! Modified Schmidt games on contracting translates of a base box, with
//! constructive strategies for diagonal flows on `SL_k(R)/SL_k(Z)`.

pub mod contraction;
pub mod diophantine;
pub mod game;
pub mod homogeneous;
pub mod hp;
pub mod linalg;
pub mod strategies;
pub mod trace;
pub mod verify;

pub use contraction::{AdmissibleBase, ContractionSemigroup, Domain, GameSpace};
pub use game::{play, GameTrace, Move, Player, Schedule, Strategy};
pub use homogeneous::{LatticeBasis, WeightVector};
