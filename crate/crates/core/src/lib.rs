//! Distance-geometric inverse kinematics.
//!
//! Chains are described by [`kinematics`], turned into complete and partial
//! distance graphs by [`graph`], solved classically by [`dgp`], and sampled
//! by a graph CVAE ([`cvae`]) built on an E(n)-equivariant network
//! ([`egnn`]) and a small reverse-mode autodiff engine ([`tensor`]).
//! [`data`] generates datasets and runs the evaluation protocols.

pub mod cvae;
pub mod data;
pub mod dgp;
pub mod egnn;
pub mod graph;
pub mod kinematics;
pub mod tensor;
