//! Debate-graph construction, a heterogeneous graph transformer and the
//! pipeline around it.

pub mod extraction;
pub mod graph;
pub mod hgt;
pub mod numerics;
pub mod orchestration;
pub mod parallel;
pub mod synthetic;
pub mod training;
