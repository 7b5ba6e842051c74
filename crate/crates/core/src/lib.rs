//! Weisfeiler–Leman graph kernels, their subgraph-aware variants, exact
//! margin computation over the kernel feature spaces, and a gradient-flow
//! simulator for linear message-passing networks.

pub mod flow;
pub mod generators;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod margin;
pub mod refinement;
pub mod subgraph;
pub mod svm;
pub mod theory;
