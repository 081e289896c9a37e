//! Decentralized composite convex optimization on a simulated network.
//!
//! Every node `i` of a connected graph privately holds a composite function
//! `F_i = rho_i + gamma_i` (sparse-group regularizer plus Huber loss) and the
//! nodes cooperatively minimize `sum_i F_i(x)` while exchanging vectors only
//! with graph neighbours. The crate provides:
//!
//! * [`graph`]: topologies, Laplacian products and spectral bounds;
//! * [`funcs`]: losses, the closed-form sparse-group prox and the
//!   minimum-norm subgradient residual;
//! * [`solver`]: APG, multi-step APG, randomized and accelerated randomized
//!   block coordinate descent;
//! * [`dfal`]: the distributed first-order augmented Lagrangian loop and its
//!   asynchronous variant;
//! * [`baselines`]: broadcast ADMM and split ADMM;
//! * [`netsim`]: the deterministic message-passing simulator;
//! * [`bench`]: instance generation, reference solutions and reporting.
//!
//! Per-node work inside a round is dispatched through [`par`], which uses
//! rayon when the `parallel` feature is on and plain iteration otherwise.

pub mod baselines;
pub mod bench;
pub mod dfal;
pub mod error;
pub mod funcs;
pub mod graph;
pub mod linalg;
pub mod netsim;
pub mod par;
pub mod solver;
pub mod trace;

pub use error::{Error, Result};
pub use graph::{Graph, Topology};
pub use linalg::{Matrix, Stacked};
pub use par::Exec;
