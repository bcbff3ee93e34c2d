//! Tensor engine for Finsler metrics of Randers type.
//!
//! The crate computes, at sampled points of the slit tangent bundle, the
//! full family of tensors attached to a Finsler metric F = alpha + beta
//! (and to some non-Randers companions): fundamental tensor, geodesic
//! spray, Berwald curvature, Riemann curvature with its flag and Ricci
//! traces, S/E/H non-Riemannian quantities, and the projective invariants
//! (Douglas and the two Weyl-type tensors), together with closed-form
//! cross-checks, classification verdicts, symmetry analysis of vector
//! fields, and a small matrix-group checker for electromagnetic field
//! symmetries.
//!
//! Everything differentiates through truncated multivariate Taylor jets
//! ([`jet`]); no symbolic algebra and no finite differencing is involved
//! in the main pipeline (finite differences appear only as independent
//! test oracles in [`oracles`]).

pub mod classify;
pub mod error;
pub mod finsler;
pub mod jet;
pub mod linalg;
pub mod lorentz;
pub mod oracles;
pub mod randers;
pub mod report;
pub mod riemann;
pub mod sample;
pub mod scene;
pub mod symmetry;
pub mod tol;

pub use error::{Error, Result};
