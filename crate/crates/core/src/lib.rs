//! Exact Jacobian SDP relaxations for polynomial optimization.

pub mod poly;
pub mod detvar;
pub mod relaxation;
pub mod sdp;
pub mod certify;
pub mod problem;
pub mod pipeline;
