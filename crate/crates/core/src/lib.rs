//! Two independent solvers for the dynamic Schrödinger bridge problem.
//!
//! * The neural track trains a time-dependent velocity field `f` whose flow
//!   transports `rho_0` to `rho_1` with the same marginals as the bridge SDE.
//!   Positions, log-determinants and the score along each trajectory are
//!   integrated jointly ([`flow`]), the relaxed KL-penalized objective is
//!   minimized by Adam ([`train`]), and the SDE drift is recovered by sliced
//!   score matching ([`score`]).
//! * The grid track ([`grid`]) solves the discretized min-max problem with a
//!   primal-dual hybrid gradient method and serves as a reference.

pub mod density;
pub mod flow;
pub mod grid;
pub mod nn;
pub mod score;
pub mod train;
pub mod util;
