//! Finite element solver for the two-dimensional stochastic Navier-Stokes
//! equation with multiplicative noise and no-slip boundary conditions.
//!
//! Space is discretized with P3/P2 Taylor-Hood elements on conforming
//! triangulations, time with a semi-implicit Euler-Maruyama scheme: the
//! Stokes part and the skew-symmetrized convection term are treated
//! implicitly, the noise increment is evaluated at the previous iterate.
//! The [`experiments`] module layers a Monte Carlo convergence laboratory
//! on top of single-trajectory runs.

pub mod assembly;
pub mod elements;
pub mod experiments;
pub mod manufactured;
pub mod mesh;
pub mod noise;
pub mod quad;
pub mod scheme;
pub mod spaces;
pub mod sparse;
pub mod stokes;
