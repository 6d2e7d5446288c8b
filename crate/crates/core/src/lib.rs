//! Numerical toolkit for sampled closed space curves: local distortion,
//! fractional seminorms of the tangent, straight-segment substitution,
//! distance flows around a curve and symmetric Möbius-energy descent.

pub mod concentration;
pub mod curve;
pub mod distortion;
pub mod enclosing;
pub mod error;
pub mod flowfield;
pub mod mobius;
pub mod sobolev;
pub mod substitution;

pub use curve::{Curve, ParamPoint, Point};
pub use error::{KnotError, Result};
