pub mod expr;
pub mod manifold;
pub mod montecarlo;
pub mod projection;
pub mod rng;
pub mod sde;
pub mod simulate;
