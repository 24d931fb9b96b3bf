pub mod channel;
pub mod distribution;
pub mod error;
pub mod functional;
pub mod kkt;
pub mod low_power;
pub mod monte_carlo;
pub mod optimizer;
pub mod quadrature;
pub mod special;
