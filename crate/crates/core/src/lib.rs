pub mod channel;
pub mod error;
pub mod numerics;
pub mod baselines;
pub mod expectations;
pub mod online;
pub mod block;
pub mod harness;
