//! Exact simulation of a pair of infinite rank-one skew products and the
//! double ergodic averages of their Poisson and Gaussian suspensions.
//!
//! * [`tower`]: the cutting-and-stacking construction and floor-set algebra.
//! * [`extension`]: the `Z_2` extensions, orbit sets of `A = X_1 × {0}`,
//!   the window verifier and the conjugating involution.
//! * [`suspension`]: cylinder constants and the pair integrand.
//! * [`averages`]: the breakpoint sweep, running averages and the
//!   divergence report.
//! * [`oracle`]: seeded Monte Carlo cross-checks.
//! * [`cli`]: configuration and the `ergolab` subcommands.

pub mod averages;
pub mod cli;
pub mod extension;
pub mod oracle;
pub mod suspension;
pub mod tower;
