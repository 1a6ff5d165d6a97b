//! Energy-efficiency maximization for a full-duplex TDMA backscatter network
//! with backscattering energy recycling.
//!
//! A hybrid access point with `M` transmit and `R` receive antennas serves `N`
//! passive backscatter devices, one per time slot of a unit frame. Each device
//! reflects a fraction `alpha` of the incident carrier and harvests the rest
//! through a piecewise-linear harvester; devices scheduled later additionally
//! harvest the carrier beamed at earlier devices and the energy those devices
//! backscatter. The library jointly optimizes slot durations, reflection
//! coefficients and transmit/receive beamformers to maximize system energy
//! efficiency (bits per Joule) subject to per-device rate floors, a transmit
//! energy budget and energy causality at every device.
//!
//! The solver stack is a Dinkelbach outer loop around one alternating pass of
//! two convex subproblems per iteration: a time/reflection program over
//! `(t_n, y_n = alpha_n t_n)` and a beamformer program solved by successive
//! convex approximation over semidefinite-relaxed covariance matrices. Both
//! subproblems run on a small dense barrier interior-point engine
//! ([`solver`]). Four restricted variants of the pipeline serve as baselines,
//! and a brute-force grid search over scalar instances ([`oracle`]) validates
//! the full stack end to end.

pub mod baselines;
pub mod beamforming;
pub mod channel;
pub mod config;
pub mod dinkelbach;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod timerc;

pub use channel::{generate_channels, ChannelSet, GeometryConfig};
pub use config::{db_to_linear, dbm_to_watts, linear_to_db, watts_to_dbm, SystemConfig};
pub use model::{
    check_feasibility, consumed_energy, ee_objective, eh_output, harvested_energy, mrc_receive,
    throughput, Allocation, Beams, FeasibilityReport,
};
