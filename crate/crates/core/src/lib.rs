//! Chase-escape and birth-and-assassination processes on trees.
//!
//! Both processes are simulated two ways: directly, as continuous-time
//! event systems, and through their killed branching random walk
//! representations. The two routes share a draw schedule so they can be
//! compared realization by realization.

pub mod analytics;
pub mod ba;
pub mod caps;
pub mod ce;
pub mod estimate;
pub mod kbrw;
pub mod kernel;
pub mod law;
pub mod rng;
pub mod stats;
pub mod tree;

pub use analytics::{
    ba_spectral, conjecture_rates, psi, renewal_function, spectral, tail_constants,
    tilted_step_density, AnalyticsError, BaRegime, BaSpectralData, ModelParams, Regime,
    SpectralData,
};
pub use ba::{simulate_ba, BaOutcome, BaSimulator};
pub use caps::{CapKind, Caps};
pub use ce::{simulate_ce, CeOutcome, CeSimulator, Status};
pub use estimate::{estimate_ba, estimate_ce, run_replicates, InitialSpec};
pub use kbrw::{
    biggins_martingale, coupling_realization, qwalk_first_passage, qwalk_sample, renewal_count,
    simulate_kbrw, BigginsOptions, BigginsPath, CouplingMode, CouplingRealization,
    KbrwRealization, QWalkSample,
};
pub use kernel::{ba_children, ce_children, BaPointProcess, CePointProcess, PointProcess};
pub use law::{LawError, OffspringLaw, OffspringSpec, TimerLaw};
pub use rng::{make_stream, sample_exponential, KernelError, RngStream};
pub use stats::{binomial_ci, critical_trend, ks_two_sample, tail_fit, KsResult, StatError, TailFit};
pub use tree::{validate_initial_set, InitialSet, NodeId, TreeError, TreeStore};
