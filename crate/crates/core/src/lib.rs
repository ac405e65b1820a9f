//! Optimal PMU placement and line-outage detection for power transmission networks.
//!
//! The crate models a power network as a graph of buses and branches, builds the
//! real-power/angle Jacobian of the AC power-flow equations at a solved operating
//! point, and scores a candidate sensor placement by how little the Jacobian
//! reconstructed from partial observations deviates (in Frobenius norm) from the
//! fully observed one. A genetic algorithm searches the space of placements with a
//! fixed sensor budget, and a sequential likelihood-ratio detector evaluates any
//! placement's ability to detect and identify single line outages via seeded Monte
//! Carlo simulation.
//!
//! Module map:
//! - [`netmodel`]: case-file parsing, admittance matrix, topology queries.
//! - [`jacobian`]: full and placement-masked Jacobians, angle-increment covariance.
//! - [`sampling`]: deterministic seeded Gaussian sampling of operating points.
//! - [`placement`]: the placement objective, genetic algorithm, baseline strategies,
//!   and an exhaustive-search oracle.
//! - [`detection`]: outage scenario bank, CUSUM-style likelihood-ratio statistics,
//!   stopping rule, and top-3 identification.
//! - [`evalharness`]: Monte Carlo evaluation harness producing heatmap and sweep
//!   reports with JSON/CSV serialization.
//!
//! All randomness flows through [`sampling::RandomStream`], a counter-based seeded
//! stream: identical seeds give bit-identical results on every run, independent of
//! worker-thread count.

pub mod detection;
pub mod evalharness;
pub mod jacobian;
pub mod netmodel;
pub mod placement;
pub mod sampling;
#[doc(hidden)]
pub mod testutil;

pub use detection::{
    build_scenarios, llr_increment, run_detector, threshold, update, DetectionError,
    DetectionResult, GlrState, ScenarioBank,
};
pub use evalharness::{
    compare_strategies, evaluate_placement, heatmap_csv, heatmap_json, sig6, sig6_string,
    sweep_json, sweep_pmu_count, EvalConfig, EvalError, HeatmapReport, StrategyOutcome,
    SweepReport,
};
pub use jacobian::{
    angle_covariance, frobenius_norm, jacobian_full, jacobian_masked, AngleCovariance,
    JacobianError, JacobianMatrix, OperatingPoint,
};
pub use netmodel::{
    branch_label, bridge_lines, build_ybus, bus_degrees, is_connected, parse_case, remove_line,
    serialize_case, AdmittanceMatrix, Branch, Bus, BusKind, CaseError, Network,
};
pub use placement::{
    exhaustive_search, ga_optimize, objective_delta, strategy_degree, strategy_scattered,
    strategy_tree, FitnessReport, GaConfig, GaRun, Placement, PlacementError,
};
pub use sampling::{
    sample_angle_prior, sample_dtheta, sample_operating_points, AngleSampleSet, GaussianSampler,
    RandomStream, SamplingError, DEFAULT_ANGLE_SPREAD, DEFAULT_SAMPLE_COUNT,
};
