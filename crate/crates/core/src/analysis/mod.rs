//! Trajectory geometry, selection quality, and numerical checks of the attribution
//! theory (path scores, sensitivities, the Wasserstein transfer bound).

pub mod attribution;
pub mod bound;
pub mod quality;
pub mod sensitivity;
pub mod shape;
pub mod transport;

pub use attribution::{attribution_gap, path_score, path_scores};
pub use bound::{bounded_instance, verify_bound, BoundReport};
pub use quality::{selection_quality, QualityReport};
pub use sensitivity::{
    influence_limit_check, minimize_newton, sensitivity_path, QuadraticObjective, SensitivityState,
};
pub use shape::{endpoint_basis, shape_distance, shape_ratio, EndpointBasis, ShapeReport};
pub use transport::{optimal_assignment, w1_exact, GroundMetric};
