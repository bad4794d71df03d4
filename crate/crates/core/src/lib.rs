//! Machine learning over moduli spaces of framed quiver representations.
//!
//! A machine is a framed quiver representation: matrices on the arrows plus a
//! framing map at each vertex. Signature-parametrized Hermitian metrics on the
//! universal bundles select compact, Euclidean, or hyperbolic geometry on the
//! moduli space; algorithms are activation trees mixing framing-loop linear
//! maps with nonlinear activations; training is metric-preconditioned gradient
//! descent on the gauge-fixed chart, with gradients from an exact tree
//! differential that includes the metric-adjoint terms.
//!
//! The crate is generic over the underlying real scalar ([`scalar::Real`],
//! normally `f64`); concrete aliases for the main types live at the root.

pub mod chart;
pub mod machine;
pub mod mat;
pub mod metric;
pub mod nearring;
pub mod quiver;
pub mod rep;
pub mod scalar;
pub mod trainer;
pub mod uniformize;

pub use mat::Mat;
pub use metric::MetricSignature;
pub use quiver::{ArrowSpec, Path, Quiver, Role, VertexSpec};
pub use rep::{FramedRep, GaugeElement};
pub use scalar::{Real, ScalarMode};

/// Concrete aliases at the default (double) precision.
pub type Mat64 = mat::Mat<f64>;
pub type FramedRep64 = rep::FramedRep<f64>;
pub type MetricSignature64 = metric::MetricSignature<f64>;
pub type MetricState64 = metric::MetricState<f64>;
pub type ActivationTree64 = nearring::ActivationTree<f64>;
pub type TrainConfig64 = trainer::TrainConfig<f64>;
pub type TrainHistory64 = trainer::TrainHistory<f64>;

/// Single-precision aliases (same algorithms, looser tolerances).
pub type Mat32 = mat::Mat<f32>;
pub type FramedRep32 = rep::FramedRep<f32>;
pub type MetricSignature32 = metric::MetricSignature<f32>;
