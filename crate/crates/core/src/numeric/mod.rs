//! Numeric foundation: matrices, the differentiation tape, stable
//! reductions, finite differences and seeded random streams.

mod gradcheck;
mod graph;
mod matrix;
mod reduce;
mod rng;

pub use gradcheck::{finite_difference_gradient, relative_error, DEFAULT_STEP};
pub use graph::{CustomOp, Gradients, Graph, NodeId, Precision, LAYER_NORM_EPS};
pub use matrix::Matrix;
pub(crate) use reduce::{cosine_grad_lhs, cosine_unchecked};
pub use reduce::{cosine_similarity, dot, log_sum_exp, mean, median, norm, softmax, COSINE_EPS};
pub use rng::SeededRng;
