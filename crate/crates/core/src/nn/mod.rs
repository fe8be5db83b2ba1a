//! Differentiable primitives: affine maps, activations, graph convolution,
//! graph attention and a central-difference gradient checker.

pub mod attention;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod param;
pub mod tape;

pub use attention::{graph_attention, AttentionMask, GatParams, DEFAULT_LEAKY_SLOPE};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{block_graph_conv, graph_conv, Blocks, GraphConvParams};
pub use layers::{linear_forward, relu, Linear};
pub use param::{ParamId, ParamStore, ParamTensor};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
