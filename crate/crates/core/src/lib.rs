//! Compiler and behavioral simulator for memristor-crossbar CNN inference.
//!
//! A [`NetworkSpec`] plus a [`WeightStore`] compiles into a [`CompiledNetwork`]:
//! crossbar programs for conv, depthwise, pointwise, batch-norm, pooling and
//! fully connected layers, and op-amp circuit models for activations, SE gating
//! and residual adds. [`forward_analog`] runs the compiled network by solving
//! each crossbar's ideal transimpedance equations; [`reference::forward_ref`]
//! is the float reference it is checked against.
//!
//! The `parallel` feature (on by default) evaluates layers, columns and batches
//! with rayon. Without it every [`Exec`] runs sequentially.

pub mod analyzer;
pub mod bn_map;
pub mod conv_map;
pub mod crossbar;
pub mod error;
pub mod functional;
pub mod io;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod pool_fc;
pub mod reference;
pub mod synth;
pub mod tensor;

pub use crossbar::{evaluate_crossbar, Cell, CrossbarProgram, DeviceParams};
pub use error::{Error, Result};
pub use io::weights::WeightStore;
pub use model::{LayerSpec, Model, NetworkSpec, Shape};
pub use par::Exec;
pub use pipeline::{
    compile_model, compile_network, forward_analog, forward_batch, predict, CompiledNetwork, Stage,
};
pub use tensor::Tensor;
