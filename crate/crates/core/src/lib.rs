//! Fixed-size polynomial memory for sequences.
//!
//! Histories are compressed online into HiPPO-LegS coefficient matrices,
//! advanced block-by-block with precomputed kernels, and read back by
//! evaluating the scaled Legendre basis at chosen sample points.

pub mod attention;
pub mod block;
pub mod cache;
pub mod discretize;
pub mod error;
pub mod hippo;
pub mod quadrature;
pub mod reconstruct;
pub mod signal;
pub mod state;

pub use attention::{
    apply_rotary, build_trapezoidal_mask, forward_block, random_hidden, AttentionBanks,
    AttentionConfig, AttentionWeights, BlockIO, BlockOutput, HeadTrace,
};
pub use block::{block_update, BlockKernelBank};
pub use discretize::{discretize_step, sequential_update, DiscreteStep, Discretizer, Scheme};
pub use error::{Error, Result};
pub use hippo::{basis_eval, legendre_eval, BasisPoint, HippoOperator};
pub use reconstruct::{
    reconstruct_at, retrieve, sample_points, ReconstructionBank, SamplingStrategy, DEFAULT_DECAY,
};
pub use signal::{
    generate_signal, run_benchmark, run_table, BenchResult, SignalKind, SignalSpec, TableConfig,
    TableRow,
};
pub use state::MemoryState;
