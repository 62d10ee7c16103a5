//! Reading histories back out of memory states.
//!
//! A state covering [0, t] is evaluated at L_mem sample points, giving
//! L_mem reconstructed rows `R·C` with R[j][n] = g_n^{(t)}(x_j). The
//! matrices R_i for t = i·L are precomputed per block position.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Serialize, Serializer};

use crate::cache::{self, BankHeader, BankKind};
use crate::error::{Error, Result};
use crate::hippo::{basis_matrix, HippoOperator};
use crate::state::MemoryState;

pub const DEFAULT_DECAY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingStrategy {
    /// x_j = j·t/L_mem.
    Uniform,
    /// x_j = t·(1 − α^j): dense near the present end of the window.
    Exponential { decay: f64 },
}

impl SamplingStrategy {
    pub fn exponential(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::invalid("decay", format!("{decay} not in (0, 1)")));
        }
        Ok(Self::Exponential { decay })
    }

    /// Parses "uniform" or "exponential"; `decay` applies to the latter.
    pub fn parse(name: &str, decay: f64) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "exponential" | "exp" => Self::exponential(decay),
            other => Err(Error::invalid(
                "strategy",
                format!("unknown sampling strategy '{other}' (uniform, exponential)"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Exponential { .. } => "exponential",
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Self::Uniform => 0,
            Self::Exponential { .. } => 1,
        }
    }

    pub fn decay(self) -> Option<f64> {
        match self {
            Self::Uniform => None,
            Self::Exponential { decay } => Some(decay),
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Exponential { decay } => write!(f, "exponential(α={decay})"),
        }
    }
}

impl Serialize for SamplingStrategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

/// Sample coordinates in [0, t), strictly increasing, oldest first.
///
/// Floating-point collisions (α^j·t below the spacing of doubles near t)
/// are resolved by moving the colliding point to the next representable
/// value below its successor, so exactly `count` points are returned.
pub fn sample_points(strategy: SamplingStrategy, t: f64, count: usize) -> Result<Vec<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(
            "history_length",
            format!("{t} must be positive and finite"),
        ));
    }
    if count == 0 {
        return Err(Error::invalid(
            "count",
            "at least one sample point is required",
        ));
    }
    let mut points: Vec<f64> = match strategy {
        SamplingStrategy::Uniform => (0..count).map(|j| j as f64 * t / count as f64).collect(),
        SamplingStrategy::Exponential { decay } => {
            if !(decay > 0.0 && decay < 1.0) {
                return Err(Error::invalid("decay", format!("{decay} not in (0, 1)")));
            }
            (0..count)
                .map(|j| t * (1.0 - decay.powi(j as i32)))
                .collect()
        }
    };
    let mut ceiling = t;
    for x in points.iter_mut().rev() {
        if *x >= ceiling {
            *x = ceiling.next_down();
        }
        ceiling = *x;
    }
    if points[0] < 0.0 {
        return Err(Error::invalid(
            "count",
            format!("{count} distinct points do not fit in [0, {t})"),
        ));
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionBank {
    mem_length: usize,
    order: usize,
    block_length: usize,
    strategy: SamplingStrategy,
    max_blocks: usize,
    matrices: Vec<Array2<f64>>,
}

impl ReconstructionBank {
    pub fn build(
        op: &HippoOperator,
        strategy: SamplingStrategy,
        mem_length: usize,
        block_length: usize,
        max_blocks: usize,
    ) -> Result<Self> {
        if block_length == 0 {
            return Err(Error::invalid("block_length", "must be at least 1"));
        }
        if max_blocks == 0 {
            return Err(Error::invalid("max_blocks", "must be at least 1"));
        }
        let matrices = (1..=max_blocks)
            .map(|i| {
                let t = (i * block_length) as f64;
                basis_matrix(op.order(), t, &sample_points(strategy, t, mem_length)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mem_length,
            order: op.order(),
            block_length,
            strategy,
            max_blocks,
            matrices,
        })
    }

    pub fn mem_length(&self) -> usize {
        self.mem_length
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    pub fn strategy(&self) -> SamplingStrategy {
        self.strategy
    }

    pub fn max_blocks(&self) -> usize {
        self.max_blocks
    }

    /// R_i for 1-based block index i (history length t = i·L).
    pub fn matrix(&self, block: usize) -> Option<&Array2<f64>> {
        block.checked_sub(1).and_then(|i| self.matrices.get(i))
    }

    /// Sample coordinates behind R_i.
    pub fn points(&self, block: usize) -> Result<Vec<f64>> {
        if block == 0 || block > self.max_blocks {
            return Err(Error::CapacityExhausted {
                requested: block,
                capacity: self.max_blocks,
            });
        }
        sample_points(
            self.strategy,
            (block * self.block_length) as f64,
            self.mem_length,
        )
    }

    fn header_for(
        order: usize,
        strategy: SamplingStrategy,
        mem_length: usize,
        block_length: usize,
        max_blocks: usize,
    ) -> BankHeader {
        BankHeader {
            kind: BankKind::Reconstruction,
            order,
            block_length,
            tag: strategy.tag(),
            max_blocks,
            mem_length,
            decay: strategy.decay().unwrap_or(0.0),
        }
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let header = Self::header_for(
            self.order,
            self.strategy,
            self.mem_length,
            self.block_length,
            self.max_blocks,
        );
        cache::write_bank(path, &header, &self.matrices)
    }

    pub fn load(
        path: &Path,
        order: usize,
        strategy: SamplingStrategy,
        mem_length: usize,
        block_length: usize,
        max_blocks: usize,
    ) -> Result<Self> {
        let header = Self::header_for(order, strategy, mem_length, block_length, max_blocks);
        let shapes = vec![(mem_length, order); max_blocks];
        let matrices = cache::read_bank(path, &header, &shapes)?;
        Ok(Self {
            mem_length,
            order,
            block_length,
            strategy,
            max_blocks,
            matrices,
        })
    }

    pub fn cache_file_name(
        order: usize,
        strategy: SamplingStrategy,
        mem_length: usize,
        block_length: usize,
        max_blocks: usize,
    ) -> String {
        let decay = match strategy.decay() {
            Some(a) => format!("-a{a}"),
            None => String::new(),
        };
        format!(
            "emrb-n{order}-l{block_length}-m{mem_length}-{}{decay}-b{max_blocks}.bin",
            strategy.name()
        )
    }

    /// Load from `dir` when a valid cache file exists, otherwise build and
    /// write one. The flag reports whether the cache was hit.
    pub fn load_or_build(
        dir: &Path,
        op: &HippoOperator,
        strategy: SamplingStrategy,
        mem_length: usize,
        block_length: usize,
        max_blocks: usize,
    ) -> Result<(Self, bool)> {
        let name =
            Self::cache_file_name(op.order(), strategy, mem_length, block_length, max_blocks);
        let path = dir.join(name);
        if path.exists() {
            if let Ok(bank) = Self::load(
                &path,
                op.order(),
                strategy,
                mem_length,
                block_length,
                max_blocks,
            ) {
                return Ok((bank, true));
            }
        }
        let bank = Self::build(op, strategy, mem_length, block_length, max_blocks)?;
        std::fs::create_dir_all(dir)?;
        bank.save(&path)?;
        Ok((bank, false))
    }
}

/// R_i·C for a state holding i complete blocks: an L_mem×D summary of the
/// history, oldest sample first. No positional encoding is added.
pub fn retrieve(state: &MemoryState, bank: &ReconstructionBank) -> Result<Array2<f64>> {
    let blocks = state.blocks_absorbed();
    if blocks == 0 {
        return Err(Error::EmptyHistory);
    }
    if blocks > bank.max_blocks {
        return Err(Error::CapacityExhausted {
            requested: blocks,
            capacity: bank.max_blocks,
        });
    }
    if state.order() != bank.order {
        return Err(Error::mismatch("retrieve order", bank.order, state.order()));
    }
    if state.tokens_absorbed() != blocks * bank.block_length {
        return Err(Error::mismatch(
            "retrieve history length",
            blocks * bank.block_length,
            state.tokens_absorbed(),
        ));
    }
    Ok(bank.matrices[blocks - 1].dot(&state.coefficients()))
}

/// Evaluate a state's expansion at arbitrary coordinates in [0, t], where t
/// is the state's own history length.
pub fn reconstruct_at(state: &MemoryState, points: &[f64]) -> Result<Array2<f64>> {
    if state.tokens_absorbed() == 0 {
        return Err(Error::EmptyHistory);
    }
    let basis = basis_matrix(state.order(), state.time_horizon(), points)?;
    Ok(basis.dot(&state.coefficients()))
}
