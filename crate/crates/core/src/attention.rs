//! Toy single-layer attention block with compressed memory.
//!
//! Per block: project Q/K/V per head, rotate Q and K by their absolute
//! positions, prepend the memory summaries K_mem = R·C^{(K)} and
//! V_mem = R·C^{(V)} (no rotation), attend under the trapezoidal mask, and
//! finally fold the block's raw (unrotated) keys and values into the states.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64Mcg;

use crate::block::{block_update, BlockKernelBank};
use crate::discretize::Scheme;
use crate::error::{Error, Result};
use crate::hippo::HippoOperator;
use crate::reconstruct::{retrieve, ReconstructionBank, SamplingStrategy};
use crate::state::MemoryState;

/// Additive mask value standing in for −∞; exp underflows to exactly 0.
pub const MASK_SENTINEL: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub head_count: usize,
    pub head_dim: usize,
    pub block_length: usize,
    pub mem_length: usize,
    pub hippo_order: usize,
    pub scheme: Scheme,
    pub strategy: SamplingStrategy,
    pub rope_base: f64,
}

impl AttentionConfig {
    pub fn new(
        head_count: usize,
        head_dim: usize,
        block_length: usize,
        mem_length: usize,
        hippo_order: usize,
    ) -> Self {
        Self {
            model_dim: head_count * head_dim,
            head_count,
            head_dim,
            block_length,
            mem_length,
            hippo_order,
            scheme: Scheme::Zoh,
            strategy: SamplingStrategy::Uniform,
            rope_base: 10_000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("head_count", self.head_count),
            ("head_dim", self.head_dim),
            ("block_length", self.block_length),
            ("hippo_order", self.hippo_order),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if self.model_dim != self.head_count * self.head_dim {
            return Err(Error::mismatch(
                "model_dim",
                self.head_count * self.head_dim,
                self.model_dim,
            ));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::invalid(
                "head_dim",
                "rotary encoding needs an even head dimension",
            ));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(Error::invalid("rope_base", "must be positive"));
        }
        Ok(())
    }
}

/// Q/K/V/output projections, each D_model × D_model. Head h owns columns
/// h·D … (h+1)·D of the input projections and the same rows of `output`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
}

impl AttentionWeights {
    /// N(0, 1/D_model) entries from a seeded generator.
    pub fn seeded(cfg: &AttentionConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let normal = Normal::new(0.0, (1.0 / d as f64).sqrt())
            .map_err(|e| Error::invalid("model_dim", e.to_string()))?;
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        let mut draw = || Array2::from_shape_simple_fn((d, d), || normal.sample(&mut rng));
        Ok(Self {
            query: draw(),
            key: draw(),
            value: draw(),
            output: draw(),
        })
    }

    /// Reorders heads so that new head h is old head `order[h]`.
    pub fn permute_heads(&self, cfg: &AttentionConfig, order: &[usize]) -> Result<Self> {
        let hd = cfg.head_dim;
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..cfg.head_count).collect::<Vec<_>>() {
            return Err(Error::invalid("order", "not a permutation of the heads"));
        }
        let cols = |m: &Array2<f64>| {
            let parts: Vec<_> = order
                .iter()
                .map(|&h| m.slice(s![.., h * hd..(h + 1) * hd]))
                .collect();
            concatenate(Axis(1), &parts).expect("equal row counts")
        };
        let parts: Vec<_> = order
            .iter()
            .map(|&h| self.output.slice(s![h * hd..(h + 1) * hd, ..]))
            .collect();
        Ok(Self {
            query: cols(&self.query),
            key: cols(&self.key),
            value: cols(&self.value),
            output: concatenate(Axis(0), &parts).expect("equal column counts"),
        })
    }

    fn check(&self, cfg: &AttentionConfig) -> Result<()> {
        let d = cfg.model_dim;
        for m in [&self.query, &self.key, &self.value, &self.output] {
            if m.dim() != (d, d) {
                return Err(Error::mismatch(
                    "weights",
                    format!("{d}x{d}"),
                    format!("{:?}", m.dim()),
                ));
            }
        }
        Ok(())
    }
}

/// Standard normal L × D_model block input from a seeded generator.
pub fn random_hidden(cfg: &AttentionConfig, seed: u64) -> Array2<f64> {
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    Array2::from_shape_simple_fn((cfg.block_length, cfg.model_dim), || {
        rng.sample(rand_distr::StandardNormal)
    })
}

/// Precomputed banks shared by every block; no reconstruction bank when
/// L_mem = 0.
#[derive(Debug, Clone)]
pub struct AttentionBanks {
    pub kernels: BlockKernelBank,
    pub reconstruction: Option<ReconstructionBank>,
}

impl AttentionBanks {
    pub fn build(cfg: &AttentionConfig, max_blocks: usize) -> Result<Self> {
        cfg.validate()?;
        let op = HippoOperator::new(cfg.hippo_order)?;
        let kernels = BlockKernelBank::build(&op, cfg.block_length, cfg.scheme, max_blocks)?;
        let reconstruction = if cfg.mem_length > 0 {
            Some(ReconstructionBank::build(
                &op,
                cfg.strategy,
                cfg.mem_length,
                cfg.block_length,
                max_blocks,
            )?)
        } else {
            None
        };
        Ok(Self {
            kernels,
            reconstruction,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockIO {
    pub hidden: Array2<f64>,
    pub key_states: Vec<MemoryState>,
    pub value_states: Vec<MemoryState>,
    pub block_index: usize,
}

impl BlockIO {
    /// Empty memory for block 1.
    pub fn first(cfg: &AttentionConfig, hidden: Array2<f64>) -> Self {
        let fresh = vec![MemoryState::zeros(cfg.hippo_order, cfg.head_dim); cfg.head_count];
        Self {
            hidden,
            key_states: fresh.clone(),
            value_states: fresh,
            block_index: 1,
        }
    }

    /// Input for the block after `out`.
    pub fn next(out: BlockOutput, hidden: Array2<f64>) -> Self {
        Self {
            hidden,
            block_index: out.block_index + 1,
            key_states: out.key_states,
            value_states: out.value_states,
        }
    }
}

/// Everything a caller might want to inspect about one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    /// L × (M + L) softmax probabilities, M memory columns first.
    pub probabilities: Array2<f64>,
    pub k_mem: Option<Array2<f64>>,
    pub v_mem: Option<Array2<f64>>,
    /// Keys fed to the memory update (pre-rotary).
    pub raw_keys: Array2<f64>,
    pub values: Array2<f64>,
}

impl HeadTrace {
    /// Mean fraction of each row's probability mass on memory columns.
    pub fn memory_mass(&self) -> f64 {
        let m = self.k_mem.as_ref().map_or(0, |k| k.nrows());
        let rows = self.probabilities.nrows() as f64;
        self.probabilities.slice(s![.., ..m]).sum() / rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub output: Array2<f64>,
    pub key_states: Vec<MemoryState>,
    pub value_states: Vec<MemoryState>,
    pub block_index: usize,
    /// Per-head attention outputs concatenated along columns, before the
    /// output projection.
    pub head_outputs: Array2<f64>,
    pub heads: Vec<HeadTrace>,
}

/// L × (L_mem + L) additive mask: memory columns always visible, in-block
/// columns causal.
pub fn build_trapezoidal_mask(block_length: usize, mem_length: usize) -> Array2<f64> {
    Array2::from_shape_fn((block_length, mem_length + block_length), |(p, j)| {
        if j < mem_length || j - mem_length <= p {
            0.0
        } else {
            MASK_SENTINEL
        }
    })
}

/// Rotary encoding over interleaved pairs (2p, 2p+1) with angle
/// position·base^(−2p/D); row r sits at `start_position + r`.
pub fn apply_rotary(
    x: ArrayView2<'_, f64>,
    start_position: usize,
    base: f64,
) -> Result<Array2<f64>> {
    let d = x.ncols();
    if !d.is_multiple_of(2) {
        return Err(Error::invalid(
            "head_dim",
            "rotary encoding needs an even head dimension",
        ));
    }
    let mut out = x.to_owned();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let pos = (start_position + r) as f64;
        for p in 0..d / 2 {
            let theta = base.powf(-2.0 * p as f64 / d as f64);
            let (sin, cos) = (pos * theta).sin_cos();
            let (a, b) = (row[2 * p], row[2 * p + 1]);
            row[2 * p] = a * cos - b * sin;
            row[2 * p + 1] = a * sin + b * cos;
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn forward_block(
    io: BlockIO,
    weights: &AttentionWeights,
    cfg: &AttentionConfig,
    banks: &AttentionBanks,
) -> Result<BlockOutput> {
    cfg.validate()?;
    weights.check(cfg)?;
    let (l, hd) = (cfg.block_length, cfg.head_dim);
    if io.hidden.dim() != (l, cfg.model_dim) {
        return Err(Error::mismatch(
            "hidden",
            format!("{l}x{}", cfg.model_dim),
            format!("{:?}", io.hidden.dim()),
        ));
    }
    if io.block_index == 0 {
        return Err(Error::invalid("block_index", "blocks are numbered from 1"));
    }
    if io.key_states.len() != cfg.head_count || io.value_states.len() != cfg.head_count {
        return Err(Error::mismatch(
            "head states",
            cfg.head_count,
            io.key_states.len(),
        ));
    }
    for state in io.key_states.iter().chain(&io.value_states) {
        if state.blocks_absorbed() + 1 != io.block_index {
            return Err(Error::mismatch(
                "state blocks_absorbed",
                io.block_index - 1,
                state.blocks_absorbed(),
            ));
        }
    }
    let memory = match &banks.reconstruction {
        Some(bank) if io.block_index > 1 => Some(bank),
        _ => None,
    };
    let start = (io.block_index - 1) * l;
    let scale = 1.0 / (hd as f64).sqrt();
    let mask = build_trapezoidal_mask(l, memory.map_or(0, |b| b.mem_length()));

    let mut head_outputs = Array2::zeros((l, cfg.model_dim));
    let mut heads = Vec::with_capacity(cfg.head_count);
    let mut key_states = Vec::with_capacity(cfg.head_count);
    let mut value_states = Vec::with_capacity(cfg.head_count);
    for (h, (k_state, v_state)) in io.key_states.into_iter().zip(io.value_states).enumerate() {
        let cols = s![.., h * hd..(h + 1) * hd];
        let q_raw = io.hidden.dot(&weights.query.slice(cols));
        let k_raw = io.hidden.dot(&weights.key.slice(cols));
        let v = io.hidden.dot(&weights.value.slice(cols));
        let q = apply_rotary(q_raw.view(), start, cfg.rope_base)?;
        let k = apply_rotary(k_raw.view(), start, cfg.rope_base)?;

        let (k_mem, v_mem) = match memory {
            Some(bank) => (
                Some(retrieve(&k_state, bank)?),
                Some(retrieve(&v_state, bank)?),
            ),
            None => (None, None),
        };
        let k_aug = match &k_mem {
            Some(m) => concatenate(Axis(0), &[m.view(), k.view()]).expect("same width"),
            None => k,
        };
        let v_aug = match &v_mem {
            Some(m) => concatenate(Axis(0), &[m.view(), v.view()]).expect("same width"),
            None => v.clone(),
        };
        let scores = q.dot(&k_aug.t()) * scale + &mask;
        let probabilities = softmax_rows(&scores);
        head_outputs
            .slice_mut(cols)
            .assign(&probabilities.dot(&v_aug));

        key_states.push(block_update(k_state, k_raw.view(), &banks.kernels)?);
        value_states.push(block_update(v_state, v.view(), &banks.kernels)?);
        heads.push(HeadTrace {
            probabilities,
            k_mem,
            v_mem,
            raw_keys: k_raw,
            values: v,
        });
    }
    Ok(BlockOutput {
        output: head_outputs.dot(&weights.output),
        key_states,
        value_states,
        block_index: io.block_index,
        head_outputs,
        heads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    fn hidden(cfg: &AttentionConfig, seed: u64) -> Array2<f64> {
        random_hidden(cfg, seed)
    }

    fn run(
        cfg: &AttentionConfig,
        weights: &AttentionWeights,
        blocks: usize,
        seed: u64,
    ) -> Vec<BlockOutput> {
        let banks = AttentionBanks::build(cfg, blocks).unwrap();
        let mut outs: Vec<BlockOutput> = Vec::new();
        for b in 0..blocks {
            let h = hidden(cfg, seed + b as u64);
            let io = match outs.last() {
                None => BlockIO::first(cfg, h),
                Some(prev) => BlockIO::next(prev.clone(), h),
            };
            outs.push(forward_block(io, weights, cfg, &banks).unwrap());
        }
        outs
    }

    #[test]
    fn mask_examples() {
        let s = MASK_SENTINEL;
        assert_eq!(
            build_trapezoidal_mask(2, 0),
            ndarray::array![[0.0, s], [0.0, 0.0]]
        );
        assert_eq!(
            build_trapezoidal_mask(2, 3),
            ndarray::array![[0.0, 0.0, 0.0, 0.0, s], [0.0, 0.0, 0.0, 0.0, 0.0]]
        );
        assert!(build_trapezoidal_mask(1, 5).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rotary_examples() {
        let x = ndarray::array![[0.3, -1.2, 2.0, 0.5]];
        assert_eq!(apply_rotary(x.view(), 0, 10_000.0).unwrap(), x);
        let one = apply_rotary(ndarray::array![[1.0, 0.0]].view(), 1, 10_000.0).unwrap();
        assert_abs_diff_eq!(one[[0, 0]], 1f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(one[[0, 1]], 1f64.sin(), epsilon = 1e-15);
        assert!(apply_rotary(ndarray::array![[1.0, 2.0, 3.0]].view(), 0, 10_000.0).is_err());

        let mut rng = Pcg64Mcg::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((7, 8), || rng.sample::<f64, _>(StandardNormal));
        let y = apply_rotary(x.view(), 123, 500.0).unwrap();
        for r in 0..7 {
            for p in 0..4 {
                let before = x[[r, 2 * p]].hypot(x[[r, 2 * p + 1]]);
                let after = y[[r, 2 * p]].hypot(y[[r, 2 * p + 1]]);
                assert_abs_diff_eq!(before, after, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AttentionConfig::new(2, 4, 4, 2, 8);
        assert!(cfg.validate().is_ok());
        cfg.model_dim = 9;
        assert!(cfg.validate().is_err());
        assert!(AttentionConfig::new(2, 3, 4, 2, 8).validate().is_err());
        assert!(AttentionConfig::new(0, 4, 4, 2, 8).validate().is_err());
    }

    #[test]
    fn single_token_without_memory_returns_value() {
        let cfg = AttentionConfig::new(2, 4, 1, 0, 4);
        let weights = AttentionWeights::seeded(&cfg, 1).unwrap();
        let out = &run(&cfg, &weights, 3, 5)[2];
        for head in &out.heads {
            assert_eq!(head.probabilities.dim(), (1, 1));
            assert_eq!(head.probabilities[[0, 0]], 1.0);
        }
        let expected = hidden(&cfg, 7).dot(&weights.value);
        assert!(out
            .head_outputs
            .iter()
            .zip(expected.iter())
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn probabilities_are_causal_and_normalized() {
        let mut cfg = AttentionConfig::new(2, 8, 8, 4, 16);
        cfg.strategy = SamplingStrategy::exponential(0.8).unwrap();
        let weights = AttentionWeights::seeded(&cfg, 3).unwrap();
        let outs = run(&cfg, &weights, 3, 10);
        assert!(outs[0]
            .heads
            .iter()
            .all(|h| h.memory_mass() == 0.0 && h.k_mem.is_none()));
        for out in &outs {
            for head in &out.heads {
                let m = head.k_mem.as_ref().map_or(0, |k| k.nrows());
                assert_eq!(m, if out.block_index == 1 { 0 } else { 4 });
                for (p, row) in head.probabilities.rows().into_iter().enumerate() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|v| *v >= 0.0));
                    for q in (p + 1)..8 {
                        assert_eq!(row[m + q], 0.0);
                    }
                }
            }
        }
        assert!(outs[1].heads.iter().all(|h| h.memory_mass() > 0.0));
    }

    #[test]
    fn memory_update_uses_raw_keys() {
        let cfg = AttentionConfig::new(2, 4, 4, 3, 8);
        let weights = AttentionWeights::seeded(&cfg, 8).unwrap();
        let banks = AttentionBanks::build(&cfg, 2).unwrap();
        let first = forward_block(
            BlockIO::first(&cfg, hidden(&cfg, 1)),
            &weights,
            &cfg,
            &banks,
        )
        .unwrap();
        let h2 = hidden(&cfg, 2);
        let previous = first.key_states.clone();
        let second =
            forward_block(BlockIO::next(first, h2.clone()), &weights, &cfg, &banks).unwrap();
        for (h, head) in second.heads.iter().enumerate() {
            let expected = h2.dot(&weights.key.slice(s![.., h * 4..(h + 1) * 4]));
            assert_eq!(head.raw_keys, expected);
            let replay =
                block_update(previous[h].clone(), head.raw_keys.view(), &banks.kernels).unwrap();
            assert_eq!(replay, second.key_states[h]);
            let rotated = apply_rotary(expected.view(), 4, cfg.rope_base).unwrap();
            assert_ne!(rotated, head.raw_keys);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let cfg = AttentionConfig::new(2, 8, 8, 4, 16);
        let weights = AttentionWeights::seeded(&cfg, 21).unwrap();
        let a = run(&cfg, &weights, 4, 0);
        let b = run(&cfg, &weights, 4, 0);
        for (x, y) in a.iter().zip(&b) {
            for (s, t) in x.key_states.iter().zip(&y.key_states) {
                assert_eq!(s.checksum(), t.checksum());
            }
            assert!(x
                .output
                .iter()
                .zip(y.output.iter())
                .all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn head_permutation_permutes_states() {
        let cfg = AttentionConfig::new(3, 4, 4, 2, 8);
        let weights = AttentionWeights::seeded(&cfg, 2).unwrap();
        let order = [2usize, 0, 1];
        let permuted = weights.permute_heads(&cfg, &order).unwrap();
        let a = run(&cfg, &weights, 3, 40);
        let b = run(&cfg, &permuted, 3, 40);
        for (x, y) in a.iter().zip(&b) {
            for (new, &old) in order.iter().enumerate() {
                assert_eq!(y.key_states[new], x.key_states[old]);
                assert_eq!(y.value_states[new], x.value_states[old]);
                let got = y.head_outputs.slice(s![.., new * 4..(new + 1) * 4]);
                let want = x.head_outputs.slice(s![.., old * 4..(old + 1) * 4]);
                assert_eq!(got, want);
            }
            for (p, q) in x.output.iter().zip(y.output.iter()) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-12);
            }
        }
        assert!(weights.permute_heads(&cfg, &[0, 0, 1]).is_err());
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let cfg = AttentionConfig::new(2, 4, 4, 2, 8);
        let weights = AttentionWeights::seeded(&cfg, 2).unwrap();
        let banks = AttentionBanks::build(&cfg, 1).unwrap();
        let bad_hidden = BlockIO::first(&cfg, Array2::zeros((3, 8)));
        assert!(forward_block(bad_hidden, &weights, &cfg, &banks).is_err());
        let mut stale = BlockIO::first(&cfg, hidden(&cfg, 0));
        stale.block_index = 2;
        assert!(forward_block(stale, &weights, &cfg, &banks).is_err());
        let out = forward_block(
            BlockIO::first(&cfg, hidden(&cfg, 0)),
            &weights,
            &cfg,
            &banks,
        )
        .unwrap();
        let exhausted = forward_block(BlockIO::next(out, hidden(&cfg, 1)), &weights, &cfg, &banks);
        assert!(matches!(exhausted, Err(Error::CapacityExhausted { .. })));
    }
}
