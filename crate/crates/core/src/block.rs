//! Block-parallel memory updates.
//!
//! Block i holds tokens (i−1)L … iL−1; token j is absorbed by step j
//! (step 0 being the exact initial step). Unrolling the recurrence gives
//!
//! ```text
//! C_i = P_i·C_{i−1} + K̄_i·F_i
//! P_i        = Ā_{iL−1} ⋯ Ā_{(i−1)L}
//! K̄_i[:, j]  = Ā_{iL−1} ⋯ Ā_{k_j+1} · B̄_{k_j},   k_j = (i−1)L + j
//! ```
//!
//! Since Ā_0 = 0, P_1 = 0: the first block sees empty memory.
//!
//! Both are precomputed for every block position up to `max_blocks`, so an
//! update is two matrix products.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use crate::cache::{self, BankHeader, BankKind};
use crate::discretize::{Discretizer, Scheme};
use crate::error::{Error, Result};
use crate::hippo::HippoOperator;
use crate::state::MemoryState;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockKernelBank {
    block_length: usize,
    order: usize,
    scheme: Scheme,
    max_blocks: usize,
    transitions: Vec<Array2<f64>>,
    kernels: Vec<Array2<f64>>,
}

impl BlockKernelBank {
    pub fn build(
        op: &HippoOperator,
        block_length: usize,
        scheme: Scheme,
        max_blocks: usize,
    ) -> Result<Self> {
        if block_length == 0 {
            return Err(Error::invalid("block_length", "must be at least 1"));
        }
        if max_blocks == 0 {
            return Err(Error::invalid("max_blocks", "must be at least 1"));
        }
        let n = op.order();
        let disc = Discretizer::new(op, scheme)?;
        let mut transitions = Vec::with_capacity(max_blocks);
        let mut kernels = Vec::with_capacity(max_blocks);
        for block in 1..=max_blocks {
            // [P | K̄] grown one step at a time: every step multiplies the
            // filled columns by Ā_k and appends B̄_k as the next kernel column.
            let mut combined = Array2::<f64>::zeros((n, n + block_length));
            combined.slice_mut(s![.., ..n]).assign(&Array2::eye(n));
            for j in 0..block_length {
                let k = (block - 1) * block_length + j;
                let step = disc.token_step(k)?;
                let filled = combined.slice(s![.., ..n + j]).to_owned();
                combined
                    .slice_mut(s![.., ..n + j])
                    .assign(&step.a_bar().dot(&filled));
                combined.column_mut(n + j).assign(step.b_bar());
                if combined.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Unstable { scheme, step: k });
                }
            }
            transitions.push(combined.slice(s![.., ..n]).to_owned());
            kernels.push(combined.slice(s![.., n..]).to_owned());
        }
        Ok(Self {
            block_length,
            order: n,
            scheme,
            max_blocks,
            transitions,
            kernels,
        })
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn max_blocks(&self) -> usize {
        self.max_blocks
    }

    /// P_i for 1-based block index i.
    pub fn transition(&self, block: usize) -> Option<&Array2<f64>> {
        block.checked_sub(1).and_then(|i| self.transitions.get(i))
    }

    /// K̄_i for 1-based block index i.
    pub fn kernel(&self, block: usize) -> Option<&Array2<f64>> {
        block.checked_sub(1).and_then(|i| self.kernels.get(i))
    }

    fn header(&self) -> BankHeader {
        BankHeader {
            kind: BankKind::Kernel,
            order: self.order,
            block_length: self.block_length,
            tag: self.scheme.tag(),
            max_blocks: self.max_blocks,
            mem_length: 0,
            decay: 0.0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let matrices = self
            .transitions
            .iter()
            .zip(&self.kernels)
            .flat_map(|(p, k)| [p, k]);
        cache::write_bank(path, &self.header(), matrices)
    }

    /// Load a bank written by [`save`](Self::save), verifying that the header
    /// matches the requested parameters and the payload checksum is intact.
    pub fn load(
        path: &Path,
        order: usize,
        block_length: usize,
        scheme: Scheme,
        max_blocks: usize,
    ) -> Result<Self> {
        let expected = BankHeader {
            kind: BankKind::Kernel,
            order,
            block_length,
            tag: scheme.tag(),
            max_blocks,
            mem_length: 0,
            decay: 0.0,
        };
        let shapes = (0..max_blocks)
            .flat_map(|_| [(order, order), (order, block_length)])
            .collect::<Vec<_>>();
        let mut matrices = cache::read_bank(path, &expected, &shapes)?.into_iter();
        let mut transitions = Vec::with_capacity(max_blocks);
        let mut kernels = Vec::with_capacity(max_blocks);
        while let (Some(p), Some(k)) = (matrices.next(), matrices.next()) {
            transitions.push(p);
            kernels.push(k);
        }
        Ok(Self {
            block_length,
            order,
            scheme,
            max_blocks,
            transitions,
            kernels,
        })
    }

    pub fn cache_file_name(
        order: usize,
        block_length: usize,
        scheme: Scheme,
        max_blocks: usize,
    ) -> String {
        format!("emkb-n{order}-l{block_length}-{scheme}-b{max_blocks}.bin")
    }

    /// Load from `dir` when a valid cache file exists, otherwise build and
    /// write one. The flag reports whether the cache was hit.
    pub fn load_or_build(
        dir: &Path,
        op: &HippoOperator,
        block_length: usize,
        scheme: Scheme,
        max_blocks: usize,
    ) -> Result<(Self, bool)> {
        let path = dir.join(Self::cache_file_name(
            op.order(),
            block_length,
            scheme,
            max_blocks,
        ));
        if path.exists() {
            if let Ok(bank) = Self::load(&path, op.order(), block_length, scheme, max_blocks) {
                return Ok((bank, true));
            }
        }
        let bank = Self::build(op, block_length, scheme, max_blocks)?;
        std::fs::create_dir_all(dir)?;
        bank.save(&path)?;
        Ok((bank, false))
    }
}

/// C_i = P_i·C_{i−1} + K̄_i·F_i for the next block of `state`.
pub fn block_update(
    state: MemoryState,
    inputs: ArrayView2<'_, f64>,
    bank: &BlockKernelBank,
) -> Result<MemoryState> {
    let block = state.blocks_absorbed() + 1;
    if block > bank.max_blocks {
        return Err(Error::CapacityExhausted {
            requested: block,
            capacity: bank.max_blocks,
        });
    }
    if state.order() != bank.order {
        return Err(Error::mismatch(
            "block_update order",
            bank.order,
            state.order(),
        ));
    }
    if inputs.nrows() != bank.block_length || inputs.ncols() != state.channel_count() {
        return Err(Error::mismatch(
            "block_update inputs",
            format!("{}x{}", bank.block_length, state.channel_count()),
            format!("{}x{}", inputs.nrows(), inputs.ncols()),
        ));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("inputs", "non-finite input"));
    }
    let p = &bank.transitions[block - 1];
    let k = &bank.kernels[block - 1];
    let mut next = p.dot(&state.coefficients());
    next += &k.dot(&inputs);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Unstable {
            scheme: bank.scheme,
            step: block * bank.block_length,
        });
    }
    Ok(state.advance(next, 1, bank.block_length))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::sequential_update;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64Mcg;

    fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn random_matrix(rng: &mut Pcg64Mcg, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn run_sequential(
        op: &HippoOperator,
        scheme: Scheme,
        mut state: MemoryState,
        inputs: &Array2<f64>,
    ) -> MemoryState {
        let disc = Discretizer::new(op, scheme).unwrap();
        for row in inputs.rows() {
            let step = disc.token_step(state.tokens_absorbed()).unwrap();
            state = sequential_update(state, row, &step).unwrap();
        }
        state
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let op = HippoOperator::new(4).unwrap();
        assert!(BlockKernelBank::build(&op, 0, Scheme::Zoh, 2).is_err());
        assert!(BlockKernelBank::build(&op, 4, Scheme::Zoh, 0).is_err());
    }

    #[test]
    fn unit_blocks_are_single_steps() {
        let op = HippoOperator::new(6).unwrap();
        let bank = BlockKernelBank::build(&op, 1, Scheme::Zoh, 5).unwrap();
        let disc = Discretizer::new(&op, Scheme::Zoh).unwrap();
        for i in 1..=5 {
            let step = disc.token_step(i - 1).unwrap();
            assert_eq!(bank.transition(i).unwrap(), step.a_bar());
            let col = bank.kernel(i).unwrap().column(0).to_owned();
            assert_eq!(&col, step.b_bar());
        }
        assert!(bank.transition(0).is_none());
        assert!(bank.transition(6).is_none());
    }

    #[test]
    fn transition_is_product_of_steps() {
        let op = HippoOperator::new(4).unwrap();
        let bank = BlockKernelBank::build(&op, 8, Scheme::Zoh, 2).unwrap();
        let disc = Discretizer::new(&op, Scheme::Zoh).unwrap();
        let mut product = Array2::<f64>::eye(4);
        for k in 8..16 {
            product = disc.step(k).unwrap().a_bar().dot(&product);
        }
        assert!(max_abs_diff(bank.transition(2).unwrap().view(), product.view()) < 1e-10);
        assert!(bank.transition(1).unwrap().iter().all(|v| *v == 0.0));

        // ZOH telescopes: ∏_{k=8}^{15} (k/(k+1))^{n+1} = (8/16)^{n+1}
        let p2 = bank.transition(2).unwrap();
        for n in 0..4 {
            let expected = 0.5f64.powi(n as i32 + 1);
            assert!((p2[[n, n]] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_block_keeps_zero_state() {
        let op = HippoOperator::new(8).unwrap();
        let bank = BlockKernelBank::build(&op, 4, Scheme::Zoh, 3).unwrap();
        let next = block_update(
            MemoryState::zeros(8, 2),
            Array2::zeros((4, 2)).view(),
            &bank,
        )
        .unwrap();
        assert!(next.coefficients().iter().all(|v| *v == 0.0));
        assert_eq!(next.blocks_absorbed(), 1);
        assert_eq!(next.tokens_absorbed(), 4);
    }

    #[test]
    fn matches_token_by_token_recurrence() {
        let op = HippoOperator::new(16).unwrap();
        let bank = BlockKernelBank::build(&op, 32, Scheme::Zoh, 3).unwrap();
        let mut rng = Pcg64Mcg::seed_from_u64(7);
        let mut block_state = MemoryState::zeros(16, 4);
        let mut seq_state = MemoryState::zeros(16, 4);
        for _ in 0..3 {
            let inputs = random_matrix(&mut rng, 32, 4);
            block_state = block_update(block_state, inputs.view(), &bank).unwrap();
            seq_state = run_sequential(&op, Scheme::Zoh, seq_state, &inputs);
            assert!(max_abs_diff(block_state.coefficients(), seq_state.coefficients()) < 1e-9);
        }
    }

    #[test]
    fn two_blocks_equal_one_double_block() {
        let op = HippoOperator::new(12).unwrap();
        for scheme in [Scheme::Zoh, Scheme::Bilinear] {
            let short = BlockKernelBank::build(&op, 5, scheme, 4).unwrap();
            let long = BlockKernelBank::build(&op, 10, scheme, 2).unwrap();
            let mut rng = Pcg64Mcg::seed_from_u64(11);
            let inputs = random_matrix(&mut rng, 20, 2);
            let mut a = MemoryState::zeros(12, 2);
            for chunk in 0..4 {
                a = block_update(a, inputs.slice(s![chunk * 5..(chunk + 1) * 5, ..]), &short)
                    .unwrap();
            }
            let mut b = MemoryState::zeros(12, 2);
            for chunk in 0..2 {
                b = block_update(b, inputs.slice(s![chunk * 10..(chunk + 1) * 10, ..]), &long)
                    .unwrap();
            }
            assert!(
                max_abs_diff(a.coefficients(), b.coefficients()) < 1e-9,
                "{scheme}"
            );
            assert_eq!(a.tokens_absorbed(), b.tokens_absorbed());
        }
    }

    #[test]
    fn constant_input_reaches_fixed_point() {
        let op = HippoOperator::new(8).unwrap();
        let bank = BlockKernelBank::build(&op, 512, Scheme::Zoh, 2).unwrap();
        let c = -1.25;
        let mut state = MemoryState::zeros(8, 1);
        for _ in 0..2 {
            state = block_update(state, Array2::from_elem((512, 1), c).view(), &bank).unwrap();
        }
        let coeffs = state.coefficients();
        assert!((coeffs[[0, 0]] - c).abs() < 1e-2);
        for n in 1..8 {
            assert!(coeffs[[n, 0]].abs() < 1e-3, "n={n}: {}", coeffs[[n, 0]]);
        }
    }

    #[test]
    fn capacity_and_shape_errors() {
        let op = HippoOperator::new(4).unwrap();
        let bank = BlockKernelBank::build(&op, 2, Scheme::Zoh, 1).unwrap();
        let state =
            block_update(MemoryState::zeros(4, 1), Array2::ones((2, 1)).view(), &bank).unwrap();
        assert!(matches!(
            block_update(state, Array2::ones((2, 1)).view(), &bank),
            Err(Error::CapacityExhausted {
                requested: 2,
                capacity: 1
            })
        ));
        assert!(
            block_update(MemoryState::zeros(4, 1), Array2::ones((3, 1)).view(), &bank).is_err()
        );
        assert!(
            block_update(MemoryState::zeros(4, 2), Array2::ones((2, 1)).view(), &bank).is_err()
        );
        assert!(
            block_update(MemoryState::zeros(5, 1), Array2::ones((2, 1)).view(), &bank).is_err()
        );
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let op = HippoOperator::new(10).unwrap();
        let a = BlockKernelBank::build(&op, 6, Scheme::Bilinear, 3).unwrap();
        let b = BlockKernelBank::build(&op, 6, Scheme::Bilinear, 3).unwrap();
        for (x, y) in a
            .transitions
            .iter()
            .chain(&a.kernels)
            .zip(b.transitions.iter().chain(&b.kernels))
        {
            assert!(x
                .iter()
                .zip(y.iter())
                .all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn cache_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let op = HippoOperator::new(6).unwrap();
        let (built, hit) =
            BlockKernelBank::load_or_build(dir.path(), &op, 4, Scheme::Zoh, 3).unwrap();
        assert!(!hit);
        let (loaded, hit) =
            BlockKernelBank::load_or_build(dir.path(), &op, 4, Scheme::Zoh, 3).unwrap();
        assert!(hit);
        assert_eq!(built, loaded);

        let path = dir
            .path()
            .join(BlockKernelBank::cache_file_name(6, 4, Scheme::Zoh, 3));
        assert!(BlockKernelBank::load(&path, 6, 4, Scheme::Bilinear, 3).is_err());
        assert!(BlockKernelBank::load(&path, 6, 4, Scheme::Zoh, 2).is_err());

        // corrupt one payload byte: checksum mismatch, then rebuild on load_or_build
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            BlockKernelBank::load(&path, 6, 4, Scheme::Zoh, 3),
            Err(Error::Cache(_))
        ));
        let (rebuilt, hit) =
            BlockKernelBank::load_or_build(dir.path(), &op, 4, Scheme::Zoh, 3).unwrap();
        assert!(!hit);
        assert_eq!(rebuilt, built);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn block_equals_sequential(
            order in 1usize..20,
            block_length in 1usize..12,
            channels in 1usize..4,
            bilinear in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let scheme = if bilinear { Scheme::Bilinear } else { Scheme::Zoh };
            let op = HippoOperator::new(order).unwrap();
            let bank = BlockKernelBank::build(&op, block_length, scheme, 2).unwrap();
            let mut rng = Pcg64Mcg::seed_from_u64(seed);
            let mut block_state = MemoryState::zeros(order, channels);
            let mut seq_state = MemoryState::zeros(order, channels);
            for _ in 0..2 {
                let inputs = random_matrix(&mut rng, block_length, channels);
                block_state = block_update(block_state, inputs.view(), &bank).unwrap();
                seq_state = run_sequential(&op, scheme, seq_state, &inputs);
            }
            prop_assert!(max_abs_diff(block_state.coefficients(), seq_state.coefficients()) < 1e-9);
        }
    }
}
