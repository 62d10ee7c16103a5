use emk_core::{forward_block, AttentionBanks, AttentionConfig, AttentionWeights, BlockIO};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64Mcg;

/// Plain causal attention with rotary positions, written with explicit loops.
fn reference(
    hidden: &Array2<f64>,
    w: &AttentionWeights,
    cfg: &AttentionConfig,
    start: usize,
) -> Array2<f64> {
    let (l, hd) = (cfg.block_length, cfg.head_dim);
    let mut concat = Array2::zeros((l, cfg.model_dim));
    let rotate = |m: &mut Array2<f64>| {
        for r in 0..l {
            for p in 0..hd / 2 {
                let angle = (start + r) as f64 / cfg.rope_base.powf(2.0 * p as f64 / hd as f64);
                let rot = [[angle.cos(), -angle.sin()], [angle.sin(), angle.cos()]];
                let v = [m[[r, 2 * p]], m[[r, 2 * p + 1]]];
                m[[r, 2 * p]] = rot[0][0] * v[0] + rot[0][1] * v[1];
                m[[r, 2 * p + 1]] = rot[1][0] * v[0] + rot[1][1] * v[1];
            }
        }
    };
    for h in 0..cfg.head_count {
        let cols = s![.., h * hd..(h + 1) * hd];
        let mut q = hidden.dot(&w.query.slice(cols));
        let mut k = hidden.dot(&w.key.slice(cols));
        let v = hidden.dot(&w.value.slice(cols));
        rotate(&mut q);
        rotate(&mut k);
        for p in 0..l {
            let scores: Vec<f64> = (0..=p)
                .map(|j| (0..hd).map(|c| q[[p, c]] * k[[j, c]]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            for c in 0..hd {
                concat[[p, h * hd + c]] =
                    (0..=p).map(|j| weights[j] / total * v[[j, c]]).sum::<f64>();
            }
        }
    }
    concat.dot(&w.output)
}

#[test]
fn without_memory_the_block_is_causal_attention() {
    for (heads, head_dim, block) in [(2, 8, 8), (1, 2, 5), (4, 4, 16)] {
        let cfg = AttentionConfig::new(heads, head_dim, block, 0, 8);
        let weights = AttentionWeights::seeded(&cfg, 99).unwrap();
        let banks = AttentionBanks::build(&cfg, 4).unwrap();
        let mut rng = Pcg64Mcg::seed_from_u64(5);
        let mut io: Option<BlockIO> = None;
        for b in 0..4 {
            let hidden =
                Array2::from_shape_simple_fn((block, cfg.model_dim), || rng.sample(StandardNormal));
            let input = match io.take() {
                None => BlockIO::first(&cfg, hidden.clone()),
                Some(prev) => BlockIO {
                    hidden: hidden.clone(),
                    ..prev
                },
            };
            let out = forward_block(input, &weights, &cfg, &banks).unwrap();
            let expected = reference(&hidden, &weights, &cfg, b * block);
            let err = out
                .output
                .iter()
                .zip(expected.iter())
                .map(|(a, e)| (a - e).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-12, "block {b}: {err}");
            io = Some(BlockIO {
                hidden: Array2::zeros((0, 0)),
                key_states: out.key_states,
                value_states: out.value_states,
                block_index: out.block_index + 1,
            });
        }
    }
}
