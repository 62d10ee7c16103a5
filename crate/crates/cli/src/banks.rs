use std::path::PathBuf;
use std::time::Instant;

use emk_core::cache::file_digest;
use emk_core::{BlockKernelBank, HippoOperator, ReconstructionBank};
use serde_json::json;

use crate::settings::{self, pick, positive, FileSettings};
use crate::{MemoryArgs, Outcome};

pub fn run(args: &MemoryArgs, file: &FileSettings) -> anyhow::Result<Outcome> {
    let order = positive("order", pick(args.order, file.order, 16))?;
    let block_length = positive(
        "block-length",
        pick(args.block_length, file.block_length, 64),
    )?;
    let mem_length = positive("mem-length", pick(args.mem_length, file.mem_length, 16))?;
    let max_blocks = positive("max-blocks", pick(args.max_blocks, file.max_blocks, 8))?;
    let scheme = settings::scheme(&pick(
        args.scheme.clone(),
        file.scheme.clone(),
        "zoh".into(),
    ))?;
    let alpha = settings::alpha(args.alpha.or(file.alpha))?;
    let strategy = settings::strategy(
        "strategy",
        &pick(
            args.strategy.clone(),
            file.strategy.clone(),
            "uniform".into(),
        ),
        alpha,
    )?;
    let dir = pick(
        args.cache_dir.clone(),
        file.cache_dir.clone(),
        PathBuf::from(".emk-cache"),
    );

    let op = HippoOperator::new(order)?;
    let started = Instant::now();
    let (_, kernel_hit) =
        BlockKernelBank::load_or_build(&dir, &op, block_length, scheme, max_blocks)?;
    let kernel_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let (_, recon_hit) = ReconstructionBank::load_or_build(
        &dir,
        &op,
        strategy,
        mem_length,
        block_length,
        max_blocks,
    )?;
    let recon_seconds = started.elapsed().as_secs_f64();

    let files = [
        (
            "kernel",
            dir.join(BlockKernelBank::cache_file_name(
                order,
                block_length,
                scheme,
                max_blocks,
            )),
            kernel_hit,
            kernel_seconds,
        ),
        (
            "reconstruction",
            dir.join(ReconstructionBank::cache_file_name(
                order,
                strategy,
                mem_length,
                block_length,
                max_blocks,
            )),
            recon_hit,
            recon_seconds,
        ),
    ];
    let mut entries = Vec::new();
    for (kind, path, hit, seconds) in files {
        let bytes = std::fs::metadata(&path)?.len();
        let sha256 = file_digest(&path)?;
        println!(
            "{kind:<14} N={order} L={block_length} max_blocks={max_blocks} bytes={bytes} seconds={seconds:.3} {} {}",
            if hit { "cache-hit" } else { "built" },
            path.display()
        );
        entries.push(json!({
            "kind": kind,
            "path": path.display().to_string(),
            "bytes": bytes,
            "seconds": seconds,
            "cache_hit": hit,
            "sha256": sha256,
        }));
    }
    Ok(Outcome {
        ok: true,
        summary: json!({
            "command": "build-banks",
            "ok": true,
            "order": order,
            "block_length": block_length,
            "mem_length": mem_length,
            "max_blocks": max_blocks,
            "scheme": scheme.name(),
            "strategy": strategy.name(),
            "banks": entries,
        }),
    })
}
