use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use emk_core::{
    block_update, reconstruct_at, sample_points, sequential_update, BlockKernelBank, Discretizer,
    HippoOperator, MemoryState, SamplingStrategy,
};
use ndarray::{s, Array2};
use serde_json::json;

use crate::settings::{self, pick, positive, FileSettings};
use crate::{CompressArgs, Outcome, UsageError};

/// Numeric columns, one row per line; `#` starts a comment, fields are
/// separated by whitespace and/or commas.
pub fn parse_columns(text: &str) -> anyhow::Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let data = line.split('#').next().unwrap_or("");
        let fields: Vec<&str> = data
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                bail!(
                    "line {}: expected {w} columns, found {}",
                    lineno + 1,
                    fields.len()
                )
            }
            _ => {}
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .with_context(|| format!("line {}: '{f}' is not a number", lineno + 1))?;
            if !v.is_finite() {
                bail!("line {}: non-finite value '{f}'", lineno + 1);
            }
            values.push(v);
        }
        rows += 1;
    }
    let Some(width) = width else {
        bail!("input has no data rows");
    };
    Ok(Array2::from_shape_vec((rows, width), values)?)
}

fn default_out(input: &Path) -> PathBuf {
    let mut name = input
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".recon.txt");
    input.with_file_name(name)
}

fn write_section(out: &mut String, title: &str, points: &[f64], values: &Array2<f64>) {
    let _ = writeln!(out, "# {title}");
    for (x, row) in points.iter().zip(values.rows()) {
        let _ = write!(out, "{x}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
}

pub fn run(args: &CompressArgs, file: &FileSettings) -> anyhow::Result<Outcome> {
    let m = &args.memory;
    let order = positive("order", pick(m.order, file.order, 32))?;
    let block_length = positive("block-length", pick(m.block_length, file.block_length, 64))?;
    let mem_length = positive("mem-length", pick(m.mem_length, file.mem_length, 16))?;
    let scheme = settings::scheme(&pick(m.scheme.clone(), file.scheme.clone(), "zoh".into()))?;
    let alpha = settings::alpha(m.alpha.or(file.alpha))?;
    let strategy = settings::strategy(
        "strategy",
        &pick(m.strategy.clone(), file.strategy.clone(), "uniform".into()),
        alpha,
    )?;
    let full_grid = args.full_grid || file.full_grid.unwrap_or(false);

    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let inputs =
        parse_columns(&text).with_context(|| format!("parsing {}", args.input.display()))?;
    let (tokens, channels) = inputs.dim();
    let full_blocks = tokens / block_length;
    let max_blocks = pick(m.max_blocks, file.max_blocks, full_blocks.max(1));
    if max_blocks < full_blocks {
        return Err(UsageError(format!(
            "--max-blocks {max_blocks} is below the {full_blocks} full blocks in the input"
        ))
        .into());
    }

    let op = HippoOperator::new(order)?;
    let mut state = MemoryState::zeros(order, channels);
    if full_blocks > 0 {
        let cache_dir = m.cache_dir.clone().or(file.cache_dir.clone());
        let bank = match cache_dir {
            Some(dir) => {
                BlockKernelBank::load_or_build(&dir, &op, block_length, scheme, max_blocks)?.0
            }
            None => BlockKernelBank::build(&op, block_length, scheme, max_blocks)?,
        };
        for b in 0..full_blocks {
            let block = inputs.slice(s![b * block_length..(b + 1) * block_length, ..]);
            state = block_update(state, block, &bank)?;
        }
    }
    let disc = Discretizer::new(&op, scheme)?;
    for row in inputs.slice(s![full_blocks * block_length.., ..]).rows() {
        let step = disc.token_step(state.tokens_absorbed())?;
        state = sequential_update(state, row, &step)?;
    }

    let t = tokens as f64;
    let points = sample_points(strategy, t, mem_length)?;
    let sampled = reconstruct_at(&state, &points)?;
    let grid: Vec<f64> = (0..tokens).map(|j| j as f64).collect();
    let full = reconstruct_at(&state, &grid)?;
    let per_channel: Vec<f64> = (&full - &inputs)
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / t)
        .collect();
    let mse = per_channel.iter().sum::<f64>() / channels as f64;

    let mut report = String::new();
    let strategy_label = match strategy {
        SamplingStrategy::Uniform => "uniform".to_string(),
        SamplingStrategy::Exponential { decay } => format!("exponential alpha={decay}"),
    };
    let _ = writeln!(
        report,
        "# order={order} block_length={block_length} scheme={} strategy={strategy_label} tokens={tokens} channels={channels}",
        scheme.name()
    );
    let _ = writeln!(report, "# checksum={}", state.checksum());
    write_section(&mut report, "sample-points", &points, &sampled);
    if full_grid {
        write_section(&mut report, "full-grid", &grid, &full);
    }
    let out = args
        .out
        .clone()
        .or(file.out.clone())
        .unwrap_or_else(|| default_out(&args.input));
    std::fs::write(&out, report).with_context(|| format!("writing {}", out.display()))?;

    for (c, e) in per_channel.iter().enumerate() {
        println!("channel {c}: mse {e:e}");
    }
    println!("mse {mse:e}");
    Ok(Outcome {
        ok: true,
        summary: json!({
            "command": "compress",
            "ok": true,
            "tokens": tokens,
            "channels": channels,
            "order": order,
            "scheme": scheme.name(),
            "strategy": strategy.name(),
            "mse": mse,
            "mse_per_channel": per_channel,
            "state_checksum": state.checksum(),
            "out": out.display().to_string(),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_separators_and_comments() {
        let m = parse_columns("# header\n1, 2\n3 4 # trailing\n\n5,\t6\n").unwrap();
        assert_eq!(m, ndarray::array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_columns("").is_err());
        assert!(parse_columns("# only comments\n").is_err());
        assert!(parse_columns("1 2\n3\n").is_err());
        assert!(parse_columns("1 x\n").is_err());
        assert!(parse_columns("nan\n").is_err());
    }

    #[test]
    fn default_output_sits_next_to_input() {
        assert_eq!(
            default_out(Path::new("/tmp/a/sig.txt")),
            PathBuf::from("/tmp/a/sig.txt.recon.txt")
        );
    }
}
