use anyhow::Context;
use emk_core::signal::to_csv;
use emk_core::{run_table, BenchResult, Scheme, SignalKind, TableConfig};
use serde_json::json;

use crate::settings::{self, pick, positive, FileSettings, Format};
use crate::{BenchArgs, Outcome};

pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn find(
    results: &[BenchResult],
    kind: SignalKind,
    components: usize,
    order: usize,
    scheme: Scheme,
) -> Option<f64> {
    results
        .iter()
        .find(|r| {
            r.signal_type == kind
                && r.n_components == components
                && r.hippo_dim == order
                && r.scheme == scheme
        })
        .map(|r| r.mse)
}

fn band(name: &str, value: Option<f64>, lo: f64, hi: f64) -> Check {
    Check {
        name: name.into(),
        pass: value.is_some_and(|v| v >= lo && v <= hi),
        detail: format!("{value:?} in [{lo:e}, {hi:e}]"),
    }
}

/// Expected shape of the default table: order-of-magnitude bands on the sine
/// rows, absolute bands on the noise rows and the scheme ordering.
pub fn table_checks(results: &[BenchResult]) -> Vec<Check> {
    use Scheme::*;
    use SignalKind::*;
    let sine = |k, s| find(results, SineComposite, k, 32, s);
    let noise = |n| find(results, RandomNoise, 0, n, Zoh);
    let mut checks = vec![
        band("sine1_zoh_band", sine(1, Zoh), 1.2e-6, 1.2e-4),
        band("sine3_zoh_band", sine(3, Zoh), 2.3e-5, 2.3e-3),
        band("sine5_zoh_band", sine(5, Zoh), 9.8e-5, 9.8e-3),
        band("noise32_band", noise(32), 0.85, 1.05),
        band("noise128_band", noise(128), 0.80, 1.00),
        band("noise512_band", noise(512), 0.60, 0.85),
    ];
    let (fwd, bwd, bil) = (
        sine(5, ForwardEuler),
        sine(5, BackwardEuler),
        sine(5, Bilinear),
    );
    if let (Some(f), Some(b), Some(l)) = (fwd, bwd, bil) {
        checks.push(Check {
            name: "bilinear_below_euler".into(),
            pass: l < f && l < b,
            detail: format!("bilinear {l:e}, forward {f:e}, backward {b:e}"),
        });
        checks.push(Check {
            name: "forward_backward_comparable".into(),
            pass: (f / b).max(b / f) <= 3.0,
            detail: format!("ratio {:.3}", f / b),
        });
    } else {
        checks.push(Check {
            name: "scheme_rows_present".into(),
            pass: false,
            detail: "missing 5-sine rows".into(),
        });
    }
    if let (Some(a), Some(b), Some(c)) = (noise(32), noise(128), noise(512)) {
        checks.push(Check {
            name: "noise_decreasing".into(),
            pass: a > b && b > c,
            detail: format!("{a:.4} > {b:.4} > {c:.4}"),
        });
    }
    let sine_max = results
        .iter()
        .filter(|r| r.signal_type == SineComposite)
        .map(|r| r.mse)
        .fold(0.0, f64::max);
    let noise_min = results
        .iter()
        .filter(|r| r.signal_type == RandomNoise)
        .map(|r| r.mse)
        .fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "class_separation".into(),
        pass: sine_max < 1e-2 && noise_min > 0.5,
        detail: format!("max sine {sine_max:e} < 1e-2, min noise {noise_min:.4} > 0.5"),
    });
    checks
}

pub fn to_json(results: &[BenchResult], timings: bool) -> String {
    let rows: Vec<_> = results
        .iter()
        .map(|r| {
            json!({
                "signal_type": r.signal_type,
                "n_components": r.n_components,
                "hippo_dim": r.hippo_dim,
                "sample_length": r.sample_length,
                "scheme": r.scheme,
                "mse": r.mse,
                "mse_std": r.mse_std,
                "seconds": if timings { Some(r.seconds) } else { None },
            })
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&rows).expect("plain values serialize");
    text.push('\n');
    text
}

pub fn run(args: &BenchArgs, file: &FileSettings) -> anyhow::Result<Outcome> {
    let defaults = TableConfig::default();
    let config = TableConfig {
        seeds: positive("seeds", pick(args.seeds, file.seeds, defaults.seeds))?,
        base_seed: pick(args.seed, file.seed, defaults.base_seed),
        length: pick(args.length, file.length, defaults.length),
        ..defaults
    };
    if config.length < 2 {
        return Err(crate::UsageError("--length must be at least 2".into()).into());
    }
    let format = settings::format(&pick(
        args.format.clone(),
        file.format.clone(),
        "csv".into(),
    ))?;
    let timings = args.timings || file.timings.unwrap_or(false);

    let results = run_table(&config)?;
    let body = match format {
        Format::Csv => to_csv(&results, timings),
        Format::Json => to_json(&results, timings),
    };
    let out = args.out.clone().or(file.out.clone());
    match &out {
        Some(path) => {
            std::fs::write(path, &body).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{body}"),
    }
    for r in &results {
        println!(
            "{:<5} {:>2} N={:<3} {:<8} mse {:.3e} ± {:.1e}  {:.2}s",
            r.signal_type.name(),
            r.n_components,
            r.hippo_dim,
            r.scheme.name(),
            r.mse,
            r.mse_std,
            r.seconds
        );
    }
    let checks = table_checks(&results);
    for c in &checks {
        println!(
            "check {}: {} ({})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    let ok = checks.iter().all(|c| c.pass);
    let total: f64 = results.iter().map(|r| r.seconds).sum();
    Ok(Outcome {
        ok,
        summary: json!({
            "command": "bench-table",
            "ok": ok,
            "rows": results.len(),
            "seeds": config.seeds,
            "length": config.length,
            "seconds": total,
            "failed": checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect::<Vec<_>>(),
            "out": out.map(|p| p.display().to_string()),
        }),
    })
}
