//! Synthetic signals and the compress → reconstruct quality benchmark.

use std::f64::consts::TAU;
use std::fmt;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::{Discretizer, Scheme};
use crate::error::{Error, Result};
use crate::hippo::HippoOperator;
use crate::reconstruct::{reconstruct_at, sample_points, SamplingStrategy};
use crate::state::MemoryState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SignalKind {
    #[serde(rename = "sine")]
    SineComposite,
    #[serde(rename = "noise")]
    RandomNoise,
}

impl SignalKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SineComposite => "sine",
            Self::RandomNoise => "noise",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed interval [lo, hi]; lo == hi pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn validate(self, name: &'static str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::invalid(
                name,
                format!("empty range [{}, {}]", self.lo, self.hi),
            ));
        }
        Ok(())
    }

    fn sample(self, rng: &mut Pcg64Mcg) -> f64 {
        rng.random_range(self.lo..=self.hi)
    }
}

/// f(x) = Σ_i A_i·sin(2π·ω_i·x/length + φ_i) over x = 0 … length−1.
///
/// Component i draws ω_i from `frequency_range` shifted up by
/// i·`frequency_stride` (cycles per window), then A_i, ω_i, φ_i are drawn in
/// that order per component, so a k-component signal is a prefix of the
/// (k+1)-component one with the same seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub component_count: usize,
    pub length: usize,
    pub seed: u64,
    pub amplitude_range: Range,
    pub frequency_range: Range,
    pub frequency_stride: f64,
    pub phase_range: Range,
}

impl SignalSpec {
    pub fn sines(component_count: usize, length: usize, seed: u64) -> Self {
        Self {
            kind: SignalKind::SineComposite,
            component_count,
            length,
            seed,
            amplitude_range: Range::new(0.5, 1.5),
            frequency_range: Range::new(1.0, 2.0),
            frequency_stride: 1.0,
            phase_range: Range::new(0.0, TAU),
        }
    }

    pub fn noise(length: usize, seed: u64) -> Self {
        Self {
            kind: SignalKind::RandomNoise,
            component_count: 0,
            ..Self::sines(0, length, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::invalid(
                "length",
                "signals need at least two samples",
            ));
        }
        if self.kind == SignalKind::SineComposite {
            if self.component_count == 0 {
                return Err(Error::invalid("component_count", "need at least one sine"));
            }
            self.amplitude_range.validate("amplitude_range")?;
            self.frequency_range.validate("frequency_range")?;
            self.phase_range.validate("phase_range")?;
            if !self.frequency_stride.is_finite() {
                return Err(Error::invalid("frequency_stride", "must be finite"));
            }
        }
        Ok(())
    }
}

/// The signal before normalization.
pub fn generate_raw(spec: &SignalSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = Pcg64Mcg::seed_from_u64(spec.seed);
    Ok(match spec.kind {
        SignalKind::SineComposite => {
            let mut out = vec![0.0; spec.length];
            for i in 0..spec.component_count {
                let amplitude = spec.amplitude_range.sample(&mut rng);
                let frequency =
                    spec.frequency_range.sample(&mut rng) + i as f64 * spec.frequency_stride;
                let phase = spec.phase_range.sample(&mut rng);
                for (x, v) in out.iter_mut().enumerate() {
                    *v +=
                        amplitude * (TAU * frequency * x as f64 / spec.length as f64 + phase).sin();
                }
            }
            out
        }
        SignalKind::RandomNoise => (0..spec.length)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    })
}

/// Zero mean, unit population variance.
pub fn normalize(values: &mut [f64]) -> Result<()> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::invalid(
            "signal",
            "cannot normalize a constant signal",
        ));
    }
    let sd = var.sqrt();
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    Ok(())
}

pub fn generate_signal(spec: &SignalSpec) -> Result<Vec<f64>> {
    let mut values = generate_raw(spec)?;
    normalize(&mut values)?;
    Ok(values)
}

/// Compress the columns of `signals` (length × channels) and return the
/// per-channel MSE of the reconstruction at every grid coordinate.
pub fn reconstruction_errors(
    op: &HippoOperator,
    scheme: Scheme,
    signals: &Array2<f64>,
) -> Result<Vec<f64>> {
    let length = signals.nrows();
    let disc = Discretizer::new(op, scheme)?;
    let state = disc.compress(
        MemoryState::zeros(op.order(), signals.ncols()),
        signals.view(),
    )?;
    let points = sample_points(SamplingStrategy::Uniform, length as f64, length)?;
    let recon = reconstruct_at(&state, &points)?;
    let diff = recon - signals;
    Ok(diff
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / length as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub signal_type: SignalKind,
    pub n_components: usize,
    pub hippo_dim: usize,
    pub sample_length: usize,
    pub scheme: Scheme,
    pub mse: f64,
    pub mse_std: f64,
    #[serde(skip)]
    pub per_seed: Vec<f64>,
    pub seconds: f64,
}

/// One signal, one order, one scheme.
pub fn run_benchmark(spec: &SignalSpec, order: usize, scheme: Scheme) -> Result<BenchResult> {
    run_seeds(spec, &[spec.seed], order, scheme)
}

/// The same row repeated over `seeds`; the seeds share one compression pass
/// as independent channels.
pub fn run_seeds(
    spec: &SignalSpec,
    seeds: &[u64],
    order: usize,
    scheme: Scheme,
) -> Result<BenchResult> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let started = Instant::now();
    let op = HippoOperator::new(order)?;
    let mut signals = Array2::zeros((spec.length, seeds.len()));
    for (col, &seed) in seeds.iter().enumerate() {
        let values = generate_signal(&SignalSpec {
            seed,
            ..spec.clone()
        })?;
        signals
            .column_mut(col)
            .assign(&ndarray::ArrayView1::from(&values[..]));
    }
    let per_seed = reconstruction_errors(&op, scheme, &signals)?;
    let count = per_seed.len() as f64;
    let mse = per_seed.iter().sum::<f64>() / count;
    let mse_std = (per_seed.iter().map(|v| (v - mse) * (v - mse)).sum::<f64>() / count).sqrt();
    Ok(BenchResult {
        signal_type: spec.kind,
        n_components: spec.component_count,
        hippo_dim: order,
        sample_length: spec.length,
        scheme,
        mse,
        mse_std,
        per_seed,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub kind: SignalKind,
    pub components: usize,
    pub order: usize,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableConfig {
    pub rows: Vec<TableRow>,
    pub length: usize,
    pub seeds: usize,
    pub base_seed: u64,
}

impl Default for TableConfig {
    fn default() -> Self {
        let sine = |components, scheme| TableRow {
            kind: SignalKind::SineComposite,
            components,
            order: 32,
            scheme,
        };
        let noise = |order| TableRow {
            kind: SignalKind::RandomNoise,
            components: 0,
            order,
            scheme: Scheme::Zoh,
        };
        Self {
            rows: vec![
                sine(1, Scheme::Zoh),
                sine(3, Scheme::Zoh),
                sine(5, Scheme::Zoh),
                sine(5, Scheme::ForwardEuler),
                sine(5, Scheme::BackwardEuler),
                sine(5, Scheme::Bilinear),
                noise(32),
                noise(128),
                noise(512),
            ],
            length: 1024,
            seeds: 8,
            base_seed: 0,
        }
    }
}

impl TableConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64)
            .map(|s| self.base_seed.wrapping_add(s))
            .collect()
    }
}

/// Rows run in parallel; results come back in row order.
pub fn run_table(config: &TableConfig) -> Result<Vec<BenchResult>> {
    let seeds = config.seed_list();
    config
        .rows
        .par_iter()
        .map(|row| {
            let spec = match row.kind {
                SignalKind::SineComposite => SignalSpec::sines(row.components, config.length, 0),
                SignalKind::RandomNoise => SignalSpec::noise(config.length, 0),
            };
            run_seeds(&spec, &seeds, row.order, row.scheme)
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "signal_type,n_components,hippo_dim,sample_length,scheme,mse,mse_std,seconds";

/// CSV report. Wall time varies run to run, so the `seconds` column is left
/// empty unless `timings` is set.
pub fn to_csv(results: &[BenchResult], timings: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let seconds = if timings {
            format!("{:.3}", r.seconds)
        } else {
            String::new()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{:e},{:e},{}\n",
            r.signal_type,
            r.n_components,
            r.hippo_dim,
            r.sample_length,
            r.scheme,
            r.mse,
            r.mse_std,
            seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noise_is_normalized() {
        for seed in [0, 1, 99] {
            let v = generate_signal(&SignalSpec::noise(1024, seed)).unwrap();
            let mean = v.iter().sum::<f64>() / 1024.0;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 1024.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pinned_sine_matches_closed_form() {
        let spec = SignalSpec {
            amplitude_range: Range::new(1.25, 1.25),
            frequency_range: Range::new(3.0, 3.0),
            phase_range: Range::new(0.0, 0.0),
            ..SignalSpec::sines(1, 200, 5)
        };
        let raw = generate_raw(&spec).unwrap();
        for (x, v) in raw.iter().enumerate() {
            let expected = 1.25 * (TAU * 3.0 * x as f64 / 200.0).sin();
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn same_seed_same_bits() {
        for spec in [SignalSpec::sines(4, 300, 17), SignalSpec::noise(300, 17)] {
            let a = generate_signal(&spec).unwrap();
            let b = generate_signal(&spec).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let c = generate_signal(&SignalSpec::sines(4, 300, 18)).unwrap();
        assert_ne!(generate_signal(&SignalSpec::sines(4, 300, 17)).unwrap(), c);
    }

    #[test]
    fn components_nest_across_counts() {
        let three = generate_raw(&SignalSpec::sines(3, 64, 2)).unwrap();
        let two = generate_raw(&SignalSpec::sines(2, 64, 2)).unwrap();
        // the difference is one sinusoid, so d[x+1] + d[x−1] = 2cos(θ)·d[x]
        let d: Vec<f64> = three.iter().zip(&two).map(|(a, b)| a - b).collect();
        let c = (d[2] + d[0]) / (2.0 * d[1]);
        assert!(c.abs() < 1.0);
        for x in 1..63 {
            assert_abs_diff_eq!(d[x + 1] + d[x - 1], 2.0 * c * d[x], epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_signal(&SignalSpec::noise(1, 0)).is_err());
        assert!(generate_signal(&SignalSpec::sines(0, 10, 0)).is_err());
        let empty = SignalSpec {
            frequency_range: Range::new(2.0, 1.0),
            ..SignalSpec::sines(1, 10, 0)
        };
        assert!(generate_signal(&empty).is_err());
        let constant = SignalSpec {
            amplitude_range: Range::new(0.0, 0.0),
            ..SignalSpec::sines(1, 10, 0)
        };
        assert!(generate_signal(&constant).is_err());
    }

    #[test]
    fn single_sine_in_band() {
        let r = run_benchmark(&SignalSpec::sines(1, 1024, 3), 32, Scheme::Zoh).unwrap();
        assert!(r.mse > 1.2e-6 && r.mse < 1.2e-4, "{}", r.mse);
    }

    #[test]
    fn noise_is_incompressible() {
        let r = run_benchmark(&SignalSpec::noise(1024, 3), 32, Scheme::Zoh).unwrap();
        assert!(r.mse > 0.85 && r.mse < 1.05, "{}", r.mse);
    }

    #[test]
    fn bilinear_beats_forward_euler() {
        let spec = SignalSpec::sines(5, 1024, 4);
        let bil = run_benchmark(&spec, 32, Scheme::Bilinear).unwrap();
        let fwd = run_benchmark(&spec, 32, Scheme::ForwardEuler).unwrap();
        assert!(bil.mse < fwd.mse, "{} vs {}", bil.mse, fwd.mse);
    }

    #[test]
    fn degradation_is_monotone_per_seed() {
        let seeds: Vec<u64> = (0..8).collect();
        let rows: Vec<Vec<f64>> = [1, 3, 5]
            .iter()
            .map(|&k| {
                run_seeds(&SignalSpec::sines(k, 1024, 0), &seeds, 32, Scheme::Zoh)
                    .unwrap()
                    .per_seed
            })
            .collect();
        for s in 0..seeds.len() {
            assert!(
                rows[0][s] <= rows[1][s] && rows[1][s] <= rows[2][s],
                "seed {s}: {rows:?}"
            );
        }
    }

    #[test]
    fn capacity_improves_with_order() {
        let spec = SignalSpec::sines(5, 1024, 11);
        let errors: Vec<f64> = [8, 32, 128, 512]
            .iter()
            .map(|&n| run_benchmark(&spec, n, Scheme::Zoh).unwrap().mse)
            .collect();
        for w in errors.windows(2) {
            assert!(w[1] <= 1.05 * w[0], "{errors:?}");
        }
    }

    #[test]
    fn csv_shape_and_blank_timings() {
        let config = TableConfig {
            rows: TableConfig::default().rows[..2].to_vec(),
            length: 256,
            seeds: 2,
            base_seed: 9,
        };
        let results = run_table(&config).unwrap();
        let csv = to_csv(&results, false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("sine,1,32,256,zoh,"));
        assert!(lines[1].ends_with(','));
        assert_eq!(csv, to_csv(&run_table(&config).unwrap(), false));
        assert!(!to_csv(&results, true)
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(','));
    }
}
