//! Wall-clock cost of one forward and backward pass through a single layer,
//! at full resolution and after coarsening.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::time::Instant;

use crate::model::{ClusterMode, Mode, ModelConfig, ModelError, ThcModel};
use crate::objective::cross_entropy;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    /// First layer: `n` nodes pooled into `k` clusters.
    pub layer1_ms: f64,
    /// A layer operating on the `k` clusters.
    pub clustered_layer2_ms: f64,
    /// A layer operating on all `n` nodes without pooling.
    pub unclustered_layer2_ms: f64,
    /// `unclustered_layer2_ms / clustered_layer2_ms`.
    pub speedup: f64,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub heads: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            repeats: 5,
            seed: 0,
        }
    }
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.random_range(-1.0..1.0);
            t.set(i, j, v);
            t.set(j, i, v);
        }
    }
    t
}

fn layer_model(input: usize, output: Option<usize>, d: usize, cfg: &BenchConfig) -> Result<ThcModel, ModelError> {
    let (schedule, mode) = match output {
        Some(k) if k < input => (vec![k], ClusterMode::Full),
        _ => (vec![input.saturating_sub(1).max(1)], ClusterMode::NoCluster),
    };
    ThcModel::new(
        ModelConfig {
            input_size: input,
            schedule,
            heads: cfg.heads,
            key_dim: d,
            value_dim: d,
            readout_hidden: 32,
            classes: 2,
            cluster_mode: mode,
            center_input: false,
        },
        cfg.seed,
    )
}

/// Median milliseconds of a training-mode forward plus backward pass.
pub fn time_layer(model: &ThcModel, x: &Tensor, repeats: usize, rng: &mut ChaCha8Rng) -> Result<f64, ModelError> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let tape = Tape::new();
        let b = model.bind(&tape);
        let out = model.forward_batch(&b, &[tape.constant(x.clone())], Mode::Train, rng)?;
        let loss = cross_entropy(out.logits[0], 0)?;
        tape.backward(loss)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// Times the three layer variants for one `(n, k, d)` configuration.
/// With `k >= n` the clustered layer runs without pooling.
pub fn bench_layer(n: usize, k: usize, d: usize, cfg: &BenchConfig) -> Result<BenchRow, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x_full = random_symmetric(n, &mut rng);
    let k = k.min(n);
    let x_small = random_symmetric(k, &mut rng);
    let first = layer_model(n, Some(k), d, cfg)?;
    let second_k = if k > 1 { Some(k.div_ceil(2)) } else { None };
    let clustered = layer_model(k, second_k.filter(|_| k < n), d, cfg)?;
    let unclustered = layer_model(n, None, d, cfg)?;
    let layer1_ms = time_layer(&first, &x_full, cfg.repeats, &mut rng)?;
    let clustered_layer2_ms = time_layer(&clustered, &x_small, cfg.repeats, &mut rng)?;
    let unclustered_layer2_ms = time_layer(&unclustered, &x_full, cfg.repeats, &mut rng)?;
    Ok(BenchRow {
        n,
        k,
        d,
        layer1_ms,
        clustered_layer2_ms,
        unclustered_layer2_ms,
        speedup: unclustered_layer2_ms / clustered_layer2_ms,
    })
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
