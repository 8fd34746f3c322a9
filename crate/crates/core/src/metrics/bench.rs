//! Wall-clock throughput harness.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;

pub const MIN_MEASURED_ITERS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch: 1,
            warmup: 2,
            iters: MIN_MEASURED_ITERS,
            threads: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean: f32,
    pub p50: f32,
    pub p95: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchResult {
    pub batch_size: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub threads: usize,
    /// From the median batch latency, which is less sensitive to
    /// scheduler noise than the mean.
    pub images_per_second: f32,
    pub latency_ms_per_batch: LatencyStats,
}

impl BenchResult {
    pub fn to_text(&self) -> String {
        let l = &self.latency_ms_per_batch;
        format!(
            "batch={} threads={} warmup={} iters={} images/s={:.2} latency_ms mean={:.3} p50={:.3} p95={:.3}",
            self.batch_size,
            self.threads,
            self.warmup_iters,
            self.measured_iters,
            self.images_per_second,
            l.mean,
            l.p50,
            l.p95
        )
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f32], q: f32) -> f32 {
    assert!(!sorted.is_empty());
    let rank = ((q / 100.0) * sorted.len() as f32).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(cfg: &BenchConfig, threads: usize, mut ms: Vec<f32>) -> BenchResult {
    ms.sort_by(f32::total_cmp);
    let mean = ms.iter().sum::<f32>() / ms.len() as f32;
    let p50 = percentile(&ms, 50.0);
    BenchResult {
        batch_size: cfg.batch,
        warmup_iters: cfg.warmup,
        measured_iters: ms.len(),
        threads,
        images_per_second: cfg.batch as f32 * 1000.0 / p50,
        latency_ms_per_batch: LatencyStats {
            mean,
            p50,
            p95: percentile(&ms, 95.0),
        },
    }
}

fn validate(cfg: &BenchConfig) -> Result<()> {
    if cfg.iters < MIN_MEASURED_ITERS {
        return Err(Error::Bench(format!(
            "measured iterations must be >= {MIN_MEASURED_ITERS}, got {}",
            cfg.iters
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::Bench("batch must be >= 1".into()));
    }
    Ok(())
}


fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Bench(e.to_string()))
}

fn time_ms(f: impl FnOnce() -> Result<()>) -> Result<f32> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f32() * 1000.0)
}

pub fn bench(model: &Model, cfg: &BenchConfig) -> Result<BenchResult> {
    validate(cfg)?;
    let x = model.random_input(cfg.batch, cfg.seed)?;
    let pool = pool(cfg.threads)?;
    let threads = pool.current_num_threads();
    let ms = pool.install(|| -> Result<Vec<f32>> {
        for _ in 0..cfg.warmup {
            model.forward(&x)?;
        }
        (0..cfg.iters)
            .map(|_| time_ms(|| model.forward(&x).map(drop)))
            .collect()
    })?;
    Ok(summarize(cfg, threads, ms))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairResult {
    pub a: BenchResult,
    pub b: BenchResult,
    /// Median over iterations of `time(a) / time(b)`; above 1 means `b` is
    /// faster. Each ratio compares two runs taken back to back.
    pub speedup: f32,
}

/// Benchmarks two models on the same input with alternating iterations so
/// that slow drifts in host load affect both equally.
pub fn bench_pair(a: &Model, b: &Model, cfg: &BenchConfig) -> Result<PairResult> {
    validate(cfg)?;
    if a.input_shape(1) != b.input_shape(1) {
        return Err(Error::Bench("models take different input shapes".into()));
    }
    let x = a.random_input(cfg.batch, cfg.seed)?;
    let pool = pool(cfg.threads)?;
    let threads = pool.current_num_threads();
    let (ma, mb) = pool.install(|| -> Result<(Vec<f32>, Vec<f32>)> {
        for _ in 0..cfg.warmup {
            a.forward(&x)?;
            b.forward(&x)?;
        }
        let (mut ma, mut mb) = (Vec::new(), Vec::new());
        for i in 0..cfg.iters {
            // alternate which model goes first
            if i % 2 == 0 {
                ma.push(time_ms(|| a.forward(&x).map(drop))?);
                mb.push(time_ms(|| b.forward(&x).map(drop))?);
            } else {
                mb.push(time_ms(|| b.forward(&x).map(drop))?);
                ma.push(time_ms(|| a.forward(&x).map(drop))?);
            }
        }
        Ok((ma, mb))
    })?;
    let mut ratios: Vec<f32> = ma.iter().zip(&mb).map(|(p, q)| p / q).collect();
    ratios.sort_by(f32::total_cmp);
    Ok(PairResult {
        speedup: percentile(&ratios, 50.0),
        a: summarize(cfg, threads, ma),
        b: summarize(cfg, threads, mb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn too_few_iterations_rejected() {
        let m = Model::zeros(ModelConfig::micro()).unwrap();
        let cfg = BenchConfig { iters: 0, ..Default::default() };
        let err = bench(&m, &cfg).unwrap_err().to_string();
        assert!(err.contains(">= 10"), "{err}");
    }

    #[test]
    fn micro_bench_reports_stats() {
        let m = Model::zeros(ModelConfig::micro()).unwrap();
        let r = bench(&m, &BenchConfig { warmup: 1, threads: 1, ..Default::default() }).unwrap();
        assert_eq!(r.measured_iters, 10);
        let l = r.latency_ms_per_batch;
        assert!(l.p50 <= l.p95 && l.p50 > 0.0 && r.images_per_second > 0.0);
    }

    #[test]
    fn percentiles() {
        let v: Vec<f32> = (1..=20).map(|i| i as f32).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
    }
}
