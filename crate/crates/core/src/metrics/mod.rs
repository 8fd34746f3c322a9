//! Static cost accounting and the throughput benchmark.

pub mod bench;
pub mod cost;

pub use bench::{bench, bench_pair, BenchConfig, BenchResult, LatencyStats, PairResult};
pub use cost::{count_costs, model_costs, reference_costs, Branch, CostReport, CostRow, CostTotals};
