use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::json;

use mobilemamba::fusion::fuse_model;
use mobilemamba::metrics::{bench, bench_pair, model_costs, BenchConfig};
use mobilemamba::model::{normalize_image, Model, ModelConfig};
use mobilemamba::init::InitOptions;
use mobilemamba::verify::{self, Fault, VerifyOptions};
use mobilemamba::weights::{load_weights, save_weights};
use mobilemamba::{Error, Tensor};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const TOP_K: usize = 5;

#[derive(Parser, Debug)]
#[command(name = "mobilemamba", version, about = "MobileMamba CPU inference, cost accounting and self-checks")]
struct Cli {
    /// Worker threads (capped by MM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// T2, T4, S6, B1, B2, B4 or micro.
    #[arg(long, default_value = "T2")]
    variant: String,
    #[arg(long)]
    resolution: Option<usize>,
    /// Weight file to load instead of seeded random weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Use b̄ = Δ·B in the scan.
    #[arg(long)]
    euler_b: bool,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    wt_enabled: bool,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    symmetric_lp: bool,
    /// Fold batch norm before running.
    #[arg(long)]
    fuse: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a variant and print its stage shapes and sizes.
    Build {
        variant: String,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        euler_b: bool,
        #[arg(long, action = ArgAction::Set, default_value_t = true)]
        wt_enabled: bool,
        #[arg(long, action = ArgAction::Set, default_value_t = true)]
        symmetric_lp: bool,
    },
    /// Classify raw planar f32 images (3×H×W, little-endian, values in [0, 1]).
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        /// Seeded random input when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Per-layer MAC report.
    Flops {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        csv: bool,
    },
    /// Parameter counts by stage and branch.
    Params {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        csv: bool,
    },
    /// Throughput benchmark.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Benchmark unfused and fused side by side.
        #[arg(long)]
        compare: bool,
    },
    /// Fold batch norm and report the result.
    Fuse {
        #[command(flatten)]
        model: ModelArgs,
        /// Probe batch size for the divergence measurement.
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
    /// Run the invariant suite.
    Verify {
        /// Fusion check on every preset.
        #[arg(long)]
        full: bool,
        /// Negative control: perturb ā in the recurrent scan.
        #[arg(long, value_parser = ["perturb-abar"])]
        inject_fault: Option<String>,
    },
    /// Write the model's weights to a file.
    ExportWeights {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Load a weight file into a variant and check that it runs.
    ImportWeights {
        #[command(flatten)]
        model: ModelArgs,
        path: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Verify(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownVariant { .. } => CliError::Usage(e.to_string()),
            Error::FusionDivergence { .. } => CliError::Verify(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn config_for(variant: &str, resolution: Option<usize>, euler_b: bool, wt: bool, sym: bool) -> CliResult<ModelConfig> {
    let mut cfg = if variant == "micro" { ModelConfig::micro() } else { ModelConfig::preset(variant)? };
    if let Some(r) = resolution {
        cfg = cfg.with_resolution(r);
    }
    cfg.euler_b = euler_b;
    cfg.wt_enabled = wt;
    cfg.symmetric_lp = sym;
    cfg.validate()?;
    Ok(cfg)
}

impl ModelArgs {
    fn config(&self) -> CliResult<ModelConfig> {
        config_for(&self.variant, self.resolution, self.euler_b, self.wt_enabled, self.symmetric_lp)
    }

    /// Seeded or loaded weights, unfused.
    fn load(&self, seed: u64) -> CliResult<Model> {
        let cfg = self.config()?;
        let mut m = match &self.weights {
            Some(path) => {
                let mut m = Model::zeros(cfg)?;
                load_weights(path, &mut m)?;
                m
            }
            None => Model::build(cfg, &InitOptions::new(seed))?,
        };
        if self.fuse {
            let probe = m.random_input(1, seed)?;
            m = fuse_model(&m, &probe)?.0;
        }
        Ok(m)
    }
}

/// Applies `--threads` and `MM_THREADS` to the global pool.
fn resolve_threads(flag: Option<usize>) -> CliResult<usize> {
    let mut n = flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Ok(v) = std::env::var("MM_THREADS") {
        let cap: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("MM_THREADS={v:?} is not a positive integer")))?;
        if cap == 0 {
            return Err(CliError::Usage("MM_THREADS must be at least 1".into()));
        }
        n = n.min(cap);
    }
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    // A second call fails harmlessly if a pool already exists.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(n)
}

fn read_images(path: &Path, resolution: usize) -> CliResult<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let per_image = 3 * resolution * resolution * 4;
    if bytes.is_empty() || bytes.len() % per_image != 0 {
        return Err(CliError::Data(format!(
            "{}: {} bytes is not a whole number of 3x{resolution}x{resolution} f32 images ({per_image} bytes each)",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let n = bytes.len() / per_image;
    let x = Tensor::new([n, 3, resolution, resolution], data)?;
    Ok(normalize_image(&x)?)
}

fn top_k(logits: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = resolve_threads(cli.threads)?;
    let (seed, as_json) = (cli.seed, cli.json);
    match cli.cmd {
        Command::Build {
            variant,
            resolution,
            euler_b,
            wt_enabled,
            symmetric_lp,
        } => {
            let cfg = config_for(&variant, resolution, euler_b, wt_enabled, symmetric_lp)?;
            let m = Model::zeros(cfg)?;
            let shapes = m.group_shapes()?;
            if as_json {
                print_json(&json!({
                    "config": m.config,
                    "groups": shapes,
                    "layers": m.layer_count(),
                    "batchnorm_layers": m.batchnorm_count(),
                    "params": m.trainable_params(),
                }));
            } else {
                println!("variant: {} resolution: {}", m.config.name, m.config.resolution);
                for (g, s) in &shapes {
                    println!("  {g:<12} {}x{}x{}", s[1], s[2], s[3]);
                }
                println!("layers: {}", m.layer_count());
                println!("batchnorm layers: {}", m.batchnorm_count());
                println!("params: {}", m.trainable_params());
            }
        }
        Command::Infer { model, input, batch } => {
            if batch == 0 {
                return Err(CliError::Usage("--batch must be at least 1".into()));
            }
            let m = model.load(seed)?;
            let x = match &input {
                Some(p) => read_images(p, m.config.resolution)?,
                None => m.random_input(batch, seed)?,
            };
            let logits = m.forward(&x)?;
            let items: Vec<_> = (0..logits.rows())
                .map(|i| {
                    let row = logits.row(i);
                    let top: Vec<_> = top_k(row, TOP_K).into_iter().map(|c| (c, row[c])).collect();
                    (row.to_vec(), top)
                })
                .collect();
            if as_json {
                let v: Vec<_> = items
                    .iter()
                    .map(|(l, t)| json!({"logits": l, "top5": t.iter().map(|(c, _)| c).collect::<Vec<_>>()}))
                    .collect();
                print_json(&v);
            } else {
                for (i, (row, top)) in items.iter().enumerate() {
                    let head: Vec<String> = row.iter().take(8).map(|v| format!("{v:.6}")).collect();
                    println!("image {i}: logits[0..{}] = [{}]", head.len(), head.join(", "));
                    for (rank, (c, v)) in top.iter().enumerate() {
                        println!("  top{} class {c} logit {v:.6}", rank + 1);
                    }
                }
            }
        }
        Command::Flops { model, csv } => {
            let r = model_costs(&model.load(seed)?)?;
            if as_json {
                print_json(&json!({"report": r, "totals": r.totals()}));
            } else if csv {
                print!("{}", r.to_csv()?);
            } else {
                print!("{}", r.to_table());
            }
        }
        Command::Params { model, csv } => {
            let m = model.load(seed)?;
            let r = model_costs(&m)?;
            let stage: Vec<(String, u64)> = r.by_stage().into_iter().map(|(g, t)| (g, t.params)).collect();
            let branch: Vec<(String, u64)> = r.by_branch().into_iter().map(|(g, t)| (g, t.params)).collect();
            let total = r.totals().params;
            if as_json {
                print_json(&json!({"model": r.model, "total": total, "by_stage": stage, "by_branch": branch}));
            } else if csv {
                println!("group,kind,params");
                stage.iter().for_each(|(g, p)| println!("{g},stage,{p}"));
                branch.iter().for_each(|(g, p)| println!("{g},branch,{p}"));
                println!("total,,{total}");
            } else {
                println!("{}: {total} params ({:.3} M)", r.model, total as f64 / 1e6);
                println!("by stage");
                stage.iter().for_each(|(g, p)| println!("  {g:<12} {p:>10}"));
                println!("by branch");
                branch.iter().for_each(|(g, p)| println!("  {g:<12} {p:>10}"));
            }
        }
        Command::Bench {
            model,
            batch,
            warmup,
            iters,
            compare,
        } => {
            let cfg = BenchConfig {
                batch,
                warmup,
                iters,
                threads,
                seed,
            };
            if compare {
                let base = ModelArgs { fuse: false, ..model.clone() }.load(seed)?;
                let probe = base.random_input(1, seed)?;
                let (fused, _) = fuse_model(&base, &probe)?;
                let r = bench_pair(&base, &fused, &cfg)?;
                if as_json {
                    print_json(&json!({"unfused": r.a, "fused": r.b, "speedup": r.speedup}));
                } else {
                    println!("unfused: {}", r.a.to_text());
                    println!("fused:   {}", r.b.to_text());
                    println!("speedup: {:.3}x", r.speedup);
                }
            } else {
                let r = bench(&model.load(seed)?, &cfg)?;
                if as_json {
                    print_json(&r);
                } else {
                    println!("{}", r.to_text());
                }
            }
        }
        Command::Fuse { model, batch } => {
            if batch == 0 {
                return Err(CliError::Usage("--batch must be at least 1".into()));
            }
            let m = ModelArgs { fuse: false, ..model }.load(seed)?;
            let probe = m.random_input(batch, seed)?;
            let (_, report) = fuse_model(&m, &probe)?;
            if as_json {
                print_json(&report);
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Verify { full, inject_fault } => {
            let opts = VerifyOptions {
                seed,
                full,
                fault: inject_fault.map(|_| Fault::PerturbAbar),
            };
            let report = verify::run(&opts)?;
            if as_json {
                print_json(&report);
            } else {
                print!("{}", report.to_text());
            }
            if !report.passed {
                return Err(CliError::Verify("one or more checks failed".into()));
            }
        }
        Command::ExportWeights { model, out } => {
            let m = model.load(seed)?;
            save_weights(&m, &out)?;
            eprintln!("wrote {} params to {}", m.trainable_params(), out.display());
        }
        Command::ImportWeights { model, path } => {
            let m = ModelArgs {
                weights: Some(path.clone()),
                ..model
            }
            .load(seed)?;
            let x = m.random_input(1, seed)?;
            let logits = m.forward(&x)?;
            if !logits.data().iter().all(|v| v.is_finite()) {
                return Err(CliError::Data("loaded weights produce non-finite logits".into()));
            }
            println!("loaded {} into {}: {} params, forward ok", path.display(), m.config.name, m.trainable_params());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(CliError::Verify(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
