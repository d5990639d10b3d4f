use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use netclt_core::asymptotics::{limiting_variance_mc, limiting_variance_quadrature};
use netclt_core::cutnorm::{
    cut_norm, graph_kernel_distance, sort_by_latents, CutNormMethod, DEFAULT_RESTARTS,
};
use netclt_core::graphs::{check_graph_conditions, DEFAULT_C_BOUND};
use netclt_core::harness::{
    deterministic_experiment, run_coupling, run_replications, sampled_experiment, to_json,
};
use netclt_core::{Error, ExperimentConfig, ExperimentDesign, Permutation, SquareMatrix};

#[derive(Parser)]
#[command(
    name = "netclt",
    version,
    about = "Simulate Horvitz-Thompson estimation under anonymous network interference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replications and write results.csv and summary.json.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Output directory.
        #[arg(long, default_value = "netclt-out")]
        out: PathBuf,
        /// Skip the limiting-variance reference values.
        #[arg(long)]
        no_variance: bool,
    },
    /// Limiting variance of the configured kernel and profile.
    Variance {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 2048)]
        quadrature_points: usize,
        /// Midpoint nodes in `u` for the deterministic reference.
        #[arg(long, default_value_t = 4096)]
        u_points: usize,
        /// Write the JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut norm of a matrix, or the cut distance between the configured graph and kernel.
    Cutnorm {
        /// JSON file holding a square matrix as a list of rows.
        #[arg(long, conflicts_with_all = ["config", "preset"])]
        matrix: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kernel, graph, scale and outcome-class diagnostics for the configured experiment.
    Check {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 512)]
        grid_points: usize,
        #[arg(long, default_value_t = DEFAULT_C_BOUND)]
        c_bound: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coupling discrepancies between the deterministic and kernel-sampled experiments.
    Couple {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 200)]
        draws: usize,
        /// Also compute the cut distance of every coupled pair.
        #[arg(long, value_enum)]
        cut: Option<MethodArg>,
        #[arg(long, default_value = "netclt-out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Source {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset: paper_sec4_dense or paper_sec4_sparse.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    pi: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads.
    #[arg(long, env = "NETCLT_PARALLELISM")]
    parallelism: Option<usize>,
    #[arg(long, value_enum)]
    design: Option<DesignArg>,
    /// Histogram bins.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum DesignArg {
    Deterministic,
    FixedSample,
    Superpopulation,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Auto,
    Exact,
    Heuristic,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate {
            source,
            out,
            no_variance,
        } => {
            let mut config = load_config(&source)?;
            if no_variance {
                config.variance.enabled = false;
            }
            let result = run_replications(&config)?;
            let (csv, json) = result.write_outputs(&out)?;
            print!("{}", to_json(&result.summary())?);
            eprintln!(
                "wrote {} and {} in {:.2}s",
                csv.display(),
                json.display(),
                result.wall_time.as_secs_f64()
            );
            Ok(())
        }
        Command::Variance {
            source,
            samples,
            quadrature_points,
            u_points,
            out,
        } => {
            let config = load_config(&source)?;
            let mut rng = netclt_core::rng::substream(
                config.master_seed,
                0,
                netclt_core::rng::Purpose::MonteCarlo,
            );
            let mc = limiting_variance_mc(
                &config.kernel,
                &config.profile,
                config.pi,
                samples,
                quadrature_points,
                &mut rng,
            )?;
            let quadrature = limiting_variance_quadrature(
                &config.kernel,
                &config.profile,
                config.pi,
                u_points,
                quadrature_points,
            )?;
            #[derive(Serialize)]
            struct Output {
                sigma2_mc: f64,
                mc_standard_error: f64,
                mc_samples: usize,
                quadrature_points: usize,
                skipped_nodes: usize,
                sigma2_quadrature: f64,
                u_points: usize,
            }
            emit(
                &Output {
                    sigma2_mc: mc.sigma2,
                    mc_standard_error: mc.mc_standard_error,
                    mc_samples: mc.mc_samples,
                    quadrature_points,
                    skipped_nodes: mc.skipped_nodes,
                    sigma2_quadrature: quadrature,
                    u_points,
                },
                out.as_deref(),
            )
        }
        Command::Cutnorm {
            matrix,
            source,
            method,
            restarts,
            out,
        } => match matrix {
            Some(path) => {
                let text = read(&path)?;
                let m: SquareMatrix = parse_json(&text, &path)?;
                let method = cut_method(method, m.n(), restarts, 0);
                emit(&cut_norm(&m, &method)?, out.as_deref())
            }
            None => {
                let config = load_config(&source)?;
                let (graph, perm) = match config.design {
                    ExperimentDesign::Deterministic => (
                        deterministic_experiment(&config)?.0,
                        Permutation::identity(config.n),
                    ),
                    _ => {
                        let (latents, graph, _) = sampled_experiment(&config, 0)?;
                        (graph, sort_by_latents(&latents))
                    }
                };
                let method = cut_method(method, config.n, restarts, config.master_seed);
                emit(
                    &graph_kernel_distance(&graph, config.rho(), &config.kernel, &perm, &method)?,
                    out.as_deref(),
                )
            }
        },
        Command::Check {
            source,
            grid_points,
            c_bound,
            out,
        } => {
            let config = load_config(&source)?;
            let graph = match config.design {
                ExperimentDesign::Deterministic => deterministic_experiment(&config)?.0,
                _ => sampled_experiment(&config, 0)?.1,
            };
            #[derive(Serialize)]
            struct Output {
                rho: f64,
                scale_conditions: bool,
                kernel: netclt_core::kernels::KernelConditionReport,
                graph: netclt_core::graphs::GraphConditionReport,
                outcome_class_bound: f64,
            }
            emit(
                &Output {
                    rho: config.rho(),
                    scale_conditions: config.scale.satisfies_scale_conditions(),
                    kernel: config.kernel.check_conditions(grid_points)?,
                    graph: check_graph_conditions(&graph, config.rho(), c_bound)?,
                    outcome_class_bound: config.profile.class_f_bound(grid_points)?,
                },
                out.as_deref(),
            )
        }
        Command::Couple {
            source,
            draws,
            cut,
            out,
        } => {
            let config = load_config(&source)?;
            let method = cut.map(|m| cut_method(m, config.n, DEFAULT_RESTARTS, config.master_seed));
            let run = run_coupling(&config, draws, method.as_ref())?;
            let (csv, json) = run.write_outputs(&out)?;
            print!("{}", to_json(&run.diagnostics)?);
            eprintln!("wrote {} and {}", csv.display(), json.display());
            Ok(())
        }
    }
}

fn cut_method(arg: MethodArg, n: usize, restarts: usize, seed: u64) -> CutNormMethod {
    match arg {
        MethodArg::Auto => match CutNormMethod::auto(n, seed) {
            CutNormMethod::Heuristic { seed, .. } => CutNormMethod::Heuristic { restarts, seed },
            exact => exact,
        },
        MethodArg::Exact => CutNormMethod::exact(),
        MethodArg::Heuristic => CutNormMethod::Heuristic { restarts, seed },
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = to_json(value)?;
    if let Some(path) = out {
        fs::write(path, &text)
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{text}");
    Ok(())
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> CliResult<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        Failure::Usage(format!(
            "{}:{}:{}: field `{field}`: {inner}",
            path.display(),
            inner.line(),
            inner.column()
        ))
    })
}

fn load_config(source: &Source) -> CliResult<ExperimentConfig> {
    let mut config = match (&source.config, &source.preset) {
        (Some(path), _) => parse_json::<ExperimentConfig>(&read(path)?, path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(Failure::Usage(
                "one of --config or --preset is required".into(),
            ))
        }
    };
    if let Some(n) = source.n {
        config.n = n;
    }
    if let Some(pi) = source.pi {
        config.pi = pi;
    }
    if let Some(seed) = source.seed {
        config.master_seed = seed;
    }
    if let Some(r) = source.replications {
        config.replications = r;
    }
    if let Some(p) = source.parallelism {
        config.parallelism = p;
    }
    if let Some(d) = source.design {
        config.design = match d {
            DesignArg::Deterministic => ExperimentDesign::Deterministic,
            DesignArg::FixedSample => ExperimentDesign::FixedSample,
            DesignArg::Superpopulation => ExperimentDesign::Superpopulation,
        };
    }
    if let Some(b) = source.bins {
        config.bins = b;
    }
    config.validate()?;
    Ok(config)
}
