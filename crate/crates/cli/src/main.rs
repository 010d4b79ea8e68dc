use std::collections::BTreeMap;
use std::hash::{BuildHasher, RandomState};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use pview_core::eval::{identity_view, run_experiment, ExperimentConfig, DEFAULT_DENSE_LIMIT};
use pview_core::mechanisms::RandomStream;
use pview_core::{
    build_view, codec, error_bounds, BisectionOptions, CountTensor, Error, Hyperparams, LoadOptions, PView,
    RangeQuery, Schema, Xi,
};
use pview_service::ServiceConfig;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "pview", version, about = "Differentially private views of multi-dimensional count data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a private view from a CSV file.
    Build(BuildArgs),
    /// Answer a range count query from a view.
    Query(QueryArgs),
    /// Run an experiment described by a JSON config.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve a view over HTTP.
    Serve(ServeArgs),
    /// Summarize a view file.
    Inspect {
        #[arg(long)]
        view: PathBuf,
    },
}

#[derive(clap::Args)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.9)]
    ratio: f64,
    #[arg(long, default_value_t = 1.6)]
    alpha: f64,
    #[arg(long, default_value_t = 1.2)]
    beta: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Generated and printed when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Clamp out-of-range numeric values into the edge bins.
    #[arg(long)]
    clamp: bool,
    /// Build the per-cell Laplace baseline instead.
    #[arg(long)]
    identity: bool,
    /// Build subtrees in parallel. Output is identical either way.
    #[arg(long)]
    parallel: bool,
}

#[derive(clap::Args)]
struct QueryArgs {
    #[arg(long)]
    view: PathBuf,
    /// Comma-separated `attr=lo:hi` (raw values) or `attr@lo:hi` (bin indices).
    #[arg(long, default_value = "")]
    range: String,
    #[arg(long, default_value_t = 0.05)]
    mu: f64,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long)]
    view: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Allowed CORS origin; repeatable. Any origin when omitted.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
}

enum Failure {
    Usage(String),
    Internal(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) | Error::InvalidRange { .. } | Error::ReversedRange { .. } | Error::Config(_) => EXIT_USAGE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        Error::NoCandidates | Error::NanQuality { .. } | Error::InvalidSplit { .. } => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(args) => cmd_build(&args),
        Command::Query(args) => cmd_query(&args),
        Command::Eval { config } => cmd_eval(&config),
        Command::Serve(args) => cmd_serve(&args),
        Command::Inspect { view } => cmd_inspect(&view),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INTERNAL)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} file {} not found", path.display())))
    }
}

fn cmd_build(args: &BuildArgs) -> Result<(), Failure> {
    let hp = Hyperparams {
        epsilon_b: args.epsilon,
        ratio: args.ratio,
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
    };
    if args.identity {
        if !(args.epsilon.is_finite() && args.epsilon > 0.0) {
            return Err(Failure::Usage(format!("epsilon must be positive, got {}", args.epsilon)));
        }
    } else {
        hp.validate()?;
    }
    if !args.delimiter.is_ascii() {
        return Err(Failure::Usage(format!("delimiter {:?} is not ASCII", args.delimiter)));
    }
    require_file(&args.schema, "schema")?;
    require_file(&args.input, "input")?;

    let seed = args.seed.unwrap_or_else(|| {
        let seed = RandomState::new().hash_one(Instant::now());
        println!("seed: {seed} (generated)");
        seed
    });
    let schema = Schema::from_path(&args.schema)?;
    let opts = LoadOptions {
        delimiter: args.delimiter as u8,
        clamp: args.clamp,
    };
    let tensor = CountTensor::load_csv_path(&args.input, schema, &opts)?;

    let start = Instant::now();
    let (view, budget) = if args.identity {
        let view = identity_view(&tensor, args.epsilon, &RandomStream::new(seed), false, DEFAULT_DENSE_LIMIT)?;
        (view, format!("epsilon_p={} (per-cell Laplace)", args.epsilon))
    } else {
        let options = BisectionOptions {
            parallel: args.parallel,
            ..Default::default()
        };
        let build = build_view(&tensor, &hp, seed, &options)?;
        (build.view, build.budget.to_string())
    };
    let elapsed = start.elapsed();
    codec::write_view(&args.out, &view)?;

    println!("records: {}", tensor.total_count());
    println!("blocks (m): {}", view.block_count());
    println!("build time: {:.3}s", elapsed.as_secs_f64());
    println!("budget: {budget}");
    println!("seed: {seed}");
    println!("wrote {}", args.out.display());
    Ok(())
}

fn load_view(path: &Path) -> Result<PView, Failure> {
    require_file(path, "view")?;
    Ok(codec::read_view(path)?)
}

fn cmd_query(args: &QueryArgs) -> Result<(), Failure> {
    if !(args.mu > 0.0 && args.mu < 1.0) {
        return Err(Failure::Usage(format!("mu must lie in (0, 1), got {}", args.mu)));
    }
    let view = load_view(&args.view)?;
    let q = RangeQuery::parse(&view.schema, &args.range)?;
    let answer = view.answer(&q)?;
    let bound = error_bounds(&view, &q, args.mu, &Xi::default())?;
    println!("answer: {answer:.3}");
    println!("blocks touched: {}", view.blocks_touched(&q));
    println!(
        "{} confidence: error within [{:.3}, {:.3}]",
        confidence_label(args.mu),
        bound.theta_min,
        bound.theta_max
    );
    Ok(())
}

fn confidence_label(mu: f64) -> String {
    let pct = format!("{:.6}", (1.0 - mu) * 100.0);
    format!("{}%", pct.trim_end_matches('0').trim_end_matches('.'))
}

fn num(x: f64) -> String {
    let s = format!("{x:.12}");
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

fn cmd_eval(config: &Path) -> Result<(), Failure> {
    require_file(config, "config")?;
    let config = ExperimentConfig::from_path(config)?;
    let report = run_experiment(&config)?;
    print!("{}", report.render_table());
    if let Some(out) = &config.output {
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_serve(args: &ServeArgs) -> Result<(), Failure> {
    let view = load_view(&args.view)?;
    let config = ServiceConfig {
        cors_origins: args.cors_origins.clone(),
    };
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new().map_err(Error::from)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(Error::from)?;
        println!("serving {} blocks on http://{}", view.block_count(), listener.local_addr().map_err(Error::from)?);
        pview_service::serve_on(listener, view, &config)
            .await
            .map_err(|e| Failure::Internal(format!("server stopped: {e}")))
    })
}

fn cmd_inspect(path: &Path) -> Result<(), Failure> {
    let view = load_view(path)?;
    let bytes = std::fs::metadata(path).map_err(Error::from)?.len();
    println!("kind: {:?}", view.kind);
    println!("size on disk: {bytes} bytes");
    println!("blocks (m): {}", view.block_count());
    match view.schema.total_domain() {
        Some(n) => println!("domain cells: {n}"),
        None => println!("domain cells: 2^{:.1}", view.schema.total_domain_log2()),
    }
    if let Some(seed) = view.meta.seed {
        println!("seed: {seed}");
    }
    println!("attributes:");
    for a in &view.schema.attributes {
        println!("  {} ({} bins)", a.name, a.domain_size());
    }
    let p = &view.params;
    println!(
        "params: epsilon_r={} epsilon_p={} theta={} kappa={} epsilon_cut={} lambda={} delta={}",
        num(p.epsilon_r),
        num(p.epsilon_p),
        num(p.theta),
        num(p.kappa),
        num(p.epsilon_cut),
        num(p.lambda),
        num(p.delta)
    );
    let mut depths: BTreeMap<u32, usize> = BTreeMap::new();
    for b in &view.blocks {
        *depths.entry(b.depth).or_default() += 1;
    }
    println!("depth histogram:");
    for (depth, count) in depths {
        println!("  {depth:>4} {count}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_labels() {
        assert_eq!(confidence_label(0.05), "95%");
        assert_eq!(confidence_label(0.01), "99%");
        assert_eq!(confidence_label(0.125), "87.5%");
        assert_eq!(num(0.09999999999999998), "0.1");
        assert_eq!(num(4.6882687147302216), "4.68826871473");
    }

    #[test]
    fn exit_classes() {
        assert_eq!(exit_code(&Error::Parameter("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Malformed("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::NoCandidates), EXIT_INTERNAL);
        let nf = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&Error::Io(nf)), EXIT_USAGE);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
