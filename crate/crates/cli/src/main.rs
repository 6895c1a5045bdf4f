use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use curvaudit::digest::to_json_sig17_pretty;
use curvaudit::experiment::{
    fit_bound, run_experiment, sweep_csv, sweep_dataset_size, write_atomic, ExperimentManifest, RunOptions, Selection,
    Stage,
};
use curvaudit::theory::{bound_report, BoundInputs};

/// Membership-inference auditing with input-loss curvature.
#[derive(Parser)]
#[command(name = "curvaudit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; overrides the manifest's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the manifest's `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    Random,
    LowestCurvature,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the dataset and the target member split.
    GenData(RunArgs),
    /// Train the target model and the shadow ensemble.
    TrainShadows(RunArgs),
    /// Compute per-(model, example) curvature, loss, logit and entropy.
    Score(RunArgs),
    /// Compute attack scores for every manifest method.
    Attack(RunArgs),
    /// Run every stage and write metrics.json and ROC curves.
    Evaluate(RunArgs),
    /// Attack performance as a function of target training-set size.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated member counts.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, value_enum, default_value = "random")]
        selection: SelectionArg,
        /// Comma-separated master seeds; defaults to the manifest's.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Fit `s (L (1 - e^-eps) + c)^2` to an `epsilon,value` CSV.
    FitBound {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the privacy-curvature bounds for the given constants.
    Theory {
        #[arg(long)]
        epsilon: f64,
        /// Training-set size.
        #[arg(long)]
        m: u64,
        /// Loss bound; defaults to the clamped cross-entropy ceiling.
        #[arg(long)]
        loss_bound: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.0)]
        delta_bias: f64,
        #[arg(long, default_value_t = 0.0)]
        rho_term: f64,
        #[arg(long, default_value_t = 0.05)]
        delta_conf: f64,
    },
}

fn load_manifest(args: &RunArgs) -> Result<(ExperimentManifest, RunOptions)> {
    let mut manifest = ExperimentManifest::load(&args.manifest)
        .with_context(|| format!("loading manifest {}", args.manifest.display()))?;
    if let Some(seed) = args.seed {
        manifest.master_seed = seed;
    }
    let out = match (&args.out, &manifest.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => bail!("no output directory: pass --out or set output_dir in the manifest"),
    };
    let mut opts = RunOptions::new(out);
    opts.jobs = args.jobs;
    Ok((manifest, opts))
}

fn run_until(args: &RunArgs, until: Stage) -> Result<()> {
    let (manifest, mut opts) = load_manifest(args)?;
    opts.until = until;
    let out = run_experiment(&manifest, &opts)?;
    if let Some(metrics) = out.metrics {
        for r in &metrics.methods {
            println!("{:<16} auroc={:.4} bal_acc={:.4}", r.method, r.auroc, r.bal_acc);
        }
    }
    eprintln!("stage `{}` complete in {}", until.as_str(), opts.out_dir.display());
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let bytes = to_json_sig17_pretty(value)?;
    print!("{}", String::from_utf8(bytes)?);
    Ok(())
}

fn sweep(run: &RunArgs, sizes: &[usize], selection: SelectionArg, seeds: &[u64]) -> Result<()> {
    let (manifest, opts) = load_manifest(run)?;
    let selection = match selection {
        SelectionArg::Random => Selection::Random,
        SelectionArg::LowestCurvature => Selection::LowestCurvature,
    };
    let seeds = if seeds.is_empty() {
        vec![manifest.master_seed]
    } else {
        seeds.to_vec()
    };
    let mut rows = Vec::new();
    for seed in seeds {
        let m = ExperimentManifest {
            master_seed: seed,
            ..manifest.clone()
        };
        let sub = RunOptions {
            out_dir: opts.out_dir.join(format!("seed_{seed}")),
            ..opts.clone()
        };
        rows.extend(sweep_dataset_size(&m, sizes, selection, &sub)?);
    }
    let csv = sweep_csv(&rows);
    write_atomic(&opts.out_dir.join("sweep.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn fit(points: &Path, out: &Path) -> Result<()> {
    let r = fit_bound(points, out)?;
    print_json(&r)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => run_until(a, Stage::Data),
        Command::TrainShadows(a) => run_until(a, Stage::Shadows),
        Command::Score(a) => run_until(a, Stage::Score),
        Command::Attack(a) => run_until(a, Stage::Attack),
        Command::Evaluate(a) => run_until(a, Stage::Evaluate),
        Command::Sweep {
            run,
            sizes,
            selection,
            seeds,
        } => sweep(run, sizes, *selection, seeds),
        Command::FitBound { points, out } => fit(points, out),
        Command::Theory {
            epsilon,
            m,
            loss_bound,
            sigma,
            gamma,
            delta_bias,
            rho_term,
            delta_conf,
        } => {
            let mut b = BoundInputs {
                epsilon: *epsilon,
                m: *m,
                sigma: *sigma,
                gamma: *gamma,
                delta_bias: *delta_bias,
                rho_term: *rho_term,
                delta_conf: *delta_conf,
                ..BoundInputs::default()
            };
            if let Some(l) = loss_bound {
                b.loss_bound = *l;
            }
            bound_report(&b).map_err(Into::into).and_then(|r| print_json(&r))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
