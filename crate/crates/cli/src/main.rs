//! `graphpd` command-line front end.
//!
//! Failures print a single `error[<code>]: <message>` line on stderr and exit
//! with 2 (usage), 3 (data) or 4 (training).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use graphpd::evaluation::{
    self, make_cv_plans, run_experiment, GridSpec, ModelKind, SweepAxis, PAPER_LAYERS,
    PAPER_NEIGHBORS,
};
use graphpd::graph::{self, DistanceMeasure};
use graphpd::synthetic::{self, SynthConfig};
use graphpd::{Dataset, ErrorClass};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "graphpd",
    version,
    about = "Graph-based PD speech detection toolkit"
)]
struct Cli {
    /// Worker threads for cross-validation jobs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the mutual top-k graph and write it as an edge list.
    BuildGraph {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        distance: Distance,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full cross-validated grid search.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: Model,
        /// Grid overrides; omitted keys keep the defaults for the model.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Summary table; defaults to the report path with a `.summary.tsv` suffix.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Accuracy curve over neighbor count or depth.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        fixed: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Distance {
    Euclidean,
    Cosine,
    Manhattan,
}

impl From<Distance> for DistanceMeasure {
    fn from(d: Distance) -> Self {
        match d {
            Distance::Euclidean => DistanceMeasure::Euclidean,
            Distance::Cosine => DistanceMeasure::Cosine,
            Distance::Manhattan => DistanceMeasure::Manhattan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Fc,
    Knn,
    Gcn,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Fc => ModelKind::Fc,
            Model::Knn => ModelKind::Knn,
            Model::Gcn => ModelKind::Gcn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    K,
    #[value(name = "L")]
    L,
}

/// Optional overrides on top of a model's default grid.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    learning_rates: Option<Vec<f64>>,
    ks: Option<Vec<usize>>,
    layers: Option<Vec<usize>>,
    distances: Option<Vec<DistanceMeasure>>,
    hidden_width: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    weight_decay: Option<f64>,
}

impl GridFile {
    fn apply(self, mut g: GridSpec) -> GridSpec {
        if let Some(v) = self.learning_rates {
            g.learning_rates = v;
        }
        if let Some(v) = self.ks {
            g.ks = v;
        }
        if let Some(v) = self.layers {
            g.layers = v;
        }
        if let Some(v) = self.distances {
            g.distances = v;
        }
        if let Some(v) = self.hidden_width {
            g.hidden_width = v;
        }
        if let Some(v) = self.max_epochs {
            g.max_epochs = v;
        }
        if let Some(v) = self.patience {
            g.patience = v;
        }
        if let Some(v) = self.weight_decay {
            g.weight_decay = v;
        }
        g
    }
}

/// Sweep settings. `fixed` maps each distance to the value of the axis that
/// is not swept; distances left out are skipped. `[grid]` takes the same
/// keys as a `run` grid file.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepFile {
    replicates: usize,
    seed: u64,
    values: Option<Vec<usize>>,
    fixed: Option<BTreeMap<DistanceMeasure, usize>>,
    grid: GridFile,
}

impl Default for SweepFile {
    fn default() -> Self {
        SweepFile {
            replicates: 5,
            seed: 0,
            values: None,
            fixed: None,
            grid: GridFile::default(),
        }
    }
}

enum CliError {
    Core(graphpd::Error),
    Usage { code: &'static str, message: String },
}

impl From<graphpd::Error> for CliError {
    fn from(e: graphpd::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn report(&self) -> (u8, String) {
        let (code, class, message) = match self {
            CliError::Core(e) => (e.code(), e.class(), e.to_string()),
            CliError::Usage { code, message } => (*code, ErrorClass::Usage, message.clone()),
        };
        let status = match class {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Training => 4,
        };
        let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
        (status, format!("error[{code}]: {one_line}"))
    }
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage {
        code: "unreadable-config",
        message: format!("{}: {e}", path.display()),
    })?;
    toml::from_str(&text).map_err(|e| CliError::Usage {
        code: "malformed-config",
        message: format!("{}: {e}", path.display()),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Usage {
        code: "unwritable-output",
        message: format!("{}: {e}", path.display()),
    })
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { config, out } => {
            let cfg: SynthConfig = read_toml(config.as_deref())?;
            synthetic::generate(&cfg)?.write_dir(&out)?;
        }
        Command::BuildGraph {
            data,
            distance,
            k,
            out,
        } => {
            let dataset = Dataset::load_dir(&data)?;
            let kernel = graph::kernel_from_features(&dataset.features(), distance.into())?;
            graph::build_graph(&kernel, k)?.save_edge_list(&out)?;
        }
        Command::Run {
            data,
            model,
            grid,
            replicates,
            seed,
            out,
            summary,
        } => {
            let dataset = Dataset::load_dir(&data)?;
            let overrides: GridFile = read_toml(grid.as_deref())?;
            let spec = overrides.apply(GridSpec::paper(model.into()));
            let plans = make_cv_plans(dataset.speakers(), replicates, seed)?;
            let report = run_experiment(&dataset, &spec, &plans)?;
            let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
            json.push(b'\n');
            write_file(&out, &json)?;
            let mut tsv = Vec::new();
            report
                .write_summary_tsv(&mut tsv)
                .expect("writing to memory");
            let summary = summary.unwrap_or_else(|| out.with_extension("summary.tsv"));
            write_file(&summary, &tsv)?;
        }
        Command::Sweep {
            data,
            axis,
            fixed,
            out,
        } => {
            let dataset = Dataset::load_dir(&data)?;
            let file: SweepFile = read_toml(fixed.as_deref())?;
            let (axis, default_values, default_fixed) = match axis {
                Axis::K => (SweepAxis::K, PAPER_NEIGHBORS.to_vec(), 2),
                Axis::L => (SweepAxis::Layers, PAPER_LAYERS.to_vec(), 5),
            };
            let fixed: Vec<(DistanceMeasure, usize)> = match file.fixed {
                Some(map) => map.into_iter().collect(),
                None => DistanceMeasure::ALL
                    .iter()
                    .map(|&d| (d, default_fixed))
                    .collect(),
            };
            let values = file.values.unwrap_or(default_values);
            let base = file.grid.apply(GridSpec::paper(ModelKind::Gcn));
            let plans = make_cv_plans(dataset.speakers(), file.replicates, file.seed)?;
            let points = evaluation::sweep(&dataset, axis, &fixed, &values, &base, &plans)?;
            let mut tsv = Vec::new();
            evaluation::write_sweep_tsv(axis, &points, &mut tsv).expect("writing to memory");
            write_file(&out, &tsv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error[usage]: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("global pool is configured once");
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (status, line) = e.report();
            eprintln!("{line}");
            ExitCode::from(status)
        }
    }
}
