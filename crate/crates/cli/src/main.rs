use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use clustmatch::clustering::{adjusted_rand_index, cmds_embed, elbow_dimension, kmeans, pairwise_distances, Labeling};
use clustmatch::harness::{
    emit_plot_data, run_experiment, write_run, ExperimentConfig, HarnessError, PlotSpec, Scale,
};
use clustmatch::io::{load_graph, save_graph, GraphFormat, IoError};
use clustmatch::models::{bitflip, sample_er, sample_sbm, NoiseSpec, SbmSpec};
use clustmatch::theory::{exact_gap_variance, expected_trace_sbm, pattern_counts};
use clustmatch::{
    clustered_match, coarse_match, fine_match, Graph, Permutation, RngSeed, SeedSet, SgmOptions,
};

#[derive(Parser)]
#[command(name = "clustmatch", version, about = "Clustered graph matching and classification")]
struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Tsv,
}

impl From<FormatArg> for GraphFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => GraphFormat::DenseCsv,
            FormatArg::Tsv => GraphFormat::EdgeList,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Coarse,
    Clustered,
    Fine,
}

#[derive(Subcommand)]
enum GenModel {
    /// Erdős–Rényi graph.
    Er {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
    },
    /// Stochastic block model.
    Sbm {
        /// Block sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Block probabilities, rows separated by `;`, entries by `,`.
        #[arg(long)]
        lambda: String,
    },
}

#[derive(Subcommand)]
enum TheoryCmd {
    /// Expected-trace constants of the three-class block-model example.
    SbmConstants,
    /// Mean, variance and pattern counts of the objective gap for a pair
    /// map on two binary backgrounds.
    Gap {
        #[arg(long)]
        b1: PathBuf,
        #[arg(long)]
        b2: PathBuf,
        #[arg(long)]
        m1: usize,
        #[arg(long)]
        m2: usize,
        #[arg(long)]
        p: f64,
        /// Pair map as a comma-separated image list.
        #[arg(long, value_delimiter = ',')]
        sigma: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random graph.
    Gen {
        #[command(subcommand)]
        model: GenModel,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Output file (default `<out>/graph.<ext>`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pass a graph through the bit-flip channel.
    Flip {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        q: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Match a target graph against reference graphs.
    Match {
        #[arg(long)]
        target: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        reference: Vec<PathBuf>,
        /// Class label of each reference (clustered mode).
        #[arg(long, value_delimiter = ',')]
        classes: Vec<usize>,
        #[arg(long, value_enum, default_value = "coarse")]
        mode: ModeArg,
        /// Known correspondences `target:reference`, comma separated.
        #[arg(long, value_delimiter = ',')]
        seed_pairs: Vec<String>,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
    },
    /// Cluster graphs by Frobenius distance (classical MDS + k-means).
    Cluster {
        #[arg(long, required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        k: usize,
        /// Embedding dimension (elbow of the spectrum when omitted).
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 25)]
        restarts: usize,
        /// Reference labels for an adjusted Rand index.
        #[arg(long, value_delimiter = ',')]
        truth: Vec<usize>,
    },
    /// Exact moment calculators.
    Theory {
        #[command(subcommand)]
        what: TheoryCmd,
    },
    /// Run an experiment grid and write results, timings, manifest and
    /// plot tables to the output directory.
    Experiment {
        /// JSON configuration file.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in configuration by experiment name.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[arg(long)]
        replicates: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Io(m) | Self::Numerical(m) => m,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e.exit_code() {
            2 => Self::Config(e.to_string()),
            3 => Self::Io(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

fn config<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn load(path: &Path) -> Result<Graph, CliError> {
    Ok(load_graph(path, GraphFormat::from_path(path)?)?)
}

fn output_path(out: &Path, given: Option<PathBuf>, stem: &str, format: FormatArg) -> Result<PathBuf, CliError> {
    match given {
        Some(p) => Ok(p),
        None => {
            fs::create_dir_all(out)?;
            let ext = match format {
                FormatArg::Csv => "csv",
                FormatArg::Tsv => "tsv",
            };
            Ok(out.join(format!("{stem}.{ext}")))
        }
    }
}

fn parse_lambda(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad lambda entry {v:?}"))))
                .collect()
        })
        .collect()
}

fn parse_seed_pairs(items: &[String]) -> Result<SeedSet, CliError> {
    let pairs = items
        .iter()
        .map(|s| {
            let (a, b) = s
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("seed pair {s:?} is not `target:reference`")))?;
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| CliError::Config(format!("bad vertex {v:?}")));
            Ok((parse(a)?, parse(b)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    SeedSet::new(pairs).map_err(config)
}

fn print_json(v: &Value) {
    use std::io::Write;
    // A closed pipe (`| head`) is not an error worth a panic.
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(config)?;
    }
    let seed = RngSeed::new(cli.rng_seed.unwrap_or(0));
    match cli.command {
        Command::Gen { model, format, output } => {
            let g = match model {
                GenModel::Er { n, p } => sample_er(n, p, seed).map_err(config)?,
                GenModel::Sbm { sizes, lambda } => {
                    let spec = SbmSpec::new(sizes, parse_lambda(&lambda)?).map_err(config)?;
                    sample_sbm(&spec, seed).map_err(config)?
                }
            };
            let path = output_path(&cli.out, output, "graph", format)?;
            save_graph(&g, &path, format.into())?;
            print_json(&json!({"path": path, "n": g.n(), "edges": g.edge_count()}));
        }
        Command::Flip { input, q, format, output } => {
            let g = load(&input)?;
            let noise = NoiseSpec::uniform(q).map_err(config)?;
            let flipped = bitflip(&g, &noise, seed).map_err(numerical)?;
            let path = output_path(&cli.out, output, "flipped", format)?;
            save_graph(&flipped, &path, format.into())?;
            print_json(&json!({"path": path, "n": flipped.n(), "edges": flipped.edge_count()}));
        }
        Command::Match {
            target,
            reference,
            classes,
            mode,
            seed_pairs,
            restarts,
        } => {
            let r = load(&target)?;
            let refs = reference.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
            let seeds = parse_seed_pairs(&seed_pairs)?;
            let opts = SgmOptions::default().with_rng(seed).with_restarts(restarts);
            let result = match mode {
                ModeArg::Coarse => {
                    let rep = coarse_match(&r, &refs, &seeds, &opts).map_err(numerical)?;
                    json!({"mode": "coarse", "perm": rep.perm, "objective": rep.objective})
                }
                ModeArg::Fine => {
                    let rep = fine_match(&r, &refs, &seeds, &opts).map_err(numerical)?;
                    json!({"mode": "fine", "perm": rep.perm, "objective": rep.objective, "best_reference": rep.source})
                }
                ModeArg::Clustered => {
                    if classes.len() != refs.len() {
                        return Err(CliError::Config(format!(
                            "{} class labels for {} references",
                            classes.len(),
                            refs.len()
                        )));
                    }
                    let k = classes.iter().max().map_or(0, |m| m + 1);
                    let mut grouped: Vec<Vec<Graph>> = vec![Vec::new(); k];
                    for (g, &c) in refs.into_iter().zip(&classes) {
                        grouped[c].push(g);
                    }
                    let cm = clustered_match(&r, &grouped, &seeds, &opts).map_err(numerical)?;
                    json!({"mode": "clustered", "perm": cm.perm, "objective": cm.deltas[cm.winner], "winner": cm.winner, "deltas": cm.deltas})
                }
            };
            fs::create_dir_all(&cli.out)?;
            fs::write(cli.out.join("match.json"), serde_json::to_string_pretty(&result).expect("serializable") + "\n")?;
            print_json(&result);
        }
        Command::Cluster {
            inputs,
            k,
            dim,
            restarts,
            truth,
        } => {
            let gs = inputs.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
            let d = pairwise_distances(&gs).map_err(numerical)?;
            let elbow = elbow_dimension(&d, gs.len().min(2 * k).max(1)).map_err(numerical)?;
            let dim = dim.unwrap_or(elbow);
            let x = cmds_embed(&d, dim).map_err(config)?;
            let fit = kmeans(&x, k, restarts, seed).map_err(config)?;
            let ari = if truth.is_empty() {
                None
            } else {
                Some(adjusted_rand_index(&fit.labeling, &Labeling::new(truth)).map_err(config)?)
            };
            let result = json!({"labels": fit.labeling.labels(), "dim": dim, "elbow_dim": elbow, "wcss": fit.wcss, "ari": ari});
            fs::create_dir_all(&cli.out)?;
            fs::write(cli.out.join("clusters.json"), serde_json::to_string_pretty(&result).expect("serializable") + "\n")?;
            print_json(&result);
        }
        Command::Theory { what } => match what {
            TheoryCmd::SbmConstants => {
                let (a, eps, r) = (0.3, 0.5, 0.1);
                let lambdas = vec![
                    vec![vec![a, r, r], vec![r, r, r], vec![r, r, r]],
                    vec![vec![r, r, r], vec![r, a + eps, r], vec![r, r, r]],
                    vec![vec![r, r, r], vec![r, r, r], vec![r, r, a + eps]],
                ];
                let flips = [0.4, 0.1, 0.1];
                let id = Permutation::identity(3);
                let swap = Permutation::transposition(3, 0, 1);
                let value = |counts: &[usize], s: &Permutation| {
                    expected_trace_sbm(&lambdas, &[1.0; 3], counts, &flips, 0.4, s, 0).map_err(numerical)
                };
                print_json(&json!({
                    "identity_unequal": value(&[1, 2, 0], &id)?,
                    "swap_unequal": value(&[1, 2, 0], &swap)?,
                    "identity_equal": value(&[1, 1, 1], &id)?,
                    "swap_equal": value(&[1, 1, 1], &swap)?,
                }));
            }
            TheoryCmd::Gap { b1, b2, m1, m2, p, sigma } => {
                let (b1, b2) = (load(&b1)?, load(&b2)?);
                let sigma = Permutation::new(sigma).map_err(config)?;
                let moments = exact_gap_variance(&b1, &b2, m1, m2, p, &sigma).map_err(config)?;
                let counts = pattern_counts(&b1, &b2, &sigma).map_err(config)?;
                print_json(&json!({
                    "mean": moments.mean,
                    "variance": moments.variance,
                    "k_shuffled": moments.k_shuffled,
                    "pattern_counts": counts.as_array(),
                    "parity_holds": counts.parity_holds(),
                }));
            }
        },
        Command::Experiment {
            config: path,
            preset,
            scale,
            replicates,
        } => {
            let mut cfg = match (path, preset) {
                (Some(p), _) => ExperimentConfig::from_json(&fs::read_to_string(&p)?)?,
                (None, Some(name)) => ExperimentConfig::preset(
                    &name,
                    match scale {
                        ScaleArg::Desk => Scale::Desk,
                        ScaleArg::Full => Scale::Full,
                    },
                )?,
                (None, None) => return Err(CliError::Config("pass --config or --preset".into())),
            };
            if let Some(s) = cli.rng_seed {
                cfg.rng_seed = s;
            }
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            cfg.validate()?;
            let out = run_experiment(&cfg)?;
            let files = write_run(&cfg, &out, &cli.out)?;
            let mut plots = Vec::new();
            for spec in PlotSpec::defaults_for(cfg.name()) {
                for table in emit_plot_data(&out.rows, spec)? {
                    let path = cli.out.join(&table.name);
                    fs::write(&path, &table.csv)?;
                    plots.push(path);
                }
            }
            print_json(&json!({
                "results": files.results,
                "timings": files.timings,
                "manifest": files.manifest,
                "plots": plots,
                "rows": out.rows.len(),
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
