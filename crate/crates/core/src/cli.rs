//! Command-line front end: config files, subcommands and exit codes.
//!
//! Config files are line-oriented `key = value` text; `#` starts a comment.
//! Exit codes: 0 on success, 2 for configuration errors (the offending key
//! is named), 3 for data errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{gen_blobs, gen_two_moons, load_features, save_features, FeatureFormat, FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::evaluation::{clustering_accuracy, confident_subset, confusion};
use crate::head::Network;
use crate::kmeans::{kmeans, KMeansParams};
use crate::optim::AdamParams;
use crate::pairwise::{build_adjacency, LabelSpace, Similarity, SimilarityConfig};
use crate::rng::RngState;
use crate::trainer::{self, BackboneConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

const KEYS: &[&str] = &[
    "similarity.kind",
    "similarity.space",
    "similarity.tau",
    "similarity.temperature",
    "similarity.k",
    "k_clusters",
    "epochs",
    "batch_size",
    "optimizer",
    "lr_init",
    "lr_steps",
    "lr_decay_factor",
    "momentum",
    "weight_decay",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
    "lambda",
    "ramp_len_epochs",
    "composition",
    "beta.alpha",
    "beta.beta",
    "augment.mode",
    "augment.strength",
    "mse_enabled",
    "head.kind",
    "head.hidden",
    "backbone",
    "seed",
    "data.kind",
    "data.path",
    "data.labels",
    "data.n",
    "data.noise",
    "data.n_per_cluster",
    "data.centers",
    "data.sigma",
    "data.seed",
    "out",
];

/// Raw key/value pairs; typed views are built on demand so that every
/// override is re-validated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

/// Where training samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Moons { n: usize, noise: f64, seed: u64 },
    Blobs { n_per_cluster: usize, centers: Vec<Vec<f64>>, sigma: f64, seed: u64 },
    File { path: PathBuf, labels: bool },
}

impl DataSource {
    pub fn load(&self) -> Result<(FeatureMatrix, Option<LabelVector>)> {
        match self {
            DataSource::Moons { n, noise, seed } => {
                let (x, y) = gen_two_moons(*n, *noise, &mut RngState::new(*seed))?;
                Ok((x, Some(y)))
            }
            DataSource::Blobs { n_per_cluster, centers, sigma, seed } => {
                let (x, y) = gen_blobs(*n_per_cluster, centers, *sigma, &mut RngState::new(*seed))?;
                Ok((x, Some(y)))
            }
            DataSource::File { path, labels } => load_features(path, FeatureFormat::from_path(path, *labels)),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if cfg.entries.contains_key(key) {
                return Err(Error::config(key, format!("line {}: duplicate key", lineno + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.run_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(pair, "override must look like KEY=VALUE"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::config(key, format!("`{v}`: {e}"))))
            .transpose()
    }

    fn value_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.value(key)?.unwrap_or(default))
    }

    pub fn similarity(&self) -> Result<SimilarityConfig> {
        let kind = self.get("similarity.kind").unwrap_or("knn");
        let similarity = match kind {
            "l2" => Similarity::L2 { tau: self.value_or("similarity.tau", 1.0)? },
            "cosine" | "cos" => Similarity::Cosine { tau: self.value_or("similarity.tau", 0.9)? },
            "sne" => Similarity::Sne {
                tau: self.value_or("similarity.tau", 0.01)?,
                temperature: self.value_or("similarity.temperature", 1.0)?,
            },
            "knn" => Similarity::Knn { k: self.value_or("similarity.k", 20)? },
            other => return Err(Error::config("similarity.kind", format!("unknown similarity `{other}`"))),
        };
        let space = match self.get("similarity.space").unwrap_or("feature") {
            "feature" => LabelSpace::Feature,
            "logit" => LabelSpace::Logit,
            other => return Err(Error::config("similarity.space", format!("unknown space `{other}`"))),
        };
        let cfg = SimilarityConfig { similarity, space };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Typed, validated run configuration.
    pub fn run_config(&self) -> Result<RunConfig> {
        let d = RunConfig::default();
        let lr_steps = match self.get("lr_steps") {
            None => d.lr_steps.clone(),
            Some(v) => parse_list::<usize>(v).map_err(|msg| Error::config("lr_steps", msg))?,
        };
        let backbone = match self.get("backbone") {
            None | Some("none") | Some("") => None,
            Some(v) => match parse_list::<usize>(v).as_deref() {
                Ok([hidden, out]) => Some(BackboneConfig { hidden: *hidden, out: *out }),
                _ => return Err(Error::config("backbone", format!("`{v}`: expected `none` or HIDDEN,OUT"))),
            },
        };
        let cfg = RunConfig {
            similarity: self.similarity()?,
            k_clusters: self.value_or("k_clusters", d.k_clusters)?,
            epochs: self.value_or("epochs", d.epochs)?,
            batch_size: self.value_or("batch_size", d.batch_size)?,
            optimizer: self.value_or("optimizer", d.optimizer)?,
            lr_init: self.value_or("lr_init", d.lr_init)?,
            lr_steps,
            lr_decay_factor: self.value_or("lr_decay_factor", d.lr_decay_factor)?,
            momentum: self.value_or("momentum", d.momentum)?,
            weight_decay: self.value("weight_decay")?,
            adam: AdamParams {
                beta1: self.value_or("adam.beta1", d.adam.beta1)?,
                beta2: self.value_or("adam.beta2", d.adam.beta2)?,
                eps: self.value_or("adam.eps", d.adam.eps)?,
            },
            lambda: self.value_or("lambda", d.lambda)?,
            ramp_len_epochs: self.value_or("ramp_len_epochs", d.ramp_len_epochs)?,
            composition: self.value_or("composition", d.composition)?,
            beta: crate::composition::BetaParams {
                alpha: self.value_or("beta.alpha", d.beta.alpha)?,
                beta: self.value_or("beta.beta", d.beta.beta)?,
            },
            augment_mode: self.value_or("augment.mode", d.augment_mode)?,
            augment_strength: self.value_or("augment.strength", d.augment_strength)?,
            mse_enabled: self.value_or("mse_enabled", d.mse_enabled)?,
            head_kind: self.value_or("head.kind", d.head_kind)?,
            head_hidden: self.value_or("head.hidden", d.head_hidden)?,
            backbone,
            seed: self.value_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_source(&self) -> Result<DataSource> {
        let seed = match self.value("data.seed")? {
            Some(s) => s,
            None => self.value_or("seed", 0u64)?,
        };
        match self.get("data.kind").unwrap_or("file") {
            "moons" => Ok(DataSource::Moons {
                n: self.value_or("data.n", 1000)?,
                noise: self.value_or("data.noise", 0.05)?,
                seed,
            }),
            "blobs" => {
                let centers = match self.get("data.centers") {
                    Some(v) => parse_centers(v).map_err(|msg| Error::config("data.centers", msg))?,
                    None => return Err(Error::config("data.centers", "required for data.kind = blobs")),
                };
                Ok(DataSource::Blobs {
                    n_per_cluster: self.value_or("data.n_per_cluster", 100)?,
                    centers,
                    sigma: self.value_or("data.sigma", 0.5)?,
                    seed,
                })
            }
            "file" => match self.get("data.path") {
                Some(p) if !p.is_empty() => Ok(DataSource::File {
                    path: PathBuf::from(p),
                    labels: self.value_or("data.labels", false)?,
                }),
                _ => Err(Error::config("data.path", "required for data.kind = file")),
            },
            other => Err(Error::config("data.kind", format!("unknown data kind `{other}`"))),
        }
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    let v = v.trim();
    if v.is_empty() || v == "none" || v == "[]" {
        return Ok(Vec::new());
    }
    v.trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("`{}` is not a valid list entry", s.trim())))
        .collect()
}

/// `x1,y1;x2,y2;...`
fn parse_centers(v: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    v.split(';').map(parse_list::<f64>).collect()
}

#[derive(Debug, Parser)]
#[command(name = "lsdc", version, about = "Clustering by pairwise similarity labels")]
struct Cli {
    /// Worker threads for the similarity kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a clustering head and write report, checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a feature file.
    Eval(EvalArgs),
    /// Run the k-means baseline.
    Kmeans(KmeansArgs),
    /// Write a synthetic dataset.
    Gen(GenArgs),
    /// Write the undirected edge list of a similarity graph.
    Edges(EdgesArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// KEY=VALUE override, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Binary (.bin) or CSV (.csv) feature file.
    #[arg(long)]
    features: PathBuf,
    /// Treat the last CSV column as the label.
    #[arg(long)]
    labels: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    /// Directory for the confusion CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KmeansArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenKind {
    Moons,
    Blobs,
}

#[derive(Debug, Args)]
struct GenArgs {
    kind: GenKind,
    /// Sample count (moons) or samples per center (blobs).
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Blob centers as `x1,y1;x2,y2;...`.
    #[arg(long, default_value = "5,0;0,5;-5,0;0,-5")]
    centers: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EdgesArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "knn")]
    similarity: String,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::config("--threads", e.to_string())),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_DATA
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cmd {
        Command::Train(a) => cmd_train(a, &mut stdout),
        Command::Eval(a) => cmd_eval(a, &mut stdout),
        Command::Kmeans(a) => cmd_kmeans(a, &mut stdout),
        Command::Gen(a) => cmd_gen(a, &mut stdout),
        Command::Edges(a) => cmd_edges(a, &mut stdout),
    }
}

fn load_input(input: &InputArgs) -> Result<(FeatureMatrix, Option<LabelVector>)> {
    load_features(&input.features, FeatureFormat::from_path(&input.features, input.labels))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_confusion(path: &Path, network: &Network, x: &FeatureMatrix, y: &LabelVector) -> Result<f64> {
    let pred = trainer::predict_clusters(network, x)?;
    let k = network.head.n_clusters();
    let acc = clustering_accuracy(&pred, y.as_slice(), k)?;
    let cm = confusion(&pred, y.as_slice(), &acc.mapping, k)?;
    let mut f = fs::File::create(path)?;
    cm.write_csv(&mut f)?;
    Ok(acc.acc)
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut file = ConfigFile::load(&a.config)?;
    for pair in &a.overrides {
        file.set_pair(pair)?;
    }
    if let Some(seed) = a.seed {
        file.set("seed", &seed.to_string())?;
    }
    let cfg = file.run_config()?;
    let source = file.data_source()?;
    let dir = a.out.or_else(|| file.get("out").map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
    let (x, y) = source.load()?;
    let report = trainer::train(&x, &cfg, y.as_ref())?;

    create_dir(&dir)?;
    report.write_stream(fs::File::create(dir.join("report.jsonl"))?)?;
    report.network.save(&dir.join("model.lsdh"))?;
    let last = report.epochs.last().expect("at least one epoch");
    writeln!(out, "epochs {} final loss {:.6}", report.epochs.len(), last.loss_total)?;
    if let Some(y) = &y {
        let acc = write_confusion(&dir.join("confusion.csv"), &report.network, &x, y)?;
        writeln!(out, "acc {acc:.4}")?;
    }
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Error::config("--threshold", "must lie in (0, 1)"));
    }
    let network = Network::load(&a.checkpoint)?;
    let (x, y) = load_input(&a.input)?;
    if x.dim() != network.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, checkpoint expects {}",
            x.dim(),
            network.input_dim()
        )));
    }
    let probs = network.predict(x.view())?;
    let pred = probs.argmax();
    let confident = confident_subset(probs.view(), a.threshold)?;
    writeln!(out, "samples {}", x.n_samples())?;
    writeln!(out, "confident {} (threshold {})", confident.len(), a.threshold)?;
    if let Some(y) = &y {
        let k = network.head.n_clusters();
        let acc = clustering_accuracy(&pred, y.as_slice(), k)?;
        writeln!(out, "acc {:.4}", acc.acc)?;
        if !confident.is_empty() {
            let sub_pred: Vec<usize> = confident.iter().map(|&i| pred[i]).collect();
            let sub_true: Vec<usize> = confident.iter().map(|&i| y.as_slice()[i]).collect();
            let sub = clustering_accuracy(&sub_pred, &sub_true, k)?;
            writeln!(out, "confident acc {:.4}", sub.acc)?;
        }
        if let Some(dir) = &a.out {
            create_dir(dir)?;
            write_confusion(&dir.join("confusion.csv"), &network, &x, y)?;
        }
    }
    Ok(())
}

fn cmd_kmeans(a: KmeansArgs, out: &mut dyn Write) -> Result<()> {
    let (x, y) = load_input(&a.input)?;
    let model = kmeans(x.view(), a.k, &KMeansParams::default(), &mut RngState::new(a.seed))?;
    writeln!(out, "inertia {:.6}", model.inertia)?;
    writeln!(out, "iterations {}", model.iterations)?;
    if let Some(y) = &y {
        let acc = clustering_accuracy(&model.assignments, y.as_slice(), a.k)?;
        writeln!(out, "acc {:.4}", acc.acc)?;
    }
    Ok(())
}

fn cmd_gen(a: GenArgs, out: &mut dyn Write) -> Result<()> {
    let mut rng = RngState::new(a.seed);
    let (x, y) = match a.kind {
        GenKind::Moons => gen_two_moons(a.n, a.noise, &mut rng)?,
        GenKind::Blobs => {
            let centers = parse_centers(&a.centers).map_err(|msg| Error::config("--centers", msg))?;
            gen_blobs(a.n, &centers, a.noise, &mut rng)?
        }
    };
    let format = FeatureFormat::from_path(&a.out, true);
    save_features(&a.out, &x, Some(&y), format)?;
    writeln!(out, "wrote {} samples to {}", x.n_samples(), a.out.display())?;
    Ok(())
}

fn cmd_edges(a: EdgesArgs, out: &mut dyn Write) -> Result<()> {
    let mut file = ConfigFile::default();
    file.set("similarity.kind", &a.similarity)?;
    if let Some(t) = a.tau {
        file.set("similarity.tau", &t.to_string())?;
    }
    if let Some(t) = a.temperature {
        file.set("similarity.temperature", &t.to_string())?;
    }
    if let Some(k) = a.k {
        file.set("similarity.k", &k.to_string())?;
    }
    let sim = file.similarity()?;
    let (x, _) = load_input(&a.input)?;
    let adj = build_adjacency(&sim, x.view())?;
    let mut f = fs::File::create(&a.out)?;
    adj.write_edge_list(&mut f)?;
    writeln!(out, "edges {}", adj.edge_count())?;
    Ok(())
}
