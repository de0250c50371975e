//! Job runners behind the `relprop` binary.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 conservation violation.
//! JSON and CSV go to stdout (or `--out`), diagnostics to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{conservation_report, evaluate_map, mean_std, FaithfulnessScores};
use crate::lrp::{
    explain, AttributionMap, Explanation, QuantizeMode, RuleConfig, RuleKind, Splitting,
};
use crate::model::image::with_suffix;
use crate::model::{
    argmax, forward, generate_toy_resnet, load_model, load_ppm, read_attribution_csv, save_model,
    write_attribution, write_ppm, ImageSample, ModelGraph,
};
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONSERVATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "relprop",
    version,
    about = "Layer-wise relevance propagation for residual CNNs"
)]
pub struct Cli {
    /// Concurrent per-image jobs. Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the top-k class probabilities for one image.
    Infer(InferArgs),
    /// Write attribution maps and report conservation.
    Explain(ExplainArgs),
    /// Insertion/deletion curves and ID score.
    Evaluate(EvaluateArgs),
    /// Checkpoint sums against p(class) over a set of images, as CSV.
    CheckConservation(CheckArgs),
    /// Write a seeded toy ResNet and random PPM images.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use a generated toy ResNet with this seed instead of --model.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// A single binary PPM image.
    #[arg(long, conflicts_with = "images")]
    pub image: Option<PathBuf>,
    /// Newline-delimited list of PPM paths (relative to the list's directory).
    #[arg(long)]
    pub images: Option<PathBuf>,
}

/// Target class: `auto` (argmax) or an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassArg {
    #[default]
    Auto,
    Index(usize),
}

impl FromStr for ClassArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(ClassArg::Auto);
        }
        s.parse()
            .map(ClassArg::Index)
            .map_err(|_| format!("expected `auto` or a class index, got {s:?}"))
    }
}

impl ClassArg {
    fn index(self) -> Option<usize> {
        match self {
            ClassArg::Auto => None,
            ClassArg::Index(i) => Some(i),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    Zplus,
    Epsilon,
    Mixture,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplittingArg {
    Symmetric,
    Ratio,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QuantizeArg {
    Paper,
    Binwidth,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct RuleArgs {
    #[arg(long, value_enum, default_value = "zplus")]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long = "mixture-boundary", default_value_t = 8)]
    pub mixture_boundary: usize,
    #[arg(long, value_enum, default_value = "ratio")]
    pub splitting: SplittingArg,
    #[arg(long = "include-identity", default_value = "true", action = clap::ArgAction::Set)]
    pub include_identity: bool,
    #[arg(long, value_enum, default_value = "paper")]
    pub quantize: QuantizeArg,
    #[arg(long, default_value_t = 8)]
    pub bins: usize,
}

impl RuleArgs {
    pub fn to_config(&self) -> RuleConfig {
        RuleConfig {
            rule: match self.rule {
                RuleArg::Zplus => RuleKind::Zplus,
                RuleArg::Epsilon => RuleKind::Epsilon,
                RuleArg::Mixture => RuleKind::Mixture,
            },
            epsilon: self.epsilon,
            mixture_boundary: self.mixture_boundary,
            splitting: match self.splitting {
                SplittingArg::Symmetric => Splitting::Symmetric,
                SplittingArg::Ratio => Splitting::Ratio,
            },
            include_identity: self.include_identity,
            quantize: match self.quantize {
                QuantizeArg::Paper => QuantizeMode::Paper,
                QuantizeArg::Binwidth => QuantizeMode::Binwidth,
                QuantizeArg::Off => QuantizeMode::Off,
            },
            bins: self.bins,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub topk: usize,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "auto")]
    pub class: ClassArg,
    #[command(flatten)]
    pub rules: RuleArgs,
    /// Maximum relative checkpoint deviation tolerated under zplus.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Output prefix; `<out>.csv` and `<out>.pgm` (or `<out>.<i>.*` for --images).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "auto")]
    pub class: ClassArg,
    /// Attribution CSV to rank pixels by (single image only).
    #[arg(long, conflicts_with = "recompute")]
    pub attribution: Option<PathBuf>,
    /// Compute attributions with the rule flags instead of reading a CSV.
    #[arg(long)]
    pub recompute: bool,
    #[command(flatten)]
    pub rules: RuleArgs,
    #[arg(long, default_value_t = crate::eval::DEFAULT_STEPS)]
    pub steps: usize,
    /// Output prefix for `<out>.insertion.csv` and `<out>.deletion.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "auto")]
    pub class: ClassArg,
    #[command(flatten)]
    pub rules: RuleArgs,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub hw: usize,
    /// Random images to write next to the model, listed in `images.txt`.
    #[arg(long = "num-images", default_value_t = 0)]
    pub num_images: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Initialises logging from `RELPROP_LOG` (error, info or debug).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("RELPROP_LOG", "error"))
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(&cli, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    if cli.threads == 0 {
        return Err(Error::InvalidConfig("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Infer(a) => cmd_infer(a, out),
        Command::Explain(a) => cmd_explain(a, cli.threads, out),
        Command::Evaluate(a) => cmd_evaluate(a, cli.threads, out),
        Command::CheckConservation(a) => cmd_check_conservation(a, cli.threads, out),
        Command::Toy(a) => cmd_toy(a, out),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}

fn load_graph(args: &ModelArgs) -> Result<ModelGraph> {
    match (&args.model, args.seed) {
        (Some(path), _) => load_model(path),
        (None, Some(seed)) => {
            let mut g = generate_toy_resnet(seed, 4, 2, 5, 8)?;
            // The toy network is fully convolutional, so any image size works.
            g.input_shape = None;
            Ok(g)
        }
        (None, None) => Err(Error::InvalidConfig(
            "either --model or --seed is required".into(),
        )),
    }
}

/// Reads a newline-delimited image list, resolving paths against its directory.
pub fn read_image_list(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let list: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect();
    if list.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "image list {} is empty",
            path.display()
        )));
    }
    Ok(list)
}

fn image_paths(input: &InputArgs) -> Result<Vec<PathBuf>> {
    match (&input.image, &input.images) {
        (Some(p), None) => Ok(vec![p.clone()]),
        (None, Some(list)) => read_image_list(list),
        _ => Err(Error::InvalidConfig(
            "exactly one of --image or --images is required".into(),
        )),
    }
}

fn load_samples(graph: &ModelGraph, paths: &[PathBuf]) -> Result<Vec<ImageSample>> {
    paths
        .iter()
        .map(|p| load_ppm(p, &graph.preprocess))
        .collect()
}

fn check_class(graph: &ModelGraph, class: ClassArg) -> Result<()> {
    match class {
        ClassArg::Index(c) if c >= graph.num_classes => Err(Error::ClassOutOfRange {
            class: c,
            num_classes: graph.num_classes,
        }),
        _ => Ok(()),
    }
}

/// Maps `job` over `items` on `threads` workers, preserving input order.
fn par_map<T: Sync, U: Send>(
    threads: usize,
    items: &[T],
    job: impl Fn(usize, &T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    if threads <= 1 {
        return items.iter().enumerate().map(|(i, t)| job(i, t)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, t)| job(i, t))
            .collect()
    })
}

fn indexed_prefix(base: &Path, index: usize, many: bool) -> PathBuf {
    if many {
        with_suffix(base, &index.to_string())
    } else {
        base.to_path_buf()
    }
}

pub fn cmd_infer(args: &InferArgs, out: &mut dyn Write) -> Result<i32> {
    let graph = load_graph(&args.model)?;
    if args.topk == 0 {
        return Err(Error::InvalidConfig("--topk must be at least 1".into()));
    }
    let sample = load_ppm(&args.image, &graph.preprocess)?;
    let probs = forward(&graph, &sample.normalized)?;
    let mut ranked: Vec<(usize, f32)> = probs.data().iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut text = String::new();
    for (c, p) in ranked.into_iter().take(args.topk) {
        text.push_str(&format!("{c} {p}\n"));
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn explanation_json(path: &Path, e: &Explanation, config: &RuleConfig) -> serde_json::Value {
    let report = conservation_report(&e.state, e.p_c);
    json!({
        "image": path.display().to_string(),
        "class": e.class,
        "p_c": e.p_c,
        "checkpoint_sums": e.state.checkpoint_sums.iter()
            .map(|(label, sum)| json!({"checkpoint": label, "sum_r": sum}))
            .collect::<Vec<_>>(),
        "max_relative_deviation": report.max_relative_deviation(),
        "conservation_checked": config.is_conserving(),
    })
}

pub fn cmd_explain(args: &ExplainArgs, threads: usize, out: &mut dyn Write) -> Result<i32> {
    let graph = load_graph(&args.model)?;
    let config = args.rules.to_config();
    config.validate(graph.blocks.len())?;
    check_class(&graph, args.class)?;
    let paths = image_paths(&args.input)?;
    let samples = load_samples(&graph, &paths)?;
    let many = args.input.images.is_some();

    let explanations = par_map(threads, &samples, |i, s| {
        let e = explain(&graph, s, args.class.index(), &config)?;
        write_attribution(&e.map, indexed_prefix(&args.out, i, many))?;
        debug!("explained {}", paths[i].display());
        Ok(e)
    })?;

    let mut worst = 0f64;
    let summaries: Vec<_> = explanations
        .iter()
        .zip(&paths)
        .map(|(e, p)| {
            worst = worst.max(conservation_report(&e.state, e.p_c).max_relative_deviation());
            explanation_json(p, e, &config)
        })
        .collect();
    let doc = if many {
        serde_json::Value::Array(summaries)
    } else {
        summaries.into_iter().next().expect("one image")
    };
    emit(out, &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;

    if config.is_conserving() && worst > args.tolerance {
        eprintln!(
            "conservation violated: max relative deviation {worst:e} > {:e}",
            args.tolerance
        );
        return Ok(EXIT_CONSERVATION);
    }
    Ok(EXIT_OK)
}

fn scores_json(s: &FaithfulnessScores) -> serde_json::Value {
    json!({"insertion_auc": s.insertion_auc, "deletion_auc": s.deletion_auc, "id_score": s.id_score})
}

pub fn cmd_evaluate(args: &EvaluateArgs, threads: usize, out: &mut dyn Write) -> Result<i32> {
    let graph = load_graph(&args.model)?;
    let config = args.rules.to_config();
    config.validate(graph.blocks.len())?;
    check_class(&graph, args.class)?;
    if args.steps < 2 {
        return Err(Error::InvalidConfig("--steps must be at least 2".into()));
    }
    let paths = image_paths(&args.input)?;
    let many = args.input.images.is_some();
    let given_map = match (&args.attribution, args.recompute) {
        (Some(_), _) if many => {
            return Err(Error::InvalidConfig(
                "--attribution applies to a single --image; use --recompute with --images".into(),
            ))
        }
        (Some(p), false) => Some(AttributionMap::new(
            read_attribution_csv(p)?,
            QuantizeMode::Off,
            config.bins,
        )),
        (None, true) => None,
        _ => {
            return Err(Error::InvalidConfig(
                "pass --attribution <csv> or --recompute".into(),
            ))
        }
    };
    let samples = load_samples(&graph, &paths)?;
    if let Some(m) = &given_map {
        let s = &samples[0];
        if (m.height(), m.width()) != (s.height(), s.width()) {
            return Err(Error::InvalidConfig(format!(
                "attribution is {}×{}, image is {}×{}",
                m.height(),
                m.width(),
                s.height(),
                s.width()
            )));
        }
    }

    let scores = par_map(threads, &samples, |i, s| {
        let (map, class) = match &given_map {
            Some(m) => {
                let class = match args.class {
                    ClassArg::Index(c) => c,
                    ClassArg::Auto => argmax(forward(&graph, &s.normalized)?.data()),
                };
                (m.clone(), class)
            }
            None => {
                let e = explain(&graph, s, args.class.index(), &config)?;
                (e.map, e.class)
            }
        };
        let (ins, del, scores) = evaluate_map(&graph, &s.normalized, &map, class, args.steps)?;
        let prefix = indexed_prefix(&args.out, i, many);
        for (curve, tag) in [(&ins, "insertion.csv"), (&del, "deletion.csv")] {
            let path = with_suffix(&prefix, tag);
            fs::write(&path, curve.to_csv()).map_err(io_err(&path))?;
        }
        info!("{}: id score {:.4}", paths[i].display(), scores.id_score);
        Ok(scores)
    })?;

    let doc = if many {
        let column = |f: fn(&FaithfulnessScores) -> f64| scores.iter().map(f).collect::<Vec<_>>();
        let (im, is) = mean_std(&column(|s| s.insertion_auc));
        let (dm, ds) = mean_std(&column(|s| s.deletion_auc));
        let (idm, ids) = mean_std(&column(|s| s.id_score));
        json!({
            "per_image": scores.iter().zip(&paths).map(|(s, p)| {
                let mut v = scores_json(s);
                v["image"] = json!(p.display().to_string());
                v
            }).collect::<Vec<_>>(),
            "mean": {"insertion_auc": im, "deletion_auc": dm, "id_score": idm},
            "std": {"insertion_auc": is, "deletion_auc": ds, "id_score": ids},
        })
    } else {
        scores_json(&scores[0])
    };
    emit(out, &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    Ok(EXIT_OK)
}

pub fn cmd_check_conservation(
    args: &CheckArgs,
    threads: usize,
    out: &mut dyn Write,
) -> Result<i32> {
    let graph = load_graph(&args.model)?;
    let config = args.rules.to_config();
    config.validate(graph.blocks.len())?;
    check_class(&graph, args.class)?;
    let paths = image_paths(&args.input)?;
    let samples = load_samples(&graph, &paths)?;

    let reports = par_map(threads, &samples, |_, s| {
        let e = explain(&graph, s, args.class.index(), &config)?;
        Ok(conservation_report(&e.state, e.p_c))
    })?;

    let mut csv = String::from("image,checkpoint,sum_R,p_c,relative_deviation\n");
    let mut ok = true;
    for (path, report) in paths.iter().zip(&reports) {
        ok &= report.within(args.tolerance);
        for row in &report.rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                path.display(),
                row.label,
                row.sum_r,
                row.p_c,
                row.relative_deviation
            ));
        }
    }
    match &args.out {
        Some(p) => fs::write(p, &csv).map_err(io_err(p))?,
        None => emit(out, &csv)?,
    }
    if !config.is_conserving() {
        info!("non-conserving rule: deviations reported only");
        return Ok(EXIT_OK);
    }
    Ok(if ok { EXIT_OK } else { EXIT_CONSERVATION })
}

/// Random 8-bit RGB image as a 3×H×W tensor.
pub fn random_raw_image(seed: u64, height: usize, width: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * height * width)
        .map(|_| rng.gen_range(0u8..=255) as f32)
        .collect();
    Tensor::new(vec![3, height, width], data).expect("positive extents")
}

pub fn cmd_toy(args: &ToyArgs, out: &mut dyn Write) -> Result<i32> {
    let graph = generate_toy_resnet(args.seed, args.channels, args.blocks, args.classes, args.hw)?;
    let manifest = save_model(&graph, &args.out)?;
    let mut text = format!("{}\n", manifest.display());
    if args.num_images > 0 {
        let dir = args.out.join("images");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut list = String::new();
        for i in 0..args.num_images {
            let name = format!("img_{i:04}.ppm");
            let seed = args.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            write_ppm(dir.join(&name), &random_raw_image(seed, args.hw, args.hw))?;
            list.push_str(&format!("images/{name}\n"));
        }
        let list_path = args.out.join("images.txt");
        fs::write(&list_path, list).map_err(io_err(&list_path))?;
        text.push_str(&format!("{}\n", list_path.display()));
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_arg_parsing() {
        assert_eq!("auto".parse::<ClassArg>().unwrap(), ClassArg::Auto);
        assert_eq!("3".parse::<ClassArg>().unwrap(), ClassArg::Index(3));
        assert!("x".parse::<ClassArg>().is_err());
    }

    #[test]
    fn flags_map_to_config() {
        let cli = Cli::try_parse_from([
            "relprop",
            "explain",
            "--seed",
            "1",
            "--image",
            "a.ppm",
            "--out",
            "o",
            "--rule",
            "mixture",
            "--splitting",
            "symmetric",
            "--include-identity",
            "false",
            "--quantize",
            "binwidth",
            "--bins",
            "4",
            "--mixture-boundary",
            "1",
            "--epsilon",
            "0.01",
        ])
        .unwrap();
        let Command::Explain(a) = cli.command else {
            panic!()
        };
        let c = a.rules.to_config();
        assert_eq!(c.rule, RuleKind::Mixture);
        assert_eq!(c.splitting, Splitting::Symmetric);
        assert!(!c.include_identity);
        assert_eq!(c.quantize, QuantizeMode::Binwidth);
        assert_eq!((c.bins, c.mixture_boundary, c.epsilon), (4, 1, 0.01));
    }

    #[test]
    fn defaults_match_rule_config() {
        let cli = Cli::try_parse_from([
            "relprop", "explain", "--seed", "1", "--image", "a", "--out", "o",
        ])
        .unwrap();
        let Command::Explain(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.rules.to_config(), RuleConfig::default());
        assert_eq!(a.class, ClassArg::Auto);
        assert_eq!(cli.threads, 1);
    }
}
