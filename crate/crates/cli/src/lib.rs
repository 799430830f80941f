//! Command-line driver behind the `cnm` binary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numeric failure. Logs go to stderr; machine output goes to
//! stdout unless `--out` names a file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use cnm_core::ablate::run_grid;
use cnm_core::check::run_suite;
use cnm_core::corpus::{generate_corpus, Corpus, CorpusSpec, Split};
use cnm_core::eval::{decode_scene, evaluate, feature_cache, strip_end, DecodeMode, EvalReport};
use cnm_core::presets::{Preset, BASE_NAMES};
use cnm_core::trace::trace_scene;
use cnm_core::train::{load_checkpoint, save_checkpoint, Checkpoint, EpochMetrics, TrainConfig, Trainer};
use cnm_core::{CnmError, ModelConfig, Result};

/// Environment variable that replaces the built-in default seed.
pub const SEED_ENV: &str = "CNM_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser)]
#[command(name = "cnm", version, about = "Compositional neural module captioning on a synthetic corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    Corpus(CorpusArgs),
    /// Train a model and write checkpoints plus metrics.json.
    Train(TrainArgs),
    /// Decode a split and print a JSON metrics report.
    Eval(EvalArgs),
    /// Print generated captions, one `scene<TAB>caption` line each.
    Caption(CaptionArgs),
    /// Export the module-collocation trace of one scene.
    Trace(TraceArgs),
    /// Compare tape gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate a list of presets under one seed.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus spec JSON; unspecified fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
}

/// Overrides shared by `train` and `ablate`, applied after `--config`.
#[derive(Args)]
struct ScheduleArgs {
    /// Resolved config JSON as printed by an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    xe_epochs: Option<usize>,
    #[arg(long)]
    rl_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Few-shot setting: keep this many captions per training scene.
    #[arg(long)]
    captions_per_scene: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// One of Module/O, Module/A, Module/R, Col/1, Col/H, Col/H+L, Col/S,
    /// Col/S+L, CNM, optionally suffixed `#M` for M stacked units.
    #[arg(long)]
    preset: Option<String>,
    /// Continue from a checkpoint; its stored configuration wins.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

fn parse_decode(s: &str) -> std::result::Result<DecodeMode, String> {
    s.parse().map_err(|e: CnmError| e.to_string())
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Corpus directory; regenerated from the checkpoint's spec if omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `greedy`, `beam`, `beam:W` or `sample:SEED`.
    #[arg(long, default_value = "greedy", value_parser = parse_decode)]
    decode: DecodeMode,
    /// Defaults to the checkpoint's training max_len.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CaptionArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Caption one scene instead of the whole split.
    #[arg(long)]
    scene: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceFormat {
    Json,
    Csv,
    Svg,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    scene: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: TraceFormat,
    /// Draw every decoder unit in the SVG, not only the last.
    #[arg(long)]
    all_units: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 25)]
    composites: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated preset names; defaults to every base preset.
    #[arg(long, value_delimiter = ',')]
    presets: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

/// Everything a training run depends on besides the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Serialize)]
struct AblateConfig<'a> {
    presets: &'a [String],
    split: Split,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    config: &'a RunConfig,
    steps: usize,
    history: &'a [EpochMetrics],
    val: &'a EvalReport,
}

pub fn exit_code(e: &CnmError) -> i32 {
    match e {
        CnmError::Argument(_) | CnmError::Config(_) => EXIT_USAGE,
        CnmError::Training(_) => EXIT_NUMERIC,
        CnmError::Dimension { .. }
        | CnmError::Format { .. }
        | CnmError::Data(_)
        | CnmError::Spec(_)
        | CnmError::Io(_)
        | CnmError::Json(_) => EXIT_DATA,
    }
}

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Corpus(a) => corpus_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Caption(a) => caption_cmd(a),
        Command::Trace(a) => trace_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CnmError::Argument(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CnmError::format(path.display().to_string(), e.to_string()))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn print_resolved<T: Serialize>(command: &str, config: &T) -> Result<()> {
    eprintln!("resolved {command} config:\n{}", pretty(config)?.trim_end());
    Ok(())
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, content)?;
            log::info!("wrote {}", p.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn corpus_cmd(a: CorpusArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => read_json(p)?,
        None => CorpusSpec {
            seed: env_seed()?.unwrap_or(CorpusSpec::default().seed),
            ..CorpusSpec::default()
        },
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.scenes {
        spec.n_scenes = n;
    }
    print_resolved("corpus", &spec)?;
    let corpus = generate_corpus(&spec)?;
    corpus.write_dir(&a.out)?;
    log::info!(
        "wrote {} scenes, {} captions, {} words to {}",
        corpus.scenes.len(),
        corpus.examples.len(),
        corpus.vocab.len(),
        a.out.display()
    );
    Ok(())
}

/// Defaults, then `--config`, then `CNM_SEED` when neither names a seed,
/// then the preset, then individual flags.
fn resolve_run(s: &ScheduleArgs, preset: Option<&str>, corpus: &Corpus) -> Result<RunConfig> {
    let mut run = match &s.config {
        Some(p) => read_json(p)?,
        None => RunConfig {
            preset: None,
            model: ModelConfig {
                d_r: corpus.spec.d_r,
                ..ModelConfig::desk(corpus.vocab.len())
            },
            train: TrainConfig {
                seed: env_seed()?.unwrap_or(TrainConfig::desk().seed),
                ..TrainConfig::desk()
            },
        },
    };
    if let Some(name) = preset.map(str::to_string).or(run.preset.take()) {
        Preset::parse(&name)?.apply(&mut run.model, &mut run.train);
        run.preset = Some(name);
    }
    let t = &mut run.train;
    if let Some(x) = s.seed {
        t.seed = x;
    }
    if let Some(x) = s.xe_epochs {
        t.xe_epochs = x;
    }
    if let Some(x) = s.rl_epochs {
        t.rl_epochs = x;
    }
    if let Some(x) = s.lr {
        t.lr = x;
    }
    if let Some(x) = s.batch_size {
        t.batch_size = x;
    }
    if s.captions_per_scene.is_some() {
        t.captions_per_scene = s.captions_per_scene;
    }
    if let Some(m) = s.units {
        run.model.units = m;
    }
    run.train.validate()?;
    run.model.validate()?;
    Ok(run)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let corpus = Corpus::read_dir(&a.data)?;
    let (run, resume) = match &a.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if a.preset.is_some() || a.schedule.config.is_some() {
                log::warn!("resuming: the checkpoint's configuration replaces --preset and --config");
            }
            let run = RunConfig {
                preset: a.preset.clone(),
                model: ckpt.meta.model.clone(),
                train: ckpt.meta.train.clone(),
            };
            (run, Some(ckpt))
        }
        None => (resolve_run(&a.schedule, a.preset.as_deref(), &corpus)?, None),
    };
    print_resolved("train", &run)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.json"), pretty(&run)?)?;
    let mut t = match &resume {
        Some(c) => Trainer::from_checkpoint(c, &corpus)?,
        None => Trainer::new(run.model.clone(), run.train.clone(), &corpus)?,
    };
    while !t.is_done() {
        t.run_epoch()?;
        save_checkpoint(&t.checkpoint(), &a.out.join("last.cnmt"))?;
    }
    let final_path = a.out.join("final.cnmt");
    save_checkpoint(&t.checkpoint(), &final_path)?;
    let val = evaluate(&t.model, &corpus, t.features(), Split::Val, DecodeMode::Greedy, t.config.max_len)?;
    let metrics = TrainMetrics {
        config: &run,
        steps: t.step,
        history: &t.history,
        val: &val,
    };
    fs::write(a.out.join("metrics.json"), pretty(&metrics)?)?;
    log::info!(
        "wrote {} after {} steps; val CIDEr-D {:.4}, BLEU@4 {:.4}",
        final_path.display(),
        t.step,
        val.cider_d,
        val.bleu4
    );
    Ok(())
}

/// Checkpoint plus the corpus it refers to.
fn load_model_and_corpus(m: &ModelArgs) -> Result<(Checkpoint, Corpus)> {
    let ckpt = load_checkpoint(&m.ckpt)?;
    let corpus = match &m.data {
        Some(d) => Corpus::read_dir(d)?,
        None => generate_corpus(&ckpt.meta.corpus)?,
    };
    if corpus.vocab != ckpt.meta.vocabulary {
        return Err(CnmError::Data("checkpoint vocabulary differs from the corpus vocabulary".into()));
    }
    if corpus.spec != ckpt.meta.corpus {
        log::warn!("corpus spec differs from the one the checkpoint was trained on");
    }
    Ok((ckpt, corpus))
}

#[derive(Serialize)]
struct DecodeSettings<'a> {
    ckpt: &'a Path,
    data: Option<&'a Path>,
    decode: DecodeMode,
    max_len: usize,
    split: Option<Split>,
    scene: Option<usize>,
}

fn settings<'a>(m: &'a ModelArgs, ckpt: &Checkpoint, split: Option<Split>, scene: Option<usize>) -> DecodeSettings<'a> {
    DecodeSettings {
        ckpt: &m.ckpt,
        data: m.data.as_deref(),
        decode: m.decode,
        max_len: m.max_len.unwrap_or(ckpt.meta.train.max_len),
        split,
        scene,
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (ckpt, corpus) = load_model_and_corpus(&a.model)?;
    let s = settings(&a.model, &ckpt, Some(a.split.into()), None);
    print_resolved("eval", &s)?;
    let model = ckpt.model()?;
    let report = evaluate(&model, &corpus, &feature_cache(&corpus), a.split.into(), s.decode, s.max_len)?;
    emit(a.out.as_deref(), &pretty(&report)?)
}

fn require_scene(corpus: &Corpus, id: usize) -> Result<()> {
    corpus
        .scene(id)
        .map(|_| ())
        .ok_or_else(|| CnmError::Data(format!("scene {id} not in corpus ({} scenes)", corpus.scenes.len())))
}

fn caption_cmd(a: CaptionArgs) -> Result<()> {
    let (ckpt, corpus) = load_model_and_corpus(&a.model)?;
    let split: Split = a.split.into();
    let s = settings(&a.model, &ckpt, a.scene.is_none().then_some(split), a.scene);
    print_resolved("caption", &s)?;
    let scenes: Vec<usize> = match a.scene {
        Some(id) => {
            require_scene(&corpus, id)?;
            vec![id]
        }
        None => corpus.scenes_in(split).map(|x| x.id).collect(),
    };
    let model = ckpt.model()?;
    let feats = feature_cache(&corpus);
    let mut out = String::new();
    for id in scenes {
        let tokens = decode_scene(&model, &feats[id], s.decode, s.max_len, id)?;
        out.push_str(&format!("{id}\t{}\n", corpus.vocab.decode(&strip_end(&tokens))));
    }
    emit(a.out.as_deref(), &out)
}

fn trace_cmd(a: TraceArgs) -> Result<()> {
    let (ckpt, corpus) = load_model_and_corpus(&a.model)?;
    let s = settings(&a.model, &ckpt, None, Some(a.scene));
    print_resolved("trace", &s)?;
    require_scene(&corpus, a.scene)?;
    let model = ckpt.model()?;
    let feats = feature_cache(&corpus);
    let record = trace_scene(&model, &feats[a.scene], a.scene, s.decode, s.max_len, &corpus.vocab)?;
    let text = match a.format {
        TraceFormat::Json => pretty(&record)?,
        TraceFormat::Csv => record.to_csv(),
        TraceFormat::Svg => record.to_svg(a.all_units),
    };
    emit(a.out.as_deref(), &text)
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(1),
    };
    print_resolved("gradcheck", &serde_json::json!({ "seed": seed, "composites": a.composites }))?;
    let report = run_suite(seed, a.composites)?;
    emit(a.out.as_deref(), &pretty(&report)?)?;
    if report.passed {
        log::info!("{} cases, max relative error {:.3e}", report.cases.len(), report.max_rel_error);
        Ok(())
    } else {
        Err(CnmError::Training(format!(
            "gradient check failed: max relative error {:.3e} ≥ {:e}",
            report.max_rel_error, report.tolerance
        )))
    }
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let corpus = Corpus::read_dir(&a.data)?;
    let names: Vec<String> = a
        .presets
        .clone()
        .unwrap_or_else(|| BASE_NAMES.iter().map(|s| s.to_string()).collect());
    let presets = names.iter().map(|n| Preset::parse(n)).collect::<Result<Vec<_>>>()?;
    let base = resolve_run(&a.schedule, None, &corpus)?;
    let split: Split = a.split.into();
    let cfg = AblateConfig {
        presets: &names,
        split,
        model: &base.model,
        train: &base.train,
    };
    print_resolved("ablate", &cfg)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.json"), pretty(&base)?)?;
    let table = run_grid(&presets, &base.model, &base.train, &corpus, split);
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} presets failed; see the status column", table.rows.len());
    }
    let csv = table.to_csv();
    fs::write(a.out.join("ablation.csv"), &csv)?;
    fs::write(a.out.join("ablation.json"), pretty(&table)?)?;
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cnm_core::corpus::CorpusSpec;
    use cnm_core::FusionStrategy;

    fn no_overrides() -> ScheduleArgs {
        ScheduleArgs {
            config: None,
            seed: None,
            units: None,
            xe_epochs: None,
            rl_epochs: None,
            lr: None,
            batch_size: None,
            captions_per_scene: None,
        }
    }

    #[test]
    fn flags_override_the_preset_which_overrides_defaults() {
        let corpus = generate_corpus(&CorpusSpec {
            n_scenes: 5,
            d_r: 12,
            ..CorpusSpec::default()
        })
        .unwrap();
        let run = resolve_run(&no_overrides(), Some("Col/H+L#3"), &corpus).unwrap();
        assert_eq!(run.model.strategy, FusionStrategy::Hard);
        assert_eq!((run.model.units, run.model.d_r), (3, 12));
        assert!(run.train.linguistic_loss);
        let s = ScheduleArgs {
            units: Some(2),
            seed: Some(5),
            ..no_overrides()
        };
        let run = resolve_run(&s, Some("Module/O"), &corpus).unwrap();
        assert_eq!((run.model.units, run.train.seed), (2, 5));
        assert!(!run.train.linguistic_loss);
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&CnmError::Argument("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&CnmError::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&CnmError::format("f", "r")), EXIT_DATA);
        assert_eq!(exit_code(&CnmError::Training("nan".into())), EXIT_NUMERIC);
    }
}
