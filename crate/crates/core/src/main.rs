use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gcafuse::alignment::Label;
use gcafuse::explain::{corpus_stats, integrated_gradients, render_html, render_text};
use gcafuse::io::{
    annotate_pauses, load_config, load_pairs, load_transcripts, read_transcript, validate_bundle, write_aligned,
    AlignSettings, RunConfig, Scale,
};
use gcafuse::model::{load_checkpoint, model_gradcheck, save_checkpoint, FusionStrategy, ModelConfig};
use gcafuse::synth::{align_cohort, generate_synthetic_cohort, write_cohort, SynthSpec};
use gcafuse::tensor::{op_gradcheck_suite, GradCheckOptions};
use gcafuse::train::{cross_validate, evaluate, evaluation_table, fit, metrics_table, report_json, Evaluation, Protocol};
use gcafuse::Error;

#[derive(Parser)]
#[command(name = "gcafuse", version, about = "Word-aligned audio/text fusion: alignment, training, evaluation, attribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as a dataset of bundles.
    Synth(SynthArgs),
    /// Align a dataset of bundles into token-level audio/text pairs.
    Align(AlignArgs),
    /// Insert pause marks into a transcript.
    AnnotatePauses(AnnotateArgs),
    /// Cross-validate under the configured protocol, then fit a final model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Integrated-gradients token attributions for one subject.
    Explain(ExplainArgs),
    /// Per-class pause, duration and word-count means of a dataset.
    Stats(StatsArgs),
    /// Finite-difference check of every op and of the full model.
    Gradcheck(GradcheckArgs),
    /// Check every bundle of a dataset against its manifest.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Planted,
    PauseOnly,
    ZeroSignal,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Planted)]
    preset: Preset,
    /// JSON or TOML spec; keys override the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    lexical_signal: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(clap::Args)]
struct AlignFlags {
    /// Run config (.toml or .json); its `align` table sets the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Do not insert pause tokens.
    #[arg(long)]
    no_pauses: bool,
    /// Keep punctuation emitted by the recognizer.
    #[arg(long)]
    keep_asr_punctuation: bool,
    /// Seed of the hash text embedder used when a bundle has no token embeddings.
    #[arg(long)]
    text_seed: Option<u64>,
}

#[derive(clap::Args)]
struct AlignArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: AlignFlags,
}

#[derive(clap::Args)]
struct AnnotateArgs {
    #[arg(long)]
    transcript: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    keep_asr_punctuation: bool,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Aligned directory, dataset directory or single manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: AlignFlags,
    /// `kfold<k>` or `loso`; overrides the config.
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Overrides the config's fusion strategy.
    #[arg(long)]
    fusion: Option<FusionStrategy>,
    /// Skip the final model fit on all subjects.
    #[arg(long)]
    no_final: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for eval.json and eval.tsv; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: AlignFlags,
}

#[derive(clap::Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Subject to explain; the first subject when omitted.
    #[arg(long)]
    subject: Option<String>,
    #[arg(long, default_value_t = 256)]
    steps: usize,
    /// Class whose logit is attributed; the predicted class when omitted.
    #[arg(long)]
    target: Option<Label>,
    /// Text report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    html: Option<PathBuf>,
    #[command(flatten)]
    flags: AlignFlags,
}

#[derive(clap::Args)]
struct StatsArgs {
    /// Dataset directory of bundles.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Coordinates sampled per model tensor.
    #[arg(long, default_value_t = 6)]
    coords: usize,
    /// Tokens in the random input pair.
    #[arg(long, default_value_t = 6)]
    tokens: usize,
}

#[derive(clap::Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
}

/// Exit status 1: the inputs were read but failed validation or a check.
struct Failed(String);

enum CliError {
    Usage(String),
    Failed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<Failed> for CliError {
    fn from(f: Failed) -> Self {
        CliError::Failed(f.0)
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Align(a) => align(a),
        Command::AnnotatePauses(a) => annotate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Explain(a) => explain(a),
        Command::Stats(a) => stats(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn require(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn base_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => {
            require(p)?;
            Ok(load_config(p)?)
        }
        None => Ok(RunConfig::at_scale(Scale::Desk)),
    }
}

fn align_settings(flags: &AlignFlags, cfg: &RunConfig) -> AlignSettings {
    let mut s = cfg.align;
    if flags.no_pauses {
        s.options.insert_pauses = false;
    }
    if flags.keep_asr_punctuation {
        s.options.strip_asr_punctuation = false;
    }
    if let Some(seed) = flags.text_seed {
        s.text_seed = seed;
    }
    s
}

fn synth(a: SynthArgs) -> CliResult {
    let mut spec = match a.preset {
        Preset::Planted => SynthSpec::planted(a.seed),
        Preset::PauseOnly => SynthSpec::pause_only(a.seed),
        Preset::ZeroSignal => SynthSpec::zero_signal(a.seed),
    };
    if let Some(p) = &a.spec {
        require(p)?;
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let mut base = serde_json::to_value(&spec).expect("spec serializes");
        let over: serde_json::Value = if p.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?
        };
        if let (Some(b), serde_json::Value::Object(o)) = (base.as_object_mut(), over) {
            for (k, v) in o {
                if !b.contains_key(&k) {
                    return Err(CliError::Failed(format!("{}: unknown key {k}", p.display())));
                }
                b.insert(k, v);
            }
        }
        spec = serde_json::from_value(base).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?;
        spec.seed = a.seed;
    }
    if let Some(n) = a.n_per_class {
        spec.n_per_class = n;
    }
    if let Some(s) = a.lexical_signal {
        spec.lexical_signal = s;
    }
    if let Some(d) = a.dim {
        spec.dim = d;
    }
    let subjects = write_cohort(&a.out, &spec)?;
    println!("wrote {} subjects to {}", subjects.len(), a.out.display());
    Ok(())
}

fn align(a: AlignArgs) -> CliResult {
    require(&a.data)?;
    let cfg = base_config(a.flags.config.as_deref())?;
    let settings = align_settings(&a.flags, &cfg);
    let pairs = load_pairs(&a.data, settings)?;
    write_aligned(&a.out, &pairs, settings)?;
    let tokens: usize = pairs.iter().map(|p| p.len()).sum();
    let pauses: usize = pairs.iter().map(|p| p.pause_count()).sum();
    println!("aligned {} subjects: {tokens} tokens, {pauses} pause tokens", pairs.len());
    Ok(())
}

fn annotate(a: AnnotateArgs) -> CliResult {
    require(&a.transcript)?;
    let (t, clipped) = read_transcript(&a.transcript)?;
    if clipped > 0 {
        eprintln!("warning: clipped {clipped} overlapping word end(s)");
    }
    let t = if a.keep_asr_punctuation {
        t
    } else {
        t.strip_punctuation()?.0
    };
    let text = to_json(&annotate_pauses(&t)?);
    match &a.out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train_cmd(a: TrainArgs) -> CliResult {
    require(&a.data)?;
    let mut cfg = base_config(a.flags.config.as_deref())?;
    if let Some(p) = a.protocol {
        cfg.protocol = p;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(f) = a.fusion {
        cfg.model.fusion = f;
    }
    cfg.validate()?;
    let settings = align_settings(&a.flags, &cfg);
    let data = load_pairs(&a.data, settings)?;
    let model_cfg = ModelConfig {
        input_dim: data.first().map_or(cfg.model.input_dim, |p| p.dim()),
        ..cfg.model.clone()
    };
    let report = cross_validate(&data, &model_cfg, &cfg.train, cfg.protocol, &cfg.seeds)?;
    create_dir(&a.out)?;
    let table = metrics_table(&report);
    write_file(&a.out.join("metrics.tsv"), &table)?;
    write_file(&a.out.join("report.json"), &(report_json(&report) + "\n"))?;
    print!("{table}");
    if !a.no_final {
        let outcome = fit(&data, &model_cfg, &cfg.train, cfg.seeds[0])?;
        save_checkpoint(&outcome.model, &a.out.join("model.cgna"))?;
        write_file(&a.out.join("history.json"), &to_json(&outcome.history))?;
        println!("final model: {} epochs, best epoch {}", outcome.history.len(), outcome.best_epoch);
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint: String,
    model: &'a ModelConfig,
    evaluation: &'a Evaluation,
}

fn eval_cmd(a: EvalArgs) -> CliResult {
    require(&a.checkpoint)?;
    require(&a.data)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let cfg = base_config(a.flags.config.as_deref())?;
    let data = load_pairs(&a.data, align_settings(&a.flags, &cfg))?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let ev = evaluate(&model, &data, &idx)?;
    let table = evaluation_table(&ev);
    if let Some(out) = &a.out {
        create_dir(out)?;
        let name = a.checkpoint.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let doc = EvalOutput {
            checkpoint: name,
            model: model.config(),
            evaluation: &ev,
        };
        write_file(&out.join("eval.json"), &to_json(&doc))?;
        write_file(&out.join("eval.tsv"), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn explain(a: ExplainArgs) -> CliResult {
    require(&a.checkpoint)?;
    require(&a.data)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let cfg = base_config(a.flags.config.as_deref())?;
    let data = load_pairs(&a.data, align_settings(&a.flags, &cfg))?;
    let pair = match &a.subject {
        Some(id) => data
            .iter()
            .find(|p| &p.subject_id == id)
            .ok_or_else(|| CliError::Failed(format!("subject {id} not found in {}", a.data.display())))?,
        None => data.first().ok_or_else(|| CliError::Failed("dataset is empty".into()))?,
    };
    let map = integrated_gradients(&model, pair, a.target, a.steps, None)?;
    let text = render_text(&map);
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(h) = &a.html {
        write_file(h, &render_html(&map))?;
    }
    if map.relative_gap() >= 0.01 {
        eprintln!(
            "warning: completeness gap is {:.2}% of the output gap; consider more steps",
            100.0 * map.relative_gap()
        );
    }
    Ok(())
}

fn stats(a: StatsArgs) -> CliResult {
    require(&a.data)?;
    let s = corpus_stats(&load_transcripts(&a.data)?)?;
    if a.json {
        print!("{}", to_json(&s));
    } else {
        print!("{}", s.to_table());
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let cfg = base_config(a.config.as_deref())?;
    let opts = GradCheckOptions::default();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name.to_string(), err)),
    };
    for seed in 0..a.seeds {
        for (name, r) in op_gradcheck_suite(seed, &opts, None)? {
            record(name, r.max_rel_error());
        }
        let spec = SynthSpec {
            n_per_class: 1,
            dim: cfg.model.input_dim,
            min_words: a.tokens.max(2),
            max_words: a.tokens.max(2),
            ..SynthSpec::planted(seed)
        };
        let pairs = align_cohort(&generate_synthetic_cohort(&spec)?, cfg.align)?;
        let model_cfg = ModelConfig {
            seed,
            ..cfg.model.clone()
        };
        let r = model_gradcheck(
            &model_cfg,
            &pairs[1],
            &GradCheckOptions {
                max_coords: Some(a.coords),
                seed,
                ..opts.clone()
            },
        )?;
        record(&format!("model:{}", cfg.model.fusion.short_name()), r.max_rel_error());
    }
    println!("check\tmax_rel_error\tstatus");
    let mut failed = 0;
    for (name, err) in &worst {
        let ok = *err < opts.tolerance;
        failed += usize::from(!ok);
        println!("{name}\t{err:.3e}\t{}", if ok { "ok" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(Failed(format!("{failed} check(s) above tolerance {:e}", opts.tolerance)).into());
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> CliResult {
    require(&a.data)?;
    let index = gcafuse::io::read_dataset_index(&a.data)?;
    let mut failures = 0;
    for s in &index.subjects {
        match validate_bundle(&a.data.join(s)) {
            Ok(w) if w.is_empty() => println!("{s}\tok"),
            Ok(w) => println!("{s}\tok\t{} warning(s): {}", w.len(), w.join("; ")),
            Err(e) => {
                failures += 1;
                println!("{s}\tinvalid\t{e}");
            }
        }
    }
    if failures > 0 {
        return Err(Failed(format!("{failures} invalid bundle(s)")).into());
    }
    Ok(())
}
