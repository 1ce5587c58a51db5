use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use docquery::boise::{decode_labels, viterbi_decode, NUM_LABELS};
use docquery::config::ConfigMap;
use docquery::corpus::{read_corpus, validate_document, write_corpus, CorpusGroup};
use docquery::miner::{mine_corpus, read_page_dir};
use docquery::pipeline::{
    apply_model_keys, apply_synthetic_keys, apply_train_keys, build_vocab, run_pipeline, ModelShape,
    PipelineConfig,
};
use docquery::query::{build_finetune_query, PromptMode};
use docquery::synthetic::{gen_synthetic, write_synthetic, SyntheticSpec};
use docquery::tagger::{load_params, save_params, ModelParams};
use docquery::trainer::{
    extract, finetune_groups, pretrain, subsample_fewshot, write_trace, zero_shot_eval, TrainConfig,
};
use docquery::{Error, Result};

/// Query-driven entity extraction from positioned document tokens.
#[derive(Parser)]
#[command(name = "docquery", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark (web pages, source and target corpora).
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mine a directory of HTML pages into schema-grouped JSON lines.
    Mine {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train on mined groups.
    Pretrain(TrainArgs),
    /// Fine-tune on a single-schema corpus.
    Finetune(TrainArgs),
    /// Zero-shot evaluation on a target corpus.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        params_in: PathBuf,
        #[arg(long, default_value = "dual")]
        mode: PromptMode,
        /// key = value file mapping target entity types to fine-tuning names.
        #[arg(long)]
        entity_map: Option<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Draw a few-shot subsample of a corpus.
    Fewshot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every prompt/pre-training arm end to end.
    Pipeline {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Viterbi-decode a whitespace-separated emission matrix with five
    /// columns (B O I S E); `-` reads stdin.
    DecodeDebug {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Tag every document of a corpus and write the predicted spans as a
    /// corpus file.
    Predict {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        params_in: PathBuf,
        #[arg(long, default_value = "dual")]
        mode: PromptMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter count and tensor norms of a parameter file.
    ParamsSummary {
        #[arg(long)]
        params_in: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from these parameters instead of a fresh model.
    #[arg(long)]
    params_in: Option<PathBuf>,
    #[arg(long)]
    params_out: PathBuf,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Extra corpora whose words join a fresh model's vocabulary.
    #[arg(long)]
    vocab_corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 3,
        Error::Corpus { .. }
        | Error::Span(_)
        | Error::IllegalLabels { .. }
        | Error::EmptyEmissions
        | Error::Url { .. }
        | Error::ParamFile(_)
        | Error::SequenceTooLong { .. }
        | Error::Invalid(_) => 2,
        _ => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigMap> {
    path.map(ConfigMap::load)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn validated(path: &Path) -> Result<Vec<CorpusGroup>> {
    let groups = read_corpus(path)?;
    for group in &groups {
        for doc in &group.documents {
            if let Some(v) = validate_document(doc, Some(&group.entity_types)).first() {
                return Err(Error::Invalid(format!(
                    "{}: document {}: {v}",
                    path.display(),
                    doc.doc_id
                )));
            }
        }
    }
    Ok(groups)
}

fn train(args: TrainArgs, mut tc: TrainConfig) -> Result<()> {
    let mut c = load_config(args.config.as_deref())?;
    tc.seed = args.seed;
    apply_train_keys(&mut c, "", &mut tc)?;
    let mut shape = ModelShape::default();
    apply_model_keys(&mut c, &mut shape)?;
    c.finish()?;

    let groups = validated(&args.input)?;
    let params = match &args.params_in {
        Some(p) => load_params(p)?,
        None => {
            let extra = args
                .vocab_corpus
                .iter()
                .map(read_corpus)
                .collect::<Result<Vec<_>>>()?;
            let all: Vec<&CorpusGroup> = groups.iter().chain(extra.iter().flatten()).collect();
            let vocab = build_vocab(&all, &shape);
            ModelParams::init(shape.config(&vocab), vocab, args.seed)?
        }
    };
    let out = match tc.stage {
        docquery::trainer::Stage::Pretrain => pretrain(params, &groups, &tc)?,
        docquery::trainer::Stage::Finetune => finetune_groups(params, &groups, &tc)?,
    };
    save_params(&out.params, &args.params_out)?;
    if let Some(path) = &args.trace_out {
        write_trace(&out.trace, path)?;
    }
    if let Some(last) = out.trace.last() {
        log::info!("{} steps, final loss {last:.4}", out.trace.len());
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<Vec<[f64; NUM_LABELS]>> {
    let text = if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Error::io(path, e))?;
        s
    } else {
        fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Invalid(format!("line {}: {e}", i + 1)))?;
        let row: [f64; NUM_LABELS] = values.try_into().map_err(|v: Vec<f64>| {
            Error::Invalid(format!(
                "line {}: expected {NUM_LABELS} values, found {}",
                i + 1,
                v.len()
            ))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { out, config, seed } => {
            let mut c = load_config(config.as_deref())?;
            let mut spec = SyntheticSpec {
                seed,
                ..SyntheticSpec::default()
            };
            apply_synthetic_keys(&mut c, &mut spec)?;
            c.finish()?;
            let data = gen_synthetic(&spec)?;
            let paths = write_synthetic(&data, &out)?;
            println!(
                "pages {}\nsource {}\ntarget {}",
                paths.pages_dir.display(),
                paths.source.display(),
                paths.target.display()
            );
        }
        Command::Mine { input, out } => {
            let groups = mine_corpus(read_page_dir(&input)?);
            write_corpus(&groups, &out)?;
            let docs: usize = groups.iter().map(|g| g.documents.len()).sum();
            println!("{} groups, {docs} documents", groups.len());
        }
        Command::Pretrain(args) => train(args, TrainConfig::pretrain())?,
        Command::Finetune(args) => train(args, TrainConfig::finetune())?,
        Command::Eval {
            input,
            params_in,
            mode,
            entity_map,
            report_out,
        } => {
            let params = load_params(&params_in)?;
            let groups = validated(&input)?;
            let [target] = groups.as_slice() else {
                return Err(Error::Invalid(format!(
                    "target corpus must hold one schema, found {}",
                    groups.len()
                )));
            };
            let map = match entity_map {
                Some(p) => {
                    let mut c = ConfigMap::load(&p)?;
                    let mut map = BTreeMap::new();
                    for e in &target.entity_types {
                        if let Some(v) = c.take_string(e) {
                            map.insert(e.clone(), v);
                        }
                    }
                    c.finish()?;
                    Some(map)
                }
                None => None,
            };
            let report = zero_shot_eval(&params, target, map.as_ref(), mode)?;
            print!("{}", report.table());
            if let Some(p) = report_out {
                write_text(&p, &report.table())?;
                write_text(&p.with_extension("json"), &report.to_json())?;
            }
        }
        Command::Fewshot { input, out, k, seed } => {
            let groups = validated(&input)?;
            let [corpus] = groups.as_slice() else {
                return Err(Error::Invalid(format!(
                    "corpus must hold one schema, found {}",
                    groups.len()
                )));
            };
            let sample = subsample_fewshot(corpus, k, seed)?;
            write_corpus(std::slice::from_ref(&sample), &out)?;
        }
        Command::Pipeline {
            workdir,
            config,
            seed,
        } => {
            let c = load_config(config.as_deref())?;
            let cfg = PipelineConfig::from_map(c, seed)?;
            let out = run_pipeline(&cfg, &workdir)?;
            print!("{}", out.comparison_table());
            println!(
                "identity transfer (pretrain+dual) macro-F1 {:.4}",
                out.identity.macro_f1
            );
        }
        Command::DecodeDebug { input } => {
            let rows = read_matrix(&input)?;
            let labels = viterbi_decode(&rows)?;
            let symbols: Vec<String> = labels.0.iter().map(|l| l.to_string()).collect();
            println!("{}", symbols.join(" "));
            for (s, e) in decode_labels(&labels)? {
                println!("span {s} {e}");
            }
        }
        Command::Predict {
            input,
            params_in,
            mode,
            out,
        } => {
            let params = load_params(&params_in)?;
            let mut groups = validated(&input)?;
            for group in &mut groups {
                let queries: Vec<(String, docquery::query::Query)> = group
                    .entity_types
                    .iter()
                    .map(|e| (e.clone(), build_finetune_query(e, &params.vocab).with_mode(mode)))
                    .collect();
                for doc in &mut group.documents {
                    let encoded = params.encode(doc);
                    let mut spans = Vec::new();
                    for (entity, query) in &queries {
                        spans.extend(extract(&params, query, &encoded, entity)?);
                    }
                    spans.sort_by(|a, b| (a.start, &a.entity_type).cmp(&(b.start, &b.entity_type)));
                    doc.spans = spans;
                }
            }
            write_corpus(&groups, &out)?;
        }
        Command::ParamsSummary { params_in } => {
            print!("{}", load_params(&params_in)?.summary());
        }
    }
    Ok(())
}
