use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser as ClapParser, Subcommand};
use rayon::prelude::*;

use conparse::metrics::{EvalParams, Evaluation};
use conparse::model::{Parser, Variant};
use conparse::model_file::{self, ModelFile};
use conparse::tensor::ParamStore;
use conparse::trainer::{self, LogRecord, TrainConfig, TrainHooks, TrainState};
use conparse::treebank::{
    binarize, collapse_unary, parse_bracketed, prepare, BinaryTree, GoldTree, HeadTable, Token,
    Tree, Vocab,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_COUNT_MISMATCH: u8 = 4;
const EXIT_BAD_MODEL: u8 = 5;

/// Marker printed for sentences that could not be parsed.
const FAILED_PARSE: &str = "(())";

/// An error carrying the process exit code.
struct Failure(u8, anyhow::Error);

type CmdResult = Result<(), Failure>;

trait ExitWith<T> {
    fn exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure(code, e.into()))
    }
}

#[derive(ClapParser)]
#[command(name = "conparse", version, about = "Neural constituency parser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser and write its best checkpoint.
    Train(TrainArgs),
    /// Parse `word_POS` token lines into bracketed trees.
    Parse(ParseArgs),
    /// Score predicted trees against gold trees.
    Eval(EvalArgs),
    /// Summarize a model file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training treebank (bracketed trees).
    train: PathBuf,
    /// Development treebank used for early stopping.
    dev: PathBuf,
    /// `key=value` training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the best checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured variant.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Training log; defaults to `<model>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a `<model>.last` checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Head-percolation table replacing the built-in Penn Treebank rules.
    #[arg(long)]
    head_rules: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// One sentence per line as `word_POS` tokens; `-` reads standard input.
    #[arg(default_value = "-")]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Write each sentence's chart to this file.
    #[arg(long)]
    dump_chart: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    gold: PathBuf,
    pred: PathBuf,
    /// EVALB-style parameter file.
    #[arg(long, conflicts_with = "strict_eval")]
    eval_params: Option<PathBuf>,
    /// Delete nothing: every bracket and token counts.
    #[arg(long)]
    strict_eval: bool,
    /// Also print one JSON record per sentence.
    #[arg(long)]
    per_sentence: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: conparse::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn read_trees(path: &Path) -> anyhow::Result<Vec<Tree>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_bracketed(&text).with_context(|| format!("reading trees from {}", path.display()))
}

fn read_gold(path: &Path, heads: &HeadTable, cap: usize) -> anyhow::Result<Vec<GoldTree>> {
    let prepared = prepare(&read_trees(path)?, heads, cap)?;
    if prepared.skipped_chain_too_long > 0 {
        log::warn!(
            "{}: skipped {} trees with unary chains longer than {cap}",
            path.display(),
            prepared.skipped_chain_too_long
        );
    }
    if prepared.examples.is_empty() {
        return Err(anyhow!("{} has no usable trees", path.display()));
    }
    Ok(prepared.examples)
}

/// Writes the log and checkpoints as training proceeds.
struct FileHooks<'a> {
    parser: &'a Parser,
    best_path: PathBuf,
    last_path: PathBuf,
    log: BufWriter<File>,
}

impl FileHooks<'_> {
    fn save(
        &self,
        path: &Path,
        params: &ParamStore<f32>,
        state: &TrainState,
    ) -> conparse::Result<()> {
        model_file::save(path, self.parser, params, &state.to_kv())
    }
}

impl TrainHooks for FileHooks<'_> {
    fn on_eval(&mut self, record: &LogRecord) -> conparse::Result<()> {
        writeln!(self.log, "{}", record.to_json())?;
        self.log.flush()?;
        Ok(())
    }

    fn on_improve(&mut self, params: &ParamStore<f32>, state: &TrainState) -> conparse::Result<()> {
        self.save(&self.best_path, params, state)
    }

    fn on_epoch_end(&mut self, params: &ParamStore<f32>, state: &TrainState) -> conparse::Result<()> {
        self.save(&self.last_path, params, state)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut config = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .exit(EXIT_CONFIG)?;
            TrainConfig::parse(&text).exit(EXIT_CONFIG)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(v) = args.variant {
        config.model.variant = v;
    }
    config.validate().exit(EXIT_CONFIG)?;
    let heads = match &args.head_rules {
        Some(p) => {
            let text = fs::read_to_string(p).exit(EXIT_CONFIG)?;
            HeadTable::parse(&text).exit(EXIT_CONFIG)?
        }
        None => HeadTable::ptb(),
    };

    let cap = config.model.labeler.max_chain;
    let train = read_gold(&args.train, &heads, cap).exit(EXIT_DATA)?;
    let dev = read_gold(&args.dev, &heads, cap).exit(EXIT_DATA)?;

    let (parser, mut params, resume) = match &args.resume {
        Some(p) => {
            let m = model_file::load(p).exit(EXIT_BAD_MODEL)?;
            if m.parser.config != config.model {
                return Err(Failure(
                    EXIT_CONFIG,
                    anyhow!("checkpoint architecture differs from the configuration"),
                ));
            }
            let state = TrainState::from_kv(&m.extra).exit(EXIT_BAD_MODEL)?;
            (m.parser, m.params, Some(state))
        }
        None => {
            let collapsed: Vec<_> = train.iter().map(|g| g.collapsed.clone()).collect();
            let vocab = Vocab::build(&collapsed, config.min_count, config.language).exit(EXIT_DATA)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.seed);
            let (parser, mut params) =
                Parser::build::<f32>(config.model, vocab, &mut rng).exit(EXIT_CONFIG)?;
            if let Some(p) = &config.pretrained {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))
                    .exit(EXIT_DATA)?;
                let rows = parser
                    .vocab
                    .read_pretrained(&text, config.model.encoder.word_dim)
                    .exit(EXIT_DATA)?;
                log::info!("loaded {} pretrained vectors", rows.len());
                parser
                    .encoder
                    .load_pretrained(&mut params, &rows, config.freeze_pretrained)
                    .exit(EXIT_DATA)?;
            }
            (parser, params, None)
        }
    };
    for ex in train.iter().chain(&dev) {
        conparse::encoder::resolve(&ex.tokens, &parser.vocab).exit(EXIT_DATA)?;
    }
    log::info!(
        "{} training and {} dev sentences, {} parameters",
        train.len(),
        dev.len(),
        params.num_scalars()
    );

    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.model, ".log.jsonl"));
    let log_file = if resume.is_some() {
        fs::OpenOptions::new().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))
    .exit(EXIT_FAILURE)?;
    let mut hooks = FileHooks {
        parser: &parser,
        best_path: args.model.clone(),
        last_path: with_suffix(&args.model, ".last"),
        log: BufWriter::new(log_file),
    };
    let eval_params = EvalParams::default();
    let mut dev_score =
        |p: &ParamStore<f32>| Ok(trainer::evaluate(&parser, p, &dev, &eval_params)?.labeled());
    let outcome = trainer::train_loop(
        &config,
        &parser,
        &mut params,
        &train,
        &mut dev_score,
        &mut hooks,
        resume,
    )
    .exit(EXIT_FAILURE)?;
    println!(
        "best dev LF {:.2} after {} examples{}",
        outcome.state.best_dev_lf.unwrap_or(0.0),
        outcome.state.examples_seen,
        if outcome.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

/// Splits `word_POS` at the last underscore.
fn read_tokens(line: &str) -> anyhow::Result<Vec<Token>> {
    let tokens: Vec<Token> = line
        .split_whitespace()
        .map(|t| match t.rsplit_once('_') {
            Some((w, p)) if !w.is_empty() && !p.is_empty() => Ok(Token::new(w, p)),
            _ => Err(anyhow!("token `{t}` is not word_POS")),
        })
        .collect::<anyhow::Result<_>>()?;
    if tokens.is_empty() {
        return Err(anyhow!("empty line"));
    }
    Ok(tokens)
}

fn cmd_parse(args: ParseArgs) -> CmdResult {
    let ModelFile { parser, params, .. } = model_file::load(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))
        .exit(EXIT_BAD_MODEL)?;
    let mut text = String::new();
    if args.input.as_os_str() == "-" {
        io::stdin().read_to_string(&mut text).exit(EXIT_DATA)?;
    } else {
        text = fs::read_to_string(&args.input)
            .with_context(|| format!("reading {}", args.input.display()))
            .exit(EXIT_DATA)?;
    }
    let lines: Vec<&str> = text.lines().collect();
    let dump = args.dump_chart.is_some();
    let start = Instant::now();
    let results: Vec<anyhow::Result<conparse::model::Parse>> = lines
        .par_iter()
        .map(|line| Ok(parser.parse(&params, &read_tokens(line)?, dump)?))
        .collect();
    let elapsed = start.elapsed().as_secs_f64();

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut failures = 0;
    let mut charts = String::new();
    for (no, r) in results.iter().enumerate() {
        match r {
            Ok(p) => {
                writeln!(out, "{}", p.tree).exit(EXIT_FAILURE)?;
                if let Some(c) = &p.chart {
                    charts.push_str(&format!("# sentence {}\n{c}", no + 1));
                }
            }
            Err(e) => {
                failures += 1;
                log::warn!("line {}: {e:#}", no + 1);
                writeln!(out, "{FAILED_PARSE}").exit(EXIT_FAILURE)?;
            }
        }
    }
    out.flush().exit(EXIT_FAILURE)?;
    if let Some(path) = &args.dump_chart {
        fs::write(path, charts).exit(EXIT_FAILURE)?;
    }
    eprintln!(
        "parsed {} sentences in {:.3} s ({:.1} sentences/s)",
        lines.len(),
        elapsed,
        lines.len() as f64 / elapsed.max(1e-9)
    );
    if !lines.is_empty() && failures == lines.len() {
        return Err(Failure(EXIT_DATA, anyhow!("no line could be parsed")));
    }
    Ok(())
}

fn binary_form(t: &Tree, heads: &HeadTable) -> Option<BinaryTree> {
    binarize(&collapse_unary(t, usize::MAX).ok()?, heads).ok()
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let params = if args.strict_eval {
        EvalParams::strict()
    } else if let Some(p) = &args.eval_params {
        let text = fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .exit(EXIT_CONFIG)?;
        EvalParams::parse(&text).exit(EXIT_CONFIG)?
    } else {
        EvalParams::default()
    };
    let gold = read_trees(&args.gold).exit(EXIT_DATA)?;
    let pred = read_trees(&args.pred).exit(EXIT_DATA)?;
    if gold.len() != pred.len() {
        return Err(Failure(
            EXIT_COUNT_MISMATCH,
            anyhow!("{} gold trees but {} predicted trees", gold.len(), pred.len()),
        ));
    }
    let heads = HeadTable::ptb();
    let mut eval = Evaluation::new();
    for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
        let binary = binary_form(g, &heads).zip(binary_form(p, &heads));
        eval.add(g, p, binary.as_ref().map(|(a, b)| (a, b)), &params)
            .with_context(|| format!("sentence {}", i + 1))
            .exit(EXIT_DATA)?;
    }
    print!("{}", eval.report());
    if args.per_sentence {
        print!("{}", eval.sentence_records());
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> CmdResult {
    let m = model_file::load(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))
        .exit(EXIT_BAD_MODEL)?;
    let v = &m.parser.vocab;
    println!("variant      {}", m.parser.variant());
    println!("language     {}", v.language);
    println!(
        "vocab        words {}  chars {}  pos {}  labels {}  unk classes {}",
        v.num_words(),
        v.num_chars(),
        v.num_pos(),
        v.num_labels(),
        v.num_unk_classes()
    );
    println!("parameters   {}", m.params.num_scalars());
    let extra: BTreeMap<_, _> = m.extra.iter().collect();
    for (k, val) in extra {
        println!("meta         {k}={val}");
    }
    for (_, p) in m.params.iter() {
        let dims: Vec<String> = p.shape.iter().map(usize::to_string).collect();
        println!(
            "tensor       {} [{}]{}",
            p.name,
            dims.join("x"),
            if p.trainable { "" } else { " frozen" }
        );
    }
    Ok(())
}
