use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polyplan::config::RunConfig;
use polyplan::corpus::{read_documents, run_pair_pipeline, run_pipeline, PipelineResources, Stage};
use polyplan::mixture::{allocate, read_language_stats, repetition_report};
use polyplan::report::{self, Format, Prediction};
use polyplan::scaling_law::{fit_by_domain, read_laws, read_observations, recommend_weight, write_laws};
use polyplan::tokenizer::{format_chat, pack, read_conversations, FertilityReport, TokenizerModel, TrainOptions};
use polyplan::train_plan::{count_params, lr_at, schedule_table, ScheduleKind};
use polyplan::{Error, Result};

#[derive(Parser)]
#[command(name = "polyplan", version, about = "Planning toolkit for multilingual LLM pretraining")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["table", "records"], default_value = "table")]
    format: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads for `filter`.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the joint scaling law per test domain.
    Fit {
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Where to write the fitted laws.
        #[arg(long)]
        laws: Option<PathBuf>,
    },
    /// Predict loss from fitted laws.
    Predict {
        #[arg(long)]
        laws: Option<PathBuf>,
        #[arg(long)]
        n_params: Option<f64>,
        /// Mixture weight; repeatable.
        #[arg(long = "weight", required = true)]
        weights: Vec<f64>,
        /// Only this domain; all laws otherwise.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Recommend a mixture weight for the target domain.
    Recommend {
        #[arg(long)]
        laws: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        n_params: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<f64>>,
    },
    /// Allocate the token budget of one training phase.
    Plan {
        #[arg(long)]
        phase: Option<String>,
        #[arg(long)]
        language_stats: Option<PathBuf>,
        #[arg(long)]
        budget_tokens: Option<u64>,
    },
    /// Run the corpus filtering pipeline.
    Filter {
        /// JSON-lines input; repeatable.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
        /// Inputs are sentence pairs.
        #[arg(long)]
        pairs: bool,
    },
    /// Train a byte-fallback BPE tokenizer.
    TokenizerTrain {
        /// JSON-lines documents; repeatable.
        #[arg(long = "corpus")]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Where to write the tokenizer.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Encode text (from the argument or stdin), or decode ids.
    TokenizerEncode {
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        /// Recognise control-token surfaces in the text.
        #[arg(long)]
        allow_control: bool,
        /// Treat the input as whitespace-separated ids and print the text.
        #[arg(long)]
        decode: bool,
        text: Option<String>,
    },
    /// Pieces per word, per tokenizer and language.
    Fertility {
        /// Tokenizer artifact; repeatable.
        #[arg(long = "tokenizer")]
        tokenizers: Vec<PathBuf>,
        #[arg(long = "corpus")]
        corpus: Vec<PathBuf>,
        /// One row over all documents instead of one per language.
        #[arg(long)]
        pooled: bool,
    },
    /// Format conversations into token ids and loss masks.
    ChatFormat {
        /// JSON lines, one array of {"role","content"} objects per line.
        input: PathBuf,
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        /// Pack the sequences into `max_len` windows.
        #[arg(long)]
        pack: bool,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        truncate: bool,
    },
    /// Sample the learning-rate schedule.
    Schedule {
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        total_steps: Option<u64>,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// Print the rate at these steps instead; repeatable.
        #[arg(long = "step")]
        steps: Vec<u64>,
    },
    /// Parameter counts of the configured model shape.
    Params,
}

fn required(value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    value
        .clone()
        .ok_or_else(|| Error::validation(key, "required; set it in the config file, environment or flags"))
}

fn required_list(value: &[PathBuf], key: &str) -> Result<()> {
    if value.is_empty() {
        return Err(Error::validation(key, "at least one path is required"));
    }
    Ok(())
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Defaults, then the config file, then `POLYPLAN_*` path variables, then
/// flags.
fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.paths.apply_env(|k| std::env::var(k).ok());
    set(&mut cfg.seed, cli.global.seed);
    set(&mut cfg.worker_count, cli.global.workers);
    let p = &mut cfg.paths;
    match &cli.command {
        Command::Fit { observations, laws } => {
            set(&mut p.observations, observations.clone().map(Some));
            set(&mut p.laws, laws.clone().map(Some));
        }
        Command::Predict { laws, n_params, .. } => {
            set(&mut p.laws, laws.clone().map(Some));
            set(&mut cfg.recommend.n_params, *n_params);
        }
        Command::Recommend { laws, target, n_params, candidates } => {
            set(&mut p.laws, laws.clone().map(Some));
            set(&mut cfg.recommend.target_domain, target.clone());
            set(&mut cfg.recommend.n_params, *n_params);
            set(&mut cfg.recommend.candidates, candidates.clone());
        }
        Command::Plan { phase, language_stats, budget_tokens } => {
            set(&mut p.language_stats, language_stats.clone().map(Some));
            set(&mut cfg.budget.budget_tokens, budget_tokens.map(Some));
            if let Some(ph) = phase {
                cfg.budget.phase = ph.parse()?;
            }
        }
        Command::Filter { inputs, output, stats, stages, pairs } => {
            if !inputs.is_empty() {
                p.inputs = inputs.clone();
            }
            set(&mut p.output, output.clone().map(Some));
            set(&mut p.stats, stats.clone().map(Some));
            if let Some(s) = stages {
                cfg.pipeline.stages = s.iter().map(|s| s.parse()).collect::<Result<Vec<Stage>>>()?;
            }
            cfg.pipeline.pairs |= *pairs;
        }
        Command::TokenizerTrain { corpus, vocab_size, output } => {
            if !corpus.is_empty() {
                p.corpus = corpus.clone();
            }
            set(&mut p.tokenizer, output.clone().map(Some));
            set(&mut cfg.tokenizer.vocab_size, *vocab_size);
        }
        Command::TokenizerEncode { tokenizer, .. } => set(&mut p.tokenizer, tokenizer.clone().map(Some)),
        Command::Fertility { corpus, pooled, .. } => {
            if !corpus.is_empty() {
                p.corpus = corpus.clone();
            }
            cfg.tokenizer.per_language &= !pooled;
        }
        Command::ChatFormat { tokenizer, max_len, truncate, .. } => {
            set(&mut p.tokenizer, tokenizer.clone().map(Some));
            set(&mut cfg.tokenizer.max_len, *max_len);
            cfg.tokenizer.truncate |= *truncate;
        }
        Command::Schedule { kind, total_steps, .. } => {
            if let Some(k) = kind {
                cfg.schedule.kind = k.parse::<ScheduleKind>()?;
            }
            set(&mut cfg.schedule.total_steps, *total_steps);
        }
        Command::Params => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_stdin() -> Result<String> {
    let mut s = String::new();
    io::stdin().read_to_string(&mut s).map_err(|e| Error::io("<stdin>", e))?;
    Ok(s)
}

fn tokenizer_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn run(cli: &Cli) -> Result<String> {
    let cfg = load_config(cli)?;
    let format: Format = cli.global.format.parse()?;
    let paths = &cfg.paths;
    match &cli.command {
        Command::Fit { .. } => {
            let obs = read_observations(&required(&paths.observations, "paths.observations")?)?;
            let reports = fit_by_domain(&obs, &cfg.scaling)?;
            if let Some(out) = &paths.laws {
                let laws = reports.iter().map(|(d, r)| (d.clone(), r.params.clone())).collect();
                write_laws(out, &laws)?;
            }
            Ok(match format {
                Format::Table => report::fit_table(&reports),
                Format::Records => report::fit_records(&reports),
            })
        }
        Command::Predict { weights, domain, .. } => {
            let laws = read_laws(&required(&paths.laws, "paths.laws")?)?;
            let selected: Vec<_> = match domain {
                Some(d) => vec![laws
                    .get(d)
                    .ok_or_else(|| Error::validation("domain", format!("no law for `{d}`")))?],
                None => laws.values().collect(),
            };
            let n = cfg.recommend.n_params;
            let mut preds = Vec::new();
            for law in selected {
                for &w in weights {
                    preds.push(Prediction { domain: law.domain_tag.clone(), n_params: n, weight: w, loss: law.predict(n, w)? });
                }
            }
            Ok(report::predict_report(&preds, format))
        }
        Command::Recommend { .. } => {
            let laws = read_laws(&required(&paths.laws, "paths.laws")?)?;
            let r = &cfg.recommend;
            let rec = recommend_weight(&laws, &r.target_domain, &r.candidates, r.n_params, r.gain_epsilon, r.harm_delta)?;
            Ok(report::recommend_report(&rec, format))
        }
        Command::Plan { .. } => {
            let stats = read_language_stats(&required(&paths.language_stats, "paths.language_stats")?)?;
            let phase = cfg.budget.phase;
            let budget = cfg.budget.phase_budget(phase, cfg.mixture.annealing_fraction_of_steps);
            let plan = allocate(budget, &stats, &cfg.mixture, phase)?;
            Ok(match format {
                Format::Table => report::plan_table(&plan, &repetition_report(&plan, &stats, &cfg.mixture)?),
                Format::Records => report::plan_records(&plan),
            })
        }
        Command::Filter { .. } => {
            required_list(&paths.inputs, "paths.inputs")?;
            let output = required(&paths.output, "paths.output")?;
            let report = if cfg.pipeline.pairs {
                run_pair_pipeline(&paths.inputs, &output, &cfg.filter, cfg.worker_count)?
            } else {
                let resources = PipelineResources::load(
                    &cfg.pipeline.stages,
                    &paths.langid_seeds,
                    &paths.lm_corpora,
                    &paths.lm_calibration,
                    &cfg.filter,
                    cfg.seed,
                )?;
                run_pipeline(&paths.inputs, &output, &cfg.pipeline.stages, &cfg.filter, &resources, cfg.worker_count)?
            };
            if let Some(stats) = &paths.stats {
                report.write_stats(stats)?;
            }
            for msg in &report.error_samples {
                eprintln!("warning: {msg}");
            }
            Ok(report::filter_report(&report, format))
        }
        Command::TokenizerTrain { .. } => {
            required_list(&paths.corpus, "paths.corpus")?;
            let out = required(&paths.tokenizer, "paths.tokenizer")?;
            let docs = read_documents(&paths.corpus)?;
            let opts = TrainOptions { vocab_size: cfg.tokenizer.vocab_size, control_tokens: cfg.tokenizer.control_tokens.clone() };
            let model = TokenizerModel::train(docs.iter().map(|d| d.text.as_str()), &opts)?;
            model.save(&out)?;
            Ok(format!(
                "# {}\nvocab_size: {}\nmerges: {}\noutput: {}\n",
                polyplan::tokenizer::TOKENIZER_SCHEMA,
                model.vocab_size(),
                model.merge_count(),
                out.display()
            ))
        }
        Command::TokenizerEncode { allow_control, decode, text, .. } => {
            let model = TokenizerModel::load(&required(&paths.tokenizer, "paths.tokenizer")?)?;
            let input = match text {
                Some(t) => t.clone(),
                None => read_stdin()?,
            };
            if *decode {
                let ids = input
                    .split_whitespace()
                    .map(|s| s.parse::<u32>().map_err(|e| Error::validation("ids", format!("`{s}`: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(model.decode(&ids)? + "\n");
            }
            Ok(report::encode_report(&model, &model.encode(&input, *allow_control), format))
        }
        Command::Fertility { tokenizers, .. } => {
            let tokenizers = if tokenizers.is_empty() {
                vec![required(&paths.tokenizer, "paths.tokenizer")?]
            } else {
                tokenizers.clone()
            };
            required_list(&paths.corpus, "paths.corpus")?;
            let docs = read_documents(&paths.corpus)?;
            let corpus_name = paths.corpus.iter().map(|p| tokenizer_name(p)).collect::<Vec<_>>().join("+");
            let mut reports = Vec::new();
            for t in &tokenizers {
                let model = TokenizerModel::load(t)?;
                reports.push(FertilityReport::compute(&model, &tokenizer_name(t), &corpus_name, &docs, cfg.tokenizer.per_language)?);
            }
            Ok(report::fertility_report(&reports, format))
        }
        Command::ChatFormat { input, pack: do_pack, .. } => {
            let model = TokenizerModel::load(&required(&paths.tokenizer, "paths.tokenizer")?)?;
            let seqs = read_conversations(input)?
                .iter()
                .map(|c| format_chat(c, &model))
                .collect::<Result<Vec<_>>>()?;
            let packs = if *do_pack { Some(pack(&seqs, cfg.tokenizer.max_len, cfg.tokenizer.truncate)?) } else { None };
            report::chat_report(&model, &seqs, packs.as_deref(), format)
        }
        Command::Schedule { resolution, steps, .. } => {
            let points = if steps.is_empty() {
                schedule_table(&cfg.schedule, *resolution)?
            } else {
                steps.iter().map(|&s| Ok((s, lr_at(&cfg.schedule, s)?))).collect::<Result<Vec<_>>>()?
            };
            Ok(report::schedule_report(&points, format))
        }
        Command::Params => Ok(report::params_report(&count_params(&cfg.model)?, format)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let mut stdout = io::stdout().lock();
            match stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
