use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use brevibench::categories::{distribution, load_annotations, pairwise_f, GroupBy};
use brevibench::corpus::{load_corpus_with, write_corpus, Split};
use brevibench::lengthmodel::{evaluate, train, ExternalPredictor, LengthModel, LengthPredictor};
use brevibench::llmclient::read_run_file;
use brevibench::metrics::{read_scores, score_run, write_scores, ScoreOptions};
use brevibench::pipeline::{load_config, pipeline, read_energy_file, run_only, validate};
use brevibench::promptengine::{build_prompt, PromptDeps, Strategy};
use brevibench::report::{
    aggregate, parse_dimensions, reduction_vs_default, render, render_reductions, Format,
};
use brevibench::retrieval::{build_index, top_k, Bm25Index, Bm25Params};
use brevibench::tokenize::fill_target_lengths;

/// Measure and compress LLM response length, quality, and inference energy.
#[derive(Parser)]
#[command(name = "brevibench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw QA file into the canonical corpus format.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        /// Dataset label for records that do not carry one.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        /// Split assigned to records without one (train|validation|test).
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Build or query a BM25+ index.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Train or evaluate the response-length predictor.
    PredictLength {
        #[command(subcommand)]
        command: PredictLengthCommand,
    },
    /// Inspect the exact prompt a strategy produces.
    Prompt {
        #[command(subcommand)]
        command: PromptCommand,
    },
    /// Execute the generation phase of a run config (no scoring).
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a run file against its corpus.
    Score {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Optional per-record energy file (JSONL: {"id", "energy_mwh"}).
        #[arg(long)]
        energy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Print the summary as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Inter-annotator agreement between two annotation files.
    Agreement {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Category distribution of an annotation file.
    Catdist {
        #[arg(long)]
        annotations: PathBuf,
        /// overall|model|dataset
        #[arg(long, default_value = "overall")]
        group_by: String,
    },
    /// Aggregate score files into a summary table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, default_value = "model,dataset,strategy")]
        group_by: String,
        /// markdown_table|csv
        #[arg(long, default_value = "markdown_table")]
        format: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also report length/energy reductions vs the default strategy.
        #[arg(long)]
        reductions: bool,
    },
    /// Run the full pipeline (generate → score → report) from a config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Index the question texts of a pool corpus.
    Build {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank pool records against a query.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum PredictLengthCommand {
    Train {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Report MAE and R² of a model over a corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
}

#[derive(Subcommand)]
enum PromptCommand {
    /// Print the exact prompt for one record under a strategy.
    Preview {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        record: String,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        external_predictor: Option<String>,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    match s.to_ascii_lowercase().as_str() {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => bail!("invalid split \"{other}\" (train|validation|test)"),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest {
            input,
            dataset,
            out,
            split,
        } => {
            let default_split = parse_split(&split)?;
            let corpus = load_corpus_with(&input, &dataset, default_split)
                .with_context(|| format!("ingesting {}", input.display()))?;
            write_corpus(&corpus, &out)?;
            println!("ingested {} records into {}", corpus.len(), out.display());
        }
        Command::Index { command } => match command {
            IndexCommand::Build { pool, out } => {
                let mut pool_corpus = load_corpus_with(&pool, "pool", Split::Train)?;
                fill_target_lengths(&mut pool_corpus);
                let index = build_index(&pool_corpus, Bm25Params::default())?;
                index.save(&out)?;
                println!(
                    "indexed {} documents (avgdl {:.2}) into {}",
                    index.n_docs,
                    index.avgdl,
                    out.display()
                );
            }
            IndexCommand::Query { index, text, k } => {
                let index = Bm25Index::load(&index)?;
                for (rank, (id, score)) in top_k(&index, &text, k)?.iter().enumerate() {
                    println!("{:>3}. {id}  {score:.6}", rank + 1);
                }
            }
        },
        Command::PredictLength { command } => match command {
            PredictLengthCommand::Train { pool, out, lambda } => {
                let mut pool_corpus = load_corpus_with(&pool, "pool", Split::Train)?;
                fill_target_lengths(&mut pool_corpus);
                let model = train(&pool_corpus, lambda)?;
                model.save(&out)?;
                let stats = evaluate(&model, &pool_corpus)?;
                println!(
                    "trained on {} records (lambda {lambda}); train MAE {:.2}, R² {:.4}; saved to {}",
                    model.record_count,
                    stats.mae,
                    stats.r2,
                    out.display()
                );
            }
            PredictLengthCommand::Eval { model, corpus } => {
                let model = LengthModel::load(&model)?;
                let mut corpus = load_corpus_with(&corpus, "eval", Split::Test)?;
                fill_target_lengths(&mut corpus);
                let stats = evaluate(&model, &corpus)?;
                println!("n {}  MAE {:.3}  R² {:.4}", stats.n, stats.mae, stats.r2);
            }
        },
        Command::Prompt { command } => match command {
            PromptCommand::Preview {
                corpus,
                record,
                strategy,
                index,
                pool,
                model,
                external_predictor,
            } => {
                let mut corpus = load_corpus_with(&corpus, "corpus", Split::Test)?;
                fill_target_lengths(&mut corpus);
                let target = corpus
                    .find(&record)
                    .with_context(|| format!("record '{record}' not found"))?
                    .clone();
                let strategy: Strategy = strategy.parse()?;
                let index = index.map(|p| Bm25Index::load(&p)).transpose()?;
                let pool = pool
                    .map(|p| -> Result<_> {
                        let mut pool = load_corpus_with(&p, "pool", Split::Train)?;
                        fill_target_lengths(&mut pool);
                        Ok(pool)
                    })
                    .transpose()?;
                let predictor = match (model, external_predictor) {
                    (Some(path), _) => Some(LengthPredictor::Builtin(LengthModel::load(&path)?)),
                    (None, Some(url)) => {
                        Some(LengthPredictor::External(ExternalPredictor::new(url)))
                    }
                    (None, None) => None,
                };
                let deps = PromptDeps {
                    index: index.as_ref(),
                    pool: pool.as_ref(),
                    predictor: predictor.as_ref(),
                };
                let spec = build_prompt(&target, &strategy, &deps)?;
                println!("{}", spec.prompt_text);
            }
        },
        Command::Run { config } => {
            let config = load_config(&config)?;
            let batch = run_only(&config)?;
            let failed = batch.entries.iter().filter(|e| e.error.is_some()).count();
            println!(
                "ran {} records ({failed} failed); run file: {}",
                batch.entries.len(),
                batch.run_file.display()
            );
            if let Some(trace) = &batch.trace {
                println!("energy: {:.3} mWh total", trace.total_mwh);
            }
        }
        Command::Score {
            run,
            corpus,
            energy,
            out,
            json,
        } => {
            let entries = read_run_file(&run)?;
            let corpus = load_corpus_with(&corpus, "corpus", Split::Test)?;
            let energy_map: Option<BTreeMap<String, f64>> =
                energy.map(|p| read_energy_file(&p)).transpose()?;
            let scored = score_run(
                &entries,
                &corpus,
                energy_map.as_ref(),
                &ScoreOptions::default(),
            )?;
            write_scores(&scored.cards, &out)?;
            let n = scored.cards.len();
            let mean_f1 = if n > 0 {
                scored.cards.iter().map(|c| c.rouge.f1).sum::<f64>() / n as f64
            } else {
                0.0
            };
            if json {
                println!(
                    "{}",
                    serde_json::json!({
                        "scored": n,
                        "excluded": scored.excluded,
                        "mean_rouge_f1": mean_f1,
                        "out": out.display().to_string(),
                    })
                );
            } else {
                println!(
                    "scored {n} records ({} excluded); mean ROUGE-L F1 {mean_f1:.3}; wrote {}",
                    scored.excluded,
                    out.display()
                );
            }
        }
        Command::Agreement { a, b } => {
            let first = load_annotations(&a)?;
            let second = load_annotations(&b)?;
            let f = pairwise_f(&first, &second)?;
            println!("pairwise macro F: {f:.3} over {} responses", first.len());
        }
        Command::Catdist {
            annotations,
            group_by,
        } => {
            let annotations = load_annotations(&annotations)?;
            let group_by: GroupBy = group_by.parse().map_err(anyhow::Error::msg)?;
            println!("group,category,fraction");
            for (group, fractions) in distribution(&annotations, group_by) {
                for (category, fraction) in fractions {
                    println!("{group},{},{fraction:.3}", category.name());
                }
            }
        }
        Command::Report {
            scores,
            group_by,
            format,
            out,
            reductions,
        } => {
            let mut cards = Vec::new();
            for path in &scores {
                cards.extend(read_scores(path)?);
            }
            let dimensions = parse_dimensions(&group_by).map_err(anyhow::Error::msg)?;
            let format: Format = format.parse().map_err(anyhow::Error::msg)?;
            let rows = aggregate(&cards, &dimensions);
            let mut text = render(&rows, format)?;
            if reductions {
                let reds = reduction_vs_default(&rows)?;
                if !reds.is_empty() {
                    text.push('\n');
                    text.push_str(&render_reductions(&reds, format)?);
                }
            }
            match out {
                Some(path) => {
                    std::fs::write(&path, &text)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
        }
        Command::Pipeline { config } => {
            let config = load_config(&config)?;
            let findings = validate(&config);
            if !findings.is_empty() {
                for finding in &findings {
                    eprintln!("config problem - {finding}");
                }
                bail!("{} config problem(s)", findings.len());
            }
            let outcome = pipeline(&config)?;
            println!(
                "pipeline complete: {} records ({} failed)",
                outcome.n_records, outcome.n_failed
            );
            if let Some(mwh) = outcome.total_mwh {
                println!("energy: {mwh:.3} mWh total");
            }
            println!("report: {}", outcome.report_md.display());
            println!("manifest: {}", outcome.manifest_file.display());
        }
    }
    Ok(())
}
