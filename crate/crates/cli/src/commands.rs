use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use coder_forge::contrastive::{infonce_grad, infonce_loss};
use coder_forge::corpus::{ingest_corpus, read_samples, write_samples, IngestOptions, QueryPositivePair};
use coder_forge::curriculum::{
    difficulty_filter, e5_simple_filter, plan_stages, write_manifest, DataSourceEntry, DataSourceKind,
    DifficultyOptions,
};
use coder_forge::eval::{dedup_benchmark, evaluate, load_benchmark, write_benchmark, write_run, EvalOptions, TextRecord};
use coder_forge::gateway::AnnotationLabel;
use coder_forge::jsonl::{read_jsonl, JsonlWriter};
use coder_forge::prompt::default_seeds;
use coder_forge::registry::{write_bundled, MajorTaskType, NaturalLanguage};
use coder_forge::synth::{brainstorm_tasks, mine_pairs, run_synthesis, write_review, SynthesisConfig, SynthesisPaths};
use coder_forge::{LossConfig, LossInstance};
use serde_json::{json, Value};

use crate::{
    BrainstormArgs, CheckLossArgs, DedupArgs, EvalArgs, FilterArgs, MineArgs, Outcome, PlanArgs, SynthArgs,
    ValidateArgs,
};

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_translation_pair(s: &str) -> Result<(String, String)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("translation pair {s:?} is not SRC:TGT"))?;
    Ok((a.trim().to_string(), b.trim().to_string()))
}

pub fn synth(a: SynthArgs) -> Result<Outcome> {
    let registry = a.registry.load()?;
    let natural_languages = a
        .natural_languages
        .iter()
        .map(|n| NaturalLanguage::parse(n).ok_or_else(|| anyhow!("unknown natural language {n:?}")))
        .collect::<Result<Vec<_>>>()?;
    let translation_pairs = a
        .translation_pairs
        .iter()
        .map(|p| parse_translation_pair(p))
        .collect::<Result<Vec<_>>>()?;
    let mut generation = a.gateway.options(a.seed);
    generation.retry_malformed = a.retry_malformed;
    let config = SynthesisConfig {
        tasks: a.tasks.clone(),
        natural_languages,
        programming_languages: a.programming_languages.clone(),
        translation_pairs,
        samples_per_cell: a.count,
        max_attempts_per_cell: a.max_attempts,
        seed: a.seed,
        generation,
        mining: a.mining.config(a.seed),
        jobs: a.jobs.max(1),
    };
    config.validate()?;
    let options = IngestOptions {
        min_chars: a.min_chars,
        max_chars: a.max_chars,
        ..IngestOptions::default()
    };
    let (corpus, ingest) = ingest_corpus(&a.corpus, &registry, options).context("reading corpus")?;
    let gateway = a.gateway.build()?;
    let embedder = a.embed.build(a.gateway.mock.as_ref().map(|_| a.seed))?;
    let pairs = a.pairs.unwrap_or_else(|| with_suffix(&a.out, ".pairs.jsonl"));
    let checkpoint = a.checkpoint.unwrap_or_else(|| with_suffix(&a.out, ".checkpoint"));

    let report = run_synthesis(
        &registry,
        &corpus,
        &*gateway,
        &*embedder,
        &config,
        SynthesisPaths {
            pairs: &pairs,
            samples: &a.out,
            checkpoint: Some(&checkpoint),
        },
    )?;
    for f in &report.failures {
        eprintln!("failed: {} / {}: {}", f.item, f.doc_id, f.error);
    }
    Ok(Outcome {
        partial: !report.failures.is_empty(),
        details: json!({
            "samples": a.out,
            "pairs": pairs,
            "checkpoint": checkpoint,
            "corpus": ingest,
            "stats": report.stats,
            "failures": report.failures,
            "shortages": report.shortages,
            "resumed": report.resumed,
        }),
    })
}

pub fn brainstorm(a: BrainstormArgs) -> Result<Outcome> {
    let registry = a.registry.load()?;
    let major = MajorTaskType::parse(&a.major_type).ok_or_else(|| anyhow!("unknown major type {:?}", a.major_type))?;
    let gateway = a.gateway.build()?;
    let mut models = vec![a.gateway.model()];
    models.extend(a.also_models.iter().cloned());
    let report = brainstorm_tasks(
        &registry,
        major,
        &default_seeds(&registry, major),
        &*gateway,
        &models,
        &a.gateway.options(a.seed),
    )?;
    write_review(&a.out, &report.candidates)?;
    for (model, e) in &report.failures {
        eprintln!("failed: {model}: {e}");
    }
    Ok(Outcome {
        partial: !report.failures.is_empty(),
        details: json!({
            "review": a.out,
            "candidates": report.candidates.len(),
            "duplicates": report.candidates.iter().filter(|c| c.duplicate).count(),
            "failures": report.failures,
        }),
    })
}

pub fn mine(a: MineArgs) -> Result<Outcome> {
    let registry = a.registry.load()?;
    let cfg = a.mining.config(a.seed);
    cfg.validate()?;
    let pairs: Vec<QueryPositivePair> = read_jsonl(&a.input)?;
    let (accepted, skipped): (Vec<_>, Vec<_>) = pairs
        .into_iter()
        .partition(|p| p.label == Some(AnnotationLabel::Accept));
    let options = IngestOptions {
        min_chars: a.min_chars,
        ..IngestOptions::default()
    };
    let (corpus, ingest) = ingest_corpus(&a.corpus, &registry, options).context("reading corpus")?;
    let embedder = a.embed.build(Some(a.seed))?;
    let run = mine_pairs(&registry, &corpus, &accepted, &*embedder, &cfg, a.jobs.max(1))?;
    let out = a.out.unwrap_or_else(|| a.input.with_extension("samples.jsonl"));
    write_samples(&out, &run.samples, false)?;
    for (pair, e) in &run.failures {
        eprintln!("failed: pair {pair}: {e}");
    }
    Ok(Outcome {
        partial: !run.failures.is_empty(),
        details: json!({
            "samples": out,
            "mined": run.samples.len(),
            "skipped_unaccepted": skipped.len(),
            "corpus": ingest,
            "failures": run.failures,
        }),
    })
}

fn parse_source(spec: &str) -> Result<DataSourceEntry> {
    let (kind, rest) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("source {spec:?} is not KIND=PATH[@WEIGHT]"))?;
    let kind = DataSourceKind::parse(kind.trim()).ok_or_else(|| anyhow!("unknown source kind {kind:?}"))?;
    let (path, weight) = match rest.rsplit_once('@') {
        Some((p, w)) => (p, w.parse::<f64>().with_context(|| format!("weight in {spec:?}"))?),
        None => (rest, 1.0),
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading source {path}"))?;
    let count = text.lines().filter(|l| !l.trim().is_empty()).count() as u64;
    Ok(DataSourceEntry {
        weight,
        ..DataSourceEntry::new(path, kind, count)
    })
}

pub fn plan(a: PlanArgs) -> Result<Outcome> {
    let sources = a.sources.iter().map(|s| parse_source(s)).collect::<Result<Vec<_>>>()?;
    let mut stages = plan_stages(&sources, a.lr1, a.lr3)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut written = Vec::new();
    for m in stages.iter_mut() {
        m.max_sequence_length = a.max_len;
        let path = a.out_dir.join(format!("stage{}.jsonl", m.stage));
        write_manifest(&path, m)?;
        written.push(json!({
            "stage": m.stage,
            "manifest": path,
            "entries": m.entries.len(),
            "samples": m.sample_count(),
            "lr_hint": m.learning_rate_hint,
        }));
    }
    Ok(Outcome {
        partial: false,
        details: json!({ "stages": written }),
    })
}

pub fn filter(a: FilterArgs) -> Result<Outcome> {
    if a.skip_e5 && a.skip_difficulty {
        bail!("both filters skipped; nothing to do");
    }
    let registry = a.registry.load()?;
    let mut samples = read_samples(&a.input)?;
    let input = samples.len();
    let mut details = serde_json::Map::new();
    let mut partial = false;

    if !a.skip_e5 {
        let corpus: Option<Vec<TextRecord>> = a.filter_corpus.as_ref().map(read_jsonl).transpose()?;
        let embedder = a.embed.build(a.gateway.mock.as_ref().map(|_| a.seed))?;
        let out = e5_simple_filter(samples, corpus.as_deref(), &*embedder, a.top_n, a.jobs.max(1))?;
        details.insert(
            "e5".into(),
            json!({"top_n": a.top_n, "dropped": out.dropped.len(), "flagged": out.flagged, "retained": out.retained.len()}),
        );
        samples = out.retained;
    }
    if !a.skip_difficulty {
        let gateway = a.gateway.build()?;
        let opts = DifficultyOptions {
            model: a.gateway.model(),
            seed: Some(a.seed),
            jobs: a.jobs.max(1),
        };
        let out = difficulty_filter(samples, &registry, &*gateway, &opts);
        for (pair, e) in &out.failures {
            eprintln!("failed: pair {pair}: {e}");
        }
        partial = !out.failures.is_empty();
        details.insert(
            "difficulty".into(),
            json!({"counts": out.counts, "failures": out.failures, "retained": out.retained.len()}),
        );
        samples = out.retained;
    }
    write_samples(&a.out, &samples, false)?;
    details.insert("input".into(), json!(input));
    details.insert("retained".into(), json!(samples.len()));
    details.insert("out".into(), json!(a.out));
    Ok(Outcome {
        partial,
        details: Value::Object(details),
    })
}

pub fn dedup(a: DedupArgs) -> Result<Outcome> {
    let mut rows = Vec::new();
    for dir in &a.benchmarks {
        let b = load_benchmark(dir).with_context(|| format!("loading {}", dir.display()))?;
        let (clean, delta) = dedup_benchmark(&b);
        let out = a.out_dir.join(&b.name);
        write_benchmark(&out, &clean)?;
        rows.push(json!({
            "benchmark": b.name,
            "out": out,
            "queries": clean.queries.len(),
            "corpus": clean.corpus.len(),
            "delta": delta,
        }));
    }
    Ok(Outcome {
        partial: false,
        details: json!({ "benchmarks": rows }),
    })
}

pub fn eval(a: EvalArgs) -> Result<Outcome> {
    let embedder = a.embed.build(None)?;
    let mut loaded = Vec::new();
    let mut load_errors = Vec::new();
    for dir in &a.benchmarks {
        match load_benchmark(dir) {
            Ok(b) => loaded.push(b),
            Err(e) => {
                eprintln!("failed: {}: {e}", dir.display());
                load_errors.push(json!({"benchmark": dir, "error": e.to_string()}));
            }
        }
    }
    if loaded.is_empty() {
        bail!("no benchmark could be loaded");
    }
    let opts = EvalOptions {
        dedup: a.dedup,
        k: a.k,
        depth: a.depth.max(a.k),
        jobs: a.jobs.max(1),
    };
    let outcome = evaluate(&loaded, &*embedder, &opts);
    let report = &outcome.report;

    let mut w = JsonlWriter::create(&a.report, false)?;
    for row in &report.rows {
        let mut v = serde_json::to_value(row)?;
        v[format!("NDCG@{}", report.k)] = json!(row.ndcg);
        w.write(&v)?;
    }
    drop(w);
    let table_path = a.report.with_extension("txt");
    std::fs::write(&table_path, report.table()).with_context(|| format!("writing {}", table_path.display()))?;
    eprint!("{}", report.table());

    if let Some(dir) = &a.runs_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, run) in &outcome.runs {
            write_run(dir.join(format!("{name}.run")), run, "coder-forge")?;
        }
    }
    let failed = report.rows.iter().any(|r| r.error.is_some() || r.failed_queries > 0);
    Ok(Outcome {
        partial: failed || !load_errors.is_empty(),
        details: json!({
            "report": a.report,
            "table": table_path,
            "k": report.k,
            "macro_average": report.macro_average,
            "rows": report.rows,
            "load_errors": load_errors,
        }),
    })
}

pub fn check_loss(a: CheckLossArgs) -> Result<Outcome> {
    let cfg = LossConfig::new(a.temperature)?;
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut w = JsonlWriter::create(&a.out, false)?;
    let (mut ok, mut failed) = (0usize, 0usize);
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let result = serde_json::from_str::<LossInstance>(line)
            .map_err(|e| e.to_string())
            .and_then(|inst| {
                let loss = infonce_loss(&inst, &cfg).map_err(|e| e.to_string())?;
                let grad = infonce_grad(&inst, &cfg).map_err(|e| e.to_string())?;
                Ok((loss, grad))
            });
        match result {
            Ok((loss, grad)) => {
                ok += 1;
                w.write(&json!({
                    "line": i + 1,
                    "loss": loss,
                    "grad_q": grad.q,
                    "grad_pos": grad.pos,
                    "grad_negs": grad.negs,
                }))?;
            }
            Err(e) => {
                failed += 1;
                eprintln!("failed: line {}: {e}", i + 1);
                w.write(&json!({"line": i + 1, "error": e}))?;
            }
        }
    }
    Ok(Outcome {
        partial: failed > 0,
        details: json!({"out": a.out, "temperature": a.temperature, "instances": ok, "failures": failed}),
    })
}

pub fn validate_registry(a: ValidateArgs) -> Result<Outcome> {
    let mut args = a.registry.clone();
    if let Some(dir) = &a.write_bundled {
        write_bundled(dir).with_context(|| format!("writing {}", dir.display()))?;
        args.registry = Some(dir.clone());
    }
    let registry = match &args.registry {
        // Load leniently so count problems surface as issues, not load errors.
        Some(_) => crate::backends::RegistryArgs {
            extensible: true,
            ..args.clone()
        }
        .load()?,
        None => args.load()?,
    };
    let report = if args.extensible {
        registry.validate_with(coder_forge::registry::CountPolicy::Extensible)
    } else {
        registry.validate()
    };
    for issue in &report.issues {
        eprintln!("issue: {:?}: {}", issue.kind, issue.message);
    }
    Ok(Outcome {
        partial: !report.is_valid(),
        details: serde_json::to_value(&report)?,
    })
}
