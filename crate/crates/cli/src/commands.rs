//! Batch subcommands. Each reads its inputs from the configured paths, writes
//! its outputs there, and prints a short summary to stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sdoh_core::corpus::{
    assemble_dataset, merge_annotations, parse_note, sample_negatives, Annotation, AssembleOptions, CorpusError,
    DatasetRecord, NoteRecord, SegmentScope,
};
use sdoh_core::eval::{self, EvalCell};
use sdoh_core::router::{self, RouteRecord};
use sdoh_core::synth::{self, CandidateRecord, SynthError, SynthOptions};
use sdoh_core::{jsonl, Corpus, Dataset, EvalMatrix, LabeledSentence, ModelId, Report, RoutingTable, SdohCode};

use crate::config::Loaded;
use crate::error::CliError;

pub(crate) fn scope(l: &Loaded) -> SegmentScope {
    if l.params().restrict_social_history {
        SegmentScope::SocialHistory
    } else {
        SegmentScope::FullNote
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_labeled(path: &Path) -> Result<Vec<LabeledSentence>, CliError> {
    jsonl::read::<DatasetRecord>(path)?
        .into_iter()
        .map(|r| LabeledSentence::try_from(r).map_err(|e| CliError::data(format!("{}: {e}", path.display()))))
        .collect()
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{} does not exist; {hint}", path.display())))
    }
}

pub(crate) fn load_dataset(l: &Loaded, code_id: &str) -> Result<Dataset, CliError> {
    let path = l.dataset_file(code_id);
    if !path.exists() {
        return Err(eval::EvalError::MissingDataset(code_id.to_string()).into());
    }
    Dataset::from_records(code_id, jsonl::read(&path)?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub(crate) fn load_table(path: &Path) -> Result<RoutingTable, CliError> {
    require(path, "run train-router first")?;
    let records: Vec<RouteRecord> = jsonl::read(path)?;
    Ok(RoutingTable::from_records(records)?)
}

fn load_matrix(path: &Path) -> Result<EvalMatrix, CliError> {
    require(path, "run eval first")?;
    let records = jsonl::read(path)?;
    EvalMatrix::from_records(records).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

// ---------------------------------------------------------------------------

pub fn ingest(l: &Loaded) -> Result<(), CliError> {
    let notes: Vec<NoteRecord> = jsonl::read(&l.input("corpus", l.config.paths.corpus.as_ref())?)?;
    let annotations: Vec<Annotation> = jsonl::read(&l.input("annotations", l.config.paths.annotations.as_ref())?)?;
    let mut corpus = Corpus::from_records(&notes)?;
    if l.params().restrict_social_history {
        corpus = corpus.with_social_history();
        if corpus.is_empty() {
            tracing::warn!("no note has a Social History section");
        }
    }
    let scope = scope(l);

    let (known, unknown): (Vec<Annotation>, Vec<Annotation>) =
        annotations.into_iter().partition(|a| l.registry.get(&a.code_id).is_some());
    for a in &unknown {
        tracing::warn!(code = %a.code_id, note = %a.note_id, "annotation for an unregistered code skipped");
    }
    let merged = merge_annotations(&corpus, &known, scope);
    for e in &merged.errors {
        tracing::warn!("annotation skipped: {e}");
    }
    let sentences = corpus.sentences(scope);
    let seed = l.params().seed;

    println!("{:<24} {:>6} {:>10}", "code_id", "gold", "negatives");
    for code in l.registry.codes() {
        let gold: Vec<LabeledSentence> = merged.gold.iter().filter(|g| g.code_id == code.code_id).cloned().collect();
        let want = l.params().negatives_per_code;
        let negatives = match sample_negatives(&sentences, &code.code_id, &gold, want, seed) {
            Ok(n) => n,
            Err(CorpusError::InsufficientNegatives { available, .. }) => {
                tracing::warn!(code = %code.code_id, available, wanted = want, "negative pool smaller than requested");
                sample_negatives(&sentences, &code.code_id, &gold, available, seed)?
            }
            Err(e) => return Err(e.into()),
        };
        let gold_records: Vec<DatasetRecord> = gold.iter().map(LabeledSentence::to_record).collect();
        let neg_records: Vec<DatasetRecord> = negatives.iter().map(LabeledSentence::to_record).collect();
        jsonl::write(&l.gold_file(&code.code_id), &gold_records)?;
        jsonl::write(&l.negatives_file(&code.code_id), &neg_records)?;
        println!("{:<24} {:>6} {:>10}", code.code_id, gold.len(), negatives.len());
    }
    println!(
        "{} notes, {} sentences, {} annotation errors",
        corpus.len(),
        sentences.len(),
        merged.errors.len() + unknown.len()
    );
    Ok(())
}

pub async fn gen_synth(
    l: &Loaded,
    code: &str,
    target: usize,
    generator: Option<ModelId>,
    verifier: Option<ModelId>,
) -> Result<(), CliError> {
    let code = l.code(code)?.clone();
    let gold_path = l.gold_file(&code.code_id);
    require(&gold_path, "run ingest first")?;
    let gold = read_labeled(&gold_path)?;
    let p = l.params();
    let generator = generator
        .or_else(|| p.generator.clone())
        .ok_or_else(|| CliError::usage("no generator: pass --generator or set params.generator"))?;
    let verifier = verifier.or_else(|| p.verifier.clone()).unwrap_or_else(|| generator.clone());
    let gateway = l.gateway()?;
    let opts = SynthOptions {
        exemplars: p.exemplars,
        per_variant: p.per_variant,
        round_cap: p.round_cap,
        temperature: p.generation_temperature,
        max_in_flight: p.max_in_flight,
        seed: p.seed,
        ..SynthOptions::default()
    };
    let (batch, failure) = match synth::run_pipeline(&gateway, &code, &gold, &generator, &verifier, target, opts).await {
        Ok(b) => (b, None),
        Err(SynthError::TargetUnreached { batch, kept, target, rounds, code_id }) => {
            let msg = format!("{code_id}: kept {kept} of {target} after {rounds} rounds; partial batch written");
            (*batch, Some(CliError::data(msg)))
        }
        Err(e) => return Err(e.into()),
    };
    let records: Vec<CandidateRecord> = batch.to_records();
    jsonl::write(&l.synthetic_file(&code.code_id), &records)?;
    write_json(&l.synthetic_stats_file(&code.code_id), &batch.summary())?;
    let s = batch.stats;
    println!(
        "{}: generated {} kept {} dropped {} deduped {} (keyword violations {}, verifier errors {}, rounds {})",
        code.code_id, s.generated, s.kept, s.dropped, s.deduped, s.keyword_violations, s.verifier_errors, s.rounds
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn assemble(l: &Loaded, codes: &[String]) -> Result<(), CliError> {
    let explicit = !codes.is_empty();
    let codes = l.codes(codes)?;
    let p = l.params();
    let opts = AssembleOptions {
        target_positive_fraction: p.target_positive_fraction,
        tolerance: p.ratio_tolerance,
        seed: p.seed,
    };
    println!(
        "{:<24} {:>6} {:>9} {:>9} {:>6} {:>9}",
        "code_id", "gold", "synthetic", "negatives", "total", "positive"
    );
    for code in &codes {
        let gold_path = l.gold_file(&code.code_id);
        require(&gold_path, "run ingest first")?;
        let gold = read_labeled(&gold_path)?;
        let syn_path = l.synthetic_file(&code.code_id);
        let synthetic = if syn_path.exists() {
            let records: Vec<CandidateRecord> = jsonl::read(&syn_path)?;
            synth::positives_from_records(&code.code_id, &records)
        } else {
            Vec::new()
        };
        if !explicit && gold.is_empty() && synthetic.is_empty() {
            tracing::warn!(code = %code.code_id, "no positives; skipped");
            continue;
        }
        let negatives = read_labeled(&l.negatives_file(&code.code_id))?;
        let ds = assemble_dataset(&code.code_id, &gold, &synthetic, &negatives, opts)?;
        jsonl::write(&l.dataset_file(&code.code_id), &ds.to_records())?;
        println!(
            "{:<24} {:>6} {:>9} {:>9} {:>6} {:>9.4}",
            code.code_id,
            ds.count(sdoh_core::Source::Gold),
            ds.count(sdoh_core::Source::Synthetic),
            ds.count(sdoh_core::Source::Negative),
            ds.len(),
            ds.positive_fraction().unwrap_or(0.0)
        );
    }
    Ok(())
}

fn note_level_path(matrix: &Path) -> PathBuf {
    let stem = matrix.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
    matrix.with_file_name(format!("{stem}.notes.jsonl"))
}

pub async fn eval(
    l: &Loaded,
    models: &[ModelId],
    codes: &[String],
    note_level: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let explicit = !codes.is_empty();
    let codes: Vec<SdohCode> = l
        .codes(codes)?
        .into_iter()
        .filter(|c| explicit || l.dataset_file(&c.code_id).exists())
        .collect();
    let mut datasets = BTreeMap::new();
    for code in &codes {
        datasets.insert(code.code_id.clone(), load_dataset(l, &code.code_id)?);
    }
    let gateway = l.gateway()?;
    let models: Vec<ModelId> = if !models.is_empty() {
        models.to_vec()
    } else if !l.params().models.is_empty() {
        l.params().models.clone()
    } else {
        gateway.models().cloned().collect()
    };
    let p = l.params();
    let mut matrix = EvalMatrix::new();
    let mut notes = EvalMatrix::new();
    for code in &codes {
        let ds = &datasets[&code.code_id];
        for model in &models {
            let d = eval::evaluate_model_on_code_detailed(&gateway, model, code, ds, p.max_in_flight, p.indeterminate).await?;
            if d.cell.n_errors == ds.len() as u64 {
                return Err(CliError::backend(format!("{model}: every request for {} failed", code.code_id)));
            }
            if note_level {
                let c = eval::aggregate_by_note(&ds.examples, &d.predictions, p.indeterminate)?;
                notes.insert(EvalCell::new(model.clone(), &code.code_id, c, d.cell.n_errors, ds.fingerprint()))?;
            }
            matrix.insert(d.cell)?;
        }
    }
    let path = out.unwrap_or_else(|| l.resolve(&l.config.paths.matrix));
    jsonl::write(&path, &matrix.to_records())?;
    if note_level {
        jsonl::write(&note_level_path(&path), &notes.to_records())?;
    }
    println!("{:<24} {:<40} {:>8} {:>8} {:>6}", "code_id", "model", "accuracy", "f1", "errors");
    for code in &codes {
        for cell in matrix.cells_for_code(&code.code_id) {
            println!(
                "{:<24} {:<40} {:>8} {:>8} {:>6}",
                cell.code_id,
                cell.model.as_str(),
                fmt_opt(cell.accuracy()),
                fmt_opt(cell.f1()),
                cell.n_errors
            );
        }
    }
    Ok(())
}

pub fn train_router(
    l: &Loaded,
    matrix: Option<PathBuf>,
    exclude: &[ModelId],
    trained_at: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let path = matrix.unwrap_or_else(|| l.resolve(&l.config.paths.matrix));
    let mut m = load_matrix(&path)?;
    for model in exclude {
        m = m.without_model(model);
    }
    let trained_at = trained_at
        .or_else(|| l.params().trained_at.clone())
        .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let table = RoutingTable::train(&m, trained_at)?;
    let out = out.unwrap_or_else(|| l.resolve(&l.config.paths.routing_table));
    jsonl::write(&out, &table.to_records())?;
    for (code, e) in table.entries() {
        println!("{code:<24} {:<40} {:.4}", e.model.as_str(), e.training_accuracy);
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassifyOutput<'a> {
    code_id: &'a str,
    label: sdoh_core::Verdict,
    model: &'a ModelId,
}

pub async fn classify(l: &Loaded, code: &str, sentence: &str) -> Result<(), CliError> {
    let table = load_table(&l.resolve(&l.config.paths.routing_table))?;
    let code = l.code(code)?;
    let decision = table.route(&code.code_id)?;
    let gateway = l.gateway()?;
    let label = router::classify_routed(&gateway, &table, code, sentence).await?;
    let out = ClassifyOutput { code_id: &code.code_id, label: label.verdict, model: &decision.model };
    println!("{}", serde_json::to_string(&out).map_err(|e| CliError::data(e.to_string()))?);
    Ok(())
}

pub async fn code_note(l: &Loaded, note: Option<PathBuf>, text: Option<String>, codes: &[String]) -> Result<(), CliError> {
    let (note_id, text) = match (note, text) {
        (Some(p), _) => {
            let text = fs::read_to_string(&p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("note").to_string();
            (id, text)
        }
        (None, Some(t)) => ("note".to_string(), t),
        (None, None) => return Err(CliError::usage("pass --note or --text")),
    };
    let table = load_table(&l.resolve(&l.config.paths.routing_table))?;
    let codes: Vec<SdohCode> = if codes.is_empty() {
        table.codes().filter_map(|c| l.registry.get(c).cloned()).collect()
    } else {
        l.codes(codes)?
    };
    let gateway = l.gateway()?;
    let note = parse_note(note_id, &text);
    let coding = router::code_note(&gateway, &table, &note, &codes, scope(l), l.params().max_in_flight).await?;
    for f in &coding.errors {
        tracing::warn!(code = %f.code_id, sentence = f.sentence_index, "{}", f.message);
    }
    let out = crate::serve::NoteOutput::new(&note.note_id, &coding, false);
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::data(e.to_string()))?);
    Ok(())
}

pub fn report(l: &Loaded, matrix: Option<PathBuf>, baseline: Option<ModelId>, out: Option<PathBuf>) -> Result<(), CliError> {
    let path = matrix.unwrap_or_else(|| l.resolve(&l.config.paths.matrix));
    let m = load_matrix(&path)?;
    let baseline = baseline.or_else(|| l.params().baseline.clone());
    let report = Report::build(&m, baseline.as_ref())?;
    let dir = out.unwrap_or_else(|| l.resolve(&l.config.paths.reports));
    report.write_to(&dir)?;
    println!("{:<24} {:<40} {:>8} {:>8}", "code_id", "routed model", "accuracy", "f1");
    for row in &report.best {
        println!("{:<24} {:<40} {:>8.4} {:>8}", row.code_id, row.model.as_str(), row.accuracy, fmt_opt(row.f1));
    }
    if let Some(rows) = &report.comparison {
        for r in rows {
            println!(
                "{:<24} {:<40} {:>8} {:>8}",
                r.code_id,
                format!("baseline {}", r.baseline_model),
                fmt_opt(r.baseline_accuracy),
                fmt_opt(r.baseline_f1)
            );
        }
    }
    println!(
        "mean accuracy over {} codes: {}",
        report.summary.n_codes,
        fmt_opt(report.summary.mean_accuracy)
    );
    Ok(())
}
