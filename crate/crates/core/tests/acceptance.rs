//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdoh_core::corpus::{
    self, assemble_dataset, merge_annotations, sample_negatives, Annotation, AssembleOptions,
    NoteRecord, SegmentScope, Sentence,
};
use sdoh_core::eval::{self, feasibility_search, metrics};
use sdoh_core::gateway::mock::{Matcher, Reply, ScriptedBackend};
use sdoh_core::gateway::{BackendFailure, GatewayError, GenerationParams};
use sdoh_core::router::{compare, Candidate};
use sdoh_core::synth::{self, run_pipeline, SynthOptions};
use sdoh_core::text::normalize;
use sdoh_core::{
    jsonl, BackendConfig, ConfusionMatrix, Corpus, Dataset, EvalCell, EvalMatrix,
    IndeterminatePolicy, LabeledSentence, ModelId, Report, RoutingTable, SdohCode,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn id(s: &str) -> ModelId {
    ModelId::new(s).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Metric oracle equivalence
// ---------------------------------------------------------------------------

fn direct(tp: u64, tn: u64, fp: u64, fn_: u64) -> (f64, Option<f64>, Option<f64>, Option<f64>) {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let accuracy = (tp + tn) / (tp + tn + fp + fn_);
    let precision = (tp + fp > 0.0).then(|| tp / (tp + fp));
    let recall = (tp + fn_ > 0.0).then(|| tp / (tp + fn_));
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    (accuracy, precision, recall, f1)
}

fn ac1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut degenerate = 0;
    let n = 5000;
    for i in 0..n {
        // every fifth matrix draws from a tiny range so zero denominators are common
        let hi = if i % 5 == 0 { 2 } else { 10_000 };
        let mut c = ConfusionMatrix::new(
            rng.random_range(0..hi),
            rng.random_range(0..hi),
            rng.random_range(0..hi),
            rng.random_range(0..hi),
        );
        if c.total() == 0 {
            ensure(metrics(&c).is_err(), || "empty matrix accepted".into())?;
            c.tn = 1;
        }
        let m = metrics(&c).map_err(|e| e.to_string())?;
        let (a, p, r, f) = direct(c.tp, c.tn, c.fp, c.fn_);
        ensure((m.accuracy - a).abs() <= 1e-12, || format!("accuracy differs for {c:?}"))?;
        for (name, got, want) in [("precision", m.precision, p), ("recall", m.recall, r), ("f1", m.f1, f)] {
            match (got, want) {
                (Some(g), Some(w)) => ensure((g - w).abs() <= 1e-12, || format!("{name} differs for {c:?}"))?,
                (None, None) => degenerate += 1,
                _ => return Err(format!("{name} definedness differs for {c:?}")),
            }
        }
    }
    Ok(format!("{n} matrices, {degenerate} undefined components matched"))
}

// ---------------------------------------------------------------------------
// 2. Router argmax property
// ---------------------------------------------------------------------------

/// Exact rational comparison, independent of the library's ordering.
fn oracle_best(cells: &[(ModelId, ConfusionMatrix)]) -> ModelId {
    let acc_cmp = |a: &ConfusionMatrix, b: &ConfusionMatrix| {
        ((a.tp + a.tn) as u128 * b.total() as u128).cmp(&((b.tp + b.tn) as u128 * a.total() as u128))
    };
    // F1 = 2tp / (2tp + fp + fn), defined iff tp > 0
    let f1_cmp = |a: &ConfusionMatrix, b: &ConfusionMatrix| match (a.tp > 0, b.tp > 0) {
        (true, true) => {
            let (da, db) = (2 * a.tp + a.fp + a.fn_, 2 * b.tp + b.fp + b.fn_);
            (a.tp as u128 * db as u128).cmp(&(b.tp as u128 * da as u128))
        }
        (true, false) => std::cmp::Ordering::Greater,
        (false, true) => std::cmp::Ordering::Less,
        (false, false) => std::cmp::Ordering::Equal,
    };
    let mut best = &cells[0];
    for c in &cells[1..] {
        let ord = acc_cmp(&c.1, &best.1)
            .then(f1_cmp(&c.1, &best.1))
            .then(best.0.cmp(&c.0));
        if ord == std::cmp::Ordering::Greater {
            best = c;
        }
    }
    best.0.clone()
}

fn random_matrix(rng: &mut ChaCha8Rng, n_models: usize, n_codes: usize) -> (EvalMatrix, BTreeMap<String, Vec<(ModelId, ConfusionMatrix)>>) {
    let mut m = EvalMatrix::new();
    let mut by_code: BTreeMap<String, Vec<(ModelId, ConfusionMatrix)>> = BTreeMap::new();
    for c in 0..n_codes {
        let code = format!("code{c}");
        // reverse name order so insertion order cannot decide ties
        for k in (0..n_models).rev() {
            // small counts make accuracy and F1 ties frequent
            let cm = ConfusionMatrix::new(
                rng.random_range(0..4),
                rng.random_range(1..4),
                rng.random_range(0..3),
                rng.random_range(0..3),
            );
            let model = id(&format!("model-{}", (b'a' + k as u8) as char));
            m.insert(EvalCell::new(model.clone(), &code, cm, 0, format!("fp{c}"))).unwrap();
            by_code.entry(code.clone()).or_default().push((model, cm));
        }
    }
    (m, by_code)
}

fn ac2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ties = 0;
    for trial in 0..500 {
        let (nm, nc) = (rng.random_range(1..=10), rng.random_range(1..=7));
        let (m, by_code) = random_matrix(&mut rng, nm, nc);
        let table = RoutingTable::train(&m, "t").map_err(|e| e.to_string())?;
        for (code, cells) in &by_code {
            let entry = &table.entries()[code];
            let want = oracle_best(cells);
            ensure(entry.model == want, || format!("trial {trial} {code}: got {} want {want}", entry.model))?;
            for (model, _) in cells {
                let acc = m.cell(model, code).unwrap().accuracy().unwrap();
                ensure(entry.training_accuracy >= acc, || format!("trial {trial} {code}: dominated by {model}"))?;
                if acc == entry.training_accuracy && *model != entry.model {
                    ties += 1;
                }
            }
        }
    }
    for trial in 0..100 {
        let (nm, nc) = (rng.random_range(1..=9), rng.random_range(1..=7));
        let (m, by_code) = random_matrix(&mut rng, nm, nc);
        let before = RoutingTable::train(&m, "t").map_err(|e| e.to_string())?;
        let mut extended = m.clone();
        for (c, code) in by_code.keys().enumerate() {
            let cm = ConfusionMatrix::new(rng.random_range(0..4), rng.random_range(1..4), rng.random_range(0..3), rng.random_range(0..3));
            extended
                .insert(EvalCell::new(id("model-new"), code, cm, 0, format!("fp{}", &code[4..])))
                .map_err(|e| format!("{c}: {e}"))?;
        }
        let after = RoutingTable::train(&extended, "t").map_err(|e| e.to_string())?;
        for (code, e) in before.entries() {
            let a = &after.entries()[code];
            ensure(a.training_accuracy >= e.training_accuracy, || format!("extension {trial} lowered {code}"))?;
        }
    }
    // the ordering the library exposes agrees with the tie rule on a crafted case
    let a = Candidate { model: id("a"), accuracy: 0.9, f1: Some(0.5) };
    let b = Candidate { model: id("b"), accuracy: 0.9, f1: Some(0.5) };
    ensure(compare(&a, &b).is_gt(), || "equal candidates should prefer the smaller id".into())?;
    Ok(format!("500 matrices ({ties} accuracy ties resolved), 100 extensions"))
}

// ---------------------------------------------------------------------------
// 3. Reported-score feasibility
// ---------------------------------------------------------------------------

fn ac3() -> Check {
    let home = feasibility_search(0.990, 0.984, 346, 704, 0.0005);
    let pris = feasibility_search(0.947, 0.918, 330, 660, 0.0005);
    ensure(!home.is_empty(), || "homelessness figures infeasible".into())?;
    ensure(!pris.is_empty(), || "imprisonment figures infeasible".into())?;
    for c in home.iter().chain(&pris) {
        let m = metrics(c).map_err(|e| e.to_string())?;
        ensure(m.f1.is_some(), || format!("{c:?} has undefined F1"))?;
    }
    Ok(format!("homelessness {} matrices, imprisonment {} matrices", home.len(), pris.len()))
}

// ---------------------------------------------------------------------------
// 4. Dataset assembly
// ---------------------------------------------------------------------------

fn toy_corpus() -> (Corpus, Vec<Annotation>) {
    let mut notes = Vec::new();
    let mut anns = Vec::new();
    for i in 0..40 {
        let housing = if i % 4 == 0 { format!("Patient has been homeless since spring {i}. ") } else { String::new() };
        let text = format!(
            "Chief Complaint:\nCough for {i} days. Fever noted.\n\nSocial History:\n{housing}Lives with partner {i}. Drinks socially on weekend {i}. Works as a clerk {i}.\n\nPlan:\nFollow up in {i} weeks. Repeat labs {i}.\n"
        );
        notes.push(NoteRecord { note_id: format!("n{i}"), text });
        if i % 4 == 0 {
            anns.push(Annotation {
                note_id: format!("n{i}"),
                code_id: "homelessness".into(),
                evidence_text: format!("homeless since spring {i}"),
            });
        }
    }
    (Corpus::from_records(&notes).unwrap(), anns)
}

fn ac4() -> Check {
    let (corpus, anns) = toy_corpus();
    let merged = merge_annotations(&corpus, &anns, SegmentScope::FullNote);
    ensure(merged.errors.is_empty(), || format!("{:?}", merged.errors))?;
    let gold = merged.gold;
    let synthetic: Vec<LabeledSentence> = (0..20)
        .map(|i| LabeledSentence::synthetic(i, format!("Sleeps in a car most nights, case {i}."), "homelessness"))
        .collect();
    let sentences = corpus.sentences(SegmentScope::FullNote);
    let n_pos = gold.len() + synthetic.len();
    let negatives = sample_negatives(&sentences, "homelessness", &gold, 2 * n_pos + 40, 9).map_err(|e| e.to_string())?;
    let ds = assemble_dataset("homelessness", &gold, &synthetic, &negatives, AssembleOptions { seed: 9, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let toy_frac = ds.positive_fraction().unwrap();
    ensure((toy_frac - 1.0 / 3.0).abs() <= 0.02, || format!("toy fraction {toy_frac}"))?;
    ensure(ds.positives() == gold.len() + synthetic.len(), || "positives != gold + synthetic".into())?;
    ensure(ds.count(corpus::Source::Gold) == gold.len(), || "gold count changed".into())?;

    // the homelessness row: 28 gold + 318 synthetic positives, 704 negatives
    let mk = |n: usize, f: &dyn Fn(usize) -> LabeledSentence| (0..n).map(f).collect::<Vec<_>>();
    let g = mk(28, &|i| LabeledSentence::gold(Sentence { note_id: format!("g{i}"), index: 0, text: format!("gold {i}"), span: 0..0 }, "homelessness"));
    let s = mk(318, &|i| LabeledSentence::synthetic(i, format!("synthetic {i}"), "homelessness"));
    let n = mk(704, &|i| LabeledSentence::negative(Sentence { note_id: format!("x{i}"), index: 0, text: format!("negative {i}"), span: 0..0 }, "homelessness"));
    let ds = assemble_dataset("homelessness", &g, &s, &n, AssembleOptions::default()).map_err(|e| e.to_string())?;
    let frac = ds.positive_fraction().unwrap();
    ensure(ds.len() == 1050 && ds.positives() == 346, || format!("row shape {} / {}", ds.positives(), ds.len()))?;
    ensure(frac == 346.0 / 1050.0, || format!("row fraction {frac}"))?;
    Ok(format!("toy fraction {toy_frac:.4} ({}+{} pos); reference row {}/{} = {frac:.4}", gold.len(), synthetic.len(), ds.positives(), ds.len()))
}

// ---------------------------------------------------------------------------
// 5. Synthetic pipeline accounting
// ---------------------------------------------------------------------------

fn synth_gateway() -> sdoh_core::Gateway {
    let generator = ScriptedBackend::new().default_reply(Reply::func(|req| {
        let s = req.seed.unwrap_or(0);
        let v = if req.prompt.contains("Do not use the words") { "indirect" } else { "direct" };
        Ok(format!(
            "1. Stays at the shelter on {v} street {s}.\n2. Sleeping rough XBAD {v} {s}.\n3. Patient has no fixed address.\n4. {v} note: lost housing after eviction {}.\n",
            s % 3
        ))
    }));
    let verifier = ScriptedBackend::new()
        .rule(Matcher::contains(["XBAD"]), Reply::text("No"))
        .rule(Matcher::contains(["eviction 2"]), Reply::text("maybe"))
        .default_reply(Reply::text("Yes, this shows housing instability."));
    let mut g = sdoh_core::Gateway::new();
    g.register(BackendConfig::mock(id("mock/generator")), Arc::new(generator)).unwrap();
    g.register(BackendConfig::mock(id("mock/verifier")), Arc::new(verifier)).unwrap();
    g
}

async fn ac5() -> Check {
    let g = synth_gateway();
    let code = SdohCode::new("homelessness", "homelessness");
    let gold: Vec<LabeledSentence> = ["Patient has no fixed address.", "Currently homeless.", "Living in a shelter."]
        .iter()
        .enumerate()
        .map(|(i, t)| LabeledSentence::gold(Sentence { note_id: format!("g{i}"), index: 0, text: t.to_string(), span: 0..0 }, "homelessness"))
        .collect();
    let gold_norm: HashSet<String> = gold.iter().map(|g| normalize(g.text())).collect();
    let mut totals = synth::SynthStats::default();
    for seed in 0..10u64 {
        for target in [0, 1, 5, 12, 500] {
            let opts = SynthOptions { per_variant: 4, round_cap: 6, seed, ..Default::default() };
            let batch = match run_pipeline(&g, &code, &gold, &id("mock/generator"), &id("mock/verifier"), target, opts).await {
                Ok(b) => b,
                Err(synth::SynthError::TargetUnreached { batch, .. }) => *batch,
                Err(e) => return Err(e.to_string()),
            };
            let s = batch.stats;
            ensure(s.generated == s.kept + s.dropped + s.deduped, || format!("seed {seed} target {target}: {s:?}"))?;
            ensure(s.kept == batch.accepted().count(), || "kept != accepted count".into())?;
            let mut seen = HashSet::new();
            for c in batch.accepted() {
                ensure(!c.text.contains("XBAD") && !c.text.contains("eviction 2"), || format!("kept a rejected candidate: {}", c.text))?;
                ensure(c.verifier.as_ref().is_some_and(|v| v.as_str() == "mock/verifier"), || "kept without verifier".into())?;
                let n = normalize(&c.text);
                ensure(!gold_norm.contains(&n), || format!("kept duplicates gold: {}", c.text))?;
                ensure(seen.insert(n), || format!("kept duplicated: {}", c.text))?;
            }
            totals.generated += s.generated;
            totals.kept += s.kept;
            totals.dropped += s.dropped;
            totals.deduped += s.deduped;
        }
    }
    Ok(format!(
        "50 batches; generated {} = kept {} + dropped {} + deduped {}",
        totals.generated, totals.kept, totals.dropped, totals.deduped
    ))
}

// ---------------------------------------------------------------------------
// 6 and 8. End-to-end routing; determinism
// ---------------------------------------------------------------------------

/// Datasets for three codes, 30 items each with 10 positives.
fn e2e_datasets() -> (Vec<SdohCode>, BTreeMap<String, Dataset>) {
    let codes = vec![
        SdohCode::new("x", "alpha topic"),
        SdohCode::new("y", "beta topic"),
        SdohCode::new("z", "gamma topic"),
    ];
    let mut datasets = BTreeMap::new();
    for code in &codes {
        let mut ex = Vec::new();
        for i in 0..30 {
            let text = format!("{} item {i}.", code.code_id);
            let s = Sentence { note_id: format!("{}-note{i}", code.code_id), index: 0, text, span: 0..0 };
            ex.push(if i < 10 { LabeledSentence::gold(s, &code.code_id) } else { LabeledSentence::negative(s, &code.code_id) });
        }
        datasets.insert(code.code_id.clone(), Dataset::new(&code.code_id, ex, Some(0)).unwrap());
    }
    (codes, datasets)
}

/// Answers correctly except on the first `wrong[code]` items of that code.
fn scripted_model(wrong: [(&'static str, usize); 3]) -> ScriptedBackend {
    ScriptedBackend::new().default_reply(Reply::func(move |req| {
        let sentence = req.prompt.rsplit_once("Sentence: ").map(|(_, s)| s).unwrap_or("");
        let (code, rest) = sentence.split_once(" item ").ok_or_else(|| BackendFailure::Malformed("no item".into()))?;
        let i: usize = rest.trim_end_matches('.').parse().map_err(|_| BackendFailure::Malformed("index".into()))?;
        let truth = i < 10;
        let errs = wrong.iter().find(|(c, _)| *c == code).map_or(0, |(_, n)| *n);
        let answer = if i < errs { !truth } else { truth };
        Ok(if answer { "Yes." } else { "No." }.to_string())
    }))
}

struct E2e {
    table: RoutingTable,
    report: Report,
    matrix: EvalMatrix,
}

async fn run_e2e(out: &Path) -> Result<E2e, String> {
    let (codes, datasets) = e2e_datasets();
    let mut g = sdoh_core::Gateway::new();
    // A perfect on x, 80% on y; B the reverse; on z A 90%, B 70%
    g.register(BackendConfig::mock(id("mock/A")), Arc::new(scripted_model([("x", 0), ("y", 6), ("z", 3)]))).unwrap();
    g.register(BackendConfig::mock(id("mock/B")), Arc::new(scripted_model([("x", 6), ("y", 0), ("z", 9)]))).unwrap();
    let models = [id("mock/A"), id("mock/B")];
    let matrix = eval::evaluate_all(&g, &models, &codes, &datasets, 8, IndeterminatePolicy::Negative)
        .await
        .map_err(|e| e.to_string())?;
    let table = RoutingTable::train(&matrix, "1970-01-01T00:00:00Z").map_err(|e| e.to_string())?;
    let report = Report::build(&matrix, None).map_err(|e| e.to_string())?;
    jsonl::write(&out.join("matrix.jsonl"), &matrix.to_records()).map_err(|e| e.to_string())?;
    jsonl::write(&out.join("routing_table.jsonl"), &table.to_records()).map_err(|e| e.to_string())?;
    report.write_to(&out.join("report")).map_err(|e| e.to_string())?;
    Ok(E2e { table, report, matrix })
}

async fn ac6() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = run_e2e(dir.path()).await?;
    let route = |c: &str| run.table.route(c).map(|d| d.model.to_string()).map_err(|e| e.to_string());
    ensure(route("x")? == "mock/A", || "x not routed to A".into())?;
    ensure(route("y")? == "mock/B", || "y not routed to B".into())?;
    ensure(route("z")? == "mock/A", || "z not routed to A".into())?;
    let a_y = run.matrix.cell(&id("mock/A"), "y").and_then(EvalCell::accuracy);
    ensure(a_y == Some(0.8), || format!("A on y = {a_y:?}"))?;
    let routed: Vec<f64> = ["x", "y", "z"]
        .iter()
        .map(|c| run.table.route(c).unwrap().training_accuracy)
        .collect();
    let mean = routed.iter().sum::<f64>() / routed.len() as f64;
    let reported = run.report.summary.mean_accuracy.unwrap_or(f64::NAN);
    ensure((reported - mean).abs() <= 1e-12, || format!("report mean {reported} vs {mean}"))?;
    Ok(format!("x->A, y->B, z->A; mean accuracy {reported:.4} over {:?}", routed))
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

async fn ac8(started: Instant) -> Check {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    run_e2e(a.path()).await?;
    run_e2e(b.path()).await?;
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    ensure(!ta.is_empty() && ta == tb, || "e2e outputs differ between runs".into())?;
    // every backend in this harness is a scripted mock; no sockets are opened
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("harness took {elapsed:?}"))?;
    Ok(format!("{} output files byte-identical across runs; harness total {} ms", ta.len(), elapsed.as_millis()))
}

// ---------------------------------------------------------------------------
// 7. Gateway contracts
// ---------------------------------------------------------------------------

async fn ac7() -> Check {
    let unavailable = BackendFailure::Status { status: 503, body: String::new() };
    let echo = Reply::func(|req| Ok(req.prompt.clone()));
    let backend = Arc::new(
        ScriptedBackend::new()
            .rule(Matcher::contains(["#dead"]), Reply::fail_times(10, unavailable.clone(), echo.clone()))
            .rule(Matcher::contains(["#flaky"]), Reply::fail_times(1, BackendFailure::Timeout, echo.clone()))
            .default_reply(echo)
            .with_delay(Duration::from_millis(1)),
    );
    let mut g = sdoh_core::Gateway::new();
    let model = id("mock/instrumented");
    g.register(BackendConfig::mock(model.clone()), backend.clone()).unwrap();
    let max_attempts = g.config(&model).unwrap().retry.max_attempts;

    let prompts: Vec<String> = (0..1000)
        .map(|i| match i % 50 {
            0 => format!("prompt {i} #dead"),
            1..=4 => format!("prompt {i} #flaky"),
            _ => format!("prompt {i}"),
        })
        .collect();
    let max_in_flight = 16;
    let out = g
        .batch_complete(&model, &prompts, GenerationParams::default(), max_in_flight)
        .await
        .map_err(|e| e.to_string())?;
    ensure(out.len() == prompts.len(), || "output length differs".into())?;
    let mut expected_attempts = 0u64;
    for (i, (p, r)) in prompts.iter().zip(&out).enumerate() {
        match r {
            Ok(o) => {
                ensure(o.text == *p, || format!("item {i} out of order"))?;
                ensure(o.attempts <= max_attempts, || format!("item {i}: {} attempts", o.attempts))?;
                let want = if p.contains("#flaky") { 2 } else { 1 };
                ensure(o.attempts == want, || format!("item {i}: {} attempts, want {want}", o.attempts))?;
                expected_attempts += o.attempts as u64;
            }
            Err(GatewayError::BackendUnavailable { attempts, .. }) if p.contains("#dead") => {
                ensure(*attempts == max_attempts, || format!("item {i}: {attempts} attempts"))?;
                expected_attempts += *attempts as u64;
            }
            Err(e) => return Err(format!("item {i}: {e}")),
        }
    }
    let peak = backend.peak_in_flight();
    ensure(peak <= max_in_flight, || format!("peak concurrency {peak} > {max_in_flight}"))?;
    ensure(peak > 1, || "batch never ran concurrently".into())?;
    let stats = g.stats(&model).unwrap();
    ensure(stats.attempts == expected_attempts && backend.calls() as u64 == expected_attempts, || {
        format!("attempt accounting {stats:?} vs {expected_attempts}")
    })?;
    Ok(format!("1000 calls, peak in flight {peak}/{max_in_flight}, {expected_attempts} attempts, order preserved"))
}

// ---------------------------------------------------------------------------

fn report(label: &str, limit: Duration, start: Instant, result: Check) -> bool {
    let elapsed = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; too slow")),
        Err(e) => (false, e),
    };
    println!(
        "[{}] {label}: {detail} ({} ms, limit {} ms)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_millis(),
        limit.as_millis()
    );
    ok
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let started = Instant::now();
    let mut ok = true;
    let s = Instant::now();
    ok &= report("AC1 metric oracle equivalence", Duration::from_secs(1), s, ac1());
    let s = Instant::now();
    ok &= report("AC2 router argmax property", Duration::from_secs(5), s, ac2());
    let s = Instant::now();
    ok &= report("AC3 reported-score feasibility", Duration::from_secs(1), s, ac3());
    let s = Instant::now();
    ok &= report("AC4 dataset assembly", Duration::from_secs(1), s, ac4());
    let s = Instant::now();
    ok &= report("AC5 synthetic pipeline accounting", Duration::from_secs(2), s, rt.block_on(ac5()));
    let s = Instant::now();
    ok &= report("AC6 end-to-end routing", Duration::from_secs(5), s, rt.block_on(ac6()));
    let s = Instant::now();
    ok &= report("AC7 gateway contracts", Duration::from_secs(5), s, rt.block_on(ac7()));
    let s = Instant::now();
    ok &= report("AC8 offline determinism", Duration::from_secs(60), s, rt.block_on(ac8(started)));
    if !ok {
        std::process::exit(1);
    }
}
