//! Fixtures shared by the benchmarks.

use sdoh_core::corpus::NoteRecord;
use sdoh_core::{ConfusionMatrix, EvalCell, EvalMatrix, ModelId};

const SOCIAL: &[&str] = &[
    "Lives with her daughter in an apartment.",
    "Currently staying at a shelter.",
    "Former smoker, quit in 2010.",
    "Works part time as a cashier.",
    "Husband passed away last year.",
];

/// `n` notes of roughly forty sentences each, with HPI, Social History and Plan sections.
pub fn notes(n: usize) -> Vec<NoteRecord> {
    (0..n)
        .map(|i| {
            let hpi: Vec<String> = (0..30)
                .map(|j| format!("Reports intermittent symptom {j} since visit {i}, e.g. after meals."))
                .collect();
            let social = SOCIAL[i % SOCIAL.len()];
            let plan: Vec<String> = (0..8).map(|j| format!("Dr. Lee to follow up item {j}.")).collect();
            NoteRecord {
                note_id: format!("note-{i}"),
                text: format!(
                    "HPI:\n{}\nSocial History:\n{social} Drinks socially. No illicit drug use.\nPlan:\n{}\n",
                    hpi.join(" "),
                    plan.join("\n")
                ),
            }
        })
        .collect()
}

/// A full matrix of `models` x `codes` cells over 1000 items each.
pub fn matrix(models: usize, codes: usize) -> EvalMatrix {
    let mut m = EvalMatrix::new();
    for c in 0..codes {
        for k in 0..models {
            let wrong = ((k * 37 + c * 11) % 200) as u64;
            let fp = wrong / 2;
            let fn_ = wrong - fp;
            let confusion = ConfusionMatrix::new(333 - fn_.min(333), 667 - fp, fp, fn_);
            let model = ModelId::new(format!("org/model-{k}")).expect("valid id");
            m.insert(EvalCell::new(model, format!("code-{c}"), confusion, 0, format!("fp-{c}")))
                .expect("consistent fixture");
        }
    }
    m
}
