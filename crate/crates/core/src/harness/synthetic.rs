//! Seeded toy world: one fact per document, questions asking for the fact.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::retrieval::Document;
use crate::reward::QaExample;

const RELATIONS: [&str; 6] = ["capital", "founder", "mascot", "river", "festival", "anthem"];
const ONSETS: [&str; 12] = ["b", "d", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub documents: Vec<Document>,
    pub questions: Vec<QaExample>,
}

fn word<R: Rng>(rng: &mut R, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    w
}

fn fresh<R: Rng>(rng: &mut R, used: &mut BTreeSet<String>, syllables: usize) -> String {
    loop {
        let w = word(rng, syllables);
        if !RELATIONS.contains(&w.as_str()) && used.insert(w.clone()) {
            return w;
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Builds `n_docs` fact documents and `n_questions` questions about a random
/// subset of them. `n_questions` is capped at `n_docs`.
pub fn generate(seed: u64, n_docs: usize, n_questions: usize) -> SyntheticWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let mut facts = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let entity = capitalize(&fresh(&mut rng, &mut used, 3));
        let relation = *RELATIONS.choose(&mut rng).expect("non-empty");
        let value = fresh(&mut rng, &mut used, 2);
        facts.push((entity, relation, value));
    }
    let documents = facts
        .iter()
        .enumerate()
        .map(|(i, (e, r, v))| Document {
            id: format!("doc-{i:03}"),
            title: e.clone(),
            text: format!("The {r} of {e} is {v}."),
        })
        .collect();
    let mut picks: Vec<usize> = (0..n_docs).collect();
    picks.shuffle(&mut rng);
    picks.truncate(n_questions.min(n_docs));
    let questions = picks
        .iter()
        .enumerate()
        .map(|(qi, &d)| {
            let (e, r, v) = &facts[d];
            QaExample {
                id: format!("q-{qi:03}"),
                question: format!("What is the {r} of {e}?"),
                answers: vec![v.clone()],
            }
        })
        .collect();
    SyntheticWorld {
        documents,
        questions,
    }
}
