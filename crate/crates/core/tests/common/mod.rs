//! Reference implementations and fixture builders shared by the
//! integration tests. Nothing here calls into the library's scoring code.

#![allow(dead_code)]

use rand::Rng;
use std::collections::HashMap;

// ---------------------------------------------------------------- BM25

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Scores every document from scratch. Returns `(id, score)` for all
/// documents sorted by score descending, then id ascending.
pub fn bm25_oracle(docs: &[(String, String)], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| words(t)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q = words(query);
    let mut out: Vec<(String, f64)> = docs
        .iter()
        .zip(&toks)
        .map(|((id, _), d)| {
            let mut s = 0.0;
            for term in &q {
                let df = toks.iter().filter(|t| t.contains(term)).count() as f64;
                if df == 0.0 {
                    continue;
                }
                let tf = d.iter().filter(|w| *w == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
            }
            (id.clone(), s)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

// ------------------------------------------------------------------ F1

pub fn normalize_oracle(s: &str) -> Vec<String> {
    let mut cleaned = String::new();
    for c in s.chars() {
        if c.is_ascii_punctuation() {
            continue;
        }
        cleaned.extend(c.to_lowercase());
    }
    cleaned
        .split_whitespace()
        .filter(|w| *w != "a" && *w != "an" && *w != "the")
        .map(String::from)
        .collect()
}

/// `2 * |P ∩ G| / (|P| + |G|)` with multiset intersection.
pub fn f1_oracle(pred: &str, gold: &str) -> f64 {
    let p = normalize_oracle(pred);
    let g = normalize_oracle(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut pc: HashMap<&str, i64> = HashMap::new();
    let mut gc: HashMap<&str, i64> = HashMap::new();
    for w in &p {
        *pc.entry(w).or_default() += 1;
    }
    for w in &g {
        *gc.entry(w).or_default() += 1;
    }
    let common: i64 = pc
        .iter()
        .map(|(w, c)| (*c).min(*gc.get(w).unwrap_or(&0)))
        .sum();
    2.0 * common as f64 / (p.len() + g.len()) as f64
}

const VOCAB: [&str; 14] = [
    "the", "a", "an", "Paris", "paris", "river", "King", "of", "France", "U.S.", "42", "film,", "Martian!", "my",
];

pub fn random_phrase<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    let ws: Vec<&str> = (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
    let sep = if rng.gen_bool(0.2) { "  " } else { " " };
    ws.join(sep)
}

// ------------------------------------------------------- PCAR / GRPO

pub fn mean_pop_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-token advantages from a straight loop: `spans[k] = (start, end, z)`.
pub fn pcar_oracle(
    a: f64,
    spans: &[(usize, usize, f64)],
    len: usize,
    lambda_base: f64,
    lambda_max: f64,
    delta: f64,
    eps: f64,
) -> Vec<f64> {
    let zs: Vec<f64> = spans.iter().map(|s| s.2).collect();
    let (mu, sigma) = if zs.is_empty() { (0.0, 0.0) } else { mean_pop_std(&zs) };
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let mut m = 1.0;
        for &(s, e, z) in spans {
            if s <= t && t < e {
                let zt = (z - mu) / (sigma + eps);
                let lam = lambda_base + (lambda_max - lambda_base) * z / 10.0;
                m = f64::max(delta, 1.0 + lam * zt);
            }
        }
        out.push(a * m);
    }
    out
}

// ------------------------------------------------------------ fixtures

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Think(String),
    Search(String),
    Obs(String),
    Eval(String, f64),
    Answer(String),
    /// Answer text with its tags removed.
    Bare(String),
}

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn render(blocks: &[Block]) -> String {
    blocks
        .iter()
        .map(|b| match b {
            Block::Think(t) => format!("<think>{t}</think>"),
            Block::Search(q) => format!("<tool:search>{{\"query\": \"{}\"}}</tool>", esc(q)),
            Block::Obs(t) => format!("<obs:search>{t}</obs>"),
            Block::Eval(c, z) => format!(
                "<tool:evaluate>{{\"evaluation\": \"{}\", \"score\": {z}}}</tool>",
                esc(c)
            ),
            Block::Answer(a) => format!("<answer>{a}</answer>"),
            Block::Bare(a) => a.clone(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Compliant trajectories with 1 to 4 Search→Evaluate pairs, some with
/// reasoning between a Search and its Evaluate. Returns blocks and answer.
pub fn compliant_fixtures<R: Rng>(rng: &mut R, n: usize) -> Vec<(Vec<Block>, String)> {
    let answers = ["My Favorite Martian", "Paris", "42", "Queen Elizabeth", "blue whale"];
    (0..n)
        .map(|i| {
            let answer = answers[i % answers.len()].to_string();
            let pairs = 1 + i % 4;
            let mut b = vec![Block::Think(format!("Plan for case {i}."))];
            for p in 0..pairs {
                if p > 0 {
                    b.push(Block::Think(format!("Need more on part {p}.")));
                }
                b.push(Block::Search(format!("query {i} \"{p}\"")));
                b.push(Block::Obs(format!("Doc 1 (Title: \"T{p}\"): text {p}")));
                if rng.gen_bool(0.3) {
                    b.push(Block::Think("Checking the results.".into()));
                }
                let z = if rng.gen_bool(0.2) {
                    rng.gen_range(0..=10) as f64
                } else {
                    (rng.gen_range(0.0..10.0f64) * 100.0).round() / 100.0
                };
                b.push(Block::Eval(format!("assessment {p}"), z));
            }
            b.push(Block::Think("Enough evidence.".into()));
            b.push(Block::Answer(answer.clone()));
            (b, answer)
        })
        .collect()
}

fn positions(blocks: &[Block], f: fn(&Block) -> bool) -> Vec<usize> {
    blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| f(b))
        .map(|(i, _)| i)
        .collect()
}

/// Every single mutation of the four kinds, with a label.
pub fn mutations(blocks: &[Block]) -> Vec<(String, Vec<Block>)> {
    let mut out = Vec::new();
    let evals = positions(blocks, |b| matches!(b, Block::Eval(..)));
    let searches = positions(blocks, |b| matches!(b, Block::Search(_)));
    for (k, &e) in evals.iter().enumerate() {
        let mut m = blocks.to_vec();
        m.remove(e);
        out.push((format!("delete evaluate {k}"), m));
    }
    for (k, (&s, &e)) in searches.iter().zip(&evals).enumerate() {
        let mut m = blocks.to_vec();
        m.swap(s, e);
        out.push((format!("swap pair {k}"), m));
    }
    for &a in &positions(blocks, |b| matches!(b, Block::Answer(_))) {
        let mut m = blocks.to_vec();
        if let Block::Answer(t) = &m[a] {
            m[a] = Block::Bare(t.clone());
        }
        out.push(("strip answer tags".into(), m));
    }
    for (k, &e) in evals.iter().enumerate() {
        for bad in [-0.5, 10.5] {
            let mut m = blocks.to_vec();
            if let Block::Eval(c, _) = &m[e] {
                m[e] = Block::Eval(c.clone(), bad);
            }
            out.push((format!("score {bad} at evaluate {k}"), m));
        }
    }
    out
}
