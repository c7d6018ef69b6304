//! Modified n-gram precision BLEU over token lexemes, plain and
//! keyword-weighted.
//!
//! Orders run from 1 to `min(max_n, candidate length)`. An order with no
//! clipped matches uses add-one smoothing `1 / (total + 1)`, except order 1,
//! where no overlap at all scores 0. The brevity penalty uses the shortest
//! reference, so adding a reference never lowers the score.

use std::collections::{BTreeMap, HashSet};

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> BTreeMap<&'a [&'a str], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Core scorer; `weight` gives each candidate n-gram's weight.
pub fn bleu_with<F>(candidate: &[&str], references: &[Vec<&str>], max_n: usize, weight: F) -> f64
where
    F: Fn(&[&str]) -> f64,
{
    let c = candidate.len();
    if c == 0 || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let orders = max_n.min(c);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = ngram_counts(candidate, n);
        let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
        let mut matched = 0.0;
        let mut total = 0.0;
        for (gram, &count) in &cand {
            let max_ref = refs.iter().map(|r| r.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
            let w = weight(gram);
            matched += w * count.min(max_ref) as f64;
            total += w * count as f64;
        }
        let p = if matched > 0.0 {
            matched / total
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total + 1.0)
        };
        log_sum += p.ln();
    }
    let r = references.iter().map(Vec::len).min().unwrap_or(0);
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    (bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0)
}

pub fn ngram_bleu(candidate: &[&str], references: &[Vec<&str>], max_n: usize) -> f64 {
    bleu_with(candidate, references, max_n, |_| 1.0)
}

/// N-grams whose first token is in `keywords` weigh `keyword_weight`; others 1.
pub fn weighted_ngram_bleu(
    candidate: &[&str],
    references: &[Vec<&str>],
    keywords: &HashSet<String>,
    keyword_weight: f64,
    max_n: usize,
) -> f64 {
    bleu_with(candidate, references, max_n, |g| {
        if keywords.contains(g[0]) {
            keyword_weight
        } else {
            1.0
        }
    })
}
