//! Sentence-level ROUGE-L and BLEU against a single reference.

use std::collections::HashMap;

pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF     // kana
        | 0x3000..=0x303F   // CJK punctuation
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF   // hangul
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF   // full-width forms
        | 0x20000..=0x2A6DF)
}

/// Whitespace-split lowercase tokens, or one token per character for
/// unspaced text that is at least half CJK.
pub fn tokenize(text: &str) -> Vec<String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Vec::new();
    }
    if !trimmed.chars().any(char::is_whitespace) {
        let total = trimmed.chars().count();
        let cjk = trimmed.chars().filter(|c| is_cjk(*c)).count();
        if cjk * 2 >= total {
            return trimmed.chars().map(|c| c.to_lowercase().collect()).collect();
        }
    }
    trimmed.split_whitespace().map(str::to_lowercase).collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1 in [0, 1].
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&cand, &reference) as f64;
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub const BLEU_MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Geometric mean of clipped 1..4-gram precisions times the brevity
/// penalty. Orders with no matches use (0 + 1) / (total + 1).
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let ref_counts = ngram_counts(&reference, n);
        let cand_counts = ngram_counts(&cand, n);
        let total: usize = cand_counts.values().sum();
        let matched: usize = cand_counts
            .iter()
            .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let ratio = reference.len() as f64 / cand.len() as f64;
    let brevity = (1.0 - ratio).min(0.0).exp();
    brevity * (log_sum / BLEU_MAX_ORDER as f64).exp()
}
