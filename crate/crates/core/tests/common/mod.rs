#![allow(dead_code)]

use minoseval::{CandidateResponse, EvalSample, QuestionKind};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 40] = [
    "river", "mountain", "engine", "protein", "harbor", "treaty", "voltage", "glacier", "market",
    "orbit", "cell", "tax", "wheat", "copper", "signal", "bridge", "island", "vaccine", "poem",
    "court", "desert", "satellite", "canal", "forest", "battery", "language", "enzyme", "empire",
    "storm", "coral", "turbine", "library", "salt", "planet", "council", "fever", "lens", "dam",
    "crater", "festival",
];

const HAN: [char; 12] = ['北', '京', '是', '中', '国', '的', '首', '都', '长', '江', '河', '流'];

fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// A response keeping roughly `keep` of the reference words, plus noise.
fn degrade(rng: &mut ChaCha8Rng, reference: &str, keep: f64) -> String {
    let mut out: Vec<String> = reference
        .split_whitespace()
        .filter(|_| rng.random_bool(keep))
        .map(String::from)
        .collect();
    for _ in 0..rng.random_range(0..3) {
        out.push(WORDS.choose(rng).unwrap().to_string());
    }
    if out.is_empty() {
        out.push("unsure".into());
    }
    out.join(" ")
}

fn han_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *HAN.choose(rng).unwrap()).collect()
}

/// Deterministic mixed dataset. Every third sample is non-factoid, every
/// seventh is in Chinese, and some responses repeat exactly so that scores
/// tie. Gold rankings follow the amount of the reference kept.
pub fn synthetic_dataset(n: usize, seed: u64) -> Vec<EvalSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let nonfactoid = i % 3 == 2;
            let chinese = i % 7 == 6;
            let m = rng.random_range(2..=6);
            let (question, reference) = if chinese {
                (format!("{}是什么？", han_text(&mut rng, 4)), han_text(&mut rng, 12))
            } else if nonfactoid {
                let len = rng.random_range(3..6);
                let topic = sentence(&mut rng, 2);
                (
                    format!("Describe how to plan a {topic} project."),
                    format!("{}. {}. {}.", sentence(&mut rng, len), sentence(&mut rng, len), sentence(&mut rng, len)),
                )
            } else {
                let len = rng.random_range(4..9);
                let topic = sentence(&mut rng, 1);
                (format!("What is the {topic} number {i}?"), format!("{}. {}.", sentence(&mut rng, len), sentence(&mut rng, len)))
            };
            let mut keeps: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut texts: Vec<String> = keeps
                .iter()
                .map(|&k| {
                    if chinese {
                        let chars: Vec<char> = reference.chars().collect();
                        let take = ((chars.len() as f64) * k).ceil().max(1.0) as usize;
                        chars[..take].iter().collect()
                    } else {
                        degrade(&mut rng, &reference, k)
                    }
                })
                .collect();
            if m >= 3 && i % 4 == 0 {
                texts[2] = texts[1].clone();
                keeps[2] = keeps[1];
            }
            let responses: Vec<CandidateResponse> = texts
                .into_iter()
                .enumerate()
                .map(|(j, t)| CandidateResponse::new(format!("r{}", j + 1), format!("model-{j}"), t))
                .collect();
            let mut gold: Vec<usize> = (0..m).collect();
            gold.sort_by(|&a, &b| keeps[b].total_cmp(&keeps[a]).then(a.cmp(&b)));
            EvalSample::new(format!("s{i:03}"), question, reference, responses)
                .with_kind(if nonfactoid { QuestionKind::NonFactoid } else { QuestionKind::Factoid })
                .with_gold(gold.iter().map(|j| format!("r{}", j + 1)).collect())
        })
        .collect()
}
