//! Synthetic corpus generation with a controlled overlap mix.
//!
//! Sentences are templated from a filler vocabulary and per-sentence-unique
//! entity phrases (lengths 1-5), so every entity string resolves to exactly
//! one token span and the gold annotation survives the surface round trip.
//! Three patterns drive the mix: Normal (one isolated triplet), SEO (either
//! a shared subject with two objects or a chain), and EPO (the same entity
//! pair under two distinct relations).

use crate::data::{AnnotatedExample, DataError, GoldTriplet, RelationSchema};
use crate::attention::Span;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLERS: [&str; 20] = [
    "the", "a", "report", "said", "that", "meanwhile", "group", "from", "near", "early",
    "deal", "with", "for", "again", "later", "board", "plan", "city", "old", "new",
];

const SYLLABLES: [&str; 16] = [
    "zor", "mek", "tal", "vun", "qir", "pol", "nax", "bru", "sel", "gam", "dor", "fen",
    "kul", "rav", "wex", "hin",
];

/// Requested triplet-level fractions; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapMix {
    pub normal: f64,
    pub seo: f64,
    pub epo: f64,
}

impl OverlapMix {
    pub fn new(normal: f64, seo: f64, epo: f64) -> Result<Self, DataError> {
        let mix = OverlapMix { normal, seo, epo };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [("normal", self.normal), ("seo", self.seo), ("epo", self.epo)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::Config(format!("mix fraction {} = {} outside [0, 1]", name, v)));
            }
        }
        let sum = self.normal + self.seo + self.epo;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::Config(format!("mix fractions sum to {}, expected 1", sum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pattern {
    Normal,
    Seo,
    Epo,
}

/// The full distinct-entity word pool: syllable pairs, 240 entries.
fn entity_pool() -> Vec<String> {
    let mut pool = Vec::with_capacity(SYLLABLES.len() * (SYLLABLES.len() - 1));
    for a in SYLLABLES {
        for b in SYLLABLES {
            if a != b {
                pool.push(format!("{}{}", a, b));
            }
        }
    }
    pool
}

struct SentenceBuilder<'a> {
    tokens: Vec<String>,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> SentenceBuilder<'a> {
    fn new(rng: &'a mut ChaCha8Rng) -> Self {
        SentenceBuilder { tokens: Vec::new(), rng }
    }

    fn fillers(&mut self, max: usize) {
        let n = self.rng.gen_range(0..=max);
        for _ in 0..n {
            let f = FILLERS[self.rng.gen_range(0..FILLERS.len())];
            self.tokens.push(f.to_string());
        }
    }

    fn entity(&mut self, words: &[String]) -> Span {
        let start = self.tokens.len();
        self.tokens.extend(words.iter().cloned());
        Span::new(start, start + words.len() - 1)
    }
}

/// Draws `n` disjoint entity phrases (1-5 words each) from the pool without
/// reusing a word inside one sentence.
fn draw_entities(rng: &mut ChaCha8Rng, pool: &[String], n: usize) -> Vec<Vec<String>> {
    let mut picked: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.gen_range(1..=5usize);
        let mut phrase = Vec::with_capacity(len);
        for _ in 0..len {
            loop {
                let i = rng.gen_range(0..pool.len());
                if !picked.contains(&i) {
                    picked.push(i);
                    phrase.push(pool[i].clone());
                    break;
                }
            }
        }
        out.push(phrase);
    }
    out
}

fn pattern_counts(n: usize, mix: OverlapMix) -> [usize; 3] {
    // sentence-level weights compensate for triplet yield per pattern
    // (Normal yields 1 triplet, SEO and EPO yield 2)
    let w = [mix.normal / 1.0, mix.seo / 2.0, mix.epo / 2.0];
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return [n, 0, 0];
    }
    let exact: Vec<f64> = w.iter().map(|x| x / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest: Vec<(usize, f64)> = exact
        .iter()
        .enumerate()
        .map(|(i, x)| (i, x - x.floor()))
        .collect();
    rest.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut short = n - counts.iter().sum::<usize>();
    for (i, _) in rest {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Generates `n` annotated sentences with the requested overlap composition.
pub fn generate_synthetic(
    seed: u64,
    n: usize,
    schema: &RelationSchema,
    mix: OverlapMix,
) -> Result<Vec<AnnotatedExample>, DataError> {
    mix.validate()?;
    if schema.is_empty() {
        return Err(DataError::Config("schema has no relations".into()));
    }
    if mix.epo > 0.0 && schema.len() < 2 {
        return Err(DataError::Config(
            "an EPO mix needs at least 2 relations (same pair, different relations)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = entity_pool();
    let [n_normal, n_seo, n_epo] = pattern_counts(n, mix);
    let mut patterns = Vec::with_capacity(n);
    patterns.extend(std::iter::repeat(Pattern::Normal).take(n_normal));
    patterns.extend(std::iter::repeat(Pattern::Seo).take(n_seo));
    patterns.extend(std::iter::repeat(Pattern::Epo).take(n_epo));
    patterns.shuffle(&mut rng);

    let rel = |rng: &mut ChaCha8Rng| rng.gen_range(0..schema.len());
    let mut out = Vec::with_capacity(n);
    for pattern in patterns {
        let mut b = SentenceBuilder::new(&mut rng);
        let mut triplets: Vec<(Span, usize, Span)> = Vec::new();
        match pattern {
            Pattern::Normal => {
                let ents = draw_entities(b.rng, &pool, 2);
                b.fillers(2);
                let e1 = b.entity(&ents[0]);
                b.fillers(2);
                let e2 = b.entity(&ents[1]);
                b.fillers(1);
                let r = rel(b.rng);
                triplets.push((e1, r, e2));
            }
            Pattern::Seo => {
                let ents = draw_entities(b.rng, &pool, 3);
                if b.rng.gen::<bool>() {
                    // shared subject: (E1, r1, E2), (E1, r2, E3)
                    b.fillers(1);
                    let e1 = b.entity(&ents[0]);
                    b.fillers(2);
                    let e2 = b.entity(&ents[1]);
                    b.fillers(2);
                    let e3 = b.entity(&ents[2]);
                    b.fillers(1);
                    triplets.push((e1, rel(b.rng), e2));
                    triplets.push((e1, rel(b.rng), e3));
                } else {
                    // chain: (E1, r1, E2), (E2, r2, E3)
                    b.fillers(1);
                    let e1 = b.entity(&ents[0]);
                    b.fillers(2);
                    let e2 = b.entity(&ents[1]);
                    b.fillers(2);
                    let e3 = b.entity(&ents[2]);
                    b.fillers(1);
                    triplets.push((e1, rel(b.rng), e2));
                    triplets.push((e2, rel(b.rng), e3));
                }
            }
            Pattern::Epo => {
                let ents = draw_entities(b.rng, &pool, 2);
                b.fillers(1);
                let e1 = b.entity(&ents[0]);
                b.fillers(2);
                let e2 = b.entity(&ents[1]);
                b.fillers(1);
                let r1 = rel(b.rng);
                let r2 = loop {
                    let r = rel(b.rng);
                    if r != r1 {
                        break r;
                    }
                };
                triplets.push((e1, r1, e2));
                triplets.push((e1, r2, e2));
            }
        }
        let tokens = b.tokens;
        out.push(AnnotatedExample {
            source: tokens.join(" "),
            triplets: triplets
                .into_iter()
                .map(|(s, r, o)| GoldTriplet {
                    subject: s,
                    label: schema.label(r).to_string(),
                    object: o,
                })
                .collect(),
            tokens,
        });
    }
    Ok(out)
}
