//! Seeded synthetic datasets used by tests, benches and the CLI demo paths.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{KnowledgeDocument, Provenance, TripletRecord};
use crate::embed::fnv1a64;
use crate::eval::EvalQuery;

const WORDS: &[&str] = &[
    "wiper",
    "speed",
    "stage",
    "relay",
    "signal",
    "voltage",
    "battery",
    "door",
    "lock",
    "window",
    "mirror",
    "seat",
    "heater",
    "fan",
    "climate",
    "radio",
    "volume",
    "display",
    "cluster",
    "brake",
    "pedal",
    "throttle",
    "engine",
    "torque",
    "gear",
    "shift",
    "steering",
    "angle",
    "sensor",
    "camera",
    "radar",
    "lane",
    "assist",
    "cruise",
    "control",
    "headlamp",
    "beam",
    "indicator",
    "hazard",
    "horn",
    "ignition",
    "start",
    "stop",
    "timeout",
    "fault",
    "diagnostic",
    "message",
    "frame",
    "cycle",
    "counter",
    "checksum",
    "gateway",
    "network",
    "sleep",
    "wakeup",
    "current",
    "threshold",
    "temperature",
    "pressure",
    "tire",
    "airbag",
    "belt",
    "warning",
    "chime",
    "trunk",
    "hood",
    "rain",
    "light",
    "dimming",
    "park",
    "reverse",
    "neutral",
    "drive",
    "mode",
    "eco",
    "sport",
    "charge",
    "inverter",
    "motor",
    "coolant",
    "pump",
    "valve",
    "fuel",
    "level",
    "odometer",
    "trip",
    "key",
    "remote",
];
const CATEGORIES: &[&str] = &[
    "body",
    "chassis",
    "powertrain",
    "infotainment",
    "adas",
    "exterior",
];
const SIGNALS: &[&str] = &[
    "VehSpd",
    "WiperStat",
    "EngSpd",
    "BattVolt",
    "DoorLockSt",
    "GearPos",
    "SteerAng",
];

fn sentence(rng: &mut ChaCha8Rng, len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(len);
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("non-empty vocabulary"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` documents with ids `DOC-0000`.., random requirement text, optional
/// description and test steps, and `module_id`/`signals` metadata.
pub fn random_corpus(n: usize, seed: u64) -> Vec<KnowledgeDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let title = sentence(&mut rng, 2..=4);
            let requirements = sentence(&mut rng, 6..=14);
            let category = *CATEGORIES.choose(&mut rng).expect("non-empty");
            let mut doc =
                KnowledgeDocument::new(format!("DOC-{i:04}"), title, requirements, category);
            if rng.random_bool(0.5) {
                doc.description = Some(sentence(&mut rng, 4..=10));
            }
            if rng.random_bool(0.4) {
                doc.sequences = Some(
                    (0..rng.random_range(1..=4))
                        .map(|_| sentence(&mut rng, 3..=6))
                        .collect(),
                );
            }
            doc.metadata.insert(
                "module_id".into(),
                json!(format!("M{}", rng.random_range(0..12))),
            );
            let count = rng.random_range(0..=2);
            let signals: Vec<&str> = SIGNALS.choose_multiple(&mut rng, count).copied().collect();
            doc.metadata.insert("signals".into(), json!(signals));
            doc
        })
        .collect()
}

/// `n` triplets with random anchor/positive/negative text drawn from the
/// corpus vocabulary; about one in ten repeats a text to produce ties.
pub fn random_triplets(n: usize, seed: u64) -> Vec<TripletRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let anchor = sentence(&mut rng, 3..=10);
            let mut positive = sentence(&mut rng, 3..=10);
            while positive == anchor {
                positive = sentence(&mut rng, 3..=10);
            }
            // Case-folded copies embed identically, so these score as ties.
            let negative = if rng.random_bool(0.1) {
                positive.to_uppercase()
            } else {
                sentence(&mut rng, 3..=10)
            };
            TripletRecord::new(
                anchor,
                positive,
                Some(negative),
                Provenance::Synthetic,
                Vec::new(),
            )
            .expect("non-empty texts")
        })
        .collect()
}

/// Queries built from a random contiguous slice of each sampled document's
/// requirement text.
pub fn eval_queries(corpus: &[KnowledgeDocument], n: usize, seed: u64) -> Vec<EvalQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let doc = corpus.choose(&mut rng).expect("non-empty corpus");
            let words: Vec<&str> = doc.requirements.split_whitespace().collect();
            let len = rng
                .random_range(2..=words.len().clamp(2, 6))
                .min(words.len());
            let start = rng.random_range(0..=words.len() - len);
            EvalQuery::new(words[start..start + len].join(" "), &doc.id)
        })
        .collect()
}

/// Training and benchmark triplets for the fine-tuning experiments.
#[derive(Debug, Clone)]
pub struct SeparableFixture {
    pub dimension: usize,
    pub train: Vec<TripletRecord>,
    pub benchmark: Vec<TripletRecord>,
}

/// Picks `count` words `{prefix}{i}` whose hash buckets are unused so far.
fn distinct_bucket_words(
    prefix: &str,
    count: usize,
    dim: usize,
    used: &mut BTreeSet<u64>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while out.len() < count {
        let word = format!("{prefix}{i}");
        if used.insert(fnv1a64(&word) % dim as u64) {
            out.push(word);
        }
        i += 1;
    }
    out
}

/// Anchor and positive share a topic keyword; all three texts share a
/// category word, and the negative also repeats 0–3 of the anchor's filler
/// words, so the untrained embedding often prefers the negative. Pulling
/// positives closer also amplifies the category word the negative carries;
/// only the negatives teach the adapter to discount it. Every word has its
/// own hash bucket, which keeps the task linearly solvable.
pub fn separable_triplets(
    dim: usize,
    n_train: usize,
    n_bench: usize,
    seed: u64,
) -> SeparableFixture {
    const KEYWORDS: usize = 12;
    const CATEGORIES: usize = 4;
    const FILLERS: usize = 32;
    assert!(
        dim >= KEYWORDS + CATEGORIES + FILLERS,
        "dimension too small for the fixture vocabulary"
    );
    let mut used = BTreeSet::new();
    let keywords = distinct_bucket_words("topic", KEYWORDS, dim, &mut used);
    let categories = distinct_bucket_words("group", CATEGORIES, dim, &mut used);
    let fillers = distinct_bucket_words("filler", FILLERS, dim, &mut used);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(0..KEYWORDS);
        let j = (k + rng.random_range(1..KEYWORDS)) % KEYWORDS;
        let cat = &categories[rng.random_range(0..CATEGORIES)];
        let mut pool: Vec<&String> = fillers.iter().collect();
        pool.shuffle(rng);
        let shared = rng.random_range(0..=3);
        let mut anchor: Vec<&String> = pool[..3].to_vec();
        let mut positive: Vec<&String> = pool[3..5].to_vec();
        let mut negative: Vec<&String> = pool[..shared]
            .iter()
            .chain(&pool[5..5 + (3 - shared)])
            .copied()
            .collect();
        anchor.extend([&keywords[k], cat]);
        positive.extend([&keywords[k], cat]);
        negative.extend([&keywords[j], cat]);
        let [anchor, positive, negative] = [anchor, positive, negative].map(|mut words| {
            words.shuffle(rng);
            words
                .iter()
                .map(|w| w.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        });
        TripletRecord::new(
            anchor,
            positive,
            Some(negative),
            Provenance::Synthetic,
            Vec::new(),
        )
        .expect("non-empty")
    };
    let train = (0..n_train).map(|_| make(&mut rng)).collect();
    let benchmark = (0..n_bench).map(|_| make(&mut rng)).collect();
    SeparableFixture {
        dimension: dim,
        train,
        benchmark,
    }
}
