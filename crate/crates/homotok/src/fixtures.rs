//! Deterministic synthetic vocabularies and corpora for tests, demos, and
//! the desk-scale experiments. Nothing here is downloaded; everything is
//! generated from fixed seeds so runs reproduce bit-for-bit.

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::Rng;

use crate::rng::rng_from_seed;
use crate::vocab::{TokenId, Vocab};

/// The six-token vocabulary used throughout the examples:
/// a, b, c, ab, bc, abc.
pub fn toy_vocab() -> Vocab {
    Vocab::from_pairs(vec![
        (b"a".to_vec(), 0),
        (b"b".to_vec(), 1),
        (b"c".to_vec(), 2),
        (b"ab".to_vec(), 3),
        (b"bc".to_vec(), 4),
        (b"abc".to_vec(), 5),
    ])
    .expect("toy vocab is well-formed")
}

/// The byte alphabet in GPT-2 vocabulary order: printable ranges first,
/// then the remapped bytes ascending. Byte-token ids follow from this
/// order alone (e.g. "d" = 0x64 - 0x21 = 67, "s" = 82, space = 220).
fn gpt2_byte_order() -> Vec<u8> {
    let mut order: Vec<u8> = (0x21..=0x7eu8).collect();
    order.extend(0xa1..=0xacu8);
    order.extend(0xae..=0xffu8);
    let direct: HashSet<u8> = order.iter().copied().collect();
    order.extend((0x00..=0xffu8).filter(|b| !direct.contains(b)));
    order
}

/// A 50257-entry vocabulary in the GPT-2 `vocab.json` layout: the 256-byte
/// alphabet at ids 0..=255 in GPT-2 order, a handful of pinned subword
/// tokens ("ino" at 2879, "aur" at 2899, "inosaur" at 21317,
/// `<|endoftext|>` at 50256), and deterministic pseudo-English merges
/// filling the rest. No token other than "d" itself is a prefix of
/// "dinosaur", so the longest-prefix encoding of "dinosaur" is
/// [67, 21317], and "saur" encodes as [82, 2899].
pub fn gpt2_style_vocab() -> &'static Vocab {
    static VOCAB: OnceLock<Vocab> = OnceLock::new();
    VOCAB.get_or_init(build_gpt2_style)
}

fn build_gpt2_style() -> Vocab {
    const SIZE: usize = 50257;
    let mut slots: Vec<Option<Vec<u8>>> = vec![None; SIZE];
    let mut used: HashSet<Vec<u8>> = HashSet::new();

    for (id, b) in gpt2_byte_order().into_iter().enumerate() {
        let tok = vec![b];
        used.insert(tok.clone());
        slots[id] = Some(tok);
    }

    let pinned: [(usize, &str); 4] =
        [(2879, "ino"), (2899, "aur"), (21317, "inosaur"), (50256, "<|endoftext|>")];
    for (id, s) in pinned {
        let tok = s.as_bytes().to_vec();
        assert!(used.insert(tok.clone()), "pinned token {s:?} duplicated");
        slots[id] = Some(tok);
    }

    // Tokens that must never exist: proper extensions of "d" prefixing
    // "dinosaur" (they would change its canonical encoding), prefixes of
    // "saur" longer than "s" (they would change the remainder encoding of
    // the "ino" split), and "inosau" (it would enter the candidate pool).
    let forbidden: HashSet<&[u8]> = [
        &b"di"[..], b"din", b"dino", b"dinos", b"dinosa", b"dinosau", b"dinosaur", b"sa", b"sau",
        b"saur", b"inosau",
    ]
    .into_iter()
    .collect();

    // Early merges that the pinned examples lean on, placed at the first
    // free ids for stability.
    let early = ["in", "inos", "inosa", " the", "the", " a", " of", " and", " to", "er", "ing"];
    let mut cursor = 256;
    let mut place = |slots: &mut Vec<Option<Vec<u8>>>, used: &mut HashSet<Vec<u8>>, tok: Vec<u8>| {
        if used.contains(&tok) || forbidden.contains(tok.as_slice()) {
            return;
        }
        while slots[cursor].is_some() {
            cursor += 1;
        }
        used.insert(tok.clone());
        slots[cursor] = Some(tok);
    };
    for s in early {
        place(&mut slots, &mut used, s.as_bytes().to_vec());
    }

    const SYL: [&str; 72] = [
        "ba", "be", "bi", "bo", "bu", "ca", "ce", "ci", "co", "cu", "da", "de", "di", "do", "du",
        "fa", "fe", "fi", "fo", "ga", "ge", "go", "ha", "he", "hi", "ho", "hu", "ka", "ke", "ki",
        "ko", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no",
        "nu", "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro", "ru", "sa", "se", "si", "so",
        "su", "ta", "te", "ti", "to", "tu", "va", "ve", "vi", "wa", "we", "wo",
    ];
    const SUFFIX: [&str; 8] = ["s", "ed", "ing", "er", "ly", "tion", "ness", "ment"];
    let mut rng = rng_from_seed(0x6770_7432);
    loop {
        while cursor < SIZE && slots[cursor].is_some() {
            cursor += 1;
        }
        if cursor >= SIZE {
            break;
        }
        let mut tok = String::new();
        if rng.random::<f64>() < 0.45 {
            tok.push(' ');
        }
        let n_syl = 1 + rng.random_range(0..4usize);
        for _ in 0..n_syl {
            tok.push_str(SYL[rng.random_range(0..SYL.len())]);
        }
        if rng.random::<f64>() < 0.15 {
            tok.push_str(SUFFIX[rng.random_range(0..SUFFIX.len())]);
        }
        let bytes = tok.into_bytes();
        if bytes.len() < 2 || used.contains(&bytes) || forbidden.contains(bytes.as_slice()) {
            continue;
        }
        used.insert(bytes.clone());
        slots[cursor] = Some(bytes);
    }

    Vocab::from_pairs(
        slots
            .into_iter()
            .enumerate()
            .map(|(id, tok)| (tok.expect("every slot filled"), id as TokenId)),
    )
    .expect("generated vocab is well-formed")
}

// Roughly frequency-ordered word bank for the synthetic corpus; includes
// inflected variants and nested families (under / understand /
// understanding) so canonical tokens admit several valid splits.
const WORD_BANK: [&str; 466] = [
    "the", "of", "and", "a", "to", "in", "is", "was", "that", "for", "it", "with", "as", "his",
    "on", "be", "at", "by", "had", "not", "are", "but", "from", "or", "have", "an", "they",
    "which", "one", "you", "were", "her", "all", "she", "there", "would", "their", "we", "him",
    "been", "has", "when", "who", "will", "more", "no", "if", "out", "so", "said", "what", "up",
    "its", "about", "into", "than", "them", "can", "only", "other", "new", "some", "could",
    "time", "these", "two", "may", "then", "do", "first", "any", "my", "now", "such", "like",
    "our", "over", "man", "me", "even", "most", "made", "after", "also", "did", "many", "before",
    "must", "through", "years", "where", "much", "your", "way", "well", "down", "should",
    "because", "each", "just", "those", "people", "how", "too", "little", "state", "good",
    "very", "make", "world", "still", "own", "see", "men", "work", "long", "get", "here",
    "between", "both", "life", "being", "under", "never", "day", "same", "another", "know",
    "while", "last", "might", "great", "old", "year", "off", "come", "since", "against", "go",
    "came", "right", "used", "take", "three", "states", "himself", "few", "house", "use",
    "during", "without", "again", "place", "around", "however", "home", "small", "found",
    "thought", "went", "say", "part", "once", "general", "high", "upon", "school", "every",
    "does", "got", "united", "left", "number", "course", "war", "until", "always", "away",
    "something", "fact", "though", "water", "less", "public", "put", "think", "almost", "hand",
    "enough", "far", "took", "head", "yet", "government", "system", "better", "set", "told",
    "nothing", "night", "end", "why", "called", "didn", "eyes", "find", "going", "look",
    "asked", "later", "knew", "point", "next", "program", "city", "business", "give", "group",
    "toward", "young", "days", "let", "room", "within", "children", "side", "social", "given",
    "order", "often", "including", "important", "several", "national", "possible", "rather",
    "large", "big", "case", "among", "things", "best", "certain", "different", "kind", "began",
    "door", "means", "question", "development", "others", "along", "area", "feel", "face",
    "second", "per", "done", "least", "open", "interest", "power", "seemed", "family", "form",
    "turned", "members", "wanted", "although", "country", "shall", "problem", "felt", "close",
    "four", "result", "light", "need", "words", "human", "line", "itself", "name", "saw",
    "action", "across", "company", "mind", "period", "change", "moment", "turn", "help",
    "whole", "able", "history", "party", "know", "keep", "perhaps", "seen", "five", "word",
    "experience", "quite", "information", "free", "example", "already", "either", "making",
    "understand", "understanding", "understood", "stand", "standing", "reaction", "together",
    "half", "real", "certainly", "probably", "level", "law", "short", "run", "play", "red",
    "leave", "matter", "several", "feet", "person", "full", "military", "street", "tell",
    "further", "held", "body", "service", "major", "brought", "especially", "early", "church",
    "gave", "white", "evidence", "study", "position", "common", "idea", "class", "taken",
    "college", "started", "working", "stated", "students", "art", "force", "land", "century",
    "value", "reason", "above", "believe", "south", "control", "sure", "modern", "required",
    "sense", "black", "report", "usually", "market", "behind", "particular", "various",
    "policy", "available", "effect", "education", "university", "north", "process", "table",
    "air", "field", "expected", "provide", "instead", "mother", "written", "paper", "hours",
    "makes", "moved", "morning", "sound", "society", "economic", "strong", "special", "type",
    "front", "ground", "present", "rest", "increase", "results", "cost", "road", "father",
    "surface", "hard", "remember", "plan", "nature", "total", "knowledge", "nearly", "clear",
    "private", "money", "situation", "research", "account", "terms", "training", "west",
    "industry", "local", "performance", "considered", "direction", "distance", "section",
    "recent", "material", "plant", "music", "purpose", "complete", "building", "federal",
    "river", "foreign", "future", "press", "dark", "basic", "secretary", "minutes", "earth",
    "trying", "attention", "read", "issue", "low", "amount", "single", "outside", "carried",
];

const NAME_SYL: [&str; 24] = [
    "an", "bar", "bel", "cor", "dan", "dor", "el", "far", "gal", "hal", "jor", "kal", "lan",
    "mar", "nor", "or", "pal", "quin", "ras", "sel", "tor", "ulf", "var", "wyn",
];

/// Deterministic pseudo-English corpus: Zipf-weighted words from the bank,
/// occasional generated proper names (memorization bait: mostly unique),
/// sentence and paragraph structure.
pub fn synthetic_corpus(seed: u64, target_bytes: usize) -> String {
    let mut rng = rng_from_seed(seed);
    // Zipf-ish cumulative weights over the bank
    let weights: Vec<f64> = (0..WORD_BANK.len()).map(|r| 1.0 / (r as f64 + 3.0)).collect();
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cum.push(acc);
    }
    let total = acc;

    let draw_word = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
        if rng.random::<f64>() < 0.03 {
            // proper name
            let n = 2 + rng.random_range(0..3usize);
            let mut name = String::new();
            for i in 0..n {
                let syl = NAME_SYL[rng.random_range(0..NAME_SYL.len())];
                if i == 0 {
                    let mut cs = syl.chars();
                    let first = cs.next().expect("nonempty syllable");
                    name.extend(first.to_uppercase());
                    name.push_str(cs.as_str());
                } else {
                    name.push_str(syl);
                }
            }
            name
        } else {
            let x = rng.random::<f64>() * total;
            let idx = cum.partition_point(|&c| c < x).min(WORD_BANK.len() - 1);
            WORD_BANK[idx].to_string()
        }
    };

    let mut out = String::with_capacity(target_bytes + 256);
    while out.len() < target_bytes {
        let sentences = 3 + rng.random_range(0..6usize);
        for s in 0..sentences {
            let words = 6 + rng.random_range(0..9usize);
            for i in 0..words {
                let mut w = draw_word(&mut rng);
                if i == 0 {
                    let mut cs = w.chars();
                    if let Some(first) = cs.next() {
                        w = first.to_uppercase().chain(cs).collect();
                    }
                    if s > 0 {
                        out.push(' ');
                    }
                } else {
                    out.push(' ');
                }
                out.push_str(&w);
                if i + 1 < words && rng.random::<f64>() < 0.08 {
                    out.push(',');
                }
            }
            let roll = rng.random::<f64>();
            out.push(if roll < 0.85 {
                '.'
            } else if roll < 0.93 {
                '?'
            } else {
                '!'
            });
        }
        out.push_str("\n\n");
    }
    out
}

/// Desk-scale vocabulary: all 256 bytes, the space-prefixed form of every
/// bank word, and short fragments (bare and space-prefixed) that give most
/// tokens several valid proper-prefix splits and cover split remainders.
/// Ids are dense, so the vocabulary writes cleanly in the line format.
pub fn desk_vocab() -> &'static Vocab {
    static VOCAB: OnceLock<Vocab> = OnceLock::new();
    VOCAB.get_or_init(|| {
        const FRAGMENTS: [&str; 60] = [
            "th", "he", "in", "er", "an", "re", "on", "at", "en", "nd", "ed", "es", "or", "te",
            "of", "ti", "ar", "st", "to", "it", "ng", "al", "is", "ou", "as", "le", "ve", "co",
            "me", "de", "hi", "ri", "ro", "ic", "ne", "ea", "ra", "ce", "li", "ch", "ll", "be",
            "ma", "si", "ing", "ion", "ent", "and", "the", "ther", "der", "ders", "tion",
            "tions", "ting", "standing", "stand", "ss", "ight", "ough",
        ];
        let mut tokens: Vec<Vec<u8>> = (0u16..=255).map(|b| vec![b as u8]).collect();
        let mut used: HashSet<Vec<u8>> = tokens.iter().cloned().collect();
        let push = |tokens: &mut Vec<Vec<u8>>, used: &mut HashSet<Vec<u8>>, s: String| {
            let bytes = s.into_bytes();
            if used.insert(bytes.clone()) {
                tokens.push(bytes);
            }
        };
        for f in FRAGMENTS {
            push(&mut tokens, &mut used, f.to_string());
            push(&mut tokens, &mut used, format!(" {f}"));
        }
        for w in WORD_BANK {
            push(&mut tokens, &mut used, format!(" {w}"));
        }
        Vocab::from_pairs(
            tokens.into_iter().enumerate().map(|(id, tok)| (tok, id as TokenId)),
        )
        .expect("desk vocab is well-formed")
    })
}
