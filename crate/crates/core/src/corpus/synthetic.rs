//! Templated captioning task over sampled attribute sets.
//!
//! Each example draws one value per attribute slot (object, color, place, then optionally size,
//! action and time of day). The context vector is a seeded random projection of the concatenated
//! one-hot codes plus a little Gaussian noise. References realise the attributes through one of a
//! few sentence templates with synonym and determiner noise.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Example, SplitSpec, Token, Vocabulary};

pub const MIN_ATTRIBUTES: usize = 3;
pub const MAX_ATTRIBUTES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_examples: usize,
    pub num_attributes: usize,
    pub refs_per_example: usize,
    pub context_dim: usize,
    pub context_noise: f64,
    pub max_len: usize,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// The corpus used by the desk training preset: all six attribute slots (55 words).
    pub fn desk() -> Self {
        SyntheticConfig {
            num_attributes: MAX_ATTRIBUTES,
            ..Self::default()
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_examples: 2000,
            num_attributes: 4,
            refs_per_example: 5,
            context_dim: 32,
            context_noise: 0.05,
            max_len: 16,
            val_frac: 0.1,
            test_frac: 0.1,
            seed: 7,
        }
    }
}

struct Slot {
    /// Each value is a list of interchangeable phrasings; a phrasing may span several words.
    values: &'static [&'static [&'static str]],
}

const OBJECT: Slot = Slot {
    values: &[
        &["dog", "puppy"],
        &["cat", "kitten"],
        &["bird"],
        &["horse", "pony"],
        &["car"],
        &["boat"],
        &["man", "guy"],
        &["woman", "lady"],
    ],
};
const COLOR: Slot = Slot {
    values: &[
        &["red"],
        &["blue"],
        &["green"],
        &["yellow"],
        &["black"],
        &["white"],
        &["brown"],
    ],
};
const PLACE: Slot = Slot {
    values: &[
        &["table"],
        &["grass", "lawn"],
        &["beach", "shore"],
        &["street", "road"],
        &["snow"],
        &["bed"],
    ],
};
const SIZE: Slot = Slot {
    values: &[&["small", "little"], &["large", "big"]],
};
const ACTION: Slot = Slot {
    values: &[
        &["sitting"],
        &["standing"],
        &["sleeping", "resting"],
        &["running"],
    ],
};
const TIME: Slot = Slot {
    values: &[&["at night"], &["during the day"], &["at sunset"]],
};

const SLOTS: [&Slot; MAX_ATTRIBUTES] = [&OBJECT, &COLOR, &PLACE, &SIZE, &ACTION, &TIME];
const PREPOSITIONS: &[&str] = &["on", "on top of"];
const STRUCTURE_WORDS: &[&str] = &["a", "the", "there", "is", "has", "it"];

fn split_words(phrase: &str) -> impl Iterator<Item = &str> {
    phrase.split_whitespace()
}

/// Words that can appear in a reference for the given attribute indices.
pub fn licensed_words(num_attributes: usize, attributes: &[usize]) -> Vec<&'static str> {
    let mut out: Vec<&str> = STRUCTURE_WORDS.to_vec();
    out.extend(PREPOSITIONS.iter().flat_map(|p| split_words(p)));
    for (slot, &v) in SLOTS[..num_attributes].iter().zip(attributes) {
        out.extend(slot.values[v].iter().flat_map(|p| split_words(p)));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Alternative phrasings for each attribute of an example, in slot order.
pub fn attribute_phrasings(
    num_attributes: usize,
    attributes: &[usize],
) -> Vec<&'static [&'static str]> {
    SLOTS[..num_attributes]
        .iter()
        .zip(attributes)
        .map(|(slot, &v)| slot.values[v])
        .collect()
}

fn vocabulary(num_attributes: usize) -> Vocabulary {
    let mut words: Vec<&str> = STRUCTURE_WORDS.to_vec();
    words.extend(PREPOSITIONS.iter().flat_map(|p| split_words(p)));
    for slot in &SLOTS[..num_attributes] {
        for v in slot.values {
            words.extend(v.iter().flat_map(|p| split_words(p)));
        }
    }
    let mut v = Vocabulary::new();
    for w in words {
        v.insert(w);
    }
    v
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn determiner<R: Rng>(rng: &mut R) -> &'static str {
    if rng.gen_bool(0.7) {
        "a"
    } else {
        "the"
    }
}

fn realise<R: Rng>(rng: &mut R, num_attributes: usize, attrs: &[usize]) -> Vec<String> {
    let phr = |rng: &mut R, slot: usize| -> Option<&'static str> {
        (slot < num_attributes).then(|| pick(rng, SLOTS[slot].values[attrs[slot]]))
    };
    let object = phr(rng, 0).unwrap();
    let color = phr(rng, 1).unwrap();
    let place = phr(rng, 2).unwrap();
    let size = phr(rng, 3);
    let action = phr(rng, 4);
    let time = phr(rng, 5);
    let prep = pick(rng, PREPOSITIONS);

    let mut noun_phrase: Vec<&str> = vec![determiner(rng)];
    noun_phrase.extend(size);
    noun_phrase.push(color);
    noun_phrase.push(object);

    let mut words: Vec<&str> = Vec::new();
    match rng.gen_range(0..4) {
        // "a small red dog sitting on the table at night"
        0 | 1 => {
            words.extend(&noun_phrase);
            words.extend(action);
            words.push(prep);
            words.push(determiner(rng));
            words.push(place);
            words.extend(time);
        }
        // "there is a small red dog sitting on the table at night"
        2 => {
            words.extend(["there", "is"]);
            words.extend(&noun_phrase);
            words.extend(action);
            words.push(prep);
            words.push(determiner(rng));
            words.push(place);
            words.extend(time);
        }
        // "the table has a small red dog sitting on it at night"
        _ => {
            words.push(determiner(rng));
            words.push(place);
            words.push("has");
            words.extend(&noun_phrase);
            words.extend(action);
            words.extend(["on", "it"]);
            words.extend(time);
        }
    }
    words
        .iter()
        .flat_map(|p| split_words(p))
        .map(str::to_string)
        .collect()
}

/// Deterministic in `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> crate::Result<Dataset> {
    if !(MIN_ATTRIBUTES..=MAX_ATTRIBUTES).contains(&cfg.num_attributes) {
        return Err(crate::Error::Config(format!(
            "num_attributes must be in {MIN_ATTRIBUTES}..={MAX_ATTRIBUTES}, got {}",
            cfg.num_attributes
        )));
    }
    if cfg.refs_per_example == 0 {
        return Err(crate::Error::Config(
            "refs_per_example must be positive".into(),
        ));
    }
    let vocab = vocabulary(cfg.num_attributes);
    let slots = &SLOTS[..cfg.num_attributes];
    let code_dim: usize = slots.iter().map(|s| s.values.len()).sum();

    let mut proj_rng = crate::seed::rng(cfg.seed, &[1]);
    let scale = 1.0 / (code_dim as f64 / cfg.num_attributes as f64).sqrt();
    let projection: Vec<f64> = (0..code_dim * cfg.context_dim)
        .map(|_| proj_rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();

    let examples = (0..cfg.num_examples)
        .map(|i| {
            let mut rng = crate::seed::rng(cfg.seed, &[2, i as u64]);
            let attributes: Vec<usize> = slots
                .iter()
                .map(|s| rng.gen_range(0..s.values.len()))
                .collect();
            let mut context = vec![0.0; cfg.context_dim];
            let mut offset = 0;
            for (slot, &a) in slots.iter().zip(&attributes) {
                let row = &projection[(offset + a) * cfg.context_dim..][..cfg.context_dim];
                for (c, p) in context.iter_mut().zip(row) {
                    *c += p;
                }
                offset += slot.values.len();
            }
            for c in context.iter_mut() {
                *c += cfg.context_noise * rng.sample::<f64, _>(StandardNormal);
            }
            let references = (0..cfg.refs_per_example)
                .map(|_| {
                    let words = realise(&mut rng, cfg.num_attributes, &attributes);
                    let mut toks: Vec<Token> = vocab.encode(&words);
                    toks.truncate(cfg.max_len);
                    toks
                })
                .collect();
            Example {
                id: i as u64,
                context,
                references,
                attributes,
            }
        })
        .collect();

    Ok(Dataset {
        vocab,
        examples,
        splits: SplitSpec::random(cfg.num_examples, cfg.val_frac, cfg.test_frac, cfg.seed),
        max_len: cfg.max_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let cfg = SyntheticConfig {
            num_examples: 50,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.examples, c.examples);
    }

    #[test]
    fn rejects_too_few_attributes() {
        let cfg = SyntheticConfig {
            num_attributes: 2,
            ..Default::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn vocabulary_is_desk_sized() {
        for a in MIN_ATTRIBUTES..=MAX_ATTRIBUTES {
            let v = vocabulary(a);
            assert!((30..=200).contains(&v.len()), "{a}: {}", v.len());
        }
    }
}
