//! Captioning datasets: vocabulary, synthetic task generation and COCO-style ingestion.

mod coco;
mod dataset;
mod synthetic;
mod vocab;

pub use coco::{load_coco_json, parse_coco_json, tokenize, word_counts, CocoConfig};
pub use dataset::{Dataset, Example, Split, SplitSpec, DATASET_FILE, SPLITS_FILE, VOCAB_FILE};
pub use synthetic::{
    attribute_phrasings, generate_synthetic, licensed_words, SyntheticConfig, MAX_ATTRIBUTES,
    MIN_ATTRIBUTES,
};
pub use vocab::{Token, Vocabulary, BOS_WORD, EOS_WORD, UNK_WORD};
