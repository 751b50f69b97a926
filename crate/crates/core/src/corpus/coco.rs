//! COCO-caption style JSON ingestion.
//!
//! ```text
//! {
//!   "images":      [ { "id": <int>, "split": "train"|"val"|"test" (optional),
//!                      "features": [<number>, ...] (optional) } ],
//!   "annotations": [ { "image_id": <int>, "caption": <string> } ]
//! }
//! ```
//!
//! Captions are lower-cased, split on whitespace and truncated to `max_len` words. Words seen
//! fewer than `min_word_count` times (counted over untruncated captions) become UNK. When images
//! carry no `features`, each gets a fixed pseudo-random context derived from its id. When no image
//! names a split, a seeded random split is drawn.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use super::{Dataset, Example, SplitSpec, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CocoConfig {
    pub min_word_count: usize,
    pub max_len: usize,
    pub context_dim: usize,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for CocoConfig {
    fn default() -> Self {
        CocoConfig {
            min_word_count: 5,
            max_len: 16,
            context_dim: 32,
            val_frac: 0.05,
            test_frac: 0.05,
            seed: 0,
        }
    }
}

pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect()
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len();
    }
    offset
}

fn schema(path: &Path, field: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        field: field.into(),
    }
}

pub fn load_coco_json(path: &Path, cfg: &CocoConfig) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coco_json(&text, path, cfg)
}

pub fn parse_coco_json(text: &str, path: &Path, cfg: &CocoConfig) -> Result<Dataset> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let images = root
        .get("images")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(path, "images"))?;
    let annotations = root
        .get("annotations")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(path, "annotations"))?;

    struct Img {
        id: u64,
        split: Option<String>,
        features: Option<Vec<f64>>,
    }
    let mut imgs = Vec::with_capacity(images.len());
    let mut by_id = HashMap::new();
    for (i, img) in images.iter().enumerate() {
        let id = img
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| schema(path, format!("images[{i}].id")))?;
        let split = match img.get("split") {
            None => None,
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| schema(path, format!("images[{i}].split")))?
                    .to_string(),
            ),
        };
        let features = match img.get("features") {
            None => None,
            Some(v) => Some(
                v.as_array()
                    .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
                    .ok_or_else(|| schema(path, format!("images[{i}].features")))?,
            ),
        };
        if by_id.insert(id, imgs.len()).is_some() {
            return Err(schema(path, format!("images[{i}].id (duplicate {id})")));
        }
        imgs.push(Img {
            id,
            split,
            features,
        });
    }

    let mut captions: Vec<Vec<Vec<String>>> = vec![Vec::new(); imgs.len()];
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (i, ann) in annotations.iter().enumerate() {
        let image_id = ann
            .get("image_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| schema(path, format!("annotations[{i}].image_id")))?;
        let caption = ann
            .get("caption")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(path, format!("annotations[{i}].caption")))?;
        let slot = *by_id.get(&image_id).ok_or_else(|| {
            schema(
                path,
                format!("annotations[{i}].image_id (unknown {image_id})"),
            )
        })?;
        let words = tokenize(caption);
        for w in &words {
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
        captions[slot].push(words);
    }

    // frequent words first, ties alphabetical
    let mut kept: Vec<(&String, &usize)> = counts
        .iter()
        .filter(|(_, &c)| c >= cfg.min_word_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let vocab = Vocabulary::from_words(kept.iter().map(|(w, _)| w.as_str()));

    let with_features = imgs.iter().filter(|i| i.features.is_some()).count();
    if with_features != 0 && with_features != imgs.len() {
        return Err(schema(path, "features (present on some images only)"));
    }
    let dim = imgs
        .first()
        .and_then(|i| i.features.as_ref().map(Vec::len))
        .unwrap_or(cfg.context_dim);

    let mut examples = Vec::new();
    let mut split_names = Vec::new();
    for (img, caps) in imgs.iter().zip(captions) {
        if caps.is_empty() {
            continue;
        }
        let context = match &img.features {
            Some(f) if f.len() != dim => {
                return Err(schema(
                    path,
                    format!("features (image {} has length {})", img.id, f.len()),
                ))
            }
            Some(f) => f.clone(),
            None => {
                let mut rng = crate::seed::rng(cfg.seed, &[0xC0C0, img.id]);
                (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        };
        let references = caps
            .iter()
            .map(|words| {
                let mut toks = vocab.encode(words);
                toks.truncate(cfg.max_len);
                toks
            })
            .collect();
        split_names.push(img.split.clone());
        examples.push(Example {
            id: img.id,
            context,
            references,
            attributes: Vec::new(),
        });
    }

    let splits = if split_names.iter().any(Option::is_some) {
        let mut s = SplitSpec::default();
        for (i, name) in split_names.iter().enumerate() {
            match name.as_deref() {
                Some("val") => s.val.push(i),
                Some("test") => s.test.push(i),
                _ => s.train.push(i),
            }
        }
        s
    } else {
        SplitSpec::random(examples.len(), cfg.val_frac, cfg.test_frac, cfg.seed)
    };

    Ok(Dataset {
        vocab,
        examples,
        splits,
        max_len: cfg.max_len,
    })
}

/// Word frequency table over a tokenized caption list (used by tests and diagnostics).
pub fn word_counts<'a>(captions: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for c in captions {
        for w in tokenize(c) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn doc(caps: &[(u64, &str)], images: &[u64]) -> String {
        let imgs: Vec<String> = images.iter().map(|i| format!("{{\"id\": {i}}}")).collect();
        let anns: Vec<String> = caps
            .iter()
            .map(|(i, c)| {
                format!(
                    "{{\"image_id\": {i}, \"caption\": {}}}",
                    serde_json::to_string(c).unwrap()
                )
            })
            .collect();
        format!(
            "{{\"images\": [{}], \"annotations\": [{}]}}",
            imgs.join(","),
            anns.join(",")
        )
    }

    #[test]
    fn lowercases_and_splits() {
        assert_eq!(tokenize("A Dog  RUNS"), vec!["a", "dog", "runs"]);
    }

    #[test]
    fn truncates_and_unks() {
        let long = (0..20)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ");
        let mut caps: Vec<(u64, String)> = (0..5).map(|_| (1, long.clone())).collect();
        // "rare" occurs four times corpus-wide
        for _ in 0..4 {
            caps.push((2, "rare w0".to_string()));
        }
        let caps_ref: Vec<(u64, &str)> = caps.iter().map(|(i, c)| (*i, c.as_str())).collect();
        let text = doc(&caps_ref, &[1, 2]);
        let ds = parse_coco_json(&text, Path::new("x.json"), &CocoConfig::default()).unwrap();
        assert_eq!(ds.vocab.get("rare"), None);
        assert!(ds.vocab.get("w19").is_some());
        let ex1 = ds.examples.iter().find(|e| e.id == 1).unwrap();
        assert!(ex1.references.iter().all(|r| r.len() == 16));
        assert_eq!(ds.vocab.decode(&ex1.references[0])[15], "w15");
        let ex2 = ds.examples.iter().find(|e| e.id == 2).unwrap();
        assert_eq!(ex2.references[0][0], Token::UNK);
    }

    #[test]
    fn malformed_json_reports_offset() {
        let text = "{\"images\": [ {\"id\": 1}, ] }";
        match parse_coco_json(text, Path::new("bad.json"), &CocoConfig::default()) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0 && offset <= text.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = r#"{"images": [{"id": 1}], "annotations": [{"image_id": 1}]}"#;
        match parse_coco_json(text, Path::new("x.json"), &CocoConfig::default()) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "annotations[0].caption"),
            other => panic!("{other:?}"),
        }
        let text = r#"{"annotations": []}"#;
        match parse_coco_json(text, Path::new("x.json"), &CocoConfig::default()) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "images"),
            other => panic!("{other:?}"),
        }
    }
}
