//! Flat `key = value` experiment files.
//!
//! Blank lines and `#` comments are ignored. `include <path>` splices another file in place,
//! resolved relative to the including file. Later assignments win, and command-line flags are
//! applied after everything in the file.

use std::path::{Path, PathBuf};

use seqcritic::rlcore::{Estimator, Normalization, RolloutReuse, DEFAULT_K};
use seqcritic::trainer::{Preset, TrainConfig};
use seqcritic::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignments {
    pub entries: Vec<(String, String)>,
}

impl Assignments {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, key: &str, value: &str) {
        self.entries.push((key.to_string(), value.to_string()));
    }
}

pub fn read_config(path: &Path) -> Result<Assignments> {
    let mut out = Assignments::default();
    read_into(path, &mut out, &mut Vec::new())?;
    Ok(out)
}

fn read_into(path: &Path, out: &mut Assignments, stack: &mut Vec<PathBuf>) -> Result<()> {
    let canon = path.canonicalize().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if stack.contains(&canon) {
        return Err(Error::Config(format!(
            "include cycle through {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    stack.push(canon);
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len();
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("include ") {
            let target = path.parent().unwrap_or(Path::new(".")).join(rest.trim());
            read_into(&target, out, stack)?;
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: here,
                message: format!("expected `key = value`, found `{line}`"),
            });
        };
        out.push(k.trim(), v.trim());
    }
    stack.pop();
    Ok(())
}

const RUN_KEYS: &[&str] = &["preset", "data", "phase", "pretrained"];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Usage(format!("invalid value `{v}` for `{key}`")))
}

/// Builds a training config: the preset named by `preset` (desk when absent), then every
/// assignment in order. Returns any warnings.
pub fn build_train_config(a: &Assignments) -> Result<(TrainConfig, Vec<String>)> {
    let preset: Preset = a.get("preset").unwrap_or("desk").parse()?;
    let mut cfg = TrainConfig::preset(preset);
    let mut warnings = Vec::new();
    let mut estimator = cfg.estimator.name().to_string();
    let mut k: Option<usize> = None;
    for (key, v) in &a.entries {
        let key = key.as_str();
        match key {
            "seed" => cfg.seed = parse(key, v)?,
            "embed_dim" => cfg.embed_dim = parse(key, v)?,
            "hidden_dim" => cfg.hidden_dim = parse(key, v)?,
            "init_scale" => cfg.init_scale = parse(key, v)?,
            "dropout" => cfg.dropout = parse(key, v)?,
            "xent_lr" => cfg.xent_lr = parse(key, v)?,
            "xent_batch" => cfg.xent_batch = parse(key, v)?,
            "xent_epochs" => cfg.xent_epochs = parse(key, v)?,
            "rl_lr" => cfg.rl_lr = parse(key, v)?,
            "rl_batch" => cfg.rl_batch = parse(key, v)?,
            "estimator" => estimator = v.clone(),
            "k" => k = Some(parse(key, v)?),
            "n_schedule" => cfg.n_schedule = v.parse()?,
            "rollout_reuse" => {
                cfg.rollout_reuse = match v.as_str() {
                    "shared" => RolloutReuse::Shared,
                    "fresh-per-chunk" => RolloutReuse::FreshPerChunk,
                    _ => {
                        return Err(Error::Usage(format!(
                            "invalid value `{v}` for `rollout_reuse`"
                        )))
                    }
                }
            }
            "normalization" => {
                cfg.normalization = match v.as_str() {
                    "per-token" => Normalization::PerToken,
                    "sum" => Normalization::Sum,
                    _ => {
                        return Err(Error::Usage(format!(
                            "invalid value `{v}` for `normalization`"
                        )))
                    }
                }
            }
            "rl_max_steps" => cfg.rl_max_steps = parse(key, v)?,
            "rl_eval_every" => cfg.rl_eval_every = parse(key, v)?,
            "val_limit" => cfg.val_limit = parse(key, v)?,
            "grad_chunk" => cfg.grad_chunk = parse(key, v)?,
            k if RUN_KEYS.contains(&k) => {}
            other => return Err(Error::Usage(format!("unknown config key `{other}`"))),
        }
    }
    cfg.estimator = Estimator::parse(&estimator, k.unwrap_or(DEFAULT_K))?;
    if cfg.estimator == Estimator::MaxPro && k.is_some() {
        warnings.push("K is ignored with the maxpro estimator".to_string());
    }
    cfg.validate()?;
    Ok((cfg, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqcritic::rlcore::NStep;

    #[test]
    fn includes_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("base.cfg"),
            "# shared\nxent_epochs = 3\nrl_lr=1e-3\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("run.cfg"),
            "include base.cfg\nxent_epochs = 5  # wins\nestimator = krollout\nk = 3\n",
        )
        .unwrap();
        let mut a = read_config(&dir.path().join("run.cfg")).unwrap();
        a.push("n_schedule", "1:2,T:4");
        let (cfg, warnings) = build_train_config(&a).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(cfg.xent_epochs, 5);
        assert_eq!(cfg.rl_lr, 1e-3);
        assert_eq!(cfg.estimator, Estimator::KRollout(3));
        assert_eq!(
            cfg.n_schedule.entries,
            vec![(NStep::Fixed(1), 2), (NStep::Full, 4)]
        );
    }

    #[test]
    fn bad_input_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cfg");
        std::fs::write(&p, "include a.cfg\n").unwrap();
        assert!(read_config(&p).unwrap_err().to_string().contains("cycle"));
        std::fs::write(&p, "seed = 1\nnonsense\n").unwrap();
        match read_config(&p).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 9),
            e => panic!("{e}"),
        }
        let mut a = Assignments::default();
        a.push("colour", "red");
        assert!(build_train_config(&a)
            .unwrap_err()
            .to_string()
            .contains("colour"));
        let mut a = Assignments::default();
        a.push("k", "5");
        let (_, w) = build_train_config(&a).unwrap();
        assert_eq!(w.len(), 1);
    }
}
