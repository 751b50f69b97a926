//! Context-conditioned LSTM decoder π_θ(a_t | a_{1:t−1}, context).
//!
//! The context enters three ways: it initialises `h` and `c` through learned projections, and a
//! projected copy is added to the LSTM gate pre-activations at every step. The output layer has
//! one column per token except BOS, so BOS can never be produced.

mod decode;
mod teacher;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decode::{DecodingState, Strategy, Trajectory};
pub use teacher::TeacherBatch;

use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::tapegrad::{load_checkpoint, save_checkpoint, ParamId, ParameterSet, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Vocabulary size including the reserved tokens.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_dim: usize,
    /// Half-width of the uniform initialisation.
    pub init_scale: f64,
}

impl DecoderConfig {
    pub fn new(vocab_size: usize, context_dim: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        DecoderConfig {
            vocab_size,
            embed_dim,
            hidden_dim,
            context_dim,
            init_scale: 0.1,
        }
    }

    /// Number of output classes (every token but BOS).
    pub fn num_outputs(&self) -> usize {
        self.vocab_size - 1
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.context_dim == 0
        {
            return Err(Error::Config(format!(
                "degenerate decoder dimensions {self:?}"
            )));
        }
        Ok(())
    }

    fn shapes(&self) -> [(&'static str, usize, usize); 13] {
        let (v, e, h, c) = (
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.context_dim,
        );
        [
            ("embed", v, e),
            ("ctx_w", c, e),
            ("ctx_b", 1, e),
            ("init_h_w", c, h),
            ("init_h_b", 1, h),
            ("init_c_w", c, h),
            ("init_c_b", 1, h),
            ("lstm_wx", e, 4 * h),
            ("lstm_wh", h, 4 * h),
            ("lstm_wc", e, 4 * h),
            ("lstm_b", 1, 4 * h),
            ("out_w", h, v - 1),
            ("out_b", 1, v - 1),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ids {
    pub embed: ParamId,
    pub ctx_w: ParamId,
    pub ctx_b: ParamId,
    pub init_h_w: ParamId,
    pub init_h_b: ParamId,
    pub init_c_w: ParamId,
    pub init_c_b: ParamId,
    pub lstm_wx: ParamId,
    pub lstm_wh: ParamId,
    pub lstm_wc: ParamId,
    pub lstm_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Policy<F> {
    pub config: DecoderConfig,
    pub params: ParameterSet<F>,
    pub(crate) ids: Ids,
}

const DECODER_META_KEY: &str = "decoder";

impl<F: Scalar> Policy<F> {
    /// Random uniform initialisation in `[-init_scale, init_scale]`.
    pub fn new(config: DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        for (name, r, c) in config.shapes() {
            params.add_uniform(name, r, c, config.init_scale, &mut rng)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps existing weights, checking that every tensor is present with the right shape.
    pub fn from_params(config: DecoderConfig, params: ParameterSet<F>) -> Result<Self> {
        config.validate()?;
        let mut found = Vec::new();
        for (name, r, c) in config.shapes() {
            let id = params
                .weights
                .id(name)
                .ok_or_else(|| Error::Config(format!("missing decoder tensor `{name}`")))?;
            let shape = params.weights.get(id).shape();
            if shape != (r, c) {
                return Err(Error::dim(
                    "policy",
                    format!("tensor `{name}` is {shape:?}, expected ({r}, {c})"),
                ));
            }
            found.push(id);
        }
        let ids = Ids {
            embed: found[0],
            ctx_w: found[1],
            ctx_b: found[2],
            init_h_w: found[3],
            init_h_b: found[4],
            init_c_w: found[5],
            init_c_b: found[6],
            lstm_wx: found[7],
            lstm_wh: found[8],
            lstm_wc: found[9],
            lstm_b: found[10],
            out_w: found[11],
            out_b: found[12],
        };
        Ok(Policy {
            config,
            params,
            ids,
        })
    }

    pub fn cast<G: Scalar>(&self) -> Policy<G> {
        Policy {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids,
        }
    }

    pub fn save(&self, path: &Path, mut meta: BTreeMap<String, String>) -> Result<()> {
        meta.insert(
            DECODER_META_KEY.to_string(),
            serde_json::to_string(&self.config).expect("decoder config"),
        );
        save_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let (params, meta) = load_checkpoint::<F>(path)?;
        let raw = meta.get(DECODER_META_KEY).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            field: format!("meta.{DECODER_META_KEY}"),
        })?;
        let config: DecoderConfig = serde_json::from_str(raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("decoder config: {e}"),
        })?;
        Ok((Self::from_params(config, params)?, meta))
    }
}

/// Output column of a token; BOS has none.
#[inline]
pub(crate) fn column(tok: Token) -> usize {
    debug_assert!(tok.0 > 0, "BOS has no output column");
    tok.idx() - 1
}

#[inline]
pub(crate) fn token_of(column: usize) -> Token {
    Token(column as u32 + 1)
}
