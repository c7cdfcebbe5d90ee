use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::{BatchBaldConfig, Strategy, DEFAULT_MC_SAMPLES};
use crate::error::{Error, Result};
use crate::models::TrainConfig;

/// Which model is retrained inside the loop and which one is returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Probe in the loop, probe as the final model.
    #[serde(rename = "AL_LR")]
    AlLr,
    /// Probe in the loop, expensive model trained once at the end.
    #[serde(rename = "PRepAL")]
    PrepAl,
    /// Expensive model retrained from its initialization on every iteration.
    #[serde(rename = "AL_FT")]
    AlFt,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::AlLr, Protocol::PrepAl, Protocol::AlFt];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::AlLr => "AL_LR",
            Protocol::PrepAl => "PRepAL",
            Protocol::AlFt => "AL_FT",
        }
    }

    /// Whether the loop model is the expensive one.
    pub fn expensive_loop(self) -> bool {
        self == Protocol::AlFt
    }

    /// Whether the returned model is the expensive one.
    pub fn expensive_final(self) -> bool {
        self != Protocol::AlLr
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '+'], "_");
        match norm.as_str() {
            "al_lr" => Ok(Protocol::AlLr),
            "prepal" => Ok(Protocol::PrepAl),
            "al_ft" => Ok(Protocol::AlFt),
            _ => Err(Error::invalid("protocol", format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Labels come from the manifest.
    #[default]
    Oracle,
    /// Labels come from a person (or a callback standing in for one).
    Interactive,
}

/// Full description of one active-learning run.
///
/// The `rng_seed` fields of `probe` and `final_model` are ignored; every
/// random stream is derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub protocol: Protocol,
    pub acquisition: Strategy,
    /// Number of acquisition iterations `T`.
    #[serde(rename = "T", alias = "iterations")]
    pub iterations: usize,
    /// Acquisition batch size `b`.
    #[serde(rename = "b", alias = "batch_size")]
    pub batch_size: usize,
    pub n_init: usize,
    pub probe: TrainConfig,
    /// Training regime of the expensive model (the final model of PRepAL
    /// and AL_FT, and the loop model of AL_FT).
    pub final_model: TrainConfig,
    /// Hidden width of the expensive model.
    pub proxy_width: usize,
    pub dropout_rate: f64,
    /// Monte-Carlo dropout samples for BALD and BatchBALD.
    pub mc_samples: usize,
    pub seed: u64,
    pub label_source: LabelSource,
    pub batchbald: BatchBaldConfig,
    /// Evaluate the holdout only when the labeled count is a multiple of
    /// this. `None` evaluates on every iteration.
    pub checkpoint_every: Option<usize>,
    /// Let annotators return a queried document to the pool unlabeled.
    pub allow_skip: bool,
    /// Name of the representation source, carried into the final model.
    pub backbone: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::PrepAl,
            acquisition: Strategy::MaxEntropy,
            iterations: 39,
            batch_size: 50,
            n_init: 50,
            probe: TrainConfig::probe(),
            final_model: TrainConfig::proxy(),
            proxy_width: 256,
            dropout_rate: 0.1,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
            label_source: LabelSource::Oracle,
            batchbald: BatchBaldConfig::default(),
            checkpoint_every: None,
            allow_skip: false,
            backbone: "default".into(),
        }
    }
}

impl SessionConfig {
    /// Labeled-set size after all iterations, ignoring pool exhaustion.
    pub fn budget(&self) -> usize {
        self.n_init + self.iterations * self.batch_size
    }

    /// The same budget acquired one document at a time, checkpointed at
    /// the original batch boundaries.
    pub fn sequential(&self) -> Self {
        Self {
            iterations: self.iterations * self.batch_size,
            batch_size: 1,
            checkpoint_every: Some(self.checkpoint_every.unwrap_or(self.batch_size)),
            ..self.clone()
        }
    }

    /// Checks the configuration on its own and against a pool of
    /// `pool_size` documents.
    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::invalid("T", "need at least one iteration"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("b", "batch size must be positive"));
        }
        if self.n_init < 1 {
            return Err(Error::invalid("n_init", "need at least one initial label"));
        }
        if self.n_init > pool_size {
            return Err(Error::invalid(
                "n_init",
                format!("{} exceeds the pool size {pool_size}", self.n_init),
            ));
        }
        if self.batch_size > pool_size - self.n_init {
            return Err(Error::invalid(
                "b",
                format!(
                    "{} exceeds the {} documents left after the initial set",
                    self.batch_size,
                    pool_size - self.n_init
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate", "must lie in [0, 1)"));
        }
        if self.acquisition.needs_dropout() {
            if self.dropout_rate <= 0.0 {
                return Err(Error::invalid(
                    "dropout_rate",
                    format!("{} needs a positive dropout rate", self.acquisition),
                ));
            }
            if self.mc_samples < 2 {
                return Err(Error::invalid("mc_samples", "need at least 2 samples"));
            }
        }
        if self.acquisition == Strategy::Egl && self.protocol.expensive_loop() {
            return Err(Error::invalid(
                "acquisition",
                "egl needs the linear probe in the loop, which AL_FT does not use",
            ));
        }
        if self.proxy_width < 1 {
            return Err(Error::invalid("proxy_width", "must be positive"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::invalid("checkpoint_every", "must be positive"));
        }
        self.probe.validate()?;
        self.final_model.validate()?;
        self.batchbald.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
