//! Per-document stochastic training with validation-ROUGE early stopping,
//! checkpoints, and resumable state.
//!
//! Randomness is derived from `(seed, epoch)` for the shuffle and
//! `(seed, epoch, step)` for dropout, so a run resumed from saved state
//! replays exactly what an uninterrupted run would have done.

mod config;

pub use config::{ProviderKind, TrainConfig};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, clip_grad_norm, AdamState};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::eval::{extract_topk, score_selection};
use crate::graph::EmbeddingProvider;
use crate::model::{loss_and_grads, predict, DocInput, ModelConfig, ModelParams};
use crate::oracle::{greedy_oracle, OracleObjective};
use crate::rouge::RougeSet;

pub const CHECKPOINT_FORMAT: &str = "hiersum-checkpoint/v1";
pub const STATE_FORMAT: &str = "hiersum-train-state/v1";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const STATE_FILE: &str = "state.json";

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed of `base` for the path `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Stops after `patience` consecutive epochs without strict improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    /// `(epoch, score)` of the best epoch so far.
    pub best: Option<(usize, f64)>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records `score` for `epoch`; returns true when it is a new best.
    pub fn update(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, b)) if score <= b => {
                self.bad_epochs += 1;
                false
            }
            _ => {
                self.best = Some((epoch, score));
                self.bad_epochs = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

/// One line of the metrics log. Losses are means over the epoch's
/// training steps; ROUGE values are validation F1 scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_s: f64,
    pub l_c: f64,
    pub val_r1: f64,
    pub val_r2: f64,
    pub val_rl: f64,
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,l_s,l_c,val_r1,val_r2,val_rl\n");
    for m in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m.epoch, m.l_s, m.l_c, m.val_r1, m.val_r2, m.val_rl
        )
        .unwrap();
    }
    out
}

/// Trained parameters with everything needed to rebuild the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub input_dim: usize,
    /// Epoch (1-based) these parameters come from.
    pub epoch: usize,
    pub val_r1: f64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn model_config(&self) -> ModelConfig {
        self.config.model_config(self.input_dim)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CheckpointLoad(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => {
                return Err(Error::CheckpointLoad(format!(
                    "unsupported format {other:?}"
                )))
            }
        }
        let ck: Self =
            serde_json::from_value(value).map_err(|e| Error::CheckpointLoad(e.to_string()))?;
        let expected = ModelParams::init(&ck.model_config(), 0);
        let shapes = |p: &ModelParams| p.tensors().iter().map(|m| m.shape()).collect::<Vec<_>>();
        if shapes(&ck.params) != shapes(&expected) {
            return Err(Error::CheckpointLoad(
                "parameter shapes do not match the config".into(),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::CheckpointLoad(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Everything a resumed run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub format: String,
    pub params: ModelParams,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub history: Vec<EpochMetrics>,
    pub stopper: EarlyStopping,
    pub best_params: Option<ModelParams>,
}

impl TrainState {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("state serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::CheckpointLoad(format!("{}: {e}", path.display())))?;
        let state: Self =
            serde_json::from_str(&text).map_err(|e| Error::CheckpointLoad(e.to_string()))?;
        if state.format != STATE_FORMAT {
            return Err(Error::CheckpointLoad(format!(
                "unsupported state format {:?}",
                state.format
            )));
        }
        Ok(state)
    }
}

/// Labels unlabeled documents with the greedy oracle and drops documents
/// that end up with no positive label.
pub fn prepare_training_docs(
    docs: Vec<Document>,
    max_oracle_sents: usize,
) -> Result<Vec<Document>> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let labeled: Vec<Option<Document>> = docs
        .into_par_iter()
        .map(|doc| {
            let doc = match doc.labels {
                Some(_) => doc,
                None => match greedy_oracle(&doc, max_oracle_sents, OracleObjective::MeanR1R2) {
                    Ok(labels) => doc.with_labels(labels)?,
                    Err(Error::MissingAbstract(id)) => {
                        log::warn!("dropping document {id:?}: no abstract to label from");
                        return Ok(None);
                    }
                    Err(e) => return Err(e),
                },
            };
            if doc.labels.as_ref().is_some_and(|l| l.contains(&1)) {
                Ok(Some(doc))
            } else {
                log::warn!("dropping document {:?}: no positive label", doc.id);
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let kept: Vec<Document> = labeled.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::NoLabeledDocuments);
    }
    Ok(kept)
}

/// Macro ROUGE of top-`k` extraction over `docs` (inputs aligned by index).
pub fn validate(
    docs: &[Document],
    inputs: &[DocInput],
    params: &ModelParams,
    cfg: &ModelConfig,
    k: usize,
) -> Result<RougeSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let scores = docs
        .par_iter()
        .zip(inputs)
        .map(|(doc, input)| {
            if doc.abstract_sents.iter().all(|s| s.tokens.is_empty()) {
                return Err(Error::MissingAbstract(doc.id.clone()));
            }
            let y = predict(params, input, cfg)?;
            Ok(score_selection(doc, &extract_topk(&y, k)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RougeSet::mean(&scores))
}

fn prepare_inputs(
    docs: &[Document],
    provider: &dyn EmbeddingProvider,
    cfg: &ModelConfig,
) -> Result<Vec<DocInput>> {
    docs.par_iter()
        .map(|d| DocInput::prepare(d, provider, cfg))
        .collect()
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the highest validation ROUGE-1.
    pub best: Checkpoint,
    pub history: Vec<EpochMetrics>,
    pub stopped_early: bool,
    pub state: TrainState,
}

pub struct Trainer {
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    train_inputs: Vec<DocInput>,
    val_docs: Vec<Document>,
    val_inputs: Vec<DocInput>,
    state: TrainState,
}

impl Trainer {
    /// Prepares both corpora and fresh parameters.
    pub fn new(
        cfg: TrainConfig,
        train: Vec<Document>,
        val: Vec<Document>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        cfg.validate()?;
        let model_cfg = cfg.model_config(provider.dim());
        let params = ModelParams::init(&model_cfg, derive_seed(cfg.seed, &[0]));
        let state = TrainState {
            format: STATE_FORMAT.into(),
            adam: AdamState::new(params.tensors()),
            params,
            epochs_done: 0,
            history: Vec::new(),
            stopper: EarlyStopping::new(cfg.patience),
            best_params: None,
        };
        Self::with_state(cfg, train, val, provider, state)
    }

    /// Continues from saved state.
    pub fn with_state(
        cfg: TrainConfig,
        train: Vec<Document>,
        val: Vec<Document>,
        provider: &dyn EmbeddingProvider,
        mut state: TrainState,
    ) -> Result<Self> {
        cfg.validate()?;
        let model_cfg = cfg.model_config(provider.dim());
        if val.is_empty() {
            return Err(Error::Config("validation corpus is empty".into()));
        }
        let train = prepare_training_docs(train, cfg.max_oracle_sents)?;
        let shapes = |p: &ModelParams| p.tensors().iter().map(|m| m.shape()).collect::<Vec<_>>();
        if shapes(&state.params) != shapes(&ModelParams::init(&model_cfg, 0)) {
            return Err(Error::CheckpointLoad(
                "state parameters do not match the config".into(),
            ));
        }
        state.stopper.patience = cfg.patience;
        Ok(Self {
            train_inputs: prepare_inputs(&train, provider, &model_cfg)?,
            val_inputs: prepare_inputs(&val, provider, &model_cfg)?,
            val_docs: val,
            cfg,
            model_cfg,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn is_finished(&self) -> bool {
        self.state.epochs_done >= self.cfg.epochs || self.state.stopper.should_stop()
    }

    /// One shuffled pass with an Adam step per document, then validation.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.state.epochs_done as u64;
        let adam_cfg = self.cfg.adam_config();
        let mut order: Vec<usize> = (0..self.train_inputs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.cfg.seed,
            &[SHUFFLE_STREAM, epoch],
        )));
        let (mut sum_s, mut sum_c) = (0.0, 0.0);
        for (step, &i) in order.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.cfg.seed,
                &[DROPOUT_STREAM, epoch, step as u64],
            ));
            let (loss, mut grads) = loss_and_grads(
                &self.state.params,
                &self.train_inputs[i],
                &self.model_cfg,
                true,
                &mut rng,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch as usize + 1,
                    step,
                });
            }
            let norm = clip_grad_norm(&mut grads, self.cfg.grad_clip);
            log::trace!(
                "epoch {} step {step}: loss {} grad norm {norm}",
                epoch + 1,
                loss.total
            );
            adam_step(
                &mut self.state.params.tensors_mut(),
                &grads,
                &mut self.state.adam,
                &adam_cfg,
            )?;
            sum_s += loss.l_s;
            sum_c += loss.l_c;
        }
        let steps = order.len().max(1) as f64;
        let val = validate(
            &self.val_docs,
            &self.val_inputs,
            &self.state.params,
            &self.model_cfg,
            self.cfg.k_extract,
        )?;
        self.state.epochs_done += 1;
        let m = EpochMetrics {
            epoch: self.state.epochs_done,
            l_s: sum_s / steps,
            l_c: sum_c / steps,
            val_r1: val.r1.f1,
            val_r2: val.r2.f1,
            val_rl: val.rl.f1,
        };
        if self.state.stopper.update(m.epoch, m.val_r1) {
            self.state.best_params = Some(self.state.params.clone());
        }
        self.state.history.push(m);
        log::info!(
            "epoch {}: L_s {:.5} L_c {:.5} val R1 {:.4} R2 {:.4} RL {:.4}",
            m.epoch,
            m.l_s,
            m.l_c,
            m.val_r1,
            m.val_r2,
            m.val_rl
        );
        Ok(m)
    }

    /// Best checkpoint so far; the current parameters if no epoch has run.
    pub fn best_checkpoint(&self) -> Checkpoint {
        let (epoch, val_r1) = self.state.stopper.best.unwrap_or((0, 0.0));
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.cfg.clone(),
            seed: self.cfg.seed,
            input_dim: self.model_cfg.input_dim,
            epoch,
            val_r1,
            params: self
                .state
                .best_params
                .clone()
                .unwrap_or_else(|| self.state.params.clone()),
        }
    }

    /// Trains until the epoch limit or early stop.
    pub fn run(self) -> Result<TrainOutcome> {
        self.run_with(|_| Ok(()))
    }

    /// Like [`Trainer::run`], calling `after_epoch` once each epoch is done.
    pub fn run_with(
        mut self,
        mut after_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<TrainOutcome> {
        while !self.is_finished() {
            self.run_epoch()?;
            after_epoch(&self)?;
        }
        Ok(TrainOutcome {
            best: self.best_checkpoint(),
            history: self.state.history.clone(),
            stopped_early: self.state.stopper.should_stop()
                && self.state.epochs_done < self.cfg.epochs,
            state: self.state,
        })
    }

    /// Writes the metrics log, resume state and best checkpoint into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        let metrics = dir.join(METRICS_FILE);
        fs::write(&metrics, metrics_csv(&self.state.history))
            .map_err(|e| Error::io(&metrics, e))?;
        self.state.save(dir.join(STATE_FILE))?;
        self.best_checkpoint().save(dir.join(CHECKPOINT_FILE))
    }
}

/// Output paths of [`train_to_dir`].
#[derive(Debug, Clone)]
pub struct TrainFiles {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub state: PathBuf,
}

/// Trains and keeps `out` up to date after every epoch. With `resume`, an
/// existing state file in `out` is continued.
pub fn train_to_dir(
    cfg: TrainConfig,
    train: Vec<Document>,
    val: Vec<Document>,
    provider: &dyn EmbeddingProvider,
    out: &Path,
    resume: bool,
) -> Result<(TrainOutcome, TrainFiles)> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let state_path = out.join(STATE_FILE);
    let trainer = if resume && state_path.exists() {
        let state = TrainState::load(&state_path)?;
        log::info!("resuming after epoch {}", state.epochs_done);
        Trainer::with_state(cfg, train, val, provider, state)?
    } else {
        Trainer::new(cfg, train, val, provider)?
    };
    let outcome = trainer.run_with(|t| t.write_outputs(out))?;
    Ok((
        outcome,
        TrainFiles {
            metrics: out.join(METRICS_FILE),
            checkpoint: out.join(CHECKPOINT_FILE),
            state: state_path,
        },
    ))
}
