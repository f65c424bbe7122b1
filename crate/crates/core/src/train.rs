//! Balanced batching, the optimisation loop, run logs and checkpoints.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{batch_graphs, extract_subgraph, ClassVocab, Polarity, Query, QueryGraph};
use crate::kb::{EntityId, KnowledgeBase};
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::container::{self, Entry};
use crate::tensor::{AdamConfig, AdamState, ParamStore, Precision, Scalar, Tensor};

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale schedule: d=64, 25 rounds, 2000 epochs of 128 steps.
    Paper,
    /// Small schedule for a single machine: d=32, 8 rounds, 300 steps.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile `{s}` (paper or desk)"))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

impl Profile {
    /// `(dim, t_max)`.
    pub fn model_dims(self) -> (usize, usize) {
        match self {
            Profile::Paper => (64, 25),
            Profile::Desk => (32, 8),
        }
    }

    pub fn model_config(self, classes: usize, variant: Variant) -> ModelConfig {
        let (dim, t_max) = self.model_dims();
        ModelConfig::new(dim, t_max, classes, variant)
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Profile::Paper => TrainConfig {
                batch: 10,
                steps_per_epoch: 128,
                epochs: 2000,
                lr: 2e-5,
                max_len: 6,
                ..TrainConfig::default()
            },
            Profile::Desk => TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Path-length bound for query-graph extraction.
    pub max_len: usize,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Run fully serially.
    pub deterministic: bool,
    /// Fail on the first non-finite intermediate value.
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 10,
            steps_per_epoch: 300,
            epochs: 1,
            lr: 1e-3,
            seed: 7,
            max_len: 2,
            clip_norm: None,
            checkpoint_every: 0,
            deterministic: false,
            check_finite: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.batch == 0 || self.steps_per_epoch == 0 || self.epochs == 0 {
            return bad("batch, steps and epochs must all be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.max_len == 0 {
            return bad("l_max must be >= 1");
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0 || c.is_nan()) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Settings that must agree between a checkpoint and the run resuming it.
    fn resume_key(&self) -> (usize, usize, u64, u64, usize, Option<u64>) {
        (
            self.batch,
            self.steps_per_epoch,
            self.lr.to_bits(),
            self.seed,
            self.max_len,
            self.clip_norm.map(f64::to_bits),
        )
    }
}

/// Stateless polarity-balanced sampler.
///
/// With `B > 1`, offset `j` of every batch is positive iff `j` is even; with
/// `B = 1` the polarity alternates across steps. The `n`-th draw from a pool
/// reads position `n mod len` of a permutation seeded by
/// `(seed, pool, n div len)`, so every pass over a pool is freshly shuffled
/// and any step can be reproduced from the step number alone.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    batch: usize,
    seed: u64,
    pos_len: usize,
    neg_len: usize,
}

impl BalancedSampler {
    pub fn new(batch: usize, seed: u64, pos_len: usize, neg_len: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if pos_len == 0 || neg_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "balanced batching needs both polarities ({pos_len} positive, {neg_len} negative)"
            )));
        }
        Ok(Self {
            batch,
            seed,
            pos_len,
            neg_len,
        })
    }

    fn polarity(&self, step: u64, offset: usize) -> Polarity {
        let k = if self.batch == 1 { step } else { offset as u64 };
        if k % 2 == 0 {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }

    /// Draws taken from each pool before `step`.
    fn drawn_before(&self, step: u64) -> (u64, u64) {
        if self.batch == 1 {
            (step.div_ceil(2), step / 2)
        } else {
            let b = self.batch as u64;
            (step * b.div_ceil(2), step * (b / 2))
        }
    }

    fn permutation(&self, pool: u64, pass: u64, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(pass.wrapping_mul(2).wrapping_add(pool));
        let mut p: Vec<usize> = (0..len).collect();
        p.shuffle(&mut rng);
        p
    }

    /// Pool indices for `step`, in batch order.
    pub fn batch(&self, step: u64) -> Vec<(Polarity, usize)> {
        let (mut np, mut nn) = self.drawn_before(step);
        let mut perms: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
        (0..self.batch)
            .map(|j| {
                let pol = self.polarity(step, j);
                let (pool, len, n) = match pol {
                    Polarity::Positive => (0, self.pos_len, &mut np),
                    Polarity::Negative => (1, self.neg_len, &mut nn),
                };
                let pass = *n / len as u64;
                let pos = (*n % len as u64) as usize;
                *n += 1;
                let perm = perms
                    .entry((pool, pass))
                    .or_insert_with(|| self.permutation(pool, pass, len));
                (pol, perm[pos])
            })
            .collect()
    }
}

/// Endless stream of balanced batches over `queries`.
pub fn make_balanced_batches(
    queries: &[Query],
    batch: usize,
    seed: u64,
) -> Result<impl Iterator<Item = Vec<Query>> + '_> {
    let (pos, neg): (Vec<&Query>, Vec<&Query>) = queries
        .iter()
        .partition(|q| q.polarity == Polarity::Positive);
    let sampler = BalancedSampler::new(batch, seed, pos.len(), neg.len())?;
    Ok((0u64..).map(move |step| {
        sampler
            .batch(step)
            .into_iter()
            .map(|(p, i)| match p {
                Polarity::Positive => *pos[i],
                Polarity::Negative => *neg[i],
            })
            .collect()
    }))
}

/// Query graphs keyed by `(source, target, max_len)`. Extraction is
/// deterministic, so a cached graph is the graph.
#[derive(Debug, Default)]
pub struct GraphCache {
    graphs: HashMap<(EntityId, EntityId, usize), Arc<QueryGraph>>,
}

impl GraphCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Graphs for every pair, extracting the missing ones (in parallel
    /// unless `serial`). Results follow the order of `pairs`.
    pub fn extract_all(
        &mut self,
        kb: &KnowledgeBase,
        pairs: &[(EntityId, EntityId)],
        max_len: usize,
        serial: bool,
    ) -> Vec<Result<Arc<QueryGraph>>> {
        let mut missing: Vec<(EntityId, EntityId)> = pairs
            .iter()
            .copied()
            .filter(|&(s, t)| !self.graphs.contains_key(&(s, t, max_len)))
            .collect();
        missing.sort();
        missing.dedup();
        let extract = |&(s, t): &(EntityId, EntityId)| extract_subgraph(kb, s, t, max_len);
        let fresh: Vec<Result<QueryGraph>> = if serial {
            missing.iter().map(extract).collect()
        } else {
            missing.par_iter().map(extract).collect()
        };
        let mut failed: HashMap<(EntityId, EntityId), Error> = HashMap::new();
        for (&(s, t), g) in missing.iter().zip(fresh) {
            match g {
                Ok(g) => {
                    self.graphs.insert((s, t, max_len), Arc::new(g));
                }
                Err(e) => {
                    failed.insert((s, t), e);
                }
            }
        }
        pairs
            .iter()
            .map(|&(s, t)| match self.graphs.get(&(s, t, max_len)) {
                Some(g) => Ok(Arc::clone(g)),
                // Errors are not `Clone`; a repeated failing pair re-derives its error.
                None => Err(failed
                    .remove(&(s, t))
                    .unwrap_or_else(|| extract_subgraph(kb, s, t, max_len).unwrap_err())),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Instance {
    graph: Arc<QueryGraph>,
    label: usize,
}

/// Graphs for the queries that have one; the rest are reported by index.
fn prepare(
    kb: &KnowledgeBase,
    queries: &[Query],
    max_len: usize,
    serial: bool,
) -> (Vec<Instance>, Vec<Instance>, Vec<usize>) {
    let mut cache = GraphCache::new();
    let pairs: Vec<_> = queries.iter().map(|q| (q.source, q.target)).collect();
    let graphs = cache.extract_all(kb, &pairs, max_len, serial);
    let (mut pos, mut neg, mut dropped) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (q, g)) in queries.iter().zip(graphs).enumerate() {
        match g {
            Ok(graph) => {
                let inst = Instance {
                    graph,
                    label: q.label(),
                };
                match q.polarity {
                    Polarity::Positive => pos.push(inst),
                    Polarity::Negative => neg.push(inst),
                }
            }
            Err(e) => {
                log::debug!("query {i} dropped: {e}");
                dropped.push(i);
            }
        }
    }
    (pos, neg, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    /// Milliseconds since this process started training; 0 for steps
    /// restored from a checkpoint.
    pub wallclock_ms: u64,
}

/// One record per optimiser step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// `(epoch, mean loss)` per epoch seen.
    pub fn epoch_means(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64, usize)> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some((e, sum, n)) if *e == r.epoch => {
                    *sum += r.loss;
                    *n += 1;
                }
                _ => out.push((r.epoch, r.loss, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }

    /// SHA-256 over `(step, loss bits)`; wall-clock times are excluded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.step.to_le_bytes());
            h.update(r.loss.to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,loss,wallclock_ms\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{:e},{}\n", r.step, r.epoch, r.loss, r.wallclock_ms));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sidecar describing a checkpoint: `<checkpoint>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub precision: Precision,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub classes: Vec<String>,
    pub relations: Vec<String>,
    pub types: Vec<String>,
    pub step: u64,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl CheckpointMeta {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let path = meta_path(checkpoint);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Self = serde_json::from_str(&text)?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT})",
                meta.format
            )));
        }
        Ok(meta)
    }

    /// Checks that the checkpoint was trained over the same vocabularies.
    pub fn check_vocab(&self, kb: &KnowledgeBase, classes: &ClassVocab) -> Result<()> {
        if self.relations != kb.relations().names() {
            return Err(Error::Mismatch("relation vocabulary differs".into()));
        }
        if self.types != kb.types().names() {
            return Err(Error::Mismatch("type vocabulary differs".into()));
        }
        if self.classes != classes.names() {
            return Err(Error::Mismatch("class vocabulary differs".into()));
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn scalar_entry(name: &str, v: f64) -> Entry {
    Entry {
        name: name.into(),
        shape: vec![1, 1],
        precision: Precision::F64,
        values: vec![v],
    }
}

fn take_params<T: Scalar>(entries: &[Entry], prefix: &str) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for e in entries {
        if let Some(name) = e.name.strip_prefix(prefix) {
            store.insert(name, e.to_tensor::<T>()?);
        }
    }
    Ok(store)
}

fn find<'a>(entries: &'a [Entry], name: &str) -> Result<&'a Entry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))
}

/// Loads only the model from a checkpoint, for inference.
pub fn load_model<T: Scalar>(checkpoint: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let meta = CheckpointMeta::load(checkpoint)?;
    if meta.precision != T::PRECISION {
        return Err(Error::Mismatch(format!(
            "checkpoint holds {:?} parameters",
            meta.precision
        )));
    }
    let entries = container::read_file(checkpoint)?;
    let model = Model::from_params(meta.model.clone(), take_params(&entries, "param/")?)?;
    Ok((model, meta))
}

pub struct Trainer<T: Scalar = f64> {
    model: Model<T>,
    adam: AdamState<T>,
    config: TrainConfig,
    sampler: BalancedSampler,
    pos: Vec<Instance>,
    neg: Vec<Instance>,
    dropped: Vec<usize>,
    step: u64,
    log: RunLog,
    clock: Instant,
    vocab: (Vec<String>, Vec<String>, Vec<String>),
}

impl<T: Scalar> Trainer<T> {
    /// Extracts every training graph and initialises the model from the seed.
    /// Queries without a path of length at most `max_len` are dropped.
    pub fn new(
        kb: &KnowledgeBase,
        queries: &[Query],
        classes: &ClassVocab,
        model_config: ModelConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let model_config =
            model_config.with_vocab(kb.relations().len(), kb.types().len());
        if model_config.classes != classes.len() {
            return Err(Error::Config(format!(
                "model has {} classes but the data defines {}",
                model_config.classes,
                classes.len()
            )));
        }
        if let Some(q) = queries.iter().find(|q| q.label() >= classes.len()) {
            return Err(Error::InvalidArgument(format!(
                "query label {} outside {} classes",
                q.label(),
                classes.len()
            )));
        }
        let (pos, neg, dropped) = prepare(kb, queries, config.max_len, config.deterministic);
        if !dropped.is_empty() {
            log::warn!(
                "{} of {} training queries have no path of length <= {} and were dropped",
                dropped.len(),
                queries.len(),
                config.max_len
            );
        }
        let sampler = BalancedSampler::new(config.batch, config.seed, pos.len(), neg.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // The sampler uses the low streams of the same seed.
        rng.set_stream(u64::MAX);
        let model = Model::init(model_config, &mut rng)?;
        let adam = AdamState::new(config.adam(), model.params());
        Ok(Self {
            model,
            adam,
            config,
            sampler,
            pos,
            neg,
            dropped,
            step: 0,
            log: RunLog::default(),
            clock: Instant::now(),
            vocab: (
                classes.names().to_vec(),
                kb.relations().names().to_vec(),
                kb.types().names().to_vec(),
            ),
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    /// Optimiser steps taken so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Indices of queries dropped for lack of a subgraph.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn pool_sizes(&self) -> (usize, usize) {
        (self.pos.len(), self.neg.len())
    }

    /// One optimiser step on the next balanced batch. Returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        let step = self.step;
        let picks = self.sampler.batch(step);
        let mut graphs = Vec::with_capacity(picks.len());
        let mut labels = Vec::with_capacity(picks.len());
        for (pol, i) in picks {
            let inst = match pol {
                Polarity::Positive => &self.pos[i],
                Polarity::Negative => &self.neg[i],
            };
            graphs.push(Arc::clone(&inst.graph));
            labels.push(inst.label);
        }
        let batch = batch_graphs(&graphs.iter().map(|g| g.as_ref()).collect::<Vec<_>>())?;
        let nan = || Error::NanLoss {
            step: step as usize,
        };
        let (loss, mut grads) = self
            .model
            .loss_and_grads(&batch, &labels, self.config.check_finite)
            .map_err(|e| match e {
                Error::NonFinite(_) => nan(),
                e => e,
            })?;
        if !loss.is_finite() {
            return Err(nan());
        }
        if let Some(c) = self.config.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        self.adam.step(self.model.params_mut(), &grads)?;
        let loss = loss.as_f64();
        self.log.records.push(StepRecord {
            step,
            epoch: step / self.config.steps_per_epoch as u64,
            loss,
            wallclock_ms: self.clock.elapsed().as_millis() as u64,
        });
        self.step += 1;
        Ok(loss)
    }

    /// Runs until `total_steps`, writing a checkpoint to `checkpoint` every
    /// `checkpoint_every` epochs and at the end.
    pub fn run(&mut self, checkpoint: Option<&Path>) -> Result<()> {
        let total = self.config.total_steps();
        let per_epoch = self.config.steps_per_epoch as u64;
        while self.step < total {
            self.step()?;
            let epoch_done = self.step.is_multiple_of(per_epoch);
            if let (Some(path), true) = (checkpoint, epoch_done) {
                let every = self.config.checkpoint_every as u64;
                if every > 0 && (self.step / per_epoch).is_multiple_of(every) {
                    self.save_checkpoint(path)?;
                }
            }
            if epoch_done {
                if let Some(&(e, mean)) = self.log.epoch_means().last() {
                    log::info!("epoch {e}: mean loss {mean:.5}");
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save_checkpoint(path)?;
        }
        Ok(())
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format: CHECKPOINT_FORMAT,
            precision: T::PRECISION,
            model: self.model.config().clone(),
            train: self.config.clone(),
            classes: self.vocab.0.clone(),
            relations: self.vocab.1.clone(),
            types: self.vocab.2.clone(),
            step: self.step,
        }
    }

    fn entries(&self) -> Vec<Entry> {
        let params = self.model.params();
        let mut out = Vec::new();
        for (name, t) in params.iter() {
            out.push(Entry::from_tensor(format!("param/{name}"), t));
        }
        for i in 0..params.len() {
            out.push(Entry::from_tensor(format!("adam.m/{}", params.name(i)), &self.adam.m[i]));
        }
        for i in 0..params.len() {
            out.push(Entry::from_tensor(format!("adam.v/{}", params.name(i)), &self.adam.v[i]));
        }
        out.push(scalar_entry("adam.step", self.adam.step as f64));
        out.push(scalar_entry("train.step", self.step as f64));
        // timings stay out so that identical runs give identical files
        out.push(Entry {
            name: "train.loss".into(),
            shape: vec![1, self.log.records.len()],
            precision: Precision::F64,
            values: self.log.records.iter().map(|r| r.loss).collect(),
        });
        out
    }

    /// Serialised checkpoint bytes (the container file only).
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        container::encode(&self.entries())
    }

    /// Writes `path` and `<path>.json`, each atomically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.checkpoint_bytes())?;
        write_atomic(
            &meta_path(path),
            serde_json::to_string_pretty(&self.meta())?.as_bytes(),
        )
    }

    /// Restores parameters, optimiser moments, the step counter and the loss
    /// trace. The trainer must have been built over the same data and
    /// configuration; only the number of epochs may differ.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta::load(path)?;
        if meta.precision != T::PRECISION {
            return Err(Error::Mismatch(format!(
                "checkpoint precision {:?}, trainer {:?}",
                meta.precision,
                T::PRECISION
            )));
        }
        if &meta.model != self.model.config() {
            return Err(Error::Mismatch("model configuration differs".into()));
        }
        if meta.train.resume_key() != self.config.resume_key() {
            return Err(Error::Mismatch(
                "batch, steps per epoch, lr, seed, l_max or clip_norm differ".into(),
            ));
        }
        if (&meta.classes, &meta.relations, &meta.types)
            != (&self.vocab.0, &self.vocab.1, &self.vocab.2)
        {
            return Err(Error::Mismatch("vocabularies differ".into()));
        }
        let entries = container::read_file(path)?;
        let model = Model::from_params(meta.model.clone(), take_params(&entries, "param/")?)?;
        let params = model.params();
        let moments = |prefix: &str| -> Result<Vec<Tensor<T>>> {
            let store: ParamStore<T> = take_params(&entries, prefix)?;
            (0..params.len())
                .map(|i| {
                    let name = params.name(i);
                    let t = store
                        .get(name)
                        .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}{name}")))?;
                    if t.shape() != params.tensor(i).shape() {
                        return Err(Error::Checkpoint(format!("bad shape for {prefix}{name}")));
                    }
                    Ok(t.clone())
                })
                .collect()
        };
        let m = moments("adam.m/")?;
        let v = moments("adam.v/")?;
        let adam_step = find(&entries, "adam.step")?.values[0] as u64;
        let step = find(&entries, "train.step")?.values[0] as u64;
        let losses = &find(&entries, "train.loss")?.values;
        if losses.len() as u64 != step {
            return Err(Error::Checkpoint("loss trace length differs from step".into()));
        }
        let per_epoch = self.config.steps_per_epoch as u64;
        self.log = RunLog {
            records: losses
                .iter()
                .enumerate()
                .map(|(i, &loss)| StepRecord {
                    step: i as u64,
                    epoch: i as u64 / per_epoch,
                    loss,
                    wallclock_ms: 0,
                })
                .collect(),
        };
        self.clock = Instant::now();
        self.model = model;
        self.adam.m = m;
        self.adam.v = v;
        self.adam.step = adam_step;
        self.step = step;
        Ok(())
    }
}

/// Scales all gradients by `max / ‖g‖₂` when the global norm exceeds `max`.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = T::lit(max / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = *x * s;
            }
        }
    }
    norm
}

/// Trains for the full schedule and returns the model and its log.
pub fn train<T: Scalar>(
    kb: &KnowledgeBase,
    queries: &[Query],
    classes: &ClassVocab,
    model_config: ModelConfig,
    config: TrainConfig,
) -> Result<(Model<T>, RunLog)> {
    let mut t = Trainer::new(kb, queries, classes, model_config, config)?;
    t.run(None)?;
    let log = t.log.clone();
    Ok((t.into_model(), log))
}
