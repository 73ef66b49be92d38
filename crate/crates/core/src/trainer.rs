//! Optimization loop with annealing, fine-tuning, checkpoints and metrics.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{csv_err, Dataset};
use crate::diffengine::checkpoint::{read_records, write_records};
use crate::diffengine::{ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::kernels::SampleBuffer;
use crate::objective::{
    bind_decoder_only, error_rate, finetune_loss, model_optimal_error_rate, relaxed_elbo, standard_elbo,
    ErrorRateEstimate,
};
use crate::relaxation::{Schedule, Temperature};
use crate::seqmodel::Model;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.bin";

/// What to measure after each epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Evaluate every `every` epochs (and always after the last epoch of a
    /// phase); 0 disables per-epoch evaluation.
    pub every: usize,
    /// Sample count of the decoding error rate; 0 skips it.
    pub delta_samples: usize,
    /// Prior samples of the optimal error rate (enumerable data only); 0 skips it.
    pub delta_opt_samples: usize,
    /// Cap on the examples scored for sequence accuracy.
    pub max_examples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 1,
            delta_samples: 2000,
            delta_opt_samples: 2000,
            max_examples: 2000,
        }
    }
}

fn default_checkpoint_every() -> usize {
    25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Examples per epoch; defaults to the dataset size.
    #[serde(default)]
    pub epoch_size: Option<usize>,
    pub lr_initial: f64,
    /// Halve the learning rate every this many epochs; 0 keeps it fixed.
    pub lr_halve_every: usize,
    /// Per-entry absolute gradient bound.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub beta_schedule: Schedule,
    /// Temperature plan of the relaxed objective; absent for a plain VAE.
    #[serde(default)]
    pub tau_schedule: Option<Schedule>,
    /// Leading epochs trained with `beta = 0`.
    #[serde(default)]
    pub pretrain_epochs: usize,
    #[serde(default)]
    pub finetune_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::Config(format!("lr_initial must be positive, got {}", self.lr_initial)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.epoch_size == Some(0) {
            return Err(Error::Config("epoch_size must be at least 1".into()));
        }
        self.beta_schedule.validate()?;
        if let Some(t) = &self.tau_schedule {
            t.validate()?;
            for e in 0..self.epochs.max(1) {
                Temperature::new(t.value(e)?)
                    .map_err(|_| Error::Config(format!("tau schedule leaves (0, 1) at epoch {e}")))?;
            }
        }
        Ok(())
    }

    /// Learning rate at global epoch `epoch` (fine-tune epochs continue the
    /// count).
    pub fn lr(&self, epoch: usize) -> f64 {
        match self.lr_halve_every {
            0 => self.lr_initial,
            k => self.lr_initial * 0.5f64.powi((epoch / k) as i32),
        }
    }

    /// KL weight of training epoch `epoch`.
    pub fn beta(&self, epoch: usize) -> Result<f64> {
        if epoch < self.pretrain_epochs {
            Ok(0.0)
        } else {
            self.beta_schedule.value(epoch)
        }
    }

    pub fn tau(&self, epoch: usize) -> Result<Option<Temperature>> {
        self.tau_schedule
            .as_ref()
            .map(|s| Temperature::new(s.value(epoch)?))
            .transpose()
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs + self.finetune_epochs
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let i = id.index();
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Clamps every entry to `[-c, c]`.
pub fn clip_entries(g: &mut Tensor, c: f64) {
    for v in g.data_mut() {
        *v = v.clamp(-c, c);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Finetune,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Finetune => "finetune",
        })
    }
}

/// One metrics CSV row. Unmeasured quantities are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub phase: Phase,
    pub epoch: usize,
    pub beta: f64,
    pub tau: Option<f64>,
    pub lr: f64,
    pub elbo_total: f64,
    pub recon: f64,
    pub kl: f64,
    pub seq_acc: Option<f64>,
    pub delta_hat: Option<f64>,
    pub delta_hat_se: Option<f64>,
    pub delta_opt_hat: Option<f64>,
    pub delta_opt_hat_se: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "phase,epoch,beta,tau,lr,elbo_total,recon,kl,seq_acc,delta_hat,delta_hat_se,delta_opt_hat,delta_opt_hat_se";

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(',')).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn append_metrics(path: &Path, row: &MetricsRow) -> Result<()> {
    let file = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.serialize(row).map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Evaluation readouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    SeqAcc,
    DeltaHat,
    DeltaOptHat,
    Knn,
    KlMean,
}

impl EvalMode {
    pub const ALL: [EvalMode; 5] = [
        EvalMode::SeqAcc,
        EvalMode::DeltaHat,
        EvalMode::DeltaOptHat,
        EvalMode::Knn,
        EvalMode::KlMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::SeqAcc => "seq_acc",
            EvalMode::DeltaHat => "delta_hat",
            EvalMode::DeltaOptHat => "delta_opt_hat",
            EvalMode::Knn => "knn",
            EvalMode::KlMean => "kl_mean",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown eval mode `{s}`")))
    }
}

/// Inputs shared by the evaluation modes.
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions<'a> {
    pub n_samples: usize,
    pub seed: u64,
    /// Labeled reference set for kNN; the evaluated dataset is scored.
    pub reference: Option<&'a Dataset>,
    pub max_examples: usize,
}

/// Fraction of examples decoded exactly from their proposal mean.
pub fn seq_acc(model: &Model, dataset: &Dataset, max_examples: usize) -> Result<f64> {
    let n = dataset.len().min(max_examples.max(1));
    let idx: Vec<usize> = (0..n).collect();
    let inputs = dataset.inputs(&idx);
    let props = model.proposals(&inputs)?;
    let zs: Vec<Vec<f64>> = props.into_iter().map(|p| p.mu).collect();
    let dec = model.decode_latents(&zs)?;
    let hits = dec.iter().zip(&inputs).filter(|(d, x)| d.ids() == x.tokens()).count();
    Ok(hits as f64 / n as f64)
}

/// Mean proposal KL, weighted by the data measure when it is known.
pub fn kl_mean(model: &Model, dataset: &Dataset) -> Result<f64> {
    let props = model.proposals(&dataset.all_inputs())?;
    let kls = props
        .iter()
        .map(|p| p.kl(model.kernel(), model.prior()))
        .collect::<Result<Vec<_>>>()?;
    Ok(match dataset.probabilities() {
        Some(w) => kls.iter().zip(w).map(|(k, w)| k * w).sum(),
        None => kls.iter().sum::<f64>() / kls.len() as f64,
    })
}

/// Majority vote among the `k` nearest reference points (Euclidean). Vote
/// ties go to the tied label whose nearest member is closest.
pub fn knn_accuracy(
    reference: &[(Vec<f64>, u8)],
    queries: &[(Vec<f64>, u8)],
    k: usize,
) -> Result<f64> {
    if reference.is_empty() || queries.is_empty() || k == 0 {
        return Err(Error::Dataset("knn needs reference points, queries and k >= 1".into()));
    }
    let k = k.min(reference.len());
    let mut hits = 0;
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(reference.len());
    for (q, label) in queries {
        dist.clear();
        dist.extend(reference.iter().enumerate().map(|(i, (r, _))| {
            let d: f64 = r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        }));
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut near = dist[..k].to_vec();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = [0usize; 256];
        for &(_, i) in &near {
            votes[reference[i].1 as usize] += 1;
        }
        let top = *votes.iter().max().expect("non-empty");
        let pred = near
            .iter()
            .map(|&(_, i)| reference[i].1)
            .find(|&l| votes[l as usize] == top)
            .expect("some neighbor has the top count");
        hits += (pred == *label) as usize;
    }
    Ok(hits as f64 / queries.len() as f64)
}

fn labeled_means(model: &Model, dataset: &Dataset) -> Result<Vec<(Vec<f64>, u8)>> {
    if !dataset.has_labels() {
        return Err(Error::Dataset("labels unavailable".into()));
    }
    let props = model.proposals(&dataset.all_inputs())?;
    Ok(props
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p.mu, dataset.label(i).expect("labeled")))
        .collect())
}

/// Named readouts of one evaluation mode.
pub fn evaluate(model: &Model, dataset: &Dataset, mode: EvalMode, opts: &EvalOptions) -> Result<Vec<(String, f64)>> {
    Ok(match mode {
        EvalMode::SeqAcc => vec![("seq_acc".into(), seq_acc(model, dataset, opts.max_examples)?)],
        EvalMode::DeltaHat => {
            let e = error_rate(model, dataset, opts.n_samples, opts.seed)?;
            vec![("delta_hat".into(), e.value), ("delta_hat_se".into(), e.std_err)]
        }
        EvalMode::DeltaOptHat => {
            let e = model_optimal_error_rate(model, dataset, opts.n_samples, opts.seed)?;
            vec![("delta_opt_hat".into(), e.value), ("delta_opt_hat_se".into(), e.std_err)]
        }
        EvalMode::Knn => {
            let queries = labeled_means(model, dataset)?;
            let reference = match opts.reference {
                Some(r) => labeled_means(model, r)?,
                None => queries.clone(),
            };
            vec![
                ("knn_k5".into(), knn_accuracy(&reference, &queries, 5)?),
                ("knn_k1".into(), knn_accuracy(&reference, &queries, 1)?),
            ]
        }
        EvalMode::KlMean => vec![("kl_mean".into(), kl_mean(model, dataset)?)],
    })
}

/// Seed of the randomness of global epoch `epoch`, stream `s`.
fn epoch_seed(seed: u64, epoch: usize, s: u64) -> u64 {
    let mut x = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ s.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Training state: model, optimizer, position in the run and metrics.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: Adam,
    /// Global index of the next epoch to run.
    next_epoch: usize,
    log: Vec<MetricsRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(model.params());
        Ok(Self {
            config,
            model,
            adam,
            next_epoch: 0,
            log: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn log(&self) -> &[MetricsRow] {
        &self.log
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.config.total_epochs()
    }

    /// Runs every remaining epoch.
    pub fn run(&mut self, dataset: &Dataset, out: Option<&Path>) -> Result<()> {
        self.run_until(dataset, out, self.config.total_epochs())
    }

    /// Runs until `stop` global epochs are complete. With an output
    /// directory, metrics rows are appended to its CSV and checkpoints are
    /// written there.
    pub fn run_until(&mut self, dataset: &Dataset, out: Option<&Path>, stop: usize) -> Result<()> {
        let stop = stop.min(self.config.total_epochs());
        let csv = out.map(|d| d.join(METRICS_FILE));
        if let Some(p) = &csv {
            // Rewritten from the in-memory log so rows past a resume point
            // are dropped.
            write_metrics(p, &self.log)?;
        }
        while self.next_epoch < stop {
            let row = self.run_epoch(dataset)?;
            if let Some(p) = &csv {
                append_metrics(p, &row)?;
            }
            self.log.push(row);
            self.next_epoch += 1;
            if let Some(dir) = out {
                let done = self.next_epoch;
                if self.config.checkpoint_every > 0 && done % self.config.checkpoint_every == 0 {
                    self.save_checkpoint(&dir.join(format!("checkpoint_e{done:04}.bin")))?;
                }
                if self.is_done() {
                    self.save_checkpoint(&dir.join(FINAL_CHECKPOINT))?;
                }
            }
        }
        Ok(())
    }

    fn run_epoch(&mut self, dataset: &Dataset) -> Result<MetricsRow> {
        let g = self.next_epoch;
        let cfg = &self.config;
        let (phase, epoch) = if g < cfg.epochs {
            (Phase::Train, g)
        } else {
            (Phase::Finetune, g - cfg.epochs)
        };
        let lr = cfg.lr(g);
        let (beta, tau) = match phase {
            Phase::Train => (cfg.beta(epoch)?, cfg.tau(epoch)?),
            Phase::Finetune => (0.0, None),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, g, 0));
        let mut buffer = SampleBuffer::new(self.model.kernel(), epoch_seed(cfg.seed, g, 1));
        let order = dataset.epoch_order(&mut rng, cfg.epoch_size);
        let (mut sum_total, mut sum_rec, mut sum_kl, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let inputs = dataset.inputs(idx);
            let mut tape = Tape::new();
            let (vars, loss, rec, kl) = match phase {
                Phase::Train => {
                    let vars = self.model.bind(&mut tape);
                    let g = match tau {
                        Some(t) => relaxed_elbo(&mut tape, &self.model, &vars, &inputs, &mut buffer, beta, t)?,
                        None => standard_elbo(&mut tape, &self.model, &vars, &inputs, &mut buffer, beta)?,
                    };
                    (vars, g.loss, g.terms.reconstruction, g.terms.kl)
                }
                Phase::Finetune => {
                    let vars = bind_decoder_only(&self.model, &mut tape);
                    let (loss, rec) = finetune_loss(&mut tape, &self.model, &vars, &inputs, &mut buffer)?;
                    (vars, loss, rec, 0.0)
                }
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                let site = tape
                    .first_non_finite()
                    .map(|s| format!(", first non-finite node {} ({})", s.node, s.op))
                    .unwrap_or_default();
                return Err(Error::NonFinite {
                    epoch: g,
                    batch: b,
                    detail: format!("loss {value}, reconstruction {rec}, kl {kl}{site}"),
                });
            }
            let mut grads = tape.backward(loss)?;
            let mut per_param: Vec<Option<Tensor>> = vars.iter().map(|(_, v)| grads.take(v)).collect();
            if let Some(c) = cfg.grad_clip {
                for g in per_param.iter_mut().flatten() {
                    clip_entries(g, c);
                }
            }
            self.adam.update(self.model.params_mut(), &per_param, lr);
            let n = idx.len() as f64;
            sum_total += -value * n;
            sum_rec += rec * n;
            sum_kl += kl * n;
            seen += idx.len();
        }
        let seen = seen.max(1) as f64;
        let mut row = MetricsRow {
            phase,
            epoch,
            beta,
            tau: tau.map(Temperature::get),
            lr,
            elbo_total: sum_total / seen,
            recon: sum_rec / seen,
            kl: sum_kl / seen,
            seq_acc: None,
            delta_hat: None,
            delta_hat_se: None,
            delta_opt_hat: None,
            delta_opt_hat_se: None,
        };
        self.evaluate_epoch(dataset, g, &mut row)?;
        Ok(row)
    }

    fn evaluate_epoch(&self, dataset: &Dataset, g: usize, row: &mut MetricsRow) -> Result<()> {
        let ev = &self.config.eval;
        let last_of_phase = g + 1 == self.config.epochs || g + 1 == self.config.total_epochs();
        if ev.every == 0 || !((g + 1) % ev.every == 0 || last_of_phase) {
            return Ok(());
        }
        let seed = epoch_seed(self.config.seed, g, 2);
        row.seq_acc = Some(seq_acc(&self.model, dataset, ev.max_examples)?);
        if ev.delta_samples > 0 {
            let e: ErrorRateEstimate = error_rate(&self.model, dataset, ev.delta_samples, seed)?;
            row.delta_hat = Some(e.value);
            row.delta_hat_se = Some(e.std_err);
        }
        if ev.delta_opt_samples > 0 && dataset.is_enumerable() {
            let e = model_optimal_error_rate(&self.model, dataset, ev.delta_opt_samples, seed)?;
            row.delta_opt_hat = Some(e.value);
            row.delta_opt_hat_se = Some(e.std_err);
        }
        Ok(())
    }

    fn records(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.model.params().iter() {
            out.push((format!("param/{name}"), t.clone()));
        }
        for (i, (name, _)) in self.model.params().iter().enumerate() {
            out.push((format!("adam_m/{name}"), self.adam.m[i].clone()));
            out.push((format!("adam_v/{name}"), self.adam.v[i].clone()));
        }
        out.push(("state/adam_step".into(), Tensor::scalar(self.adam.step as f64)));
        out.push(("state/next_epoch".into(), Tensor::scalar(self.next_epoch as f64)));
        out
    }

    /// Writes parameters, optimizer moments and the run position.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_records(path, &self.records())
    }

    /// Restores a run from a checkpoint written by [`Trainer::save_checkpoint`].
    /// `model` supplies the architecture; every parameter is overwritten.
    /// With `out`, metrics rows before the resume point are reloaded from
    /// its CSV.
    pub fn resume(config: TrainConfig, model: Model, path: &Path, out: Option<&Path>) -> Result<Self> {
        let mut t = Self::new(config, model)?;
        let records = read_records(path)?;
        let get = |name: &str| {
            records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks record `{name}`")))
        };
        load_params(t.model.params_mut(), &records)?;
        let names: Vec<String> = t.model.params().iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            for (slot, prefix) in [(&mut t.adam.m[i], "adam_m"), (&mut t.adam.v[i], "adam_v")] {
                let src = get(&format!("{prefix}/{name}"))?;
                if src.shape() != slot.shape() {
                    return Err(Error::Format(format!("optimizer state `{name}` has the wrong shape")));
                }
                *slot = src.clone();
            }
        }
        t.adam.step = get("state/adam_step")?.item() as u64;
        t.next_epoch = get("state/next_epoch")?.item() as usize;
        if let Some(dir) = out {
            let p = dir.join(METRICS_FILE);
            if p.exists() {
                let mut rows = read_metrics(&p)?;
                if rows.len() < t.next_epoch {
                    return Err(Error::Format(format!(
                        "{} has {} rows but the checkpoint is at epoch {}",
                        p.display(),
                        rows.len(),
                        t.next_epoch
                    )));
                }
                rows.truncate(t.next_epoch);
                t.log = rows;
            }
        }
        Ok(t)
    }
}

/// Copies `param/<name>` records into `store`, checking names and shapes.
pub fn load_params(store: &mut ParamStore, records: &[(String, Tensor)]) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let key = format!("param/{}", store.name(id));
        let (_, src) = records
            .iter()
            .find(|(n, _)| *n == key)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{key}`")))?;
        if src.shape() != store.get(id).shape() {
            return Err(Error::Format(format!(
                "parameter `{key}` has shape {:?} in the checkpoint but {:?} in the model",
                src.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = src.clone();
    }
    let expected = store.len();
    let found = records.iter().filter(|(n, _)| n.starts_with("param/")).count();
    if found != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {found} parameters, model has {expected}"
        )));
    }
    Ok(())
}

/// Loads only the model parameters of a checkpoint.
pub fn load_model_params(model: &mut Model, path: &Path) -> Result<()> {
    load_params(model.params_mut(), &read_records(path)?)
}

/// Path of the checkpoint written after `epochs` completed epochs.
pub fn checkpoint_path(dir: &Path, epochs: usize) -> PathBuf {
    dir.join(format!("checkpoint_e{epochs:04}.bin"))
}
