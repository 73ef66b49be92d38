//! Encoder/decoder networks, latent sampling and greedy decoding.
//!
//! Two architectures share one interface: a GRU autoencoder over token
//! sequences and a fully connected autoencoder over binary pixel vectors.
//! Decoder outputs are always expressed as blocks of categorical logits so
//! that the objectives are architecture agnostic; a pixel is a two-way
//! categorical with logits `(0, l)`.

mod vocab;

pub use vocab::{Sequence, Vocab, BOS, EOS, PAD, UNDEFINED};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Embedding, Gru, Linear, ParamStore, ParamVars, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, Prior, ProposalParams, SampleBuffer, SIGMA_FLOOR};

/// Parameter names starting with this prefix belong to the encoder.
pub const ENCODER_PREFIX: &str = "enc.";

/// Pixel decoder output for an exact tie between "off" and "on".
pub const PIXEL_UNDEFINED: usize = 2;

/// Rows per inference chunk.
const INFERENCE_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Embedding, stacked GRU encoder and decoder.
    Gru {
        #[serde(default = "default_symbols")]
        symbols: Vec<String>,
        embed_dim: usize,
        hidden: usize,
        layers: usize,
        /// Longest admissible data sequence.
        max_len: usize,
    },
    /// Fully connected encoder `input -> hidden... -> latent` with leaky ReLU,
    /// mirrored for the decoder.
    Mlp { input: usize, hidden: Vec<usize> },
}

fn default_symbols() -> Vec<String> {
    vec!["0".into(), "1".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kernel: Kernel,
    pub prior: Prior,
    pub latent_dim: usize,
    pub architecture: Architecture,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.kernel == Kernel::Gaussian && self.prior == Prior::UniformCube {
            return Err(Error::Config(
                "gaussian kernel cannot be paired with the uniform prior".into(),
            ));
        }
        match &self.architecture {
            Architecture::Gru {
                symbols,
                embed_dim,
                hidden,
                layers,
                max_len,
            } => {
                Vocab::new(symbols.iter().cloned())?;
                if *embed_dim == 0 || *hidden == 0 || *layers == 0 || *max_len == 0 {
                    return Err(Error::Config("gru sizes must be positive".into()));
                }
            }
            Architecture::Mlp { input, hidden } => {
                if *input == 0 || hidden.contains(&0) {
                    return Err(Error::Config("mlp sizes must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// One encoder/decoder input.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Seq(&'a Sequence),
    Pixels(&'a [u8]),
}

impl Input<'_> {
    /// Token form used to compare against decoder output.
    pub fn tokens(&self) -> Vec<usize> {
        match self {
            Input::Seq(s) => s.ids().to_vec(),
            Input::Pixels(p) => p.iter().map(|&v| v as usize).collect(),
        }
    }
}

#[derive(PartialEq, Eq, Hash)]
enum InputKey<'a> {
    Seq(&'a [usize]),
    Pixels(&'a [u8]),
}

impl<'a> InputKey<'a> {
    fn of(x: &Input<'a>) -> Self {
        match *x {
            Input::Seq(s) => InputKey::Seq(s.ids()),
            Input::Pixels(p) => InputKey::Pixels(p),
        }
    }
}

/// Proposal parameters on the tape, both `[batch, latent]`.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub mu: Var,
    pub sigma: Var,
}

/// Categorical logits `[rows, classes]` with one target per row. Rows with a
/// zero mask entry are padding.
#[derive(Clone, Debug)]
pub struct ScoreBlock {
    pub logits: Var,
    pub targets: Vec<usize>,
    pub mask: Option<Vec<f64>>,
    /// Batch element owning each row.
    pub owner: Vec<usize>,
}

#[derive(Clone, Debug)]
struct SeqNet {
    vocab: Vocab,
    max_len: usize,
    enc_embed: Embedding,
    enc_gru: Gru,
    dec_embed: Embedding,
    dec_init: Vec<Linear>,
    dec_gru: Gru,
    dec_out: Linear,
}

#[derive(Clone, Debug)]
struct MlpNet {
    input: usize,
    enc: Vec<Linear>,
    dec: Vec<Linear>,
}

#[derive(Clone, Debug)]
enum Net {
    Seq(SeqNet),
    Mlp(MlpNet),
}

/// Encoder/decoder pair with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    store: ParamStore,
    net: Net,
    mu_head: Linear,
    sigma_head: Linear,
}

/// Index of the largest score, or `None` when the two largest are exactly
/// equal.
pub fn argmax_strict(scores: &[f64]) -> Option<usize> {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    let tied = scores
        .iter()
        .enumerate()
        .any(|(i, &s)| i != best && s == scores[best]);
    (!tied).then_some(best)
}

impl Model {
    /// Builds a freshly initialized model; `seed` drives initialization.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = spec.latent_dim;
        let (net, mu_head, sigma_head) = match &spec.architecture {
            Architecture::Gru {
                symbols,
                embed_dim,
                hidden,
                layers,
                max_len,
            } => {
                let vocab = Vocab::new(symbols.iter().cloned())?;
                let v = vocab.len();
                let enc_embed = Embedding::new(&mut store, "enc.embed", v, *embed_dim, &mut rng);
                let enc_gru = Gru::new(&mut store, "enc.gru", *embed_dim, *hidden, *layers, &mut rng);
                let mu_head = Linear::new(&mut store, "enc.mu", *hidden, d, &mut rng);
                let sigma_head = Linear::new(&mut store, "enc.sigma", *hidden, d, &mut rng);
                let dec_embed = Embedding::new(&mut store, "dec.embed", v, *embed_dim, &mut rng);
                let dec_init = (0..*layers)
                    .map(|l| Linear::new(&mut store, &format!("dec.init{l}"), d, *hidden, &mut rng))
                    .collect();
                let dec_gru = Gru::new(&mut store, "dec.gru", *embed_dim, *hidden, *layers, &mut rng);
                let dec_out = Linear::new(&mut store, "dec.out", *hidden, v, &mut rng);
                let net = SeqNet {
                    vocab,
                    max_len: *max_len,
                    enc_embed,
                    enc_gru,
                    dec_embed,
                    dec_init,
                    dec_gru,
                    dec_out,
                };
                (Net::Seq(net), mu_head, sigma_head)
            }
            Architecture::Mlp { input, hidden } => {
                let mut enc = Vec::new();
                let mut fan_in = *input;
                for (i, &h) in hidden.iter().enumerate() {
                    enc.push(Linear::new(&mut store, &format!("enc.fc{i}"), fan_in, h, &mut rng));
                    fan_in = h;
                }
                let mu_head = Linear::new(&mut store, "enc.mu", fan_in, d, &mut rng);
                let sigma_head = Linear::new(&mut store, "enc.sigma", fan_in, d, &mut rng);
                let mut dec = Vec::new();
                let mut fan_in = d;
                for (i, &h) in hidden.iter().rev().enumerate() {
                    dec.push(Linear::new(&mut store, &format!("dec.fc{i}"), fan_in, h, &mut rng));
                    fan_in = h;
                }
                dec.push(Linear::new(&mut store, "dec.out", fan_in, *input, &mut rng));
                let net = MlpNet {
                    input: *input,
                    enc,
                    dec,
                };
                (Net::Mlp(net), mu_head, sigma_head)
            }
        };
        Ok(Self {
            spec,
            store,
            net,
            mu_head,
            sigma_head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kernel(&self) -> Kernel {
        self.spec.kernel
    }

    pub fn prior(&self) -> Prior {
        self.spec.prior
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Vocabulary of a sequence model.
    pub fn vocab(&self) -> Option<&Vocab> {
        match &self.net {
            Net::Seq(s) => Some(&s.vocab),
            Net::Mlp(_) => None,
        }
    }

    /// Longest output the greedy decoder produces before giving up on eos.
    pub fn max_len(&self) -> usize {
        match &self.net {
            Net::Seq(s) => s.max_len,
            Net::Mlp(m) => m.input,
        }
    }

    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with(ENCODER_PREFIX)
    }

    /// Binds every parameter as trainable.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        self.store.bind(tape, |_| true)
    }

    /// Proposal parameters for a batch. Bandwidths go through softplus; under
    /// the uniform prior `(mu, sigma)` are squashed into `(-1, 1)`.
    /// Repeated inputs in a batch are encoded once and their rows gathered.
    pub fn encode(&self, tape: &mut Tape, vars: &ParamVars, inputs: &[Input]) -> Result<Encoded> {
        if inputs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut first: HashMap<InputKey, usize> = HashMap::with_capacity(inputs.len());
        let mut unique = Vec::new();
        let rows: Vec<usize> = inputs
            .iter()
            .map(|x| {
                *first.entry(InputKey::of(x)).or_insert_with(|| {
                    unique.push(*x);
                    unique.len() - 1
                })
            })
            .collect();
        if unique.len() == inputs.len() {
            return self.encode_rows(tape, vars, inputs);
        }
        let enc = self.encode_rows(tape, vars, &unique)?;
        Ok(Encoded {
            mu: tape.gather_rows(enc.mu, &rows),
            sigma: tape.gather_rows(enc.sigma, &rows),
        })
    }

    fn encode_rows(&self, tape: &mut Tape, vars: &ParamVars, inputs: &[Input]) -> Result<Encoded> {
        let feat = match &self.net {
            Net::Seq(net) => net.encode_features(tape, vars, inputs)?,
            Net::Mlp(net) => net.encode_features(tape, vars, inputs)?,
        };
        let mu = self.mu_head.forward(tape, vars, feat);
        let raw = self.sigma_head.forward(tape, vars, feat);
        let s = tape.softplus(raw);
        let s = tape.floor_min(s, SIGMA_FLOOR);
        let (mu, sigma) = match self.spec.prior {
            Prior::StdNormal => (mu, s),
            Prior::UniformCube => {
                let edge = 1.0 - 2.0 * SIGMA_FLOOR;
                let a = tape.add(mu, s);
                let hi = tape.tanh(a);
                let hi = clamp(tape, hi, -edge, edge);
                let b = tape.sub(mu, s);
                let lo = tape.tanh(b);
                let lo = clamp(tape, lo, -edge, edge);
                let m = tape.add(hi, lo);
                let w = tape.sub(hi, lo);
                (tape.scale(m, 0.5), tape.scale(w, 0.5))
            }
        };
        let sigma = tape.floor_min(sigma, SIGMA_FLOOR);
        Ok(Encoded { mu, sigma })
    }

    /// `z = mu + sigma * eps` with one noise vector per batch element.
    pub fn sample_latents(&self, tape: &mut Tape, enc: Encoded, buffer: &mut SampleBuffer) -> Result<Var> {
        if buffer.kernel() != self.spec.kernel {
            return Err(Error::Config(format!(
                "sampler draws from {} but the model uses {}",
                buffer.kernel(),
                self.spec.kernel
            )));
        }
        let shape = tape.value(enc.mu).shape().to_vec();
        let n = shape.iter().product();
        let eps = tape.constant(Tensor::new(shape, buffer.sample_eps(n))?);
        let se = tape.mul(enc.sigma, eps);
        Ok(tape.add(enc.mu, se))
    }

    /// Teacher-forced decoder logits for a batch of latents `z` `[batch, latent]`.
    pub fn decode_blocks(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        z: Var,
        inputs: &[Input],
    ) -> Result<Vec<ScoreBlock>> {
        self.check_latent(tape.value(z), inputs.len())?;
        match &self.net {
            Net::Seq(net) => net.decode_blocks(tape, vars, z, inputs),
            Net::Mlp(net) => net.decode_blocks(tape, vars, z, inputs),
        }
    }

    fn check_latent(&self, z: &Tensor, batch: usize) -> Result<()> {
        if z.shape() != [batch, self.spec.latent_dim] {
            return Err(Error::Shape(format!(
                "latent batch has shape {:?}, expected [{batch}, {}]",
                z.shape(),
                self.spec.latent_dim
            )));
        }
        Ok(())
    }

    /// Encoder outputs as plain values, computed without gradients.
    pub fn proposals(&self, inputs: &[Input]) -> Result<Vec<ProposalParams>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let vars = self.store.bind(&mut tape, |_| false);
            let enc = self.encode(&mut tape, &vars, chunk)?;
            let (mu, sigma) = (tape.value(enc.mu), tape.value(enc.sigma));
            for r in 0..chunk.len() {
                out.push(ProposalParams::new(mu.row(r).to_vec(), sigma.row(r).to_vec())?);
            }
        }
        Ok(out)
    }

    /// Token probabilities for one latent under teacher forcing on `prefix`:
    /// one row per predicted position (including the final eos for
    /// sequences).
    pub fn decode_scores(&self, z: &[f64], prefix: Input) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape, |_| false);
        let zt = tape.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let blocks = self.decode_blocks(&mut tape, &vars, zt, &[prefix])?;
        let mut rows = Vec::new();
        for b in &blocks {
            let p = tape.softmax(b.logits);
            let p = tape.value(p);
            for r in 0..p.rows() {
                if b.mask.as_ref().is_none_or(|m| m[r] > 0.0) {
                    rows.push(p.row(r).to_vec());
                }
            }
        }
        Tensor::from_rows(&rows)
    }

    /// Greedy argmax decoding of each latent, at most [`Model::max_len`] tokens.
    pub fn decode_latents(&self, zs: &[Vec<f64>]) -> Result<Vec<Sequence>> {
        self.decode_latents_with(zs, self.max_len())
    }

    /// Greedy decoding. Sequences stop at eos (not emitted), at an exact
    /// top-two tie (undefined token emitted), or after `max_len + 1` steps
    /// without eos. Pixel outputs use [`PIXEL_UNDEFINED`] for ties.
    pub fn decode_latents_with(&self, zs: &[Vec<f64>], max_len: usize) -> Result<Vec<Sequence>> {
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(INFERENCE_CHUNK) {
            let rows = chunk.iter().map(|z| {
                if z.len() == self.spec.latent_dim {
                    Ok(z.clone())
                } else {
                    Err(Error::Shape(format!(
                        "latent has {} dims, model expects {}",
                        z.len(),
                        self.spec.latent_dim
                    )))
                }
            });
            let zt = Tensor::from_rows(&rows.collect::<Result<Vec<_>>>()?)?;
            let mut tape = Tape::new();
            let vars = self.store.bind(&mut tape, |_| false);
            let z = tape.constant(zt);
            match &self.net {
                Net::Seq(net) => out.extend(net.greedy(&mut tape, &vars, z, chunk.len(), max_len)),
                Net::Mlp(net) => out.extend(net.greedy(&mut tape, &vars, z, chunk.len())),
            }
        }
        Ok(out)
    }

    /// Greedy decoding of a single latent.
    pub fn deterministic_decode(&self, z: &[f64], max_len: usize) -> Result<Sequence> {
        let max_len = max_len.min(self.max_len());
        Ok(self.decode_latents_with(&[z.to_vec()], max_len)?.remove(0))
    }
}

/// Elementwise `min(max(x, lo), hi)`.
fn clamp(tape: &mut Tape, x: Var, lo: f64, hi: f64) -> Var {
    let x = tape.floor_min(x, lo);
    let x = tape.neg(x);
    let x = tape.floor_min(x, -hi);
    tape.neg(x)
}

fn seqs<'a>(inputs: &[Input<'a>]) -> Result<Vec<&'a Sequence>> {
    inputs
        .iter()
        .map(|i| match i {
            Input::Seq(s) => Ok(*s),
            Input::Pixels(_) => Err(Error::Shape("sequence model given pixel input".into())),
        })
        .collect()
}

impl SeqNet {
    fn zeros_state(&self, tape: &mut Tape, batch: usize) -> Vec<Var> {
        let h = self.enc_gru.hidden();
        (0..self.enc_gru.layers.len())
            .map(|_| tape.constant(Tensor::zeros(&[batch, h])))
            .collect()
    }

    /// Top-layer state after reading each sequence; shorter sequences keep
    /// their state once exhausted.
    fn encode_features(&self, tape: &mut Tape, vars: &ParamVars, inputs: &[Input]) -> Result<Var> {
        let seqs = seqs(inputs)?;
        for s in &seqs {
            Sequence::new(s.ids().to_vec(), &self.vocab, self.max_len)?;
        }
        let b = seqs.len();
        let t_max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let ragged = seqs.iter().any(|s| s.len() != t_max);
        let mut hs = self.zeros_state(tape, b);
        for t in 0..t_max {
            let ids: Vec<usize> = seqs
                .iter()
                .map(|s| s.ids().get(t).copied().unwrap_or(self.vocab.pad()))
                .collect();
            let x = self.enc_embed.forward(tape, vars, &ids);
            let new = self.enc_gru.step(tape, vars, x, &hs);
            hs = if ragged {
                let m: Vec<f64> = seqs.iter().map(|s| (t < s.len()) as u8 as f64).collect();
                let m = tape.constant(Tensor::new(vec![b, 1], m)?);
                new.iter()
                    .zip(&hs)
                    .map(|(&n, &h)| {
                        let d = tape.sub(n, h);
                        let md = tape.mul(m, d);
                        tape.add(h, md)
                    })
                    .collect()
            } else {
                new
            };
        }
        Ok(*hs.last().expect("at least one layer"))
    }

    fn init_state(&self, tape: &mut Tape, vars: &ParamVars, z: Var) -> Vec<Var> {
        self.dec_init.iter().map(|l| l.forward(tape, vars, z)).collect()
    }

    fn decode_blocks(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        z: Var,
        inputs: &[Input],
    ) -> Result<Vec<ScoreBlock>> {
        let seqs = seqs(inputs)?;
        let b = seqs.len();
        let t_max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let ragged = seqs.iter().any(|s| s.len() != t_max);
        let mut hs = self.init_state(tape, vars, z);
        let mut blocks = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            let ids: Vec<usize> = seqs
                .iter()
                .map(|s| match t {
                    0 => self.vocab.bos(),
                    _ => s.ids().get(t - 1).copied().unwrap_or(self.vocab.pad()),
                })
                .collect();
            let x = self.dec_embed.forward(tape, vars, &ids);
            hs = self.dec_gru.step(tape, vars, x, &hs);
            let top = *hs.last().expect("at least one layer");
            let logits = self.dec_out.forward(tape, vars, top);
            let targets = seqs
                .iter()
                .map(|s| match t.cmp(&s.len()) {
                    std::cmp::Ordering::Less => s.ids()[t],
                    std::cmp::Ordering::Equal => self.vocab.eos(),
                    std::cmp::Ordering::Greater => self.vocab.pad(),
                })
                .collect();
            let mask = ragged.then(|| seqs.iter().map(|s| (t <= s.len()) as u8 as f64).collect());
            blocks.push(ScoreBlock {
                logits,
                targets,
                mask,
                owner: (0..b).collect(),
            });
        }
        Ok(blocks)
    }

    fn greedy(&self, tape: &mut Tape, vars: &ParamVars, z: Var, b: usize, max_len: usize) -> Vec<Sequence> {
        let mut hs = self.init_state(tape, vars, z);
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        let mut prev = vec![self.vocab.bos(); b];
        for _ in 0..=max_len {
            if done.iter().all(|&d| d) {
                break;
            }
            let x = self.dec_embed.forward(tape, vars, &prev);
            hs = self.dec_gru.step(tape, vars, x, &hs);
            let top = *hs.last().expect("at least one layer");
            let logits = self.dec_out.forward(tape, vars, top);
            let p = tape.softmax(logits);
            let p = tape.value(p);
            for r in 0..b {
                if done[r] {
                    continue;
                }
                match argmax_strict(p.row(r)) {
                    Some(tok) if tok == self.vocab.eos() => done[r] = true,
                    Some(tok) => {
                        out[r].push(tok);
                        prev[r] = tok;
                    }
                    None => {
                        out[r].push(self.vocab.undefined());
                        done[r] = true;
                    }
                }
            }
        }
        out.into_iter().map(Sequence::from_ids).collect()
    }
}

impl MlpNet {
    fn encode_features(&self, tape: &mut Tape, vars: &ParamVars, inputs: &[Input]) -> Result<Var> {
        let x = self.pixel_batch(inputs)?;
        let mut h = tape.constant(x);
        for l in &self.enc {
            h = l.forward(tape, vars, h);
            h = tape.leaky_relu(h);
        }
        Ok(h)
    }

    fn pixel_batch(&self, inputs: &[Input]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(inputs.len() * self.input);
        for i in inputs {
            match i {
                Input::Pixels(p) if p.len() == self.input => {
                    data.extend(p.iter().map(|&v| v as f64));
                }
                Input::Pixels(p) => {
                    return Err(Error::Shape(format!(
                        "image has {} pixels, model expects {}",
                        p.len(),
                        self.input
                    )))
                }
                Input::Seq(_) => return Err(Error::Shape("pixel model given sequence input".into())),
            }
        }
        Tensor::new(vec![inputs.len(), self.input], data)
    }

    /// Per-pixel logits `[batch, pixels]`.
    fn logits(&self, tape: &mut Tape, vars: &ParamVars, z: Var) -> Var {
        let mut h = z;
        let last = self.dec.len() - 1;
        for (i, l) in self.dec.iter().enumerate() {
            h = l.forward(tape, vars, h);
            if i < last {
                h = tape.leaky_relu(h);
            }
        }
        h
    }

    /// Two-class logits `(0, l)` so that class 1 has probability sigmoid(l).
    fn two_class(&self, tape: &mut Tape, l: Var, b: usize) -> Var {
        let col = tape.reshape(l, &[b * self.input, 1]);
        let zero = tape.constant(Tensor::zeros(&[b * self.input, 1]));
        tape.concat(&[zero, col])
    }

    fn decode_blocks(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        z: Var,
        inputs: &[Input],
    ) -> Result<Vec<ScoreBlock>> {
        let x = self.pixel_batch(inputs)?;
        let b = inputs.len();
        let l = self.logits(tape, vars, z);
        let logits = self.two_class(tape, l, b);
        Ok(vec![ScoreBlock {
            logits,
            targets: x.data().iter().map(|&v| v as usize).collect(),
            mask: None,
            owner: (0..b * self.input).map(|r| r / self.input).collect(),
        }])
    }

    fn greedy(&self, tape: &mut Tape, vars: &ParamVars, z: Var, b: usize) -> Vec<Sequence> {
        let l = self.logits(tape, vars, z);
        let logits = self.two_class(tape, l, b);
        let p = tape.softmax(logits);
        let p = tape.value(p);
        (0..b)
            .map(|i| {
                Sequence::from_ids(
                    (0..self.input)
                        .map(|j| argmax_strict(p.row(i * self.input + j)).unwrap_or(PIXEL_UNDEFINED))
                        .collect(),
                )
            })
            .collect()
    }
}
