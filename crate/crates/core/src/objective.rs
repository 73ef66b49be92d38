//! Training objectives and decoding error estimates.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::diffengine::{ParamVars, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kernels::{reparameterize, Kernel, Prior, ProposalParams, SampleBuffer};
use crate::relaxation::Temperature;
use crate::seqmodel::{argmax_strict, Input, Model, ScoreBlock, Sequence};

/// Batch-mean ELBO decomposition; `total = reconstruction - beta * kl`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl ElboTerms {
    pub fn new(reconstruction: f64, kl: f64, beta: f64) -> Self {
        Self {
            reconstruction,
            kl,
            beta,
            total: reconstruction - beta * kl,
        }
    }
}

/// Monte Carlo estimate of a probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRateEstimate {
    pub value: f64,
    pub n_samples: usize,
    pub std_err: f64,
}

impl ErrorRateEstimate {
    /// Mean of `failures` indicator hits out of `n`.
    pub fn from_indicators(failures: usize, n: usize) -> Self {
        let v = failures as f64 / n as f64;
        Self {
            value: v,
            n_samples: n,
            std_err: (v * (1.0 - v) / n as f64).sqrt(),
        }
    }

    /// `1 - mean(w)` with the empirical standard error of the weights.
    pub fn from_complement_weights(w: &[f64]) -> Self {
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = if w.len() > 1 {
            w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            value: 1.0 - mean,
            n_samples: w.len(),
            std_err: (var / n).sqrt(),
        }
    }
}

/// Reconstruction term used for training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reconstruction {
    /// `sum_i log pi_{x_i}`.
    LogLikelihood,
    /// `sum_i sum_{s != x_i} log sigma_tau(pi_{x_i} - pi_s)`.
    Relaxed(Temperature),
}

/// Graph handles of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ElboGraph {
    /// Quantity to minimize.
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub terms: ElboTerms,
}

fn block_mask(tape: &mut Tape, b: &ScoreBlock) -> Result<Option<Var>> {
    match &b.mask {
        None => Ok(None),
        Some(m) => Ok(Some(tape.constant(Tensor::new(vec![m.len(), 1], m.clone())?))),
    }
}

/// Summed log-likelihood of the targets over all blocks.
pub fn log_likelihood(tape: &mut Tape, blocks: &[ScoreBlock]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for b in blocks {
        let lp = tape.log_softmax(b.logits);
        let mut g = tape.gather_cols(lp, &b.targets);
        if let Some(m) = block_mask(tape, b)? {
            g = tape.mul(g, m);
        }
        let s = tape.sum(g);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s),
        });
    }
    acc.ok_or_else(|| Error::Shape("no score blocks".into()))
}

/// Summed relaxed indicator `log sigma_tau(pi_target - pi_s)` over every
/// non-target class of every unmasked row.
pub fn relaxed_likelihood(tape: &mut Tape, blocks: &[ScoreBlock], tau: Temperature) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for b in blocks {
        let p = tape.softmax(b.logits);
        let (rows, cols) = (tape.value(p).rows(), tape.value(p).cols());
        let pt = tape.gather_cols(p, &b.targets);
        let d = tape.sub(pt, p);
        let ls = tape.log_sigma_tau(d, tau);
        let mut m = vec![1.0; rows * cols];
        for (r, &t) in b.targets.iter().enumerate() {
            let keep = b.mask.as_ref().map_or(1.0, |m| m[r]);
            for c in 0..cols {
                m[r * cols + c] = if c == t { 0.0 } else { keep };
            }
        }
        let m = tape.constant(Tensor::new(vec![rows, cols], m)?);
        let g = tape.mul(ls, m);
        let s = tape.sum(g);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s),
        });
    }
    acc.ok_or_else(|| Error::Shape("no score blocks".into()))
}

/// One-sample ELBO of a batch under `mode`. Terms are batch means. With
/// `beta == 0` the KL term is reported but kept out of the loss.
#[allow(clippy::too_many_arguments)]
pub fn elbo_graph(
    tape: &mut Tape,
    model: &Model,
    vars: &ParamVars,
    inputs: &[Input],
    buffer: &mut SampleBuffer,
    mode: Reconstruction,
    beta: f64,
) -> Result<ElboGraph> {
    let n = inputs.len() as f64;
    let enc = model.encode(tape, vars, inputs)?;
    let z = model.sample_latents(tape, enc, buffer)?;
    let blocks = model.decode_blocks(tape, vars, z, inputs)?;
    let rec = match mode {
        Reconstruction::LogLikelihood => log_likelihood(tape, &blocks)?,
        Reconstruction::Relaxed(tau) => relaxed_likelihood(tape, &blocks, tau)?,
    };
    let rec = tape.scale(rec, 1.0 / n);
    let kl = tape.kl(enc.mu, enc.sigma, model.kernel(), model.prior())?;
    let kl = tape.sum(kl);
    let kl = tape.scale(kl, 1.0 / n);
    let loss = if beta == 0.0 {
        tape.neg(rec)
    } else {
        let bk = tape.scale(kl, beta);
        tape.sub(bk, rec)
    };
    let terms = ElboTerms::new(tape.value(rec).item(), tape.value(kl).item(), beta);
    Ok(ElboGraph {
        loss,
        reconstruction: rec,
        kl,
        terms,
    })
}

/// Standard single-sample ELBO.
pub fn standard_elbo(
    tape: &mut Tape,
    model: &Model,
    vars: &ParamVars,
    inputs: &[Input],
    buffer: &mut SampleBuffer,
    beta: f64,
) -> Result<ElboGraph> {
    elbo_graph(tape, model, vars, inputs, buffer, Reconstruction::LogLikelihood, beta)
}

/// ELBO with the temperature-relaxed indicator reconstruction.
pub fn relaxed_elbo(
    tape: &mut Tape,
    model: &Model,
    vars: &ParamVars,
    inputs: &[Input],
    buffer: &mut SampleBuffer,
    beta: f64,
    tau: Temperature,
) -> Result<ElboGraph> {
    elbo_graph(tape, model, vars, inputs, buffer, Reconstruction::Relaxed(tau), beta)
}

/// Binds parameters so that only the decoder receives gradients.
pub fn bind_decoder_only(model: &Model, tape: &mut Tape) -> ParamVars {
    model.params().bind(tape, |n| !Model::is_encoder_param(n))
}

/// Negative batch-mean log-likelihood with `z` drawn from the encoder's
/// proposal. Bind with [`bind_decoder_only`] to keep the encoder fixed.
/// Returns `(loss, mean reconstruction)`.
pub fn finetune_loss(
    tape: &mut Tape,
    model: &Model,
    vars: &ParamVars,
    inputs: &[Input],
    buffer: &mut SampleBuffer,
) -> Result<(Var, f64)> {
    let enc = model.encode(tape, vars, inputs)?;
    let z = model.sample_latents(tape, enc, buffer)?;
    let blocks = model.decode_blocks(tape, vars, z, inputs)?;
    let rec = log_likelihood(tape, &blocks)?;
    let rec = tape.scale(rec, 1.0 / inputs.len() as f64);
    let r = tape.value(rec).item();
    Ok((tape.neg(rec), r))
}

/// Indicator reconstruction diagnostic: the number of elements whose sampled
/// latent fails to decode back to them, and whether the indicator
/// log-likelihood is finite (no failures).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndicatorRecon {
    pub violations: usize,
    pub finite: bool,
}

pub fn indicator_recon(model: &Model, inputs: &[Input], buffer: &mut SampleBuffer) -> Result<IndicatorRecon> {
    let props = model.proposals(inputs)?;
    let zs = props
        .iter()
        .map(|p| reparameterize(p, &buffer.sample_eps(p.dim())))
        .collect::<Result<Vec<_>>>()?;
    let dec = model.decode_latents(&zs)?;
    let violations = dec
        .iter()
        .zip(inputs)
        .filter(|(d, x)| d.ids() != x.tokens())
        .count();
    Ok(IndicatorRecon {
        violations,
        finite: violations == 0,
    })
}

/// Seed stream for the data draw and kernel noise of an estimator.
fn estimator_rngs(seed: u64) -> (ChaCha8Rng, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (rng, seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Sequence-wise error rate of `decode` under `x ~ dataset`, `z ~ q(z|x)`,
/// for arbitrary proposal and decoder functions.
pub fn error_rate_with<P, D>(
    dataset: &Dataset,
    kernel: Kernel,
    n_samples: usize,
    seed: u64,
    mut proposals: P,
    mut decode: D,
) -> Result<ErrorRateEstimate>
where
    P: FnMut(&[Input]) -> Result<Vec<ProposalParams>>,
    D: FnMut(&[Vec<f64>]) -> Result<Vec<Sequence>>,
{
    if n_samples == 0 {
        return Err(Error::Config("error rate needs at least one sample".into()));
    }
    let (mut rng, noise_seed) = estimator_rngs(seed);
    let idx = dataset.draw(&mut rng, n_samples);
    let unique: Vec<usize> = idx.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let props = proposals(&dataset.inputs(&unique))?;
    if props.len() != unique.len() {
        return Err(Error::Shape("one proposal per input expected".into()));
    }
    let lookup: BTreeMap<usize, &ProposalParams> = unique.iter().copied().zip(&props).collect();
    let mut buffer = SampleBuffer::new(kernel, noise_seed);
    let mut failures = 0;
    for chunk in idx.chunks(4096) {
        let zs = chunk
            .iter()
            .map(|i| {
                let p = lookup[i];
                reparameterize(p, &buffer.sample_eps(p.dim()))
            })
            .collect::<Result<Vec<_>>>()?;
        let dec = decode(&zs)?;
        failures += dec
            .iter()
            .zip(chunk)
            .filter(|(d, &i)| d.ids() != dataset.input(i).tokens())
            .count();
    }
    Ok(ErrorRateEstimate::from_indicators(failures, n_samples))
}

/// Error rate of the model's own greedy decoder.
pub fn error_rate(model: &Model, dataset: &Dataset, n_samples: usize, seed: u64) -> Result<ErrorRateEstimate> {
    error_rate_with(
        dataset,
        model.kernel(),
        n_samples,
        seed,
        |x| model.proposals(x),
        |z| model.decode_latents(z),
    )
}

/// Result of the brute-force decoder: the dataset index maximizing
/// `p(x) q(z|x)`, its score, and whether every score was zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimalDecode {
    pub index: usize,
    pub score: f64,
    pub zero_density: bool,
}

fn require_enumerable(dataset: &Dataset) -> Result<&[f64]> {
    dataset
        .probabilities()
        .ok_or_else(|| Error::Dataset("dataset not enumerable".into()))
}

/// `argmax_x p(x) q(z|x)` over an enumerable dataset given every element's
/// proposal; exact ties go to the lexicographically smallest token string.
pub fn optimal_decoder(
    dataset: &Dataset,
    proposals: &[ProposalParams],
    kernel: Kernel,
    z: &[f64],
) -> Result<OptimalDecode> {
    let probs = require_enumerable(dataset)?;
    if proposals.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} proposals for {} dataset elements",
            proposals.len(),
            probs.len()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (p, q)) in probs.iter().zip(proposals).enumerate() {
        let s = p * q.density(kernel, z);
        best = match best {
            None => Some((i, s)),
            Some((_, t)) if s > t => Some((i, s)),
            Some((j, t)) if s == t && dataset.input(i).tokens() < dataset.input(j).tokens() => Some((i, s)),
            keep => keep,
        };
    }
    let (index, score) = best.expect("non-empty dataset");
    Ok(OptimalDecode {
        index,
        score,
        zero_density: score == 0.0,
    })
}

/// Importance-sampled `1 - E_{z ~ p(z)}[p(x*) q(z|x*) / p(z)]` where `x*` is
/// the optimal decoder output. The standard error is the empirical one of
/// the importance weights.
pub fn optimal_error_rate(
    dataset: &Dataset,
    proposals: &[ProposalParams],
    kernel: Kernel,
    prior: Prior,
    n_prior_samples: usize,
    seed: u64,
) -> Result<ErrorRateEstimate> {
    require_enumerable(dataset)?;
    if n_prior_samples == 0 {
        return Err(Error::Config("need at least one prior sample".into()));
    }
    let dim = proposals.first().map_or(0, ProposalParams::dim);
    let (mut rng, _) = estimator_rngs(seed);
    let w = (0..n_prior_samples)
        .map(|_| {
            let z = prior.sample(&mut rng, dim);
            let best = optimal_decoder(dataset, proposals, kernel, &z)?;
            Ok(best.score / prior.joint_density(&z))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorRateEstimate::from_complement_weights(&w))
}

/// Optimal error rate of the model's encoder.
pub fn model_optimal_error_rate(
    model: &Model,
    dataset: &Dataset,
    n_prior_samples: usize,
    seed: u64,
) -> Result<ErrorRateEstimate> {
    require_enumerable(dataset)?;
    let props = model.proposals(&dataset.all_inputs())?;
    optimal_error_rate(dataset, &props, model.kernel(), model.prior(), n_prior_samples, seed)
}

/// Fraction of teacher-forced positions whose highest score is the target,
/// decoding from each input's proposal mean.
pub fn teacher_forced_accuracy(model: &Model, inputs: &[Input]) -> Result<f64> {
    let props = model.proposals(inputs)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for chunk in (0..inputs.len()).collect::<Vec<_>>().chunks(1024) {
        let mut tape = Tape::new();
        let vars = model.params().bind(&mut tape, |_| false);
        let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| props[i].mu.clone()).collect();
        let z = tape.constant(Tensor::from_rows(&rows)?);
        let ins: Vec<Input> = chunk.iter().map(|&i| inputs[i]).collect();
        for b in model.decode_blocks(&mut tape, &vars, z, &ins)? {
            let l = tape.value(b.logits);
            for (r, &t) in b.targets.iter().enumerate() {
                if b.mask.as_ref().is_none_or(|m| m[r] > 0.0) {
                    total += 1;
                    hit += (argmax_strict(l.row(r)) == Some(t)) as usize;
                }
            }
        }
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;
    use crate::relaxation::log_sigma_tau;
    use crate::seqmodel::{Architecture, ModelSpec, Vocab};

    fn tiny(kernel: Kernel, prior: Prior) -> Model {
        Model::new(
            ModelSpec {
                kernel,
                prior,
                latent_dim: 2,
                architecture: Architecture::Gru {
                    symbols: vec!["0".into(), "1".into()],
                    embed_dim: 3,
                    hidden: 4,
                    layers: 2,
                    max_len: 6,
                },
            },
            1,
        )
        .unwrap()
    }

    fn seqs(v: &Vocab, xs: &[&str]) -> Vec<Sequence> {
        xs.iter().map(|s| v.encode_chars(s, 6).unwrap()).collect()
    }

    /// Logits that put essentially all mass on the target.
    fn one_hot_block(tape: &mut Tape, targets: &[usize], classes: usize, mask: Option<Vec<f64>>) -> ScoreBlock {
        let mut l = vec![-800.0; targets.len() * classes];
        for (r, &t) in targets.iter().enumerate() {
            l[r * classes + t] = 0.0;
        }
        ScoreBlock {
            logits: tape.constant(Tensor::new(vec![targets.len(), classes], l).unwrap()),
            targets: targets.to_vec(),
            mask,
            owner: (0..targets.len()).collect(),
        }
    }

    #[test]
    fn one_hot_truth_has_zero_log_likelihood() {
        let mut tape = Tape::new();
        let b = one_hot_block(&mut tape, &[0, 1, 3], 6, None);
        let r = log_likelihood(&mut tape, &[b]).unwrap();
        assert_eq!(tape.value(r).item(), 0.0);
    }

    #[test]
    fn relaxed_term_on_one_hot_truth() {
        let tau = Temperature::new(0.1).unwrap();
        let mut tape = Tape::new();
        // Seven positions (six bits plus eos) over six classes.
        let blocks: Vec<_> = (0..7).map(|_| one_hot_block(&mut tape, &[1], 6, None)).collect();
        let r = relaxed_likelihood(&mut tape, &blocks, tau).unwrap();
        let expect = 7.0 * 5.0 * log_sigma_tau(1.0, tau);
        assert!((tape.value(r).item() - expect).abs() < 1e-12);
        assert!(expect < 0.0 && expect > -0.02);
    }

    #[test]
    fn tied_pair_contributes_log_tau() {
        let tau = Temperature::new(0.1).unwrap();
        let mut tape = Tape::new();
        // Target 0 tied with class 1; class 2 far below.
        let l = Tensor::new(vec![1, 3], vec![0.0, 0.0, -800.0]).unwrap();
        let b = ScoreBlock {
            logits: tape.constant(l),
            targets: vec![0],
            mask: None,
            owner: vec![0],
        };
        let r = relaxed_likelihood(&mut tape, &[b], tau).unwrap();
        let expect = 0.1f64.ln() + log_sigma_tau(0.5, tau);
        assert!((tape.value(r).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn masked_rows_are_ignored() {
        let tau = Temperature::new(0.2).unwrap();
        let mut tape = Tape::new();
        let l = Tensor::new(vec![2, 2], vec![0.3, -0.1, 2.0, 0.5]).unwrap();
        let b = ScoreBlock {
            logits: tape.constant(l),
            targets: vec![1, 0],
            mask: Some(vec![1.0, 0.0]),
            owner: vec![0, 1],
        };
        let ll = log_likelihood(&mut tape, std::slice::from_ref(&b)).unwrap();
        let rl = relaxed_likelihood(&mut tape, &[b], tau).unwrap();
        let p1 = 1.0 / (1.0 + (0.4f64).exp());
        assert!((tape.value(ll).item() - p1.ln()).abs() < 1e-12);
        assert!((tape.value(rl).item() - log_sigma_tau(p1 - (1.0 - p1), tau)).abs() < 1e-12);
    }

    /// Independent evaluation with explicit loops over rows and classes.
    #[test]
    fn standard_elbo_matches_loop_oracle() {
        let m = tiny(Kernel::Triangular, Prior::UniformCube);
        let xs = seqs(m.vocab().unwrap(), &["110101", "01", ""]);
        let inputs: Vec<Input> = xs.iter().map(Input::Seq).collect();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let mut buf = SampleBuffer::new(Kernel::Triangular, 5);
        let g = standard_elbo(&mut tape, &m, &vars, &inputs, &mut buf, 0.3).unwrap();

        let mut buf = SampleBuffer::new(Kernel::Triangular, 5);
        let props = m.proposals(&inputs).unwrap();
        let eps = buf.sample_eps(6);
        let v = m.vocab().unwrap();
        let (mut rec, mut kl) = (0.0, 0.0);
        for (i, (x, p)) in xs.iter().zip(&props).enumerate() {
            let z = reparameterize(p, &eps[2 * i..2 * i + 2]).unwrap();
            let scores = m.decode_scores(&z, Input::Seq(x)).unwrap();
            let mut targets = x.ids().to_vec();
            targets.push(v.eos());
            for (r, &t) in targets.iter().enumerate() {
                rec += scores.at(r, t).ln();
            }
            kl += p.kl(m.kernel(), m.prior()).unwrap();
        }
        let (rec, kl) = (rec / 3.0, kl / 3.0);
        assert!((g.terms.reconstruction - rec).abs() < 1e-10, "{} vs {rec}", g.terms.reconstruction);
        assert!((g.terms.kl - kl).abs() < 1e-10);
        assert!((g.terms.total - (rec - 0.3 * kl)).abs() < 1e-10);
        assert!(g.terms.kl >= -1e-9);
        assert!((tape.value(g.loss).item() + g.terms.total).abs() < 1e-12);
    }

    #[test]
    fn prior_matching_proposal_has_zero_kl() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::zeros(&[2, 3]));
        let s = tape.constant(Tensor::ones(&[2, 3]));
        let kl = tape.kl(mu, s, Kernel::Uniform, Prior::UniformCube).unwrap();
        assert!(tape.value(kl).data().iter().all(|v| v.abs() < 1e-15));
        let kl = tape.kl(mu, s, Kernel::Gaussian, Prior::StdNormal).unwrap();
        assert!(tape.value(kl).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_beta_keeps_kl_out_of_the_gradient() {
        let m = tiny(Kernel::Uniform, Prior::UniformCube);
        let xs = seqs(m.vocab().unwrap(), &["1101", "0110"]);
        let inputs: Vec<Input> = xs.iter().map(Input::Seq).collect();
        let grad_of = |beta: f64, kl_only: bool| {
            let mut tape = Tape::new();
            let vars = m.bind(&mut tape);
            let mut buf = SampleBuffer::new(Kernel::Uniform, 9);
            let tau = Temperature::new(0.1).unwrap();
            let g = relaxed_elbo(&mut tape, &m, &vars, &inputs, &mut buf, beta, tau).unwrap();
            let target = if kl_only { g.kl } else { g.loss };
            let grads = tape.backward(target).unwrap();
            let id = m.params().find("enc.sigma.b").unwrap();
            grads.get(vars.get(id)).unwrap().clone()
        };
        let rec_only = grad_of(0.0, false);
        let with_kl = grad_of(1e-3, false);
        let kl = grad_of(0.0, true);
        for i in 0..2 {
            let expect = rec_only.data()[i] + 1e-3 * kl.data()[i];
            assert!((with_kl.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn finetune_loss_touches_decoder_only() {
        let m = tiny(Kernel::Uniform, Prior::UniformCube);
        let xs = seqs(m.vocab().unwrap(), &["1101", "0110", "1"]);
        let inputs: Vec<Input> = xs.iter().map(Input::Seq).collect();
        let mut tape = Tape::new();
        let vars = bind_decoder_only(&m, &mut tape);
        let mut buf = SampleBuffer::new(Kernel::Uniform, 2);
        let (loss, rec) = finetune_loss(&mut tape, &m, &vars, &inputs, &mut buf).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (id, v) in vars.iter() {
            let enc = Model::is_encoder_param(m.params().name(id));
            assert_eq!(grads.get(v).is_some(), !enc, "{}", m.params().name(id));
        }
        // Same draw through the standard objective gives the same term.
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let mut buf = SampleBuffer::new(Kernel::Uniform, 2);
        let g = standard_elbo(&mut tape, &m, &vars, &inputs, &mut buf, 1.0).unwrap();
        assert_eq!(g.terms.reconstruction, rec);
    }

    #[test]
    fn constant_decoder_error_rate_matches_enumeration() {
        let ds = Dataset::synthetic(&SyntheticSpec::default()).unwrap();
        let ones = Sequence::from_ids(vec![1; 6]);
        let props = |x: &[Input]| {
            Ok(x.iter()
                .map(|_| ProposalParams::new(vec![0.0], vec![1.0]).unwrap())
                .collect())
        };
        let est = error_rate_with(&ds, Kernel::Uniform, 20_000, 4, props, |z| {
            Ok(vec![ones.clone(); z.len()])
        })
        .unwrap();
        let exact = 1.0 - 0.8f64.powi(6);
        assert!((est.value - exact).abs() < 3.0 * est.std_err, "{est:?} vs {exact}");
        assert!((est.std_err - (est.value * (1.0 - est.value) / 20_000.0).sqrt()).abs() < 1e-15);
    }

    /// Each string gets a disjoint interval of `[-1, 1]` whose width is
    /// proportional to its probability.
    fn tiling(ds: &Dataset, width_scale: f64) -> Vec<ProposalParams> {
        let mut left = -1.0;
        ds.probabilities()
            .unwrap()
            .iter()
            .map(|&p| {
                let mu = left + p;
                left += 2.0 * p;
                ProposalParams::new(vec![mu], vec![p * width_scale]).unwrap()
            })
            .collect()
    }

    #[test]
    fn lookup_decoder_on_disjoint_proposals_never_fails() {
        let ds = Dataset::synthetic(&SyntheticSpec::default()).unwrap();
        let props = tiling(&ds, 0.9);
        let est = error_rate_with(
            &ds,
            Kernel::Uniform,
            5000,
            1,
            |x| {
                Ok(x.iter()
                    .map(|i| {
                        let k = (0..ds.len()).find(|&k| ds.input(k).tokens() == i.tokens()).unwrap();
                        props[k].clone()
                    })
                    .collect())
            },
            |zs| {
                zs.iter()
                    .map(|z| {
                        let best = optimal_decoder(&ds, &props, Kernel::Uniform, z)?;
                        Ok(Sequence::from_ids(ds.input(best.index).tokens()))
                    })
                    .collect()
            },
        )
        .unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn optimal_decoder_cases() {
        let ds = Dataset::synthetic(&SyntheticSpec::default()).unwrap();
        let props = tiling(&ds, 0.5);
        let inside = optimal_decoder(&ds, &props, Kernel::Uniform, &[props[37].mu[0]]).unwrap();
        assert_eq!(inside.index, 37);
        assert!(!inside.zero_density);
        // The gaps between half-width intervals have zero density everywhere.
        let gap = props[10].mu[0] + 0.75 * (2.0 * ds.probabilities().unwrap()[10]);
        let none = optimal_decoder(&ds, &props, Kernel::Uniform, &[gap]).unwrap();
        assert!(none.zero_density);
        assert_eq!(none.index, 0);
        let rng_ds = Dataset::sequences(vec![Sequence::from_ids(vec![1])]).unwrap();
        assert!(optimal_decoder(&rng_ds, &props[..1], Kernel::Uniform, &[0.0]).is_err());
    }

    #[test]
    fn tiled_proposals_have_zero_optimal_error() {
        let ds = Dataset::synthetic(&SyntheticSpec::default()).unwrap();
        let est = optimal_error_rate(&ds, &tiling(&ds, 1.0), Kernel::Uniform, Prior::UniformCube, 10_000, 3).unwrap();
        assert!(est.value.abs() < 1e-12, "{est:?}");
        // Disjoint half-width intervals: still zero in expectation, but the
        // weights are now 0 or 2 so the estimate carries noise.
        let est = optimal_error_rate(&ds, &tiling(&ds, 0.5), Kernel::Uniform, Prior::UniformCube, 10_000, 3).unwrap();
        assert!(est.std_err > 0.0 && est.value.abs() < 3.0 * est.std_err, "{est:?}");
        // Every proposal equal to the prior: the best string wins everywhere,
        // so the exact value is 1 - max p(x) = 1 - 0.8^6.
        let flat = vec![ProposalParams::new(vec![0.0], vec![1.0]).unwrap(); 64];
        let est = optimal_error_rate(&ds, &flat, Kernel::Uniform, Prior::UniformCube, 1000, 3).unwrap();
        assert!((est.value - (1.0 - 0.8f64.powi(6))).abs() < 1e-12);
    }

    #[test]
    fn optimal_rate_bounds_model_rate() {
        let m = tiny(Kernel::Uniform, Prior::UniformCube);
        let ds = Dataset::synthetic(&SyntheticSpec::default()).unwrap();
        let opt = model_optimal_error_rate(&m, &ds, 10_000, 0).unwrap();
        let own = error_rate(&m, &ds, 2_000, 0).unwrap();
        assert!(opt.value >= -3.0 * opt.std_err);
        let se = (opt.std_err.powi(2) + own.std_err.powi(2)).sqrt();
        assert!(opt.value <= own.value + 3.0 * se, "{opt:?} {own:?}");
        // Untrained decoder almost surely fails somewhere.
        let inputs = ds.all_inputs();
        let mut buf = SampleBuffer::new(Kernel::Uniform, 0);
        let ind = indicator_recon(&m, &inputs, &mut buf).unwrap();
        assert!(ind.violations > 0 && !ind.finite);
    }

    #[test]
    fn estimators_are_deterministic() {
        let m = tiny(Kernel::Epanechnikov, Prior::UniformCube);
        let ds = Dataset::synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(error_rate(&m, &ds, 500, 7).unwrap(), error_rate(&m, &ds, 500, 7).unwrap());
        let img = Dataset::images(vec![crate::data::BinarizedImage {
            pixels: vec![0; 4],
            label: 1,
        }])
        .unwrap();
        let err = model_optimal_error_rate(&m, &img, 10, 0).unwrap_err();
        assert!(err.to_string().contains("not enumerable"));
    }
}
