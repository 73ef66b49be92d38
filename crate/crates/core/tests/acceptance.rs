//! Acceptance report: one PASS / FAIL / BLOCKED line per criterion, followed
//! by supplementary property lines measured on the same runs.
//!
//! Environment:
//! - `DDVAE_ACCEPTANCE_ONLY=1,2,9` runs a subset of criteria.
//! - `DDVAE_MNIST_DIR=<dir>` enables the MNIST criterion.
//! - `DDVAE_ACCEPTANCE_STRICT=1` makes any FAIL exit non-zero.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ddvae::config::{load_data, DatasetSpec, ExperimentConfig};
use ddvae::data::{Dataset, SyntheticSpec};
use ddvae::diffengine::gradcheck::check;
use ddvae::diffengine::{relaxed_nodes_created, Gru, ParamStore, ParamVars, Tape, Tensor, Var};
use ddvae::kernels::{kl, Kernel, ProposalParams, Prior, SampleBuffer};
use ddvae::objective::{
    error_rate, model_optimal_error_rate, optimal_error_rate, relaxed_elbo, teacher_forced_accuracy,
    ErrorRateEstimate,
};
use ddvae::quadrature::{adaptive_simpson, kernel_moment, kl_quadrature};
use ddvae::relaxation::{delta_half, log_sigma_tau, sigma_tau, Temperature};
use ddvae::seqmodel::{Architecture, Input, Model, ModelSpec};
use ddvae::trainer::{knn_accuracy, read_metrics, seq_acc, MetricsRow, Phase, Trainer, METRICS_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Pass,
    Fail,
    Blocked,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Blocked => "BLOCKED",
        })
    }
}

struct Report {
    lines: Vec<Verdict>,
}

impl Report {
    fn line(&mut self, id: &str, title: &str, verdict: Verdict, detail: impl AsRef<str>) {
        println!("[{verdict}] {id} {title}: {}", detail.as_ref());
        self.lines.push(verdict);
    }
}

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/presets")
}

fn preset(name: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&presets().join(format!("{name}.json"))).expect("shipped preset");
    cfg.train.seed = seed;
    cfg
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("  .. {}", msg.as_ref());
}

// ---------------------------------------------------------------- 1

fn kl_correctness(r: &mut Report) {
    let t0 = Instant::now();
    let (mut worst, mut at, mut cases) = (0.0f64, String::new(), 0);
    for kernel in Kernel::ALL {
        for prior in [Prior::StdNormal, Prior::UniformCube] {
            let (mus, sigmas): (&[f64], &[f64]) = match prior {
                Prior::StdNormal => (&[-1.5, -0.7, 0.0, 0.4, 1.2], &[0.05, 0.3, 0.8, 1.5, 3.0]),
                Prior::UniformCube => (&[-0.4, -0.15, 0.0, 0.2, 0.35], &[0.05, 0.2, 0.35, 0.5, 0.55]),
            };
            let mut defined = false;
            for &mu in mus {
                for &sigma in sigmas {
                    let Ok(closed) = kl(kernel, prior, mu, sigma) else {
                        continue;
                    };
                    defined = true;
                    cases += 1;
                    let quad = kl_quadrature(kernel, prior, mu, sigma, 1e-12);
                    let d = (closed - quad).abs();
                    if d > worst {
                        worst = d;
                        at = format!("{kernel}/{prior} mu {mu} sigma {sigma}");
                    }
                }
            }
            if !defined {
                assert!(kernel == Kernel::Gaussian && prior == Prior::UniformCube);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    r.line(
        "1",
        "KL closed form vs quadrature",
        Verdict::from_bool(cases == 15 * 25 && worst < 1e-6 && secs < 10.0),
        format!("{cases} cases, max |diff| {worst:.2e} at {at}, {secs:.1} s"),
    );
}

// ---------------------------------------------------------------- 2

fn sampler_fidelity(r: &mut Report) {
    let t0 = Instant::now();
    let n = 1_000_000;
    let mut bad = Vec::new();
    let mut summary = Vec::new();
    for (i, kernel) in Kernel::ALL.into_iter().filter(|k| k.is_bounded()).enumerate() {
        let mut buf = SampleBuffer::new(kernel, 1000 + i as u64);
        let eps = buf.sample_eps(n);
        let (proposed, accepted) = buf.counts();
        let p = 1.0 / (2.0 * kernel.peak());
        let rate = accepted as f64 / proposed as f64;
        // The uniform kernel accepts every proposal, so its rate has no spread.
        let sd = (p * (1.0 - p) / proposed as f64).sqrt();
        let rate_z = if sd == 0.0 { if rate == p { 0.0 } else { f64::INFINITY } } else { (rate - p) / sd };
        let mean = eps.iter().sum::<f64>() / n as f64;
        let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = kernel_moment(kernel, 2, 1e-12);
        let mean_z = mean / (target / n as f64).sqrt();
        let var_rel = (var - target).abs() / target;
        if rate_z.abs() > 3.0 || mean_z.abs() > 4.0 || var_rel > 0.01 {
            bad.push(kernel.name());
        }
        summary.push(format!("{kernel} rate z {rate_z:+.2} mean z {mean_z:+.2} var rel {var_rel:.1e}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    r.line(
        "2",
        "rejection sampler fidelity",
        Verdict::from_bool(bad.is_empty() && secs < 30.0),
        format!("{}; failing {bad:?}, {secs:.1} s", summary.join("; ")),
    );
}

// ---------------------------------------------------------------- 3

fn relaxation_identities(r: &mut Report) {
    let mut notes = Vec::new();
    let mut ok = true;
    for tau in [0.5, 0.1, 0.01, 1e-3] {
        let t = Temperature::new(tau).unwrap();
        let at_zero = sigma_tau(0.0, t);
        let at_half = sigma_tau(delta_half(t), t);
        let x = -1e3 * tau;
        let got = log_sigma_tau(x, t);
        let asym = x / tau - ((1.0 - tau) / tau).ln();
        let rel = ((got - asym) / asym).abs();
        ok &= at_zero == tau && (at_half - 0.5).abs() < 1e-12 && got.is_finite() && rel < 1e-9;
        notes.push(format!(
            "tau {tau}: s(0)-tau {:.1e}, s(d_half)-0.5 {:.1e}, tail rel {rel:.1e}",
            at_zero - tau,
            at_half - 0.5
        ));
    }
    r.line("3", "relaxation identities", Verdict::from_bool(ok), notes.join("; "));
}

// ---------------------------------------------------------------- 4

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn weighted_sum(t: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = t.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(rand_t(&mut rng, &shape, -1.0, 1.0));
    let p = t.mul(x, w);
    t.sum(p)
}

type Unary = fn(&mut Tape, Var) -> Var;
type Binary = fn(&mut Tape, Var, Var) -> Var;

/// Worst relative error of every primitive, keyed by name.
fn primitive_errors() -> Vec<(String, f64)> {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = rand_t(&mut rng, &[3, 4], -2.0, 2.0);
    let pos = rand_t(&mut rng, &[3, 4], 0.2, 3.0);
    let mut kinked = rand_t(&mut rng, &[3, 4], -1.0, 1.0);
    for v in kinked.data_mut() {
        if v.abs() < 0.05 {
            *v = 0.3;
        }
    }
    let mut out = Vec::new();
    let mut one = |name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Tape, &[Var]) -> Var| {
        let r = check(&inputs, f, h);
        out.push((name.to_string(), r.max_rel_err));
    };
    let unary: [(&str, Unary, &Tensor); 16] = [
        ("tanh", |t, v| t.tanh(v), &x),
        ("sigmoid", |t, v| t.sigmoid(v), &x),
        ("leaky_relu", |t, v| t.leaky_relu(v), &x),
        ("exp", |t, v| t.exp(v), &x),
        ("log", |t, v| t.log(v), &pos),
        ("neg", |t, v| t.neg(v), &x),
        ("affine", |t, v| t.affine(v, -1.5, 0.25), &x),
        ("scale", |t, v| t.scale(v, 0.7), &x),
        ("softplus", |t, v| t.softplus(v), &x),
        ("floor_min", |t, v| t.floor_min(v, 0.0), &kinked),
        ("softmax", |t, v| t.softmax(v), &x),
        ("log_softmax", |t, v| t.log_softmax(v), &x),
        ("sum_last", |t, v| t.sum_last(v), &x),
        ("slice", |t, v| t.slice(v, 1, 3), &x),
        ("gather_cols", |t, v| t.gather_cols(v, &[3, 0, 3]), &x),
        ("gather_rows", |t, v| t.gather_rows(v, &[2, 0, 2, 1]), &x),
    ];
    for (i, (name, op, input)) in unary.into_iter().enumerate() {
        one(name, vec![input.clone()], &|t, v| {
            let y = op(t, v[0]);
            weighted_sum(t, y, 100 + i as u64)
        });
    }
    one("reshape", vec![x.clone()], &|t, v| {
        let y = t.reshape(v[0], &[6, 2]);
        let y = t.softmax(y);
        weighted_sum(t, y, 120)
    });
    one("sum", vec![x.clone()], &|t, v| t.sum(v[0]));
    one("mean", vec![x.clone()], &|t, v| t.mean(v[0]));
    let b = rand_t(&mut rng, &[3, 2], -1.0, 1.0);
    one("concat", vec![x.clone(), b], &|t, v| {
        let y = t.concat(&[v[0], v[1], v[0]]);
        weighted_sum(t, y, 121)
    });
    let binary: [(&str, Binary); 3] = [("add", |t, a, b| t.add(a, b)), ("sub", |t, a, b| t.sub(a, b)), ("mul", |t, a, b| t.mul(a, b))];
    for (name, op) in binary {
        for shape in [&[3usize, 4][..], &[4], &[3, 1], &[]] {
            let b = rand_t(&mut rng, shape, -1.0, 1.0);
            one(&format!("{name} {shape:?}"), vec![x.clone(), b], &|t, v| {
                let y = op(t, v[0], v[1]);
                weighted_sum(t, y, 122)
            });
        }
    }
    let m = rand_t(&mut rng, &[4, 5], -1.0, 1.0);
    one("matmul", vec![x.clone(), m], &|t, v| {
        let y = t.matmul(v[0], v[1]);
        weighted_sum(t, y, 123)
    });
    for tau in [0.5, 0.1, 0.01] {
        // Inputs on the scale of tau, where the function is not flat.
        let xs = rand_t(&mut rng, &[3, 3], -5.0 * tau, 5.0 * tau);
        let tau = Temperature::new(tau).unwrap();
        one(&format!("log_sigma_tau {}", tau.get()), vec![xs], &|t, v| {
            let y = t.log_sigma_tau(v[0], tau);
            weighted_sum(t, y, 124)
        });
    }
    out
}

fn kl_node_errors() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mu = rand_t(&mut rng, &[2, 3], -0.3, 0.3);
    let sigma = rand_t(&mut rng, &[2, 3], 0.1, 0.6);
    let mut out = Vec::new();
    for kernel in Kernel::ALL {
        for prior in [Prior::StdNormal, Prior::UniformCube] {
            if kernel == Kernel::Gaussian && prior == Prior::UniformCube {
                continue;
            }
            let r = check(
                &[mu.clone(), sigma.clone()],
                |t, v| {
                    let y = t.kl(v[0], v[1], kernel, prior).unwrap();
                    weighted_sum(t, y, 125)
                },
                1e-5,
            );
            out.push((format!("kl {kernel}/{prior}"), r.max_rel_err));
        }
    }
    out
}

fn gru_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "gru", 3, 4, 2, &mut rng);
    let params: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    let xs: Vec<Tensor> = (0..6).map(|_| rand_t(&mut rng, &[2, 3], -1.0, 1.0)).collect();
    let h0 = rand_t(&mut rng, &[2, 4], -0.5, 0.5);
    check(
        &params,
        |t, v| {
            let vars = ParamVars::from(v.to_vec());
            let mut hs = vec![t.constant(h0.clone()); 2];
            for x in &xs {
                let xv = t.constant(x.clone());
                hs = gru.step(t, &vars, xv, &hs);
            }
            let both = t.concat(&hs);
            weighted_sum(t, both, 126)
        },
        1e-5,
    )
    .max_rel_err
}

fn relaxed_elbo_error() -> f64 {
    let spec = ModelSpec {
        kernel: Kernel::Uniform,
        prior: Prior::UniformCube,
        latent_dim: 2,
        architecture: Architecture::Gru {
            symbols: vec!["0".into(), "1".into()],
            embed_dim: 3,
            hidden: 4,
            layers: 2,
            max_len: 6,
        },
    };
    let m = Model::new(spec, 3).unwrap();
    let v = m.vocab().unwrap();
    let xs: Vec<_> = ["110101", "0010", "111111"].iter().map(|s| v.encode_chars(s, 6).unwrap()).collect();
    let inputs: Vec<Input> = xs.iter().map(Input::Seq).collect();
    let tau = Temperature::new(0.1).unwrap();
    let params: Vec<Tensor> = m.params().iter().map(|(_, t)| t.clone()).collect();
    check(
        &params,
        |t, vars| {
            let vars = ParamVars::from(vars.to_vec());
            let mut buf = SampleBuffer::new(m.kernel(), 11);
            relaxed_elbo(t, &m, &vars, &inputs, &mut buf, 0.3, tau).unwrap().loss
        },
        1e-3,
    )
    .max_rel_err
}

fn gradient_integrity(r: &mut Report) {
    let t0 = Instant::now();
    let worst = |v: &[(String, f64)]| {
        v.iter()
            .cloned()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or_default()
    };
    let prims = primitive_errors();
    let kls = kl_node_errors();
    let (pn, pe) = worst(&prims);
    let (kn, ke) = worst(&kls);
    let ge = gru_error();
    let ee = relaxed_elbo_error();
    let secs = t0.elapsed().as_secs_f64();
    let ok = pe < 1e-5 && ke < 1e-4 && ge < 1e-4 && ee < 1e-4 && secs < 60.0;
    r.line(
        "4",
        "gradient integrity",
        Verdict::from_bool(ok),
        format!(
            "{} primitive checks worst {pe:.1e} ({pn}); {} kl checks worst {ke:.1e} ({kn}); gru bptt {ge:.1e}; relaxed elbo {ee:.1e}; {secs:.1} s",
            prims.len(),
            kls.len()
        ),
    );
}

// ---------------------------------------------------------------- 5, 6, 7

struct SyntheticRun {
    seed: u64,
    untrained_delta_opt: ErrorRateEstimate,
    pre_finetune_acc: f64,
    /// (teacher-forced accuracy, sequence accuracy) before fine-tuning and
    /// after each fine-tune epoch.
    finetune_track: Vec<(f64, f64)>,
    final_acc: f64,
    delta_opt: ErrorRateEstimate,
    delta_hat: ErrorRateEstimate,
    log: Vec<MetricsRow>,
    secs: f64,
}

fn full_accuracy(model: &Model, ds: &Dataset) -> (f64, f64) {
    let inputs = ds.all_inputs();
    let tf = teacher_forced_accuracy(model, &inputs).unwrap();
    (tf, seq_acc(model, ds, ds.len()).unwrap())
}

fn synthetic_run(name: &str, seed: u64) -> SyntheticRun {
    let t0 = Instant::now();
    let cfg = preset(name, seed);
    let ds = load_data(&cfg.dataset).unwrap().train;
    let model = Model::new(cfg.model.clone(), seed).unwrap();
    let untrained_delta_opt = if ds.is_enumerable() && model.kernel().is_bounded() {
        model_optimal_error_rate(&model, &ds, 10_000, seed).unwrap()
    } else {
        ErrorRateEstimate::from_indicators(0, 1)
    };
    let train = cfg.train.clone();
    let mut trainer = Trainer::new(train.clone(), model).unwrap();
    let mut done = 0;
    while done < train.epochs {
        done = (done + 10).min(train.epochs);
        trainer.run_until(&ds, None, done).unwrap();
        let last = trainer.log().last().unwrap();
        progress(format!(
            "{name} seed {seed}: epoch {done}/{} elbo {:.4} seq_acc {:?} ({:.0} s)",
            train.epochs,
            last.elbo_total,
            last.seq_acc,
            t0.elapsed().as_secs_f64()
        ));
    }
    let pre = full_accuracy(trainer.model(), &ds);
    let mut finetune_track = vec![pre];
    for e in 1..=train.finetune_epochs {
        trainer.run_until(&ds, None, train.epochs + e).unwrap();
        finetune_track.push(full_accuracy(trainer.model(), &ds));
    }
    let model = trainer.model();
    let final_acc = seq_acc(model, &ds, ds.len()).unwrap();
    let delta_opt = if model.kernel().is_bounded() {
        model_optimal_error_rate(model, &ds, 10_000, seed + 1).unwrap()
    } else {
        ErrorRateEstimate::from_indicators(0, 1)
    };
    let delta_hat = error_rate(model, &ds, 10_000, seed + 1).unwrap();
    SyntheticRun {
        seed,
        untrained_delta_opt,
        pre_finetune_acc: pre.1,
        finetune_track,
        final_acc,
        delta_opt,
        delta_hat,
        log: trainer.log().to_vec(),
        secs: t0.elapsed().as_secs_f64(),
    }
}

fn synthetic_experiment(r: &mut Report, runs: &[SyntheticRun]) {
    let mut ok = true;
    let mut parts = Vec::new();
    for run in runs {
        let pass = run.final_acc >= 0.99 && run.delta_opt.value < 0.02;
        ok &= pass;
        parts.push(format!(
            "seed {}: seq_acc {:.4} (before fine-tune {:.4}), delta_opt_hat {:.4} +- {:.4}, {:.0} s{}",
            run.seed,
            run.final_acc,
            run.pre_finetune_acc,
            run.delta_opt.value,
            run.delta_opt.std_err,
            run.secs,
            if run.secs > 600.0 { " (over the 600 s target)" } else { "" }
        ));
    }
    r.line("5", "synthetic DD-VAE uniform/uniform", Verdict::from_bool(ok), parts.join("; "));
}

fn theorem_trend(r: &mut Report, run: &SyntheticRun) {
    let points: Vec<(usize, f64)> = run
        .log
        .iter()
        .filter(|row| row.phase == Phase::Train)
        .filter_map(|row| Some((row.epoch, row.delta_hat? * (1.0 / row.tau?).ln())))
        .collect();
    if points.len() < 4 {
        r.line("6", "error-rate trend", Verdict::Fail, format!("only {} recorded points", points.len()));
        return;
    }
    let head = points[..3].iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let (at, peak) = points[3..]
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    r.line(
        "6",
        "error-rate trend",
        Verdict::from_bool(peak < 10.0 * head),
        format!(
            "seed {}: max of delta_hat*log(1/tau) after the first three points {peak:.4} (epoch {at}) vs bound 10 x {head:.4}; last {:.4}",
            run.seed,
            points.last().unwrap().1
        ),
    );
}

fn baseline_parity(r: &mut Report) {
    let before = relaxed_nodes_created();
    let run = synthetic_run("synthetic_vae_gaussian", 0);
    let relaxed = relaxed_nodes_created() - before;
    r.line(
        "7",
        "Gaussian beta-VAE baseline",
        Verdict::from_bool(run.final_acc >= 0.95 && relaxed == 0),
        format!(
            "seed 0: seq_acc {:.4} (before fine-tune {:.4}), relaxed nodes built {relaxed}, delta_hat {:.4}, {:.0} s",
            run.final_acc, run.pre_finetune_acc, run.delta_hat.value, run.secs
        ),
    );
}

fn synthetic_properties(r: &mut Report, runs: &[SyntheticRun]) {
    let mut tf_ok = true;
    let mut seq_ok = true;
    let mut tf_notes = Vec::new();
    for run in runs {
        let t = &run.finetune_track;
        tf_ok &= t.windows(2).all(|w| w[1].0 >= w[0].0 - 0.01);
        seq_ok &= t.windows(2).all(|w| w[1].1 >= w[0].1 - 0.01);
        let tf: Vec<String> = t.iter().map(|p| format!("{:.3}", p.0)).collect();
        let sq: Vec<String> = t.iter().map(|p| format!("{:.3}", p.1)).collect();
        tf_notes.push(format!("seed {}: tf [{}] seq [{}]", run.seed, tf.join(" "), sq.join(" ")));
    }
    r.line(
        "P1",
        "fine-tune epochs keep teacher-forced accuracy (+-1%)",
        Verdict::from_bool(tf_ok),
        tf_notes.join("; "),
    );
    r.line(
        "P2",
        "fine-tune epochs keep sequence accuracy (+-1%)",
        Verdict::from_bool(seq_ok),
        "per-epoch values as above",
    );

    let mut ok = true;
    let mut notes = Vec::new();
    for run in runs {
        let e0 = run.log[0].elbo_total;
        let e2 = run.log[2].elbo_total;
        ok &= e2 > e0;
        notes.push(format!("seed {}: elbo {e0:.4} -> {e2:.4}", run.seed));
    }
    r.line("P3", "loss falls over the pretrain phase", Verdict::from_bool(ok), notes.join("; "));

    let mut ok = true;
    let mut notes = Vec::new();
    for run in runs {
        ok &= run.delta_opt.value < run.untrained_delta_opt.value;
        notes.push(format!(
            "seed {}: {:.4} untrained -> {:.4} trained",
            run.seed, run.untrained_delta_opt.value, run.delta_opt.value
        ));
    }
    r.line("P4", "training lowers the optimal error rate", Verdict::from_bool(ok), notes.join("; "));

    let mut ok = true;
    let mut notes = Vec::new();
    for run in runs {
        let se = (run.delta_opt.std_err.powi(2) + run.delta_hat.std_err.powi(2)).sqrt();
        ok &= run.delta_opt.value <= run.delta_hat.value + 3.0 * se;
        notes.push(format!(
            "seed {}: delta_opt_hat {:.4} vs delta_hat {:.4} +- {:.4}",
            run.seed, run.delta_opt.value, run.delta_hat.value, se
        ));
    }
    r.line("P5", "optimal error rate below decoder error rate", Verdict::from_bool(ok), notes.join("; "));
}

// ---------------------------------------------------------------- 8

fn mnist_latents(name: &str, dir: &Path) -> Result<(f64, f64), String> {
    let mut cfg = preset(name, 0);
    if let DatasetSpec::Mnist(m) = &mut cfg.dataset {
        m.dir = dir.to_path_buf();
    }
    let data = load_data(&cfg.dataset).map_err(|e| e.to_string())?;
    let test = data.test.ok_or("no test split")?;
    let model = Model::new(cfg.model.clone(), 0).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(cfg.train.clone(), model).map_err(|e| e.to_string())?;
    trainer.run(&data.train, None).map_err(|e| e.to_string())?;
    let final_loss = trainer.log().last().map_or(f64::NAN, |row| row.elbo_total);
    let labeled = |ds: &Dataset| -> Vec<(Vec<f64>, u8)> {
        let props = trainer.model().proposals(&ds.all_inputs()).unwrap();
        props.into_iter().enumerate().map(|(i, p)| (p.mu, ds.label(i).unwrap())).collect()
    };
    let acc = knn_accuracy(&labeled(&data.train), &labeled(&test), 5).map_err(|e| e.to_string())?;
    Ok((final_loss, acc))
}

fn mnist_trend(r: &mut Report) {
    let Some(dir) = std::env::var_os("DDVAE_MNIST_DIR") else {
        r.line(
            "8",
            "MNIST kNN on 2D latents",
            Verdict::Blocked,
            "no MNIST files available offline; set DDVAE_MNIST_DIR to the IDX directory to run",
        );
        return;
    };
    let dir = PathBuf::from(dir);
    let t0 = Instant::now();
    let result = mnist_latents("mnist_vae", &dir).and_then(|v| Ok((v, mnist_latents("mnist_ddvae", &dir)?)));
    match result {
        Err(e) => r.line("8", "MNIST kNN on 2D latents", Verdict::Fail, e),
        Ok(((vl, va), (dl, da))) => {
            let ok = vl.is_finite() && dl.is_finite() && da >= va - 0.01 && va >= 0.75 && da >= 0.75;
            r.line(
                "8",
                "MNIST kNN on 2D latents",
                Verdict::from_bool(ok),
                format!(
                    "VAE elbo {vl:.3} knn {va:.4}; DD-VAE elbo {dl:.3} knn {da:.4}; {:.0} s",
                    t0.elapsed().as_secs_f64()
                ),
            );
        }
    }
}

// ---------------------------------------------------------------- 9

fn determinism(r: &mut Report) {
    let mut cfg = preset("synthetic_ddvae_uniform", 7);
    cfg.train.epochs = 6;
    cfg.train.epoch_size = Some(1024);
    cfg.train.finetune_epochs = 2;
    cfg.train.eval.every = 1;
    cfg.train.eval.delta_samples = 500;
    cfg.train.eval.delta_opt_samples = 500;
    cfg.train.beta_schedule.end_epoch = 6;
    if let Some(t) = &mut cfg.train.tau_schedule {
        t.end_epoch = 6;
    }
    let ds = load_data(&cfg.dataset).unwrap().train;
    let run = |dir: &Path| {
        let model = Model::new(cfg.model.clone(), cfg.train.seed).unwrap();
        let mut t = Trainer::new(cfg.train.clone(), model).unwrap();
        t.run(&ds, Some(dir)).unwrap();
        std::fs::read(dir.join(METRICS_FILE)).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run(a.path());
    let second = run(b.path());
    let rows = read_metrics(&a.path().join(METRICS_FILE)).unwrap().len();
    r.line(
        "9",
        "bit-identical reruns",
        Verdict::from_bool(first == second && rows == 8),
        format!("{rows} rows, {} bytes, identical: {}", first.len(), first == second),
    );
}

// ---------------------------------------------------------------- 10

/// Disjoint intervals of `[-1, 1]`, one per string, with width
/// `2 p(x) * width_scale`.
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

/// `1 - ∫ max_x p(x) q(z|x) dz` by quadrature between the interval
/// breakpoints.
fn exact_optimal_error(ds: &Dataset, props: &[ProposalParams], kernel: Kernel) -> f64 {
    let probs = ds.probabilities().unwrap();
    let mut cuts: Vec<f64> = props
        .iter()
        .flat_map(|p| [p.mu[0] - p.sigma[0], p.mu[0], p.mu[0] + p.sigma[0]])
        .chain([-1.0, 1.0])
        .map(|c| c.clamp(-1.0, 1.0))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let best = |z: f64| {
        probs
            .iter()
            .zip(props)
            .map(|(p, q)| p * q.density(kernel, &[z]))
            .fold(0.0, f64::max)
    };
    let mass: f64 = cuts.windows(2).map(|w| adaptive_simpson(best, w[0], w[1], 1e-13)).sum();
    1.0 - mass
}

fn oracle_equivalence(r: &mut Report) {
    let ds = Dataset::synthetic(&SyntheticSpec::default()).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (label, props, kernel) in [
        ("disjoint uniform, half width", tiling(&ds, 0.5), Kernel::Uniform),
        ("disjoint epanechnikov, full width", tiling(&ds, 1.0), Kernel::Epanechnikov),
        ("overlapping triangular", tiling(&ds, 1.8), Kernel::Triangular),
    ] {
        let exact = exact_optimal_error(&ds, &props, kernel);
        let est = optimal_error_rate(&ds, &props, kernel, Prior::UniformCube, 100_000, 9).unwrap();
        let bracket = (est.value - exact).abs() <= 3.0 * est.std_err.max(1e-12);
        ok &= bracket;
        notes.push(format!(
            "{label}: estimate {:.5} +- {:.5}, exact {exact:.5}",
            est.value, est.std_err
        ));
    }
    r.line("10", "optimal error rate vs exact value", Verdict::from_bool(ok), notes.join("; "));
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("DDVAE_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|p| p.trim().to_string()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let mut r = Report { lines: Vec::new() };

    if wanted("1") {
        kl_correctness(&mut r);
    }
    if wanted("2") {
        sampler_fidelity(&mut r);
    }
    if wanted("3") {
        relaxation_identities(&mut r);
    }
    if wanted("4") {
        gradient_integrity(&mut r);
    }
    if wanted("5") || wanted("6") {
        let runs: Vec<SyntheticRun> = [0, 1, 2]
            .into_iter()
            .map(|s| synthetic_run("synthetic_ddvae_uniform", s))
            .collect();
        if wanted("5") {
            synthetic_experiment(&mut r, &runs);
        }
        if wanted("6") {
            theorem_trend(&mut r, &runs[0]);
        }
        synthetic_properties(&mut r, &runs);
    }
    if wanted("7") {
        baseline_parity(&mut r);
    }
    if wanted("8") {
        mnist_trend(&mut r);
    }
    if wanted("9") {
        determinism(&mut r);
    }
    if wanted("10") {
        oracle_equivalence(&mut r);
    }

    let count = |v: Verdict| r.lines.iter().filter(|&&x| x == v).count();
    let (pass, fail, blocked) = (count(Verdict::Pass), count(Verdict::Fail), count(Verdict::Blocked));
    println!("acceptance: {pass} passed, {fail} failed, {blocked} blocked");
    if fail > 0 && std::env::var_os("DDVAE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
