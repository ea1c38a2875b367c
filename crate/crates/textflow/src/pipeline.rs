//! Subcommand implementations for the `textflow` binary.
//!
//! Every command reads a sectioned config, seeds all randomness from
//! `--seed`, and writes its artifacts plus the fully resolved config under
//! `--out`. Outputs carry no timestamps or machine state: equal (config,
//! seed) runs produce byte-identical artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{
    controller_from_checkpoint, controller_to_checkpoint, vae_from_checkpoint, vae_to_checkpoint,
    Checkpoint,
};
use crate::config::{Config, Resolver};
use crate::controller::{Controller, ControllerConfig};
use crate::corpus::{
    corrupt, generate_corpus, pad_to, Amount, CorruptionKind, CorruptionSpec, Grammar,
    TokenSequence, Vocabulary,
};
use crate::diagnostics::{curvature, kinetic_action, stiffness_series, StiffnessProbe};
use crate::flow::{train as train_flow_model, FlowExample, FlowTrainConfig};
use crate::likelihood::{
    elbo, generation_stats, unigram_ppl, DivergenceEstimator, FixedStepMethod,
};
use crate::mask::BoundaryMask;
use crate::plot::{emit_series, Series};
use crate::rng::Rng;
use crate::sampler::{
    sample, ControllerField, SolverConfig, Trajectory,
};
use crate::soclab::{
    perturbation_response, simulate_ar_impulsive, simulate_flow_ode, simulate_score_sde, ArConfig,
    DynamicsKind, ScoreSdeConfig, ToyDensity,
};
use crate::stats::{levenshtein, median};
use crate::vae::{
    estimate_lipschitz, train as train_vae_model, MapKind, Vae, VaeConfig, VaeTrainConfig,
};

pub const USAGE: &str = "usage: textflow <command> --config <file> --out <dir> [--seed <n>]\n\
commands:\n\
  train-vae   train the text autoencoder on a synthetic corpus\n\
  train-flow  train the latent velocity field against a frozen autoencoder\n\
  sample      unconditional generation with telemetry\n\
  infill      boundary-value generation with pinned prefix and suffix\n\
  correct     closed-loop correction of corrupted sequences\n\
  eval-ppl    ELBO perplexity against the unigram baseline\n\
  diagnose    curvature/stiffness/action instrumentation of the flow\n\
  soclab      comparative dynamics on analytic toy densities\n\
  plot        render a CSV as an SVG line plot\n";

/// Everything that can go wrong at the operator surface.
#[derive(Debug)]
pub enum PipelineError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineError::Usage(m) => write!(f, "{m}"),
            PipelineError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for PipelineError {
            fn from(e: $ty) -> Self { PipelineError::Runtime(e.to_string()) }
        }
    )*};
}
runtime_from!(
    crate::config::ConfigError,
    crate::corpus::CorpusError,
    crate::vae::VaeError,
    crate::controller::ControllerError,
    crate::flow::FlowError,
    crate::sampler::SamplerError,
    crate::likelihood::LikelihoodError,
    crate::diagnostics::DiagnosticsError,
    crate::checkpoint::CheckpointError,
    crate::plot::PlotError,
    std::io::Error
);

/// Entry point used by the binary: parses argv, dispatches, maps errors to
/// exit codes (0 success, 1 usage, 2 runtime failure).
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(PipelineError::Usage(msg)) => {
            eprintln!("{msg}");
            eprint!("{USAGE}");
            1
        }
        Err(PipelineError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

struct CliArgs {
    config: PathBuf,
    out: PathBuf,
    seed: u64,
}

fn parse_cli(args: &[String]) -> Result<CliArgs, PipelineError> {
    let mut config = None;
    let mut out = None;
    let mut seed = 0u64;
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut grab = || {
            it.next()
                .ok_or_else(|| PipelineError::Usage(format!("{arg} needs a value")))
        };
        match arg.as_str() {
            "--config" => config = Some(PathBuf::from(grab()?)),
            "--out" => out = Some(PathBuf::from(grab()?)),
            "--seed" => {
                seed = grab()?
                    .parse()
                    .map_err(|_| PipelineError::Usage("--seed must be an integer".into()))?
            }
            other => return Err(PipelineError::Usage(format!("unknown flag {other}"))),
        }
    }
    Ok(CliArgs {
        config: config.ok_or_else(|| PipelineError::Usage("--config is required".into()))?,
        out: out.ok_or_else(|| PipelineError::Usage("--out is required".into()))?,
        seed,
    })
}

fn dispatch(args: &[String]) -> Result<(), PipelineError> {
    let Some(command) = args.first() else {
        return Err(PipelineError::Usage("no command given".into()));
    };
    let cli = parse_cli(&args[1..])?;
    let cfg = Config::from_file(&cli.config)?;
    std::fs::create_dir_all(&cli.out)?;
    match command.as_str() {
        "train-vae" => cmd_train_vae(&cfg, &cli),
        "train-flow" => cmd_train_flow(&cfg, &cli),
        "sample" => cmd_sample(&cfg, &cli),
        "infill" => cmd_infill(&cfg, &cli),
        "correct" => cmd_correct(&cfg, &cli),
        "eval-ppl" => cmd_eval_ppl(&cfg, &cli),
        "diagnose" => cmd_diagnose(&cfg, &cli),
        "soclab" => cmd_soclab(&cfg, &cli),
        "plot" => cmd_plot(&cfg, &cli),
        other => Err(PipelineError::Usage(format!("unknown command {other:?}"))),
    }
}

// ── shared config fragments ──────────────────────────────────────────────

struct CorpusSpec {
    grammar: Grammar,
    vocab: Vocabulary,
    train: Vec<TokenSequence>,
    heldout: Vec<TokenSequence>,
}

fn read_corpus(r: &Resolver) -> Result<CorpusSpec, PipelineError> {
    let grammar = match r
        .variant(
            "corpus",
            "grammar",
            "arithmetic",
            &["arithmetic", "balanced_parens", "templated_sentences"],
        )?
        .as_str()
    {
        "balanced_parens" => Grammar::BalancedParens,
        "templated_sentences" => Grammar::TemplatedSentences,
        _ => Grammar::Arithmetic,
    };
    let n = r.usize("corpus", "n", 600)?;
    let max_len = r.usize("corpus", "max_len", 28)?;
    let holdout = r.float("corpus", "holdout", 0.1)?;
    // corpus seed lives in the config so every command sees the same data
    let corpus_seed = r.int("corpus", "seed", 1234)? as u64;
    let (vocab, seqs) = generate_corpus(grammar, n, max_len, corpus_seed)?;
    let n_train = ((1.0 - holdout) * seqs.len() as f64).round() as usize;
    let (train, heldout) = seqs.split_at(n_train.min(seqs.len()));
    Ok(CorpusSpec {
        grammar,
        vocab,
        train: train.to_vec(),
        heldout: heldout.to_vec(),
    })
}

fn read_solver(r: &Resolver, section: &str) -> Result<SolverConfig, PipelineError> {
    let method = r.variant(section, "solver", "euler", &["euler", "heun", "rk45"])?;
    let steps = r.usize(section, "steps", 32)?;
    let rtol = r.float(section, "rtol", 1e-5)?;
    let atol = r.float(section, "atol", 1e-7)?;
    Ok(match method.as_str() {
        "heun" => SolverConfig::heun(steps),
        "rk45" => SolverConfig::rk45(rtol, atol),
        _ => SolverConfig::euler(steps),
    })
}

fn read_corruption(r: &Resolver, section: &str, seed: u64) -> Result<CorruptionSpec, PipelineError> {
    let kind = match r
        .variant(
            section,
            "corrupt_kind",
            "lexical_substitution",
            &[
                "lexical_deletion",
                "lexical_substitution",
                "semantic_swap",
                "permutation",
            ],
        )?
        .as_str()
    {
        "lexical_deletion" => CorruptionKind::LexicalDeletion,
        "semantic_swap" => CorruptionKind::SemanticSwap,
        "permutation" => CorruptionKind::Permutation,
        _ => CorruptionKind::LexicalSubstitution,
    };
    let rate = r.float(section, "corrupt_rate", 0.15)?;
    Ok(CorruptionSpec::new(kind, Amount::Rate(rate), seed))
}

fn write_resolved(r: &Resolver, out: &Path) -> Result<(), PipelineError> {
    std::fs::write(out.join("config.resolved"), r.finish()?)?;
    Ok(())
}

fn load_vae(r: &Resolver) -> Result<Vae, PipelineError> {
    let path = r.require_str("inputs", "vae")?;
    // the [inputs] section is shared across pipeline stages; a flow path may
    // be present even for commands that only need the autoencoder
    let _ = r.str("inputs", "flow", "");
    Ok(vae_from_checkpoint(&Checkpoint::load(Path::new(&path))?)?)
}

fn load_models(r: &Resolver) -> Result<(Vae, Controller), PipelineError> {
    let vae = load_vae(r)?;
    let path = r.require_str("inputs", "flow")?;
    let flow = controller_from_checkpoint(&Checkpoint::load(Path::new(&path))?)?;
    Ok((vae, flow))
}

fn dump_trajectory_csv(traj: &Trajectory, dim: usize, path: &Path) -> Result<(), PipelineError> {
    let mut csv = String::from("t,position,dim,value\n");
    for (i, t) in traj.times.iter().enumerate() {
        for (flat, v) in traj.states[i].iter().enumerate() {
            let _ = writeln!(csv, "{t},{},{},{v}", flat / dim, flat % dim);
        }
    }
    std::fs::write(path, csv)?;
    Ok(())
}

// ── train-vae ────────────────────────────────────────────────────────────

fn cmd_train_vae(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let corpus = read_corpus(&r)?;
    let mut vae_cfg = VaeConfig::new(corpus.vocab.size(), r.usize("vae", "downsample", 4)?);
    vae_cfg.embed_dim = r.usize("vae", "embed_dim", 32)?;
    vae_cfg.latent_dim = r.usize("vae", "latent_dim", 16)?;
    vae_cfg.channels = r.usize("vae", "channels", 48)?;
    vae_cfg.kernel = r.usize("vae", "kernel", 5)?;
    vae_cfg.beta_max = r.float("vae", "beta_max", 2e-4)?;
    vae_cfg.beta_warmup_steps = r.usize("vae", "beta_warmup", 600)?;
    vae_cfg.stab_weight = r.float("vae", "stab_weight", 1e-4)?;
    let train_cfg = VaeTrainConfig {
        steps: r.usize("train", "steps", 1200)?,
        batch_size: r.usize("train", "batch", 12)?,
        lr: r.float("train", "lr", 3e-3)?,
        seq_len: r.usize("train", "seq_len", 32)?,
        mask_augment_p: r.float("train", "mask_augment", 0.25)?,
    };
    write_resolved(&r, &cli.out)?;

    let model = Vae::init(vae_cfg, cli.seed);
    let history = train_vae_model(&model, &corpus.train, &train_cfg, cli.seed)?;

    corpus.vocab.save(&cli.out.join("vocab.txt"))?;
    vae_to_checkpoint(&model).save(&cli.out.join("vae.ckpt"))?;
    let mut csv = String::from("step,rec,kl,stab,total\n");
    for rec in &history {
        let _ = writeln!(csv, "{},{},{},{},{}", rec.step, rec.rec, rec.kl, rec.stab, rec.total);
    }
    std::fs::write(cli.out.join("vae_loss.csv"), csv)?;

    let train_acc = model.reconstruction_accuracy(&corpus.train, train_cfg.seq_len)?;
    let held_acc = model.reconstruction_accuracy(&corpus.heldout, train_cfg.seq_len)?;
    let probes: Vec<TokenSequence> = corpus
        .heldout
        .iter()
        .take(4)
        .map(|s| pad_to(s, train_cfg.seq_len))
        .collect();
    let lip_enc = estimate_lipschitz(&model, MapKind::Encoder, &probes, 0.01, 8, cli.seed)?;
    let lip_dec = estimate_lipschitz(&model, MapKind::Decoder, &probes, 0.01, 8, cli.seed)?;
    let mut metrics = String::new();
    let _ = writeln!(metrics, "train_reconstruction_accuracy = {train_acc}");
    let _ = writeln!(metrics, "heldout_reconstruction_accuracy = {held_acc}");
    let _ = writeln!(metrics, "encoder_lipschitz = {lip_enc}");
    let _ = writeln!(metrics, "decoder_lipschitz = {lip_dec}");
    std::fs::write(cli.out.join("vae_metrics.txt"), metrics)?;
    Ok(())
}

// ── train-flow ───────────────────────────────────────────────────────────

fn cmd_train_flow(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let corpus = read_corpus(&r)?;
    let vae = load_vae(&r)?;
    let seq_len = r.usize("train", "seq_len", 32)?;
    let rows = seq_len / vae.cfg.downsample;
    let ctrl_cfg = ControllerConfig {
        latent_dim: vae.cfg.latent_dim,
        width: r.usize("flow", "width", 64)?,
        layers: r.usize("flow", "layers", 2)?,
        heads: r.usize("flow", "heads", 4)?,
        head_dim: r.usize("flow", "head_dim", 16)?,
        max_len: rows,
        time_dim: r.usize("flow", "time_dim", 32)?,
    };
    let train_cfg = FlowTrainConfig {
        steps: r.usize("train", "steps", 2000)?,
        batch_size: r.usize("train", "batch", 16)?,
        lr: r.float("train", "lr", 3e-4)?,
        seq_len,
        cond_dropout: r.float("train", "cond_dropout", 0.15)?,
    };
    let conditional = r.flag("task", "conditional", false)?;
    let variants = r.usize("task", "variants", 4)?;
    let corruption = read_corruption(&r, "task", 0)?;
    write_resolved(&r, &cli.out)?;

    // several corrupted variants per target teach the general repair map
    // rather than one memorized pairing
    let mut data: Vec<FlowExample> = Vec::new();
    for (i, seq) in corpus.train.iter().enumerate() {
        if conditional {
            for v in 0..variants.max(1) {
                let spec = CorruptionSpec {
                    seed: Rng::derive(cli.seed, (i * variants.max(1) + v) as u64),
                    ..corruption
                };
                data.push(FlowExample {
                    target: seq.clone(),
                    condition: Some(corrupt(seq, &spec, None, &corpus.vocab)?),
                });
            }
        } else {
            data.push(FlowExample {
                target: seq.clone(),
                condition: None,
            });
        }
    }

    let model = Controller::init(ctrl_cfg, cli.seed);
    let history = train_flow_model(&model, &vae, &data, &train_cfg, cli.seed)?;
    controller_to_checkpoint(&model).save(&cli.out.join("flow.ckpt"))?;
    let mut csv = String::from("step,pattern,loss\n");
    for rec in &history {
        for (kind, loss) in &rec.kind_losses {
            let _ = writeln!(csv, "{},{},{loss}", rec.step, kind.name());
        }
    }
    std::fs::write(cli.out.join("flow_loss.csv"), csv)?;
    let mut totals = String::from("step,loss\n");
    for rec in &history {
        let _ = writeln!(totals, "{},{}", rec.step, rec.loss);
    }
    std::fs::write(cli.out.join("flow_loss_total.csv"), totals)?;
    Ok(())
}

// ── sample ───────────────────────────────────────────────────────────────

fn report_jsonl(
    idx: usize,
    report: &crate::sampler::SolveReport,
    detected_len: usize,
) -> String {
    format!(
        "{{\"sample\":{idx},\"nfe\":{},\"accepted_steps\":{},\"rejected_steps\":{},\"max_step\":{},\"min_step\":{},\"detected_len\":{detected_len}}}",
        report.nfe, report.accepted_steps, report.rejected_steps, report.max_step, report.min_step
    )
}

fn cmd_sample(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let corpus = read_corpus(&r)?;
    let (vae, flow) = load_models(&r)?;
    let n = r.usize("sample", "n", 100)?;
    let seq_len = r.usize("sample", "seq_len", 32)?;
    let cfg_w = r.float("sample", "cfg_w", 1.0)?;
    let record = r.flag("sample", "record_trajectory", false)?;
    let mut solver = read_solver(&r, "sample")?;
    solver.record_trajectory = record;
    write_resolved(&r, &cli.out)?;

    let mask = BoundaryMask::free(seq_len);
    let blank = TokenSequence::new(vec![crate::corpus::PAD; seq_len]);
    let mut lines = String::new();
    let mut reports = String::new();
    let mut outputs = Vec::new();
    for i in 0..n {
        let out = sample(
            &flow,
            &vae,
            &mask,
            &blank,
            None,
            &solver,
            cfg_w,
            Rng::derive(cli.seed, i as u64),
        )?;
        lines.push_str(&corpus.vocab.detokenize(&out.tokens));
        lines.push('\n');
        reports.push_str(&report_jsonl(i, &out.report, out.detected_len));
        reports.push('\n');
        if i == 0 {
            if let Some(traj) = &out.trajectory {
                dump_trajectory_csv(traj, vae.cfg.latent_dim, &cli.out.join("trajectory.csv"))?;
            }
        }
        outputs.push(out.tokens);
    }
    std::fs::write(cli.out.join("samples.txt"), lines)?;
    std::fs::write(cli.out.join("reports.jsonl"), reports)?;
    let grammar = corpus.grammar;
    let vocab = corpus.vocab.clone();
    let stats = generation_stats(&outputs, &|seq| {
        grammar.is_valid(&vocab.detokenize(seq))
    })?;
    let mut summary = String::new();
    let _ = writeln!(summary, "validity_rate = {}", stats.validity_rate);
    let _ = writeln!(summary, "unigram_entropy = {}", stats.unigram_entropy);
    let _ = writeln!(summary, "mean_length = {}", stats.mean_length);
    std::fs::write(cli.out.join("stats.txt"), summary)?;
    Ok(())
}

// ── infill ───────────────────────────────────────────────────────────────

fn cmd_infill(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let corpus = read_corpus(&r)?;
    let (vae, flow) = load_models(&r)?;
    let n = r.usize("infill", "n", 50)?;
    let seq_len = r.usize("infill", "seq_len", 32)?;
    let prefix = r.usize("infill", "prefix", 8)?;
    let suffix = r.usize("infill", "suffix", 8)?;
    let cfg_w = r.float("infill", "cfg_w", 1.0)?;
    let solver = read_solver(&r, "infill")?;
    write_resolved(&r, &cli.out)?;

    let mut lines = String::new();
    let mut preserved = 0usize;
    let mut total = 0usize;
    let mut valid = 0usize;
    for (i, seq) in corpus
        .heldout
        .iter()
        .filter(|s| s.len() >= prefix + suffix + 4 && s.len() <= seq_len)
        .take(n)
        .enumerate()
    {
        let padded = pad_to(seq, seq_len);
        let mut mask = BoundaryMask::free(seq_len);
        for p in 0..prefix {
            mask.set(p, true);
        }
        // align the suffix cut to a group boundary so grouping inserts no
        // extra padding (the latent length must not exceed the trained one)
        let r = vae.cfg.downsample;
        let suffix_start = (seq.len().saturating_sub(suffix) / r) * r;
        for p in suffix_start..seq_len {
            mask.set(p, true);
        }
        let out = sample(
            &flow,
            &vae,
            &mask,
            &padded,
            None,
            &solver,
            cfg_w,
            Rng::derive(cli.seed, i as u64),
        )?;
        total += 1;
        let ok = (0..prefix).all(|p| out.tokens.ids.get(p) == Some(&padded.ids[p]))
            && ((seq.len() - suffix)..seq.len())
                .all(|p| out.tokens.ids.get(p) == Some(&padded.ids[p]));
        if ok {
            preserved += 1;
        }
        let text = corpus.vocab.detokenize(&out.tokens);
        if corpus.grammar.is_valid(&text) {
            valid += 1;
        }
        let _ = writeln!(lines, "{}\t{}", corpus.vocab.detokenize(seq), text);
    }
    std::fs::write(cli.out.join("infills.txt"), lines)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "prompts = {total}");
    let _ = writeln!(
        summary,
        "constraints_preserved = {}",
        preserved as f64 / total.max(1) as f64
    );
    let _ = writeln!(summary, "validity_rate = {}", valid as f64 / total.max(1) as f64);
    std::fs::write(cli.out.join("infill_metrics.txt"), summary)?;
    Ok(())
}

// ── correct ──────────────────────────────────────────────────────────────

fn cmd_correct(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let corpus = read_corpus(&r)?;
    let (vae, flow) = load_models(&r)?;
    let n = r.usize("correct", "n", 50)?;
    let seq_len = r.usize("correct", "seq_len", 32)?;
    let cfg_w = r.float("correct", "cfg_w", 3.0)?;
    let corruption = read_corruption(&r, "correct", 0)?;
    let solver = read_solver(&r, "correct")?;
    write_resolved(&r, &cli.out)?;

    let mask = BoundaryMask::free(seq_len);
    let mut lines = String::new();
    let mut corrupted_valid = 0usize;
    let mut corrected_valid = 0usize;
    let mut edit_fracs = Vec::new();
    let mut total = 0usize;
    for (i, seq) in corpus
        .heldout
        .iter()
        .filter(|s| s.len() <= seq_len && s.len() >= 4)
        .take(n)
        .enumerate()
    {
        let spec = CorruptionSpec {
            seed: Rng::derive(cli.seed ^ 0x5eed, i as u64),
            ..corruption
        };
        let corrupted = corrupt(seq, &spec, None, &corpus.vocab)?;
        let out = sample(
            &flow,
            &vae,
            &mask,
            &pad_to(&corrupted, seq_len),
            Some(&corrupted),
            &solver,
            cfg_w,
            Rng::derive(cli.seed, i as u64),
        )?;
        total += 1;
        let corrupted_text = corpus.vocab.detokenize(&corrupted);
        let corrected_text = corpus.vocab.detokenize(&out.tokens);
        if corpus.grammar.is_valid(&corrupted_text) {
            corrupted_valid += 1;
        }
        if corpus.grammar.is_valid(&corrected_text) {
            corrected_valid += 1;
        }
        let strip = out.tokens.strip_pad();
        edit_fracs.push(
            levenshtein(&strip.ids, &corrupted.strip_pad().ids) as f64
                / corrupted.strip_pad().len().max(1) as f64,
        );
        let _ = writeln!(lines, "{corrupted_text}\t{corrected_text}");
    }
    std::fs::write(cli.out.join("corrected.txt"), lines)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "prompts = {total}");
    let _ = writeln!(
        summary,
        "corrupted_validity = {}",
        corrupted_valid as f64 / total.max(1) as f64
    );
    let _ = writeln!(
        summary,
        "corrected_validity = {}",
        corrected_valid as f64 / total.max(1) as f64
    );
    let _ = writeln!(
        summary,
        "mean_edit_fraction = {}",
        edit_fracs.iter().sum::<f64>() / edit_fracs.len().max(1) as f64
    );
    std::fs::write(cli.out.join("correct_metrics.txt"), summary)?;
    Ok(())
}

// ── eval-ppl ─────────────────────────────────────────────────────────────

fn cmd_eval_ppl(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let corpus = read_corpus(&r)?;
    let (vae, flow) = load_models(&r)?;
    let n = r.usize("eval", "n", 60)?;
    let seq_len = r.usize("eval", "seq_len", 32)?;
    let steps = r.usize("eval", "steps", 24)?;
    let probes = r.usize("eval", "probes", 2)?;
    let n_post = r.usize("eval", "posterior_samples", 2)?;
    let method = match r.variant("eval", "method", "euler", &["euler", "heun"])?.as_str() {
        "heun" => FixedStepMethod::Heun,
        _ => FixedStepMethod::Euler,
    };
    write_resolved(&r, &cli.out)?;

    let mut csv = String::from("sequence_id,rec,prior,entropy,elbo,ppl\n");
    let mut elbo_sum = 0.0;
    let mut token_sum = 0usize;
    let eval_set: Vec<&TokenSequence> = corpus
        .heldout
        .iter()
        .filter(|s| s.len() <= seq_len)
        .take(n)
        .collect();
    for (i, seq) in eval_set.iter().enumerate() {
        let mut rng = Rng::new(Rng::derive(cli.seed, i as u64));
        let report = elbo(
            &flow,
            &vae,
            seq,
            seq_len,
            method,
            steps,
            DivergenceEstimator::Hutchinson { probes },
            n_post,
            &mut rng,
        )?;
        let _ = writeln!(
            csv,
            "{i},{},{},{},{},{}",
            report.rec, report.prior, report.entropy, report.elbo, report.ppl
        );
        elbo_sum += report.elbo;
        token_sum += report.tokens;
    }
    std::fs::write(cli.out.join("elbo.csv"), csv)?;
    let corpus_ppl = (-elbo_sum / token_sum as f64).exp();
    let baseline = unigram_ppl(
        &corpus.train,
        &eval_set.iter().map(|s| (*s).clone()).collect::<Vec<_>>(),
        corpus.vocab.size(),
    );
    let mut summary = String::new();
    let _ = writeln!(summary, "sequences = {}", eval_set.len());
    let _ = writeln!(summary, "elbo_ppl = {corpus_ppl}");
    let _ = writeln!(summary, "unigram_ppl = {baseline}");
    std::fs::write(cli.out.join("ppl_summary.txt"), summary)?;
    Ok(())
}

// ── diagnose ─────────────────────────────────────────────────────────────

fn cmd_diagnose(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let _corpus = read_corpus(&r)?;
    let (vae, flow) = load_models(&r)?;
    let n_traj = r.usize("diagnose", "trajectories", 8)?;
    let seq_len = r.usize("diagnose", "seq_len", 32)?;
    let probes = r.usize("diagnose", "probes", 64)?;
    let mut solver = read_solver(&r, "diagnose")?;
    solver.record_trajectory = true;
    write_resolved(&r, &cli.out)?;

    let rows = seq_len / vae.cfg.downsample;
    let dim = vae.cfg.latent_dim;
    let mask = BoundaryMask::free(rows);
    let blank = TokenSequence::new(vec![crate::corpus::PAD; seq_len]);
    let mut csv = String::from("trajectory,t,kappa,stiffness\n");
    let mut actions = Vec::new();
    let mut kappa_series = Vec::new();
    let mut stiff_series = Vec::new();
    for i in 0..n_traj {
        let out = sample(
            &flow,
            &vae,
            &mask,
            &blank,
            None,
            &solver,
            1.0,
            Rng::derive(cli.seed, i as u64),
        )?;
        let traj = out.trajectory.as_ref().expect("recording solver");
        let field = ControllerField {
            model: &flow,
            mask: &mask,
            cond: crate::controller::ConditionState::none(),
            cfg_w: 1.0,
            rows,
            dim,
        };
        let kappas = curvature(traj)?;
        let mut rng = Rng::new(Rng::derive(cli.seed ^ 0xd1a9, i as u64));
        let stiff = stiffness_series(
            &field,
            traj,
            StiffnessProbe::HutchinsonFrobenius { probes },
            1,
            &mut rng,
        )?;
        actions.push(kinetic_action(traj)?);
        for (pt, (ts, s)) in kappas.iter().zip(stiff.iter().skip(1)) {
            let kappa = pt.kappa.map(|k| k.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{i},{},{kappa},{s}", pt.t);
            let _ = ts;
        }
        if i == 0 {
            kappa_series = kappas
                .iter()
                .filter_map(|p| p.kappa.map(|k| (p.t, k)))
                .collect();
            stiff_series = stiff;
        }
    }
    std::fs::write(cli.out.join("geometry.csv"), csv)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "trajectories = {n_traj}");
    let _ = writeln!(summary, "median_kinetic_action = {}", median(&actions));
    std::fs::write(cli.out.join("geometry_summary.txt"), summary)?;
    if !kappa_series.is_empty() {
        emit_series(
            &[Series {
                name: "curvature".into(),
                points: kappa_series,
            }],
            "trajectory curvature",
            "t",
            "kappa",
            &cli.out.join("curvature.svg"),
        )?;
    }
    if !stiff_series.is_empty() {
        emit_series(
            &[Series {
                name: "stiffness".into(),
                points: stiff_series,
            }],
            "field stiffness along trajectory",
            "t",
            "frobenius",
            &cli.out.join("stiffness.svg"),
        )?;
    }
    Ok(())
}

// ── soclab ───────────────────────────────────────────────────────────────

fn soclab_density(name: &str) -> ToyDensity {
    match name {
        "gaussian" => ToyDensity::gaussian(vec![1.5, -0.8], vec![0.25, 0.25]),
        "ridge" => ToyDensity::ridge(2.0, 1.5, 9, 0.04),
        _ => ToyDensity::mixture(
            vec![0.5, 0.5],
            vec![
                crate::soclab::GaussianComponent {
                    mean: vec![-1.5, 1.0],
                    var: vec![0.16, 0.16],
                },
                crate::soclab::GaussianComponent {
                    mean: vec![1.5, -1.0],
                    var: vec![0.16, 0.16],
                },
            ],
        ),
    }
}

fn cmd_soclab(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let density_name = r.variant("soclab", "density", "mixture", &["gaussian", "mixture", "ridge"])?;
    let seeds = r.usize("soclab", "seeds", 100)?;
    let dt_smear = r.float("soclab", "dt_smear", 0.01)?;
    let sde_steps = r.usize("soclab", "sde_steps", 200)?;
    let flow_steps = r.usize("soclab", "flow_steps", 64)?;
    let perturb_time = r.float("soclab", "perturb_time", 0.5)?;
    let perturb_norm = r.float("soclab", "perturb_norm", 0.5)?;
    write_resolved(&r, &cli.out)?;

    let density = soclab_density(&density_name);
    let mode = density.mode();
    let distance = |z: &[f64]| -> f64 {
        z.iter()
            .zip(&mode)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut csv = String::from("kind,seed,action,terminal_error,nfe_or_events\n");
    let mut actions: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    let mut first_trajs = Vec::new();
    for s in 0..seeds {
        let seed = Rng::derive(cli.seed, s as u64);
        let mut rng = Rng::new(seed);
        let z0 = rng.normal_vec(density.dim());
        let flow = simulate_flow_ode(&density, &z0, &SolverConfig::heun(flow_steps));
        let sde = simulate_score_sde(
            &density,
            &z0,
            &ScoreSdeConfig {
                n_steps: sde_steps,
                ..Default::default()
            },
            seed,
            None,
        );
        let ar = simulate_ar_impulsive(
            &density,
            &(0..density.dim()).collect::<Vec<_>>(),
            &z0,
            &ArConfig {
                dt_smear,
                ..Default::default()
            },
            None,
        );
        for run in [&flow, &sde, &ar] {
            let _ = writeln!(
                csv,
                "{},{s},{},{},{}",
                run.kind.name(),
                run.metrics.action,
                distance(&run.terminal),
                run.metrics.nfe_or_events
            );
            actions
                .entry(run.kind.name())
                .or_default()
                .push(run.metrics.action);
        }
        if s == 0 {
            for run in [&flow, &sde, &ar] {
                if let Some(traj) = &run.trajectory {
                    let pts: Vec<(f64, f64)> = traj
                        .states
                        .iter()
                        .map(|z| (z[0], *z.get(1).unwrap_or(&0.0)))
                        .collect();
                    first_trajs.push((run.kind.name().to_string(), pts));
                }
            }
        }
    }
    std::fs::write(cli.out.join("runs.csv"), csv)?;

    // perturbation response, flow vs impulsive
    let dim = density.dim();
    let delta: Vec<f64> = (0..dim)
        .map(|_| perturb_norm / (dim as f64).sqrt())
        .collect();
    let mut pcsv = String::from("kind,seed,error_with,error_without\n");
    for s in 0..seeds {
        let seed = Rng::derive(cli.seed ^ 0x9e, s as u64);
        for kind in [DynamicsKind::FlowOde, DynamicsKind::ArImpulsive] {
            let resp = perturbation_response(kind, &density, perturb_time, &delta, seed);
            let _ = writeln!(
                pcsv,
                "{},{s},{},{}",
                kind.name(),
                resp.terminal_error_with,
                resp.terminal_error_without
            );
        }
    }
    std::fs::write(cli.out.join("perturbation.csv"), pcsv)?;

    let mut summary = String::new();
    for (kind, a) in &actions {
        let _ = writeln!(summary, "median_action_{kind} = {}", median(a));
    }
    std::fs::write(cli.out.join("soclab_summary.txt"), summary)?;
    if !first_trajs.is_empty() {
        let svg = crate::plot::render_trajectories_2d(&first_trajs, "generation dynamics")?;
        std::fs::write(cli.out.join("soclab_trajectories.svg"), svg)?;
    }
    Ok(())
}

// ── plot ─────────────────────────────────────────────────────────────────

fn cmd_plot(cfg: &Config, cli: &CliArgs) -> Result<(), PipelineError> {
    let r = cfg.resolver();
    let input = r.require_str("plot", "input")?;
    let x_col = r.str("plot", "x", "step");
    let y_col = r.str("plot", "y", "loss");
    let group_col = r.str("plot", "group", "");
    let title = r.str("plot", "title", "series");
    let output = r.str("plot", "output", "plot.svg");
    write_resolved(&r, &cli.out)?;

    let text = std::fs::read_to_string(&input)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| PipelineError::Runtime("empty csv".into()))?
        .split(',')
        .collect();
    let col = |name: &str| -> Result<usize, PipelineError> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| PipelineError::Runtime(format!("csv has no column {name:?}")))
    };
    let xi = col(&x_col)?;
    let yi = col(&y_col)?;
    let gi = if group_col.is_empty() {
        None
    } else {
        Some(col(&group_col)?)
    };
    let mut groups: std::collections::BTreeMap<String, Vec<(f64, f64)>> = Default::default();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let x: f64 = fields[xi]
            .parse()
            .map_err(|_| PipelineError::Runtime(format!("bad x value {:?}", fields[xi])))?;
        let Ok(y) = fields[yi].parse::<f64>() else {
            continue; // absent values (e.g. undefined curvature) are skipped
        };
        let key = gi.map(|g| fields[g].to_string()).unwrap_or_else(|| y_col.clone());
        groups.entry(key).or_default().push((x, y));
    }
    let series: Vec<Series> = groups
        .into_iter()
        .map(|(name, points)| Series { name, points })
        .collect();
    emit_series(&series, &title, &x_col, &y_col, &cli.out.join(&output))?;
    Ok(())
}
