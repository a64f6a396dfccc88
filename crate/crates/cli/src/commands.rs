use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use phonescore::data::read_frame_matrix;
use phonescore::eval::{read_scores_csv, write_scores_csv, ScoreRow};
use phonescore::head::{load_checkpoint, save_checkpoint};
use phonescore::train::train_from;
use phonescore::{
    crossval, eligible_phones, evaluate, generate, init_params, make_speaker_folds, score_corpus, score_corpus_gop,
    Corpus, CrossvalOptions, HeadConfig, HeadParams, InstanceScore, LabelCounts, LossSpec, PhoneSet, SynthSpec,
};
use serde::Serialize;
use serde_json::Value;

use crate::config::{self, CrossvalConfig, EvaluateConfig, GopConfig, ScoreConfig, Subset, TrainRunConfig, ValidateConfig};
use crate::{Cli, Command, Invalid, TrainFlags};

/// Contents of `run.json`. No timestamps, so reruns are byte-identical.
#[derive(Debug, Serialize)]
struct RunRecord {
    command: &'static str,
    version: &'static str,
    seed: Option<u64>,
    jobs: usize,
    config: Value,
    outputs: Vec<String>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

struct Ctx<'a> {
    out_dir: &'a Path,
    jobs: usize,
    record: RunRecord,
}

impl Ctx<'_> {
    fn resolved<C: Serialize>(&mut self, config: &C, seed: Option<u64>) -> Result<()> {
        self.record.config = serde_json::to_value(config)?;
        // commands without randomness keep whatever --seed was given
        self.record.seed = seed.or(self.record.seed);
        Ok(())
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.record.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.output(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Validate { .. } => "validate",
        Command::Synth { .. } => "synth",
        Command::Gop { .. } => "gop",
        Command::Train { .. } => "train",
        Command::Score { .. } => "score",
        Command::Crossval { .. } => "crossval",
        Command::Evaluate { .. } => "evaluate",
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let jobs = match g.jobs {
        Some(0) => return Err(Invalid("--jobs must be at least 1".into()).into()),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    // Ignored when a pool already exists (only possible in tests).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    fs::create_dir_all(&g.out_dir).with_context(|| format!("creating {}", g.out_dir.display()))?;

    let mut ctx = Ctx {
        out_dir: &g.out_dir,
        jobs,
        record: RunRecord {
            command: command_name(&cli.command),
            version: env!("CARGO_PKG_VERSION"),
            seed: g.seed,
            jobs,
            config: Value::Null,
            outputs: Vec::new(),
            status: "ok",
            error: None,
        },
    };
    let result = dispatch(cli, &mut ctx);
    if let Err(e) = &result {
        ctx.record.status = "error";
        ctx.record.error = Some(format!("{e:#}"));
    }
    let path = g.out_dir.join("run.json");
    let json = serde_json::to_string_pretty(&ctx.record)? + "\n";
    fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    result
}

fn dispatch(cli: &Cli, ctx: &mut Ctx) -> Result<()> {
    let cfg_path = cli.global.config.as_deref();
    let seed = cli.global.seed;
    match &cli.command {
        Command::Validate { manifest } => {
            let mut cfg: ValidateConfig = config::load(cfg_path)?;
            override_path(&mut cfg.manifest, manifest);
            ctx.resolved(&cfg, None)?;
            validate(&cfg)
        }
        Command::Synth { kind, separation } => {
            let mut spec: SynthSpec = config::load(cfg_path)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(k) = kind {
                spec.kind = *k;
            }
            if let Some(s) = separation {
                spec.separation = phonescore::synth::PerPhone::All(*s);
            }
            ctx.resolved(&spec, Some(spec.seed))?;
            synth(&spec, ctx)
        }
        Command::Gop { manifest, subset, floor } => {
            let mut cfg: GopConfig = config::load(cfg_path)?;
            override_path(&mut cfg.manifest, manifest);
            override_val(&mut cfg.subset, subset);
            override_val(&mut cfg.floor, floor);
            ctx.resolved(&cfg, None)?;
            gop(&cfg, ctx)
        }
        Command::Train { manifest, opts } => {
            let mut cfg: TrainRunConfig = config::load(cfg_path)?;
            override_path(&mut cfg.manifest, manifest);
            apply_train_flags(&mut cfg, opts, seed);
            ctx.resolved(&cfg, Some(cfg.train.seed))?;
            train(&cfg, ctx)
        }
        Command::Score {
            manifest,
            checkpoint,
            subset,
            aggregation,
        } => {
            let mut cfg: ScoreConfig = config::load(cfg_path)?;
            override_path(&mut cfg.manifest, manifest);
            override_path(&mut cfg.checkpoint, checkpoint);
            override_val(&mut cfg.subset, subset);
            override_val(&mut cfg.aggregation, aggregation);
            ctx.resolved(&cfg, None)?;
            score(&cfg, ctx)
        }
        Command::Crossval { manifest, opts, folds } => {
            let mut cfg: CrossvalConfig = config::load(cfg_path)?;
            override_path(&mut cfg.run.manifest, manifest);
            apply_train_flags(&mut cfg.run, opts, seed);
            override_val(&mut cfg.n_folds, folds);
            if let Some(s) = seed {
                cfg.fold_seed = Some(s);
            }
            ctx.resolved(&cfg, Some(cfg.run.train.seed))?;
            crossval_cmd(&cfg, ctx)
        }
        Command::Evaluate {
            eval_scores,
            dev_scores,
            phones,
            min_minority,
            normalize_cost,
        } => {
            let mut cfg: EvaluateConfig = config::load(cfg_path)?;
            override_path(&mut cfg.eval_scores, eval_scores);
            override_path(&mut cfg.dev_scores, dev_scores);
            override_path(&mut cfg.phones, phones);
            override_val(&mut cfg.min_minority, min_minority);
            cfg.normalize_cost |= *normalize_cost;
            ctx.resolved(&cfg, None)?;
            evaluate_cmd(&cfg, ctx)
        }
    }
}

fn override_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn override_val<T: Copy>(slot: &mut T, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = *v;
    }
}

fn apply_train_flags(cfg: &mut TrainRunConfig, f: &TrainFlags, seed: Option<u64>) {
    override_val(&mut cfg.subset, &f.subset);
    override_val(&mut cfg.train.stage, &f.stage);
    override_val(&mut cfg.train.epochs, &f.epochs);
    override_val(&mut cfg.weighting, &f.weighting);
    override_val(&mut cfg.min_minority, &f.min_minority);
    override_val(&mut cfg.train.seed, &seed);
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Invalid(format!("no {what} given (argument or config key)")).into())
}

fn load_subset(manifest: &Path, subset: Subset) -> Result<Corpus> {
    let corpus = Corpus::load(manifest)?;
    let declared = match subset {
        Subset::All => true,
        Subset::Dev => corpus.dev_speakers.is_some(),
        Subset::Eval => corpus.eval_speakers.is_some(),
    };
    if !declared {
        return Err(Invalid(format!("{}: manifest declares no {subset:?} speakers", manifest.display())).into());
    }
    let c = match subset {
        Subset::All => corpus,
        Subset::Dev => corpus.dev_subset(),
        Subset::Eval => corpus.eval_subset(),
    };
    if c.utterances.is_empty() {
        return Err(Invalid(format!("{}: the {subset:?} subset is empty", manifest.display())).into());
    }
    Ok(c)
}

fn validate(cfg: &ValidateConfig) -> Result<()> {
    let manifest = required(&cfg.manifest, "manifest")?;
    let diags = Corpus::check(manifest);
    for d in &diags {
        println!("{d}");
    }
    match diags.first() {
        None => {
            println!("{}: ok", manifest.display());
            Ok(())
        }
        Some(first) => Err(Invalid(format!("{} problem(s); first: {first}", diags.len())).into()),
    }
}

fn synth(spec: &SynthSpec, ctx: &mut Ctx) -> Result<()> {
    spec.validate()?;
    let out = generate(spec, ctx.out_dir)?;
    for path in [out.activations, out.posteriors].into_iter().flatten() {
        let rel = path.strip_prefix(ctx.out_dir).unwrap_or(&path).display().to_string();
        println!("wrote {}", path.display());
        ctx.record.outputs.push(rel);
    }
    Ok(())
}

fn gop(cfg: &GopConfig, ctx: &mut Ctx) -> Result<()> {
    let corpus = load_subset(required(&cfg.manifest, "manifest")?, cfg.subset)?;
    let scores: Vec<InstanceScore> = score_corpus_gop(&corpus, cfg.floor)?.iter().map(|g| g.to_instance()).collect();
    let path = ctx.output("gop_scores.csv");
    write_scores_csv(&path, &scores, &corpus.phones)?;
    println!("{} segments scored", scores.len());
    Ok(())
}

/// Loss spec and head config shared by `train` and `crossval`.
fn training_setup(cfg: &TrainRunConfig, corpus: &Corpus) -> Result<(HeadConfig, LossSpec, HeadParams)> {
    let n = corpus.phones.len();
    let mut explicit = BTreeSet::new();
    for sym in &cfg.exclude_phones {
        let idx = corpus
            .phones
            .index_of(sym)
            .ok_or_else(|| Invalid(format!("exclude_phones: unknown phone {sym:?}")))?;
        explicit.insert(idx);
    }
    let eligible: BTreeSet<usize> = eligible_phones(corpus, cfg.min_minority).difference(&explicit).copied().collect();
    if eligible.is_empty() {
        return Err(Invalid(format!("no phone has at least {} instances of each class", cfg.min_minority)).into());
    }
    let loss = LossSpec::with_eligible(cfg.weighting, n, &eligible);
    let head = cfg.head.resolve(corpus.dim(), n);
    let mut params = init_params(&head, cfg.train.seed)?;
    if let Some(path) = &cfg.hidden_init {
        params.import_hidden(&read_frame_matrix(path)?)?;
    }
    Ok((head, loss, params))
}

fn train(cfg: &TrainRunConfig, ctx: &mut Ctx) -> Result<()> {
    cfg.train.validate()?;
    let corpus = load_subset(required(&cfg.manifest, "manifest")?, cfg.subset)?;
    let (_, loss, params) = training_setup(cfg, &corpus)?;
    let stage = cfg.train.stage.to_string();
    let ckpt_dir = ctx.out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    let mut written = Vec::new();
    let (params, log) = train_from(&corpus, params, &cfg.train, &loss, |epoch, p| {
        let name = format!("checkpoints/epoch_{epoch:04}.ckpt");
        save_checkpoint(&ctx.out_dir.join(&name), p, cfg.train.seed, &stage, epoch)?;
        written.push(name);
        Ok(())
    })?;
    ctx.record.outputs.extend(written);
    let path = ctx.output("head.ckpt");
    save_checkpoint(&path, &params, cfg.train.seed, &stage, cfg.train.epochs)?;
    ctx.write("train_log.csv", &log.to_csv())?;
    if let Some(l) = log.final_loss() {
        println!("final training loss {l:.6}");
    }
    Ok(())
}

fn score(cfg: &ScoreConfig, ctx: &mut Ctx) -> Result<()> {
    let (_, params) = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?)?;
    let corpus = load_subset(required(&cfg.manifest, "manifest")?, cfg.subset)?;
    if params.config.n_phones != corpus.phones.len() || params.config.input_dim != corpus.dim() {
        return Err(Invalid(format!(
            "checkpoint expects {} phones x {} inputs, corpus has {} x {}",
            params.config.n_phones,
            params.config.input_dim,
            corpus.phones.len(),
            corpus.dim()
        ))
        .into());
    }
    let scores = score_corpus(&params, &corpus, cfg.aggregation)?;
    let path = ctx.output("scores.csv");
    write_scores_csv(&path, &scores, &corpus.phones)?;
    println!("{} segments scored", scores.len());
    Ok(())
}

fn crossval_cmd(cfg: &CrossvalConfig, ctx: &mut Ctx) -> Result<()> {
    cfg.run.train.validate()?;
    let corpus = load_subset(required(&cfg.run.manifest, "manifest")?, cfg.run.subset)?;
    let (head, loss, params) = training_setup(&cfg.run, &corpus)?;
    let fold_seed = cfg.fold_seed.unwrap_or(cfg.run.train.seed);
    let split = make_speaker_folds(&corpus.speakers(), cfg.n_folds, fold_seed)?;
    let options = CrossvalOptions {
        min_minority: cfg.run.min_minority,
        cost: cfg.cost,
        jobs: ctx.jobs,
        aggregation: cfg.aggregation,
        initial: cfg.run.hidden_init.is_some().then_some(params),
    };
    let result = crossval(&corpus, &head, &cfg.run.train, &loss, &split, &options)?;
    ctx.write("crossval_curve.csv", &result.curve_csv())?;
    let path = ctx.output("crossval_scores.csv");
    write_scores_csv(&path, result.selected_scores(), &corpus.phones)?;
    let folds = serde_json::json!({
        "n_folds": split.n_folds,
        "fold_seed": fold_seed,
        "assignments": split.assignments,
        "selected_epoch": result.selected_epoch,
    });
    ctx.write("folds.json", &(serde_json::to_string_pretty(&folds)? + "\n"))?;
    if let Some(m) = result.curve.iter().find(|m| m.epoch == result.selected_epoch) {
        println!(
            "selected epoch {}: avg 1-AUC {:.4}, avg MinCost {:.4}",
            m.epoch, m.avg_one_minus_auc, m.avg_min_cost
        );
    }
    Ok(())
}

fn symbols(rows: &[ScoreRow]) -> BTreeSet<&str> {
    rows.iter().map(|r| r.phone.as_str()).collect()
}

fn evaluate_cmd(cfg: &EvaluateConfig, ctx: &mut Ctx) -> Result<()> {
    cfg.cost.validate()?;
    let eval_rows = read_scores_csv(required(&cfg.eval_scores, "eval scores")?)?;
    let dev_rows = cfg.dev_scores.as_deref().map(read_scores_csv).transpose()?;
    if let Some(dev) = &dev_rows {
        let (e, d) = (symbols(&eval_rows), symbols(dev));
        if e != d {
            let only_eval: Vec<_> = e.difference(&d).collect();
            let only_dev: Vec<_> = d.difference(&e).collect();
            return Err(Invalid(format!(
                "dev and eval scores use different phone sets (only in eval: {only_eval:?}, only in dev: {only_dev:?})"
            ))
            .into());
        }
    }
    let phones = match &cfg.phones {
        Some(p) => PhoneSet::read(p)?,
        None => PhoneSet::new(symbols(&eval_rows))?,
    };
    let to_inst = |rows: &[ScoreRow]| rows.iter().map(|r| r.to_instance(&phones)).collect::<phonescore::Result<Vec<_>>>();
    let eval = to_inst(&eval_rows)?;
    let dev = dev_rows.as_deref().map(to_inst).transpose()?;

    let mut counts = LabelCounts::new(phones.len());
    for s in &eval {
        counts.add(s.phone, s.label);
    }
    let eligible = counts.eligible(cfg.min_minority);
    if eligible.is_empty() {
        return Err(Invalid(format!("no phone has at least {} instances of each class", cfg.min_minority)).into());
    }
    let report = evaluate(&eval, dev.as_deref(), &cfg.cost, &eligible)?;
    let symbol = |p: usize| phones.symbol(p).unwrap_or("?").to_string();
    ctx.write("report.csv", &report.to_csv(symbol, cfg.normalize_cost))?;
    let json = serde_json::json!({ "phones": phones.symbols(), "normalized": cfg.normalize_cost, "report": report });
    ctx.write("report.json", &(serde_json::to_string_pretty(&json)? + "\n"))?;
    let a = &report.average;
    let scale = if cfg.normalize_cost { 1.0 / cfg.cost.trivial_cost() } else { 1.0 };
    print!(
        "AVERAGE over {} phones: 1-AUC {:.4}, MinCost {:.4}",
        a.n_phones,
        a.one_minus_auc,
        a.min_cost * scale
    );
    match a.act_cost {
        Some(c) => println!(", ActCost {:.4}", c * scale),
        None => println!(),
    }
    Ok(())
}
