//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde_json::json;

use drivernet::audit::{audit, published_cost_ms, AuditRow};
use drivernet::config::{ModelConfig, ModelKind, Regime};
use drivernet::data::batch::check_compatible;
use drivernet::data::format::MANIFEST;
use drivernet::data::{generate_dataset, read_dataset, Dataset, RuleConfig, Split, SynthConfig};
use drivernet::train::bench::bench_strategies;
use drivernet::train::gradsuite::{layer_suite, model_suite, GradRow};
use drivernet::train::metrics::{render_table, thousands, TableRow};
use drivernet::train::trainer::pretrain_blocks;
use drivernet::train::{cross_validate, evaluate, folds, load_checkpoint, save_checkpoint, train, AdamConfig, TrainConfig};
use drivernet::Network;

use crate::args::*;
use crate::run::{invalid, IntoInvalid, Outcome, RunDir};

pub fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Crossval(a) => crossval(a),
        Command::Params(a) => params(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(a),
    }
}

fn kind_of(sel: Option<ModelSelector>) -> ModelKind {
    match sel {
        Some(ModelSelector::Context) => ModelKind::Context,
        Some(ModelSelector::Feature) => ModelKind::Feature,
        Some(ModelSelector::Fusion | ModelSelector::Drivernet) | None => ModelKind::DriverNet,
    }
}

/// Applies the model flags to a preset, rejecting flags that do not apply
/// to the chosen model.
fn resolve_model(m: &ModelArgs, default: Preset, seed: u64) -> Outcome<ModelConfig> {
    let kind = kind_of(m.model);
    if kind != ModelKind::DriverNet && m.fusion.is_some() {
        return invalid(format!("--fusion applies only to the assembled model, not --model {kind}"));
    }
    if kind == ModelKind::Context && m.modalities.is_some() {
        return invalid("--modalities does not apply to --model context");
    }
    if kind == ModelKind::Feature && (m.aggregation.is_some() || m.frame_size.is_some()) {
        return invalid("--agg and --frame-size do not apply to --model feature");
    }
    let mut cfg = match m.preset.unwrap_or(default) {
        Preset::Paper => ModelConfig::paper(),
        Preset::Compact => ModelConfig::compact(),
        Preset::Miniature => ModelConfig::miniature(),
    }
    .with_kind(kind)
    .with_seed(seed);
    if let Some(a) = m.aggregation {
        cfg.aggregation = a;
    }
    if let Some(f) = m.fusion {
        cfg.fusion = f;
    }
    if let Some(s) = m.modalities {
        cfg.modalities = s;
    }
    if let Some(n) = m.frames {
        cfg.frames = n;
    }
    if let Some(s) = m.frame_size {
        cfg.frame_size = s;
    }
    cfg.validate().or_invalid()?;
    Ok(cfg)
}

fn resolve_training(t: &TrainingArgs, seed: u64) -> Outcome<TrainConfig> {
    let cfg = TrainConfig {
        optimizer: AdamConfig {
            lr: t.lr,
            ..AdamConfig::default()
        },
        batch: t.batch,
        epochs: t.epochs,
        seed,
        regime: t.regime,
    };
    cfg.validate().or_invalid()?;
    Ok(cfg)
}

fn load_data(dir: &Path) -> Outcome<Dataset> {
    if !dir.join(MANIFEST).is_file() {
        return invalid(format!("{} is not a dataset directory (no {MANIFEST})", dir.display()));
    }
    Ok(read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?)
}

fn model_name(cfg: &ModelConfig) -> String {
    match cfg.kind {
        ModelKind::Context => format!("context-{}", cfg.aggregation),
        ModelKind::Feature => format!("feature-{}", cfg.modalities.to_string().replace(',', "+")),
        ModelKind::DriverNet => format!("drivernet-{}-{}", cfg.aggregation, cfg.fusion),
    }
}

fn gen(a: GenArgs) -> Outcome {
    let cfg = SynthConfig {
        clips: a.clips,
        seed: a.seed,
        frames: a.frames,
        frame_size: a.frame_size,
        fps: a.fps,
        test_fraction: a.test_fraction,
        noise: a.noise,
        rule: RuleConfig {
            window: a.window,
            ..RuleConfig::default()
        },
        ..SynthConfig::default()
    };
    cfg.validate().or_invalid()?;
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return invalid("--noise must be a finite non-negative number");
    }
    if a.out.join(MANIFEST).exists() {
        if !a.force {
            return invalid(format!("{} already holds a dataset; pass --force to replace it", a.out.display()));
        }
        fs::remove_file(a.out.join(MANIFEST))?;
        if a.out.join("clips").exists() {
            fs::remove_dir_all(a.out.join("clips"))?;
        }
    }
    let mut run = RunDir::create(&a.out)?;
    run.write_json("resolved-config.json", &json!({ "command": "gen", "synth": cfg, "jobs": a.jobs }))?;
    run.log(format!("generating {} clips with seed {}", cfg.clips, cfg.seed));
    let ds = generate_dataset(&cfg, a.jobs.max(1))?;
    drivernet::data::write_dataset(&a.out, &ds)?;
    run.log(format!(
        "wrote {} clips ({} train, {} test), ready fraction {:.4}",
        ds.len(),
        ds.split_indices(Split::Train).len(),
        ds.split_indices(Split::Test).len(),
        ds.ready_fraction()
    ));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let model = resolve_model(&a.model, Preset::Compact, a.seed)?;
    let tc = resolve_training(&a.training, a.seed)?;
    let ckpts = (&a.context_checkpoint, &a.feature_checkpoint);
    if tc.regime == Regime::Fusion && model.kind != ModelKind::DriverNet {
        return invalid("--regime fusion needs the assembled model");
    }
    if tc.regime != Regime::Fusion && (ckpts.0.is_some() || ckpts.1.is_some()) {
        return invalid("pretrained block checkpoints are only used with --regime fusion");
    }
    if ckpts.0.is_some() != ckpts.1.is_some() {
        return invalid("pass both --context-checkpoint and --feature-checkpoint, or neither");
    }
    let ds = load_data(&a.data)?;
    check_compatible(&ds, &model).or_invalid()?;
    let (train_idx, test_idx) = (ds.split_indices(Split::Train), ds.split_indices(Split::Test));
    if train_idx.is_empty() || test_idx.is_empty() {
        return invalid("dataset needs both train and test clips");
    }
    let mut run = RunDir::create(&a.out)?;
    run.write_json(
        "resolved-config.json",
        &json!({ "command": "train", "data": a.data, "model": model, "training": tc,
                 "context_checkpoint": ckpts.0, "feature_checkpoint": ckpts.1 }),
    )?;
    run.log(format!("training {} on {} clips, regime {}", model_name(&model), train_idx.len(), tc.regime));

    let (net, history) = match tc.regime {
        Regime::All => {
            let mut net = Network::new(model.clone())?;
            let h = train(&mut net, &ds, &train_idx, &tc)?;
            (net, h)
        }
        Regime::Fusion => {
            let (context, feature) = match ckpts {
                (Some(c), Some(f)) => {
                    let (c, f) = (load_checkpoint(c)?, load_checkpoint(f)?);
                    if c.config.kind != ModelKind::Context || f.config.kind != ModelKind::Feature {
                        return invalid("block checkpoints must hold a context and a feature model");
                    }
                    (c, f)
                }
                _ => {
                    run.log("no block checkpoints given; pretraining both blocks on the train split");
                    pretrain_blocks(&model, &ds, &train_idx, &tc)?
                }
            };
            let mut net = Network::new(model.clone())?;
            net.load_block(&context, "context.")?;
            net.load_block(&feature, "feature.")?;
            let h = train(&mut net, &ds, &train_idx, &tc)?;
            (net, h)
        }
    };
    for (e, (l, acc)) in history.loss.iter().zip(&history.accuracy).enumerate() {
        run.log(format!("epoch {:>3}  loss {l:.6}  train accuracy {acc:.4}", e + 1));
    }
    save_checkpoint(&run.file("checkpoint.ckpt"), &net)?;
    let eval = evaluate(&net, &ds, &test_idx)?;
    let params = net.count_parameters();
    let name = model_name(&model);
    run.write_json(
        "metrics.json",
        &json!({ "model": name, "parameters": params, "history": history, "test": eval.metrics }),
    )?;
    let table = render_table(&[TableRow::single(&name, params.trainable, &eval.metrics)]);
    run.write_text("metrics.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn split_indices(ds: &Dataset, s: SplitArg) -> Vec<usize> {
    match s {
        SplitArg::Train => ds.split_indices(Split::Train),
        SplitArg::Test => ds.split_indices(Split::Test),
        SplitArg::All => (0..ds.len()).collect(),
    }
}

fn eval(a: EvalArgs) -> Outcome {
    if !a.checkpoint.is_file() {
        return invalid(format!("checkpoint {} does not exist", a.checkpoint.display()));
    }
    let net = load_checkpoint(&a.checkpoint).or_invalid()?;
    let ds = load_data(&a.data)?;
    check_compatible(&ds, &net.config).or_invalid()?;
    let idx = split_indices(&ds, a.split);
    if idx.is_empty() {
        return invalid("the selected split is empty");
    }
    let mut run = RunDir::create(&a.out)?;
    run.write_json(
        "resolved-config.json",
        &json!({ "command": "eval", "checkpoint": a.checkpoint, "data": a.data,
                 "split": format!("{:?}", a.split).to_lowercase(), "model": net.config }),
    )?;
    run.log(format!("evaluating {} on {} clips", model_name(&net.config), idx.len()));
    let e = evaluate(&net, &ds, &idx)?;
    let name = model_name(&net.config);
    let params = net.count_parameters();
    run.write_json("metrics.json", &json!({ "model": name, "parameters": params, "metrics": e.metrics }))?;
    let table = render_table(&[TableRow::single(&name, params.trainable, &e.metrics)]);
    run.write_text("metrics.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn crossval(a: CrossvalArgs) -> Outcome {
    let model = resolve_model(&a.model, Preset::Compact, a.seed)?;
    let tc = resolve_training(&a.training, a.seed)?;
    if tc.regime == Regime::Fusion && model.kind != ModelKind::DriverNet {
        return invalid("--regime fusion needs the assembled model");
    }
    let ds = load_data(&a.data)?;
    check_compatible(&ds, &model).or_invalid()?;
    folds(ds.len(), a.k, a.seed).or_invalid()?;
    let mut run = RunDir::create(&a.out)?;
    run.write_json(
        "resolved-config.json",
        &json!({ "command": "crossval", "data": a.data, "model": model, "training": tc, "k": a.k, "jobs": a.jobs }),
    )?;
    let name = model_name(&model);
    run.log(format!("{}-fold cross-validation of {name}, regime {}", a.k, tc.regime));
    let report = cross_validate(&model, &tc, &ds, a.k, a.jobs.max(1))?;
    let mut rows: Vec<TableRow> = report
        .folds
        .iter()
        .map(|f| TableRow::single(&format!("fold {}", f.fold + 1), report.trainable_parameters, &f.metrics))
        .collect();
    rows.push(TableRow::summary("mean ± std", report.trainable_parameters, &report.summary, None));
    let table = format!("{name}, regime {}\n{}", tc.regime, render_table(&rows));
    run.write_json("metrics.json", &report)?;
    run.write_text("metrics.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn audit_table(rows: &[AuditRow]) -> String {
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            let fmt = |v: i64| if v < 0 { format!("-{}", thousands(v.unsigned_abs() as usize)) } else { thousands(v as usize) };
            [r.item.clone(), fmt(r.ours), r.paper.map_or_else(|| "-".into(), fmt), r.flag().to_string()]
        })
        .collect();
    let header = ["item", "ours", "paper", "flag"].map(String::from);
    let mut w = header.clone().map(|h| h.chars().count());
    for c in &cells {
        for (wi, s) in w.iter_mut().zip(c) {
            *wi = (*wi).max(s.chars().count());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(&header).chain(cells.iter()) {
        let _ = writeln!(
            out,
            "{:<w0$}  {:>w1$}  {:>w2$}  {}",
            row[0],
            row[1],
            row[2],
            row[3],
            w0 = w[0],
            w1 = w[1],
            w2 = w[2]
        );
    }
    out
}

fn params(a: ParamsArgs) -> Outcome {
    let model = resolve_model(&a.model, Preset::Paper, 0)?;
    let rows = audit(&model)?;
    let net = Network::new(model.clone())?;
    let count = net.count_parameters();
    let mut text = audit_table(&rows);
    text.push_str("\nlayer parameters\n");
    for l in &count.layers {
        let _ = writeln!(text, "  {:<40} {:>12}", l.name, thousands(l.count));
    }
    let run = RunDir::create(&a.out)?;
    run.write_json("resolved-config.json", &json!({ "command": "params", "model": model }))?;
    run.write_json("metrics.json", &json!({ "audit": rows, "parameters": count }))?;
    run.write_text("metrics.txt", &text)?;
    print!("{text}");
    Ok(())
}

fn grad_table(rows: &[GradRow]) -> String {
    let mut out = format!("{:<32} {:>8} {:>12} {:>10}  result\n", "check", "entries", "max rel err", "tolerance");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<32} {:>8} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.checked,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    out
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let mut run = RunDir::create(&a.out)?;
    run.write_json(
        "resolved-config.json",
        &json!({ "command": "gradcheck", "seed": a.seed, "layers_only": a.layers_only, "model": ModelConfig::miniature() }),
    )?;
    run.log("checking layers");
    let mut rows = layer_suite(a.seed)?;
    if !a.layers_only {
        run.log("checking assembled networks");
        rows.extend(model_suite(a.seed)?);
    }
    let text = grad_table(&rows);
    run.write_json("metrics.json", &rows)?;
    run.write_text("metrics.txt", &text)?;
    print!("{text}");
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return invalid(format!("{failed} gradient checks failed"));
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Outcome {
    if matches!(a.model.model, Some(ModelSelector::Context | ModelSelector::Feature)) {
        return invalid("bench compares fusion strategies of the assembled model");
    }
    if a.model.fusion.is_some() {
        return invalid("bench times every fusion strategy; --fusion does not apply");
    }
    if a.repeats == 0 || a.clips == 0 {
        return invalid("--clips and --repeats must be positive");
    }
    let mut nets = Vec::new();
    for p in &a.checkpoint {
        let n = load_checkpoint(p).with_context(|| format!("loading {}", p.display())).or_invalid()?;
        if n.config.kind != ModelKind::DriverNet {
            return invalid(format!("{} does not hold an assembled model", p.display()));
        }
        nets.push(n);
    }
    let base = match nets.first() {
        Some(n) => n.config.clone(),
        None => resolve_model(&a.model, Preset::Compact, a.seed)?,
    };
    let ds = load_data(&a.data)?;
    check_compatible(&ds, &base).or_invalid()?;
    let mut idx = ds.split_indices(Split::Test);
    if idx.is_empty() {
        idx = (0..ds.len()).collect();
    }
    idx.truncate(a.clips);
    let mut run = RunDir::create(&a.out)?;
    run.write_json(
        "resolved-config.json",
        &json!({ "command": "bench", "data": a.data, "checkpoints": a.checkpoint, "model": base,
                 "clips": idx.len(), "repeats": a.repeats }),
    )?;
    run.log(format!("timing {} clips x {} repeats per strategy", idx.len(), a.repeats));
    let rows = bench_strategies(&base, &nets, &ds, &idx, a.repeats)?;
    let mut text = format!(
        "{:<20} {:>12} {:>12} {:>12} {:>12}\n",
        "model", "parameters", "median ms", "p95 ms", "paper ms"
    );
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<20} {:>12} {:>12.3} {:>12.3} {:>12}",
            r.model,
            thousands(r.parameters),
            r.latency.median_ms,
            r.latency.p95_ms,
            published_cost_ms(base.aggregation, r.strategy)
        );
    }
    text.push_str("encoder and data loading excluded; latencies are hardware-specific\n");
    run.write_json("metrics.json", &rows)?;
    run.write_text("metrics.txt", &text)?;
    print!("{text}");
    Ok(())
}
