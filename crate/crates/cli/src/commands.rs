use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lsr_core::apm::{aab_annotate, decoded_pairs, fill_action_plan, latent_pairs, train_classifier, ActionSource, ApnInput};
use lsr_core::eval::{
    run_ablation, run_experiment, score_planning, streams, AblationRow, AblationSpec, ExperimentConfig, ModelVariant,
    SeedOutcome,
};
use lsr_core::io::{self, fmt_f64, sibling, DatasetFile, LatentFile, Manifest, PlanFile, RoadmapFile};
use lsr_core::mapping::{train, DmMode, EncoderModel};
use lsr_core::planner::plan;
use lsr_core::rng::mix;
use lsr_core::roadmap::{grid_optimize_tau, optimize_tau, Clustering, RoadmapBuilder};
use lsr_core::task::{generate_dataset, render, render_holdout, NoiseModel, TaskKind};
use serde::Serialize;
use serde_json::json;

use crate::{
    AblateArgs, ApmAnnotateArgs, ApmCommand, ApmTrainArgs, BuildArgs, Cli, Command, GenArgs, PlanArgs, RunFile, ScoreArgs,
    TrainArgs, UsageError,
};

pub(crate) fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    let rf = match &cli.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    let mut ctx = Ctx { rf, argv, config: cli.config };
    match cli.command {
        Command::Gen(a) => gen(&mut ctx, a),
        Command::Train(a) => train_cmd(&mut ctx, a),
        Command::Build(a) => build(&mut ctx, a),
        Command::Plan(a) => plan_cmd(&mut ctx, a),
        Command::Apm(ApmCommand::Train(a)) => apm_train(&mut ctx, a),
        Command::Apm(ApmCommand::Annotate(a)) => apm_annotate(&mut ctx, a),
        Command::Score(a) => score(&mut ctx, a),
        Command::Ablate(a) => ablate(&mut ctx, a),
    }
}

struct Ctx {
    rf: RunFile,
    argv: Vec<String>,
    config: Option<PathBuf>,
}

impl Ctx {
    fn manifest(&self, tool: &str) -> Result<Manifest> {
        let mut m = Manifest::new(tool, self.argv.clone());
        if let Some(c) = &self.config {
            m.input(c)?;
        }
        Ok(m)
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| UsageError(format!("--{name} is required (or set paths.{name} in the run file)")).into())
}

fn finish(manifest: &mut Manifest, outputs: &[&Path], manifest_path: &Path) -> Result<()> {
    for p in outputs {
        manifest.output(p)?;
    }
    manifest.write(manifest_path)?;
    Ok(())
}

fn gen(ctx: &mut Ctx, a: GenArgs) -> Result<()> {
    let cfg = &ctx.rf.experiment;
    let task = a.task.unwrap_or(cfg.task);
    let pairs = a.pairs.unwrap_or(cfg.n_pairs);
    let frac = a.action_frac.or(cfg.action_fraction).unwrap_or_else(|| task.default_action_fraction());
    let seed = a.seed.unwrap_or_else(|| ctx.rf.first_seed());
    let out = required(a.out, &ctx.rf.paths.dataset, "out")?;
    let tuples = generate_dataset(task, pairs, frac, cfg.seed_for(seed, streams::DATASET))?;
    let n_action = tuples.iter().filter(|t| t.is_action()).count();
    io::write_dataset(
        &out,
        &DatasetFile {
            task,
            noise: NoiseModel::for_task(task),
            seed,
            action_fraction: frac,
            tuples,
        },
    )?;
    let mut m = ctx.manifest("lsr gen")?;
    m.seeds = vec![seed];
    m.config = json!({ "task": task, "pairs": pairs, "action_fraction": frac });
    finish(&mut m, &[&out], &sibling(&out, ".manifest.json"))?;
    println!("{}: {pairs} pairs ({n_action} action) for task {task}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    epoch: usize,
    beta: String,
    dm: String,
    recon: String,
    kl: String,
    action: String,
    total: String,
    min_action_dist: String,
    max_no_action_dist: String,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("{}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn train_cmd(ctx: &mut Ctx, a: TrainArgs) -> Result<()> {
    let dataset = required(a.dataset, &ctx.rf.paths.dataset, "dataset")?;
    let out = required(a.out, &ctx.rf.paths.model, "out")?;
    let mut cfg = ctx.rf.experiment.clone();
    cfg.ld = a.ld.unwrap_or(cfg.ld);
    cfg.hidden = a.hidden.unwrap_or(cfg.hidden);
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    if a.baseline {
        cfg.loss.gamma = 0.0;
    } else if let Some(g) = a.gamma {
        cfg.loss.gamma = g;
    }
    if let Some(d) = a.static_dm {
        cfg.loss.dm_mode = DmMode::Static;
        cfg.loss.dm = d;
    }
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    let seed = a.seed.unwrap_or_else(|| ctx.rf.first_seed());
    let d = io::read_dataset(&dataset)?;
    let model = EncoderModel::for_task(d.task, cfg.mode, cfg.hidden, cfg.ld, cfg.seed_for(seed, streams::MODEL));
    let (model, trace) = train(model, &d.tuples, &cfg.loss, &cfg.train, cfg.seed_for(seed, streams::TRAIN))?;
    io::write_model(&out, &model)?;
    // Encode with the model as stored, so later stages see the same codes.
    let stored = io::read_model(&out)?;
    let latent_path = a.latent_out.unwrap_or_else(|| sibling(&out, ".latent"));
    io::write_latent(
        &latent_path,
        &LatentFile {
            task: Some(d.task),
            dataset_sha256: Some(io::sha256_file(&dataset)?),
            model_sha256: Some(io::sha256_file(&out)?),
            tuples: stored.encode_dataset(&d.tuples)?,
        },
    )?;
    let trace_path = sibling(&out, ".trace.csv");
    write_rows(
        &trace_path,
        trace.records.iter().map(|r| TraceRow {
            epoch: r.epoch,
            beta: fmt_f64(r.beta),
            dm: fmt_f64(r.dm),
            recon: fmt_f64(r.loss.recon),
            kl: fmt_f64(r.loss.kl),
            action: fmt_f64(r.loss.action),
            total: fmt_f64(r.loss.total),
            min_action_dist: r.min_action_dist.map(fmt_f64).unwrap_or_default(),
            max_no_action_dist: r.max_no_action_dist.map(fmt_f64).unwrap_or_default(),
        }),
    )?;
    let mut m = ctx.manifest("lsr train")?;
    m.seeds = vec![seed];
    m.config = json!({
        "ld": cfg.ld, "hidden": cfg.hidden, "mode": cfg.mode, "loss": cfg.loss, "train": cfg.train,
        "final_dm": trace.final_dm, "final_separation": trace.final_separation,
    });
    m.input(&dataset)?;
    finish(&mut m, &[&out, &latent_path, &trace_path], &sibling(&out, ".manifest.json"))?;
    match trace.final_separation {
        Some((act, no)) => println!(
            "{}: d_m {:.3}, min action distance {act:.4}, max no-action distance {no:.4}",
            out.display(),
            trace.final_dm
        ),
        None => println!("{}: d_m {:.3}", out.display(), trace.final_dm),
    }
    Ok(())
}

fn build(ctx: &mut Ctx, a: BuildArgs) -> Result<()> {
    let latent = required(a.latent, &ctx.rf.paths.latent, "latent")?;
    let out = required(a.out, &ctx.rf.paths.roadmap, "out")?;
    let cfg = &ctx.rf.experiment;
    let metric = a.metric.unwrap_or(cfg.loss.metric);
    let clustering = a.clustering.unwrap_or(cfg.clustering);
    let c_max = a.cmax.unwrap_or(cfg.c_max);
    let (lo, hi) = (a.tau_min.unwrap_or(cfg.tau_min), a.tau_max.unwrap_or(cfg.tau_max));
    let l = io::read_latent(&latent)?;
    let builder = RoadmapBuilder::new(&l.tuples, metric, clustering)?;
    let (roadmap, psi) = match (a.tau, a.grid) {
        (Some(t), _) => (builder.build(t)?, builder.psi(t, c_max)),
        (None, Some(steps)) => {
            let s = grid_optimize_tau(&builder, lo, hi, c_max, steps)?;
            (s.roadmap, s.psi)
        }
        (None, None) => {
            let s = optimize_tau(&builder, lo, hi, c_max, cfg.tau_tol)?;
            (s.roadmap, s.psi)
        }
    };
    let annotations = if a.annotate { Some(aab_annotate(&roadmap)?) } else { None };
    let (tau, n_regions, n_edges, comps) = (roadmap.tau, roadmap.n_regions(), roadmap.edges.len(), roadmap.components);
    io::write_roadmap(
        &out,
        &RoadmapFile {
            roadmap,
            latent_sha256: Some(io::sha256_file(&latent)?),
            annotations,
        },
    )?;
    let mut m = ctx.manifest("lsr build")?;
    m.config = json!({
        "metric": metric, "clustering": clustering, "c_max": c_max, "tau_min": lo, "tau_max": hi,
        "tau": tau, "psi": psi, "regions": n_regions, "edges": n_edges, "components": comps,
    });
    m.input(&latent)?;
    finish(&mut m, &[&out], &sibling(&out, ".manifest.json"))?;
    println!(
        "{}: tau {tau:.6}, {n_regions} regions, {n_edges} edges, {comps} component(s)",
        out.display()
    );
    Ok(())
}

fn model_task(model: &EncoderModel, flag: Option<TaskKind>) -> Result<TaskKind> {
    flag.or(model.task)
        .ok_or_else(|| UsageError("the model does not record its task; pass --task".into()).into())
}

fn plan_cmd(ctx: &mut Ctx, a: PlanArgs) -> Result<()> {
    let roadmap_path = required(a.roadmap, &ctx.rf.paths.roadmap, "roadmap")?;
    let model_path = required(a.model, &ctx.rf.paths.model, "model")?;
    let out = required(a.out, &ctx.rf.paths.plan, "out")?;
    let apn_path = a.apn.or_else(|| ctx.rf.paths.apn.clone());
    let rf = io::read_roadmap(&roadmap_path)?;
    let model = io::read_model(&model_path)?;
    let task = model_task(&model, None)?;
    let space = task.space();
    for id in [a.start_state, a.goal_state] {
        if id >= space.len() {
            return Err(UsageError(format!("state id {id} out of range (task {task} has {} states)", space.len())).into());
        }
    }
    let seed = a.seed.unwrap_or_else(|| ctx.rf.first_seed());
    let start = render(task, space.state(a.start_state), mix(seed, 1))?;
    let goal = render(task, space.state(a.goal_state), mix(seed, 2))?;
    let mut plans = plan(&rf.roadmap, &model, &start, &goal, &ctx.rf.experiment.planner)?;
    let apn = apn_path.as_deref().map(io::read_apn).transpose()?;
    let source = match (&apn, &rf.annotations) {
        (Some(n), _) => Some(ActionSource::Apn(n)),
        (None, Some(ann)) => Some(ActionSource::Aab(&rf.roadmap, ann)),
        (None, None) => None,
    };
    if let Some(src) = &source {
        plans = plans.into_iter().map(|p| fill_action_plan(p, src)).collect::<lsr_core::Result<_>>()?;
    }
    let file = PlanFile::new(task, a.start_state, a.goal_state, seed, &plans)?;
    io::write_plans(&out, &file)?;
    let mut m = ctx.manifest("lsr plan")?;
    m.seeds = vec![seed];
    m.config = json!({ "start_state": a.start_state, "goal_state": a.goal_state, "paths": file.plans.len() });
    m.input(&roadmap_path)?.input(&model_path)?;
    if let Some(p) = &apn_path {
        m.input(p)?;
    }
    finish(&mut m, &[&out], &sibling(&out, ".manifest.json"))?;
    for p in &file.plans {
        let actions: Vec<String> = p.actions.iter().map(ToString::to_string).collect();
        println!("states {:?} actions [{}] fallback {}", p.states, actions.join(" "), p.fallback_depth);
    }
    Ok(())
}

fn apm_train(ctx: &mut Ctx, a: ApmTrainArgs) -> Result<()> {
    let out = required(a.out, &ctx.rf.paths.apn, "out")?;
    let mut cfg = ctx.rf.apn;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    let seed = a.seed.unwrap_or_else(|| ctx.rf.first_seed());
    let mut m = ctx.manifest("lsr apm train")?;
    let (task, input, pairs) = if a.decoded {
        let dpath = required(a.dataset, &ctx.rf.paths.dataset, "dataset")?;
        let mpath = required(a.model, &ctx.rf.paths.model, "model")?;
        let d = io::read_dataset(&dpath)?;
        let model = io::read_model(&mpath)?;
        m.input(&dpath)?.input(&mpath)?;
        (d.task, ApnInput::Decoded, decoded_pairs(d.task, &model, &d.tuples)?)
    } else {
        let lpath = required(a.latent, &ctx.rf.paths.latent, "latent")?;
        let l = io::read_latent(&lpath)?;
        let task = a
            .task
            .or(l.task)
            .ok_or_else(|| UsageError("the encoded dataset does not record its task; pass --task".into()))?;
        m.input(&lpath)?;
        (task, ApnInput::Latent, latent_pairs(task, &l.tuples)?)
    };
    let (apn, trace) = train_classifier(task, input, &pairs, &cfg, ctx.rf.experiment.seed_for(seed, streams::APN))?;
    io::write_apn(&out, &apn, seed)?;
    m.seeds = vec![seed];
    m.config = json!({ "apn": cfg, "trace": trace });
    finish(&mut m, &[&out], &sibling(&out, ".manifest.json"))?;
    println!(
        "{}: validation accuracy {:.2}% (epoch {}), train accuracy {:.2}%",
        out.display(),
        trace.best_validation_accuracy,
        trace.best_epoch,
        trace.train_accuracy
    );
    Ok(())
}

fn apm_annotate(ctx: &mut Ctx, a: ApmAnnotateArgs) -> Result<()> {
    let input = required(a.roadmap, &ctx.rf.paths.roadmap, "roadmap")?;
    let out = a.out.unwrap_or_else(|| input.clone());
    let mut m = ctx.manifest("lsr apm annotate")?;
    m.input(&input)?;
    let mut rf = io::read_roadmap(&input)?;
    rf.annotations = Some(aab_annotate(&rf.roadmap)?);
    io::write_roadmap(&out, &rf)?;
    finish(&mut m, &[&out], &sibling(&out, ".manifest.json"))?;
    println!("{}: annotated {} edges", out.display(), rf.roadmap.edges.len());
    Ok(())
}

fn score(ctx: &mut Ctx, a: ScoreArgs) -> Result<()> {
    let mut cfg = ctx.rf.experiment.clone();
    cfg.n_queries = a.queries.unwrap_or(cfg.n_queries);
    cfg.holdout = a.holdout.unwrap_or(cfg.holdout);
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(t) = a.task {
        cfg.task = t;
    }
    let roadmap_path = a.roadmap.or_else(|| ctx.rf.paths.roadmap.clone());
    match roadmap_path {
        Some(rp) => score_roadmap(ctx, &cfg, &rp, a.model, a.task, a.out),
        None => {
            let out = required(a.out, &ctx.rf.paths.out, "out")?;
            let rows = run_experiment(&cfg)
                .into_iter()
                .map(|(seed, r)| row(experiment_label(&cfg), seed, r))
                .collect::<Vec<_>>();
            write_tables(ctx, "lsr score", &cfg, &rows, &out)
        }
    }
}

fn experiment_label(cfg: &ExperimentConfig) -> String {
    format!("task={} mode={} gamma={}", cfg.task, cfg.mode.name(), cfg.loss.gamma)
}

fn row(config: String, seed: u64, r: lsr_core::Result<SeedOutcome>) -> AblationRow {
    match r {
        Ok(o) => AblationRow {
            config,
            seed,
            outcome: Some(o),
            error: None,
        },
        Err(e) => AblationRow {
            config,
            seed,
            outcome: None,
            error: Some(e.to_string()),
        },
    }
}

fn score_roadmap(
    ctx: &mut Ctx,
    cfg: &ExperimentConfig,
    roadmap_path: &Path,
    model: Option<PathBuf>,
    task: Option<TaskKind>,
    out: Option<PathBuf>,
) -> Result<()> {
    let model_path = required(model, &ctx.rf.paths.model, "model")?;
    let out = required(out, &ctx.rf.paths.out, "out")?;
    let rf = io::read_roadmap(roadmap_path)?;
    let model = io::read_model(&model_path)?;
    let task = model_task(&model, task)?;
    let seed = cfg.seeds.first().copied().unwrap_or(1);
    let holdout = render_holdout(task, cfg.holdout, cfg.seed_for(seed, streams::HOLDOUT));
    let report = score_planning(
        task,
        &rf.roadmap,
        &model,
        &holdout,
        cfg.n_queries,
        cfg.seed_for(seed, streams::QUERIES),
        &cfg.planner,
    )?;
    let map = &rf.roadmap;
    let outcome = SeedOutcome {
        seed,
        final_dm: model.final_dm,
        min_action_dist: None,
        max_no_action_dist: None,
        tau: map.tau,
        regions: map.n_regions(),
        edges: map.edges.len(),
        components: map.components,
        score: report.clone(),
    };
    let label = roadmap_path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    io::write_metrics(&out, &[row(label, seed, Ok(outcome))])?;
    let mut m = ctx.manifest("lsr score")?;
    m.seeds = vec![seed];
    m.config = json!({ "task": task, "n_queries": cfg.n_queries, "holdout": cfg.holdout, "report": report });
    m.input(roadmap_path)?.input(&model_path)?;
    finish(&mut m, &[&out], &sibling(&out, ".manifest.json"))?;
    println!(
        "%All {:.1}  %Any {:.1}  %Trans {:.1}  ({} queries, {} unreachable)",
        report.pct_all, report.pct_any, report.pct_trans, report.n_queries, report.unreachable
    );
    Ok(())
}

fn write_tables(ctx: &Ctx, tool: &str, cfg: &ExperimentConfig, rows: &[AblationRow], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("{}", out.display()))?;
    let metrics = out.join("metrics.csv");
    let summary = out.join("summary.csv");
    io::write_metrics(&metrics, rows)?;
    io::write_summary(&summary, rows)?;
    let mut m = ctx.manifest(tool)?;
    m.seeds = cfg.seeds.clone();
    m.config = serde_json::to_value(cfg)?;
    finish(&mut m, &[&metrics, &summary], &out.join("manifest.json"))?;
    for s in io::summarize(rows) {
        println!(
            "{:<32} %All {:6.1} ± {:4.1}  %Any {:6.1} ± {:4.1}  %Trans {:6.1} ± {:4.1}  ({} seeds, {} failed)",
            s.config,
            s.pct_all_mean,
            s.pct_all_std,
            s.pct_any_mean,
            s.pct_any_std,
            s.pct_trans_mean,
            s.pct_trans_std,
            s.seeds,
            s.failed
        );
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} seed {}: {}", r.config, r.seed, r.error.as_deref().unwrap_or_default());
    }
    if rows.iter().all(|r| r.error.is_some()) {
        bail!("every run failed");
    }
    Ok(())
}

/// Parses `key=v1,v2,...` into an ablation.
pub(crate) fn parse_spec(spec: &str) -> Result<AblationSpec, UsageError> {
    let bad = |d: String| UsageError(format!("invalid --spec '{spec}': {d}"));
    let (key, values) = spec.split_once('=').ok_or_else(|| bad("expected key=values".into()))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(bad("no values".into()));
    }
    fn all<T: std::str::FromStr>(vs: &[&str]) -> Option<Vec<T>> {
        vs.iter().map(|v| v.parse().ok()).collect()
    }
    let parsed = match key {
        "cmax" => all(&values).map(AblationSpec::CmaxSweep),
        "ld" => all(&values).map(AblationSpec::LatentDim),
        "pairs" => all(&values).map(AblationSpec::DatasetSize),
        "clustering" => all::<Clustering>(&values).map(AblationSpec::Clustering),
        "dm" => values
            .iter()
            .map(|v| if *v == "dynamic" { Some(None) } else { v.parse().ok().map(Some) })
            .collect::<Option<Vec<_>>>()
            .map(AblationSpec::DmMode),
        "mode" => values
            .iter()
            .map(|v| {
                let (mode, gamma) = v.split_once(':')?;
                Some(ModelVariant {
                    mode: mode.parse().ok()?,
                    gamma: gamma.parse().ok()?,
                })
            })
            .collect::<Option<Vec<_>>>()
            .map(AblationSpec::EncoderMode),
        other => return Err(bad(format!("unknown key '{other}'"))),
    };
    parsed.ok_or_else(|| bad("malformed value".into()))
}

fn ablate(ctx: &mut Ctx, a: AblateArgs) -> Result<()> {
    let spec = parse_spec(&a.spec)?;
    let out = required(a.out, &ctx.rf.paths.out, "out")?;
    let mut cfg = ctx.rf.experiment.clone();
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    let rows = run_ablation(&cfg, &spec);
    write_tables(ctx, "lsr ablate", &cfg, &rows, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!(parse_spec("cmax=1,20").unwrap(), AblationSpec::CmaxSweep(vec![1, 20]));
        assert_eq!(parse_spec("dm=dynamic,100").unwrap(), AblationSpec::DmMode(vec![None, Some(100.0)]));
        assert!(matches!(parse_spec("mode=ae:0,vae:100").unwrap(), AblationSpec::EncoderMode(v) if v.len() == 2));
        assert!(matches!(parse_spec("clustering=avg,epsilon:0.5").unwrap(), AblationSpec::Clustering(v) if v.len() == 2));
        assert!(parse_spec("cmax=x").is_err());
        assert!(parse_spec("bogus=1").is_err());
        assert!(parse_spec("cmax").is_err());
    }
}
