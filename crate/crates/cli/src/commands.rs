//! One function per subcommand. Each returns the report and whether its
//! built-in assertions passed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use corpusseg::losses::{gradcheck, DEFAULT_FD_STEP};
use corpusseg::metrics::{class_iou, class_uoi, gradient_sweep, iou_grad_fpfn, ConfusionCounts, Exclusion};
use corpusseg::proposals::{
    read_hard, read_rerank_corpus, read_rerank_root, read_with, write_rerank_corpus, write_text,
};
use corpusseg::report::{fmt_sig, RunReport, Table};
use corpusseg::rerank::{
    oracle_select, random_selection_mean, ranking_groups, select_all, selection_image_quality, selection_mean_iou,
    train_ranker, RankModel, RankerConfig, RerankImage, Strategy, DEFAULT_BACKGROUND_PENALTY,
};
use corpusseg::synth::{gen_rerank_corpus, ProposalConfig, RerankCorpusConfig};
use corpusseg::trainer::{ce_checkpoint, train, warm_start_protocol, Params, TrainHistory};
use corpusseg::{confusion_counts, Error, GridShape, Objective};

use crate::config::{ConfigFile, Resolved};
use crate::Usage;

pub struct Outcome {
    pub report: RunReport,
    pub passed: bool,
}

impl Outcome {
    fn ok(report: RunReport) -> Self {
        Self { report, passed: true }
    }
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn history_table(name: &str, history: &TrainHistory) -> Table {
    let mut table = Table::new(name, &["iteration", "loss", "meanIOU", "bgFraction"]);
    for e in &history.entries {
        table.push(vec![
            e.iteration.to_string(),
            fmt_sig(e.loss),
            fmt_sig(e.mean_iou),
            fmt_sig(e.bg_fraction),
        ]);
    }
    table
}

pub fn eval(preds: &[PathBuf], gts: &[PathBuf]) -> anyhow::Result<Outcome> {
    if preds.is_empty() || gts.is_empty() {
        return Err(Usage("eval needs at least one --pred and one --gt file".into()).into());
    }
    if preds.len() != gts.len() {
        return Err(Usage(format!(
            "{} prediction files but {} ground-truth files",
            preds.len(),
            gts.len()
        ))
        .into());
    }
    let mut failures = Vec::new();
    let mut load = |paths: &[PathBuf]| {
        paths
            .iter()
            .filter_map(|p| read_hard(p).map_err(|e| failures.push(e.to_string())).ok())
            .collect::<Vec<_>>()
    };
    let (pred, gt) = (load(preds), load(gts));
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("error: {f}");
        }
        bail!("{} file(s) could not be read", failures.len());
    }
    let counts: ConfusionCounts = confusion_counts(&pred, &gt)?;
    let (iou, uoi) = (class_iou(&counts), class_uoi(&counts));

    let mut report = RunReport::new("eval", None);
    report
        .config("pred", join_paths(preds))
        .config("gt", join_paths(gts))
        .metric_text("images", pred.len())
        .metric_text("classes", counts.classes());
    match iou.mean() {
        Some(m) => report.metric("mean_iou", m),
        None => report.metric_text("mean_iou", "undefined"),
    };
    match uoi.mean() {
        Some(m) => report.metric("mean_uoi", m),
        None => report.metric_text("mean_uoi", "undefined"),
    };
    let excluded: Vec<String> = iou.excluded.keys().map(|k| k.to_string()).collect();
    report.metric_text("excluded", excluded.join(" "));
    let degenerate: Vec<String> = uoi
        .excluded
        .iter()
        .filter(|(_, why)| **why == Exclusion::Degenerate)
        .map(|(k, _)| k.to_string())
        .collect();
    report.metric_text("uoi_degenerate", degenerate.join(" "));

    let mut table = Table::new("per_class", &["class", "tp", "fp", "fn", "iou", "uoi"]);
    for k in 0..counts.classes() {
        let cell = |v: Option<&f64>| v.map_or(String::new(), |x| fmt_sig(*x));
        table.push(vec![
            k.to_string(),
            counts.tp(k).to_string(),
            counts.fp(k).to_string(),
            counts.fn_(k).to_string(),
            cell(iou.values.get(&k)),
            cell(uoi.values.get(&k)),
        ]);
    }
    report.tables.push(table);
    Ok(Outcome::ok(report))
}

pub struct GradcheckArgs {
    pub seed: u64,
    pub trials: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub step: f64,
    pub tolerance: f64,
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> anyhow::Result<Outcome> {
    if args.trials == 0 {
        return Err(Usage("trials must be at least 1".into()).into());
    }
    let shape = GridShape::new(args.height, args.width, args.classes).map_err(|e| Usage(e.to_string()))?;
    let worst = gradcheck(args.seed, args.trials, shape, args.step)?;

    let mut report = RunReport::new("gradcheck", Some(args.seed));
    report
        .config("trials", args.trials)
        .config("height", args.height)
        .config("width", args.width)
        .config("classes", args.classes)
        .config("step", args.step)
        .config("tolerance", args.tolerance);
    let mut passed = true;
    for (objective, err) in &worst {
        let name = match objective {
            Objective::Combined { .. } => "combined".to_string(),
            other => other.name(),
        };
        report.metric(&format!("max_rel_error.{name}"), *err);
        passed &= *err < args.tolerance;
    }
    report.metric_text("passed", passed);
    Ok(Outcome { report, passed })
}

pub struct SweepArgs {
    pub gt: f64,
    pub fp_range: (f64, f64),
    pub fn_range: (f64, f64),
    pub steps: usize,
    pub csv: Option<PathBuf>,
}

pub fn sweep(args: &SweepArgs) -> anyhow::Result<Outcome> {
    let table = gradient_sweep(args.gt, args.fp_range, args.fn_range, args.steps).map_err(|e| Usage(e.to_string()))?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.csv {
        write_text(path, &table.to_csv())?;
    }
    let checks = table.check_monotonicity();

    let mut report = RunReport::new("sweep", None);
    report
        .config("gt", args.gt)
        .config("fp_min", args.fp_range.0)
        .config("fp_max", args.fp_range.1)
        .config("fn_min", args.fn_range.0)
        .config("fn_max", args.fn_range.1)
        .config("steps", args.steps)
        .config(
            "csv",
            args.csv.as_ref().map_or("none".into(), |p| p.display().to_string()),
        );
    report
        .metric_text("rows", table.rows.len())
        .metric_text("fn_values_kept", table.fn_values.len())
        .metric_text("check.iou_fp_decreasing", checks.iou_fp_decreasing)
        .metric_text("check.uoi_fp_constant", checks.uoi_fp_constant)
        .metric_text("check.uoi_fn_increasing", checks.uoi_fn_increasing)
        .metric_text("warnings", table.warnings.len());
    if let Ok(g) = iou_grad_fpfn(args.gt, 0.0, 0.0) {
        report.metric("spot.dIOU_dFP_at_zero", g.d_fp);
    }
    for v in checks.violations.iter().take(10) {
        eprintln!("violation: {v}");
    }
    let passed = checks.all_pass();
    report.metric_text("passed", passed);
    Ok(Outcome { report, passed })
}

fn load_config(config: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Resolved> {
    let file = ConfigFile::load(config)?;
    Resolved::new(&file, seed).map_err(|e| Usage(e.to_string()).into())
}

fn load_params(path: &Path) -> anyhow::Result<Params> {
    Ok(read_with(path, Params::parse)?)
}

/// Prints the partial history of a diverged run before failing.
fn report_divergence(err: Error) -> anyhow::Error {
    if let Error::Divergence { history, .. } = &err {
        eprint!(
            "{}",
            TrainHistory {
                entries: history.clone()
            }
            .to_csv()
        );
    }
    err.into()
}

pub fn train_cmd(
    config: Option<&Path>,
    seed: Option<u64>,
    history_out: Option<&Path>,
    checkpoint_out: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let resolved = load_config(config, seed)?;
    let data = resolved.protocol.dataset()?;
    let warm = resolved.warm_start.as_deref().map(load_params).transpose()?;
    let outcome = train(&data, &resolved.train_config(), warm.as_ref()).map_err(report_divergence)?;
    if let Some(path) = history_out {
        write_text(path, &outcome.history.to_csv())?;
    }
    if let Some(path) = checkpoint_out {
        write_text(path, &outcome.params.to_text())?;
    }

    let mut report = RunReport::new("train", Some(resolved.protocol.seed));
    resolved.echo(&mut report);
    report.metric("data.bg_fraction", data.background_fraction());
    if let Some(last) = outcome.history.last() {
        report
            .metric("final.loss", last.loss)
            .metric("final.mean_iou", last.mean_iou)
            .metric("final.bg_fraction", last.bg_fraction);
    }
    report.tables.push(history_table("history", &outcome.history));
    Ok(Outcome::ok(report))
}

pub fn warmstart_cmd(
    config: Option<&Path>,
    seed: Option<u64>,
    checkpoint: Option<&Path>,
    history_dir: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let resolved = load_config(config, seed)?;
    let protocol = resolved.protocol;
    let data = protocol.dataset()?;
    let mut report = RunReport::new("warmstart", Some(protocol.seed));
    resolved.echo(&mut report);

    let start = match checkpoint.or(resolved.warm_start.as_deref()) {
        Some(path) => {
            report.config("checkpoint", path.display());
            load_params(path)?
        }
        None => {
            report.config("checkpoint", "cross-entropy warm-up");
            let warm = ce_checkpoint(&data, &protocol).map_err(report_divergence)?;
            if let Some(last) = warm.history.last() {
                report.metric("checkpoint.mean_iou", last.mean_iou);
            }
            warm.params
        }
    };
    let result = warm_start_protocol(&data, &start, &protocol).map_err(report_divergence)?;
    if let Some(dir) = history_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut summary = Table::new(
        "branches",
        &["branch", "final_loss", "final_mean_iou", "final_bg_fraction"],
    );
    for branch in &result.branches {
        let name = match branch.objective {
            Objective::Combined { .. } => "combined".to_string(),
            other => other.name(),
        };
        let last = branch
            .outcome
            .history
            .last()
            .expect("training logs its final iteration");
        report.metric(&format!("{name}.final_mean_iou"), last.mean_iou);
        summary.push(vec![
            name.clone(),
            fmt_sig(last.loss),
            fmt_sig(last.mean_iou),
            fmt_sig(last.bg_fraction),
        ]);
        if let Some(dir) = history_dir {
            write_text(&dir.join(format!("{name}.csv")), &branch.outcome.history.to_csv())?;
        }
    }
    let iou_of = |o: Objective| result.branch(o).map_or(f64::NAN, |b| b.final_mean_iou());
    let (ce, uoi) = (iou_of(Objective::CrossEntropy), iou_of(Objective::Uoi));
    let combined = iou_of(Objective::Combined { alpha: protocol.alpha });
    report
        .metric_text("uoi_ge_ce", uoi >= ce)
        .metric_text("combined_ge_min", combined >= uoi.min(ce));
    report.tables.push(summary);
    Ok(Outcome::ok(report))
}

pub struct RerankArgs {
    pub pred_dir: PathBuf,
    pub proposal_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub strategy: String,
    pub model: Option<PathBuf>,
    pub background_penalty: f64,
    pub seed: u64,
}

fn strategy_row(table: &mut Table, name: &str, images: &[RerankImage], picks: &[usize]) -> anyhow::Result<f64> {
    let corpus = selection_mean_iou(images, picks)?;
    let per_image = selection_image_quality(images, picks)?;
    table.push(vec![name.to_string(), fmt_sig(corpus), fmt_sig(per_image)]);
    Ok(corpus)
}

pub fn rerank(args: &RerankArgs) -> anyhow::Result<Outcome> {
    let strategy = match args.strategy.as_str() {
        "kl" => Strategy::Kl {
            background_penalty: args.background_penalty,
        },
        "ranker" => Strategy::Ranker,
        "oracle" => Strategy::Oracle,
        "random" => Strategy::Random,
        other => {
            return Err(Usage(format!(
                "unknown strategy {other:?}; expected kl, ranker, oracle or random"
            ))
            .into())
        }
    };
    let model = match (&args.model, strategy) {
        (Some(path), _) => Some(read_with(path, RankModel::parse)?),
        (None, Strategy::Ranker) => return Err(Usage("--strategy ranker needs --model".into()).into()),
        (None, _) => None,
    };
    let images = read_rerank_corpus(&args.pred_dir, &args.proposal_dir, Some(&args.gt_dir))?;
    let picks = select_all(strategy, &images, model.as_ref(), args.seed)?;
    let oracle = select_all(Strategy::Oracle, &images, None, args.seed)?;
    let first = vec![0; images.len()];

    let mut report = RunReport::new("rerank", Some(args.seed));
    report
        .config("pred_dir", args.pred_dir.display())
        .config("proposal_dir", args.proposal_dir.display())
        .config("gt_dir", args.gt_dir.display())
        .config("strategy", strategy.name())
        .config("background_penalty", args.background_penalty)
        .config(
            "model",
            args.model.as_ref().map_or("none".into(), |p| p.display().to_string()),
        );
    let mut rows = Table::new("strategies", &["strategy", "corpus_mean_iou", "mean_image_quality"]);
    let selected = strategy_row(&mut rows, strategy.name(), &images, &picks)?;
    let oracle_iou = strategy_row(&mut rows, "oracle", &images, &oracle)?;
    let first_iou = strategy_row(&mut rows, "first", &images, &first)?;
    report
        .metric_text("images", images.len())
        .metric("mean_iou", selected)
        .metric("oracle.mean_iou", oracle_iou)
        .metric("first.mean_iou", first_iou);

    let mut per_image = Table::new("selections", &["image", "selected", "oracle", "oracle_quality"]);
    for ((im, &m), &o) in images.iter().zip(&picks).zip(&oracle) {
        let (_, quality) = oracle_select(&im.set, im.gt.as_ref().expect("ground truth was loaded"))?;
        per_image.push(vec![
            im.id().to_string(),
            m.to_string(),
            o.to_string(),
            fmt_sig(quality),
        ]);
    }
    report.tables.push(rows);
    report.tables.push(per_image);
    Ok(Outcome::ok(report))
}

pub fn trainranker(dirs: &[PathBuf], model_out: &Path, cfg: RankerConfig) -> anyhow::Result<Outcome> {
    if dirs.is_empty() {
        return Err(Usage("trainranker needs at least one training corpus directory".into()).into());
    }
    let mut images = Vec::new();
    for dir in dirs {
        images.extend(read_rerank_root(dir)?);
    }
    let model = train_ranker(&ranking_groups(&images)?, &cfg)?;
    write_text(model_out, &model.to_text())?;
    let picks = select_all(Strategy::Ranker, &images, Some(&model), cfg.seed)?;

    let mut report = RunReport::new("trainranker", Some(cfg.seed));
    report
        .config("train_dirs", join_paths(dirs))
        .config("model_out", model_out.display())
        .config("lambda", cfg.lambda)
        .config("epochs", cfg.epochs)
        .config("learning_rate", cfg.learning_rate);
    report
        .metric_text("images", images.len())
        .metric_text("dim", model.dim())
        .metric("weight_norm", model.norm())
        .metric("train.mean_iou", selection_mean_iou(&images, &picks)?)
        .metric("train.random_mean_iou", random_selection_mean(&images, 20, cfg.seed)?);
    Ok(Outcome::ok(report))
}

pub struct GenCorpusArgs {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub images: usize,
    pub proposals: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub coarse: usize,
    pub flip_rate: f64,
    pub include_gt: bool,
    pub embed_pred: bool,
}

pub fn gencorpus(args: &GenCorpusArgs) -> anyhow::Result<Outcome> {
    let cfg = RerankCorpusConfig {
        seed: args.seed,
        images: args.images,
        height: args.height,
        width: args.width,
        classes: args.classes,
        embed_pred: args.embed_pred,
        proposals: ProposalConfig {
            count: args.proposals,
            flip_rate: args.flip_rate,
            include_gt: args.include_gt,
            coarse_h: args.coarse,
            coarse_w: args.coarse,
            ..ProposalConfig::default()
        },
        ..RerankCorpusConfig::default()
    };
    let images = gen_rerank_corpus(&cfg).map_err(|e| Usage(e.to_string()))?;
    write_rerank_corpus(&args.out_dir, &images)?;

    let mut report = RunReport::new("gencorpus", Some(args.seed));
    report
        .config("out_dir", args.out_dir.display())
        .config("images", args.images)
        .config("proposals", args.proposals)
        .config("height", args.height)
        .config("width", args.width)
        .config("classes", args.classes)
        .config("coarse", args.coarse)
        .config("flip_rate", args.flip_rate)
        .config("bg_fraction", cfg.bg_fraction)
        .config("include_gt", args.include_gt)
        .config("embed_pred", args.embed_pred);
    report.metric_text("images_written", images.len());
    Ok(Outcome::ok(report))
}

pub const DEFAULT_PENALTY: f64 = DEFAULT_BACKGROUND_PENALTY;
pub const DEFAULT_STEP: f64 = DEFAULT_FD_STEP;
