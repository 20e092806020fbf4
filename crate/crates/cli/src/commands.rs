use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rmsh_core::bounds::{effective_delta_range, NeighborMode};
use rmsh_core::data::{
    build_similarity, generate_synthetic, read_features, read_labels, write_features, write_labels,
    Dataset, Modality,
};
use rmsh_core::eval::{evaluate, write_pr_csv, EvalConfig, Task};
use rmsh_core::index::{
    distance_histogram, read_codes, search_topk, write_codes, PackedCodes, DEFAULT_EDGES,
};
use rmsh_core::model::{load_checkpoint, save_checkpoint, HashModel};
use rmsh_core::trainer::{fit_with, DeltaSetting, EpochMetrics, FitResult, TrainConfig};
use rmsh_core::{Error, Exec, Result};
use serde::Serialize;

use crate::config::Config;
use crate::manifest::RunManifest;

pub struct Ctx {
    pub config: Config,
    pub out_dir: PathBuf,
    pub quiet: bool,
    pub seed: Option<u64>,
}

impl Ctx {
    pub fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[rmsh] {}", msg.as_ref());
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn manifest(&self, subcommand: &str, config: &impl Serialize) -> Result<RunManifest> {
        Ok(RunManifest::new(
            subcommand,
            self.seed,
            serde_json::to_value(config)?,
        ))
    }
}

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn parse_neighbor_mode(s: &str) -> std::result::Result<NeighborMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown neighbour mode {s:?}, expected cardinality or exact"))
}

/// Paths of the three files making up one split.
pub struct SplitFiles {
    pub image: PathBuf,
    pub text: PathBuf,
    pub labels: PathBuf,
}

impl SplitFiles {
    pub fn new(dir: &Path, prefix: &str) -> Self {
        Self {
            image: dir.join(format!("{prefix}.image.feat")),
            text: dir.join(format!("{prefix}.text.feat")),
            labels: dir.join(format!("{prefix}.labels")),
        }
    }

    fn all(&self) -> [&Path; 3] {
        [&self.image, &self.text, &self.labels]
    }

    pub fn load(&self) -> Result<Dataset> {
        Dataset::new(
            read_features(&self.image, Modality::Image)?,
            read_features(&self.text, Modality::Text)?,
            read_labels(&self.labels)?,
        )
    }

    fn write(&self, ds: &Dataset) -> Result<()> {
        write_features(&self.image, &ds.image)?;
        write_features(&self.text, &ds.text)?;
        write_labels(&self.labels, &ds.labels)
    }
}

pub struct BoundsArgs {
    pub labels: PathBuf,
    pub k: Option<u32>,
    pub confidence: Option<f64>,
    pub mode: Option<NeighborMode>,
}

pub fn bounds(ctx: &Ctx, args: BoundsArgs) -> Result<()> {
    let labels = read_labels(&args.labels)?;
    let train = &ctx.config.train;
    let k = match args.k {
        Some(k) => k,
        None => u32::try_from(train.k)
            .map_err(|_| Error::Config(format!("k = {} too large", train.k)))?,
    };
    let confidence = args.confidence.unwrap_or(train.confidence);
    let mode = args.mode.unwrap_or(train.neighbor_mode);
    let report = effective_delta_range(&labels, k, confidence, mode)?;
    let path = ctx.out("bounds.json");
    write_json(&path, &report)?;
    let mut m = ctx.manifest(
        "bounds",
        &serde_json::json!({ "K": k, "confidence": confidence, "mode": mode }),
    )?;
    m.input(&args.labels)?;
    m.output(&path)?;
    m.write(&ctx.out_dir)?;
    if let Some(d) = &report.diagnostic {
        ctx.log(format!("interval empty: {d}"));
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn gen(ctx: &Ctx) -> Result<()> {
    let g = &ctx.config.gen;
    let ds = generate_synthetic(&g.synthetic())?;
    let (train, query) = ds.split(g.n_train)?;
    let mut m = ctx.manifest("gen", g)?;
    for (prefix, part) in [("train", &train), ("query", &query)] {
        let files = SplitFiles::new(&ctx.out_dir, prefix);
        files.write(part)?;
        for p in files.all() {
            m.output(p)?;
        }
    }
    m.write(&ctx.out_dir)?;
    ctx.log(format!(
        "wrote {} training and {} query samples with {} tags to {}",
        train.len(),
        query.len(),
        train.labels.c(),
        ctx.out_dir.display()
    ));
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    delta: u32,
    bounds: &'a Option<rmsh_core::bounds::BoundsReport>,
    epochs: usize,
    final_epoch: Option<&'a EpochMetrics>,
}

fn metrics_jsonl(metrics: &[EpochMetrics]) -> Result<String> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

fn train_logged(ctx: &Ctx, data: &Dataset, cfg: &TrainConfig) -> Result<FitResult> {
    fit_with(data, cfg, |m| {
        ctx.log(format!(
            "epoch {:>3}  loss {:.5}  intra {:.4}  inter {:.4}  cls {:.4}/{:.4}  quant {:.4}  flips {}",
            m.epoch,
            m.mean_total,
            m.loss.triplet_intra,
            m.loss.triplet_inter,
            m.loss.classification_real,
            m.loss.classification_pseudo,
            m.loss.quantization,
            m.code_flips
        ))
    })
}

pub fn train(ctx: &Ctx, data_dir: &Path, prefix: &str) -> Result<()> {
    let files = SplitFiles::new(data_dir, prefix);
    let data = files.load()?;
    let cfg = &ctx.config.train;
    ctx.log(format!(
        "training on {} samples, K = {}, delta = {}",
        data.len(),
        cfg.k,
        cfg.delta
    ));
    let out = train_logged(ctx, &data, cfg)?;
    if let Some(b) = &out.bounds {
        ctx.log(format!(
            "delta = auto resolved to {} from bounds [{}, {}]",
            out.delta,
            b.delta_min,
            b.delta_max.map_or("none".into(), |v| v.to_string())
        ));
    }
    let ckpt = ctx.out("model.ckpt");
    save_checkpoint(&ckpt, &out.model)?;
    let metrics = ctx.out("metrics.jsonl");
    write_text(&metrics, &metrics_jsonl(&out.metrics)?)?;
    let summary = ctx.out("train_summary.json");
    write_json(
        &summary,
        &TrainSummary {
            delta: out.delta,
            bounds: &out.bounds,
            epochs: out.metrics.len(),
            final_epoch: out.metrics.last(),
        },
    )?;
    let mut m = ctx.manifest("train", cfg)?;
    for p in files.all() {
        m.input(p)?;
    }
    for p in [&ckpt, &metrics, &summary] {
        m.output(p)?;
    }
    m.write(&ctx.out_dir)?;
    Ok(())
}

pub struct EncodeArgs {
    pub checkpoint: PathBuf,
    pub features: PathBuf,
    pub modality: Modality,
    pub output: Option<PathBuf>,
    pub relaxed: Option<PathBuf>,
    pub k: Option<usize>,
}

fn pack_rows(codes: &[i8], k: usize) -> Result<PackedCodes> {
    PackedCodes::pack_with_row_ids(codes, k)
}

pub fn encode(ctx: &Ctx, args: EncodeArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint, None)?;
    let k = model.dims().k;
    if let Some(want) = args.k {
        if want != k {
            return Err(Error::DimensionMismatch {
                path: args.checkpoint.clone(),
                found: format!("K = {k}"),
                expected: format!("K = {want}"),
            });
        }
    }
    let feats = read_features(&args.features, args.modality)?;
    let batch = model.encode_with(&feats, ctx.config.train.exec)?;
    let packed = pack_rows(&batch.binary, k)?;
    let out = args
        .output
        .unwrap_or_else(|| ctx.out(&format!("codes.{}.bin", args.modality)));
    write_codes(&out, &packed)?;
    let mut m = ctx.manifest(
        "encode",
        &serde_json::json!({ "modality": args.modality.to_string(), "K": k }),
    )?;
    m.input(&args.checkpoint)?;
    m.input(&args.features)?;
    m.output(&out)?;
    if let Some(path) = &args.relaxed {
        let mut csv = String::new();
        for i in 0..batch.n {
            let row: Vec<String> = batch.relaxed_row(i).iter().map(|v| v.to_string()).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write_text(path, &csv)?;
        m.output(path)?;
    }
    m.write(&ctx.out_dir)?;
    ctx.log(format!(
        "encoded {} {} rows into {K}-bit codes",
        batch.n,
        args.modality,
        K = k
    ));
    Ok(())
}

#[derive(Serialize)]
struct SearchLine<'a> {
    query: &'a str,
    results: Vec<SearchHit<'a>>,
}

#[derive(Serialize)]
struct SearchHit<'a> {
    id: &'a str,
    distance: u32,
}

pub struct SearchArgs {
    pub database: PathBuf,
    pub queries: Option<PathBuf>,
    pub ids: Vec<String>,
    pub all: bool,
    pub k: usize,
}

pub fn search(ctx: &Ctx, args: SearchArgs) -> Result<()> {
    let db = read_codes(&args.database)?;
    let qpath = args
        .queries
        .clone()
        .unwrap_or_else(|| args.database.clone());
    let queries = read_codes(&qpath)?;
    if db.k() != queries.k() {
        return Err(Error::DimensionMismatch {
            path: qpath,
            found: format!("K = {}", queries.k()),
            expected: format!("K = {} as in {}", db.k(), args.database.display()),
        });
    }
    let rows: Vec<usize> = if args.all {
        (0..queries.len()).collect()
    } else {
        if args.ids.is_empty() {
            return Err(Error::InvalidArgument(
                "give query identifiers with --id or use --all".into(),
            ));
        }
        args.ids
            .iter()
            .map(|id| queries.position(id))
            .collect::<Result<_>>()?
    };
    let results = ctx.config.train.exec.try_map_range(rows.len(), |i| {
        search_topk(&db, queries.row(rows[i]), args.k)
    })?;
    let mut out = String::new();
    for (&q, r) in rows.iter().zip(&results) {
        let line = SearchLine {
            query: &queries.ids()[q],
            results: r
                .hits
                .iter()
                .map(|h| SearchHit {
                    id: &db.ids()[h.row],
                    distance: h.distance,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    let path = ctx.out("search.jsonl");
    write_text(&path, &out)?;
    let mut m = ctx.manifest(
        "search",
        &serde_json::json!({ "k": args.k, "ids": args.ids, "all": args.all }),
    )?;
    m.input(&args.database)?;
    if args.queries.is_some() {
        m.input(&qpath)?;
    }
    m.output(&path)?;
    m.write(&ctx.out_dir)?;
    print!("{out}");
    Ok(())
}

pub struct EvalArgs {
    pub queries: PathBuf,
    pub query_labels: PathBuf,
    pub database: PathBuf,
    pub database_labels: PathBuf,
    pub task: Task,
    pub cutoffs: Option<Vec<usize>>,
    pub distance_hist: bool,
}

pub fn eval(ctx: &Ctx, args: EvalArgs) -> Result<()> {
    let q = read_codes(&args.queries)?;
    let ql = read_labels(&args.query_labels)?;
    let d = read_codes(&args.database)?;
    let dl = read_labels(&args.database_labels)?;
    let mut cfg = ctx.config.eval.clone();
    cfg.exec = ctx.config.train.exec;
    if let Some(c) = args.cutoffs {
        cfg.cutoffs = c;
    }
    let report = evaluate(args.task, &q, &ql, &d, &dl, &cfg)?;
    let report_path = ctx.out("eval.json");
    write_json(&report_path, &report)?;
    let pr_path = ctx.out("pr.csv");
    write_pr_csv(&pr_path, &report.pr_curve)?;
    let mut m = ctx.manifest(
        "eval",
        &serde_json::json!({ "task": args.task, "eval": cfg }),
    )?;
    for p in [
        &args.queries,
        &args.query_labels,
        &args.database,
        &args.database_labels,
    ] {
        m.input(p)?;
    }
    m.output(&report_path)?;
    m.output(&pr_path)?;
    if args.distance_hist {
        let s = build_similarity(&ql, &dl)?;
        let hist = distance_histogram(&q, &d, &s, &DEFAULT_EDGES, cfg.exec)?;
        let path = ctx.out("distance_hist.json");
        write_json(&path, &hist)?;
        m.output(&path)?;
    }
    m.write(&ctx.out_dir)?;
    for (p, v) in &report.ndcg_at {
        ctx.log(format!("{} NDCG@{p} = {v:.4}", report.task));
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// A single grid value applied to a training config.
fn apply_param(cfg: &mut TrainConfig, param: &str, value: &str) -> Result<()> {
    let real = || {
        value.parse::<f64>().map_err(|_| {
            Error::Config(format!("sweep value {value:?} for {param} is not a number"))
        })
    };
    match param {
        "delta" => cfg.delta = value.parse::<DeltaSetting>()?,
        "lambda1" => cfg.lambda1 = real()?,
        "lambda2" => cfg.lambda2 = real()?,
        "lambda3" => cfg.lambda3 = real()?,
        "lambda4" => cfg.lambda4 = real()?,
        "w_p" => cfg.w_p = real()?,
        other => {
            return Err(Error::Config(format!(
                "cannot sweep {other:?}; expected delta, lambda1..lambda4 or w_p"
            )))
        }
    }
    cfg.validate()
}

/// Mean NDCG@p for both retrieval directions, query split against the training split.
pub fn cross_modal_ndcg(
    model: &HashModel,
    train: &Dataset,
    query: &Dataset,
    p: usize,
    exec: Exec,
) -> Result<[f64; 2]> {
    let cfg = EvalConfig {
        cutoffs: vec![p],
        exec,
        ..Default::default()
    };
    let mut out = [0.0; 2];
    for (slot, (qm, task)) in [
        (Modality::Image, Task::ImageToText),
        (Modality::Text, Task::TextToImage),
    ]
    .into_iter()
    .enumerate()
    {
        let qc = model.encode_with(query.features(qm), exec)?;
        let dc = model.encode_with(train.features(qm.other()), exec)?;
        let qp = pack_rows(&qc.binary, qc.k)?;
        let dp = pack_rows(&dc.binary, dc.k)?;
        out[slot] = evaluate(task, &qp, &query.labels, &dp, &train.labels, &cfg)?
            .ndcg(p)
            .unwrap_or(0.0);
    }
    Ok(out)
}

struct SweepRow {
    value: String,
    seed: u64,
    delta: u32,
    in_bounds: Option<bool>,
    ndcg: [f64; 2],
    final_loss: f64,
}

pub fn sweep(ctx: &Ctx, data_dir: &Path) -> Result<()> {
    let sc = &ctx.config.sweep;
    if sc.values.is_empty() || sc.seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one value and one seed".into(),
        ));
    }
    if sc.cutoff == 0 {
        return Err(Error::Config("sweep cutoff must be >= 1".into()));
    }
    let train_files = SplitFiles::new(data_dir, "train");
    let query_files = SplitFiles::new(data_dir, "query");
    let train = train_files.load()?;
    let query = query_files.load()?;
    let base = &ctx.config.train;
    let k =
        u32::try_from(base.k).map_err(|_| Error::Config(format!("k = {} too large", base.k)))?;
    let bounds = effective_delta_range(&train.labels, k, base.confidence, base.neighbor_mode)?;

    let grid: Vec<(String, u64)> = sc
        .values
        .iter()
        .flat_map(|v| sc.seeds.iter().map(move |&s| (v.clone(), s)))
        .collect();
    let runs_dir = ctx.out("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| io_err(&runs_dir, e))?;
    ctx.log(format!(
        "sweeping {} over {} values x {} seeds",
        sc.param,
        sc.values.len(),
        sc.seeds.len()
    ));

    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|(value, seed)| -> Result<SweepRow> {
            let mut cfg = base.clone();
            apply_param(&mut cfg, &sc.param, value)?;
            cfg.seed = *seed;
            let out = rmsh_core::trainer::fit(&train, &cfg)?;
            let ndcg = cross_modal_ndcg(&out.model, &train, &query, sc.cutoff, cfg.exec)?;
            let dir = runs_dir.join(format!("{}={}_seed{}", sc.param, value, seed));
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            let metrics = dir.join("metrics.jsonl");
            write_text(&metrics, &metrics_jsonl(&out.metrics)?)?;
            let mut m = RunManifest::new("sweep-run", Some(*seed), serde_json::to_value(&cfg)?);
            for p in train_files.all().into_iter().chain(query_files.all()) {
                m.input(p)?;
            }
            m.output(&metrics)?;
            m.write(&dir)?;
            ctx.log(format!(
                "{}={} seed {}: delta {} NDCG@{} {:.4}/{:.4}",
                sc.param, value, seed, out.delta, sc.cutoff, ndcg[0], ndcg[1]
            ));
            Ok(SweepRow {
                value: value.clone(),
                seed: *seed,
                delta: out.delta,
                in_bounds: bounds.delta_max.map(|_| bounds.contains(out.delta)),
                ndcg,
                final_loss: out.metrics.last().map_or(f64::NAN, |m| m.mean_total),
            })
        })
        .collect::<Result<_>>()?;

    let fmt_bounds = |b: Option<bool>| b.map_or(String::new(), |v| v.to_string());
    let p = sc.cutoff;
    let mut csv = format!(
        "param,value,seed,delta,in_bounds,ndcg{p}_i2t,ndcg{p}_t2i,ndcg{p}_mean,final_loss\n"
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            sc.param,
            r.value,
            r.seed,
            r.delta,
            fmt_bounds(r.in_bounds),
            r.ndcg[0],
            r.ndcg[1],
            (r.ndcg[0] + r.ndcg[1]) / 2.0,
            r.final_loss
        );
    }
    let mut summary =
        format!("param,value,delta,in_bounds,runs,ndcg{p}_i2t,ndcg{p}_t2i,ndcg{p}_mean\n");
    for v in &sc.values {
        let group: Vec<&SweepRow> = rows.iter().filter(|r| &r.value == v).collect();
        let n = group.len() as f64;
        let i2t = group.iter().map(|r| r.ndcg[0]).sum::<f64>() / n;
        let t2i = group.iter().map(|r| r.ndcg[1]).sum::<f64>() / n;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            sc.param,
            v,
            group[0].delta,
            fmt_bounds(group[0].in_bounds),
            group.len(),
            i2t,
            t2i,
            (i2t + t2i) / 2.0
        );
    }
    let csv_path = ctx.out("sweep.csv");
    let summary_path = ctx.out("sweep_summary.csv");
    let bounds_path = ctx.out("bounds.json");
    write_text(&csv_path, &csv)?;
    write_text(&summary_path, &summary)?;
    write_json(&bounds_path, &bounds)?;
    let mut m = ctx.manifest("sweep", &ctx.config)?;
    for p in train_files.all().into_iter().chain(query_files.all()) {
        m.input(p)?;
    }
    for p in [&csv_path, &summary_path, &bounds_path] {
        m.output(p)?;
    }
    m.write(&ctx.out_dir)?;
    print!("{summary}");
    Ok(())
}
