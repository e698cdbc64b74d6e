//! One handler per subcommand. Handlers write into the run directory and
//! leave manifest bookkeeping to the dispatcher.

use crate::args::*;
use crate::pipeline;
use crate::run::{usage, RunDir};
use anyhow::{bail, Context, Result};
use geomesh_core::data::{
    generate_synthetic, ingest_records, l2_retrieve, load_probs, load_probs_for, random_split, save_probs,
    save_records, ImageRecord, RecordFormat, SamplerParams, SynthConfig,
};
use geomesh_core::features::filter_outdoor;
use geomesh_core::mesh::{load_mesh, save_mesh, LabelMode, LabelTable, Mesh, MeshParams, MeshPreset};
use geomesh_core::metrics::{
    best_possible, class_bias_report, evaluate_errors, render_table, wilcoxon_signed_rank, MetricsReport,
};
use geomesh_core::models::{
    load_weights, save_weights, train_m2, train_m3, AlbumNetSpec, DenseNetSpec, SavedModel, TrainConfig,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Options shared by every subcommand.
pub struct Globals {
    pub seed: Option<u64>,
    pub thresholds: Vec<f64>,
    pub outdoor_only: bool,
}

impl Globals {
    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| usage("this command needs --seed or GEOMESH_SEED"))
    }
}

pub fn dispatch(command: &Command, g: &Globals, run: &mut RunDir) -> Result<()> {
    match command {
        Command::MeshBuild(a) => mesh_build(a, g, run),
        Command::Assign(a) => assign(a, g, run),
        Command::Labels(a) => labels(a, g, run),
        Command::SynthGen(a) => synth_gen(a, g, run),
        Command::TrainM2(a) => train(a, g, run, false),
        Command::TrainM3(a) => train(a, g, run, true),
        Command::Predict(a) => predict(a, g, run),
        Command::UserAverage(a) => user_average(a, g, run),
        Command::Eval(a) => eval(a, g, run),
        Command::BiasReport(a) => bias_report(a, g, run),
        Command::Wilcoxon(a) => wilcoxon(a, run),
        Command::BestPossible(a) => best(a, g, run),
        Command::Retrieve(a) => retrieve(a, run),
        Command::Report(a) => report(a, run),
    }
}

fn read_records(path: &Path, g: &Globals, run: &mut RunDir) -> Result<Vec<ImageRecord>> {
    run.input(path)?;
    let report = ingest_records(path, RecordFormat::from_path(path))
        .with_context(|| format!("reading records from {}", path.display()))?;
    for r in report.rejected.iter().take(20) {
        run.warnings.push(format!("{}:{}: {}", path.display(), r.line, r.reason));
    }
    if report.rejected.len() > 20 {
        run.warnings.push(format!("{} more rejected rows", report.rejected.len() - 20));
    }
    let records = if g.outdoor_only {
        let sel = filter_outdoor(&report.records);
        if sel.missing_flag > 0 {
            run.warnings.push(format!("{} records lack an outdoor flag and were skipped", sel.missing_flag));
        }
        sel.kept
    } else {
        report.records
    };
    if records.is_empty() {
        bail!("no usable records in {}", path.display());
    }
    Ok(records)
}

fn read_mesh(path: &Path, run: &mut RunDir) -> Result<Mesh> {
    run.input(path)?;
    load_mesh(path).with_context(|| format!("loading mesh {}", path.display()))
}

fn read_probs(path: &Path, classes: Option<usize>, run: &mut RunDir) -> Result<Array2<f32>> {
    run.input(path)?;
    let m = match classes {
        Some(n) => load_probs_for(path, n),
        None => load_probs(path),
    };
    m.with_context(|| format!("loading probabilities {}", path.display()))
}

fn mesh_params(
    preset: &str,
    rows: Option<u32>,
    cols: Option<u32>,
    limit: Option<u64>,
    minimum: Option<u64>,
    depth: Option<u32>,
) -> Result<MeshParams> {
    let preset: MeshPreset = preset.parse().map_err(|e| usage(format!("{e}")))?;
    let mut p = preset.params();
    p.init_rows = rows.unwrap_or(p.init_rows);
    p.init_cols = cols.unwrap_or(p.init_cols);
    p.refinement_limit = limit.unwrap_or(p.refinement_limit);
    p.minimum_examples = minimum.unwrap_or(p.minimum_examples);
    p.max_depth = depth.unwrap_or(p.max_depth);
    p.validate().map_err(|e| usage(format!("{e}")))?;
    Ok(p)
}

fn label_mode(s: &str) -> Result<LabelMode> {
    s.parse().map_err(|e| usage(format!("{e}")))
}

fn label_table(
    mesh: &Mesh,
    records: &[ImageRecord],
    mode: &str,
    file: Option<&Path>,
    run: &mut RunDir,
) -> Result<LabelTable> {
    if let Some(path) = file {
        run.input(path)?;
        let table: LabelTable = serde_json::from_str(&std::fs::read_to_string(path)?)
            .with_context(|| format!("parsing labels {}", path.display()))?;
        if table.len() != mesh.num_classes() {
            bail!("label table has {} classes, mesh has {}", table.len(), mesh.num_classes());
        }
        return Ok(table);
    }
    let points: Vec<_> = records.iter().map(|r| r.location).collect();
    mesh.compute_cell_labels(&points, label_mode(mode)?)
        .context("computing labels; pass --labels or use --mode cell-centroid for sparse record sets")
}

fn classes_of(mesh: &Mesh, records: &[ImageRecord]) -> Vec<Option<usize>> {
    records.iter().map(|r| mesh.assign(r.location)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    image_id: String,
    class: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorRow {
    image_id: String,
    error_km: f64,
}

fn write_csv<T: Serialize>(run: &mut RunDir, file: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let path = run.output(file)?;
    let mut w = csv::Writer::from_path(&path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, run: &mut RunDir) -> Result<Vec<T>> {
    run.input(path)?;
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn write_predictions(run: &mut RunDir, records: &[ImageRecord], classes: &[usize]) -> Result<()> {
    write_csv(
        run,
        "predictions.csv",
        records.iter().zip(classes).map(|(r, &class)| PredictionRow {
            image_id: r.image_id.clone(),
            class,
        }),
    )
}

/// Predicted class per record, from a prediction file or the probability argmax.
fn predictions_for(
    records: &[ImageRecord],
    predictions: Option<&Path>,
    probs: Option<&Path>,
    num_classes: usize,
    run: &mut RunDir,
) -> Result<Vec<usize>> {
    match (predictions, probs) {
        (Some(path), _) => {
            let rows: Vec<PredictionRow> = read_csv(path, run)?;
            let by_id: HashMap<&str, usize> = rows.iter().map(|r| (r.image_id.as_str(), r.class)).collect();
            records
                .iter()
                .map(|r| {
                    let class = *by_id
                        .get(r.image_id.as_str())
                        .with_context(|| format!("no prediction for {}", r.image_id))?;
                    if class >= num_classes {
                        bail!("prediction {class} for {} exceeds {num_classes} classes", r.image_id);
                    }
                    Ok(class)
                })
                .collect()
        }
        (None, Some(path)) => {
            let m = read_probs(path, Some(num_classes), run)?;
            let all: Vec<usize> = (0..records.len()).collect();
            pipeline::baseline_classes(&m, records, &all)
        }
        (None, None) => Err(usage("pass --predictions or --probs")),
    }
}

fn mesh_build(a: &MeshBuildArgs, g: &Globals, run: &mut RunDir) -> Result<()> {
    let params = mesh_params(
        &a.preset,
        a.init_rows,
        a.init_cols,
        a.refinement_limit,
        a.minimum_examples,
        a.max_depth,
    )?;
    let records = read_records(&a.records, g, run)?;
    let points: Vec<_> = records.iter().map(|r| r.location).collect();
    let mut mesh = Mesh::build_initial(params)?;
    let report = mesh.refine_and_prune(&points)?;
    for w in &report.warnings {
        run.warnings.push(w.to_string());
    }
    run.config = serde_json::to_value(params)?;
    save_mesh(&mesh, &run.output("mesh.gmm")?)?;
    run.write_json(
        "mesh_summary.json",
        &serde_json::json!({
            "classes": mesh.num_classes(),
            "leaves": mesh.leaves().count(),
            "passes": report.passes,
            "cells_split": report.cells_split,
            "points": points.len(),
        }),
    )?;
    log::info!("mesh with {} classes after {} passes", mesh.num_classes(), report.passes);
    Ok(())
}

fn assign(a: &MeshRecords, g: &Globals, run: &mut RunDir) -> Result<()> {
    let mesh = read_mesh(&a.mesh, run)?;
    let records = read_records(&a.records, g, run)?;
    let classes = classes_of(&mesh, &records);
    let path = run.output("classes.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["image_id", "class"])?;
    for (r, c) in records.iter().zip(&classes) {
        w.write_record([r.image_id.clone(), c.map_or(String::new(), |c| c.to_string())])?;
    }
    w.flush()?;
    let assigned = classes.iter().filter(|c| c.is_some()).count();
    run.write_json(
        "assign_summary.json",
        &serde_json::json!({ "records": records.len(), "assigned": assigned, "classes": mesh.num_classes() }),
    )
}

fn labels(a: &LabelsArgs, g: &Globals, run: &mut RunDir) -> Result<()> {
    let mesh = read_mesh(&a.mesh, run)?;
    let records = read_records(&a.records, g, run)?;
    let table = label_table(&mesh, &records, &a.mode, None, run)?;
    run.write_json("labels.json", &table)
}

fn synth_gen(a: &SynthArgs, g: &Globals, run: &mut RunDir) -> Result<()> {
    let mut cfg = SynthConfig::with_seed(g.seed()?);
    cfg.n_users = a.users;
    cfg.images_per_user_mean = a.images_per_user;
    cfg.coupling = a.coupling;
    cfg.coherence_radius_km = a.coherence_km;
    cfg.noise_temperature = a.noise_temperature;
    cfg.outdoor_prob = a.outdoor_prob;
    cfg.mesh = mesh_params(
        &a.preset,
        a.init_rows,
        a.init_cols,
        a.refinement_limit,
        a.minimum_examples,
        None,
    )?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = generate_synthetic(&cfg)?;
    run.config = serde_json::to_value(&cfg)?;
    save_records(&run.output("records.csv")?, &corpus.records, RecordFormat::Delimited)?;
    save_probs(&run.output("probs.gmpb")?, &corpus.probs)?;
    save_mesh(&corpus.mesh, &run.output("mesh.gmm")?)?;
    run.write_json("synth_config.json", &cfg)?;
    log::info!(
        "{} records over {} classes",
        corpus.records.len(),
        corpus.mesh.num_classes()
    );
    Ok(())
}

fn train(a: &TrainArgs, g: &Globals, run: &mut RunDir, album: bool) -> Result<()> {
    let seed = g.seed()?;
    if !(0.0..1.0).contains(&a.valid_fraction) || a.valid_fraction == 0.0 {
        return Err(usage("--valid-fraction must lie in (0, 1)"));
    }
    if !(0.0..=1.0).contains(&a.sampler_bias) || !(0.0..1.0).contains(&a.dropout) {
        return Err(usage("--sampler-bias must lie in [0, 1] and --dropout in [0, 1)"));
    }
    let mesh = read_mesh(&a.mesh, run)?;
    let n = mesh.num_classes();
    if n == 0 {
        bail!("mesh has no active cells");
    }
    let records = read_records(&a.records, g, run)?;
    let probs = read_probs(&a.probs, Some(n), run)?;
    let classes = classes_of(&mesh, &records);
    let split = random_split(&records, &[1.0 - a.valid_fraction, a.valid_fraction], seed, false)?;
    if !split.empty_parts.is_empty() {
        bail!("too few records for a training/validation split");
    }
    let (tr, va) = (&split.parts[0], &split.parts[1]);

    let mut spec = DenseNetSpec::with_hidden(n, a.hidden);
    spec.dropout = a.dropout;
    let cfg = TrainConfig {
        seed,
        batch_size: a.batch_size.unwrap_or(if album { 32 } else { 256 }),
        max_epochs: a.max_epochs,
        patience: a.patience,
        warmup_epochs: a.warmup_epochs,
        sampler: SamplerParams {
            bias: a.sampler_bias,
            ..SamplerParams::default()
        },
        ..TrainConfig::default()
    };
    run.config = serde_json::json!({ "train": cfg, "hidden": a.hidden, "dropout": a.dropout,
        "lstm_hidden": a.lstm_hidden, "valid_fraction": a.valid_fraction, "top_k": a.top_k, "album": album });

    let (model, history) = if album {
        let train_set = pipeline::albums_for(&probs, &records, Some(&classes), tr, a.top_k)?;
        let valid_set = pipeline::albums_for(&probs, &records, Some(&classes), va, a.top_k)?;
        let (m, h) = train_m3(&train_set, &valid_set, AlbumNetSpec::from_dense(&spec, a.lstm_hidden), &cfg)?;
        (SavedModel::Album(m), h)
    } else {
        let train_set = pipeline::m2_dataset(&probs, &records, &classes, tr, a.top_k)?;
        let valid_set = pipeline::m2_dataset(&probs, &records, &classes, va, a.top_k)?;
        if train_set.is_empty() || valid_set.is_empty() {
            bail!("no records fall in active cells");
        }
        let (m, h) = train_m2(&train_set, &valid_set, spec, &cfg)?;
        (SavedModel::Dense(m), h)
    };
    save_weights(&model, &run.output("weights.gmw")?)?;
    run.write_json("history.json", &history)?;
    log::info!(
        "best validation accuracy {:.4} at epoch {}",
        history.best_valid_accuracy,
        history.best_epoch
    );
    Ok(())
}

fn predict(a: &PredictArgs, g: &Globals, run: &mut RunDir) -> Result<()> {
    run.input(&a.weights)?;
    let model = load_weights(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    let n = match &model {
        SavedModel::Dense(m) => m.num_classes(),
        SavedModel::Album(m) => m.num_classes(),
    };
    let records = read_records(&a.records, g, run)?;
    let probs = read_probs(&a.probs, Some(n), run)?;
    let all: Vec<usize> = (0..records.len()).collect();
    let out = match &model {
        SavedModel::Dense(m) => pipeline::dense_probabilities(m, &probs, &records, &all, a.top_k)?,
        SavedModel::Album(m) => pipeline::album_probabilities(m, &probs, &records, &all, a.top_k)?,
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(geomesh_core::models::ModelError::Divergence {
            epoch: 0,
            batch: 0,
            last_finite_loss: f64::NAN,
        })
        .context("network produced non-finite probabilities");
    }
    // Rows follow the record order of the input file.
    save_probs(&run.output("probs.gmpb")?, &out.mapv(|v| v as f32))?;
    write_predictions(run, &records, &pipeline::row_argmax(&out))
}

fn user_average(a: &RecordsProbs, g: &Globals, run: &mut RunDir) -> Result<()> {
    let records = read_records(&a.records, g, run)?;
    let probs = read_probs(&a.probs, None, run)?;
    let all: Vec<usize> = (0..records.len()).collect();
    let classes = pipeline::user_average_classes(&probs, &records, &all)?;
    write_predictions(run, &records, &classes)
}

struct Evaluated {
    records: Vec<ImageRecord>,
    mesh: Mesh,
    errors: Vec<f64>,
    predicted: Vec<usize>,
}

fn evaluate(a: &EvalArgs, g: &Globals, run: &mut RunDir) -> Result<Evaluated> {
    let mesh = read_mesh(&a.mesh, run)?;
    let records = read_records(&a.records, g, run)?;
    let labels = label_table(&mesh, &records, &a.mode, a.labels.as_deref(), run)?;
    let predicted = predictions_for(
        &records,
        a.predictions.as_deref(),
        a.probs.as_deref(),
        mesh.num_classes(),
        run,
    )?;
    let all: Vec<usize> = (0..records.len()).collect();
    let errors = pipeline::errors_km(&labels, &records, &all, &predicted)?;
    Ok(Evaluated {
        records,
        mesh,
        errors,
        predicted,
    })
}

fn bias_of(e: &Evaluated) -> Result<geomesh_core::metrics::BiasReport> {
    let truth = classes_of(&e.mesh, &e.records);
    let all: Vec<usize> = (0..e.records.len()).collect();
    let (t, p) = pipeline::class_distributions(&e.mesh, &truth, &all, &e.predicted);
    Ok(class_bias_report(&t, &p)?)
}

fn eval(a: &EvalArgs, g: &Globals, run: &mut RunDir) -> Result<()> {
    let e = evaluate(a, g, run)?;
    let table = evaluate_errors(&e.errors, &g.thresholds).map_err(|err| usage(err.to_string()))?;
    let mut report = MetricsReport::new(&table, e.records.len());
    if e.mesh.num_classes() > 0 {
        report = report.with_bias(&bias_of(&e)?);
    }
    if let Some(other) = &a.compare {
        let others = predictions_for(&e.records, Some(other), None, e.mesh.num_classes(), run)?;
        let labels = label_table(&e.mesh, &e.records, &a.mode, a.labels.as_deref(), run)?;
        let all: Vec<usize> = (0..e.records.len()).collect();
        let errors = pipeline::errors_km(&labels, &e.records, &all, &others)?;
        report = report.with_wilcoxon(&wilcoxon_signed_rank(&e.errors, &errors)?);
    }
    run.write_json("report.json", &report)?;
    run.write_text("report.txt", &render_table(&[("predictions", &report)]))?;
    write_csv(
        run,
        "errors.csv",
        e.records.iter().zip(&e.errors).map(|(r, &error_km)| ErrorRow {
            image_id: r.image_id.clone(),
            error_km,
        }),
    )
}

fn bias_report(a: &EvalArgs, g: &Globals, run: &mut RunDir) -> Result<()> {
    let e = evaluate(a, g, run)?;
    let bias = bias_of(&e)?;
    run.write_json("bias.json", &bias)
}

fn wilcoxon(a: &WilcoxonArgs, run: &mut RunDir) -> Result<()> {
    let first: Vec<ErrorRow> = read_csv(&a.first, run)?;
    let second: Vec<ErrorRow> = read_csv(&a.second, run)?;
    let by_id: HashMap<&str, f64> = second.iter().map(|r| (r.image_id.as_str(), r.error_km)).collect();
    let mut e1 = Vec::with_capacity(first.len());
    let mut e2 = Vec::with_capacity(first.len());
    for r in &first {
        let other = by_id
            .get(r.image_id.as_str())
            .with_context(|| format!("{} missing from {}", r.image_id, a.second.display()))?;
        e1.push(r.error_km);
        e2.push(*other);
    }
    if e1.len() != second.len() {
        bail!("error files cover different images");
    }
    let result = wilcoxon_signed_rank(&e1, &e2)?;
    run.write_json("wilcoxon.json", &result)
}

fn best(a: &LabelsArgs, g: &Globals, run: &mut RunDir) -> Result<()> {
    let mesh = read_mesh(&a.mesh, run)?;
    let records = read_records(&a.records, g, run)?;
    let labels = label_table(&mesh, &records, &a.mode, a.labels.as_deref(), run)?;
    let points: Vec<_> = records.iter().map(|r| r.location).collect();
    let result = best_possible(&mesh, &labels, &points, &g.thresholds)?;
    let mut report = MetricsReport::new(&result.table, result.total);
    report.coverage_pct = result.coverage_pct();
    run.write_json("best_possible.json", &report)?;
    run.write_text("best_possible.txt", &render_table(&[("best possible", &report)]))
}

fn retrieve(a: &RetrieveArgs, run: &mut RunDir) -> Result<()> {
    let probs = read_probs(&a.probs, None, run)?;
    if a.query_row >= probs.nrows() {
        return Err(usage(format!("--query-row {} out of {} rows", a.query_row, probs.nrows())));
    }
    let database = probs.mapv(f64::from);
    let query: Vec<f64> = database.row(a.query_row).to_vec();
    let hits = l2_retrieve(&query, database.view(), a.k).map_err(|e| usage(e.to_string()))?;
    let ids: HashMap<u64, String> = match &a.records {
        Some(path) => {
            run.input(path)?;
            ingest_records(path, RecordFormat::from_path(path))?
                .records
                .into_iter()
                .filter_map(|r| r.prob_row.map(|p| (p, r.image_id)))
                .collect()
        }
        None => HashMap::new(),
    };
    let rows: Vec<_> = hits
        .iter()
        .enumerate()
        .map(|(rank, (row, distance))| {
            serde_json::json!({
                "rank": rank + 1,
                "row": row,
                "image_id": ids.get(&(*row as u64)),
                "distance": distance,
            })
        })
        .collect();
    run.write_json("retrieve.json", &rows)
}

fn report(a: &ReportArgs, run: &mut RunDir) -> Result<()> {
    let mut named = Vec::with_capacity(a.entries.len());
    for entry in &a.entries {
        let (name, path) = entry
            .split_once('=')
            .ok_or_else(|| usage(format!("report entry `{entry}` is not name=path")))?;
        let path = Path::new(path);
        run.input(path)?;
        let r: MetricsReport = serde_json::from_str(&std::fs::read_to_string(path)?)
            .with_context(|| format!("parsing report {}", path.display()))?;
        named.push((name.to_string(), r));
    }
    let rows: Vec<(&str, &MetricsReport)> = named.iter().map(|(n, r)| (n.as_str(), r)).collect();
    run.write_text("report.txt", &render_table(&rows))?;
    let doc: Vec<_> = named
        .iter()
        .map(|(n, r)| serde_json::json!({ "name": n, "report": r }))
        .collect();
    run.write_json("report.json", &doc)
}
