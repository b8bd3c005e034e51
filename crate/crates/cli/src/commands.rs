//! The five commands: train, eval, predict, trace-attention, synth.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use adnfm_core::data::{
    load_categorical_tsv, load_criteo, load_movielens, split, synth_interactions, Dataset,
    LoadStats, Task,
};
use adnfm_core::features::{encode, FeatureSchema, FieldKind, RawValue};
use adnfm_core::model::forward;
use adnfm_core::train::{evaluate, train, TrainHistory};
use adnfm_core::{Error, Result};

use crate::checkpoint::{self, CheckpointMeta, SchemaDoc};
use crate::config::RunConfig;

/// Loads a dataset by format name; `schema`, when given, fixes the encoding
/// (eval/predict against a checkpoint).
pub fn load_by_format(
    format: &str,
    path: &Path,
    max_rows: Option<usize>,
    schema: Option<Arc<FeatureSchema>>,
    min_count: usize,
) -> Result<(Dataset, LoadStats)> {
    match format {
        "criteo" => load_criteo(path, max_rows, schema, min_count),
        "movielens" => {
            let ratings = path.join("ratings.csv");
            let movies = path.join("movies.csv");
            if !ratings.is_file() || !movies.is_file() {
                return Err(Error::Data(format!(
                    "{} must be a directory containing ratings.csv and movies.csv",
                    path.display()
                )));
            }
            load_movielens(&ratings, &movies, max_rows, schema)
        }
        "tsv" => load_categorical_tsv(path, max_rows, schema, min_count),
        other => Err(Error::Config(format!("unknown data format {other:?}"))),
    }
}

fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = String::new();
    let depth = history
        .epochs
        .first()
        .map_or(0, |e| e.mean_alpha.len());
    out.push_str("epoch\ttrain_loss\tval_metric");
    for i in 1..=depth {
        out.push_str(&format!("\talpha_{i}"));
    }
    out.push_str("\twall_ms\n");
    for e in &history.epochs {
        out.push_str(&format!("{}\t{}\t{}", e.epoch, e.train_loss, e.val_metric));
        for a in &e.mean_alpha {
            out.push_str(&format!("\t{a}"));
        }
        out.push_str(&format!("\t{}\n", e.wall_ms));
    }
    std::fs::write(path, out)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// `train --config run.toml [--data-override PATH] [--out DIR] [--seed N]`
///
/// Writes `model.ckpt`, `history.tsv`, and `metrics.txt` (final test
/// metrics) into the output directory.
pub fn cmd_train(
    config_path: &Path,
    data_override: Option<&Path>,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(p) = data_override {
        cfg.data.path = p.to_path_buf();
    }
    if let Some(dir) = out_override {
        cfg.output.dir = dir.to_path_buf();
    }
    if let Some(seed) = seed_override {
        cfg.train.seed = seed;
    }
    let task = cfg.task()?;
    let kind = cfg.kind()?;
    let train_cfg = cfg.train_config()?;

    let (ds, stats) = load_by_format(
        &cfg.data.format,
        &cfg.data.path,
        cfg.effective_max_rows(),
        None,
        cfg.data.min_count,
    )?;
    if stats.skipped > 0 {
        eprintln!("skipped {} malformed rows", stats.skipped);
    }
    if ds.task != task {
        return Err(Error::Config(format!(
            "config task {} does not match {} data (task {})",
            task.name(),
            cfg.data.format,
            ds.task.name()
        )));
    }

    let (train_ds, val_ds, test_ds) = split(&ds, (0.8, 0.1, 0.1), train_cfg.seed)?;
    let (best, history) = train(&train_cfg, &train_ds, &val_ds)?;
    let report = evaluate(&best, &test_ds, task, kind)?;
    let summary = report.summary_line();

    std::fs::create_dir_all(&cfg.output.dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", cfg.output.dir.display())))?;
    let meta = CheckpointMeta {
        format_version: 1,
        data_format: cfg.data.format.clone(),
        task: task.name().to_string(),
        kind: kind.name().to_string(),
        hyper: cfg.hyper().into(),
        schema: SchemaDoc::from_schema(&ds.schema),
        train_fingerprint: cfg.fingerprint(),
        metrics: Some(summary.clone()),
    };
    checkpoint::save(&cfg.output.dir.join("model.ckpt"), &meta, &best)?;
    write_history(&cfg.output.dir.join("history.tsv"), &history)?;
    std::fs::write(cfg.output.dir.join("metrics.txt"), format!("{summary}\n"))
        .map_err(|e| Error::Data(format!("cannot write metrics.txt: {e}")))?;
    println!("test\t{summary}");
    Ok(())
}

/// `eval --model model.ckpt --data PATH --task {ctr|regression}`
pub fn cmd_eval(model_path: &Path, data_path: &Path, task_name: &str) -> Result<()> {
    let (meta, params) = checkpoint::load(model_path)?;
    let task = Task::parse(task_name)?;
    let ckpt_task = meta.task()?;
    if task != ckpt_task {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint was trained for task {} (schema {}), eval requested {}",
            ckpt_task.name(),
            meta.schema.fingerprint(),
            task.name()
        )));
    }
    let schema = Arc::new(meta.schema.to_schema()?);
    let (ds, _) = load_by_format(&meta.data_format, data_path, None, Some(schema), 1)
        .map_err(|e| match e {
            // field-shape disagreements against a fixed schema are mismatches
            Error::SchemaMismatch(msg) => Error::SchemaMismatch(format!(
                "{msg} (checkpoint schema {})",
                meta.schema.fingerprint()
            )),
            other => other,
        })?;
    let report = evaluate(&params, &ds, task, meta.kind()?)?;
    println!("{}", report.summary_line());
    Ok(())
}

fn parse_predict_row(line: &str, schema: &FeatureSchema) -> Result<Vec<RawValue>> {
    let cells: Vec<&str> = line.split('\t').collect();
    if cells.len() != schema.num_fields() {
        return Err(Error::Data(format!(
            "row has {} columns, schema expects {}",
            cells.len(),
            schema.num_fields()
        )));
    }
    schema
        .fields()
        .iter()
        .zip(&cells)
        .map(|(spec, &cell)| {
            if cell.is_empty() {
                return Ok(RawValue::Missing);
            }
            Ok(match spec.kind {
                FieldKind::NumericBucketed => RawValue::Numeric(
                    cell.parse::<f64>()
                        .map_err(|_| Error::Data(format!("bad numeric {cell:?}")))?,
                ),
                FieldKind::Categorical => RawValue::Categorical(cell.to_string()),
                FieldKind::MultiCategorical => {
                    RawValue::Multi(cell.split('|').map(|s| s.to_string()).collect())
                }
            })
        })
        .collect()
}

/// `predict --model model.ckpt --input rows.tsv --output preds.csv`
///
/// Input rows carry one tab-separated column per schema field (no label),
/// multi-valued cells pipe-separated, empty cells missing. Output rows are
/// `row_index,prediction`; malformed rows emit `row_index,ERROR` and
/// processing continues.
pub fn cmd_predict(model_path: &Path, input: &Path, output: &Path) -> Result<()> {
    let (meta, params) = checkpoint::load(model_path)?;
    let schema = meta.schema.to_schema()?;
    let task = meta.task()?;
    let kind = meta.kind()?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", input.display())))?;
    let mut out = std::fs::File::create(output)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", output.display())))?;
    for (i, line) in text.lines().enumerate() {
        let prediction = parse_predict_row(line, &schema)
            .and_then(|values| encode(&values, 0.0, &schema))
            .and_then(|sample| forward(&params, &sample, kind, task));
        match prediction {
            Ok(trace) => writeln!(out, "{i},{:.6}", trace.prediction),
            Err(_) => writeln!(out, "{i},ERROR"),
        }
        .map_err(|e| Error::Data(format!("write error: {e}")))?;
    }
    Ok(())
}

/// `trace-attention --history history.tsv --out alpha.csv`
///
/// Re-checks that every epoch's attention weights sum to 1 within 1e-9 and
/// exports `epoch,alpha_1..alpha_L` with 6-decimal formatting.
pub fn cmd_trace_attention(history_path: &Path, out_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(history_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", history_path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty history file".into()))?;
    let columns: Vec<&str> = header.split('\t').collect();
    let alpha_cols: Vec<usize> = columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("alpha_"))
        .map(|(i, _)| i)
        .collect();
    if alpha_cols.is_empty() {
        return Err(Error::Config(format!(
            "{} has no alpha_* columns (not an attention model history?)",
            history_path.display()
        )));
    }
    let epoch_col = columns
        .iter()
        .position(|&c| c == "epoch")
        .ok_or_else(|| Error::Config("history has no epoch column".into()))?;

    let mut out = String::new();
    out.push_str("epoch");
    for i in 1..=alpha_cols.len() {
        out.push_str(&format!(",alpha_{i}"));
    }
    out.push('\n');
    for (row_no, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            return Err(Error::Config(format!(
                "history row {} has {} columns, header has {}",
                row_no + 1,
                cells.len(),
                columns.len()
            )));
        }
        let mut alphas = Vec::with_capacity(alpha_cols.len());
        for &c in &alpha_cols {
            let a: f64 = cells[c]
                .parse()
                .map_err(|_| Error::Config(format!("bad alpha value {:?}", cells[c])))?;
            alphas.push(a);
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "corrupt history: row {} alpha sum {sum} is not 1",
                row_no + 1
            )));
        }
        out.push_str(cells[epoch_col]);
        for a in &alphas {
            out.push_str(&format!(",{a:.6}"));
        }
        out.push('\n');
    }
    std::fs::write(out_path, out)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", out_path.display())))?;
    Ok(())
}

/// `synth --n N --fields F --vocab V --k-true K --seed S --out DIR`
///
/// Writes `synth.tsv` (label plus one token column per field, the same
/// layout the `tsv` loader reads) and `ground_truth.tsv` (the hidden
/// per-value embeddings), then prints the Bayes-optimal AUC estimate from
/// scoring the samples with their true logits.
pub fn cmd_synth(
    n: usize,
    fields: usize,
    vocab: usize,
    k_true: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let (ds, truth) = synth_interactions(n, fields, vocab, k_true, seed)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut tsv = String::new();
    for s in &ds.samples {
        tsv.push_str(&format!("{}", s.label as i64));
        for f in 0..ds.schema.num_fields() {
            let (idx, _) = s.field_entries(f)[0];
            let local = idx as usize - ds.schema.field(f).offset;
            let token = ds
                .schema
                .field(f)
                .value_of(local)
                .expect("generated values are in-vocabulary");
            tsv.push('\t');
            tsv.push_str(token);
        }
        tsv.push('\n');
    }
    std::fs::write(out_dir.join("synth.tsv"), tsv)
        .map_err(|e| Error::Data(format!("cannot write synth.tsv: {e}")))?;

    let mut gt = String::new();
    gt.push_str(&format!(
        "# k_true={k_true} seed={seed} centering={}\n",
        truth.centering
    ));
    gt.push_str("field\tvalue");
    for c in 0..k_true {
        gt.push_str(&format!("\tu{c}"));
    }
    gt.push('\n');
    for f in 0..fields {
        for v in 0..vocab {
            gt.push_str(&format!("{f}\tv{v}"));
            for &x in truth.embedding(f, v) {
                gt.push_str(&format!("\t{x}"));
            }
            gt.push('\n');
        }
    }
    std::fs::write(out_dir.join("ground_truth.tsv"), gt)
        .map_err(|e| Error::Data(format!("cannot write ground_truth.tsv: {e}")))?;

    match truth.bayes_auc {
        Some(auc) => println!("bayes_auc={auc:.6}"),
        None => println!("bayes_auc=undefined"),
    }
    Ok(())
}
