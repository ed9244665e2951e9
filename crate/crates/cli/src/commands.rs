use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use vocalmap::corpus::{
    filter_records, load_manifest, stratified_split, synth_corpus, Gender, PathologyTable, Split, Status,
};
use vocalmap::dsp::{
    featurize_file, normalize_spectrogram, pad_or_truncate, read_matrix_file, write_matrix_file, MatrixFile, NormStats,
    Spectrogram, FBNK_MAGIC,
};
use vocalmap::model::{init_params, load_checkpoint, save_checkpoint, ModelConfig, Parameters};
use vocalmap::project::{export_projection, neighbor_purity, read_embeddings, tsne, write_embeddings, EmbeddingSet, PointLabel};
use vocalmap::rollout::{explain, export_map, load_map};
use vocalmap::train::{case_label, metrics_for, predict, train as fit, write_history, CaseLabel, Metrics, Prediction, Sample};
use vocalmap::viz::{compose, grayscale, load_alignment, overlay, side_by_side, with_title, write_image, ComposedImage};

use crate::config::RunConfig;
use crate::{invalid, CasesArgs, EvalArgs, FeaturizeArgs, ProjectArgs, RenderArgs, RolloutArgs, SynthArgs, TrainArgs};

const FEATURES_INDEX: &str = "features.csv";
const RESOLVED: &str = "resolved_config.json";

fn require_file(path: &Path) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{}: no such file", path.display())))
    }
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `<stem>.config.json` beside a single-file output.
fn config_beside(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.config.json"))
}

fn parent_dir(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn synth(config: Option<&Path>, a: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config, None)?;
    if let Some(n) = a.n_healthy {
        cfg.synth.n_healthy = n;
    }
    if let Some(n) = a.n_patho {
        cfg.synth.n_pathological = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if cfg.synth.n_healthy + cfg.synth.n_pathological == 0 {
        return Err(invalid("nothing to synthesize"));
    }
    create_dir(&a.out)?;
    let manifest = synth_corpus(&cfg.synth, cfg.seed, &a.out)?;
    cfg.write(&a.out.join(RESOLVED))?;
    log::info!("wrote {} recordings to {}", manifest.len(), a.out.display());
    Ok(())
}

/// One row of `features.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureRow {
    id: String,
    split: String,
    gender: String,
    status: String,
    /// Relative to the features directory.
    file: String,
    /// Alignment file found next to the corpus, or empty.
    alignment: String,
}

impl FeatureRow {
    fn split(&self) -> Split {
        self.split.parse().expect("index splits were written by featurize")
    }

    fn gender(&self) -> anyhow::Result<Gender> {
        self.gender.parse().map_err(|e: String| anyhow::anyhow!(e))
    }

    fn status(&self) -> anyhow::Result<Status> {
        self.status.parse().map_err(|e: String| anyhow::anyhow!(e))
    }
}

fn find_alignment(root: &Path, id: &str) -> Option<PathBuf> {
    ["json", "TextGrid"]
        .iter()
        .map(|ext| root.join("align").join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

pub fn featurize(config: Option<&Path>, a: FeaturizeArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config, None)?;
    if let Some(t) = a.max_seconds {
        cfg.max_seconds = Some(t);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    require_file(&a.manifest)?;
    let table = match &a.pathology_table {
        Some(p) => {
            require_file(p)?;
            PathologyTable::from_csv(p).map_err(|e| invalid(e.to_string()))?
        }
        None => PathologyTable::default(),
    };
    let manifest = load_manifest(&a.manifest, &table).map_err(|e| invalid(e.to_string()))?;
    let kept = filter_records(&manifest, &table);
    if kept.len() < manifest.len() {
        log::info!("excluded {} records labelled both organic and inorganic", manifest.len() - kept.len());
    }
    if kept.is_empty() {
        return Err(invalid("manifest has no usable records"));
    }
    let split = stratified_split(&kept, cfg.split_ratios, cfg.seed).map_err(|e| invalid(e.to_string()))?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    let data = vocalmap::train::featurize_corpus(&kept, &split, cfg.max_seconds())?;

    let feature_dir = a.out.join("features");
    create_dir(&feature_dir)?;
    let mut specs: BTreeMap<&str, &Sample> = BTreeMap::new();
    for s in data.train.iter().chain(&data.dev).chain(&data.test) {
        specs.insert(&s.id, s);
    }
    let index_path = a.out.join(FEATURES_INDEX);
    let mut index = csv::Writer::from_path(&index_path).with_context(|| format!("writing {}", index_path.display()))?;
    for rec in &kept.records {
        let sample = specs[rec.id.as_str()];
        let file = format!("features/{}.fbnk", rec.id);
        write_matrix_file(&a.out.join(&file), &MatrixFile::from_spectrogram(&sample.spec))?;
        let alignment = find_alignment(&kept.root, &rec.id)
            .map(|p| p.canonicalize().unwrap_or(p).display().to_string())
            .unwrap_or_default();
        index.serialize(FeatureRow {
            id: rec.id.clone(),
            split: split.get(&rec.id).expect("every record is assigned").to_string(),
            gender: rec.gender.to_string(),
            status: rec.status.to_string(),
            file,
            alignment,
        })?;
    }
    index.flush()?;
    split.write_csv(&a.out.join("split.csv"))?;
    write_json(&a.out.join("stats.json"), &data.stats)?;
    cfg.write(&a.out.join(RESOLVED))?;
    log::info!(
        "featurized {} recordings ({} train, {} dev, {} test) into {}",
        kept.len(),
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(())
}

fn read_index(features: &Path) -> anyhow::Result<Vec<FeatureRow>> {
    let path = features.join(FEATURES_INDEX);
    require_file(&path)?;
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .map(|row| row.with_context(|| format!("parsing {}", path.display())))
        .collect()
}

fn read_spec(path: &Path) -> anyhow::Result<Spectrogram> {
    Ok(read_matrix_file(path, FBNK_MAGIC)?.into_spectrogram()?)
}

fn load_split(features: &Path, split: Split) -> anyhow::Result<Vec<(FeatureRow, Sample)>> {
    read_index(features)?
        .into_iter()
        .filter(|r| r.split() == split)
        .map(|row| {
            let spec = read_spec(&features.join(&row.file))?;
            let label = row.status()?.class_index();
            let sample = Sample {
                id: row.id.clone(),
                spec,
                label,
            };
            Ok((row, sample))
        })
        .collect()
}

fn check_fits(samples: &[Sample], model: &ModelConfig) -> anyhow::Result<()> {
    if let Some(s) = samples.first() {
        if s.spec.bins() != model.mel_bins {
            return Err(invalid(format!("features have {} bins, model expects {}", s.spec.bins(), model.mel_bins)));
        }
    }
    if let Some(s) = samples.iter().find(|s| s.spec.frames() > model.max_frames) {
        return Err(invalid(format!(
            "{} has {} frames, more than the model's max_frames {}",
            s.id,
            s.spec.frames(),
            model.max_frames
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_dev_uar: f64,
    epochs_run: usize,
    stop_reason: vocalmap::train::StopReason,
}

pub fn train(config: Option<&Path>, a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config, a.preset)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.validate()?;
    let stats_path = a.features.join("stats.json");
    require_file(&stats_path)?;
    let train_set: Vec<Sample> = load_split(&a.features, Split::Train)?.into_iter().map(|(_, s)| s).collect();
    let dev_set: Vec<Sample> = load_split(&a.features, Split::Dev)?.into_iter().map(|(_, s)| s).collect();
    check_fits(&train_set, &cfg.model)?;
    check_fits(&dev_set, &cfg.model)?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(invalid("train and dev splits must both be non-empty"));
    }

    let init = init_params(&cfg.model, cfg.train.seed);
    log::info!(
        "training {} parameters on {} samples (dev {}), lr {}, {} epochs",
        init.scalar_count(),
        train_set.len(),
        dev_set.len(),
        cfg.train.learning_rate,
        cfg.train.epochs
    );
    let outcome = fit(&init, &cfg.model, &cfg.train, &train_set, &dev_set)?;

    create_dir(&a.out)?;
    save_checkpoint(&outcome.params, &cfg.model, &a.out.join("model.ckpt"))?;
    fs::copy(&stats_path, a.out.join("stats.json")).context("copying stats.json")?;
    write_history(&a.out.join("history.jsonl"), &outcome.history)?;
    write_json(
        &a.out.join("summary.json"),
        &TrainSummary {
            best_epoch: outcome.best_epoch,
            best_dev_uar: outcome.best_dev_uar,
            epochs_run: outcome.history.len(),
            stop_reason: outcome.stop_reason,
        },
    )?;
    cfg.write(&a.out.join(RESOLVED))?;
    log::info!(
        "best dev UAR {:.4} at epoch {} ({:?}); checkpoint in {}",
        outcome.best_dev_uar,
        outcome.best_epoch,
        outcome.stop_reason,
        a.out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<(Parameters, ModelConfig)> {
    require_file(path)?;
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

/// Row label for a checkpoint: its directory name, or the file stem.
fn checkpoint_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    match path.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str()) {
        Some(dir) if stem == "model" => dir.to_string(),
        _ => stem.to_string(),
    }
}

#[derive(Debug, Serialize)]
struct EvalRecord {
    checkpoint: String,
    label: String,
    split: String,
    n: usize,
    metrics: Metrics,
}

fn embedding_set(rows: &[(FeatureRow, Sample)], preds: &[Prediction]) -> anyhow::Result<EmbeddingSet> {
    let labels = rows
        .iter()
        .map(|(r, _)| {
            Ok(PointLabel {
                gender: r.gender()?,
                status: r.status()?,
            })
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(EmbeddingSet {
        ids: rows.iter().map(|(r, _)| r.id.clone()).collect(),
        vectors: preds.iter().map(|p| p.cls.clone()).collect(),
        labels,
    })
}

pub fn eval(config: Option<&Path>, a: EvalArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config, None)?;
    cfg.validate()?;
    let rows = load_split(&a.features, a.split)?;
    if rows.is_empty() {
        return Err(invalid(format!("{} split is empty", a.split)));
    }
    let samples: Vec<Sample> = rows.iter().map(|(_, s)| s.clone()).collect();
    let mut labels: Vec<String> = a.checkpoint.iter().map(|c| checkpoint_label(c)).collect();
    for i in 0..labels.len() {
        if labels[..i].contains(&labels[i]) {
            labels[i] = format!("{}-{}", labels[i], i + 1);
        }
    }
    let mut records = Vec::new();
    println!("{:<20} {:<9} {:>5} {:>8} {:>8}", "Model", "Backbone", "N", "UAR", "AUC");
    for (path, label) in a.checkpoint.iter().zip(&labels) {
        let (params, model) = load_model(path)?;
        check_fits(&samples, &model)?;
        let preds = predict(&samples, &params, &model)?;
        let metrics = metrics_for(&samples, &preds).map_err(|e| invalid(format!("{} split: {e}", a.split)))?;
        let backbone = if model.backbone_trainable { "tuned" } else { "frozen" };
        println!("{label:<20} {backbone:<9} {:>5} {:>8.4} {:>8.4}", samples.len(), metrics.uar, metrics.auc);
        if let Some(out) = &a.out {
            create_dir(out)?;
            let pred_path = out.join(format!("{label}_predictions.csv"));
            let mut w = csv::Writer::from_path(&pred_path).with_context(|| format!("writing {}", pred_path.display()))?;
            w.write_record(["id", "truth", "pred", "score"])?;
            for ((_, s), p) in rows.iter().zip(&preds) {
                w.write_record([s.id.clone(), s.label.to_string(), p.class.to_string(), format!("{}", p.score)])?;
            }
            w.flush()?;
            write_embeddings(&out.join(format!("{label}_embeddings.csv")), &embedding_set(&rows, &preds)?)?;
        }
        records.push(EvalRecord {
            checkpoint: path.display().to_string(),
            label: label.clone(),
            split: a.split.to_string(),
            n: samples.len(),
            metrics,
        });
    }
    if let Some(out) = &a.out {
        write_json(&out.join("metrics.json"), &records)?;
        cfg.write(&out.join(RESOLVED))?;
    }
    Ok(())
}

/// Spectrogram from a `.fbnk` file, or featurized from WAV with the given
/// statistics and padded to the model length.
fn input_spec(path: &Path, model: &ModelConfig, stats: Option<&Path>) -> anyhow::Result<Spectrogram> {
    require_file(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("fbnk") {
        return read_spec(path);
    }
    let stats_path = stats.ok_or_else(|| invalid("WAV input needs --stats or stats.json next to the checkpoint"))?;
    require_file(stats_path)?;
    let stats: NormStats = read_json(stats_path)?;
    let raw = featurize_file(path)?;
    let spec = normalize_spectrogram(&raw, stats)?;
    Ok(pad_or_truncate(&spec, model.max_frames as f64 / 100.0, 0.0))
}

pub fn rollout(config: Option<&Path>, a: RolloutArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config, None)?;
    cfg.validate()?;
    let (params, model) = load_model(&a.checkpoint)?;
    if let Some(c) = a.class {
        if c >= model.num_classes {
            return Err(invalid(format!("class {c} out of range for {} classes", model.num_classes)));
        }
    }
    let default_stats = a.checkpoint.with_file_name("stats.json");
    let stats = a.stats.clone().or_else(|| default_stats.is_file().then_some(default_stats));
    let spec = input_spec(&a.input, &model, stats.as_deref())?;
    check_fits(std::slice::from_ref(&Sample { id: String::new(), spec: spec.clone(), label: 0 }), &model)?;
    let ex = explain(&spec, &params, &model, a.class)?;
    let id = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    parent_dir(&a.out)?;
    export_map(&a.out, id, &ex)?;
    cfg.write(&config_beside(&a.out))?;
    log::info!(
        "{id}: predicted class {}, explained class {}; map {}×{} written to {}",
        ex.predicted_class,
        ex.class_explained,
        ex.map.bins(),
        ex.map.frames(),
        a.out.display()
    );
    Ok(())
}

pub fn render(config: Option<&Path>, a: RenderArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config, None)?;
    cfg.validate()?;
    require_file(&a.map)?;
    require_file(&a.spec)?;
    let spec = if a.spec.extension().and_then(|e| e.to_str()) == Some("fbnk") {
        read_spec(&a.spec)?
    } else {
        featurize_file(&a.spec)?
    };
    let map = load_map(&a.map)?;
    let composed = compose(&spec, &map).map_err(|e| invalid(e.to_string()))?;
    let annotate = |img: &ComposedImage| -> anyhow::Result<ComposedImage> {
        match &a.alignment {
            Some(p) => {
                require_file(p)?;
                Ok(overlay(img, &load_alignment(p)?).0)
            }
            None => Ok(img.clone()),
        }
    };
    let composed = annotate(&composed)?;
    let image = if a.side_by_side {
        side_by_side(&annotate(&grayscale(&spec))?, &composed)
    } else {
        composed.image
    };
    parent_dir(&a.out)?;
    write_image(&image, &a.out)?;
    cfg.write(&config_beside(&a.out))?;
    log::info!("wrote {}×{} image to {}", image.width, image.height, a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProjectionSummary {
    points: usize,
    seed: u64,
    perplexity: f64,
    kl_after_exaggeration: f64,
    final_kl: f64,
    kl_trace: Vec<(usize, f64)>,
    gender_purity: f64,
    status_purity: f64,
    images: [String; 2],
}

pub fn project(config: Option<&Path>, a: ProjectArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config, None)?;
    if let Some(p) = a.perplexity {
        cfg.tsne.perplexity = p;
    }
    if let Some(n) = a.iterations {
        cfg.tsne.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.tsne.seed = s;
    }
    cfg.validate()?;
    require_file(&a.embeddings)?;
    let set = read_embeddings(&a.embeddings)?;
    let projection = tsne(&set, &cfg.tsne).map_err(|e| match e {
        vocalmap::project::ProjectError::Input(m) => invalid(m),
        other => other.into(),
    })?;
    parent_dir(&a.out)?;
    let images = export_projection(&projection, &set, &a.out)?;
    let genders: Vec<Gender> = set.labels.iter().map(|l| l.gender).collect();
    let statuses: Vec<Status> = set.labels.iter().map(|l| l.status).collect();
    let summary = ProjectionSummary {
        points: set.ids.len(),
        seed: projection.seed,
        perplexity: cfg.tsne.perplexity,
        kl_after_exaggeration: projection.kl_after_exaggeration,
        final_kl: projection.final_kl,
        kl_trace: projection.kl_trace.clone(),
        gender_purity: neighbor_purity(&projection.points, &genders),
        status_purity: neighbor_purity(&projection.points, &statuses),
        images: images.map(|p| p.display().to_string()),
    };
    write_json(&a.out.with_extension("json"), &summary)?;
    cfg.write(&config_beside(&a.out))?;
    log::info!(
        "projected {} points: KL {:.4}; 1-NN purity gender {:.3}, status {:.3}",
        summary.points,
        summary.final_kl,
        summary.gender_purity,
        summary.status_purity
    );
    Ok(())
}

/// Relevance overlay for one sample under one checkpoint.
fn case_panel(sample: &Sample, row: &FeatureRow, params: &Parameters, model: &ModelConfig) -> anyhow::Result<ComposedImage> {
    let ex = explain(&sample.spec, params, model, None)?;
    let composed = compose(&sample.spec, &ex.map)?;
    if row.alignment.is_empty() {
        return Ok(composed);
    }
    let path = Path::new(&row.alignment);
    match load_alignment(path) {
        Ok(al) => Ok(overlay(&composed, &al).0),
        Err(e) => {
            log::warn!("{}: {e}; rendering without annotations", path.display());
            Ok(composed)
        }
    }
}

pub fn cases(config: Option<&Path>, a: CasesArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config, None)?;
    cfg.validate()?;
    let (params_a, model_a) = load_model(&a.checkpoint_a)?;
    let (params_b, model_b) = load_model(&a.checkpoint_b)?;
    let rows = load_split(&a.features, a.split)?;
    if rows.is_empty() {
        return Err(invalid(format!("{} split is empty", a.split)));
    }
    let samples: Vec<Sample> = rows.iter().map(|(_, s)| s.clone()).collect();
    check_fits(&samples, &model_a)?;
    check_fits(&samples, &model_b)?;
    let pa = predict(&samples, &params_a, &model_a)?;
    let pb = predict(&samples, &params_b, &model_b)?;

    let figures = a.out.join("figures");
    create_dir(&figures)?;
    let csv_path = a.out.join("cases.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    w.write_record(["id", "gender", "status", "truth", "pred_a", "pred_b", "score_a", "score_b", "case", "figure"])?;
    let mut counts: BTreeMap<CaseLabel, usize> = CaseLabel::ALL.iter().map(|&c| (c, 0)).collect();
    for (((row, sample), x), y) in rows.iter().zip(&pa).zip(&pb) {
        let case = case_label(x.class, y.class, sample.label);
        *counts.get_mut(&case).expect("all cases present") += 1;
        let name = format!("{case}-{}_{}_{}.png", row.id, row.gender, row.status);
        let left = case_panel(sample, row, &params_a, &model_a)?;
        let right = case_panel(sample, row, &params_b, &model_b)?;
        let title = format!("{case} {} A={} B={} TRUE={}", row.id, x.class, y.class, sample.label);
        write_image(&with_title(&side_by_side(&left, &right), &title), &figures.join(&name))?;
        w.write_record([
            row.id.clone(),
            row.gender.clone(),
            row.status.clone(),
            sample.label.to_string(),
            x.class.to_string(),
            y.class.to_string(),
            format!("{}", x.score),
            format!("{}", y.score),
            case.to_string(),
            format!("figures/{name}"),
        ])?;
    }
    w.flush()?;
    write_json(&a.out.join("case_counts.json"), &counts.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>())?;
    cfg.write(&a.out.join(RESOLVED))?;
    println!(
        "{}",
        counts.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("  ")
    );
    Ok(())
}
