//! Training runs, loss comparisons and batch-shape ablation grids.
//!
//! Outputs per run directory: `metrics.jsonl` (one [`MetricsRecord`] per step),
//! `checkpoint.bin` and `config.echo` (the normalized configuration).

use std::borrow::Cow;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::info_nce_loss_with;
use crate::batch::{augment_image, sample_batch_with, stream_rng, AugmentationPolicy, ImageAugmentation};
use crate::config::{DatasetSource, ExperimentConfig, LossKind};
use crate::datasets::{generate_synthetic, load_binary_images, split, ImageShape, LabeledDataset};
use crate::embedding::{backprop_similarity, cosine_similarity_matrix};
use crate::encoder::{adam_step, backward, forward, init_params, load_checkpoint, save_checkpoint, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{extract_features, retrieval_map, train_linear_probe, ProbeResult};
use crate::ranking::{batch_exact_map, batch_smooth_ap_loss_with};
use crate::Execution;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_ECHO_FILE: &str = "config.echo";
pub const GRID_FILE: &str = "grid.csv";
pub const REPORT_FILE: &str = "report.json";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub train_loss: f64,
    /// Exact mAP of the step's batch under the pre-update encoder.
    pub mean_batch_ap: f64,
    #[serde(default)]
    pub probe_top1: Option<f64>,
    #[serde(default)]
    pub retrieval_map: Option<f64>,
    /// Zero in deterministic mode so that metrics files are reproducible byte for byte.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub params: EncoderParams<f32>,
    pub final_probe: ProbeResult,
    pub output_dir: PathBuf,
}

impl RunOutput {
    pub fn final_record(&self) -> &MetricsRecord {
        self.records.last().expect("at least one step")
    }

    pub fn final_probe_top1(&self) -> f64 {
        self.final_probe.top1_accuracy
    }
}

/// Train/test halves of the configured dataset.
pub struct PreparedData {
    pub train: LabeledDataset<f32>,
    pub test: LabeledDataset<f32>,
}

/// Loads or generates the dataset of a normalized config and splits it.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let data: LabeledDataset<f32> = match cfg.dataset.source {
        DatasetSource::Synthetic => generate_synthetic(&cfg.dataset.synthetic)?,
        DatasetSource::Images => {
            let path = cfg.dataset.path.as_ref().ok_or_else(|| Error::InvalidConfig("missing dataset.path".into()))?;
            load_binary_images(path)?
        }
    };
    let (train, test) = split(&data, cfg.train_fraction, cfg.split_seed())?;
    Ok(PreparedData { train, test })
}

/// Normalizes the config, fixing the encoder input width for image datasets.
fn resolve(cfg: &ExperimentConfig, data: &PreparedData) -> ExperimentConfig {
    let mut c = cfg.normalized();
    c.encoder.input_dim = match data.train.image_shape {
        Some(s) => {
            let (h, w) = c.augmentation.image.output_size.unwrap_or((s.height, s.width));
            h * w * s.channels
        }
        None => data.train.dim(),
    };
    c
}

fn execution(cfg: &ExperimentConfig) -> Execution {
    if cfg.deterministic {
        Execution::Deterministic
    } else {
        Execution::Parallel
    }
}

/// Images resized to the view size the encoder was built for; other data unchanged.
fn encoder_inputs<'a>(ds: &'a LabeledDataset<f32>, cfg: &ExperimentConfig) -> Result<Cow<'a, LabeledDataset<f32>>> {
    let (Some(shape), Some((h, w))) = (ds.image_shape, cfg.augmentation.image.output_size) else {
        return Ok(Cow::Borrowed(ds));
    };
    if (h, w) == (shape.height, shape.width) {
        return Ok(Cow::Borrowed(ds));
    }
    let policy = ImageAugmentation { output_size: Some((h, w)), ..AugmentationPolicy::identity(0).image };
    let out_shape = ImageShape { height: h, width: w, channels: shape.channels };
    let mut samples = Array2::zeros((ds.len(), out_shape.len()));
    let mut rng = stream_rng(0, 0, 0);
    for (mut dst, src) in samples.rows_mut().into_iter().zip(ds.samples.rows()) {
        dst.assign(&augment_image(src, shape, &policy, &mut rng)?);
    }
    let mut resized = LabeledDataset::new(samples, ds.labels.clone(), ds.num_classes)?;
    resized.image_shape = Some(out_shape);
    Ok(Cow::Owned(resized))
}

/// Linear probe fitted on train features, scored on test features, plus test-set retrieval mAP.
pub fn evaluate(params: &EncoderParams<f32>, data: &PreparedData, cfg: &ExperimentConfig) -> Result<(ProbeResult, Option<f64>)> {
    let train_f = extract_features(params, &*encoder_inputs(&data.train, cfg)?)?;
    let test_f = extract_features(params, &*encoder_inputs(&data.test, cfg)?)?;
    let probe = train_linear_probe(
        train_f.view(),
        &data.train.labels,
        test_f.view(),
        &data.test.labels,
        data.train.num_classes,
        &cfg.probe,
    )?;
    // Degenerate (all-zero) features make cosine retrieval undefined.
    let map = retrieval_map(test_f.view(), &data.test.labels).ok();
    Ok((probe, map))
}

/// Loss and gradient w.r.t. the projections for one batch.
fn loss_and_grad(
    cfg: &ExperimentConfig,
    projections: &Array2<f32>,
    groups: &crate::ranking::GroupLabels,
    exec: Execution,
) -> Result<(f64, f64, Array2<f32>)> {
    let sim = cosine_similarity_matrix(projections.view())?;
    let (loss, grad_sim) = match cfg.loss {
        LossKind::S2r2 => {
            let r = batch_smooth_ap_loss_with(&sim, groups, &cfg.smoothing, exec)?;
            (r.loss, r.grad_wrt_similarities)
        }
        LossKind::Infonce => info_nce_loss_with(&sim, groups, &cfg.contrastive, exec)?,
    };
    let batch_ap = batch_exact_map(&sim, groups)?;
    let grad = backprop_similarity(projections.view(), grad_sim.view())?;
    Ok((loss as f64, batch_ap as f64, grad))
}

/// Trains on already prepared data without touching the filesystem.
pub fn train(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(EncoderParams<f32>, Vec<MetricsRecord>, ProbeResult)> {
    let mut records = Vec::with_capacity(cfg.steps);
    let mut on_record = |r: &MetricsRecord| {
        records.push(r.clone());
        Ok(())
    };
    let (params, probe) = train_with(cfg, data, &mut on_record)?;
    Ok((params, records, probe))
}

fn train_with(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    on_record: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<(EncoderParams<f32>, ProbeResult)> {
    let cfg = resolve(cfg, data);
    cfg.validate()?;
    let exec = execution(&cfg);
    let started = Instant::now();
    let mut params = init_params::<f32>(&cfg.encoder)?;
    let mut last_probe = None;
    for step in 1..=cfg.steps {
        let batch = sample_batch_with(
            &data.train,
            cfg.batch_images,
            cfg.views_per_image,
            &cfg.augmentation,
            step as u64,
            exec,
        )?;
        let out = forward(&params, batch.views.view())?;
        let (loss, batch_ap, grad_proj) = loss_and_grad(&cfg, &out.projections, &batch.groups, exec)
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::Divergence(format!("non-finite {what} at step {step}")),
                Error::DegenerateRow { .. } => Error::Divergence(format!("{e} at step {step}")),
                other => other,
            })?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("loss is {loss} at step {step}")));
        }
        let grads = backward(&params, &out.cache, grad_proj.view())?;
        adam_step(&mut params, &grads, &cfg.optimizer)
            .map_err(|e| Error::Divergence(format!("{e} at step {step}")))?;

        let (probe_top1, map) = if step % cfg.eval_every == 0 || step == cfg.steps {
            let (probe, map) = evaluate(&params, data, &cfg)?;
            let top1 = probe.top1_accuracy;
            last_probe = Some(probe);
            (Some(top1), map)
        } else {
            (None, None)
        };
        let record = MetricsRecord {
            step,
            train_loss: loss,
            mean_batch_ap: batch_ap,
            probe_top1,
            retrieval_map: map,
            wall_time_s: if cfg.deterministic { 0.0 } else { started.elapsed().as_secs_f64() },
        };
        on_record(&record)?;
    }
    Ok((params, last_probe.expect("final step always evaluates")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Full training run writing metrics, checkpoint and config echo to `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate_structure()?;
    let data = prepare_data(&cfg.normalized())?;
    run_on_data(cfg, &data)
}

fn run_on_data(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunOutput> {
    let resolved = resolve(cfg, data);
    resolved.validate()?;
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    write_file(&dir.join(CONFIG_ECHO_FILE), resolved.to_toml_string().as_bytes())?;
    let metrics_path = dir.join(METRICS_FILE);
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut writer = BufWriter::new(file);
    let mut records = Vec::with_capacity(cfg.steps);
    let mut on_record = |r: &MetricsRecord| -> Result<()> {
        let line = serde_json::to_string(r).expect("finite metrics serialize");
        writeln!(writer, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        records.push(r.clone());
        Ok(())
    };
    let result = train_with(cfg, data, &mut on_record);
    writer.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let (params, final_probe) = result?;
    save_checkpoint(&params, &dir.join(CHECKPOINT_FILE))?;
    Ok(RunOutput { records, params, final_probe, output_dir: dir })
}

impl ExperimentConfig {
    /// Checks that do not need the dataset loaded.
    fn validate_structure(&self) -> Result<()> {
        self.normalized().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub loss: String,
    pub eval_points: Vec<MetricsRecord>,
    pub final_probe_top1: f64,
    pub final_retrieval_map: Option<f64>,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub s2r2: ArmSummary,
    pub infonce: ArmSummary,
    /// `s2r2 - infonce` final probe top-1.
    pub delta_probe_top1: f64,
    pub views_per_step: usize,
    pub pairing: String,
}

fn summarize(loss: LossKind, run: &RunOutput) -> ArmSummary {
    let last = run.final_record();
    ArmSummary {
        loss: loss.name().to_string(),
        eval_points: run.records.iter().filter(|r| r.probe_top1.is_some()).cloned().collect(),
        final_probe_top1: run.final_probe_top1(),
        final_retrieval_map: last.retrieval_map,
        final_train_loss: last.train_loss,
    }
}

/// Runs both losses with identical data, seeds and view batches; writes each arm to a
/// subdirectory and `report.json` to the output directory.
pub fn compare_losses(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let base = cfg.normalized();
    let data = prepare_data(&base)?;
    let arm = |loss: LossKind| -> Result<RunOutput> {
        let mut c = cfg.clone();
        c.loss = loss;
        c.output_dir = cfg.output_dir.join(loss.name());
        c.validate_structure()?;
        run_on_data(&c, &data)
    };
    let s2r2 = arm(LossKind::S2r2)?;
    let infonce = arm(LossKind::Infonce)?;
    let report = ComparisonReport {
        delta_probe_top1: s2r2.final_probe_top1() - infonce.final_probe_top1(),
        s2r2: summarize(LossKind::S2r2, &s2r2),
        infonce: summarize(LossKind::Infonce, &infonce),
        views_per_step: cfg.batch_images * cfg.views_per_image,
        pairing: format!(
            "infonce consumes each group's {} views as {} adjacent pairs",
            cfg.views_per_image,
            cfg.views_per_image / 2
        ),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&cfg.output_dir.join(REPORT_FILE), text.as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "BK")]
    pub bk: usize,
    pub probe_top1: Option<f64>,
    pub final_loss: Option<f64>,
    /// `ok` or `error: <message>`.
    pub status: String,
}

/// One run per distinct `(B, K)` at the base step budget; a failing cell becomes an
/// error row. Writes `grid.csv` and per-cell run directories `B{b}_K{k}/`.
pub fn run_ablation_grid(base: &ExperimentConfig, b_values: &[usize], k_values: &[usize]) -> Result<Vec<GridRow>> {
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for &b in b_values {
        for &k in k_values {
            if !cells.contains(&(b, k)) {
                cells.push((b, k));
            }
        }
    }
    create_dir(&base.output_dir)?;
    let data = prepare_data(&base.normalized())?;
    let cell = |&(b, k): &(usize, usize)| -> GridRow {
        let mut c = base.clone();
        c.batch_images = b;
        c.views_per_image = k;
        c.output_dir = base.output_dir.join(format!("B{b}_K{k}"));
        let run = c.validate_structure().and_then(|_| run_on_data(&c, &data));
        match run {
            Ok(r) => GridRow {
                b,
                k,
                bk: b * k,
                probe_top1: Some(r.final_probe_top1()),
                final_loss: Some(r.final_record().train_loss),
                status: "ok".into(),
            },
            Err(e) => GridRow { b, k, bk: b * k, probe_top1: None, final_loss: None, status: format!("error: {e}") },
        }
    };
    let rows: Vec<GridRow> = if base.deterministic {
        cells.iter().map(cell).collect()
    } else {
        cells.par_iter().map(cell).collect()
    };
    let path = base.output_dir.join(GRID_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::io(&path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub probe: ProbeResult,
    pub retrieval_map: Option<f64>,
}

/// Probes an existing checkpoint on the configured dataset and writes `eval.json`.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let params = load_checkpoint::<f32>(checkpoint)?;
    let normalized = cfg.normalized();
    normalized.probe.validate()?;
    let data = prepare_data(&normalized)?;
    let resolved = resolve(cfg, &data);
    if params.config().input_dim != resolved.encoder.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {} input features, dataset provides {}",
            params.config().input_dim,
            resolved.encoder.input_dim
        )));
    }
    let (probe, retrieval_map) = evaluate(&params, &data, &resolved)?;
    let report = EvalReport { checkpoint: checkpoint.to_path_buf(), probe, retrieval_map };
    create_dir(&cfg.output_dir)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&cfg.output_dir.join(EVAL_FILE), text.as_bytes())?;
    Ok(report)
}

/// Parses a metrics file, one record per line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::InvalidConfig(format!("bad metrics line: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.output_dir = dir.to_path_buf();
        c.dataset.synthetic.num_classes = 3;
        c.dataset.synthetic.dim = 8;
        c.dataset.synthetic.samples_per_class = 20;
        c.encoder.hidden_dims = vec![16];
        c.encoder.rep_dim = 8;
        c.encoder.proj_hidden_dim = 8;
        c.encoder.proj_out_dim = 8;
        c.batch_images = 4;
        c.views_per_image = 2;
        c.steps = 6;
        c.eval_every = 3;
        c.probe.epochs = 10;
        c
    }

    #[test]
    fn run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&quick(dir.path())).unwrap();
        assert_eq!(out.records.len(), 6);
        let parsed = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(parsed, out.records);
        assert!(parsed[2].probe_top1.is_some() && parsed[1].probe_top1.is_none());
        assert!(dir.path().join(CHECKPOINT_FILE).exists());
        let echo = fs::read_to_string(dir.path().join(CONFIG_ECHO_FILE)).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&echo).unwrap().encoder.input_dim, 8);
    }

    #[test]
    fn zero_steps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig { steps: 0, ..quick(dir.path()) };
        assert!(matches!(run_experiment(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn grid_isolates_failing_cells_and_dedups() {
        let dir = tempfile::tempdir().unwrap();
        let c = quick(dir.path());
        // 60 samples * 0.8 = 48 training rows; B = 100 cannot be drawn.
        let rows = run_ablation_grid(&c, &[2, 100, 2], &[2]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].status, "ok");
        assert!(rows[1].status.starts_with("error"));
        let text = fs::read_to_string(dir.path().join(GRID_FILE)).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("B,K,BK,probe_top1,final_loss,status"));
    }
}
