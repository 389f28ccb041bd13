//! Imitator training: proxy inference on held-out scenes, pseudo-map
//! construction, and Adam over the total loss with validation-based
//! checkpoint selection.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::{target_proxy_perceive, visible_annotations, TargetProxySpec};
use crate::detections::{Detection, SceneDetections};
use crate::error::{Error, Result};
use crate::imitator::{encode_targets, Imitator, ImitatorConfig};
use crate::losses::{total_loss, LossOptions, LossReport, LossWeights, SampleTargets};
use crate::metrics::{evaluate_pairs, EvalReport};
use crate::numerics::{AdamState, Graph};
use crate::raster::{build_stack, GridSpec, PosEncSpec, RasterStack};
use crate::scene::{to_ego_frame, OrientedBox, SceneState};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    /// 4:1 train/test, with a fifth of the training part held for validation.
    fn default() -> Self {
        SplitFractions {
            train: 0.64,
            val: 0.16,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub loss_options: LossOptions,
    pub split: SplitFractions,
    pub grid: GridSpec,
    pub pos_enc: PosEncSpec,
    pub imitator: ImitatorConfig,
    /// Write `epoch_<k>.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Run validation every this many epochs.
    pub validate_every: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Score floor for decoding during evaluation.
    pub eval_score_floor: f64,
    /// Threshold for the fixed-point precision/recall in evaluation.
    pub fixed_threshold: f64,
    /// Set the selected model's runtime score threshold to the validation
    /// F1 optimum instead of keeping the configured one.
    pub calibrate_threshold: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let pos_enc = PosEncSpec::default();
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 0.001,
            seed: 0,
            weights: LossWeights::default(),
            loss_options: LossOptions::default(),
            split: SplitFractions::default(),
            grid: GridSpec::desk(),
            pos_enc,
            imitator: ImitatorConfig {
                in_channels: 4 + pos_enc.d_model,
                ..Default::default()
            },
            checkpoint_every: 0,
            validate_every: 1,
            max_steps: None,
            eval_score_floor: 0.05,
            fixed_threshold: 0.5,
            calibrate_threshold: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("train.learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eval_score_floor) {
            return Err(Error::validation("train.eval_score_floor", "must lie in [0, 1]"));
        }
        if self.validate_every == 0 {
            return Err(Error::validation("train.validate_every", "must be at least 1"));
        }
        let s = self.split;
        if [s.train, s.val, s.test].iter().any(|f| !(0.0..=1.0).contains(f)) || (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return Err(Error::validation("train.split", "fractions must lie in [0, 1] and sum to 1"));
        }
        self.weights.validate()?;
        self.grid.validate()?;
        self.pos_enc.validate()?;
        self.imitator.validate()?;
        self.imitator.check_grid(&self.grid)?;
        if self.imitator.in_channels != 4 + self.pos_enc.d_model {
            return Err(Error::validation(
                "train.imitator.in_channels",
                format!("must equal 4 + d_model = {}", 4 + self.pos_enc.d_model),
            ));
        }
        Ok(())
    }
}

/// One supervised sample.
#[derive(Debug, Clone)]
pub struct Record {
    pub scene_id: u64,
    pub stack: RasterStack,
    pub targets: SampleTargets,
    /// Proxy output the imitator is evaluated against.
    pub proxy_dets: Vec<Detection>,
    pub annotations: Vec<OrientedBox>,
    /// Boxes lost because two landed in one output cell (Y, Z).
    pub encode_collisions: [usize; 2],
}

/// Runs the proxy on each (id, world-frame scene) and builds the raster
/// stack plus pseudo maps from proxy output (Y) and annotations (Z).
pub fn prepare_dataset(
    scenes: &[(u64, &SceneState)],
    proxy: &TargetProxySpec,
    grid: &GridSpec,
    pos_enc: &PosEncSpec,
    downsample: usize,
) -> Result<Vec<Record>> {
    if scenes.is_empty() {
        return Err(Error::validation("scenes", "empty corpus"));
    }
    scenes
        .iter()
        .map(|&(scene_id, s)| {
            let ego = to_ego_frame(s);
            let stack = build_stack(&ego, grid, pos_enc)?;
            let proxy_dets = target_proxy_perceive(&ego, grid, proxy, scene_id);
            let annotations = visible_annotations(&ego, grid);
            let proxy_boxes: Vec<OrientedBox> = proxy_dets.iter().map(|d| d.bbox).collect();
            let y = encode_targets(&proxy_boxes, grid, downsample);
            let z = encode_targets(&annotations, grid, downsample);
            Ok(Record {
                scene_id,
                stack,
                targets: SampleTargets {
                    target: y.maps,
                    annotation: z.maps,
                },
                proxy_dets,
                annotations,
                encode_collisions: [y.collisions, z.collisions],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl Split {
    /// Seeded shuffle of `ids`, cut by the fractions (rounded, test takes
    /// the remainder).
    pub fn new(ids: &[u64], f: &SplitFractions, seed_value: u64) -> Result<Split> {
        let mut ids = ids.to_vec();
        ids.shuffle(&mut seed::stream(seed_value, "split", 0));
        let n = ids.len();
        let n_train = ((f.train * n as f64).round() as usize).min(n);
        let n_val = ((f.val * n as f64).round() as usize).min(n - n_train);
        let split = Split {
            train: ids[..n_train].to_vec(),
            val: ids[n_train..n_train + n_val].to_vec(),
            test: ids[n_train + n_val..].to_vec(),
        };
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let sets: Vec<BTreeSet<u64>> = [&self.train, &self.val, &self.test]
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect();
        let names = ["train", "val", "test"];
        for i in 0..3 {
            if sets[i].len() != [&self.train, &self.val, &self.test][i].len() {
                return Err(Error::validation("split", format!("{} contains duplicate scene ids", names[i])));
            }
            for j in i + 1..3 {
                if let Some(id) = sets[i].intersection(&sets[j]).next() {
                    return Err(Error::validation(
                        "split",
                        format!("scene {id} is in both {} and {}", names[i], names[j]),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Picks records by scene id, preserving the order of `ids`.
pub fn select<'a>(records: &'a [Record], ids: &[u64]) -> Result<Vec<&'a Record>> {
    ids.iter()
        .map(|id| {
            records
                .iter()
                .find(|r| r.scene_id == *id)
                .ok_or_else(|| Error::validation("split", format!("no record for scene {id}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValLog {
    pub epoch: usize,
    pub step: usize,
    pub map_050: f64,
    pub maxr_050: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation mAP@0.5 (final ones if there is
    /// no validation set).
    pub best: Imitator,
    pub last: Imitator,
    pub best_epoch: usize,
    pub best_val_map: Option<f64>,
    pub steps: Vec<StepLog>,
    pub validation: Vec<ValLog>,
    /// Set when a non-finite value stopped training; `last` then holds the
    /// parameters from before the failing step.
    pub diverged: Option<String>,
}

struct Outputs {
    dir: PathBuf,
    log: BufWriter<File>,
    timing: BufWriter<File>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Outputs> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            Ok(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
        };
        Ok(Outputs {
            dir: dir.to_path_buf(),
            log: open("train_log.jsonl")?,
            timing: open("timing.jsonl")?,
        })
    }

    fn line(w: &mut BufWriter<File>, dir: &Path, v: &impl Serialize) -> Result<()> {
        let s = serde_json::to_string(v).map_err(|e| Error::Other(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| Error::io(dir, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(&self.dir, e))?;
        self.timing.flush().map_err(|e| Error::io(&self.dir, e))
    }
}

/// One optimizer step's loss and gradients for a batch.
pub fn batch_gradients(
    model: &Imitator,
    batch: &[&Record],
    cfg: &TrainConfig,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    let stacks: Vec<&RasterStack> = batch.iter().map(|r| &r.stack).collect();
    let targets: Vec<&SampleTargets> = batch.iter().map(|r| &r.targets).collect();
    let mut g = Graph::new();
    let vars = model.params.attach(&mut g, true);
    let x = g.constant(crate::imitator::stack_batch(&stacks)?);
    let heads = model.forward_graph(&mut g, &vars, x)?;
    let (loss, report) = total_loss(
        &mut g,
        heads.cls,
        heads.reg,
        &targets,
        &vars,
        &cfg.grid,
        model.config.downsample,
        &cfg.weights,
        &cfg.loss_options,
    )?;
    let mut grads = g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok((report, grads))
}

/// Evaluates `model` against the proxy detections stored in `records`,
/// decoding every cell scoring at least `score_floor`.
pub fn evaluate_records(model: &Imitator, records: &[&Record], score_floor: f64, fixed_threshold: f64) -> Result<EvalReport> {
    let mut corpus = Vec::with_capacity(records.len());
    for chunk in records.chunks(8) {
        let stacks: Vec<&RasterStack> = chunk.iter().map(|r| &r.stack).collect();
        for (maps, r) in model.forward_batch(&stacks)?.iter().zip(chunk) {
            let dets = model.postprocess_at(maps, &r.stack.grid, score_floor)?;
            corpus.push((dets, r.proxy_dets.iter().map(|d| d.bbox).collect()));
        }
    }
    Ok(evaluate_pairs(&corpus, fixed_threshold))
}

/// Predictions at `score_floor` for each record as scene-keyed rows.
pub fn detect_records(model: &Imitator, records: &[&Record], score_floor: f64) -> Result<Vec<SceneDetections>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let maps = model.forward(&r.stack)?;
        out.push(SceneDetections {
            scene_id: r.scene_id,
            dets: model.postprocess_at(&maps, &r.stack.grid, score_floor)?,
        });
    }
    Ok(out)
}

/// Adam over seeded mini-batches. With `out_dir`, writes the step log
/// (`train_log.jsonl`), wall times (`timing.jsonl`), validation results
/// (`val_log.jsonl`), `best.ckpt`, `last.ckpt` and periodic checkpoints.
pub fn train(cfg: &TrainConfig, train_set: &[&Record], val_set: &[&Record], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("train", "empty training set"));
    }
    let train_ids: BTreeSet<u64> = train_set.iter().map(|r| r.scene_id).collect();
    if let Some(r) = val_set.iter().find(|r| train_ids.contains(&r.scene_id)) {
        // Overfit checks pass the training set as validation on purpose;
        // anything else overlapping is a hygiene failure.
        if val_set.len() != train_set.len() || val_set.iter().any(|v| !train_ids.contains(&v.scene_id)) {
            return Err(Error::validation(
                "split",
                format!("scene {} is in both train and validation", r.scene_id),
            ));
        }
    }
    let mut out = out_dir.map(Outputs::open).transpose()?;
    let mut model = Imitator::new(cfg.imitator.clone(), seed::derive_seed(cfg.seed, "imitator"))?;
    let mut adam = AdamState::new(model.params.tensors(), cfg.learning_rate);
    let mut shuffle_rng = seed::stream(cfg.seed, "trainer.shuffle", 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut steps = Vec::new();
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, Imitator)> = None;
    let mut diverged = None;
    let mut step = 0usize;
    let started = Instant::now();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&Record> = chunk.iter().map(|&i| train_set[i]).collect();
            let (report, grads) = match batch_gradients(&model, &batch, cfg) {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    diverged = Some(format!("non-finite value in {what} at step {step}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let before = model.params.clone();
            adam.step(model.params.tensors_mut(), &grads)?;
            if model.params.tensors().iter().any(|t| !t.all_finite()) {
                model.params = before;
                diverged = Some(format!("non-finite parameters after step {step}"));
                break 'epochs;
            }
            let log = StepLog { step, epoch, loss: report };
            if let Some(o) = out.as_mut() {
                Outputs::line(&mut o.log, &o.dir, &log)?;
                let t = serde_json::json!({ "step": step, "wall_seconds": started.elapsed().as_secs_f64() });
                Outputs::line(&mut o.timing, &o.dir, &t)?;
            }
            steps.push(log);
            step += 1;
        }
        let last_epoch = epoch + 1 == cfg.epochs || cfg.max_steps.is_some_and(|m| step >= m);
        if !val_set.is_empty() && ((epoch + 1) % cfg.validate_every == 0 || last_epoch) {
            let rep = evaluate_records(&model, val_set, cfg.eval_score_floor, cfg.fixed_threshold)?;
            validation.push(ValLog {
                epoch,
                step,
                map_050: rep.map_050,
                maxr_050: rep.maxr_050,
            });
            if best.as_ref().is_none_or(|(m, _, _)| rep.map_050 > *m) {
                best = Some((rep.map_050, epoch, model.clone()));
            }
        }
        if let Some(o) = out.as_ref() {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                model.save(&o.dir.join(format!("epoch_{}.ckpt", epoch + 1)), checkpoint_meta(cfg, epoch, step))?;
            }
        }
    }
    let last_epoch = steps.last().map_or(0, |s| s.epoch);
    let (best_val_map, best_epoch, mut best_model) = match best {
        Some((m, e, b)) => (Some(m), e, b),
        None => (None, last_epoch, model.clone()),
    };
    if cfg.calibrate_threshold && !val_set.is_empty() {
        let rep = evaluate_records(&best_model, val_set, cfg.eval_score_floor, cfg.fixed_threshold)?;
        if let Some(t) = f1_optimal_threshold(&rep) {
            best_model.config.score_threshold = t;
        }
    }
    if let Some(mut o) = out {
        let vpath = o.dir.join("val_log.jsonl");
        let mut vw = BufWriter::new(File::create(&vpath).map_err(|e| Error::io(&vpath, e))?);
        for v in &validation {
            Outputs::line(&mut vw, &o.dir, v)?;
        }
        vw.flush().map_err(|e| Error::io(&vpath, e))?;
        best_model.save(&o.dir.join("best.ckpt"), checkpoint_meta(cfg, best_epoch, step))?;
        model.save(&o.dir.join("last.ckpt"), checkpoint_meta(cfg, last_epoch, step))?;
        o.flush()?;
    }
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        best_epoch,
        best_val_map,
        steps,
        validation,
        diverged,
    })
}

/// Score threshold of the PR point with the highest F1 at IoU 0.5; `None`
/// when nothing matches.
pub fn f1_optimal_threshold(rep: &EvalReport) -> Option<f64> {
    rep.pr_curve_050
        .iter()
        .filter(|p| p.precision + p.recall > 0.0)
        .map(|p| (2.0 * p.precision * p.recall / (p.precision + p.recall), p.score_threshold))
        .fold(None, |acc: Option<(f64, f64)>, cur| match acc {
            Some(a) if a.0 >= cur.0 => Some(a),
            _ => Some(cur),
        })
        .map(|(_, t)| t)
}

fn checkpoint_meta(cfg: &TrainConfig, epoch: usize, step: usize) -> serde_json::Value {
    serde_json::json!({ "epoch": epoch, "step": step, "grid": cfg.grid, "pos_enc": cfg.pos_enc })
}

/// Loads a checkpoint and evaluates it on `records` against proxy output.
pub fn evaluate_checkpoint(path: &Path, records: &[&Record], score_floor: f64, fixed_threshold: f64) -> Result<EvalReport> {
    let (model, _) = Imitator::load(path)?;
    if let Some(r) = records.first() {
        let c = r.stack.channel_count();
        if c != model.config.in_channels {
            return Err(Error::Shape(format!(
                "checkpoint expects {} input channels, records have {c}",
                model.config.in_channels
            )));
        }
        model.config.check_grid(&r.stack.grid)?;
    }
    evaluate_records(&model, records, score_floor, fixed_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenes, GeneratorConfig};

    pub(crate) fn small_config() -> TrainConfig {
        let pos_enc = PosEncSpec { d_model: 4 };
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            grid: GridSpec::bottom_anchored(32, 32, 1.5),
            pos_enc,
            imitator: ImitatorConfig {
                in_channels: 8,
                widths: vec![8, 16],
                downsample: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn records(n: usize, cfg: &TrainConfig, proxy: &TargetProxySpec) -> Vec<Record> {
        let scenes = generate_scenes(11, &GeneratorConfig { n_scenes: n, ..Default::default() }).unwrap();
        let items: Vec<(u64, &SceneState)> = scenes.iter().enumerate().map(|(i, s)| (i as u64, s)).collect();
        prepare_dataset(&items, proxy, &cfg.grid, &cfg.pos_enc, cfg.imitator.downsample).unwrap()
    }

    #[test]
    fn dataset_shapes_and_identity_proxy() {
        let cfg = small_config();
        let recs = records(10, &cfg, &TargetProxySpec::identity(0));
        assert_eq!(recs.len(), 10);
        for r in &recs {
            assert_eq!(r.stack.channel_count(), 8);
            assert_eq!(r.targets.target.cells(), 16 * 16);
            assert_eq!(r.targets.target, r.targets.annotation);
        }
        assert!(prepare_dataset(&[], &TargetProxySpec::default(), &cfg.grid, &cfg.pos_enc, 2).is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = small_config();
        let a = records(6, &cfg, &TargetProxySpec::default());
        let b = records(6, &cfg, &TargetProxySpec::default());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.stack.to_chw(), y.stack.to_chw());
            assert_eq!(x.targets, y.targets);
            assert_eq!(x.proxy_dets, y.proxy_dets);
        }
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let ids: Vec<u64> = (0..50).collect();
        let s = Split::new(&ids, &SplitFractions::default(), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (32, 8, 10));
        let mut all: Vec<u64> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, ids);
        let bad = Split {
            train: vec![1, 2],
            val: vec![2],
            test: vec![],
        };
        assert!(bad.check_disjoint().is_err());
    }

    #[test]
    fn smoke_run_writes_valid_checkpoint() {
        let cfg = small_config();
        let recs = records(8, &cfg, &TargetProxySpec::default());
        let (tr, va) = recs.split_at(6);
        let tr: Vec<&Record> = tr.iter().collect();
        let va: Vec<&Record> = va.iter().collect();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &tr, &va, Some(dir.path())).unwrap();
        assert_eq!(out.steps.len(), 4);
        assert!(out.diverged.is_none());
        let (loaded, _) = Imitator::load(&dir.path().join("best.ckpt")).unwrap();
        assert_eq!(loaded.params, out.best.params);
        let rep = evaluate_checkpoint(&dir.path().join("last.ckpt"), &va, 0.05, 0.5).unwrap();
        assert!(rep.map_050.is_finite());
        let lines = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 4);
    }

    #[test]
    fn overlapping_validation_is_rejected() {
        let cfg = small_config();
        let recs = records(6, &cfg, &TargetProxySpec::default());
        let tr: Vec<&Record> = recs[..4].iter().collect();
        let va: Vec<&Record> = recs[3..].iter().collect();
        assert!(train(&cfg, &tr, &va, None).is_err());
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let cfg = small_config();
        let recs = records(6, &cfg, &TargetProxySpec::default());
        let tr: Vec<&Record> = recs.iter().collect();
        let a = train(&cfg, &tr, &[], None).unwrap();
        let b = train(&cfg, &tr, &[], None).unwrap();
        assert_eq!(a.last.params.to_bytes(&serde_json::Value::Null).unwrap(), b.last.params.to_bytes(&serde_json::Value::Null).unwrap());
    }

    #[test]
    fn untrained_model_report_is_well_formed() {
        let cfg = small_config();
        let recs = records(4, &cfg, &TargetProxySpec::default());
        let refs: Vec<&Record> = recs.iter().collect();
        let m = Imitator::new(cfg.imitator.clone(), 0).unwrap();
        let rep = evaluate_records(&m, &refs, 0.5, 0.5).unwrap();
        for v in [rep.map_050, rep.map_070, rep.maxr_050, rep.maxr_070, rep.precision_at_fixed, rep.recall_at_fixed] {
            assert!(v.is_finite() && (0.0..=1.0).contains(&v));
        }
    }
}
