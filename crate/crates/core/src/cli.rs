//! Command-line front end. Every artifact gets a `<file>.meta.json` sidecar
//! (or a `meta.json` inside output directories) carrying the resolved config
//! hash, and the resolved config is echoed next to the outputs.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    annotation_detections, fit_gmm_em, measure_fn_ratio, residuals, target_proxy_perceive, visible_annotations, GaussianNoiseSpec, GmmModel,
};
use crate::config::RunConfig;
use crate::detections::{load_detections, save_detections, Detection, SceneDetections};
use crate::error::{Error, Result};
use crate::imitator::Imitator;
use crate::metrics::{evaluate, EvalReport};
use crate::raster::{build_stack, GridSpec, RasterStack};
use crate::scene::{generate_scenes, load_scenes, save_scenes, to_ego_frame, OrientedBox, SceneState};
use crate::simloop::{
    run_batch, summarize, write_episode_logs, AnnotationPerception, GaussianPerception, ImitatorPerception,
    MultimodalPerception, Perception, ProxyPerception,
};
use crate::trainer::{prepare_dataset, select, train, Record, Split};

/// Environment variable that relocates every output path.
pub const OUT_ROOT_ENV: &str = "IMITSIM_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "imitsim", version, about = "Perception imitation and synthesis-free closed-loop simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Annotation,
    Proxy,
    Imitator,
    Gaussian,
    Multimodal,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Annotation => "annotation",
            Source::Proxy => "proxy",
            Source::Imitator => "imitator",
            Source::Gaussian => "gaussian",
            Source::Multimodal => "multimodal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene corpus.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Number of scenes (overrides generator.n_scenes).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "scenes.jsonl")]
        out: PathBuf,
    },
    /// Write the raster channels of scenes as PGM images.
    Rasterize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        /// Scene ids to rasterize (default: the first scene).
        #[arg(long, value_delimiter = ',')]
        ids: Vec<u64>,
        #[arg(long, default_value = "raster")]
        out: PathBuf,
    },
    /// Render one scene (and optionally detections) as a colour PPM.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value_t = 0)]
        id: u64,
        /// Detections JSONL to overlay.
        #[arg(long)]
        dets: Option<PathBuf>,
        #[arg(long, default_value = "render.ppm")]
        out: PathBuf,
    },
    /// Measure the proxy's FN ratio and fit the residual mixture on the
    /// training split.
    FitBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "baseline.json")]
        out: PathBuf,
    },
    /// Run a perception source over a split and write detections.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, value_enum)]
        source: Source,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitPart,
        #[arg(long, default_value = "dets.jsonl")]
        out: PathBuf,
    },
    /// Train the imitator against the proxy.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, default_value = "train")]
        out: PathBuf,
    },
    /// Score predictions against targets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Also write the PR points as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Closed-loop corridor episodes with one perception source.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        perception: Source,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value = "sim")]
        out: PathBuf,
    },
    /// Combine evaluation reports into one comparison table.
    Report {
        /// Reports as `name=path` or plain paths (name = file stem).
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<String>,
        #[arg(long, default_value = "table.md")]
        out: PathBuf,
    },
}

/// Baseline parameters written by `fit-baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineFile {
    pub fn_ratio: f64,
    pub gaussian_sigma: f64,
    pub gmm: GmmModel,
    pub log_likelihood: f64,
    pub n_residuals: usize,
    pub config_hash: String,
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
}

/// Parses `args` and runs; returns the process exit code. Usage errors
/// print clap's text and give 2, failures print a JSON error record and
/// give 1.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return usage_exit_code(&e);
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let record = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{record}");
            1
        }
    }
}

/// 0 for `--help`/`--version`, 2 for real usage errors.
pub fn usage_exit_code(e: &clap::Error) -> i32 {
    if e.use_stderr() {
        2
    } else {
        0
    }
}

fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if p.is_relative() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Other(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Sidecar meta plus the resolved config echoed into the output directory.
fn record_artifact(path: &Path, command: &str, cfg: &RunConfig, is_dir: bool) -> Result<()> {
    let hash = cfg.hash();
    let meta = Meta {
        command,
        config_hash: &hash,
        seed: cfg.seed,
    };
    let (meta_path, dir) = if is_dir {
        (path.join("meta.json"), path.to_path_buf())
    } else {
        (sidecar(path), path.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    write_json(&meta_path, &meta)?;
    write_json(&dir.join("config.resolved.json"), cfg)
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.resolve()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, n, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n {
                cfg.generator.n_scenes = n;
            }
            let out = out_path(&out);
            let scenes = generate_scenes(cfg.module_seed("gen"), &cfg.generator)?;
            ensure_parent(&out)?;
            save_scenes(&scenes, &out)?;
            record_artifact(&out, "gen", &cfg, false)
        }
        Command::Rasterize { common, scenes, ids, out } => {
            let cfg = load_config(&common)?;
            let all = load_scenes(&scenes)?;
            let out = out_path(&out);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let ids = if ids.is_empty() { vec![0] } else { ids };
            for id in ids {
                let s = scene_by_id(&all, id)?;
                let stack = build_stack(&to_ego_frame(s), &cfg.grid, &cfg.pos_enc)?;
                stack.write_pgm(&out, &format!("scene_{id:05}"))?;
            }
            record_artifact(&out, "rasterize", &cfg, true)
        }
        Command::Render { common, scenes, id, dets, out } => {
            let cfg = load_config(&common)?;
            let all = load_scenes(&scenes)?;
            let ego = to_ego_frame(scene_by_id(&all, id)?);
            let overlay = match dets {
                Some(p) => load_detections(&p)?
                    .into_iter()
                    .find(|r| r.scene_id == id)
                    .map(|r| r.dets)
                    .unwrap_or_default(),
                None => Vec::new(),
            };
            let out = out_path(&out);
            ensure_parent(&out)?;
            let stack = build_stack(&ego, &cfg.grid, &cfg.pos_enc)?;
            render_ppm(&out, &stack, &visible_annotations(&ego, &cfg.grid), &overlay)?;
            record_artifact(&out, "render", &cfg, false)
        }
        Command::FitBaseline { common, scenes, out } => {
            let cfg = load_config(&common)?;
            let all = load_scenes(&scenes)?;
            let split = corpus_split(&cfg, all.len())?;
            let fit = fit_baselines(&cfg, &all, &split.train)?;
            let out = out_path(&out);
            write_json(&out, &fit)?;
            record_artifact(&out, "fit-baseline", &cfg, false)
        }
        Command::Detect {
            common,
            scenes,
            source,
            checkpoint,
            baseline,
            split,
            out,
        } => {
            let cfg = load_config(&common)?;
            let all = load_scenes(&scenes)?;
            let ids = split_ids(&cfg, all.len(), split)?;
            let mut src = build_perception(&cfg, source, checkpoint.as_deref(), baseline.as_deref(), Some(cfg.eval.score_floor))?;
            let mut rows = Vec::with_capacity(ids.len());
            for id in ids {
                let ego = to_ego_frame(scene_by_id(&all, id)?);
                rows.push(SceneDetections {
                    scene_id: id,
                    dets: src.perceive(&ego, &cfg.grid, id)?,
                });
            }
            let out = out_path(&out);
            ensure_parent(&out)?;
            save_detections(&out, &rows)?;
            record_artifact(&out, "detect", &cfg, false)
        }
        Command::Train {
            common,
            scenes,
            epochs,
            max_steps,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if max_steps.is_some() {
                cfg.train.max_steps = max_steps;
            }
            let cfg = cfg.resolve()?;
            let all = load_scenes(&scenes)?;
            let split = corpus_split(&cfg, all.len())?;
            let records = records_for(&cfg, &all, split.train.iter().chain(&split.val).copied())?;
            let tr = select(&records, &split.train)?;
            let va = select(&records, &split.val)?;
            let out = out_path(&out);
            let outcome = train(&cfg.train_config(), &tr, &va, Some(&out))?;
            write_json(&out.join("split.json"), &split)?;
            record_artifact(&out, "train", &cfg, true)?;
            match outcome.diverged {
                Some(msg) => Err(Error::NonFinite(format!("training aborted ({msg}); last good parameters saved"))),
                None => Ok(()),
            }
        }
        Command::Eval {
            common,
            preds,
            targets,
            out,
            csv,
        } => {
            let cfg = load_config(&common)?;
            let p = load_detections(&preds)?;
            let t = load_detections(&targets)?;
            let mut report = evaluate(&p, &t, cfg.eval.fixed_threshold)?;
            report.config_hash = Some(cfg.hash());
            let out = out_path(&out);
            write_json(&out, &report)?;
            if let Some(c) = csv {
                let c = out_path(&c);
                ensure_parent(&c)?;
                std::fs::write(&c, report.to_csv()).map_err(|e| Error::io(&c, e))?;
            }
            record_artifact(&out, "eval", &cfg, false)
        }
        Command::Simulate {
            common,
            perception,
            checkpoint,
            baseline,
            episodes,
            out,
        } => {
            let cfg = load_config(&common)?;
            let mut src = build_perception(&cfg, perception, checkpoint.as_deref(), baseline.as_deref(), None)?;
            let logs = run_batch(src.as_mut(), &cfg.grid, &cfg.sim, cfg.module_seed("sim"), episodes);
            let mut summary = summarize(&logs);
            summary.perception = perception.name().to_string();
            summary.config_hash = Some(cfg.hash());
            let out = out_path(&out);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_episode_logs(&out.join("episodes.jsonl"), &logs)?;
            write_json(&out.join("summary.json"), &summary)?;
            record_artifact(&out, "simulate", &cfg, true)
        }
        Command::Report { reports, out } => {
            let rows = reports
                .iter()
                .map(|spec| {
                    let (name, path) = match spec.split_once('=') {
                        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                        None => {
                            let p = PathBuf::from(spec);
                            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                            (stem, p)
                        }
                    };
                    Ok((name, read_json::<EvalReport>(&path)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = comparison_table(&rows)?;
            let out = out_path(&out);
            ensure_parent(&out)?;
            std::fs::write(&out, &table).map_err(|e| Error::io(&out, e))?;
            let hash = rows[0].1.config_hash.clone().unwrap_or_default();
            write_json(&sidecar(&out), &serde_json::json!({ "command": "report", "config_hash": hash }))?;
            print!("{table}");
            Ok(())
        }
    }
}

fn scene_by_id(all: &[SceneState], id: u64) -> Result<&SceneState> {
    all.get(id as usize)
        .ok_or_else(|| Error::validation("id", format!("scene {id} not in corpus of {}", all.len())))
}

/// The corpus split shared by `fit-baseline`, `detect` and `train`.
pub fn corpus_split(cfg: &RunConfig, n: usize) -> Result<Split> {
    let ids: Vec<u64> = (0..n as u64).collect();
    Split::new(&ids, &cfg.train.split, cfg.module_seed("split"))
}

fn split_ids(cfg: &RunConfig, n: usize, part: SplitPart) -> Result<Vec<u64>> {
    let s = corpus_split(cfg, n)?;
    Ok(match part {
        SplitPart::All => (0..n as u64).collect(),
        SplitPart::Train => s.train,
        SplitPart::Val => s.val,
        SplitPart::Test => s.test,
    })
}

pub fn records_for(cfg: &RunConfig, all: &[SceneState], ids: impl Iterator<Item = u64>) -> Result<Vec<Record>> {
    let items = ids
        .map(|id| scene_by_id(all, id).map(|s| (id, s)))
        .collect::<Result<Vec<_>>>()?;
    prepare_dataset(&items, &cfg.proxy, &cfg.grid, &cfg.pos_enc, cfg.train.imitator.downsample)
}

/// FN ratio and residual mixture of the proxy against annotations on `ids`.
pub fn fit_baselines(cfg: &RunConfig, all: &[SceneState], ids: &[u64]) -> Result<BaselineFile> {
    let mut pairs = Vec::with_capacity(ids.len());
    for &id in ids {
        let ego = to_ego_frame(scene_by_id(all, id)?);
        pairs.push((target_proxy_perceive(&ego, &cfg.grid, &cfg.proxy, id), visible_annotations(&ego, &cfg.grid)));
    }
    let res: Vec<_> = pairs.iter().flat_map(|(d, a)| residuals(d, a)).collect();
    let fit = fit_gmm_em(&res, &cfg.baselines.gmm, cfg.module_seed("gmm"))?;
    Ok(BaselineFile {
        fn_ratio: cfg.baselines.fn_ratio.unwrap_or_else(|| measure_fn_ratio(&pairs)),
        gaussian_sigma: cfg.baselines.gaussian_sigma,
        gmm: fit.model,
        log_likelihood: fit.log_likelihood,
        n_residuals: res.len(),
        config_hash: cfg.hash(),
    })
}

/// Perception source for `detect` and `simulate`. `score_floor` replaces
/// the imitator's runtime threshold (used for evaluation output).
pub fn build_perception(
    cfg: &RunConfig,
    source: Source,
    checkpoint: Option<&Path>,
    baseline: Option<&Path>,
    score_floor: Option<f64>,
) -> Result<Box<dyn Perception>> {
    let need_baseline = || -> Result<BaselineFile> {
        let p = baseline.ok_or_else(|| Error::Config(format!("--baseline is required for {}", source.name())))?;
        read_json(p)
    };
    Ok(match source {
        Source::Annotation => Box::new(AnnotationPerception),
        Source::Proxy => Box::new(ProxyPerception(cfg.proxy.clone())),
        Source::Imitator => {
            let p = checkpoint.ok_or_else(|| Error::Config("--checkpoint is required for imitator".into()))?;
            let (model, _) = Imitator::load(p)?;
            if model.config.in_channels != 4 + cfg.pos_enc.d_model {
                return Err(Error::Checkpoint(format!(
                    "checkpoint expects {} input channels, config gives {}",
                    model.config.in_channels,
                    4 + cfg.pos_enc.d_model
                )));
            }
            model.config.check_grid(&cfg.grid)?;
            Box::new(ImitatorPerception {
                model,
                pos_enc: cfg.pos_enc,
                score_threshold: score_floor,
            })
        }
        Source::Gaussian => {
            let b = need_baseline()?;
            Box::new(GaussianPerception(GaussianNoiseSpec {
                sigma: b.gaussian_sigma,
                fn_ratio: b.fn_ratio,
                seed: cfg.module_seed("gaussian"),
            }))
        }
        Source::Multimodal => {
            let b = need_baseline()?;
            Box::new(MultimodalPerception {
                model: b.gmm,
                fn_ratio: b.fn_ratio,
                seed: cfg.module_seed("multimodal"),
            })
        }
    })
}

/// Markdown table with one row per source; refuses reports produced under
/// different configurations.
pub fn comparison_table(rows: &[(String, EvalReport)]) -> Result<String> {
    let hashes: std::collections::BTreeSet<Option<&str>> = rows.iter().map(|(_, r)| r.config_hash.as_deref()).collect();
    if hashes.len() > 1 {
        return Err(Error::Config(format!(
            "reports come from different configurations: {:?}",
            hashes.into_iter().map(|h| h.unwrap_or("none")).collect::<Vec<_>>()
        )));
    }
    let mut s = String::from("| source | mAP@0.5 | mAP@0.7 | maxR@0.5 | maxR@0.7 | precision | recall |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for (name, r) in rows {
        s.push_str(&format!(
            "| {name} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.map_050, r.map_070, r.maxr_050, r.maxr_070, r.precision_at_fixed, r.recall_at_fixed
        ));
    }
    Ok(s)
}

/// Freespace grey, waypoints white, occluded pixels darkened, annotations
/// green, detections red, ego blue.
pub fn render_ppm(path: &Path, stack: &RasterStack, annotations: &[OrientedBox], dets: &[Detection]) -> Result<()> {
    let grid = stack.grid;
    let (h, w) = (grid.height_px, grid.width_px);
    let mut img = vec![[24u8, 24, 24]; h * w];
    for r in 0..h {
        for c in 0..w {
            let px = &mut img[r * w + c];
            if stack.freespace.get(r, c) == 1 {
                *px = [90, 90, 90];
            }
            if stack.waypoints.get(r, c) == 1 {
                *px = [200, 200, 200];
            }
            if stack.vehicles.get(r, c) == 1 {
                *px = [40, 140, 40];
            }
            if stack.occlusion.get(r, c) == 0 {
                *px = px.map(|v| v / 2);
            }
        }
    }
    let mut outline = |b: &OrientedBox, color: [u8; 3]| {
        let cs = b.corners();
        for k in 0..4 {
            let (a, e) = (grid.ego_to_index(cs[k]), grid.ego_to_index(cs[(k + 1) % 4]));
            let a = [a[0].round() as i64, a[1].round() as i64];
            let e = [e[0].round() as i64, e[1].round() as i64];
            crate::raster::bresenham(a, e, |r, c| {
                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                    img[r as usize * w + c as usize] = color;
                }
            });
        }
    };
    for b in annotations {
        outline(b, [60, 230, 60]);
    }
    for d in dets {
        outline(&d.bbox, [240, 50, 50]);
    }
    outline(&OrientedBox::new(0.0, 0.0, 1.9, 4.5, 0.0), [70, 120, 255]);
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    write!(out, "P6\n{w} {h}\n255\n").map_err(|e| Error::io(path, e))?;
    for px in img {
        out.write_all(&px).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Annotations in `ids` as score-1 detections, for evaluation targets.
pub fn annotation_rows(all: &[SceneState], grid: &GridSpec, ids: &[u64]) -> Result<Vec<SceneDetections>> {
    ids.iter()
        .map(|&id| {
            let ego = to_ego_frame(scene_by_id(all, id)?);
            Ok(SceneDetections {
                scene_id: id,
                dets: annotation_detections(&visible_annotations(&ego, grid)),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        for args in [&["imitsim", "frobnicate"][..], &["imitsim", "gen", "--n", "many"]] {
            let e = Cli::try_parse_from(args).unwrap_err();
            assert_eq!(usage_exit_code(&e), 2);
        }
        let e = Cli::try_parse_from(["imitsim", "--help"]).unwrap_err();
        assert_eq!(usage_exit_code(&e), 0);
    }

    #[test]
    fn table_refuses_mixed_hashes() {
        let mut a = crate::metrics::evaluate_pairs(&[], 0.5);
        a.config_hash = Some("aa".into());
        let mut b = a.clone();
        assert!(comparison_table(&[("a".into(), a.clone()), ("b".into(), b.clone())]).is_ok());
        b.config_hash = Some("bb".into());
        assert!(comparison_table(&[("a".into(), a), ("b".into(), b)]).is_err());
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar(Path::new("x/dets.jsonl")), PathBuf::from("x/dets.jsonl.meta.json"));
    }
}
