//! The perception imitator: a small strided conv backbone with one
//! top-down merge, a sigmoid classification head and a 6-channel
//! regression head `(dx, dy, ln w, ln l, sin, cos)`, plus target encoding,
//! decoding and rotated NMS.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detections::Detection;
use crate::error::{Error, Result};
use crate::metrics::{iou_rotated, score_order};
use crate::numerics::{Graph, ParamSet, Tensor, Var};
use crate::raster::{GridSpec, RasterStack};
use crate::scene::OrientedBox;
use crate::seed;

pub const REG_CHANNELS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImitatorConfig {
    pub in_channels: usize,
    /// One stride-2 stage per entry; the head runs at the second-deepest.
    pub widths: Vec<usize>,
    pub downsample: usize,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
    /// Initial classification probability set through the head bias.
    pub cls_prior: f64,
}

impl Default for ImitatorConfig {
    fn default() -> Self {
        ImitatorConfig {
            in_channels: 4 + 64,
            widths: vec![32, 64, 128],
            downsample: 4,
            score_threshold: 0.5,
            nms_iou_threshold: 0.3,
            cls_prior: 0.5,
        }
    }
}

impl ImitatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::validation("imitator.in_channels", "must be positive"));
        }
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::validation(
                "imitator.widths",
                "need at least two positive stage widths",
            ));
        }
        let d = 1usize << (self.widths.len() - 1);
        if self.downsample != d {
            return Err(Error::validation(
                "imitator.downsample",
                format!("{} stages give an output stride of {d}, not {}", self.widths.len(), self.downsample),
            ));
        }
        for (name, v) in [
            ("imitator.score_threshold", self.score_threshold),
            ("imitator.nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if !(self.cls_prior > 0.0 && self.cls_prior < 1.0) {
            return Err(Error::validation("imitator.cls_prior", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Grid extents must survive every stride-2 stage exactly.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        let m = 1usize << self.widths.len();
        if !grid.height_px.is_multiple_of(m) || !grid.width_px.is_multiple_of(m) {
            return Err(Error::validation(
                "grid",
                format!(
                    "{}x{} is not divisible by {m} as the backbone requires",
                    grid.height_px, grid.width_px
                ),
            ));
        }
        Ok(())
    }
}

/// Head outputs (or pseudo maps). `reg` is channel-major `6 x H' x W'`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps {
    pub height: usize,
    pub width: usize,
    pub cls: Vec<f64>,
    pub reg: Vec<f64>,
}

impl HeadMaps {
    pub fn zeros(height: usize, width: usize) -> Self {
        HeadMaps {
            height,
            width,
            cls: vec![0.0; height * width],
            reg: vec![0.0; REG_CHANNELS * height * width],
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn reg_at(&self, cell: usize) -> [f64; REG_CHANNELS] {
        let n = self.cells();
        std::array::from_fn(|k| self.reg[k * n + cell])
    }

    pub fn set_reg(&mut self, cell: usize, v: [f64; REG_CHANNELS]) {
        let n = self.cells();
        for (k, x) in v.into_iter().enumerate() {
            self.reg[k * n + cell] = x;
        }
    }

    pub fn positives(&self) -> usize {
        self.cls.iter().filter(|&&c| c == 1.0).count()
    }
}

/// Ego-frame centre of output cell (i, j) at stride `d`.
pub fn cell_center(grid: &GridSpec, d: usize, i: usize, j: usize) -> [f64; 2] {
    let half = (d as f64 - 1.0) / 2.0;
    grid.index_to_ego((i * d) as f64 + half, (j * d) as f64 + half)
}

/// Output cell holding an ego-frame point, if any.
pub fn cell_of(grid: &GridSpec, d: usize, p: [f64; 2]) -> Option<(usize, usize)> {
    if !grid.contains(p) {
        return None;
    }
    let [r, c] = grid.ego_to_index(p);
    let i = ((r + 0.5) / d as f64).floor() as usize;
    let j = ((c + 0.5) / d as f64).floor() as usize;
    (i < grid.height_px / d && j < grid.width_px / d).then_some((i, j))
}

pub fn encode_box(b: &OrientedBox, center: [f64; 2]) -> [f64; REG_CHANNELS] {
    let (s, c) = b.yaw.sin_cos();
    [b.cx - center[0], b.cy - center[1], b.w.ln(), b.l.ln(), s, c]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTargets {
    pub maps: HeadMaps,
    /// Boxes displaced by a nearer box in the same cell.
    pub collisions: usize,
    /// Boxes whose centre lies outside the grid.
    pub out_of_grid: usize,
}

/// Pseudo classification/regression maps from a box list. When two boxes
/// share a cell the one nearer the ego wins.
pub fn encode_targets(boxes: &[OrientedBox], grid: &GridSpec, d: usize) -> EncodedTargets {
    let (h, w) = (grid.height_px / d, grid.width_px / d);
    let mut maps = HeadMaps::zeros(h, w);
    let mut owner: Vec<Option<f64>> = vec![None; h * w];
    let (mut collisions, mut out_of_grid) = (0, 0);
    for b in boxes {
        let Some((i, j)) = cell_of(grid, d, b.center()) else {
            out_of_grid += 1;
            continue;
        };
        let cell = i * w + j;
        let dist = b.cx.hypot(b.cy);
        if let Some(prev) = owner[cell] {
            collisions += 1;
            if dist >= prev {
                continue;
            }
        }
        owner[cell] = Some(dist);
        maps.cls[cell] = 1.0;
        maps.set_reg(cell, encode_box(b, cell_center(grid, d, i, j)));
    }
    EncodedTargets {
        maps,
        collisions,
        out_of_grid,
    }
}

pub fn decode_cell(reg: [f64; REG_CHANNELS], center: [f64; 2]) -> Option<OrientedBox> {
    let [dx, dy, lw, ll, s, c] = reg;
    let (w, l) = (lw.exp(), ll.exp());
    let vals = [dx, dy, s, c, w, l];
    if vals.iter().any(|v| !v.is_finite()) || w <= 0.0 || l <= 0.0 {
        return None;
    }
    Some(OrientedBox::new(center[0] + dx, center[1] + dy, w, l, s.atan2(c)))
}

/// Every cell with `cls >= score_threshold` becomes a detection.
pub fn decode(maps: &HeadMaps, grid: &GridSpec, d: usize, score_threshold: f64) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for i in 0..maps.height {
        for j in 0..maps.width {
            let cell = i * maps.width + j;
            let score = maps.cls[cell];
            if score < score_threshold {
                continue;
            }
            let b = decode_cell(maps.reg_at(cell), cell_center(grid, d, i, j))
                .ok_or_else(|| Error::NonFinite(format!("decode at cell ({i}, {j})")))?;
            out.push(Detection::new(b, score.clamp(0.0, 1.0)));
        }
    }
    Ok(out)
}

/// Greedy rotated NMS: highest score first (ties by input order); a box is
/// kept iff its IoU with every kept box is below the threshold.
pub fn nms_rotated(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in score_order(dets) {
        let d = dets[i];
        if kept.iter().all(|k| iou_rotated(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Network weights plus configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Imitator {
    pub config: ImitatorConfig,
    pub params: ParamSet,
}

/// Graph handles of the two heads.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub cls: Var,
    pub reg: Var,
}

impl Imitator {
    /// He-normal backbone, zero head weights, classification bias at the
    /// configured prior.
    pub fn new(config: ImitatorConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(seed_value, "imitator.init", 0);
        let mut params = ParamSet::new();
        let he = |rng: &mut rand_chacha::ChaCha8Rng, shape: [usize; 4]| {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            Tensor::from_fn(&shape, |_| normal.sample(rng))
        };
        let ws = &config.widths;
        let mut prev = config.in_channels;
        for (i, &w) in ws.iter().enumerate() {
            params.push(format!("stage{i}.w"), he(&mut rng, [w, prev, 3, 3]));
            params.push(format!("stage{i}.b"), Tensor::zeros(&[w]));
            prev = w;
        }
        let mid = ws[ws.len() - 2];
        params.push("lateral.w", he(&mut rng, [mid, prev, 1, 1]));
        params.push("lateral.b", Tensor::zeros(&[mid]));
        params.push("merge.w", he(&mut rng, [mid, mid, 3, 3]));
        params.push("merge.b", Tensor::zeros(&[mid]));
        params.push("cls.w", Tensor::zeros(&[1, mid, 1, 1]));
        let p = config.cls_prior;
        params.push("cls.b", Tensor::scalar((p / (1.0 - p)).ln()));
        params.push("reg.w", Tensor::zeros(&[REG_CHANNELS, mid, 1, 1]));
        params.push("reg.b", Tensor::zeros(&[REG_CHANNELS]));
        Ok(Imitator { config, params })
    }

    pub fn output_dims(&self, grid: &GridSpec) -> (usize, usize) {
        let d = self.config.downsample;
        (grid.height_px / d, grid.width_px / d)
    }

    /// Records the forward pass on `g`. `vars` are this model's parameters
    /// in `ParamSet` order; `input` is NCHW.
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], input: Var) -> Result<HeadVars> {
        let c = g.value(input).dims4()?[1];
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "imitator expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let k = self.config.widths.len();
        let mut feats = Vec::with_capacity(k);
        let mut x = input;
        for i in 0..k {
            let y = g.conv2d(x, vars[2 * i], Some(vars[2 * i + 1]), 2, 1)?;
            x = g.relu(y)?;
            feats.push(x);
        }
        let base = 2 * k;
        let lat = g.conv2d(x, vars[base], Some(vars[base + 1]), 1, 0)?;
        let up = g.upsample2x(lat)?;
        let sum = g.add(up, feats[k - 2])?;
        let merged = g.relu(sum)?;
        let m = g.conv2d(merged, vars[base + 2], Some(vars[base + 3]), 1, 1)?;
        let feat = g.relu(m)?;
        let logits = g.conv2d(feat, vars[base + 4], Some(vars[base + 5]), 1, 0)?;
        let cls = g.sigmoid(logits)?;
        let reg = g.conv2d(feat, vars[base + 6], Some(vars[base + 7]), 1, 0)?;
        Ok(HeadVars { cls, reg })
    }

    /// Batched inference; returns one `HeadMaps` per stack.
    pub fn forward_batch(&self, stacks: &[&RasterStack]) -> Result<Vec<HeadMaps>> {
        if stacks.is_empty() {
            return Ok(Vec::new());
        }
        let grid = stacks[0].grid;
        self.config.check_grid(&grid)?;
        let input = stack_batch(stacks)?;
        let mut g = Graph::new();
        let vars = self.params.attach(&mut g, false);
        let x = g.constant(input);
        let heads = self.forward_graph(&mut g, &vars, x)?;
        Ok(split_heads(g.value(heads.cls), g.value(heads.reg)))
    }

    pub fn forward(&self, stack: &RasterStack) -> Result<HeadMaps> {
        Ok(self.forward_batch(&[stack])?.remove(0))
    }

    /// forward → decode at the score threshold → NMS.
    pub fn perceive(&self, stack: &RasterStack) -> Result<Vec<Detection>> {
        let maps = self.forward(stack)?;
        self.postprocess(&maps, &stack.grid)
    }

    pub fn postprocess(&self, maps: &HeadMaps, grid: &GridSpec) -> Result<Vec<Detection>> {
        self.postprocess_at(maps, grid, self.config.score_threshold)
    }

    /// Decode at an explicit score threshold (evaluation sweeps use a low
    /// floor so the PR curve is not cut at the runtime threshold).
    pub fn postprocess_at(&self, maps: &HeadMaps, grid: &GridSpec, score_threshold: f64) -> Result<Vec<Detection>> {
        let dets = decode(maps, grid, self.config.downsample, score_threshold)?;
        Ok(nms_rotated(&dets, self.config.nms_iou_threshold))
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "imitator": self.config, "extra": extra });
        self.params.save(path, &meta)
    }

    pub fn load(path: &Path) -> Result<(Imitator, serde_json::Value)> {
        let (params, meta) = ParamSet::load(path)?;
        let config: ImitatorConfig = serde_json::from_value(meta["imitator"].clone())
            .map_err(|e| Error::Checkpoint(format!("imitator config: {e}")))?;
        config.validate()?;
        let reference = Imitator::new(config.clone(), 0)?;
        if reference.params.names() != params.names()
            || reference
                .params
                .tensors()
                .iter()
                .zip(params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint("parameter layout does not match config".into()));
        }
        Ok((Imitator { config, params }, meta["extra"].clone()))
    }
}

/// Concatenates stacks into one NCHW tensor.
pub fn stack_batch(stacks: &[&RasterStack]) -> Result<Tensor> {
    let grid = stacks[0].grid;
    let c = stacks[0].channel_count();
    let mut data = Vec::with_capacity(stacks.len() * c * grid.pixel_count());
    for s in stacks {
        if s.channel_count() != c || s.grid.height_px != grid.height_px || s.grid.width_px != grid.width_px {
            return Err(Error::Shape("stacks in a batch must share grid and channels".into()));
        }
        data.extend(s.to_chw());
    }
    Tensor::new(vec![stacks.len(), c, grid.height_px, grid.width_px], data)
}

pub fn split_heads(cls: &Tensor, reg: &Tensor) -> Vec<HeadMaps> {
    let s = cls.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let plane = h * w;
    (0..n)
        .map(|b| HeadMaps {
            height: h,
            width: w,
            cls: cls.data()[b * plane..(b + 1) * plane].to_vec(),
            reg: reg.data()[b * REG_CHANNELS * plane..(b + 1) * REG_CHANNELS * plane].to_vec(),
        })
        .collect()
}
