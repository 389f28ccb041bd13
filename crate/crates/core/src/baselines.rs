//! Comparison perception sources: the seeded target proxy that stands in
//! for a real detector, i.i.d. Gaussian noise, and a Gaussian-mixture
//! residual model fitted by EM.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::detections::{Detection, SceneDetections};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, point_in_polygon, segment_box_entry};
use crate::metrics::{iou_rotated, match_greedy};
use crate::raster::GridSpec;
use crate::scene::{Agent, AgentKind, OrientedBox, SceneState};
use crate::seed;

/// Piecewise-linear function through `(x, y)` knots, constant beyond the
/// first and last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curve(pub Vec<[f64; 2]>);

impl Curve {
    pub fn constant(v: f64) -> Self {
        Curve(vec![[0.0, v]])
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.0;
        if x <= k[0][0] {
            return k[0][1];
        }
        for w in k.windows(2) {
            let ([x0, y0], [x1, y1]) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        k[k.len() - 1][1]
    }

    fn validate(&self, field: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::validation(field, "needs at least one knot"));
        }
        if self.0.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::validation(field, "knot abscissae must increase"));
        }
        if self.0.iter().any(|p| !(0.0..=1.0).contains(&p[1])) {
            return Err(Error::validation(field, "probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetProxySpec {
    /// Keep probability against sensor distance (m).
    pub detect_vs_distance: Curve,
    /// Keep probability against occluded fraction of the box.
    pub detect_vs_occlusion: Curve,
    pub center_sigma: f64,
    /// Standard deviation of the log-scale factor on w and l.
    pub size_sigma: f64,
    pub yaw_sigma: f64,
    pub fp_rate: f64,
    /// Score at the sensor and the drop per metre of range.
    pub score_near: f64,
    pub score_slope: f64,
    pub score_occlusion_penalty: f64,
    pub score_jitter: f64,
    pub seed: u64,
}

impl Default for TargetProxySpec {
    fn default() -> Self {
        TargetProxySpec {
            detect_vs_distance: Curve(vec![[0.0, 0.99], [28.0, 0.99], [33.0, 0.5], [38.0, 0.02], [60.0, 0.0]]),
            detect_vs_occlusion: Curve(vec![[0.0, 1.0], [0.4, 0.98], [0.6, 0.5], [0.8, 0.02], [1.0, 0.0]]),
            center_sigma: 0.08,
            size_sigma: 0.03,
            yaw_sigma: 0.02,
            fp_rate: 0.05,
            score_near: 0.95,
            score_slope: 0.012,
            score_occlusion_penalty: 0.3,
            score_jitter: 0.03,
            seed: 0,
        }
    }
}

impl TargetProxySpec {
    /// Every agent kept, no noise, no false positives.
    pub fn identity(seed: u64) -> Self {
        TargetProxySpec {
            detect_vs_distance: Curve::constant(1.0),
            detect_vs_occlusion: Curve::constant(1.0),
            center_sigma: 0.0,
            size_sigma: 0.0,
            yaw_sigma: 0.0,
            fp_rate: 0.0,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detect_vs_distance.validate("proxy.detect_vs_distance")?;
        self.detect_vs_occlusion.validate("proxy.detect_vs_occlusion")?;
        for (name, v) in [
            ("proxy.center_sigma", self.center_sigma),
            ("proxy.size_sigma", self.size_sigma),
            ("proxy.yaw_sigma", self.yaw_sigma),
            ("proxy.fp_rate", self.fp_rate),
            ("proxy.score_jitter", self.score_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(name, "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    fn score(&self, dist: f64, occluded: f64, jitter: f64) -> f64 {
        (self.score_near - self.score_slope * dist - self.score_occlusion_penalty * occluded + jitter).clamp(0.05, 1.0)
    }
}

/// Vehicles whose centre falls inside the grid: the annotation set every
/// perception source is compared against.
pub fn visible_annotations(scene: &SceneState, grid: &GridSpec) -> Vec<OrientedBox> {
    scene
        .agents
        .iter()
        .filter(|a| a.kind == AgentKind::Vehicle && grid.contains(a.bbox.center()))
        .map(|a| a.bbox)
        .collect()
}

/// Fraction of a 5x5 lattice inside `agents[idx]` whose line of sight from
/// the sensor enters some other agent first.
pub fn occluded_fraction(agents: &[Agent], idx: usize, sensor: [f64; 2]) -> f64 {
    let b = &agents[idx].bbox;
    let (s, c) = b.yaw.sin_cos();
    let mut hidden = 0;
    for i in 0..5 {
        for j in 0..5 {
            let u = ((i as f64 + 0.5) / 5.0 - 0.5) * b.l;
            let v = ((j as f64 + 0.5) / 5.0 - 0.5) * b.w;
            let p = [b.cx + u * c - v * s, b.cy + u * s + v * c];
            let blocked = agents
                .iter()
                .enumerate()
                .any(|(k, a)| k != idx && segment_box_entry(sensor, p, &a.bbox).is_some_and(|t| t < 1.0));
            if blocked {
                hidden += 1;
            }
        }
    }
    hidden as f64 / 25.0
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Seeded stand-in for a real detector on an ego-frame scene. Range and
/// occlusion drive misses; survivors are jittered and scored; spurious
/// boxes are dropped into free space.
pub fn target_proxy_perceive(scene: &SceneState, grid: &GridSpec, spec: &TargetProxySpec, scene_id: u64) -> Vec<Detection> {
    let mut rng = seed::stream(spec.seed, "target_proxy", scene_id);
    let sensor = grid.sensor_origin;
    let mut out = Vec::new();
    for (idx, a) in scene.agents.iter().enumerate() {
        if a.kind != AgentKind::Vehicle || !grid.contains(a.bbox.center()) {
            continue;
        }
        let dist = (a.bbox.cx - sensor[0]).hypot(a.bbox.cy - sensor[1]);
        let occ = occluded_fraction(&scene.agents, idx, sensor);
        let p = (spec.detect_vs_distance.eval(dist) * spec.detect_vs_occlusion.eval(occ)).clamp(0.0, 1.0);
        // Draw every variate regardless of the outcome so one agent's fate
        // never shifts another's noise.
        let u: f64 = rng.random();
        let noise = [
            gauss(&mut rng, spec.center_sigma),
            gauss(&mut rng, spec.center_sigma),
            gauss(&mut rng, spec.size_sigma),
            gauss(&mut rng, spec.size_sigma),
            gauss(&mut rng, spec.yaw_sigma),
            gauss(&mut rng, spec.score_jitter),
        ];
        if u >= p {
            continue;
        }
        let b = a.bbox;
        let nb = OrientedBox::new(
            b.cx + noise[0],
            b.cy + noise[1],
            b.w * noise[2].exp(),
            b.l * noise[3].exp(),
            b.yaw + noise[4],
        );
        out.push(Detection::new(nb, spec.score(dist, occ, noise[5])));
    }
    if spec.fp_rate > 0.0 {
        let n_fp = Poisson::new(spec.fp_rate).expect("positive rate").sample(&mut rng) as usize;
        for _ in 0..n_fp {
            if let Some(b) = sample_free_box(&mut rng, scene, grid) {
                let s = rng.random_range(0.2..0.5);
                out.push(Detection::new(b, s));
            }
        }
    }
    out
}

/// A vehicle-sized box on free road that touches neither the ego nor any
/// agent. Gives up after a fixed number of tries.
fn sample_free_box(rng: &mut ChaCha8Rng, scene: &SceneState, grid: &GridSpec) -> Option<OrientedBox> {
    let h = grid.height_px as f64;
    let w = grid.width_px as f64;
    for _ in 0..50 {
        let r = rng.random_range(-0.5..h - 0.5);
        let c = rng.random_range(-0.5..w - 0.5);
        let p = grid.index_to_ego(r, c);
        let yaw = gauss(rng, 0.05);
        let wid = rng.random_range(1.8..2.0);
        let len = rng.random_range(4.2..4.8);
        if !scene.road.freespace.is_empty() && !scene.road.freespace.iter().any(|poly| point_in_polygon(p, poly)) {
            continue;
        }
        let b = OrientedBox::new(p[0], p[1], wid, len, yaw);
        let clear = iou_rotated(&b, &scene.ego_box) == 0.0 && scene.agents.iter().all(|a| iou_rotated(&b, &a.bbox) == 0.0);
        if clear {
            return Some(b);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianNoiseSpec {
    pub sigma: f64,
    pub fn_ratio: f64,
    pub seed: u64,
}

impl Default for GaussianNoiseSpec {
    fn default() -> Self {
        GaussianNoiseSpec {
            sigma: 0.1,
            fn_ratio: 0.0,
            seed: 0,
        }
    }
}

/// Perturbs `(cx, cy, ln w, ln l, sin, cos)` of each box by N(0, sigma^2)
/// and drops boxes i.i.d. with probability `fn_ratio`. Scores are 1.
pub fn gaussian_baseline(boxes: &[OrientedBox], spec: &GaussianNoiseSpec, scene_id: u64) -> Vec<Detection> {
    let mut rng = seed::stream(spec.seed, "gaussian_baseline", scene_id);
    let mut out = Vec::new();
    for b in boxes {
        let e: [f64; 6] = std::array::from_fn(|_| gauss(&mut rng, spec.sigma));
        let u: f64 = rng.random();
        if u < spec.fn_ratio {
            continue;
        }
        let (s, c) = b.yaw.sin_cos();
        let nb = OrientedBox::new(
            b.cx + e[0],
            b.cy + e[1],
            (b.w.ln() + e[2]).exp(),
            (b.l.ln() + e[3]).exp(),
            (s + e[4]).atan2(c + e[5]),
        );
        out.push(Detection::new(nb, 1.0));
    }
    out
}

pub const RESIDUAL_DIM: usize = 5;
pub type Residual = [f64; RESIDUAL_DIM];

/// Residuals `(dcx, dcy, dw, dl, dyaw)` of target detections against the
/// annotations they match at IoU >= 0.5.
pub fn residuals(dets: &[Detection], annotations: &[OrientedBox]) -> Vec<Residual> {
    match_greedy(dets, annotations, 0.5)
        .tp
        .iter()
        .map(|&(p, g, _)| {
            let (d, a) = (dets[p].bbox, annotations[g]);
            [d.cx - a.cx, d.cy - a.cy, d.w - a.w, d.l - a.l, normalize_angle(d.yaw - a.yaw)]
        })
        .collect()
}

/// Fraction of annotations left unmatched (IoU 0.5) across a corpus.
pub fn measure_fn_ratio(pairs: &[(Vec<Detection>, Vec<OrientedBox>)]) -> f64 {
    let (mut missed, mut total) = (0usize, 0usize);
    for (dets, anns) in pairs {
        missed += match_greedy(dets, anns, 0.5).fn_.len();
        total += anns.len();
    }
    if total == 0 {
        0.0
    } else {
        missed as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Residual>,
    pub variances: Vec<Residual>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: f64,
    /// Mean per-sample log-likelihood after each EM iteration.
    pub history: Vec<f64>,
    pub reseeds: usize,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::Fit("mixture arrays disagree in length".into()));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Fit("weights must form a simplex".into()));
        }
        if self.variances.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Fit("variances must be positive".into()));
        }
        Ok(())
    }

    fn log_component(&self, j: usize, x: &Residual) -> f64 {
        let mut lp = self.weights[j].ln();
        for d in 0..RESIDUAL_DIM {
            let v = self.variances[j][d];
            let e = x[d] - self.means[j][d];
            lp -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + e * e / v);
        }
        lp
    }

    pub fn log_density(&self, x: &Residual) -> f64 {
        let lps: Vec<f64> = (0..self.k()).map(|j| self.log_component(j, x)).collect();
        log_sum_exp(&lps)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Residual {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = self.k() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = i;
                break;
            }
        }
        std::array::from_fn(|d| self.means[j][d] + gauss(rng, self.variances[j][d].sqrt()))
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &Residual, b: &Residual, scale: &Residual) -> f64 {
    (0..RESIDUAL_DIM).map(|d| (a[d] - b[d]).powi(2) / scale[d]).sum()
}

/// k-means++ seeding on variance-scaled coordinates.
fn kmeanspp(data: &[Residual], k: usize, scale: &Residual, rng: &mut ChaCha8Rng) -> Vec<Residual> {
    let mut centers = vec![data[rng.random_range(0..data.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| centers.iter().map(|c| sq_dist(x, c, scale)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, &v) in d2.iter().enumerate() {
                if u < v {
                    pick = i;
                    break;
                }
                u -= v;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        centers.push(data[next]);
    }
    centers
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            k: 3,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

/// EM for a diagonal-covariance mixture. A component whose weight or
/// variance collapses is re-seeded once; a second collapse is an error.
pub fn fit_gmm_em(data: &[Residual], cfg: &GmmConfig, seed_value: u64) -> Result<GmmFit> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::Fit("k must be positive".into()));
    }
    let mut distinct: Vec<&Residual> = data.iter().collect();
    distinct.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Fit(format!("{} distinct residuals for {k} components", distinct.len())));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite residual".into()));
    }
    let n = data.len() as f64;
    let mean: Residual = std::array::from_fn(|d| data.iter().map(|x| x[d]).sum::<f64>() / n);
    let global_var: Residual = std::array::from_fn(|d| {
        let v = data.iter().map(|x| (x[d] - mean[d]).powi(2)).sum::<f64>() / n;
        if v > 0.0 {
            v
        } else {
            1e-12
        }
    });
    let floor: Residual = std::array::from_fn(|d| global_var[d] * 1e-9);
    let mut rng = seed::stream(seed_value, "gmm", 0);
    let centers = kmeanspp(data, k, &global_var, &mut rng);
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: centers,
        variances: vec![global_var; k],
    };
    let mut reseeded = vec![false; k];
    let mut reseeds = 0;
    let mut history = Vec::new();
    let mut resp = vec![vec![0.0; k]; data.len()];
    for _ in 0..cfg.max_iter.max(1) {
        // E step
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            let lps: Vec<f64> = (0..k).map(|j| model.log_component(j, x)).collect();
            let lse = log_sum_exp(&lps);
            ll += lse;
            for j in 0..k {
                resp[i][j] = (lps[j] - lse).exp();
            }
        }
        history.push(ll / n);
        // M step
        let mut collapsed = Vec::new();
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk / n < 1e-6 {
                collapsed.push(j);
                continue;
            }
            let mu: Residual = std::array::from_fn(|d| data.iter().zip(&resp).map(|(x, r)| r[j] * x[d]).sum::<f64>() / nk);
            let var: Residual = std::array::from_fn(|d| {
                data.iter().zip(&resp).map(|(x, r)| r[j] * (x[d] - mu[d]).powi(2)).sum::<f64>() / nk
            });
            if (0..RESIDUAL_DIM).any(|d| !(var[d] > floor[d])) {
                collapsed.push(j);
                continue;
            }
            model.weights[j] = nk / n;
            model.means[j] = mu;
            model.variances[j] = var;
        }
        if !collapsed.is_empty() {
            for &j in &collapsed {
                if reseeded[j] {
                    return Err(Error::Fit(format!("component {j} collapsed again after re-seeding")));
                }
                reseeded[j] = true;
                reseeds += 1;
                model.means[j] = data[rng.random_range(0..data.len())];
                model.variances[j] = global_var;
                model.weights[j] = 1.0 / k as f64;
            }
            let s: f64 = model.weights.iter().sum();
            model.weights.iter_mut().for_each(|w| *w /= s);
            continue;
        }
        let s: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= s);
        if history.len() >= 2 {
            let gain = history[history.len() - 1] - history[history.len() - 2];
            if gain.abs() < cfg.tol {
                break;
            }
        }
    }
    let log_likelihood = data.iter().map(|x| model.log_density(x)).sum::<f64>();
    history.push(log_likelihood / n);
    model.validate()?;
    Ok(GmmFit {
        model,
        log_likelihood,
        history,
        reseeds,
    })
}

/// Applies a residual drawn from the mixture to each box and drops boxes
/// i.i.d. with probability `fn_ratio`. Scores are 1.
pub fn multimodal_baseline(boxes: &[OrientedBox], model: &GmmModel, fn_ratio: f64, seed_value: u64, scene_id: u64) -> Vec<Detection> {
    let mut rng = seed::stream(seed_value, "multimodal_baseline", scene_id);
    let mut out = Vec::new();
    for b in boxes {
        let r = model.sample(&mut rng);
        let u: f64 = rng.random();
        if u < fn_ratio {
            continue;
        }
        let nb = OrientedBox::new(b.cx + r[0], b.cy + r[1], (b.w + r[2]).max(0.1), (b.l + r[3]).max(0.1), b.yaw + r[4]);
        out.push(Detection::new(nb, 1.0));
    }
    out
}

/// Annotation boxes reported as detections with score 1.
pub fn annotation_detections(boxes: &[OrientedBox]) -> Vec<Detection> {
    boxes.iter().map(|&b| Detection::new(b, 1.0)).collect()
}

/// Proxy detections for a corpus of ego-frame scenes, keyed by index.
pub fn proxy_corpus(scenes: &[SceneState], grid: &GridSpec, spec: &TargetProxySpec) -> Vec<SceneDetections> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| SceneDetections {
            scene_id: i as u64,
            dets: target_proxy_perceive(s, grid, spec, i as u64),
        })
        .collect()
}
