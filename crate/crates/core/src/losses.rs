//! Training objectives. Each term is evaluated together with its gradient
//! with respect to the head outputs and recorded on the tape as a single
//! scalar node.

use serde::{Deserialize, Serialize};

use crate::detections::Detection;
use crate::error::{Error, Result};
use crate::imitator::{cell_center, decode_cell, split_heads, HeadMaps, REG_CHANNELS};
use crate::metrics::match_greedy;
use crate::numerics::{Graph, Var};
use crate::raster::GridSpec;
use crate::scene::OrientedBox;

pub const CLS_EPS: f64 = 1e-7;
pub const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub kernel_sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.001,
            alpha: 2.0,
            beta: 0.01,
            gamma: 10.0,
            omega1: 0.005,
            omega2: 0.001,
            kernel_sigma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("loss.{name}"), "must be finite and nonnegative"));
            }
        }
        if !(self.kernel_sigma.is_finite() && self.kernel_sigma > 0.0) {
            return Err(Error::validation("loss.kernel_sigma", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOptions {
    /// Evaluate MMD over every cell instead of the union of positive cells.
    pub mmd_all_pixels: bool,
    /// Per-channel bandwidth from the median pairwise distance of the
    /// target samples; falls back to `kernel_sigma` when that is zero.
    pub median_bandwidth: bool,
    pub corner_match_iou: f64,
    /// Cells at or above this predicted score take part in corner matching.
    pub corner_score_threshold: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            mmd_all_pixels: false,
            median_bandwidth: false,
            corner_match_iou: 0.5,
            corner_score_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub corner: f64,
    pub mmd_box: f64,
    pub mmd_err: f64,
    pub weight_reg: f64,
    pub corner_matches: usize,
    pub smooth_l1_beta: f64,
}

impl LossReport {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.alpha * self.cls
            + w.beta * self.reg
            + w.gamma * self.corner
            + w.omega1 * self.mmd_box
            + w.omega2 * self.mmd_err
            + w.lambda * self.weight_reg
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * x * x / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < SMOOTH_L1_BETA {
        x / SMOOTH_L1_BETA
    } else {
        x.signum()
    }
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("bce: {} predictions vs {} targets", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; x.len()];
    for ((&xi, &yi), gi) in x.iter().zip(y).zip(grad.iter_mut()) {
        let xc = xi.clamp(CLS_EPS, 1.0 - CLS_EPS);
        total -= yi * xc.ln() + (1.0 - yi) * (1.0 - xc).ln();
        if xi == xc {
            *gi = (-yi / xc + (1.0 - yi) / (1.0 - xc)) / n;
        }
    }
    Ok((total / n, grad))
}

/// Smooth-L1 of `Y_cls (X_reg - Y_reg)`, summed over channels and averaged
/// over cells with `Y_cls = 1`. Regression maps are channel-major.
pub fn smooth_l1_masked(x_reg: &[f64], y_reg: &[f64], y_cls: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = y_cls.len();
    if x_reg.len() != y_reg.len() || x_reg.len() != REG_CHANNELS * n {
        return Err(Error::Shape("smooth_l1_masked: map sizes disagree".into()));
    }
    let pos = y_cls.iter().filter(|&&c| c == 1.0).count();
    let mut grad = vec![0.0; x_reg.len()];
    if pos == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for k in 0..REG_CHANNELS {
        for cell in 0..n {
            let i = k * n + cell;
            let m = y_cls[cell];
            let diff = m * (x_reg[i] - y_reg[i]);
            total += smooth_l1(diff);
            grad[i] = m * smooth_l1_grad(diff) / pos as f64;
        }
    }
    Ok((total / pos as f64, grad))
}

/// Corners of a box given in regression form at a cell centre, with the
/// Jacobian of every corner coordinate with respect to the six channels.
fn corners_with_jacobian(reg: [f64; REG_CHANNELS], center: [f64; 2]) -> ([[f64; 2]; 4], [[[f64; REG_CHANNELS]; 2]; 4]) {
    let [dx, dy, lw, ll, s, c] = reg;
    let (w, l) = (lw.exp(), ll.exp());
    let r2 = s * s + c * c;
    let theta = s.atan2(c);
    let (st, ct) = theta.sin_cos();
    let (dth_ds, dth_dc) = if r2 > 0.0 { (c / r2, -s / r2) } else { (0.0, 0.0) };
    let (cx, cy) = (center[0] + dx, center[1] + dy);
    let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)];
    let mut pts = [[0.0; 2]; 4];
    let mut jac = [[[0.0; REG_CHANNELS]; 2]; 4];
    for (m, &(a, b)) in signs.iter().enumerate() {
        let u = a * 0.5 * l;
        let v = b * 0.5 * w;
        pts[m] = [cx + u * ct - v * st, cy + u * st + v * ct];
        // d/dtheta of the rotated offset
        let dpx_dth = -u * st - v * ct;
        let dpy_dth = u * ct - v * st;
        // d/d(ln w): v scales with w; d/d(ln l): u scales with l
        jac[m][0] = [1.0, 0.0, -v * st, u * ct, dpx_dth * dth_ds, dpx_dth * dth_dc];
        jac[m][1] = [0.0, 1.0, v * ct, u * st, dpy_dth * dth_ds, dpy_dth * dth_dc];
    }
    (pts, jac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerOutput {
    pub value: f64,
    /// Gradient with respect to the channel-major regression map.
    pub grad_reg: Vec<f64>,
    pub matches: usize,
}

/// Corner loss between decoded predictions and target boxes matched
/// greedily by predicted score at IoU >= `opts.corner_match_iou`.
/// Candidates are cells with `X_cls >= opts.corner_score_threshold` or
/// `Y_cls = 1`; targets are decoded from the positive cells of `y`.
pub fn corner_loss(x: &HeadMaps, y: &HeadMaps, grid: &GridSpec, d: usize, opts: &LossOptions) -> Result<CornerOutput> {
    let n = x.cells();
    if y.cells() != n || x.reg.len() != REG_CHANNELS * n {
        return Err(Error::Shape("corner_loss: map sizes disagree".into()));
    }
    let center_of = |cell: usize| cell_center(grid, d, cell / x.width, cell % x.width);
    let mut targets: Vec<OrientedBox> = Vec::new();
    for cell in 0..n {
        if y.cls[cell] == 1.0 {
            let b = decode_cell(y.reg_at(cell), center_of(cell))
                .ok_or_else(|| Error::NonFinite("corner_loss target".into()))?;
            targets.push(b);
        }
    }
    let mut cand_cells = Vec::new();
    let mut preds = Vec::new();
    for cell in 0..n {
        if x.cls[cell] >= opts.corner_score_threshold || y.cls[cell] == 1.0 {
            if let Some(b) = decode_cell(x.reg_at(cell), center_of(cell)) {
                cand_cells.push(cell);
                preds.push(Detection::new(b, x.cls[cell].clamp(0.0, 1.0)));
            }
        }
    }
    let m = match_greedy(&preds, &targets, opts.corner_match_iou);
    let mut grad = vec![0.0; x.reg.len()];
    if m.tp.is_empty() {
        return Ok(CornerOutput {
            value: 0.0,
            grad_reg: grad,
            matches: 0,
        });
    }
    let inv = 1.0 / m.tp.len() as f64;
    let mut total = 0.0;
    for &(p, t, _) in &m.tp {
        let cell = cand_cells[p];
        let (pts, jac) = corners_with_jacobian(x.reg_at(cell), center_of(cell));
        let tgt = targets[t].corners();
        for k in 0..4 {
            let ex = pts[k][0] - tgt[k][0];
            let ey = pts[k][1] - tgt[k][1];
            let dist = ex.hypot(ey);
            total += smooth_l1(dist);
            // d smoothL1(dist) / d point
            let (gx, gy) = if dist < SMOOTH_L1_BETA {
                (ex / SMOOTH_L1_BETA, ey / SMOOTH_L1_BETA)
            } else {
                (ex / dist, ey / dist)
            };
            for ch in 0..REG_CHANNELS {
                grad[ch * n + cell] += inv * (gx * jac[k][0][ch] + gy * jac[k][1][ch]);
            }
        }
    }
    Ok(CornerOutput {
        value: total * inv,
        grad_reg: grad,
        matches: m.tp.len(),
    })
}

fn kernel(a: f64, b: f64, sigma: f64) -> f64 {
    let d = a - b;
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Biased squared MMD between samples `p` (differentiable) and `q`, with
/// the gradient with respect to `p`.
pub fn mmd_biased(p: &[f64], q: &[f64], sigma: f64) -> (f64, Vec<f64>) {
    let n = p.len();
    assert_eq!(n, q.len(), "mmd samples must share an index set");
    let mut grad = vec![0.0; n];
    if n == 0 {
        return (0.0, grad);
    }
    let s2 = sigma * sigma;
    let (mut kpp, mut kqq, mut kpq) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let a = kernel(p[i], p[j], sigma);
            kpp += a;
            kqq += kernel(q[i], q[j], sigma);
            let c = kernel(p[i], q[j], sigma);
            kpq += c;
            // d k(p_i, x) / d p_i = -(p_i - x) / s2 * k
            grad[i] += 2.0 * (-(p[i] - p[j]) / s2 * a) - 2.0 * (-(p[i] - q[j]) / s2 * c);
        }
    }
    let nn = (n * n) as f64;
    for g in &mut grad {
        *g /= nn;
    }
    (((kpp + kqq - 2.0 * kpq) / nn).max(0.0), grad)
}

fn median_pairwise(v: &[f64]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(v.len() * v.len().saturating_sub(1) / 2);
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            d.push((v[i] - v[j]).abs());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdOutput {
    pub m_box: f64,
    pub m_err: f64,
    pub grad_box: Vec<f64>,
    pub grad_err: Vec<f64>,
    pub cells: usize,
}

/// Cells entering the MMD terms.
pub fn mmd_cells(y: &HeadMaps, z: &HeadMaps, opts: &LossOptions) -> Vec<usize> {
    (0..y.cells())
        .filter(|&c| opts.mmd_all_pixels || y.cls[c] == 1.0 || z.cls[c] == 1.0)
        .collect()
}

/// Two-term MMD over the regression channels: `m_box` compares X with Y,
/// `m_err` compares the residuals X - Z with Y - Z. Sums over channels.
pub fn mmd2(x: &HeadMaps, y: &HeadMaps, z: &HeadMaps, sigma: f64, opts: &LossOptions) -> Result<MmdOutput> {
    let n = x.cells();
    if y.cells() != n || z.cells() != n {
        return Err(Error::Shape("mmd2: map sizes disagree".into()));
    }
    let cells = mmd_cells(y, z, opts);
    let mut out = MmdOutput {
        m_box: 0.0,
        m_err: 0.0,
        grad_box: vec![0.0; x.reg.len()],
        grad_err: vec![0.0; x.reg.len()],
        cells: cells.len(),
    };
    for ch in 0..REG_CHANNELS {
        let at = |m: &HeadMaps, c: usize| m.reg[ch * n + c];
        let xs: Vec<f64> = cells.iter().map(|&c| at(x, c)).collect();
        let ys: Vec<f64> = cells.iter().map(|&c| at(y, c)).collect();
        let zs: Vec<f64> = cells.iter().map(|&c| at(z, c)).collect();
        let xr: Vec<f64> = xs.iter().zip(&zs).map(|(a, b)| a - b).collect();
        let yr: Vec<f64> = ys.iter().zip(&zs).map(|(a, b)| a - b).collect();
        let bw = |target: &[f64]| {
            if opts.median_bandwidth {
                let m = median_pairwise(target);
                if m > 0.0 {
                    return m;
                }
            }
            sigma
        };
        let (vb, gb) = mmd_biased(&xs, &ys, bw(&ys));
        let (ve, ge) = mmd_biased(&xr, &yr, bw(&yr));
        out.m_box += vb;
        out.m_err += ve;
        for (k, &c) in cells.iter().enumerate() {
            out.grad_box[ch * n + c] += gb[k];
            out.grad_err[ch * n + c] += ge[k];
        }
    }
    Ok(out)
}

/// Supervision for one sample: pseudo maps from the target model (Y) and
/// from annotations (Z).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTargets {
    pub target: HeadMaps,
    pub annotation: HeadMaps,
}

/// Records the full objective for a batch on the tape. Data terms are
/// averaged over the batch; the weight penalty covers `params`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    cls: Var,
    reg: Var,
    targets: &[&SampleTargets],
    params: &[Var],
    grid: &GridSpec,
    d: usize,
    w: &LossWeights,
    opts: &LossOptions,
) -> Result<(Var, LossReport)> {
    let preds = split_heads(g.value(cls), g.value(reg));
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} target samples",
            preds.len(),
            targets.len()
        )));
    }
    let nb = preds.len() as f64;
    let plane = preds[0].cells();
    let rp = REG_CHANNELS * plane;
    let total_cells = preds.len() * plane;
    let mut rep = LossReport {
        smooth_l1_beta: SMOOTH_L1_BETA,
        ..Default::default()
    };
    let mut g_cls = vec![0.0; total_cells];
    let mut g_reg = vec![0.0; preds.len() * rp];
    let mut g_corner = vec![0.0; preds.len() * rp];
    let mut g_box = vec![0.0; preds.len() * rp];
    let mut g_err = vec![0.0; preds.len() * rp];
    for (b, (x, t)) in preds.iter().zip(targets).enumerate() {
        let (v, gr) = bce(&x.cls, &t.target.cls)?;
        rep.cls += v / nb;
        for (dst, s) in g_cls[b * plane..(b + 1) * plane].iter_mut().zip(gr) {
            *dst = s / nb;
        }
        let (v, gr) = smooth_l1_masked(&x.reg, &t.target.reg, &t.target.cls)?;
        rep.reg += v / nb;
        for (dst, s) in g_reg[b * rp..(b + 1) * rp].iter_mut().zip(gr) {
            *dst = s / nb;
        }
        let c = corner_loss(x, &t.target, grid, d, opts)?;
        rep.corner += c.value / nb;
        rep.corner_matches += c.matches;
        for (dst, s) in g_corner[b * rp..(b + 1) * rp].iter_mut().zip(c.grad_reg) {
            *dst = s / nb;
        }
        let m = mmd2(x, &t.target, &t.annotation, w.kernel_sigma, opts)?;
        rep.mmd_box += m.m_box / nb;
        rep.mmd_err += m.m_err / nb;
        for (dst, s) in g_box[b * rp..(b + 1) * rp].iter_mut().zip(m.grad_box) {
            *dst = s / nb;
        }
        for (dst, s) in g_err[b * rp..(b + 1) * rp].iter_mut().zip(m.grad_err) {
            *dst = s / nb;
        }
    }
    for (name, v) in [
        ("cls", rep.cls),
        ("reg", rep.reg),
        ("corner", rep.corner),
        ("mmd_box", rep.mmd_box),
        ("mmd_err", rep.mmd_err),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss term {name}")));
        }
    }
    let l_cls = g.scalar_fn("bce", &[cls], rep.cls, vec![g_cls])?;
    let l_reg = g.scalar_fn("smooth_l1", &[reg], rep.reg, vec![g_reg])?;
    let l_corner = g.scalar_fn("corner", &[reg], rep.corner, vec![g_corner])?;
    let l_box = g.scalar_fn("mmd_box", &[reg], rep.mmd_box, vec![g_box])?;
    let l_err = g.scalar_fn("mmd_err", &[reg], rep.mmd_err, vec![g_err])?;
    let mut parts = vec![
        g.scale(l_cls, w.alpha)?,
        g.scale(l_reg, w.beta)?,
        g.scale(l_corner, w.gamma)?,
        g.scale(l_box, w.omega1)?,
        g.scale(l_err, w.omega2)?,
    ];
    for &p in params {
        let s = g.sum_squares(p)?;
        rep.weight_reg += g.value(s).item();
        parts.push(g.scale(s, w.lambda)?);
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p)?;
    }
    rep.total = g.value(acc).item();
    if !rep.total.is_finite() {
        return Err(Error::NonFinite("loss term total".into()));
    }
    Ok((acc, rep))
}
