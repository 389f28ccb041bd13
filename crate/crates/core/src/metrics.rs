//! Rotated IoU, greedy matching, PR curves and AP / max recall.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detections::{Detection, SceneDetections};
use crate::error::{Error, Result};
use crate::geometry::convex_intersection_area;
use crate::scene::OrientedBox;

/// Intersection over union of two oriented boxes. Exactly symmetric: the
/// clip is always performed in a canonical operand order.
pub fn iou_rotated(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let key = |x: &OrientedBox| [x.cx, x.cy, x.w, x.l, x.yaw];
    let (p, q) = match key(a)
        .iter()
        .zip(key(b).iter())
        .map(|(u, v)| u.total_cmp(v))
        .find(|o| o.is_ne())
    {
        Some(std::cmp::Ordering::Greater) => (b, a),
        _ => (a, b),
    };
    let inter = convex_intersection_area(&p.polygon_ccw(), &q.polygon_ccw());
    if inter <= 1e-12 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// (pred index, gt index, IoU)
    pub tp: Vec<(usize, usize, f64)>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

/// Indices of `dets` sorted by descending score, ties by input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));
    idx
}

pub fn match_greedy(preds: &[Detection], gts: &[OrientedBox], iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut out = MatchResult::default();
    for p in score_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = iou_rotated(&preds[p].bbox, gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) => {
                taken[g] = true;
                out.tp.push((p, g, iou));
            }
            None => out.fp.push(p),
        }
    }
    out.fn_ = (0..gts.len()).filter(|&g| !taken[g]).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

/// One point per distinct score, thresholds descending. Greedy matching in
/// score order means the matches of a thresholded prediction set are a
/// prefix of the full run, so one matching pass per scene suffices.
pub fn pr_curve(corpus: &[(Vec<Detection>, Vec<OrientedBox>)], iou_threshold: f64) -> Vec<PrPoint> {
    let n_gt: usize = corpus.iter().map(|(_, g)| g.len()).sum();
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for (preds, gts) in corpus {
        let m = match_greedy(preds, gts, iou_threshold);
        scored.extend(m.tp.iter().map(|&(p, _, _)| (preds[p].score, true)));
        scored.extend(m.fp.iter().map(|&p| (preds[p].score, false)));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(PrPoint {
            score_threshold: s,
            precision: tp as f64 / (tp + fp) as f64,
            recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
            tp,
            fp,
        });
    }
    curve
}

/// All-point interpolated area under the precision envelope.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for i in 0..pts.len() {
        let env = pts[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (pts[i].0 - prev_r) * env;
        prev_r = pts[i].0;
    }
    ap.clamp(0.0, 1.0)
}

pub fn max_recall(curve: &[PrPoint]) -> f64 {
    curve.iter().map(|p| p.recall).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_050: f64,
    pub map_070: f64,
    pub maxr_050: f64,
    pub maxr_070: f64,
    pub fixed_threshold: f64,
    /// Precision/recall/counts at `fixed_threshold`, IoU 0.5.
    pub precision_at_fixed: f64,
    pub recall_at_fixed: f64,
    pub counts: Counts,
    pub n_scenes: usize,
    pub pr_curve_050: Vec<PrPoint>,
    pub pr_curve_070: Vec<PrPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iou,score_threshold,precision,recall,tp,fp\n");
        for (iou, curve) in [("0.5", &self.pr_curve_050), ("0.7", &self.pr_curve_070)] {
            for p in curve {
                s.push_str(&format!(
                    "{iou},{},{},{},{},{}\n",
                    p.score_threshold, p.precision, p.recall, p.tp, p.fp
                ));
            }
        }
        s
    }
}

/// Pairs prediction and target rows by scene id. Errors with the symmetric
/// difference when the id sets differ.
pub fn pair_by_scene(
    preds: &[SceneDetections],
    targets: &[SceneDetections],
) -> Result<Vec<(Vec<Detection>, Vec<OrientedBox>)>> {
    let pid: BTreeSet<u64> = preds.iter().map(|r| r.scene_id).collect();
    let tid: BTreeSet<u64> = targets.iter().map(|r| r.scene_id).collect();
    if pid.len() != preds.len() || tid.len() != targets.len() {
        return Err(Error::Other("duplicate scene ids in detections file".into()));
    }
    let diff: Vec<u64> = pid.symmetric_difference(&tid).copied().collect();
    if !diff.is_empty() {
        return Err(Error::SceneMismatch(diff));
    }
    let mut out = Vec::with_capacity(targets.len());
    for t in targets {
        let p = preds.iter().find(|r| r.scene_id == t.scene_id).expect("id sets agree");
        out.push((p.dets.clone(), t.dets.iter().map(|d| d.bbox).collect()));
    }
    Ok(out)
}

pub fn evaluate_pairs(corpus: &[(Vec<Detection>, Vec<OrientedBox>)], fixed_threshold: f64) -> EvalReport {
    let c5 = pr_curve(corpus, 0.5);
    let c7 = pr_curve(corpus, 0.7);
    let mut counts = Counts { tp: 0, fp: 0, fn_: 0 };
    for (preds, gts) in corpus {
        let kept: Vec<Detection> = preds.iter().copied().filter(|d| d.score >= fixed_threshold).collect();
        let m = match_greedy(&kept, gts, 0.5);
        counts.tp += m.tp.len();
        counts.fp += m.fp.len();
        counts.fn_ += m.fn_.len();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    EvalReport {
        map_050: average_precision(&c5),
        map_070: average_precision(&c7),
        maxr_050: max_recall(&c5),
        maxr_070: max_recall(&c7),
        fixed_threshold,
        precision_at_fixed: ratio(counts.tp, counts.tp + counts.fp),
        recall_at_fixed: ratio(counts.tp, counts.tp + counts.fn_),
        counts,
        n_scenes: corpus.len(),
        pr_curve_050: c5,
        pr_curve_070: c7,
        config_hash: None,
    }
}

pub fn evaluate(preds: &[SceneDetections], targets: &[SceneDetections], fixed_threshold: f64) -> Result<EvalReport> {
    Ok(evaluate_pairs(&pair_by_scene(preds, targets)?, fixed_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(cx: f64, cy: f64, w: f64, l: f64, yaw: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, w, l, yaw)
    }

    fn det(b: OrientedBox, s: f64) -> Detection {
        Detection::new(b, s)
    }

    #[test]
    fn iou_basic_cases() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        assert!((iou_rotated(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(iou_rotated(&a, &bx(10.0, 0.0, 2.0, 2.0, 0.0)), 0.0);
        let b = bx(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((iou_rotated(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matching_cases() {
        let g = bx(0.0, 0.0, 2.0, 4.0, 0.0);
        let m = match_greedy(&[det(g, 0.9)], &[g], 0.5);
        assert_eq!(m.tp.len(), 1);
        let m = match_greedy(&[], &[g], 0.5);
        assert_eq!(m.fn_, vec![0]);
        let m = match_greedy(&[det(g, 0.4), det(bx(0.1, 0.0, 2.0, 4.0, 0.0), 0.8)], &[g], 0.5);
        assert_eq!(m.tp[0].0, 1);
        assert_eq!(m.fp, vec![0]);
    }

    #[test]
    fn ap_hand_cases() {
        let g1 = bx(0.0, 0.0, 2.0, 4.0, 0.0);
        let g2 = bx(10.0, 0.0, 2.0, 4.0, 0.0);
        let perfect = vec![(vec![det(g1, 1.0), det(g2, 1.0)], vec![g1, g2])];
        let c = pr_curve(&perfect, 0.5);
        assert_eq!(average_precision(&c), 1.0);
        assert_eq!(max_recall(&c), 1.0);
        let half = vec![(vec![det(g1, 0.7)], vec![g1, g2])];
        let c = pr_curve(&half, 0.5);
        assert_eq!(average_precision(&c), 0.5);
        assert_eq!(max_recall(&c), 0.5);
        let spurious = vec![(vec![det(g2, 0.9), det(g2, 0.3)], vec![g1])];
        assert!(pr_curve(&spurious, 0.5).iter().all(|p| p.precision == 0.0));
        assert_eq!(average_precision(&[]), 0.0);
    }

    #[test]
    fn evaluate_identity_and_empty() {
        let rows = vec![SceneDetections {
            scene_id: 0,
            dets: vec![det(bx(5.0, 0.0, 2.0, 4.0, 0.2), 1.0)],
        }];
        let r = evaluate(&rows, &rows, 0.5).unwrap();
        assert_eq!((r.map_050, r.map_070, r.maxr_050, r.maxr_070), (1.0, 1.0, 1.0, 1.0));
        let empty = vec![SceneDetections { scene_id: 0, dets: vec![] }];
        let r = evaluate(&empty, &rows, 0.5).unwrap();
        assert_eq!((r.map_050, r.maxr_050), (0.0, 0.0));
        let other = vec![SceneDetections { scene_id: 4, dets: vec![] }];
        match evaluate(&other, &rows, 0.5) {
            Err(Error::SceneMismatch(ids)) => assert_eq!(ids, vec![0, 4]),
            e => panic!("{e:?}"),
        }
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox> {
        (-3.0..3.0f64, -3.0..3.0f64, 0.5..4.0f64, 0.5..5.0f64, -3.1..3.1f64)
            .prop_map(|(x, y, w, l, t)| bx(x, y, w, l, t))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_rigid_invariant(a in arb_box(), b in arb_box(), rot in -3.0..3.0f64, tx in -50.0..50.0f64) {
            let ab = iou_rotated(&a, &b);
            prop_assert_eq!(ab, iou_rotated(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            let moved = iou_rotated(&a.transformed(rot, tx, -tx), &b.transformed(rot, tx, -tx));
            prop_assert!((moved - ab).abs() < 1e-9);
        }

        #[test]
        fn stricter_overlap_never_adds_tp(a in prop::collection::vec(arb_box(), 0..6), b in prop::collection::vec(arb_box(), 0..6)) {
            let preds: Vec<Detection> = a.iter().enumerate().map(|(i, x)| det(*x, 1.0 / (i + 1) as f64)).collect();
            prop_assert!(match_greedy(&preds, &b, 0.7).tp.len() <= match_greedy(&preds, &b, 0.5).tp.len());
        }
    }
}
