use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::DMatrix;
use serde::Serialize;

use super::mot::{group_by_frame, MotRow};
use crate::assoc_net::iou;
use crate::tracker::solve_assignment;

/// Counts and scores for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub name: String,
    pub mota: f64,
    pub idf1: f64,
    pub idsw: usize,
    pub num_gt: usize,
    pub num_hyp: usize,
    pub matches: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub idtp: usize,
}

/// Aggregate metrics; totals are recomputed from summed counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mota: f64,
    pub idf1: f64,
    pub idsw: usize,
    pub sequences: Vec<SequenceReport>,
}

impl EvalReport {
    pub fn from_sequences(sequences: Vec<SequenceReport>) -> Self {
        let sum = |f: fn(&SequenceReport) -> usize| sequences.iter().map(f).sum::<usize>();
        let num_gt = sum(|s| s.num_gt);
        let num_hyp = sum(|s| s.num_hyp);
        let idsw = sum(|s| s.idsw);
        let errors = sum(|s| s.misses) + sum(|s| s.false_positives) + idsw;
        Self {
            mota: mota(errors, num_gt),
            idf1: idf1(sum(|s| s.idtp), num_gt, num_hyp),
            idsw,
            sequences,
        }
    }
}

fn mota(errors: usize, num_gt: usize) -> f64 {
    1.0 - errors as f64 / num_gt.max(1) as f64
}

fn idf1(idtp: usize, num_gt: usize, num_hyp: usize) -> f64 {
    if num_gt + num_hyp == 0 {
        1.0
    } else {
        2.0 * idtp as f64 / (num_gt + num_hyp) as f64
    }
}

/// Maximum-cardinality, then maximum-IoU matching of the pairs with
/// IoU ≥ `threshold`.
fn match_frame(gt: &[&MotRow], hyp: &[&MotRow], threshold: f64) -> Vec<(usize, usize)> {
    let cost = DMatrix::from_fn(gt.len(), hyp.len(), |i, j| {
        let o = iou(&gt[i].bbox(), &hyp[j].bbox());
        if o >= threshold {
            -(1000.0 + o)
        } else {
            f64::INFINITY
        }
    });
    solve_assignment(&cost, 0.0).pairs
}

/// CLEAR MOT counts and identity F1 of `hyp` against `gt` for one sequence.
///
/// Matches found in the previous frame are kept while their IoU stays at or
/// above `iou_threshold`; remaining boxes are matched by Hungarian
/// assignment. An identity switch is a ground-truth object matched to a
/// different hypothesis id than at its previous match. Identity F1 uses a
/// global one-to-one matching of ids that maximizes the number of co-occurring
/// frames with IoU ≥ `iou_threshold`.
pub fn evaluate_sequence(
    name: &str,
    gt: &[MotRow],
    hyp: &[MotRow],
    iou_threshold: f64,
) -> SequenceReport {
    let gt_frames = group_by_frame(gt);
    let hyp_frames = group_by_frame(hyp);
    let frames: BTreeSet<u32> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    let empty = Vec::new();

    let mut previous: HashMap<i64, i64> = HashMap::new();
    let mut last_match: HashMap<i64, i64> = HashMap::new();
    let mut overlap: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let (mut matches, mut fp, mut misses, mut idsw) = (0, 0, 0, 0);

    for frame in frames {
        let g: Vec<&MotRow> = gt_frames.get(&frame).unwrap_or(&empty).iter().collect();
        let h: Vec<&MotRow> = hyp_frames.get(&frame).unwrap_or(&empty).iter().collect();

        for gr in &g {
            for hr in &h {
                if iou(&gr.bbox(), &hr.bbox()) >= iou_threshold {
                    *overlap.entry((gr.id, hr.id)).or_default() += 1;
                }
            }
        }

        let mut pairs = Vec::new();
        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        for (i, gr) in g.iter().enumerate() {
            if let Some(&prev_h) = previous.get(&gr.id) {
                if let Some(j) = h.iter().position(|hr| hr.id == prev_h) {
                    if !h_used[j] && iou(&gr.bbox(), &h[j].bbox()) >= iou_threshold {
                        pairs.push((i, j));
                        g_used[i] = true;
                        h_used[j] = true;
                    }
                }
            }
        }
        let g_rest: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let h_rest: Vec<usize> = (0..h.len()).filter(|&j| !h_used[j]).collect();
        let g_sub: Vec<&MotRow> = g_rest.iter().map(|&i| g[i]).collect();
        let h_sub: Vec<&MotRow> = h_rest.iter().map(|&j| h[j]).collect();
        for (a, b) in match_frame(&g_sub, &h_sub, iou_threshold) {
            pairs.push((g_rest[a], h_rest[b]));
        }

        previous.clear();
        for &(i, j) in &pairs {
            let (gid, hid) = (g[i].id, h[j].id);
            if let Some(&before) = last_match.get(&gid) {
                if before != hid {
                    idsw += 1;
                }
            }
            last_match.insert(gid, hid);
            previous.insert(gid, hid);
        }
        matches += pairs.len();
        misses += g.len() - pairs.len();
        fp += h.len() - pairs.len();
    }

    let gt_ids: Vec<i64> = gt
        .iter()
        .map(|r| r.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let hyp_ids: Vec<i64> = hyp
        .iter()
        .map(|r| r.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let counts = DMatrix::from_fn(gt_ids.len(), hyp_ids.len(), |i, j| {
        overlap.get(&(gt_ids[i], hyp_ids[j])).copied().unwrap_or(0) as f64
    });
    let id_match = solve_assignment(&(-&counts), 0.0);
    let idtp = id_match
        .pairs
        .iter()
        .map(|&(i, j)| counts[(i, j)] as usize)
        .sum::<usize>();

    SequenceReport {
        name: name.to_string(),
        mota: mota(misses + fp + idsw, gt.len()),
        idf1: idf1(idtp, gt.len(), hyp.len()),
        idsw,
        num_gt: gt.len(),
        num_hyp: hyp.len(),
        matches,
        false_positives: fp,
        misses,
        idtp,
    }
}

/// Metrics for a single sequence.
pub fn evaluate(gt: &[MotRow], hyp: &[MotRow], iou_threshold: f64) -> EvalReport {
    EvalReport::from_sequences(vec![evaluate_sequence("sequence", gt, hyp, iou_threshold)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc_net::BoundingBox;

    fn row(frame: u32, id: i64, cx: f64) -> MotRow {
        MotRow::new(frame, id, &BoundingBox::new(cx, 100.0, 20.0, 40.0, 1.0))
    }

    fn two_objects() -> Vec<MotRow> {
        (1..=3)
            .flat_map(|f| [row(f, 1, 100.0), row(f, 2, 300.0)])
            .collect()
    }

    #[test]
    fn identical_results_are_perfect() {
        let gt = two_objects();
        let r = evaluate(&gt, &gt, 0.5);
        assert_eq!((r.mota, r.idf1, r.idsw), (1.0, 1.0, 0));
    }

    #[test]
    fn empty_results_miss_everything() {
        let r = evaluate(&two_objects(), &[], 0.5);
        assert_eq!((r.mota, r.idf1, r.idsw), (0.0, 0.0, 0));
    }

    #[test]
    fn single_swap_is_one_switch() {
        // Hypothesis 10 follows object 1 at frame 1, then jumps to object 2.
        let hyp = vec![
            row(1, 10, 100.0),
            row(1, 20, 300.0),
            row(2, 10, 300.0),
            row(2, 20, 100.0),
            row(3, 10, 300.0),
            row(3, 20, 100.0),
        ];
        let r = evaluate(&two_objects(), &hyp, 0.5);
        assert_eq!(r.idsw, 2);
        // Only object 1 switches when object 2 keeps its hypothesis.
        let hyp = vec![
            row(1, 10, 100.0),
            row(1, 20, 300.0),
            row(2, 30, 100.0),
            row(2, 20, 300.0),
            row(3, 30, 100.0),
            row(3, 20, 300.0),
        ];
        let r = evaluate(&two_objects(), &hyp, 0.5);
        assert_eq!(r.idsw, 1);
        assert!((r.mota - (1.0 - 1.0 / 6.0)).abs() < 1e-12);
        // IDTP = 3 (object 2 ↔ 20) + 2 (object 1 ↔ 30) = 5.
        assert!((r.idf1 - 10.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn relabeling_results_keeps_metrics() {
        let gt = two_objects();
        let mut hyp = gt.clone();
        hyp.pop();
        let relabeled: Vec<MotRow> = hyp
            .iter()
            .map(|r| MotRow {
                id: 100 - r.id,
                ..*r
            })
            .collect();
        let a = evaluate(&gt, &hyp, 0.5);
        let b = evaluate(&gt, &relabeled, 0.5);
        assert_eq!((a.mota, a.idf1, a.idsw), (b.mota, b.idf1, b.idsw));
    }

    #[test]
    fn false_positive_lowers_mota() {
        let gt = two_objects();
        let mut hyp = gt.clone();
        hyp.push(row(2, 7, 900.0));
        let r = evaluate(&gt, &hyp, 0.5);
        assert!((r.mota - (1.0 - 1.0 / 6.0)).abs() < 1e-12);
        assert_eq!(r.sequences[0].false_positives, 1);
    }

    #[test]
    fn aggregate_uses_summed_counts() {
        let gt = two_objects();
        let a = evaluate_sequence("a", &gt, &gt, 0.5);
        let b = evaluate_sequence("b", &gt, &[], 0.5);
        let r = EvalReport::from_sequences(vec![a, b]);
        assert!((r.mota - 0.5).abs() < 1e-12);
        assert!((r.idf1 - 12.0 / 18.0).abs() < 1e-12);
    }
}
