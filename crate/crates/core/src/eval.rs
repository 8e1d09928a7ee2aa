//! Detection matching: do-not-care filtering, then one-to-one, one-to-many
//! and many-to-one matches at a 50% overlap threshold.

use serde::Serialize;

use crate::codec::WordQuad;
use crate::error::Result;
use crate::linker::WordBox;

pub use crate::geometry::{ConvexPoly, Point};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub poly: ConvexPoly,
    pub score: f64,
}

impl Detection {
    pub fn new(poly: ConvexPoly, score: f64) -> Self {
        Self { poly, score }
    }

    pub fn from_points(points: [Point; 4], score: f64) -> Result<Self> {
        Ok(Self { poly: ConvexPoly::new(points.to_vec())?, score })
    }

    pub fn from_box(b: &WordBox) -> Result<Self> {
        Ok(Self { poly: ConvexPoly::new(b.corners().to_vec())?, score: b.score })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchConfig {
    /// Overlap ratio that must be exceeded (IoU for one-to-one, coverage otherwise).
    pub overlap: f64,
    /// Credit given to each participant of a one-to-many or many-to-one match.
    pub split_credit: f64,
    /// Coverage of a detection by a do-not-care box above which the detection is ignored.
    pub dont_care_overlap: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { overlap: 0.5, split_credit: 1.0, dont_care_overlap: 0.5 }
    }
}

/// Matching outcome for one image, or summed counts for a corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MatchReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// `(gt, det)` pairs.
    pub one_to_one: Vec<(usize, usize)>,
    /// One ground truth covered by several detections.
    pub one_to_many: Vec<(usize, Vec<usize>)>,
    /// Several ground truths covered by one detection.
    pub many_to_one: Vec<(Vec<usize>, usize)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_det: Vec<usize>,
    /// Detections removed by do-not-care regions.
    pub ignored_det: Vec<usize>,
    pub gt_credit: f64,
    pub det_credit: f64,
    pub care_gt: usize,
    pub scored_det: usize,
    /// Precision had no scored detections and was set to 1.
    pub precision_empty: bool,
    /// Recall had no cared-for ground truth and was set to 1.
    pub recall_empty: bool,
}

impl MatchReport {
    fn finish(mut self) -> Self {
        self.precision_empty = self.scored_det == 0;
        self.recall_empty = self.care_gt == 0;
        self.precision = if self.precision_empty { 1.0 } else { self.det_credit / self.scored_det as f64 };
        self.recall = if self.recall_empty { 1.0 } else { self.gt_credit / self.care_gt as f64 };
        self.f_measure = f_measure(self.precision, self.recall);
        self
    }

    /// Corpus totals: credits and denominators summed before P/R/F.
    pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a MatchReport>) -> MatchReport {
        let mut total = MatchReport::default();
        for r in reports {
            total.gt_credit += r.gt_credit;
            total.det_credit += r.det_credit;
            total.care_gt += r.care_gt;
            total.scored_det += r.scored_det;
        }
        total.finish()
    }
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn match_detections(gt: &[WordQuad], det: &[Detection], config: &MatchConfig) -> MatchReport {
    let gt_polys: Vec<ConvexPoly> = gt.iter().map(WordQuad::poly).collect();
    let gt_area: Vec<f64> = gt_polys.iter().map(ConvexPoly::area).collect();
    let det_area: Vec<f64> = det.iter().map(|d| d.poly.area()).collect();
    let inter: Vec<Vec<f64>> = gt_polys
        .iter()
        .map(|g| det.iter().map(|d| g.intersection_area(&d.poly)).collect())
        .collect();

    let mut report = MatchReport::default();
    let care: Vec<usize> = (0..gt.len()).filter(|&g| gt[g].care).collect();
    let mut scored = Vec::new();
    for d in 0..det.len() {
        let ignored = (0..gt.len())
            .any(|g| !gt[g].care && inter[g][d] / det_area[d] > config.dont_care_overlap);
        if ignored {
            report.ignored_det.push(d);
        } else {
            scored.push(d);
        }
    }
    report.care_gt = care.len();
    report.scored_det = scored.len();

    let mut gt_used = vec![false; gt.len()];
    let mut det_used = vec![false; det.len()];

    let mut pairs = Vec::new();
    for &g in &care {
        for &d in &scored {
            let union = gt_area[g] + det_area[d] - inter[g][d];
            let iou = if union > 0.0 { inter[g][d] / union } else { 0.0 };
            if iou > config.overlap {
                pairs.push((iou, g, d));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, g, d) in pairs {
        if !gt_used[g] && !det_used[d] {
            gt_used[g] = true;
            det_used[d] = true;
            report.one_to_one.push((g, d));
            report.gt_credit += 1.0;
            report.det_credit += 1.0;
        }
    }

    for &g in &care {
        if gt_used[g] {
            continue;
        }
        let parts: Vec<usize> = scored
            .iter()
            .copied()
            .filter(|&d| !det_used[d] && inter[g][d] / det_area[d] > config.overlap)
            .collect();
        let covered: f64 = parts.iter().map(|&d| inter[g][d]).sum();
        if parts.len() >= 2 && covered > config.overlap * gt_area[g] {
            gt_used[g] = true;
            for &d in &parts {
                det_used[d] = true;
            }
            report.gt_credit += config.split_credit;
            report.det_credit += config.split_credit * parts.len() as f64;
            report.one_to_many.push((g, parts));
        }
    }

    for &d in &scored {
        if det_used[d] {
            continue;
        }
        let parts: Vec<usize> = care
            .iter()
            .copied()
            .filter(|&g| !gt_used[g] && inter[g][d] / gt_area[g] > config.overlap)
            .collect();
        let covered: f64 = parts.iter().map(|&g| inter[g][d]).sum();
        if parts.len() >= 2 && covered > config.overlap * det_area[d] {
            det_used[d] = true;
            for &g in &parts {
                gt_used[g] = true;
            }
            report.det_credit += config.split_credit;
            report.gt_credit += config.split_credit * parts.len() as f64;
            report.many_to_one.push((parts, d));
        }
    }

    report.unmatched_gt = care.iter().copied().filter(|&g| !gt_used[g]).collect();
    report.unmatched_det = scored.iter().copied().filter(|&d| !det_used[d]).collect();
    report.finish()
}
