//! Word-level evaluation: greedy detection matching with don't-care
//! exclusion, end-to-end scoring with and without lexicon correction, and
//! recall slices over word length and text orientation.
//!
//! Matching walks predictions in descending score (ties toward the lower
//! index) and pairs each with the highest-IoU unmatched real ground truth at
//! or above the threshold. Predictions left over that cover a don't-care
//! region are discarded from scoring entirely; don't-care ground truths are
//! never counted as misses. End-to-end truth requires the matched pair's
//! transcriptions to agree after uppercasing — in Full mode the prediction is
//! first snapped to the closest lexicon word by edit distance (ties resolve
//! to the lexicographically smallest word).

use crate::error::{Error, Result};
use crate::geometry::{polygon_iou, vec2::Vec2, BoundaryPolygon, TextInstance};
use crate::model::Detection;
use crate::parallel;
use serde::{Deserialize, Serialize};


/// Detection-to-ground-truth matching for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// (prediction index, real-gt index), one-to-one.
    pub pairs: Vec<(usize, usize)>,
    /// Predictions absorbed by don't-care regions — excluded from scoring.
    pub discarded_preds: Vec<usize>,
    /// Scored predictions with no ground truth (false positives).
    pub false_pos: Vec<usize>,
    /// Real ground truths no prediction reached (false negatives).
    pub false_neg: Vec<usize>,
}

/// Greedy score-ordered one-to-one matching at the given IoU threshold.
///
/// Real ground truths match at IoU ≥ `iou_thresh`; a leftover prediction is
/// discarded when a don't-care region overlaps it strictly above the
/// threshold.
pub fn match_detections(
    preds: &[Detection],
    gts: &[TextInstance],
    iou_thresh: f64,
) -> Result<MatchOutcome> {
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(Error::contract(format!("IoU threshold {iou_thresh} outside [0,1]")));
    }
    let pred_polys: Vec<BoundaryPolygon> = preds
        .iter()
        .map(|d| BoundaryPolygon::new(d.polygon.clone()))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b].score.partial_cmp(&preds[a].score).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });

    let mut gt_taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    let mut discarded = Vec::new();
    let mut false_pos = Vec::new();
    for &p in &order {
        // Pass 1: best unmatched real ground truth (ties to the lower index).
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.dont_care || gt_taken[g] {
                continue;
            }
            let iou = polygon_iou(&pred_polys[p], &gt.polygon);
            if iou >= iou_thresh && best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            gt_taken[g] = true;
            pairs.push((p, g));
            continue;
        }
        // Pass 2: an unclaimed prediction over a don't-care region vanishes.
        let over_dont_care = gts
            .iter()
            .any(|gt| gt.dont_care && polygon_iou(&pred_polys[p], &gt.polygon) > iou_thresh);
        if over_dont_care {
            discarded.push(p);
        } else {
            false_pos.push(p);
        }
    }
    pairs.sort_unstable();
    discarded.sort_unstable();
    false_pos.sort_unstable();
    let false_neg = (0..gts.len()).filter(|&g| !gts[g].dont_care && !gt_taken[g]).collect();
    Ok(MatchOutcome { pairs, discarded_preds: discarded, false_pos, false_neg })
}

// ---------------------------------------------------------------------------
// Transcription comparison
// ---------------------------------------------------------------------------

/// Levenshtein distance over characters.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Snap `text` to the closest lexicon word (minimum edit distance; ties go to
/// the lexicographically smallest word).
pub fn correct_with_lexicon(text: &str, lexicon: &[String]) -> Result<String> {
    let mut best: Option<(&str, usize)> = None;
    for word in lexicon {
        let d = edit_distance(text, word);
        let better = match best {
            None => true,
            Some((w, bd)) => d < bd || (d == bd && word.as_str() < w),
        };
        if better {
            best = Some((word, d));
        }
    }
    best.map(|(w, _)| w.to_string())
        .ok_or_else(|| Error::contract("lexicon correction requires a non-empty lexicon"))
}

/// Uppercase the test-set vocabulary: every distinct real-gt transcription.
pub fn lexicon_from_gts<'a>(gts: impl IntoIterator<Item = &'a TextInstance>) -> Vec<String> {
    let mut words: Vec<String> = gts
        .into_iter()
        .filter(|g| !g.dont_care)
        .map(|g| g.transcription.to_uppercase())
        .collect();
    words.sort();
    words.dedup();
    words
}

/// Transcriptions that are nothing but digits are excluded from scoring.
pub fn mark_numeric_dont_care(gts: &mut [TextInstance]) {
    for gt in gts {
        if !gt.transcription.is_empty() && gt.transcription.chars().all(|c| c.is_ascii_digit()) {
            gt.dont_care = true;
        }
    }
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

/// Precision / recall / F-measure triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl PrfScores {
    pub fn new(tp: usize, n_scored_preds: usize, n_real_gts: usize) -> Self {
        let precision = if n_scored_preds > 0 { tp as f64 / n_scored_preds as f64 } else { 0.0 };
        let recall = if n_real_gts > 0 { tp as f64 / n_real_gts as f64 } else { 0.0 };
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f }
    }
}

/// One recall bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub population: usize,
    pub recognized: usize,
    /// `None` when the slice is empty.
    pub recall: Option<f64>,
}

impl Slice {
    fn from_counts(population: usize, recognized: usize) -> Self {
        let recall = (population > 0).then(|| recognized as f64 / population as f64);
        Self { population, recognized, recall }
    }
}

/// End-to-end (no-lexicon) recall restricted to word-length and orientation
/// buckets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub len_ge7: Slice,
    pub len_ge10: Slice,
    pub angle_30_60: Slice,
    pub angle_60_90: Slice,
}

/// Aggregate counts behind the headline scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub images: usize,
    pub real_gts: usize,
    pub dont_care_gts: usize,
    pub predictions: usize,
    pub discarded_preds: usize,
    pub detection_tp: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

/// The full protocol output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresh: f64,
    pub detection: PrfScores,
    pub e2e_none: PrfScores,
    pub e2e_full: PrfScores,
    pub slices: SliceReport,
    pub counts: EvalCounts,
}

/// Text direction of an instance in degrees, folded into [0, 90]: the angle
/// of the centerline running from the midpoint of the left edge to the
/// midpoint of the right edge.
pub fn text_angle_degrees(poly: &BoundaryPolygon) -> f64 {
    let ring = poly.ring();
    let n = ring.len();
    let head = crate::geometry::vec2::midpoint(ring[0], ring[n - 1]);
    let tail = crate::geometry::vec2::midpoint(ring[n / 2 - 1], ring[n / 2]);
    let mut deg = (tail[1] - head[1]).atan2(tail[0] - head[0]).abs().to_degrees();
    if deg > 90.0 {
        deg = 180.0 - deg;
    }
    deg
}

/// One image's predictions and ground truth.
#[derive(Debug, Clone)]
pub struct EvalInput {
    pub preds: Vec<Detection>,
    pub gts: Vec<TextInstance>,
}

struct ImageStats {
    outcome: MatchOutcome,
    n_scored_preds: usize,
    n_real_gts: usize,
    n_dont_care: usize,
    tp_none: usize,
    tp_full: usize,
    /// (length, angle in degrees, recognized without a lexicon) per real gt.
    gt_facts: Vec<(usize, f64, bool)>,
}

fn eval_image(input: &EvalInput, lexicon: &[String], iou_thresh: f64) -> Result<ImageStats> {
    let outcome = match_detections(&input.preds, &input.gts, iou_thresh)?;
    let n_real_gts = input.gts.iter().filter(|g| !g.dont_care).count();
    let n_dont_care = input.gts.len() - n_real_gts;
    let n_scored_preds = input.preds.len() - outcome.discarded_preds.len();

    let mut recognized = vec![false; input.gts.len()];
    let (mut tp_none, mut tp_full) = (0, 0);
    for &(p, g) in &outcome.pairs {
        let pred_text = input.preds[p].text.to_uppercase();
        let gt_text = input.gts[g].transcription.to_uppercase();
        if pred_text == gt_text {
            tp_none += 1;
            recognized[g] = true;
        }
        if !lexicon.is_empty() && correct_with_lexicon(&pred_text, lexicon)? == gt_text {
            tp_full += 1;
        }
    }
    let gt_facts = input
        .gts
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.dont_care)
        .map(|(i, g)| {
            (g.transcription.chars().count(), text_angle_degrees(&g.polygon), recognized[i])
        })
        .collect();
    Ok(ImageStats { outcome, n_scored_preds, n_real_gts, n_dont_care, tp_none, tp_full, gt_facts })
}

/// Run the whole protocol: match every image, score detection and both
/// end-to-end modes, and bucket no-lexicon recall by length and orientation.
/// The Full-mode lexicon is built from the ground truth itself — every
/// distinct real transcription in `inputs`.
pub fn evaluate(inputs: &[EvalInput], iou_thresh: f64) -> Result<EvalReport> {
    let lexicon = lexicon_from_gts(inputs.iter().flat_map(|i| i.gts.iter()));
    let stats: Vec<Result<ImageStats>> =
        parallel::par_map(inputs.len(), |i| eval_image(&inputs[i], &lexicon, iou_thresh));

    let mut counts = EvalCounts {
        images: inputs.len(),
        real_gts: 0,
        dont_care_gts: 0,
        predictions: 0,
        discarded_preds: 0,
        detection_tp: 0,
        false_pos: 0,
        false_neg: 0,
    };
    let (mut tp_none, mut tp_full, mut n_scored) = (0, 0, 0);
    let mut buckets = [(0usize, 0usize); 4]; // len≥7, len≥10, angle [30,60), angle [60,90]
    for s in stats {
        let s = s?;
        counts.real_gts += s.n_real_gts;
        counts.dont_care_gts += s.n_dont_care;
        counts.predictions += s.n_scored_preds + s.outcome.discarded_preds.len();
        counts.discarded_preds += s.outcome.discarded_preds.len();
        counts.detection_tp += s.outcome.pairs.len();
        counts.false_pos += s.outcome.false_pos.len();
        counts.false_neg += s.outcome.false_neg.len();
        tp_none += s.tp_none;
        tp_full += s.tp_full;
        n_scored += s.n_scored_preds;
        for &(len, angle, rec) in &s.gt_facts {
            let hit = usize::from(rec);
            if len >= 7 {
                buckets[0].0 += 1;
                buckets[0].1 += hit;
            }
            if len >= 10 {
                buckets[1].0 += 1;
                buckets[1].1 += hit;
            }
            if (30.0..60.0).contains(&angle) {
                buckets[2].0 += 1;
                buckets[2].1 += hit;
            }
            if (60.0..=90.0).contains(&angle) {
                buckets[3].0 += 1;
                buckets[3].1 += hit;
            }
        }
    }

    Ok(EvalReport {
        iou_thresh,
        detection: PrfScores::new(counts.detection_tp, n_scored, counts.real_gts),
        e2e_none: PrfScores::new(tp_none, n_scored, counts.real_gts),
        e2e_full: PrfScores::new(tp_full, n_scored, counts.real_gts),
        slices: SliceReport {
            len_ge7: Slice::from_counts(buckets[0].0, buckets[0].1),
            len_ge10: Slice::from_counts(buckets[1].0, buckets[1].1),
            angle_30_60: Slice::from_counts(buckets[2].0, buckets[2].1),
            angle_60_90: Slice::from_counts(buckets[3].0, buckets[3].1),
        },
        counts,
    })
}

// ---------------------------------------------------------------------------
// Rendering and serialization
// ---------------------------------------------------------------------------

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table: detection, end-to-end, then the recall slices.
    pub fn to_table(&self) -> String {
        fn row(s: &PrfScores) -> String {
            format!("P {:.4}  R {:.4}  F {:.4}", s.precision, s.recall, s.f)
        }
        fn slice_row(name: &str, s: &Slice) -> String {
            match s.recall {
                Some(r) => format!("{name:<16} n={:<4} recall={r:.4}", s.population),
                None => format!("{name:<16} n={:<4} recall=n/a", s.population),
            }
        }
        let c = &self.counts;
        [
            format!("== Detection (IoU >= {:.2}) ==", self.iou_thresh),
            format!(
                "{}   (TP {}, FP {}, FN {}, discarded {})",
                row(&self.detection),
                c.detection_tp,
                c.false_pos,
                c.false_neg,
                c.discarded_preds
            ),
            String::new(),
            "== End-to-end ==".to_string(),
            format!("None: {}", row(&self.e2e_none)),
            format!("Full: {}", row(&self.e2e_full)),
            String::new(),
            "== Recall slices (E2E, no lexicon) ==".to_string(),
            slice_row("len >= 7", &self.slices.len_ge7),
            slice_row("len >= 10", &self.slices.len_ge10),
            slice_row("angle [30,60)", &self.slices.angle_30_60),
            slice_row("angle [60,90]", &self.slices.angle_60_90),
            String::new(),
            format!(
                "{} images, {} ground truths ({} don't-care), {} predictions",
                c.images, c.real_gts, c.dont_care_gts, c.predictions
            ),
        ]
        .join("\n")
    }
}

/// One prediction per line as JSON.
pub fn predictions_to_jsonl(preds: &[Detection]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("detection serializes"));
        out.push('\n');
    }
    out
}

pub fn predictions_from_jsonl(text: &str) -> Result<Vec<Detection>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str::<Detection>(line)
                .map_err(|e| Error::data(format!("prediction line {}: {e}", i + 1)))
        })
        .collect()
}

/// Helper for hand-built fixtures: an axis-aligned box as a four-point ring.
pub fn box_polygon(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vec2> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}
