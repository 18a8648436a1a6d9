//! Bipartite matching between predictions and ground truth, plus every loss
//! term the spotter trains on.
//!
//! Matching runs on plain f64 copies of the predictions and is decided once
//! per step from the final decoder layer; the losses are then built inside
//! the sample's autodiff graph using that fixed assignment. Keeping the
//! discrete choice outside the graph is what makes the end-to-end
//! finite-difference checks meaningful.

mod hungarian;

pub use hungarian::hungarian;

use crate::error::{Error, Result};
use crate::geometry::{char_center_targets, vec2::Vec2, Aabb, TextInstance};
use crate::tensor::Tensor;
use crate::vocab;

/// Loss/cost hyper-parameters (all non-negative). The same λ_cls and λ_coord
/// drive both the matching cost and the loss; λ_center only enters the cost,
/// λ_ct/λ_char/λ_giou only the losses.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchWeights {
    pub cls: f64,
    pub coord: f64,
    pub center: f64,
    pub ct: f64,
    pub char_ce: f64,
    pub giou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            coord: 5.0,
            center: 1.0,
            ct: 1.0,
            char_ce: 1.0,
            giou: 2.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

/// Assignment of ground-truth instances to prediction slots.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// (gt index g, prediction index φ(g)), ascending in g; φ is injective.
    pub pairs: Vec<(usize, usize)>,
    /// Prediction indices no gt was assigned to, ascending.
    pub unmatched_preds: Vec<usize>,
}

/// One decoder layer's outputs for a single sample, still attached to the
/// graph.
#[derive(Clone)]
pub struct LayerPreds {
    /// Text/no-text logits, shape [Q].
    pub scores: Tensor,
    /// Boundary points in normalized coordinates, shape [Q, N, 2].
    pub coords: Tensor,
    /// Character centers in normalized coordinates, shape [Q, M, 2].
    pub centers: Tensor,
    /// Per-slot character logits, shape [Q, M, V].
    pub char_logits: Tensor,
}

/// Plain-f64 snapshot of one query used on the matching side.
#[derive(Debug, Clone)]
pub struct PredView {
    /// Instance probability b̂ = sigmoid(score).
    pub prob: f64,
    pub coords: Vec<Vec2>,
    pub centers: Vec<Vec2>,
}

impl LayerPreds {
    pub fn num_queries(&self) -> usize {
        self.scores.shape()[0]
    }

    /// Detach to f64 for cost computation.
    pub fn views(&self) -> Vec<PredView> {
        let q = self.num_queries();
        let n = self.coords.shape()[1];
        let m = self.centers.shape()[1];
        let scores = self.scores.value();
        let coords = self.coords.value();
        let centers = self.centers.value();
        (0..q)
            .map(|i| PredView {
                prob: crate::tensor::sigmoid(scores[i]),
                coords: (0..n)
                    .map(|k| [coords[(i * n + k) * 2], coords[(i * n + k) * 2 + 1]])
                    .collect(),
                centers: (0..m)
                    .map(|k| [centers[(i * m + k) * 2], centers[(i * m + k) * 2 + 1]])
                    .collect(),
            })
            .collect()
    }
}

/// Focal-style classification cost of declaring this prediction a positive:
/// `α(1−b̂)^γ(−ln b̂) − (1−α)b̂^γ(−ln(1−b̂))`. The second term credits the
/// background confidence the assignment gives up; the difference may be
/// negative.
pub fn focal_cost(prob: f64, alpha: f64, gamma: f64) -> f64 {
    let b = prob.clamp(1e-12, 1.0 - 1e-12);
    alpha * (1.0 - b).powf(gamma) * (-b.ln()) - (1.0 - alpha) * b.powf(gamma) * (-(1.0 - b).ln())
}

/// Matching cost of pairing `pred` with `gt`: focal class term,
/// summed L1 over boundary points, and the center term averaged over the
/// |C| real characters — skipped entirely under weak supervision.
pub fn match_cost(pred: &PredView, gt: &TextInstance, w: &MatchWeights) -> f64 {
    let mut cost = w.cls * focal_cost(pred.prob, w.focal_alpha, w.focal_gamma);
    let ring = gt.polygon.ring();
    debug_assert_eq!(ring.len(), pred.coords.len());
    for (p, q) in pred.coords.iter().zip(ring) {
        cost += w.coord * ((p[0] - q[0]).abs() + (p[1] - q[1]).abs());
    }
    if gt.centers_available {
        let c = gt.transcription.chars().count().min(pred.centers.len());
        if c > 0 {
            let mut center_sum = 0.0;
            for k in 0..c {
                let (p, q) = (pred.centers[k], gt.char_centers[k]);
                center_sum += (p[0] - q[0]).abs() + (p[1] - q[1]).abs();
            }
            cost += w.center * center_sum / c as f64;
        }
    }
    cost
}

/// Cost matrix rows = ground truths, columns = predictions.
pub fn build_cost_matrix(
    preds: &[PredView],
    gts: &[TextInstance],
    w: &MatchWeights,
) -> Vec<Vec<f64>> {
    gts.iter()
        .map(|gt| preds.iter().map(|p| match_cost(p, gt, w)).collect())
        .collect()
}

/// Match final-layer predictions against ground truth.
pub fn match_predictions(
    preds: &LayerPreds,
    gts: &[TextInstance],
    w: &MatchWeights,
) -> Result<MatchResult> {
    let views = preds.views();
    let cost = build_cost_matrix(&views, gts, w);
    hungarian(&cost, views.len())
}

/// Decoder loss terms for one layer, still attached to the graph. `total`
/// is the λ-weighted sum.
pub struct DecoderLosses {
    pub cls: Tensor,
    pub coord: Tensor,
    pub ct: Tensor,
    pub char_ce: Tensor,
    pub total: Tensor,
}

/// All four decoder loss terms for one layer, under a fixed matching.
///
/// Normalization: L_cls averages the per-query focal terms over max(1, G);
/// L_coord and L_ct are per-instance coordinate-L1 sums averaged over the
/// contributing instances; L_char is the mean cross-entropy over all M slots
/// of matched instances (empty slots supervise the empty class).
pub fn decoder_losses(
    preds: &LayerPreds,
    gts: &[TextInstance],
    matching: &MatchResult,
    w: &MatchWeights,
) -> Result<DecoderLosses> {
    let graph = preds.scores.graph().clone();
    let q = preds.num_queries();
    let n_points = preds.coords.shape()[1];
    let m = preds.centers.shape()[1];
    let v = preds.char_logits.shape()[2];
    let g_count = matching.pairs.len();

    // ---- L_cls: focal over all queries --------------------------------
    let mut pos_mask = vec![0.0; q];
    for &(_, pred_idx) in &matching.pairs {
        pos_mask[pred_idx] = 1.0;
    }
    let x = &preds.scores;
    let xneg = x.scale(-1.0);
    let pos_term = xneg
        .sigmoid()
        .pow_const(w.focal_gamma)
        .mul(&xneg.softplus())?
        .scale(w.focal_alpha);
    let neg_term = x
        .sigmoid()
        .pow_const(w.focal_gamma)
        .mul(&x.softplus())?
        .scale(1.0 - w.focal_alpha);
    let mask_t = graph.constant(pos_mask.clone(), &[q])?;
    let inv_mask_t = graph.constant(pos_mask.iter().map(|m| 1.0 - m).collect(), &[q])?;
    let cls = pos_term
        .mul(&mask_t)?
        .add(&neg_term.mul(&inv_mask_t)?)?
        .sum_all()
        .scale(1.0 / g_count.max(1) as f64);

    // ---- L_coord / L_ct / L_char over matched pairs ---------------------
    let mut coord = graph.scalar(0.0);
    let mut ct = graph.scalar(0.0);
    let mut char_ce = graph.scalar(0.0);
    let mut ct_instances = 0usize;
    for &(g, p) in &matching.pairs {
        let gt = &gts[g];
        let ring = gt.polygon.ring();
        if ring.len() != n_points {
            return Err(Error::contract(format!(
                "gt polygon has {} points but the model predicts {n_points}",
                ring.len()
            )));
        }
        let pred_pts = preds.coords.slice(0, p, 1)?; // [1, N, 2]
        let gt_pts = graph.constant(ring.iter().flatten().copied().collect(), &[n_points, 2])?;
        coord = coord.add(&pred_pts.sub(&gt_pts)?.abs().sum_all())?;

        if gt.centers_available {
            let targets = char_center_targets(gt, m)?;
            let pred_centers = preds.centers.slice(0, p, 1)?; // [1, M, 2]
            let t =
                graph.constant(targets.iter().flatten().copied().collect(), &[m, 2])?;
            ct = ct.add(&pred_centers.sub(&t)?.abs().sum_all())?;
            ct_instances += 1;
        }

        // The empty-slot class is always the model's last index V−1, which
        // only coincides with the shared vocab's empty index at V = 28.
        let classes = vocab::encode_padded(&gt.transcription, m);
        let mut one_hot = vec![0.0; m * v];
        for (slot, &cls_idx) in classes.iter().enumerate() {
            let idx = if cls_idx == vocab::EMPTY_CLASS { v - 1 } else { cls_idx };
            if idx >= v - 1 && cls_idx != vocab::EMPTY_CLASS {
                return Err(Error::contract(format!(
                    "character class {idx} does not fit a {v}-class recognizer"
                )));
            }
            one_hot[slot * v + idx] = 1.0;
        }
        let logp = preds.char_logits.slice(0, p, 1)?.log_softmax(2)?; // [1, M, V]
        let hot = graph.constant(one_hot, &[m, v])?;
        char_ce = char_ce.add(&logp.mul(&hot)?.sum_all().scale(-1.0))?;
    }
    let coord = coord.scale(1.0 / g_count.max(1) as f64);
    let ct = ct.scale(1.0 / ct_instances.max(1) as f64);
    let char_ce = char_ce.scale(1.0 / (g_count.max(1) * m) as f64);

    let total = cls
        .scale(w.cls)
        .add(&coord.scale(w.coord))?
        .add(&ct.scale(w.ct))?
        .add(&char_ce.scale(w.char_ce))?;
    Ok(DecoderLosses { cls, coord, ct, char_ce, total })
}

/// Encoder-side proposal supervision: Hungarian match on axis-aligned gt
/// boxes under focal + L1 + gIoU cost, then focal + λ_coord·L1 +
/// λ_giou·(1−gIoU) loss on the matched proposals.
pub struct EncoderLosses {
    pub cls: Tensor,
    pub l1: Tensor,
    pub giou: Tensor,
    pub total: Tensor,
}

/// The f64-side Hungarian assignment of gt boxes to proposal slots under
/// focal + L1 + gIoU cost. Split from the loss so gradient checks can hold
/// the discrete assignment fixed while perturbing parameters.
pub fn encoder_matching(
    scores: &Tensor, // [P] logits
    boxes: &Tensor,  // [P, 4] cxcywh, normalized
    gts: &[TextInstance],
    w: &MatchWeights,
) -> Result<MatchResult> {
    let p_count = scores.shape()[0];
    let gt_boxes: Vec<Aabb> = gts.iter().map(|g| g.polygon.aabb()).collect();
    let score_vals = scores.value();
    let box_vals = boxes.value();
    let pred_box = |i: usize| {
        Aabb::from_cxcywh([
            box_vals[i * 4],
            box_vals[i * 4 + 1],
            box_vals[i * 4 + 2],
            box_vals[i * 4 + 3],
        ])
    };
    let cost: Vec<Vec<f64>> = gt_boxes
        .iter()
        .map(|gb| {
            let gb4 = gb.cxcywh();
            (0..p_count)
                .map(|i| {
                    let mut c = w.cls
                        * focal_cost(
                            crate::tensor::sigmoid(score_vals[i]),
                            w.focal_alpha,
                            w.focal_gamma,
                        );
                    for k in 0..4 {
                        c += w.coord * (box_vals[i * 4 + k] - gb4[k]).abs();
                    }
                    c += w.giou * (1.0 - pred_box(i).giou(gb));
                    c
                })
                .collect()
        })
        .collect();
    hungarian(&cost, p_count)
}

pub fn encoder_losses(
    scores: &Tensor,
    boxes: &Tensor,
    gts: &[TextInstance],
    w: &MatchWeights,
) -> Result<EncoderLosses> {
    let matching = encoder_matching(scores, boxes, gts, w)?;
    encoder_losses_matched(scores, boxes, gts, &matching, w)
}

/// Encoder losses under a fixed, precomputed assignment.
pub fn encoder_losses_matched(
    scores: &Tensor,
    boxes: &Tensor,
    gts: &[TextInstance],
    matching: &MatchResult,
    w: &MatchWeights,
) -> Result<EncoderLosses> {
    let graph = scores.graph().clone();
    let p_count = scores.shape()[0];
    let gt_boxes: Vec<Aabb> = gts.iter().map(|g| g.polygon.aabb()).collect();
    let g_count = matching.pairs.len();

    // In-graph loss terms.
    let mut pos_mask = vec![0.0; p_count];
    for &(_, pi) in &matching.pairs {
        pos_mask[pi] = 1.0;
    }
    let xneg = scores.scale(-1.0);
    let pos_term = xneg
        .sigmoid()
        .pow_const(w.focal_gamma)
        .mul(&xneg.softplus())?
        .scale(w.focal_alpha);
    let neg_term = scores
        .sigmoid()
        .pow_const(w.focal_gamma)
        .mul(&scores.softplus())?
        .scale(1.0 - w.focal_alpha);
    let mask_t = graph.constant(pos_mask.clone(), &[p_count])?;
    let inv_mask_t = graph.constant(pos_mask.iter().map(|m| 1.0 - m).collect(), &[p_count])?;
    let cls = pos_term
        .mul(&mask_t)?
        .add(&neg_term.mul(&inv_mask_t)?)?
        .sum_all()
        .scale(1.0 / g_count.max(1) as f64);

    let mut l1 = graph.scalar(0.0);
    let mut giou_loss = graph.scalar(0.0);
    for &(g, pi) in &matching.pairs {
        let pb = boxes.slice(0, pi, 1)?.reshape(&[4])?;
        let gb4 = gt_boxes[g].cxcywh();
        let gt_t = graph.constant(gb4.to_vec(), &[4])?;
        l1 = l1.add(&pb.sub(&gt_t)?.abs().sum_all())?;
        let giou = box_giou_tensor(&pb, &gt_boxes[g])?;
        giou_loss = giou_loss.add(&giou.scale(-1.0).add_scalar(1.0))?;
    }
    let l1 = l1.scale(1.0 / g_count.max(1) as f64);
    let giou_loss = giou_loss.scale(1.0 / g_count.max(1) as f64);

    let total = cls
        .scale(w.cls)
        .add(&l1.scale(w.coord))?
        .add(&giou_loss.scale(w.giou))?;
    Ok(EncoderLosses { cls, l1, giou: giou_loss, total })
}

/// Differentiable generalized IoU between a predicted cxcywh box tensor
/// (shape [4], positive width/height) and a fixed gt box.
pub fn box_giou_tensor(pred: &Tensor, gt: &Aabb) -> Result<Tensor> {
    let cx = pred.slice(0, 0, 1)?;
    let cy = pred.slice(0, 1, 1)?;
    let w = pred.slice(0, 2, 1)?;
    let h = pred.slice(0, 3, 1)?;
    let half_w = w.scale(0.5);
    let half_h = h.scale(0.5);
    let x1 = cx.sub(&half_w)?;
    let x2 = cx.add(&half_w)?;
    let y1 = cy.sub(&half_h)?;
    let y2 = cy.add(&half_h)?;

    let g = pred.graph();
    let gx1 = g.scalar(gt.min[0]);
    let gx2 = g.scalar(gt.max[0]);
    let gy1 = g.scalar(gt.min[1]);
    let gy2 = g.scalar(gt.max[1]);

    let inter_w = tmin(&x2, &gx2)?.sub(&tmax(&x1, &gx1)?)?.relu();
    let inter_h = tmin(&y2, &gy2)?.sub(&tmax(&y1, &gy1)?)?.relu();
    let inter = inter_w.mul(&inter_h)?;

    let area_p = w.abs().mul(&h.abs())?;
    let area_g = g.scalar(gt.area());
    let union = area_p.add(&area_g)?.sub(&inter)?;

    let hull_w = tmax(&x2, &gx2)?.sub(&tmin(&x1, &gx1)?)?;
    let hull_h = tmax(&y2, &gy2)?.sub(&tmin(&y1, &gy1)?)?;
    let hull = hull_w.mul(&hull_h)?;

    // inter/union − (hull−union)/hull, reciprocals via x^−1 (positive areas).
    let iou = inter.mul(&union.pow_const(-1.0))?;
    let hull_gap = hull.sub(&union)?.mul(&hull.pow_const(-1.0))?;
    Ok(iou.sub(&hull_gap)?.sum_all())
}

/// Elementwise min via (a+b−|a−b|)/2.
fn tmin(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.add(b)?.sub(&a.sub(b)?.abs())?.scale(0.5))
}

/// Elementwise max via (a+b+|a−b|)/2.
fn tmax(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.add(b)?.add(&a.sub(b)?.abs())?.scale(0.5))
}

/// L = L_enc + Σ_j L_dec^(j): the literal sum of all layer losses.
pub fn total_loss(encoder: &Tensor, decoder_layers: &[Tensor]) -> Result<Tensor> {
    let mut total = encoder.clone();
    for layer in decoder_layers {
        total = total.add(layer)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
