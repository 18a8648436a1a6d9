use super::*;
use crate::geometry::BoundaryPolygon;
use crate::tensor::Graph;
use crate::verify::brute_force_assignment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- independent f64 replicas of the loss formulas -------------------------

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// α(1−σ(x))^γ · (−ln σ(x)), written from the paper's formula.
fn focal_pos(x: f64, alpha: f64, gamma: f64) -> f64 {
    alpha * (1.0 - sig(x)).powf(gamma) * (1.0 + (-x).exp()).ln()
}

/// (1−α)σ(x)^γ · (−ln(1−σ(x))).
fn focal_neg(x: f64, alpha: f64, gamma: f64) -> f64 {
    (1.0 - alpha) * sig(x).powf(gamma) * (1.0 + x.exp()).ln()
}

fn unit_square() -> BoundaryPolygon {
    BoundaryPolygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
}

fn square_instance(text: &str, centers: Vec<Vec2>, available: bool) -> TextInstance {
    TextInstance {
        polygon: unit_square(),
        transcription: text.to_string(),
        char_centers: centers,
        centers_available: available,
        dont_care: false,
    }
}

fn preds_from(
    graph: &Graph,
    scores: Vec<f64>,
    coords: Vec<f64>,
    n: usize,
    centers: Vec<f64>,
    m: usize,
    logits: Vec<f64>,
    v: usize,
) -> LayerPreds {
    let q = scores.len();
    LayerPreds {
        scores: graph.leaf(scores, &[q]).unwrap(),
        coords: graph.leaf(coords, &[q, n, 2]).unwrap(),
        centers: graph.leaf(centers, &[q, m, 2]).unwrap(),
        char_logits: graph.leaf(logits, &[q, m, v]).unwrap(),
    }
}

// ---- hungarian --------------------------------------------------------------

#[test]
fn hungarian_one_by_one() {
    let r = hungarian(&[vec![3.5]], 1).unwrap();
    assert_eq!(r.pairs, vec![(0, 0)]);
    assert!(r.unmatched_preds.is_empty());
}

#[test]
fn hungarian_diag_dominant_is_identity() {
    let cost = vec![
        vec![1.0, 9.0, 9.0],
        vec![9.0, 1.0, 9.0],
        vec![9.0, 9.0, 1.0],
    ];
    let r = hungarian(&cost, 3).unwrap();
    assert_eq!(r.pairs, vec![(0, 0), (1, 1), (2, 2)]);
    let total: f64 = r.pairs.iter().map(|&(g, p)| cost[g][p]).sum();
    assert_eq!(total, 3.0);
    // Cross-check against exhaustive enumeration of all 6 permutations.
    let (bf_pairs, bf_cost) = brute_force_assignment(&cost, 3);
    assert_eq!(r.pairs, bf_pairs);
    assert_eq!(total, bf_cost);
}

#[test]
fn hungarian_matches_brute_force_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for trial in 0..1000 {
        let cost: Vec<Vec<f64>> =
            (0..5).map(|_| (0..5).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let r = hungarian(&cost, 5).unwrap();
        let total: f64 = r.pairs.iter().map(|&(g, p)| cost[g][p]).sum();
        let (_, bf_cost) = brute_force_assignment(&cost, 5);
        assert!(
            (total - bf_cost).abs() < 1e-9,
            "trial {trial}: hungarian {total} vs brute force {bf_cost}"
        );
    }
}

#[test]
fn hungarian_matches_brute_force_on_rectangles() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for rows in 1..=6usize {
        for cols in rows..=6usize {
            for _ in 0..50 {
                let cost: Vec<Vec<f64>> = (0..rows)
                    .map(|_| (0..cols).map(|_| rng.random_range(-5.0..5.0)).collect())
                    .collect();
                let r = hungarian(&cost, cols).unwrap();
                assert_eq!(r.pairs.len(), rows);
                let mut used: Vec<usize> = r.pairs.iter().map(|&(_, p)| p).collect();
                used.sort_unstable();
                used.dedup();
                assert_eq!(used.len(), rows, "assignment must be injective");
                assert_eq!(r.unmatched_preds.len(), cols - rows);
                let total: f64 = r.pairs.iter().map(|&(g, p)| cost[g][p]).sum();
                let (_, bf_cost) = brute_force_assignment(&cost, cols);
                assert!((total - bf_cost).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn hungarian_tie_break_prefers_low_indices() {
    // Uniform costs: every assignment is optimal; the documented tie-break
    // gives gt g the lowest free prediction, i.e. the identity prefix.
    let cost = vec![vec![7.0; 5]; 3];
    let r = hungarian(&cost, 5).unwrap();
    assert_eq!(r.pairs, vec![(0, 0), (1, 1), (2, 2)]);
    assert_eq!(r.unmatched_preds, vec![3, 4]);
}

#[test]
fn hungarian_invariant_under_positive_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..50 {
        let cost: Vec<Vec<f64>> =
            (0..4).map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let scaled: Vec<Vec<f64>> =
            cost.iter().map(|r| r.iter().map(|c| c * 3.7).collect()).collect();
        let a = hungarian(&cost, 6).unwrap();
        let b = hungarian(&scaled, 6).unwrap();
        assert_eq!(a.pairs, b.pairs);
    }
}

#[test]
fn hungarian_rejects_more_gts_than_predictions() {
    let cost = vec![vec![1.0], vec![2.0]];
    assert!(hungarian(&cost, 1).is_err());
}

#[test]
fn hungarian_rejects_non_finite_costs() {
    assert!(hungarian(&[vec![1.0, f64::NAN]], 2).is_err());
    assert!(hungarian(&[vec![f64::INFINITY, 1.0]], 2).is_err());
}

#[test]
fn hungarian_empty_gts() {
    let r = hungarian(&[], 4).unwrap();
    assert!(r.pairs.is_empty());
    assert_eq!(r.unmatched_preds, vec![0, 1, 2, 3]);
}

// ---- match_cost -------------------------------------------------------------

#[test]
fn match_cost_zero_geometry_terms_for_perfect_match() {
    let gt = square_instance("AB", vec![[0.3, 0.5], [0.7, 0.5]], true);
    let pred = PredView {
        prob: 0.42,
        coords: gt.polygon.ring().to_vec(),
        centers: gt.char_centers.clone(),
    };
    let w = MatchWeights::default();
    let cost = match_cost(&pred, &gt, &w);
    let class_only = w.cls * focal_cost(0.42, w.focal_alpha, w.focal_gamma);
    assert!((cost - class_only).abs() < 1e-12);
}

#[test]
fn match_cost_skips_center_term_when_unavailable() {
    let gt = square_instance("AB", vec![], false);
    let pred = PredView {
        prob: 0.9,
        coords: vec![[0.1, 0.0], [1.0, 0.2], [1.0, 1.0], [0.3, 1.0]],
        centers: vec![[0.0, 0.0], [0.0, 0.0]],
    };
    let w = MatchWeights { cls: 1.0, coord: 1.0, center: 1.0, ..MatchWeights::default() };
    let cost = match_cost(&pred, &gt, &w);
    let expect = focal_cost(0.9, w.focal_alpha, w.focal_gamma) + (0.1 + 0.2 + 0.0 + 0.3);
    assert!((cost - expect).abs() < 1e-12, "{cost} vs {expect}");
}

#[test]
fn match_cost_matches_manual_formula() {
    // λ = (1,1,1), |C| = 2, every number chosen so the three terms are easy
    // to evaluate by hand.
    let gt = square_instance("AB", vec![[0.25, 0.5], [0.75, 0.5]], true);
    let pred = PredView {
        prob: 0.5,
        coords: vec![[0.1, 0.0], [1.0, 0.2], [1.0, 1.0], [0.3, 1.0]],
        centers: vec![[0.25, 0.6], [0.85, 0.5]],
    };
    let w = MatchWeights {
        cls: 1.0,
        coord: 1.0,
        center: 1.0,
        focal_alpha: 0.25,
        focal_gamma: 2.0,
        ..MatchWeights::default()
    };
    // Class: 0.25·0.5²·(−ln 0.5) − 0.75·0.5²·(−ln 0.5) = −0.125·ln 2.
    let class = -0.125 * 2.0f64.ln();
    // Coord: 0.1 + 0.2 + 0 + 0.3 = 0.6. Center: (0.1 + 0.1)/2 = 0.1.
    let expect = class + 0.6 + 0.1;
    assert!((match_cost(&pred, &gt, &w) - expect).abs() < 1e-12);
}

#[test]
fn match_cost_zero_iff_perfect_under_degenerate_weights() {
    // α=1 kills the background credit, so the cost is a sum of non-negative
    // terms that vanishes only for perfect confidence and perfect geometry.
    let gt = square_instance("AB", vec![[0.3, 0.5], [0.7, 0.5]], true);
    let w = MatchWeights { focal_alpha: 1.0, ..MatchWeights::default() };
    let perfect = PredView {
        prob: 1.0,
        coords: gt.polygon.ring().to_vec(),
        centers: gt.char_centers.clone(),
    };
    assert!(match_cost(&perfect, &gt, &w) < 1e-20);
    let mut nudged = perfect.clone();
    nudged.coords[2][0] += 1e-3;
    assert!(match_cost(&nudged, &gt, &w) > 1e-4);
    let dim = PredView { prob: 0.99, ..perfect.clone() };
    assert!(match_cost(&dim, &gt, &w) > 0.0);
}

#[test]
fn match_cost_center_ablation_changes_only_center_term() {
    let gt = square_instance("AB", vec![[0.25, 0.5], [0.75, 0.5]], true);
    let pred = PredView {
        prob: 0.7,
        coords: vec![[0.1, 0.0], [1.0, 0.2], [1.0, 1.0], [0.3, 1.0]],
        centers: vec![[0.25, 0.6], [0.85, 0.5]],
    };
    let full = MatchWeights::default();
    let wo_b = MatchWeights { center: 0.0, ..full };
    let diff = match_cost(&pred, &gt, &full) - match_cost(&pred, &gt, &wo_b);
    // The removed piece is exactly (λ_center/|C|)·ΣL1 = 1.0·(0.1+0.1)/2.
    assert!((diff - 0.1).abs() < 1e-12);
}

// ---- decoder losses ----------------------------------------------------------

const V: usize = vocab::VOCAB_SIZE;

#[test]
fn decoder_losses_perfect_match() {
    let graph = Graph::new();
    let gt = square_instance("AB", vec![[0.3, 0.5], [0.7, 0.5]], true);
    let ring: Vec<f64> = gt.polygon.ring().iter().flatten().copied().collect();
    let centers: Vec<f64> = gt.char_centers.iter().flatten().copied().collect();
    // Slot k puts logit 5 on the correct class, 0 elsewhere.
    let mut logits = vec![0.0; 2 * V];
    logits[vocab::char_to_index('A').unwrap()] = 5.0;
    logits[V + vocab::char_to_index('B').unwrap()] = 5.0;
    let preds = preds_from(&graph, vec![2.0], ring, 4, centers, 2, logits, V);

    let w = MatchWeights::default();
    let matching = match_predictions(&preds, &[gt.clone()], &w).unwrap();
    assert_eq!(matching.pairs, vec![(0, 0)]);
    let losses = decoder_losses(&preds, &[gt], &matching, &w).unwrap();

    assert!(losses.coord.item().abs() < 1e-12);
    assert!(losses.ct.item().abs() < 1e-12);
    // Per-slot CE = ln(e^5 + 27) − 5; both slots identical, averaged over M=2.
    let ce = (5.0f64.exp() + (V - 1) as f64).ln() - 5.0;
    assert!((losses.char_ce.item() - ce).abs() < 1e-12);
    let cls = focal_pos(2.0, w.focal_alpha, w.focal_gamma);
    assert!((losses.cls.item() - cls).abs() < 1e-12);
    let total =
        w.cls * cls + w.char_ce * ce;
    assert!((losses.total.item() - total).abs() < 1e-12);
}

#[test]
fn decoder_losses_empty_gts_is_pure_negative_focal() {
    let graph = Graph::new();
    let scores = vec![1.5, -0.5, 0.25];
    let preds = preds_from(
        &graph,
        scores.clone(),
        vec![0.5; 3 * 4 * 2],
        4,
        vec![0.5; 3 * 2 * 2],
        2,
        vec![0.0; 3 * 2 * V],
        V,
    );
    let w = MatchWeights::default();
    let matching = match_predictions(&preds, &[], &w).unwrap();
    assert!(matching.pairs.is_empty());
    let losses = decoder_losses(&preds, &[], &matching, &w).unwrap();

    let expect: f64 = scores.iter().map(|&x| focal_neg(x, w.focal_alpha, w.focal_gamma)).sum();
    assert!((losses.cls.item() - expect).abs() < 1e-12);
    assert_eq!(losses.coord.item(), 0.0);
    assert_eq!(losses.ct.item(), 0.0);
    assert_eq!(losses.char_ce.item(), 0.0);
    assert!((losses.total.item() - w.cls * expect).abs() < 1e-12);
}

#[test]
fn decoder_losses_match_manual_evaluation() {
    // 1 gt, 2 predictions: slot 1 is near the gt square, slot 0 is shifted
    // far away, so the final-layer matching must pick slot 1. Every term is
    // then recomputed below with plain-f64 arithmetic.
    let graph = Graph::new();
    let gt = square_instance("AB", vec![[0.3, 0.5], [0.7, 0.5]], true);

    let coords = vec![
        // slot 0: unit square shifted by +5
        5.0, 5.0, 6.0, 5.0, 6.0, 6.0, 5.0, 6.0,
        // slot 1: gt ring nudged by +0.02 in x
        0.02, 0.0, 1.02, 0.0, 1.02, 1.0, 0.02, 1.0,
    ];
    let centers = vec![
        5.5, 5.5, 5.5, 5.5, // slot 0
        0.31, 0.52, 0.68, 0.47, // slot 1
    ];
    let mut logits = vec![0.1; 2 * 2 * V];
    // Slot 1's two character positions lean towards 'A' and 'B'.
    logits[(2 + 0) * V + 0] = 2.0;
    logits[(2 + 1) * V + 1] = 1.5;
    let scores = vec![-1.0, 1.0];
    let preds = preds_from(&graph, scores.clone(), coords.clone(), 4, centers.clone(), 2, logits.clone(), V);

    let w = MatchWeights::default();
    let matching = match_predictions(&preds, &[gt.clone()], &w).unwrap();
    assert_eq!(matching.pairs, vec![(0, 1)]);
    assert_eq!(matching.unmatched_preds, vec![0]);
    let losses = decoder_losses(&preds, &[gt.clone()], &matching, &w).unwrap();

    // L_cls: slot 1 positive, slot 0 negative, divided by G=1.
    let cls = focal_neg(-1.0, w.focal_alpha, w.focal_gamma)
        + focal_pos(1.0, w.focal_alpha, w.focal_gamma);
    assert!((losses.cls.item() - cls).abs() < 1e-12);

    // L_coord: |Δ| summed over slot 1's four points = 4 · 0.02.
    assert!((losses.coord.item() - 0.08).abs() < 1e-12);

    // L_ct: both slots are real characters (|C| = M = 2).
    let ct = (0.31f64 - 0.3).abs()
        + (0.52f64 - 0.5).abs()
        + (0.68f64 - 0.7).abs()
        + (0.47f64 - 0.5).abs();
    assert!((losses.ct.item() - ct).abs() < 1e-10);

    // L_char: CE of slot 1's two char positions against 'A' (0) and 'B' (1),
    // averaged over M = 2.
    let ce = |row: &[f64], class: usize| -> f64 {
        let z: f64 = row.iter().map(|l| l.exp()).sum();
        z.ln() - row[class]
    };
    let row_a = &logits[2 * V..3 * V];
    let row_b = &logits[3 * V..4 * V];
    let char_ce = (ce(row_a, 0) + ce(row_b, 1)) / 2.0;
    assert!((losses.char_ce.item() - char_ce).abs() < 1e-12);

    let total = w.cls * cls + w.coord * 0.08 + w.ct * ct + w.char_ce * char_ce;
    assert!((losses.total.item() - total).abs() < 1e-10);
}

#[test]
fn decoder_losses_skip_center_term_without_supervision() {
    let graph = Graph::new();
    let gt = square_instance("AB", vec![], false);
    let ring: Vec<f64> = gt.polygon.ring().iter().flatten().copied().collect();
    let preds = preds_from(
        &graph,
        vec![2.0],
        ring,
        4,
        vec![0.9; 2 * 2],
        2,
        vec![0.0; 2 * V],
        V,
    );
    let w = MatchWeights::default();
    let matching = match_predictions(&preds, &[gt.clone()], &w).unwrap();
    let losses = decoder_losses(&preds, &[gt], &matching, &w).unwrap();
    assert_eq!(losses.ct.item(), 0.0);
    assert!(losses.char_ce.item() > 0.0);
}

#[test]
fn decoder_losses_reject_ring_size_mismatch() {
    let graph = Graph::new();
    let poly = BoundaryPolygon::new(vec![
        [0.0, 0.0],
        [0.5, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [0.5, 1.0],
        [0.0, 1.0],
    ])
    .unwrap();
    let gt = TextInstance {
        polygon: poly,
        transcription: "A".into(),
        char_centers: vec![[0.5, 0.5]],
        centers_available: true,
        dont_care: false,
    };
    let preds = preds_from(
        &graph,
        vec![0.0],
        vec![0.0; 4 * 2],
        4,
        vec![0.0; 2 * 2],
        2,
        vec![0.0; 2 * V],
        V,
    );
    let matching = MatchResult { pairs: vec![(0, 0)], unmatched_preds: vec![] };
    assert!(decoder_losses(&preds, &[gt], &matching, &MatchWeights::default()).is_err());
}

#[test]
fn decoder_losses_gradients_respect_the_matching() {
    let graph = Graph::new();
    let gt = square_instance("AB", vec![[0.3, 0.5], [0.7, 0.5]], true);
    // Slot 1 is offset from the gt ring in both coordinates so every |Δ|
    // sits away from the kink of the L1 loss.
    let coords = vec![
        5.0, 5.0, 6.0, 5.0, 6.0, 6.0, 5.0, 6.0, // slot 0, far
        0.1, 0.05, 1.1, 0.05, 1.1, 1.05, 0.1, 1.05, // slot 1, near
    ];
    let preds = preds_from(
        &graph,
        vec![-0.5, 0.5],
        coords,
        4,
        vec![0.4; 2 * 2 * 2],
        2,
        vec![0.1; 2 * 2 * V],
        V,
    );
    let w = MatchWeights::default();
    let matching = match_predictions(&preds, &[gt.clone()], &w).unwrap();
    assert_eq!(matching.pairs, vec![(0, 1)]);
    let losses = decoder_losses(&preds, &[gt], &matching, &w).unwrap();
    losses.total.backward();

    let coord_grad = preds.coords.grad().unwrap();
    assert!(coord_grad[..8].iter().all(|&g| g == 0.0), "unmatched slot must get no coord grad");
    assert!(coord_grad[8..].iter().all(|&g| g != 0.0), "matched slot must get coord grad");
    let score_grad = preds.scores.grad().unwrap();
    assert!(score_grad.iter().all(|&g| g.is_finite() && g != 0.0));
    let center_grad = preds.centers.grad().unwrap();
    assert!(center_grad[..4].iter().all(|&g| g == 0.0));
    assert!(center_grad[4..].iter().all(|&g| g != 0.0));
}

// ---- encoder losses ----------------------------------------------------------

#[test]
fn encoder_losses_zero_for_exact_box() {
    let graph = Graph::new();
    let gt = square_instance("AB", vec![], false);
    // Proposal 0 is exactly the gt bbox in cxcywh; proposal 1 is far away.
    let scores = graph.leaf(vec![2.0, -2.0], &[2]).unwrap();
    let boxes = graph
        .leaf(vec![0.5, 0.5, 1.0, 1.0, 8.0, 8.0, 0.5, 0.5], &[2, 4])
        .unwrap();
    let w = MatchWeights::default();
    let losses = encoder_losses(&scores, &boxes, &[gt], &w).unwrap();
    assert!(losses.l1.item().abs() < 1e-12);
    assert!(losses.giou.item().abs() < 1e-12);
    assert!(losses.cls.item() > 0.0);
}

#[test]
fn encoder_losses_disjoint_boxes_exceed_one() {
    let graph = Graph::new();
    let gt = square_instance("A", vec![], false);
    // Unit box ten units away: IoU 0, hull 11×1, union 2 → gIoU = −9/11.
    let scores = graph.leaf(vec![0.0], &[1]).unwrap();
    let boxes = graph.leaf(vec![10.5, 0.5, 1.0, 1.0], &[1, 4]).unwrap();
    let losses = encoder_losses(&scores, &boxes, &[gt], &MatchWeights::default()).unwrap();
    assert!((losses.giou.item() - (1.0 + 9.0 / 11.0)).abs() < 1e-12);
    assert!(losses.giou.item() > 1.0);
}

#[test]
fn encoder_losses_match_manual_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let graph = Graph::new();
        let p_count = 5;
        let score_vals: Vec<f64> = (0..p_count).map(|_| rng.random_range(-2.0..2.0)).collect();
        let box_vals: Vec<f64> = (0..p_count)
            .flat_map(|_| {
                [
                    rng.random_range(0.2..0.8),
                    rng.random_range(0.2..0.8),
                    rng.random_range(0.1..0.3),
                    rng.random_range(0.1..0.3),
                ]
            })
            .collect();
        let gts: Vec<TextInstance> = (0..2)
            .map(|_| {
                let x1 = rng.random_range(0.1..0.5);
                let y1 = rng.random_range(0.1..0.5);
                let (w, h) = (rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
                TextInstance {
                    polygon: BoundaryPolygon::new(vec![
                        [x1, y1],
                        [x1 + w, y1],
                        [x1 + w, y1 + h],
                        [x1, y1 + h],
                    ])
                    .unwrap(),
                    transcription: "AB".into(),
                    char_centers: vec![],
                    centers_available: false,
                    dont_care: false,
                }
            })
            .collect();

        let scores = graph.leaf(score_vals.clone(), &[p_count]).unwrap();
        let boxes = graph.leaf(box_vals.clone(), &[p_count, 4]).unwrap();
        let w = MatchWeights::default();
        let losses = encoder_losses(&scores, &boxes, &gts, &w).unwrap();

        // Manual replay: cost matrix, brute-force assignment, plain-f64 terms.
        let pred_aabb = |i: usize| {
            Aabb::from_cxcywh([
                box_vals[i * 4],
                box_vals[i * 4 + 1],
                box_vals[i * 4 + 2],
                box_vals[i * 4 + 3],
            ])
        };
        let cost: Vec<Vec<f64>> = gts
            .iter()
            .map(|gt| {
                let gb = gt.polygon.aabb();
                let gb4 = gb.cxcywh();
                (0..p_count)
                    .map(|i| {
                        let b = sig(score_vals[i]).clamp(1e-12, 1.0 - 1e-12);
                        let cls = w.focal_alpha * (1.0 - b).powf(w.focal_gamma) * (-b.ln())
                            - (1.0 - w.focal_alpha) * b.powf(w.focal_gamma) * (-(1.0 - b).ln());
                        let l1: f64 =
                            (0..4).map(|k| (box_vals[i * 4 + k] - gb4[k]).abs()).sum();
                        w.cls * cls + w.coord * l1 + w.giou * (1.0 - pred_aabb(i).giou(&gb))
                    })
                    .collect()
            })
            .collect();
        let (pairs, _) = brute_force_assignment(&cost, p_count);

        let matched: Vec<usize> = pairs.iter().map(|&(_, p)| p).collect();
        let cls: f64 = (0..p_count)
            .map(|i| {
                if matched.contains(&i) {
                    focal_pos(score_vals[i], w.focal_alpha, w.focal_gamma)
                } else {
                    focal_neg(score_vals[i], w.focal_alpha, w.focal_gamma)
                }
            })
            .sum::<f64>()
            / pairs.len() as f64;
        let mut l1 = 0.0;
        let mut giou_loss = 0.0;
        for &(g, p) in &pairs {
            let gb = gts[g].polygon.aabb();
            let gb4 = gb.cxcywh();
            l1 += (0..4).map(|k| (box_vals[p * 4 + k] - gb4[k]).abs()).sum::<f64>();
            giou_loss += 1.0 - pred_aabb(p).giou(&gb);
        }
        l1 /= pairs.len() as f64;
        giou_loss /= pairs.len() as f64;

        assert!((losses.cls.item() - cls).abs() < 1e-9);
        assert!((losses.l1.item() - l1).abs() < 1e-9);
        assert!((losses.giou.item() - giou_loss).abs() < 1e-9);
        let total = w.cls * cls + w.coord * l1 + w.giou * giou_loss;
        assert!((losses.total.item() - total).abs() < 1e-9);
    }
}

#[test]
fn box_giou_tensor_agrees_with_f64_giou() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let graph = Graph::new();
        let vals = vec![
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.05..0.6),
            rng.random_range(0.05..0.6),
        ];
        let gt = Aabb::from_cxcywh([
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.05..0.6),
            rng.random_range(0.05..0.6),
        ]);
        let pred = graph.leaf(vals.clone(), &[4]).unwrap();
        let g = box_giou_tensor(&pred, &gt).unwrap();
        let expect = Aabb::from_cxcywh([vals[0], vals[1], vals[2], vals[3]]).giou(&gt);
        assert!((g.item() - expect).abs() < 1e-12, "{} vs {expect}", g.item());
        g.backward();
        assert!(pred.grad().unwrap().iter().all(|d| d.is_finite()));
    }
}

// ---- total loss ----------------------------------------------------------------

#[test]
fn total_loss_is_the_literal_sum() {
    let graph = Graph::new();
    let enc = graph.scalar(1.5);
    let d1 = graph.scalar(2.25);
    assert_eq!(total_loss(&enc, &[d1.clone()]).unwrap().item(), 3.75);

    let d2 = graph.scalar(-0.5);
    let d3 = graph.scalar(0.125);
    let total = total_loss(&enc, &[d1.clone(), d2.clone(), d3.clone()]).unwrap();
    assert_eq!(total.item(), 1.5 + 2.25 - 0.5 + 0.125);
}

#[test]
fn total_loss_vanishes_with_zero_lambdas() {
    let graph = Graph::new();
    let gt = square_instance("AB", vec![[0.3, 0.5], [0.7, 0.5]], true);
    let ring: Vec<f64> = gt.polygon.ring().iter().flatten().copied().collect();
    let preds = preds_from(
        &graph,
        vec![0.3],
        ring.iter().map(|c| c + 0.1).collect(),
        4,
        vec![0.4; 2 * 2],
        2,
        vec![0.2; 2 * V],
        V,
    );
    let zero = MatchWeights {
        cls: 0.0,
        coord: 0.0,
        center: 0.0,
        ct: 0.0,
        char_ce: 0.0,
        giou: 0.0,
        ..MatchWeights::default()
    };
    let matching = match_predictions(&preds, &[gt.clone()], &zero).unwrap();
    let dec = decoder_losses(&preds, &[gt.clone()], &matching, &zero).unwrap();
    let scores = graph.leaf(vec![1.0], &[1]).unwrap();
    let boxes = graph.leaf(vec![0.5, 0.5, 1.0, 1.0], &[1, 4]).unwrap();
    let enc = encoder_losses(&scores, &boxes, &[gt], &zero).unwrap();
    let total = total_loss(&enc.total, &[dec.total]).unwrap();
    assert_eq!(total.item(), 0.0);
}

#[test]
fn total_loss_three_layers_equal_recomputed_sum() {
    let graph = Graph::new();
    let gt = square_instance("AB", vec![[0.3, 0.5], [0.7, 0.5]], true);
    let ring: Vec<f64> = gt.polygon.ring().iter().flatten().copied().collect();
    let w = MatchWeights::default();

    let mut layers = Vec::new();
    let mut expected = 0.0;
    let mut matching = None;
    for j in 0..3 {
        let shift = 0.05 * (j as f64 + 1.0);
        let preds = preds_from(
            &graph,
            vec![0.5 + shift],
            ring.iter().map(|c| c + shift).collect(),
            4,
            vec![0.4 + shift; 2 * 2],
            2,
            vec![0.1 * shift; 2 * V],
            V,
        );
        // The matching comes from the last layer and is shared; build it
        // there, then reuse it for every layer (the layers here are built in
        // order, so compute it from layer 2's values when we reach it).
        if j == 2 {
            matching = Some(match_predictions(&preds, &[gt.clone()], &w).unwrap());
        }
        layers.push(preds);
    }
    let matching = matching.unwrap();
    let mut totals = Vec::new();
    for preds in &layers {
        let d = decoder_losses(preds, &[gt.clone()], &matching, &w).unwrap();
        expected += d.total.item();
        totals.push(d.total);
    }
    let enc = graph.scalar(0.75);
    expected += 0.75;
    let total = total_loss(&enc, &totals).unwrap();
    assert!((total.item() - expected).abs() < 1e-12);
}
