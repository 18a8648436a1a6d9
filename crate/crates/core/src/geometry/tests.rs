use super::*;
use crate::verify::{random_convex_boundary_polygon, rasterized_iou};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn square(x0: f64, y0: f64, side: f64) -> BoundaryPolygon {
    BoundaryPolygon::new(vec![
        [x0, y0],
        [x0 + side, y0],
        [x0 + side, y0 + side],
        [x0, y0 + side],
    ])
    .unwrap()
}

fn rect_instance(x0: f64, y0: f64, w: f64, h: f64, text: &str) -> TextInstance {
    TextInstance {
        polygon: BoundaryPolygon::new(vec![
            [x0, y0],
            [x0 + w, y0],
            [x0 + w, y0 + h],
            [x0, y0 + h],
        ])
        .unwrap(),
        transcription: text.to_string(),
        char_centers: vec![],
        centers_available: false,
        dont_care: false,
    }
}

// ---- construction -----------------------------------------------------------

#[test]
fn polygon_rejects_bad_point_counts() {
    assert!(BoundaryPolygon::new(vec![[0.0, 0.0], [1.0, 0.0]]).is_err());
    assert!(BoundaryPolygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.5, 1.2], [0.0, 1.0]])
        .is_err()); // odd
    assert!(BoundaryPolygon::new(vec![[0.0, 0.0], [f64::NAN, 0.0], [1.0, 1.0], [0.0, 1.0]])
        .is_err());
}

#[test]
fn curves_split_as_documented() {
    let p = square(0.0, 0.0, 1.0);
    assert_eq!(p.top(), &[[0.0, 0.0], [1.0, 0.0]]);
    assert_eq!(p.bottom(), &[[1.0, 1.0], [0.0, 1.0]]);
    assert_eq!(p.n(), 4);
    assert_eq!(p.half(), 2);
}

// ---- IoU ----------------------------------------------------------------------

#[test]
fn iou_identical_squares_is_one() {
    let a = square(0.1, 0.1, 0.5);
    assert!((polygon_iou(&a, &a) - 1.0).abs() < 1e-12);
}

#[test]
fn iou_disjoint_squares_is_zero() {
    let a = square(0.0, 0.0, 0.2);
    let b = square(0.5, 0.5, 0.2);
    assert_eq!(polygon_iou(&a, &b), 0.0);
}

#[test]
fn iou_half_shifted_square_is_one_third() {
    let a = square(0.0, 0.0, 1.0);
    let b = square(0.5, 0.0, 1.0);
    let iou = polygon_iou(&a, &b);
    assert!((iou - 1.0 / 3.0).abs() < 1e-12, "got {iou}");
    // And the rasterization oracle agrees at high resolution.
    let oracle = rasterized_iou(a.ring(), b.ring(), 2048);
    assert!((iou - oracle).abs() < 1e-3, "exact {iou} vs oracle {oracle}");
}

#[test]
fn iou_equals_one_under_vertex_rotation() {
    let a = square(0.2, 0.2, 0.4);
    let mut rotated = a.ring().to_vec();
    rotated.rotate_left(1);
    let b = BoundaryPolygon::new(rotated).unwrap();
    assert!((polygon_iou(&a, &b) - 1.0).abs() < 1e-12);
}

#[test]
fn iou_is_symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let a = random_convex_boundary_polygon(&mut rng);
        let b = random_convex_boundary_polygon(&mut rng);
        let ab = polygon_iou(&a, &b);
        let ba = polygon_iou(&b, &a);
        assert!((ab - ba).abs() < 1e-9, "asymmetric: {ab} vs {ba}");
        assert!((0.0..=1.0).contains(&ab));
    }
}

#[test]
fn iou_degenerate_polygon_is_zero() {
    let line = BoundaryPolygon::new(vec![
        [0.0, 0.5],
        [1.0, 0.5],
        [1.0, 0.5],
        [0.0, 0.5],
    ])
    .unwrap();
    let b = square(0.0, 0.0, 1.0);
    assert_eq!(polygon_iou(&line, &b), 0.0);
}

#[test]
fn iou_matches_raster_oracle_on_convex_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..60 {
        let a = random_convex_boundary_polygon(&mut rng);
        // Mix of overlapping (perturbed copies) and independent polygons.
        let b = if i % 3 == 0 {
            let dx = rng.random_range(-0.08..0.08);
            let dy = rng.random_range(-0.08..0.08);
            a.map_points(|p| [p[0] + dx, p[1] + dy])
        } else {
            random_convex_boundary_polygon(&mut rng)
        };
        let exact = polygon_iou(&a, &b);
        let approx = rasterized_iou(a.ring(), b.ring(), 512);
        assert!(
            (exact - approx).abs() < 1e-2,
            "pair {i}: exact {exact} vs raster {approx}"
        );
    }
}

#[test]
fn iou_handles_nonconvex_subject() {
    // L-shape with 6 vertices (3 top, 3 bottom in boundary order).
    let l_shape = BoundaryPolygon::new(vec![
        [0.0, 0.0],
        [0.2, 0.0],
        [0.2, 0.6],
        [1.0, 0.6],
        [1.0, 1.0],
        [0.0, 1.0],
    ])
    .unwrap();
    assert!(l_shape.is_simple());
    let sq = square(0.0, 0.0, 1.0);
    let exact = polygon_iou(&l_shape, &sq);
    // Intersection is the L itself: area 0.2*0.6 + 1.0*0.4 = 0.52.
    assert!((exact - 0.52).abs() < 1e-12, "got {exact}");
    let oracle = rasterized_iou(l_shape.ring(), sq.ring(), 1024);
    assert!((exact - oracle).abs() < 5e-3);
}

// ---- rotation angle ---------------------------------------------------------------

#[test]
fn rotation_angle_of_horizontal_word_is_zero() {
    assert_eq!(rotation_angle(&rect_instance(0.1, 0.1, 0.5, 0.1, "AB")), 0.0);
}

#[test]
fn rotation_angle_of_vertical_word_is_ninety() {
    let inst = TextInstance {
        polygon: BoundaryPolygon::new(vec![
            [0.5, 0.1],
            [0.5, 0.7],
            [0.4, 0.7],
            [0.4, 0.1],
        ])
        .unwrap(),
        transcription: "AB".into(),
        char_centers: vec![],
        centers_available: false,
        dont_care: false,
    };
    assert!((rotation_angle(&inst) - 90.0).abs() < 1e-12);
}

#[test]
fn rotation_angle_of_rotated_rectangle() {
    for &deg in &[15.0_f64, 45.0, 60.0, 80.0] {
        let rad = deg.to_radians();
        let base = [[0.0, 0.0], [0.4, 0.0], [0.4, 0.1], [0.0, 0.1]];
        let pts: Vec<_> = base.iter().map(|&p| vec2::rotate(p, rad)).collect();
        let inst = TextInstance {
            polygon: BoundaryPolygon::new(pts).unwrap(),
            transcription: String::new(),
            char_centers: vec![],
            centers_available: false,
            dont_care: false,
        };
        let got = rotation_angle(&inst);
        assert!((got - deg).abs() < 0.5, "expected {deg}, got {got}");
    }
}

#[test]
fn rotation_angle_invariant_under_scale_and_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let poly = random_convex_boundary_polygon(&mut rng);
        let inst = TextInstance {
            polygon: poly.clone(),
            transcription: String::new(),
            char_centers: vec![],
            centers_available: false,
            dont_care: false,
        };
        let base = rotation_angle(&inst);
        let s = rng.random_range(0.3..3.0);
        let (tx, ty) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let moved = TextInstance {
            polygon: poly.map_points(|p| [p[0] * s + tx, p[1] * s + ty]),
            ..inst
        };
        assert!((rotation_angle(&moved) - base).abs() < 1e-9);
    }
}

// ---- centerline -----------------------------------------------------------------

#[test]
fn centerline_of_unit_square() {
    let p = square(0.0, 0.0, 1.0);
    assert_eq!(centerline(&p), vec![[0.0, 0.5], [1.0, 0.5]]);
    assert_eq!(centerline_tail(&p), [1.0, 0.5]);
}

#[test]
fn centerline_unchanged_by_vertical_mirror() {
    // Swapping the top and bottom curves (mirror) must keep the midpoints.
    let top = [[0.0, 0.1], [0.5, 0.05], [1.0, 0.12]];
    let bottom = [[1.0, 0.4], [0.5, 0.5], [0.0, 0.45]];
    let poly = BoundaryPolygon::new(top.iter().chain(bottom.iter()).copied().collect()).unwrap();
    let mirrored = BoundaryPolygon::new(
        bottom.iter().rev().chain(top.iter().rev()).copied().collect(),
    )
    .unwrap();
    let (a, b) = (centerline(&poly), centerline(&mirrored));
    for (p, q) in a.iter().zip(&b) {
        assert!(vec2::dist(*p, *q) < 1e-12);
    }
}

#[test]
fn centerline_points_are_equidistant_from_generators() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let poly = random_convex_boundary_polygon(&mut rng);
        let n = poly.half();
        let line = centerline(&poly);
        for (k, c) in line.iter().enumerate() {
            let t = poly.ring()[k];
            let b = poly.ring()[2 * n - 1 - k];
            assert!((vec2::dist(*c, t) - vec2::dist(*c, b)).abs() < 1e-12);
        }
    }
}

// ---- char center targets ----------------------------------------------------------

#[test]
fn char_targets_full_transcription_passes_through() {
    let mut inst = rect_instance(0.0, 0.0, 1.0, 0.2, "ABC");
    inst.char_centers = vec![[0.2, 0.1], [0.5, 0.1], [0.8, 0.1]];
    let out = char_center_targets(&inst, 3).unwrap();
    assert_eq!(out, inst.char_centers);
}

#[test]
fn char_targets_empty_transcription_is_all_tail() {
    let inst = rect_instance(0.0, 0.0, 1.0, 0.2, "");
    let tail = centerline_tail(&inst.polygon);
    let out = char_center_targets(&inst, 4).unwrap();
    assert_eq!(out, vec![tail; 4]);
}

#[test]
fn char_targets_tail_fills_empty_slots() {
    let mut inst = rect_instance(0.0, 0.0, 1.0, 0.2, "ABC");
    inst.char_centers = vec![[0.2, 0.1], [0.5, 0.1], [0.8, 0.1]];
    let out = char_center_targets(&inst, 5).unwrap();
    let tail = centerline_tail(&inst.polygon);
    assert_eq!(&out[..3], &inst.char_centers[..]);
    assert_eq!(out[3], tail);
    assert_eq!(out[4], tail);
}

#[test]
fn char_targets_rejects_overlong_transcription() {
    let inst = rect_instance(0.0, 0.0, 1.0, 0.2, "TOOLONG");
    assert!(char_center_targets(&inst, 3).is_err());
}

#[test]
fn char_targets_lie_inside_polygon_for_simple_words() {
    let mut inst = rect_instance(0.1, 0.1, 0.8, 0.2, "AB");
    inst.char_centers = vec![[0.3, 0.2], [0.6, 0.2]];
    for c in char_center_targets(&inst, 6).unwrap() {
        // The tail target sits exactly on the closing edge: inclusive test.
        assert!(inst.polygon.contains_with_tol(c, 1e-9), "{c:?} escaped the polygon");
    }
}

// ---- validation ---------------------------------------------------------------------

#[test]
fn validate_catches_bowtie() {
    let bowtie = TextInstance {
        polygon: BoundaryPolygon::new(vec![
            [0.0, 0.0],
            [1.0, 1.0],
            [1.0, 0.0],
            [0.0, 1.0],
        ])
        .unwrap(),
        transcription: "X".into(),
        char_centers: vec![],
        centers_available: false,
        dont_care: false,
    };
    assert!(validate_instance(&bowtie, 8).is_err());
}

#[test]
fn validate_checks_center_count() {
    let mut inst = rect_instance(0.0, 0.0, 1.0, 0.2, "AB");
    inst.centers_available = true;
    inst.char_centers = vec![[0.5, 0.1]]; // should be M = 4
    assert!(validate_instance(&inst, 4).is_err());
    inst.char_centers = vec![[0.5, 0.1]; 4];
    assert!(validate_instance(&inst, 4).is_ok());
}

// ---- primitives ------------------------------------------------------------------------

#[test]
fn ring_simplicity() {
    assert!(ring_is_simple(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]));
    assert!(!ring_is_simple(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])); // bow-tie
    assert!(!ring_is_simple(&[[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.0, 1.0]])); // repeat
}

#[test]
fn point_in_ring_basics() {
    let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    assert!(point_in_ring([0.5, 0.5], &sq));
    assert!(!point_in_ring([1.5, 0.5], &sq));
    assert!(!point_in_ring([-0.1, -0.1], &sq));
}

#[test]
fn convex_clip_square_by_triangle() {
    let sq = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
    // CCW (y-up) right triangle covering the lower-left half.
    let tri = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]];
    let clipped = convex_clip(&sq, &tri);
    assert!((shoelace(&clipped).abs() * 0.5 - 2.0).abs() < 1e-12);
}

#[test]
fn triangulation_covers_polygon_area() {
    // Non-convex (L-shaped) ring.
    let ring = vec![
        [0.0, 0.0],
        [0.2, 0.0],
        [0.2, 0.6],
        [1.0, 0.6],
        [1.0, 1.0],
        [0.0, 1.0],
    ];
    let mut ccw = ring.clone();
    if shoelace(&ccw) < 0.0 {
        ccw.reverse();
    }
    let total: f64 = triangulate(&ccw)
        .iter()
        .map(|t| shoelace(t.as_slice()).abs() * 0.5)
        .sum();
    assert!((total - 0.52).abs() < 1e-12, "triangulated area {total}");
}

#[test]
fn aabb_iou_and_giou() {
    let a = Aabb { min: [0.0, 0.0], max: [1.0, 1.0] };
    let b = Aabb { min: [0.5, 0.0], max: [1.5, 1.0] };
    assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    assert!((a.giou(&b) - 1.0 / 3.0).abs() < 1e-12); // hull == union here

    let far = Aabb { min: [2.0, 0.0], max: [3.0, 1.0] };
    assert_eq!(a.iou(&far), 0.0);
    assert!((a.giou(&far) - (-1.0 / 3.0)).abs() < 1e-12);
    assert!((a.giou(&a) - 1.0).abs() < 1e-12);
}

#[test]
fn aabb_cxcywh_roundtrip() {
    let a = Aabb { min: [0.2, 0.3], max: [0.6, 0.5] };
    let back = Aabb::from_cxcywh(a.cxcywh());
    assert!(vec2::dist(a.min, back.min) < 1e-12);
    assert!(vec2::dist(a.max, back.max) < 1e-12);
}

#[test]
fn polyline_utilities() {
    let line = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
    assert!((polyline_length(&line) - 2.0).abs() < 1e-12);
    assert_eq!(polyline_point_at(&line, 0.0), [0.0, 0.0]);
    assert_eq!(polyline_point_at(&line, 1.5), [1.0, 0.5]);
    assert_eq!(polyline_point_at(&line, 99.0), [1.0, 1.0]); // clamped
    assert_eq!(polyline_tangent_at(&line, 0.5), [1.0, 0.0]);
    assert_eq!(polyline_tangent_at(&line, 1.5), [0.0, 1.0]);
}
