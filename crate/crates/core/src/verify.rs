//! Brute-force oracles and the runtime self-check suites built on them.
//!
//! Every numerically delicate component in this crate (clipping IoU, the
//! Hungarian assignment, deformable attention, the whole gradient path) has
//! an independent, dumb-but-obviously-correct counterpart here. The `verify`
//! CLI command replays these suites at runtime; the acceptance tests pin
//! their thresholds.

use crate::geometry::{point_in_ring, vec2::Vec2, Aabb, BoundaryPolygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Intersection-over-union estimated by point sampling on a `res`×`res`
/// grid spanning the joint bounding box. Dead simple, O(res²), and
/// convergence is ~1/res — the reference the exact clipping is judged
/// against.
pub fn rasterized_iou(a: &[Vec2], b: &[Vec2], res: usize) -> f64 {
    let bbox = {
        let mut pts = a.to_vec();
        pts.extend_from_slice(b);
        Aabb::of_points(&pts)
    };
    let (w, h) = (bbox.width(), bbox.height());
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for iy in 0..res {
        let y = bbox.min[1] + (iy as f64 + 0.5) / res as f64 * h;
        for ix in 0..res {
            let x = bbox.min[0] + (ix as f64 + 0.5) / res as f64 * w;
            let in_a = point_in_ring([x, y], a);
            let in_b = point_in_ring([x, y], b);
            if in_a && in_b {
                inter += 1;
            }
            if in_a || in_b {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Counter-clockwise convex hull (Andrew's monotone chain), collinear points
/// dropped.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Vec2, a: Vec2, b: Vec2| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Exhaustive minimum-cost assignment: tries every injective map from rows
/// to columns. Exponential, only usable for tiny matrices, and therefore a
/// trustworthy reference for the Hungarian solver. Among equal-cost optima
/// it returns the lexicographically smallest column sequence (columns are
/// enumerated in increasing order at every level).
pub fn brute_force_assignment(cost: &[Vec<f64>], num_cols: usize) -> (Vec<(usize, usize)>, f64) {
    let num_rows = cost.len();
    assert!(num_rows <= num_cols, "more rows than columns");
    let mut best_cols: Vec<usize> = Vec::new();
    let mut best_cost = f64::INFINITY;
    let mut cols = vec![usize::MAX; num_rows];
    let mut taken = vec![false; num_cols];
    fn recurse(
        cost: &[Vec<f64>],
        row: usize,
        running: f64,
        cols: &mut Vec<usize>,
        taken: &mut Vec<bool>,
        best_cols: &mut Vec<usize>,
        best_cost: &mut f64,
    ) {
        if row == cost.len() {
            if running < *best_cost {
                *best_cost = running;
                *best_cols = cols.clone();
            }
            return;
        }
        for j in 0..taken.len() {
            if taken[j] {
                continue;
            }
            taken[j] = true;
            cols[row] = j;
            recurse(cost, row + 1, running + cost[row][j], cols, taken, best_cols, best_cost);
            taken[j] = false;
        }
    }
    recurse(cost, 0, 0.0, &mut cols, &mut taken, &mut best_cols, &mut best_cost);
    let pairs = best_cols.iter().enumerate().map(|(g, &j)| (g, j)).collect();
    (pairs, best_cost)
}

/// Random convex polygon with an even vertex count ≥ 4, produced as the hull
/// of scattered points (vertices dropped until the count is even).
pub fn random_convex_boundary_polygon(rng: &mut ChaCha8Rng) -> BoundaryPolygon {
    loop {
        let cx = rng.random_range(0.25..0.75);
        let cy = rng.random_range(0.25..0.75);
        let r = rng.random_range(0.05..0.22);
        let pts: Vec<Vec2> = (0..12)
            .map(|_| {
                [
                    cx + rng.random_range(-r..r),
                    cy + rng.random_range(-r..r),
                ]
            })
            .collect();
        let mut hull = convex_hull(&pts);
        if hull.len() % 2 == 1 {
            hull.pop();
        }
        if hull.len() >= 4 {
            if let Ok(poly) = BoundaryPolygon::new(hull) {
                if poly.is_simple() && poly.area() > 1e-4 {
                    return poly;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Deformable-attention oracle
// ---------------------------------------------------------------------------

/// Independent bilinear read of a `[C, H, W]` map at a normalized point:
/// pixel centers at `(i + 0.5)/size`, zero outside the unit box. Returns all
/// C channels.
pub fn naive_bilinear(map: &[f64], channels: usize, h: usize, w: usize, x: f64, y: f64) -> Vec<f64> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return vec![0.0; channels];
    }
    let u = x * w as f64 - 0.5;
    let v = y * h as f64 - 0.5;
    let (x0, y0) = (u.floor(), v.floor());
    let (wx, wy) = (u - x0, v - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let texel = |c: usize, yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            0.0
        } else {
            map[c * h * w + yy as usize * w + xx as usize]
        }
    };
    (0..channels)
        .map(|c| {
            let v00 = texel(c, y0, x0);
            let v01 = texel(c, y0, x0 + 1);
            let v10 = texel(c, y0 + 1, x0);
            let v11 = texel(c, y0 + 1, x0 + 1);
            (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11)
        })
        .collect()
}

/// Direct quadruple-loop evaluation of the deformable-attention equation for
/// one query: heads h, levels l, sampling points k, channels. Works from the
/// raw weight matrices; no tensor machinery involved.
///
/// Weight layouts match the dense layers: `[d_in, d_out]` row-major; the
/// value projection's head h occupies output channels `h·dh .. (h+1)·dh`.
#[allow(clippy::too_many_arguments)]
pub fn naive_msdeform_attn(
    query: &[f64],
    p_ref: Vec2,
    maps: &[(Vec<f64>, usize, usize)], // per level: (values [d·H·W], width, height)
    heads: usize,
    points: usize,
    w_off: &[f64],
    b_off: &[f64],
    w_attn: &[f64],
    b_attn: &[f64],
    w_val: &[f64],
    b_val: &[f64],
    w_out: &[f64],
    b_out: &[f64],
) -> Vec<f64> {
    let d = query.len();
    let levels = maps.len();
    let (lk, dh) = (levels * points, d / heads);
    let hlk = heads * lk;

    let dense = |w: &[f64], b: &[f64], x: &[f64], d_out: usize| -> Vec<f64> {
        (0..d_out)
            .map(|j| {
                let mut acc = 0.0;
                for (c, &xc) in x.iter().enumerate() {
                    acc += xc * w[c * d_out + j];
                }
                acc + b[j]
            })
            .collect()
    };

    let offsets = dense(w_off, b_off, query, hlk * 2);
    let logits = dense(w_attn, b_attn, query, hlk);

    // Softmax over the L·K samples of each head (max-shifted like the op).
    let mut attn = vec![0.0; hlk];
    for h in 0..heads {
        let row = &logits[h * lk..(h + 1) * lk];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (k, e) in exps.iter().enumerate() {
            attn[h * lk + k] = e / sum;
        }
    }

    // Project every level's map (1×1-conv equivalent), texel by texel.
    let projected: Vec<Vec<f64>> = maps
        .iter()
        .map(|(data, w, h)| {
            let hw = w * h;
            let mut out = vec![0.0; d * hw];
            for t in 0..hw {
                for j in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += data[c * hw + t] * w_val[c * d + j];
                    }
                    out[j * hw + t] = acc + b_val[j];
                }
            }
            out
        })
        .collect();

    let mut ctx = vec![0.0; d];
    for h in 0..heads {
        for (l, (_, wl, hl)) in maps.iter().enumerate() {
            for k in 0..points {
                let idx = (h * levels + l) * points + k;
                let px = p_ref[0] + offsets[idx * 2] * (1.0 / *wl as f64);
                let py = p_ref[1] + offsets[idx * 2 + 1] * (1.0 / *hl as f64);
                let head_map = &projected[l][h * dh * wl * hl..(h + 1) * dh * wl * hl];
                let sample = naive_bilinear(head_map, dh, *hl, *wl, px, py);
                let a = attn[h * lk + l * points + k];
                for (c, s) in sample.iter().enumerate() {
                    ctx[h * dh + c] += a * s;
                }
            }
        }
    }
    dense(w_out, b_out, &ctx, d)
}

/// Overwrite every parameter with uniform draws in ±`amp`. Deterministic in
/// `seed` (the store iterates in name order). Used by the verification
/// suites, which need fully generic weights — structured initializations
/// (zeroed heads, bias patterns) sit exactly on special points.
pub fn randomize_params(store: &mut crate::tensor::ParamStore, seed: u64, amp: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, param) in store.iter_mut() {
        for v in &mut param.data {
            *v = rng.random_range(-amp..=amp);
        }
    }
}

/// Compare batched deformable attention against [`naive_msdeform_attn`] on
/// `n_configs` random configurations (shapes, maps, weights, queries and
/// reference points all random). Returns the worst absolute element
/// difference seen.
pub fn msdeform_oracle_suite(n_configs: usize, seed: u64) -> crate::error::Result<f64> {
    use crate::model::DeformAttn;
    use crate::tensor::{Graph, ParamBinder, ParamStore};

    let mut worst: f64 = 0.0;
    for i in 0..n_configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let heads = [1usize, 2, 4][rng.random_range(0..3)];
        let dh = [4usize, 8][rng.random_range(0..2)];
        let d = heads * dh;
        let levels = 1 + rng.random_range(0..3);
        let points = 1 + rng.random_range(0..4);
        let qn = 1 + rng.random_range(0..5);

        let graph = Graph::new();
        let mut raw_maps: Vec<(Vec<f64>, usize, usize)> = Vec::with_capacity(levels);
        let mut map_tensors = Vec::with_capacity(levels);
        for _ in 0..levels {
            let (w, h) = (3 + rng.random_range(0..6), 3 + rng.random_range(0..6));
            let data: Vec<f64> = (0..d * h * w).map(|_| rng.random_range(-1.0..=1.0)).collect();
            map_tensors.push(graph.constant(data.clone(), &[d, h, w])?);
            raw_maps.push((data, w, h));
        }
        let queries_data: Vec<f64> = (0..qn * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let refs_data: Vec<f64> = (0..qn * 2).map(|_| rng.random_range(0.05..=0.95)).collect();
        let queries = graph.constant(queries_data.clone(), &[qn, d])?;
        let refs = graph.constant(refs_data.clone(), &[qn, 2])?;

        let attn = DeformAttn::new("ora", d, heads, levels, points);
        let mut store = ParamStore::new();
        attn.register(&mut store, &mut rng)?;
        randomize_params(&mut store, seed.wrapping_add(1000 + i as u64), 0.8);
        let binder = ParamBinder::new(&store, &graph);

        let values = attn.project(&binder, &map_tensors)?;
        let got = attn.attend(&binder, &queries, &refs, &values)?.out.value();

        let p = |name: &str| store.get(name).expect("registered").data.clone();
        let (w_off, b_off) = (p("ora.off.w"), p("ora.off.b"));
        let (w_attn, b_attn) = (p("ora.attn.w"), p("ora.attn.b"));
        let (w_val, b_val) = (p("ora.val.w"), p("ora.val.b"));
        let (w_out, b_out) = (p("ora.out.w"), p("ora.out.b"));
        for qi in 0..qn {
            let want = naive_msdeform_attn(
                &queries_data[qi * d..(qi + 1) * d],
                [refs_data[qi * 2], refs_data[qi * 2 + 1]],
                &raw_maps,
                heads,
                points,
                &w_off,
                &b_off,
                &w_attn,
                &b_attn,
                &w_val,
                &b_val,
                &w_out,
                &b_out,
            );
            for (a, b) in got[qi * d..(qi + 1) * d].iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Gradient-fidelity suites
// ---------------------------------------------------------------------------

/// Aggregate outcome of a gradient sweep.
#[derive(Debug, Clone)]
pub struct GradSuiteReport {
    pub seeds: usize,
    /// Individual scalar-function checks run.
    pub checks: usize,
    /// Worst relative error observed anywhere.
    pub worst: f64,
    /// Label of the op that produced `worst`.
    pub worst_case: String,
}

/// Finite-difference sweep over every differentiable tensor op, `n_seeds`
/// random input draws each. Inputs are kept a safe margin away from the
/// ops' non-smooth points (relu/abs at 0, bilinear texel boundaries), where
/// a central difference does not estimate a derivative.
pub fn op_grad_suite(n_seeds: usize, base_seed: u64) -> crate::error::Result<GradSuiteReport> {
    use crate::tensor::gradcheck::check_scalar_fn;
    use crate::tensor::{Graph, Tensor};

    let mut report = GradSuiteReport {
        seeds: n_seeds,
        checks: 0,
        worst: 0.0,
        worst_case: String::new(),
    };

    for s in 0..n_seeds {
        let rng = &mut ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(s as u64));
        fn uni(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
            (0..n).map(|_| rng.random_range(lo..=hi)).collect()
        }
        // Magnitudes in [min_abs, 1], random sign: keeps relu/abs kinks at 0
        // at least min_abs away from every input, >> the 1e-5 FD step.
        fn off_zero(rng: &mut ChaCha8Rng, n: usize, min_abs: f64) -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v = rng.random_range(min_abs..=1.0);
                    if rng.random_range(0..2) == 0 {
                        -v
                    } else {
                        v
                    }
                })
                .collect()
        }

        type Inputs = Vec<(Vec<usize>, Vec<f64>)>;
        let mut cases: Vec<(String, Inputs, Box<dyn Fn(&Graph, &[Tensor]) -> crate::error::Result<Tensor>>)> =
            Vec::new();

        // A probe constant turns any output into a generic scalar; sum_all
        // alone would hide wrong gradient *routing* (every grad would be 1).
        fn probed(g: &Graph, t: &Tensor, w: &[f64]) -> crate::error::Result<Tensor> {
            let probe = g.constant(w[..t.numel()].to_vec(), t.shape())?;
            Ok(t.mul(&probe)?.sum_all())
        }
        let w24 = uni(rng, 24, -1.0, 1.0);
        let w30 = uni(rng, 30, -1.0, 1.0);
        let w80 = uni(rng, 80, -1.0, 1.0);

        {
            let w = w24.clone();
            cases.push((
                "add broadcast".into(),
                vec![(vec![2, 3, 4], uni(rng, 24, -1.0, 1.0)), (vec![4], uni(rng, 4, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].add(&t[1])?, &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "sub".into(),
                vec![(vec![3, 4], uni(rng, 12, -1.0, 1.0)), (vec![3, 4], uni(rng, 12, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].sub(&t[1])?, &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "mul broadcast".into(),
                vec![(vec![2, 3, 4], uni(rng, 24, -1.0, 1.0)), (vec![3, 4], uni(rng, 12, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].mul(&t[1])?, &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "scale+add_scalar".into(),
                vec![(vec![5], uni(rng, 5, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].scale(-1.7).add_scalar(0.3), &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "relu".into(),
                vec![(vec![6], off_zero(rng, 6, 0.2))],
                Box::new(move |g, t| probed(g, &t[0].relu(), &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "abs".into(),
                vec![(vec![6], off_zero(rng, 6, 0.2))],
                Box::new(move |g, t| probed(g, &t[0].abs(), &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "sigmoid".into(),
                vec![(vec![5], uni(rng, 5, -2.0, 2.0))],
                Box::new(move |g, t| probed(g, &t[0].sigmoid(), &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "inverse_sigmoid".into(),
                vec![(vec![5], uni(rng, 5, 0.1, 0.9))],
                Box::new(move |g, t| probed(g, &t[0].inverse_sigmoid(), &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "softplus".into(),
                vec![(vec![5], uni(rng, 5, -2.0, 2.0))],
                Box::new(move |g, t| probed(g, &t[0].softplus(), &w)),
            ));
        }
        {
            let k = [2.0, 0.5, -1.0][s % 3];
            let w = w24.clone();
            cases.push((
                format!("pow_const({k})"),
                vec![(vec![4], uni(rng, 4, 0.3, 1.5))],
                Box::new(move |g, t| probed(g, &t[0].pow_const(k), &w)),
            ));
        }
        {
            let axis = s % 3;
            let w = w24.clone();
            cases.push((
                format!("sum_axis({axis})"),
                vec![(vec![2, 3, 2], uni(rng, 12, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].sum_axis(axis)?, &w)),
            ));
        }
        {
            let axis = s % 2;
            let w = w24.clone();
            cases.push((
                format!("softmax({axis})"),
                vec![(vec![3, 4], uni(rng, 12, -2.0, 2.0))],
                Box::new(move |g, t| probed(g, &t[0].softmax(axis)?, &w)),
            ));
        }
        {
            let axis = 1 - s % 2;
            let w = w24.clone();
            cases.push((
                format!("log_softmax({axis})"),
                vec![(vec![3, 4], uni(rng, 12, -2.0, 2.0))],
                Box::new(move |g, t| probed(g, &t[0].log_softmax(axis)?, &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "layer_norm".into(),
                vec![(vec![2, 6], uni(rng, 12, -1.5, 1.5))],
                Box::new(move |g, t| probed(g, &t[0].layer_norm()?, &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "permute+transpose+reshape".into(),
                vec![(vec![2, 3, 4], uni(rng, 24, -1.0, 1.0))],
                Box::new(move |g, t| {
                    let y = t[0]
                        .permute(&[2, 0, 1])?
                        .transpose_last2()?
                        .reshape(&[6, 4])?;
                    probed(g, &y, &w)
                }),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "repeat".into(),
                vec![(vec![2, 1, 3], uni(rng, 6, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].repeat(1, 3)?, &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "slice+concat".into(),
                vec![(vec![4, 3], uni(rng, 12, -1.0, 1.0))],
                Box::new(move |g, t| {
                    let hi = t[0].slice(0, 2, 2)?;
                    let lo = t[0].slice(0, 0, 1)?;
                    probed(g, &Tensor::concat(&[hi, lo], 0)?, &w)
                }),
            ));
        }
        {
            // Repeated index 2 exercises gradient accumulation in the scatter.
            let w = w24.clone();
            cases.push((
                "embedding_lookup".into(),
                vec![(vec![5, 3], uni(rng, 15, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].embedding_lookup(&[0, 2, 2, 4])?, &w)),
            ));
        }
        {
            let mut lhs = uni(rng, 24, -1.0, 1.0);
            lhs[5] = 0.0; // exact zero exercises the kernel's skip path
            let w = w24.clone();
            cases.push((
                "matmul batched".into(),
                vec![(vec![2, 3, 4], lhs), (vec![2, 4, 2], uni(rng, 16, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].matmul(&t[1])?, &w)),
            ));
        }
        {
            let w = w30.clone();
            cases.push((
                "matmul shared rhs".into(),
                vec![(vec![2, 3, 4], uni(rng, 24, -1.0, 1.0)), (vec![4, 2], uni(rng, 8, -1.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].matmul(&t[1])?, &w)),
            ));
        }
        {
            let (stride, pad) = [(1, 0), (1, 1), (2, 1)][s % 3];
            let w = w80.clone();
            cases.push((
                format!("conv2d(s{stride},p{pad})"),
                vec![
                    (vec![2, 5, 5], uni(rng, 50, -1.0, 1.0)),
                    (vec![3, 2, 3, 3], uni(rng, 54, -1.0, 1.0)),
                    (vec![3], uni(rng, 3, -1.0, 1.0)),
                ],
                Box::new(move |g, t| {
                    probed(g, &t[0].conv2d(&t[1], Some(&t[2]), stride, pad)?, &w)
                }),
            ));
        }
        {
            // Sample points with both coordinates at least 0.15 texel units
            // from the bilinear kinks and 0.04 from the unit-box cutoff; one
            // point is far outside (zero everywhere, zero gradient).
            let (mw, mh) = (4usize, 4usize);
            let mut pts = Vec::new();
            for _ in 0..4 {
                for dim in [mw, mh] {
                    loop {
                        let x = rng.random_range(0.05..=0.95);
                        let frac = (x * dim as f64 - 0.5).rem_euclid(1.0);
                        if (0.15..=0.85).contains(&frac) {
                            pts.push(x);
                            break;
                        }
                    }
                }
            }
            pts.extend([1.4, -0.3]);
            let w = w24.clone();
            cases.push((
                "bilinear_sample".into(),
                vec![(vec![2, mh, mw], uni(rng, 32, -1.0, 1.0)), (vec![5, 2], pts)],
                Box::new(move |g, t| probed(g, &t[0].bilinear_sample(&t[1])?, &w)),
            ));
        }
        {
            let w = w24.clone();
            cases.push((
                "pos_embed_2d".into(),
                vec![(vec![3, 2], uni(rng, 6, 0.0, 1.0))],
                Box::new(move |g, t| probed(g, &t[0].pos_embed_2d(8)?, &w)),
            ));
        }
        {
            cases.push((
                "mean_all".into(),
                vec![(vec![7], uni(rng, 7, -1.0, 1.0))],
                Box::new(|_, t| Ok(t[0].mean_all())),
            ));
        }

        for (label, inputs, build) in cases {
            let r = check_scalar_fn(&inputs, |g, t| build(g, t))?;
            report.checks += 1;
            if r.max_rel_err > report.worst {
                report.worst = r.max_rel_err;
                report.worst_case = format!("{label} (seed {s})");
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// End-to-end gradient check
// ---------------------------------------------------------------------------

/// Outcome of the full-model finite-difference sweep.
#[derive(Debug, Clone)]
pub struct E2eGradReport {
    pub seeds: usize,
    /// Parameter coordinates checked (all of them, every seed).
    pub coords: usize,
    pub worst: f64,
    pub worst_case: String,
    /// Coordinates that only passed after shrinking the FD step — the large
    /// step straddled a non-smooth point (bilinear texel edge, relu, a
    /// top-Q or assignment flip), which says nothing about the gradient.
    pub kink_retries: usize,
}

/// A random axis-aligned 4-point instance in normalized coordinates with
/// `len` characters drawn from {A..D} (they must fit small test vocabs) and
/// centers spaced along the midline.
pub fn random_tiny_instance(rng: &mut ChaCha8Rng) -> crate::geometry::TextInstance {
    let w = rng.random_range(0.2..0.5);
    let h = rng.random_range(0.15..0.35);
    let x0 = rng.random_range(0.05..0.9 - w);
    let y0 = rng.random_range(0.05..0.9 - h);
    let ring = vec![
        [x0, y0],
        [x0 + w, y0],
        [x0 + w, y0 + h],
        [x0, y0 + h],
    ];
    let len = rng.random_range(1..=3usize);
    let transcription: String = (0..len)
        .map(|_| (b'A' + rng.random_range(0..4u8)) as char)
        .collect();
    let cy = y0 + h / 2.0;
    let char_centers: Vec<Vec2> = (0..len)
        .map(|k| [x0 + w * (k as f64 + 0.5) / len as f64, cy])
        .collect();
    crate::geometry::TextInstance {
        polygon: BoundaryPolygon::new(ring).expect("axis-aligned quad is valid"),
        transcription,
        char_centers,
        centers_available: true,
        dont_care: false,
    }
}

/// Forward + all losses for one sample. When `frozen` is given, both discrete
/// assignments are reused instead of recomputed, which is what makes the
/// perturbed evaluations differentiable comparisons; the return includes the
/// matchings actually used so the first call can freeze them.
#[allow(clippy::type_complexity)]
fn spotting_loss(
    cfg: &crate::model::ModelConfig,
    store: &crate::tensor::ParamStore,
    image: &crate::synthmap::Raster,
    gts: &[crate::geometry::TextInstance],
    w: &crate::matching::MatchWeights,
    frozen: Option<(&crate::matching::MatchResult, &crate::matching::MatchResult)>,
    want_grads: bool,
) -> crate::error::Result<(
    f64,
    Option<std::collections::BTreeMap<String, Vec<f64>>>,
    crate::matching::MatchResult,
    crate::matching::MatchResult,
)> {
    use crate::matching as m;
    use crate::tensor::{Graph, ParamBinder};

    let graph = Graph::new();
    let binder = ParamBinder::new(store, &graph);
    let img = crate::model::image_tensor(&graph, image)?;
    let arch = crate::model::Architecture::new(cfg);
    let pyr = arch.backbone.forward(&binder, &img)?;
    let enc = arch.encoder.forward(&binder, &pyr.maps)?;
    let state = arch.decoder.init_state(&binder, &enc.prop_centers)?;
    let (_state, layers, _sampling) = arch.decoder.forward(&binder, state, &enc.memory)?;

    let (enc_match, dec_match) = match frozen {
        Some((e, d)) => (e.clone(), d.clone()),
        None => (
            m::encoder_matching(&enc.scores, &enc.boxes, gts, w)?,
            m::match_predictions(layers.last().expect("decoder layers"), gts, w)?,
        ),
    };
    let enc_loss = m::encoder_losses_matched(&enc.scores, &enc.boxes, gts, &enc_match, w)?;
    let mut layer_totals = Vec::with_capacity(layers.len());
    for layer in &layers {
        layer_totals.push(m::decoder_losses(layer, gts, &dec_match, w)?.total);
    }
    let loss = m::total_loss(&enc_loss.total, &layer_totals)?;
    let value = loss.item();
    let grads = if want_grads {
        loss.backward();
        Some(binder.grads())
    } else {
        None
    };
    Ok((value, grads, enc_match, dec_match))
}

/// Finite-difference check of the total spotting loss against every
/// parameter coordinate of the gradcheck-sized model, `n_seeds` random
/// (weights, image, ground-truth) draws. Coordinates whose large-step
/// central difference straddles a kink are re-measured at step 1e-7 and
/// must then agree.
pub fn e2e_grad_suite(
    n_seeds: usize,
    base_seed: u64,
    tol: f64,
) -> crate::error::Result<E2eGradReport> {
    use crate::model::ModelConfig;
    use crate::synthmap::Raster;
    use crate::tensor::gradcheck::{rel_err, FD_STEP};

    let cfg = ModelConfig::tiny_gradcheck();
    let w = crate::matching::MatchWeights::default();
    let mut report = E2eGradReport {
        seeds: n_seeds,
        coords: 0,
        worst: 0.0,
        worst_case: String::new(),
        kink_retries: 0,
    };

    for s in 0..n_seeds {
        let seed = base_seed.wrapping_add(s as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = crate::model::SpotModel::new(cfg.clone(), seed)?;
        let mut store = model.params;
        randomize_params(&mut store, seed.wrapping_add(991), 0.5);

        let mut image = Raster::new(16, 16, [0, 0, 0]);
        for y in 0..16i64 {
            for x in 0..16i64 {
                image.put(
                    x,
                    y,
                    [
                        rng.random_range(0..=255),
                        rng.random_range(0..=255),
                        rng.random_range(0..=255),
                    ],
                );
            }
        }
        let gts: Vec<_> = (0..rng.random_range(1..=2usize))
            .map(|_| random_tiny_instance(&mut rng))
            .collect();

        let (_, grads, enc_match, dec_match) =
            spotting_loss(&cfg, &store, &image, &gts, &w, None, true)?;
        let grads = grads.expect("requested gradients");
        let frozen = Some((&enc_match, &dec_match));

        let measure = |store: &mut crate::tensor::ParamStore,
                       name: &str,
                       c: usize,
                       orig: f64,
                       h: f64|
         -> crate::error::Result<f64> {
            store.get_mut(name).expect("listed").data[c] = orig + h;
            let fp = spotting_loss(&cfg, store, &image, &gts, &w, frozen, false)?.0;
            store.get_mut(name).expect("listed").data[c] = orig - h;
            let fm = spotting_loss(&cfg, store, &image, &gts, &w, frozen, false)?.0;
            store.get_mut(name).expect("listed").data[c] = orig;
            Ok((fp - fm) / (2.0 * h))
        };

        let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
        for name in &names {
            let len = store.get(name).expect("listed").data.len();
            let zero = vec![0.0; len];
            let g = grads.get(name).unwrap_or(&zero);
            for c in 0..len {
                report.coords += 1;
                let orig = store.get(name).expect("listed").data[c];
                let mut err = rel_err(g[c], measure(&mut store, name, c, orig, FD_STEP)?);
                if err >= tol {
                    // Re-measure with a 100x smaller interval: a genuine
                    // gradient bug keeps its O(1) error, a straddled kink
                    // (probability ~ h) almost surely moves off it.
                    err = rel_err(g[c], measure(&mut store, name, c, orig, 1e-7)?);
                    if err < tol {
                        report.kink_retries += 1;
                    }
                }
                if err > report.worst {
                    report.worst = err;
                    report.worst_case = format!("{name}[{c}] (seed {s})");
                }
            }
        }
    }
    Ok(report)
}

/// Compare the Hungarian solver's optimal cost against permutation brute
/// force on random square matrices: `n5` at 5×5 and `n6` at 6×6. Returns the
/// worst absolute cost difference (0.0 on a correct solver).
pub fn hungarian_oracle_suite(n5: usize, n6: usize, seed: u64) -> crate::error::Result<f64> {
    use crate::matching::hungarian;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (count, size) in [(n5, 5usize), (n6, 6usize)] {
        for _ in 0..count {
            let cost: Vec<Vec<f64>> = (0..size)
                .map(|_| (0..size).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            let result = hungarian(&cost, size)?;
            let solver_cost: f64 = result.pairs.iter().map(|&(r, c)| cost[r][c]).sum();
            let (_, oracle_cost) = brute_force_assignment(&cost, size);
            worst = worst.max((solver_cost - oracle_cost).abs());
        }
    }
    Ok(worst)
}

/// Compare exact polygon IoU against a rasterized estimate on random convex
/// polygon pairs. Returns the worst absolute deviation across `n_pairs`.
pub fn iou_oracle_suite(n_pairs: usize, resolution: usize, seed: u64) -> f64 {
    use crate::geometry::polygon_iou;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let a = random_convex_boundary_polygon(&mut rng);
        let b = random_convex_boundary_polygon(&mut rng);
        let exact = polygon_iou(&a, &b);
        let approx = rasterized_iou(a.ring(), b.ring(), resolution);
        worst = worst.max((exact - approx).abs());
    }
    worst
}
