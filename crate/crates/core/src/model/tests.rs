use super::attention::DeformAttn;
use super::backbone::Backbone;
use super::decoder::Decoder;
use super::encoder::level_locations;
use super::layers::SelfAttention;
use super::{image_tensor, Architecture, ModelConfig, SpotModel};
use crate::error::Error;
use crate::synthmap::Raster;
use crate::tensor::{Graph, ParamBinder, ParamStore};
use crate::verify::{msdeform_oracle_suite, randomize_params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_raster(seed: u64, w: usize, h: usize) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Raster::new(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            r.put(x as i64, y as i64, [rng.random_range(0..=255), rng.random_range(0..=255), rng.random_range(0..=255)]);
        }
    }
    r
}

/// f64 replica of `Linear::apply`: `out[j] = Σ_c x[c]·w[c·d_out+j] + b[j]`.
fn dense(x: &[f64], w: &[f64], b: &[f64], d_out: usize) -> Vec<f64> {
    (0..d_out)
        .map(|j| {
            let mut acc = 0.0;
            for (c, &xc) in x.iter().enumerate() {
                acc += xc * w[c * d_out + j];
            }
            acc + b[j]
        })
        .collect()
}

// ---- backbone -------------------------------------------------------------

#[test]
fn backbone_level_shapes_follow_the_strides() {
    let cfg = ModelConfig::desk();
    let model = SpotModel::new(cfg.clone(), 1).unwrap();
    let graph = Graph::new();
    let binder = ParamBinder::new(&model.params, &graph);
    let img = image_tensor(&graph, &random_raster(2, 64, 64)).unwrap();
    let pyr = Architecture::new(&cfg).backbone.forward(&binder, &img).unwrap();
    let shapes: Vec<Vec<usize>> = pyr.maps.iter().map(|m| m.shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![64, 16, 16], vec![64, 8, 8], vec![64, 4, 4]]);
}

#[test]
fn backbone_rejects_indivisible_input() {
    let cfg = ModelConfig::desk();
    let model = SpotModel::new(cfg.clone(), 1).unwrap();
    let graph = Graph::new();
    let binder = ParamBinder::new(&model.params, &graph);
    let img = image_tensor(&graph, &random_raster(2, 60, 64)).unwrap();
    assert!(matches!(
        Architecture::new(&cfg).backbone.forward(&binder, &img),
        Err(Error::Contract(_))
    ));
}

#[test]
fn zero_image_with_zero_biases_gives_zero_pyramid() {
    // Biases initialize to zero, so a black image must stay exactly zero
    // through conv+relu stacks and the projections.
    let cfg = ModelConfig::micro();
    let model = SpotModel::new(cfg.clone(), 3).unwrap();
    let graph = Graph::new();
    let binder = ParamBinder::new(&model.params, &graph);
    let img = image_tensor(&graph, &Raster::new(32, 32, [0, 0, 0])).unwrap();
    let pyr = Architecture::new(&cfg).backbone.forward(&binder, &img).unwrap();
    for map in &pyr.maps {
        assert!(map.value().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn backbone_conv_weight_gradients_match_finite_differences() {
    let backbone = Backbone::new(8, 4, 1);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    backbone.register(&mut store, &mut rng).unwrap();
    randomize_params(&mut store, 12, 0.4);
    let img = random_raster(13, 8, 8);

    let eval = |store: &ParamStore| -> f64 {
        let graph = Graph::new();
        let binder = ParamBinder::new(store, &graph);
        let x = image_tensor(&graph, &img).unwrap();
        backbone.forward(&binder, &x).unwrap().maps[0].sum_all().item()
    };

    // Analytic gradients.
    let grads = {
        let graph = Graph::new();
        let binder = ParamBinder::new(&store, &graph);
        let x = image_tensor(&graph, &img).unwrap();
        backbone.forward(&binder, &x).unwrap().maps[0].sum_all().backward();
        binder.grads()
    };

    let h = 1e-5;
    for name in ["backbone.stem0.w", "backbone.stem1.w", "backbone.proj0.w"] {
        let len = store.get(name).unwrap().data.len();
        let analytic = &grads[name];
        for coord in (0..len).step_by(7) {
            let mut plus = store.clone();
            plus.get_mut(name).unwrap().data[coord] += h;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap().data[coord] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!(
                crate::tensor::gradcheck::rel_err(analytic[coord], numeric) < 1e-6,
                "{name}[{coord}]: analytic {} vs numeric {numeric}",
                analytic[coord]
            );
        }
    }
}

// ---- deformable attention ---------------------------------------------------

#[test]
fn deform_attn_collapses_to_single_texel_read() {
    // H = L = K = 1 and a zeroed offset head: the sum reduces to the output
    // projection of the value projection of the map at the reference texel.
    let d = 4;
    let (w, h) = (4usize, 4usize);
    let graph = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let map_data: Vec<f64> = (0..d * h * w).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let map = graph.constant(map_data.clone(), &[d, h, w]).unwrap();

    let attn = DeformAttn::new("t", d, 1, 1, 1);
    let mut store = ParamStore::new();
    attn.register(&mut store, &mut rng).unwrap();
    store.get_mut("t.off.b").unwrap().data = vec![0.0, 0.0];
    let binder = ParamBinder::new(&store, &graph);

    let (tx, ty) = (2usize, 1usize);
    let refs = graph
        .constant(vec![(tx as f64 + 0.5) / w as f64, (ty as f64 + 0.5) / h as f64], &[1, 2])
        .unwrap();
    let query = graph.constant(vec![0.3, -0.2, 0.9, 0.1], &[1, d]).unwrap();
    let values = attn.project(&binder, &[map]).unwrap();
    let got = attn.attend(&binder, &query, &refs, &values).unwrap().out.value();

    let texel: Vec<f64> = (0..d).map(|c| map_data[c * h * w + ty * w + tx]).collect();
    let p = |n: &str| store.get(n).unwrap().data.clone();
    let v = dense(&texel, &p("t.val.w"), &p("t.val.b"), d);
    let want = dense(&v, &p("t.out.w"), &p("t.out.b"), d);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn deform_attention_weights_sum_to_one_per_head() {
    let graph = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (d, heads, levels, points, qn) = (8, 2, 2, 3, 5);
    let maps: Vec<_> = (0..levels)
        .map(|_| {
            let data = (0..d * 36).map(|_| rng.random_range(-1.0..=1.0)).collect();
            graph.constant(data, &[d, 6, 6]).unwrap()
        })
        .collect();
    let attn = DeformAttn::new("t", d, heads, levels, points);
    let mut store = ParamStore::new();
    attn.register(&mut store, &mut rng).unwrap();
    randomize_params(&mut store, 32, 0.9);
    let binder = ParamBinder::new(&store, &graph);
    let q = graph
        .constant((0..qn * d).map(|_| rng.random_range(-1.0..=1.0)).collect(), &[qn, d])
        .unwrap();
    let refs = graph
        .constant((0..qn * 2).map(|_| rng.random_range(0.1..=0.9)).collect(), &[qn, 2])
        .unwrap();
    let values = attn.project(&binder, &maps).unwrap();
    let a = attn.attend(&binder, &q, &refs, &values).unwrap().attn.value();
    let lk = levels * points;
    for row in a.chunks_exact(lk) {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "head weights sum to {s}");
    }
}

#[test]
fn deform_attn_matches_the_naive_oracle() {
    let worst = msdeform_oracle_suite(10, 77).unwrap();
    assert!(worst < 1e-12, "worst |Δ| = {worst:e}");
}

// ---- encoder ----------------------------------------------------------------

#[test]
fn encoder_proposals_sorted_and_boxed() {
    let cfg = ModelConfig::micro();
    let model = SpotModel::new(cfg.clone(), 5).unwrap();
    let out = model.run(&random_raster(6, 32, 32)).unwrap();
    assert_eq!(out.proposals.len(), cfg.num_proposals);
    for pair in out.proposals.windows(2) {
        assert!(pair[0].prob >= pair[1].prob, "scores must be sorted descending");
    }
    for v in out.enc_boxes.value() {
        assert!((0.0..=1.0).contains(&v), "box coordinate {v} outside [0,1]");
    }
}

#[test]
fn encoder_boxes_start_at_their_locations() {
    // The box head's zero-initialized deltas mean: centers == locations,
    // sizes == the 0.1 prior, for a freshly initialized model.
    let cfg = ModelConfig::micro();
    let model = SpotModel::new(cfg.clone(), 7).unwrap();
    let out = model.run(&random_raster(8, 32, 32)).unwrap();
    let sizes = vec![(8usize, 8usize), (4, 4)];
    let locs = level_locations(&sizes);
    let boxes = out.enc_boxes.value();
    assert_eq!(boxes.len(), locs.len() * 4);
    for (i, loc) in locs.iter().enumerate() {
        assert!((boxes[i * 4] - loc[0]).abs() < 1e-9);
        assert!((boxes[i * 4 + 1] - loc[1]).abs() < 1e-9);
        assert!((boxes[i * 4 + 2] - 0.1).abs() < 1e-12);
        assert!((boxes[i * 4 + 3] - 0.1).abs() < 1e-12);
    }
}

#[test]
fn encoder_rejects_more_proposals_than_locations() {
    let mut cfg = ModelConfig::tiny_gradcheck();
    cfg.num_proposals = 100;
    let model = SpotModel::new(cfg, 9).unwrap();
    // 16×16 at one level (stride 4) gives only 16 locations.
    assert!(matches!(model.run(&random_raster(10, 16, 16)), Err(Error::Contract(_))));
}

// ---- decoder ------------------------------------------------------------------

#[test]
fn decoder_state_initialization_contracts() {
    let cfg = ModelConfig::micro();
    let model = SpotModel::new(cfg.clone(), 15).unwrap();
    let graph = Graph::new();
    let binder = ParamBinder::new(&model.params, &graph);
    let img = image_tensor(&graph, &random_raster(16, 32, 32)).unwrap();
    let arch = Architecture::new(&cfg);
    let pyr = arch.backbone.forward(&binder, &img).unwrap();
    let enc = arch.encoder.forward(&binder, &pyr.maps).unwrap();
    let state = arch.decoder.init_state(&binder, &enc.prop_centers).unwrap();

    // Every boundary and char ref equals its proposal center, exactly.
    let centers = enc.prop_centers.value();
    let (q, n, m) = (cfg.num_proposals, cfg.n_boundary_points, cfg.max_text_len);
    let brefs = state.boundary_refs.value();
    let crefs = state.char_refs.value();
    for qi in 0..q {
        for k in 0..n {
            assert_eq!(brefs[(qi * n + k) * 2], centers[qi * 2]);
            assert_eq!(brefs[(qi * n + k) * 2 + 1], centers[qi * 2 + 1]);
        }
        for s in 0..m {
            assert_eq!(crefs[(qi * m + s) * 2], centers[qi * 2]);
            assert_eq!(crefs[(qi * m + s) * 2 + 1], centers[qi * 2 + 1]);
        }
    }

    // Char content queries start at zero.
    assert!(state.q_m.value().iter().all(|&v| v == 0.0));

    // With a shared center, the N positional embeddings of a proposal are
    // identical going into layer 1.
    let pe = state.boundary_refs.pos_embed_2d(cfg.d_model).unwrap().value();
    let d = cfg.d_model;
    for qi in 0..q {
        let first = &pe[qi * n * d..qi * n * d + d];
        for k in 1..n {
            assert_eq!(&pe[(qi * n + k) * d..(qi * n + k + 1) * d], first);
        }
    }
}

#[test]
fn layer_one_points_equal_proposal_centers_at_init() {
    let cfg = ModelConfig::micro();
    let model = SpotModel::new(cfg.clone(), 17).unwrap();
    let out = model.run(&random_raster(18, 32, 32)).unwrap();
    let coords = out.layers[0].coords.value();
    let n = cfg.n_boundary_points;
    for (qi, prop) in out.proposals.iter().enumerate() {
        for k in 0..n {
            let base = (qi * n + k) * 2;
            assert!((coords[base] - prop.center[0]).abs() < 1e-9);
            assert!((coords[base + 1] - prop.center[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn reference_wiring_is_exact() {
    // Layer j+1 samples boundary features exactly at layer j's predictions,
    // and the char decoder samples exactly at the centers predicted in the
    // same layer. Randomized weights so the refinement actually moves points.
    let cfg = ModelConfig::micro();
    let mut model = SpotModel::new(cfg.clone(), 19).unwrap();
    randomize_params(&mut model.params, 20, 0.2);
    let out = model.run(&random_raster(21, 32, 32)).unwrap();
    assert_eq!(out.layers.len(), cfg.n_dec_layers);

    for j in 0..cfg.n_dec_layers {
        let centers = out.layers[j].centers.value();
        for (i, base) in out.sampling[j].char_bases.iter().enumerate() {
            assert_eq!(base[0], centers[i * 2]);
            assert_eq!(base[1], centers[i * 2 + 1]);
        }
        if j + 1 < cfg.n_dec_layers {
            let coords = out.layers[j].coords.value();
            for (i, base) in out.sampling[j + 1].boundary_bases.iter().enumerate() {
                assert_eq!(base[0], coords[i * 2]);
                assert_eq!(base[1], coords[i * 2 + 1]);
            }
        }
    }
}

#[test]
fn all_coordinates_stay_in_unit_box() {
    let cfg = ModelConfig::micro();
    let mut model = SpotModel::new(cfg.clone(), 23).unwrap();
    randomize_params(&mut model.params, 24, 0.3);
    let out = model.run(&random_raster(25, 32, 32)).unwrap();
    for layer in &out.layers {
        for v in layer.coords.value().iter().chain(layer.centers.value().iter()) {
            assert!((0.0..=1.0).contains(v));
        }
    }
    for s in &out.sampling {
        for p in s.boundary_bases.iter().chain(&s.char_bases) {
            assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        }
    }
}

#[test]
fn hld_off_pins_boundary_sampling_to_centers() {
    let mut cfg = ModelConfig::micro();
    cfg.hld_off = true;
    let mut model = SpotModel::new(cfg.clone(), 27).unwrap();
    randomize_params(&mut model.params, 28, 0.2);
    let out = model.run(&random_raster(29, 32, 32)).unwrap();
    let n = cfg.n_boundary_points;
    for s in &out.sampling {
        for (qi, prop) in out.proposals.iter().enumerate() {
            for k in 0..n {
                assert_eq!(s.boundary_bases[qi * n + k], prop.center);
            }
        }
        // Char sampling stays hyper-local: with randomized weights the
        // predicted centers differ from the proposal center.
        let distinct = out.proposals.iter().enumerate().any(|(qi, prop)| {
            (0..cfg.max_text_len).any(|m| s.char_bases[qi * cfg.max_text_len + m] != prop.center)
        });
        assert!(distinct, "hld_off must not pin character sampling");
    }
}

#[test]
fn hlr_off_pins_char_sampling_to_centers() {
    let mut cfg = ModelConfig::micro();
    cfg.hlr_off = true;
    let mut model = SpotModel::new(cfg.clone(), 33).unwrap();
    randomize_params(&mut model.params, 34, 0.2);
    let out = model.run(&random_raster(35, 32, 32)).unwrap();
    let m = cfg.max_text_len;
    for s in &out.sampling {
        for (qi, prop) in out.proposals.iter().enumerate() {
            for k in 0..m {
                assert_eq!(s.char_bases[qi * m + k], prop.center);
            }
        }
    }
}

#[test]
fn all_flags_collapse_every_base_to_the_proposal_center() {
    let mut cfg = ModelConfig::micro();
    cfg.hld_off = true;
    cfg.hlr_off = true;
    cfg.hlpe_off = true;
    let mut model = SpotModel::new(cfg.clone(), 37).unwrap();
    randomize_params(&mut model.params, 38, 0.2);
    let out = model.run(&random_raster(39, 32, 32)).unwrap();
    let (n, m) = (cfg.n_boundary_points, cfg.max_text_len);
    for s in &out.sampling {
        for (qi, prop) in out.proposals.iter().enumerate() {
            let mut bases = Vec::new();
            bases.extend_from_slice(&s.boundary_bases[qi * n..(qi + 1) * n]);
            bases.extend_from_slice(&s.char_bases[qi * m..(qi + 1) * m]);
            for b in bases {
                assert_eq!(b, prop.center, "every base must collapse to the center");
            }
        }
    }
}

// ---- character-center predictor --------------------------------------------

fn softmaxed(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|&x| x / s).collect()
}

/// f64 replica of the center-predictor equations for one proposal.
#[allow(clippy::too_many_arguments)]
fn center_oracle(
    store: &ParamStore,
    d: usize,
    char_comp: &[Vec<f64>],  // M rows
    bound_comp: &[Vec<f64>], // N rows
    bound_content: &[Vec<f64>],
    raw: bool,
) -> Vec<[f64; 2]> {
    let p = |n: &str| store.get(n).unwrap().data.clone();
    let (wq, bq) = (p("dec.center.q.w"), p("dec.center.q.b"));
    let (wk, bk) = (p("dec.center.k.w"), p("dec.center.k.b"));
    let (wv, bv) = (p("dec.center.v.w"), p("dec.center.v.b"));
    let qs: Vec<Vec<f64>> = char_comp.iter().map(|r| dense(r, &wq, &bq, d)).collect();
    let ks: Vec<Vec<f64>> = bound_comp.iter().map(|r| dense(r, &wk, &bk, d)).collect();
    let vs: Vec<Vec<f64>> = bound_content.iter().map(|r| dense(r, &wv, &bv, d)).collect();
    qs.iter()
        .map(|qrow| {
            let logits: Vec<f64> = ks
                .iter()
                .map(|krow| qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let weights = if raw {
                logits
            } else {
                softmaxed(&logits.iter().map(|&x| x * (1.0 / (d as f64).sqrt())).collect::<Vec<_>>())
            };
            let mut ctx = vec![0.0; d];
            for (w, vrow) in weights.iter().zip(&vs) {
                for (c, vv) in vrow.iter().enumerate() {
                    ctx[c] += w * vv;
                }
            }
            let h1: Vec<f64> = dense(&ctx, &p("dec.center.mlp.0.w"), &p("dec.center.mlp.0.b"), d)
                .iter()
                .map(|&x| x.max(0.0))
                .collect();
            let h2: Vec<f64> = dense(&h1, &p("dec.center.mlp.1.w"), &p("dec.center.mlp.1.b"), d)
                .iter()
                .map(|&x| x.max(0.0))
                .collect();
            let o = dense(&h2, &p("dec.center.mlp.2.w"), &p("dec.center.mlp.2.b"), 2);
            [crate::tensor::sigmoid(o[0]), crate::tensor::sigmoid(o[1])]
        })
        .collect()
}

fn predictor_fixture(raw: bool, n_keys: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
    let mut cfg = ModelConfig::tiny_gradcheck();
    cfg.n_boundary_points = n_keys;
    cfg.raw_center_attention = raw;
    let d = cfg.d_model;
    let (q, m) = (2usize, cfg.max_text_len);

    let decoder = Decoder::new(&cfg);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    decoder.register(&mut store, &mut rng).unwrap();
    randomize_params(&mut store, seed + 1, 0.6);

    let graph = Graph::new();
    let binder = ParamBinder::new(&store, &graph);
    let rnd = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
    };
    let cc = rnd(&mut rng, q * m * d);
    let bc = rnd(&mut rng, q * n_keys * d);
    let bv = rnd(&mut rng, q * n_keys * d);
    let char_comp = graph.constant(cc.clone(), &[q, m, d]).unwrap();
    let bound_comp = graph.constant(bc.clone(), &[q, n_keys, d]).unwrap();
    let bound_content = graph.constant(bv.clone(), &[q, n_keys, d]).unwrap();

    let got = decoder
        .predict_centers(&binder, &char_comp, &bound_comp, &bound_content)
        .unwrap()
        .value();

    let rows = |flat: &[f64], b: usize, t: usize| -> Vec<Vec<f64>> {
        (0..t).map(|i| flat[(b * t + i) * d..(b * t + i + 1) * d].to_vec()).collect()
    };
    let mut got_rows = Vec::new();
    let mut want = Vec::new();
    for b in 0..q {
        want.extend(center_oracle(&store, d, &rows(&cc, b, m), &rows(&bc, b, n_keys), &rows(&bv, b, n_keys), raw));
        for s in 0..m {
            got_rows.push(vec![got[(b * m + s) * 2], got[(b * m + s) * 2 + 1]]);
        }
    }
    (got_rows, want)
}

#[test]
fn center_predictor_matches_a_loop_oracle() {
    let (got, want) = predictor_fixture(false, 4, 41);
    for (g, w) in got.iter().zip(&want) {
        assert!((g[0] - w[0]).abs() < 1e-12 && (g[1] - w[1]).abs() < 1e-12);
    }
}

#[test]
fn raw_center_attention_matches_the_unnormalized_formula() {
    let (got, want) = predictor_fixture(true, 3, 43);
    for (g, w) in got.iter().zip(&want) {
        assert!((g[0] - w[0]).abs() < 1e-12 && (g[1] - w[1]).abs() < 1e-12);
    }
}

#[test]
fn single_key_attention_has_weight_one() {
    // With one key, softmax gives that key weight exactly 1 regardless of
    // scores, so the context is exactly the projected value row.
    let (got, want) = predictor_fixture(false, 1, 47);
    for (g, w) in got.iter().zip(&want) {
        assert!((g[0] - w[0]).abs() < 1e-12 && (g[1] - w[1]).abs() < 1e-12);
    }
    // And the raw path differs in general (weight = q·k, not 1).
    let (raw_got, raw_want) = predictor_fixture(true, 1, 47);
    for (g, w) in raw_got.iter().zip(&raw_want) {
        assert!((g[0] - w[0]).abs() < 1e-12 && (g[1] - w[1]).abs() < 1e-12);
    }
    assert_ne!(got, raw_got);
}

#[test]
fn center_predictor_outputs_stay_in_unit_square() {
    let (got, _) = predictor_fixture(false, 4, 49);
    for g in got {
        assert!((0.0..=1.0).contains(&g[0]) && (0.0..=1.0).contains(&g[1]));
    }
}

#[test]
fn char_queries_receive_gradients_through_the_predictor() {
    let cfg = ModelConfig::tiny_gradcheck();
    let d = cfg.d_model;
    let (q, m, n) = (2usize, cfg.max_text_len, cfg.n_boundary_points);
    let decoder = Decoder::new(&cfg);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    decoder.register(&mut store, &mut rng).unwrap();
    randomize_params(&mut store, 52, 0.6);
    let graph = Graph::new();
    let binder = ParamBinder::new(&store, &graph);
    let qm = graph
        .leaf((0..q * m * d).map(|_| rng.random_range(-1.0..=1.0)).collect(), &[q, m, d])
        .unwrap();
    let bc = graph
        .constant((0..q * n * d).map(|_| rng.random_range(-1.0..=1.0)).collect(), &[q, n, d])
        .unwrap();
    decoder
        .predict_centers(&binder, &qm, &bc, &bc)
        .unwrap()
        .sum_all()
        .backward();
    let grad = qm.grad().expect("char queries must be reachable");
    assert!(grad.iter().any(|&g| g != 0.0));
}

// ---- self-attention isolation -------------------------------------------------

#[test]
fn self_attention_never_crosses_the_batch() {
    let d = 8;
    let attn = SelfAttention::new("t", d, 2);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    attn.register(&mut store, &mut rng).unwrap();
    let base: Vec<f64> = (0..2 * 3 * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut modified = base.clone();
    for v in &mut modified[..3 * d] {
        *v += 1.0; // perturb batch row 0 only
    }
    let run = |data: &[f64]| -> Vec<f64> {
        let graph = Graph::new();
        let binder = ParamBinder::new(&store, &graph);
        let x = graph.constant(data.to_vec(), &[2, 3, d]).unwrap();
        attn.apply(&binder, &x, &x).unwrap().value()
    };
    let (a, b) = (run(&base), run(&modified));
    assert_eq!(&a[3 * d..], &b[3 * d..], "batch row 1 must be untouched");
    assert_ne!(&a[..3 * d], &b[..3 * d]);
}

// ---- heads and spot ------------------------------------------------------------

#[test]
fn char_logits_have_shape_q_m_v() {
    let cfg = ModelConfig::micro();
    let model = SpotModel::new(cfg.clone(), 61).unwrap();
    let out = model.run(&random_raster(62, 32, 32)).unwrap();
    for layer in &out.layers {
        assert_eq!(
            layer.char_logits.shape(),
            &[cfg.num_proposals, cfg.max_text_len, cfg.vocab_size]
        );
        assert_eq!(layer.scores.shape(), &[cfg.num_proposals]);
    }
}

#[test]
fn spot_threshold_zero_returns_all_queries_sorted() {
    let mut cfg = ModelConfig::micro();
    cfg.score_threshold = 0.0;
    let mut model = SpotModel::new(cfg.clone(), 63).unwrap();
    randomize_params(&mut model.params, 64, 0.3);
    let dets = model.spot(&random_raster(65, 32, 32)).unwrap();
    assert_eq!(dets.len(), cfg.num_proposals);
    for pair in dets.windows(2) {
        assert!(pair[0].score >= pair[1].score);
    }
    for det in &dets {
        assert_eq!(det.polygon.len(), cfg.n_boundary_points);
        for p in &det.polygon {
            assert!((0.0..=32.0).contains(&p[0]) && (0.0..=32.0).contains(&p[1]));
        }
    }
}

#[test]
fn spot_without_parameters_is_a_contract_error() {
    let model = SpotModel::from_parts(ModelConfig::micro(), ParamStore::new()).unwrap();
    assert!(matches!(model.spot(&random_raster(66, 32, 32)), Err(Error::Contract(_))));
}

#[test]
fn construction_and_forward_are_deterministic() {
    let a = SpotModel::new(ModelConfig::micro(), 71).unwrap();
    let b = SpotModel::new(ModelConfig::micro(), 71).unwrap();
    assert_eq!(a.params, b.params);
    let img = random_raster(72, 32, 32);
    let oa = a.run(&img).unwrap();
    let ob = b.run(&img).unwrap();
    assert_eq!(oa.layers.last().unwrap().scores.value(), ob.layers.last().unwrap().scores.value());
    assert_eq!(oa.layers.last().unwrap().coords.value(), ob.layers.last().unwrap().coords.value());
}

#[test]
fn config_presets_validate() {
    for cfg in [
        ModelConfig::desk(),
        ModelConfig::micro(),
        ModelConfig::paper(),
        ModelConfig::tiny_gradcheck(),
    ] {
        cfg.validate().unwrap();
    }
    let mut bad = ModelConfig::desk();
    bad.d_model = 30; // not divisible by 4 heads
    assert!(bad.validate().is_err());
}
