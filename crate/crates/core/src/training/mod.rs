//! The optimization loop, weak center supervision, and the iterative
//! character-center acceptance procedure.
//!
//! Training consumes pixel-space scenes, normalizes annotations into the unit
//! square per sample, matches ground truth to predictions once per step (from
//! the final decoder layer), and descends the summed encoder + per-layer
//! decoder losses with an Adam rule under a step-decay schedule. Instances
//! whose character centers are unknown contribute nothing to the center loss
//! or the center matching term; the iterative procedure gradually fills those
//! centers in from the model's own accepted predictions.

use crate::error::{Error, Result};
use crate::geometry::{centerline_tail, vec2::Vec2, BoundaryPolygon, TextInstance};
use crate::matching::{self, LayerPreds, MatchWeights};
use crate::model::SpotModel;
use crate::parallel;
use crate::synthmap::{MapScene, Raster};
use crate::tensor::{Graph, ParamBinder, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;


// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Optimization and iterative-training knobs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Multiplied into the rate every `decay_step` iterations; in (0, 1].
    pub decay_factor: f64,
    /// Iterations between decays; 0 disables the schedule.
    pub decay_step: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Emit a checkpoint every this many iterations (0 = only at the end).
    pub snapshot_interval: usize,
    /// Iterative finetuning: maximum accept/finetune rounds.
    pub max_rounds: usize,
    /// Stop when the accepted count changes by less than this fraction of
    /// the instance total between rounds.
    pub stability_tol: f64,
    /// Random resize + crop augmentation (off for overfit runs).
    pub augment: bool,
    /// Global L2 gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub weights: MatchWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            decay_factor: 0.1,
            decay_step: 1500,
            iterations: 2000,
            batch_size: 8,
            seed: 0,
            snapshot_interval: 0,
            max_rounds: 5,
            stability_tol: 0.01,
            augment: false,
            grad_clip: 10.0,
            weights: MatchWeights::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale overfit schedule: 2,000 iterations, one decay at 1,500.
    pub fn overfit_micro() -> Self {
        Self::default()
    }

    /// The published pretraining schedule shape (stored for reference; the
    /// 400k-iteration run is not a tested path at desk scale).
    pub fn paper_pretrain() -> Self {
        Self {
            base_lr: 1e-4,
            decay_factor: 0.1,
            decay_step: 300_000,
            iterations: 400_000,
            batch_size: 8,
            augment: true,
            ..Self::default()
        }
    }

    /// Finetuning restarts the schedule at a tenth of the pretraining rate.
    pub fn finetune_from(mut self) -> Self {
        self.base_lr *= 0.1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::contract(format!("train config: {m}")));
        if !(self.base_lr > 0.0) {
            return fail(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail(format!("decay_factor {} must be in (0,1]", self.decay_factor));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return fail("iterations and batch_size must be positive".into());
        }
        if self.max_rounds == 0 {
            return fail("max_rounds must be positive".into());
        }
        if !(self.stability_tol >= 0.0) {
            return fail(format!("stability_tol {} must be non-negative", self.stability_tol));
        }
        if !(self.grad_clip >= 0.0) {
            return fail(format!("grad_clip {} must be non-negative", self.grad_clip));
        }
        Ok(())
    }

    fn lr_at(&self, iter: usize) -> f64 {
        if self.decay_step == 0 {
            return self.base_lr;
        }
        self.base_lr * self.decay_factor.powi((iter / self.decay_step) as i32)
    }
}

// ---------------------------------------------------------------------------
// Dataset plumbing
// ---------------------------------------------------------------------------

/// One training sample: raster plus pixel-space annotations.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Raster,
    pub instances: Vec<TextInstance>,
}

impl TrainSample {
    pub fn from_scene(scene: &MapScene) -> Self {
        Self { image: scene.raster.clone(), instances: scene.annotations.clone() }
    }
}

/// Scale a pixel-space instance into the unit square.
fn normalize_instance(inst: &TextInstance, w: f64, h: f64) -> Result<TextInstance> {
    let ring: Vec<Vec2> =
        inst.polygon.ring().iter().map(|p| [p[0] / w, p[1] / h]).collect();
    Ok(TextInstance {
        polygon: BoundaryPolygon::new(ring)?,
        transcription: inst.transcription.clone(),
        char_centers: inst.char_centers.iter().map(|p| [p[0] / w, p[1] / h]).collect(),
        centers_available: inst.centers_available,
        dont_care: inst.dont_care,
    })
}

/// Loss-ready ground truth: dont_care dropped, coordinates normalized.
pub fn training_gts(sample: &TrainSample) -> Result<Vec<TextInstance>> {
    let (w, h) = (sample.image.width() as f64, sample.image.height() as f64);
    sample
        .instances
        .iter()
        .filter(|i| !i.dont_care)
        .map(|i| normalize_instance(i, w, h))
        .collect()
}

/// The dataset and model must agree on the polygon vertex count and the
/// character-slot budget before any training step.
pub fn check_dataset(samples: &[TrainSample], model: &SpotModel) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::contract("training dataset is empty"));
    }
    let (n, m) = (model.cfg.n_boundary_points, model.cfg.max_text_len);
    for (si, s) in samples.iter().enumerate() {
        for inst in s.instances.iter().filter(|i| !i.dont_care) {
            if inst.polygon.ring().len() != n {
                return Err(Error::contract(format!(
                    "sample {si}: gt polygon has {} points, model predicts {n}",
                    inst.polygon.ring().len()
                )));
            }
            let c = inst.transcription.chars().count();
            if c > m {
                return Err(Error::contract(format!(
                    "sample {si}: transcription of {c} chars exceeds {m} slots"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Random resize (scale in [0.75, 1.25], nearest-neighbor) plus a random
/// crop back to the original canvas. Annotations are transformed with the
/// image; instances that end up partially outside the canvas become
/// dont_care, fully-outside ones are dropped. Downscales pad with the
/// source's top-left pixel (maps have near-uniform paper).
pub fn augment_sample(sample: &TrainSample, rng: &mut ChaCha8Rng) -> TrainSample {
    let (w, h) = (sample.image.width(), sample.image.height());
    let s = rng.random_range(0.75..=1.25);
    let (sw, sh) = (
        ((w as f64 * s).round() as usize).max(1),
        ((h as f64 * s).round() as usize).max(1),
    );
    // Crop offset in scaled space; negative = padding on that side.
    let ox = if sw > w { rng.random_range(0..=(sw - w)) as i64 } else { -(rng.random_range(0..=(w - sw)) as i64) };
    let oy = if sh > h { rng.random_range(0..=(sh - h)) as i64 } else { -(rng.random_range(0..=(h - sh)) as i64) };

    let pad = sample.image.get(0, 0);
    let mut out = Raster::new(w, h, pad);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (sx, sy) = (x + ox, y + oy);
            if sx < 0 || sy < 0 || sx >= sw as i64 || sy >= sh as i64 {
                continue;
            }
            // Nearest-neighbor pull from the unscaled source.
            let ux = (((sx as f64 + 0.5) / s) as usize).min(w - 1);
            let uy = (((sy as f64 + 0.5) / s) as usize).min(h - 1);
            out.put(x, y, sample.image.get(ux, uy));
        }
    }

    let map_pt = |p: Vec2| -> Vec2 { [p[0] * s - ox as f64, p[1] * s - oy as f64] };
    let inside = |p: Vec2| -> bool {
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= w as f64 && p[1] <= h as f64
    };
    let mut instances = Vec::new();
    for inst in &sample.instances {
        let ring: Vec<Vec2> = inst.polygon.ring().iter().map(|&p| map_pt(p)).collect();
        let n_in = ring.iter().filter(|&&p| inside(p)).count();
        if n_in == 0 {
            continue;
        }
        let truncated = n_in < ring.len();
        instances.push(TextInstance {
            polygon: BoundaryPolygon::new(ring).expect("affine map keeps the ring valid"),
            transcription: inst.transcription.clone(),
            char_centers: inst.char_centers.iter().map(|&p| map_pt(p)).collect(),
            centers_available: inst.centers_available,
            dont_care: inst.dont_care || truncated,
        });
    }
    TrainSample { image: out, instances }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

impl Adam {
    pub fn new() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update over every parameter present in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let Some(param) = store.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                param.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients so their global L2 norm is at most `clip`.
fn clip_grads(grads: &mut BTreeMap<String, Vec<f64>>, clip: f64) {
    if clip <= 0.0 {
        return;
    }
    let norm: f64 = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|&x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Loss evaluation
// ---------------------------------------------------------------------------

/// Loss components of one iteration (batch means). The decoder terms are
/// summed over layers, matching what the optimizer actually descends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub total: f64,
    pub l_enc: f64,
    pub l_cls: f64,
    pub l_coord: f64,
    pub l_ct: f64,
    pub l_char: f64,
}

impl LossRow {
    pub const CSV_HEADER: &'static str = "iter,total,L_enc,L_cls,L_coord,L_ct,L_char";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter, self.total, self.l_enc, self.l_cls, self.l_coord, self.l_ct, self.l_char
        )
    }
}

struct SampleResult {
    grads: BTreeMap<String, Vec<f64>>,
    total: f64,
    l_enc: f64,
    l_cls: f64,
    l_coord: f64,
    l_ct: f64,
    l_char: f64,
}

/// Forward + backward for one sample; the matching is taken once from the
/// final decoder layer and reused for every layer's losses.
fn sample_pass(
    model: &SpotModel,
    store: &ParamStore,
    image: &Raster,
    gts: &[TextInstance],
    w: &MatchWeights,
) -> Result<SampleResult> {
    let graph = Graph::new();
    let binder = ParamBinder::new(store, &graph);
    let img = crate::model::image_tensor(&graph, image)?;
    let arch = crate::model::Architecture::new(&model.cfg);
    let pyr = arch.backbone.forward(&binder, &img)?;
    let enc = arch.encoder.forward(&binder, &pyr.maps)?;
    let state = arch.decoder.init_state(&binder, &enc.prop_centers)?;
    let (_state, layers, _sampling) = arch.decoder.forward(&binder, state, &enc.memory)?;

    let enc_loss = matching::encoder_losses(&enc.scores, &enc.boxes, gts, w)?;
    let assignment =
        matching::match_predictions(layers.last().expect("decoder layers"), gts, w)?;

    let mut totals = Vec::with_capacity(layers.len());
    let (mut l_cls, mut l_coord, mut l_ct, mut l_char) = (0.0, 0.0, 0.0, 0.0);
    for layer in &layers {
        let d = matching::decoder_losses(layer, gts, &assignment, w)?;
        l_cls += d.cls.item();
        l_coord += d.coord.item();
        l_ct += d.ct.item();
        l_char += d.char_ce.item();
        totals.push(d.total);
    }
    let loss = matching::total_loss(&enc_loss.total, &totals)?;
    let total = loss.item();
    loss.backward();
    Ok(SampleResult {
        grads: binder.grads(),
        total,
        l_enc: enc_loss.total.item(),
        l_cls,
        l_coord,
        l_ct,
        l_char,
    })
}

fn check_finite(iter: usize, r: &SampleResult) -> Result<()> {
    let terms = [
        ("L_enc", r.l_enc),
        ("L_cls", r.l_cls),
        ("L_coord", r.l_coord),
        ("L_ct", r.l_ct),
        ("L_char", r.l_char),
        ("total", r.total),
    ];
    for (name, v) in terms {
        if !v.is_finite() {
            return Err(Error::contract(format!(
                "iteration {iter}: loss term {name} is {v} — aborting"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

/// Deterministic epoch shuffler: deals the dataset in random order, reshuffles
/// when exhausted.
struct Shuffler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Shuffler {
    fn new(n: usize, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..n).collect(), pos: n }
    }

    fn next(&mut self) -> usize {
        if self.pos >= self.order.len() {
            // Fisher–Yates.
            for i in (1..self.order.len()).rev() {
                let j = self.rng.random_range(0..=i);
                self.order.swap(i, j);
            }
            self.pos = 0;
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }
}

/// Train `model` in place. Snapshots go through `on_snapshot` (called every
/// `snapshot_interval` iterations and once at the end) so the caller decides
/// where checkpoints live. Returns the per-iteration loss log.
pub fn train(
    samples: &[TrainSample],
    model: &mut SpotModel,
    cfg: &TrainConfig,
    mut on_snapshot: impl FnMut(usize, &ParamStore) -> Result<()>,
) -> Result<Vec<LossRow>> {
    cfg.validate()?;
    check_dataset(samples, model)?;

    let mut shuffler = Shuffler::new(samples.len(), cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x41554721));
    let mut adam = Adam::new();
    let mut log = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        // Assemble the batch serially (deterministic), evaluate in parallel.
        let mut batch: Vec<(Raster, Vec<TextInstance>)> = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let sample = &samples[shuffler.next()];
            let prepared = if cfg.augment {
                augment_sample(sample, &mut aug_rng)
            } else {
                sample.clone()
            };
            batch.push((prepared.image.clone(), training_gts(&prepared)?));
        }

        let store = &model.params;
        let results: Vec<Result<SampleResult>> = parallel::par_map(batch.len(), |i| {
            sample_pass(model, store, &batch[i].0, &batch[i].1, &cfg.weights)
        });

        // Ordered reduction keeps the gradient sum bitwise deterministic.
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut row = LossRow {
            iter,
            total: 0.0,
            l_enc: 0.0,
            l_cls: 0.0,
            l_coord: 0.0,
            l_ct: 0.0,
            l_char: 0.0,
        };
        for r in results {
            let r = r?;
            check_finite(iter, &r)?;
            for (name, g) in &r.grads {
                let acc = grads.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            row.total += r.total;
            row.l_enc += r.l_enc;
            row.l_cls += r.l_cls;
            row.l_coord += r.l_coord;
            row.l_ct += r.l_ct;
            row.l_char += r.l_char;
        }
        let inv = 1.0 / cfg.batch_size as f64;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= inv;
            }
        }
        row.total *= inv;
        row.l_enc *= inv;
        row.l_cls *= inv;
        row.l_coord *= inv;
        row.l_ct *= inv;
        row.l_char *= inv;

        clip_grads(&mut grads, cfg.grad_clip);
        adam.step(&mut model.params, &grads, cfg.lr_at(iter));
        log.push(row);

        if cfg.snapshot_interval > 0 && (iter + 1) % cfg.snapshot_interval == 0 {
            on_snapshot(iter + 1, &model.params)?;
        }
    }
    if cfg.snapshot_interval == 0 || cfg.iterations % cfg.snapshot_interval != 0 {
        on_snapshot(cfg.iterations, &model.params)?;
    }
    Ok(log)
}

/// Render the loss log as CSV.
pub fn log_to_csv(log: &[LossRow]) -> String {
    let mut out = String::from(LossRow::CSV_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Iterative center acceptance
// ---------------------------------------------------------------------------

/// Which instances currently count as having trustworthy character centers,
/// plus the accepted-count history per round. Acceptance is sticky — once an
/// instance is in, it stays — so the history is non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterAcceptanceRecord {
    /// Per sample, per instance (dont_care instances carry `false` forever).
    pub accepted: Vec<Vec<bool>>,
    /// Accepted count after each acceptance round.
    pub history: Vec<usize>,
}

impl CenterAcceptanceRecord {
    /// Start from the dataset's own annotations: instances that already have
    /// centers count as accepted.
    pub fn new(samples: &[TrainSample]) -> Self {
        let accepted = samples
            .iter()
            .map(|s| {
                s.instances
                    .iter()
                    .map(|i| i.centers_available && !i.dont_care)
                    .collect()
            })
            .collect();
        Self { accepted, history: Vec::new() }
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().map(|s| s.iter().filter(|&&a| a).count()).sum()
    }

    /// Countable (non-dont_care) instances.
    pub fn total(&self, samples: &[TrainSample]) -> usize {
        samples
            .iter()
            .map(|s| s.instances.iter().filter(|i| !i.dont_care).count())
            .sum()
    }
}

/// One acceptance sweep: run the model on every sample, match predictions to
/// ground truth, and promote instances whose |C| predicted real-character
/// centers all fall inside the gt polygon (|C| = 0 is vacuously in). Promoted
/// instances get the predicted centers written back (pixel space); rejected
/// ones keep only derivable data — no real-character centers, so they stay
/// out of the center loss. Sticky across rounds; appends to `history`.
pub fn accept_centers(
    model: &SpotModel,
    samples: &mut [TrainSample],
    w: &MatchWeights,
    record: &mut CenterAcceptanceRecord,
) -> Result<()> {
    let m_slots = model.cfg.max_text_len;
    for (si, sample) in samples.iter_mut().enumerate() {
        let (pw, ph) = (sample.image.width() as f64, sample.image.height() as f64);
        let out = model.run(&sample.image)?;
        let final_layer: &LayerPreds = out.layers.last().expect("decoder layers");

        // Match against the same normalized view training uses; keep the
        // original instance index of every countable gt.
        let kept: Vec<usize> = (0..sample.instances.len())
            .filter(|&i| !sample.instances[i].dont_care)
            .collect();
        let gts: Vec<TextInstance> = kept
            .iter()
            .map(|&i| normalize_instance(&sample.instances[i], pw, ph))
            .collect::<Result<_>>()?;
        let assignment = matching::match_predictions(final_layer, &gts, w)?;
        let views = final_layer.views();

        for &(g, p) in &assignment.pairs {
            let inst = &mut sample.instances[kept[g]];
            let c = inst.transcription.chars().count();
            let predicted: Vec<Vec2> = views[p].centers[..c.min(views[p].centers.len())]
                .iter()
                .map(|q| [q[0] * pw, q[1] * ph])
                .collect();
            let all_inside = predicted.iter().all(|&q| inst.polygon.contains(q));
            if all_inside {
                let tail = centerline_tail(&inst.polygon);
                let mut centers = predicted;
                centers.resize(m_slots, tail);
                inst.char_centers = centers;
                inst.centers_available = true;
                record.accepted[si][kept[g]] = true;
            } else if !record.accepted[si][kept[g]] {
                inst.char_centers.clear();
                inst.centers_available = false;
            }
        }
    }
    record.history.push(record.accepted_count());
    Ok(())
}

/// Outcome of the accept/finetune alternation.
pub struct IterativeOutcome {
    pub record: CenterAcceptanceRecord,
    /// Acceptance rounds actually run.
    pub rounds: usize,
    /// Concatenated loss log of every finetuning phase.
    pub log: Vec<LossRow>,
}

/// Alternate (accept_centers → finetune) until the accepted count moves by
/// less than `stability_tol` of the instance total between consecutive
/// rounds, or `max_rounds` is reached.
pub fn iterative_finetune(
    samples: &mut [TrainSample],
    model: &mut SpotModel,
    cfg: &TrainConfig,
    mut on_snapshot: impl FnMut(usize, &ParamStore) -> Result<()>,
) -> Result<IterativeOutcome> {
    cfg.validate()?;
    check_dataset(samples, model)?;
    let mut record = CenterAcceptanceRecord::new(samples);
    let total = record.total(samples).max(1);
    let mut log = Vec::new();
    let mut rounds = 0;

    for round in 1..=cfg.max_rounds {
        accept_centers(model, samples, &cfg.weights, &mut record)?;
        rounds = round;
        let h = &record.history;
        if round >= 2 {
            let delta = h[round - 1].abs_diff(h[round - 2]);
            if (delta as f64) < cfg.stability_tol * total as f64 {
                break;
            }
        }
        let round_cfg = TrainConfig { seed: cfg.seed.wrapping_add(round as u64), ..cfg.clone() };
        log.extend(train(samples, model, &round_cfg, &mut on_snapshot)?);
    }
    Ok(IterativeOutcome { record, rounds, log })
}
