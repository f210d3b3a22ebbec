//! Training and inference plumbing: the optimizer and its schedule, the
//! seeded scene-to-example data path, segment-overlap inference with
//! optional rotation averaging, event extraction, and the two-variant
//! comparison experiment.
//!
//! Everything here is deterministic given the configs: per-sample scene
//! seeds are derived by hashing `(seed, sample index)`, the optimizer and
//! all reductions run in fixed order, and outputs are written with
//! shortest-roundtrip float formatting, so reruns produce byte-identical
//! artifacts.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::accdoa::{
    accdoa_loss, bce_loss, decode, masked_doa_mse, seldnet_loss, AccdoaGrid, EventLabelTrack,
    HeadVariant,
};
use crate::augment::{emda, random_rotation, spec_augment, AugmentConfig};
use crate::error::{Error, Result};
use crate::event_csv::{rows_from_track, write_label_csv, LabelRow};
use crate::features::{
    extract_features, frames_to_label_frames, stft_frame_count, FeatureTensor, BINS, HOP, PLANES,
    SAMPLE_RATE, WINDOW,
};
use crate::geometry::{rotation_catalog, Doa, FoaClip, Vec3, FOA_CHANNELS};
use crate::metrics::{evaluate_rows, MetricsConfig, SeldReport};
use crate::model::{
    backward, forward, trunk_hash, ModelConfig, Output, OutputGrad, Parameters,
};
use crate::scene::{rasterize_labels, render_scene, SceneEvent, SceneInstance, SceneSpec};

/// Which objective drives training. The first needs the single-output head;
/// the other two need the two-branch head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    Accdoa,
    Seldnet,
    TwoStage,
}

impl LossVariant {
    pub fn head(self) -> HeadVariant {
        match self {
            LossVariant::Accdoa => HeadVariant::Accdoa,
            LossVariant::Seldnet | LossVariant::TwoStage => HeadVariant::TwoBranch,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Accdoa => "accdoa",
            LossVariant::Seldnet => "seldnet",
            LossVariant::TwoStage => "two-stage",
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<LossVariant> {
        match s {
            "accdoa" => Ok(LossVariant::Accdoa),
            "seldnet" => Ok(LossVariant::Seldnet),
            "two-stage" => Ok(LossVariant::TwoStage),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss variant {other:?}; expected accdoa, seldnet, or two-stage"
            ))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative step-decay factor applied every `decay_interval`.
    pub lr_decay: f64,
    pub decay_interval: usize,
    /// Decoupled weight decay (applied to the parameters, not the gradient).
    pub weight_decay: f64,
    pub max_iters: usize,
    pub loss: LossVariant,
    /// Weight on the direction term of the combined two-branch loss.
    pub loss_weight: f64,
    pub seed: u64,
    /// Used only by the on-the-fly scene path, not the fixed-pool path.
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.9,
            decay_interval: 2000,
            weight_decay: 1e-6,
            max_iters: 1000,
            loss: LossVariant::Accdoa,
            loss_weight: 10.0,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("lr {} must be finite and non-negative", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad(format!("lr_decay {} must lie in (0, 1)", self.lr_decay));
        }
        if self.decay_interval == 0 {
            return bad("decay_interval must be positive".into());
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!(
                "weight_decay {} must be finite and non-negative",
                self.weight_decay
            ));
        }
        if !self.loss_weight.is_finite() || self.loss_weight <= 0.0 {
            return bad(format!("loss_weight {} must be positive", self.loss_weight));
        }
        Ok(())
    }

    /// Learning rate at a given iteration under the step-decay schedule.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.lr * self.lr_decay.powi((iteration / self.decay_interval) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub segment_frames: usize,
    pub shift_frames: usize,
    /// Vector-norm activity threshold for decoding.
    pub threshold: f64,
    /// Catalog indices used by [`infer_with_tta`]; empty disables averaging.
    pub tta_rotations: Vec<usize>,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            segment_frames: 128,
            shift_frames: 20,
            threshold: 0.5,
            tta_rotations: Vec::new(),
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_frames == 0 {
            return Err(Error::InvalidConfig("segment_frames must be positive".into()));
        }
        if self.shift_frames == 0 || self.shift_frames > self.segment_frames {
            return Err(Error::InvalidConfig(format!(
                "shift_frames {} must lie in 1..={}",
                self.shift_frames, self.segment_frames
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} not in (0, 1)",
                self.threshold
            )));
        }
        let catalog = rotation_catalog().len();
        for &r in &self.tta_rotations {
            if r >= catalog {
                return Err(Error::InvalidConfig(format!(
                    "tta rotation index {r} outside the {catalog}-entry catalog"
                )));
            }
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay. Frozen indices are skipped entirely:
/// no moment update, no decay, no step.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(len: usize) -> Adam {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(
        &mut self,
        theta: &mut [f64],
        grad: &[f64],
        lr: f64,
        weight_decay: f64,
        frozen: Option<&[bool]>,
    ) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..theta.len() {
            if frozen.is_some_and(|f| f[i]) {
                continue;
            }
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            theta[i] -= lr * weight_decay * theta[i];
        }
    }
}

/// One training example: network input plus targets on the pooled grid.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub features: FeatureTensor,
    pub labels: EventLabelTrack,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub history: Vec<HistoryRow>,
}

// Seed-space salts separating the independent random streams.
const SALT_SCENE: u64 = 1;
const SALT_AUGMENT: u64 = 2;
const SALT_MIX_PARTNER: u64 = 3;
const SALT_POOL: u64 = 11;
const SALT_HELD_OUT: u64 = 13;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed derivation for per-sample streams.
fn mix_seed(base: u64, index: u64, salt: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ index) ^ salt)
}

/// Targets on the network's output grid: the event list rasterized at
/// `temporal_pool` STFT hops per frame. This keeps targets aligned with the
/// model output for any pooling configuration, not just the default.
pub fn pooled_labels(events: &[SceneEvent], model: &ModelConfig) -> EventLabelTrack {
    let hop_s = model.temporal_pool() as f64 * HOP as f64 / SAMPLE_RATE as f64;
    rasterize_labels(events, model.classes, hop_s, model.out_frames())
}

/// A scene spec only fits a model if the rendered clip produces exactly the
/// configured number of STFT frames and the class vocabularies agree.
pub fn check_scene_matches_model(model: &ModelConfig, scene: &SceneSpec) -> Result<()> {
    if model.planes != PLANES || model.bins != BINS {
        return Err(Error::InvalidConfig(format!(
            "model input {}x{} does not match the {}x{} feature extractor",
            model.planes, model.bins, PLANES, BINS
        )));
    }
    if model.classes != scene.class_count {
        return Err(Error::InvalidConfig(format!(
            "model has {} classes, scene spec has {}",
            model.classes, scene.class_count
        )));
    }
    let frames = stft_frame_count(scene.samples())?;
    if frames != model.frames {
        return Err(Error::InvalidConfig(format!(
            "scene duration yields {frames} STFT frames, model wants {}",
            model.frames
        )));
    }
    Ok(())
}

/// Render one fresh, optionally augmented example for `(iteration, slot)`.
fn on_the_fly_example(
    model: &ModelConfig,
    tc: &TrainConfig,
    scene: &SceneSpec,
    iteration: usize,
    slot: usize,
) -> Result<TrainExample> {
    let index = iteration as u64 * tc.batch_size as u64 + slot as u64;
    let mut spec = scene.clone();
    spec.seed = mix_seed(tc.seed, index, SALT_SCENE);
    let mut inst = render_scene(&spec)?;
    // Augmentation draws come from the augment stream, so switching them
    // on or off leaves the underlying scene sequence alone.
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tc.augment.seed, index, SALT_AUGMENT));
    if tc.augment.emda_enabled {
        let mut partner_spec = scene.clone();
        partner_spec.seed = mix_seed(tc.augment.seed, index, SALT_MIX_PARTNER);
        let partner = render_scene(&partner_spec)?;
        inst = emda(&inst, &partner, scene.max_overlap, &mut rng)?;
    }
    if tc.augment.rotation_enabled {
        inst = random_rotation(&inst, &mut rng);
    }
    let mut features = extract_features(&inst.clip)?;
    if tc.augment.specaug_enabled {
        features = spec_augment(&features, &tc.augment.specaug, &mut rng)?;
    }
    let labels = pooled_labels(&inst.events, model);
    Ok(TrainExample { features, labels })
}

/// Render `count` plain scenes into reusable training examples. Seeds derive
/// from `scene.seed` itself, so the pool's identity is independent of any
/// training run that consumes it.
pub fn render_training_pool(
    model: &ModelConfig,
    scene: &SceneSpec,
    count: usize,
) -> Result<Vec<TrainExample>> {
    check_scene_matches_model(model, scene)?;
    let mut pool = Vec::with_capacity(count);
    for i in 0..count {
        let mut spec = scene.clone();
        spec.seed = mix_seed(scene.seed, i as u64, SALT_POOL);
        let inst = render_scene(&spec)?;
        pool.push(TrainExample {
            features: extract_features(&inst.clip)?,
            labels: pooled_labels(&inst.events, model),
        });
    }
    Ok(pool)
}

/// Per-sample loss and output gradient for the configured objective.
fn sample_loss(
    tc: &TrainConfig,
    phase_two: bool,
    out: &Output,
    labels: &EventLabelTrack,
) -> Result<(f64, OutputGrad)> {
    match (tc.loss, out) {
        (LossVariant::Accdoa, Output::Accdoa(grid)) => {
            let (loss, grad) = accdoa_loss(grid, labels)?;
            Ok((loss, OutputGrad::Accdoa(grad)))
        }
        (LossVariant::Seldnet, Output::TwoBranch(tb)) => {
            let l = seldnet_loss(tb, labels, tc.loss_weight)?;
            Ok((l.loss, OutputGrad::TwoBranch { sed: l.grad_sed, doa: l.grad_doa }))
        }
        (LossVariant::TwoStage, Output::TwoBranch(tb)) => {
            if phase_two {
                let (loss, grad) = masked_doa_mse(tb, labels)?;
                Ok((
                    loss,
                    OutputGrad::TwoBranch {
                        sed: vec![0.0; tb.classes() * tb.frames()],
                        doa: grad,
                    },
                ))
            } else {
                let (loss, grad) = bce_loss(tb, labels)?;
                Ok((
                    loss,
                    OutputGrad::TwoBranch {
                        sed: grad,
                        doa: AccdoaGrid::zeros(tb.classes(), tb.frames()),
                    },
                ))
            }
        }
        _ => Err(Error::InvalidConfig(format!(
            "loss {} does not fit the configured model head",
            tc.loss
        ))),
    }
}

/// In the second stage only the direction branch may move.
fn two_stage_frozen_mask(model: &ModelConfig) -> Vec<bool> {
    let mut mask = vec![false; model.count_parameters()];
    for entry in model.layout() {
        if entry.trunk || entry.name.starts_with("head.sed") {
            mask[entry.offset..entry.offset + entry.len()].fill(true);
        }
    }
    mask
}

fn run_training(
    model: &ModelConfig,
    tc: &TrainConfig,
    init: Parameters,
    mut example: impl FnMut(usize, usize) -> Result<TrainExample>,
) -> Result<TrainOutcome> {
    model.validate()?;
    tc.validate()?;
    if tc.loss.head() != model.head {
        return Err(Error::InvalidConfig(format!(
            "loss {} needs the {:?} head, model has {:?}",
            tc.loss,
            tc.loss.head(),
            model.head
        )));
    }
    let n = model.count_parameters();
    if init.len() != n {
        return Err(Error::Shape(format!(
            "init has {} values, model wants {n}",
            init.len()
        )));
    }
    let mut params = init;
    let mut adam = Adam::new(n);
    let mut history = Vec::with_capacity(tc.max_iters);
    let mut last_finite = f64::NAN;
    // Stage handover point for the two-phase objective.
    let split = tc.max_iters / 2;
    let frozen = two_stage_frozen_mask(model);
    for iteration in 0..tc.max_iters {
        let phase_two = tc.loss == LossVariant::TwoStage && iteration >= split;
        if tc.loss == LossVariant::TwoStage && iteration == split {
            // The direction branch starts its own objective here; stale
            // first-phase moments would distort its first steps.
            adam = Adam::new(n);
        }
        let lr = tc.lr_at(iteration);
        let mut grads = vec![0.0; n];
        let mut loss_sum = 0.0;
        for slot in 0..tc.batch_size {
            let ex = example(iteration, slot)?;
            let (out, cache) = forward(model, &params, &ex.features)?;
            let (loss, upstream) = sample_loss(tc, phase_two, &out, &ex.labels)?;
            loss_sum += loss;
            let g = backward(model, &params, &cache, &upstream)?;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let scale = 1.0 / tc.batch_size as f64;
        for g in &mut grads {
            *g *= scale;
        }
        let loss = loss_sum * scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration, last_finite });
        }
        adam.step(
            params.values_mut(),
            &grads,
            lr,
            tc.weight_decay,
            phase_two.then_some(frozen.as_slice()),
        );
        history.push(HistoryRow { iteration, loss, lr });
        last_finite = loss;
    }
    Ok(TrainOutcome { params, history })
}

/// Train from a fresh seeded initialization on on-the-fly scenes: every
/// batch slot of every iteration renders (and augments) its own scene.
pub fn train(
    model: &ModelConfig,
    tc: &TrainConfig,
    scene: &SceneSpec,
) -> Result<TrainOutcome> {
    train_with_init(model, tc, scene, Parameters::init(model, tc.seed))
}

pub fn train_with_init(
    model: &ModelConfig,
    tc: &TrainConfig,
    scene: &SceneSpec,
    init: Parameters,
) -> Result<TrainOutcome> {
    scene.validate()?;
    check_scene_matches_model(model, scene)?;
    run_training(model, tc, init, |iteration, slot| {
        on_the_fly_example(model, tc, scene, iteration, slot)
    })
}

/// Train against a fixed example pool, cycling through it in index order.
/// No augmentation is applied; the pool is consumed as-is.
pub fn train_on_pool(
    model: &ModelConfig,
    tc: &TrainConfig,
    pool: &[TrainExample],
) -> Result<TrainOutcome> {
    train_on_pool_with_init(model, tc, pool, Parameters::init(model, tc.seed))
}

pub fn train_on_pool_with_init(
    model: &ModelConfig,
    tc: &TrainConfig,
    pool: &[TrainExample],
    init: Parameters,
) -> Result<TrainOutcome> {
    if pool.is_empty() {
        return Err(Error::InvalidConfig("training pool is empty".into()));
    }
    run_training(model, tc, init, |iteration, slot| {
        Ok(pool[(iteration * tc.batch_size + slot) % pool.len()].clone())
    })
}

/// `iteration,loss,lr` CSV; floats use shortest-roundtrip formatting so the
/// file is byte-stable across reruns.
pub fn write_loss_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut out = String::from("iteration,loss,lr\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.iteration, r.loss, r.lr));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Anything that maps one feature window to one output grid. Inference is
/// written against this so tests can swap in analytic oracles.
pub trait Predictor {
    fn classes(&self) -> usize;
    /// Feature frames consumed per window.
    fn window_frames(&self) -> usize;
    /// STFT frames per output grid frame.
    fn temporal_pool(&self) -> usize;
    fn predict(&self, window: &FeatureTensor) -> Result<AccdoaGrid>;
}

/// The trained network as a windowed predictor. Two-branch outputs are
/// folded to activity-scaled vectors so downstream handling is uniform.
pub struct ModelPredictor<'a> {
    pub config: &'a ModelConfig,
    pub params: &'a Parameters,
}

impl Predictor for ModelPredictor<'_> {
    fn classes(&self) -> usize {
        self.config.classes
    }

    fn window_frames(&self) -> usize {
        self.config.frames
    }

    fn temporal_pool(&self) -> usize {
        self.config.temporal_pool()
    }

    fn predict(&self, window: &FeatureTensor) -> Result<AccdoaGrid> {
        forward(self.config, self.params, window).map(|(out, _)| out.to_grid())
    }
}

/// Model-free reference predictor: reads the acoustic intensity direction
/// straight from the features. Per output frame it sums, over all bins of
/// the frame's span, `amplitude * cos(phase difference)` for each dipole
/// channel, normalized by the accumulated omni amplitude. That sum is the
/// real part of the cross-spectrum with the omni channel, so it transforms
/// exactly like a direction vector under the sound-field transform catalog;
/// the omni normalizer is invariant. This makes the predictor an exact
/// fixed point of rotation averaging, which is what the consistency tests
/// need. Classes are told apart by a fixed per-class scale.
pub struct IntensityPredictor {
    pub classes: usize,
    pub window_frames: usize,
    pub pool: usize,
}

impl Predictor for IntensityPredictor {
    fn classes(&self) -> usize {
        self.classes
    }

    fn window_frames(&self) -> usize {
        self.window_frames
    }

    fn temporal_pool(&self) -> usize {
        self.pool
    }

    fn predict(&self, window: &FeatureTensor) -> Result<AccdoaGrid> {
        if window.planes() != PLANES {
            return Err(Error::Shape(format!(
                "intensity predictor needs {PLANES} feature planes, got {}",
                window.planes()
            )));
        }
        if window.frames() != self.window_frames || self.window_frames % self.pool != 0 {
            return Err(Error::Shape(format!(
                "window has {} frames; predictor wants {} (pool {})",
                window.frames(),
                self.window_frames,
                self.pool
            )));
        }
        // (amplitude plane, phase plane) per axis; ACN channel order is
        // W, Y, Z, X with phase planes in the same order.
        const AXES: [(usize, usize); 3] = [(3, 6), (1, 4), (2, 5)];
        let out_frames = self.window_frames / self.pool;
        let mut grid = AccdoaGrid::zeros(self.classes, out_frames);
        for j in 0..out_frames {
            let mut v = [0.0f64; 3];
            let mut omni = 0.0f64;
            for t in j * self.pool..(j + 1) * self.pool {
                for f in 0..window.bins() {
                    for (axis, &(amp, phase)) in AXES.iter().enumerate() {
                        v[axis] += window.at(amp, f, t) * window.at(phase, f, t).cos();
                    }
                    omni += window.at(0, f, t);
                }
            }
            let den = 1.0 + omni;
            for c in 0..self.classes {
                let s = 1.0 / (c as f64 + 1.0);
                grid.set_vec(
                    c,
                    j,
                    Vec3::new(s * v[0] / den, s * v[1] / den, s * v[2] / den),
                );
            }
        }
        Ok(grid)
    }
}

/// Window start offsets: every `shift` frames, plus a final end-aligned
/// window so the tail is always covered.
fn window_starts(total: usize, segment: usize, shift: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + segment <= total {
        starts.push(s);
        s += shift;
    }
    let last = total - segment;
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Sliding-window inference over a feature tensor that must span at least
/// one window. Overlapping outputs are averaged with uniform weights at
/// STFT-frame granularity: each grid frame is spread over its pooled span,
/// accumulated across windows, averaged per frame, then re-pooled. Window
/// grids therefore combine convexly even when `shift` is not a multiple of
/// the pooling factor. Most callers want [`infer_clip`].
pub fn infer_features(
    p: &dyn Predictor,
    features: &FeatureTensor,
    cfg: &InferConfig,
) -> Result<AccdoaGrid> {
    cfg.validate()?;
    let (segment, pool) = (cfg.segment_frames, p.temporal_pool());
    if segment != p.window_frames() {
        return Err(Error::InvalidConfig(format!(
            "segment_frames {} does not match the predictor's window of {}",
            segment,
            p.window_frames()
        )));
    }
    if pool == 0 || segment % pool != 0 {
        return Err(Error::InvalidConfig(format!(
            "temporal pool {pool} must divide segment_frames {segment}"
        )));
    }
    let total = features.frames();
    if total < segment {
        return Err(Error::Shape(format!(
            "{total} feature frames, one window needs {segment}"
        )));
    }
    let classes = p.classes();
    let grid_frames = segment / pool;
    let mut acc = vec![0.0f64; classes * 3 * total];
    let mut hits = vec![0u32; total];
    for start in window_starts(total, segment, cfg.shift_frames) {
        let window = features.slice_frames(start, segment)?;
        let grid = p.predict(&window)?;
        if (grid.classes(), grid.frames()) != (classes, grid_frames) {
            return Err(Error::Shape(format!(
                "predictor returned a {}x{} grid, expected {}x{}",
                grid.classes(),
                grid.frames(),
                classes,
                grid_frames
            )));
        }
        for j in 0..grid_frames {
            for dt in 0..pool {
                hits[start + j * pool + dt] += 1;
            }
            for c in 0..classes {
                let v = grid.vec_at(c, j);
                for dt in 0..pool {
                    let base = (c * total + start + j * pool + dt) * 3;
                    acc[base] += v.x;
                    acc[base + 1] += v.y;
                    acc[base + 2] += v.z;
                }
            }
        }
    }
    let out_frames = total / pool;
    let mut out = AccdoaGrid::zeros(classes, out_frames);
    for c in 0..classes {
        for j in 0..out_frames {
            let mut sum = [0.0f64; 3];
            for dt in 0..pool {
                let t = j * pool + dt;
                let w = f64::from(hits[t]);
                let base = (c * total + t) * 3;
                sum[0] += acc[base] / w;
                sum[1] += acc[base + 1] / w;
                sum[2] += acc[base + 2] / w;
            }
            let inv = 1.0 / pool as f64;
            out.set_vec(c, j, Vec3::new(sum[0] * inv, sum[1] * inv, sum[2] * inv));
        }
    }
    Ok(out)
}

/// Feature extraction plus [`infer_features`]. A clip shorter than one
/// window is zero-padded up to a full window and the output trimmed back to
/// the grid frames the original clip supports (none, if it cannot fill even
/// one STFT window).
pub fn infer_clip(p: &dyn Predictor, clip: &FoaClip, cfg: &InferConfig) -> Result<AccdoaGrid> {
    cfg.validate()?;
    let needed = WINDOW + (cfg.segment_frames - 1) * HOP;
    if clip.len() >= needed {
        return infer_features(p, &extract_features(clip)?, cfg);
    }
    let own_frames = if clip.len() < WINDOW {
        0
    } else {
        frames_to_label_frames(stft_frame_count(clip.len())?, p.temporal_pool())
    };
    let mut padded = clip.clone();
    for ch in 0..FOA_CHANNELS {
        padded.channel_mut(ch).resize(needed, 0.0);
    }
    let full = infer_features(p, &extract_features(&padded)?, cfg)?;
    let mut out = AccdoaGrid::zeros(p.classes(), own_frames);
    for c in 0..p.classes() {
        for j in 0..own_frames {
            out.set_vec(c, j, full.vec_at(c, j));
        }
    }
    Ok(out)
}

/// Rotation-averaged inference: run [`infer_clip`] on each transformed copy
/// of the clip, carry every output vector back through the inverse
/// transform, and average the vector fields.
pub fn infer_with_tta(
    p: &dyn Predictor,
    clip: &FoaClip,
    cfg: &InferConfig,
) -> Result<AccdoaGrid> {
    cfg.validate()?;
    if cfg.tta_rotations.is_empty() {
        return Err(Error::InvalidConfig(
            "tta_rotations is empty; rotation averaging needs at least one entry".into(),
        ));
    }
    let catalog = rotation_catalog();
    let mut sum: Option<AccdoaGrid> = None;
    for &index in &cfg.tta_rotations {
        let transform = &catalog[index];
        let grid = infer_clip(p, &transform.apply_clip(clip), cfg)?;
        let acc = sum.get_or_insert_with(|| AccdoaGrid::zeros(grid.classes(), grid.frames()));
        for c in 0..grid.classes() {
            for j in 0..grid.frames() {
                let back = transform.invert_vec(grid.vec_at(c, j));
                acc.set_vec(c, j, acc.vec_at(c, j).add(back));
            }
        }
    }
    let mut out = sum.expect("at least one rotation ran");
    let inv = 1.0 / cfg.tta_rotations.len() as f64;
    for c in 0..out.classes() {
        for j in 0..out.frames() {
            out.set_vec(c, j, out.vec_at(c, j).scale(inv));
        }
    }
    Ok(out)
}

/// A decoded event: consecutive active frames of one class with their
/// per-frame directions. `onset` indexes the grid the event came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedEvent {
    pub class: usize,
    pub onset: usize,
    pub doas: Vec<Doa>,
}

impl DecodedEvent {
    /// Last active frame, inclusive.
    pub fn offset(&self) -> usize {
        self.onset + self.doas.len() - 1
    }
}

/// Threshold the grid and merge consecutive active frames per class. A
/// single inactive frame ends an event; nothing bridges gaps.
pub fn grid_to_events(grid: &AccdoaGrid, threshold: f64) -> Result<Vec<DecodedEvent>> {
    let track = decode(grid, threshold)?;
    let mut events = Vec::new();
    for c in 0..track.classes() {
        let mut run: Option<DecodedEvent> = None;
        for t in 0..track.frames() {
            match track.doa(c, t) {
                Some(d) => run
                    .get_or_insert_with(|| DecodedEvent { class: c, onset: t, doas: Vec::new() })
                    .doas
                    .push(d),
                None => {
                    if let Some(ev) = run.take() {
                        events.push(ev);
                    }
                }
            }
        }
        if let Some(ev) = run.take() {
            events.push(ev);
        }
    }
    Ok(events)
}

/// Flatten decoded events onto the 100 ms output grid. Each network frame
/// lands in the 100 ms frame containing its center; when several frames of
/// one class land in the same output frame, the one nearest that frame's
/// center wins (earlier frame on a tie). `frame_offset` shifts the output
/// frames, letting several clips share one timeline.
pub fn events_to_rows(
    events: &[DecodedEvent],
    temporal_pool: usize,
    frame_offset: usize,
) -> Vec<LabelRow> {
    use std::collections::BTreeMap;
    let net_hop_ms = temporal_pool as f64 * 10.0;
    // (class, output frame) -> (distance to that frame's center, source frame, direction)
    let mut best: BTreeMap<(usize, usize), (f64, usize, Doa)> = BTreeMap::new();
    for ev in events {
        for (i, &doa) in ev.doas.iter().enumerate() {
            let t = ev.onset + i;
            let center_ms = (t as f64 + 0.5) * net_hop_ms;
            let out = (center_ms / 100.0).floor() as usize;
            let dist = (center_ms - (out as f64 + 0.5) * 100.0).abs();
            match best.get(&(ev.class, out)) {
                Some(&(d, src, _)) if d < dist || (d == dist && src <= t) => {}
                _ => {
                    best.insert((ev.class, out), (dist, t, doa));
                }
            }
        }
    }
    let mut rows: Vec<LabelRow> = best
        .into_iter()
        .map(|((class, frame), (_, _, doa))| LabelRow {
            frame: frame + frame_offset,
            class,
            doa,
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.class));
    rows
}

/// Decoded events as a label CSV on the 100 ms grid.
pub fn write_event_csv(
    path: &Path,
    events: &[DecodedEvent],
    temporal_pool: usize,
) -> Result<()> {
    write_label_csv(path, &events_to_rows(events, temporal_pool, 0))
}

/// The two-variant experiment: train both heads on one pooled data stream
/// from one trunk initialization, then score each on a shared held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Trunk template; the head field is overridden per variant.
    pub model: ModelConfig,
    /// Shared optimizer settings; the loss field is overridden per variant.
    pub train: TrainConfig,
    pub scene: SceneSpec,
    pub infer: InferConfig,
    /// Pre-rendered training pool size.
    pub train_scenes: usize,
    /// Held-out scenes scored after training.
    pub test_scenes: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scene: SceneSpec::default(),
            infer: InferConfig::default(),
            train_scenes: 64,
            test_scenes: 16,
        }
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.scene.validate()?;
        self.infer.validate()?;
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::InvalidConfig(
                "train_scenes and test_scenes must be positive".into(),
            ));
        }
        check_scene_matches_model(&self.model, &self.scene)
    }
}

#[derive(Debug)]
pub struct ComparisonVariant {
    pub variant: LossVariant,
    pub config: ModelConfig,
    pub param_count: usize,
    pub params: Parameters,
    pub history: Vec<HistoryRow>,
    pub report: SeldReport,
}

#[derive(Debug)]
pub struct ComparisonOutcome {
    pub accdoa: ComparisonVariant,
    pub two_branch: ComparisonVariant,
    /// Cross-check that the two trained configs really share a trunk.
    pub trunk_hashes_match: bool,
}

/// Render the held-out scenes for a comparison run. Exposed so callers can
/// score additional predictors (e.g. rotation-averaged inference) on the
/// exact same material.
pub fn held_out_scenes(cc: &CompareConfig) -> Result<Vec<SceneInstance>> {
    let mut scenes = Vec::with_capacity(cc.test_scenes);
    for i in 0..cc.test_scenes {
        let mut spec = cc.scene.clone();
        spec.seed = mix_seed(cc.scene.seed, i as u64, SALT_HELD_OUT);
        scenes.push(render_scene(&spec)?);
    }
    Ok(scenes)
}

/// Score a predictor over a set of scenes laid out on one shared timeline.
pub fn evaluate_on_scenes(
    p: &dyn Predictor,
    scenes: &[SceneInstance],
    infer: &InferConfig,
    label_frames_per_scene: usize,
    with_tta: bool,
) -> Result<SeldReport> {
    let mut pred_rows = Vec::new();
    let mut ref_rows = Vec::new();
    for (i, inst) in scenes.iter().enumerate() {
        let offset = i * label_frames_per_scene;
        let grid = if with_tta {
            infer_with_tta(p, &inst.clip, infer)?
        } else {
            infer_clip(p, &inst.clip, infer)?
        };
        let events = grid_to_events(&grid, infer.threshold)?;
        pred_rows.extend(events_to_rows(&events, p.temporal_pool(), offset));
        ref_rows.extend(rows_from_track(&inst.labels).into_iter().map(|mut r| {
            r.frame += offset;
            r
        }));
    }
    Ok(evaluate_rows(&pred_rows, &ref_rows, &MetricsConfig::default()))
}

pub fn run_comparison(cc: &CompareConfig) -> Result<ComparisonOutcome> {
    cc.validate()?;
    let pool = render_training_pool(&cc.model, &cc.scene, cc.train_scenes)?;
    let tests = held_out_scenes(cc)?;
    let run_variant = |variant: LossVariant| -> Result<ComparisonVariant> {
        let mut model = cc.model.clone();
        model.head = variant.head();
        let mut tc = cc.train.clone();
        tc.loss = variant;
        let outcome = train_on_pool(&model, &tc, &pool)?;
        let predictor = ModelPredictor { config: &model, params: &outcome.params };
        let report = evaluate_on_scenes(
            &predictor,
            &tests,
            &cc.infer,
            cc.scene.label_frames(),
            false,
        )?;
        Ok(ComparisonVariant {
            variant,
            param_count: model.count_parameters(),
            config: model,
            params: outcome.params,
            history: outcome.history,
            report,
        })
    };
    let accdoa = run_variant(LossVariant::Accdoa)?;
    let two_branch = run_variant(LossVariant::Seldnet)?;
    let trunk_hashes_match = trunk_hash(&accdoa.config) == trunk_hash(&two_branch.config);
    Ok(ComparisonOutcome { accdoa, two_branch, trunk_hashes_match })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sph_to_cart;
    use crate::model::ConvBlockConfig;
    use rand::Rng;
    use std::cell::Cell;

    fn tiny_model(head: HeadVariant) -> ModelConfig {
        ModelConfig {
            planes: 2,
            bins: 12,
            frames: 8,
            conv_blocks: vec![ConvBlockConfig { channels: 3, kernel: 3, pool: [3, 2] }],
            hidden: 6,
            head,
            classes: 2,
        }
    }

    fn tiny_example(model: &ModelConfig, seed: u64) -> TrainExample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = FeatureTensor::zeros(model.planes, model.bins, model.frames);
        for v in features.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut labels = EventLabelTrack::new(model.classes, model.out_frames());
        for c in 0..model.classes {
            for t in 0..model.out_frames() {
                if rng.random_range(0..2) == 1 {
                    let d = sph_to_cart(
                        rng.random_range(-179.0..179.0),
                        rng.random_range(-80.0..80.0),
                    )
                    .unwrap();
                    labels.set_active(c, t, d);
                }
            }
        }
        TrainExample { features, labels }
    }

    #[test]
    fn config_defaults_and_toml_roundtrip() {
        let tc = TrainConfig::default();
        assert_eq!(tc.batch_size, 32);
        assert_eq!(tc.lr, 1e-3);
        assert_eq!(tc.lr_decay, 0.9);
        assert_eq!(tc.decay_interval, 2000);
        assert_eq!(tc.weight_decay, 1e-6);
        assert_eq!(tc.loss_weight, 10.0);
        tc.validate().unwrap();
        let text = toml::to_string(&tc).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(tc, back);
        let parsed: TrainConfig = toml::from_str("loss = \"two-stage\"\nmax_iters = 7\n").unwrap();
        assert_eq!(parsed.loss, LossVariant::TwoStage);
        assert_eq!(parsed.max_iters, 7);
        assert!(toml::from_str::<TrainConfig>("learning_rate = 0.1").is_err());
        let ic = InferConfig::default();
        assert_eq!((ic.segment_frames, ic.shift_frames), (128, 20));
        ic.validate().unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut tc = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(tc.validate().is_err());
        tc.batch_size = 1;
        tc.lr_decay = 1.0;
        assert!(tc.validate().is_err());
        tc.lr_decay = 0.5;
        tc.lr = -0.1;
        assert!(tc.validate().is_err());
        let mut ic = InferConfig { shift_frames: 200, ..InferConfig::default() };
        assert!(ic.validate().is_err());
        ic.shift_frames = 20;
        ic.tta_rotations = vec![16];
        assert!(ic.validate().is_err());
        ic.tta_rotations = vec![0, 15];
        ic.validate().unwrap();
        assert_eq!("two-stage".parse::<LossVariant>().unwrap(), LossVariant::TwoStage);
        assert!("mse".parse::<LossVariant>().is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic_and_respects_freezing() {
        let mut theta = vec![1.0, 1.0];
        let mut adam = Adam::new(2);
        let frozen = vec![false, true];
        for _ in 0..300 {
            let grad: Vec<f64> = theta.iter().map(|&x| 2.0 * x).collect();
            adam.step(&mut theta, &grad, 0.05, 0.0, Some(&frozen));
        }
        assert!(theta[0].abs() < 1e-3, "free coordinate stuck at {}", theta[0]);
        assert_eq!(theta[1], 1.0);
    }

    #[test]
    fn lr_schedule_steps_down() {
        let tc = TrainConfig { decay_interval: 10, ..TrainConfig::default() };
        assert_eq!(tc.lr_at(0), 1e-3);
        assert_eq!(tc.lr_at(9), 1e-3);
        assert_eq!(tc.lr_at(10), 1e-3 * 0.9);
        assert_eq!(tc.lr_at(25), 1e-3 * 0.81);
    }

    #[test]
    fn zero_lr_training_is_a_no_op() {
        let model = tiny_model(HeadVariant::Accdoa);
        let pool = vec![tiny_example(&model, 3)];
        let tc = TrainConfig {
            batch_size: 1,
            lr: 0.0,
            max_iters: 5,
            seed: 4,
            ..TrainConfig::default()
        };
        let outcome = train_on_pool(&model, &tc, &pool).unwrap();
        assert_eq!(outcome.params.values(), Parameters::init(&model, 4).values());
        assert_eq!(outcome.history.len(), 5);
        assert!(outcome.history.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn same_seed_gives_identical_runs() {
        let model = tiny_model(HeadVariant::TwoBranch);
        let pool = vec![tiny_example(&model, 5), tiny_example(&model, 6)];
        let tc = TrainConfig {
            batch_size: 2,
            max_iters: 8,
            loss: LossVariant::Seldnet,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_on_pool(&model, &tc, &pool).unwrap();
        let b = train_on_pool(&model, &tc, &pool).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.values(), b.params.values());
    }

    #[test]
    fn single_example_overfits() {
        let model = tiny_model(HeadVariant::Accdoa);
        let pool = vec![tiny_example(&model, 12)];
        let tc = TrainConfig {
            batch_size: 1,
            lr: 1e-2,
            max_iters: 500,
            decay_interval: 10_000,
            weight_decay: 0.0,
            seed: 13,
            ..TrainConfig::default()
        };
        let outcome = train_on_pool(&model, &tc, &pool).unwrap();
        let first = outcome.history.first().unwrap().loss;
        let last = outcome.history.last().unwrap().loss;
        assert!(
            last < 0.1 * first,
            "loss only moved from {first} to {last} while memorizing one example"
        );
    }

    #[test]
    fn two_stage_freezes_everything_but_the_direction_branch() {
        let model = tiny_model(HeadVariant::TwoBranch);
        let pool = vec![tiny_example(&model, 21), tiny_example(&model, 23)];
        let tc = TrainConfig {
            batch_size: 1,
            max_iters: 6,
            loss: LossVariant::TwoStage,
            seed: 22,
            ..TrainConfig::default()
        };
        // Six and seven iterations share the handover point (floor of half),
        // so the longer run is the shorter one plus a single extra
        // second-phase iteration. That iteration must leave every entry
        // outside the direction branch untouched.
        let six = train_on_pool(&model, &tc, &pool).unwrap();
        let seven =
            train_on_pool(&model, &TrainConfig { max_iters: 7, ..tc.clone() }, &pool).unwrap();
        assert_eq!(six.history[..], seven.history[..6]);
        let layout = model.layout();
        for e in &layout {
            let a = &six.params.values()[e.offset..e.offset + e.len()];
            let b = &seven.params.values()[e.offset..e.offset + e.len()];
            if e.trunk || e.name.starts_with("head.sed") {
                assert_eq!(a, b, "{} moved during the frozen phase", e.name);
            }
        }
        let doa_moved = layout.iter().filter(|e| e.name.starts_with("head.doa")).any(|e| {
            six.params.values()[e.offset..e.offset + e.len()]
                != seven.params.values()[e.offset..e.offset + e.len()]
        });
        assert!(doa_moved, "direction branch never trained in phase two");
        // The first phase trains the trunk, so it must differ from the
        // initialization it started at.
        let init = Parameters::init(&model, tc.seed);
        let trunk_trained = layout.iter().filter(|e| e.trunk).any(|e| {
            six.params.values()[e.offset..e.offset + e.len()]
                != init.values()[e.offset..e.offset + e.len()]
        });
        assert!(trunk_trained, "trunk never moved in phase one");
    }

    #[test]
    fn diverging_training_reports_non_finite_loss() {
        let model = tiny_model(HeadVariant::Accdoa);
        let pool = vec![tiny_example(&model, 31)];
        let tc = TrainConfig {
            batch_size: 1,
            lr: 1e160,
            max_iters: 10,
            weight_decay: 0.0,
            seed: 32,
            ..TrainConfig::default()
        };
        match train_on_pool(&model, &tc, &pool) {
            Err(Error::NonFiniteLoss { iteration, .. }) => assert!(iteration > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn loss_and_head_must_agree() {
        let model = tiny_model(HeadVariant::Accdoa);
        let pool = vec![tiny_example(&model, 41)];
        let tc = TrainConfig { loss: LossVariant::Seldnet, ..TrainConfig::default() };
        assert!(matches!(
            train_on_pool(&model, &tc, &pool),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn loss_history_file_is_stable() {
        let rows = vec![
            HistoryRow { iteration: 0, loss: 0.5, lr: 1e-3 },
            HistoryRow { iteration: 1, loss: 0.25, lr: 1e-3 },
        ];
        let path = std::env::temp_dir().join(format!(
            "accdoa-hist-{}-{:?}.csv",
            std::process::id(),
            std::thread::current().id()
        ));
        write_loss_history(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "iteration,loss,lr\n0,0.5,0.001\n1,0.25,0.001\n");
        std::fs::remove_file(&path).unwrap();
    }

    /// Test predictor that replays scripted grids and ignores its input.
    struct ScriptedOracle {
        classes: usize,
        window: usize,
        pool: usize,
        grids: Vec<AccdoaGrid>,
        calls: Cell<usize>,
    }

    impl ScriptedOracle {
        fn constant(classes: usize, window: usize, pool: usize, v: Vec3) -> ScriptedOracle {
            let mut grid = AccdoaGrid::zeros(classes, window / pool);
            for c in 0..classes {
                for t in 0..window / pool {
                    grid.set_vec(c, t, v);
                }
            }
            ScriptedOracle { classes, window, pool, grids: vec![grid], calls: Cell::new(0) }
        }
    }

    impl Predictor for ScriptedOracle {
        fn classes(&self) -> usize {
            self.classes
        }

        fn window_frames(&self) -> usize {
            self.window
        }

        fn temporal_pool(&self) -> usize {
            self.pool
        }

        fn predict(&self, _window: &FeatureTensor) -> Result<AccdoaGrid> {
            let i = self.calls.get();
            self.calls.set(i + 1);
            Ok(self.grids[i.min(self.grids.len() - 1)].clone())
        }
    }

    fn uniform_grid(classes: usize, frames: usize, v: Vec3) -> AccdoaGrid {
        let mut g = AccdoaGrid::zeros(classes, frames);
        for c in 0..classes {
            for t in 0..frames {
                g.set_vec(c, t, v);
            }
        }
        g
    }

    #[test]
    fn overlapped_windows_average_and_edges_pass_through() {
        // 12 frames, windows of 8 every 4: outputs u on [0,8), v on [4,12).
        let u = Vec3::new(0.25, -0.5, 0.125);
        let v = Vec3::new(0.75, 0.5, -0.375);
        let oracle = ScriptedOracle {
            classes: 1,
            window: 8,
            pool: 1,
            grids: vec![uniform_grid(1, 8, u), uniform_grid(1, 8, v)],
            calls: Cell::new(0),
        };
        let features = FeatureTensor::zeros(PLANES, 4, 12);
        let cfg = InferConfig {
            segment_frames: 8,
            shift_frames: 4,
            ..InferConfig::default()
        };
        let out = infer_features(&oracle, &features, &cfg).unwrap();
        assert_eq!(out.frames(), 12);
        let mid = Vec3::new(0.5, 0.0, -0.125);
        for t in 0..12 {
            let expect = if t < 4 {
                u
            } else if t < 8 {
                mid
            } else {
                v
            };
            assert_eq!(out.vec_at(0, t), expect, "frame {t}");
        }
    }

    #[test]
    fn constant_oracle_survives_any_overlap_exactly() {
        let v = Vec3::new(0.25, -0.125, 0.5);
        let oracle = ScriptedOracle::constant(2, 8, 2, v);
        let features = FeatureTensor::zeros(PLANES, 4, 20);
        let cfg = InferConfig { segment_frames: 8, shift_frames: 3, ..InferConfig::default() };
        let out = infer_features(&oracle, &features, &cfg).unwrap();
        assert_eq!(out.frames(), 10);
        for c in 0..2 {
            for t in 0..10 {
                assert_eq!(out.vec_at(c, t), v);
            }
        }
    }

    #[test]
    fn no_overlap_concatenates_window_outputs() {
        let a = Vec3::new(0.25, 0.0, 0.0);
        let b = Vec3::new(0.0, 0.5, 0.0);
        let c = Vec3::new(0.0, 0.0, 0.75);
        let oracle = ScriptedOracle {
            classes: 1,
            window: 8,
            pool: 2,
            grids: vec![uniform_grid(1, 4, a), uniform_grid(1, 4, b), uniform_grid(1, 4, c)],
            calls: Cell::new(0),
        };
        let features = FeatureTensor::zeros(PLANES, 4, 24);
        let cfg = InferConfig { segment_frames: 8, shift_frames: 8, ..InferConfig::default() };
        let out = infer_features(&oracle, &features, &cfg).unwrap();
        assert_eq!(out.frames(), 12);
        for t in 0..12 {
            let expect = [a, b, c][t / 4];
            assert_eq!(out.vec_at(0, t), expect, "frame {t}");
        }
    }

    #[test]
    fn averaging_is_a_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut grids = Vec::new();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for _ in 0..6 {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            for (axis, r) in [v.x, v.y, v.z].into_iter().enumerate() {
                lo[axis] = lo[axis].min(r);
                hi[axis] = hi[axis].max(r);
            }
            grids.push(uniform_grid(1, 4, v));
        }
        let oracle = ScriptedOracle { classes: 1, window: 8, pool: 2, grids, calls: Cell::new(0) };
        let features = FeatureTensor::zeros(PLANES, 4, 22);
        let cfg = InferConfig { segment_frames: 8, shift_frames: 3, ..InferConfig::default() };
        let out = infer_features(&oracle, &features, &cfg).unwrap();
        for t in 0..out.frames() {
            let v = out.vec_at(0, t);
            for (axis, r) in [v.x, v.y, v.z].into_iter().enumerate() {
                assert!(r >= lo[axis] - 1e-12 && r <= hi[axis] + 1e-12);
            }
        }
    }

    #[test]
    fn model_predictor_single_window_matches_forward() {
        let model = tiny_model(HeadVariant::Accdoa);
        let params = Parameters::init(&model, 61);
        let ex = tiny_example(&model, 62);
        let (out, _) = forward(&model, &params, &ex.features).unwrap();
        let predictor = ModelPredictor { config: &model, params: &params };
        let cfg = InferConfig {
            segment_frames: 8,
            shift_frames: 8,
            ..InferConfig::default()
        };
        let grid = infer_features(&predictor, &ex.features, &cfg).unwrap();
        assert_eq!(grid, out.to_grid());
    }

    #[test]
    fn short_clips_are_padded_and_trimmed() {
        let v = Vec3::new(0.5, 0.25, -0.25);
        let oracle = ScriptedOracle::constant(1, 8, 2, v);
        let cfg = InferConfig { segment_frames: 8, shift_frames: 4, ..InferConfig::default() };
        // 2000 samples -> 7 STFT frames -> 3 grid frames at pool 2.
        let clip = FoaClip::silent(2000, SAMPLE_RATE);
        let out = infer_clip(&oracle, &clip, &cfg).unwrap();
        assert_eq!(out.frames(), 3);
        for t in 0..3 {
            assert_eq!(out.vec_at(0, t), v);
        }
        // Shorter than one STFT window: nothing to report on.
        let stub = FoaClip::silent(100, SAMPLE_RATE);
        let oracle = ScriptedOracle::constant(1, 8, 2, v);
        let out = infer_clip(&oracle, &stub, &cfg).unwrap();
        assert_eq!(out.frames(), 0);
    }

    fn quick_scene(seed: u64) -> SceneInstance {
        let spec = SceneSpec {
            class_count: 2,
            event_rate_hz: 2.0,
            seed,
            ..SceneSpec::default()
        };
        render_scene(&spec).unwrap()
    }

    #[test]
    fn identity_rotation_averaging_matches_plain_inference() {
        let scene = quick_scene(71);
        let p = IntensityPredictor { classes: 2, window_frames: 128, pool: 8 };
        let cfg = InferConfig { tta_rotations: vec![0], ..InferConfig::default() };
        let plain = infer_clip(&p, &scene.clip, &cfg).unwrap();
        let averaged = infer_with_tta(&p, &scene.clip, &cfg).unwrap();
        assert_eq!(plain.values(), averaged.values());
    }

    #[test]
    fn equivariant_predictor_is_a_fixed_point_of_rotation_averaging() {
        let scene = quick_scene(72);
        let p = IntensityPredictor { classes: 2, window_frames: 128, pool: 8 };
        let cfg = InferConfig {
            tta_rotations: (0..16).collect(),
            ..InferConfig::default()
        };
        let plain = infer_clip(&p, &scene.clip, &cfg).unwrap();
        let averaged = infer_with_tta(&p, &scene.clip, &cfg).unwrap();
        for (a, b) in plain.values().iter().zip(averaged.values()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn two_rotation_averaging_is_the_arithmetic_mean() {
        let v = Vec3::new(0.5, 0.25, 0.125);
        let oracle = ScriptedOracle::constant(1, 8, 2, v);
        let cfg = InferConfig {
            segment_frames: 8,
            shift_frames: 8,
            tta_rotations: vec![0, 4],
            ..InferConfig::default()
        };
        let clip = FoaClip::silent(WINDOW + 7 * HOP, SAMPLE_RATE);
        let out = infer_with_tta(&oracle, &clip, &cfg).unwrap();
        let catalog = rotation_catalog();
        let expect = catalog[0]
            .invert_vec(v)
            .add(catalog[4].invert_vec(v))
            .scale(0.5);
        for t in 0..out.frames() {
            assert_eq!(out.vec_at(0, t), expect);
        }
    }

    #[test]
    fn run_length_event_extraction() {
        let d = sph_to_cart(30.0, 10.0).unwrap();
        let mut grid = AccdoaGrid::zeros(2, 10);
        for t in 3..=7 {
            grid.set_vec(0, t, d.vec());
        }
        let events = grid_to_events(&grid, 0.5).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!((events[0].class, events[0].onset, events[0].offset()), (0, 3, 7));
        assert_eq!(events[0].doas.len(), 5);
        grid.set_vec(0, 5, Vec3::ZERO);
        let events = grid_to_events(&grid, 0.5).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!((events[0].onset, events[0].offset()), (3, 4));
        assert_eq!((events[1].onset, events[1].offset()), (6, 7));
        let empty = grid_to_events(&AccdoaGrid::zeros(2, 10), 0.5).unwrap();
        assert!(empty.is_empty());
        assert!(grid_to_events(&grid, 1.5).is_err());
    }

    #[test]
    fn event_rows_land_on_the_hundred_ms_grid() {
        // 16 network frames at pool 8 (80 ms): centers 40, 120, ..., 1240 ms.
        let doas: Vec<Doa> = (0..16)
            .map(|t| sph_to_cart(t as f64, 0.0).unwrap())
            .collect();
        let events = vec![DecodedEvent { class: 0, onset: 0, doas: doas.clone() }];
        let rows = events_to_rows(&events, 8, 0);
        assert_eq!(rows.len(), 13);
        assert_eq!(
            rows.iter().map(|r| r.frame).collect::<Vec<_>>(),
            (0..13).collect::<Vec<_>>()
        );
        // Frames 2, 6, and 10 each catch two network frames; the nearer
        // center (the later frame: 280, 680, 1080 ms) must win.
        for (out_frame, src) in [(2usize, 3usize), (6, 8), (10, 13)] {
            let row = rows.iter().find(|r| r.frame == out_frame).unwrap();
            assert_eq!(row.doa, doas[src], "output frame {out_frame}");
        }
        // Pool 10 centers the network grid exactly on the output grid.
        let events = vec![DecodedEvent { class: 1, onset: 2, doas: doas[..3].to_vec() }];
        let rows = events_to_rows(&events, 10, 5);
        assert_eq!(
            rows.iter().map(|r| (r.frame, r.class)).collect::<Vec<_>>(),
            vec![(7, 1), (8, 1), (9, 1)]
        );
    }

    #[test]
    fn pooled_labels_follow_event_timing() {
        let spec = SceneSpec::default();
        let model = ModelConfig { classes: spec.class_count, ..ModelConfig::default() };
        let d = sph_to_cart(40.0, -10.0).unwrap();
        let event = SceneEvent {
            class: 3,
            onset_frames: 2,
            len_frames: 5,
            trajectory: crate::scene::Trajectory::Static(d),
            sample_seed: 1,
        };
        let labels = pooled_labels(&[event], &model);
        assert_eq!(labels.frames(), 16);
        // Active where the 80 ms frame center falls in [0.2 s, 0.7 s).
        for t in 0..16 {
            let expect = (2..=8).contains(&t);
            assert_eq!(labels.active(3, t), expect, "frame {t}");
            if expect {
                assert_eq!(labels.doa(3, t).unwrap(), d);
            }
        }
    }

    #[test]
    fn on_the_fly_training_with_augmentation_runs_and_repeats() {
        let scene = SceneSpec {
            duration_s: 0.33,
            class_count: 2,
            event_rate_hz: 3.0,
            event_len_range_s: [0.1, 0.3],
            ..SceneSpec::default()
        };
        let model = ModelConfig {
            frames: 32,
            conv_blocks: vec![
                ConvBlockConfig { channels: 2, kernel: 3, pool: [8, 2] },
                ConvBlockConfig { channels: 2, kernel: 3, pool: [8, 2] },
            ],
            hidden: 4,
            classes: 2,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            batch_size: 2,
            max_iters: 2,
            seed: 77,
            ..TrainConfig::default()
        };
        let a = train(&model, &tc, &scene).unwrap();
        let b = train(&model, &tc, &scene).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.values(), b.params.values());
        assert!(a.history.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn comparison_is_deterministic_and_orders_parameter_counts() {
        let cc = CompareConfig {
            model: ModelConfig {
                conv_blocks: vec![
                    ConvBlockConfig { channels: 4, kernel: 3, pool: [8, 4] },
                    ConvBlockConfig { channels: 4, kernel: 3, pool: [8, 2] },
                ],
                hidden: 8,
                classes: 2,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch_size: 2,
                max_iters: 3,
                seed: 101,
                ..TrainConfig::default()
            },
            scene: SceneSpec { class_count: 2, event_rate_hz: 2.0, seed: 50, ..SceneSpec::default() },
            infer: InferConfig::default(),
            train_scenes: 3,
            test_scenes: 2,
        };
        let a = run_comparison(&cc).unwrap();
        let b = run_comparison(&cc).unwrap();
        assert!(a.trunk_hashes_match);
        assert!(a.accdoa.param_count < a.two_branch.param_count);
        assert_eq!(a.accdoa.history, b.accdoa.history);
        assert_eq!(a.two_branch.history, b.two_branch.history);
        assert_eq!(a.accdoa.params.values(), b.accdoa.params.values());
        assert_eq!(a.accdoa.report.to_csv_row(), b.accdoa.report.to_csv_row());
        assert_eq!(a.two_branch.report.to_csv_row(), b.two_branch.report.to_csv_row());
        // Shared trunk initialization across the two heads.
        let trunk_len: usize = a
            .accdoa
            .config
            .layout()
            .iter()
            .filter(|e| e.trunk)
            .map(|e| e.len())
            .sum();
        let pa = Parameters::init(&a.accdoa.config, cc.train.seed);
        let pt = Parameters::init(&a.two_branch.config, cc.train.seed);
        assert_eq!(pa.values()[..trunk_len], pt.values()[..trunk_len]);
    }
}
