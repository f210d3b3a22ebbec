//! A small convolutional-recurrent network with interchangeable output
//! heads and exact hand-written gradients.
//!
//! The trunk maps a feature tensor `(planes, bins, frames)` through conv
//! blocks (convolution, ReLU, average pooling), collapses the remaining
//! frequency axis into the channel axis, and runs one forward GRU over
//! time to produce an embedding per pooled frame. On top of that sit
//! either a single affine layer emitting 3 values per class and frame, or
//! two parallel two-layer stacks emitting activity probabilities and
//! direction vectors separately.
//!
//! Parameters live in one flat `f64` vector with a named layout, so the
//! optimizer, checkpoints, and per-layer freezing all address the same
//! storage. Both head variants draw their trunk initialization from the
//! same RNG stream: two models that differ only in head start from
//! bit-identical trunks.

mod checkpoint;
mod layers;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, trunk_hash};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accdoa::{AccdoaGrid, HeadVariant, TwoBranchOutput};
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use layers::*;

/// One trunk stage: `channels` square-kernel filters, ReLU, then average
/// pooling by `pool = [freq, time]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub channels: usize,
    pub kernel: usize,
    pub pool: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input feature planes (amplitudes + phase differences).
    pub planes: usize,
    /// Input frequency bins.
    pub bins: usize,
    /// Input frames per training window.
    pub frames: usize,
    pub conv_blocks: Vec<ConvBlockConfig>,
    /// Embedding width of the recurrent layer.
    pub hidden: usize,
    pub head: HeadVariant,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            planes: crate::features::PLANES,
            bins: crate::features::BINS,
            frames: 128,
            conv_blocks: vec![
                ConvBlockConfig { channels: 16, kernel: 3, pool: [4, 2] },
                ConvBlockConfig { channels: 32, kernel: 3, pool: [4, 2] },
                ConvBlockConfig { channels: 64, kernel: 3, pool: [4, 2] },
            ],
            hidden: 64,
            head: HeadVariant::Accdoa,
            classes: 14,
        }
    }
}

/// One named view into the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// True for conv/GRU parameters shared by both head variants.
    pub trunk: bool,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.planes == 0 || self.bins == 0 || self.frames == 0 {
            return bad(format!(
                "input dims {}x{}x{} must be positive",
                self.planes, self.bins, self.frames
            ));
        }
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if self.classes == 0 {
            return bad("classes must be positive".into());
        }
        let (mut f, mut t) = (self.bins, self.frames);
        for (i, blk) in self.conv_blocks.iter().enumerate() {
            if blk.channels == 0 {
                return bad(format!("block {i}: zero channels"));
            }
            if blk.kernel == 0 || blk.kernel % 2 == 0 {
                return bad(format!(
                    "block {i}: kernel {} must be odd for same padding",
                    blk.kernel
                ));
            }
            if blk.pool[0] == 0 || blk.pool[1] == 0 {
                return bad(format!("block {i}: zero pool"));
            }
            f /= blk.pool[0];
            t /= blk.pool[1];
            if f == 0 || t == 0 {
                return bad(format!(
                    "block {i}: pooling {}x{} exhausts the {}x{} input",
                    blk.pool[0], blk.pool[1], self.bins, self.frames
                ));
            }
        }
        Ok(())
    }

    /// Map dims after each stage, starting with the raw input.
    fn stage_dims(&self) -> Vec<(usize, usize, usize)> {
        let mut dims = vec![(self.planes, self.bins, self.frames)];
        for blk in &self.conv_blocks {
            let (_, f, t) = *dims.last().unwrap();
            dims.push((blk.channels, f / blk.pool[0], t / blk.pool[1]));
        }
        dims
    }

    /// Width of the sequence fed to the GRU (channels times leftover bins).
    pub fn embed_input_dim(&self) -> usize {
        let (c, f, _) = *self.stage_dims().last().unwrap();
        c * f
    }

    /// Output frames after all temporal pooling.
    pub fn out_frames(&self) -> usize {
        self.stage_dims().last().unwrap().2
    }

    /// Ratio of input frames to output frames (the product of the blocks'
    /// time pools). Label targets must be rasterized at this granularity.
    pub fn temporal_pool(&self) -> usize {
        self.conv_blocks.iter().map(|b| b.pool[1]).product()
    }

    /// Named parameter views in storage order.
    pub fn layout(&self) -> Vec<LayoutEntry> {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, trunk: bool| {
            let len: usize = shape.iter().product();
            entries.push(LayoutEntry { name, shape, offset, trunk });
            offset += len;
        };
        let mut in_ch = self.planes;
        for (i, blk) in self.conv_blocks.iter().enumerate() {
            push(
                format!("block{i}.w"),
                vec![blk.channels, in_ch, blk.kernel, blk.kernel],
                true,
            );
            push(format!("block{i}.b"), vec![blk.channels], true);
            in_ch = blk.channels;
        }
        let (d, k) = (self.embed_input_dim(), self.hidden);
        for gate in ["r", "z", "n"] {
            push(format!("gru.w{gate}"), vec![k, d], true);
            push(format!("gru.u{gate}"), vec![k, k], true);
            push(format!("gru.b{gate}"), vec![k], true);
        }
        let c = self.classes;
        match self.head {
            HeadVariant::Accdoa => {
                push("head.w".into(), vec![3 * c, k], false);
                push("head.b".into(), vec![3 * c], false);
            }
            HeadVariant::TwoBranch => {
                push("head.sed1.w".into(), vec![k, k], false);
                push("head.sed1.b".into(), vec![k], false);
                push("head.sed2.w".into(), vec![c, k], false);
                push("head.sed2.b".into(), vec![c], false);
                push("head.doa1.w".into(), vec![k, k], false);
                push("head.doa1.b".into(), vec![k], false);
                push("head.doa2.w".into(), vec![3 * c, k], false);
                push("head.doa2.b".into(), vec![3 * c], false);
            }
        }
        entries
    }

    pub fn count_parameters(&self) -> usize {
        self.layout().iter().map(|e| e.len()).sum()
    }
}

/// Flat parameter storage; the config's layout gives it structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    values: Vec<f64>,
}

impl Parameters {
    pub fn zeros(cfg: &ModelConfig) -> Parameters {
        Parameters {
            values: vec![0.0; cfg.count_parameters()],
        }
    }

    /// Seeded He-uniform initialization: weights drawn from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero. Trunk weights
    /// come from one RNG stream and head weights from another, so configs
    /// differing only in head share the exact trunk draw.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Parameters {
        let mut trunk_rng = ChaCha8Rng::seed_from_u64(seed);
        trunk_rng.set_stream(0);
        let mut head_rng = ChaCha8Rng::seed_from_u64(seed);
        head_rng.set_stream(1);
        let mut values = vec![0.0; cfg.count_parameters()];
        for entry in cfg.layout() {
            if entry.shape.len() < 2 {
                continue; // biases stay zero and consume no randomness
            }
            let fan_in: usize = entry.shape[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            let rng = if entry.trunk { &mut trunk_rng } else { &mut head_rng };
            for v in &mut values[entry.offset..entry.offset + entry.len()] {
                *v = rng.random_range(-limit..limit);
            }
        }
        Parameters { values }
    }

    pub fn from_values(cfg: &ModelConfig, values: Vec<f64>) -> Result<Parameters> {
        if values.len() != cfg.count_parameters() {
            return Err(Error::Shape(format!(
                "{} values for a {}-parameter model",
                values.len(),
                cfg.count_parameters()
            )));
        }
        Ok(Parameters { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Network output in either representation.
#[derive(Debug, Clone)]
pub enum Output {
    Accdoa(AccdoaGrid),
    TwoBranch(TwoBranchOutput),
}

impl Output {
    /// View both variants as one vector field (the two-branch output is
    /// folded to activity-scaled unit vectors).
    pub fn to_grid(&self) -> AccdoaGrid {
        match self {
            Output::Accdoa(g) => g.clone(),
            Output::TwoBranch(o) => o.to_accdoa_grid(),
        }
    }
}

/// Loss gradient with respect to the network output, mirroring [`Output`].
/// For the two-branch head the activity part is taken with respect to the
/// post-sigmoid probabilities (as the loss functions report it).
#[derive(Debug, Clone)]
pub enum OutputGrad {
    Accdoa(AccdoaGrid),
    TwoBranch { sed: Vec<f64>, doa: AccdoaGrid },
}

/// GRU state sequence, hidden-major.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub hidden: usize,
    pub frames: usize,
    /// `data[k * frames + t]`.
    pub data: Vec<f64>,
}

struct BlockCache {
    input: Vec<f64>,
    in_dims: (usize, usize, usize),
    /// Post-ReLU, pre-pool map (also the ReLU mask).
    relu: Vec<f64>,
    out_dims: (usize, usize, usize),
}

enum HeadCache {
    Accdoa,
    TwoBranch {
        sed_hidden: Vec<f64>,
        doa_hidden: Vec<f64>,
        /// Probabilities in `(frame, class)` order.
        sed_prob: Vec<f64>,
    },
}

/// Intermediates retained by [`forward`] for the matching [`backward`].
pub struct Cache {
    blocks: Vec<BlockCache>,
    x_seq: Vec<f64>,
    h_seq: Vec<f64>,
    gru: GruCache,
    head: HeadCache,
}

impl Cache {
    /// The embedding sequence the head consumed.
    pub fn embedding(&self, cfg: &ModelConfig) -> Embedding {
        let (k, t_len) = (cfg.hidden, cfg.out_frames());
        let mut data = vec![0.0; k * t_len];
        for t in 0..t_len {
            for i in 0..k {
                data[i * t_len + t] = self.h_seq[t * k + i];
            }
        }
        Embedding { hidden: k, frames: t_len, data }
    }
}

fn entry_slice<'a>(
    values: &'a [f64],
    layout: &[LayoutEntry],
    name: &str,
) -> &'a [f64] {
    let e = layout
        .iter()
        .find(|e| e.name == name)
        .unwrap_or_else(|| panic!("no layout entry {name}"));
    &values[e.offset..e.offset + e.len()]
}

fn grad_slice<'a>(
    grads: &'a mut [f64],
    layout: &[LayoutEntry],
    name: &str,
) -> &'a mut [f64] {
    let e = layout
        .iter()
        .find(|e| e.name == name)
        .unwrap_or_else(|| panic!("no layout entry {name}"));
    &mut grads[e.offset..e.offset + e.len()]
}

fn gru_views<'a>(values: &'a [f64], layout: &[LayoutEntry]) -> GruViews<'a> {
    GruViews {
        wr: entry_slice(values, layout, "gru.wr"),
        ur: entry_slice(values, layout, "gru.ur"),
        br: entry_slice(values, layout, "gru.br"),
        wz: entry_slice(values, layout, "gru.wz"),
        uz: entry_slice(values, layout, "gru.uz"),
        bz: entry_slice(values, layout, "gru.bz"),
        wn: entry_slice(values, layout, "gru.wn"),
        un: entry_slice(values, layout, "gru.un"),
        bn: entry_slice(values, layout, "gru.bn"),
    }
}

/// Run the network. The cache holds every intermediate [`backward`] needs;
/// drop it when only the output matters.
/// Fixed, parameter-free input map applied before the first conv block.
///
/// Spectral magnitudes span orders of magnitude, which a small net with no
/// normalization layers cannot absorb, and the directional cue lives in
/// per-bin products of a dipole magnitude with the cosine of its phase
/// difference against the omni channel; a single convolution cannot form
/// products, and pooling destroys the per-bin pairing. So for the
/// seven-plane layout the feature extractor emits (one omni magnitude,
/// three dipole magnitudes, three phase-difference planes), magnitudes are
/// log-squashed and each phase plane is replaced by
/// `dipole * cos(phase) / (1 + omni)`, a bounded per-bin quantity whose
/// sign and size carry the direction component on that axis. Any other
/// plane count gets a uniform sign-preserving log squash. Gradients are
/// only taken with respect to parameters, so backward needs no
/// counterpart.
fn input_stage(x: &FeatureTensor) -> Vec<f64> {
    let mut out = x.data().to_vec();
    if x.planes() == 7 {
        let cells = x.bins() * x.frames();
        for i in 0..cells {
            let omni = out[i];
            for axis in 0..3 {
                let amp = out[(1 + axis) * cells + i];
                let ipd = out[(4 + axis) * cells + i];
                out[(4 + axis) * cells + i] = amp * ipd.cos() / (1.0 + omni);
            }
        }
        for v in &mut out[..4 * cells] {
            *v = v.ln_1p();
        }
    } else {
        for v in &mut out {
            *v = v.signum() * v.abs().ln_1p();
        }
    }
    out
}

pub fn forward(
    cfg: &ModelConfig,
    params: &Parameters,
    x: &FeatureTensor,
) -> Result<(Output, Cache)> {
    cfg.validate()?;
    if params.len() != cfg.count_parameters() {
        return Err(Error::Shape(format!(
            "parameter vector has {} values, config wants {}",
            params.len(),
            cfg.count_parameters()
        )));
    }
    if (x.planes(), x.bins(), x.frames()) != (cfg.planes, cfg.bins, cfg.frames) {
        return Err(Error::Shape(format!(
            "input {}x{}x{} does not match configured {}x{}x{}",
            x.planes(),
            x.bins(),
            x.frames(),
            cfg.planes,
            cfg.bins,
            cfg.frames
        )));
    }
    let layout = cfg.layout();
    let values = params.values();

    let mut cur = input_stage(x);
    let mut dims = (cfg.planes, cfg.bins, cfg.frames);
    let mut blocks = Vec::with_capacity(cfg.conv_blocks.len());
    for (i, blk) in cfg.conv_blocks.iter().enumerate() {
        let w = entry_slice(values, &layout, &format!("block{i}.w"));
        let b = entry_slice(values, &layout, &format!("block{i}.b"));
        let (ci, fi, ti) = dims;
        let mut conv = conv_forward(&cur, ci, fi, ti, w, b, blk.channels, blk.kernel);
        relu_forward(&mut conv);
        let (pooled, fo, to) =
            avg_pool_forward(&conv, blk.channels, fi, ti, blk.pool[0], blk.pool[1]);
        blocks.push(BlockCache {
            input: cur,
            in_dims: dims,
            relu: conv,
            out_dims: (blk.channels, fo, to),
        });
        cur = pooled;
        dims = (blk.channels, fo, to);
    }

    // Collapse (channels, bins) into one feature axis per frame.
    let (ch, fb, tb) = dims;
    let d = ch * fb;
    let mut x_seq = vec![0.0; tb * d];
    for c in 0..ch {
        for f in 0..fb {
            let row = (c * fb + f) * tb;
            for t in 0..tb {
                x_seq[t * d + c * fb + f] = cur[row + t];
            }
        }
    }

    let k = cfg.hidden;
    let (h_seq, gru_cache) = gru_forward(&x_seq, tb, d, k, &gru_views(values, &layout));

    let c = cfg.classes;
    let (output, head_cache) = match cfg.head {
        HeadVariant::Accdoa => {
            let w = entry_slice(values, &layout, "head.w");
            let b = entry_slice(values, &layout, "head.b");
            let y = affine_forward(&h_seq, tb, k, w, b, 3 * c);
            let mut grid = AccdoaGrid::zeros(c, tb);
            let gv = grid.values_mut();
            for t in 0..tb {
                for cc in 0..c {
                    for a in 0..3 {
                        gv[(cc * tb + t) * 3 + a] = y[t * 3 * c + 3 * cc + a];
                    }
                }
            }
            (Output::Accdoa(grid), HeadCache::Accdoa)
        }
        HeadVariant::TwoBranch => {
            let run_branch = |w1: &str, b1: &str| -> Vec<f64> {
                let mut hid = affine_forward(
                    &h_seq,
                    tb,
                    k,
                    entry_slice(values, &layout, w1),
                    entry_slice(values, &layout, b1),
                    k,
                );
                relu_forward(&mut hid);
                hid
            };
            let sed_hidden = run_branch("head.sed1.w", "head.sed1.b");
            let doa_hidden = run_branch("head.doa1.w", "head.doa1.b");
            let sed_lin = affine_forward(
                &sed_hidden,
                tb,
                k,
                entry_slice(values, &layout, "head.sed2.w"),
                entry_slice(values, &layout, "head.sed2.b"),
                c,
            );
            let doa_lin = affine_forward(
                &doa_hidden,
                tb,
                k,
                entry_slice(values, &layout, "head.doa2.w"),
                entry_slice(values, &layout, "head.doa2.b"),
                3 * c,
            );
            let sed_prob: Vec<f64> = sed_lin.iter().map(|&v| sigmoid(v)).collect();
            let mut sed = vec![0.0; c * tb];
            for t in 0..tb {
                for cc in 0..c {
                    sed[cc * tb + t] = sed_prob[t * c + cc];
                }
            }
            let mut grid = AccdoaGrid::zeros(c, tb);
            let gv = grid.values_mut();
            for t in 0..tb {
                for cc in 0..c {
                    for a in 0..3 {
                        gv[(cc * tb + t) * 3 + a] = doa_lin[t * 3 * c + 3 * cc + a];
                    }
                }
            }
            (
                Output::TwoBranch(TwoBranchOutput { sed, doa: grid }),
                HeadCache::TwoBranch { sed_hidden, doa_hidden, sed_prob },
            )
        }
    };

    Ok((
        output,
        Cache { blocks, x_seq, h_seq, gru: gru_cache, head: head_cache },
    ))
}

/// Forward a set of independent samples. There is no cross-sample coupling
/// anywhere in the network, so this is exactly a per-sample map; it exists
/// so callers can treat a batch as one unit.
pub fn forward_batch(
    cfg: &ModelConfig,
    params: &Parameters,
    xs: &[FeatureTensor],
) -> Result<Vec<Output>> {
    xs.iter().map(|x| forward(cfg, params, x).map(|(o, _)| o)).collect()
}

/// Exact reverse-mode gradient of a scalar loss with respect to every
/// parameter, given the loss gradient at the network output. The cache must
/// come from a [`forward`] with the same config and parameters.
pub fn backward(
    cfg: &ModelConfig,
    params: &Parameters,
    cache: &Cache,
    upstream: &OutputGrad,
) -> Result<Vec<f64>> {
    let layout = cfg.layout();
    let values = params.values();
    let mut grads = vec![0.0; values.len()];
    let (k, c, tb) = (cfg.hidden, cfg.classes, cfg.out_frames());
    let d = cfg.embed_input_dim();

    let dh_seq = match (&cfg.head, upstream, &cache.head) {
        (HeadVariant::Accdoa, OutputGrad::Accdoa(g), HeadCache::Accdoa) => {
            if (g.classes(), g.frames()) != (c, tb) {
                return Err(Error::Shape(format!(
                    "upstream grid {}x{} does not match head {c}x{tb}",
                    g.classes(),
                    g.frames()
                )));
            }
            let mut dy = vec![0.0; tb * 3 * c];
            let gv = g.values();
            for t in 0..tb {
                for cc in 0..c {
                    for a in 0..3 {
                        dy[t * 3 * c + 3 * cc + a] = gv[(cc * tb + t) * 3 + a];
                    }
                }
            }
            let w = entry_slice(values, &layout, "head.w");
            let (dh, dw, db) = affine_backward(&cache.h_seq, tb, k, w, 3 * c, &dy);
            grad_slice(&mut grads, &layout, "head.w").copy_from_slice(&dw);
            grad_slice(&mut grads, &layout, "head.b").copy_from_slice(&db);
            dh
        }
        (
            HeadVariant::TwoBranch,
            OutputGrad::TwoBranch { sed, doa },
            HeadCache::TwoBranch { sed_hidden, doa_hidden, sed_prob },
        ) => {
            if sed.len() != c * tb || (doa.classes(), doa.frames()) != (c, tb) {
                return Err(Error::Shape(
                    "upstream two-branch gradient does not match head dims".into(),
                ));
            }
            // Activity: fold the sigmoid derivative into the upstream
            // probability gradient, then walk the two affine layers.
            let mut dsed_lin = vec![0.0; tb * c];
            for t in 0..tb {
                for cc in 0..c {
                    let p = sed_prob[t * c + cc];
                    dsed_lin[t * c + cc] = sed[cc * tb + t] * p * (1.0 - p);
                }
            }
            let w2 = entry_slice(values, &layout, "head.sed2.w");
            let (mut dsed_hidden, dw2, db2) =
                affine_backward(sed_hidden, tb, k, w2, c, &dsed_lin);
            grad_slice(&mut grads, &layout, "head.sed2.w").copy_from_slice(&dw2);
            grad_slice(&mut grads, &layout, "head.sed2.b").copy_from_slice(&db2);
            relu_backward(sed_hidden, &mut dsed_hidden);
            let w1 = entry_slice(values, &layout, "head.sed1.w");
            let (dh_sed, dw1, db1) = affine_backward(&cache.h_seq, tb, k, w1, k, &dsed_hidden);
            grad_slice(&mut grads, &layout, "head.sed1.w").copy_from_slice(&dw1);
            grad_slice(&mut grads, &layout, "head.sed1.b").copy_from_slice(&db1);

            let mut ddoa_lin = vec![0.0; tb * 3 * c];
            let gv = doa.values();
            for t in 0..tb {
                for cc in 0..c {
                    for a in 0..3 {
                        ddoa_lin[t * 3 * c + 3 * cc + a] = gv[(cc * tb + t) * 3 + a];
                    }
                }
            }
            let w2 = entry_slice(values, &layout, "head.doa2.w");
            let (mut ddoa_hidden, dw2, db2) =
                affine_backward(doa_hidden, tb, k, w2, 3 * c, &ddoa_lin);
            grad_slice(&mut grads, &layout, "head.doa2.w").copy_from_slice(&dw2);
            grad_slice(&mut grads, &layout, "head.doa2.b").copy_from_slice(&db2);
            relu_backward(doa_hidden, &mut ddoa_hidden);
            let w1 = entry_slice(values, &layout, "head.doa1.w");
            let (dh_doa, dw1, db1) = affine_backward(&cache.h_seq, tb, k, w1, k, &ddoa_hidden);
            grad_slice(&mut grads, &layout, "head.doa1.w").copy_from_slice(&dw1);
            grad_slice(&mut grads, &layout, "head.doa1.b").copy_from_slice(&db1);

            dh_sed.iter().zip(&dh_doa).map(|(a, b)| a + b).collect()
        }
        _ => {
            return Err(Error::Shape(
                "upstream gradient variant does not match the configured head".into(),
            ))
        }
    };

    let (dx_seq, g) = gru_backward(
        &cache.x_seq,
        &cache.h_seq,
        &cache.gru,
        tb,
        d,
        k,
        &gru_views(values, &layout),
        &dh_seq,
    );
    for (name, src) in [
        ("gru.wr", &g.dwr),
        ("gru.ur", &g.dur),
        ("gru.br", &g.dbr),
        ("gru.wz", &g.dwz),
        ("gru.uz", &g.duz),
        ("gru.bz", &g.dbz),
        ("gru.wn", &g.dwn),
        ("gru.un", &g.dun),
        ("gru.bn", &g.dbn),
    ] {
        grad_slice(&mut grads, &layout, name).copy_from_slice(src);
    }

    // Undo the collapse, then walk the conv blocks in reverse.
    let (ch, fb, _) = *cfg.stage_dims().last().unwrap();
    let mut dmap = vec![0.0; ch * fb * tb];
    for cc in 0..ch {
        for f in 0..fb {
            let row = (cc * fb + f) * tb;
            for t in 0..tb {
                dmap[row + t] = dx_seq[t * d + cc * fb + f];
            }
        }
    }
    for (i, blk) in cfg.conv_blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[i];
        let (ci, fi, ti) = bc.in_dims;
        let (co, fo, to) = bc.out_dims;
        let mut drelu =
            avg_pool_backward(&dmap, co, fo, to, blk.pool[0], blk.pool[1], fi, ti);
        relu_backward(&bc.relu, &mut drelu);
        let w = entry_slice(values, &layout, &format!("block{i}.w"));
        let (dx, dw, db) = conv_backward(&bc.input, ci, fi, ti, w, co, blk.kernel, &drelu);
        grad_slice(&mut grads, &layout, &format!("block{i}.w")).copy_from_slice(&dw);
        grad_slice(&mut grads, &layout, &format!("block{i}.b")).copy_from_slice(&db);
        dmap = dx;
    }

    Ok(grads)
}
