//! Training-time augmentations: waveform-domain event mixing, sound-field
//! rotation, and multichannel time/frequency masking on feature tensors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accdoa::EventLabelTrack;
use crate::error::{Error, Result};
use crate::features::{FeatureTensor, AMPLITUDE_PLANES};
use crate::geometry::{rotation_catalog, FoaClip, FoaTransform};
use crate::scene::{rasterize_labels, transform_events, SceneInstance};

const EMDA_RETRIES: usize = 20;

/// Which augmentations run during training, and the masking widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub emda_enabled: bool,
    pub rotation_enabled: bool,
    pub specaug_enabled: bool,
    pub specaug: SpecAugmentConfig,
    /// Stream seed for augmentation randomness, kept separate from the
    /// scene stream so toggling augmentation does not reshuffle the data.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            emda_enabled: true,
            rotation_enabled: true,
            specaug_enabled: true,
            specaug: SpecAugmentConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecAugmentConfig {
    pub num_time_masks: usize,
    pub max_time_width: usize,
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
    pub num_channel_masks: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            num_time_masks: 2,
            max_time_width: 16,
            num_freq_masks: 2,
            max_freq_width: 12,
            num_channel_masks: 1,
        }
    }
}

/// The mixing knobs one EMDA draw fixes. Exposed so tests can pin them.
#[derive(Debug, Clone, Copy)]
pub struct EmdaParams {
    pub gain: f64,
    /// Delay applied to the mixed-in scene, in whole label frames.
    pub delay_frames: usize,
    /// Peaking equalizer; `None` leaves the spectrum untouched.
    pub eq: Option<PeakingEq>,
}

/// One second-order peaking equalizer section (constant-Q, boost or cut).
#[derive(Debug, Clone, Copy)]
pub struct PeakingEq {
    pub center_hz: f64,
    pub gain_db: f64,
    pub q: f64,
}

impl PeakingEq {
    /// Filter one channel (zero initial state, direct form I).
    fn run(&self, x: &[f64], sample_rate: u32) -> Vec<f64> {
        let a = 10f64.powf(self.gain_db / 40.0);
        let w0 = std::f64::consts::TAU * self.center_hz / sample_rate as f64;
        let alpha = w0.sin() / (2.0 * self.q);
        let (cw, a0) = (w0.cos(), 1.0 + alpha / a);
        let b = [(1.0 + alpha * a) / a0, -2.0 * cw / a0, (1.0 - alpha * a) / a0];
        let aa = [-2.0 * cw / a0, (1.0 - alpha / a) / a0];
        let mut out = Vec::with_capacity(x.len());
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for &xi in x {
            let yi = b[0] * xi + b[1] * x1 + b[2] * x2 - aa[0] * y1 - aa[1] * y2;
            x2 = x1;
            x1 = xi;
            y2 = y1;
            y1 = yi;
            out.push(yi);
        }
        out
    }

    fn apply(&self, clip: &FoaClip) -> FoaClip {
        let mut chans: [Vec<f64>; 4] = Default::default();
        for (ch, dst) in chans.iter_mut().enumerate() {
            *dst = self.run(clip.channel(ch), clip.sample_rate());
        }
        FoaClip::new(chans, clip.sample_rate()).expect("same shape as input")
    }
}

fn occupancy(labels: &EventLabelTrack) -> Vec<Vec<bool>> {
    let mut grid = vec![vec![false; labels.frames()]; labels.classes()];
    for (c, row) in grid.iter_mut().enumerate() {
        for (f, cell) in row.iter_mut().enumerate() {
            *cell = labels.active(c, f);
        }
    }
    grid
}

/// Mix scene `b` into scene `a` with fixed parameters. Returns `None` when
/// the delayed union would put the same class down twice in one frame or
/// exceed `max_overlap` (the caller redraws).
pub fn emda_with(
    a: &SceneInstance,
    b: &SceneInstance,
    max_overlap: usize,
    params: EmdaParams,
) -> Result<Option<SceneInstance>> {
    if a.clip.len() != b.clip.len() || a.clip.sample_rate() != b.clip.sample_rate() {
        return Err(Error::Shape(format!(
            "mismatched scenes: {} samples @ {} Hz vs {} samples @ {} Hz",
            a.clip.len(),
            a.clip.sample_rate(),
            b.clip.len(),
            b.clip.sample_rate()
        )));
    }
    if a.labels.classes() != b.labels.classes() {
        return Err(Error::Shape(format!(
            "mismatched class counts: {} vs {}",
            a.labels.classes(),
            b.labels.classes()
        )));
    }
    if params.gain == 0.0 {
        return Ok(Some(a.clone()));
    }

    let frames = a.labels.frames();
    let classes = a.labels.classes();
    // Shift b's events onto the delayed grid, dropping what falls off.
    let mut shifted = Vec::new();
    for ev in &b.events {
        let onset = ev.onset_frames + params.delay_frames;
        if onset >= frames {
            continue;
        }
        let mut moved = ev.clone();
        moved.onset_frames = onset;
        moved.len_frames = ev.len_frames.min(frames - onset);
        shifted.push(moved);
    }

    let occ_a = occupancy(&a.labels);
    for f in 0..frames {
        let mut total = (0..classes).filter(|&c| occ_a[c][f]).count();
        for ev in &shifted {
            if (ev.onset_frames..ev.onset_frames + ev.len_frames).contains(&f) {
                if occ_a[ev.class][f] {
                    return Ok(None); // same class twice in one frame
                }
                total += 1;
            }
        }
        if total > max_overlap {
            return Ok(None);
        }
    }

    let mut clip = a.clip.clone();
    let donor = match params.eq {
        Some(eq) => eq.apply(&b.clip),
        None => b.clip.clone(),
    };
    let hop_samples = crate::features::LABEL_HOP_S * a.clip.sample_rate() as f64;
    let delay_samples = (params.delay_frames as f64 * hop_samples).round() as usize;
    clip.mix_in(&donor, delay_samples, params.gain)?;

    let mut events = a.events.clone();
    events.extend(shifted);
    events.sort_by_key(|e| (e.onset_frames, e.class));
    let labels = rasterize_labels(&events, classes, crate::features::LABEL_HOP_S, frames);

    Ok(Some(SceneInstance {
        clip,
        labels,
        events,
        snr_db: a.snr_db,
        // Bookkeeping only: the EQ reshapes b's spectrum, so these are the
        // pre-filter stem energies, not an exact decomposition of the mix.
        signal_energy: a.signal_energy + params.gain * params.gain * b.signal_energy,
        noise_energy: a.noise_energy + params.gain * params.gain * b.noise_energy,
    }))
}

/// Event mixing: overlay a gained, delayed, equalized copy of scene `b`
/// onto scene `a` and union the labels. Draws are retried a bounded number
/// of times when they violate the overlap rules; if none fits, `a` is
/// returned unchanged.
pub fn emda(
    a: &SceneInstance,
    b: &SceneInstance,
    max_overlap: usize,
    rng: &mut impl Rng,
) -> Result<SceneInstance> {
    let frames = a.labels.frames();
    let max_delay = (frames as f64 * 0.3).floor() as usize;
    for _ in 0..EMDA_RETRIES {
        let params = EmdaParams {
            gain: rng.random_range(0.25..=1.0),
            delay_frames: rng.random_range(0..=max_delay),
            eq: Some(PeakingEq {
                center_hz: (rng.random_range(200f64.ln()..=8000f64.ln())).exp(),
                gain_db: rng.random_range(-6.0..=6.0),
                q: 1.0,
            }),
        };
        if let Some(mixed) = emda_with(a, b, max_overlap, params)? {
            return Ok(mixed);
        }
    }
    Ok(a.clone())
}

/// Apply one catalog transform to a whole scene: audio channels, label
/// directions, and the event list move together; activities stay put.
pub fn rotate_instance(inst: &SceneInstance, t: &FoaTransform) -> SceneInstance {
    let mut labels = EventLabelTrack::new(inst.labels.classes(), inst.labels.frames());
    for c in 0..inst.labels.classes() {
        for f in 0..inst.labels.frames() {
            if let Some(d) = inst.labels.doa(c, f) {
                labels.set_active(c, f, t.apply_doa(d));
            }
        }
    }
    SceneInstance {
        clip: t.apply_clip(&inst.clip),
        labels,
        events: transform_events(&inst.events, t),
        snr_db: inst.snr_db,
        signal_energy: inst.signal_energy,
        noise_energy: inst.noise_energy,
    }
}

/// Spatial augmentation: a uniform draw from the 16-entry rotation catalog
/// applied to audio and labels in lockstep.
pub fn random_rotation(inst: &SceneInstance, rng: &mut impl Rng) -> SceneInstance {
    let catalog = rotation_catalog();
    rotate_instance(inst, &catalog[rng.random_range(0..catalog.len())])
}

fn fill_masked(
    x: &mut FeatureTensor,
    plane: usize,
    f_range: (usize, usize),
    t_range: (usize, usize),
    rng: &mut impl Rng,
) {
    for f in f_range.0..f_range.1 {
        for t in t_range.0..t_range.1 {
            let v = if plane < AMPLITUDE_PLANES {
                0.0
            } else {
                // Phase is re-randomized rather than zeroed: draw on
                // [0, 2pi) and wrap into the tensor's (-pi, pi] convention.
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                if theta > std::f64::consts::PI {
                    theta - std::f64::consts::TAU
                } else {
                    theta
                }
            };
            x.set(plane, f, t, v);
        }
    }
}

/// Multichannel masking: time and frequency strips cut across every plane,
/// and channel masks blank one whole plane. Masked amplitude cells become
/// zero; masked phase cells are replaced with fresh uniform phase.
pub fn spec_augment(
    x: &FeatureTensor,
    cfg: &SpecAugmentConfig,
    rng: &mut impl Rng,
) -> Result<FeatureTensor> {
    if cfg.max_time_width > x.frames() {
        return Err(Error::InvalidConfig(format!(
            "time mask width {} exceeds {} frames",
            cfg.max_time_width,
            x.frames()
        )));
    }
    if cfg.max_freq_width > x.bins() {
        return Err(Error::InvalidConfig(format!(
            "freq mask width {} exceeds {} bins",
            cfg.max_freq_width,
            x.bins()
        )));
    }
    let mut out = x.clone();
    for _ in 0..cfg.num_time_masks {
        let w = rng.random_range(0..=cfg.max_time_width);
        let start = rng.random_range(0..=x.frames() - w);
        for plane in 0..x.planes() {
            fill_masked(&mut out, plane, (0, x.bins()), (start, start + w), rng);
        }
    }
    for _ in 0..cfg.num_freq_masks {
        let w = rng.random_range(0..=cfg.max_freq_width);
        let start = rng.random_range(0..=x.bins() - w);
        for plane in 0..x.planes() {
            fill_masked(&mut out, plane, (start, start + w), (0, x.frames()), rng);
        }
    }
    for _ in 0..cfg.num_channel_masks {
        let plane = rng.random_range(0..x.planes());
        fill_masked(&mut out, plane, (0, x.bins()), (0, x.frames()), rng);
    }
    Ok(out)
}
