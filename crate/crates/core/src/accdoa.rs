//! Activity-coupled Cartesian DOA vectors: the label codec and the losses.
//!
//! A class/frame label cell is a single 3-vector whose length carries event
//! activity and whose direction carries the DOA. Encoding multiplies the
//! binary activity into the unit direction (so inactive cells are the zero
//! vector); decoding thresholds the vector norm and renormalizes. That turns
//! joint detection + localization into one regression target with one MSE
//! loss, instead of the classic two-branch SED/DOA objective, which is also
//! implemented here for baseline comparisons.
//!
//! Gradients returned by the losses are exact analytic derivatives of the
//! scalar loss actually computed, which lets every training path be checked
//! against central finite differences.

use crate::error::{Error, Result};
use crate::geometry::{Doa, Vec3};

/// Binary activity plus a unit DOA per active class/frame cell.
///
/// Invariants, enforced on construction and mutation: the DOA of an active
/// cell is unit length (and a normalization fixpoint, see
/// [`Vec3::normalize_canonical`]); inactive cells hold the exact zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLabelTrack {
    classes: usize,
    frames: usize,
    activity: Vec<bool>,
    doa: Vec<f64>, // (c, t) cell-major, 3 components per cell
}

impl EventLabelTrack {
    pub fn new(classes: usize, frames: usize) -> EventLabelTrack {
        EventLabelTrack {
            classes,
            frames,
            activity: vec![false; classes * frames],
            doa: vec![0.0; classes * frames * 3],
        }
    }

    /// Build from raw arrays, validating the invariants. Active DOAs must be
    /// unit within 1e-9 and are canonicalized; inactive cells must be zero.
    pub fn from_parts(
        classes: usize,
        frames: usize,
        activity: Vec<bool>,
        doa: Vec<f64>,
    ) -> Result<EventLabelTrack> {
        if activity.len() != classes * frames || doa.len() != classes * frames * 3 {
            return Err(Error::Shape(format!(
                "label arrays do not match {classes} classes x {frames} frames"
            )));
        }
        let mut track = EventLabelTrack {
            classes,
            frames,
            activity,
            doa,
        };
        for c in 0..classes {
            for t in 0..frames {
                let i = track.cell(c, t);
                let v = Vec3::new(track.doa[i], track.doa[i + 1], track.doa[i + 2]);
                if track.activity[c * frames + t] {
                    if (v.norm() - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidLabels(format!(
                            "active cell ({c}, {t}) has norm {}",
                            v.norm()
                        )));
                    }
                    let u = v.normalize_canonical()?;
                    track.doa[i] = u.x;
                    track.doa[i + 1] = u.y;
                    track.doa[i + 2] = u.z;
                } else if v != Vec3::ZERO {
                    return Err(Error::InvalidLabels(format!(
                        "inactive cell ({c}, {t}) has nonzero DOA"
                    )));
                }
            }
        }
        Ok(track)
    }

    #[inline]
    fn cell(&self, c: usize, t: usize) -> usize {
        (c * self.frames + t) * 3
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn active(&self, c: usize, t: usize) -> bool {
        self.activity[c * self.frames + t]
    }

    /// Unit DOA for active cells, `None` otherwise.
    pub fn doa(&self, c: usize, t: usize) -> Option<Doa> {
        if !self.active(c, t) {
            return None;
        }
        let i = self.cell(c, t);
        Some(Doa::new(Vec3::new(self.doa[i], self.doa[i + 1], self.doa[i + 2])).expect("invariant"))
    }

    /// Raw cell vector: the unit DOA when active, zero when inactive.
    #[inline]
    pub fn cell_vec(&self, c: usize, t: usize) -> Vec3 {
        let i = self.cell(c, t);
        Vec3::new(self.doa[i], self.doa[i + 1], self.doa[i + 2])
    }

    pub fn set_active(&mut self, c: usize, t: usize, d: Doa) {
        let i = self.cell(c, t);
        self.activity[c * self.frames + t] = true;
        self.doa[i] = d.x();
        self.doa[i + 1] = d.y();
        self.doa[i + 2] = d.z();
    }

    pub fn clear(&mut self, c: usize, t: usize) {
        let i = self.cell(c, t);
        self.activity[c * self.frames + t] = false;
        self.doa[i] = 0.0;
        self.doa[i + 1] = 0.0;
        self.doa[i + 2] = 0.0;
    }

    pub fn active_count(&self) -> usize {
        self.activity.iter().filter(|&&a| a).count()
    }

    /// Active class count per frame (polyphony profile).
    pub fn overlap_profile(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.frames];
        for c in 0..self.classes {
            for (t, slot) in out.iter_mut().enumerate() {
                if self.active(c, t) {
                    *slot += 1;
                }
            }
        }
        out
    }
}

/// Dense field of unconstrained 3-vectors over classes x frames: the model
/// output and regression target. Vector length in [0, 1] is typical but not
/// required of estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AccdoaGrid {
    classes: usize,
    frames: usize,
    values: Vec<f64>, // cell-major, 3 per cell
}

impl AccdoaGrid {
    pub fn zeros(classes: usize, frames: usize) -> AccdoaGrid {
        AccdoaGrid {
            classes,
            frames,
            values: vec![0.0; classes * frames * 3],
        }
    }

    pub fn from_values(classes: usize, frames: usize, values: Vec<f64>) -> Result<AccdoaGrid> {
        if values.len() != classes * frames * 3 {
            return Err(Error::Shape(format!(
                "{} values do not fill {classes} x {frames} x 3",
                values.len()
            )));
        }
        Ok(AccdoaGrid {
            classes,
            frames,
            values,
        })
    }

    #[inline]
    fn cell(&self, c: usize, t: usize) -> usize {
        (c * self.frames + t) * 3
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn vec_at(&self, c: usize, t: usize) -> Vec3 {
        let i = self.cell(c, t);
        Vec3::new(self.values[i], self.values[i + 1], self.values[i + 2])
    }

    #[inline]
    pub fn set_vec(&mut self, c: usize, t: usize, v: Vec3) {
        let i = self.cell(c, t);
        self.values[i] = v.x;
        self.values[i + 1] = v.y;
        self.values[i + 2] = v.z;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Encode labels into the reference vector field: activity times unit DOA.
/// Cell norms are exactly 0 or 1 by the label invariants.
pub fn encode(labels: &EventLabelTrack) -> AccdoaGrid {
    let mut grid = AccdoaGrid::zeros(labels.classes, labels.frames);
    for c in 0..labels.classes {
        for t in 0..labels.frames {
            grid.set_vec(c, t, labels.cell_vec(c, t));
        }
    }
    grid
}

/// Decode a vector field: a cell is active iff its norm exceeds `threshold`,
/// and its DOA is the normalized vector. Inverts [`encode`] exactly because
/// stored label DOAs are normalization fixpoints.
pub fn decode(grid: &AccdoaGrid, threshold: f64) -> Result<EventLabelTrack> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "activity threshold {threshold} not in (0, 1)"
        )));
    }
    let mut labels = EventLabelTrack::new(grid.classes, grid.frames);
    for c in 0..grid.classes {
        for t in 0..grid.frames {
            let v = grid.vec_at(c, t);
            let n = v.norm();
            if n > threshold {
                let d = Doa::from_vec(Vec3::new(v.x / n, v.y / n, v.z / n))?;
                labels.set_active(c, t, d);
            }
        }
    }
    Ok(labels)
}

fn check_same_shape(
    what: &str,
    (c1, t1): (usize, usize),
    (c2, t2): (usize, usize),
) -> Result<()> {
    if (c1, t1) != (c2, t2) {
        return Err(Error::Shape(format!(
            "{what}: {c1} x {t1} vs {c2} x {t2}"
        )));
    }
    Ok(())
}

/// Single-objective regression loss: mean squared error per element over the
/// whole 3 x C x T field against the encoded labels. Returns the loss and
/// its exact gradient with respect to the estimate.
pub fn accdoa_loss(est: &AccdoaGrid, labels: &EventLabelTrack) -> Result<(f64, AccdoaGrid)> {
    check_same_shape(
        "estimate vs labels",
        (est.classes, est.frames),
        (labels.classes(), labels.frames()),
    )?;
    let n = est.values.len() as f64; // 3 * C * T
    let mut loss = 0.0;
    let mut grad = AccdoaGrid::zeros(est.classes, est.frames);
    for c in 0..est.classes {
        for t in 0..est.frames {
            let d = est.vec_at(c, t).sub(labels.cell_vec(c, t));
            loss += d.dot(d);
            grad.set_vec(c, t, d.scale(2.0 / n));
        }
    }
    Ok((loss / n, grad))
}

/// Post-sigmoid two-branch output: per-cell activity probability and an
/// unconstrained DOA vector.
#[derive(Debug, Clone)]
pub struct TwoBranchOutput {
    pub sed: Vec<f64>, // C x T, class-major, each in (0, 1)
    pub doa: AccdoaGrid,
}

impl TwoBranchOutput {
    pub fn classes(&self) -> usize {
        self.doa.classes()
    }

    pub fn frames(&self) -> usize {
        self.doa.frames()
    }

    #[inline]
    pub fn sed_at(&self, c: usize, t: usize) -> f64 {
        self.sed[c * self.doa.frames() + t]
    }

    /// Fold the two heads into one vector field: activity probability times
    /// the unit DOA (zero where the DOA vector is zero). Thresholding the
    /// result's norm equals thresholding the probability, so downstream
    /// decoding, window averaging and TTA are shared with the single-output
    /// head.
    pub fn to_accdoa_grid(&self) -> AccdoaGrid {
        let mut grid = AccdoaGrid::zeros(self.classes(), self.frames());
        for c in 0..self.classes() {
            for t in 0..self.frames() {
                let v = self.doa.vec_at(c, t);
                let n = v.norm();
                if n > 0.0 {
                    grid.set_vec(c, t, v.scale(self.sed_at(c, t) / n));
                }
            }
        }
        grid
    }
}

/// Probabilities are clamped into this range before the log so that saturated
/// sigmoids cannot produce infinities.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of activity probabilities against the labels.
/// The gradient is with respect to the (post-sigmoid) probabilities.
pub fn bce_loss(out: &TwoBranchOutput, labels: &EventLabelTrack) -> Result<(f64, Vec<f64>)> {
    check_same_shape(
        "sed vs labels",
        (out.classes(), out.frames()),
        (labels.classes(), labels.frames()),
    )?;
    let (c_n, t_n) = (out.classes(), out.frames());
    let n = (c_n * t_n) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; c_n * t_n];
    for c in 0..c_n {
        for t in 0..t_n {
            let p = out.sed_at(c, t).clamp(BCE_EPS, 1.0 - BCE_EPS);
            let a = if labels.active(c, t) { 1.0 } else { 0.0 };
            loss -= a * p.ln() + (1.0 - a) * (1.0 - p).ln();
            grad[c * t_n + t] = ((1.0 - a) / (1.0 - p) - a / p) / n;
        }
    }
    Ok((loss / n, grad))
}

/// DOA regression restricted to active cells: mean squared error per element
/// over the masked cells. An all-inactive mask contributes zero loss and
/// gradient rather than dividing by zero.
pub fn masked_doa_mse(out: &TwoBranchOutput, labels: &EventLabelTrack) -> Result<(f64, AccdoaGrid)> {
    check_same_shape(
        "doa vs labels",
        (out.classes(), out.frames()),
        (labels.classes(), labels.frames()),
    )?;
    let mut grad = AccdoaGrid::zeros(out.classes(), out.frames());
    let k = labels.active_count();
    if k == 0 {
        return Ok((0.0, grad));
    }
    let n = (3 * k) as f64;
    let mut loss = 0.0;
    for c in 0..out.classes() {
        for t in 0..out.frames() {
            if !labels.active(c, t) {
                continue;
            }
            let d = out.doa.vec_at(c, t).sub(labels.cell_vec(c, t));
            loss += d.dot(d);
            grad.set_vec(c, t, d.scale(2.0 / n));
        }
    }
    Ok((loss / n, grad))
}

/// Combined two-branch objective and its per-branch gradients.
pub struct SeldnetLoss {
    pub loss: f64,
    pub bce: f64,
    pub masked_mse: f64,
    /// d(loss)/d(sed probability), C x T class-major.
    pub grad_sed: Vec<f64>,
    /// d(loss)/d(doa output).
    pub grad_doa: AccdoaGrid,
}

/// Classic two-branch objective: `BCE(sed, activity) + weight * maskedMSE`.
/// The reference weight is 10.
pub fn seldnet_loss(
    out: &TwoBranchOutput,
    labels: &EventLabelTrack,
    doa_weight: f64,
) -> Result<SeldnetLoss> {
    let (bce, grad_sed) = bce_loss(out, labels)?;
    let (mse, mut grad_doa) = masked_doa_mse(out, labels)?;
    for v in grad_doa.values_mut() {
        *v *= doa_weight;
    }
    Ok(SeldnetLoss {
        loss: bce + doa_weight * mse,
        bce,
        masked_mse: mse,
        grad_sed,
        grad_doa,
    })
}

/// Output head variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    /// One affine layer emitting 3 values per class.
    Accdoa,
    /// Two branches of two affine layers each: embedding -> embedding -> C
    /// (activity, sigmoid) and embedding -> embedding -> 3C (DOA, linear).
    TwoBranch,
}

/// Exact trainable-parameter count of an output head (weights + biases) on
/// top of an `embedding_dim`-wide trunk, per label frame.
pub fn head_param_count(embedding_dim: usize, classes: usize, variant: HeadVariant) -> usize {
    let k = embedding_dim;
    let c = classes;
    match variant {
        HeadVariant::Accdoa => (k + 1) * 3 * c,
        HeadVariant::TwoBranch => 2 * (k + 1) * k + (k + 1) * c + (k + 1) * 3 * c,
    }
}
