//! Joint localization/detection metrics.
//!
//! Predictions and references are compared per class per 100 ms frame by a
//! minimum-total-angular-distance assignment. From the matched pairs:
//!
//! * `le_cd`: mean angular distance over all matched pairs, regardless of
//!   how far apart they are (unbounded; 180 sentinel + flag when nothing
//!   matched).
//! * `lr_cd`: percentage of reference events that received a match.
//! * `er_20` / `f_20`: location-sensitive detection over 1 s segments. A
//!   matched pair counts as a true positive only under 20 degrees; farther
//!   pairs count as both a false positive and a false negative (one
//!   substitution). Error rate aggregates substitutions, deletions and
//!   insertions per segment; the F-score is micro-averaged.
//!
//! Everything is computed from integer counts and sums in deterministic
//! order, so equal inputs give identical reports.

use std::collections::BTreeMap;
use std::path::Path;

use crate::assignment::min_cost_assignment;
use crate::error::Result;
use crate::event_csv::{read_label_csv, LabelRow};
use crate::geometry::{angular_distance, Doa};

/// Scoring parameters. Defaults: 20 degree gate, 10-frame (1 s) segments.
/// `segment_frames = 1` scores at frame granularity for sensitivity checks.
#[derive(Debug, Clone, Copy)]
pub struct MetricsConfig {
    pub distance_threshold_deg: f64,
    pub segment_frames: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            distance_threshold_deg: 20.0,
            segment_frames: 10,
        }
    }
}

/// Matching result for one class in one frame.
#[derive(Debug, Clone)]
pub struct FrameMatch {
    /// `(prediction index, reference index, angular distance in degrees)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: usize,
    pub unmatched_refs: usize,
}

/// Pair up same-class predictions and references within one frame so that
/// the total angular distance is minimal.
pub fn match_frame(preds: &[Doa], refs: &[Doa]) -> FrameMatch {
    match_frame_with(preds, refs, &min_cost_assignment)
}

/// [`match_frame`] with a pluggable assignment solver; the solver receives
/// the distance matrix (rows = predictions, columns = references) and must
/// return a minimum-total-cost pairing. Exists so tests can cross-check the
/// built-in solver against an exhaustive one.
pub fn match_frame_with(
    preds: &[Doa],
    refs: &[Doa],
    assign: &dyn Fn(&[Vec<f64>]) -> Vec<(usize, usize)>,
) -> FrameMatch {
    if preds.is_empty() || refs.is_empty() {
        return FrameMatch {
            pairs: Vec::new(),
            unmatched_preds: preds.len(),
            unmatched_refs: refs.len(),
        };
    }
    let cost: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| refs.iter().map(|r| angular_distance(*p, *r)).collect())
        .collect();
    let pairs: Vec<(usize, usize, f64)> = assign(&cost)
        .into_iter()
        .map(|(i, j)| (i, j, cost[i][j]))
        .collect();
    FrameMatch {
        unmatched_preds: preds.len() - pairs.len(),
        unmatched_refs: refs.len() - pairs.len(),
        pairs,
    }
}

/// The four scores plus the raw counts they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SeldReport {
    /// Mean matched-pair angular distance in degrees; 180 when undefined.
    pub le_cd: f64,
    /// False when no pair matched anywhere (`le_cd` holds the sentinel).
    pub le_defined: bool,
    /// Percent of references matched, in [0, 100].
    pub lr_cd: f64,
    /// Segment error rate; 0 is perfect, can exceed 1.
    pub er_20: f64,
    /// False when there were no reference events (`er_20` is then the raw
    /// insertion count over a denominator of 1).
    pub er_defined: bool,
    /// Micro-averaged location-sensitive F-score in [0, 100].
    pub f_20: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub n_refs: usize,
    pub matched_pairs: usize,
}

impl SeldReport {
    pub const CSV_HEADER: &'static str =
        "le_cd_deg,lr_cd_pct,er_20,f_20_pct,tp,fp,fn,substitutions,deletions,insertions,n_refs,matched_pairs,le_defined,er_defined";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{:.4},{:.4},{},{},{},{},{},{},{},{},{},{}",
            self.le_cd,
            self.lr_cd,
            self.er_20,
            self.f_20,
            self.tp,
            self.fp,
            self.fn_,
            self.substitutions,
            self.deletions,
            self.insertions,
            self.n_refs,
            self.matched_pairs,
            self.le_defined,
            self.er_defined
        )
    }

    /// Flat `key=value` lines, one per field.
    pub fn to_kv_block(&self) -> String {
        format!(
            "le_cd_deg={:.4}\nlr_cd_pct={:.4}\ner_20={:.4}\nf_20_pct={:.4}\ntp={}\nfp={}\nfn={}\nsubstitutions={}\ndeletions={}\ninsertions={}\nn_refs={}\nmatched_pairs={}\nle_defined={}\ner_defined={}",
            self.le_cd,
            self.lr_cd,
            self.er_20,
            self.f_20,
            self.tp,
            self.fp,
            self.fn_,
            self.substitutions,
            self.deletions,
            self.insertions,
            self.n_refs,
            self.matched_pairs,
            self.le_defined,
            self.er_defined
        )
    }

    /// The four headline numbers in reporting order.
    pub fn summary_line(&self) -> String {
        format!(
            "{:.4} {:.4} {:.4} {:.4}",
            self.le_cd, self.lr_cd, self.er_20, self.f_20
        )
    }
}

/// Score prediction rows against reference rows.
pub fn evaluate_rows(preds: &[LabelRow], refs: &[LabelRow], cfg: &MetricsConfig) -> SeldReport {
    evaluate_rows_with(preds, refs, cfg, &min_cost_assignment)
}

/// [`evaluate_rows`] with a pluggable assignment solver (see
/// [`match_frame_with`]).
pub fn evaluate_rows_with(
    preds: &[LabelRow],
    refs: &[LabelRow],
    cfg: &MetricsConfig,
    assign: &dyn Fn(&[Vec<f64>]) -> Vec<(usize, usize)>,
) -> SeldReport {
    assert!(cfg.segment_frames > 0, "segment_frames must be positive");
    // Group by (frame, class); BTreeMap keeps the evaluation order fixed.
    let mut cells: BTreeMap<(usize, usize), (Vec<Doa>, Vec<Doa>)> = BTreeMap::new();
    for r in preds {
        cells.entry((r.frame, r.class)).or_default().0.push(r.doa);
    }
    for r in refs {
        cells.entry((r.frame, r.class)).or_default().1.push(r.doa);
    }

    #[derive(Default, Clone)]
    struct SegCounts {
        tp: usize,
        fp: usize,
        fn_: usize,
        n_ref: usize,
    }
    let mut segments: BTreeMap<usize, SegCounts> = BTreeMap::new();
    let mut dist_sum = 0.0;
    let mut matched_pairs = 0usize;
    let n_refs = refs.len();

    for (&(frame, _class), (p, r)) in &cells {
        let m = match_frame_with(p, r, assign);
        let seg = segments.entry(frame / cfg.segment_frames).or_default();
        seg.n_ref += r.len();
        for &(_, _, d) in &m.pairs {
            dist_sum += d;
            if d < cfg.distance_threshold_deg {
                seg.tp += 1;
            } else {
                // A matched but badly localized pair is one substitution.
                seg.fp += 1;
                seg.fn_ += 1;
            }
        }
        matched_pairs += m.pairs.len();
        seg.fp += m.unmatched_preds;
        seg.fn_ += m.unmatched_refs;
    }

    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let (mut subs, mut dels, mut ins) = (0usize, 0usize, 0usize);
    for seg in segments.values() {
        tp += seg.tp;
        fp += seg.fp;
        fn_ += seg.fn_;
        let s = seg.fp.min(seg.fn_);
        subs += s;
        dels += seg.fn_ - s;
        ins += seg.fp - s;
    }

    let le_defined = matched_pairs > 0;
    let le_cd = if le_defined {
        dist_sum / matched_pairs as f64
    } else {
        180.0
    };
    let lr_cd = if n_refs > 0 {
        100.0 * matched_pairs as f64 / n_refs as f64
    } else {
        // No references and (necessarily) no matches: vacuously perfect.
        100.0
    };
    let er_defined = n_refs > 0;
    let er_20 = if er_defined {
        (subs + dels + ins) as f64 / n_refs as f64
    } else {
        (subs + dels + ins) as f64
    };
    let f_denom = 2 * tp + fp + fn_;
    let f_20 = if f_denom > 0 {
        100.0 * 2.0 * tp as f64 / f_denom as f64
    } else {
        100.0
    };

    SeldReport {
        le_cd,
        le_defined,
        lr_cd,
        er_20,
        er_defined,
        f_20,
        tp,
        fp,
        fn_,
        substitutions: subs,
        deletions: dels,
        insertions: ins,
        n_refs,
        matched_pairs,
    }
}

/// Score a prediction CSV against a reference CSV (shared schema, see
/// [`crate::event_csv`]).
pub fn evaluate(pred_path: &Path, ref_path: &Path, cfg: &MetricsConfig) -> Result<SeldReport> {
    let preds = read_label_csv(pred_path)?;
    let refs = read_label_csv(ref_path)?;
    Ok(evaluate_rows(&preds, &refs, cfg))
}
