//! F1 at relative distance.
//!
//! A detection matches a ground-truth point when their distance divided by the
//! video length is at most `τ`. Each detection and each ground-truth point is
//! used at most once; the number of true positives is the size of a maximum
//! matching, which makes the score independent of detection order.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// `τ = 0.05, 0.10, …, 0.50`.
pub fn default_taus() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 20.0).collect()
}

/// `|det − gt| / video_len`.
pub fn rel_dis_error(det: f64, gt: f64, video_len: f64) -> Result<f64> {
    if !(video_len > 0.0) {
        return Err(Error::Invalid(format!("video length must be positive, got {video_len}")));
    }
    Ok((det - gt).abs() / video_len)
}

/// Maximum one-to-one matching between detections and ground truth under the
/// relative-distance threshold. Returns `(detection, ground_truth)` index pairs.
pub fn match_detections(dets: &[f64], gts: &[f64], tau: f64, video_len: f64) -> Result<Vec<(usize, usize)>> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
    }
    let mut adj = Vec::with_capacity(dets.len());
    for &d in dets {
        let mut edges = Vec::new();
        for (j, &g) in gts.iter().enumerate() {
            if rel_dis_error(d, g, video_len)? <= tau {
                edges.push(j);
            }
        }
        adj.push(edges);
    }
    let mut owner: Vec<Option<usize>> = vec![None; gts.len()];
    for i in 0..dets.len() {
        let mut seen = vec![false; gts.len()];
        augment(i, &adj, &mut owner, &mut seen);
    }
    let mut pairs: Vec<(usize, usize)> = owner
        .iter()
        .enumerate()
        .filter_map(|(g, d)| d.map(|d| (d, g)))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Kuhn's augmenting-path step.
fn augment(det: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &g in &adj[det] {
        if seen[g] {
            continue;
        }
        seen[g] = true;
        if owner[g].is_none_or(|other| augment(other, adj, owner, seen)) {
            owner[g] = Some(det);
            return true;
        }
    }
    false
}

/// Raw counts behind a precision/recall pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub detections: usize,
    pub ground_truth: usize,
}

impl MatchCounts {
    pub fn merge(self, o: Self) -> Self {
        Self {
            true_positives: self.true_positives + o.true_positives,
            detections: self.detections + o.detections,
            ground_truth: self.ground_truth + o.ground_truth,
        }
    }

    /// Precision, recall and F1. With nothing to find and nothing found the
    /// result is perfect; with nothing found, precision is 0; with nothing to
    /// find, recall is vacuously 1.
    pub fn scores(&self) -> Prf {
        let tp = self.true_positives as f64;
        let precision = match (self.detections, self.ground_truth) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (d, _) => tp / d as f64,
        };
        let recall = match self.ground_truth {
            0 => 1.0,
            g => tp / g as f64,
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn count_matches(dets: &[f64], gts: &[f64], tau: f64, video_len: f64) -> Result<MatchCounts> {
    Ok(MatchCounts {
        true_positives: match_detections(dets, gts, tau, video_len)?.len(),
        detections: dets.len(),
        ground_truth: gts.len(),
    })
}

pub fn f1_at(dets: &[f64], gts: &[f64], tau: f64, video_len: f64) -> Result<Prf> {
    Ok(count_matches(dets, gts, tau, video_len)?.scores())
}

/// Detections and ground truth of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoEval {
    pub video_id: String,
    pub detections: Vec<f64>,
    pub ground_truth: Vec<f64>,
    pub duration: f64,
}

/// How per-video results are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Pool counts over the corpus, then score once.
    #[default]
    Micro,
    /// Score each video, then average the scores.
    Macro,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TauRow {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<TauRow>,
    pub avg: Prf,
}

impl EvalReport {
    pub fn f1_at(&self, tau: f64) -> Option<f64> {
        self.rows.iter().find(|r| (r.tau - tau).abs() < 1e-9).map(|r| r.f1)
    }

    /// `tau,precision,recall,f1` rows followed by an `avg` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,precision,recall,f1\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:.2},{:.6},{:.6},{:.6}", r.tau, r.precision, r.recall, r.f1);
        }
        let _ = writeln!(s, "avg,{:.6},{:.6},{:.6}", self.avg.precision, self.avg.recall, self.avg.f1);
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

pub fn f1_sweep(corpus: &[VideoEval]) -> Result<EvalReport> {
    f1_sweep_with(corpus, &default_taus(), Averaging::Micro)
}

pub fn f1_sweep_with(corpus: &[VideoEval], taus: &[f64], averaging: Averaging) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::Invalid("evaluation corpus is empty".into()));
    }
    if taus.is_empty() {
        return Err(Error::Invalid("no thresholds to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let per_video = corpus
            .par_iter()
            .map(|v| count_matches(&v.detections, &v.ground_truth, tau, v.duration))
            .collect::<Result<Vec<_>>>()?;
        let prf = match averaging {
            Averaging::Micro => per_video
                .iter()
                .fold(MatchCounts::default(), |a, &b| a.merge(b))
                .scores(),
            Averaging::Macro => {
                let n = per_video.len() as f64;
                let sum = per_video.iter().map(MatchCounts::scores).fold(Prf::default(), |a, b| Prf {
                    precision: a.precision + b.precision,
                    recall: a.recall + b.recall,
                    f1: a.f1 + b.f1,
                });
                Prf {
                    precision: sum.precision / n,
                    recall: sum.recall / n,
                    f1: sum.f1 / n,
                }
            }
        };
        rows.push(TauRow {
            tau,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        });
    }
    let n = rows.len() as f64;
    let avg = Prf {
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
    };
    Ok(EvalReport { rows, avg })
}
