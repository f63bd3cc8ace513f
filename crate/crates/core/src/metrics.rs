//! Pose-error metrics and report aggregation.
//!
//! Accuracy thresholds are strict: ACC_π/6 counts errors < 30°, ACC_π/18
//! errors < 10°. The median of an even-length list is the mean of the two
//! middle values. Cross-category averages weight each category by its
//! sample count; median errors combine as the weighted mean of per-category
//! medians (raw errors are never pooled across categories).

use crate::dataset::OcclusionLevel;
use crate::error::{Error, Result};
use crate::pose::{euler_to_quat, geodesic_distance, EulerPose};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Geodesic error between predicted and ground-truth pose, in degrees.
pub fn pose_error_deg(pred: &EulerPose, gt: &EulerPose) -> f64 {
    geodesic_distance(&euler_to_quat(pred), &euler_to_quat(gt)).to_degrees()
}

/// The three headline metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of errors < 30°.
    pub acc_pi6: f64,
    /// Fraction of errors < 10°.
    pub acc_pi18: f64,
    /// Median error, degrees.
    pub med_err_deg: f64,
}

/// Compute the metrics of an error list given in degrees.
pub fn compute_metrics(errors_deg: &[f64]) -> Result<Metrics> {
    if errors_deg.is_empty() {
        return Err(Error::EmptyInput("error list"));
    }
    let n = errors_deg.len() as f64;
    let acc_pi6 = errors_deg.iter().filter(|&&e| e < 30.0).count() as f64 / n;
    let acc_pi18 = errors_deg.iter().filter(|&&e| e < 10.0).count() as f64 / n;

    let mut sorted = errors_deg.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let mid = sorted.len() / 2;
    let med_err_deg = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(Metrics {
        acc_pi6,
        acc_pi18,
        med_err_deg,
    })
}

/// Sample-count-weighted average of per-category metrics.
pub fn weighted_average(per_category: &BTreeMap<String, (Metrics, usize)>) -> Result<Metrics> {
    if per_category.is_empty() {
        return Err(Error::EmptyInput("per-category metrics"));
    }
    let total: usize = per_category.values().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::EmptyInput("weighted average with zero samples"));
    }
    let mut acc6 = 0.0;
    let mut acc18 = 0.0;
    let mut med = 0.0;
    for (m, n) in per_category.values() {
        let w = *n as f64 / total as f64;
        acc6 += w * m.acc_pi6;
        acc18 += w * m.acc_pi18;
        med += w * m.med_err_deg;
    }
    Ok(Metrics {
        acc_pi6: acc6,
        acc_pi18: acc18,
        med_err_deg: med,
    })
}

/// One (category, occlusion level) cell of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub category: String,
    pub occlusion_level: OcclusionLevel,
    pub n: usize,
    pub metrics: Metrics,
}

/// Per-category results plus weighted cross-category averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    /// Sorted by (category, occlusion level).
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Build from per-(category, level) error lists; rows come out sorted.
    pub fn from_errors(groups: BTreeMap<(String, OcclusionLevel), Vec<f64>>) -> Result<Self> {
        let mut rows = Vec::with_capacity(groups.len());
        for ((category, occlusion_level), errors) in groups {
            rows.push(ReportRow {
                category,
                occlusion_level,
                n: errors.len(),
                metrics: compute_metrics(&errors)?,
            });
        }
        Ok(Self { rows })
    }

    /// Weighted average across categories at one occlusion level.
    pub fn weighted(&self, level: OcclusionLevel) -> Option<Metrics> {
        let per_category: BTreeMap<String, (Metrics, usize)> = self
            .rows
            .iter()
            .filter(|r| r.occlusion_level == level)
            .map(|r| (r.category.clone(), (r.metrics, r.n)))
            .collect();
        if per_category.is_empty() {
            None
        } else {
            Some(weighted_average(&per_category).expect("nonempty"))
        }
    }

    pub fn levels(&self) -> Vec<OcclusionLevel> {
        let mut levels: Vec<OcclusionLevel> = self.rows.iter().map(|r| r.occlusion_level).collect();
        levels.sort_unstable();
        levels.dedup();
        levels
    }

    /// CSV with a fixed column order and a weighted `ALL` row per level.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,occlusion_level,n,acc_pi6,acc_pi18,med_err_deg\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.category,
                r.occlusion_level,
                r.n,
                r.metrics.acc_pi6,
                r.metrics.acc_pi18,
                r.metrics.med_err_deg
            ));
        }
        for level in self.levels() {
            if let Some(m) = self.weighted(level) {
                let n: usize = self
                    .rows
                    .iter()
                    .filter(|r| r.occlusion_level == level)
                    .map(|r| r.n)
                    .sum();
                out.push_str(&format!(
                    "ALL,{},{},{},{},{}\n",
                    level, n, m.acc_pi6, m.acc_pi18, m.med_err_deg
                ));
            }
        }
        out
    }
}
