//! Overlay-error statistics: per-sample pixel errors, pixel→millimeter
//! conversion from measured head sizes, and per-participant / pooled summary
//! rows.
//!
//! Conventions that reproduce the reference error tables: per-group std is the
//! population std (divide by n); pixel errors convert to millimeters through
//! the width ratio `width_mm / width_px` by default (the width/length-averaged
//! ratio is available as an explicit mode); pooling across participants uses
//! the pose-count-weighted mean and the combined-sample std, which includes
//! between-group variance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Pixel;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("cannot compute statistics of an empty group")]
    EmptyGroup,
    #[error("participant {0:?} has no head-size entry")]
    UnknownParticipant(String),
}

/// The three key facial features scored in the overlay evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureId {
    /// Left eye corner.
    F1,
    /// Chin.
    F2,
    /// Right eye corner.
    F3,
}

impl FeatureId {
    pub const ALL: [FeatureId; 3] = [FeatureId::F1, FeatureId::F2, FeatureId::F3];

    pub fn label(self) -> &'static str {
        match self {
            FeatureId::F1 => "left eye corner",
            FeatureId::F2 => "chin",
            FeatureId::F3 => "right eye corner",
        }
    }
}

impl std::fmt::Display for FeatureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureId::F1 => f.write_str("F1"),
            FeatureId::F2 => f.write_str("F2"),
            FeatureId::F3 => f.write_str("F3"),
        }
    }
}

impl std::str::FromStr for FeatureId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F1" => Ok(FeatureId::F1),
            "F2" => Ok(FeatureId::F2),
            "F3" => Ok(FeatureId::F3),
            other => Err(format!("unknown feature {other:?}, expected F1, F2 or F3")),
        }
    }
}

/// A feature column of the report: one of the three features, or the pooled
/// "All" column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureGroup {
    Feature(FeatureId),
    All,
}

impl std::fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureGroup::Feature(id) => write!(f, "{id}"),
            FeatureGroup::All => f.write_str("All"),
        }
    }
}

/// A participant's head size in image pixels and physical millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSize {
    pub width_px: f64,
    pub length_px: f64,
    pub width_mm: f64,
    pub length_mm: f64,
}

impl HeadSize {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.width_px, self.length_px, self.width_mm, self.length_mm];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("head-size fields must be finite and positive".to_string());
        }
        Ok(())
    }
}

/// Which pixel→millimeter ratio to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MmRatio {
    /// `width_mm / width_px` — the reading that reproduces the reference
    /// millimeter values.
    #[default]
    Width,
    /// Mean of the width and length ratios.
    Avg,
}

impl std::str::FromStr for MmRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "width" => Ok(MmRatio::Width),
            "avg" => Ok(MmRatio::Avg),
            other => Err(format!(
                "unknown mm-ratio {other:?}, expected `width` or `avg`"
            )),
        }
    }
}

/// One annotated-vs-detected observation of a feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub participant: String,
    pub pose: u32,
    pub feature: FeatureId,
    /// Feature position annotated on the overlaid virtual model.
    pub annotated: Pixel,
    /// Feature position detected on the real face.
    pub detected: Pixel,
}

/// Mean/std of a group of pixel errors, with their millimeter conversions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureStats {
    pub n: usize,
    pub mean_px: f64,
    pub std_px: f64,
    pub mean_mm: f64,
    pub std_mm: f64,
}

/// Euclidean distance between annotated and detected positions, pixels.
pub fn pixel_error(sample: &ErrorSample) -> f64 {
    sample.annotated.distance_to(&sample.detected)
}

/// Converts a pixel error to millimeters with the width ratio.
pub fn px_to_mm(err_px: f64, size: &HeadSize) -> f64 {
    px_to_mm_with(MmRatio::Width, err_px, size)
}

pub fn px_to_mm_with(mode: MmRatio, err_px: f64, size: &HeadSize) -> f64 {
    let ratio = match mode {
        MmRatio::Width => size.width_mm / size.width_px,
        MmRatio::Avg => (size.width_mm / size.width_px + size.length_mm / size.length_px) / 2.0,
    };
    err_px * ratio
}

/// Mean and population std (divide by n) of a non-empty value list.
pub fn pixel_stats(values: &[f64]) -> Result<(f64, f64), EvaluationError> {
    if values.is_empty() {
        return Err(EvaluationError::EmptyGroup);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

pub type StatsMap = BTreeMap<(String, FeatureGroup), FeatureStats>;

/// Groups samples by participant and feature, computes per-group pixel stats,
/// pools each participant's samples into an `All` group, and converts to
/// millimeters via that participant's head size.
pub fn participant_stats(
    samples: &[ErrorSample],
    sizes: &BTreeMap<String, HeadSize>,
    mode: MmRatio,
) -> Result<StatsMap, EvaluationError> {
    let mut groups: BTreeMap<(String, FeatureGroup), Vec<f64>> = BTreeMap::new();
    for sample in samples {
        if !sizes.contains_key(&sample.participant) {
            return Err(EvaluationError::UnknownParticipant(
                sample.participant.clone(),
            ));
        }
        let err = pixel_error(sample);
        groups
            .entry((
                sample.participant.clone(),
                FeatureGroup::Feature(sample.feature),
            ))
            .or_default()
            .push(err);
        groups
            .entry((sample.participant.clone(), FeatureGroup::All))
            .or_default()
            .push(err);
    }

    let mut stats = StatsMap::new();
    for ((participant, group), values) in groups {
        let (mean_px, std_px) = pixel_stats(&values)?;
        let size = &sizes[&participant];
        stats.insert(
            (participant, group),
            FeatureStats {
                n: values.len(),
                mean_px,
                std_px,
                mean_mm: px_to_mm_with(mode, mean_px, size),
                std_mm: px_to_mm_with(mode, std_px, size),
            },
        );
    }
    Ok(stats)
}

/// Pools per-group `(n, mean, std)` rows: pose-count-weighted mean and
/// combined-sample std `sqrt(Σ nᵢ(sᵢ² + (mᵢ − m)²) / Σ nᵢ)`.
///
/// Requires at least one group with n ≥ 1.
pub fn pooled_stats(rows: &[(usize, f64, f64)]) -> (f64, f64) {
    let total: usize = rows.iter().map(|(n, _, _)| n).sum();
    assert!(total > 0, "pooled_stats requires at least one sample");
    let total = total as f64;
    let mean = rows.iter().map(|(n, m, _)| *n as f64 * m).sum::<f64>() / total;
    let var = rows
        .iter()
        .map(|(n, m, s)| *n as f64 * (s * s + (m - mean) * (m - mean)))
        .sum::<f64>()
        / total;
    (mean, var.sqrt())
}

/// Builds complete per-group stats from already-aggregated pixel statistics
/// (e.g. a reference table) by applying the millimeter conversion.
pub fn feature_stats_from_px(
    n: usize,
    mean_px: f64,
    std_px: f64,
    size: &HeadSize,
    mode: MmRatio,
) -> FeatureStats {
    FeatureStats {
        n,
        mean_px,
        std_px,
        mean_mm: px_to_mm_with(mode, mean_px, size),
        std_mm: px_to_mm_with(mode, std_px, size),
    }
}

/// One row of the overlay-error report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub participant: String,
    pub n_poses: usize,
    pub feature: String,
    pub mean_px: f64,
    pub mean_mm: f64,
    pub std_px: f64,
    pub std_mm: f64,
}

/// The full report: per-participant rows plus pooled `Mean` rows per feature
/// column.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// Builds the report rows from a stats map: data rows in (participant,
/// feature) order, then one `Mean` row per feature column pooling the
/// participants' rows (px and mm pooled by the same formulas).
pub fn build_report(stats: &StatsMap) -> Report {
    let mut rows: Vec<ReportRow> = stats
        .iter()
        .map(|((participant, group), s)| ReportRow {
            participant: participant.clone(),
            n_poses: s.n,
            feature: group.to_string(),
            mean_px: s.mean_px,
            mean_mm: s.mean_mm,
            std_px: s.std_px,
            std_mm: s.std_mm,
        })
        .collect();

    let mut columns: Vec<FeatureGroup> = stats.keys().map(|(_, g)| *g).collect();
    columns.sort();
    columns.dedup();
    for column in columns {
        let group_rows: Vec<&FeatureStats> = stats
            .iter()
            .filter(|((_, g), _)| *g == column)
            .map(|(_, s)| s)
            .collect();
        let px: Vec<(usize, f64, f64)> = group_rows
            .iter()
            .map(|s| (s.n, s.mean_px, s.std_px))
            .collect();
        let mm: Vec<(usize, f64, f64)> = group_rows
            .iter()
            .map(|s| (s.n, s.mean_mm, s.std_mm))
            .collect();
        let (mean_px, std_px) = pooled_stats(&px);
        let (mean_mm, std_mm) = pooled_stats(&mm);
        rows.push(ReportRow {
            participant: "Mean".to_string(),
            n_poses: group_rows.iter().map(|s| s.n).sum(),
            feature: column.to_string(),
            mean_px,
            mean_mm,
            std_px,
            std_mm,
        });
    }
    Report { rows }
}

/// Half-away-from-zero rounding to two decimals, used only when formatting
/// the CSV; JSON output keeps full precision.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl Report {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("participant,n_poses,feature,mean_px,mean_mm,std_px,std_mm\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.2},{:.2},{:.2},{:.2}\n",
                row.participant,
                row.n_poses,
                row.feature,
                round2(row.mean_px),
                round2(row.mean_mm),
                round2(row.std_px),
                round2(row.std_mm),
            ));
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
