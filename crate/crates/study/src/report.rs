//! Aggregate score tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{StudyError, StudyResult};
use crate::model::{Origin, Rating, Study};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [60.0, 70.0, 80.0];

/// Whether a percentage equal to a threshold counts as above it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryRule {
    /// `percentage > threshold`.
    #[default]
    Strict,
    /// `percentage >= threshold`.
    Inclusive,
}

impl BoundaryRule {
    pub fn above(self, percentage: f64, threshold: f64) -> bool {
        match self {
            BoundaryRule::Strict => percentage > threshold,
            BoundaryRule::Inclusive => percentage >= threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub origin: Origin,
    pub ratings: usize,
    pub mean: f64,
    /// `mean / 10 · 100`.
    pub percentage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCount {
    pub threshold: f64,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginSummary {
    pub images: usize,
    pub mean_percentage: f64,
    pub above: Vec<ThresholdCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub study_id: String,
    pub rule: BoundaryRule,
    /// Rated images in roster order.
    pub images: Vec<ImageScore>,
    /// Roster entries without any rating; excluded from every fraction.
    pub unrated: Vec<String>,
    pub above: Vec<ThresholdCount>,
    /// `>80%`, `70-79%`, `60-69%`, `<60%`; the fractions sum to 1.
    pub bands: Vec<Band>,
    pub per_origin: BTreeMap<Origin, OriginSummary>,
    pub rater_count: usize,
}

impl AggregateReport {
    pub fn fraction_above(&self, threshold: f64) -> Option<f64> {
        self.above.iter().find(|t| t.threshold == threshold).map(|t| t.fraction)
    }
}

fn counts(scores: &[&ImageScore], thresholds: &[f64], rule: BoundaryRule) -> Vec<ThresholdCount> {
    thresholds
        .iter()
        .map(|&t| {
            let count = scores.iter().filter(|s| rule.above(s.percentage, t)).count();
            ThresholdCount {
                threshold: t,
                count,
                fraction: if scores.is_empty() { 0.0 } else { count as f64 / scores.len() as f64 },
            }
        })
        .collect()
}

/// Band index for a percentage: 0 is the top band.
pub fn band_of(percentage: f64, rule: BoundaryRule) -> usize {
    if rule.above(percentage, 80.0) {
        0
    } else if rule.above(percentage, 70.0) {
        1
    } else if rule.above(percentage, 60.0) {
        2
    } else {
        3
    }
}

pub const BAND_LABELS: [&str; 4] = [">80%", "70-79%", "60-69%", "<60%"];

/// Per-image means over exactly the ratings given, and the summaries
/// built from them.
pub fn aggregate(study: &Study, ratings: &[&Rating], thresholds: &[f64], rule: BoundaryRule) -> StudyResult<AggregateReport> {
    let mine: Vec<&&Rating> = ratings.iter().filter(|r| r.study_id == study.id).collect();
    if mine.is_empty() {
        return Err(StudyError::Contract(format!("study {} has no ratings yet", study.id)));
    }
    let mut sums: BTreeMap<&str, (u64, usize)> = BTreeMap::new();
    let mut raters = BTreeSet::new();
    for r in &mine {
        let e = sums.entry(r.image_id.as_str()).or_default();
        e.0 += r.score as u64;
        e.1 += 1;
        raters.insert(r.rater_id.as_str());
    }
    let mut images = Vec::new();
    let mut unrated = Vec::new();
    for img in &study.roster {
        match sums.get(img.image_id.as_str()) {
            Some(&(sum, n)) => {
                let mean = sum as f64 / n as f64;
                images.push(ImageScore {
                    image_id: img.image_id.clone(),
                    origin: img.origin,
                    ratings: n,
                    mean,
                    percentage: sum as f64 * 10.0 / n as f64,
                })
            }
            None => unrated.push(img.image_id.clone()),
        }
    }
    let all: Vec<&ImageScore> = images.iter().collect();
    let mut band_counts = [0usize; 4];
    for s in &all {
        band_counts[band_of(s.percentage, rule)] += 1;
    }
    let bands = BAND_LABELS
        .iter()
        .zip(band_counts)
        .map(|(label, count)| Band {
            label: label.to_string(),
            count,
            fraction: count as f64 / all.len() as f64,
        })
        .collect();
    let mut per_origin = BTreeMap::new();
    for origin in [Origin::Generated, Origin::Real] {
        let subset: Vec<&ImageScore> = images.iter().filter(|s| s.origin == origin).collect();
        if subset.is_empty() {
            continue;
        }
        per_origin.insert(
            origin,
            OriginSummary {
                images: subset.len(),
                mean_percentage: subset.iter().map(|s| s.percentage).sum::<f64>() / subset.len() as f64,
                above: counts(&subset, thresholds, rule),
            },
        );
    }
    Ok(AggregateReport {
        study_id: study.id.clone(),
        rule,
        above: counts(&all, thresholds, rule),
        images,
        unrated,
        bands,
        per_origin,
        rater_count: raters.len(),
    })
}

/// Parses `60,70,80`; an empty string gives the defaults.
pub fn parse_thresholds(text: &str) -> StudyResult<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(DEFAULT_THRESHOLDS.to_vec());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| StudyError::Validation(format!("bad threshold `{t}`")))
        })
        .collect()
}
