use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Generated,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scale {
    pub min: u8,
    pub max: u8,
}

impl Default for Scale {
    fn default() -> Self {
        Self { min: 1, max: 10 }
    }
}

impl Scale {
    pub fn contains(&self, score: i64) -> bool {
        (self.min as i64..=self.max as i64).contains(&score)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterImage {
    pub image_id: String,
    pub origin: Origin,
    /// Copy inside the store, relative to the store root.
    pub file: PathBuf,
    /// Where the image was taken from.
    pub source: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    pub name: String,
    pub prompt: String,
    pub scale: Scale,
    /// Blind-shuffled; origins are never served to raters.
    pub roster: Vec<RosterImage>,
    pub shuffle_seed: u64,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl Study {
    pub fn image(&self, image_id: &str) -> Option<&RosterImage> {
        self.roster.iter().find(|i| i.image_id == image_id)
    }
}

/// Body of `POST /api/studies`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRequest {
    pub name: String,
    pub generated_dir: Option<PathBuf>,
    pub real_dir: Option<PathBuf>,
    #[serde(default)]
    pub n_generated: usize,
    #[serde(default)]
    pub n_real: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub study_id: String,
    pub rater_id: String,
    pub image_id: String,
    pub score: u8,
    pub timestamp: u64,
}

/// Body of `POST /api/studies/{id}/ratings`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingInput {
    pub rater: String,
    pub image_id: String,
    pub score: i64,
}

/// One session entry. Deliberately has no origin field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionImage {
    pub image_id: String,
    pub url: String,
    pub existing_score: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPayload {
    pub images: Vec<SessionImage>,
    pub scale: Scale,
    pub prompt: String,
}
