//! Append-only study and rating store.
//!
//! Each record is one line, `<sha256 hex> <json>`, so a torn or edited
//! line is detected and skipped on load. Appends are synced before they
//! are acknowledged.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_at, StudyError, StudyResult};
use crate::model::{Origin, Rating, RatingInput, RosterImage, Scale, SessionImage, SessionPayload, Study, StudyRequest};
use crate::report::{aggregate, AggregateReport, BoundaryRule};

const STUDIES: &str = "studies.jsonl";
const RATINGS: &str = "ratings.jsonl";
const IMAGES: &str = "images";

fn checksum(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn read_records<T: DeserializeOwned>(path: &Path) -> StudyResult<(Vec<T>, usize)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_at(path)(e)),
    };
    let mut out = Vec::new();
    let mut skipped = 0;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(' ')
            .filter(|(sum, json)| *sum == checksum(json))
            .and_then(|(_, json)| serde_json::from_str(json).ok());
        match parsed {
            Some(r) => out.push(r),
            None => {
                log::warn!("{} line {}: failed integrity check, skipped", path.display(), n + 1);
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

fn append_record<T: Serialize>(path: &Path, record: &T) -> StudyResult<()> {
    let json = serde_json::to_string(record)?;
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_at(path))?;
    // A previous crash may have left a partial line without a newline.
    let len = f.metadata().map_err(io_at(path))?.len();
    let lead = if len > 0 && !ends_with_newline(path)? { "\n" } else { "" };
    f.write_all(format!("{lead}{} {json}\n", checksum(&json)).as_bytes())
        .map_err(io_at(path))?;
    f.sync_data().map_err(io_at(path))
}

fn ends_with_newline(path: &Path) -> StudyResult<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path).map_err(io_at(path))?;
    f.seek(SeekFrom::End(-1)).map_err(io_at(path))?;
    let mut b = [0u8];
    f.read_exact(&mut b).map_err(io_at(path))?;
    Ok(b[0] == b'\n')
}

fn image_files(dir: &Path) -> StudyResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_at(dir))? {
        let path = entry.map_err(io_at(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn pick(dir: Option<&Path>, count: usize, label: &str, rng: &mut ChaCha8Rng) -> StudyResult<Vec<PathBuf>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let dir = dir.ok_or_else(|| StudyError::Contract(format!("{count} {label} images requested but no {label}_dir given")))?;
    let files = image_files(dir)?;
    if files.len() < count {
        return Err(StudyError::Contract(format!(
            "{label}_dir {} has {} images, {count} requested (short by {})",
            dir.display(),
            files.len(),
            count - files.len()
        )));
    }
    let mut idx = rand::seq::index::sample(rng, files.len(), count).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| files[i].clone()).collect())
}

/// Per-rater presentation order: a shuffle seeded by the study seed and
/// the rater token.
pub fn session_order(study: &Study, rater: &str) -> Vec<usize> {
    let mut h = Sha256::new();
    h.update(study.shuffle_seed.to_le_bytes());
    h.update(rater.as_bytes());
    let digest = h.finalize();
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut order: Vec<usize> = (0..study.roster.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub rating: Rating,
    /// False when the identical score was already on record.
    pub recorded: bool,
}

type Key = (String, String, String);

/// Single-writer store; callers serialize access.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    studies: Vec<Study>,
    by_id: HashMap<String, usize>,
    log: Vec<Rating>,
    effective: HashMap<Key, usize>,
    skipped: usize,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> StudyResult<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join(IMAGES)).map_err(io_at(&root))?;
        let (studies, s1): (Vec<Study>, _) = read_records(&root.join(STUDIES))?;
        let (log, s2): (Vec<Rating>, _) = read_records(&root.join(RATINGS))?;
        let by_id = studies.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        let mut store = Self {
            root,
            studies,
            by_id,
            log: Vec::new(),
            effective: HashMap::new(),
            skipped: s1 + s2,
        };
        for r in log {
            store.index(r);
        }
        Ok(store)
    }

    fn index(&mut self, r: Rating) {
        let key = (r.study_id.clone(), r.rater_id.clone(), r.image_id.clone());
        self.effective.insert(key, self.log.len());
        self.log.push(r);
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Lines dropped by the integrity check when the store was opened.
    pub fn skipped_lines(&self) -> usize {
        self.skipped
    }

    pub fn studies(&self) -> &[Study] {
        &self.studies
    }

    pub fn study(&self, id: &str) -> StudyResult<&Study> {
        self.by_id
            .get(id)
            .map(|&i| &self.studies[i])
            .ok_or_else(|| StudyError::NotFound(format!("study `{id}`")))
    }

    /// Samples the requested images without replacement, copies them into
    /// the store, blind-shuffles the roster and persists the study.
    pub fn create_study(&mut self, req: &StudyRequest, now: u64) -> StudyResult<Study> {
        if req.n_generated + req.n_real == 0 {
            return Err(StudyError::Contract("a study needs at least one image".into()));
        }
        if req.name.trim().is_empty() {
            return Err(StudyError::Validation("study name is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let generated = pick(req.generated_dir.as_deref(), req.n_generated, "generated", &mut rng)?;
        let real = pick(req.real_dir.as_deref(), req.n_real, "real", &mut rng)?;
        let mut picked: Vec<(Origin, PathBuf)> = generated
            .into_iter()
            .map(|p| (Origin::Generated, p))
            .chain(real.into_iter().map(|p| (Origin::Real, p)))
            .collect();
        picked.shuffle(&mut rng);

        let mut h = Sha256::new();
        h.update(req.name.as_bytes());
        h.update(req.seed.to_le_bytes());
        h.update(now.to_le_bytes());
        h.update((self.studies.len() as u64).to_le_bytes());
        let id = format!("s{}", &hex::encode(h.finalize())[..10]);

        let dir = self.root.join(IMAGES).join(&id);
        std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let mut roster = Vec::with_capacity(picked.len());
        for (k, (origin, source)) in picked.into_iter().enumerate() {
            let image_id = format!("{id}-{k:03}");
            let ext = source.extension().and_then(|e| e.to_str()).unwrap_or("png").to_ascii_lowercase();
            let rel = PathBuf::from(IMAGES).join(&id).join(format!("{image_id}.{ext}"));
            std::fs::copy(&source, self.root.join(&rel)).map_err(io_at(&source))?;
            roster.push(RosterImage {
                image_id,
                origin,
                file: rel,
                source,
            });
        }
        let study = Study {
            id,
            name: req.name.clone(),
            prompt: req.prompt.clone(),
            scale: Scale::default(),
            roster,
            shuffle_seed: req.seed,
            created_at: now,
        };
        append_record(&self.root.join(STUDIES), &study)?;
        self.by_id.insert(study.id.clone(), self.studies.len());
        self.studies.push(study.clone());
        Ok(study)
    }

    pub fn session(&self, study_id: &str, rater: &str) -> StudyResult<SessionPayload> {
        let study = self.study(study_id)?;
        let images = session_order(study, rater)
            .into_iter()
            .map(|i| {
                let img = &study.roster[i];
                let key = (study.id.clone(), rater.to_string(), img.image_id.clone());
                SessionImage {
                    image_id: img.image_id.clone(),
                    url: format!("/api/images/{}", img.image_id),
                    existing_score: self.effective.get(&key).map(|&k| self.log[k].score),
                }
            })
            .collect();
        Ok(SessionPayload {
            images,
            scale: study.scale,
            prompt: study.prompt.clone(),
        })
    }

    /// Validates and appends a rating; re-submitting the same score is a
    /// no-op, a new score supersedes the old one.
    pub fn submit(&mut self, study_id: &str, input: &RatingInput, now: u64) -> StudyResult<SubmitOutcome> {
        let study = self.study(study_id)?;
        let scale = study.scale;
        if !scale.contains(input.score) {
            return Err(StudyError::Validation(format!(
                "score {} is out of range: scale is {}..{}",
                input.score, scale.min, scale.max
            )));
        }
        if input.rater.trim().is_empty() {
            return Err(StudyError::Validation("rater token is empty".into()));
        }
        if study.image(&input.image_id).is_none() {
            return Err(StudyError::NotFound(format!("image `{}` in study `{study_id}`", input.image_id)));
        }
        let rating = Rating {
            study_id: study_id.to_string(),
            rater_id: input.rater.clone(),
            image_id: input.image_id.clone(),
            score: input.score as u8,
            timestamp: now,
        };
        let key = (rating.study_id.clone(), rating.rater_id.clone(), rating.image_id.clone());
        if let Some(&k) = self.effective.get(&key) {
            if self.log[k].score == rating.score {
                return Ok(SubmitOutcome {
                    rating: self.log[k].clone(),
                    recorded: false,
                });
            }
        }
        append_record(&self.root.join(RATINGS), &rating)?;
        self.index(rating.clone());
        Ok(SubmitOutcome { rating, recorded: true })
    }

    /// Effective ratings of a study, one per (rater, image).
    pub fn ratings(&self, study_id: &str) -> Vec<&Rating> {
        let mut idx: Vec<usize> = self
            .effective
            .iter()
            .filter(|((s, _, _), _)| s == study_id)
            .map(|(_, &i)| i)
            .collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| &self.log[i]).collect()
    }

    /// Every submission for one (rater, image), oldest first.
    pub fn audit(&self, study_id: &str, rater: &str, image_id: &str) -> Vec<&Rating> {
        self.log
            .iter()
            .filter(|r| r.study_id == study_id && r.rater_id == rater && r.image_id == image_id)
            .collect()
    }

    pub fn report(&self, study_id: &str, thresholds: &[f64], rule: BoundaryRule) -> StudyResult<AggregateReport> {
        let study = self.study(study_id)?;
        aggregate(study, &self.ratings(study_id), thresholds, rule)
    }

    /// On-disk path and file extension of a roster image.
    pub fn image_file(&self, image_id: &str) -> StudyResult<PathBuf> {
        let study_id = image_id.rsplit_once('-').map(|(s, _)| s).unwrap_or("");
        let img = self
            .by_id
            .get(study_id)
            .and_then(|&i| self.studies[i].image(image_id))
            .ok_or_else(|| StudyError::NotFound(format!("image `{image_id}`")))?;
        Ok(self.root.join(&img.file))
    }
}
