use serde::{Deserialize, Serialize};

/// Feedback controller for the augmentation probability.
///
/// The overfitting signal is `rt = mean(sign(D(real)))` accumulated over
/// `interval` minibatches; after that many minibatches `p` moves one step
/// towards reducing `|rt − target|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaState {
    pub p: f64,
    pub target: f64,
    /// Change in `p` per thousand images.
    pub speed_per_kimg: f64,
    pub interval: usize,
    pub cap: f64,
    sign_sum: f64,
    score_count: usize,
    minibatch_counter: usize,
    /// `rt` at the most recent adjustment.
    pub last_rt: Option<f64>,
    pub adjustments: u64,
}

impl Default for AdaState {
    fn default() -> Self {
        Self::new(0.6, 1.0 / 500.0)
    }
}

impl AdaState {
    pub fn new(target: f64, speed_per_kimg: f64) -> Self {
        Self {
            p: 0.0,
            target,
            speed_per_kimg,
            interval: 4,
            cap: 0.95,
            sign_sum: 0.0,
            score_count: 0,
            minibatch_counter: 0,
            last_rt: None,
            adjustments: 0,
        }
    }

    pub fn minibatch_counter(&self) -> usize {
        self.minibatch_counter
    }

    /// Feeds one minibatch of raw real scores and returns the current `p`.
    pub fn update(&mut self, d_real_scores: &[f64], images_per_minibatch: usize) -> f64 {
        for &s in d_real_scores {
            self.sign_sum += sign(s);
        }
        self.score_count += d_real_scores.len();
        self.minibatch_counter += 1;
        if self.minibatch_counter >= self.interval {
            let rt = if self.score_count == 0 {
                0.0
            } else {
                self.sign_sum / self.score_count as f64
            };
            self.adjust(rt, images_per_minibatch);
        }
        self.p
    }

    /// One adjustment from an already-averaged signal; resets the
    /// accumulator.
    pub fn adjust(&mut self, rt: f64, images_per_minibatch: usize) {
        let images = (self.interval * images_per_minibatch) as f64;
        let step = sign(rt - self.target) * self.speed_per_kimg * images / 1000.0;
        self.p = (self.p + step).clamp(0.0, self.cap);
        self.last_rt = Some(rt);
        self.adjustments += 1;
        self.sign_sum = 0.0;
        self.score_count = 0;
        self.minibatch_counter = 0;
    }

    /// Size of one adjustment in `p` units.
    pub fn step_size(&self, images_per_minibatch: usize) -> f64 {
        self.speed_per_kimg * (self.interval * images_per_minibatch) as f64 / 1000.0
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
