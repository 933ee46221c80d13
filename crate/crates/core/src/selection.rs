//! Frame selection under a budget.
//!
//! Every strategy returns strictly increasing frame indices with one score per
//! index. Ties always break toward the smaller frame index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::taylor::ResidualSeries;
use crate::trajectory::{FeatureSequence, PoolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SwiftLocalMax,
    SwiftWindowArgmax,
    Uniform,
    FrameDifference,
    CosineUniqueness,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SwiftLocalMax,
        Strategy::SwiftWindowArgmax,
        Strategy::Uniform,
        Strategy::FrameDifference,
        Strategy::CosineUniqueness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SwiftLocalMax => "swift_local_max",
            Strategy::SwiftWindowArgmax => "swift_window_argmax",
            Strategy::Uniform => "uniform",
            Strategy::FrameDifference => "frame_difference",
            Strategy::CosineUniqueness => "cosine_uniqueness",
        }
    }

    /// Whether the strategy needs frame features rather than residuals.
    pub fn needs_features(self) -> bool {
        matches!(self, Strategy::FrameDifference | Strategy::CosineUniqueness)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionRequest {
    pub budget: usize,
    pub strategy: Strategy,
    /// Half-width of the local-maximum neighborhood.
    pub window: usize,
}

impl SelectionRequest {
    pub fn new(budget: usize, strategy: Strategy) -> Self {
        Self {
            budget,
            strategy,
            window: 1,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget K must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Scoring metadata carried alongside a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfigEcho {
    pub order: Option<usize>,
    pub pool: Option<PoolSpec>,
}

impl ConfigEcho {
    fn from_residuals(r: &ResidualSeries) -> Self {
        Self {
            order: Some(r.config.order()),
            pool: Some(r.pool),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub strategy: Strategy,
    pub config: ConfigEcho,
}

impl SelectionResult {
    fn from_picks(mut picks: Vec<usize>, scores: &[f64], strategy: Strategy, config: ConfigEcho) -> Self {
        picks.sort_unstable();
        let scores = picks.iter().map(|&i| scores[i]).collect();
        Self {
            indices: picks,
            scores,
            strategy,
            config,
        }
    }
}

/// Descending by score, then ascending by index.
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` highest scores, best first.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| rank_order(scores, a, b));
    idx.truncate(k);
    idx
}

/// Indices that dominate their `±window` neighborhood. Within a run of equal
/// values only the leftmost index can qualify.
pub fn local_maxima(values: &[f64], window: usize) -> Vec<usize> {
    let n = values.len();
    (0..n)
        .filter(|&t| {
            let v = values[t];
            if t > 0 && values[t - 1] == v {
                return false;
            }
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(n - 1);
            (lo..=hi).all(|s| v >= values[s])
        })
        .collect()
}

/// Local maxima of the residual series ranked by residual, topped up with the
/// best remaining frames when there are fewer than `K` maxima.
pub fn select_swift_local_max(r: &ResidualSeries, req: &SelectionRequest) -> Result<SelectionResult> {
    req.validate()?;
    let values = &r.values;
    let k = req.budget.min(values.len());

    let mut maxima = local_maxima(values, req.window);
    maxima.sort_by(|&a, &b| rank_order(values, a, b));
    maxima.truncate(k);

    if maxima.len() < k {
        let mut taken = vec![false; values.len()];
        maxima.iter().for_each(|&i| taken[i] = true);
        let fill: Vec<usize> = top_k(values, values.len())
            .into_iter()
            .filter(|&i| !taken[i])
            .take(k - maxima.len())
            .collect();
        maxima.extend(fill);
    }

    Ok(SelectionResult::from_picks(
        maxima,
        values,
        Strategy::SwiftLocalMax,
        ConfigEcho::from_residuals(r),
    ))
}

/// Contiguous-window partition `[floor(j*T/K), floor((j+1)*T/K))`.
pub fn window_bounds(frames: usize, budget: usize) -> Vec<(usize, usize)> {
    (0..budget)
        .map(|j| (j * frames / budget, (j + 1) * frames / budget))
        .collect()
}

/// Highest residual in each of `K` equal contiguous windows.
pub fn select_swift_window_argmax(r: &ResidualSeries, req: &SelectionRequest) -> Result<SelectionResult> {
    req.validate()?;
    let values = &r.values;
    let frames = values.len();
    if req.budget > frames {
        return Err(Error::BudgetExceedsFrames {
            budget: req.budget,
            frames,
        });
    }
    let picks = window_bounds(frames, req.budget)
        .into_iter()
        .map(|(lo, hi)| {
            (lo..hi)
                .min_by(|&a, &b| rank_order(values, a, b))
                .expect("windows are non-empty when K <= T")
        })
        .collect();
    Ok(SelectionResult::from_picks(
        picks,
        values,
        Strategy::SwiftWindowArgmax,
        ConfigEcho::from_residuals(r),
    ))
}

fn uniform_indices(frames: usize, budget: usize) -> Vec<usize> {
    if budget >= frames {
        return (0..frames).collect();
    }
    if budget <= 1 {
        return vec![0];
    }
    let (span, steps) = ((frames - 1) as u128, (budget - 1) as u128);
    let mut picks: Vec<usize> = (0..budget as u128)
        .map(|j| (j * span / steps) as usize)
        .collect();
    picks.dedup();
    // The step is at least one frame when K <= T, so this never triggers.
    let mut next = 0;
    while picks.len() < budget {
        if !picks.contains(&next) {
            picks.push(next);
        }
        next += 1;
    }
    picks.sort_unstable();
    picks
}

/// Evenly spaced frames `floor(j*(T-1)/(K-1))`, always including both ends.
/// Scores are zero; the strategy has no per-frame criterion.
pub fn select_uniform(frames: usize, budget: usize) -> SelectionResult {
    let indices = uniform_indices(frames, budget);
    SelectionResult {
        scores: vec![0.0; indices.len()],
        indices,
        strategy: Strategy::Uniform,
        config: ConfigEcho::default(),
    }
}

/// Uniformly spaced candidate frames from a longer video.
pub fn subsample_candidates(total_frames: usize, pool: usize) -> Vec<usize> {
    if total_frames == 0 {
        return Vec::new();
    }
    uniform_indices(total_frames, pool.max(1))
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `‖f_t - f_{t-1}‖₂` with frame 0 scoring 0.
pub fn frame_difference_scores(features: &FeatureSequence) -> Vec<f64> {
    (0..features.frames())
        .map(|t| {
            if t == 0 {
                0.0
            } else {
                l2_distance(features.frame(t), features.frame(t - 1))
            }
        })
        .collect()
}

/// Top-`K` frames by adjacent-frame feature change.
pub fn select_frame_difference(features: &FeatureSequence, req: &SelectionRequest) -> Result<SelectionResult> {
    req.validate()?;
    let scores = frame_difference_scores(features);
    let picks = top_k(&scores, req.budget);
    Ok(SelectionResult::from_picks(
        picks,
        &scores,
        Strategy::FrameDifference,
        ConfigEcho::default(),
    ))
}

/// `1 - max_{s != t} cos(f_t, f_s)`. Zero vectors have similarity 0 with
/// every frame. A single frame has uniqueness 1.
pub fn cosine_uniqueness_scores(features: &FeatureSequence) -> Vec<f64> {
    let frames = features.frames();
    let norms: Vec<f64> = (0..frames)
        .map(|t| features.frame(t).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut max_sim = vec![f64::NEG_INFINITY; frames];
    for t in 0..frames {
        for s in t + 1..frames {
            let sim = if norms[t] == 0.0 || norms[s] == 0.0 {
                0.0
            } else {
                let dot: f64 = features
                    .frame(t)
                    .iter()
                    .zip(features.frame(s))
                    .map(|(a, b)| a * b)
                    .sum();
                dot / (norms[t] * norms[s])
            };
            max_sim[t] = max_sim[t].max(sim);
            max_sim[s] = max_sim[s].max(sim);
        }
    }
    max_sim
        .into_iter()
        .map(|m| if m.is_finite() { 1.0 - m } else { 1.0 })
        .collect()
}

/// Top-`K` frames least similar to their most similar other frame.
pub fn select_cosine_uniqueness(features: &FeatureSequence, req: &SelectionRequest) -> Result<SelectionResult> {
    req.validate()?;
    let scores = cosine_uniqueness_scores(features);
    let picks = top_k(&scores, req.budget);
    Ok(SelectionResult::from_picks(
        picks,
        &scores,
        Strategy::CosineUniqueness,
        ConfigEcho::default(),
    ))
}

/// Runs `req.strategy`. Feature-based baselines need `features`, which must
/// have as many frames as the residual series. Uniform selections report the
/// residual of each chosen frame as its score.
pub fn select(
    req: &SelectionRequest,
    residuals: &ResidualSeries,
    features: Option<&FeatureSequence>,
) -> Result<SelectionResult> {
    req.validate()?;
    let echo = ConfigEcho::from_residuals(residuals);
    let feature_input = || -> Result<&FeatureSequence> {
        let f = features.ok_or_else(|| {
            Error::InvalidConfig(format!("strategy {} requires frame features", req.strategy))
        })?;
        if f.frames() != residuals.frames() {
            return Err(Error::Shape(format!(
                "features have {} frames but residuals have {}",
                f.frames(),
                residuals.frames()
            )));
        }
        Ok(f)
    };
    let mut result = match req.strategy {
        Strategy::SwiftLocalMax => select_swift_local_max(residuals, req)?,
        Strategy::SwiftWindowArgmax => select_swift_window_argmax(residuals, req)?,
        Strategy::Uniform => {
            let mut r = select_uniform(residuals.frames(), req.budget);
            r.scores = r.indices.iter().map(|&i| residuals.values[i]).collect();
            r
        }
        Strategy::FrameDifference => select_frame_difference(feature_input()?, req)?,
        Strategy::CosineUniqueness => select_cosine_uniqueness(feature_input()?, req)?,
    };
    result.config = echo;
    Ok(result)
}

/// `|A ∩ B| / |A ∪ B|` over sorted index sets; 1 when both are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
