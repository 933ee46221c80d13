//! Feature-trajectory data model.
//!
//! A video is represented by one feature vector per frame ([`FeatureSequence`])
//! or, before pooling, by a square grid of encoder tokens per frame
//! ([`TokenGridSequence`]). [`pool_tokens`] averages the token grid into an
//! `S x S` grid of regions, producing a [`RegionSequence`] that the Taylor
//! engine scores region by region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Storage element of a token grid. Arithmetic always happens in `f64`.
pub trait Sample: Copy + Send + Sync + 'static {
    fn to_f64(self) -> f64;
}

impl Sample for f32 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Sample for f64 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

fn check_finite<S: Sample>(data: &[S]) -> Result<()> {
    match data.iter().position(|v| !v.to_f64().is_finite()) {
        Some(i) => Err(Error::InvalidData(format!(
            "non-finite value at flat index {i}"
        ))),
        None => Ok(()),
    }
}

/// How a scored sequence was spatially aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolSpec {
    /// `S x S` regions pooled from a token grid.
    Regions(usize),
    /// Input was already one vector per frame.
    PrePooled,
}

impl std::fmt::Display for PoolSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolSpec::Regions(s) => write!(f, "{s}"),
            PoolSpec::PrePooled => f.write_str("pre-pooled"),
        }
    }
}

impl Serialize for PoolSpec {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> std::result::Result<Z::Ok, Z::Error> {
        match self {
            PoolSpec::Regions(s) => serializer.serialize_u64(*s as u64),
            PoolSpec::PrePooled => serializer.serialize_str("pre-pooled"),
        }
    }
}

/// `T` frames of `D`-dimensional features, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
    /// Encoder layer the features were taken from. Informational only.
    pub layer_index: Option<i32>,
    /// Frame rate of the source video. Informational only.
    pub source_fps: Option<f64>,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyInput);
        }
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be at least 1".into()));
        }
        if data.len() != frames * dim {
            return Err(Error::Shape(format!(
                "data length {} != frames {frames} x dim {dim}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            frames,
            dim,
            data,
            layer_index: None,
            source_fps: None,
        })
    }

    /// Builds a sequence from per-frame rows, which must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (t, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Shape(format!(
                    "frame {t} has dimension {} but frame 0 has {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn with_layer_index(mut self, layer: i32) -> Self {
        self.layer_index = Some(layer);
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Keeps only the listed frames, in the given order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &t in indices {
            if t >= self.frames {
                return Err(Error::InvalidConfig(format!(
                    "frame {t} out of range for {} frames",
                    self.frames
                )));
            }
            data.extend_from_slice(self.frame(t));
        }
        let mut out = Self::new(indices.len(), self.dim, data)?;
        out.layer_index = self.layer_index;
        out.source_fps = self.source_fps;
        Ok(out)
    }
}

/// `T` frames of `G x G` tokens of dimension `D`: frame-major, then
/// token-row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGridSequence<S = f64> {
    frames: usize,
    grid_side: usize,
    dim: usize,
    data: Vec<S>,
    pub layer_index: Option<i32>,
}

impl<S: Sample> TokenGridSequence<S> {
    pub fn new(frames: usize, grid_side: usize, dim: usize, data: Vec<S>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyInput);
        }
        if grid_side == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "grid side ({grid_side}) and dim ({dim}) must be at least 1"
            )));
        }
        let expected = frames * grid_side * grid_side * dim;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} != {frames} x {grid_side}^2 x {dim}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            frames,
            grid_side,
            dim,
            data,
            layer_index: None,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn token(&self, t: usize, row: usize, col: usize) -> &[S] {
        let start = ((t * self.grid_side + row) * self.grid_side + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let stride = self.tokens_per_frame() * self.dim;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &t in indices {
            if t >= self.frames {
                return Err(Error::InvalidConfig(format!(
                    "frame {t} out of range for {} frames",
                    self.frames
                )));
            }
            data.extend_from_slice(&self.data[t * stride..(t + 1) * stride]);
        }
        let mut out = Self::new(indices.len(), self.grid_side, self.dim, data)?;
        out.layer_index = self.layer_index;
        Ok(out)
    }
}

/// Number of regions per side of the pooling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub regions_per_side: usize,
}

impl PoolConfig {
    pub fn new(regions_per_side: usize) -> Self {
        Self { regions_per_side }
    }

    /// Global mean pooling.
    pub fn global() -> Self {
        Self::new(1)
    }
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self::global()
    }
}

/// `T` frames of `R = S*S` region features of dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSequence {
    frames: usize,
    regions_per_side: usize,
    dim: usize,
    data: Vec<f64>,
}

impl RegionSequence {
    pub fn new(frames: usize, regions_per_side: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyInput);
        }
        if regions_per_side == 0 || dim == 0 {
            return Err(Error::Shape(
                "regions per side and dim must be at least 1".into(),
            ));
        }
        let r = regions_per_side * regions_per_side;
        if data.len() != frames * r * dim {
            return Err(Error::Shape(format!(
                "data length {} != {frames} x {r} x {dim}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            frames,
            regions_per_side,
            dim,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn regions(&self) -> usize {
        self.regions_per_side * self.regions_per_side
    }

    pub fn regions_per_side(&self) -> usize {
        self.regions_per_side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn region(&self, t: usize, r: usize) -> &[f64] {
        let start = (t * self.regions() + r) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Views each frame as one `R*D` vector (regions concatenated in order).
    pub fn concat_regions(&self) -> FeatureSequence {
        FeatureSequence::new(self.frames, self.regions() * self.dim, self.data.clone())
            .expect("region data already validated")
    }
}

/// A step injected into a synthetic trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurpriseEvent {
    pub frame_index: usize,
    pub jump_magnitude: f64,
}

/// Half-open token ranges `[floor(b*G/S), floor((b+1)*G/S))` along one axis.
pub fn region_bounds(grid_side: usize, regions_per_side: usize) -> Vec<(usize, usize)> {
    (0..regions_per_side)
        .map(|b| {
            (
                b * grid_side / regions_per_side,
                (b + 1) * grid_side / regions_per_side,
            )
        })
        .collect()
}

/// Averages each frame's token grid into `S x S` regions.
///
/// Every token lands in exactly one region. Sums run over tokens in
/// row-major order with `f64` accumulation, so the output does not depend
/// on the storage type beyond the stored values themselves.
pub fn pool_tokens<S: Sample>(grid: &TokenGridSequence<S>, cfg: PoolConfig) -> Result<RegionSequence> {
    let s = cfg.regions_per_side;
    let g = grid.grid_side;
    if s == 0 {
        return Err(Error::InvalidConfig("pool size S must be at least 1".into()));
    }
    if s > g {
        return Err(Error::InvalidConfig(format!(
            "pool size S={s} exceeds grid side G={g}"
        )));
    }
    let d = grid.dim;
    let bounds = region_bounds(g, s);
    let mut out = vec![0.0f64; grid.frames * s * s * d];

    for t in 0..grid.frames {
        for (a, &(r0, r1)) in bounds.iter().enumerate() {
            for (b, &(c0, c1)) in bounds.iter().enumerate() {
                let start = ((t * s + a) * s + b) * d;
                let acc = &mut out[start..start + d];
                for row in r0..r1 {
                    for col in c0..c1 {
                        for (dst, src) in acc.iter_mut().zip(grid.token(t, row, col)) {
                            *dst += src.to_f64();
                        }
                    }
                }
                let count = ((r1 - r0) * (c1 - c0)) as f64;
                for v in acc.iter_mut() {
                    *v /= count;
                }
            }
        }
    }

    Ok(RegionSequence {
        frames: grid.frames,
        regions_per_side: s,
        dim: d,
        data: out,
    })
}

/// Drops the singleton region axis of a globally pooled sequence.
pub fn flatten_to_features(regions: RegionSequence) -> Result<FeatureSequence> {
    if regions.regions() != 1 {
        return Err(Error::Shape(format!(
            "expected a single region per frame, found {}; score per region instead",
            regions.regions()
        )));
    }
    FeatureSequence::new(regions.frames, regions.dim, regions.data)
}

/// Parameters for [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub frames: usize,
    pub dim: usize,
    /// Degree of the smooth base polynomial, at most 3.
    pub base_degree: usize,
    pub events: Vec<SurpriseEvent>,
    pub seed: u64,
}

pub const MAX_SYNTH_DEGREE: usize = 3;

impl SynthSpec {
    /// Minimum spacing between consecutive events for this base degree.
    pub fn min_event_gap(&self) -> usize {
        2 * (self.base_degree + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidConfig("frames must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be at least 1".into()));
        }
        if self.base_degree > MAX_SYNTH_DEGREE {
            return Err(Error::InvalidConfig(format!(
                "base degree {} exceeds {MAX_SYNTH_DEGREE}",
                self.base_degree
            )));
        }
        let gap = self.min_event_gap();
        for (i, ev) in self.events.iter().enumerate() {
            if ev.frame_index == 0 || ev.frame_index >= self.frames {
                return Err(Error::InvalidConfig(format!(
                    "event frame {} outside [1, {})",
                    ev.frame_index, self.frames
                )));
            }
            if !(ev.jump_magnitude.is_finite() && ev.jump_magnitude > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "event at frame {} has non-positive magnitude {}",
                    ev.frame_index, ev.jump_magnitude
                )));
            }
            if i > 0 {
                let prev = self.events[i - 1].frame_index;
                if ev.frame_index <= prev {
                    return Err(Error::InvalidConfig(format!(
                        "events not strictly increasing: {prev} then {}",
                        ev.frame_index
                    )));
                }
                if ev.frame_index - prev < gap {
                    return Err(Error::InvalidConfig(format!(
                        "events at {prev} and {} are closer than {gap} frames",
                        ev.frame_index
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic piecewise-polynomial trajectory with persistent steps.
///
/// Each component follows `c0 + c1*t + c2*t^2/T + c3*t^3/T^2` (terms above the
/// base degree dropped, coefficients uniform in [-1, 1]), so the per-frame
/// change stays O(1) for every degree. At each event frame a step of exactly
/// `jump_magnitude` L2 norm is added and persists for all later frames; step
/// directions lie in the positive orthant.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<(FeatureSequence, Vec<SurpriseEvent>)> {
    spec.validate()?;
    let (frames, dim) = (spec.frames, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let coeffs: Vec<Vec<f64>> = (0..dim)
        .map(|_| {
            (0..=spec.base_degree)
                .map(|_| rng.gen_range(-1.0..=1.0))
                .collect()
        })
        .collect();

    let steps: Vec<Vec<f64>> = spec
        .events
        .iter()
        .map(|ev| {
            let mut dir: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                dir.iter_mut().for_each(|v| *v *= ev.jump_magnitude / norm);
            } else {
                dir.iter_mut().for_each(|v| *v = 0.0);
                dir[0] = ev.jump_magnitude;
            }
            dir
        })
        .collect();

    let scale = frames as f64;
    let mut data = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        let x = t as f64;
        let basis = [1.0, x, x * x / scale, x * x * x / (scale * scale)];
        for (j, c) in coeffs.iter().enumerate() {
            let mut v: f64 = c.iter().zip(basis).map(|(c, b)| c * b).sum();
            for (ev, step) in spec.events.iter().zip(&steps) {
                if t >= ev.frame_index {
                    v += step[j];
                }
            }
            data.push(v);
        }
    }

    Ok((FeatureSequence::new(frames, dim, data)?, spec.events.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from_fn(t: usize, g: usize, d: usize, f: impl Fn(usize, usize, usize) -> f64) -> TokenGridSequence {
        let mut data = Vec::new();
        for frame in 0..t {
            for tok in 0..g * g {
                for k in 0..d {
                    data.push(f(frame, tok, k));
                }
            }
        }
        TokenGridSequence::new(t, g, d, data).unwrap()
    }

    #[test]
    fn bounds_for_non_divisible_grid() {
        assert_eq!(region_bounds(14, 4), vec![(0, 3), (3, 7), (7, 10), (10, 14)]);
    }

    #[test]
    fn global_pool_is_mean_of_all_tokens() {
        let grid = grid_from_fn(2, 14, 3, |t, tok, k| (t * 1000 + tok * 3 + k) as f64);
        let pooled = pool_tokens(&grid, PoolConfig::global()).unwrap();
        assert_eq!(pooled.regions(), 1);
        for t in 0..2 {
            for k in 0..3 {
                let mean: f64 =
                    (0..196).map(|tok| (t * 1000 + tok * 3 + k) as f64).sum::<f64>() / 196.0;
                assert!((pooled.region(t, 0)[k] - mean).abs() <= 1e-12 * mean.abs());
            }
        }
    }

    #[test]
    fn full_resolution_pool_is_identity() {
        let grid = grid_from_fn(2, 14, 2, |t, tok, k| (t + tok) as f64 * 0.5 - k as f64);
        let pooled = pool_tokens(&grid, PoolConfig::new(14)).unwrap();
        assert_eq!(pooled.regions(), 196);
        assert_eq!(pooled.data(), grid.data());
    }

    #[test]
    fn pool_rejects_bad_sizes() {
        let grid = grid_from_fn(1, 4, 1, |_, _, _| 0.0);
        assert!(matches!(
            pool_tokens(&grid, PoolConfig::new(5)),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            pool_tokens(&grid, PoolConfig::new(0)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn pool_region_sizes_at_s4() {
        let grid = grid_from_fn(1, 14, 1, |_, tok, _| tok as f64);
        let pooled = pool_tokens(&grid, PoolConfig::new(4)).unwrap();
        // Region (0,0) covers rows 0..3 and cols 0..3.
        let expected: f64 = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r * 14 + c) as f64))
            .sum::<f64>()
            / 9.0;
        assert_eq!(pooled.region(0, 0)[0], expected);
        // Region (1,1) covers rows 3..7 and cols 3..7: 16 tokens.
        let expected: f64 = (3..7)
            .flat_map(|r| (3..7).map(move |c| (r * 14 + c) as f64))
            .sum::<f64>()
            / 16.0;
        assert_eq!(pooled.region(0, 5)[0], expected);
    }

    #[test]
    fn f32_storage_pools_like_promoted_f64() {
        let g64 = grid_from_fn(3, 7, 4, |t, tok, k| ((t * 31 + tok * 7 + k) % 13) as f64 * 0.25);
        let data32: Vec<f32> = g64.data().iter().map(|&v| v as f32).collect();
        let g32 = TokenGridSequence::new(3, 7, 4, data32).unwrap();
        for s in 1..=7 {
            let a = pool_tokens(&g64, PoolConfig::new(s)).unwrap();
            let b = pool_tokens(&g32, PoolConfig::new(s)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn flatten_drops_region_axis() {
        let regions = RegionSequence::new(3, 1, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let f = flatten_to_features(regions).unwrap();
        assert_eq!((f.frames(), f.dim()), (3, 2));
        assert_eq!(f.frame(2), &[5.0, 6.0]);

        let grid = grid_from_fn(4, 3, 2, |_, _, k| k as f64 + 0.5);
        let f = flatten_to_features(pool_tokens(&grid, PoolConfig::global()).unwrap()).unwrap();
        assert!((0..4).all(|t| f.frame(t) == [0.5, 1.5]));

        let regions = RegionSequence::new(1, 2, 1, vec![0.0; 4]).unwrap();
        assert!(matches!(flatten_to_features(regions), Err(Error::Shape(_))));
    }

    #[test]
    fn sequences_reject_invalid_data() {
        assert!(matches!(FeatureSequence::new(0, 1, vec![]), Err(Error::EmptyInput)));
        assert!(matches!(FeatureSequence::new(2, 2, vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            FeatureSequence::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::InvalidData(_))
        ));
        assert!(matches!(
            TokenGridSequence::new(1, 2, 1, vec![0.0f32, 1.0, f32::INFINITY, 0.0]),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn synthetic_constant_with_single_step() {
        let spec = SynthSpec {
            frames: 10,
            dim: 1,
            base_degree: 0,
            events: vec![SurpriseEvent { frame_index: 4, jump_magnitude: 5.0 }],
            seed: 7,
        };
        let (seq, events) = gen_synthetic(&spec).unwrap();
        assert_eq!(events, spec.events);
        let c = seq.frame(0)[0];
        for t in 0..4 {
            assert_eq!(seq.frame(t)[0], c);
        }
        for t in 4..10 {
            assert!((seq.frame(t)[0] - (c + 5.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_step_has_requested_norm() {
        let spec = SynthSpec {
            frames: 30,
            dim: 8,
            base_degree: 0,
            events: vec![SurpriseEvent { frame_index: 12, jump_magnitude: 10.0 }],
            seed: 3,
        };
        let (seq, _) = gen_synthetic(&spec).unwrap();
        let jump: f64 = seq
            .frame(12)
            .iter()
            .zip(seq.frame(11))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((jump - 10.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SynthSpec {
            frames: 64,
            dim: 8,
            base_degree: 3,
            events: vec![
                SurpriseEvent { frame_index: 10, jump_magnitude: 4.0 },
                SurpriseEvent { frame_index: 30, jump_magnitude: 6.0 },
            ],
            seed: 42,
        };
        let a = gen_synthetic(&spec).unwrap().0;
        let b = gen_synthetic(&spec).unwrap().0;
        let bits = |s: &FeatureSequence| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let other = gen_synthetic(&SynthSpec { seed: 43, ..spec }).unwrap().0;
        assert_ne!(bits(&a), bits(&other));
    }

    #[test]
    fn synthetic_rejects_bad_events() {
        let base = SynthSpec {
            frames: 20,
            dim: 2,
            base_degree: 1,
            events: vec![],
            seed: 0,
        };
        let ev = |f| SurpriseEvent { frame_index: f, jump_magnitude: 1.0 };
        for events in [
            vec![ev(0)],
            vec![ev(20)],
            vec![ev(10), ev(5)],
            vec![ev(10), ev(13)],
        ] {
            let spec = SynthSpec { events, ..base.clone() };
            assert!(matches!(gen_synthetic(&spec), Err(Error::InvalidConfig(_))));
        }
        let spec = SynthSpec { base_degree: 4, ..base };
        assert!(matches!(gen_synthetic(&spec), Err(Error::InvalidConfig(_))));
    }
}
