//! Backward finite differences, the truncated Taylor predictor, and the
//! per-frame residual it leaves behind.
//!
//! With unit frame spacing the order-`N` predictor of `f_t` is
//!
//! ```text
//! f̂_t = Σ_{n=0..N} (1/n!) Δⁿ f_{t-1},   Δⁿ f_{t-1} = Σ_{k=0..n} (-1)^k C(n,k) f_{t-1-k}
//! ```
//!
//! and the residual is `r_t = ‖f_t - f̂_t‖₂`. Swapping the two sums gives one
//! weight per lag, so the production path is a single weighted sum over the
//! history. [`reference`] keeps the literal double sum for cross-checking.
//!
//! The predictor is not the Newton backward interpolant: it reproduces
//! constants and straight lines exactly but leaves a residual on quadratics
//! (`t²` at `t = 5`, `N = 2` predicts 24, not 25).

use crate::error::{Error, Result};
use crate::trajectory::{FeatureSequence, PoolSpec, RegionSequence};

/// Largest order whose factorials and binomials are exact in `f64`.
pub const MAX_ORDER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorConfig {
    order: usize,
    step: f64,
}

impl TaylorConfig {
    pub fn new(order: usize) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order,
                max: MAX_ORDER,
            });
        }
        Ok(Self { order, step: 1.0 })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Frame spacing. Always 1.
    pub fn step(&self) -> f64 {
        self.step
    }
}

impl Default for TaylorConfig {
    fn default() -> Self {
        Self {
            order: 3,
            step: 1.0,
        }
    }
}

/// `n!` by integer recurrence.
pub fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Row `n` of Pascal's triangle, built additively.
pub fn binomial_row(n: usize) -> Vec<u64> {
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(1);
        next.extend(row.windows(2).map(|w| w[0] + w[1]));
        next.push(1);
        row = next;
    }
    row
}

/// Weights of the order-`n` backward difference, most recent sample first.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilTable {
    pub order: usize,
    pub weights: Vec<f64>,
}

impl StencilTable {
    /// Applies the stencil to `samples[0] = x(t0), samples[k] = x(t0 - k)`.
    pub fn apply(&self, samples: &[f64]) -> f64 {
        self.weights.iter().zip(samples).map(|(w, x)| w * x).sum()
    }
}

/// `w_k = (-1)^k C(order, k)` for `k = 0..=order`.
pub fn fd_coefficients(order: usize) -> Result<StencilTable> {
    if order > MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            order,
            max: MAX_ORDER,
        });
    }
    let weights = binomial_row(order)
        .into_iter()
        .enumerate()
        .map(|(k, c)| if k % 2 == 0 { c as f64 } else { -(c as f64) })
        .collect();
    Ok(StencilTable { order, weights })
}

/// Per-lag weights of the order-`order` predictor:
/// `w_k = Σ_{n=k..order} (-1)^k C(n,k) / n!`. Lag 0 is `f_{t-1}`.
pub fn predictor_weights(order: usize) -> Result<Vec<f64>> {
    let mut weights = vec![0.0; order + 1];
    for n in 0..=order {
        let stencil = fd_coefficients(n)?;
        let inv_fact = 1.0 / factorial(n) as f64;
        for (w, s) in weights.iter_mut().zip(&stencil.weights) {
            *w += s * inv_fact;
        }
    }
    Ok(weights)
}

/// Predicts `f_t` from `history = [f_{t-1}, f_{t-2}, ..., f_{t-1-N}]`.
pub fn taylor_predict<H: AsRef<[f64]>>(history: &[H], cfg: TaylorConfig) -> Result<Vec<f64>> {
    if history.len() != cfg.order + 1 {
        return Err(Error::Shape(format!(
            "order {} needs {} history frames, got {}",
            cfg.order,
            cfg.order + 1,
            history.len()
        )));
    }
    let dim = history[0].as_ref().len();
    if let Some(k) = history.iter().position(|h| h.as_ref().len() != dim) {
        return Err(Error::Shape(format!(
            "history frame {k} has dimension {} but frame 0 has {dim}",
            history[k].as_ref().len()
        )));
    }
    let weights = predictor_weights(cfg.order)?;
    let mut pred = vec![0.0; dim];
    for (w, h) in weights.iter().zip(history) {
        for (p, x) in pred.iter_mut().zip(h.as_ref()) {
            *p += w * x;
        }
    }
    Ok(pred)
}

/// Read access to per-frame, per-region feature vectors.
pub trait FrameRegions {
    fn frames(&self) -> usize;
    fn regions(&self) -> usize;
    fn dim(&self) -> usize;
    fn region(&self, t: usize, r: usize) -> &[f64];
    fn pool_spec(&self) -> PoolSpec;
}

impl FrameRegions for FeatureSequence {
    fn frames(&self) -> usize {
        FeatureSequence::frames(self)
    }
    fn regions(&self) -> usize {
        1
    }
    fn dim(&self) -> usize {
        FeatureSequence::dim(self)
    }
    fn region(&self, t: usize, _r: usize) -> &[f64] {
        self.frame(t)
    }
    fn pool_spec(&self) -> PoolSpec {
        PoolSpec::PrePooled
    }
}

impl FrameRegions for RegionSequence {
    fn frames(&self) -> usize {
        RegionSequence::frames(self)
    }
    fn regions(&self) -> usize {
        RegionSequence::regions(self)
    }
    fn dim(&self) -> usize {
        RegionSequence::dim(self)
    }
    fn region(&self, t: usize, r: usize) -> &[f64] {
        RegionSequence::region(self, t, r)
    }
    fn pool_spec(&self) -> PoolSpec {
        PoolSpec::Regions(self.regions_per_side())
    }
}

/// Per-frame Taylor residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    pub values: Vec<f64>,
    /// Effective order per frame; `-1` for frame 0, which has no history.
    pub order_used: Vec<i32>,
    pub config: TaylorConfig,
    pub pool: PoolSpec,
}

impl ResidualSeries {
    /// Wraps externally computed residuals (e.g. from a bindings layer).
    pub fn from_values(values: Vec<f64>, config: TaylorConfig, pool: PoolSpec) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(t) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidData(format!(
                "residual at frame {t} is not a finite non-negative number"
            )));
        }
        let order_used = effective_orders(values.len(), config.order);
        Ok(Self {
            values,
            order_used,
            config,
            pool,
        })
    }

    pub fn frames(&self) -> usize {
        self.values.len()
    }

    /// Residuals scaled by `c` (for invariance checks on selection).
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// `min(N, t-1)` for `t >= 1`, with `-1` at `t = 0`.
pub fn effective_orders(frames: usize, order: usize) -> Vec<i32> {
    (0..frames)
        .map(|t| if t == 0 { -1 } else { order.min(t - 1) as i32 })
        .collect()
}

/// Residual of every frame against its Taylor extrapolation.
///
/// Frame `t >= 1` uses order `min(N, t-1)`; frame 0 scores 0. With several
/// regions per frame the frame score is the mean of the per-region L2
/// residuals, accumulated in region order.
pub fn residual_series<F: FrameRegions + ?Sized>(features: &F, cfg: TaylorConfig) -> Result<ResidualSeries> {
    let frames = features.frames();
    if frames == 0 {
        return Err(Error::EmptyInput);
    }
    let regions = features.regions();
    let dim = features.dim();
    let weights: Vec<Vec<f64>> = (0..=cfg.order)
        .map(predictor_weights)
        .collect::<Result<_>>()?;

    let mut values = Vec::with_capacity(frames);
    let mut pred = vec![0.0f64; dim];
    values.push(0.0);
    for t in 1..frames {
        let w = &weights[cfg.order.min(t - 1)];
        let mut total = 0.0;
        for r in 0..regions {
            pred.copy_from_slice(features.region(t - 1, r));
            pred.iter_mut().for_each(|p| *p *= w[0]);
            for (k, wk) in w.iter().enumerate().skip(1) {
                for (p, x) in pred.iter_mut().zip(features.region(t - 1 - k, r)) {
                    *p += wk * x;
                }
            }
            let sq: f64 = features
                .region(t, r)
                .iter()
                .zip(&pred)
                .map(|(x, p)| (x - p) * (x - p))
                .sum();
            total += sq.sqrt();
        }
        values.push(total / regions as f64);
    }

    Ok(ResidualSeries {
        values,
        order_used: effective_orders(frames, cfg.order),
        config: cfg,
        pool: features.pool_spec(),
    })
}

/// Innovation scale of the isotropic Gaussian surprise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurpriseParams {
    pub sigma: f64,
}

/// Self-information of a residual up to an additive constant: `r² / (2σ²)`.
pub fn surprise(residual: f64, params: SurpriseParams) -> Result<f64> {
    let sigma = params.sigma;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    if !(residual.is_finite() && residual >= 0.0) {
        return Err(Error::InvalidData(format!(
            "residual must be finite and non-negative, got {residual}"
        )));
    }
    Ok(residual * residual / (2.0 * sigma * sigma))
}

/// Brute-force residuals used to cross-check [`residual_series`].
pub mod reference {
    use super::*;

    fn factorial_naive(n: usize) -> f64 {
        let mut f = 1u64;
        for i in 2..=n as u64 {
            f *= i;
        }
        f as f64
    }

    fn binomial_naive(n: usize, k: usize) -> f64 {
        (factorial_naive(n) / (factorial_naive(k) * factorial_naive(n - k))).round()
    }

    /// Same contract as [`residual_series`], evaluated term by term: every
    /// derivative estimate is formed separately and divided by its factorial.
    pub fn residual_series_oracle<F: FrameRegions + ?Sized>(features: &F, cfg: TaylorConfig) -> Result<ResidualSeries> {
        let frames = features.frames();
        if frames == 0 {
            return Err(Error::EmptyInput);
        }
        let (regions, dim) = (features.regions(), features.dim());
        let mut values = vec![0.0; frames];
        for (t, value) in values.iter_mut().enumerate().skip(1) {
            let order = cfg.order().min(t - 1);
            let mut per_region = Vec::with_capacity(regions);
            for r in 0..regions {
                let mut sq = 0.0;
                for d in 0..dim {
                    let mut pred = 0.0;
                    for n in 0..=order {
                        let mut deriv = 0.0;
                        for k in 0..=n {
                            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                            deriv += sign * binomial_naive(n, k) * features.region(t - 1 - k, r)[d];
                        }
                        pred += deriv / factorial_naive(n);
                    }
                    let e = features.region(t, r)[d] - pred;
                    sq += e * e;
                }
                per_region.push(sq.sqrt());
            }
            *value = per_region.iter().sum::<f64>() / regions as f64;
        }
        Ok(ResidualSeries {
            values,
            order_used: effective_orders(frames, cfg.order()),
            config: cfg,
            pool: features.pool_spec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(values: &[f64]) -> FeatureSequence {
        FeatureSequence::new(values.len(), 1, values.to_vec()).unwrap()
    }

    fn cfg(n: usize) -> TaylorConfig {
        TaylorConfig::new(n).unwrap()
    }

    #[test]
    fn stencils_low_orders() {
        assert_eq!(fd_coefficients(0).unwrap().weights, vec![1.0]);
        assert_eq!(fd_coefficients(1).unwrap().weights, vec![1.0, -1.0]);
        assert_eq!(fd_coefficients(2).unwrap().weights, vec![1.0, -2.0, 1.0]);
        assert_eq!(fd_coefficients(3).unwrap().weights, vec![1.0, -3.0, 3.0, -1.0]);
    }

    #[test]
    fn stencil_order_limit() {
        assert!(fd_coefficients(12).is_ok());
        assert!(matches!(
            fd_coefficients(13),
            Err(Error::UnsupportedOrder { order: 13, .. })
        ));
        assert!(TaylorConfig::new(13).is_err());
    }

    #[test]
    fn stencil_weights_sum_to_zero() {
        for n in 1..=MAX_ORDER {
            let w = fd_coefficients(n).unwrap().weights;
            assert_eq!(w.iter().sum::<f64>(), 0.0, "order {n}");
            assert_eq!(w[0], 1.0);
            assert!(w.windows(2).all(|p| p[0].signum() != p[1].signum()));
        }
    }

    #[test]
    fn collapsed_weights_order_three() {
        // 1 + 1 + 1/2 + 1/6, -(1 + 2/2 + 3/6), 1/2 + 3/6, -1/6
        let w = predictor_weights(3).unwrap();
        let expected = [8.0 / 3.0, -2.5, 1.0, -1.0 / 6.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn predict_constant_and_linear() {
        for n in 0..=6 {
            let hist = vec![vec![2.5, -1.0]; n + 1];
            let p = taylor_predict(&hist, cfg(n)).unwrap();
            assert!((p[0] - 2.5).abs() < 1e-12 && (p[1] + 1.0).abs() < 1e-12);
        }
        let p = taylor_predict(&[[4.0], [3.0]], cfg(1)).unwrap();
        assert_eq!(p, vec![5.0]);
    }

    #[test]
    fn predict_quadratic_leaves_unit_residual() {
        let p = taylor_predict(&[[16.0], [9.0], [4.0]], cfg(2)).unwrap();
        assert_eq!(p, vec![24.0]);
    }

    #[test]
    fn predict_rejects_bad_history() {
        assert!(matches!(
            taylor_predict(&[[1.0], [2.0]], cfg(2)),
            Err(Error::Shape(_))
        ));
        let hist: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(taylor_predict(&hist, cfg(1)), Err(Error::Shape(_))));
    }

    #[test]
    fn residuals_of_simple_sequences() {
        let r = residual_series(&scalar(&[0.0, 0.0, 0.0, 10.0]), cfg(1)).unwrap();
        assert_eq!(r.values, vec![0.0, 0.0, 0.0, 10.0]);
        assert_eq!(r.order_used, vec![-1, 0, 1, 1]);

        let r = residual_series(&scalar(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0]), cfg(1)).unwrap();
        assert_eq!(&r.values[3..], &[10.0, 10.0, 0.0]);

        let squares: Vec<f64> = (0..6).map(|t| (t * t) as f64).collect();
        let r = residual_series(&scalar(&squares), cfg(2)).unwrap();
        assert!((r.values[5] - 1.0).abs() < 1e-12);
        let o = reference::residual_series_oracle(&scalar(&squares), cfg(2)).unwrap();
        assert!((o.values[5] - 1.0).abs() < 1e-12);

        for n in [0, 3, 12] {
            let r = residual_series(&scalar(&[7.25; 20]), cfg(n)).unwrap();
            assert!(r.values.iter().all(|&v| v.abs() <= 1e-12), "order {n}: {:?}", r.values);
        }
    }

    #[test]
    fn region_residuals_are_averaged() {
        // One region of dim 2; the second component jumps by 4 at frame 2.
        let regions = RegionSequence::new(3, 1, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 4.0]).unwrap();
        let r = residual_series(&regions, cfg(1)).unwrap();
        assert_eq!(r.pool, PoolSpec::Regions(1));
        assert_eq!(r.values[2], 4.0);

        // R = 4 regions with dim 1; only region 3 jumps by 8: mean is 2.
        let mut data = vec![0.0; 4 * 3];
        data[2 * 4 + 3] = 8.0;
        let seq = RegionSequence::new(3, 2, 1, data).unwrap();
        assert_eq!(residual_series(&seq, cfg(1)).unwrap().values, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn surprise_values_and_errors() {
        let p = |s| SurpriseParams { sigma: s };
        assert_eq!(surprise(0.0, p(1.0)).unwrap(), 0.0);
        assert_eq!(surprise(2.0, p(1.0)).unwrap(), 2.0);
        assert_eq!(surprise(3.0, p(3.0)).unwrap(), 0.5);
        assert!(matches!(surprise(1.0, p(0.0)), Err(Error::InvalidConfig(_))));
        assert!(matches!(surprise(1.0, p(-2.0)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn from_values_validates() {
        assert!(ResidualSeries::from_values(vec![], cfg(3), PoolSpec::PrePooled).is_err());
        assert!(ResidualSeries::from_values(vec![0.0, -1.0], cfg(3), PoolSpec::PrePooled).is_err());
        let r = ResidualSeries::from_values(vec![0.0; 6], cfg(3), PoolSpec::PrePooled).unwrap();
        assert_eq!(r.order_used, vec![-1, 0, 1, 2, 3, 3]);
    }

    proptest! {
        #[test]
        fn surprise_is_monotone(a in 0.0f64..1e3, b in 0.0f64..1e3, sigma in 1e-3f64..1e3) {
            prop_assume!(b > a * (1.0 + 1e-9) && b * b / (2.0 * sigma * sigma) > 1e-300);
            let p = SurpriseParams { sigma };
            prop_assert!(surprise(a, p).unwrap() < surprise(b, p).unwrap());
        }

        #[test]
        fn matches_reference(
            frames in 1usize..24,
            dim in 1usize..6,
            order in 0usize..=6,
            seed in any::<u64>(),
        ) {
            let mut state = seed | 1;
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            };
            let data: Vec<f64> = (0..frames * dim).map(|_| next()).collect();
            let seq = FeatureSequence::new(frames, dim, data).unwrap();
            let fast = residual_series(&seq, cfg(order)).unwrap();
            let slow = reference::residual_series_oracle(&seq, cfg(order)).unwrap();
            for (a, b) in fast.values.iter().zip(&slow.values) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(*b) + 1e-300);
            }
        }
    }
}
