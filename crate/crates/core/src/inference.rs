//! Percentile bootstrap for the three estimators.
//!
//! Each replicate resamples the main and auxiliary samples independently
//! with replacement (keeping both sizes), refits both bridges from a fresh
//! initialization and recomputes every estimator. Replicate `b` draws its
//! rows from `rng::stream(seed, b)` and fits with config seed
//! `rng::split_seed(cfg.seed, b + 1)`, so results do not depend on thread
//! scheduling. Interval endpoints are empirical quantiles with linear
//! interpolation between order statistics: for sorted draws
//! `z_0 <= ... <= z_{B-1}` the `p`-quantile is
//! `z_k + (h - k)(z_{k+1} - z_k)` with `h = (B - 1) p`, `k = floor(h)`.

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{AuxSample, MainSample};
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, Bridge, EstimatorKind, PointEstimates};
use crate::minimax::{fit_bridges, FitConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Tau0,
    Tau1,
    Ate,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Tau0, Target::Tau1, Target::Ate];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Tau0 => "tau0",
            Target::Tau1 => "tau1",
            Target::Ate => "ate",
        }
    }

    pub fn of(self, e: &PointEstimates, kind: EstimatorKind) -> f64 {
        match self {
            Target::Tau0 => e.tau(kind, 0),
            Target::Tau1 => e.tau(kind, 1),
            Target::Ate => e.ate(kind),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Keep the replicate draws in each result.
    pub keep_draws: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { replicates: 1000, level: 0.95, seed: 0, keep_draws: false }
    }
}

impl BootstrapOptions {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 bootstrap replicates, got {}", self.replicates)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!("confidence level must be in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub estimator: EstimatorKind,
    pub target: Target,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub replicates: usize,
    pub draws: Option<Vec<f64>>,
}

impl BootstrapResult {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lower <= truth && truth <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReport {
    pub point: PointEstimates,
    /// Ordered by estimator (h, f, dr), then target (tau0, tau1, ate).
    pub results: Vec<BootstrapResult>,
}

impl BootstrapReport {
    pub fn get(&self, estimator: EstimatorKind, target: Target) -> &BootstrapResult {
        self.results
            .iter()
            .find(|r| r.estimator == estimator && r.target == target)
            .expect("report holds every estimator and target")
    }

    pub const CSV_HEADER: &'static str = "estimator,target,point,lower,upper,level,B";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.results {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.estimator,
                r.target.as_str(),
                r.point,
                r.lower,
                r.upper,
                r.level,
                r.replicates
            ));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<10}{:<8}{:>12}{:>12}{:>12}\n", "estimator", "target", "point", "lower", "upper");
        for r in &self.results {
            s.push_str(&format!(
                "{:<10}{:<8}{:>12.4}{:>12.4}{:>12.4}\n",
                r.estimator.as_str(),
                r.target.as_str(),
                r.point,
                r.lower,
                r.upper
            ));
        }
        s
    }
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let k = h.floor() as usize;
    match sorted.get(k + 1) {
        Some(&next) => sorted[k] + (h - k as f64) * (next - sorted[k]),
        None => sorted[k],
    }
}

/// Central percentile interval at `level`.
pub fn percentile_interval(draws: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail))
}

fn resample_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Row indices of replicate `b`: main first, then auxiliary.
pub fn replicate_rows(seed: u64, b: usize, n_main: usize, n_aux: usize) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::stream(seed, b as u64);
    let main = resample_indices(n_main, &mut r);
    let aux = resample_indices(n_aux, &mut r);
    (main, aux)
}

/// Point estimates on every bootstrap replicate, refitting both bridges.
pub fn replicate_estimates(
    main: &MainSample,
    aux: &AuxSample,
    cfg: &FitConfig,
    opts: &BootstrapOptions,
) -> Result<Vec<PointEstimates>> {
    opts.validate()?;
    (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let (mi, ai) = replicate_rows(opts.seed, b, main.len(), aux.len());
            let (m, a) = (main.resample(&mi), aux.resample(&ai));
            let rep_cfg = FitConfig { seed: rng::split_seed(cfg.seed, b as u64 + 1), ..cfg.clone() };
            fit_bridges(&m, &a, &rep_cfg)
                .and_then(|fit| estimate_all(&fit.h.model, &fit.f.model, &m, &a))
                .map_err(|e| Error::Replicate { index: b, source: Box::new(e) })
        })
        .collect()
}

/// Replicate estimates with the bridges held fixed; only the samples move.
pub fn frozen_replicate_estimates(
    h: &(impl Bridge + Sync),
    f: &(impl Bridge + Sync),
    main: &MainSample,
    aux: &AuxSample,
    opts: &BootstrapOptions,
) -> Result<Vec<PointEstimates>> {
    opts.validate()?;
    (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let (mi, ai) = replicate_rows(opts.seed, b, main.len(), aux.len());
            estimate_all(h, f, &main.resample(&mi), &aux.resample(&ai))
        })
        .collect()
}

/// Summarizes replicate draws into intervals around `point`.
pub fn summarize(point: &PointEstimates, draws: &[PointEstimates], level: f64, keep_draws: bool) -> Vec<BootstrapResult> {
    let mut out = Vec::with_capacity(9);
    for estimator in EstimatorKind::ALL {
        for target in Target::ALL {
            let values: Vec<f64> = draws.iter().map(|d| target.of(d, estimator)).collect();
            let (lower, upper) = percentile_interval(&values, level);
            out.push(BootstrapResult {
                estimator,
                target,
                point: target.of(point, estimator),
                lower,
                upper,
                level,
                replicates: draws.len(),
                draws: keep_draws.then_some(values),
            });
        }
    }
    out
}

/// Fits on the original samples for the point estimates, then bootstraps.
pub fn bootstrap(main: &MainSample, aux: &AuxSample, cfg: &FitConfig, opts: &BootstrapOptions) -> Result<BootstrapReport> {
    opts.validate()?;
    let fit = fit_bridges(main, aux, cfg)?;
    let point = estimate_all(&fit.h.model, &fit.f.model, main, aux)?;
    let draws = replicate_estimates(main, aux, cfg, opts)?;
    Ok(BootstrapReport { point, results: summarize(&point, &draws, opts.level, opts.keep_draws) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfn::{FunctionModel, ModelKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_checked_quartiles() {
        // h = 3 * 0.25 = 0.75 -> 1 + 0.75; h = 2.25 -> 3 + 0.25
        assert_eq!(percentile_interval(&[3.0, 1.0, 4.0, 2.0], 0.5), (1.75, 3.25));
        assert_eq!(percentile_interval(&[2.0, 2.0, 2.0], 0.95), (2.0, 2.0));
    }

    #[test]
    fn options_validated() {
        let o = BootstrapOptions { replicates: 1, ..Default::default() };
        assert!(o.validate().is_err());
        let o = BootstrapOptions { level: 1.0, ..Default::default() };
        assert!(o.validate().is_err());
    }

    fn data() -> (MainSample, AuxSample) {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..30).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|x| x + r.random_range(-0.5..0.5)).collect();
        let u: Vec<f64> = (0..25).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let xa: Vec<f64> = u.iter().map(|u| u - 0.5 + r.random_range(-1.0..1.0)).collect();
        (MainSample::from_running(x, y, 0.0).unwrap(), AuxSample::new(u, xa, 0.0).unwrap())
    }

    #[test]
    fn frozen_constant_bridges_with_constant_outcome_give_zero_width() {
        let (main, aux) = data();
        let main = main.map_outcome(|_| 1.5);
        let h = FunctionModel::constant(1.5, 1.5);
        let f = FunctionModel::constant(2.0, 2.0);
        let opts = BootstrapOptions { replicates: 8, seed: 1, keep_draws: true, ..Default::default() };
        let frozen = frozen_replicate_estimates(&h, &f, &main, &aux, &opts).unwrap();
        let res = summarize(&estimate_all(&h, &f, &main, &aux).unwrap(), &frozen, 0.95, true);
        for r in res.iter().filter(|r| r.estimator == EstimatorKind::H) {
            assert_eq!(r.length(), 0.0);
            assert!(r.draws.as_ref().unwrap().iter().all(|&d| d == r.point));
        }
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let (main, aux) = data();
        let cfg = FitConfig { epochs: 10, ..FitConfig::default() };
        let opts = BootstrapOptions { replicates: 6, seed: 11, ..Default::default() };
        let a = bootstrap(&main, &aux, &cfg, &opts).unwrap();
        let b = bootstrap(&main, &aux, &cfg, &opts).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.results.len(), 9);
        assert!(a.results.iter().all(|r| r.lower <= r.upper));
        let c = bootstrap(&main, &aux, &cfg, &BootstrapOptions { seed: 12, ..opts }).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn shifting_outcomes_shifts_frozen_tau_f_draws() {
        let (main, aux) = data();
        let kappa = 2.5;
        let h = FunctionModel::init(ModelKind::TwoLayerRelu, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let f = FunctionModel::init(ModelKind::TwoLayerRelu, 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let one = FunctionModel::constant(1.0, 1.0);
        let opts = BootstrapOptions { replicates: 20, seed: 5, ..Default::default() };
        let base = frozen_replicate_estimates(&h, &f, &main, &aux, &opts).unwrap();
        let shifted = frozen_replicate_estimates(&h, &f, &main.map_outcome(|y| y + kappa), &aux, &opts).unwrap();
        // the shift of tau_f is kappa * E_m[f I(W = w)], i.e. tau_f with y = 1
        let weights = frozen_replicate_estimates(&one, &f, &main.map_outcome(|_| 1.0), &aux, &opts).unwrap();
        for ((b, s), wt) in base.iter().zip(&shifted).zip(&weights) {
            for w in [0, 1] {
                let expect = kappa * wt.tau(EstimatorKind::F, w);
                assert!((s.tau(EstimatorKind::F, w) - b.tau(EstimatorKind::F, w) - expect).abs() < 1e-12);
                assert!((s.tau(EstimatorKind::Dr, w) - b.tau(EstimatorKind::Dr, w) - expect).abs() < 1e-12);
                assert_eq!(s.tau(EstimatorKind::H, w), b.tau(EstimatorKind::H, w));
            }
        }
    }

    proptest! {
        #[test]
        fn nested_levels_give_nested_intervals(draws in prop::collection::vec(-10f64..10.0, 2..50), l1 in 0.01f64..0.98, gap in 0.001f64..0.5) {
            let l2 = (l1 + gap).min(0.999);
            let (a1, b1) = percentile_interval(&draws, l1);
            let (a2, b2) = percentile_interval(&draws, l2);
            prop_assert!(a2 <= a1 && b1 <= b2 && a1 <= b1);
        }
    }
}
