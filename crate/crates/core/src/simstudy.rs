//! Monte Carlo studies on the two simulation designs.
//!
//! | design   | `U`             | `X | U`            | `Y | U, W`                      |
//! |----------|-----------------|--------------------|---------------------------------|
//! | setting1 | Bernoulli(0.5)  | Normal(U - 0.5, 1) | Normal(U + 2W, 1)               |
//! | setting2 | Uniform(0, 1)   | Normal(U - 0.5, 1) | Bernoulli(sigmoid(2W - 0.6U))   |
//!
//! The threshold is 0 in both. Replicate `r` at sample size `n` draws its
//! data with seed `split(split(root, n), r)`; fit and bootstrap seeds are
//! further splits of that data seed, so every report is a pure function of
//! `(root seed, reps, B, config)` and independent of thread scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{AuxSample, MainSample};
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, EstimatorKind, PointEstimates};
use crate::inference::{replicate_estimates, summarize, BootstrapOptions};
use crate::minimax::{fit_bridges, FitConfig};
use crate::netfn::ModelKind;
use crate::rng;

/// A data-generating process with known `(tau0, tau1)`.
pub trait Dgp: Sync {
    fn generate(&self, n_main: usize, n_aux: usize, seed: u64) -> Result<(MainSample, AuxSample)>;
    fn truths(&self) -> [f64; 2];
    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    One,
    Two,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "setting1" | "one" => Ok(Self::One),
            "2" | "setting2" | "two" => Ok(Self::Two),
            other => Err(Error::InvalidConfig(format!("unknown setting `{other}` (expected setting1 or setting2)"))),
        }
    }
}

/// `E[Y(1)]` and `E[Y(0)]` under setting 2, from the antiderivative
/// `log(1 + e^(a + b u)) / b` of the logistic function.
fn setting2_truths() -> [f64; 2] {
    let softplus = |z: f64| z.exp().ln_1p();
    let tau0 = (softplus(0.0) - softplus(-0.6)) / 0.6;
    let tau1 = (softplus(2.0) - softplus(1.4)) / 0.6;
    [tau0, tau1]
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Self::One => "setting1",
            Self::Two => "setting2",
        }
    }

    /// Fit defaults for the design; only the learning rate differs.
    pub fn default_config(self) -> FitConfig {
        FitConfig {
            learning_rate: match self {
                Self::One => 0.05,
                Self::Two => 0.1,
            },
            ..FitConfig::default()
        }
    }
}

impl Dgp for Setting {
    fn generate(&self, n_main: usize, n_aux: usize, seed: u64) -> Result<(MainSample, AuxSample)> {
        match self {
            Self::One => gen_setting1(n_main, n_aux, seed),
            Self::Two => gen_setting2(n_main, n_aux, seed),
        }
    }

    fn truths(&self) -> [f64; 2] {
        match self {
            Self::One => [0.5, 2.5],
            Self::Two => setting2_truths(),
        }
    }

    fn name(&self) -> String {
        Setting::name(*self).to_string()
    }
}

fn generate_with(
    n_main: usize,
    n_aux: usize,
    seed: u64,
    draw_u: impl Fn(&mut rand_chacha::ChaCha8Rng) -> f64,
    draw_y: impl Fn(&mut rand_chacha::ChaCha8Rng, f64, u8) -> f64,
) -> Result<(MainSample, AuxSample)> {
    let running = |r: &mut rand_chacha::ChaCha8Rng, u: f64| u - 0.5 + r.sample::<f64, _>(StandardNormal);
    let mut r = rng::stream(seed, 0);
    let (mut x, mut y) = (Vec::with_capacity(n_main), Vec::with_capacity(n_main));
    for _ in 0..n_main {
        let u = draw_u(&mut r);
        let xi = running(&mut r, u);
        let w = u8::from(xi >= 0.0);
        x.push(xi);
        y.push(draw_y(&mut r, u, w));
    }
    let mut r = rng::stream(seed, 1);
    let (mut ua, mut xa) = (Vec::with_capacity(n_aux), Vec::with_capacity(n_aux));
    for _ in 0..n_aux {
        let u = draw_u(&mut r);
        ua.push(u);
        xa.push(running(&mut r, u));
    }
    Ok((MainSample::from_running(x, y, 0.0)?, AuxSample::new(ua, xa, 0.0)?))
}

/// Setting 1: binary `u`, Gaussian outcome.
pub fn gen_setting1(n_main: usize, n_aux: usize, seed: u64) -> Result<(MainSample, AuxSample)> {
    generate_with(
        n_main,
        n_aux,
        seed,
        |r| f64::from(u8::from(r.random_bool(0.5))),
        |r, u, w| u + 2.0 * f64::from(w) + r.sample::<f64, _>(StandardNormal),
    )
}

/// Setting 2: uniform `u`, binary outcome.
pub fn gen_setting2(n_main: usize, n_aux: usize, seed: u64) -> Result<(MainSample, AuxSample)> {
    generate_with(
        n_main,
        n_aux,
        seed,
        |r| r.random::<f64>(),
        |r, u, w| {
            let p = 1.0 / (1.0 + (0.6 * u - 2.0 * f64::from(w)).exp());
            f64::from(u8::from(r.random::<f64>() < p))
        },
    )
}

/// Seed of replicate `rep` at main/aux size `n`.
pub fn replicate_seed(root: u64, n: usize, rep: usize) -> u64 {
    rng::split_seed(rng::split_seed(root, n as u64), rep as u64)
}

fn fit_config_for(cfg: &FitConfig, data_seed: u64) -> FitConfig {
    FitConfig { seed: rng::split_seed(data_seed, 2), ..cfg.clone() }
}

/// One cell of a Monte Carlo table.
#[derive(Debug, Clone, PartialEq)]
pub struct McCell {
    pub n: usize,
    pub estimator: EstimatorKind,
    pub w: u8,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub mse: f64,
    pub coverage: Option<f64>,
    pub length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub setting: String,
    pub reps: usize,
    pub truths: [f64; 2],
    pub cells: Vec<McCell>,
}

/// `(mean, bias, mse)` of `estimates` around `truth`.
pub fn error_summary(estimates: &[f64], truth: f64) -> (f64, f64, f64) {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
    (mean, mean - truth, mse)
}

fn cells_from(
    n: usize,
    truths: [f64; 2],
    estimates: &[PointEstimates],
    intervals: Option<&[Vec<(f64, f64)>]>,
) -> Vec<McCell> {
    let mut cells = Vec::with_capacity(6);
    for (k, estimator) in EstimatorKind::ALL.into_iter().enumerate() {
        for w in [0u8, 1] {
            let truth = truths[usize::from(w)];
            let values: Vec<f64> = estimates.iter().map(|e| e.tau(estimator, w)).collect();
            let (mean, bias, mse) = error_summary(&values, truth);
            let (coverage, length) = match intervals {
                Some(iv) => {
                    let slot = 2 * k + usize::from(w);
                    let reps = iv.len() as f64;
                    let covered = iv.iter().filter(|r| r[slot].0 <= truth && truth <= r[slot].1).count() as f64;
                    let length = iv.iter().map(|r| r[slot].1 - r[slot].0).sum::<f64>() / reps;
                    (Some(covered / reps), Some(length))
                }
                None => (None, None),
            };
            cells.push(McCell { n, estimator, w, truth, mean, bias, mse, coverage, length });
        }
    }
    cells
}

fn check_study(sizes: &[usize], reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::InvalidConfig("need at least one Monte Carlo replicate".into()));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidConfig("sample sizes must be positive".into()));
    }
    Ok(())
}

/// Point estimates of every replicate at size `n`, in replicate order.
pub fn replicate_point_estimates(dgp: &impl Dgp, n: usize, reps: usize, cfg: &FitConfig, root: u64) -> Result<Vec<PointEstimates>> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(root, n, r);
            let (main, aux) = dgp.generate(n, n, seed)?;
            let fit = fit_bridges(&main, &aux, &fit_config_for(cfg, seed))?;
            estimate_all(&fit.h.model, &fit.f.model, &main, &aux)
        })
        .collect()
}

/// MSE of every estimator at each size, main and auxiliary samples of equal size.
pub fn run_mse_study(dgp: &impl Dgp, sizes: &[usize], reps: usize, cfg: &FitConfig, root: u64) -> Result<McReport> {
    check_study(sizes, reps)?;
    cfg.validate()?;
    let truths = dgp.truths();
    let mut cells = Vec::new();
    for &n in sizes {
        let est = replicate_point_estimates(dgp, n, reps, cfg, root)?;
        cells.extend(cells_from(n, truths, &est, None));
    }
    Ok(McReport { setting: dgp.name(), reps, truths, cells })
}

/// Coverage and average length of percentile intervals at `level`.
pub fn run_coverage_study(
    dgp: &impl Dgp,
    sizes: &[usize],
    reps: usize,
    replicates: usize,
    level: f64,
    cfg: &FitConfig,
    root: u64,
) -> Result<McReport> {
    check_study(sizes, reps)?;
    cfg.validate()?;
    let truths = dgp.truths();
    let mut cells = Vec::new();
    for &n in sizes {
        let per_rep: Vec<(PointEstimates, Vec<(f64, f64)>)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let seed = replicate_seed(root, n, r);
                let (main, aux) = dgp.generate(n, n, seed)?;
                let fit_cfg = fit_config_for(cfg, seed);
                let fit = fit_bridges(&main, &aux, &fit_cfg)?;
                let point = estimate_all(&fit.h.model, &fit.f.model, &main, &aux)?;
                let opts = BootstrapOptions { replicates, level, seed: rng::split_seed(seed, 3), keep_draws: false };
                let draws = replicate_estimates(&main, &aux, &fit_cfg, &opts)?;
                let intervals = summarize(&point, &draws, level, false)
                    .into_iter()
                    .filter(|b| b.target != crate::inference::Target::Ate)
                    .map(|b| (b.lower, b.upper))
                    .collect();
                Ok((point, intervals))
            })
            .collect::<Result<_>>()?;
        let (est, iv): (Vec<_>, Vec<_>) = per_rep.into_iter().unzip();
        cells.extend(cells_from(n, truths, &est, Some(&iv)));
    }
    Ok(McReport { setting: dgp.name(), reps, truths, cells })
}

impl McReport {
    pub fn cell(&self, n: usize, estimator: EstimatorKind, w: u8) -> Option<&McCell> {
        self.cells.iter().find(|c| c.n == n && c.estimator == estimator && c.w == w)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        s.dedup();
        s
    }

    pub const CSV_HEADER: &'static str = "setting,n,estimator,w,truth,mean,bias,mse,coverage,length,reps";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                self.setting,
                c.n,
                c.estimator,
                c.w,
                c.truth,
                c.mean,
                c.bias,
                c.mse,
                opt(c.coverage),
                opt(c.length),
                self.reps
            );
        }
        s
    }

    /// MSE table with one `(w = 0, w = 1)` pair per estimator and size, and
    /// a coverage/length table when intervals were computed.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} ({} replicates), tau0 = {:.6}, tau1 = {:.6}\n\n", self.setting, self.reps, self.truths[0], self.truths[1]);
        let _ = writeln!(s, "{:>8} | {:^18} | {:^18} | {:^18}", "n", "MSE h", "MSE f", "MSE dr");
        for n in self.sizes() {
            let _ = write!(s, "{n:>8}");
            for k in EstimatorKind::ALL {
                let (a, b) = (self.cell(n, k, 0).map_or(f64::NAN, |c| c.mse), self.cell(n, k, 1).map_or(f64::NAN, |c| c.mse));
                let _ = write!(s, " | ({a:.4}, {b:.4})  ");
            }
            s.push('\n');
        }
        if self.cells.iter().any(|c| c.coverage.is_some()) {
            let _ = writeln!(
                s,
                "\n{:>10} | {:>10} {:>8} | {:>10} {:>8} | {:>10} {:>8}",
                "n (w)", "cover h", "len h", "cover f", "len f", "cover dr", "len dr"
            );
            for n in self.sizes() {
                for w in [0u8, 1] {
                    let _ = write!(s, "{:>10}", format!("{n} ({w})"));
                    for k in EstimatorKind::ALL {
                        let c = self.cell(n, k, w);
                        let cov = c.and_then(|c| c.coverage).unwrap_or(f64::NAN) * 100.0;
                        let len = c.and_then(|c| c.length).unwrap_or(f64::NAN);
                        let _ = write!(s, " | {:>9.1}% {len:>8.4}", cov);
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}

/// Which bridge is forced into the constant class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Misspecification {
    HConstant,
    FConstant,
}

impl std::str::FromStr for Misspecification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h_constant" | "h-constant" | "h" => Ok(Self::HConstant),
            "f_constant" | "f-constant" | "f" => Ok(Self::FConstant),
            other => Err(Error::InvalidConfig(format!("unknown misspecification `{other}`"))),
        }
    }
}

impl Misspecification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::HConstant => "h_constant",
            Self::FConstant => "f_constant",
        }
    }

    /// The single-bridge estimator that depends on the degraded bridge.
    pub fn broken_estimator(self) -> EstimatorKind {
        match self {
            Self::HConstant => EstimatorKind::H,
            Self::FConstant => EstimatorKind::F,
        }
    }

    pub fn apply(self, cfg: &FitConfig) -> FitConfig {
        match self {
            Self::HConstant => FitConfig { h_kind: ModelKind::Constant, ..cfg.clone() },
            Self::FConstant => FitConfig { f_kind: ModelKind::Constant, ..cfg.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisspecReport {
    pub which: Option<Misspecification>,
    pub mc: McReport,
    /// Per-replicate estimates in replicate order.
    pub estimates: Vec<PointEstimates>,
}

impl MisspecReport {
    /// Whether `|bias(dr)| < |bias(broken estimator)|` at level `w`; `None`
    /// when nothing is misspecified.
    pub fn dr_beats_broken(&self, w: u8) -> Option<bool> {
        let which = self.which?;
        let n = self.mc.sizes()[0];
        let dr = self.mc.cell(n, EstimatorKind::Dr, w)?.bias.abs();
        let broken = self.mc.cell(n, which.broken_estimator(), w)?.bias.abs();
        Some(dr < broken)
    }

    /// Long format, one row per replicate, estimator and level.
    pub fn to_long_csv(&self) -> String {
        let which = self.which.map_or("none", Misspecification::as_str);
        let mut s = String::from("misspecified,rep,estimator,w,estimate,truth\n");
        for (r, e) in self.estimates.iter().enumerate() {
            for k in EstimatorKind::ALL {
                for w in [0u8, 1] {
                    let _ = writeln!(s, "{which},{r},{k},{w},{},{}", e.tau(k, w), self.mc.truths[usize::from(w)]);
                }
            }
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} n = {} ({} replicates), misspecified: {}\n",
            self.mc.setting,
            self.mc.sizes()[0],
            self.mc.reps,
            self.which.map_or("none", Misspecification::as_str)
        );
        let _ = writeln!(s, "{:<10}{:>4}{:>12}{:>12}{:>12}", "estimator", "w", "mean", "bias", "mse");
        for c in &self.mc.cells {
            let _ = writeln!(s, "{:<10}{:>4}{:>12.4}{:>12.4}{:>12.4}", c.estimator.as_str(), c.w, c.mean, c.bias, c.mse);
        }
        for w in [0u8, 1] {
            if let Some(ok) = self.dr_beats_broken(w) {
                let _ = writeln!(s, "w = {w}: |bias(dr)| < |bias(broken)|: {ok}");
            }
        }
        s
    }
}

/// Bias and MSE with one bridge degraded to the constant class. With
/// `which = None` this is the MSE study at a single size.
pub fn run_misspecification_study(
    dgp: &impl Dgp,
    n: usize,
    reps: usize,
    cfg: &FitConfig,
    which: Option<Misspecification>,
    root: u64,
) -> Result<MisspecReport> {
    check_study(&[n], reps)?;
    let cfg = which.map_or_else(|| cfg.clone(), |m| m.apply(cfg));
    cfg.validate()?;
    let estimates = replicate_point_estimates(dgp, n, reps, &cfg, root)?;
    let truths = dgp.truths();
    let mc = McReport { setting: dgp.name(), reps, truths, cells: cells_from(n, truths, &estimates, None) };
    Ok(MisspecReport { which, mc, estimates })
}

/// Cells grouped by `(estimator, w)`, ordered by size.
pub fn mse_by_size(report: &McReport) -> BTreeMap<(EstimatorKind, u8), Vec<(usize, f64)>> {
    let mut out: BTreeMap<(EstimatorKind, u8), Vec<(usize, f64)>> = BTreeMap::new();
    for c in &report.cells {
        out.entry((c.estimator, c.w)).or_default().push((c.n, c.mse));
    }
    for v in out.values_mut() {
        v.sort_by_key(|p| p.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setting_truths() {
        assert_eq!(Setting::One.truths(), [0.5, 2.5]);
        // frozen from adaptive quadrature of the logistic mean over u in [0, 1]
        let [t0, t1] = Setting::Two.truths();
        assert!((t1 - 0.844_184_335_207_536).abs() < 1e-12, "{t1}");
        assert!((t0 - 0.426_098_716_790_099_5).abs() < 1e-12, "{t0}");
    }

    #[test]
    fn generators_reproduce_and_respect_design() {
        let (m, a) = gen_setting1(200, 150, 4).unwrap();
        assert_eq!((m.len(), a.len()), (200, 150));
        assert_eq!(gen_setting1(200, 150, 4).unwrap(), (m.clone(), a.clone()));
        assert_ne!(gen_setting1(200, 150, 5).unwrap().0, m);
        assert!(a.u().iter().all(|&u| u == 0.0 || u == 1.0));
        let (m2, a2) = gen_setting2(300, 300, 9).unwrap();
        assert!(m2.y().iter().all(|&y| y == 0.0 || y == 1.0));
        assert!(a2.u().iter().all(|&u| (0.0..1.0).contains(&u)));
        assert_eq!(gen_setting2(300, 300, 9).unwrap().0, m2);
    }

    #[test]
    fn treated_share_is_one_half_in_setting1() {
        // P(W = 1) = (Phi(-0.5) + Phi(0.5)) / 2 = 1/2
        let (m, _) = gen_setting1(100_000, 1, 21).unwrap();
        let share = m.w().iter().filter(|&&w| w == 1).count() as f64 / 1e5;
        assert!((share - 0.5).abs() < 0.02, "{share}");
    }

    #[test]
    fn positivity_share_in_setting1() {
        // min over u of min(P(X >= 0 | u), P(X < 0 | u)) = Phi(-0.5)
        let (_, a) = gen_setting1(1, 100_000, 22).unwrap();
        let d = crate::dataset::positivity_diagnostic(&a, 10).unwrap();
        assert!(d.discrete && !d.warning);
        assert!((d.min_side_share - 0.308_537_538_725_987).abs() < 0.01, "{}", d.min_side_share);
    }

    #[test]
    fn single_replicate_mse_is_squared_error() {
        let (mean, bias, mse) = error_summary(&[2.3], 2.0);
        assert!((mean - 2.3).abs() < 1e-15);
        assert!((bias - 0.3).abs() < 1e-12);
        assert!((mse - 0.09).abs() < 1e-12);
    }

    #[test]
    fn unmisspecified_study_matches_mse_study() {
        let cfg = FitConfig { epochs: 10, ..Setting::One.default_config() };
        let mse = run_mse_study(&Setting::One, &[60], 3, &cfg, 8).unwrap();
        let mis = run_misspecification_study(&Setting::One, 60, 3, &cfg, None, 8).unwrap();
        assert_eq!(mis.mc, mse);
        assert_eq!(mis.dr_beats_broken(0), None);
    }

    #[test]
    fn report_outputs_have_expected_shape() {
        let cfg = FitConfig { epochs: 5, ..Setting::Two.default_config() };
        let r = run_coverage_study(&Setting::Two, &[40, 50], 2, 3, 0.9, &cfg, 1).unwrap();
        assert_eq!(r.cells.len(), 12);
        assert_eq!(r.to_csv().lines().count(), 13);
        assert!(r.cells.iter().all(|c| c.coverage.is_some_and(|v| (0.0..=1.0).contains(&v)) && c.mse >= 0.0));
        assert!(r.to_text().contains("cover dr"));
        assert_eq!(r, run_coverage_study(&Setting::Two, &[40, 50], 2, 3, 0.9, &cfg, 1).unwrap());
    }

    #[test]
    fn invalid_study_arguments() {
        let cfg = Setting::One.default_config();
        assert!(run_mse_study(&Setting::One, &[100], 0, &cfg, 1).is_err());
        assert!(run_mse_study(&Setting::One, &[], 1, &cfg, 1).is_err());
        assert!(run_coverage_study(&Setting::One, &[100], 1, 1, 0.95, &cfg, 1).is_err());
    }
}
