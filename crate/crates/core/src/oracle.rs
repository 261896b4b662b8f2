//! Exact finite models of `(U, X, W, Y)`.
//!
//! `U` takes finitely many levels, `X` lives on a finite grid, `W = I(X >= c)`
//! and `E[Y | U, X, W] = m(U, W)`, so the running variable affects the
//! outcome only through treatment and `U` (latent confounding). Every
//! expectation is a finite sum, both bridge equations are finite linear
//! systems, and the three identification formulas can be checked to
//! machine precision.
//!
//! Text format, one directive per line, `#` starts a comment:
//!
//! ```text
//! threshold 0
//! u_levels 0 1
//! x_grid -1.5 -0.5 0.5 1.5
//! pmf 0.10 0.15 0.15 0.10      # one line per u level, over the x grid
//! pmf 0.05 0.10 0.15 0.20
//! mean 0 2                     # m(u, 0) m(u, 1), one line per u level
//! mean 1 3
//! noise_sd 1                   # optional, default 0
//! ```

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{treatment, AuxSample, MainSample};
use crate::error::{Error, Result};
use crate::estimators::Bridge;
use crate::rng;

const PMF_TOL: f64 = 1e-12;
const SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    u_levels: Vec<f64>,
    x_grid: Vec<f64>,
    threshold: f64,
    /// `pmf[i][j] = P(U = u_i, X = x_j)`.
    pmf: Vec<Vec<f64>>,
    /// `mean[i][w] = E[Y | U = u_i, W = w]`.
    mean: Vec<[f64; 2]>,
    noise_sd: f64,
}

impl DiscreteModel {
    pub fn new(
        u_levels: Vec<f64>,
        x_grid: Vec<f64>,
        threshold: f64,
        pmf: Vec<Vec<f64>>,
        mean: Vec<[f64; 2]>,
        noise_sd: f64,
    ) -> Result<Self> {
        let invalid = |m: String| Err(Error::InvalidModel(m));
        if u_levels.is_empty() || x_grid.is_empty() {
            return invalid("need at least one u level and one grid point".into());
        }
        if pmf.len() != u_levels.len() || mean.len() != u_levels.len() {
            return invalid("pmf and mean need one row per u level".into());
        }
        if pmf.iter().any(|row| row.len() != x_grid.len()) {
            return invalid("each pmf row needs one entry per grid point".into());
        }
        let all_finite = u_levels.iter().chain(&x_grid).chain(pmf.iter().flatten()).chain(mean.iter().flatten()).all(|v| v.is_finite());
        if !all_finite || !threshold.is_finite() || !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return invalid("all model entries must be finite, noise_sd non-negative".into());
        }
        if pmf.iter().flatten().any(|&p| p < 0.0) {
            return invalid("pmf entries must be non-negative".into());
        }
        let total: f64 = pmf.iter().flatten().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return invalid(format!("pmf sums to {total}, not 1"));
        }
        let mut distinct = x_grid.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() != x_grid.len() {
            return invalid("grid points must be distinct".into());
        }
        let model = Self { u_levels, x_grid, threshold, pmf, mean, noise_sd };
        for i in 0..model.u_levels.len() {
            let (below, above) = model.side_mass(i);
            if below <= 0.0 || above <= 0.0 {
                return invalid(format!(
                    "latent positivity fails at u = {}: mass {below} below and {above} above the threshold",
                    model.u_levels[i]
                ));
            }
        }
        Ok(model)
    }

    /// Random model with `n_u` levels `0, 1, ...` and `per_side` grid points on
    /// each side of zero; every cell has positive mass.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_u: usize, per_side: usize) -> Result<Self> {
        let mut x_grid: Vec<f64> = (0..per_side).map(|j| -0.3 - j as f64 * 0.5 - rng.random_range(0.0..0.2)).collect();
        x_grid.extend((0..per_side).map(|j| 0.3 + j as f64 * 0.5 + rng.random_range(0.0..0.2)));
        let mut pmf: Vec<Vec<f64>> = (0..n_u).map(|_| (0..2 * per_side).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
        let total: f64 = pmf.iter().flatten().sum();
        pmf.iter_mut().flatten().for_each(|p| *p /= total);
        // absorb rounding so the total is 1 to the last bit we can manage
        let drift: f64 = 1.0 - pmf.iter().flatten().sum::<f64>();
        pmf[0][0] += drift;
        let mean = (0..n_u).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        Self::new((0..n_u).map(|i| i as f64).collect(), x_grid, 0.0, pmf, mean, 0.0)
    }

    pub fn u_levels(&self) -> &[f64] {
        &self.u_levels
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn pmf(&self) -> &[Vec<f64>] {
        &self.pmf
    }

    pub fn mean(&self, u_index: usize, w: u8) -> f64 {
        self.mean[u_index][usize::from(w)]
    }

    pub fn with_mean(&self, mean: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(self.u_levels.clone(), self.x_grid.clone(), self.threshold, self.pmf.clone(), mean, self.noise_sd)
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    fn w_of(&self, j: usize) -> u8 {
        treatment(self.x_grid[j], self.threshold)
    }

    fn side_mass(&self, i: usize) -> (f64, f64) {
        let mut m = (0.0, 0.0);
        for (j, &p) in self.pmf[i].iter().enumerate() {
            if self.w_of(j) == 1 {
                m.1 += p;
            } else {
                m.0 += p;
            }
        }
        m
    }

    /// `P(U = u_i)`.
    pub fn p_u(&self, i: usize) -> f64 {
        self.pmf[i].iter().sum()
    }

    /// `P(W = w | U = u_i)`.
    pub fn propensity(&self, i: usize, w: u8) -> f64 {
        let (below, above) = self.side_mass(i);
        (if w == 1 { above } else { below }) / (below + above)
    }

    /// `tau_w = sum_u P(u) m(u, w)`.
    pub fn exact_tau(&self, w: u8) -> f64 {
        (0..self.u_levels.len()).map(|i| self.p_u(i) * self.mean(i, w)).sum()
    }

    /// Minimum-norm solution of `sum_x p(x | u, w) f(x, w) = 1 / P(w | u)` for
    /// both `w`; grid points on the other side of the threshold get 0.
    pub fn solve_treatment_bridge(&self) -> Result<TreatmentBridge> {
        let mut values = vec![[0.0; 2]; self.x_grid.len()];
        for w in [0u8, 1] {
            let cols: Vec<usize> = (0..self.x_grid.len()).filter(|&j| self.w_of(j) == w).collect();
            let n_u = self.u_levels.len();
            let mut a = DMatrix::zeros(n_u, cols.len());
            let mut b = DVector::zeros(n_u);
            for i in 0..n_u {
                let pi = self.propensity(i, w);
                let side = self.p_u(i) * pi;
                for (c, &j) in cols.iter().enumerate() {
                    a[(i, c)] = self.pmf[i][j] / side;
                }
                b[i] = 1.0 / pi;
            }
            let sol = a
                .clone()
                .svd(true, true)
                .solve(&b, 1e-13)
                .map_err(|e| Error::NoSolution(format!("treatment bridge at w = {w}: {e}")))?;
            let residual = (&a * &sol - &b).amax();
            if residual > SOLVE_TOL * b.amax().max(1.0) {
                return Err(Error::NoSolution(format!(
                    "treatment bridge equations at w = {w} are inconsistent (residual {residual:e})"
                )));
            }
            for (c, &j) in cols.iter().enumerate() {
                values[j][usize::from(w)] = sol[c];
            }
        }
        Ok(TreatmentBridge { x_grid: self.x_grid.clone(), values })
    }

    /// `h(u, w) = m(u, w)`, checked against `E[h(U, W) | X, W] = E[Y | X, W]`
    /// at every grid point with positive mass.
    pub fn solve_outcome_bridge(&self) -> Result<OutcomeBridge> {
        let bridge = OutcomeBridge { u_levels: self.u_levels.clone(), values: self.mean.clone() };
        let residual = self.outcome_equation_residual(&bridge);
        if residual > SOLVE_TOL {
            return Err(Error::NoSolution(format!("outcome bridge residual {residual:e}")));
        }
        Ok(bridge)
    }

    /// `max_{x,w} |E[h(U, W) | X = x, W = w] - E[Y | X = x, W = w]|`.
    pub fn outcome_equation_residual(&self, h: &impl Bridge) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.x_grid.len() {
            let w = self.w_of(j);
            let px: f64 = self.pmf.iter().map(|row| row[j]).sum();
            if px <= 0.0 {
                continue;
            }
            let (mut lhs, mut rhs) = (0.0, 0.0);
            for (i, &u) in self.u_levels.iter().enumerate() {
                let p = self.pmf[i][j] / px;
                lhs += p * h.value(u, w);
                rhs += p * self.mean(i, w);
            }
            worst = worst.max((lhs - rhs).abs());
        }
        worst
    }

    /// `sum_{u,w} |E[f(X, W) | U = u, W = w] - 1 / P(w | u)|`.
    pub fn treatment_equation_residual(&self, f: &impl Bridge) -> f64 {
        let mut total = 0.0;
        for i in 0..self.u_levels.len() {
            for w in [0u8, 1] {
                let pi = self.propensity(i, w);
                let side = self.p_u(i) * pi;
                let lhs: f64 = (0..self.x_grid.len())
                    .filter(|&j| self.w_of(j) == w)
                    .map(|j| self.pmf[i][j] / side * f.value(self.x_grid[j], w))
                    .sum();
                total += (lhs - 1.0 / pi).abs();
            }
        }
        total
    }

    /// Population value of `E[h(U, w)]`.
    pub fn outcome_formula(&self, h: &impl Bridge, w: u8) -> f64 {
        (0..self.u_levels.len()).map(|i| self.p_u(i) * h.value(self.u_levels[i], w)).sum()
    }

    /// Population value of `E[Y f(X, W) I(W = w)]`.
    pub fn treatment_formula(&self, f: &impl Bridge, w: u8) -> f64 {
        self.cells()
            .filter(|&(_, j, _)| self.w_of(j) == w)
            .map(|(i, j, p)| p * f.value(self.x_grid[j], w) * self.mean(i, w))
            .sum()
    }

    /// Population value of the doubly robust formula.
    pub fn dr_formula(&self, h: &impl Bridge, f: &impl Bridge, w: u8) -> f64 {
        let aug: f64 = self
            .cells()
            .map(|(i, j, p)| {
                let wj = self.w_of(j);
                let weight = if wj == w { f.value(self.x_grid[j], wj) } else { 0.0 };
                p * (1.0 - weight) * h.value(self.u_levels[i], w)
            })
            .sum();
        self.treatment_formula(f, w) + aug
    }

    /// `E[(h(U, W) - Y) g(X, W)]` for a critic `g` on the running variable.
    pub fn outcome_moment(&self, h: &impl Bridge, critic: impl Fn(f64, u8) -> f64) -> f64 {
        self.cells()
            .map(|(i, j, p)| {
                let w = self.w_of(j);
                p * (h.value(self.u_levels[i], w) - self.mean(i, w)) * critic(self.x_grid[j], w)
            })
            .sum()
    }

    /// `E[f(X, W) g(U, W) - g(U, 0) - g(U, 1)]` for a critic `g` on `u`.
    pub fn treatment_moment(&self, f: &impl Bridge, critic: impl Fn(f64, u8) -> f64) -> f64 {
        self.cells()
            .map(|(i, j, p)| {
                let (u, w) = (self.u_levels[i], self.w_of(j));
                p * (f.value(self.x_grid[j], w) * critic(u, w) - critic(u, 0) - critic(u, 1))
            })
            .sum()
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pmf.iter().enumerate().flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &p)| (i, j, p)))
    }

    /// Solves both bridges and evaluates the three formulas for each `w`.
    pub fn verify_identification(&self) -> Result<IdentificationReport> {
        let h = self.solve_outcome_bridge()?;
        let f = self.solve_treatment_bridge()?;
        let levels = [0u8, 1].map(|w| IdentifiedLevel {
            exact: self.exact_tau(w),
            outcome: self.outcome_formula(&h, w),
            treatment: self.treatment_formula(&f, w),
            dr: self.dr_formula(&h, &f, w),
        });
        let report = IdentificationReport { levels };
        let gap = report.max_discrepancy();
        let scale = levels.iter().map(|l| l.exact.abs()).fold(1.0, f64::max);
        if gap > SOLVE_TOL * scale {
            return Err(Error::NoSolution(format!("identification formulas disagree by {gap:e}")));
        }
        Ok(report)
    }

    /// Draws `n` main rows and `n_aux` auxiliary rows independently.
    pub fn sample(&self, n: usize, n_aux: usize, seed: u64) -> Result<(MainSample, AuxSample)> {
        let weights: Vec<f64> = self.pmf.iter().flatten().copied().collect();
        let cell = WeightedIndex::new(&weights).map_err(|e| Error::InvalidModel(e.to_string()))?;
        let n_x = self.x_grid.len();
        let mut r = rng::stream(seed, 0);
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let k = cell.sample(&mut r);
            let (i, j) = (k / n_x, k % n_x);
            let noise: f64 = r.sample(StandardNormal);
            x.push(self.x_grid[j]);
            y.push(self.mean(i, self.w_of(j)) + self.noise_sd * noise);
        }
        let mut r = rng::stream(seed, 1);
        let (mut ua, mut xa) = (Vec::with_capacity(n_aux), Vec::with_capacity(n_aux));
        for _ in 0..n_aux {
            let k = cell.sample(&mut r);
            ua.push(self.u_levels[k / n_x]);
            xa.push(self.x_grid[k % n_x]);
        }
        Ok((MainSample::from_running(x, y, self.threshold)?, AuxSample::new(ua, xa, self.threshold)?))
    }

    /// Samples whose empirical distribution is the pmf itself: cell `(u, x)`
    /// appears `total * p(u, x)` times, outcomes carry no noise. Fails unless
    /// every count is an integer.
    pub fn population_samples(&self, total: usize) -> Result<(MainSample, AuxSample)> {
        let (mut x, mut y, mut ua, mut xa) = (vec![], vec![], vec![], vec![]);
        for (i, j, p) in self.cells() {
            let count = p * total as f64;
            let rounded = count.round();
            if (count - rounded).abs() > 1e-6 {
                return Err(Error::InvalidModel(format!("cell ({i}, {j}) has non-integral count {count} at total {total}")));
            }
            for _ in 0..rounded as usize {
                x.push(self.x_grid[j]);
                y.push(self.mean(i, self.w_of(j)));
                ua.push(self.u_levels[i]);
                xa.push(self.x_grid[j]);
            }
        }
        Ok((MainSample::from_running(x, y, self.threshold)?, AuxSample::new(ua, xa, self.threshold)?))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut threshold, mut noise_sd) = (0.0, 0.0);
        let (mut u_levels, mut x_grid, mut pmf, mut mean) = (vec![], vec![], vec![], vec![]);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            let nums: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidModel(format!("line {}: expected numbers after `{key}`", lineno + 1)))?;
            let one = |nums: &[f64]| match nums {
                [v] => Ok(*v),
                _ => Err(Error::InvalidModel(format!("line {}: `{key}` takes one value", lineno + 1))),
            };
            match key {
                "threshold" => threshold = one(&nums)?,
                "noise_sd" => noise_sd = one(&nums)?,
                "u_levels" => u_levels = nums,
                "x_grid" => x_grid = nums,
                "pmf" => pmf.push(nums),
                "mean" => match nums[..] {
                    [m0, m1] => mean.push([m0, m1]),
                    _ => return Err(Error::InvalidModel(format!("line {}: `mean` takes m(u,0) m(u,1)", lineno + 1))),
                },
                other => return Err(Error::InvalidModel(format!("line {}: unknown directive `{other}`", lineno + 1))),
            }
        }
        Self::new(u_levels, x_grid, threshold, pmf, mean, noise_sd)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let mut s = format!("threshold {}\nu_levels {}\nx_grid {}\n", self.threshold, join(&self.u_levels), join(&self.x_grid));
        for row in &self.pmf {
            s.push_str(&format!("pmf {}\n", join(row)));
        }
        for m in &self.mean {
            s.push_str(&format!("mean {} {}\n", m[0], m[1]));
        }
        s.push_str(&format!("noise_sd {}\n", self.noise_sd));
        s
    }
}

/// Treatment bridge tabulated on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentBridge {
    pub x_grid: Vec<f64>,
    pub values: Vec<[f64; 2]>,
}

impl Bridge for TreatmentBridge {
    /// Off-grid inputs have no value (NaN).
    fn value(&self, x: f64, w: u8) -> f64 {
        self.x_grid.iter().position(|&g| g == x).map_or(f64::NAN, |j| self.values[j][usize::from(w)])
    }
}

/// Outcome bridge tabulated on the `u` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeBridge {
    pub u_levels: Vec<f64>,
    pub values: Vec<[f64; 2]>,
}

impl Bridge for OutcomeBridge {
    fn value(&self, u: f64, w: u8) -> f64 {
        self.u_levels.iter().position(|&l| l == u).map_or(f64::NAN, |i| self.values[i][usize::from(w)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifiedLevel {
    pub exact: f64,
    pub outcome: f64,
    pub treatment: f64,
    pub dr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationReport {
    /// Indexed by `w`.
    pub levels: [IdentifiedLevel; 2],
}

impl IdentificationReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| {
                let v = [l.exact, l.outcome, l.treatment, l.dr];
                (0..4).flat_map(move |a| (a + 1..4).map(move |b| (v[a] - v[b]).abs()))
            })
            .fold(0.0, f64::max)
    }
}
