//! Penalized minimax fitting of the outcome and treatment bridges.
//!
//! Both outer objectives have the same shape. With a linear critic
//! `alpha' b(.)` over a fixed basis `b`, the penalized inner problem
//!
//! ```text
//! max_alpha  alpha' v - alpha' M alpha
//! ```
//!
//! is a concave quadratic whose supremum is `v' M^-1 v / 4`, reached at
//! `alpha = M^-1 v / 2`. Here `v = E_a[g(a, w) b] - offset` is linear in the
//! outputs of the bridge `g` being fitted and `M` does not depend on `g`:
//!
//! | bridge | `g` input | basis `b`    | offset              | `M`                                  |
//! |--------|-----------|--------------|---------------------|--------------------------------------|
//! | h      | `(u, w)`  | `phi(x, w)`  | `E_m[phi(x,w) y]`   | `lambda E_n[phi phi'] + gamma1 I`     |
//! | f      | `(x, w)`  | `psi(u, w)`  | `E_a[psi0 + psi1]`  | `lambda' E_a[psi psi'] + gamma2 I`    |
//!
//! `E_n` averages over main and auxiliary rows together; auxiliary rows use
//! their derived treatment. `M` is factorized once per fit with Cholesky and
//! the outer problem is run for a fixed number of full-batch Adam epochs.
//!
//! `lambda` and `lambda_prime` are sometimes written `lambda_1`, `lambda_2`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::{AuxSample, MainSample};
use crate::error::{Error, Result};
use crate::features::{BasisKind, BasisSpec};
use crate::netfn::{AdamState, FunctionModel, ModelKind, DEFAULT_HIDDEN};
use crate::rng;

/// Hyperparameters of one fit of both bridges.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub phi_basis: BasisSpec,
    pub psi_basis: BasisSpec,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Zero epochs returns the seeded initialization.
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_size: usize,
    pub seed: u64,
    pub h_kind: ModelKind,
    pub f_kind: ModelKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            phi_basis: BasisSpec::default(),
            psi_basis: BasisSpec::default(),
            lambda: 1.0,
            lambda_prime: 1.0,
            gamma1: 0.03,
            gamma2: 0.03,
            epochs: 100,
            learning_rate: 0.05,
            hidden_size: DEFAULT_HIDDEN,
            seed: 0,
            h_kind: ModelKind::TwoLayerRelu,
            f_kind: ModelKind::TwoLayerRelu,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("lambda_prime", self.lambda_prime),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("lr", self.learning_rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.phi_basis.dim == 0 || self.psi_basis.dim == 0 {
            return Err(Error::InvalidConfig("basis dimensions must be at least 1".into()));
        }
        if (self.phi_basis.kind, self.phi_basis.intercept) != (self.psi_basis.kind, self.psi_basis.intercept) {
            return Err(Error::InvalidConfig("phi and psi must use the same basis kind and intercept".into()));
        }
        if self.hidden_size == 0 {
            return Err(Error::InvalidConfig("hidden_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are an error.
    pub fn apply_kv(mut self, text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1)))?;
            let bad = |what: &str| Error::InvalidConfig(format!("line {}: `{key}` {what}: {value:?}", lineno + 1));
            let float = || value.parse::<f64>().map_err(|_| bad("expects a number"));
            let count = || value.parse::<usize>().map_err(|_| bad("expects a non-negative integer"));
            match key {
                "d1" => self.phi_basis.dim = count()?,
                "d2" => self.psi_basis.dim = count()?,
                "intercept" => {
                    let on = value.parse().map_err(|_| bad("expects true or false"))?;
                    self.phi_basis.intercept = on;
                    self.psi_basis.intercept = on;
                }
                "basis" => {
                    let kind: BasisKind = value.parse()?;
                    self.phi_basis.kind = kind;
                    self.psi_basis.kind = kind;
                }
                "lambda" => self.lambda = float()?,
                "lambda_prime" => self.lambda_prime = float()?,
                "gamma1" => self.gamma1 = float()?,
                "gamma2" => self.gamma2 = float()?,
                "epochs" => self.epochs = count()?,
                "lr" => self.learning_rate = float()?,
                "hidden_size" => self.hidden_size = count()?,
                "seed" => self.seed = value.parse().map_err(|_| bad("expects an unsigned integer"))?,
                "h_model" => self.h_kind = value.parse()?,
                "f_model" => self.f_kind = value.parse()?,
                _ => return Err(Error::InvalidConfig(format!("line {}: unknown key `{key}`", lineno + 1))),
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn load(self, path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        self.apply_kv(&text)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "basis = {}\nintercept = {}\nd1 = {}\nd2 = {}\nlambda = {}\nlambda_prime = {}\ngamma1 = {}\ngamma2 = {}\nepochs = {}\nlr = {}\nhidden_size = {}\nseed = {}\nh_model = {}\nf_model = {}\n",
            self.phi_basis.kind,
            self.phi_basis.intercept,
            self.phi_basis.dim,
            self.psi_basis.dim,
            self.lambda,
            self.lambda_prime,
            self.gamma1,
            self.gamma2,
            self.epochs,
            self.learning_rate,
            self.hidden_size,
            self.seed,
            self.h_kind,
            self.f_kind
        )
    }
}

/// Outer objective `g -> sup_alpha { alpha' v(g) - alpha' M alpha }` for a
/// fixed data set. Rows sharing the same bridge input are pooled, so the
/// bridge is evaluated once per distinct input.
#[derive(Debug, Clone)]
pub struct MomentProblem {
    /// Distinct bridge inputs, as columns.
    a: Vec<f64>,
    w: Vec<f64>,
    /// Row `g` is the sum of the basis vectors of the rows with input `g`.
    pooled: DMatrix<f64>,
    n_rows: f64,
    offset: DVector<f64>,
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl MomentProblem {
    /// `inputs[r]` is the bridge input of row `r` and `basis` the row-major
    /// critic basis of those rows, `dim` wide.
    fn new(dim: usize, inputs: &[(f64, u8)], basis: &[f64], offset: DVector<f64>, matrix: DMatrix<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptySample("no rows to fit the bridge on"));
        }
        let mut index: HashMap<(u64, u8), usize> = HashMap::with_capacity(inputs.len());
        let (mut a, mut w) = (Vec::new(), Vec::new());
        let mut sums: Vec<f64> = Vec::with_capacity(basis.len());
        for (&(ai, wi), row) in inputs.iter().zip(basis.chunks_exact(dim)) {
            let slot = *index.entry((ai.to_bits(), wi)).or_insert_with(|| {
                a.push(ai);
                w.push(f64::from(wi));
                sums.extend(std::iter::repeat_n(0.0, dim));
                a.len() - 1
            });
            for (p, b) in sums[slot * dim..(slot + 1) * dim].iter_mut().zip(row) {
                *p += b;
            }
        }
        let pooled = DMatrix::from_row_slice(a.len(), dim, &sums);
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::SingularSystem("critic Gram matrix is not positive definite".into()))?;
        Ok(Self { a, w, pooled, n_rows: inputs.len() as f64, offset, matrix, chol })
    }

    /// Problem whose minimizer is the outcome bridge `h(u, w)`.
    pub fn outcome(main: &MainSample, aux: &AuxSample, cfg: &FitConfig) -> Result<Self> {
        if main.is_empty() || aux.is_empty() {
            return Err(Error::EmptySample("outcome bridge needs both samples"));
        }
        let spec = cfg.phi_basis;
        let d = spec.len();
        let main_basis = basis_rows(&spec, main.x().iter().copied().zip(main.w().iter().copied()));
        let aux_basis = basis_rows(&spec, aux.x().iter().copied().zip(aux.w().iter().copied()));
        let mut offset = DVector::zeros(d);
        for (row, &y) in main_basis.chunks_exact(d).zip(main.y()) {
            for (o, b) in offset.iter_mut().zip(row) {
                *o += b * y;
            }
        }
        offset /= main.len() as f64;
        let gram = gram(d, &main_basis) + gram(d, &aux_basis);
        let matrix = penalized(gram, cfg.lambda / (main.len() + aux.len()) as f64, cfg.gamma1);
        let inputs: Vec<(f64, u8)> = aux.u().iter().copied().zip(aux.w().iter().copied()).collect();
        Self::new(d, &inputs, &aux_basis, offset, matrix)
    }

    /// Problem whose minimizer is the treatment bridge `f(x, w)`.
    pub fn treatment(aux: &AuxSample, cfg: &FitConfig) -> Result<Self> {
        if aux.is_empty() {
            return Err(Error::EmptySample("treatment bridge needs the auxiliary sample"));
        }
        let spec = cfg.psi_basis;
        let d = spec.len();
        let basis = basis_rows(&spec, aux.u().iter().copied().zip(aux.w().iter().copied()));
        let mut offset = DVector::zeros(d);
        let mut buf = vec![0.0; d];
        for &u in aux.u() {
            for level in 0..=1 {
                spec.fill(u, level, &mut buf);
                for (o, b) in offset.iter_mut().zip(&buf) {
                    *o += b;
                }
            }
        }
        offset /= aux.len() as f64;
        let matrix = penalized(gram(d, &basis), cfg.lambda_prime / aux.len() as f64, cfg.gamma2);
        let inputs: Vec<(f64, u8)> = aux.x().iter().copied().zip(aux.w().iter().copied()).collect();
        Self::new(d, &inputs, &basis, offset, matrix)
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Number of distinct bridge inputs.
    pub fn distinct_inputs(&self) -> usize {
        self.a.len()
    }

    /// Penalized critic matrix `M`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn moment_from(&self, out: &[f64]) -> DVector<f64> {
        let out = DVector::from_column_slice(out);
        self.pooled.tr_mul(&out) / self.n_rows - &self.offset
    }

    /// Moment vector `v(g)`.
    pub fn moment(&self, model: &FunctionModel) -> DVector<f64> {
        let (mut pre, mut out) = (Vec::new(), Vec::new());
        model.forward_batch(&self.a, &self.w, &mut pre, &mut out);
        self.moment_from(&out)
    }

    /// Maximizing critic coefficients `M^-1 v / 2`.
    pub fn best_critic(&self, model: &FunctionModel) -> DVector<f64> {
        self.chol.solve(&self.moment(model)) * 0.5
    }

    pub fn loss(&self, model: &FunctionModel) -> f64 {
        let v = self.moment(model);
        0.25 * v.dot(&self.chol.solve(&v))
    }

    /// Loss and its gradient in the model parameters.
    pub fn loss_grad(&self, model: &FunctionModel) -> (f64, Vec<f64>) {
        let (mut pre, mut out) = (Vec::new(), Vec::new());
        model.forward_batch(&self.a, &self.w, &mut pre, &mut out);
        let v = self.moment_from(&out);
        let s = self.chol.solve(&v);
        let loss = 0.25 * v.dot(&s);
        let cot = &self.pooled * s * (0.5 / self.n_rows);
        let mut grad = vec![0.0; model.params().len()];
        model.backward_batch(&self.a, &self.w, &pre, cot.as_slice(), &mut grad);
        (loss, grad)
    }
}

/// Row-major basis matrix, one row per `(a, w)`.
fn basis_rows(spec: &BasisSpec, rows: impl ExactSizeIterator<Item = (f64, u8)>) -> Vec<f64> {
    let d = spec.len();
    let mut out = vec![0.0; rows.len() * d];
    for ((a, w), slot) in rows.zip(out.chunks_exact_mut(d)) {
        spec.fill(a, w, slot);
    }
    out
}

/// `sum_r b_r b_r'` over the rows of a row-major basis matrix.
fn gram(dim: usize, basis: &[f64]) -> DMatrix<f64> {
    // row-major n x d is column-major d x n
    let bt = DMatrix::from_column_slice(dim, basis.len() / dim, basis);
    &bt * bt.transpose()
}

fn penalized(mut gram: DMatrix<f64>, scale: f64, ridge: f64) -> DMatrix<f64> {
    gram *= scale;
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    // exact symmetry for the factorization
    let t = gram.transpose();
    (gram + t) * 0.5
}

/// Outcome-bridge loss and gradient for `h`.
pub fn h_loss(h: &FunctionModel, main: &MainSample, aux: &AuxSample, cfg: &FitConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    Ok(MomentProblem::outcome(main, aux, cfg)?.loss_grad(h))
}

/// Treatment-bridge loss and gradient for `f`.
pub fn f_loss(f: &FunctionModel, aux: &AuxSample, cfg: &FitConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    Ok(MomentProblem::treatment(aux, cfg)?.loss_grad(f))
}

/// A fitted bridge with its training trace.
#[derive(Debug, Clone)]
pub struct FittedBridge {
    pub model: FunctionModel,
    /// Loss before each Adam step, one entry per epoch.
    pub trace: Vec<f64>,
    /// Loss at the returned parameters.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct FittedBridges {
    pub h: FittedBridge,
    pub f: FittedBridge,
}

/// Runs `epochs` full-batch Adam steps from a seeded initialization.
pub fn minimize(
    problem: &MomentProblem,
    kind: ModelKind,
    hidden: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<FittedBridge> {
    let mut model = FunctionModel::init(kind, hidden, &mut rng::stream(seed, 0))?;
    let mut adam = AdamState::new(model.params().len(), learning_rate);
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grad) = problem.loss_grad(&model);
        trace.push(loss);
        adam.step(model.params_mut(), &grad)?;
    }
    let objective = problem.loss(&model);
    if !objective.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::SingularSystem("bridge fit diverged to non-finite values".into()));
    }
    Ok(FittedBridge { model, trace, objective })
}

/// Seed of the outcome-bridge initialization stream.
pub fn outcome_seed(cfg: &FitConfig) -> u64 {
    rng::split_seed(cfg.seed, 0)
}

/// Seed of the treatment-bridge initialization stream.
pub fn treatment_seed(cfg: &FitConfig) -> u64 {
    rng::split_seed(cfg.seed, 1)
}

pub fn fit_outcome_bridge(main: &MainSample, aux: &AuxSample, cfg: &FitConfig) -> Result<FittedBridge> {
    cfg.validate()?;
    let problem = MomentProblem::outcome(main, aux, cfg)?;
    minimize(&problem, cfg.h_kind, cfg.hidden_size, cfg.epochs, cfg.learning_rate, outcome_seed(cfg))
}

pub fn fit_treatment_bridge(aux: &AuxSample, cfg: &FitConfig) -> Result<FittedBridge> {
    cfg.validate()?;
    let problem = MomentProblem::treatment(aux, cfg)?;
    minimize(&problem, cfg.f_kind, cfg.hidden_size, cfg.epochs, cfg.learning_rate, treatment_seed(cfg))
}

pub fn fit_bridges(main: &MainSample, aux: &AuxSample, cfg: &FitConfig) -> Result<FittedBridges> {
    Ok(FittedBridges { h: fit_outcome_bridge(main, aux, cfg)?, f: fit_treatment_bridge(aux, cfg)? })
}
