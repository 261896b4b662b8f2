//! Hypothesis classes for the bridge functions.
//!
//! A [`FunctionModel`] is a real function of `(a, w)` where `a` is the
//! auxiliary variable (outcome bridge) or the running variable (treatment
//! bridge). Two classes exist: a two-layer ReLU network on the input pair
//! and a constant per treatment level, the latter used to misspecify a
//! bridge on purpose.
//!
//! Parameters live in one flat vector so gradients and optimizer state share
//! its layout. For a network with `k` hidden units the layout is
//! `[W1 (k x 2, row-major) | b1 (k) | W2 (k) | b2]`.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    TwoLayerRelu,
    Constant,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" | "two_layer_relu" | "network" => Ok(Self::TwoLayerRelu),
            "constant" => Ok(Self::Constant),
            other => Err(Error::InvalidConfig(format!("unknown model class `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TwoLayerRelu => "two_layer_relu",
            Self::Constant => "constant",
        })
    }
}

pub const DEFAULT_HIDDEN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionModel {
    kind: ModelKind,
    hidden: usize,
    params: Vec<f64>,
}

impl FunctionModel {
    /// Constant class with value `c0` at `w = 0` and `c1` at `w = 1`.
    pub fn constant(c0: f64, c1: f64) -> Self {
        Self { kind: ModelKind::Constant, hidden: 0, params: vec![c0, c1] }
    }

    /// Network from explicit layers: `w1[j] = (weight on a, weight on w)`.
    pub fn relu(w1: &[[f64; 2]], b1: &[f64], w2: &[f64], b2: f64) -> Result<Self> {
        let k = w1.len();
        if k == 0 {
            return Err(Error::InvalidModel("hidden size must be at least 1".into()));
        }
        if b1.len() != k || w2.len() != k {
            return Err(Error::ShapeMismatch { expected: k, actual: b1.len().min(w2.len()) });
        }
        let mut params = Vec::with_capacity(Self::param_count(ModelKind::TwoLayerRelu, k));
        params.extend(w1.iter().flatten());
        params.extend_from_slice(b1);
        params.extend_from_slice(w2);
        params.push(b2);
        Self::from_params(ModelKind::TwoLayerRelu, k, params)
    }

    pub fn from_params(kind: ModelKind, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if kind == ModelKind::TwoLayerRelu && hidden == 0 {
            return Err(Error::InvalidModel("hidden size must be at least 1".into()));
        }
        let expected = Self::param_count(kind, hidden);
        if params.len() != expected {
            return Err(Error::ShapeMismatch { expected, actual: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        let hidden = if kind == ModelKind::Constant { 0 } else { hidden };
        Ok(Self { kind, hidden, params })
    }

    /// Seeded initialization, uniform on `(-s, s)` with `s = 1/sqrt(fan_in)`
    /// per layer. The constant class starts at zero and draws nothing.
    pub fn init<R: Rng + ?Sized>(kind: ModelKind, hidden: usize, rng: &mut R) -> Result<Self> {
        match kind {
            ModelKind::Constant => Ok(Self::constant(0.0, 0.0)),
            ModelKind::TwoLayerRelu => {
                if hidden == 0 {
                    return Err(Error::InvalidModel("hidden size must be at least 1".into()));
                }
                let s1 = 1.0 / 2f64.sqrt();
                let s2 = 1.0 / (hidden as f64).sqrt();
                let mut params = Vec::with_capacity(Self::param_count(kind, hidden));
                params.extend((0..3 * hidden).map(|_| rng.random_range(-s1..s1)));
                params.extend((0..hidden + 1).map(|_| rng.random_range(-s2..s2)));
                Ok(Self { kind, hidden, params })
            }
        }
    }

    pub fn param_count(kind: ModelKind, hidden: usize) -> usize {
        match kind {
            ModelKind::Constant => 2,
            ModelKind::TwoLayerRelu => 4 * hidden + 1,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[inline]
    pub fn eval(&self, a: f64, w: u8) -> f64 {
        match self.kind {
            ModelKind::Constant => self.params[usize::from(w != 0)],
            ModelKind::TwoLayerRelu => {
                let k = self.hidden;
                let (w1, rest) = self.params.split_at(2 * k);
                let (b1, rest) = rest.split_at(k);
                let (w2, b2) = rest.split_at(k);
                let wf = f64::from(w);
                let mut out = b2[0];
                for j in 0..k {
                    let z = w1[2 * j] * a + w1[2 * j + 1] * wf + b1[j];
                    if z > 0.0 {
                        out += w2[j] * z;
                    }
                }
                out
            }
        }
    }

    pub fn eval_batch(&self, pairs: &[(f64, u8)]) -> Vec<f64> {
        pairs.iter().map(|&(a, w)| self.eval(a, w)).collect()
    }

    /// Adds `c * d eval(a, w) / d theta` into `grad`.
    #[inline]
    pub fn accumulate_grad(&self, a: f64, w: u8, c: f64, grad: &mut [f64]) {
        match self.kind {
            ModelKind::Constant => grad[usize::from(w != 0)] += c,
            ModelKind::TwoLayerRelu => {
                let k = self.hidden;
                let (w1, rest) = self.params.split_at(2 * k);
                let (b1, rest) = rest.split_at(k);
                let w2 = &rest[..k];
                let (g_w1, g_rest) = grad.split_at_mut(2 * k);
                let (g_b1, g_rest) = g_rest.split_at_mut(k);
                let (g_w2, g_b2) = g_rest.split_at_mut(k);
                let wf = f64::from(w);
                for j in 0..k {
                    let z = w1[2 * j] * a + w1[2 * j + 1] * wf + b1[j];
                    // subgradient of ReLU at 0 is 0
                    if z > 0.0 {
                        g_w2[j] += c * z;
                        let back = c * w2[j];
                        g_w1[2 * j] += back * a;
                        g_w1[2 * j + 1] += back * wf;
                        g_b1[j] += back;
                    }
                }
                g_b2[0] += c;
            }
        }
    }

    /// Gradient of `sum_i c_i eval(pairs_i)` with respect to the parameters.
    pub fn grad_params(&self, pairs: &[(f64, u8)], cotangent: &[f64]) -> Result<Vec<f64>> {
        if pairs.len() != cotangent.len() {
            return Err(Error::ShapeMismatch { expected: pairs.len(), actual: cotangent.len() });
        }
        let mut grad = vec![0.0; self.params.len()];
        for (&(a, w), &c) in pairs.iter().zip(cotangent) {
            if c != 0.0 {
                self.accumulate_grad(a, w, c, &mut grad);
            }
        }
        Ok(grad)
    }

    /// Hidden pre-activations at `(a, w)`; empty for the constant class.
    /// Evaluates the model on the columns `a`, `w` (treatment as `0.0`/`1.0`)
    /// into `out`. For networks, `pre` receives the hidden pre-activations,
    /// unit-major (`pre[j * n + i]`), for reuse by [`Self::backward_batch`].
    pub fn forward_batch(&self, a: &[f64], w: &[f64], pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        let n = a.len();
        out.clear();
        match self.kind {
            ModelKind::Constant => {
                let (c0, c1) = (self.params[0], self.params[1]);
                out.extend(w.iter().map(|&wi| c0 + (c1 - c0) * wi));
            }
            ModelKind::TwoLayerRelu => {
                let k = self.hidden;
                let (w1, rest) = self.params.split_at(2 * k);
                let (b1, rest) = rest.split_at(k);
                let (w2, b2) = rest.split_at(k);
                out.resize(n, b2[0]);
                pre.clear();
                pre.resize(k * n, 0.0);
                for (j, z) in pre.chunks_exact_mut(n).enumerate() {
                    let (wa, ww, b, v) = (w1[2 * j], w1[2 * j + 1], b1[j], w2[j]);
                    for (((zi, &ai), &wi), oi) in z.iter_mut().zip(a).zip(w).zip(out.iter_mut()) {
                        *zi = wa * ai + ww * wi + b;
                        *oi += v * zi.max(0.0);
                    }
                }
            }
        }
    }

    /// Adds `sum_i cot[i] * d eval(a[i], w[i]) / d theta` into `grad`, given
    /// the `pre` buffer filled by [`Self::forward_batch`] with these parameters.
    pub fn backward_batch(&self, a: &[f64], w: &[f64], pre: &[f64], cot: &[f64], grad: &mut [f64]) {
        let n = a.len();
        match self.kind {
            ModelKind::Constant => {
                let treated = dot(cot, w);
                grad[0] += cot.iter().sum::<f64>() - treated;
                grad[1] += treated;
            }
            ModelKind::TwoLayerRelu => {
                let k = self.hidden;
                let w2 = &self.params[3 * k..4 * k];
                for (j, z) in pre.chunks_exact(n).enumerate() {
                    // lanes of: sum c z+, sum c a, sum c w, sum c, over active rows
                    let mut acc = [[0.0f64; 4]; 4];
                    let mut tail = [0.0f64; 4];
                    let (zc, cc, ac, wc) = (z.chunks_exact(4), cot.chunks_exact(4), a.chunks_exact(4), w.chunks_exact(4));
                    for (((&zi, &ci), &ai), &wi) in zc.remainder().iter().zip(cc.remainder()).zip(ac.remainder()).zip(wc.remainder()) {
                        // subgradient of ReLU at 0 is 0
                        let b = ci * f64::from(u8::from(zi > 0.0));
                        tail[0] += b * zi;
                        tail[1] += b * ai;
                        tail[2] += b * wi;
                        tail[3] += b;
                    }
                    for (((zq, cq), aq), wq) in zc.zip(cc).zip(ac).zip(wc) {
                        for l in 0..4 {
                            let b = cq[l] * f64::from(u8::from(zq[l] > 0.0));
                            acc[0][l] += b * zq[l];
                            acc[1][l] += b * aq[l];
                            acc[2][l] += b * wq[l];
                            acc[3][l] += b;
                        }
                    }
                    let total = |m: usize| (acc[m][0] + acc[m][1]) + (acc[m][2] + acc[m][3]) + tail[m];
                    grad[3 * k + j] += total(0);
                    grad[2 * j] += w2[j] * total(1);
                    grad[2 * j + 1] += w2[j] * total(2);
                    grad[2 * k + j] += w2[j] * total(3);
                }
                grad[4 * k] += cot.iter().sum::<f64>();
            }
        }
    }

    pub fn pre_activations(&self, a: f64, w: u8) -> Vec<f64> {
        let k = self.hidden;
        (0..k)
            .map(|j| self.params[2 * j] * a + self.params[2 * j + 1] * f64::from(w) + self.params[2 * k + j])
            .collect()
    }

    /// Debug dump, one `name = v1 v2 ...` line per parameter block.
    pub fn dump(&self) -> String {
        let mut s = format!("kind = {}\n", self.kind);
        let line = |s: &mut String, name: &str, vals: &[f64]| {
            let joined: Vec<String> = vals.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{name} = {}", joined.join(" "));
        };
        match self.kind {
            ModelKind::Constant => line(&mut s, "value", &self.params),
            ModelKind::TwoLayerRelu => {
                let k = self.hidden;
                line(&mut s, "w1", &self.params[..2 * k]);
                line(&mut s, "b1", &self.params[2 * k..3 * k]);
                line(&mut s, "w2", &self.params[3 * k..4 * k]);
                line(&mut s, "b2", &self.params[4 * k..]);
            }
        }
        s
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let n = self.first.len();
        if params.len() != n || grad.len() != n {
            return Err(Error::ShapeMismatch { expected: n, actual: if params.len() != n { params.len() } else { grad.len() } });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..n {
            let g = grad[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Dot product with independent partial sums, so the loop is not one long
/// dependency chain.
#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += p[l] * q[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
