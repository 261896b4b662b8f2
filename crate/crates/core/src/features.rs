//! Cosine critic bases.
//!
//! With [`BasisKind::Cosine`], component `i` (1-based) is `(1 + w) cos(i a)`
//! on the raw input `a`; `phi` takes the running variable, `psi` the
//! auxiliary one. In that basis the treated critic is a fixed multiple of the
//! control critic, so the two treatment arms share one moment per input value.
//!
//! [`BasisKind::CosineSplit`] lists `cos(i a)` and `w cos(i a)` as separate
//! components, letting the critic weight each arm independently. An optional
//! intercept adds frequency zero, i.e. the components `1` and `w`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// One component per frequency, `(1 + w) cos(i a)`.
    Cosine,
    /// Two components per frequency: `cos(i a)` for every frequency, then
    /// `w cos(i a)`.
    CosineSplit,
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cosine" => Ok(Self::Cosine),
            "cosine_split" | "split" => Ok(Self::CosineSplit),
            other => Err(Error::InvalidConfig(format!("unknown basis kind `{other}`"))),
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::CosineSplit => "cosine_split",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub kind: BasisKind,
    /// Number of nonzero frequencies `1..=dim`.
    pub dim: usize,
    /// Also include frequency zero.
    pub intercept: bool,
}

pub const DEFAULT_DIM: usize = 10;

impl BasisSpec {
    /// `(1 + w) cos(i a)` for `i = 1..=dim`.
    pub fn cosine(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("basis dimension must be at least 1".into()));
        }
        Ok(Self { kind: BasisKind::Cosine, dim, intercept: false })
    }

    /// `cos(i a)` and `w cos(i a)` for `i = 1..=dim`, without intercept.
    pub fn cosine_split(dim: usize) -> Result<Self> {
        Ok(Self { kind: BasisKind::CosineSplit, ..Self::cosine(dim)? })
    }

    pub fn with_intercept(self, intercept: bool) -> Self {
        Self { intercept, ..self }
    }

    fn frequencies(&self) -> usize {
        self.dim + usize::from(self.intercept)
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        match self.kind {
            BasisKind::Cosine => self.frequencies(),
            BasisKind::CosineSplit => 2 * self.frequencies(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the basis at `(a, w)` into `out[..len]`.
    #[inline]
    pub fn fill(&self, a: f64, w: u8, out: &mut [f64]) {
        let w = f64::from(w);
        let k = self.frequencies();
        let plain = match self.kind {
            BasisKind::Cosine => &mut out[..k],
            BasisKind::CosineSplit => &mut out[..2 * k],
        };
        cosines(a, !self.intercept, &mut plain[..k]);
        match self.kind {
            BasisKind::Cosine => plain.iter_mut().for_each(|c| *c *= 1.0 + w),
            BasisKind::CosineSplit => {
                let (p, t) = plain.split_at_mut(k);
                for (t, &c) in t.iter_mut().zip(p.iter()) {
                    *t = w * c;
                }
            }
        }
    }

    pub fn eval(&self, a: f64, w: u8) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.fill(a, w, &mut out);
        out
    }
}

/// Split cosine basis of [`DEFAULT_DIM`] frequencies plus intercept.
impl Default for BasisSpec {
    fn default() -> Self {
        Self { kind: BasisKind::CosineSplit, dim: DEFAULT_DIM, intercept: true }
    }
}

/// `cos(i a)` for consecutive `i` starting at 0 (or 1 with `skip_zero`),
/// by the Chebyshev recurrence `cos((i+1)a) = 2 cos(a) cos(i a) - cos((i-1)a)`.
fn cosines(a: f64, skip_zero: bool, out: &mut [f64]) {
    let c1 = a.cos();
    // (cos((i-1)a), cos(i a)) at the first i; cos(-a) = cos(a)
    let (mut prev, mut cur) = if skip_zero { (1.0, c1) } else { (c1, 1.0) };
    for slot in out {
        *slot = cur;
        (prev, cur) = (cur, 2.0 * c1 * cur - prev);
    }
}

/// Critic basis on the running variable, `phi(x, w)`.
pub fn phi(x: f64, w: u8, spec: &BasisSpec) -> Vec<f64> {
    spec.eval(x, w)
}

/// Critic basis on the auxiliary variable, `psi(u, w)`.
pub fn psi(u: f64, w: u8, spec: &BasisSpec) -> Vec<f64> {
    spec.eval(u, w)
}

/// `psi(u, 0) + psi(u, 1)`.
pub fn psi_sum01(u: f64, spec: &BasisSpec) -> Vec<f64> {
    let mut a = spec.eval(u, 0);
    for (s, b) in a.iter_mut().zip(spec.eval(u, 1)) {
        *s += b;
    }
    a
}
