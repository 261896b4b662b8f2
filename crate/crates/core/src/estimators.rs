//! Outcome-bridge, treatment-bridge and doubly robust estimates of `tau_w`.
//!
//! Terms involving `u` can only be averaged over the auxiliary sample and
//! terms involving `y` only over the main sample. On auxiliary rows the
//! treatment indicator uses the derived `w = I(x >= c)`. No propensity is
//! ever formed or inverted; all weighting goes through the treatment bridge.

use crate::dataset::{AuxSample, MainSample};
use crate::error::{Error, Result};
use crate::netfn::FunctionModel;

/// A real function of `(a, w)`, the shape shared by both bridges.
pub trait Bridge {
    fn value(&self, a: f64, w: u8) -> f64;
}

impl Bridge for FunctionModel {
    #[inline]
    fn value(&self, a: f64, w: u8) -> f64 {
        self.eval(a, w)
    }
}

impl<B: Bridge + ?Sized> Bridge for &B {
    fn value(&self, a: f64, w: u8) -> f64 {
        (**self).value(a, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Outcome-bridge estimator.
    H,
    /// Treatment-bridge estimator.
    F,
    /// Doubly robust combination.
    Dr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::H, EstimatorKind::F, EstimatorKind::Dr];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::H => "h",
            EstimatorKind::F => "f",
            EstimatorKind::Dr => "dr",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `E_a[h(U, w)]`, with `w` the target level rather than the row's treatment.
pub fn tau_h(h: &impl Bridge, aux: &AuxSample, w: u8) -> Result<f64> {
    if aux.is_empty() {
        return Err(Error::EmptySample("auxiliary sample has no rows"));
    }
    Ok(aux.u().iter().map(|&u| h.value(u, w)).sum::<f64>() / aux.len() as f64)
}

/// `E_m[f(X, W) I(W = w) Y]`.
pub fn tau_f(f: &impl Bridge, main: &MainSample, w: u8) -> Result<f64> {
    if main.is_empty() {
        return Err(Error::EmptySample("main sample has no rows"));
    }
    let total: f64 = main
        .x()
        .iter()
        .zip(main.w())
        .zip(main.y())
        .filter(|((_, &wi), _)| wi == w)
        .map(|((&x, &wi), &y)| f.value(x, wi) * y)
        .sum();
    Ok(total / main.len() as f64)
}

/// Auxiliary augmentation `E_a[(1 - f(X, W) I(W = w)) h(U, w)]`.
pub fn augmentation(h: &impl Bridge, f: &impl Bridge, aux: &AuxSample, w: u8) -> Result<f64> {
    if aux.is_empty() {
        return Err(Error::EmptySample("auxiliary sample has no rows"));
    }
    let total: f64 = aux
        .u()
        .iter()
        .zip(aux.x())
        .zip(aux.w())
        .map(|((&u, &x), &wi)| {
            let weight = if wi == w { f.value(x, wi) } else { 0.0 };
            (1.0 - weight) * h.value(u, w)
        })
        .sum();
    Ok(total / aux.len() as f64)
}

pub fn tau_dr(h: &impl Bridge, f: &impl Bridge, main: &MainSample, aux: &AuxSample, w: u8) -> Result<f64> {
    Ok(tau_f(f, main, w)? + augmentation(h, f, aux, w)?)
}

/// All three estimators at both treatment levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimates {
    pub tau0_h: f64,
    pub tau1_h: f64,
    pub tau0_f: f64,
    pub tau1_f: f64,
    pub tau0_dr: f64,
    pub tau1_dr: f64,
    pub ate_h: f64,
    pub ate_f: f64,
    pub ate_dr: f64,
}

impl PointEstimates {
    pub fn tau(&self, kind: EstimatorKind, w: u8) -> f64 {
        match (kind, w) {
            (EstimatorKind::H, 0) => self.tau0_h,
            (EstimatorKind::H, _) => self.tau1_h,
            (EstimatorKind::F, 0) => self.tau0_f,
            (EstimatorKind::F, _) => self.tau1_f,
            (EstimatorKind::Dr, 0) => self.tau0_dr,
            (EstimatorKind::Dr, _) => self.tau1_dr,
        }
    }

    pub fn ate(&self, kind: EstimatorKind) -> f64 {
        match kind {
            EstimatorKind::H => self.ate_h,
            EstimatorKind::F => self.ate_f,
            EstimatorKind::Dr => self.ate_dr,
        }
    }

    pub const CSV_HEADER: &'static str = "tau0_h,tau1_h,tau0_f,tau1_f,tau0_dr,tau1_dr,ate_h,ate_f,ate_dr";

    pub fn csv_row(&self) -> String {
        let v = [
            self.tau0_h, self.tau1_h, self.tau0_f, self.tau1_f, self.tau0_dr, self.tau1_dr, self.ate_h, self.ate_f,
            self.ate_dr,
        ];
        v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<10}{:>14}{:>14}{:>14}\n", "estimator", "tau0", "tau1", "ate");
        for k in EstimatorKind::ALL {
            s.push_str(&format!("{:<10}{:>14.6}{:>14.6}{:>14.6}\n", k.as_str(), self.tau(k, 0), self.tau(k, 1), self.ate(k)));
        }
        s
    }
}

pub fn estimate_all(h: &impl Bridge, f: &impl Bridge, main: &MainSample, aux: &AuxSample) -> Result<PointEstimates> {
    let (tau0_h, tau1_h) = (tau_h(h, aux, 0)?, tau_h(h, aux, 1)?);
    let (tau0_f, tau1_f) = (tau_f(f, main, 0)?, tau_f(f, main, 1)?);
    let (tau0_dr, tau1_dr) = (tau_dr(h, f, main, aux, 0)?, tau_dr(h, f, main, aux, 1)?);
    Ok(PointEstimates {
        tau0_h,
        tau1_h,
        tau0_f,
        tau1_f,
        tau0_dr,
        tau1_dr,
        ate_h: tau1_h - tau0_h,
        ate_f: tau1_f - tau0_f,
        ate_dr: tau1_dr - tau0_dr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfn::ModelKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fn2<F: Fn(f64, u8) -> f64>(F);
    impl<F: Fn(f64, u8) -> f64> Bridge for Fn2<F> {
        fn value(&self, a: f64, w: u8) -> f64 {
            (self.0)(a, w)
        }
    }

    fn main() -> MainSample {
        MainSample::from_running(vec![-1.0, -0.3, 0.2, 0.8, 1.5], vec![0.5, 1.0, 2.0, 2.5, 3.5], 0.0).unwrap()
    }

    fn aux() -> AuxSample {
        AuxSample::new(vec![0.0, 1.0, 1.0, 0.0], vec![-0.4, 0.6, 1.1, 0.3], 0.0).unwrap()
    }

    #[test]
    fn tau_h_uses_target_level() {
        let h = FunctionModel::constant(3.0, -1.0);
        assert_eq!(tau_h(&h, &aux(), 1).unwrap(), -1.0);
        let one = AuxSample::new(vec![0.0], vec![5.0], 0.0).unwrap();
        let h = Fn2(|u: f64, w| if u == 0.0 && w == 0 { 2.0 } else { 9.0 });
        assert_eq!(tau_h(&h, &one, 0).unwrap(), 2.0);
    }

    #[test]
    fn tau_f_unit_weights() {
        let one = FunctionModel::constant(1.0, 1.0);
        // treated rows carry y = 2.0, 2.5, 3.5 out of 5
        assert!((tau_f(&one, &main(), 1).unwrap() - 8.0 / 5.0).abs() < 1e-15);
        let all_control = MainSample::from_running(vec![-1.0, -2.0], vec![1.0, 2.0], 0.0).unwrap();
        assert_eq!(tau_f(&one, &all_control, 1).unwrap(), 0.0);
    }

    #[test]
    fn zero_outcome_bridge_reduces_to_tau_f() {
        let h = FunctionModel::constant(0.0, 0.0);
        let f = FunctionModel::init(ModelKind::TwoLayerRelu, 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for w in [0, 1] {
            assert_eq!(tau_dr(&h, &f, &main(), &aux(), w).unwrap(), tau_f(&f, &main(), w).unwrap());
        }
    }

    #[test]
    fn unit_weight_on_aux_kills_augmentation() {
        // f(x, w(x)) I(w(x) = 1) = 1 on every aux row, since every aux row is treated
        let treated = AuxSample::new(vec![0.2, 0.7], vec![0.1, 0.9], 0.0).unwrap();
        let f = FunctionModel::constant(4.0, 1.0);
        let h = FunctionModel::constant(-2.0, 7.0);
        assert_eq!(augmentation(&h, &f, &treated, 1).unwrap(), 0.0);
        assert_eq!(tau_dr(&h, &f, &main(), &treated, 1).unwrap(), tau_f(&f, &main(), 1).unwrap());
    }

    #[test]
    fn ate_fields_are_differences() {
        let h = FunctionModel::init(ModelKind::TwoLayerRelu, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let f = FunctionModel::init(ModelKind::TwoLayerRelu, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let e = estimate_all(&h, &f, &main(), &aux()).unwrap();
        assert_eq!(e.ate_dr, e.tau1_dr - e.tau0_dr);
        assert_eq!(e.ate_h, e.tau1_h - e.tau0_h);
        assert_eq!(e.ate_f, e.tau1_f - e.tau0_f);
        assert_eq!(e.csv_row().split(',').count(), 9);
    }

    proptest! {
        #[test]
        fn tau_f_is_linear_in_outcomes(seed in any::<u64>(), t in -5f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = FunctionModel::init(ModelKind::TwoLayerRelu, 10, &mut rng).unwrap();
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = MainSample::from_running(x, y, 0.0).unwrap();
            let scaled = m.map_outcome(|y| t * y);
            for w in [0, 1] {
                let (a, b) = (tau_f(&f, &m, w).unwrap(), tau_f(&f, &scaled, w).unwrap());
                prop_assert!((b - t * a).abs() <= 1e-12 * (1.0 + a.abs() * t.abs()));
            }
        }
    }
}
