//! The two samples of a sharp regression discontinuity study.
//!
//! The main sample carries `(x, w, y)` from the RDD study itself; the
//! auxiliary sample carries `(u, x)` from an independent study of the same
//! population. Treatment is always `w = I(x >= c)`, ties at the threshold
//! count as treated. Nothing is rescaled on load.
//!
//! The auxiliary sample is assumed exchangeable with the main one given
//! `(u, x)`; that assumption cannot be checked from data and is not.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Sharp assignment rule.
#[inline]
pub fn treatment(x: f64, threshold: f64) -> u8 {
    u8::from(x >= threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MainSample {
    x: Vec<f64>,
    w: Vec<u8>,
    y: Vec<f64>,
    threshold: f64,
}

impl MainSample {
    /// Builds a main sample, checking finiteness and the sharp design.
    pub fn new(x: Vec<f64>, w: Vec<f64>, y: Vec<f64>, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidConfig(format!("threshold must be finite, got {threshold}")));
        }
        if x.len() != w.len() || x.len() != y.len() {
            return Err(Error::ShapeMismatch { expected: x.len(), actual: w.len().min(y.len()) });
        }
        if x.is_empty() {
            return Err(Error::EmptySample("main sample has no rows"));
        }
        check_finite("x", &x)?;
        check_finite("w", &w)?;
        check_finite("y", &y)?;
        let mut wi = Vec::with_capacity(w.len());
        for (row, (&xv, &wv)) in x.iter().zip(&w).enumerate() {
            let expected = treatment(xv, threshold);
            if wv != f64::from(expected) {
                return Err(Error::SharpDesignViolation { row, x: xv, w: wv, threshold });
            }
            wi.push(expected);
        }
        Ok(Self { x, w: wi, y, threshold })
    }

    /// Builds a main sample from `(x, y)`, deriving `w` from the threshold.
    pub fn from_running(x: Vec<f64>, y: Vec<f64>, threshold: f64) -> Result<Self> {
        let w = x.iter().map(|&v| f64::from(treatment(v, threshold))).collect();
        Self::new(x, w, y, threshold)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn w(&self) -> &[u8] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Rows picked by `rows`, repeats allowed.
    pub fn resample(&self, rows: &[usize]) -> Self {
        Self {
            x: rows.iter().map(|&i| self.x[i]).collect(),
            w: rows.iter().map(|&i| self.w[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            threshold: self.threshold,
        }
    }

    /// Same rows with `x - c` as running variable and threshold 0.
    pub fn centered(&self) -> Self {
        Self {
            x: self.x.iter().map(|v| v - self.threshold).collect(),
            w: self.w.clone(),
            y: self.y.clone(),
            threshold: 0.0,
        }
    }

    /// Copy with every outcome replaced by `f(y)`.
    pub fn map_outcome(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { y: self.y.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxSample {
    u: Vec<f64>,
    x: Vec<f64>,
    w: Vec<u8>,
    threshold: f64,
}

impl AuxSample {
    pub fn new(u: Vec<f64>, x: Vec<f64>, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidConfig(format!("threshold must be finite, got {threshold}")));
        }
        if u.len() != x.len() {
            return Err(Error::ShapeMismatch { expected: u.len(), actual: x.len() });
        }
        if u.is_empty() {
            return Err(Error::EmptySample("auxiliary sample has no rows"));
        }
        check_finite("u", &u)?;
        check_finite("x", &x)?;
        let w = x.iter().map(|&v| treatment(v, threshold)).collect();
        Ok(Self { u, x, w, threshold })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Derived treatment `I(x >= c)` per row.
    pub fn w(&self) -> &[u8] {
        &self.w
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn resample(&self, rows: &[usize]) -> Self {
        Self {
            u: rows.iter().map(|&i| self.u[i]).collect(),
            x: rows.iter().map(|&i| self.x[i]).collect(),
            w: rows.iter().map(|&i| self.w[i]).collect(),
            threshold: self.threshold,
        }
    }

    pub fn centered(&self) -> Self {
        Self {
            u: self.u.clone(),
            x: self.x.iter().map(|v| v - self.threshold).collect(),
            w: self.w.clone(),
            threshold: 0.0,
        }
    }
}

fn check_finite(column: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(row) => Err(Error::NonFiniteValue { column, row, raw: values[row].to_string() }),
        None => Ok(()),
    }
}

/// Reads the named columns of a headed CSV file as finite floats.
fn read_columns<const N: usize>(path: &Path, names: [&'static str; N]) -> Result<[Vec<f64>; N]> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut index = [0usize; N];
    for (slot, name) in index.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::MissingColumn { path: path.to_path_buf(), column: name })?;
    }
    let mut columns: [Vec<f64>; N] = std::array::from_fn(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for ((column, &i), name) in columns.iter_mut().zip(&index).zip(names) {
            let raw = record.get(i).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => column.push(v),
                _ => return Err(Error::NonFiniteValue { column: name, row, raw: raw.to_string() }),
            }
        }
    }
    Ok(columns)
}

/// Loads `main.csv` with header `x,w,y`.
pub fn load_main_csv(path: impl AsRef<Path>, threshold: f64) -> Result<MainSample> {
    let [x, w, y] = read_columns(path.as_ref(), ["x", "w", "y"])?;
    MainSample::new(x, w, y, threshold)
}

/// Loads `aux.csv` with header `u,x`.
pub fn load_aux_csv(path: impl AsRef<Path>, threshold: f64) -> Result<AuxSample> {
    let [u, x] = read_columns(path.as_ref(), ["u", "x"])?;
    AuxSample::new(u, x, threshold)
}

/// Writes `x,w,y` using shortest round-trip decimal formatting.
pub fn write_main_csv(sample: &MainSample, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "x,w,y")?;
    for ((x, w), y) in sample.x.iter().zip(&sample.w).zip(&sample.y) {
        writeln!(out, "{x},{w},{y}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aux_csv(sample: &AuxSample, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "u,x")?;
    for (u, x) in sample.u.iter().zip(&sample.x) {
        writeln!(out, "{u},{x}")?;
    }
    out.flush()?;
    Ok(())
}

/// Side counts of the auxiliary rows within one bin (or level) of `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityBin {
    /// Inclusive lower edge; equals `upper` for a discrete level.
    pub lower: f64,
    pub upper: f64,
    /// Rows with `x < c`.
    pub below: usize,
    /// Rows with `x >= c`.
    pub above: usize,
}

impl PositivityBin {
    pub fn total(&self) -> usize {
        self.below + self.above
    }

    pub fn one_sided(&self) -> bool {
        self.total() > 0 && (self.below == 0 || self.above == 0)
    }

    fn min_side_share(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.below.min(self.above) as f64 / n as f64)
    }
}

/// Empirical check that both treatment arms occur at every value of `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityDiagnostic {
    pub bins: Vec<PositivityBin>,
    /// Whether `u` was treated as discrete (at most two distinct values).
    pub discrete: bool,
    /// Smallest within-bin share of the minority side, over nonempty bins.
    pub min_side_share: f64,
    /// Set when some nonempty bin has rows on only one side of the threshold.
    pub warning: bool,
}

/// Default number of equal-width bins for a continuous auxiliary variable.
pub const DEFAULT_BINS: usize = 10;

pub fn positivity_diagnostic(aux: &AuxSample, bins: usize) -> Result<PositivityDiagnostic> {
    if aux.is_empty() {
        return Err(Error::EmptySample("auxiliary sample has no rows"));
    }
    let mut levels: Vec<f64> = aux.u.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    let discrete = levels.len() <= 2;
    let mut out: Vec<PositivityBin> = if discrete {
        levels.iter().map(|&l| PositivityBin { lower: l, upper: l, below: 0, above: 0 }).collect()
    } else {
        if bins == 0 {
            return Err(Error::InvalidConfig("need at least one bin for a continuous u".into()));
        }
        let (lo, hi) = (levels[0], levels[levels.len() - 1]);
        let width = (hi - lo) / bins as f64;
        (0..bins)
            .map(|b| PositivityBin {
                lower: lo + width * b as f64,
                upper: if b + 1 == bins { hi } else { lo + width * (b + 1) as f64 },
                below: 0,
                above: 0,
            })
            .collect()
    };

    let (lo, width) = if discrete { (0.0, 0.0) } else { (levels[0], (levels[levels.len() - 1] - levels[0]) / bins as f64) };
    for (&u, &w) in aux.u.iter().zip(&aux.w) {
        let b = if discrete {
            levels.iter().position(|&l| l == u).expect("u is one of its own levels")
        } else {
            (((u - lo) / width).floor() as usize).min(bins - 1)
        };
        if w == 1 {
            out[b].above += 1;
        } else {
            out[b].below += 1;
        }
    }

    let min_side_share = out.iter().filter_map(PositivityBin::min_side_share).fold(0.5, f64::min);
    let warning = out.iter().any(PositivityBin::one_sided);
    Ok(PositivityDiagnostic { bins: out, discrete, min_side_share, warning })
}

impl PositivityDiagnostic {
    /// Plot-ready CSV: one row per bin.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,lower,upper,below,above\n");
        for (i, b) in self.bins.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{},{}\n", b.lower, b.upper, b.below, b.above));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_consistent_main_file() {
        let f = write_tmp("x,w,y\n0.3,1,2.1\n-0.2,0,0.4\n");
        let m = load_main_csv(f.path(), 0.0).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.x(), &[0.3, -0.2]);
        assert_eq!(m.w(), &[1, 0]);
        assert_eq!(m.y(), &[2.1, 0.4]);
    }

    #[test]
    fn rejects_sharp_design_violation() {
        let f = write_tmp("x,w,y\n0.3,0,2.1\n");
        assert!(matches!(load_main_csv(f.path(), 0.0), Err(Error::SharpDesignViolation { row: 0, .. })));
    }

    #[test]
    fn tie_at_threshold_is_treated() {
        let f = write_tmp("x,w,y\n0.0,1,5.0\n");
        assert_eq!(load_main_csv(f.path(), 0.0).unwrap().w(), &[1]);
        let f = write_tmp("x,w,y\n0.0,0,5.0\n");
        assert!(matches!(load_main_csv(f.path(), 0.0), Err(Error::SharpDesignViolation { .. })));
    }

    #[test]
    fn missing_column_is_named() {
        let f = write_tmp("x,treat,y\n0.3,1,2.1\n");
        match load_main_csv(f.path(), 0.0) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aux_derives_treatment() {
        let f = write_tmp("u,x\n0,-0.7\n1,0.9\n");
        let a = load_aux_csv(f.path(), 0.0).unwrap();
        assert_eq!(a.w(), &[0, 1]);
    }

    #[test]
    fn aux_empty_and_nan() {
        let f = write_tmp("u,x\n");
        assert!(matches!(load_aux_csv(f.path(), 0.0), Err(Error::EmptySample(_))));
        let f = write_tmp("u,x\n0.5,NaN\n");
        assert!(matches!(load_aux_csv(f.path(), 0.0), Err(Error::NonFiniteValue { column: "x", row: 0, .. })));
        let f = write_tmp("u,x\n0.5,abc\n");
        assert!(matches!(load_aux_csv(f.path(), 0.0), Err(Error::NonFiniteValue { .. })));
    }

    #[test]
    fn column_order_does_not_matter() {
        let f = write_tmp("y,x,w\n2.1,0.3,1\n");
        let m = load_main_csv(f.path(), 0.0).unwrap();
        assert_eq!((m.x()[0], m.y()[0]), (0.3, 2.1));
    }

    #[test]
    fn centering_moves_threshold_to_zero() {
        let m = MainSample::from_running(vec![1.0, 3.0], vec![0.0, 1.0], 2.0).unwrap();
        let c = m.centered();
        assert_eq!(c.x(), &[-1.0, 1.0]);
        assert_eq!(c.threshold(), 0.0);
        assert_eq!(c.w(), m.w());
    }

    #[test]
    fn positivity_on_one_sided_bins() {
        // u = x: every bin sits on one side of zero
        let xs: Vec<f64> = (0..20).map(|i| -0.95 + 0.1 * i as f64).collect();
        let aux = AuxSample::new(xs.clone(), xs, 0.0).unwrap();
        let d = positivity_diagnostic(&aux, DEFAULT_BINS).unwrap();
        assert!(!d.discrete);
        assert!(d.warning);
        assert!(d.bins.iter().all(|b| b.one_sided()));
        assert_eq!(d.min_side_share, 0.0);
        assert_eq!(d.bins.iter().map(PositivityBin::total).sum::<usize>(), 20);
    }

    #[test]
    fn positivity_single_row() {
        let aux = AuxSample::new(vec![0.4], vec![1.0], 0.0).unwrap();
        let d = positivity_diagnostic(&aux, DEFAULT_BINS).unwrap();
        assert_eq!(d.bins.len(), 1);
        assert!(d.warning);
        assert_eq!(d.min_side_share, 0.0);
    }

    #[test]
    fn positivity_binary_levels_balanced() {
        let aux = AuxSample::new(vec![0.0, 0.0, 1.0, 1.0, 1.0], vec![-1.0, 1.0, -1.0, 1.0, 2.0], 0.0).unwrap();
        let d = positivity_diagnostic(&aux, DEFAULT_BINS).unwrap();
        assert!(d.discrete);
        assert!(!d.warning);
        assert_eq!(d.bins.len(), 2);
        assert_eq!((d.bins[1].below, d.bins[1].above), (1, 2));
        assert!((d.min_side_share - 1.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn main_csv_round_trip_is_bit_exact(rows in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..40)) {
            let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let m = MainSample::from_running(x, y, 0.25).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_main_csv(&m, f.path()).unwrap();
            let back = load_main_csv(f.path(), 0.25).unwrap();
            prop_assert!(m.x().iter().zip(back.x()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert!(m.y().iter().zip(back.y()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(m.w(), back.w());
        }

        #[test]
        fn violation_iff_some_row_mislabelled(rows in prop::collection::vec((-2f64..2.0, any::<bool>()), 1..30)) {
            let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let w: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.1))).collect();
            let bad = rows.iter().any(|&(x, w)| w != (x >= 0.0));
            let result = MainSample::new(x, w, vec![0.0; rows.len()], 0.0);
            prop_assert_eq!(bad, matches!(result, Err(Error::SharpDesignViolation { .. })));
        }

        #[test]
        fn positivity_counts_partition(rows in prop::collection::vec((-3f64..3.0, -3f64..3.0), 1..60), bins in 1usize..12) {
            let u: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let x: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let aux = AuxSample::new(u, x, 0.0).unwrap();
            let d = positivity_diagnostic(&aux, bins).unwrap();
            prop_assert_eq!(d.bins.iter().map(PositivityBin::total).sum::<usize>(), rows.len());
            prop_assert!((0.0..=0.5).contains(&d.min_side_share));
        }
    }
}
