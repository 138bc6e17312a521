//! Transition-kernel families.
//!
//! A chain has `N` reasoning steps and `M` states per step. State `m` at step
//! `n` lies on the `m`-th ground-truth path, so the ground-truth kernel is the
//! identity and the uniform kernel spreads `1/M` everywhere. The symmetric
//! family interpolates between them with a single signal parameter `delta`:
//! `1/M + delta` on the diagonal and `1/M - delta/(M-1)` elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Row-sum tolerance for stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Shape of a tabular chain: `m` states per step, `n` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainSpec {
    pub m: usize,
    pub n: usize,
}

impl ChainSpec {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m < 2 {
            return invalid(format!("M must be >= 2 (got {m})"));
        }
        if n < 1 {
            return invalid(format!("N must be >= 1 (got {n})"));
        }
        Ok(ChainSpec { m, n })
    }

    /// Largest admissible signal parameter, `1 - 1/M` (the ground-truth kernel).
    pub fn max_delta(&self) -> f64 {
        max_delta(self.m)
    }
}

pub(crate) fn max_delta(m: usize) -> f64 {
    1.0 - 1.0 / m as f64
}

/// Member of the one-parameter symmetric kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymmetricRepr", into = "SymmetricRepr")]
pub struct SymmetricKernel {
    spec: ChainSpec,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct SymmetricRepr {
    m: usize,
    n: usize,
    delta: f64,
}

impl TryFrom<SymmetricRepr> for SymmetricKernel {
    type Error = crate::Error;

    fn try_from(r: SymmetricRepr) -> Result<Self> {
        make_symmetric(ChainSpec::new(r.m, r.n)?, r.delta)
    }
}

impl From<SymmetricKernel> for SymmetricRepr {
    fn from(k: SymmetricKernel) -> Self {
        SymmetricRepr {
            m: k.spec.m,
            n: k.spec.n,
            delta: k.delta,
        }
    }
}

/// Builds the symmetric kernel with signal `delta`, validating `0 <= delta <= 1 - 1/M`.
pub fn make_symmetric(spec: ChainSpec, delta: f64) -> Result<SymmetricKernel> {
    let spec = ChainSpec::new(spec.m, spec.n)?;
    if !delta.is_finite() {
        return invalid(format!("delta must be finite (got {delta})"));
    }
    if delta < 0.0 {
        return invalid(format!("delta must be >= 0 (got {delta})"));
    }
    let upper = spec.max_delta();
    if delta > upper {
        return invalid(format!(
            "delta must be <= 1 - 1/M = {upper} for M = {} (got {delta})",
            spec.m
        ));
    }
    Ok(SymmetricKernel { spec, delta })
}

impl SymmetricKernel {
    /// Uniform kernel `P_u` (`delta = 0`).
    pub fn uniform(spec: ChainSpec) -> Result<Self> {
        make_symmetric(spec, 0.0)
    }

    /// Ground-truth kernel (`delta = 1 - 1/M`).
    pub fn ground_truth(spec: ChainSpec) -> Result<Self> {
        make_symmetric(spec, spec.max_delta())
    }

    /// Builds a kernel from a computed signal value, clamping rounding
    /// overshoot of at most a few ulps back into the admissible interval.
    pub(crate) fn from_update(spec: ChainSpec, delta: f64) -> Self {
        debug_assert!(delta.is_finite());
        SymmetricKernel {
            spec,
            delta: delta.clamp(0.0, spec.max_delta()),
        }
    }

    pub fn spec(&self) -> ChainSpec {
        self.spec
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Diagonal entry `1/M + delta`.
    pub fn alpha(&self) -> f64 {
        (1.0 / self.spec.m as f64 + self.delta).min(1.0)
    }

    /// Off-diagonal entry `1/M - delta/(M-1)`.
    pub fn beta(&self) -> f64 {
        let m = self.spec.m as f64;
        // `1 - 1/M` is rounded, so the ground-truth endpoint can land an ulp below zero.
        (1.0 / m - self.delta / (m - 1.0)).max(0.0)
    }

    /// `‖P - I‖_∞`, which for this family is `(M-1)·beta`.
    pub fn gap(&self) -> f64 {
        (self.spec.m as f64 - 1.0) * self.beta()
    }

    pub fn to_dense(&self) -> DenseKernel {
        to_dense(self)
    }
}

/// General row-stochastic transition matrix (`rows` sources, `cols` destinations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseRepr", into = "DenseRepr")]
pub struct DenseKernel {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseRepr {
    rows: usize,
    cols: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<DenseRepr> for DenseKernel {
    type Error = crate::Error;

    fn try_from(r: DenseRepr) -> Result<Self> {
        if r.entries.len() != r.rows {
            return invalid(format!(
                "dense kernel declares {} rows but has {}",
                r.rows,
                r.entries.len()
            ));
        }
        DenseKernel::from_rows(r.entries).and_then(|k| {
            if k.cols != r.cols {
                invalid(format!(
                    "dense kernel declares {} cols but has {}",
                    r.cols, k.cols
                ))
            } else {
                Ok(k)
            }
        })
    }
}

impl From<DenseKernel> for DenseRepr {
    fn from(k: DenseKernel) -> Self {
        DenseRepr {
            rows: k.rows,
            cols: k.cols,
            entries: k.entries.chunks(k.cols).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl DenseKernel {
    /// Validates shape, entry range and row sums.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!(
                "dense kernel must be non-empty (got {rows}x{cols})"
            ));
        }
        if entries.len() != rows * cols {
            return invalid(format!(
                "dense kernel {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                entries.len()
            ));
        }
        for (r, row) in entries.chunks(cols).enumerate() {
            if let Some(c) = row.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return invalid(format!("entry ({r},{c}) = {} is outside [0,1]", row[c]));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return invalid(format!("row {r} sums to {sum}, not 1"));
            }
        }
        Ok(DenseKernel {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|row| row.len() != cols) {
            return invalid(format!(
                "row {r} has {} entries, expected {cols}",
                rows[r].len()
            ));
        }
        DenseKernel::new(n_rows, cols, rows.into_iter().flatten().collect())
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        DenseKernel {
            rows: size,
            cols: size,
            entries,
        }
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        DenseKernel {
            rows,
            cols,
            entries: vec![1.0 / cols as f64; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.cols)
    }

    /// Largest absolute entrywise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &DenseKernel) -> Option<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return None;
        }
        Some(
            self.entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Expands a symmetric kernel into its `M x M` matrix.
pub fn to_dense(k: &SymmetricKernel) -> DenseKernel {
    let m = k.m();
    let (alpha, beta) = (k.alpha(), k.beta());
    let mut entries = vec![beta; m * m];
    for i in 0..m {
        entries[i * m + i] = alpha;
    }
    DenseKernel {
        rows: m,
        cols: m,
        entries,
    }
}

/// Projection of a square kernel onto the symmetric family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetricFit {
    /// Raw estimate `mean(diag) - 1/M`. Sampling noise can push it below zero.
    pub delta: f64,
    /// Nearest admissible family member (`delta` clamped to `[0, 1 - 1/M]`).
    pub kernel: SymmetricKernel,
    /// Max absolute entrywise deviation of the input from the fitted matrix.
    pub deviation: f64,
    /// True when `deviation <= tol`.
    pub symmetric: bool,
}

/// Fits the symmetric family to `d` using the mean diagonal as the estimator.
///
/// The step count carried by the returned kernel is `n`; a dense kernel does
/// not know how many steps it will be applied for.
pub fn fit_symmetric(d: &DenseKernel, n: usize, tol: f64) -> Result<SymmetricFit> {
    if !d.is_square() {
        return invalid(format!(
            "fit_symmetric needs a square kernel (got {}x{})",
            d.rows, d.cols
        ));
    }
    let spec = ChainSpec::new(d.rows, n)?;
    let m = d.rows as f64;
    let mean_diag = (0..d.rows).map(|i| d.get(i, i)).sum::<f64>() / m;
    let delta = mean_diag - 1.0 / m;
    // Matrix with the raw (unclamped) delta, so deviation measures shape only.
    let alpha = 1.0 / m + delta;
    let beta = 1.0 / m - delta / (m - 1.0);
    let mut deviation: f64 = 0.0;
    for r in 0..d.rows {
        for c in 0..d.cols {
            let target = if r == c { alpha } else { beta };
            deviation = deviation.max((d.get(r, c) - target).abs());
        }
    }
    Ok(SymmetricFit {
        delta,
        kernel: SymmetricKernel::from_update(spec, delta),
        deviation,
        symmetric: deviation <= tol,
    })
}

/// `max |d - I|` over all entries.
pub fn infinity_gap(d: &DenseKernel) -> Result<f64> {
    if !d.is_square() {
        return invalid(format!(
            "infinity_gap needs a square kernel (got {}x{})",
            d.rows, d.cols
        ));
    }
    let mut gap: f64 = 0.0;
    for r in 0..d.rows {
        for c in 0..d.cols {
            let target = if r == c { 1.0 } else { 0.0 };
            gap = gap.max((d.get(r, c) - target).abs());
        }
    }
    Ok(gap)
}
