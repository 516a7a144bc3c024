//! Natural cubic regression splines parameterized by their values at the knots.
//!
//! A [`CubicBasisSystem`] holds the tridiagonal `B` matrix, the banded `D`
//! matrix, the second-derivative map `G = [0; B⁻¹D; 0]` and the wiggliness
//! penalty `S = DᵀB⁻¹D` for one knot vector. Evaluating the basis at `x`
//! yields a row whose dot product with the coefficient vector `β` is the
//! natural cubic spline interpolating `(κ_j, β_j)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("a cubic spline needs at least 3 knots, got {0}")]
    TooFewKnots(usize),

    #[error("knots must be finite and strictly increasing (violated at index {0})")]
    NotIncreasing(usize),

    #[error("degenerate data for knot placement: {0}")]
    DegenerateData(String),

    #[error("the B matrix of the spline system is numerically singular")]
    SingularSystem,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Strictly increasing knot positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KnotVector(Vec<f64>);

impl KnotVector {
    pub fn new(knots: Vec<f64>) -> Result<Self, SplineError> {
        if let Some(i) = knots.iter().position(|v| !v.is_finite()) {
            return Err(SplineError::NotIncreasing(i));
        }
        if let Some(i) = knots.windows(2).position(|w| w[0] >= w[1]) {
            return Err(SplineError::NotIncreasing(i + 1));
        }
        Ok(Self(knots))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn range(&self) -> f64 {
        self.last() - self.first()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.0.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

impl TryFrom<Vec<f64>> for KnotVector {
    type Error = SplineError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        KnotVector::new(v)
    }
}

impl From<KnotVector> for Vec<f64> {
    fn from(k: KnotVector) -> Self {
        k.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KnotPlacement {
    Uniform,
    #[default]
    Quantile,
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Places `k` knots over the range of `data`.
///
/// The quantile strategy puts knot `j` at the `(j-1)/(k-1)` empirical quantile.
/// When ties make those quantiles coincide, the quantiles of the distinct
/// values are used instead, which are strictly increasing whenever the data
/// has at least `k` distinct values.
pub fn place_knots(strategy: KnotPlacement, data: &[f64], k: usize) -> Result<KnotVector, SplineError> {
    if k < 3 {
        return Err(SplineError::TooFewKnots(k));
    }
    if data.is_empty() {
        return Err(SplineError::DegenerateData("no data".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SplineError::DegenerateData("non-finite value".into()));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    match strategy {
        KnotPlacement::Uniform => {
            if hi <= lo {
                return Err(SplineError::DegenerateData("zero range".into()));
            }
            let step = (hi - lo) / (k - 1) as f64;
            let mut knots: Vec<f64> = (0..k).map(|j| lo + step * j as f64).collect();
            knots[k - 1] = hi;
            KnotVector::new(knots)
        }
        KnotPlacement::Quantile => {
            let mut distinct = sorted.clone();
            distinct.dedup();
            if distinct.len() < k {
                return Err(SplineError::DegenerateData(format!(
                    "{} distinct values for {} knots",
                    distinct.len(),
                    k
                )));
            }
            let at = |src: &[f64]| -> Vec<f64> {
                (0..k)
                    .map(|j| sorted_quantile(src, j as f64 / (k - 1) as f64))
                    .collect()
            };
            KnotVector::new(at(&sorted)).or_else(|_| KnotVector::new(at(&distinct)))
        }
    }
}

/// Where `x` falls relative to the knots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Locus {
    /// Inside interval `j` (between knots `j` and `j+1`, zero based) with
    /// `s = κ_{j+1} - x` and `t = x - κ_j`.
    Inside { j: usize, s: f64, t: f64 },
    /// Left of the first knot, `delta = x - κ_1 < 0`.
    Below { delta: f64 },
    /// Right of the last knot, `delta = x - κ_k > 0`.
    Above { delta: f64 },
}

/// Precomputed matrices of a natural cubic regression spline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KnotVector", into = "KnotVector")]
pub struct CubicBasisSystem {
    knots: KnotVector,
    gaps: Vec<f64>,
    b: DMatrix<f64>,
    b_inv: DMatrix<f64>,
    d: DMatrix<f64>,
    g: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl TryFrom<KnotVector> for CubicBasisSystem {
    type Error = SplineError;
    fn try_from(k: KnotVector) -> Result<Self, Self::Error> {
        CubicBasisSystem::new(k)
    }
}

impl From<CubicBasisSystem> for KnotVector {
    fn from(s: CubicBasisSystem) -> Self {
        s.knots
    }
}

impl CubicBasisSystem {
    pub fn new(knots: KnotVector) -> Result<Self, SplineError> {
        let k = knots.len();
        if k < 3 {
            return Err(SplineError::TooFewKnots(k));
        }
        let h = knots.gaps();
        let m = k - 2;
        let mut b = DMatrix::zeros(m, m);
        let mut d = DMatrix::zeros(m, k);
        for i in 0..m {
            b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
            if i + 1 < m {
                b[(i, i + 1)] = h[i + 1] / 6.0;
                b[(i + 1, i)] = h[i + 1] / 6.0;
            }
            d[(i, i)] = 1.0 / h[i];
            d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
            d[(i, i + 2)] = 1.0 / h[i + 1];
        }
        let chol = b.clone().cholesky().ok_or(SplineError::SingularSystem)?;
        let b_inv = chol.inverse();
        if b_inv.iter().any(|v| !v.is_finite()) {
            return Err(SplineError::SingularSystem);
        }
        let binv_d = chol.solve(&d);
        let mut g = DMatrix::zeros(k, k);
        g.rows_mut(1, m).copy_from(&binv_d);
        let mut s = d.transpose() * &binv_d;
        // exact symmetry
        for i in 0..k {
            for j in (i + 1)..k {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Ok(Self {
            knots,
            gaps: h,
            b,
            b_inv,
            d,
            g,
            s,
        })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self, SplineError> {
        Self::new(KnotVector::new(knots)?)
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn b_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn d_matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn g_matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// The wiggliness penalty `S = DᵀB⁻¹D`.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Interval lookup; a knot shared by two intervals belongs to the left one.
    pub(crate) fn locate(&self, x: f64) -> Locus {
        let kn = self.knots.as_slice();
        let k = kn.len();
        if x < kn[0] {
            return Locus::Below { delta: x - kn[0] };
        }
        if x > kn[k - 1] {
            return Locus::Above { delta: x - kn[k - 1] };
        }
        let j = kn.partition_point(|&v| v < x).saturating_sub(1).min(k - 2);
        Locus::Inside {
            j,
            s: kn[j + 1] - x,
            t: x - kn[j],
        }
    }

    /// Writes the basis row at `x` into `out` (length `k`).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let k = self.dim();
        debug_assert_eq!(out.len(), k);
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.locate(x) {
            Locus::Inside { j, s, t } => {
                let h = self.gaps[j];
                let cm = (s * s * s / h - h * s) / 6.0;
                let cp = (t * t * t / h - h * t) / 6.0;
                for (c, o) in out.iter_mut().enumerate() {
                    *o = cm * self.g[(j, c)] + cp * self.g[(j + 1, c)];
                }
                out[j] += s / h;
                out[j + 1] += t / h;
            }
            Locus::Below { delta } => {
                let h = self.gaps[0];
                for (c, o) in out.iter_mut().enumerate() {
                    *o = -delta * h / 6.0 * self.g[(1, c)];
                }
                out[0] += 1.0 - delta / h;
                out[1] += delta / h;
            }
            Locus::Above { delta } => {
                let h = self.gaps[k - 2];
                for (c, o) in out.iter_mut().enumerate() {
                    *o = delta * h / 6.0 * self.g[(k - 2, c)];
                }
                out[k - 2] -= delta / h;
                out[k - 1] += 1.0 + delta / h;
            }
        }
    }

    pub fn eval_basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Row `i` is `eval_basis(xs[i])`.
    pub fn eval_basis_matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        let k = self.dim();
        let mut m = DMatrix::zeros(xs.len(), k);
        let mut row = vec![0.0; k];
        for (i, &x) in xs.iter().enumerate() {
            self.eval_into(x, &mut row);
            for (c, v) in row.iter().enumerate() {
                m[(i, c)] = *v;
            }
        }
        m
    }

    /// Spline value at `x` for knot values `beta`.
    pub fn value(&self, beta: &[f64], x: f64) -> Result<f64, SplineError> {
        self.check_len(beta)?;
        let row = self.eval_basis(x);
        Ok(row.iter().zip(beta).map(|(a, b)| a * b).sum())
    }

    /// `βᵀSβ`, the integrated squared second derivative of the spline.
    pub fn wiggliness(&self, beta: &[f64]) -> Result<f64, SplineError> {
        self.check_len(beta)?;
        let b = DVector::from_column_slice(beta);
        Ok((b.transpose() * &self.s * &b)[(0, 0)].max(0.0))
    }

    /// Second derivatives of the spline at the knots (`Gβ`).
    pub fn second_derivatives(&self, beta: &[f64]) -> Result<Vec<f64>, SplineError> {
        self.check_len(beta)?;
        let b = DVector::from_column_slice(beta);
        Ok((&self.g * b).iter().copied().collect())
    }

    fn check_len(&self, beta: &[f64]) -> Result<(), SplineError> {
        if beta.len() != self.dim() {
            return Err(SplineError::DimensionMismatch {
                expected: self.dim(),
                found: beta.len(),
            });
        }
        Ok(())
    }

    /// Gradient with respect to the knot positions of
    /// `Σ_i weights[i]·f(xs[i]) + lambda·βᵀSβ`, where `f` is the spline with
    /// knot values `beta`. Reverse-mode through `γ = B⁻¹Dβ`.
    pub fn knot_gradient(
        &self,
        beta: &[f64],
        xs: &[f64],
        weights: &[f64],
        lambda: f64,
    ) -> Result<Vec<f64>, SplineError> {
        self.check_len(beta)?;
        let k = self.dim();
        let m = k - 2;
        let h = &self.gaps;
        let gamma = self.second_derivatives(beta)?;
        let mut grad = vec![0.0; k];
        // adjoint of the knot second derivatives
        let mut w = vec![0.0; k];
        for (&x, &wt) in xs.iter().zip(weights) {
            if wt == 0.0 {
                continue;
            }
            match self.locate(x) {
                Locus::Inside { j, s, t } => {
                    let hj = h[j];
                    let h2 = hj * hj;
                    let (s2, s3, t2, t3) = (s * s, s * s * s, t * t, t * t * t);
                    w[j] += wt * (s3 / hj - hj * s) / 6.0;
                    w[j + 1] += wt * (t3 / hj - hj * t) / 6.0;

                    let dcm = (3.0 * s2 / hj - s3 / h2 - s - hj) / 6.0;
                    let dcp = (-t3 / h2 - t) / 6.0;
                    let dam = t / h2;
                    let dap = -t / h2;
                    grad[j + 1] += wt * (dcm * gamma[j] + dcp * gamma[j + 1] + dam * beta[j] + dap * beta[j + 1]);

                    let dcm = (s3 / h2 + s) / 6.0;
                    let dcp = (-3.0 * t2 / hj + t3 / h2 + t + hj) / 6.0;
                    let dam = s / h2;
                    let dap = -s / h2;
                    grad[j] += wt * (dcm * gamma[j] + dcp * gamma[j + 1] + dam * beta[j] + dap * beta[j + 1]);
                }
                Locus::Below { delta } => {
                    let h0 = h[0];
                    let db = beta[1] - beta[0];
                    let slope = db / h0 - h0 * gamma[1] / 6.0;
                    w[1] += wt * delta * (-h0 / 6.0);
                    let dslope = db / (h0 * h0) + gamma[1] / 6.0;
                    grad[0] += wt * (-slope + delta * dslope);
                    grad[1] += wt * delta * (-dslope);
                }
                Locus::Above { delta } => {
                    let hl = h[k - 2];
                    let db = beta[k - 1] - beta[k - 2];
                    let slope = db / hl + hl * gamma[k - 2] / 6.0;
                    w[k - 2] += wt * delta * hl / 6.0;
                    let dslope = -db / (hl * hl) + gamma[k - 2] / 6.0;
                    grad[k - 1] += wt * (-slope + delta * dslope);
                    grad[k - 2] += wt * delta * (-dslope);
                }
            }
        }
        let w_mid = DVector::from_column_slice(&w[1..k - 1]);
        let z = &self.b_inv * w_mid;
        let gm = &gamma[1..k - 1];
        // total adjoints for u = Dβ and for the B-products
        let a: Vec<f64> = (0..m).map(|i| z[i] + 2.0 * lambda * gm[i]).collect();
        let bb: Vec<f64> = (0..m).map(|i| z[i] + lambda * gm[i]).collect();
        let mut dh = vec![0.0; k - 1];
        for i in 0..m {
            // u_i = (β_i - β_{i+1})/h_i + (β_{i+2} - β_{i+1})/h_{i+1}
            dh[i] += a[i] * (-(beta[i] - beta[i + 1]) / (h[i] * h[i]));
            dh[i + 1] += a[i] * (-(beta[i + 2] - beta[i + 1]) / (h[i + 1] * h[i + 1]));
            // (Bγ)_i
            let left = if i >= 1 { gm[i - 1] / 6.0 } else { 0.0 };
            let right = if i + 1 < m { gm[i + 1] / 6.0 } else { 0.0 };
            dh[i] -= bb[i] * (gm[i] / 3.0 + left);
            dh[i + 1] -= bb[i] * (gm[i] / 3.0 + right);
        }
        for (i, d) in dh.iter().enumerate() {
            grad[i + 1] += d;
            grad[i] -= d;
        }
        Ok(grad)
    }
}
