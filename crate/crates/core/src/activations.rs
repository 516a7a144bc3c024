//! Fast spline units: Silverman-kernel and truncated-power basis expansions.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, SQRT_2};
use thiserror::Error;

use crate::spline::{place_knots, KnotPlacement, KnotVector, SplineError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("bandwidth {index} must be strictly positive and finite, got {value}")]
    InvalidBandwidth { index: usize, value: f64 },

    #[error("centers and bandwidths differ in length ({centers} vs {bandwidths})")]
    LengthMismatch { centers: usize, bandwidths: usize },

    #[error("truncated power degree must be 0..=3, got {0}")]
    InvalidDegree(u32),

    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// `K(u) = ½·exp(−|u|/√2)·sin(|u|/√2 + π/4)`.
pub fn silverman_kernel(u: f64) -> f64 {
    let a = u.abs() / SQRT_2;
    0.5 * (-a).exp() * (a + FRAC_PI_4).sin()
}

/// `K'(u)`. The kernel is continuously differentiable with `K'(0) = 0`.
pub fn silverman_kernel_derivative(u: f64) -> f64 {
    let a = u.abs() / SQRT_2;
    // cos(a + π/4) − sin(a + π/4) = −√2 sin a
    let dk_da = -0.5 * SQRT_2 * (-a).exp() * a.sin();
    u.signum() * dk_da / SQRT_2
}

/// Kernels `K((x − d_j)/σ_j)` with trainable centers and bandwidths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SilvermanRepr", into = "SilvermanRepr")]
pub struct SilvermanBasis {
    centers: Vec<f64>,
    bandwidths: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SilvermanRepr {
    centers: Vec<f64>,
    bandwidths: Vec<f64>,
}

impl TryFrom<SilvermanRepr> for SilvermanBasis {
    type Error = ActivationError;
    fn try_from(r: SilvermanRepr) -> Result<Self, Self::Error> {
        SilvermanBasis::new(r.centers, r.bandwidths)
    }
}

impl From<SilvermanBasis> for SilvermanRepr {
    fn from(b: SilvermanBasis) -> Self {
        SilvermanRepr {
            centers: b.centers,
            bandwidths: b.bandwidths,
        }
    }
}

/// Partial derivatives of every basis entry at one input.
#[derive(Clone, Debug, PartialEq)]
pub struct SilvermanGradients {
    pub d_center: Vec<f64>,
    pub d_bandwidth: Vec<f64>,
    pub d_input: Vec<f64>,
}

impl SilvermanBasis {
    pub fn new(centers: Vec<f64>, bandwidths: Vec<f64>) -> Result<Self, ActivationError> {
        if centers.len() != bandwidths.len() {
            return Err(ActivationError::LengthMismatch {
                centers: centers.len(),
                bandwidths: bandwidths.len(),
            });
        }
        check_bandwidths(&bandwidths)?;
        Ok(Self { centers, bandwidths })
    }

    /// Centers at the given knots, every bandwidth equal to the mean knot gap.
    pub fn from_knots(knots: &KnotVector) -> Self {
        let sigma = knots.range() / (knots.len() - 1) as f64;
        Self {
            centers: knots.as_slice().to_vec(),
            bandwidths: vec![sigma; knots.len()],
        }
    }

    /// Centers at `k` quantile knots of `data`.
    pub fn from_data(data: &[f64], k: usize) -> Result<Self, ActivationError> {
        let knots = place_knots(KnotPlacement::Quantile, data, k)?;
        Ok(Self::from_knots(&knots))
    }

    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Overwrites centers and log-bandwidths from an optimizer parameter slice
    /// laid out as `[centers.., ln σ..]`.
    pub(crate) fn set_from_params(&mut self, params: &[f64]) -> Result<(), ActivationError> {
        let k = self.dim();
        let bw: Vec<f64> = params[k..2 * k].iter().map(|v| v.exp()).collect();
        check_bandwidths(&bw)?;
        self.centers.copy_from_slice(&params[..k]);
        self.bandwidths = bw;
        Ok(())
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.centers);
        out.extend(self.bandwidths.iter().map(|s| s.ln()));
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        for ((o, d), s) in out.iter_mut().zip(&self.centers).zip(&self.bandwidths) {
            *o = silverman_kernel((x - d) / s);
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn gradients(&self, x: f64) -> SilvermanGradients {
        let k = self.dim();
        let mut g = SilvermanGradients {
            d_center: Vec::with_capacity(k),
            d_bandwidth: Vec::with_capacity(k),
            d_input: Vec::with_capacity(k),
        };
        for (d, s) in self.centers.iter().zip(&self.bandwidths) {
            let u = (x - d) / s;
            let kp = silverman_kernel_derivative(u);
            g.d_input.push(kp / s);
            g.d_center.push(-kp / s);
            g.d_bandwidth.push(-kp * u / s);
        }
        g
    }
}

fn check_bandwidths(bw: &[f64]) -> Result<(), ActivationError> {
    match bw.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        Some(index) => Err(ActivationError::InvalidBandwidth {
            index,
            value: bw[index],
        }),
        None => Ok(()),
    }
}

/// Polynomial terms `1, x, …, x^d` followed by hinges `(x − κ_j)₊^d` at the
/// interior knots `κ_2 … κ_{k−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPowerBasis {
    knots: KnotVector,
    degree: u32,
}

impl TruncatedPowerBasis {
    pub fn new(knots: KnotVector, degree: u32) -> Result<Self, ActivationError> {
        if degree > 3 {
            return Err(ActivationError::InvalidDegree(degree));
        }
        if knots.len() < 2 {
            return Err(SplineError::TooFewKnots(knots.len()).into());
        }
        Ok(Self { knots, degree })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.degree as usize + 1 + self.knots.len() - 2
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let d = self.degree as i32;
        let p = self.degree as usize + 1;
        for (i, o) in out[..p].iter_mut().enumerate() {
            *o = x.powi(i as i32);
        }
        let kn = self.knots.as_slice();
        for (o, &kappa) in out[p..].iter_mut().zip(&kn[1..kn.len() - 1]) {
            *o = if x >= kappa { (x - kappa).powi(d) } else { 0.0 };
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_at_zero_and_symmetry() {
        assert_abs_diff_eq!(silverman_kernel(0.0), SQRT_2 / 4.0, epsilon = 1e-15);
        for u in [0.1, 1.3, 4.0, 17.5] {
            assert_eq!(silverman_kernel(u), silverman_kernel(-u));
        }
        assert_eq!(silverman_kernel_derivative(0.0), 0.0);
    }

    #[test]
    fn kernel_integrates_to_one() {
        // composite Simpson on [-40, 40]
        let n = 400_000;
        let (a, b) = (-40.0, 40.0);
        let h = (b - a) / n as f64;
        let mut acc = silverman_kernel(a) + silverman_kernel(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * silverman_kernel(a + h * i as f64);
        }
        assert_abs_diff_eq!(acc * h / 3.0, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn first_positive_zero() {
        let (mut lo, mut hi) = (3.0, 3.6);
        assert!(silverman_kernel(lo) > 0.0 && silverman_kernel(hi) < 0.0);
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if silverman_kernel(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_abs_diff_eq!(lo, 3.0 * SQRT_2 * std::f64::consts::PI / 4.0, epsilon = 1e-6);
        // no earlier sign change
        assert!((0..3000).all(|i| silverman_kernel(i as f64 * 1e-3) > 0.0));
    }

    #[test]
    fn basis_entries() {
        let b = SilvermanBasis::new(vec![0.0, 1.0], vec![0.5, 2.0]).unwrap();
        let row = b.eval(1.0);
        assert_abs_diff_eq!(row[1], SQRT_2 / 4.0, epsilon = 1e-15);
        let scaled = SilvermanBasis::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        // doubling σ_0 and the offset jointly
        assert_abs_diff_eq!(b.eval(0.3)[0], scaled.eval(0.6)[0], epsilon = 1e-15);
        let far = b.eval(1000.0);
        assert!(far.iter().all(|v| v.abs() < 1e-10));
        let g = b.gradients(1000.0);
        assert!(g
            .d_center
            .iter()
            .chain(&g.d_bandwidth)
            .chain(&g.d_input)
            .all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn bandwidth_validation() {
        assert!(matches!(
            SilvermanBasis::new(vec![0.0, 1.0], vec![1.0, 0.0]),
            Err(ActivationError::InvalidBandwidth { index: 1, .. })
        ));
        assert!(matches!(
            SilvermanBasis::new(vec![0.0], vec![-1.0]),
            Err(ActivationError::InvalidBandwidth { index: 0, .. })
        ));
        let json = r#"{"centers":[0.0],"bandwidths":[-2.0]}"#;
        assert!(serde_json::from_str::<SilvermanBasis>(json).is_err());
    }

    #[test]
    fn center_and_input_gradients_are_opposite() {
        let b = SilvermanBasis::new(vec![0.2, -0.4, 1.1], vec![0.3, 0.9, 0.05]).unwrap();
        for x in [-1.0, 0.0, 0.2, 0.77] {
            let g = b.gradients(x);
            for j in 0..3 {
                assert_eq!(g.d_center[j], -g.d_input[j]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_at_center() {
        let b = SilvermanBasis::new(vec![0.5], vec![0.7]).unwrap();
        let step = 1e-6;
        for x in [0.5, 0.5 + 0.3, 0.5 - 1.9] {
            let g = b.gradients(x);
            let fd_x = (b.eval(x + step)[0] - b.eval(x - step)[0]) / (2.0 * step);
            assert!((g.d_input[0] - fd_x).abs() <= 1e-5 * g.d_input[0].abs().max(1.0));
            let plus = SilvermanBasis::new(vec![0.5], vec![0.7 + step]).unwrap();
            let minus = SilvermanBasis::new(vec![0.5], vec![0.7 - step]).unwrap();
            let fd_s = (plus.eval(x)[0] - minus.eval(x)[0]) / (2.0 * step);
            assert!((g.d_bandwidth[0] - fd_s).abs() <= 1e-5 * g.d_bandwidth[0].abs().max(1.0));
        }
    }

    #[test]
    fn truncated_power_examples() {
        let k = KnotVector::new(vec![-2.0, 0.0, 2.0]).unwrap();
        let b = TruncatedPowerBasis::new(k.clone(), 1).unwrap();
        assert_eq!(b.eval(-1.0), vec![1.0, -1.0, 0.0]);
        for x in [-1.5, -0.1, 0.0, 0.4, 1.9] {
            assert_eq!(b.eval(x)[2], f64::max(0.0, x));
        }
        let k = KnotVector::new(vec![0.0, 1.0, 3.0]).unwrap();
        let b = TruncatedPowerBasis::new(k, 3).unwrap();
        let row = b.eval(2.0);
        assert_eq!(row.len(), 5);
        assert_eq!(row[4], 1.0);
        assert_eq!(&row[..4], &[1.0, 2.0, 4.0, 8.0]);
        let b0 = TruncatedPowerBasis::new(KnotVector::new(vec![0.0, 1.0, 2.0]).unwrap(), 0).unwrap();
        assert_eq!(b0.eval(0.5), vec![1.0, 0.0]);
        assert_eq!(b0.eval(1.0), vec![1.0, 1.0]);
        assert!(TruncatedPowerBasis::new(KnotVector::new(vec![0.0, 1.0]).unwrap(), 4).is_err());
    }
}
