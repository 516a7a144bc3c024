#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use snam_core::activations::{SilvermanBasis, TruncatedPowerBasis};
use snam_core::data::FeatureMatrix;
use snam_core::model::{AdditiveModel, Family, FeatureUnit, UnitKind};
use snam_core::spline::{place_knots, KnotPlacement, KnotVector};
use snam_core::training::{gradients, total_loss, FitConfig};

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn uniform_knots(k: usize) -> KnotVector {
    KnotVector::new((0..k).map(|j| -1.0 + 2.0 * j as f64 / (k - 1) as f64).collect()).unwrap()
}

fn jittered_knots(r: &mut impl Rng, k: usize) -> KnotVector {
    let data: Vec<f64> = (0..400).map(|_| r.random_range(-1.0..1.0)).collect();
    place_knots(KnotPlacement::Quantile, &data, k).unwrap()
}

pub fn uniform_features(r: &mut impl Rng, n: usize, p: usize) -> FeatureMatrix {
    FeatureMatrix::new((0..n * p).map(|_| r.random_range(-1.0..1.0)).collect(), p)
}

/// A model over five features with one unit of every kind:
/// learnable cubic, Silverman, truncated power, linear, fixed cubic and a tensor.
pub fn random_model(seed: u64, family: Family) -> AdditiveModel {
    random_model_with(seed, family, true)
}

/// As [`random_model`]; with `learnable_knots` off the first cubic unit is fixed too.
pub fn random_model_with(seed: u64, family: Family, learnable_knots: bool) -> AdditiveModel {
    let mut r = rng(seed);
    let names = (0..5).map(|j| format!("x{j}")).collect();
    let mut m = AdditiveModel::new(family, names);
    let lam = |r: &mut Xoshiro256PlusPlus| r.random_range(0.0..1e-2);
    let k0 = r.random_range(4..8);
    let (knots0, lambda0) = (jittered_knots(&mut r, k0), lam(&mut r));
    let unit0 = if learnable_knots {
        FeatureUnit::cubic_learnable(0, knots0, lambda0)
    } else {
        FeatureUnit::cubic(0, knots0, lambda0)
    };
    m.add_unit(unit0.unwrap()).unwrap();
    let k1 = r.random_range(3..7);
    let mut sb = SilvermanBasis::from_knots(&jittered_knots(&mut r, k1));
    let bw: Vec<f64> = sb.bandwidths().iter().map(|s| s * r.random_range(0.7..1.5)).collect();
    sb = SilvermanBasis::new(sb.centers().to_vec(), bw).unwrap();
    m.add_unit(FeatureUnit::silverman(1, sb).unwrap()).unwrap();
    let k2 = r.random_range(3..6);
    let degree = r.random_range(1..4);
    m.add_unit(
        FeatureUnit::truncated(2, TruncatedPowerBasis::new(jittered_knots(&mut r, k2), degree).unwrap()).unwrap(),
    )
    .unwrap();
    m.add_unit(FeatureUnit::linear(3)).unwrap();
    let k4 = r.random_range(3..7);
    m.add_unit(FeatureUnit::cubic(4, jittered_knots(&mut r, k4), lam(&mut r)).unwrap())
        .unwrap();
    let (ka, kb) = (r.random_range(3..5), r.random_range(3..5));
    m.add_unit(FeatureUnit::tensor((0, 4), uniform_knots(ka), uniform_knots(kb), lam(&mut r)).unwrap())
        .unwrap();
    for u in 0..m.units().len() {
        let unit = m.unit_mut(u).unwrap();
        let d = unit.dim();
        let scale = if unit.kind() == UnitKind::Truncated { 0.2 } else { 0.6 };
        unit.set_coefficients((0..d).map(|_| r.random_range(-scale..scale)).collect())
            .unwrap();
        unit.centering_mut()
            .set_means((0..d).map(|_| r.random_range(-0.2..0.2)).collect())
            .unwrap();
    }
    m.set_intercept(r.random_range(-0.5..0.5));
    m
}

/// Targets drawn from the model's own mean on uniform inputs.
pub fn simulate(model: &AdditiveModel, n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let mut r = rng(seed);
    let x = uniform_features(&mut r, n, model.n_features());
    let y = (0..n)
        .map(|i| {
            let mu = model.predict_mu(x.row(i));
            match model.family() {
                Family::Gaussian => mu + 0.3 * r.random_range(-1.0..1.0),
                Family::BernoulliLogit => f64::from(r.random_bool(mu.clamp(0.0, 1.0))),
            }
        })
        .collect();
    (x, y)
}

pub fn normal(r: &mut impl Rng) -> f64 {
    snam_core::uncertainty::standard_normal(r)
}

/// Largest relative gap between analytic gradients and central differences.
pub fn worst_gradient_error(model: &AdditiveModel, x: &FeatureMatrix, y: &[f64], cfg: &FitConfig) -> f64 {
    let analytic = gradients(model, x, y, cfg).unwrap();
    let base = model.parameters();
    let mut worst = 0.0f64;
    for (i, &g) in analytic.iter().enumerate() {
        let h = 1e-5 * base[i].abs().max(1.0);
        let at = |delta: f64| {
            let mut m = model.clone();
            let mut p = base.clone();
            p[i] += delta;
            m.set_parameters(&p).unwrap();
            m.sort_knots().unwrap();
            total_loss(&m, x, y, cfg).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-3));
    }
    worst
}
