mod common;

use common::{random_model, rng, simulate, uniform_features, uniform_knots};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use snam_core::model::{AdditiveModel, Family, FeatureUnit, UnitKind};
use snam_core::training::{fit, FitConfig};

fn family(b: bool) -> Family {
    if b {
        Family::BernoulliLogit
    } else {
        Family::Gaussian
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        rng_seed: RngSeed::Fixed(21),
        failure_persistence: None,
        ..ProptestConfig::with_cases(50)
    })]

    #[test]
    fn eta_is_intercept_plus_contributions(seed in any::<u64>(), bern in any::<bool>()) {
        let m = random_model(seed, family(bern));
        let x = uniform_features(&mut rng(seed ^ 1), 20, 5);
        for i in 0..x.n_rows() {
            let row = x.row(i);
            let sum = m.intercept() + m.units().iter().map(|u| u.forward(row).0).sum::<f64>();
            prop_assert_eq!(m.predict_eta(row), sum);
            prop_assert_eq!(m.predict_eta(row).to_bits(), m.predict_eta(row).to_bits());
        }
    }

    #[test]
    fn constant_shift_is_absorbed_by_intercept(seed in any::<u64>(), c in -2.0..2.0f64) {
        let m = random_model(seed, Family::Gaussian);
        let cubic = m.units().iter().position(|u| u.kind() == UnitKind::Cubic).unwrap();
        let mut shifted = m.clone();
        let unit = shifted.unit_mut(cubic).unwrap();
        let beta: Vec<f64> = unit.coefficients().iter().map(|b| b + c).collect();
        let offset = c * (1.0 - unit.centering().means().iter().sum::<f64>());
        unit.set_coefficients(beta).unwrap();
        // the shift moves every contribution by the same constant, inside and outside the knots
        let x = uniform_features(&mut rng(seed ^ 2), 30, 5);
        for i in 0..x.n_rows() {
            let row = x.row(i);
            let before = m.unit(cubic).unwrap().contribution(row);
            let after = shifted.unit(cubic).unwrap().contribution(row);
            prop_assert!((after - before - offset).abs() < 1e-10);
        }
        shifted.set_intercept(m.intercept() - offset);
        for i in 0..x.n_rows() {
            let mut row = x.row(i).to_vec();
            row[0] *= 1.5;
            prop_assert!((shifted.predict_eta(&row) - m.predict_eta(&row)).abs() < 1e-10);
        }
    }

    #[test]
    fn separable_tensor_is_product_of_curves(
        a in prop::collection::vec(-1.0..1.0f64, 4),
        b in prop::collection::vec(-1.0..1.0f64, 5),
    ) {
        let mut m = AdditiveModel::new(Family::Gaussian, vec!["u".into(), "v".into()]);
        m.add_unit(FeatureUnit::cubic(0, uniform_knots(4), 0.0).unwrap()).unwrap();
        m.add_unit(FeatureUnit::cubic(1, uniform_knots(5), 0.0).unwrap()).unwrap();
        m.add_unit(FeatureUnit::tensor((0, 1), uniform_knots(4), uniform_knots(5), 0.0).unwrap()).unwrap();
        m.unit_mut(0).unwrap().set_coefficients(a.clone()).unwrap();
        m.unit_mut(1).unwrap().set_coefficients(b.clone()).unwrap();
        let outer: Vec<f64> = a.iter().flat_map(|ai| b.iter().map(move |bj| ai * bj)).collect();
        m.unit_mut(2).unwrap().set_coefficients(outer).unwrap();
        let grid: Vec<f64> = (0..=12).map(|i| -1.2 + 0.2 * i as f64).collect();
        let fa = m.shape_curve(0, &grid).unwrap();
        let fb = m.shape_curve(1, &grid).unwrap();
        let surface = m.shape_surface(2, &grid, &grid).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                prop_assert!((surface[(i, j)] - fa[i] * fb[j]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn fitted_units_sum_to_zero_on_training_rows() {
    for (seed, fam) in [(3u64, Family::Gaussian), (4, Family::BernoulliLogit)] {
        let truth = random_model(seed, fam);
        let (x, y) = simulate(&truth, 400, seed + 100);
        let mut start = truth.clone();
        let mut params = start.parameters();
        for r in snam_core::training::parameter_ranges(&start) {
            params[r].iter_mut().for_each(|v| *v = 0.0);
        }
        start.set_parameters(&params).unwrap();
        let cfg = FitConfig {
            learning_rate: 1e-2,
            batch_size: 64,
            max_epochs: 20,
            seed,
            ..FitConfig::default()
        };
        let res = fit(start, &x, &y, None, &cfg).unwrap();
        assert!(res.model.is_frozen());
        let n = x.n_rows() as f64;
        for u in res.model.units() {
            let total: f64 = (0..x.n_rows()).map(|i| u.contribution(x.row(i))).sum();
            assert!(total.abs() <= 1e-6 * n, "{} unit sums to {total}", u.kind());
        }
    }
}
