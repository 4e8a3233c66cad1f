use nalgebra::DMatrix;
use proptest::prelude::*;

use mesde::model::{ModelSpec, PanelData};
use mesde::stage1::{fit_stage1, h11, profile_taus, Stage1Options};
use mesde::stage2::{h2, mu0_explicit, SufficientPair};
use mesde::{simulate_panel, ParamSet, SimConfig, TauFamily};

fn atan_model(k: f64) -> ModelSpec {
    ModelSpec::builder("atan")
        .random_basis(1, |_, out| out[0] = 1.0)
        .diffusion(1, move |_, y, eta| k * (eta[0] * y.atan()).exp())
        .build()
        .unwrap()
}

fn panel_strategy() -> impl Strategy<Value = PanelData> {
    (1usize..5, 2usize..12).prop_flat_map(|(rows, steps)| {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, steps + 1), rows)
            .prop_map(|r| PanelData::from_rows(r, 0.05).unwrap())
    })
}

fn pair_strategy(p: usize) -> impl Strategy<Value = SufficientPair> {
    (prop::collection::vec(-1.0f64..1.0, p * p), prop::collection::vec(-3.0f64..3.0, p)).prop_map(move |(a, v)| {
        let a = DMatrix::from_vec(p, p, a);
        SufficientPair::new(&a * a.transpose() + DMatrix::identity(p, p) * 0.3, v).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn h11_ignores_constant_diffusion_scale(panel in panel_strategy(), k in 0.05f64..50.0, eta in -1.0f64..1.0) {
        let a = h11(&panel, &atan_model(1.0), &[eta], false);
        let b = h11(&panel, &atan_model(k), &[eta], false);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn profiled_tau_scales_inversely_with_s(panel in panel_strategy(), k in 0.1f64..10.0) {
        if let (Ok(a), Ok(b)) = (profile_taus(&panel, &atan_model(1.0), &[0.3], false), profile_taus(&panel, &atan_model(k), &[0.3], false)) {
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y * k * k).abs() < 1e-10 * x.abs());
            }
        }
    }

    #[test]
    fn h2_is_order_free(pairs in prop::collection::vec(pair_strategy(2), 2..12), rot in 0usize..12) {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.4]);
        let mu = [0.3, -0.2];
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        prop_assert_eq!(h2(&pairs, &mu, &sigma).unwrap().to_bits(), h2(&shuffled, &mu, &sigma).unwrap().to_bits());
    }

    #[test]
    fn mu0_of_identical_pairs_is_their_solution(pair in pair_strategy(2), copies in 1usize..6) {
        let pairs = vec![pair.clone(); copies];
        let mu = mu0_explicit(&pairs).unwrap();
        for k in 0..2 {
            prop_assert!((mu[k] - pair.b_hat[k]).abs() < 1e-9 * pair.b_hat[k].abs().max(1.0));
        }
    }
}

#[test]
fn known_diffusion_profiles_tau_directly() {
    let model = ModelSpec::builder("brownian-drift")
        .random_basis(1, |_, out| out[0] = 1.0)
        .diffusion(0, |_, _, _| 1.0)
        .tau_family(TauFamily::Exponential)
        .build()
        .unwrap();
    let truth = ParamSet::new(vec![], vec![1.0], vec![0.5], DMatrix::from_element(1, 1, 0.2)).unwrap();
    let (panel, effects) = simulate_panel(&model, &truth, &SimConfig::new(100, 2.0, 400, 0.005, 9), false).unwrap();
    let est = fit_stage1(&panel, &model, &Stage1Options::default()).unwrap();
    assert!(est.known_diffusion);
    assert!(est.eta_optim.is_none() && est.eta_hat.is_empty());
    let direct = profile_taus(&panel, &model, &[], false).unwrap();
    assert_eq!(est.tau_hat, direct);
    let err: f64 = effects.iter().zip(&direct).map(|(e, t)| (t / e.tau - 1.0).abs()).sum::<f64>() / 100.0;
    assert!(err < 0.1, "mean relative error {err}");
}
