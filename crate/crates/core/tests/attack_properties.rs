use cwt::attack::{attack, averaged_gradient, mifgsm_step, AttackConfig, AttackState, Plugin};
use cwt::nn::{Model, ModelSpec};
use cwt::{Rng, Scalar, Tensor};
use proptest::prelude::*;

fn model<T: Scalar>(seed: u64) -> Model<T> {
    let spec = ModelSpec::parse("input 2 10 10\nconv 4 3 1 1\nrelu\nmaxpool\nflatten\ndense 5").unwrap();
    Model::<f64>::init(spec, seed).unwrap().cast()
}

fn image<T: Scalar>(seed: u64) -> Tensor<T> {
    let mut r = Rng::new(seed);
    // include saturated pixels so the [0, 1] clamp is exercised
    Tensor::from_fn(&[2, 10, 10], |_| T::cast(r.uniform(-0.2, 1.2).unwrap().clamp(0.0, 1.0))).unwrap()
}

fn plugin(i: usize) -> Plugin {
    Plugin::from_name(Plugin::NAMES[i]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn budget_and_range_hold_after_every_iteration(which in 0usize..5, seed in any::<u64>(), eps in 1e-4f64..0.5, iters in 1usize..6, mu in 0.0f64..2.0) {
        let m = model::<f32>(seed);
        let p = plugin(which);
        let cfg = AttackConfig::new(eps, iters, mu, 3, seed);
        let x = image::<f32>(seed);
        let rng = Rng::new(seed);
        let mut state = AttackState::new(x.clone());
        for t in 0..iters {
            let g = averaged_gradient(&m, &state.adv, (seed % 5) as usize, &p, cfg.num_copies, &rng.split(t as u64)).unwrap();
            mifgsm_step(&mut state, &cfg, &g).unwrap();
            let linf = state.adv.sub(&x).unwrap().max_abs();
            prop_assert!(linf <= eps + 2f64.powi(-20), "iteration {t}: {linf} > {eps}");
            prop_assert!(state.adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn per_pixel_budget_grows_at_most_alpha_per_step(which in 0usize..5, seed in any::<u64>(), iters in 1usize..8) {
        let m = model::<f64>(seed);
        let p = plugin(which);
        let cfg = AttackConfig::new(0.1, iters, 1.0, 2, seed);
        let x = image::<f64>(seed);
        let rng = Rng::new(seed);
        let mut state = AttackState::new(x.clone());
        for t in 1..=iters {
            let g = averaged_gradient(&m, &state.adv, 0, &p, cfg.num_copies, &rng.split(t as u64)).unwrap();
            mifgsm_step(&mut state, &cfg, &g).unwrap();
            let bound = (t as f64 * cfg.alpha).min(cfg.eps);
            let worst = state.adv.sub(&x).unwrap().max_abs();
            prop_assert!(worst <= bound + 1e-12, "step {t}: {worst} > {bound}");
        }
    }

    #[test]
    fn attack_is_deterministic(which in 0usize..5, seed in any::<u64>()) {
        let m = model::<f32>(seed);
        let cfg = AttackConfig::new(0.05, 3, 1.0, 2, seed);
        let x = image::<f32>(seed);
        let a = attack(&m, &x, 1, &cfg, &plugin(which)).unwrap();
        let b = attack(&m, &x, 1, &cfg, &plugin(which)).unwrap();
        prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
