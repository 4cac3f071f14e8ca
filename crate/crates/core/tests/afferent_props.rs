use afferent_core::afferent::{decode_genome, encode_genome, AfferentArray, Genome};
use afferent_core::env::{self, Scenario, ScenarioConfig, FEATURES};
use afferent_core::policy::{Environment, ObsMode, RewardParams};
use afferent_core::predictive::{combine_cat, discrepancy, pred_signal, DiscrepancyParams};
use afferent_core::task::{AfferentTask, PredictiveConfig, TaskConfig};
use proptest::prelude::*;

fn genome(m: usize, k: usize) -> impl Strategy<Value = Genome> {
    prop::collection::vec(-3.0..3.0f64, Genome::len_for(m, k)).prop_map(move |raw| Genome::new(raw, m, k).unwrap())
}

fn inputs(k: usize, len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, k), 1..len)
}

fn permuted(array: &AfferentArray, perm: &[usize]) -> AfferentArray {
    let units = perm.iter().map(|&i| array.units()[i].clone()).collect();
    let v = perm.iter().map(|&i| array.weights()[i]).collect();
    AfferentArray::new(units, v, array.dt()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cat_is_bounded_by_activations(g in genome(5, 3), xs in inputs(3, 40), dt in 0.1..2.0f64) {
        let mut arr = decode_genome(&g, dt).unwrap();
        for x in &xs {
            let cat = arr.compute_cat(x).unwrap();
            let a = arr.activations();
            let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((0.0..=1.0).contains(&cat));
            prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(cat >= lo - 1e-12 && cat <= hi + 1e-12, "{lo} <= {cat} <= {hi}");
        }
    }

    #[test]
    fn cat_is_permutation_invariant(g in genome(4, 3), xs in inputs(3, 30), perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut a = decode_genome(&g, 1.0).unwrap();
        let mut b = permuted(&a, &perm);
        for x in &xs {
            let (ca, cb) = (a.compute_cat(x).unwrap(), b.compute_cat(x).unwrap());
            prop_assert!((ca - cb).abs() < 1e-12);
        }
    }

    #[test]
    fn genome_round_trip_on_constrained_parameters(g in genome(6, 3), dt in 0.1..2.0f64) {
        let arr = decode_genome(&g, dt).unwrap();
        let back = decode_genome(&encode_genome(&arr), dt).unwrap();
        for (u, w) in arr.units().iter().zip(back.units()) {
            for (a, b) in u.w.iter().zip(&w.w) {
                prop_assert!((a - b).abs() < 1e-6);
            }
            prop_assert!((u.alpha - w.alpha).abs() < 1e-6);
            prop_assert!((u.theta - w.theta).abs() < 1e-6);
            prop_assert!((u.tau - w.tau).abs() < 1e-6);
        }
        for (a, b) in arr.weights().iter().zip(back.weights()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn combine_is_convex(c_env in 0.0..1.0f64, c_pred in 0.0..1.0f64, le in 0.0..3.0f64, lp in 0.01..3.0f64) {
        let p = DiscrepancyParams::new(vec![1.0; 3], 10.0, 0.1, le, lp).unwrap();
        let c = combine_cat(c_env, c_pred, &p).unwrap();
        prop_assert!(c >= c_env.min(c_pred) - 1e-12 && c <= c_env.max(c_pred) + 1e-12);
    }

    #[test]
    fn discrepancy_scales_linearly(
        a in prop::collection::vec(0.0..1.0f64, 3),
        b in prop::collection::vec(0.0..1.0f64, 3),
        w in prop::collection::vec(0.0..2.0f64, 3),
        s in 0.0..10.0f64,
    ) {
        let p = DiscrepancyParams::new(w.clone(), 10.0, 0.1, 1.0, 1.0).unwrap();
        let ps = DiscrepancyParams::new(w.iter().map(|w| w * s).collect(), 10.0, 0.1, 1.0, 1.0).unwrap();
        let d = discrepancy(&a, &b, &p).unwrap();
        let ds = discrepancy(&a, &b, &ps).unwrap();
        prop_assert!((ds - s * d).abs() <= 1e-12 * (1.0 + ds.abs()));
    }

    #[test]
    fn pred_signal_is_increasing(d in 0.0..0.3f64, step in 1e-4..0.3f64, kappa in 0.5..20.0f64) {
        let p = DiscrepancyParams::new(vec![1.0; 3], kappa, 0.1, 1.0, 1.0).unwrap();
        prop_assert!(pred_signal(d + step, &p) > pred_signal(d, &p));
    }

    #[test]
    fn features_stay_in_unit_interval(
        si in 0usize..3,
        age in 20.0..90.0f64,
        seed in any::<u64>(),
        actions in prop::collection::vec(-0.5..1.5f64, 1..100),
    ) {
        let cfg = ScenarioConfig::preset(Scenario::ALL[si]);
        let mut s = env::reset(&cfg, age, seed).unwrap();
        for a in actions {
            let (next, r) = env::step(&s, a, &cfg, 1000);
            prop_assert!(r.x_next.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!(r.delta_d >= 0.0);
            s = next;
        }
    }
}

fn bare_task(age: f64, predictive: bool) -> AfferentTask {
    let cfg = TaskConfig {
        scenario: ScenarioConfig::preset(Scenario::Normal),
        age,
        episode_len: 200,
        obs_mode: ObsMode::Base,
        reward: RewardParams::default(),
        memory: None,
    };
    let pcfg = PredictiveConfig::default();
    let channel = predictive.then(|| afferent_core::task::fit_predictive(&pcfg, 200).unwrap().unwrap());
    let array = afferent_core::afferent::hand_designed_array(8, FEATURES, 1.0).unwrap();
    AfferentTask::new(cfg, array, channel).unwrap()
}

#[test]
fn disabled_predictive_matches_envelope_cat_exactly() {
    let mut task = bare_task(60.0, false);
    let mut array = afferent_core::afferent::hand_designed_array(8, FEATURES, 1.0).unwrap();
    task.set_seed(5);
    task.reset().unwrap();
    array.compute_cat(&task.state().unwrap().x).unwrap();
    for t in 0..200 {
        let a = 0.5 + 0.5 * (t as f64 * 0.37).sin();
        let step = task.step(a).unwrap();
        let cat = array.compute_cat(&task.state().unwrap().x).unwrap();
        assert_eq!(step.info.cat.to_bits(), cat.to_bits(), "step {t}");
    }
}

#[test]
fn mean_cat_grows_with_age_for_fixed_actions() {
    let actions: Vec<f64> = (0..200).map(|t| 0.4 + 0.5 * ((t as f64) * 0.11).sin().abs()).collect();
    let mean_cat = |age: f64| {
        let mut task = bare_task(age, true);
        task.set_seed(3);
        task.reset().unwrap();
        actions.iter().map(|&a| task.step(a).unwrap().info.cat).sum::<f64>() / actions.len() as f64
    };
    let (young, old) = (mean_cat(20.0), mean_cat(80.0));
    assert!(old >= young, "age 80 {old} < age 20 {young}");
}

#[test]
fn identical_inputs_give_identical_trajectories() {
    let run = || {
        let mut task = bare_task(40.0, true);
        task.set_seed(11);
        task.reset().unwrap();
        (0..150).map(|t| task.step((t % 7) as f64 / 7.0).unwrap().obs).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
