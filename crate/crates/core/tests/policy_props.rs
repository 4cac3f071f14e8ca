use afferent_core::policy::gae::gae_raw;
use afferent_core::policy::net::{LOG_STD_MAX, LOG_STD_MIN};
use afferent_core::policy::PolicyParams;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Direct sum over the remaining trajectory for every step.
fn gae_oracle(r: &[f64], v: &[f64], done: &[bool], gamma: f64, lam: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n).map(|t| r[t] + if done[t] { 0.0 } else { gamma * v[t + 1] } - v[t]).collect();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut coef = 1.0;
            for l in t..n {
                acc += coef * delta[l];
                if done[l] {
                    break;
                }
                coef *= gamma * lam;
            }
            acc
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gae_matches_direct_sum(
        steps in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, prop::bool::weighted(0.1)), 20),
        last_v in -1.0..1.0f64,
        gamma in 0.5..1.0f64,
        lam in 0.0..1.0f64,
    ) {
        let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let mut v: Vec<f64> = steps.iter().map(|s| s.1).collect();
        v.push(last_v);
        let done: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = gae_raw(&r, &v, &done, gamma, lam);
        let want = gae_oracle(&r, &v, &done, gamma, lam);
        for t in 0..20 {
            prop_assert!((adv[t] - want[t]).abs() < 1e-10);
            prop_assert!((ret[t] - (want[t] + v[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn log_std_stays_clamped(log_std in -50.0..50.0f64) {
        let mut p = PolicyParams::new(3, &[4], 0.0, 1).unwrap();
        let mut flat = p.params();
        flat[p.num_actor_params()] = log_std;
        p.set_params(&flat);
        prop_assert!((LOG_STD_MIN..=LOG_STD_MAX).contains(&p.log_std));
    }
}

#[test]
fn sampled_actions_follow_squashed_gaussian() {
    let mut policy = PolicyParams::new(2, &[8], -0.5, 4).unwrap();
    let obs = [0.3, -0.2];
    let mut flat = policy.params();
    // shift the actor output bias so the mean is away from zero
    flat[policy.num_actor_params() - 1] = 0.4;
    policy.set_params(&flat);
    let mean = policy.mean(&obs);
    let dist = Normal::new(mean, policy.log_std.exp()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut actions: Vec<f64> = (0..n).map(|_| policy.sample_action(&obs, &mut rng).action).collect();
    actions.sort_by(f64::total_cmp);
    let cdf = |a: f64| dist.cdf((2.0 * a - 1.0).clamp(-1.0, 1.0).atanh());
    let ks = actions
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let f = cdf(a);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS distance {ks}");
}
