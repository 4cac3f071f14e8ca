//! Generalized advantage estimation.

/// Raw advantages and returns. `values` has one more entry than `rewards`:
/// the bootstrap value of the state after the last step. `dones[t]` marks
/// that step `t` ended an episode, which cuts both bootstrapping and the
/// advantage recursion.
pub fn gae_raw(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n + 1, "values must include the bootstrap value");
    assert_eq!(dones.len(), n);
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let td = rewards[t] + gamma * values[t + 1] * live - values[t];
        running = td + gamma * lam * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Advantages normalized to zero mean and unit deviation, plus returns.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let (mut adv, returns) = gae_raw(rewards, values, dones, gamma, lam);
    normalize(&mut adv);
    (adv, returns)
}

pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}
