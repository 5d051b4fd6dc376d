use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::config::EffectKind;
use crate::anm_mm::CauseEffectDataset;
use crate::diffcore::Matrix;
use crate::envs::{self, cartpole_obs, pendulum_obs, EnvKind, EnvSpec};
use crate::error::{Error, Result};

/// A random state whose cause feature equals `cause`; the remaining features
/// are drawn uniformly over a typical operating range.
pub fn state_with_cause<R: Rng + ?Sized>(spec: &EnvSpec, cause: f64, rng: &mut R) -> Vec<f64> {
    match spec.kind {
        EnvKind::Ar | EnvKind::ArSparse => vec![cause],
        EnvKind::PendulumWind => pendulum_obs(rng.gen_range(-PI..PI), cause),
        EnvKind::CartpoleGravity => cartpole_obs(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-PI..PI),
            cause,
        ),
    }
}

/// `(cause, effect)` pairs from a uniform random policy started at states
/// whose cause feature is uniform over `interval`.
pub fn random_policy_rollout<R: Rng + ?Sized>(
    spec: &EnvSpec,
    count: usize,
    interval: [f64; 2],
    effect: EffectKind,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    let ci = spec.kind.cause_index();
    (0..count)
        .map(|_| {
            let c = rng.gen_range(interval[0]..interval[1]);
            let s = state_with_cause(spec, c, rng);
            let a = rng.gen_range(-spec.action_bound..=spec.action_bound);
            let (next, r) = envs::step(spec, &s, &[a], rng);
            let y = match effect {
                EffectKind::Reward => r,
                EffectKind::NextState => next[ci],
            };
            (s[ci], y)
        })
        .collect()
}

/// Builds the cause/effect matrices (agents × samples).
///
/// The cause is one uniform draw of `samples` points shared by all agents,
/// jittered per agent. Every agent rolls out `rollout_factor·samples`
/// transitions of the same random policy (one shared random stream), and
/// each cause point takes the effect of the transition whose cause feature is
/// nearest.
pub fn generate_cause_effect<R: Rng + ?Sized>(
    envs: &[EnvSpec],
    samples: usize,
    interval: [f64; 2],
    effect: EffectKind,
    rollout_factor: usize,
    jitter_sd: f64,
    rng: &mut R,
) -> Result<CauseEffectDataset> {
    if samples < 2 {
        return Err(Error::invalid("need at least 2 cause samples"));
    }
    if !(interval[0] < interval[1]) {
        return Err(Error::invalid(format!("degenerate interval {interval:?}")));
    }
    if envs.is_empty() || rollout_factor == 0 {
        return Err(Error::invalid("need at least one environment and rollout_factor >= 1"));
    }
    let base: Vec<f64> = (0..samples).map(|_| rng.gen_range(interval[0]..interval[1])).collect();
    let policy_seed: u64 = rng.gen();
    let jitter = Normal::new(0.0, jitter_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let n = envs.len();
    let mut x = Matrix::zeros(n, samples);
    let mut y = Matrix::zeros(n, samples);
    for (i, spec) in envs.iter().enumerate() {
        spec.validate()?;
        let mut policy_rng = ChaCha8Rng::seed_from_u64(policy_seed);
        let data = random_policy_rollout(spec, rollout_factor * samples, interval, effect, &mut policy_rng);
        for (p, &b) in base.iter().enumerate() {
            let xv = if jitter_sd > 0.0 { b + rng.sample(jitter) } else { b };
            x[(i, p)] = xv;
            y[(i, p)] = nearest_effect(&data, xv);
        }
    }
    CauseEffectDataset::new(x, y)
}

/// Effect of the pair whose cause is closest to `x`; lowest index on ties.
fn nearest_effect(data: &[(f64, f64)], x: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for &(c, e) in data {
        let d = (c - x).abs();
        if d < best.0 {
            best = (d, e);
        }
    }
    best.1
}
