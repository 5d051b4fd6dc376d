use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{ReplayBuffer, TransitionTuple};
use super::ddpg::{ddpg_update, select_action, DdpgAgent, DdpgConfig};
use super::noise::{anneal, sample_episode_means, OuNoise};
use super::sharing::{build_minibatch, SchemeKind, ShareScheme};
use crate::envs::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// One epoch is one episode per agent.
    pub epochs: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Initial σ₁ (episode-mean scale) as a fraction of the action bound.
    pub sigma1: f64,
    /// Initial σ₂ (OU scale) as a fraction of the action bound.
    pub sigma2: f64,
    /// Per-step multiplicative decay of both scales.
    pub decay: f64,
    pub ou_theta: f64,
    /// Draw per-episode OU means; when false every mean is zero.
    pub coordinated: bool,
    /// Skipped updates tolerated per agent before training aborts.
    pub divergence_tolerance: usize,
    /// Epochs whose per-agent state trajectories are kept in the log.
    pub trajectory_epochs: Vec<usize>,
    pub ddpg: DdpgConfig,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 192,
            buffer_capacity: 100_000,
            sigma1: 0.6,
            sigma2: 0.3,
            decay: 0.999,
            ou_theta: 0.15,
            coordinated: true,
            divergence_tolerance: 100,
            trajectory_epochs: Vec::new(),
            ddpg: DdpgConfig::default(),
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("batch_size and buffer_capacity must be positive".into()));
        }
        if !(self.sigma1 >= 0.0 && self.sigma2 >= 0.0) {
            return Err(Error::Config("sigma1 and sigma2 must be non-negative".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.ou_theta >= 0.0) {
            return Err(Error::Config("ou_theta must be non-negative".into()));
        }
        self.ddpg.validate()
    }
}

/// Per-agent state for concurrent training. Every random draw an agent makes
/// comes from its own stream.
#[derive(Debug, Clone)]
pub struct AgentSlot {
    pub agent: DdpgAgent,
    pub env: Env,
    pub rng: ChaCha8Rng,
    noise: Vec<OuNoise>,
}

impl AgentSlot {
    pub fn new(spec: EnvSpec, ddpg: &DdpgConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = DdpgAgent::new(spec.state_dim(), spec.action_dim(), spec.action_bound, ddpg, &mut rng)?;
        let env = Env::new(spec, &mut rng)?;
        let noise = vec![OuNoise::new(0.0, 0.0, 0.0, spec.dt); spec.action_dim()];
        Ok(AgentSlot { agent, env, rng, noise })
    }
}

/// Seed of agent `n`'s private stream.
pub fn agent_seed(seed: u64, n: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (n as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn make_slots(envs: &[EnvSpec], ddpg: &DdpgConfig, seed: u64) -> Result<Vec<AgentSlot>> {
    envs.iter()
        .enumerate()
        .map(|(n, spec)| AgentSlot::new(*spec, ddpg, agent_seed(seed, n)))
        .collect()
}

/// First state feature of every agent over one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrajectories {
    pub epoch: usize,
    /// `states[n][t]`.
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub scheme: SchemeKind,
    /// `returns[epoch][agent]`: undiscounted episode return.
    pub returns: Vec<Vec<f64>>,
    pub divergences: Vec<usize>,
    /// Applied DDPG updates over all agents.
    pub updates: usize,
    /// Quota entries moved to an agent's own buffer because the source was empty.
    pub reallocated: usize,
    pub trajectories: Vec<EpochTrajectories>,
}

impl TrainingLog {
    pub fn epochs(&self) -> usize {
        self.returns.len()
    }

    /// Mean over agents, per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        self.returns
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64)
            .collect()
    }

    /// Mean return over the last `ceil(fraction·epochs)` epochs and all agents.
    pub fn final_mean(&self, fraction: f64) -> f64 {
        let means = self.epoch_means();
        if means.is_empty() {
            return f64::NAN;
        }
        let k = ((fraction * means.len() as f64).ceil() as usize).clamp(1, means.len());
        means[means.len() - k..].iter().sum::<f64>() / k as f64
    }

    /// Per-agent mean over the last `ceil(fraction·epochs)` epochs.
    pub fn final_agent_means(&self, fraction: f64) -> Vec<f64> {
        let e = self.returns.len();
        if e == 0 {
            return Vec::new();
        }
        let k = ((fraction * e as f64).ceil() as usize).clamp(1, e);
        let n = self.returns[0].len();
        (0..n)
            .map(|a| self.returns[e - k..].iter().map(|r| r[a]).sum::<f64>() / k as f64)
            .collect()
    }
}

struct StepResult {
    reward: f64,
    first_state: f64,
}

/// Concurrent training: every agent acts once per step and caches the
/// transition in its own buffer; the noise scales are annealed; then every
/// agent whose buffer holds at least a batch builds a minibatch under `scheme`
/// and takes one DDPG update.
pub fn train_concurrent(slots: &mut [AgentSlot], scheme: &ShareScheme, config: &TrainConfig) -> Result<TrainingLog> {
    config.validate()?;
    let n_agents = slots.len();
    let mut log = TrainingLog {
        scheme: scheme.kind(),
        returns: Vec::with_capacity(config.epochs),
        divergences: vec![0; n_agents],
        updates: 0,
        reallocated: 0,
        trajectories: Vec::new(),
    };
    if config.epochs == 0 || n_agents == 0 {
        return Ok(log);
    }
    if let Some(k) = scheme.agents() {
        if k != n_agents {
            return Err(Error::shape("train_concurrent scheme", k, n_agents));
        }
    }
    if let ShareScheme::Similarity(alloc) = scheme {
        if alloc.batch != config.batch_size {
            return Err(Error::Config(format!(
                "similarity allocation was built for batch {} but batch_size is {}",
                alloc.batch, config.batch_size
            )));
        }
    }
    let horizon = slots[0].env.spec.horizon;
    if slots.iter().any(|s| s.env.spec.horizon != horizon) {
        return Err(Error::invalid("all environments must share one horizon"));
    }
    let mut buffers = slots
        .iter()
        .map(|s| ReplayBuffer::new(config.buffer_capacity, s.env.spec.state_dim(), s.env.spec.action_dim()))
        .collect::<Result<Vec<_>>>()?;
    let start_divergences: Vec<usize> = slots.iter().map(|s| s.agent.divergences).collect();
    let mode = config.execution;
    let (mut sigma1, mut sigma2) = (if config.coordinated { config.sigma1 } else { 0.0 }, config.sigma2);

    for epoch in 0..config.epochs {
        let sigma1_now = sigma1;
        par::for_each_mut(mode, slots, |_, slot| {
            let bound = slot.env.spec.action_bound;
            for ou in slot.noise.iter_mut() {
                let mu = sample_episode_means(1, sigma1_now * bound, &mut slot.rng)[0];
                ou.reset(mu);
                ou.theta_rate = config.ou_theta;
                ou.dt = slot.env.spec.dt;
            }
            slot.env.reset(&mut slot.rng);
        });
        let record = config.trajectory_epochs.contains(&epoch);
        let mut returns = vec![0.0; n_agents];
        let mut states = vec![Vec::with_capacity(if record { horizon } else { 0 }); n_agents];

        for _ in 0..horizon {
            let mut pairs: Vec<(&mut AgentSlot, &mut ReplayBuffer)> = slots.iter_mut().zip(buffers.iter_mut()).collect();
            let sigma2_now = sigma2;
            let results = par::map_mut(mode, &mut pairs, |_, (slot, buffer)| -> Result<StepResult> {
                let bound = slot.env.spec.action_bound;
                for ou in slot.noise.iter_mut() {
                    ou.sigma = sigma2_now * bound;
                }
                let state = slot.env.state().to_vec();
                let action = select_action(&slot.agent, &state, &mut slot.noise, &mut slot.rng)?;
                let outcome = slot.env.step(&action, &mut slot.rng);
                buffer.push(&TransitionTuple {
                    state: state.clone(),
                    action,
                    reward: outcome.reward,
                    next_state: outcome.next_state,
                    terminal: false,
                })?;
                Ok(StepResult {
                    reward: outcome.reward,
                    first_state: state[0],
                })
            });
            drop(pairs);
            for (n, r) in results.into_iter().enumerate() {
                let r = r?;
                returns[n] += r.reward;
                if record {
                    states[n].push(r.first_state);
                }
            }

            (sigma1, sigma2) = anneal(sigma1, sigma2, config.decay);

            let buffers_ref = &buffers;
            let outcomes = par::map_mut(mode, slots, |n, slot| -> Result<(bool, usize)> {
                if buffers_ref[n].len() < config.batch_size {
                    return Ok((false, 0));
                }
                let mb = build_minibatch(buffers_ref, scheme, n, config.batch_size, &mut slot.rng)?;
                let stats = ddpg_update(&mut slot.agent, &mb.batch)?;
                Ok((stats.applied, mb.reallocated))
            });
            for o in outcomes {
                let (applied, reallocated) = o?;
                log.updates += applied as usize;
                log.reallocated += reallocated;
            }
        }

        log.returns.push(returns);
        if record {
            log.trajectories.push(EpochTrajectories { epoch, states });
        }
        for (n, slot) in slots.iter().enumerate() {
            log.divergences[n] = slot.agent.divergences - start_divergences[n];
            if log.divergences[n] > config.divergence_tolerance {
                return Err(Error::TrainingDiverged {
                    count: log.divergences[n],
                    tolerance: config.divergence_tolerance,
                });
            }
        }
        log::debug!(
            "{} epoch {epoch}: mean return {:.4}",
            scheme.kind(),
            log.returns[epoch].iter().sum::<f64>() / n_agents as f64
        );
    }
    if log.reallocated > 0 {
        log::warn!("{} minibatch quota entries drawn from the own buffer instead of an empty source", log.reallocated);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            ddpg: DdpgConfig {
                actor_hidden: vec![8],
                critic_hidden: vec![8],
                ..DdpgConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn ar_specs(targets: &[f64]) -> Vec<EnvSpec> {
        targets
            .iter()
            .map(|&t| EnvSpec {
                target: t,
                horizon: 20,
                ..EnvSpec::default_for(EnvKind::Ar)
            })
            .collect()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let specs = ar_specs(&[1.0, -1.0]);
        let mut slots = make_slots(&specs, &tiny_config(0).ddpg, 3).unwrap();
        let before: Vec<_> = slots.iter().map(|s| s.agent.actor.clone()).collect();
        let log = train_concurrent(&mut slots, &ShareScheme::Global, &tiny_config(0)).unwrap();
        assert_eq!(log.epochs(), 0);
        assert!(slots.iter().zip(&before).all(|(s, b)| &s.agent.actor == b));
    }

    #[test]
    fn none_scheme_isolates_agents() {
        let specs = ar_specs(&[2.0, -1.0, 0.5]);
        let cfg = tiny_config(4);
        let mut together = make_slots(&specs, &cfg.ddpg, 11).unwrap();
        let joint = train_concurrent(&mut together, &ShareScheme::None, &cfg).unwrap();
        for (n, spec) in specs.iter().enumerate() {
            let mut alone = vec![AgentSlot::new(*spec, &cfg.ddpg, agent_seed(11, n)).unwrap()];
            let solo = train_concurrent(&mut alone, &ShareScheme::None, &cfg).unwrap();
            for e in 0..cfg.epochs {
                assert_eq!(solo.returns[e][0], joint.returns[e][n]);
            }
            assert_eq!(alone[0].agent.actor, together[n].agent.actor);
        }
        assert!(joint.updates > 0);
    }

    #[test]
    fn bit_reproducible_and_mode_independent() {
        let specs = ar_specs(&[2.0, -1.0, 0.5, 3.0]);
        let mut cfg = tiny_config(3);
        cfg.trajectory_epochs = vec![0, 2];
        let run = |cfg: &TrainConfig| {
            let mut slots = make_slots(&specs, &cfg.ddpg, 5).unwrap();
            train_concurrent(&mut slots, &ShareScheme::Global, cfg).unwrap()
        };
        let a = run(&cfg);
        assert_eq!(a, run(&cfg));
        cfg.execution = Execution::Sequential;
        assert_eq!(a, run(&cfg));
        assert_eq!(a.trajectories.len(), 2);
        assert_eq!(a.trajectories[1].states[3].len(), 20);
    }

    #[test]
    fn uncoordinated_means_are_zero() {
        let specs = ar_specs(&[0.0]);
        let mut cfg = tiny_config(1);
        cfg.coordinated = false;
        cfg.sigma2 = 0.0;
        let mut slots = make_slots(&specs, &cfg.ddpg, 1).unwrap();
        train_concurrent(&mut slots, &ShareScheme::None, &cfg).unwrap();
        assert!(slots[0].noise.iter().all(|ou| ou.mu == 0.0 && ou.current == 0.0));
    }

    #[test]
    fn mismatched_scheme_rejected() {
        let specs = ar_specs(&[0.0, 1.0]);
        let cfg = tiny_config(1);
        let mut slots = make_slots(&specs, &cfg.ddpg, 1).unwrap();
        let scheme = ShareScheme::SeedSampling { offsets: vec![0.0; 3] };
        assert!(train_concurrent(&mut slots, &scheme, &cfg).is_err());
    }

    #[test]
    fn final_mean_window() {
        let log = TrainingLog {
            scheme: SchemeKind::None,
            returns: (0..10).map(|e| vec![e as f64, e as f64 + 2.0]).collect(),
            divergences: vec![0, 0],
            updates: 0,
            reallocated: 0,
            trajectories: Vec::new(),
        };
        assert_eq!(log.final_mean(0.1), 10.0);
        assert_eq!(log.final_mean(0.2), 9.5);
        assert_eq!(log.final_agent_means(0.2), vec![8.5, 10.5]);
    }
}
