use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::Batch;
use super::noise::OuNoise;
use crate::diffcore::{Activation, AdamState, FeedForwardNet, Matrix};
use crate::error::{Error, Result};

/// Final-layer initialization range for actor and critic.
pub const FINAL_LAYER_INIT: f64 = 3e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Rewards are multiplied by this before entering the critic target.
    pub reward_multiplier: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            actor_hidden: vec![256, 128],
            critic_hidden: vec![256, 256, 128],
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            reward_multiplier: 1.0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.reward_multiplier > 0.0 && self.reward_multiplier.is_finite()) {
            return Err(Error::Config("reward_multiplier must be positive".into()));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Actor-critic agent with target networks.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: FeedForwardNet,
    pub critic: FeedForwardNet,
    pub actor_target: FeedForwardNet,
    pub critic_target: FeedForwardNet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub reward_multiplier: f64,
    pub action_bound: f64,
    /// Updates skipped because of non-finite values.
    pub divergences: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
    /// False when the update was skipped.
    pub applied: bool,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        action_bound: f64,
        config: &DdpgConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if !(action_bound > 0.0) {
            return Err(Error::invalid("action_bound must be positive"));
        }
        let mut actor = FeedForwardNet::mlp(
            state_dim,
            &config.actor_hidden,
            action_dim,
            Activation::Relu,
            Activation::Tanh,
        )?;
        let mut critic = FeedForwardNet::mlp(
            state_dim + action_dim,
            &config.critic_hidden,
            1,
            Activation::Relu,
            Activation::Linear,
        )?;
        actor.init_fan_in(rng, Some(FINAL_LAYER_INIT));
        critic.init_fan_in(rng, Some(FINAL_LAYER_INIT));
        Ok(Self::from_nets(actor, critic, action_bound, config))
    }

    /// Wraps existing networks; targets start as copies.
    pub fn from_nets(actor: FeedForwardNet, critic: FeedForwardNet, action_bound: f64, config: &DdpgConfig) -> Self {
        DdpgAgent {
            actor_opt: AdamState::new(actor.param_count()),
            critic_opt: AdamState::new(critic.param_count()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            gamma: config.gamma,
            tau: config.tau,
            actor_lr: config.actor_lr,
            critic_lr: config.critic_lr,
            reward_multiplier: config.reward_multiplier,
            action_bound,
            divergences: 0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Deterministic policy `bound·tanh(·)` for a batch of states.
    pub fn act_batch(&self, states: &Matrix) -> Result<Matrix> {
        Ok(self.actor.forward(states)?.scale(self.action_bound))
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let s = Matrix::from_vec(1, state.len(), state.to_vec())?;
        Ok(self.act_batch(&s)?.into_vec())
    }

    /// Critic targets `y = m·r + γ(1 − terminal)·Q'(s', μ'(s'))`.
    pub fn critic_targets(&self, batch: &Batch) -> Result<Vec<f64>> {
        let next_actions = self.actor_target.forward(&batch.next_states)?.scale(self.action_bound);
        let q_next = self.critic_target.forward(&batch.next_states.hcat(&next_actions)?)?;
        Ok((0..batch.len())
            .map(|i| {
                let boot = if batch.terminals[i] { 0.0 } else { self.gamma * q_next[(i, 0)] };
                self.reward_multiplier * batch.rewards[i] + boot
            })
            .collect())
    }

    /// Mean squared TD error and its gradient with respect to the critic
    /// parameters, for fixed targets `y`.
    pub fn critic_loss_grad(&self, batch: &Batch, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        critic_loss_grad_with(&self.critic, batch, targets)
    }

    /// `mean Q(s, μ(s))` and the gradient of its negation with respect to the
    /// actor parameters.
    pub fn actor_objective_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        actor_objective_grad_with(&self.actor, &self.critic, self.action_bound, batch)
    }
}

pub fn critic_loss_grad_with(critic: &FeedForwardNet, batch: &Batch, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if targets.len() != n {
        return Err(Error::shape("critic_loss_grad", n, targets.len()));
    }
    let input = batch.states.hcat(&batch.actions)?;
    let trace = critic.forward_trace(&input)?;
    let q = trace.output();
    let mut loss = 0.0;
    let mut g = Matrix::zeros(n, 1);
    for i in 0..n {
        let d = q[(i, 0)] - targets[i];
        loss += d * d;
        g[(i, 0)] = 2.0 * d / n as f64;
    }
    let (grad, _) = critic.backward(&trace, &g)?;
    Ok((loss / n as f64, grad))
}

pub fn actor_objective_grad_with(
    actor: &FeedForwardNet,
    critic: &FeedForwardNet,
    action_bound: f64,
    batch: &Batch,
) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let sd = batch.states.cols();
    let actor_trace = actor.forward_trace(&batch.states)?;
    let actions = actor_trace.output().scale(action_bound);
    let critic_trace = critic.forward_trace(&batch.states.hcat(&actions)?)?;
    let objective = critic_trace.output().sum() / n as f64;
    let (_, input_grad) = critic.backward(&critic_trace, &Matrix::filled(n, 1, -1.0 / n as f64))?;
    let action_grad = input_grad.col_range(sd, input_grad.cols()).scale(action_bound);
    let (grad, _) = actor.backward(&actor_trace, &action_grad)?;
    Ok((objective, grad))
}

/// `clip(μ(s) + ε, ±bound)` with one OU process per action dimension.
pub fn select_action<R: Rng + ?Sized>(
    agent: &DdpgAgent,
    state: &[f64],
    noise: &mut [OuNoise],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if state.len() != agent.state_dim() {
        return Err(Error::shape("select_action", agent.state_dim(), state.len()));
    }
    if noise.len() != agent.action_dim() {
        return Err(Error::shape("select_action noise", agent.action_dim(), noise.len()));
    }
    let mut a = agent.act(state)?;
    for (v, ou) in a.iter_mut().zip(noise.iter_mut()) {
        *v = (*v + ou.sample(rng)).clamp(-agent.action_bound, agent.action_bound);
    }
    Ok(a)
}

/// One critic step, one actor step (against the updated critic), then soft
/// target updates. Non-finite losses or gradients skip the whole update.
pub fn ddpg_update(agent: &mut DdpgAgent, batch: &Batch) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let targets = agent.critic_targets(batch)?;
    let (critic_loss, critic_grad) = agent.critic_loss_grad(batch, &targets)?;
    let skip = |agent: &mut DdpgAgent, critic_loss, actor_objective| {
        agent.divergences += 1;
        log::debug!("skipping non-finite update (critic loss {critic_loss})");
        Ok(UpdateStats {
            critic_loss,
            actor_objective,
            applied: false,
        })
    };
    if !critic_loss.is_finite() || critic_grad.iter().any(|g| !g.is_finite()) {
        return skip(agent, critic_loss, f64::NAN);
    }
    let mut new_critic = agent.critic.params().to_vec();
    let mut critic_opt = agent.critic_opt.clone();
    critic_opt.step(&mut new_critic, &critic_grad, agent.critic_lr)?;
    let mut critic = agent.critic.clone();
    critic.set_params(&new_critic)?;

    let (actor_objective, actor_grad) =
        actor_objective_grad_with(&agent.actor, &critic, agent.action_bound, batch)?;
    if !actor_objective.is_finite() || actor_grad.iter().any(|g| !g.is_finite()) {
        return skip(agent, critic_loss, actor_objective);
    }
    let mut new_actor = agent.actor.params().to_vec();
    let mut actor_opt = agent.actor_opt.clone();
    actor_opt.step(&mut new_actor, &actor_grad, agent.actor_lr)?;

    agent.critic = critic;
    agent.critic_opt = critic_opt;
    agent.actor.set_params(&new_actor)?;
    agent.actor_opt = actor_opt;
    agent.critic_target.soft_update_from(&agent.critic, agent.tau);
    agent.actor_target.soft_update_from(&agent.actor, agent.tau);
    Ok(UpdateStats {
        critic_loss,
        actor_objective,
        applied: true,
    })
}
