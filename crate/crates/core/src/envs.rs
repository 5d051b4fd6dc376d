//! Analytic environments with hidden per-agent parameters.
//!
//! * `ar`: `s' = φ·s + a + ε`, reward `exp(−|s − s*|)`.
//! * `ar_sparse`: same dynamics, reward `100·exp(−|s − s*|) − a²/10`.
//! * `pendulum_wind`: swing-up with a constant horizontal wind force on the
//!   pole; observation `[cos θ, sin θ, θ̇]`, `θ = 0` upright.
//! * `cartpole_gravity`: cart-pole swing-up with configurable gravity;
//!   observation `[x, ẋ, cos θ, sin θ, θ̇]`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PENDULUM_MASS: f64 = 1.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;

pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const TRACK_LIMIT: f64 = 2.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Ar,
    ArSparse,
    PendulumWind,
    CartpoleGravity,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Ar => "ar",
            EnvKind::ArSparse => "ar_sparse",
            EnvKind::PendulumWind => "pendulum_wind",
            EnvKind::CartpoleGravity => "cartpole_gravity",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Ar | EnvKind::ArSparse => 1,
            EnvKind::PendulumWind => 3,
            EnvKind::CartpoleGravity => 5,
        }
    }

    pub fn action_dim(self) -> usize {
        1
    }

    /// Index of the scalar state feature used as the cause when extracting
    /// mechanisms: the AR state, or the angular velocity.
    pub fn cause_index(self) -> usize {
        match self {
            EnvKind::Ar | EnvKind::ArSparse => 0,
            EnvKind::PendulumWind => 2,
            EnvKind::CartpoleGravity => 4,
        }
    }

    /// Typical magnitude of one step's reward.
    pub fn reward_scale(self) -> f64 {
        match self {
            EnvKind::Ar | EnvKind::CartpoleGravity => 1.0,
            EnvKind::ArSparse => 100.0,
            EnvKind::PendulumWind => PI * PI + 0.1 * PENDULUM_MAX_SPEED * PENDULUM_MAX_SPEED,
        }
    }
}

/// Environment kind plus every (hidden) parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// AR coefficient φ.
    pub phi: f64,
    pub noise_sd: f64,
    /// Reward target s*.
    pub target: f64,
    /// Constant wind force on the pendulum.
    pub wind: f64,
    pub gravity: f64,
    pub dt: f64,
    pub horizon: usize,
    pub action_bound: f64,
}

impl EnvSpec {
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Ar => EnvSpec {
                kind,
                phi: 0.95,
                noise_sd: 0.1,
                target: 0.0,
                wind: 0.0,
                gravity: 0.0,
                dt: 1.0,
                horizon: 100,
                action_bound: 1.0,
            },
            EnvKind::ArSparse => EnvSpec {
                kind,
                action_bound: 2.0,
                ..EnvSpec::default_for(EnvKind::Ar)
            },
            EnvKind::PendulumWind => EnvSpec {
                kind,
                phi: 0.0,
                noise_sd: 0.0,
                target: 0.0,
                wind: 0.0,
                gravity: 10.0,
                dt: 0.05,
                horizon: 200,
                action_bound: 2.0,
            },
            EnvKind::CartpoleGravity => EnvSpec {
                kind,
                phi: 0.0,
                noise_sd: 0.0,
                target: 0.0,
                wind: 0.0,
                gravity: 9.82,
                dt: 0.02,
                horizon: 300,
                action_bound: 10.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be non-negative"));
        }
        if !(self.action_bound > 0.0) {
            return Err(Error::invalid("action_bound must be positive"));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    pub fn clip_action(&self, a: f64) -> f64 {
        a.clamp(-self.action_bound, self.action_bound)
    }

    pub fn with_param(mut self, param: HiddenParam, value: f64) -> Self {
        match param {
            HiddenParam::Target => self.target = value,
            HiddenParam::Wind => self.wind = value,
            HiddenParam::Gravity => self.gravity = value,
            HiddenParam::Phi => self.phi = value,
        }
        self
    }

    pub fn param(&self, param: HiddenParam) -> f64 {
        match param {
            HiddenParam::Target => self.target,
            HiddenParam::Wind => self.wind,
            HiddenParam::Gravity => self.gravity,
            HiddenParam::Phi => self.phi,
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        sd * rng.sample::<f64, _>(StandardNormal)
    }
}

/// `exp(−|s − s*|)`.
pub fn ar_reward(spec: &EnvSpec, s: f64) -> f64 {
    (-(s - spec.target).abs()).exp()
}

/// AR transition; the reward is evaluated on the current state.
pub fn ar_step<R: Rng + ?Sized>(spec: &EnvSpec, s: f64, a: f64, rng: &mut R) -> (f64, f64) {
    let a = spec.clip_action(a);
    let s_next = spec.phi * s + a + gaussian(rng, spec.noise_sd);
    let r = match spec.kind {
        EnvKind::ArSparse => ar_sparse_reward(spec, s, a),
        _ => ar_reward(spec, s),
    };
    (s_next, r)
}

/// `100·exp(−|s − s*|) − a²/10`.
pub fn ar_sparse_reward(spec: &EnvSpec, s: f64, a: f64) -> f64 {
    100.0 * (-(s - spec.target).abs()).exp() - a * a / 10.0
}

/// Wraps an angle into `[−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

/// Angular acceleration of the windy pendulum (θ = 0 upright).
pub fn pendulum_accel(spec: &EnvSpec, theta: f64, a: f64) -> f64 {
    let (m, l) = (PENDULUM_MASS, PENDULUM_LENGTH);
    3.0 * spec.gravity / (2.0 * l) * theta.sin()
        + 3.0 / (m * l * l) * a
        + 3.0 * spec.wind / (2.0 * m * l) * theta.cos()
}

/// Semi-implicit Euler pendulum step. `state = [cos θ, sin θ, θ̇]`.
pub fn pendulum_step<R: Rng + ?Sized>(
    spec: &EnvSpec,
    state: &[f64],
    a: f64,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let theta = state[1].atan2(state[0]);
    let omega = state[2];
    let a = spec.clip_action(a);
    let th = wrap_angle(theta);
    let r = -(th * th + 0.1 * omega * omega + 0.001 * a * a);
    let acc = pendulum_accel(spec, theta, a);
    let omega_next = (omega + acc * spec.dt + gaussian(rng, spec.noise_sd))
        .clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
    let theta_next = theta + omega_next * spec.dt;
    (pendulum_obs(theta_next, omega_next), r)
}

pub fn pendulum_obs(theta: f64, omega: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin(), omega]
}

/// Cart and pole accelerations `(ẍ, θ̈)` for force `f` (θ = 0 upright).
pub fn cartpole_accel(spec: &EnvSpec, theta: f64, omega: f64, f: f64) -> (f64, f64) {
    let total = CART_MASS + POLE_MASS;
    let (sin, cos) = theta.sin_cos();
    let temp = (f + POLE_MASS * POLE_HALF_LENGTH * omega * omega * sin) / total;
    let theta_acc = (spec.gravity * sin - cos * temp)
        / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
    let x_acc = temp - POLE_MASS * POLE_HALF_LENGTH * theta_acc * cos / total;
    (x_acc, theta_acc)
}

/// Cart-pole swing-up step; `state = [x, ẋ, cos θ, sin θ, θ̇]`, reward `cos θ`
/// of the current state. Velocities are updated before positions
/// (semi-implicit Euler); the cart stops dead at the track limits.
pub fn cartpole_step<R: Rng + ?Sized>(
    spec: &EnvSpec,
    state: &[f64],
    a: f64,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let (x, x_dot) = (state[0], state[1]);
    let theta = state[3].atan2(state[2]);
    let omega = state[4];
    let f = spec.clip_action(a);
    let r = state[2];
    let (x_acc, theta_acc) = cartpole_accel(spec, theta, omega, f);
    let mut x_dot_next = x_dot + spec.dt * x_acc;
    let omega_next = omega + spec.dt * theta_acc + gaussian(rng, spec.noise_sd);
    let mut x_next = x + spec.dt * x_dot_next;
    let theta_next = theta + spec.dt * omega_next;
    if x_next.abs() > TRACK_LIMIT {
        x_next = x_next.clamp(-TRACK_LIMIT, TRACK_LIMIT);
        x_dot_next = 0.0;
    }
    (cartpole_obs(x_next, x_dot_next, theta_next, omega_next), r)
}

pub fn cartpole_obs(x: f64, x_dot: f64, theta: f64, omega: f64) -> Vec<f64> {
    vec![x, x_dot, theta.cos(), theta.sin(), omega]
}

/// Total mechanical energy of the cart-pole (uniform rod pole).
pub fn cartpole_energy(spec: &EnvSpec, state: &[f64]) -> f64 {
    let (x_dot, cos, omega) = (state[1], state[2], state[4]);
    let total = CART_MASS + POLE_MASS;
    let l = POLE_HALF_LENGTH;
    0.5 * total * x_dot * x_dot
        + POLE_MASS * l * cos * x_dot * omega
        + (2.0 / 3.0) * POLE_MASS * l * l * omega * omega
        + POLE_MASS * spec.gravity * l * cos
}

/// One transition for any kind: `(next_state, reward)`.
pub fn step<R: Rng + ?Sized>(spec: &EnvSpec, state: &[f64], action: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let a = action[0];
    match spec.kind {
        EnvKind::Ar | EnvKind::ArSparse => {
            let (s, r) = ar_step(spec, state[0], a, rng);
            (vec![s], r)
        }
        EnvKind::PendulumWind => pendulum_step(spec, state, a, rng),
        EnvKind::CartpoleGravity => cartpole_step(spec, state, a, rng),
    }
}

/// Initial state distribution.
pub fn initial_state<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Vec<f64> {
    match spec.kind {
        EnvKind::Ar | EnvKind::ArSparse => vec![rng.sample(StandardNormal)],
        EnvKind::PendulumWind => {
            let theta = rng.gen_range(-PI..PI);
            let omega = rng.gen_range(-1.0..1.0);
            pendulum_obs(theta, omega)
        }
        EnvKind::CartpoleGravity => {
            let x = gaussian(rng, 0.05);
            let x_dot = gaussian(rng, 0.05);
            let theta = PI + gaussian(rng, 0.05);
            let omega = gaussian(rng, 0.05);
            cartpole_obs(x, x_dot, theta, omega)
        }
    }
}

/// Stateful episode runner around the pure step functions.
#[derive(Debug, Clone)]
pub struct Env {
    pub spec: EnvSpec,
    state: Vec<f64>,
    t: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// The episode reached its horizon.
    pub done: bool,
}

impl Env {
    pub fn new<R: Rng + ?Sized>(spec: EnvSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let state = initial_state(&spec, rng);
        Ok(Env { spec, state, t: 0 })
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        self.state = initial_state(&self.spec, rng);
        self.t = 0;
        &self.state
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> StepOutcome {
        let (next, reward) = step(&self.spec, &self.state, action, rng);
        self.state = next.clone();
        self.t += 1;
        StepOutcome {
            next_state: next,
            reward,
            done: self.t >= self.spec.horizon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenParam {
    Target,
    Wind,
    Gravity,
    Phi,
}

/// One group of agents whose hidden parameter is drawn from `N(mean, sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub param: HiddenParam,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledEnv {
    pub spec: EnvSpec,
    /// Ground-truth group; for evaluation only.
    pub group: usize,
}

/// One environment per agent, groups in order.
pub fn sample_env_group(base: &EnvSpec, groups: &[GroupSpec], seed: u64) -> Result<Vec<LabeledEnv>> {
    base.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        if !(group.sd >= 0.0) || group.count == 0 {
            return Err(Error::invalid(format!("group {g}: sd must be >= 0 and count >= 1")));
        }
        let dist = Normal::new(group.mean, group.sd)
            .map_err(|e| Error::invalid(format!("group {g}: {e}")))?;
        for _ in 0..group.count {
            let value = if group.sd == 0.0 { group.mean } else { dist.sample(&mut rng) };
            out.push(LabeledEnv {
                spec: base.with_param(group.param, value),
                group: g,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn quiet_ar(target: f64) -> EnvSpec {
        EnvSpec {
            noise_sd: 0.0,
            target,
            ..EnvSpec::default_for(EnvKind::Ar)
        }
    }

    #[test]
    fn ar_examples() {
        let spec = quiet_ar(0.0);
        let (s, _) = ar_step(&spec, 1.0, 0.0, &mut rng());
        assert!((s - 0.95).abs() < 1e-15);
        let spec = quiet_ar(2.5);
        assert_eq!(ar_step(&spec, 2.5, 0.3, &mut rng()).1, 1.0);
        let r = ar_step(&spec, 2.5 + 2f64.ln(), 0.0, &mut rng()).1;
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ar_is_linear_without_noise() {
        let spec = quiet_ar(1.0);
        let (a, _) = ar_step(&spec, 0.3, 0.5, &mut rng());
        let (b, _) = ar_step(&spec, 0.3 + 0.7, 0.5, &mut rng());
        assert!((b - a - 0.95 * 0.7).abs() < 1e-14);
    }

    #[test]
    fn sparse_reward_examples() {
        let spec = EnvSpec {
            target: 20.0,
            action_bound: 20.0,
            ..EnvSpec::default_for(EnvKind::ArSparse)
        };
        assert_eq!(ar_sparse_reward(&spec, 20.0, 0.0), 100.0);
        assert_eq!(ar_sparse_reward(&spec, 20.0, 10.0), 90.0);
        let far = ar_sparse_reward(&spec, 0.0, 0.0);
        assert!((far - 100.0 * (-20.0f64).exp()).abs() < 1e-20);
        assert!((far - 2.06e-7).abs() < 1e-9);
    }

    #[test]
    fn pendulum_equilibria_and_wind() {
        let spec = EnvSpec::default_for(EnvKind::PendulumWind);
        assert_eq!(pendulum_accel(&spec, 0.0, 0.0), 0.0);
        assert!(pendulum_accel(&spec, PI, 0.0).abs() < 1e-14);
        let (next, r) = pendulum_step(&spec, &pendulum_obs(0.0, 0.0), 0.0, &mut rng());
        assert_eq!(next, vec![1.0, 0.0, 0.0]);
        assert_eq!(r, 0.0);
        let windy = EnvSpec { wind: 4.0, ..spec };
        assert!((pendulum_accel(&windy, 0.0, 0.0) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn pendulum_speed_clipped_and_reward_wrapped() {
        let spec = EnvSpec::default_for(EnvKind::PendulumWind);
        let (next, _) = pendulum_step(&spec, &pendulum_obs(1.0, 7.99), 2.0, &mut rng());
        assert!(next[2] <= PENDULUM_MAX_SPEED);
        let (_, r) = pendulum_step(&spec, &pendulum_obs(2.0 * PI + 0.5, 0.0), 0.0, &mut rng());
        assert!((r + 0.25).abs() < 1e-12);
    }

    #[test]
    fn cartpole_reward_is_cosine() {
        let spec = EnvSpec::default_for(EnvKind::CartpoleGravity);
        let (_, up) = cartpole_step(&spec, &cartpole_obs(0.0, 0.0, 0.0, 0.0), 0.0, &mut rng());
        assert_eq!(up, 1.0);
        let (_, down) = cartpole_step(&spec, &cartpole_obs(0.0, 0.0, PI, 0.0), 0.0, &mut rng());
        assert_eq!(down, -1.0);
    }

    #[test]
    fn cartpole_wall_stops_cart() {
        let spec = EnvSpec::default_for(EnvKind::CartpoleGravity);
        let (next, _) = cartpole_step(&spec, &cartpole_obs(2.39, 5.0, PI, 0.0), 10.0, &mut rng());
        assert_eq!(next[0], TRACK_LIMIT);
        assert_eq!(next[1], 0.0);
    }

    #[test]
    fn hanging_cartpole_energy_does_not_grow() {
        let spec = EnvSpec::default_for(EnvKind::CartpoleGravity);
        let mut r = rng();
        let mut s = cartpole_obs(0.0, 0.0, PI + 0.1, 0.0);
        let e0 = cartpole_energy(&spec, &s);
        for _ in 0..1000 {
            s = cartpole_step(&spec, &s, 0.0, &mut r).0;
            assert!(cartpole_energy(&spec, &s) <= e0 + 0.02 * e0.abs());
        }
    }

    #[test]
    fn group_sampling() {
        let base = EnvSpec::default_for(EnvKind::Ar);
        let groups = [
            GroupSpec { param: HiddenParam::Target, mean: -4.0, sd: 0.1, count: 20 },
            GroupSpec { param: HiddenParam::Target, mean: -1.0, sd: 0.0, count: 20 },
            GroupSpec { param: HiddenParam::Target, mean: 4.0, sd: 0.1, count: 20 },
        ];
        let envs = sample_env_group(&base, &groups, 5).unwrap();
        assert_eq!(envs.len(), 60);
        assert_eq!(envs.iter().filter(|e| e.group == 1).count(), 20);
        assert!(envs[20..40].iter().all(|e| e.spec.target == -1.0));
        assert_eq!(envs[59].group, 2);
        assert_eq!(envs, sample_env_group(&base, &groups, 5).unwrap());
        let bad = [GroupSpec { param: HiddenParam::Wind, mean: 0.0, sd: -1.0, count: 1 }];
        assert!(sample_env_group(&base, &bad, 0).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        for k in -20..20 {
            let w = wrap_angle(k as f64 * 0.77);
            assert!((-PI..=PI).contains(&w));
        }
    }
}
