//! Property checks over randomized instances, shared by the `check` command
//! and the acceptance tests.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::agents::{DdpgAgent, DdpgConfig, TransitionTuple};
use crate::agents::ddpg::{actor_objective_grad_with, critic_loss_grad_with};
use crate::agents::Batch;
use crate::anm_mm::{AnmMmConfig, AnmMmModel, CauseEffectDataset, JointObjective};
use crate::clustering::{allocate_batch, fit_gmm_em_with, EmOptions};
use crate::diffcore::Matrix;
use crate::envs::{self, cartpole_energy, initial_state, EnvKind, EnvSpec};
use crate::kernels::{centering_matrix, hsic_biased};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `hsic_biased` against `Tr(K·H·L·H)/N²` with explicit matrix products.
pub fn hsic_oracle(instances: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(1..=6);
        let a = normal_matrix(n, n, &mut rng);
        let b = normal_matrix(n, n, &mut rng);
        let k = a.matmul_t(&a).unwrap();
        let l = b.matmul_t(&b).unwrap();
        let h = centering_matrix(n).unwrap();
        let khlh = k.matmul(&h).unwrap().matmul(&l).unwrap().matmul(&h).unwrap();
        let naive = khlh.trace() / (n * n) as f64;
        let fast = hsic_biased(&k, &l).unwrap();
        worst = worst.max((naive - fast).abs());
    }
    result(
        "hsic_oracle",
        worst <= 1e-10,
        format!("{instances} instances, max abs error {worst:.2e} (tolerance 1e-10)"),
    )
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, p: &[f64], k: usize, h: f64) -> f64 {
    let mut q = p.to_vec();
    q[k] += h;
    let up = f(&q);
    q[k] -= 2.0 * h;
    let down = f(&q);
    (up - down) / (2.0 * h)
}

/// Joint-loss gradient against central differences (step 1e-5).
pub fn joint_loss_gradient(instances: u64, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + s);
        let x = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-2.0..2.0));
        let y = Matrix::from_fn(6, 4, |i, j| (x[(i, j)] * (1.0 + i as f64 * 0.3)).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let ds = CauseEffectDataset::new(x, y).unwrap();
        let cfg = AnmMmConfig {
            seed: seed + s,
            init_sd: 0.5,
            ..AnmMmConfig::default()
        };
        let model = AnmMmModel::init(&ds, &cfg).unwrap();
        let obj = JointObjective::new(&model, &ds, cfg.lambda, true).unwrap();
        let p0 = obj.initial_params();
        let analytic = obj.compute(&p0).unwrap().grad;
        let mut f = |p: &[f64]| obj.compute(p).map(|l| l.loss).unwrap_or(f64::NAN);
        for k in 0..p0.len() {
            let fd = central_difference(&mut f, &p0, k, 1e-5);
            worst = worst.max(rel_err(fd, analytic[k]));
        }
    }
    result(
        "joint_loss_gradient",
        worst < 1e-4,
        format!("{instances} instances, max relative error {worst:.2e} (tolerance 1e-4)"),
    )
}

fn random_batch<R: Rng>(rng: &mut R, n: usize, sd: usize, bound: f64) -> Batch {
    let tuples: Vec<_> = (0..n)
        .map(|_| TransitionTuple {
            state: (0..sd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: vec![rng.gen_range(-bound..bound)],
            reward: rng.gen_range(-1.0..1.0),
            next_state: (0..sd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            terminal: false,
        })
        .collect();
    Batch::from_tuples(&tuples).unwrap()
}

/// Critic-loss and actor-objective gradients used by `ddpg_update` against
/// central differences (step 1e-5).
pub fn ddpg_gradient(instances: u64, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    let cfg = DdpgConfig {
        actor_hidden: vec![6, 5],
        critic_hidden: vec![6, 5, 4],
        ..DdpgConfig::default()
    };
    for s in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + s);
        let mut agent = DdpgAgent::new(2, 1, 2.0, &cfg, &mut rng).unwrap();
        let p: Vec<f64> = (0..agent.critic.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
        agent.critic.set_params(&p).unwrap();
        let p: Vec<f64> = (0..agent.actor.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
        agent.actor.set_params(&p).unwrap();
        let batch = random_batch(&mut rng, 8, 2, 2.0);
        let targets = agent.critic_targets(&batch).unwrap();

        let (_, grad) = agent.critic_loss_grad(&batch, &targets).unwrap();
        let mut net = agent.critic.clone();
        let p0 = agent.critic.params().to_vec();
        let mut f = |p: &[f64]| {
            net.set_params(p).unwrap();
            critic_loss_grad_with(&net, &batch, &targets).unwrap().0
        };
        for k in 0..p0.len() {
            worst = worst.max(rel_err(central_difference(&mut f, &p0, k, 1e-5), grad[k]));
        }

        let (_, grad) = agent.actor_objective_grad(&batch).unwrap();
        let mut net = agent.actor.clone();
        let p0 = agent.actor.params().to_vec();
        let mut f = |p: &[f64]| {
            net.set_params(p).unwrap();
            -actor_objective_grad_with(&net, &agent.critic, agent.action_bound, &batch).unwrap().0
        };
        for k in 0..p0.len() {
            worst = worst.max(rel_err(central_difference(&mut f, &p0, k, 1e-5), grad[k]));
        }
    }
    result(
        "ddpg_gradient",
        worst < 1e-4,
        format!("{instances} instances (critic and actor), max relative error {worst:.2e} (tolerance 1e-4)"),
    )
}

/// EM log-likelihood never decreases by more than 1e-9 per iteration.
pub fn em_monotone(datasets: u64, seed: u64) -> CheckResult {
    let mut violations = 0;
    let mut worst_drop: f64 = 0.0;
    let mut iterations = 0;
    for d in 0..datasets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + d);
        let n = rng.gen_range(5..60);
        let q = rng.gen_range(1..=3);
        let c = rng.gen_range(1..=4usize).min(n);
        let centers: Vec<f64> = (0..c * q).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let theta = Matrix::from_fn(n, q, |i, j| centers[(i % c) * q + j] + rng.sample::<f64, _>(StandardNormal));
        let fit = fit_gmm_em_with(&theta, c, seed + d, EmOptions::default()).unwrap();
        iterations += fit.log_likelihoods.len();
        for w in fit.log_likelihoods.windows(2) {
            let drop = w[0] - w[1];
            if drop > 1e-9 {
                violations += 1;
            }
            worst_drop = worst_drop.max(drop);
        }
    }
    result(
        "em_monotone",
        violations == 0,
        format!("{datasets} datasets, {iterations} iterations, {violations} violations, largest drop {worst_drop:.2e}"),
    )
}

/// `allocate_batch` sums to B and stays within one of `B·k̂` for random
/// simplex rows.
pub fn allocation_exact(rows: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..rows {
        let n = rng.gen_range(1..=20);
        let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let total: f64 = raw.iter().sum();
        let row: Vec<f64> = raw.iter().map(|v| v / total).collect();
        for b in [1, 64, 192] {
            let counts = allocate_batch(&row, b).unwrap();
            let sum: usize = counts.iter().sum();
            let close = counts.iter().zip(&row).all(|(&c, &k)| (c as f64 - b as f64 * k).abs() < 1.0);
            if sum != b || !close {
                failures += 1;
            }
        }
    }
    result(
        "allocation_exact",
        failures == 0,
        format!("{rows} rows x B in {{1, 64, 192}}, {failures} failures"),
    )
}

/// Trig normalization, reward bounds and the passive cart-pole energy audit.
pub fn env_invariants(rollouts: u64, seed: u64) -> CheckResult {
    let mut problems = Vec::new();
    let mut worst_drift: f64 = 0.0;
    for kind in [EnvKind::Ar, EnvKind::ArSparse, EnvKind::PendulumWind, EnvKind::CartpoleGravity] {
        for r in 0..rollouts {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r).wrapping_mul(31).wrapping_add(kind as u64));
            let mut spec = EnvSpec::default_for(kind);
            match kind {
                EnvKind::Ar | EnvKind::ArSparse => spec.target = rng.gen_range(-20.0..20.0),
                EnvKind::PendulumWind => spec.wind = rng.gen_range(-4.0..4.0),
                EnvKind::CartpoleGravity => spec.gravity = rng.gen_range(7.0..16.0),
            }
            let mut s = initial_state(&spec, &mut rng);
            for _ in 0..spec.horizon {
                let a = rng.gen_range(-1.5 * spec.action_bound..1.5 * spec.action_bound);
                let clipped = spec.clip_action(a);
                let (next, reward) = envs::step(&spec, &s, &[a], &mut rng);
                let ok = match kind {
                    EnvKind::Ar => reward > 0.0 && reward <= 1.0,
                    EnvKind::ArSparse => reward <= 100.0 && reward >= -clipped * clipped / 10.0,
                    EnvKind::PendulumWind => reward <= 0.0 && reward >= -(std::f64::consts::PI.powi(2) + 6.4 + 0.001 * 4.0),
                    EnvKind::CartpoleGravity => (-1.0..=1.0).contains(&reward),
                };
                if !ok {
                    problems.push(format!("{} reward {reward} out of bounds", kind.name()));
                }
                let trig = match kind {
                    EnvKind::PendulumWind => Some((next[0], next[1])),
                    EnvKind::CartpoleGravity => Some((next[2], next[3])),
                    _ => None,
                };
                if let Some((c, sn)) = trig {
                    if (c * c + sn * sn - 1.0).abs() > 1e-12 {
                        problems.push(format!("{} trig pair off the unit circle", kind.name()));
                    }
                }
                if kind == EnvKind::PendulumWind && next[2].abs() > 8.0 {
                    problems.push("pendulum speed above clip".into());
                }
                if next.iter().any(|v| !v.is_finite()) {
                    problems.push(format!("{} non-finite state", kind.name()));
                }
                s = next;
            }
            if kind == EnvKind::CartpoleGravity {
                // passive audit from the reset distribution (pole hanging)
                let mut s = initial_state(&spec, &mut rng);
                let e0 = cartpole_energy(&spec, &s);
                let mut drift: f64 = 0.0;
                for _ in 0..1000 {
                    s = envs::cartpole_step(&spec, &s, 0.0, &mut rng).0;
                    drift = drift.max((cartpole_energy(&spec, &s) - e0).abs() / e0.abs());
                }
                worst_drift = worst_drift.max(drift);
                if drift > 0.02 {
                    problems.push(format!("cart-pole energy drift {drift:.4}"));
                }
            }
        }
    }
    problems.dedup();
    let detail = format!(
        "{rollouts} rollouts per environment, worst passive cart-pole energy drift {:.3}%, {} problems{}",
        worst_drift * 100.0,
        problems.len(),
        problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default()
    );
    result("env_invariants", problems.is_empty(), detail)
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        hsic_oracle(20, 0),
        joint_loss_gradient(5, 0),
        ddpg_gradient(5, 0),
        em_monotone(100, 0),
        allocation_exact(1000, 0),
        env_invariants(100, 0),
    ]
}
