use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Ornstein-Uhlenbeck process `x ← x + θ(μ − x)dt + σ√dt·ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    pub mu: f64,
    pub sigma: f64,
    pub theta_rate: f64,
    pub current: f64,
    pub dt: f64,
}

impl OuNoise {
    /// Starts at its mean.
    pub fn new(mu: f64, sigma: f64, theta_rate: f64, dt: f64) -> Self {
        debug_assert!(sigma >= 0.0);
        OuNoise {
            mu,
            sigma,
            theta_rate,
            current: mu,
            dt,
        }
    }

    pub fn reset(&mut self, mu: f64) {
        self.mu = mu;
        self.current = mu;
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let eps: f64 = if self.sigma > 0.0 {
            rng.sample(StandardNormal)
        } else {
            0.0
        };
        self.current += self.theta_rate * (self.mu - self.current) * self.dt + self.sigma * self.dt.sqrt() * eps;
        self.current
    }
}

/// `N` independent draws from `N(0, σ₁²)`.
pub fn sample_episode_means<R: Rng + ?Sized>(n: usize, sigma1: f64, rng: &mut R) -> Vec<f64> {
    if sigma1 <= 0.0 {
        return vec![0.0; n];
    }
    let dist = Normal::new(0.0, sigma1).expect("finite positive sd");
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn anneal(sigma1: f64, sigma2: f64, decay: f64) -> (f64, f64) {
    (sigma1 * decay, sigma2 * decay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_ou_relaxes_geometrically() {
        let mut ou = OuNoise::new(0.5, 0.0, 0.15, 1.0);
        ou.current = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut gap = 0.5;
        for _ in 0..200 {
            ou.sample(&mut rng);
            let next = (ou.current - 0.5).abs();
            assert!((next - gap * 0.85).abs() < 1e-12);
            gap = next;
        }
        assert!(gap < 1e-12);
    }

    #[test]
    fn zero_noise_at_mean_stays() {
        let mut ou = OuNoise::new(0.0, 0.0, 0.15, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ou.sample(&mut rng), 0.0);
    }

    #[test]
    fn episode_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_episode_means(5, 0.0, &mut rng).iter().all(|&m| m == 0.0));
        let v = sample_episode_means(10_000, 1.0, &mut rng);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!((0.97..=1.03).contains(&sd));
        let a = sample_episode_means(4, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_episode_means(4, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn annealing() {
        assert_eq!(anneal(0.7, 0.3, 1.0), (0.7, 0.3));
        let mut s = (1.0, 1.0);
        for _ in 0..3 {
            s = anneal(s.0, s.1, 0.5);
        }
        assert_eq!(s.0, 0.125);
        let mut s = 1.0;
        for _ in 0..10_000 {
            s = anneal(s, 0.0, 0.999).0;
        }
        assert!((s - 0.999f64.powi(10_000)).abs() < 1e-15);
        assert!((s - 4.5e-5).abs() < 1e-6);
    }
}
