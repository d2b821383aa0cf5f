//! Seeded latent-factor generator for desk-scale multi-behavior datasets.
//!
//! Every user and item gets a Gaussian latent vector plus an item popularity
//! offset. Behavior `b` gives each user a fixed quota `round(density_b * N)`
//! of its highest-scoring items under `affinity + noise_b * ε`. With nesting,
//! behavior `b` picks only among the items chosen for behavior `b - 1`, so
//! the target set is contained in every auxiliary set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{IdMap, InteractionSet, MultiBehaviorDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    pub behaviors: Vec<String>,
    /// Per-behavior fraction of items each user interacts with; must be
    /// non-increasing along the chain.
    pub densities: Vec<f64>,
    /// Per-behavior standard deviation of the selection noise.
    pub noise: Vec<f64>,
    pub popularity: f64,
    pub nested: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_users: 500,
            num_items: 300,
            latent_dim: 8,
            behaviors: vec!["view".into(), "cart".into(), "buy".into()],
            densities: vec![0.10, 0.04, 0.01],
            noise: vec![1.0, 0.6, 0.3],
            popularity: 0.5,
            nested: true,
        }
    }
}

impl SyntheticConfig {
    fn quotas(&self) -> Result<Vec<usize>> {
        let b = self.behaviors.len();
        if b == 0 {
            return Err(Error::Config("synthetic chain is empty".into()));
        }
        if self.densities.len() != b || self.noise.len() != b {
            return Err(Error::Config(format!(
                "{b} behaviors need {b} densities and {b} noise levels"
            )));
        }
        if self.latent_dim == 0 || self.num_users == 0 || self.num_items == 0 {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if self.densities.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(
                "synthetic densities must be non-increasing along the chain".into(),
            ));
        }
        self.densities
            .iter()
            .map(|&rho| {
                if rho.is_nan() || rho <= 0.0 {
                    return Err(Error::Config(format!("density {rho} must be positive")));
                }
                let quota = (rho * self.num_items as f64).round() as usize;
                if quota > self.num_items {
                    return Err(Error::Config(format!(
                        "density {rho} needs {quota} items per user but only {} exist",
                        self.num_items
                    )));
                }
                Ok(quota.max(1))
            })
            .collect()
    }
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<MultiBehaviorDataset> {
    let quotas = config.quotas()?;
    let (m, n, k) = (config.num_users, config.num_items, config.latent_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let user_factors: Vec<f64> = (0..m * k).map(|_| gauss(&mut rng)).collect();
    let item_factors: Vec<f64> = (0..n * k).map(|_| gauss(&mut rng)).collect();
    let item_bias: Vec<f64> = (0..n).map(|_| config.popularity * gauss(&mut rng)).collect();
    let scale = 1.0 / (k as f64).sqrt();

    let mut sets: Vec<InteractionSet> = (0..quotas.len()).map(InteractionSet::new).collect();
    let mut affinity = vec![0.0; n];
    for u in 0..m {
        let uf = &user_factors[u * k..(u + 1) * k];
        for (i, a) in affinity.iter_mut().enumerate() {
            let vf = &item_factors[i * k..(i + 1) * k];
            *a = scale * uf.iter().zip(vf).map(|(x, y)| x * y).sum::<f64>() + item_bias[i];
        }

        let mut candidates: Vec<u32> = (0..n as u32).collect();
        for (b, &quota) in quotas.iter().enumerate() {
            let pool: Vec<u32> = if config.nested || b == 0 {
                candidates.clone()
            } else {
                (0..n as u32).collect()
            };
            let mut scored: Vec<(f64, u32)> = pool
                .iter()
                .map(|&i| (affinity[i as usize] + config.noise[b] * gauss(&mut rng), i))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut chosen: Vec<u32> = scored.iter().take(quota).map(|&(_, i)| i).collect();

            // Random chronology per user and behavior.
            chosen.shuffle(&mut rng);
            for (t, &i) in chosen.iter().enumerate() {
                sets[b].push(u as u32, i, Some(t as i64 + 1));
            }
            chosen.sort_unstable();
            candidates = chosen;
        }
    }

    let mut users = IdMap::new();
    let mut items = IdMap::new();
    for u in 0..m {
        users.get_or_insert(&format!("u{u}"));
    }
    for i in 0..n {
        items.get_or_insert(&format!("i{i}"));
    }
    MultiBehaviorDataset::new(config.behaviors.clone(), sets, users, items)
}
