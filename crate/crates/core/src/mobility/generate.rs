use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::types::*;
use crate::rng::{stream_rng, Domain};

/// Switch to a different home bias partway through an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lockdown {
    /// Inclusive range of the first affected step, drawn per episode.
    pub start: [usize; 2],
    pub home_bias: f64,
}

/// Synthetic episode settings.
///
/// Each person has a home among the household locations. At every step a
/// person keeps the previous location with probability `revisit_prob`;
/// otherwise they go home with probability `home_bias` or visit a uniformly
/// drawn non-household location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_persons: usize,
    pub n_locations: usize,
    pub n_steps: usize,
    pub gender_weights: Vec<f64>,
    pub age_weights: Vec<f64>,
    pub tier_weights: Vec<f64>,
    /// Weights over the ten non-household categories.
    pub category_weights: Vec<f64>,
    /// Fraction of locations that are households (homes).
    pub household_fraction: f64,
    /// Per-episode home bias drawn uniformly from this range.
    pub home_bias: [f64; 2],
    pub revisit_prob: f64,
    pub lockdown: Option<Lockdown>,
    pub initial_infected: usize,
    pub initial_exposed: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_persons: 2000,
            n_locations: 30,
            n_steps: 28,
            gender_weights: vec![1.0; Gender::COUNT],
            age_weights: vec![1.0; AgeGroup::COUNT],
            tier_weights: vec![1.0; CityTier::COUNT],
            category_weights: vec![1.0; LocationCategory::COUNT - 1],
            household_fraction: 0.5,
            home_bias: [0.5, 0.5],
            revisit_prob: 0.3,
            lockdown: None,
            initial_infected: 40,
            initial_exposed: 40,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_persons == 0 || self.n_locations == 0 || self.n_steps == 0 {
            return Err(Error::Config("N, L and T must all be positive".into()));
        }
        if self.initial_infected + self.initial_exposed > self.n_persons {
            return Err(Error::Config("more initial cases than persons".into()));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.household_fraction) || !unit(self.revisit_prob) || !unit(self.home_bias[0]) || !unit(self.home_bias[1]) || self.home_bias[0] > self.home_bias[1] {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        for (name, w, n) in [
            ("gender_weights", &self.gender_weights, Gender::COUNT),
            ("age_weights", &self.age_weights, AgeGroup::COUNT),
            ("tier_weights", &self.tier_weights, CityTier::COUNT),
            ("category_weights", &self.category_weights, LocationCategory::COUNT - 1),
        ] {
            if w.len() != n || w.iter().any(|x| *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!("{name} needs {n} non-negative weights")));
            }
        }
        if let Some(lock) = &self.lockdown {
            if lock.start[0] > lock.start[1] || !unit(lock.home_bias) {
                return Err(Error::Config("invalid lockdown settings".into()));
            }
        }
        Ok(())
    }
}

fn weighted(w: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(w).expect("validated weights")
}

/// Deterministic in `(config, seed)`. Observations are left empty.
pub fn generate_synthetic_episode(config: &GeneratorConfig, seed: u64) -> Result<Episode> {
    config.validate()?;
    let mut rng = stream_rng(seed, Domain::Generate, 0, 0, 0);
    let (np, nl, nt) = (config.n_persons, config.n_locations, config.n_steps);

    let gender = weighted(&config.gender_weights);
    let age = weighted(&config.age_weights);
    let tier = weighted(&config.tier_weights);
    let category = weighted(&config.category_weights);

    let persons: Vec<PersonAttr> = (0..np)
        .map(|_| PersonAttr {
            gender: Gender::ALL[gender.sample(&mut rng)],
            age_group: AgeGroup::ALL[age.sample(&mut rng)],
        })
        .collect();

    let n_homes = ((config.household_fraction * nl as f64).round() as usize).min(nl);
    let locations: Vec<LocationAttr> = (0..nl)
        .map(|l| LocationAttr {
            category: if l < n_homes {
                LocationCategory::Households
            } else {
                // skip Households (index 0)
                LocationCategory::ALL[1 + category.sample(&mut rng)]
            },
            city_tier: CityTier::ALL[tier.sample(&mut rng)],
        })
        .collect();

    let homes: Vec<usize> = (0..np)
        .map(|_| if n_homes > 0 { rng.random_range(0..n_homes) } else { rng.random_range(0..nl) })
        .collect();
    let public: std::ops::Range<usize> = if n_homes < nl { n_homes..nl } else { 0..nl };

    let base_bias = if config.home_bias[1] > config.home_bias[0] {
        rng.random_range(config.home_bias[0]..=config.home_bias[1])
    } else {
        config.home_bias[0]
    };
    let lockdown_start = config
        .lockdown
        .as_ref()
        .map(|l| (rng.random_range(l.start[0]..=l.start[1]), l.home_bias));

    let mut current: Vec<usize> = vec![0; np];
    let mut snapshots = Vec::with_capacity(nt);
    for t in 1..=nt {
        let bias = match lockdown_start {
            Some((start, b)) if t >= start => b,
            _ => base_bias,
        };
        for p in 0..np {
            if t > 1 && rng.random_bool(config.revisit_prob) {
                continue;
            }
            current[p] = if rng.random_bool(bias) {
                homes[p]
            } else {
                rng.random_range(public.clone())
            };
        }
        snapshots.push(MobilitySnapshot {
            time_index: t,
            edges: current.iter().copied().enumerate().collect(),
        });
    }

    let mut initial_state = vec![Compartment::S; np];
    let seeded = rand::seq::index::sample(&mut rng, np, config.initial_infected + config.initial_exposed);
    for (k, p) in seeded.iter().enumerate() {
        initial_state[p] = if k < config.initial_infected {
            Compartment::I
        } else {
            Compartment::E
        };
    }

    let episode = Episode {
        person_ids: (0..np).map(|p| format!("p{p}")).collect(),
        persons,
        location_ids: (0..nl).map(|l| format!("l{l}")).collect(),
        locations,
        snapshots,
        initial_state,
        observed_infections: None,
    };
    debug_assert!(episode.validate().is_ok());
    Ok(episode)
}
