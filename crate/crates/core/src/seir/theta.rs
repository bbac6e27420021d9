use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{AgeGroup, CityTier, Gender, LocationCategory};
use crate::rng::{stream_rng, Domain};

/// Flat θ layout: gender β, age β, tier β, category β, κ, γ.
pub const THETA_DIM: usize = Gender::COUNT + AgeGroup::COUNT + CityTier::COUNT + LocationCategory::COUNT + 2;

const AGE_OFF: usize = Gender::COUNT;
const TIER_OFF: usize = AGE_OFF + AgeGroup::COUNT;
const CAT_OFF: usize = TIER_OFF + CityTier::COUNT;
pub const KAPPA_INDEX: usize = CAT_OFF + LocationCategory::COUNT;
pub const GAMMA_INDEX: usize = KAPPA_INDEX + 1;

/// SEIR parameters with attribute-additive transmission rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSeir {
    pub beta_gender: [f64; Gender::COUNT],
    pub beta_age: [f64; AgeGroup::COUNT],
    pub beta_tier: [f64; CityTier::COUNT],
    pub beta_category: [f64; LocationCategory::COUNT],
    pub kappa: f64,
    pub gamma: f64,
}

impl ThetaSeir {
    pub fn zeros() -> Self {
        ThetaSeir {
            beta_gender: [0.0; Gender::COUNT],
            beta_age: [0.0; AgeGroup::COUNT],
            beta_tier: [0.0; CityTier::COUNT],
            beta_category: [0.0; LocationCategory::COUNT],
            kappa: 0.0,
            gamma: 0.0,
        }
    }

    /// Every class of one attribute gets the same value.
    pub fn uniform(beta_gender: f64, beta_age: f64, beta_tier: f64, beta_category: f64, kappa: f64, gamma: f64) -> Self {
        ThetaSeir {
            beta_gender: [beta_gender; Gender::COUNT],
            beta_age: [beta_age; AgeGroup::COUNT],
            beta_tier: [beta_tier; CityTier::COUNT],
            beta_category: [beta_category; LocationCategory::COUNT],
            kappa,
            gamma,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(THETA_DIM);
        v.extend_from_slice(&self.beta_gender);
        v.extend_from_slice(&self.beta_age);
        v.extend_from_slice(&self.beta_tier);
        v.extend_from_slice(&self.beta_category);
        v.push(self.kappa);
        v.push(self.gamma);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != THETA_DIM {
            return Err(Error::shape("ThetaSeir::from_slice", &[v.len()], &[THETA_DIM]));
        }
        let mut t = ThetaSeir::zeros();
        t.beta_gender.copy_from_slice(&v[..AGE_OFF]);
        t.beta_age.copy_from_slice(&v[AGE_OFF..TIER_OFF]);
        t.beta_tier.copy_from_slice(&v[TIER_OFF..CAT_OFF]);
        t.beta_category.copy_from_slice(&v[CAT_OFF..KAPPA_INDEX]);
        t.kappa = v[KAPPA_INDEX];
        t.gamma = v[GAMMA_INDEX];
        Ok(t)
    }

    /// Names of the flat layout, e.g. `beta_age.adults`.
    pub fn component_names() -> Vec<String> {
        let mut names = Vec::with_capacity(THETA_DIM);
        names.extend(Gender::ALL.iter().map(|g| format!("beta_gender.{}", g.label())));
        names.extend(AgeGroup::ALL.iter().map(|a| format!("beta_age.{}", a.label())));
        names.extend(CityTier::ALL.iter().map(|t| format!("beta_tier.{}", t.label())));
        names.extend(LocationCategory::ALL.iter().map(|c| format!("beta_category.{}", c.label())));
        names.push("kappa".into());
        names.push("gamma".into());
        names
    }

    fn extreme_beta(&self, pick: fn(f64, f64) -> f64) -> f64 {
        let fold = |xs: &[f64]| xs.iter().copied().reduce(pick).unwrap_or(0.0);
        fold(&self.beta_gender) + fold(&self.beta_age) + fold(&self.beta_tier) + fold(&self.beta_category)
    }

    /// Mean of β(s,a,t,c) over the attribute cross-product.
    pub fn mean_beta(&self) -> f64 {
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        mean(&self.beta_gender) + mean(&self.beta_age) + mean(&self.beta_tier) + mean(&self.beta_category)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.kappa) || !unit.contains(&self.gamma) {
            return Err(Error::Contract(format!(
                "kappa={} gamma={} must lie in [0, 1]",
                self.kappa, self.gamma
            )));
        }
        let (lo, hi) = (self.extreme_beta(f64::min), self.extreme_beta(f64::max));
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::Contract(format!(
                "composed beta spans [{lo}, {hi}], outside [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Normal distribution over a dwell time, in hours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwellPrior {
    pub mean_hours: f64,
    pub sd_hours: f64,
}

/// Sampling distribution over θ.
///
/// β components are uniform in `beta_range`; κ and γ are reciprocals of
/// normally distributed dwell times (E and I durations) converted to steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub beta_range: [f64; 2],
    pub hours_per_step: f64,
    pub incubation: DwellPrior,
    pub infectious: DwellPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            beta_range: [0.0, 0.1],
            hours_per_step: 24.0,
            incubation: DwellPrior { mean_hours: 96.0, sd_hours: 12.0 },
            infectious: DwellPrior { mean_hours: 84.0, sd_hours: 12.0 },
        }
    }
}

/// Dwell-time support, in steps, used for the κ/γ box bounds.
const DWELL_SIGMAS: f64 = 3.0;

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.beta_range;
        if !(lo >= 0.0 && lo <= hi) || 4.0 * hi > 1.0 {
            return Err(Error::Config(format!(
                "beta_range [{lo}, {hi}] must satisfy 0 ≤ lo ≤ hi and 4·hi ≤ 1"
            )));
        }
        if self.hours_per_step <= 0.0 {
            return Err(Error::Config("hours_per_step must be positive".into()));
        }
        for d in [&self.incubation, &self.infectious] {
            if d.sd_hours < 0.0 || d.mean_hours < self.hours_per_step {
                return Err(Error::Config(
                    "dwell means must be at least one step and sd non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    fn dwell_steps(&self, d: &DwellPrior) -> (f64, f64) {
        (d.mean_hours / self.hours_per_step, d.sd_hours / self.hours_per_step)
    }

    fn rate_bounds(&self, d: &DwellPrior) -> [f64; 2] {
        let (mean, sd) = self.dwell_steps(d);
        let longest = mean + DWELL_SIGMAS * sd;
        let shortest = (mean - DWELL_SIGMAS * sd).max(1.0);
        [1.0 / longest, 1.0 / shortest]
    }

    /// Box bounds `(lower, upper)` in the flat θ layout.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.beta_range[0]; THETA_DIM];
        let mut hi = vec![self.beta_range[1]; THETA_DIM];
        let [kl, kh] = self.rate_bounds(&self.incubation);
        let [gl, gh] = self.rate_bounds(&self.infectious);
        lo[KAPPA_INDEX] = kl;
        hi[KAPPA_INDEX] = kh;
        lo[GAMMA_INDEX] = gl;
        hi[GAMMA_INDEX] = gh;
        (lo, hi)
    }

    /// θ with every β at the range midpoint and κ, γ at the mean dwell times.
    pub fn center(&self) -> ThetaSeir {
        let b = 0.5 * (self.beta_range[0] + self.beta_range[1]);
        ThetaSeir::uniform(
            b,
            b,
            b,
            b,
            1.0 / self.dwell_steps(&self.incubation).0,
            1.0 / self.dwell_steps(&self.infectious).0,
        )
    }
}

fn sample_rate<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 {
        return 1.0 / mean;
    }
    let normal = Normal::new(mean, sd).expect("finite dwell prior");
    loop {
        let dwell: f64 = normal.sample(rng);
        // rate must land in (0, 1]
        if dwell >= 1.0 {
            return 1.0 / dwell;
        }
    }
}

pub fn sample_theta<R: Rng + ?Sized>(prior: &PriorConfig, rng: &mut R) -> ThetaSeir {
    let [lo, hi] = prior.beta_range;
    let mut beta = || if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut t = ThetaSeir::zeros();
    for b in t
        .beta_gender
        .iter_mut()
        .chain(t.beta_age.iter_mut())
        .chain(t.beta_tier.iter_mut())
        .chain(t.beta_category.iter_mut())
    {
        *b = beta();
    }
    let (km, ks) = prior.dwell_steps(&prior.incubation);
    let (gm, gs) = prior.dwell_steps(&prior.infectious);
    t.kappa = sample_rate(km, ks, rng);
    t.gamma = sample_rate(gm, gs, rng);
    t
}

/// `k` θ samples; sample `j` comes from its own stream so prefixes are stable.
pub fn sample_thetas(prior: &PriorConfig, k: usize, seed: u64) -> Vec<ThetaSeir> {
    (0..k)
        .map(|j| sample_theta(prior, &mut stream_rng(seed, Domain::ThetaSample, 0, j, 0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trip() {
        let v: Vec<f64> = (0..THETA_DIM).map(|i| i as f64 * 0.001).collect();
        assert_eq!(ThetaSeir::from_slice(&v).unwrap().to_vec(), v);
        assert_eq!(ThetaSeir::component_names().len(), THETA_DIM);
        assert_eq!(THETA_DIM, 22);
    }

    #[test]
    fn validation_bounds() {
        assert!(ThetaSeir::uniform(0.01, 0.02, 0.005, 0.015, 0.25, 0.3).validate().is_ok());
        assert!(ThetaSeir::uniform(0.3, 0.3, 0.3, 0.3, 0.25, 0.3).validate().is_err());
        assert!(ThetaSeir::uniform(0.0, 0.0, 0.0, 0.0, 1.2, 0.3).validate().is_err());
        assert!(ThetaSeir::uniform(-0.1, 0.0, 0.0, 0.0, 0.2, 0.3).validate().is_err());
    }

    #[test]
    fn betas_within_range() {
        let prior = PriorConfig::default();
        for t in sample_thetas(&prior, 200, 3) {
            for b in &t.to_vec()[..KAPPA_INDEX] {
                assert!((0.0..=0.1).contains(b));
            }
            assert!(t.kappa > 0.0 && t.kappa <= 1.0);
            assert!(t.validate().is_ok());
        }
    }

    #[test]
    fn degenerate_dwell_gives_exact_rate() {
        let prior = PriorConfig {
            incubation: DwellPrior { mean_hours: 96.0, sd_hours: 0.0 },
            ..Default::default()
        };
        let t = sample_theta(&prior, &mut stream_rng(1, Domain::ThetaSample, 0, 0, 0));
        assert_eq!(t.kappa, 0.25);
    }

    #[test]
    fn dwell_mean_matches_prior() {
        // mean of 1/κ over 10,000 draws within 3 standard errors of 4 steps
        let prior = PriorConfig::default();
        let draws: Vec<f64> = sample_thetas(&prior, 10_000, 17).iter().map(|t| 1.0 / t.kappa).collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 4.0).abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn bounds_contain_center() {
        let prior = PriorConfig::default();
        let (lo, hi) = prior.bounds();
        for ((c, l), h) in prior.center().to_vec().iter().zip(&lo).zip(&hi) {
            assert!(l <= c && c <= h);
        }
    }
}
