use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{Compartment, Episode, LocationAttr, MobilitySnapshot, PersonAttr};
use crate::rng::{stream_rng, Domain, SimRng};
use crate::seir::theta::ThetaSeir;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompartmentCounts {
    pub s: u64,
    pub e: u64,
    pub i: u64,
    pub r: u64,
}

impl CompartmentCounts {
    pub fn total(&self) -> u64 {
        self.s + self.e + self.i + self.r
    }

    pub fn add(&mut self, c: Compartment) {
        match c {
            Compartment::S => self.s += 1,
            Compartment::E => self.e += 1,
            Compartment::I => self.i += 1,
            Compartment::R => self.r += 1,
        }
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.s, self.e, self.i, self.r]
    }

    pub fn from_array([s, e, i, r]: [u64; 4]) -> Self {
        CompartmentCounts { s, e, i, r }
    }

    pub fn of(states: &[Compartment]) -> Self {
        let mut c = CompartmentCounts::default();
        states.iter().for_each(|&s| c.add(s));
        c
    }
}

/// Counts for t = 0..=T. `per_location[t][l]` groups the states at t by the
/// snapshot active at t (snapshot 1 for t = 0); absent persons are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub counts: Vec<CompartmentCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_location: Option<Vec<Vec<CompartmentCounts>>>,
    pub theta_used: ThetaSeir,
    pub seed: u64,
}

impl Trajectory {
    pub fn infections(&self) -> Vec<u64> {
        self.counts.iter().map(|c| c.i).collect()
    }

    pub fn n_steps(&self) -> usize {
        self.counts.len() - 1
    }
}

pub fn effective_beta(person: &PersonAttr, location: &LocationAttr, theta: &ThetaSeir) -> f64 {
    theta.beta_gender[person.gender.index()]
        + theta.beta_age[person.age_group.index()]
        + theta.beta_tier[location.city_tier.index()]
        + theta.beta_category[location.category.index()]
}

/// `(pSE, pEI, pIR)` for one location. An empty location has pSE = 0.
pub fn transition_probs(location: &CompartmentCounts, beta_eff: f64, theta: &ThetaSeir) -> (f64, f64, f64) {
    let n = location.total();
    let p_se = if n == 0 {
        0.0
    } else {
        beta_eff * location.i as f64 / n as f64
    };
    let clamp = |p: f64| p.clamp(0.0, 1.0);
    (clamp(p_se), clamp(theta.kappa), clamp(theta.gamma))
}

fn draw<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    // no draw for p = 0 so zero-probability transitions leave the stream untouched
    p > 0.0 && rng.random::<f64>() < p
}

/// Per-person and per-location β parts, precomputed once per run.
struct BetaParts {
    person: Vec<f64>,
    location: Vec<f64>,
}

impl BetaParts {
    fn new(episode: &Episode, theta: &ThetaSeir) -> Self {
        BetaParts {
            person: episode
                .persons
                .iter()
                .map(|p| theta.beta_gender[p.gender.index()] + theta.beta_age[p.age_group.index()])
                .collect(),
            location: episode
                .locations
                .iter()
                .map(|l| theta.beta_tier[l.city_tier.index()] + theta.beta_category[l.category.index()])
                .collect(),
        }
    }
}

fn location_counts(states: &[Compartment], snapshot: &MobilitySnapshot, n_locations: usize) -> Vec<CompartmentCounts> {
    let mut counts = vec![CompartmentCounts::default(); n_locations];
    for &(p, l) in &snapshot.edges {
        counts[l].add(states[p]);
    }
    counts
}

fn step_with(
    states: &[Compartment],
    snapshot: &MobilitySnapshot,
    parts: &BetaParts,
    theta: &ThetaSeir,
    rng: &mut impl Rng,
) -> Vec<Compartment> {
    let local = location_counts(states, snapshot, parts.location.len());
    let mut place = vec![usize::MAX; states.len()];
    for &(p, l) in &snapshot.edges {
        place[p] = l;
    }
    let (kappa, gamma) = (theta.kappa.clamp(0.0, 1.0), theta.gamma.clamp(0.0, 1.0));
    states
        .iter()
        .enumerate()
        .map(|(p, &s)| match s {
            Compartment::S => {
                let l = place[p];
                if l == usize::MAX {
                    return s;
                }
                let (p_se, _, _) = transition_probs(&local[l], parts.person[p] + parts.location[l], theta);
                if draw(p_se, rng) { Compartment::E } else { s }
            }
            Compartment::E => if draw(kappa, rng) { Compartment::I } else { s },
            Compartment::I => if draw(gamma, rng) { Compartment::R } else { s },
            Compartment::R => s,
        })
        .collect()
}

/// One synchronous update: every draw uses `states` (time t−1) and the
/// locations of `snapshot` (time t). Persons absent from the snapshot
/// cannot be exposed.
pub fn step(
    states: &[Compartment],
    snapshot: &MobilitySnapshot,
    episode: &Episode,
    theta: &ThetaSeir,
    rng: &mut impl Rng,
) -> Result<Vec<Compartment>> {
    if states.len() != episode.n_persons() {
        return Err(Error::shape("step", &[states.len()], &[episode.n_persons()]));
    }
    Ok(step_with(states, snapshot, &BetaParts::new(episode, theta), theta, rng))
}

/// Runs one stochastic trajectory. Deterministic in `(episode, theta, seed)`.
pub fn simulate(episode: &Episode, theta: &ThetaSeir, seed: u64) -> Result<Trajectory> {
    simulate_with(episode, theta, seed, false)
}

pub fn simulate_with(episode: &Episode, theta: &ThetaSeir, seed: u64, record_locations: bool) -> Result<Trajectory> {
    theta.validate()?;
    if episode.initial_state.len() != episode.n_persons() || episode.snapshots.is_empty() {
        return Err(Error::Contract("episode is not simulatable".into()));
    }
    let mut rng: SimRng = stream_rng(seed, Domain::Simulate, 0, 0, 0);
    let parts = BetaParts::new(episode, theta);
    let nl = episode.n_locations();

    let mut states = episode.initial_state.clone();
    let mut counts = Vec::with_capacity(episode.n_steps() + 1);
    counts.push(CompartmentCounts::of(&states));
    let mut per_location = record_locations.then(|| vec![location_counts(&states, &episode.snapshots[0], nl)]);

    for snapshot in &episode.snapshots {
        states = step_with(&states, snapshot, &parts, theta, &mut rng);
        counts.push(CompartmentCounts::of(&states));
        if let Some(pl) = per_location.as_mut() {
            pl.push(location_counts(&states, snapshot, nl));
        }
    }
    Ok(Trajectory {
        counts,
        per_location,
        theta_used: theta.clone(),
        seed,
    })
}

/// Σ_t (predicted_t − observed_t)².
pub fn l2_error(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::shape("l2_error", &[predicted.len()], &[observed.len()]));
    }
    Ok(predicted.iter().zip(observed).map(|(p, o)| (p - o).powi(2)).sum())
}
