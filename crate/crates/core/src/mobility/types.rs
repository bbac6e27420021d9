use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const COUNT: usize = Self::ALL.len();

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn label(self) -> &'static str {
                match self { $($name::$variant => $label),+ }
            }
        }
    };
}

vocabulary!(Gender { Male => "male", Female => "female" });

vocabulary!(AgeGroup {
    Children => "children",
    Youths => "youths",
    Adults => "adults",
    Seniors => "seniors",
});

vocabulary!(
    /// The eleven location classes of the contact-tracing schema.
    LocationCategory {
        Households => "households",
        Workplaces => "workplaces",
        Hotels => "hotels",
        Supermarkets => "supermarkets",
        Banks => "banks",
        Restaurants => "restaurants",
        Parks => "parks",
        BarberShops => "barber_shops",
        Trains => "trains",
        Buses => "buses",
        Airplanes => "airplanes",
    }
);

vocabulary!(CityTier { First => "first", Second => "second", Third => "third" });

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PersonAttr {
    pub gender: Gender,
    pub age_group: AgeGroup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocationAttr {
    pub category: LocationCategory,
    pub city_tier: CityTier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Compartment {
    S,
    E,
    I,
    R,
}

/// Person→location edges at one step, by registry index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MobilitySnapshot {
    pub time_index: usize,
    pub edges: Vec<(usize, usize)>,
}

impl MobilitySnapshot {
    /// Location of each person at this step; `None` when absent.
    pub fn location_of(&self, n_persons: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_persons];
        for &(p, l) in &self.edges {
            out[p] = Some(l);
        }
        out
    }
}

/// A bounded window of mobility with its initial compartments and,
/// optionally, observed infection counts for steps `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub person_ids: Vec<String>,
    pub persons: Vec<PersonAttr>,
    pub location_ids: Vec<String>,
    pub locations: Vec<LocationAttr>,
    pub snapshots: Vec<MobilitySnapshot>,
    pub initial_state: Vec<Compartment>,
    pub observed_infections: Option<Vec<u64>>,
}

impl Episode {
    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn n_steps(&self) -> usize {
        self.snapshots.len()
    }

    pub fn population(&self) -> usize {
        self.persons.len()
    }

    pub fn initial_counts(&self) -> [u64; 4] {
        let mut c = [0u64; 4];
        for &s in &self.initial_state {
            c[s as usize] += 1;
        }
        c
    }

    pub fn observations(&self) -> Result<&[u64]> {
        self.observed_infections
            .as_deref()
            .ok_or_else(|| Error::Contract("episode carries no observed infections".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let np = self.persons.len();
        let nl = self.locations.len();
        if self.person_ids.len() != np || self.location_ids.len() != nl {
            return Err(Error::Contract("id registries out of sync with attributes".into()));
        }
        if self.snapshots.is_empty() {
            return Err(Error::Contract("episode needs at least one snapshot (T ≥ 1)".into()));
        }
        if self.initial_state.len() != np {
            return Err(Error::Contract(format!(
                "initial_state covers {} of {} persons",
                self.initial_state.len(),
                np
            )));
        }
        for (k, snap) in self.snapshots.iter().enumerate() {
            if snap.time_index != k + 1 {
                return Err(Error::Contract(format!(
                    "snapshot {k} has t={} (expected {})",
                    snap.time_index,
                    k + 1
                )));
            }
            let mut seen = vec![false; np];
            for &(p, l) in &snap.edges {
                if p >= np || l >= nl {
                    return Err(Error::Contract(format!(
                        "edge ({p}, {l}) at t={} references an unknown id",
                        snap.time_index
                    )));
                }
                if std::mem::replace(&mut seen[p], true) {
                    return Err(Error::Contract(format!(
                        "person {} appears twice at t={}",
                        self.person_ids[p], snap.time_index
                    )));
                }
            }
        }
        if let Some(obs) = &self.observed_infections {
            if obs.len() != self.snapshots.len() {
                return Err(Error::Contract(format!(
                    "{} observations for T={}",
                    obs.len(),
                    self.snapshots.len()
                )));
            }
        }
        Ok(())
    }
}
