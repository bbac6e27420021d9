//! Episode JSON (`schema_version: 1`).
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "persons":   { "p0": { "gender": "male", "age_group": "adults" } },
//!   "locations": { "l0": { "category": "households", "city_tier": "first" } },
//!   "snapshots": [ { "t": 1, "edges": [["p0", "l0"]] } ],
//!   "initial_state": { "p0": "S" },
//!   "observed_infections": [0]
//! }
//! ```

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::types::*;

pub const EPISODE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeFile {
    schema_version: u32,
    persons: IndexMap<String, PersonAttr>,
    locations: IndexMap<String, LocationAttr>,
    snapshots: Vec<SnapshotFile>,
    initial_state: IndexMap<String, Compartment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observed_infections: Option<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotFile {
    t: usize,
    edges: Vec<(String, String)>,
}

pub fn episode_to_json(episode: &Episode) -> Result<String> {
    let file = EpisodeFile {
        schema_version: EPISODE_SCHEMA_VERSION,
        persons: episode.person_ids.iter().cloned().zip(episode.persons.iter().copied()).collect(),
        locations: episode.location_ids.iter().cloned().zip(episode.locations.iter().copied()).collect(),
        snapshots: episode
            .snapshots
            .iter()
            .map(|s| SnapshotFile {
                t: s.time_index,
                edges: s
                    .edges
                    .iter()
                    .map(|&(p, l)| (episode.person_ids[p].clone(), episode.location_ids[l].clone()))
                    .collect(),
            })
            .collect(),
        initial_state: episode.person_ids.iter().cloned().zip(episode.initial_state.iter().copied()).collect(),
        observed_infections: episode.observed_infections.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn episode_from_json(text: &str) -> Result<Episode> {
    let file: EpisodeFile = serde_json::from_str(text).map_err(|e| {
        Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    if file.schema_version != EPISODE_SCHEMA_VERSION {
        return Err(Error::parse(
            "schema_version",
            format!("unsupported version {}", file.schema_version),
        ));
    }
    if file.snapshots.is_empty() {
        return Err(Error::parse("snapshots", "at least one snapshot is required (T ≥ 1)"));
    }

    let person_index: HashMap<&str, usize> = file.persons.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let location_index: HashMap<&str, usize> = file.locations.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();

    let mut snapshots = Vec::with_capacity(file.snapshots.len());
    for (k, s) in file.snapshots.iter().enumerate() {
        if s.t != k + 1 {
            return Err(Error::parse(
                format!("snapshots[{k}].t"),
                format!("expected consecutive t={} but found {}", k + 1, s.t),
            ));
        }
        let mut edges = Vec::with_capacity(s.edges.len());
        let mut seen = vec![false; file.persons.len()];
        for (pid, lid) in &s.edges {
            let p = *person_index
                .get(pid.as_str())
                .ok_or_else(|| Error::parse(format!("snapshots[{k}].edges"), format!("unknown person id {pid:?}")))?;
            let l = *location_index
                .get(lid.as_str())
                .ok_or_else(|| Error::parse(format!("snapshots[{k}].edges"), format!("unknown location id {lid:?}")))?;
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::parse(
                    format!("snapshots[{k}].edges"),
                    format!("person {pid:?} is in more than one location"),
                ));
            }
            edges.push((p, l));
        }
        snapshots.push(MobilitySnapshot { time_index: s.t, edges });
    }

    let mut initial_state = vec![None; file.persons.len()];
    for (pid, state) in &file.initial_state {
        let p = *person_index
            .get(pid.as_str())
            .ok_or_else(|| Error::parse("initial_state", format!("unknown person id {pid:?}")))?;
        initial_state[p] = Some(*state);
    }
    let initial_state = initial_state
        .into_iter()
        .enumerate()
        .map(|(p, s)| {
            s.ok_or_else(|| {
                Error::parse("initial_state", format!("missing person {:?}", file.persons.get_index(p).unwrap().0))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(obs) = &file.observed_infections {
        if obs.len() != snapshots.len() {
            return Err(Error::parse(
                "observed_infections",
                format!("{} entries for T={}", obs.len(), snapshots.len()),
            ));
        }
    }

    let episode = Episode {
        person_ids: file.persons.keys().cloned().collect(),
        persons: file.persons.values().copied().collect(),
        location_ids: file.locations.keys().cloned().collect(),
        locations: file.locations.values().copied().collect(),
        snapshots,
        initial_state,
        observed_infections: file.observed_infections,
    };
    episode.validate()?;
    Ok(episode)
}

pub fn save_episode(episode: &Episode, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, episode_to_json(episode)?).map_err(|e| Error::io(path, e))
}

pub fn load_episode(path: impl AsRef<Path>) -> Result<Episode> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    episode_from_json(&text).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}
