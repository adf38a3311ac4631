//! The MDP interchange format:
//! `{"num_states", "num_actions", "transition": [s][a][s'], "reward": [s][a], "start", "gamma", "r_max"}`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vaml_lab_core::TabularMdp;

use crate::error::{io_err, LabError, Result};
use crate::output::write_atomic;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    num_states: usize,
    num_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    start: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

fn shape_error(what: String) -> LabError {
    LabError::Invalid {
        context: "mdp".into(),
        source: vaml_lab_core::Error::ShapeMismatch(what),
    }
}

impl MdpDocument {
    fn from_mdp(mdp: &TabularMdp) -> Self {
        let (n, k) = (mdp.num_states(), mdp.num_actions());
        MdpDocument {
            num_states: n,
            num_actions: k,
            transition: (0..n)
                .map(|s| (0..k).map(|a| mdp.transition_row(s, a).to_vec()).collect())
                .collect(),
            reward: mdp.rewards().chunks(k).map(<[f64]>::to_vec).collect(),
            start: mdp.start().to_vec(),
            gamma: mdp.gamma(),
            r_max: mdp.r_max(),
        }
    }

    fn into_mdp(self) -> Result<TabularMdp> {
        let (n, k) = (self.num_states, self.num_actions);
        if self.transition.len() != n || self.reward.len() != n {
            return Err(shape_error(format!(
                "expected {n} transition and reward blocks, got {} and {}",
                self.transition.len(),
                self.reward.len()
            )));
        }
        let mut transition = Vec::with_capacity(n * k * n);
        for (s, block) in self.transition.iter().enumerate() {
            if block.len() != k {
                return Err(shape_error(format!("transition[{s}] has {} actions, expected {k}", block.len())));
            }
            for (a, row) in block.iter().enumerate() {
                if row.len() != n {
                    return Err(shape_error(format!("transition[{s}][{a}] has {} entries, expected {n}", row.len())));
                }
                transition.extend_from_slice(row);
            }
        }
        let mut reward = Vec::with_capacity(n * k);
        for (s, row) in self.reward.iter().enumerate() {
            if row.len() != k {
                return Err(shape_error(format!("reward[{s}] has {} entries, expected {k}", row.len())));
            }
            reward.extend_from_slice(row);
        }
        TabularMdp::new(n, k, transition, reward, self.start, self.gamma, self.r_max).map_err(|source| {
            LabError::Invalid {
                context: "mdp".into(),
                source,
            }
        })
    }
}

pub fn mdp_to_json(mdp: &TabularMdp) -> String {
    serde_json::to_string_pretty(&MdpDocument::from_mdp(mdp)).expect("plain numeric document")
}

/// Parses and validates (row sums, ranges, shapes).
pub fn mdp_from_json(text: &str) -> Result<TabularMdp> {
    let doc: MdpDocument = serde_json::from_str(text).map_err(|source| LabError::Parse {
        path: "<mdp>".into(),
        source,
    })?;
    doc.into_mdp()
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let doc: MdpDocument = serde_json::from_str(&text).map_err(|source| LabError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    doc.into_mdp().map_err(|e| match e {
        LabError::Invalid { source, .. } => LabError::Invalid {
            context: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn save_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    let mut text = mdp_to_json(mdp);
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
