use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forcing::{ColumnMap, SplitRatio};
use crate::node::NodeRole;
use crate::train::TrainConfig;

pub const OUTPUT_ENV: &str = "MCA_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT: &str = "mca-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingConfig {
    pub path: Option<PathBuf>,
    pub columns: ColumnMap,
    pub spinup_repeats: usize,
    pub split_seed: u64,
    pub split_ratio: [u32; 3],
    pub n_groups: usize,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        ForcingConfig {
            path: None,
            columns: ColumnMap::default(),
            spinup_repeats: 3,
            split_seed: 0,
            split_ratio: [2, 1, 1],
            n_groups: 5,
        }
    }
}

impl ForcingConfig {
    pub fn ratio(&self) -> SplitRatio {
        let [a, b, c] = self.split_ratio;
        SplitRatio(a, b, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Variant label such as `MA5BP2`.
    pub variant: String,
    /// Directory name of the run; defaults to the variant label.
    pub name: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: "MA1".into(),
            name: None,
        }
    }
}

/// A trained parent run: a run directory (its selected run is used) or a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineageRef {
    pub run: PathBuf,
    #[serde(default)]
    pub roles: Option<Vec<NodeRole>>,
}

impl LineageRef {
    /// `path` or `path:sm,gw`.
    pub fn parse(s: &str) -> Result<Self> {
        let (path, roles) = match s.rsplit_once(':') {
            Some((p, r)) if !r.contains('/') && !r.contains('\\') && !p.is_empty() => {
                let roles = r
                    .split(',')
                    .map(|x| x.trim().parse())
                    .collect::<Result<Vec<NodeRole>>>()?;
                (p, Some(roles))
            }
            _ => (s, None),
        };
        Ok(LineageRef {
            run: PathBuf::from(path),
            roles,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignParent {
    pub name: String,
    #[serde(default)]
    pub roles: Option<Vec<NodeRole>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignEntry {
    pub variant: String,
    #[serde(default)]
    pub name: Option<String>,
    /// Explicit parents; when absent the standard lineage of the variant is used,
    /// restricted to entries present in the campaign.
    #[serde(default)]
    pub parents: Option<Vec<CampaignParent>>,
}

impl CampaignEntry {
    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.variant)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: Option<PathBuf>,
    pub forcing: ForcingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub lineage: Vec<LineageRef>,
    pub campaign: Vec<CampaignEntry>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Output root: explicit value, then the environment, then the default.
    pub fn resolve_output(&mut self) {
        if self.output_dir.is_none() {
            self.output_dir = Some(
                std::env::var_os(OUTPUT_ENV)
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
            );
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output location is not
    /// part of the identity of an experiment.
    pub fn hash(&self) -> String {
        let keyed = ExperimentConfig {
            output_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&keyed).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_config() {
        let c: ExperimentConfig = toml::from_str(
            r#"
            [forcing]
            path = "leaf.csv"
            [forcing.columns]
            q_obs = "flow"
            [model]
            variant = "MA5BP2"
            [train]
            epochs = 50
            [[lineage]]
            run = "out/runs/MA5"
            "#,
        )
        .unwrap();
        assert_eq!(c.forcing.columns.q_obs, "flow");
        assert_eq!(c.forcing.columns.precip, "precip_mm");
        assert_eq!(c.train.epochs, 50);
        assert_eq!(c.train.seeds, 10);
        assert_eq!(c.lineage[0].roles, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[model]\nvariantt = \"MA1\"").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.epochs = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let moved = ExperimentConfig {
            output_dir: Some("elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(moved.hash(), a.hash());
    }

    #[test]
    fn lineage_flags() {
        let l = LineageRef::parse("runs/MA2:sm").unwrap();
        assert_eq!(l.run, PathBuf::from("runs/MA2"));
        assert_eq!(l.roles, Some(vec![NodeRole::Soil]));
        let l = LineageRef::parse("runs/MA4").unwrap();
        assert_eq!(l.roles, None);
        assert!(LineageRef::parse("runs/MA4:xx").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.campaign.push(CampaignEntry {
            variant: "MA2".into(),
            name: None,
            parents: None,
        });
        let back: ExperimentConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
