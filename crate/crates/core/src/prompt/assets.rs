use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::examples::{ExampleProfile, ExampleSet};
use super::template::{DescriptionOrigin, TaskDescription};
use super::PromptError;

const BUILTIN: &[(&str, &str)] = &[
    ("manifest.toml", include_str!("../../assets/manifest.toml")),
    ("descriptions/seed_stance.txt", include_str!("../../assets/descriptions/seed_stance.txt")),
    ("descriptions/seed_discussion.txt", include_str!("../../assets/descriptions/seed_discussion.txt")),
    ("descriptions/point_of_view.txt", include_str!("../../assets/descriptions/point_of_view.txt")),
    ("descriptions/few_shot.txt", include_str!("../../assets/descriptions/few_shot.txt")),
    ("triggers.toml", include_str!("../../assets/triggers.toml")),
    ("meta_prompt.txt", include_str!("../../assets/meta_prompt.txt")),
    ("examples/stance_reasoner.toml", include_str!("../../assets/examples/stance_reasoner.toml")),
    ("examples/homogeneous.toml", include_str!("../../assets/examples/homogeneous.toml")),
];

#[derive(Debug, Clone, Deserialize)]
struct Manifest {
    version: u32,
    #[serde(rename = "asset")]
    assets: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub origin: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Triggers {
    pub zero_shot: String,
    pub step_by_step: String,
    pub answer: String,
}

/// All prompt text the toolkit uses, loaded from the manifest-listed files.
#[derive(Debug, Clone)]
pub struct PromptAssets {
    pub version: u32,
    pub seeds: Vec<TaskDescription>,
    pub default_description: TaskDescription,
    pub few_shot_header: String,
    pub triggers: Triggers,
    pub meta_prompt: String,
    pub diverse_examples: ExampleSet,
    pub homogeneous_examples: ExampleSet,
    /// Asset id → SHA-256 of the file bytes.
    pub digests: BTreeMap<String, String>,
    pub manifest: Vec<ManifestEntry>,
}

/// LF line endings, one trailing newline removed.
fn normalize(text: &str) -> String {
    let text = text.replace("\r\n", "\n");
    text.strip_suffix('\n').unwrap_or(&text).to_string()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PromptAssets {
    /// The asset files compiled into the library.
    pub fn builtin() -> Self {
        Self::load_with(|path| {
            BUILTIN
                .iter()
                .find(|(p, _)| *p == path)
                .map(|(_, text)| text.to_string())
                .ok_or_else(|| PromptError::Asset(format!("no builtin asset {path}")))
        })
        .expect("builtin prompt assets are consistent")
    }

    /// Loads assets from a directory laid out like the builtin `assets/` tree.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        Self::load_with(|path| {
            fs::read_to_string(dir.join(path)).map_err(|e| PromptError::Asset(format!("{}: {e}", dir.join(path).display())))
        })
    }

    fn load_with<F>(read: F) -> Result<Self, PromptError>
    where
        F: Fn(&str) -> Result<String, PromptError>,
    {
        let manifest: Manifest =
            toml::from_str(&read("manifest.toml")?).map_err(|e| PromptError::Asset(format!("manifest: {e}")))?;
        let mut texts = BTreeMap::new();
        let mut digests = BTreeMap::new();
        for entry in &manifest.assets {
            let text = read(&entry.path)?;
            let digest = sha256_hex(text.as_bytes());
            if digest != entry.sha256 {
                return Err(PromptError::Asset(format!(
                    "asset {} ({}) does not match its manifest digest",
                    entry.id, entry.path
                )));
            }
            digests.insert(entry.id.clone(), digest);
            texts.insert(entry.id.clone(), normalize(&text));
        }
        let get = |id: &str| {
            texts
                .get(id)
                .cloned()
                .ok_or_else(|| PromptError::Asset(format!("manifest lists no asset {id}")))
        };

        let seeds = vec![
            TaskDescription::seed(get("description.seed_stance")?, 0),
            TaskDescription::seed(get("description.seed_discussion")?, 1),
        ];
        let default_description = TaskDescription {
            text: get("description.point_of_view")?,
            origin: DescriptionOrigin::Paraphrase,
            source_seed: None,
        };
        let triggers: Triggers =
            toml::from_str(&get("triggers")?).map_err(|e| PromptError::Asset(format!("triggers: {e}")))?;
        let diverse_examples = ExampleSet::from_toml(&get("examples.stance_reasoner")?)?;
        let homogeneous_examples = ExampleSet::from_toml(&get("examples.homogeneous")?)?;
        if diverse_examples.profile != ExampleProfile::StanceReasoner
            || homogeneous_examples.profile != ExampleProfile::Homogeneous
        {
            return Err(PromptError::Asset("example set profiles are swapped".into()));
        }
        for d in seeds.iter().chain(std::iter::once(&default_description)) {
            d.check()?;
        }

        Ok(Self {
            version: manifest.version,
            seeds,
            default_description,
            few_shot_header: get("header.few_shot")?,
            triggers,
            meta_prompt: get("meta_prompt")?,
            diverse_examples,
            homogeneous_examples,
            digests,
            manifest: manifest.assets,
        })
    }
}
