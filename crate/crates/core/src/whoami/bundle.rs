use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    ingest, ChunkStore, SourceDocument, WhoamiError, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE,
};
use crate::llm::{ChatMessage, Embedder, HashEmbedder};
use crate::toolkit::ContentPart;

pub const QUERY_TOOL_SENTENCE: &str = "You can look up details about your own body, sensors and capabilities with the query_identity tool.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Image,
    BodyDescription,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetSpec {
    pub kind: AssetKind,
    pub file: String,
}

#[derive(Debug)]
pub struct IdentityBundle {
    pub identity_text: String,
    pub rules_text: String,
    pub store: ChunkStore,
    pub assets: BTreeMap<String, AssetSpec>,
    /// Directory asset files are resolved against.
    pub asset_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, WhoamiError> {
    std::fs::read_to_string(path).map_err(|e| WhoamiError::Io(format!("{}: {e}", path.display())))
}

impl IdentityBundle {
    /// Loads `identity.txt`, optional `rules.txt`, `docs/*.txt|*.md` and
    /// `assets/manifest.json`. The identity, rules and every document are
    /// ingested into the store.
    pub fn load(dir: &Path) -> Result<Self, WhoamiError> {
        Self::load_with(dir, Arc::new(HashEmbedder::default()))
    }

    pub fn load_with(dir: &Path, embedder: Arc<dyn Embedder>) -> Result<Self, WhoamiError> {
        let identity_text = read(&dir.join("identity.txt"))?.trim().to_string();
        if identity_text.is_empty() {
            return Err(WhoamiError::InvalidBundle("identity.txt is empty".into()));
        }
        let rules_path = dir.join("rules.txt");
        let rules_text = if rules_path.exists() {
            read(&rules_path)?.trim().to_string()
        } else {
            String::new()
        };
        let mut docs = vec![SourceDocument::new("identity", "Identity", &identity_text)];
        if !rules_text.is_empty() {
            docs.push(SourceDocument::new("rules", "Rules", &rules_text));
        }
        let docs_dir = dir.join("docs");
        if docs_dir.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&docs_dir)
                .map_err(|e| WhoamiError::Io(format!("{}: {e}", docs_dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|x| x.to_str()),
                        Some("txt") | Some("md")
                    )
                })
                .collect();
            files.sort();
            for p in files {
                let body = read(&p)?;
                let id = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let title = body
                    .lines()
                    .next()
                    .unwrap_or_default()
                    .trim_start_matches('#')
                    .trim()
                    .to_string();
                docs.push(SourceDocument { id, title, body });
            }
        }
        let store = ingest(&docs, DEFAULT_CHUNK_SIZE, DEFAULT_CHUNK_OVERLAP, embedder)?;
        let asset_dir = dir.join("assets");
        let manifest = asset_dir.join("manifest.json");
        let assets: BTreeMap<String, AssetSpec> = if manifest.exists() {
            serde_json::from_str(&read(&manifest)?)
                .map_err(|e| WhoamiError::InvalidBundle(format!("manifest.json: {e}")))?
        } else {
            BTreeMap::new()
        };
        for (id, a) in &assets {
            if !asset_dir.join(&a.file).is_file() {
                return Err(WhoamiError::InvalidBundle(format!(
                    "asset {id:?} points at missing file {}",
                    a.file
                )));
            }
        }
        Ok(Self {
            identity_text,
            rules_text,
            store,
            assets,
            asset_dir,
        })
    }

    /// In-memory bundle, mainly for tests.
    pub fn from_parts(
        identity: &str,
        rules: &str,
        docs: &[SourceDocument],
    ) -> Result<Self, WhoamiError> {
        Ok(Self {
            identity_text: identity.to_string(),
            rules_text: rules.to_string(),
            store: ChunkStore::with_defaults(docs)?,
            assets: BTreeMap::new(),
            asset_dir: PathBuf::new(),
        })
    }

    pub fn asset_path(&self, id: &str) -> Option<PathBuf> {
        self.assets.get(id).map(|a| self.asset_dir.join(&a.file))
    }

    /// Bytes and mime type of an image asset.
    pub fn image_bytes(&self, id: &str) -> Option<(String, Vec<u8>)> {
        let a = self.assets.get(id)?;
        if a.kind != AssetKind::Image {
            return None;
        }
        let bytes = std::fs::read(self.asset_dir.join(&a.file)).ok()?;
        let mime = match Path::new(&a.file).extension().and_then(|e| e.to_str()) {
            Some("jpg") | Some("jpeg") => "image/jpeg",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            _ => "image/png",
        };
        Some((mime.to_string(), bytes))
    }

    pub fn attach_self_image(&self, asset: &str) -> Result<EmbodimentCondition, WhoamiError> {
        match self.assets.get(asset) {
            None => Err(WhoamiError::UnknownAsset(asset.to_string())),
            Some(a) if a.kind != AssetKind::Image => Err(WhoamiError::WrongKind(asset.to_string())),
            Some(_) => Ok(EmbodimentCondition::Visual {
                asset: asset.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptOptions {
    pub include_rules: bool,
    #[serde(default)]
    pub include_body_descriptions: bool,
}

/// Identity, then rules (if enabled), then body descriptions (if enabled),
/// then a fixed sentence about the query_identity tool.
pub fn build_system_prompt(bundle: &IdentityBundle, opts: PromptOptions) -> String {
    let mut sections = vec![bundle.identity_text.trim().to_string()];
    if opts.include_rules && !bundle.rules_text.trim().is_empty() {
        sections.push(format!("Rules:\n{}", bundle.rules_text.trim()));
    }
    if opts.include_body_descriptions {
        for (id, a) in &bundle.assets {
            if a.kind != AssetKind::BodyDescription {
                continue;
            }
            if let Ok(text) = std::fs::read_to_string(bundle.asset_dir.join(&a.file)) {
                sections.push(format!("Body description ({id}):\n{}", text.trim()));
            }
        }
    }
    sections.push(QUERY_TOOL_SENTENCE.to_string());
    sections.join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum EmbodimentCondition {
    #[default]
    LanguageOnly,
    Visual {
        asset: String,
    },
}

impl EmbodimentCondition {
    /// First user turn of a conversation under this condition.
    pub fn opening_message(&self, text: &str) -> ChatMessage {
        let mut parts = vec![ContentPart::text(text)];
        if let EmbodimentCondition::Visual { asset } = self {
            parts.push(ContentPart::ImageRef(asset.clone()));
        }
        ChatMessage::user_parts(parts)
    }
}
