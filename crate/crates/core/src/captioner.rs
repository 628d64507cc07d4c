//! Caption text used as pseudo modification text.
//!
//! Three sources sit behind one [`Captioner`]:
//!
//! * `remote`: `POST {endpoint}/caption` with `{"image_b64": "<base64 PNG>"}`,
//!   expecting HTTP 200 and `{"caption": "<string>"}`. Other statuses and empty
//!   captions are failures and are retried up to `retries` times.
//! * `stub`: a deterministic caption derived from the image content hash.
//! * `file`: a JSONL of `{"id": ..., "caption": ...}` read verbatim by image id.
//!
//! Images are identified by the SHA-256 of their canonical PNG encoding, so a
//! renamed file keeps its caption. Remote results are cached in a JSONL file of
//! `{"hash": ..., "caption": ...}` rows, appended through a single writer.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use image::RgbImage;
use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::hashing::{sha256_hex, stable_hash64};
use crate::mask_plan::{encode_png, load_rgb, MaskError};

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("caption service failed after {attempts} attempt(s): {last}")]
    Remote { attempts: u32, last: String },
    #[error("no caption for image `{0}`")]
    Missing(String),
    #[error("caption for `{0}` is empty")]
    Empty(String),
    #[error("malformed caption file {path} line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Image(#[from] MaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSourceKind {
    Remote,
    Stub,
    File,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub image_id: String,
    pub text: String,
    pub source: CaptionSourceKind,
}

impl Caption {
    /// Trims `text`; fails if nothing is left.
    pub fn new(image_id: impl Into<String>, text: &str, source: CaptionSourceKind) -> Result<Self, CaptionError> {
        let image_id = image_id.into();
        let text = text.trim();
        if text.is_empty() {
            return Err(CaptionError::Empty(image_id));
        }
        Ok(Self {
            image_id,
            text: text.to_string(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "location")]
pub enum Endpoint {
    Remote(String),
    Stub,
    File(PathBuf),
}

impl Endpoint {
    /// `"stub"`, an `http(s)://` URL, or a path to an id→caption JSONL.
    pub fn parse(spec: &str) -> Self {
        if spec == "stub" {
            Endpoint::Stub
        } else if spec.starts_with("http://") || spec.starts_with("https://") {
            Endpoint::Remote(spec.trim_end_matches('/').to_string())
        } else {
            Endpoint::File(PathBuf::from(spec))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionerConfig {
    pub endpoint: Endpoint,
    pub timeout: Duration,
    pub retries: u32,
    pub cache_path: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        Self {
            endpoint: Endpoint::Stub,
            timeout: Duration::from_secs(30),
            retries: 2,
            cache_path: None,
            max_in_flight: 4,
        }
    }
}

impl CaptionerConfig {
    pub fn stub() -> Self {
        Self::default()
    }
}

/// What the captioner is given: a decoded raster or a path to one.
pub enum CaptionInput<'a> {
    Raster { image_id: &'a str, image: &'a RgbImage },
    Path { image_id: &'a str, path: &'a Path },
}

/// Deterministic stand-in caption: a few words picked by the content hash,
/// followed by the hash prefix itself.
pub fn stub_caption(content_hash: &str) -> String {
    const ADJECTIVES: [&str; 16] = [
        "red", "blue", "green", "striped", "small", "large", "wooden", "shiny", "dark", "bright",
        "long", "short", "round", "plain", "patterned", "soft",
    ];
    const NOUNS: [&str; 16] = [
        "dress", "shirt", "bird", "dog", "car", "table", "lamp", "chair", "flower", "boat",
        "house", "tree", "cup", "shoe", "bag", "window",
    ];
    const SCENES: [&str; 8] = [
        "on a white background",
        "in a park",
        "next to a wall",
        "on the street",
        "near the water",
        "in a room",
        "under a tree",
        "in the snow",
    ];
    let h = stable_hash64(content_hash);
    let adj = ADJECTIVES[(h & 0xf) as usize];
    let noun = NOUNS[((h >> 4) & 0xf) as usize];
    let scene = SCENES[((h >> 8) & 0x7) as usize];
    let prefix = &content_hash[..content_hash.len().min(12)];
    format!("a {adj} {noun} {scene} [{prefix}]")
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    hash: String,
    caption: String,
}

#[derive(Deserialize)]
struct FileRow {
    id: String,
    caption: String,
}

struct Cache {
    entries: HashMap<String, String>,
    writer: Option<File>,
}

pub struct Captioner {
    config: CaptionerConfig,
    cache: Mutex<Cache>,
    by_id: HashMap<String, String>,
    agent: Option<ureq::Agent>,
}

impl Captioner {
    pub fn new(config: CaptionerConfig) -> Result<Self, CaptionError> {
        let mut entries = HashMap::new();
        let mut writer = None;
        if let Some(path) = &config.cache_path {
            if path.exists() {
                for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let row: CacheRow = serde_json::from_str(&line).map_err(|e| CaptionError::Malformed {
                        path: path.display().to_string(),
                        line: n + 1,
                        reason: e.to_string(),
                    })?;
                    entries.insert(row.hash, row.caption);
                }
            }
            writer = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }

        let by_id = match &config.endpoint {
            Endpoint::File(path) => read_caption_file(path)?,
            _ => HashMap::new(),
        };
        let agent = match &config.endpoint {
            Endpoint::Remote(_) => Some(
                ureq::Agent::config_builder()
                    .timeout_global(Some(config.timeout))
                    .http_status_as_error(false)
                    .build()
                    .into(),
            ),
            _ => None,
        };
        Ok(Self {
            config,
            cache: Mutex::new(Cache { entries, writer }),
            by_id,
            agent,
        })
    }

    pub fn config(&self) -> &CaptionerConfig {
        &self.config
    }

    pub fn caption(&self, input: CaptionInput<'_>) -> Result<Caption, CaptionError> {
        let image_id = match &input {
            CaptionInput::Raster { image_id, .. } | CaptionInput::Path { image_id, .. } => *image_id,
        };
        if let Endpoint::File(_) = self.config.endpoint {
            let text = self
                .by_id
                .get(image_id)
                .ok_or_else(|| CaptionError::Missing(image_id.to_string()))?;
            return Caption::new(image_id, text, CaptionSourceKind::File);
        }

        let loaded;
        let image = match input {
            CaptionInput::Raster { image, .. } => image,
            CaptionInput::Path { path, .. } => {
                loaded = load_rgb(path)?;
                &loaded
            }
        };
        let png = encode_png(image)?;
        let hash = sha256_hex(&png);
        match &self.config.endpoint {
            Endpoint::Stub => Caption::new(image_id, &stub_caption(&hash), CaptionSourceKind::Stub),
            Endpoint::Remote(base) => {
                if let Some(text) = self.cache.lock().entries.get(&hash) {
                    debug!(image_id, "caption cache hit");
                    return Caption::new(image_id, text, CaptionSourceKind::Remote);
                }
                let text = self.fetch(base, &png)?;
                self.remember(&hash, &text)?;
                Caption::new(image_id, &text, CaptionSourceKind::Remote)
            }
            Endpoint::File(_) => unreachable!(),
        }
    }

    /// Captions many images with at most `max_in_flight` concurrent requests. Output order matches input.
    pub fn caption_many(&self, inputs: Vec<CaptionInput<'_>>) -> Vec<Result<Caption, CaptionError>>
    where
        Self: Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.max_in_flight.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| inputs.into_par_iter().map(|i| self.caption(i)).collect())
    }

    fn remember(&self, hash: &str, text: &str) -> Result<(), CaptionError> {
        let mut cache = self.cache.lock();
        if cache.entries.contains_key(hash) {
            return Ok(());
        }
        if let Some(w) = cache.writer.as_mut() {
            let row = CacheRow {
                hash: hash.to_string(),
                caption: text.to_string(),
            };
            let mut line = serde_json::to_string(&row).expect("serializable");
            line.push('\n');
            w.write_all(line.as_bytes())?;
            w.flush()?;
        }
        cache.entries.insert(hash.to_string(), text.to_string());
        Ok(())
    }

    fn fetch(&self, base: &str, png: &[u8]) -> Result<String, CaptionError> {
        #[derive(Serialize)]
        struct Request {
            image_b64: String,
        }
        #[derive(Deserialize)]
        struct Response {
            caption: String,
        }

        let agent = self.agent.as_ref().expect("remote endpoint has an agent");
        let url = format!("{base}/caption");
        let body = serde_json::to_string(&Request {
            image_b64: base64::engine::general_purpose::STANDARD.encode(png),
        })
        .expect("serializable");

        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            let outcome = agent
                .post(&url)
                .header("content-type", "application/json")
                .send(body.as_str());
            match outcome {
                Ok(mut resp) if resp.status().as_u16() == 200 => {
                    match resp.body_mut().read_to_string() {
                        Ok(text) => match serde_json::from_str::<Response>(&text) {
                            Ok(r) if !r.caption.trim().is_empty() => return Ok(r.caption.trim().to_string()),
                            Ok(_) => last = "empty caption".into(),
                            Err(e) => last = format!("bad response body: {e}"),
                        },
                        Err(e) => last = e.to_string(),
                    }
                }
                Ok(resp) => last = format!("HTTP {}", resp.status().as_u16()),
                Err(e) => last = e.to_string(),
            }
            if attempt < attempts {
                warn!(attempt, %last, "caption request failed, retrying");
            }
        }
        Err(CaptionError::Remote { attempts, last })
    }
}

/// Reads an id→caption JSONL (`{"id": ..., "caption": ...}` per line).
pub fn read_caption_file(path: &Path) -> Result<HashMap<String, String>, CaptionError> {
    let mut map = HashMap::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FileRow = serde_json::from_str(&line).map_err(|e| CaptionError::Malformed {
            path: path.display().to_string(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        map.insert(row.id, row.caption);
    }
    Ok(map)
}

/// Caption lookup by image id, used when scoring pairs against their target captions.
pub trait CaptionSource: Sync {
    fn caption_of(&self, image_id: &str) -> Result<Caption, CaptionError>;
}

/// In-memory id→caption map.
#[derive(Debug, Clone, Default)]
pub struct CaptionMap {
    texts: HashMap<String, String>,
}

impl CaptionMap {
    pub fn new(texts: HashMap<String, String>) -> Self {
        Self { texts }
    }

    pub fn from_file(path: &Path) -> Result<Self, CaptionError> {
        Ok(Self::new(read_caption_file(path)?))
    }

    pub fn insert(&mut self, image_id: impl Into<String>, text: impl Into<String>) {
        self.texts.insert(image_id.into(), text.into());
    }
}

impl CaptionSource for CaptionMap {
    fn caption_of(&self, image_id: &str) -> Result<Caption, CaptionError> {
        let text = self
            .texts
            .get(image_id)
            .ok_or_else(|| CaptionError::Missing(image_id.to_string()))?;
        Caption::new(image_id, text, CaptionSourceKind::File)
    }
}

/// Captions images found at `root/<image_id>` on demand.
pub struct ImageDirCaptions<'a> {
    pub captioner: &'a Captioner,
    pub root: PathBuf,
}

impl CaptionSource for ImageDirCaptions<'_> {
    fn caption_of(&self, image_id: &str) -> Result<Caption, CaptionError> {
        let path = self.root.join(image_id);
        self.captioner.caption(CaptionInput::Path { image_id, path: &path })
    }
}
