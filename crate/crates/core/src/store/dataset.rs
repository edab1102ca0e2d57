//! Dataset directory layout:
//!
//! ```text
//! dataset.json                     seed, planted query pairs, video ids
//! embeddings.json + embeddings.bin concept vocabulary and f32 vectors
//! videos/{id}/meta.json            id, shots, dim, thumbnail seed
//! videos/{id}/features.bin         shots × dim little-endian f32
//! videos/{id}/tags.json            one tag list per shot
//! videos/{id}/queries.json         text queries with their ground truth
//! videos/{id}/gt.json              default ground truth of the video
//! checkpoints/{id}.ivzr
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{tag_sets, TagSet};
use crate::model::WORD_DIM;
use crate::store::checkpoint::EXTENSION;
use crate::tensor::Tensor;

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads exactly `count` little-endian f32 values.
pub fn read_f32(path: &Path, count: usize) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * count {
        return Err(Error::Input(format!(
            "{} holds {} bytes, expected {} ({} f32 values)",
            path.display(),
            bytes.len(),
            4 * count,
            count
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingIndex {
    dim: usize,
    concepts: Vec<String>,
}

/// Concept vocabulary with one fixed-width vector per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    concepts: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Tensor<f32>,
}

impl EmbeddingTable {
    pub fn new(concepts: Vec<String>, vectors: Tensor<f32>) -> Result<Self> {
        if vectors.shape() != [concepts.len(), WORD_DIM] {
            return Err(Error::dim(
                "embedding table",
                &[concepts.len(), WORD_DIM],
                vectors.shape(),
            ));
        }
        let mut index = HashMap::new();
        for (i, c) in concepts.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::Input(format!("concept {c:?} appears twice in the vocabulary")));
            }
        }
        Ok(EmbeddingTable {
            concepts,
            index,
            vectors,
        })
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn vector(&self, concept: &str) -> Result<&[f32]> {
        self.index
            .get(concept)
            .map(|&i| self.vectors.row(i))
            .ok_or_else(|| Error::Vocabulary {
                concept: concept.to_string(),
                known: self.concepts.clone(),
            })
    }

    /// `[2, 300]` embeddings of a concept pair.
    pub fn text_query(&self, c1: &str, c2: &str) -> Result<Tensor<f32>> {
        let a = self.vector(c1)?;
        let b = self.vector(c2)?;
        Tensor::from_rows(&[a.to_vec(), b.to_vec()])
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(
            &root.join("embeddings.json"),
            &EmbeddingIndex {
                dim: WORD_DIM,
                concepts: self.concepts.clone(),
            },
        )?;
        write_f32(&root.join("embeddings.bin"), self.vectors.data())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let idx: EmbeddingIndex = read_json(&root.join("embeddings.json"))?;
        if idx.dim != WORD_DIM {
            return Err(Error::Input(format!(
                "embedding width must be {WORD_DIM}, got {}",
                idx.dim
            )));
        }
        let data = read_f32(&root.join("embeddings.bin"), idx.concepts.len() * WORD_DIM)?;
        Self::new(
            idx.concepts.clone(),
            Tensor::from_vec(&[idx.concepts.len(), WORD_DIM], data)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: String,
    pub shots: usize,
    pub dim: usize,
    #[serde(default)]
    pub thumbnail_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A text query and the shots that answer it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub c1: String,
    pub c2: String,
    pub split: Split,
    /// Ground-truth summary, ascending.
    pub summary: Vec<usize>,
}

impl QueryRecord {
    pub fn labels(&self, shots: usize) -> Vec<f32> {
        let mut y = vec![0.0; shots];
        for &s in &self.summary {
            y[s] = 1.0;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub c1: String,
    pub c2: String,
    pub summary: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub meta: VideoMeta,
    /// `[shots, dim]`
    pub features: Tensor<f32>,
    pub tags: Vec<Vec<String>>,
    pub queries: Vec<QueryRecord>,
}

impl VideoRecord {
    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn shots(&self) -> usize {
        self.meta.shots
    }

    pub fn tag_sets(&self) -> Vec<TagSet> {
        tag_sets(&self.tags)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, d) = (self.meta.shots, self.meta.dim);
        if self.features.shape() != [t, d] {
            return Err(Error::dim("video features", &[t, d], self.features.shape()));
        }
        if self.tags.len() != t {
            return Err(Error::Input(format!(
                "video {} has {} tag lists for {t} shots",
                self.meta.id,
                self.tags.len()
            )));
        }
        for q in &self.queries {
            if let Some(&bad) = q.summary.iter().find(|&&s| s >= t) {
                return Err(Error::Input(format!("query ground truth shot {bad} is outside 0..{t}")));
            }
        }
        Ok(())
    }

    /// The ground truth served for the video when no query is named.
    pub fn default_ground_truth(&self) -> Option<GroundTruth> {
        self.queries.first().map(|q| GroundTruth {
            c1: q.c1.clone(),
            c2: q.c2.clone(),
            summary: q.summary.clone(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("meta.json"), &self.meta)?;
        write_f32(&dir.join("features.bin"), self.features.data())?;
        write_json(&dir.join("tags.json"), &self.tags)?;
        write_json(&dir.join("queries.json"), &self.queries)?;
        if let Some(gt) = self.default_ground_truth() {
            write_json(&dir.join("gt.json"), &gt)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: VideoMeta = read_json(&dir.join("meta.json"))?;
        let data = read_f32(&dir.join("features.bin"), meta.shots * meta.dim)?;
        let features = Tensor::from_vec(&[meta.shots, meta.dim], data)?;
        let tags: Vec<Vec<String>> = read_json(&dir.join("tags.json"))?;
        let qpath = dir.join("queries.json");
        let queries = if qpath.exists() { read_json(&qpath)? } else { Vec::new() };
        let v = VideoRecord {
            meta,
            features,
            tags,
            queries,
        };
        v.validate()?;
        Ok(v)
    }
}

/// Reads `gt.json` of a video, if installed.
pub fn load_ground_truth(dir: &Path) -> Result<Option<GroundTruth>> {
    let path = dir.join("gt.json");
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub pairs: Vec<(String, String)>,
    pub videos: Vec<String>,
}

/// A dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::io(
                &root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
            ));
        }
        Ok(Dataset { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn video_dir(&self, id: &str) -> PathBuf {
        self.root.join("videos").join(id)
    }

    pub fn checkpoint_path(&self, id: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{id}.{EXTENSION}"))
    }

    fn list(&self, sub: &str, keep: impl Fn(&Path) -> Option<String>) -> Result<Vec<String>> {
        let dir = self.root.join(sub);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if let Some(id) = keep(&entry.path()) {
                out.push(id);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Video ids with a `meta.json`, sorted.
    pub fn video_ids(&self) -> Result<Vec<String>> {
        self.list("videos", |p| {
            p.join("meta.json")
                .is_file()
                .then(|| p.file_name()?.to_str().map(str::to_string))
                .flatten()
        })
    }

    /// Checkpoint ids (file stems of `*.ivzr`), sorted.
    pub fn checkpoint_ids(&self) -> Result<Vec<String>> {
        self.list("checkpoints", |p| {
            (p.extension()? == EXTENSION)
                .then(|| p.file_stem()?.to_str().map(str::to_string))
                .flatten()
        })
    }

    pub fn is_valid_id(id: &str) -> bool {
        !id.is_empty()
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
            && id != "."
            && id != ".."
    }

    pub fn load_video(&self, id: &str) -> Result<VideoRecord> {
        if !Self::is_valid_id(id) {
            return Err(Error::Input(format!("invalid video id {id:?}")));
        }
        VideoRecord::load(&self.video_dir(id))
    }

    pub fn embeddings(&self) -> Result<EmbeddingTable> {
        EmbeddingTable::load(&self.root)
    }

    pub fn has_embeddings(&self) -> bool {
        self.root.join("embeddings.json").is_file()
    }

    pub fn manifest(&self) -> Result<Option<DatasetManifest>> {
        let p = self.root.join("dataset.json");
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }
}
